//! Cycle-accurate systolic-array accelerator simulator.
//!
//! A GEMM (or a convolution lowered to one) is mapped onto an `R x C` array
//! under the input-, weight- or output-stationary dataflow. The resulting
//! per-cycle demand trace drives every other model: multi-core partitioning,
//! N:M sparsity, DRAM timing with finite request queues, banked on-chip
//! layouts and action-count energy.

pub mod config;
pub mod energy;
pub mod error;
pub mod layout;
pub mod memory;
pub mod multicore;
pub mod pipeline;
pub mod sparsity;
pub mod systolic;
pub mod topology;

pub use config::{parse_config, Dataflow, PartitionScheme, SimConfig};
pub use error::{Result, SimError};
pub use topology::{parse_topology, GemmOp, LayerSpec};
