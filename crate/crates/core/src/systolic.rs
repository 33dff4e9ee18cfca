//! Single-array mapping, per-cycle demand generation and compute statistics.
//!
//! Operand roles follow the dataflow mapping table: the filter operand is the
//! K x M matrix, the ifmap operand is K x N and the ofmap is M x N. All three
//! live in one flat word-address space at configurable bases.

use std::io::Write;
use std::sync::Arc;

use crate::config::{Dataflow, SimConfig};
use crate::error::{Result, SimError};
use crate::topology::GemmOp;

/// Reserved address marking an idle trace slot.
pub const BUBBLE: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MappedDims {
    pub sr: u64,
    pub sc: u64,
    pub t: u64,
    pub dataflow: Dataflow,
}

pub fn map_gemm(op: &GemmOp, dataflow: Dataflow) -> MappedDims {
    let (sr, sc, t) = match dataflow {
        Dataflow::Is => (op.k, op.n, op.m),
        Dataflow::Ws => (op.k, op.m, op.n),
        Dataflow::Os => (op.m, op.n, op.k),
    };
    MappedDims { sr, sc, t, dataflow }
}

/// Cycles of one fold including skew fill and drain.
pub fn fold_length(t: u64, rows: u64, cols: u64) -> u64 {
    2 * rows + cols + t - 2
}

pub fn fold_count(dims: &MappedDims, rows: u64, cols: u64) -> u64 {
    dims.sr.div_ceil(rows) * dims.sc.div_ceil(cols)
}

pub fn analytical_cycles(dims: &MappedDims, rows: u64, cols: u64) -> u64 {
    fold_length(dims.t, rows, cols) * fold_count(dims, rows, cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Ifmap,
    Filter,
    Ofmap,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::Ifmap, Operand::Filter, Operand::Ofmap];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Operand::Ifmap => "ifmap",
            Operand::Filter => "filter",
            Operand::Ofmap => "ofmap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AddressBases {
    pub ifmap: u64,
    pub filter: u64,
    pub ofmap: u64,
}

impl AddressBases {
    pub fn from_config(cfg: &SimConfig) -> Self {
        AddressBases { ifmap: cfg.ifmap_base, filter: cfg.filter_base, ofmap: cfg.ofmap_base }
    }

    pub fn get(&self, op: Operand) -> u64 {
        match op {
            Operand::Ifmap => self.ifmap,
            Operand::Filter => self.filter,
            Operand::Ofmap => self.ofmap,
        }
    }
}

/// Addresses demanded in one cycle, one slice per operand.
#[derive(Debug)]
pub struct CycleDemand<'a> {
    pub ifmap: &'a [u64],
    pub filter: &'a [u64],
    pub ofmap: &'a [u64],
}

impl CycleDemand<'_> {
    pub fn get(&self, op: Operand) -> &[u64] {
        match op {
            Operand::Ifmap => self.ifmap,
            Operand::Filter => self.filter,
            Operand::Ofmap => self.ofmap,
        }
    }
}

/// Lazily generated per-cycle demand of one GEMM on one array.
///
/// Folds run sequentially, spatial-column folds outermost. Within a fold of
/// length `2R + C + T - 2`, the stationary operand (IS/WS) is loaded one array
/// row per cycle during the first R cycles; the streaming operand enters row
/// `r` at cycle `R + r`; outputs leave column `c` from cycle `2R - 1 + c`.
/// Under OS both inputs stream with a one-cycle skew per row/column and the
/// accumulated outputs drain one row per cycle after the last MAC.
#[derive(Debug, Clone)]
pub struct DemandTrace {
    dims: MappedDims,
    m: u64,
    n: u64,
    k: u64,
    rows: u64,
    cols: u64,
    bases: AddressBases,
    /// Sparse WS only: compressed filter row -> original reduction index.
    row_map: Option<Arc<Vec<u64>>>,
}

impl DemandTrace {
    pub fn new(op: &GemmOp, dataflow: Dataflow, rows: u64, cols: u64, bases: AddressBases) -> Result<Self> {
        let trace = DemandTrace { dims: map_gemm(op, dataflow), m: op.m, n: op.n, k: op.k, rows, cols, bases, row_map: None };
        trace.check_address_space()?;
        Ok(trace)
    }

    /// Weight-stationary trace over a compressed filter whose rows map to the
    /// given reduction indices (ascending, each `< op.k`).
    pub fn new_sparse_ws(op: &GemmOp, rows: u64, cols: u64, bases: AddressBases, row_map: Arc<Vec<u64>>) -> Result<Self> {
        if row_map.is_empty() || row_map.iter().any(|&k| k >= op.k) || row_map.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::validation("compressed row map must be non-empty, ascending and within K"));
        }
        let mut dims = map_gemm(op, Dataflow::Ws);
        dims.sr = row_map.len() as u64;
        let trace = DemandTrace { dims, m: op.m, n: op.n, k: op.k, rows, cols, bases, row_map: Some(row_map) };
        trace.check_address_space()?;
        Ok(trace)
    }

    pub fn from_config(op: &GemmOp, cfg: &SimConfig) -> Result<Self> {
        DemandTrace::new(op, cfg.dataflow, cfg.array_rows, cfg.array_cols, AddressBases::from_config(cfg))
    }

    pub fn dims(&self) -> MappedDims {
        self.dims
    }

    pub fn array(&self) -> (u64, u64) {
        (self.rows, self.cols)
    }

    pub fn bases(&self) -> AddressBases {
        self.bases
    }

    /// Words occupied by each operand: (rows, cols) of its matrix.
    pub fn operand_shape(&self, op: Operand) -> (u64, u64) {
        match op {
            Operand::Ifmap => (self.k, self.n),
            Operand::Filter => (self.row_map.as_ref().map_or(self.k, |m| m.len() as u64), self.m),
            Operand::Ofmap => (self.m, self.n),
        }
    }

    pub fn operand_words(&self, op: Operand) -> u64 {
        let (r, c) = self.operand_shape(op);
        r * c
    }

    fn check_address_space(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(SimError::validation("array dimensions must be >= 1"));
        }
        let mut regions: Vec<(u64, u64, &str)> = Vec::new();
        for op in Operand::ALL {
            let base = self.bases.get(op);
            let end = base
                .checked_add(self.operand_words(op))
                .filter(|&e| e < BUBBLE)
                .ok_or_else(|| SimError::config(format!("{} operand overflows the address space", op.name())))?;
            regions.push((base, end, op.name()));
        }
        regions.sort();
        for w in regions.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(SimError::config(format!(
                    "{} operand ({} words from {}) overlaps the {} region at {}",
                    w[0].2,
                    w[0].1 - w[0].0,
                    w[0].0,
                    w[1].2,
                    w[1].0
                )));
            }
        }
        Ok(())
    }

    pub fn fold_length(&self) -> u64 {
        fold_length(self.dims.t, self.rows, self.cols)
    }

    pub fn fold_count(&self) -> u64 {
        fold_count(&self.dims, self.rows, self.cols)
    }

    pub fn cycles(&self) -> u64 {
        self.fold_length() * self.fold_count()
    }

    /// Start cycle of every fold after the first.
    pub fn fold_boundaries(&self) -> Vec<u64> {
        (1..self.fold_count()).map(|f| f * self.fold_length()).collect()
    }

    /// Slots per cycle for an operand.
    pub fn width(&self, op: Operand) -> usize {
        let (r, c) = (self.rows as usize, self.cols as usize);
        match (self.dims.dataflow, op) {
            (_, Operand::Ofmap) => c,
            (Dataflow::Ws, Operand::Filter) | (Dataflow::Is, Operand::Ifmap) => c,
            (Dataflow::Os, Operand::Ifmap) => c,
            _ => r,
        }
    }

    fn ifmap_addr(&self, sr: u64, sc: u64, t: u64) -> u64 {
        let (k, n) = match self.dims.dataflow {
            Dataflow::Ws => (self.row_map.as_ref().map_or(sr, |m| m[sr as usize]), t),
            Dataflow::Is => (sr, sc),
            Dataflow::Os => (t, sc),
        };
        self.bases.ifmap + k * self.n + n
    }

    fn filter_addr(&self, sr: u64, sc: u64, t: u64) -> u64 {
        let (k, m) = match self.dims.dataflow {
            Dataflow::Ws => (sr, sc),
            Dataflow::Is => (sr, t),
            Dataflow::Os => (t, sr),
        };
        self.bases.filter + k * self.m + m
    }

    fn ofmap_addr(&self, sr: u64, sc: u64, t: u64) -> u64 {
        let (m, n) = match self.dims.dataflow {
            Dataflow::Ws => (sc, t),
            Dataflow::Is => (t, sc),
            Dataflow::Os => (sr, sc),
        };
        self.bases.ofmap + m * self.n + n
    }

    /// Visit every cycle in order with that cycle's demanded addresses.
    pub fn for_each_cycle<F: FnMut(u64, &CycleDemand<'_>)>(&self, mut f: F) {
        let (rows, cols) = (self.rows, self.cols);
        let MappedDims { sr, sc, t, dataflow } = self.dims;
        let mut ifmap = vec![BUBBLE; self.width(Operand::Ifmap)];
        let mut filter = vec![BUBBLE; self.width(Operand::Filter)];
        let mut ofmap = vec![BUBBLE; self.width(Operand::Ofmap)];
        let len = self.fold_length();
        let mut cycle = 0u64;

        for sc_fold in 0..sc.div_ceil(cols) {
            let sc0 = sc_fold * cols;
            let sc_valid = (sc - sc0).min(cols);
            for sr_fold in 0..sr.div_ceil(rows) {
                let sr0 = sr_fold * rows;
                let sr_valid = (sr - sr0).min(rows);
                for lt in 0..len {
                    ifmap.fill(BUBBLE);
                    filter.fill(BUBBLE);
                    ofmap.fill(BUBBLE);
                    match dataflow {
                        Dataflow::Ws | Dataflow::Is => {
                            let (stationary, streaming) =
                                if dataflow == Dataflow::Ws { (&mut filter, &mut ifmap) } else { (&mut ifmap, &mut filter) };
                            if lt < sr_valid {
                                let r = sr0 + lt;
                                for c in 0..sc_valid {
                                    stationary[c as usize] = if dataflow == Dataflow::Ws {
                                        self.filter_addr(r, sc0 + c, 0)
                                    } else {
                                        self.ifmap_addr(r, sc0 + c, 0)
                                    };
                                }
                            }
                            for r in 0..sr_valid {
                                if lt >= rows + r && lt - rows - r < t {
                                    let tau = lt - rows - r;
                                    streaming[r as usize] = if dataflow == Dataflow::Ws {
                                        self.ifmap_addr(sr0 + r, 0, tau)
                                    } else {
                                        self.filter_addr(sr0 + r, 0, tau)
                                    };
                                }
                            }
                            let out_start = 2 * rows - 1;
                            for c in 0..sc_valid {
                                if lt >= out_start + c && lt - out_start - c < t {
                                    ofmap[c as usize] = self.ofmap_addr(0, sc0 + c, lt - out_start - c);
                                }
                            }
                        }
                        Dataflow::Os => {
                            for r in 0..sr_valid {
                                if lt >= r && lt - r < t {
                                    filter[r as usize] = self.filter_addr(sr0 + r, 0, lt - r);
                                }
                            }
                            for c in 0..sc_valid {
                                if lt >= c && lt - c < t {
                                    ifmap[c as usize] = self.ifmap_addr(0, sc0 + c, lt - c);
                                }
                            }
                            let drain_start = rows + cols + t - 2;
                            if lt >= drain_start {
                                let r = rows - 1 - (lt - drain_start);
                                if r < sr_valid {
                                    for c in 0..sc_valid {
                                        ofmap[c as usize] = self.ofmap_addr(sr0 + r, sc0 + c, 0);
                                    }
                                }
                            }
                        }
                    }
                    f(cycle, &CycleDemand { ifmap: &ifmap, filter: &filter, ofmap: &ofmap });
                    cycle += 1;
                }
            }
        }
    }

    pub fn materialize(&self) -> MaterializedTrace {
        let mut out = MaterializedTrace {
            ifmap: Vec::new(),
            filter: Vec::new(),
            ofmap: Vec::new(),
            fold_boundaries: self.fold_boundaries(),
            bases: self.bases,
        };
        self.for_each_cycle(|_, d| {
            out.ifmap.push(d.ifmap.to_vec());
            out.filter.push(d.filter.to_vec());
            out.ofmap.push(d.ofmap.to_vec());
        });
        out
    }

    /// CSV dump of one operand: `cycle, addr_0, ...`, with -1 for idle slots.
    pub fn write_operand_csv<W: Write>(&self, op: Operand, mut w: W) -> std::io::Result<()> {
        let mut result = Ok(());
        let mut line = String::new();
        self.for_each_cycle(|cycle, d| {
            if result.is_err() {
                return;
            }
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(line, "{cycle}");
            for &a in d.get(op) {
                if a == BUBBLE {
                    line.push_str(", -1");
                } else {
                    let _ = write!(line, ", {a}");
                }
            }
            line.push('\n');
            result = w.write_all(line.as_bytes());
        });
        result
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaterializedTrace {
    pub ifmap: Vec<Vec<u64>>,
    pub filter: Vec<Vec<u64>>,
    pub ofmap: Vec<Vec<u64>>,
    pub fold_boundaries: Vec<u64>,
    pub bases: AddressBases,
}

impl MaterializedTrace {
    pub fn cycles(&self) -> usize {
        self.ifmap.len()
    }

    pub fn operand(&self, op: Operand) -> &[Vec<u64>] {
        match op {
            Operand::Ifmap => &self.ifmap,
            Operand::Filter => &self.filter,
            Operand::Ofmap => &self.ofmap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OperandAccess {
    /// Ifmap/filter: SRAM reads. Ofmap: SRAM writes.
    pub accesses: u64,
    pub avg_bandwidth: f64,
    pub max_bandwidth: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComputeReport {
    pub cycles: u64,
    pub folds: u64,
    pub macs: u64,
    pub pes: u64,
    /// MACs / (PEs * cycles).
    pub utilization: f64,
    pub operands: [OperandAccess; 3],
}

impl ComputeReport {
    pub fn operand(&self, op: Operand) -> &OperandAccess {
        &self.operands[op.index()]
    }
}

pub fn simulate_compute(trace: &DemandTrace) -> ComputeReport {
    let mut cycles = 0u64;
    let mut counts = [0u64; 3];
    let mut max = [0u64; 3];
    trace.for_each_cycle(|_, d| {
        cycles += 1;
        for op in Operand::ALL {
            let n = d.get(op).iter().filter(|&&a| a != BUBBLE).count() as u64;
            counts[op.index()] += n;
            max[op.index()] = max[op.index()].max(n);
        }
    });
    let dims = trace.dims();
    let (rows, cols) = trace.array();
    let macs = dims.sr * dims.sc * dims.t;
    let pes = rows * cols;
    let operands = std::array::from_fn(|i| OperandAccess {
        accesses: counts[i],
        avg_bandwidth: if cycles == 0 { 0.0 } else { counts[i] as f64 / cycles as f64 },
        max_bandwidth: max[i],
    });
    ComputeReport {
        cycles,
        folds: trace.fold_count(),
        macs,
        pes,
        utilization: if cycles == 0 { 0.0 } else { macs as f64 / (pes * cycles) as f64 },
        operands,
    }
}
