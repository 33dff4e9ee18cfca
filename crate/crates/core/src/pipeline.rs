//! Whole-topology runs: per-layer stage execution and CSV report assembly.
//!
//! Layers with identical GEMM shape (and sparsity pattern) are simulated once
//! and the result is shared. With more than one core, the compute report
//! carries the multi-core makespan while the memory, layout and energy stages
//! model the layer on a single array of the top-level shape.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::{OperandLayout, SimConfig};
use crate::energy::{
    compute_energy, count_layer_actions, parse_energy_table, ActionCounts, EnergyReport, EnergyTable, RepeatParams,
    ENERGY_REPORT_HEADER,
};
use crate::error::{Result, SimError};
use crate::layout::{evaluate_layout, operand_spec, parse_layout_file, LayoutReport, LAYOUT_REPORT_HEADER};
use crate::memory::{run_memory_stage, MemoryStageResult, STALL_REPORT_HEADER};
use crate::multicore::{core_profiles, partition_workload, simulate_multicore, MulticoreReport};
use crate::sparsity::{dense_storage, emit_sparse_report, materialize_pattern, storage_report, SparseLayerRow, SparsityPattern};
use crate::systolic::{simulate_compute, AddressBases, ComputeReport, DemandTrace, Operand};
use crate::topology::{GemmOp, LayerSpec};

pub const DEFAULT_ENERGY_TABLE: &str = include_str!("../data/default_ert.csv");

pub fn default_energy_table() -> EnergyTable {
    parse_energy_table(DEFAULT_ENERGY_TABLE).expect("bundled energy table is complete")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub memory: bool,
    pub layout: bool,
    pub energy: bool,
    /// Emit the storage report; the sparse mapping itself follows the configuration.
    pub sparsity: bool,
}

impl Stages {
    pub fn compute_only() -> Self {
        Stages { memory: false, layout: false, energy: false, sparsity: false }
    }

    /// Every stage the configuration can support.
    pub fn all_for(cfg: &SimConfig) -> Self {
        Stages { memory: true, layout: cfg.layout.is_some(), energy: true, sparsity: cfg.sparsity.enabled }
    }

    /// Parse a comma list such as `compute,memory,energy`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut s = Stages::compute_only();
        for item in list.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            match item {
                "compute" => {}
                "memory" => s.memory = true,
                "layout" => s.layout = true,
                "energy" => s.energy = true,
                "sparsity" => s.sparsity = true,
                other => return Err(SimError::config(format!("unknown stage `{other}`"))),
            }
        }
        Ok(s)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = vec!["compute"];
        for (on, name) in [(self.memory, "memory"), (self.layout, "layout"), (self.energy, "energy"), (self.sparsity, "sparsity")]
        {
            if on {
                v.push(name);
            }
        }
        v
    }
}

/// Everything a run needs besides the topology.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub cfg: SimConfig,
    pub stages: Stages,
    pub energy_table: EnergyTable,
    /// Per-operand layouts (ifmap, filter, ofmap) resolved from config or files.
    pub layouts: [Option<OperandLayout>; 3],
}

impl RunSetup {
    pub fn new(cfg: SimConfig, stages: Stages) -> Result<Self> {
        if stages.layout && cfg.layout.is_none() {
            return Err(SimError::config("the layout stage needs a [layout] section"));
        }
        if stages.sparsity && !cfg.sparsity.enabled {
            return Err(SimError::config("the sparsity stage needs SparsitySupport = true"));
        }
        let layouts = cfg.layout.as_ref().map_or([None, None, None], |l| [l.ifmap.clone(), l.filter.clone(), l.ofmap.clone()]);
        Ok(RunSetup { cfg, stages, energy_table: default_energy_table(), layouts })
    }

    /// Like [`RunSetup::new`], also loading the energy table and layout files
    /// the configuration names. Relative paths resolve against `base`.
    pub fn load(cfg: SimConfig, stages: Stages, base: &Path) -> Result<Self> {
        let mut setup = RunSetup::new(cfg, stages)?;
        if let Some(p) = &setup.cfg.energy.table_path {
            let path = base.join(p);
            let text = std::fs::read_to_string(&path).map_err(|e| SimError::io(&path, e))?;
            setup.energy_table = parse_energy_table(&text)?;
        }
        if let Some(lc) = &setup.cfg.layout {
            for (i, file) in [&lc.ifmap_file, &lc.filter_file, &lc.ofmap_file].into_iter().enumerate() {
                if let Some(f) = file {
                    let path = base.join(f);
                    let text = std::fs::read_to_string(&path).map_err(|e| SimError::io(&path, e))?;
                    setup.layouts[i] = Some(parse_layout_file(&text)?);
                }
            }
        }
        Ok(setup)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerResult {
    pub name: String,
    pub gemm: GemmOp,
    pub compute: ComputeReport,
    /// Layer latency: single-array cycles, or the multi-core makespan.
    pub cycles: u64,
    pub multicore: Option<MulticoreReport>,
    pub memory: Option<MemoryStageResult>,
    pub layout: Option<LayoutReport>,
    pub energy: Option<(ActionCounts, EnergyReport)>,
    pub sparse: Option<SparseLayerRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ShapeKey {
    m: u64,
    n: u64,
    k: u64,
    pattern: Option<(u64, Vec<u64>)>,
}

struct PreparedLayer {
    gemm: GemmOp,
    pattern: Option<SparsityPattern>,
}

fn prepare(cfg: &SimConfig, index: usize, layer: &LayerSpec) -> Result<PreparedLayer> {
    let gemm = layer.to_gemm()?;
    let pattern =
        if cfg.sparsity.enabled { Some(materialize_pattern(gemm.k, layer.sparsity, &cfg.sparsity, index as u64)?) } else { None };
    Ok(PreparedLayer { gemm, pattern })
}

/// The single-array demand trace a layer runs with.
pub fn layer_trace(cfg: &SimConfig, index: usize, layer: &LayerSpec) -> Result<DemandTrace> {
    let p = prepare(cfg, index, layer)?;
    trace_for(cfg, &p.gemm, p.pattern.as_ref())
}

fn trace_for(cfg: &SimConfig, gemm: &GemmOp, pattern: Option<&SparsityPattern>) -> Result<DemandTrace> {
    let bases = AddressBases::from_config(cfg);
    match pattern {
        Some(p) => DemandTrace::new_sparse_ws(gemm, cfg.array_rows, cfg.array_cols, bases, Arc::new(p.row_map())),
        None => DemandTrace::new(gemm, cfg.dataflow, cfg.array_rows, cfg.array_cols, bases),
    }
}

struct ShapeResult {
    compute: ComputeReport,
    cycles: u64,
    multicore: Option<MulticoreReport>,
    memory: Option<MemoryStageResult>,
    layout: Option<LayoutReport>,
    energy: Option<(ActionCounts, EnergyReport)>,
}

fn simulate_shape(setup: &RunSetup, gemm: &GemmOp, pattern: Option<&SparsityPattern>) -> Result<ShapeResult> {
    let cfg = &setup.cfg;
    let trace = trace_for(cfg, gemm, pattern)?;
    let compute = simulate_compute(&trace);

    let multicore = if cfg.multicore.num_cores > 1 {
        if pattern.is_some() {
            return Err(SimError::config("sparsity is modeled on a single core only"));
        }
        let plan = partition_workload(gemm, cfg)?;
        Some(simulate_multicore(&plan, &core_profiles(cfg), cfg.multicore.hop_latency, AddressBases::from_config(cfg))?)
    } else {
        None
    };
    let cycles = multicore.as_ref().map_or(compute.cycles, |m| m.aggregate_cycles);

    let memory = if setup.stages.memory { Some(run_memory_stage(&trace, cfg, None)?) } else { None };

    let layout = match (&cfg.layout, setup.stages.layout) {
        (Some(lc), true) => {
            let specs = [
                operand_spec(&trace, Operand::Ifmap, lc, setup.layouts[0].as_ref())?,
                operand_spec(&trace, Operand::Filter, lc, setup.layouts[1].as_ref())?,
                operand_spec(&trace, Operand::Ofmap, lc, setup.layouts[2].as_ref())?,
            ];
            Some(evaluate_layout(&trace, &specs)?)
        }
        _ => None,
    };

    let energy = if setup.stages.energy {
        let params = RepeatParams {
            row_size_elems: cfg.energy.row_size_elems,
            bank_size_rows: cfg.energy.bank_size_rows,
            clock_gating: cfg.energy.clock_gating,
        };
        let counts = count_layer_actions(&trace, &compute, params)?;
        let report = compute_energy(&counts, &setup.energy_table, compute.cycles, cfg.clock_mhz)?;
        Some((counts, report))
    } else {
        None
    };
    Ok(ShapeResult { compute, cycles, multicore, memory, layout, energy })
}

fn sparse_row(cfg: &SimConfig, layer: &LayerSpec, gemm: &GemmOp, pattern: &SparsityPattern) -> SparseLayerRow {
    let word_bits = cfg.word_bytes * 8;
    let rep = cfg.sparsity.rep;
    let annotated = cfg.sparsity.optimized_mapping || layer.sparsity.is_some();
    if annotated {
        let ratio = if cfg.sparsity.optimized_mapping {
            "row-wise".to_string()
        } else {
            format!("{}:{}", pattern.per_block_n[0], pattern.block_m)
        };
        SparseLayerRow {
            layer: layer.name.clone(),
            rep: Some(rep),
            storage: storage_report(gemm.k, gemm.m, pattern, rep, word_bits),
            ratio,
        }
    } else {
        SparseLayerRow {
            layer: layer.name.clone(),
            rep: None,
            storage: dense_storage(gemm.k, gemm.m, rep, word_bits),
            ratio: format!("{0}:{0}", pattern.block_m),
        }
    }
}

/// Run every layer through the enabled stages. Output order follows the topology.
pub fn run_layers(setup: &RunSetup, layers: &[LayerSpec]) -> Result<Vec<LayerResult>> {
    let prepared: Vec<PreparedLayer> =
        layers.iter().enumerate().map(|(i, l)| prepare(&setup.cfg, i, l)).collect::<Result<_>>()?;

    let mut unique: Vec<ShapeKey> = Vec::new();
    let mut slot_of: HashMap<ShapeKey, usize> = HashMap::new();
    let mut layer_slot = Vec::with_capacity(prepared.len());
    let mut exemplar = Vec::new();
    for (i, p) in prepared.iter().enumerate() {
        let key = ShapeKey {
            m: p.gemm.m,
            n: p.gemm.n,
            k: p.gemm.k,
            pattern: p.pattern.as_ref().map(|s| (s.block_m, s.per_block_n.clone())),
        };
        let slot = *slot_of.entry(key.clone()).or_insert_with(|| {
            unique.push(key);
            exemplar.push(i);
            unique.len() - 1
        });
        layer_slot.push(slot);
    }

    let shapes: Vec<ShapeResult> = exemplar
        .par_iter()
        .map(|&i| simulate_shape(setup, &prepared[i].gemm, prepared[i].pattern.as_ref()))
        .collect::<Result<_>>()?;

    Ok(layers
        .iter()
        .zip(&prepared)
        .zip(&layer_slot)
        .map(|((layer, p), &slot)| {
            let s = &shapes[slot];
            LayerResult {
                name: layer.name.clone(),
                gemm: p.gemm.clone(),
                compute: s.compute.clone(),
                cycles: s.cycles,
                multicore: s.multicore.clone(),
                memory: s.memory.clone(),
                layout: s.layout,
                energy: s.energy.clone(),
                sparse: match (&p.pattern, setup.stages.sparsity) {
                    (Some(pat), true) => Some(sparse_row(&setup.cfg, layer, &p.gemm, pat)),
                    _ => None,
                },
            }
        })
        .collect())
}

fn ratio(x: f64) -> String {
    format!("{x:.6}")
}

pub const COMPUTE_REPORT_HEADER: &str = "Layer,Dataflow,M,N,K,Folds,TotalCycles,MACs,Utilization";
pub const BANDWIDTH_REPORT_HEADER: &str =
    "Layer,IfmapSramReads,FilterSramReads,OfmapSramWrites,AvgIfmapBw,AvgFilterBw,AvgOfmapBw,MaxIfmapBw,MaxFilterBw,MaxOfmapBw";
pub const MEMORY_REPORT_HEADER: &str = "Layer,Requests,Reads,Writes,RowHits,RowMisses,BankConflicts,AvgLatency,ThroughputMBps";
pub const MULTICORE_REPORT_HEADER: &str = "Layer,Core,GridRow,GridCol,ArrayRows,ArrayCols,ComputeCycles,Makespan,Idle";
pub const ENERGY_SUMMARY_HEADER: &str = "Layer,Cycles,Energy_pJ,Power_mW,EdP_cycles_mJ";

/// Report files (name, contents) for a finished run.
pub fn render_reports(setup: &RunSetup, results: &[LayerResult]) -> Vec<(String, String)> {
    let cfg = &setup.cfg;
    let mut files = Vec::new();

    let mut s = format!("{COMPUTE_REPORT_HEADER}\n");
    for r in results {
        let pes: u64 = match &r.multicore {
            Some(mc) => mc.cores.iter().map(|c| c.profile.rows * c.profile.cols).sum(),
            None => r.compute.pes,
        };
        let util = if r.cycles == 0 { 0.0 } else { r.compute.macs as f64 / (pes * r.cycles) as f64 };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.name,
            cfg.dataflow,
            r.gemm.m,
            r.gemm.n,
            r.gemm.k,
            r.compute.folds,
            r.cycles,
            r.compute.macs,
            ratio(util)
        );
    }
    files.push(("COMPUTE_REPORT.csv".to_string(), s));

    let mut s = format!("{BANDWIDTH_REPORT_HEADER}\n");
    for r in results {
        let o = &r.compute.operands;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.name,
            o[0].accesses,
            o[1].accesses,
            o[2].accesses,
            ratio(o[0].avg_bandwidth),
            ratio(o[1].avg_bandwidth),
            ratio(o[2].avg_bandwidth),
            o[0].max_bandwidth,
            o[1].max_bandwidth,
            o[2].max_bandwidth
        );
    }
    files.push(("BANDWIDTH_REPORT.csv".to_string(), s));

    if cfg.multicore.num_cores > 1 {
        let mut s = format!("{MULTICORE_REPORT_HEADER}\n");
        for r in results {
            if let Some(mc) = &r.multicore {
                for (i, c) in mc.cores.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{}",
                        r.name,
                        i,
                        c.shard.grid_row,
                        c.shard.grid_col,
                        c.profile.rows,
                        c.profile.cols,
                        c.report.as_ref().map_or(0, |x| x.cycles),
                        c.makespan,
                        c.report.is_none()
                    );
                }
            }
        }
        files.push(("MULTICORE_REPORT.csv".to_string(), s));
    }

    if setup.stages.memory {
        let mut stall = format!("{STALL_REPORT_HEADER}\n");
        let mut mem = format!("{MEMORY_REPORT_HEADER}\n");
        for r in results {
            if let Some(m) = &r.memory {
                let st = &m.stall;
                let _ = writeln!(
                    stall,
                    "{},{},{},{},{}",
                    r.name,
                    st.compute_cycles,
                    st.stall_cycles,
                    st.total_cycles,
                    ratio(st.stall_fraction)
                );
                let d = &m.dram;
                let _ = writeln!(
                    mem,
                    "{},{},{},{},{},{},{},{},{}",
                    r.name,
                    m.requests,
                    d.total_reads,
                    d.total_writes,
                    d.row_hits,
                    d.row_misses,
                    d.bank_conflicts,
                    ratio(d.avg_latency),
                    ratio(d.throughput_mbps)
                );
            }
        }
        files.push(("STALL_REPORT.csv".to_string(), stall));
        files.push(("MEMORY_REPORT.csv".to_string(), mem));
    }

    if setup.stages.sparsity {
        let rows: Vec<SparseLayerRow> = results.iter().filter_map(|r| r.sparse.clone()).collect();
        files.push(("SPARSE_REPORT.csv".to_string(), emit_sparse_report(&rows)));
    }

    if let (true, Some(lc)) = (setup.stages.layout, &cfg.layout) {
        let mut s = format!("{LAYOUT_REPORT_HEADER}\n");
        for r in results {
            if let Some(l) = &r.layout {
                let _ =
                    writeln!(s, "{},{},{},{},{}", r.name, cfg.dataflow, lc.num_banks, lc.bandwidth_per_bank, ratio(l.slowdown));
            }
        }
        files.push(("LAYOUT_REPORT.csv".to_string(), s));
    }

    if setup.stages.energy {
        let mut s = format!("{ENERGY_REPORT_HEADER}\n");
        let mut summary = format!("{ENERGY_SUMMARY_HEADER}\n");
        let (mut total_cycles, mut total_pj) = (0u64, 0.0f64);
        for r in results {
            if let Some((_, e)) = &r.energy {
                for line in &e.lines {
                    let action = line.action.map_or("leakage", |a| a.name());
                    let _ = writeln!(s, "{},{},{},{},{}", r.name, line.component, action, line.count, ratio(line.energy_pj));
                }
                let _ = writeln!(summary, "{},{},{},{},{}", r.name, e.cycles, ratio(e.total_pj), ratio(e.power_mw), ratio(e.edp));
                total_cycles += e.cycles;
                total_pj += e.total_pj;
            }
        }
        let _ = writeln!(s, "Total,all,all,{},{}", total_cycles, ratio(total_pj));
        let edp = total_cycles as f64 * total_pj * 1e-9;
        let power = if total_cycles == 0 { 0.0 } else { total_pj * cfg.clock_mhz as f64 * 1e-3 / total_cycles as f64 };
        let _ = writeln!(summary, "Total,{},{},{},{}", total_cycles, ratio(total_pj), ratio(power), ratio(edp));
        files.push(("ENERGY_REPORT.csv".to_string(), s));
        files.push(("ENERGY_SUMMARY.csv".to_string(), summary));
    }
    files
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Dataflow;
    use crate::topology::{parse_topology, TopologyKind};

    #[test]
    fn stage_list_parsing() {
        let s = Stages::parse("compute,memory,energy").unwrap();
        assert!(s.memory && s.energy && !s.layout && !s.sparsity);
        assert!(Stages::parse("compute,warp").is_err());
    }

    #[test]
    fn duplicate_shapes_share_results() {
        let layers = parse_topology("Layer,M,N,K\na,8,8,8\nb,4,4,4\nc,8,8,8\n", TopologyKind::Gemm).unwrap();
        let setup = RunSetup::new(SimConfig::new(4, 4, Dataflow::Os), Stages::compute_only()).unwrap();
        let r = run_layers(&setup, &layers).unwrap();
        assert_eq!(r.iter().map(|x| x.name.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(r[0].compute, r[2].compute);
        assert_ne!(r[0].compute, r[1].compute);
    }
}
