//! Partitioning one GEMM over a `Pr x Pc` grid of systolic cores.
//!
//! Partitioning happens on the mapped extents: `Spatial` splits Sr over grid
//! rows and Sc over grid columns, `SpatioTemporal1` splits Sr over rows and T
//! over columns, `SpatioTemporal2` splits T over rows and Sc over columns.

use std::collections::HashSet;
use std::ops::Range;

use rayon::prelude::*;

use crate::config::{CoreProfile, Dataflow, PartitionScheme, SimConfig};
use crate::error::{Result, SimError};
use crate::systolic::{fold_length, map_gemm, simulate_compute, AddressBases, ComputeReport, DemandTrace, MappedDims};
use crate::topology::GemmOp;

pub fn analytical_partition_cycles(dims: &MappedDims, rows: u64, cols: u64, pr: u64, pc: u64, scheme: PartitionScheme) -> u64 {
    let (sr, sc, t) = (dims.sr, dims.sc, dims.t);
    match scheme {
        PartitionScheme::Spatial => fold_length(t, rows, cols) * sr.div_ceil(pr * rows) * sc.div_ceil(pc * cols),
        PartitionScheme::SpatioTemporal1 => fold_length(t.div_ceil(pc), rows, cols) * sr.div_ceil(pr * rows) * sc.div_ceil(cols),
        PartitionScheme::SpatioTemporal2 => fold_length(t.div_ceil(pr), rows, cols) * sr.div_ceil(rows) * sc.div_ceil(pc * cols),
    }
}

/// Even split: the first `n % parts` pieces get one extra element.
pub fn balanced_split(n: u64, parts: u64) -> Vec<Range<u64>> {
    let (base, extra) = (n / parts, n % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + u64::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Weighted split with largest-remainder rounding; ties go to the lower index.
pub fn weighted_split(n: u64, weights: &[f64]) -> Vec<Range<u64>> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut lens: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = lens.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned) as usize) {
        lens[i] += 1;
    }
    let mut start = 0;
    lens.iter()
        .map(|&len| {
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub grid_row: u64,
    pub grid_col: u64,
    pub sr: Range<u64>,
    pub sc: Range<u64>,
    pub t: Range<u64>,
}

impl Shard {
    /// A core whose share along some partitioned axis is empty.
    pub fn is_idle(&self) -> bool {
        self.sr.is_empty() || self.sc.is_empty() || self.t.is_empty()
    }

    pub fn dims(&self, dataflow: Dataflow) -> MappedDims {
        let len = |r: &Range<u64>| r.end - r.start;
        MappedDims { sr: len(&self.sr), sc: len(&self.sc), t: len(&self.t), dataflow }
    }

    /// The shard as a standalone GEMM.
    pub fn gemm(&self, dataflow: Dataflow) -> GemmOp {
        let d = self.dims(dataflow);
        let (m, n, k) = match dataflow {
            Dataflow::Is => (d.t, d.sc, d.sr),
            Dataflow::Ws => (d.sc, d.t, d.sr),
            Dataflow::Os => (d.sr, d.sc, d.t),
        };
        GemmOp::new(m, n, k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub pr: u64,
    pub pc: u64,
    pub dims: MappedDims,
    /// Row-major over the grid.
    pub shards: Vec<Shard>,
    /// Per-core workload share when the split is non-uniform.
    pub shard_weights: Option<Vec<f64>>,
}

impl PartitionPlan {
    pub fn shard(&self, row: u64, col: u64) -> &Shard {
        &self.shards[(row * self.pc + col) as usize]
    }
}

pub fn partition_dims(
    dims: &MappedDims,
    scheme: PartitionScheme,
    pr: u64,
    pc: u64,
    row_weights: Option<&[f64]>,
    col_weights: Option<&[f64]>,
) -> Result<PartitionPlan> {
    if pr == 0 || pc == 0 {
        return Err(SimError::validation("partition grid dimensions must be >= 1"));
    }
    let split = |n: u64, parts: u64, w: Option<&[f64]>| -> Result<Vec<Range<u64>>> {
        match w {
            None => Ok(balanced_split(n, parts)),
            Some(w) if w.len() as u64 == parts => Ok(weighted_split(n, w)),
            Some(w) => Err(SimError::validation(format!("{} weights for {parts} grid slots", w.len()))),
        }
    };
    let (row_extent, col_extent) = match scheme {
        PartitionScheme::Spatial => (dims.sr, dims.sc),
        PartitionScheme::SpatioTemporal1 => (dims.sr, dims.t),
        PartitionScheme::SpatioTemporal2 => (dims.t, dims.sc),
    };
    let row_parts = split(row_extent, pr, row_weights)?;
    let col_parts = split(col_extent, pc, col_weights)?;

    let mut shards = Vec::with_capacity((pr * pc) as usize);
    for (i, rp) in row_parts.iter().enumerate() {
        for (j, cp) in col_parts.iter().enumerate() {
            let (sr, sc, t) = match scheme {
                PartitionScheme::Spatial => (rp.clone(), cp.clone(), 0..dims.t),
                PartitionScheme::SpatioTemporal1 => (rp.clone(), 0..dims.sc, cp.clone()),
                PartitionScheme::SpatioTemporal2 => (0..dims.sr, cp.clone(), rp.clone()),
            };
            shards.push(Shard { grid_row: i as u64, grid_col: j as u64, sr, sc, t });
        }
    }
    let shard_weights = if row_weights.is_some() || col_weights.is_some() {
        let rw = row_weights.map_or_else(|| vec![1.0 / pr as f64; pr as usize], <[f64]>::to_vec);
        let cw = col_weights.map_or_else(|| vec![1.0 / pc as f64; pc as usize], <[f64]>::to_vec);
        Some(rw.iter().flat_map(|r| cw.iter().map(move |c| r * c)).collect())
    } else {
        None
    };
    Ok(PartitionPlan { scheme, pr, pc, dims: *dims, shards, shard_weights })
}

pub fn partition_workload(op: &GemmOp, cfg: &SimConfig) -> Result<PartitionPlan> {
    let mc = &cfg.multicore;
    partition_dims(&map_gemm(op, cfg.dataflow), mc.scheme, mc.pr, mc.pc, mc.row_weights.as_deref(), mc.col_weights.as_deref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct L2Footprint {
    /// Distinct words of the Sr x T operand, shared by the cores holding the same slice.
    pub input_l2_words: u64,
    /// Distinct words of the Sc x T operand.
    pub weight_l2_words: u64,
    /// Sum over cores of both operands' slices when every core keeps a private copy.
    pub l1_total_words: u64,
    pub duplication_avoided_words: u64,
}

impl L2Footprint {
    pub fn shared_total(&self) -> u64 {
        self.input_l2_words + self.weight_l2_words
    }
}

pub fn l2_footprint(plan: &PartitionPlan) -> L2Footprint {
    let len = |r: &Range<u64>| r.end - r.start;
    let mut input_slices = HashSet::new();
    let mut weight_slices = HashSet::new();
    let (mut input_l2, mut weight_l2, mut l1) = (0, 0, 0);
    for s in plan.shards.iter().filter(|s| !s.is_idle()) {
        let input = len(&s.sr) * len(&s.t);
        let weight = len(&s.sc) * len(&s.t);
        l1 += input + weight;
        if input_slices.insert((s.sr.clone(), s.t.clone())) {
            input_l2 += input;
        }
        if weight_slices.insert((s.sc.clone(), s.t.clone())) {
            weight_l2 += weight;
        }
    }
    L2Footprint {
        input_l2_words: input_l2,
        weight_l2_words: weight_l2,
        l1_total_words: l1,
        duplication_avoided_words: l1 - input_l2 - weight_l2,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreResult {
    pub shard: Shard,
    pub profile: CoreProfile,
    /// `None` for idle cores.
    pub report: Option<ComputeReport>,
    /// Compute cycles + vector epilogue + network hops.
    pub makespan: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticoreReport {
    pub cores: Vec<CoreResult>,
    pub aggregate_cycles: u64,
}

/// Simulate every shard on its core; the layer finishes when the slowest core does.
pub fn simulate_multicore(
    plan: &PartitionPlan,
    profiles: &[CoreProfile],
    hop_latency: u64,
    bases: AddressBases,
) -> Result<MulticoreReport> {
    if plan.shards.is_empty() {
        return Err(SimError::validation("partition plan has no shards"));
    }
    if profiles.len() != plan.shards.len() {
        return Err(SimError::validation(format!("{} core profiles for {} shards", profiles.len(), plan.shards.len())));
    }
    let dataflow = plan.dims.dataflow;
    let cores = plan
        .shards
        .par_iter()
        .zip(profiles.par_iter())
        .map(|(shard, profile)| -> Result<CoreResult> {
            if shard.is_idle() {
                return Ok(CoreResult { shard: shard.clone(), profile: *profile, report: None, makespan: 0 });
            }
            let trace = DemandTrace::new(&shard.gemm(dataflow), dataflow, profile.rows, profile.cols, bases)?;
            let report = simulate_compute(&trace);
            let makespan = report.cycles + profile.simd_latency_cycles + profile.nop_hops * hop_latency;
            Ok(CoreResult { shard: shard.clone(), profile: *profile, report: Some(report), makespan })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate_cycles = cores.iter().map(|c| c.makespan).max().unwrap_or(0);
    Ok(MulticoreReport { cores, aggregate_cycles })
}

/// Core profiles from the configuration, defaulting to the top-level array shape.
pub fn core_profiles(cfg: &SimConfig) -> Vec<CoreProfile> {
    if cfg.multicore.core_profiles.is_empty() {
        vec![CoreProfile::uniform(cfg.array_rows, cfg.array_cols); cfg.multicore.num_cores as usize]
    } else {
        cfg.multicore.core_profiles.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRow {
    pub scheme: PartitionScheme,
    pub pr: u64,
    pub pc: u64,
    pub cycles: u64,
    pub footprint: L2Footprint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub compute_optimal: SweepRow,
    pub footprint_optimal: SweepRow,
}

fn scheme_rank(s: PartitionScheme) -> u8 {
    match s {
        PartitionScheme::Spatial => 0,
        PartitionScheme::SpatioTemporal1 => 1,
        PartitionScheme::SpatioTemporal2 => 2,
    }
}

/// Every grid `Pr x Pc = num_cores` under every scheme, scored analytically.
pub fn sweep_partitions(op: &GemmOp, dataflow: Dataflow, rows: u64, cols: u64, num_cores: u64) -> Result<SweepResult> {
    if num_cores == 0 {
        return Err(SimError::validation("core count must be >= 1"));
    }
    if rows == 0 || cols == 0 {
        return Err(SimError::validation("array dimensions must be >= 1"));
    }
    let dims = map_gemm(op, dataflow);
    let grids: Vec<(u64, u64)> = (1..=num_cores).filter(|p| num_cores.is_multiple_of(*p)).map(|p| (p, num_cores / p)).collect();
    let mut out = Vec::new();
    for scheme in PartitionScheme::ALL {
        for &(pr, pc) in &grids {
            let plan = partition_dims(&dims, scheme, pr, pc, None, None)?;
            out.push(SweepRow {
                scheme,
                pr,
                pc,
                cycles: analytical_partition_cycles(&dims, rows, cols, pr, pc, scheme),
                footprint: l2_footprint(&plan),
            });
        }
    }
    let compute_optimal = *out
        .iter()
        .min_by_key(|r| (r.cycles, r.footprint.shared_total(), scheme_rank(r.scheme), r.pr))
        .expect("at least one grid");
    let footprint_optimal = *out
        .iter()
        .min_by_key(|r| (r.footprint.shared_total(), r.cycles, scheme_rank(r.scheme), r.pr))
        .expect("at least one grid");
    Ok(SweepResult { rows: out, compute_optimal, footprint_optimal })
}

pub const SWEEP_HEADER: &str = "scheme,Pr,Pc,cycles,l2_input_words,l2_weight_words";

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in &result.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scheme, r.pr, r.pc, r.cycles, r.footprint.input_l2_words, r.footprint.weight_l2_words
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(sr: u64, sc: u64, t: u64) -> MappedDims {
        MappedDims { sr, sc, t, dataflow: Dataflow::Os }
    }

    fn lens(v: &[Range<u64>]) -> Vec<u64> {
        v.iter().map(|r| r.end - r.start).collect()
    }

    #[test]
    fn formula_examples() {
        let d = dims(1000, 1000, 1000);
        assert_eq!(analytical_partition_cycles(&d, 8, 8, 4, 4, PartitionScheme::Spatial), 1_046_528);
        assert_eq!(analytical_partition_cycles(&d, 8, 8, 4, 4, PartitionScheme::SpatioTemporal1), 1_088_000);
        for scheme in PartitionScheme::ALL {
            assert_eq!(analytical_partition_cycles(&d, 8, 8, 1, 1, scheme), crate::systolic::analytical_cycles(&d, 8, 8));
        }
    }

    #[test]
    fn splits() {
        assert_eq!(lens(&balanced_split(4, 2)), vec![2, 2]);
        assert_eq!(lens(&balanced_split(10, 4)), vec![3, 3, 2, 2]);
        assert_eq!(lens(&weighted_split(8, &[0.5, 0.25, 0.25])), vec![4, 2, 2]);
        assert_eq!(lens(&balanced_split(2, 4)), vec![1, 1, 0, 0]);
    }

    #[test]
    fn st1_splits_temporal_over_columns() {
        let plan = partition_dims(&dims(8, 8, 10), PartitionScheme::SpatioTemporal1, 1, 4, None, None).unwrap();
        let t: Vec<u64> = plan.shards.iter().map(|s| s.t.end - s.t.start).collect();
        assert_eq!(t, vec![3, 3, 2, 2]);
        assert!(plan.shards.iter().all(|s| s.sc == (0..8)));
    }

    #[test]
    fn oversized_grid_flags_idle_cores() {
        let plan = partition_dims(&dims(2, 1, 1), PartitionScheme::Spatial, 4, 1, None, None).unwrap();
        let idle: Vec<bool> = plan.shards.iter().map(Shard::is_idle).collect();
        assert_eq!(idle, vec![false, false, true, true]);
    }

    #[test]
    fn footprint_examples() {
        let one = partition_dims(&dims(100, 100, 10), PartitionScheme::Spatial, 1, 1, None, None).unwrap();
        assert_eq!(l2_footprint(&one).duplication_avoided_words, 0);

        // each grid row shares an input slice of 10x10 = 100 words
        let plan = partition_dims(&dims(20, 20, 10), PartitionScheme::Spatial, 2, 2, None, None).unwrap();
        let f = l2_footprint(&plan);
        assert_eq!(f.input_l2_words, 200);
        assert_eq!(f.weight_l2_words, 200);
        assert_eq!(f.l1_total_words, 800);
        assert_eq!(f.duplication_avoided_words, 400);

        // weight slice 5x10 = 50 words per grid column, four grid rows share it
        let plan = partition_dims(&dims(40, 10, 10), PartitionScheme::Spatial, 4, 2, None, None).unwrap();
        let f = l2_footprint(&plan);
        assert_eq!(f.weight_l2_words, 100);
        // input side: 4 slices of 100 words held twice; weight side: 3 * (50 * Pc)
        assert_eq!(f.duplication_avoided_words, 400 + 3 * 50 * 2);
    }

    #[test]
    fn nop_hops_extend_makespan() {
        let plan = partition_dims(&dims(8, 16, 10), PartitionScheme::Spatial, 1, 2, None, None).unwrap();
        let profiles = [
            CoreProfile { rows: 8, cols: 8, simd_len: 0, simd_latency_cycles: 0, nop_hops: 0 },
            CoreProfile { rows: 8, cols: 8, simd_len: 0, simd_latency_cycles: 0, nop_hops: 3 },
        ];
        let bases = AddressBases { ifmap: 0, filter: 10_000_000, ofmap: 20_000_000 };
        let r = simulate_multicore(&plan, &profiles, 10, bases).unwrap();
        let compute = r.cores[0].report.as_ref().unwrap().cycles;
        assert_eq!(r.cores[1].report.as_ref().unwrap().cycles, compute);
        assert_eq!(r.aggregate_cycles, compute + 30);
    }

    #[test]
    fn sweep_enumeration() {
        let r = sweep_partitions(&GemmOp::new(1000, 1000, 1000), Dataflow::Os, 8, 8, 4).unwrap();
        assert_eq!(r.rows.len(), 9);
        let r = sweep_partitions(&GemmOp::new(1, 1, 1), Dataflow::Os, 8, 8, 4).unwrap();
        assert_eq!(r.compute_optimal.scheme, PartitionScheme::Spatial);
        assert_eq!(r.compute_optimal.pr, 1);
    }
}
