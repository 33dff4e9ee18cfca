//! Independent reference models shared by the integration and acceptance tests.
//! None of these call into the crate's own formulas.

#![allow(dead_code, clippy::too_many_arguments, clippy::needless_range_loop, clippy::manual_div_ceil)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use systolic_sim::layout::{Dim, LayoutSpec};
use systolic_sim::sparsity::SparsityPattern;
use systolic_sim::systolic::{DemandTrace, Operand, BUBBLE};

/// (Sr, Sc, T) for a dataflow name, written out from the mapping table.
pub fn mapping(dataflow: &str, m: u64, n: u64, k: u64) -> (u64, u64, u64) {
    match dataflow {
        "is" => (k, n, m),
        "ws" => (k, m, n),
        "os" => (m, n, k),
        other => panic!("unknown dataflow {other}"),
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    (a + b - 1) / b
}

/// Single-array runtime by direct substitution.
pub fn single_core_cycles(sr: u64, sc: u64, t: u64, r: u64, c: u64) -> u64 {
    (2 * r + c + t - 2) * ceil_div(sr, r) * ceil_div(sc, c)
}

/// Multi-core runtime by direct substitution, scheme given by name.
pub fn partition_cycles(scheme: &str, sr: u64, sc: u64, t: u64, r: u64, c: u64, pr: u64, pc: u64) -> u64 {
    match scheme {
        "spatial" => (2 * r + c + t - 2) * ceil_div(sr, pr * r) * ceil_div(sc, pc * c),
        "st1" => (2 * r + c + ceil_div(t, pc) - 2) * ceil_div(sr, pr * r) * ceil_div(sc, c),
        "st2" => (2 * r + c + ceil_div(t, pr) - 2) * ceil_div(sr, r) * ceil_div(sc, pc * c),
        other => panic!("unknown scheme {other}"),
    }
}

/// Every (Pr, Pc) with Pr * Pc = cores.
pub fn grids(cores: u64) -> Vec<(u64, u64)> {
    (1..=cores).filter(|p| cores.is_multiple_of(*p)).map(|p| (p, cores / p)).collect()
}

/// MACs of a convolution counted with the full seven-deep loop nest (batch 1).
pub fn conv_macs_by_loops(h: u64, w: u64, fh: u64, fw: u64, ch: u64, nf: u64, stride: u64) -> u64 {
    let oh = (h - fh) / stride + 1;
    let ow = (w - fw) / stride + 1;
    let mut macs = 0;
    for _n in 0..1 {
        for _f in 0..nf {
            for y in 0..oh {
                for x in 0..ow {
                    for _c in 0..ch {
                        for i in 0..fh {
                            for j in 0..fw {
                                assert!(y * stride + i < h && x * stride + j < w);
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    macs
}

/// A `rows x cols` mask honouring the pattern's per-block counts, with the
/// kept positions inside each block drawn at random.
pub fn random_block_mask<R: Rng>(pattern: &SparsityPattern, cols: u64, rng: &mut R) -> Vec<Vec<bool>> {
    let rows = pattern.rows as usize;
    let block = pattern.block_m as usize;
    let mut mask = vec![vec![false; cols as usize]; rows];
    for col in 0..cols as usize {
        for (b, &n) in pattern.per_block_n.iter().enumerate() {
            let len = (rows - b * block).min(block);
            for off in sample(rng, len, (n as usize).min(len)) {
                mask[b * block + off][col] = true;
            }
        }
    }
    mask
}

/// Bit-level blocked-ELLPACK encoder for a column-major mask of `rows x cols`.
/// Each nonzero emits a value of `word_bits` and an in-block index of
/// ceil(log2(block)) bits, appended bit by bit. Returns (value bytes, metadata bytes).
pub fn ellpack_encode(mask: &[Vec<bool>], block: u64, word_bits: u64) -> (u64, u64) {
    let mut index_bits = 0;
    while (1u64 << index_bits) < block {
        index_bits += 1;
    }
    let mut values: Vec<bool> = Vec::new();
    let mut meta: Vec<bool> = Vec::new();
    let rows = mask.len();
    let cols = if rows == 0 { 0 } else { mask[0].len() };
    for col in 0..cols {
        for start in (0..rows).step_by(block as usize) {
            for (offset, row) in (start..rows.min(start + block as usize)).enumerate() {
                if mask[row][col] {
                    values.extend(std::iter::repeat_n(true, word_bits as usize));
                    for bit in (0..index_bits).rev() {
                        meta.push((offset >> bit) & 1 == 1);
                    }
                }
            }
        }
    }
    let bytes = |bits: &Vec<bool>| bits.chunks(8).count() as u64;
    (bytes(&values), bytes(&meta))
}

/// Cycle-by-cycle port scheduler: each cycle every bank opens up to `ports`
/// lines that still have waiting requests; an open line serves all of them.
/// `requests` are (bank, line) pairs issued together.
pub fn port_schedule(requests: &[(u64, u64)], ports: u64) -> u64 {
    let mut waiting: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for &(bank, line) in requests {
        waiting.entry(bank).or_default().insert(line);
    }
    let mut cycles = 0;
    while waiting.values().any(|s| !s.is_empty()) {
        for lines in waiting.values_mut() {
            for _ in 0..ports {
                if let Some(&l) = lines.iter().next() {
                    lines.remove(&l);
                }
            }
        }
        cycles += 1;
    }
    cycles.max(1)
}

fn dim_index(d: Dim) -> usize {
    match d {
        Dim::C => 0,
        Dim::H => 1,
        Dim::W => 2,
    }
}

/// Placement by enumeration: tiles are numbered as nested loops in the
/// inter order, elements inside a tile as nested loops in the intra order.
pub fn enumerate_placement(spec: &LayoutSpec) -> HashMap<[u64; 3], (u64, u64)> {
    let tiles: [u64; 3] = std::array::from_fn(|i| spec.dims[i].div_ceil(spec.steps[i]));
    let mut out = HashMap::new();
    let mut line = 0;
    let [o0, o1, o2] = spec.inter_order.map(dim_index);
    let [i0, i1, i2] = spec.intra_order.map(dim_index);
    for a in 0..tiles[o0] {
        for b in 0..tiles[o1] {
            for c in 0..tiles[o2] {
                let mut tile = [0; 3];
                tile[o0] = a;
                tile[o1] = b;
                tile[o2] = c;
                let mut col = 0;
                for x in 0..spec.steps[i0] {
                    for y in 0..spec.steps[i1] {
                        for z in 0..spec.steps[i2] {
                            let mut off = [0; 3];
                            off[i0] = x;
                            off[i1] = y;
                            off[i2] = z;
                            let coord: [u64; 3] = std::array::from_fn(|d| tile[d] * spec.steps[d] + off[d]);
                            if (0..3).all(|d| coord[d] < spec.dims[d]) {
                                out.insert(coord, (line, col));
                            }
                            col += 1;
                        }
                    }
                }
                line += 1;
            }
        }
    }
    out
}

/// Replays a trace with the reference placement and port scheduler.
pub fn brute_force_total(trace: &DemandTrace, specs: &[LayoutSpec; 3]) -> u64 {
    let places: Vec<_> = specs.iter().map(enumerate_placement).collect();
    let bases = trace.bases();
    let mut total = 0;
    trace.for_each_cycle(|_, d| {
        let mut cost = 1;
        for op in Operand::ALL {
            let spec = &specs[op.index()];
            let cols = spec.dims[2];
            let placed: Vec<(u64, u64)> = d
                .get(op)
                .iter()
                .filter(|&&a| a != BUBBLE)
                .map(|&a| {
                    let rel = a - bases.get(op);
                    let (line, col) = places[op.index()][&[0, rel / cols, rel % cols]];
                    (col / spec.bandwidth_per_bank, line)
                })
                .collect();
            if !placed.is_empty() {
                cost = cost.max(port_schedule(&placed, spec.ports_per_bank));
            }
        }
        total += cost;
    });
    total
}
