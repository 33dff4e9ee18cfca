//! Placement of operand tensors in a multi-bank on-chip buffer and the
//! per-cycle slowdown caused by bank conflicts.
//!
//! A tensor of extents (C, H, W) is cut into tiles of (c1, h1, w1) elements.
//! Each tile fills one line; tiles are numbered in the inter-line order and
//! elements inside a tile in the intra-line order. Line columns are dealt to
//! banks in contiguous groups of `bandwidth_per_bank`.

use crate::config::{LayoutConfig, OperandLayout};
use crate::error::{Result, SimError};
use crate::systolic::{DemandTrace, Operand, BUBBLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    C,
    H,
    W,
}

impl Dim {
    fn idx(self) -> usize {
        match self {
            Dim::C => 0,
            Dim::H => 1,
            Dim::W => 2,
        }
    }
}

pub fn parse_order(s: &str) -> Result<[Dim; 3]> {
    let dims: Vec<Dim> = s
        .chars()
        .map(|ch| match ch.to_ascii_lowercase() {
            'c' => Ok(Dim::C),
            'h' => Ok(Dim::H),
            'w' => Ok(Dim::W),
            other => Err(SimError::validation(format!("unknown dimension `{other}` in order `{s}`"))),
        })
        .collect::<Result<_>>()?;
    let arr: [Dim; 3] =
        dims.try_into().map_err(|_| SimError::validation(format!("dimension order `{s}` must name c, h and w once each")))?;
    let mut seen = [false; 3];
    for d in arr {
        if std::mem::replace(&mut seen[d.idx()], true) {
            return Err(SimError::validation(format!("dimension order `{s}` repeats a dimension")));
        }
    }
    Ok(arr)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutSpec {
    /// Tensor extents (C, H, W).
    pub dims: [u64; 3],
    /// Tile extents (c1, h1, w1).
    pub steps: [u64; 3],
    /// Outer to inner.
    pub inter_order: [Dim; 3],
    /// Outer to inner.
    pub intra_order: [Dim; 3],
    pub bandwidth_per_bank: u64,
    pub num_banks: u64,
    pub ports_per_bank: u64,
}

impl LayoutSpec {
    /// The default orders give line = c-tile major, then h, then w; column = w major, then h, then c.
    pub fn new(dims: [u64; 3], steps: [u64; 3], bandwidth_per_bank: u64, num_banks: u64, ports_per_bank: u64) -> Result<Self> {
        let spec = LayoutSpec {
            dims,
            steps,
            inter_order: [Dim::C, Dim::H, Dim::W],
            intra_order: [Dim::W, Dim::H, Dim::C],
            bandwidth_per_bank,
            num_banks,
            ports_per_bank,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_orders(mut self, inter: [Dim; 3], intra: [Dim; 3]) -> Self {
        self.inter_order = inter;
        self.intra_order = intra;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if self.dims[i] == 0 || self.steps[i] == 0 || self.steps[i] > self.dims[i] {
                return Err(SimError::validation(format!(
                    "layout step {} must lie in 1..={} (dimension {i})",
                    self.steps[i], self.dims[i]
                )));
            }
        }
        if self.bandwidth_per_bank == 0 || self.num_banks == 0 || self.ports_per_bank == 0 {
            return Err(SimError::validation("banks, bandwidth per bank and ports must be >= 1"));
        }
        if self.line_width() > self.num_banks * self.bandwidth_per_bank {
            return Err(SimError::validation(format!(
                "line of {} elements exceeds {} banks x {} elements",
                self.line_width(),
                self.num_banks,
                self.bandwidth_per_bank
            )));
        }
        Ok(())
    }

    pub fn line_width(&self) -> u64 {
        self.steps.iter().product()
    }

    fn tiles(&self) -> [u64; 3] {
        std::array::from_fn(|i| self.dims[i].div_ceil(self.steps[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placement {
    pub line_id: u64,
    pub col_id: u64,
    pub bank_id: u64,
}

fn mixed_radix(order: &[Dim; 3], digits: [u64; 3], radix: [u64; 3]) -> u64 {
    order.iter().fold(0, |acc, d| acc * radix[d.idx()] + digits[d.idx()])
}

pub fn locate(c: u64, h: u64, w: u64, spec: &LayoutSpec) -> Result<Placement> {
    let coord = [c, h, w];
    if (0..3).any(|i| coord[i] >= spec.dims[i]) {
        return Err(SimError::validation(format!("coordinate ({c},{h},{w}) outside tensor {:?}", spec.dims)));
    }
    Ok(locate_unchecked(coord, spec))
}

fn locate_unchecked(coord: [u64; 3], spec: &LayoutSpec) -> Placement {
    let tile: [u64; 3] = std::array::from_fn(|i| coord[i] / spec.steps[i]);
    let within: [u64; 3] = std::array::from_fn(|i| coord[i] % spec.steps[i]);
    let line_id = mixed_radix(&spec.inter_order, tile, spec.tiles());
    let col_id = mixed_radix(&spec.intra_order, within, spec.steps);
    Placement { line_id, col_id, bank_id: col_id / spec.bandwidth_per_bank }
}

/// Cycles one set of same-cycle requests occupies the buffer: the worst bank's
/// distinct-line count divided over its ports.
pub fn cycle_conflicts(requests: &[(u64, u64, u64)], spec: &LayoutSpec) -> Result<u64> {
    let mut placed: Vec<(u64, u64)> =
        requests.iter().map(|&(c, h, w)| locate(c, h, w, spec).map(|p| (p.bank_id, p.line_id))).collect::<Result<_>>()?;
    Ok(conflicts_of(&mut placed, spec.ports_per_bank))
}

fn conflicts_of(placed: &mut Vec<(u64, u64)>, ports: u64) -> u64 {
    placed.sort_unstable();
    placed.dedup();
    let mut worst = 0;
    let mut i = 0;
    while i < placed.len() {
        let bank = placed[i].0;
        let start = i;
        while i < placed.len() && placed[i].0 == bank {
            i += 1;
        }
        worst = worst.max((i - start) as u64);
    }
    worst.div_ceil(ports)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutReport {
    pub total_cycles: u64,
    pub baseline_cycles: u64,
    /// total / baseline, where the baseline serves every cycle's requests in one cycle.
    pub slowdown: f64,
}

/// Default tiling of a GEMM operand seen as (1, rows, cols): fill each line
/// with consecutive columns, then rows.
pub fn default_steps(dims: [u64; 3], line_width: u64) -> [u64; 3] {
    let w1 = dims[2].min(line_width).max(1);
    let h1 = dims[1].min((line_width / w1).max(1));
    [1, h1, w1]
}

/// Layout of one trace operand under the configured banks.
pub fn operand_spec(trace: &DemandTrace, op: Operand, cfg: &LayoutConfig, layout: Option<&OperandLayout>) -> Result<LayoutSpec> {
    let (rows, cols) = trace.operand_shape(op);
    let dims = [1, rows, cols];
    match layout {
        None => LayoutSpec::new(
            dims,
            default_steps(dims, cfg.total_bandwidth()),
            cfg.bandwidth_per_bank,
            cfg.num_banks,
            cfg.ports_per_bank,
        ),
        Some(l) => {
            // steps wider than this layer's extents are clamped to the extents
            let steps = [l.c_step.min(dims[0]), l.h_step.min(dims[1]), l.w_step.min(dims[2])];
            Ok(LayoutSpec::new(dims, steps, cfg.bandwidth_per_bank, cfg.num_banks, cfg.ports_per_bank)?
                .with_orders(parse_order(&l.inter_order)?, parse_order(&l.intra_order)?))
        }
    }
}

/// Replay a trace against per-operand layouts. Each operand has its own
/// buffer; a cycle costs the slowest operand's conflict count and at least one cycle.
pub fn evaluate_layout(trace: &DemandTrace, specs: &[LayoutSpec; 3]) -> Result<LayoutReport> {
    for (op, spec) in Operand::ALL.iter().zip(specs) {
        let (rows, cols) = trace.operand_shape(*op);
        if spec.dims != [1, rows, cols] {
            return Err(SimError::validation(format!(
                "{} layout covers {:?} but the operand is 1x{rows}x{cols}",
                op.name(),
                spec.dims
            )));
        }
    }
    let bases = trace.bases();
    let mut scratch = Vec::new();
    let (mut total, mut baseline) = (0u64, 0u64);
    trace.for_each_cycle(|_, d| {
        let mut cost = 1;
        for op in Operand::ALL {
            let spec = &specs[op.index()];
            let base = bases.get(op);
            let cols = spec.dims[2];
            scratch.clear();
            for &a in d.get(op) {
                if a != BUBBLE {
                    let rel = a - base;
                    let p = locate_unchecked([0, rel / cols, rel % cols], spec);
                    scratch.push((p.bank_id, p.line_id));
                }
            }
            cost = cost.max(conflicts_of(&mut scratch, spec.ports_per_bank));
        }
        total += cost;
        baseline += 1;
    });
    Ok(LayoutReport {
        total_cycles: total,
        baseline_cycles: baseline,
        slowdown: if baseline == 0 { 0.0 } else { total as f64 / baseline as f64 },
    })
}

/// Layout file: header `dim_order,c1_step,h1_step,w1_step` and one data row.
pub fn parse_layout_file(text: &str) -> Result<OperandLayout> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| SimError::parse(1, "empty layout file"))?;
    if !header.to_ascii_lowercase().starts_with("dim_order") {
        return Err(SimError::parse(1, "layout file must start with `dim_order,c1_step,h1_step,w1_step`"));
    }
    let row = lines.next().ok_or_else(|| SimError::parse(2, "layout file has no data row"))?;
    crate::config::parse_operand_layout(row).map_err(|e| SimError::parse(2, e))
}

pub const LAYOUT_REPORT_HEADER: &str = "Layer,Dataflow,Banks,BandwidthPerBank,Slowdown";
