//! Structured N:M weight sparsity under the weight-stationary dataflow.
//!
//! The filter operand (K x M) is split along K into blocks of `block_m`
//! consecutive rows. Block `b` keeps `n_b` nonzero rows, always the first
//! `n_b` rows of the block. Layer-wise patterns use one `n` for every block;
//! row-wise patterns draw each block's `n_b` uniformly from `1..=block_m/2`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Dataflow, SparseRep, SparsityConfig};
use crate::error::{Result, SimError};
use crate::systolic::MappedDims;
use crate::topology::NmRatio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsityMode {
    LayerWise,
    RowWise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pub mode: SparsityMode,
    pub block_m: u64,
    /// Nonzero count of each block of `block_m` filter rows (last block may be partial).
    pub per_block_n: Vec<u64>,
    /// Filter rows (K) the pattern covers.
    pub rows: u64,
    pub seed: u64,
}

impl SparsityPattern {
    pub fn layer_wise(rows: u64, ratio: NmRatio) -> Result<Self> {
        if ratio.n == 0 || ratio.n > ratio.m {
            return Err(SimError::validation(format!("invalid sparsity ratio {ratio}")));
        }
        Ok(SparsityPattern {
            mode: SparsityMode::LayerWise,
            block_m: ratio.m,
            per_block_n: vec![ratio.n; rows.div_ceil(ratio.m) as usize],
            rows,
            seed: 0,
        })
    }

    /// Random per-block N in `1..=block_m/2`; `stream` separates layers sharing one seed.
    pub fn row_wise(rows: u64, block_m: u64, seed: u64, stream: u64) -> Result<Self> {
        if block_m < 2 {
            return Err(SimError::validation(format!(
                "row-wise sparsity needs block size >= 2 (got {block_m}): no N satisfies 1 <= N <= M/2"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let per_block_n = (0..rows.div_ceil(block_m)).map(|_| rng.random_range(1..=block_m / 2)).collect();
        Ok(SparsityPattern { mode: SparsityMode::RowWise, block_m, per_block_n, rows, seed })
    }

    fn block_len(&self, b: usize) -> u64 {
        (self.rows - b as u64 * self.block_m).min(self.block_m)
    }

    /// Kept rows of block `b`.
    pub fn block_nnz(&self, b: usize) -> u64 {
        self.per_block_n[b].min(self.block_len(b))
    }

    /// Rows of the compressed filter (effective spatial-row extent).
    pub fn kept_rows(&self) -> u64 {
        (0..self.per_block_n.len()).map(|b| self.block_nnz(b)).sum()
    }

    /// Original row index of every kept row, ascending.
    pub fn row_map(&self) -> Vec<u64> {
        let mut map = Vec::with_capacity(self.kept_rows() as usize);
        for b in 0..self.per_block_n.len() {
            let start = b as u64 * self.block_m;
            map.extend(start..start + self.block_nnz(b));
        }
        map
    }

    pub fn is_dense(&self) -> bool {
        self.kept_rows() == self.rows
    }
}

/// Build the pattern a layer runs with. `ratio` is the layer's annotation;
/// unannotated layers in a layer-wise run stay dense.
pub fn materialize_pattern(rows: u64, ratio: Option<NmRatio>, cfg: &SparsityConfig, layer_index: u64) -> Result<SparsityPattern> {
    if cfg.optimized_mapping {
        SparsityPattern::row_wise(rows, cfg.block_size, cfg.seed, layer_index)
    } else {
        let ratio = ratio.unwrap_or(NmRatio::dense(cfg.block_size));
        SparsityPattern::layer_wise(rows, ratio)
    }
}

pub fn sparse_mapped_dims(dims: &MappedDims, pattern: &SparsityPattern) -> Result<MappedDims> {
    if dims.dataflow != Dataflow::Ws {
        return Err(SimError::config("sparsity requires the weight-stationary dataflow"));
    }
    if pattern.rows != dims.sr {
        return Err(SimError::validation(format!("pattern covers {} rows but the mapping has {}", pattern.rows, dims.sr)));
    }
    Ok(MappedDims { sr: pattern.kept_rows(), ..*dims })
}

/// Compressed row map shared by the sparse demand trace.
pub fn shared_row_map(pattern: &SparsityPattern) -> Arc<Vec<u64>> {
    Arc::new(pattern.row_map())
}

/// Bits needed to index `n` distinct positions.
pub fn index_bits(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseStorageReport {
    pub rep: SparseRep,
    pub original_words: u64,
    pub nnz_words: u64,
    pub metadata_bits: u64,
    pub word_bits: u64,
}

impl SparseStorageReport {
    pub fn original_bits(&self) -> u64 {
        self.original_words * self.word_bits
    }

    pub fn value_bits(&self) -> u64 {
        self.nnz_words * self.word_bits
    }

    pub fn new_storage_bits(&self) -> u64 {
        self.value_bits() + self.metadata_bits
    }

    pub fn original_bytes(&self) -> u64 {
        self.original_bits().div_ceil(8)
    }

    /// Values and metadata are packed as separate byte streams.
    pub fn value_bytes(&self) -> u64 {
        self.value_bits().div_ceil(8)
    }

    pub fn metadata_bytes(&self) -> u64 {
        self.metadata_bits.div_ceil(8)
    }

    pub fn new_storage_bytes(&self) -> u64 {
        self.value_bytes() + self.metadata_bytes()
    }
}

/// Storage of a `rows x cols` filter compressed with `pattern`.
pub fn storage_report(rows: u64, cols: u64, pattern: &SparsityPattern, rep: SparseRep, word_bits: u64) -> SparseStorageReport {
    let nnz = pattern.kept_rows() * cols;
    let metadata_bits = match rep {
        SparseRep::EllpackBlock => nnz * index_bits(pattern.block_m),
        // column index per value plus rows+1 row pointers
        SparseRep::Csr => nnz * index_bits(cols).max(1) + (rows + 1) * index_bits(nnz + 1).max(1),
        SparseRep::Csc => nnz * index_bits(rows).max(1) + (cols + 1) * index_bits(nnz + 1).max(1),
    };
    SparseStorageReport { rep, original_words: rows * cols, nnz_words: nnz, metadata_bits, word_bits }
}

/// Storage of a layer that keeps its dense layout (no metadata).
pub fn dense_storage(rows: u64, cols: u64, rep: SparseRep, word_bits: u64) -> SparseStorageReport {
    SparseStorageReport { rep, original_words: rows * cols, nnz_words: rows * cols, metadata_bits: 0, word_bits }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseLayerRow {
    pub layer: String,
    /// `None` for layers left in dense layout.
    pub rep: Option<SparseRep>,
    pub storage: SparseStorageReport,
    /// Achieved ratio, e.g. "2:4", or "row-wise" for per-block draws.
    pub ratio: String,
}

pub struct RepLabel(pub Option<SparseRep>);

impl fmt::Display for RepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(SparseRep::EllpackBlock) => f.write_str("ellpack_block"),
            Some(SparseRep::Csr) => f.write_str("csr"),
            Some(SparseRep::Csc) => f.write_str("csc"),
            None => f.write_str("dense"),
        }
    }
}

pub const SPARSE_REPORT_HEADER: &str =
    "Layer,Representation,OriginalStorageBytes,CompressedValueBytes,MetadataBytes,NewStorageBytes";

pub fn emit_sparse_report(rows: &[SparseLayerRow]) -> String {
    let mut out = String::from(SPARSE_REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.storage;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.layer,
            RepLabel(r.rep),
            s.original_bytes(),
            s.value_bytes(),
            s.metadata_bytes(),
            s.new_storage_bytes()
        ));
    }
    out
}
