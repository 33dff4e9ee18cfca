//! Run configuration: an INI-style document with `[architecture]`, `[sparsity]`,
//! `[memory]`, `[layout]` and `[energy]` sections.
//!
//! Only `ArrayHeight`, `ArrayWidth` and `Dataflow` are mandatory; every other
//! key falls back to the defaults in [`SimConfig::new`].

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dataflow {
    Is,
    Ws,
    Os,
}

impl Dataflow {
    pub const ALL: [Dataflow; 3] = [Dataflow::Is, Dataflow::Ws, Dataflow::Os];
}

impl FromStr for Dataflow {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "is" | "input_stationary" => Ok(Dataflow::Is),
            "ws" | "weight_stationary" => Ok(Dataflow::Ws),
            "os" | "output_stationary" => Ok(Dataflow::Os),
            other => Err(format!("unknown dataflow `{other}` (expected is, ws or os)")),
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataflow::Is => "is",
            Dataflow::Ws => "ws",
            Dataflow::Os => "os",
        })
    }
}

/// How a GEMM is split across a `Pr x Pc` core grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartitionScheme {
    /// `Sr` over grid rows, `Sc` over grid columns.
    Spatial,
    /// `Sr` over grid rows, `T` over grid columns.
    SpatioTemporal1,
    /// `T` over grid rows, `Sc` over grid columns.
    SpatioTemporal2,
}

impl PartitionScheme {
    pub const ALL: [PartitionScheme; 3] =
        [PartitionScheme::Spatial, PartitionScheme::SpatioTemporal1, PartitionScheme::SpatioTemporal2];
}

impl FromStr for PartitionScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spatial" => Ok(PartitionScheme::Spatial),
            "st1" | "spatiotemporal1" | "spatio_temporal_1" => Ok(PartitionScheme::SpatioTemporal1),
            "st2" | "spatiotemporal2" | "spatio_temporal_2" => Ok(PartitionScheme::SpatioTemporal2),
            other => Err(format!("unknown partition scheme `{other}` (expected spatial, st1 or st2)")),
        }
    }
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionScheme::Spatial => "spatial",
            PartitionScheme::SpatioTemporal1 => "st1",
            PartitionScheme::SpatioTemporal2 => "st2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SparseRep {
    Csr,
    Csc,
    EllpackBlock,
}

impl FromStr for SparseRep {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csr" => Ok(SparseRep::Csr),
            "csc" => Ok(SparseRep::Csc),
            "ellpack_block" | "ellpackblock" | "blocked_ellpack" => Ok(SparseRep::EllpackBlock),
            other => Err(format!("unknown sparse representation `{other}` (expected csr, csc or ellpack_block)")),
        }
    }
}

impl fmt::Display for SparseRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SparseRep::Csr => "csr",
            SparseRep::Csc => "csc",
            SparseRep::EllpackBlock => "ellpack_block",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressMap {
    /// Row | Bank | Channel | Column, low bits last: consecutive DRAM rows rotate across channels.
    RoBaChCo,
    /// Channel | Row | Bank | Column: each channel owns one contiguous capacity slice.
    ChRoBaCo,
}

impl FromStr for AddressMap {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "robachco" => Ok(AddressMap::RoBaChCo),
            "chrobaco" => Ok(AddressMap::ChRoBaCo),
            other => Err(format!("unknown address map `{other}` (expected RoBaChCo or ChRoBaCo)")),
        }
    }
}

impl fmt::Display for AddressMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AddressMap::RoBaChCo => "RoBaChCo",
            AddressMap::ChRoBaCo => "ChRoBaCo",
        })
    }
}

/// Per-core description for heterogeneous multi-core runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreProfile {
    pub rows: u64,
    pub cols: u64,
    pub simd_len: u64,
    pub simd_latency_cycles: u64,
    pub nop_hops: u64,
}

impl CoreProfile {
    pub fn uniform(rows: u64, cols: u64) -> Self {
        CoreProfile { rows, cols, simd_len: 0, simd_latency_cycles: 0, nop_hops: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticoreConfig {
    pub num_cores: u64,
    pub scheme: PartitionScheme,
    pub pr: u64,
    pub pc: u64,
    /// Empty means every core uses the top-level array shape.
    pub core_profiles: Vec<CoreProfile>,
    pub hop_latency: u64,
    /// Fractional workload share per grid row / grid column (non-uniform partitioning).
    pub row_weights: Option<Vec<f64>>,
    pub col_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityConfig {
    pub enabled: bool,
    pub rep: SparseRep,
    /// Row-wise N:M when set; layer-wise otherwise.
    pub optimized_mapping: bool,
    pub block_size: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramTimings {
    pub t_rcd: u64,
    pub t_rp: u64,
    pub t_cl: u64,
    pub t_burst: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DramConfig {
    pub channels: u64,
    pub banks_per_channel: u64,
    pub row_size_bytes: u64,
    pub capacity_per_channel: u64,
    pub freq_mhz: u64,
    pub timings: DramTimings,
    pub address_map: AddressMap,
}

impl DramConfig {
    /// DDR4-2400-class defaults: 4 Gb per channel, 16 banks, 1 KiB rows.
    pub fn ddr4_2400() -> Self {
        DramConfig {
            channels: 1,
            banks_per_channel: 16,
            row_size_bytes: 1024,
            capacity_per_channel: 512 << 20,
            freq_mhz: 2400,
            timings: DramTimings { t_rcd: 32, t_rp: 32, t_cl: 32, t_burst: 8 },
            address_map: AddressMap::RoBaChCo,
        }
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacity_per_channel * self.channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueConfig {
    pub read_entries: u64,
    pub write_entries: u64,
}

/// Knobs that shape the memory request stream and its replay.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryOptions {
    /// Filter the demand trace through per-operand on-chip buffers so that only
    /// misses reach DRAM. Off means every demand access becomes a DRAM request.
    pub sram_filter: bool,
    /// Merge same-cycle requests that fall in one DRAM row into one transaction.
    pub row_coalescing: bool,
    /// Cycles until a write is logged by the controller and leaves the write queue.
    pub write_ack_cycles: u64,
    /// Bytes moved by one DRAM transaction; on-chip buffers track residency at this granularity.
    pub transaction_bytes: u64,
}

/// Nested-loop placement of one operand in the banked on-chip buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandLayout {
    /// Loop order (outer to inner) used to enumerate lines, e.g. "chw".
    pub inter_order: String,
    /// Loop order (outer to inner) of elements inside a line, e.g. "whc".
    pub intra_order: String,
    pub c_step: u64,
    pub h_step: u64,
    pub w_step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutConfig {
    pub num_banks: u64,
    pub bandwidth_per_bank: u64,
    pub ports_per_bank: u64,
    pub ifmap: Option<OperandLayout>,
    pub filter: Option<OperandLayout>,
    pub ofmap: Option<OperandLayout>,
    pub ifmap_file: Option<PathBuf>,
    pub filter_file: Option<PathBuf>,
    pub ofmap_file: Option<PathBuf>,
}

impl LayoutConfig {
    pub fn total_bandwidth(&self) -> u64 {
        self.num_banks * self.bandwidth_per_bank
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConfig {
    pub table_path: Option<PathBuf>,
    pub row_size_elems: u64,
    pub bank_size_rows: u64,
    pub clock_gating: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub array_rows: u64,
    pub array_cols: u64,
    pub dataflow: Dataflow,
    pub ifmap_sram_kb: u64,
    pub filter_sram_kb: u64,
    pub ofmap_sram_kb: u64,
    pub word_bytes: u64,
    pub ifmap_base: u64,
    pub filter_base: u64,
    pub ofmap_base: u64,
    pub clock_mhz: u64,
    pub multicore: MulticoreConfig,
    pub sparsity: SparsityConfig,
    pub dram: DramConfig,
    pub queues: QueueConfig,
    pub memory: MemoryOptions,
    pub layout: Option<LayoutConfig>,
    pub energy: EnergyConfig,
}

pub const DEFAULT_FILTER_BASE: u64 = 10_000_000;
pub const DEFAULT_OFMAP_BASE: u64 = 20_000_000;

impl SimConfig {
    pub fn new(array_rows: u64, array_cols: u64, dataflow: Dataflow) -> Self {
        SimConfig {
            array_rows,
            array_cols,
            dataflow,
            ifmap_sram_kb: 6144,
            filter_sram_kb: 6144,
            ofmap_sram_kb: 2048,
            word_bytes: 2,
            ifmap_base: 0,
            filter_base: DEFAULT_FILTER_BASE,
            ofmap_base: DEFAULT_OFMAP_BASE,
            clock_mhz: 2400,
            multicore: MulticoreConfig {
                num_cores: 1,
                scheme: PartitionScheme::Spatial,
                pr: 1,
                pc: 1,
                core_profiles: Vec::new(),
                hop_latency: 0,
                row_weights: None,
                col_weights: None,
            },
            sparsity: SparsityConfig {
                enabled: false,
                rep: SparseRep::EllpackBlock,
                optimized_mapping: false,
                block_size: 4,
                seed: 0,
            },
            dram: DramConfig::ddr4_2400(),
            queues: QueueConfig { read_entries: 128, write_entries: 128 },
            memory: MemoryOptions { sram_filter: true, row_coalescing: false, write_ack_cycles: 1, transaction_bytes: 64 },
            layout: None,
            energy: EnergyConfig { table_path: None, row_size_elems: 16, bank_size_rows: 1, clock_gating: false },
        }
    }

    pub fn pe_count(&self) -> u64 {
        self.array_rows * self.array_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.array_rows == 0 || self.array_cols == 0 {
            return Err(SimError::validation("array dimensions must be >= 1"));
        }
        if self.word_bytes == 0 {
            return Err(SimError::validation("WordBytes must be >= 1"));
        }
        for (name, kb) in [
            ("IfmapSramSzkB", self.ifmap_sram_kb),
            ("FilterSramSzkB", self.filter_sram_kb),
            ("OfmapSramSzkB", self.ofmap_sram_kb),
        ] {
            if kb < 1 {
                return Err(SimError::validation(format!("{name} must be at least 1 KiB")));
            }
        }
        if self.clock_mhz == 0 {
            return Err(SimError::validation("ClockMHz must be >= 1"));
        }

        let mc = &self.multicore;
        if mc.num_cores == 0 || mc.pr == 0 || mc.pc == 0 {
            return Err(SimError::validation("NumCores, Pr and Pc must be >= 1"));
        }
        if mc.pr * mc.pc != mc.num_cores {
            return Err(SimError::validation(format!(
                "Pr*Pc = {}*{} = {} does not equal NumCores = {}",
                mc.pr,
                mc.pc,
                mc.pr * mc.pc,
                mc.num_cores
            )));
        }
        if !mc.core_profiles.is_empty() && mc.core_profiles.len() as u64 != mc.num_cores {
            return Err(SimError::validation(format!(
                "{} core profiles given for {} cores",
                mc.core_profiles.len(),
                mc.num_cores
            )));
        }
        if mc.core_profiles.iter().any(|p| p.rows == 0 || p.cols == 0) {
            return Err(SimError::validation("core profile array dimensions must be >= 1"));
        }
        for (name, weights, n) in [("RowWeights", &mc.row_weights, mc.pr), ("ColWeights", &mc.col_weights, mc.pc)] {
            if let Some(w) = weights {
                if w.len() as u64 != n {
                    return Err(SimError::validation(format!("{name} needs {n} entries, got {}", w.len())));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(SimError::validation(format!("{name} entries must be finite and >= 0")));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(SimError::validation(format!("{name} must sum to 1 (got {sum})")));
                }
            }
        }

        let sp = &self.sparsity;
        if sp.enabled {
            if sp.block_size == 0 || !sp.block_size.is_power_of_two() {
                return Err(SimError::validation(format!("BlockSize must be a power of two, got {}", sp.block_size)));
            }
            if self.dataflow != Dataflow::Ws {
                return Err(SimError::config("sparsity requires the weight-stationary dataflow"));
            }
        }

        let d = &self.dram;
        if d.channels == 0 || d.banks_per_channel == 0 || d.row_size_bytes == 0 || d.freq_mhz == 0 {
            return Err(SimError::validation("DRAM channels, banks, row size and frequency must be >= 1"));
        }
        let t = d.timings;
        if t.t_rcd == 0 || t.t_rp == 0 || t.t_cl == 0 || t.t_burst == 0 {
            return Err(SimError::validation("DRAM timings must be >= 1"));
        }
        if !d.capacity_per_channel.is_power_of_two() {
            return Err(SimError::validation("channel capacity must be a power of two"));
        }
        let tb = self.memory.transaction_bytes;
        if tb == 0 || !tb.is_multiple_of(self.word_bytes) || !d.row_size_bytes.is_multiple_of(tb) {
            return Err(SimError::validation(format!(
                "TransactionBytes ({tb}) must be a multiple of WordBytes and divide RowSizeBytes"
            )));
        }
        if self.queues.read_entries == 0 || self.queues.write_entries == 0 {
            return Err(SimError::validation("request queues need at least one entry"));
        }

        if let Some(l) = &self.layout {
            if l.num_banks == 0 || l.bandwidth_per_bank == 0 || l.ports_per_bank == 0 {
                return Err(SimError::validation("layout banks, bandwidth and ports must be >= 1"));
            }
        }
        if self.energy.row_size_elems == 0 || self.energy.bank_size_rows == 0 {
            return Err(SimError::validation("energy RowSize and BankSize must be >= 1"));
        }
        Ok(())
    }

    /// Render the configuration back to the text form accepted by [`parse_config`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mc = &self.multicore;
        let _ = writeln!(s, "[architecture]");
        let _ = writeln!(s, "ArrayHeight = {}", self.array_rows);
        let _ = writeln!(s, "ArrayWidth = {}", self.array_cols);
        let _ = writeln!(s, "Dataflow = {}", self.dataflow);
        let _ = writeln!(s, "IfmapSramSzkB = {}", self.ifmap_sram_kb);
        let _ = writeln!(s, "FilterSramSzkB = {}", self.filter_sram_kb);
        let _ = writeln!(s, "OfmapSramSzkB = {}", self.ofmap_sram_kb);
        let _ = writeln!(s, "WordBytes = {}", self.word_bytes);
        let _ = writeln!(s, "IfmapOffset = {}", self.ifmap_base);
        let _ = writeln!(s, "FilterOffset = {}", self.filter_base);
        let _ = writeln!(s, "OfmapOffset = {}", self.ofmap_base);
        let _ = writeln!(s, "ClockMHz = {}", self.clock_mhz);
        let _ = writeln!(s, "NumCores = {}", mc.num_cores);
        let _ = writeln!(s, "Partition = {}", mc.scheme);
        let _ = writeln!(s, "Pr = {}", mc.pr);
        let _ = writeln!(s, "Pc = {}", mc.pc);
        let _ = writeln!(s, "HopLatency = {}", mc.hop_latency);
        if !mc.core_profiles.is_empty() {
            let profiles: Vec<String> = mc
                .core_profiles
                .iter()
                .map(|p| format!("{}x{}:{}:{}:{}", p.rows, p.cols, p.simd_len, p.simd_latency_cycles, p.nop_hops))
                .collect();
            let _ = writeln!(s, "CoreProfiles = {}", profiles.join(";"));
        }
        if let Some(w) = &mc.row_weights {
            let _ = writeln!(s, "RowWeights = {}", join_floats(w));
        }
        if let Some(w) = &mc.col_weights {
            let _ = writeln!(s, "ColWeights = {}", join_floats(w));
        }

        let sp = &self.sparsity;
        let _ = writeln!(s, "\n[sparsity]");
        let _ = writeln!(s, "SparsitySupport = {}", sp.enabled);
        let _ = writeln!(s, "SparseRep = {}", sp.rep);
        let _ = writeln!(s, "OptimizedMapping = {}", sp.optimized_mapping);
        let _ = writeln!(s, "BlockSize = {}", sp.block_size);
        let _ = writeln!(s, "Seed = {}", sp.seed);

        let d = &self.dram;
        let _ = writeln!(s, "\n[memory]");
        let _ = writeln!(s, "Channels = {}", d.channels);
        let _ = writeln!(s, "BanksPerChannel = {}", d.banks_per_channel);
        let _ = writeln!(s, "RowSizeBytes = {}", d.row_size_bytes);
        let _ = writeln!(s, "ChannelCapacityBytes = {}", d.capacity_per_channel);
        let _ = writeln!(s, "FrequencyMHz = {}", d.freq_mhz);
        let _ = writeln!(s, "tRCD = {}", d.timings.t_rcd);
        let _ = writeln!(s, "tRP = {}", d.timings.t_rp);
        let _ = writeln!(s, "tCL = {}", d.timings.t_cl);
        let _ = writeln!(s, "tBurst = {}", d.timings.t_burst);
        let _ = writeln!(s, "AddressMap = {}", d.address_map);
        let _ = writeln!(s, "ReadQueueEntries = {}", self.queues.read_entries);
        let _ = writeln!(s, "WriteQueueEntries = {}", self.queues.write_entries);
        let _ = writeln!(s, "SramFilter = {}", self.memory.sram_filter);
        let _ = writeln!(s, "RowCoalescing = {}", self.memory.row_coalescing);
        let _ = writeln!(s, "WriteAckCycles = {}", self.memory.write_ack_cycles);
        let _ = writeln!(s, "TransactionBytes = {}", self.memory.transaction_bytes);

        if let Some(l) = &self.layout {
            let _ = writeln!(s, "\n[layout]");
            let _ = writeln!(s, "Banks = {}", l.num_banks);
            let _ = writeln!(s, "BandwidthPerBank = {}", l.bandwidth_per_bank);
            let _ = writeln!(s, "PortsPerBank = {}", l.ports_per_bank);
            for (key, ol) in [("IfmapLayout", &l.ifmap), ("FilterLayout", &l.filter), ("OfmapLayout", &l.ofmap)] {
                if let Some(ol) = ol {
                    let _ =
                        writeln!(s, "{key} = {}:{},{},{},{}", ol.inter_order, ol.intra_order, ol.c_step, ol.h_step, ol.w_step);
                }
            }
            for (key, p) in
                [("IfmapLayoutFile", &l.ifmap_file), ("FilterLayoutFile", &l.filter_file), ("OfmapLayoutFile", &l.ofmap_file)]
            {
                if let Some(p) = p {
                    let _ = writeln!(s, "{key} = {}", p.display());
                }
            }
        }

        let e = &self.energy;
        let _ = writeln!(s, "\n[energy]");
        if let Some(p) = &e.table_path {
            let _ = writeln!(s, "EnergyTable = {}", p.display());
        }
        let _ = writeln!(s, "RowSize = {}", e.row_size_elems);
        let _ = writeln!(s, "BankSize = {}", e.bank_size_rows);
        let _ = writeln!(s, "ClockGating = {}", e.clock_gating);
        s
    }
}

fn join_floats(w: &[f64]) -> String {
    w.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// Sectioned key/value store with line numbers kept for error reporting.
struct IniDoc {
    sections: Vec<(String, Vec<(String, Entry)>)>,
}

impl IniDoc {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Vec<(String, Entry)>)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| SimError::parse(line_no, "unterminated section header"))?
                    .trim()
                    .to_ascii_lowercase();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(SimError::parse(line_no, format!("unknown section [{name}]")));
                }
                if sections.iter().any(|(n, _)| *n == name) {
                    return Err(SimError::parse(line_no, format!("duplicate section [{name}]")));
                }
                sections.push((name, Vec::new()));
                continue;
            }
            let (key, value) = line
                .split_once(['=', ':'])
                .ok_or_else(|| SimError::parse(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (_, entries) = sections.last_mut().ok_or_else(|| SimError::parse(line_no, "key outside of any section"))?;
            let key = key.trim().to_string();
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(SimError::parse(line_no, format!("duplicate key `{key}`")));
            }
            entries.push((key, Entry { line: line_no, value: value.trim().to_string(), used: false }));
        }
        Ok(IniDoc { sections })
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == section)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        let (_, entries) = self.sections.iter_mut().find(|(n, _)| n == section)?;
        let (_, e) = entries.iter_mut().find(|(k, _)| k == key)?;
        e.used = true;
        Some((e.line, e.value.clone()))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => {
                v.parse::<T>().map(Some).map_err(|e| SimError::parse(line, format!("invalid value `{v}` for {key}: {e}")))
            }
        }
    }

    fn get_or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    fn get_bool_or(&mut self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.take(section, key) {
            None => Ok(default),
            Some((line, v)) => parse_bool(&v).ok_or_else(|| SimError::parse(line, format!("invalid boolean `{v}` for {key}"))),
        }
    }

    fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(section, key)?.ok_or_else(|| SimError::MissingKey(key.to_string()))
    }

    fn reject_unused(&self) -> Result<()> {
        for (section, entries) in &self.sections {
            if let Some((k, e)) = entries.iter().find(|(_, e)| !e.used) {
                return Err(SimError::parse(e.line, format!("unknown key `{k}` in [{section}]")));
            }
        }
        Ok(())
    }
}

const SECTIONS: [&str; 5] = ["architecture", "sparsity", "memory", "layout", "energy"];

fn parse_bool(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" | "enable" | "enabled" => Some(true),
        "false" | "no" | "off" | "0" | "disable" | "disabled" => Some(false),
        _ => None,
    }
}

fn parse_core_profiles(line: usize, v: &str) -> Result<Vec<CoreProfile>> {
    let bad = |what: &str| {
        SimError::parse(line, format!("invalid core profile `{what}` (expected RxC[:simd_len[:simd_latency[:nop_hops]]])"))
    };
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let mut fields = item.split(':');
            let shape = fields.next().ok_or_else(|| bad(item))?;
            let (r, c) = shape.split_once(['x', 'X']).ok_or_else(|| bad(item))?;
            let mut nums = [0u64; 3];
            for slot in nums.iter_mut() {
                if let Some(f) = fields.next() {
                    *slot = f.trim().parse().map_err(|_| bad(item))?;
                }
            }
            if fields.next().is_some() {
                return Err(bad(item));
            }
            Ok(CoreProfile {
                rows: r.trim().parse().map_err(|_| bad(item))?,
                cols: c.trim().parse().map_err(|_| bad(item))?,
                simd_len: nums[0],
                simd_latency_cycles: nums[1],
                nop_hops: nums[2],
            })
        })
        .collect()
}

fn parse_floats(line: usize, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|x| {
            x.trim().parse::<f64>().map_err(|_| SimError::parse(line, format!("invalid number `{}` in weight list", x.trim())))
        })
        .collect()
}

/// Parse an inline operand layout: `inter[:intra],c_step,h_step,w_step`.
pub fn parse_operand_layout(v: &str) -> std::result::Result<OperandLayout, String> {
    let fields: Vec<&str> = v.split(',').map(str::trim).filter(|f| !f.is_empty()).collect();
    if fields.len() != 4 {
        return Err(format!("expected `dim_order,c1_step,h1_step,w1_step`, got `{v}`"));
    }
    let (inter, intra) = match fields[0].split_once(':') {
        Some((a, b)) => (a.to_ascii_lowercase(), b.to_ascii_lowercase()),
        None => (fields[0].to_ascii_lowercase(), "whc".to_string()),
    };
    for order in [&inter, &intra] {
        let mut chars: Vec<char> = order.chars().collect();
        chars.sort_unstable();
        if chars != ['c', 'h', 'w'] {
            return Err(format!("dimension order `{order}` must be a permutation of c, h, w"));
        }
    }
    let step = |s: &str| s.parse::<u64>().map_err(|_| format!("invalid step `{s}`"));
    Ok(OperandLayout {
        inter_order: inter,
        intra_order: intra,
        c_step: step(fields[1])?,
        h_step: step(fields[2])?,
        w_step: step(fields[3])?,
    })
}

/// Parse a configuration document into a validated [`SimConfig`].
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut doc = IniDoc::parse(text)?;
    const ARCH: &str = "architecture";

    let rows: u64 = doc.require(ARCH, "ArrayHeight")?;
    let cols: u64 = doc.require(ARCH, "ArrayWidth")?;
    let dataflow: Dataflow = doc.require(ARCH, "Dataflow")?;
    let mut cfg = SimConfig::new(rows, cols, dataflow);

    cfg.ifmap_sram_kb = doc.get_or(ARCH, "IfmapSramSzkB", cfg.ifmap_sram_kb)?;
    cfg.filter_sram_kb = doc.get_or(ARCH, "FilterSramSzkB", cfg.filter_sram_kb)?;
    cfg.ofmap_sram_kb = doc.get_or(ARCH, "OfmapSramSzkB", cfg.ofmap_sram_kb)?;
    cfg.word_bytes = doc.get_or(ARCH, "WordBytes", cfg.word_bytes)?;
    cfg.ifmap_base = doc.get_or(ARCH, "IfmapOffset", cfg.ifmap_base)?;
    cfg.filter_base = doc.get_or(ARCH, "FilterOffset", cfg.filter_base)?;
    cfg.ofmap_base = doc.get_or(ARCH, "OfmapOffset", cfg.ofmap_base)?;
    cfg.clock_mhz = doc.get_or(ARCH, "ClockMHz", cfg.clock_mhz)?;

    let mc = &mut cfg.multicore;
    mc.num_cores = doc.get_or(ARCH, "NumCores", mc.num_cores)?;
    mc.scheme = doc.get_or(ARCH, "Partition", mc.scheme)?;
    mc.pr = doc.get_or(ARCH, "Pr", if mc.num_cores == 1 { 1 } else { 0 })?;
    mc.pc = doc.get_or(ARCH, "Pc", if mc.num_cores == 1 { 1 } else { 0 })?;
    if mc.pr == 0 && mc.pc == 0 {
        // grid not given for a multi-core run: split along rows only
        mc.pr = mc.num_cores;
        mc.pc = 1;
    }
    mc.hop_latency = doc.get_or(ARCH, "HopLatency", mc.hop_latency)?;
    if let Some((line, v)) = doc.take(ARCH, "CoreProfiles") {
        mc.core_profiles = parse_core_profiles(line, &v)?;
    }
    if let Some((line, v)) = doc.take(ARCH, "RowWeights") {
        mc.row_weights = Some(parse_floats(line, &v)?);
    }
    if let Some((line, v)) = doc.take(ARCH, "ColWeights") {
        mc.col_weights = Some(parse_floats(line, &v)?);
    }

    const SP: &str = "sparsity";
    let sp = &mut cfg.sparsity;
    sp.enabled = doc.get_bool_or(SP, "SparsitySupport", sp.enabled)?;
    sp.rep = doc.get_or(SP, "SparseRep", sp.rep)?;
    sp.optimized_mapping = doc.get_bool_or(SP, "OptimizedMapping", sp.optimized_mapping)?;
    sp.block_size = doc.get_or(SP, "BlockSize", sp.block_size)?;
    sp.seed = doc.get_or(SP, "Seed", sp.seed)?;

    const MEM: &str = "memory";
    let d = &mut cfg.dram;
    d.channels = doc.get_or(MEM, "Channels", d.channels)?;
    d.banks_per_channel = doc.get_or(MEM, "BanksPerChannel", d.banks_per_channel)?;
    d.row_size_bytes = doc.get_or(MEM, "RowSizeBytes", d.row_size_bytes)?;
    d.capacity_per_channel = doc.get_or(MEM, "ChannelCapacityBytes", d.capacity_per_channel)?;
    d.freq_mhz = doc.get_or(MEM, "FrequencyMHz", d.freq_mhz)?;
    d.timings.t_rcd = doc.get_or(MEM, "tRCD", d.timings.t_rcd)?;
    d.timings.t_rp = doc.get_or(MEM, "tRP", d.timings.t_rp)?;
    d.timings.t_cl = doc.get_or(MEM, "tCL", d.timings.t_cl)?;
    d.timings.t_burst = doc.get_or(MEM, "tBurst", d.timings.t_burst)?;
    d.address_map = doc.get_or(MEM, "AddressMap", d.address_map)?;
    cfg.queues.read_entries = doc.get_or(MEM, "ReadQueueEntries", cfg.queues.read_entries)?;
    cfg.queues.write_entries = doc.get_or(MEM, "WriteQueueEntries", cfg.queues.write_entries)?;
    cfg.memory.sram_filter = doc.get_bool_or(MEM, "SramFilter", cfg.memory.sram_filter)?;
    cfg.memory.row_coalescing = doc.get_bool_or(MEM, "RowCoalescing", cfg.memory.row_coalescing)?;
    cfg.memory.write_ack_cycles = doc.get_or(MEM, "WriteAckCycles", cfg.memory.write_ack_cycles)?;
    cfg.memory.transaction_bytes = doc.get_or(MEM, "TransactionBytes", cfg.memory.transaction_bytes)?;

    const LAY: &str = "layout";
    if doc.has_section(LAY) {
        let mut l = LayoutConfig {
            num_banks: doc.get_or(LAY, "Banks", 1)?,
            bandwidth_per_bank: doc.get_or(LAY, "BandwidthPerBank", 0)?,
            ports_per_bank: doc.get_or(LAY, "PortsPerBank", 1)?,
            ifmap: None,
            filter: None,
            ofmap: None,
            ifmap_file: None,
            filter_file: None,
            ofmap_file: None,
        };
        if l.bandwidth_per_bank == 0 {
            // default total line width of one array edge
            let total: u64 = doc.get_or(LAY, "TotalBandwidth", cfg.array_cols)?;
            l.bandwidth_per_bank = total.div_ceil(l.num_banks.max(1));
        }
        for (key, slot) in [("IfmapLayout", &mut l.ifmap), ("FilterLayout", &mut l.filter), ("OfmapLayout", &mut l.ofmap)] {
            if let Some((line, v)) = doc.take(LAY, key) {
                *slot = Some(parse_operand_layout(&v).map_err(|e| SimError::parse(line, e))?);
            }
        }
        l.ifmap_file = doc.take(LAY, "IfmapLayoutFile").map(|(_, v)| PathBuf::from(v));
        l.filter_file = doc.take(LAY, "FilterLayoutFile").map(|(_, v)| PathBuf::from(v));
        l.ofmap_file = doc.take(LAY, "OfmapLayoutFile").map(|(_, v)| PathBuf::from(v));
        cfg.layout = Some(l);
    }

    const EN: &str = "energy";
    cfg.energy.table_path = doc.take(EN, "EnergyTable").map(|(_, v)| PathBuf::from(v));
    cfg.energy.row_size_elems = doc.get_or(EN, "RowSize", cfg.energy.row_size_elems)?;
    cfg.energy.bank_size_rows = doc.get_or(EN, "BankSize", cfg.energy.bank_size_rows)?;
    cfg.energy.clock_gating = doc.get_bool_or(EN, "ClockGating", cfg.energy.clock_gating)?;

    doc.reject_unused()?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[architecture]\nArrayHeight = 8\nArrayWidth = 8\nDataflow = ws\n";

    #[test]
    fn minimal_config_maps_fields() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.array_rows, 8);
        assert_eq!(cfg.array_cols, 8);
        assert_eq!(cfg.dataflow, Dataflow::Ws);
        assert_eq!(cfg.queues.read_entries, 128);
        assert_eq!(cfg.multicore.num_cores, 1);
        assert!(!cfg.sparsity.enabled);
        assert!(cfg.layout.is_none());
    }

    #[test]
    fn sparsity_section() {
        let text = format!(
            "{MINIMAL}\n[sparsity]\nSparsitySupport = true\nSparseRep = ellpack_block\nOptimizedMapping = true\nBlockSize = 4\n"
        );
        let cfg = parse_config(&text).unwrap();
        assert!(cfg.sparsity.enabled);
        assert!(cfg.sparsity.optimized_mapping);
        assert_eq!(cfg.sparsity.rep, SparseRep::EllpackBlock);
        assert_eq!(cfg.sparsity.block_size, 4);
    }

    #[test]
    fn grid_must_match_core_count() {
        let text = format!("{MINIMAL}NumCores = 8\nPr = 3\nPc = 3\n");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, SimError::Validation(_)), "{err}");
        assert!(err.to_string().contains("9"));
    }

    #[test]
    fn missing_key_is_named() {
        let err = parse_config("[architecture]\nArrayHeight = 8\nDataflow = os\n").unwrap_err();
        assert!(matches!(err, SimError::MissingKey(ref k) if k == "ArrayWidth"), "{err}");
    }

    #[test]
    fn non_numeric_value_reports_line() {
        let err = parse_config("[architecture]\n# comment\nArrayHeight = eight\nArrayWidth = 8\nDataflow = os\n").unwrap_err();
        match err {
            SimError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn block_size_must_be_power_of_two() {
        let text = format!("{MINIMAL}\n[sparsity]\nSparsitySupport = true\nBlockSize = 6\n");
        assert!(matches!(parse_config(&text), Err(SimError::Validation(_))));
    }

    #[test]
    fn sparsity_rejects_non_ws() {
        let text = "[architecture]\nArrayHeight = 8\nArrayWidth = 8\nDataflow = os\n[sparsity]\nSparsitySupport = true\n";
        assert!(matches!(parse_config(text), Err(SimError::Config(_))));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{MINIMAL}ArrayDepth = 3\n");
        assert!(matches!(parse_config(&text), Err(SimError::Parse { line: 5, .. })));
    }

    #[test]
    fn core_profiles_parse() {
        let text = format!("{MINIMAL}NumCores = 2\nPr = 1\nPc = 2\nCoreProfiles = 8x8:16:4:0; 16x16:16:4:3\n");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.multicore.core_profiles.len(), 2);
        assert_eq!(
            cfg.multicore.core_profiles[1],
            CoreProfile { rows: 16, cols: 16, simd_len: 16, simd_latency_cycles: 4, nop_hops: 3 }
        );
    }

    #[test]
    fn layout_section_defaults() {
        let text = format!("{MINIMAL}\n[layout]\nBanks = 4\nTotalBandwidth = 64\nFilterLayout = chw:whc,1,2,32\n");
        let cfg = parse_config(&text).unwrap();
        let l = cfg.layout.unwrap();
        assert_eq!(l.bandwidth_per_bank, 16);
        assert_eq!(l.filter.unwrap().w_step, 32);
    }

    #[test]
    fn serialized_config_reparses_equal() {
        let text = format!(
            "{MINIMAL}NumCores = 4\nPr = 2\nPc = 2\nRowWeights = 0.75,0.25\nCoreProfiles = 8x8;8x8;8x8;16x16:8:2:1\n\
             [sparsity]\nSparsitySupport = true\nBlockSize = 8\n[memory]\nChannels = 2\n\
             [layout]\nBanks = 8\nBandwidthPerBank = 4\nIfmapLayout = hwc,1,4,8\n[energy]\nRowSize = 32\n"
        );
        let cfg = parse_config(&text).unwrap();
        let again = parse_config(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg, again);
    }
}
