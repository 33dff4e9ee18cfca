//! Memory workflow: demand trace -> DRAM request stream -> per-request
//! latency -> stall-inclusive replay of the compute schedule.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet, VecDeque};
use std::fmt::Write as _;

use crate::config::{AddressMap, DramConfig, QueueConfig, SimConfig};
use crate::error::{Result, SimError};
use crate::systolic::{CycleDemand, DemandTrace, MaterializedTrace, Operand, BUBBLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReqKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryRequest {
    /// Compute cycle (of the ideal schedule) that first needs the data.
    pub request_cycle: u64,
    /// Word address; line-aligned when the stream is built at transaction granularity.
    pub address: u64,
    pub kind: ReqKind,
    pub operand: Operand,
}

/// How demand addresses become DRAM requests.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestStreamOptions {
    /// Words per DRAM transaction.
    pub line_words: u64,
    /// Per-operand on-chip capacity in lines; `None` sends every touch to DRAM.
    pub buffer_lines: Option<[u64; 3]>,
    /// Merge same-cycle, same-kind requests to one DRAM row (row size in words).
    pub coalesce_row_words: Option<u64>,
}

impl RequestStreamOptions {
    /// Word-granular interleave with per-cycle dedup only.
    pub fn raw() -> Self {
        RequestStreamOptions { line_words: 1, buffer_lines: None, coalesce_row_words: None }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        let tb = cfg.memory.transaction_bytes;
        let lines = |kb: u64| (kb * 1024 / tb).max(1);
        RequestStreamOptions {
            line_words: tb / cfg.word_bytes,
            buffer_lines: cfg
                .memory
                .sram_filter
                .then(|| [lines(cfg.ifmap_sram_kb), lines(cfg.filter_sram_kb), lines(cfg.ofmap_sram_kb)]),
            coalesce_row_words: cfg.memory.row_coalescing.then(|| cfg.dram.row_size_bytes / cfg.word_bytes),
        }
    }
}

/// First-in first-out residency of fixed-size lines.
#[derive(Debug)]
struct FifoBuffer {
    capacity: usize,
    resident: HashSet<u64>,
    order: VecDeque<u64>,
}

impl FifoBuffer {
    fn new(capacity: u64) -> Self {
        FifoBuffer { capacity: capacity as usize, resident: HashSet::new(), order: VecDeque::new() }
    }

    /// True when the line was already resident.
    fn touch(&mut self, line: u64) -> bool {
        if self.resident.contains(&line) {
            return true;
        }
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.resident.remove(&old);
            }
        }
        self.order.push_back(line);
        self.resident.insert(line);
        false
    }
}

/// Incremental builder fed one demand cycle at a time.
pub struct RequestStream {
    opts: RequestStreamOptions,
    buffers: Option<[FifoBuffer; 3]>,
    scratch: Vec<u64>,
    pub requests: Vec<MemoryRequest>,
}

impl RequestStream {
    pub fn new(opts: RequestStreamOptions) -> Self {
        let buffers = opts.buffer_lines.map(|caps| caps.map(FifoBuffer::new));
        RequestStream { opts, buffers, scratch: Vec::new(), requests: Vec::new() }
    }

    /// Append this cycle's requests in operand order ifmap, filter, ofmap.
    pub fn push_cycle(&mut self, cycle: u64, demand: &CycleDemand<'_>) {
        let lw = self.opts.line_words;
        for op in Operand::ALL {
            self.scratch.clear();
            self.scratch.extend(demand.get(op).iter().filter(|&&a| a != BUBBLE).map(|a| a / lw * lw));
            // first-occurrence order, duplicates removed
            let mut seen = HashSet::with_capacity(self.scratch.len());
            self.scratch.retain(|a| seen.insert(*a));
            let kind = if op == Operand::Ofmap { ReqKind::Write } else { ReqKind::Read };
            let mut rows_seen = HashSet::new();
            for &line in &self.scratch {
                if let Some(bufs) = self.buffers.as_mut() {
                    if bufs[op.index()].touch(line) {
                        continue;
                    }
                }
                if let Some(row_words) = self.opts.coalesce_row_words {
                    if !rows_seen.insert(line / row_words) {
                        continue;
                    }
                }
                self.requests.push(MemoryRequest { request_cycle: cycle, address: line, kind, operand: op });
            }
        }
    }
}

pub fn build_requests(trace: &DemandTrace, opts: &RequestStreamOptions) -> Vec<MemoryRequest> {
    let mut stream = RequestStream::new(opts.clone());
    trace.for_each_cycle(|cycle, d| stream.push_cycle(cycle, d));
    stream.requests
}

/// Merge operand traces into one request list ordered by (cycle, ifmap < filter < ofmap),
/// collapsing duplicate addresses within a cycle.
pub fn interleave_traces(trace: &MaterializedTrace) -> Vec<MemoryRequest> {
    let mut stream = RequestStream::new(RequestStreamOptions::raw());
    for cycle in 0..trace.cycles() {
        let d = CycleDemand { ifmap: &trace.ifmap[cycle], filter: &trace.filter[cycle], ofmap: &trace.ofmap[cycle] };
        stream.push_cycle(cycle as u64, &d);
    }
    stream.requests
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramLocation {
    pub channel: u64,
    pub bank: u64,
    pub row: u64,
}

pub fn decode_address(cfg: &DramConfig, byte_addr: u64) -> DramLocation {
    match cfg.address_map {
        AddressMap::RoBaChCo => {
            let rest = byte_addr / cfg.row_size_bytes;
            let channel = rest % cfg.channels;
            let rest = rest / cfg.channels;
            DramLocation { channel, bank: rest % cfg.banks_per_channel, row: rest / cfg.banks_per_channel }
        }
        AddressMap::ChRoBaCo => {
            let channel = byte_addr / cfg.capacity_per_channel;
            let rest = byte_addr % cfg.capacity_per_channel / cfg.row_size_bytes;
            DramLocation { channel, bank: rest % cfg.banks_per_channel, row: rest / cfg.banks_per_channel }
        }
    }
}

/// Request-level view of the DRAM device and clocking.
#[derive(Debug, Clone, PartialEq)]
pub struct DramSetup {
    pub dram: DramConfig,
    pub word_bytes: u64,
    pub transaction_bytes: u64,
    pub accel_mhz: u64,
}

impl DramSetup {
    pub fn from_config(cfg: &SimConfig) -> Self {
        DramSetup {
            dram: cfg.dram.clone(),
            word_bytes: cfg.word_bytes,
            transaction_bytes: cfg.memory.transaction_bytes,
            accel_mhz: cfg.clock_mhz,
        }
    }

    fn to_dram_cycles(&self, accel: u64) -> u64 {
        (accel as u128 * self.dram.freq_mhz as u128).div_ceil(self.accel_mhz as u128) as u64
    }

    fn to_accel_cycles(&self, dram: u64) -> u64 {
        (dram as u128 * self.accel_mhz as u128).div_ceil(self.dram.freq_mhz as u128) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChannelStats {
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DramStats {
    pub total_reads: u64,
    pub total_writes: u64,
    pub row_hits: u64,
    /// Accesses that had to activate a row (cold banks included).
    pub row_misses: u64,
    /// Misses that first had to close a different open row.
    pub row_conflicts: u64,
    /// Accesses that waited for a busy bank.
    pub bank_conflicts: u64,
    /// Mean round-trip latency in accelerator cycles.
    pub avg_latency: f64,
    pub throughput_mbps: f64,
    pub per_channel: Vec<ChannelStats>,
}

#[derive(Debug, Clone, Copy)]
struct BankState {
    open_row: Option<u64>,
    free_at: u64,
}

/// Burst slots already granted on one channel's data bus.
#[derive(Debug, Clone, Default)]
struct DataBus {
    bursts: BTreeSet<u64>,
}

impl DataBus {
    /// Earliest burst start at or after `ready` that overlaps no granted
    /// burst. Slots ending before `horizon` can no longer be hit and are dropped.
    fn reserve(&mut self, ready: u64, len: u64, horizon: u64) -> u64 {
        while let Some(&first) = self.bursts.first() {
            if first + len > horizon {
                break;
            }
            self.bursts.pop_first();
        }
        let mut at = ready;
        if let Some(&prev) = self.bursts.range(..=at).next_back() {
            at = at.max(prev + len);
        }
        for &next in self.bursts.range(at..) {
            if next >= at + len {
                break;
            }
            at = next + len;
        }
        self.bursts.insert(at);
        at
    }
}

/// Open-page timing model: one transaction per bank at a time, and one
/// burst at a time on each channel's data bus. Returns per-request
/// round-trip latency in accelerator cycles.
pub fn dram_simulate(reqs: &[MemoryRequest], setup: &DramSetup) -> Result<(Vec<u64>, DramStats)> {
    let d = &setup.dram;
    let t = d.timings;
    let capacity = d.total_capacity();
    let nbanks = (d.channels * d.banks_per_channel) as usize;
    let mut banks = vec![BankState { open_row: None, free_at: 0 }; nbanks];
    let mut bus = vec![DataBus::default(); d.channels as usize];
    let mut stats = DramStats { per_channel: vec![ChannelStats::default(); d.channels as usize], ..Default::default() };
    let mut latencies = Vec::with_capacity(reqs.len());
    let (mut first_arrival, mut last_done) = (u64::MAX, 0u64);
    let mut latency_sum = 0u128;

    for (i, r) in reqs.iter().enumerate() {
        if i > 0 && r.request_cycle < reqs[i - 1].request_cycle {
            return Err(SimError::validation("memory requests must be sorted by request cycle"));
        }
        let byte_addr = r.address.saturating_mul(setup.word_bytes);
        if byte_addr >= capacity || capacity - byte_addr < setup.transaction_bytes {
            return Err(SimError::AddressOutOfRange { address: byte_addr, capacity });
        }
        let loc = decode_address(d, byte_addr);
        let bank = &mut banks[(loc.channel * d.banks_per_channel + loc.bank) as usize];
        let arrival = setup.to_dram_cycles(r.request_cycle);
        let start = arrival.max(bank.free_at);
        if start > arrival {
            stats.bank_conflicts += 1;
        }
        let ch = &mut stats.per_channel[loc.channel as usize];
        let service = match bank.open_row {
            Some(row) if row == loc.row => {
                stats.row_hits += 1;
                ch.row_hits += 1;
                t.t_cl + t.t_burst
            }
            Some(_) => {
                stats.row_misses += 1;
                stats.row_conflicts += 1;
                ch.row_misses += 1;
                t.t_rp + t.t_rcd + t.t_cl + t.t_burst
            }
            None => {
                stats.row_misses += 1;
                ch.row_misses += 1;
                t.t_rcd + t.t_cl + t.t_burst
            }
        };
        let done = bus[loc.channel as usize].reserve(start + service - t.t_burst, t.t_burst, arrival) + t.t_burst;
        bank.open_row = Some(loc.row);
        bank.free_at = done;
        match r.kind {
            ReqKind::Read => {
                stats.total_reads += 1;
                ch.reads += 1;
            }
            ReqKind::Write => {
                stats.total_writes += 1;
                ch.writes += 1;
            }
        }
        ch.bytes += setup.transaction_bytes;
        first_arrival = first_arrival.min(arrival);
        last_done = last_done.max(done);
        let lat = setup.to_accel_cycles(done - arrival);
        latency_sum += lat as u128;
        latencies.push(lat);
    }

    if !reqs.is_empty() {
        stats.avg_latency = latency_sum as f64 / reqs.len() as f64;
        let elapsed = last_done - first_arrival;
        let bytes = reqs.len() as u64 * setup.transaction_bytes;
        stats.throughput_mbps = bytes as f64 * d.freq_mhz as f64 / elapsed as f64;
    }
    Ok((latencies, stats))
}

pub const TRACE_EXPORT_HEADER: &str = "request_cycle,address,kind";

/// Hand-off file for an external memory simulator.
pub fn export_trace_csv(reqs: &[MemoryRequest]) -> String {
    let mut s = String::with_capacity(reqs.len() * 16 + 32);
    s.push_str(TRACE_EXPORT_HEADER);
    s.push('\n');
    for r in reqs {
        let kind = match r.kind {
            ReqKind::Read => 'R',
            ReqKind::Write => 'W',
        };
        let _ = writeln!(s, "{},{},{}", r.request_cycle, r.address, kind);
    }
    s
}

/// Per-request latencies (`request_index,latency_cycles`) produced externally.
pub fn import_latencies(text: &str, expected: usize) -> Result<Vec<u64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<(u64, u64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<u64> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| SimError::parse(line, "expected `request_index,latency_cycles` integers"))
        };
        rows.push((field(0)?, field(1)?));
    }
    if rows.len() != expected {
        return Err(SimError::LatencyCountMismatch { expected, found: rows.len() });
    }
    let mut out = vec![None; expected];
    for (idx, lat) in rows {
        let slot = out
            .get_mut(idx as usize)
            .ok_or_else(|| SimError::validation(format!("request index {idx} out of range (0..{expected})")))?;
        if slot.replace(lat).is_some() {
            return Err(SimError::validation(format!("request index {idx} listed twice")));
        }
    }
    Ok(out.into_iter().map(|v| v.expect("every index filled")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallReport {
    pub compute_cycles: u64,
    pub stall_cycles: u64,
    pub total_cycles: u64,
    pub stall_fraction: f64,
}

impl StallReport {
    fn new(compute_cycles: u64, total_cycles: u64) -> Self {
        let stall_cycles = total_cycles - compute_cycles;
        StallReport {
            compute_cycles,
            stall_cycles,
            total_cycles,
            stall_fraction: if total_cycles == 0 { 0.0 } else { stall_cycles as f64 / total_cycles as f64 },
        }
    }
}

/// Replay the compute schedule against request completion times.
///
/// Reads issue in request order whenever the read queue has a free entry (a
/// prefetcher running ahead of compute) and leave the queue when their data
/// returns. Compute cycle `i` runs once every read requested at or before `i`
/// has returned and all of its writes were accepted into the write queue,
/// where each write stays for `write_ack_cycles`. Idle time is a stall.
pub fn replay_with_stalls(
    reqs: &[MemoryRequest],
    latencies: &[u64],
    compute_cycles: u64,
    queues: QueueConfig,
    write_ack_cycles: u64,
) -> Result<StallReport> {
    if latencies.len() != reqs.len() {
        return Err(SimError::LatencyCountMismatch { expected: reqs.len(), found: latencies.len() });
    }
    if queues.read_entries == 0 || queues.write_entries == 0 {
        return Err(SimError::validation("request queues need at least one entry"));
    }
    if let Some(r) = reqs.iter().find(|r| r.request_cycle >= compute_cycles) {
        return Err(SimError::validation(format!(
            "request at cycle {} lies beyond the {compute_cycles}-cycle schedule",
            r.request_cycle
        )));
    }
    let reads: Vec<(u64, u64)> =
        reqs.iter().zip(latencies).filter(|(r, _)| r.kind == ReqKind::Read).map(|(r, &l)| (r.request_cycle, l)).collect();
    let mut writes: Vec<(u64, u64)> = Vec::new();
    for r in reqs.iter().filter(|r| r.kind == ReqKind::Write) {
        match writes.last_mut() {
            Some((c, n)) if *c == r.request_cycle => *n += 1,
            _ => writes.push((r.request_cycle, 1)),
        }
    }
    writes.sort_unstable();

    let read_cap = queues.read_entries as usize;
    let write_cap = queues.write_entries as usize;
    let mut read_q: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    let mut write_q: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    // running max completion time of issued reads, by issue order
    let mut done_prefix: Vec<u64> = Vec::with_capacity(reads.len());
    let (mut issued, mut need, mut wp) = (0usize, 0usize, 0usize);
    let mut pending_writes = 0u64;
    let mut writes_loaded_for = u64::MAX;
    let (mut t, mut row) = (0u64, 0u64);

    while row < compute_cycles {
        while read_q.peek().is_some_and(|Reverse(c)| *c <= t) {
            read_q.pop();
        }
        while write_q.peek().is_some_and(|Reverse(c)| *c <= t) {
            write_q.pop();
        }
        while issued < reads.len() && read_q.len() < read_cap {
            let done = t + reads[issued].1;
            if done > t {
                read_q.push(Reverse(done));
            }
            let prev = done_prefix.last().copied().unwrap_or(0);
            done_prefix.push(prev.max(done));
            issued += 1;
        }
        while need < reads.len() && reads[need].0 <= row {
            need += 1;
        }
        if writes_loaded_for != row {
            writes_loaded_for = row;
            while wp < writes.len() && writes[wp].0 < row {
                wp += 1;
            }
            pending_writes = if wp < writes.len() && writes[wp].0 == row { writes[wp].1 } else { 0 };
        }
        if write_ack_cycles == 0 {
            pending_writes = 0;
        }
        while pending_writes > 0 && write_q.len() < write_cap {
            write_q.push(Reverse(t + write_ack_cycles));
            pending_writes -= 1;
        }

        let reads_ready = issued >= need && (need == 0 || done_prefix[need - 1] <= t);
        if reads_ready && pending_writes == 0 {
            row += 1;
            t += 1;
            continue;
        }
        let mut next = u64::MAX;
        if issued >= need && need > 0 && done_prefix[need - 1] > t {
            next = next.min(done_prefix[need - 1]);
        }
        if let Some(Reverse(c)) = read_q.peek() {
            next = next.min(*c);
        }
        if let Some(Reverse(c)) = write_q.peek() {
            next = next.min(*c);
        }
        debug_assert!(next > t && next != u64::MAX, "replay cannot make progress");
        t = next;
    }
    Ok(StallReport::new(compute_cycles, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSweepRow {
    pub channels: u64,
    pub throughput_mbps: f64,
}

/// DRAM throughput of one request stream under several channel counts.
pub fn channel_sweep(reqs: &[MemoryRequest], setup: &DramSetup, channels: &[u64]) -> Result<Vec<ChannelSweepRow>> {
    channels
        .iter()
        .map(|&ch| {
            let mut s = setup.clone();
            s.dram.channels = ch;
            let (_, stats) = dram_simulate(reqs, &s)?;
            Ok(ChannelSweepRow { channels: ch, throughput_mbps: stats.throughput_mbps })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStageResult {
    pub requests: usize,
    pub dram: DramStats,
    pub stall: StallReport,
}

/// Full three-step workflow for one layer. `external` replaces the internal
/// DRAM model's latencies when given.
pub fn run_memory_stage(trace: &DemandTrace, cfg: &SimConfig, external: Option<&[u64]>) -> Result<MemoryStageResult> {
    let reqs = build_requests(trace, &RequestStreamOptions::from_config(cfg));
    let (internal, dram) = dram_simulate(&reqs, &DramSetup::from_config(cfg))?;
    let latencies = match external {
        Some(l) if l.len() != reqs.len() => return Err(SimError::LatencyCountMismatch { expected: reqs.len(), found: l.len() }),
        Some(l) => l.to_vec(),
        None => internal,
    };
    let stall = replay_with_stalls(&reqs, &latencies, trace.cycles(), cfg.queues, cfg.memory.write_ack_cycles)?;
    Ok(MemoryStageResult { requests: reqs.len(), dram, stall })
}

pub const STALL_REPORT_HEADER: &str = "Layer,ComputeCycles,StallCycles,TotalCycles,StallFraction";
