//! Action counting and energy evaluation against an energy reference table.

use std::collections::{HashMap, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Result, SimError};
use crate::systolic::{ComputeReport, DemandTrace, Operand, BUBBLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Mac,
    IfmapSram,
    FilterSram,
    OfmapSram,
    IfmapSpad,
    WeightSpad,
    PsumSpad,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Mac,
        Component::IfmapSram,
        Component::FilterSram,
        Component::OfmapSram,
        Component::IfmapSpad,
        Component::WeightSpad,
        Component::PsumSpad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Mac => "mac",
            Component::IfmapSram => "ifmap_sram",
            Component::FilterSram => "filter_sram",
            Component::OfmapSram => "ofmap_sram",
            Component::IfmapSpad => "ifmap_spad",
            Component::WeightSpad => "weight_spad",
            Component::PsumSpad => "psum_spad",
        }
    }

    pub fn actions(self) -> &'static [Action] {
        match self {
            Component::Mac => &[Action::Random, Action::Constant, Action::Gated],
            Component::IfmapSram | Component::FilterSram | Component::OfmapSram => {
                &[Action::Idle, Action::ReadRandom, Action::ReadRepeat, Action::WriteRandom, Action::WriteRepeat]
            }
            Component::IfmapSpad | Component::WeightSpad | Component::PsumSpad => &[Action::Read, Action::Write],
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Component::ALL.into_iter().find(|c| c.name() == s.trim()).ok_or_else(|| format!("unknown component `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Random,
    Constant,
    Gated,
    Idle,
    ReadRandom,
    ReadRepeat,
    WriteRandom,
    WriteRepeat,
    Read,
    Write,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Random => "random",
            Action::Constant => "constant",
            Action::Gated => "gated",
            Action::Idle => "idle",
            Action::ReadRandom => "read_random",
            Action::ReadRepeat => "read_repeat",
            Action::WriteRandom => "write_random",
            Action::WriteRepeat => "write_repeat",
            Action::Read => "read",
            Action::Write => "write",
        }
    }

    /// (address_delta, data_delta) arguments for the exported action file.
    pub fn deltas(self) -> (u8, u8) {
        match self {
            Action::Idle | Action::Constant | Action::Gated => (0, 0),
            Action::ReadRepeat | Action::WriteRepeat => (0, 1),
            Action::Random | Action::ReadRandom | Action::WriteRandom | Action::Read | Action::Write => (1, 1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacCounts {
    pub random: u64,
    pub constant: u64,
    pub gated: u64,
}

pub fn count_mac_actions(pes: u64, cycles: u64, utilization: f64, gating: bool) -> MacCounts {
    let slots = pes * cycles;
    let random = ((slots as f64) * utilization.clamp(0.0, 1.0)).round() as u64;
    let rest = slots - random.min(slots);
    if gating {
        MacCounts { random, constant: 0, gated: rest }
    } else {
        MacCounts { random, constant: rest, gated: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SramCounts {
    pub idle: u64,
    pub read_random: u64,
    pub read_repeat: u64,
    pub write_random: u64,
    pub write_repeat: u64,
}

impl SramCounts {
    pub fn accesses(&self) -> u64 {
        self.read_random + self.read_repeat + self.write_random + self.write_repeat
    }
}

/// Most-recently-used open rows of one SRAM.
#[derive(Debug)]
pub struct RepeatTracker {
    row_size: u64,
    depth: usize,
    open: VecDeque<u64>,
}

impl RepeatTracker {
    pub fn new(row_size_elems: u64, bank_size_rows: u64) -> Result<Self> {
        if row_size_elems == 0 || bank_size_rows == 0 {
            return Err(SimError::validation("row size and bank size must be >= 1"));
        }
        Ok(RepeatTracker { row_size: row_size_elems, depth: bank_size_rows as usize, open: VecDeque::new() })
    }

    /// True when the access hits a currently open row.
    pub fn access(&mut self, address: u64) -> bool {
        let row = address / self.row_size;
        if let Some(pos) = self.open.iter().position(|&r| r == row) {
            self.open.remove(pos);
            self.open.push_front(row);
            true
        } else {
            if self.open.len() == self.depth {
                self.open.pop_back();
            }
            self.open.push_front(row);
            false
        }
    }
}

/// Classify an ordered access stream. `writes` selects write actions.
pub fn count_sram_actions<I: IntoIterator<Item = u64>>(
    accesses: I,
    writes: bool,
    row_size_elems: u64,
    bank_size_rows: u64,
    cycles: u64,
    arraysize: u64,
) -> Result<SramCounts> {
    let mut tracker = RepeatTracker::new(row_size_elems, bank_size_rows)?;
    let (mut total, mut repeat) = (0u64, 0u64);
    for a in accesses {
        total += 1;
        repeat += u64::from(tracker.access(a));
    }
    finish_sram(total, repeat, writes, cycles, arraysize)
}

fn finish_sram(total: u64, repeat: u64, writes: bool, cycles: u64, arraysize: u64) -> Result<SramCounts> {
    let slots = cycles * arraysize;
    if total > slots {
        return Err(SimError::validation(format!("{total} accesses exceed {cycles} cycles x {arraysize} ports")));
    }
    let random = total - repeat;
    let mut c = SramCounts { idle: slots - total, ..Default::default() };
    if writes {
        c.write_random = random;
        c.write_repeat = repeat;
    } else {
        c.read_random = random;
        c.read_repeat = repeat;
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpadCounts {
    pub read: u64,
    pub write: u64,
}

/// Per-PE scratchpads: (ifmap, weight, psum). Every SRAM read lands in a
/// scratchpad once; every MAC reads both input scratchpads and updates the psum.
pub fn count_spad_actions(ifmap_sram_reads: u64, filter_sram_reads: u64, macs: u64) -> (SpadCounts, SpadCounts, SpadCounts) {
    (
        SpadCounts { read: macs, write: ifmap_sram_reads },
        SpadCounts { read: macs, write: filter_sram_reads },
        SpadCounts { read: macs, write: macs },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionCounts {
    pub mac: MacCounts,
    /// Indexed by operand.
    pub sram: [SramCounts; 3],
    pub ifmap_spad: SpadCounts,
    pub weight_spad: SpadCounts,
    pub psum_spad: SpadCounts,
}

impl ActionCounts {
    pub fn get(&self, component: Component, action: Action) -> u64 {
        let sram = |c: &SramCounts| match action {
            Action::Idle => c.idle,
            Action::ReadRandom => c.read_random,
            Action::ReadRepeat => c.read_repeat,
            Action::WriteRandom => c.write_random,
            Action::WriteRepeat => c.write_repeat,
            _ => 0,
        };
        let spad = |c: &SpadCounts| match action {
            Action::Read => c.read,
            Action::Write => c.write,
            _ => 0,
        };
        match component {
            Component::Mac => match action {
                Action::Random => self.mac.random,
                Action::Constant => self.mac.constant,
                Action::Gated => self.mac.gated,
                _ => 0,
            },
            Component::IfmapSram => sram(&self.sram[0]),
            Component::FilterSram => sram(&self.sram[1]),
            Component::OfmapSram => sram(&self.sram[2]),
            Component::IfmapSpad => spad(&self.ifmap_spad),
            Component::WeightSpad => spad(&self.weight_spad),
            Component::PsumSpad => spad(&self.psum_spad),
        }
    }

    /// Every (component, action, count), in a fixed order.
    pub fn entries(&self) -> Vec<(Component, Action, u64)> {
        Component::ALL
            .iter()
            .flat_map(|&c| c.actions().iter().map(move |&a| (c, a)))
            .map(|(c, a)| (c, a, self.get(c, a)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepeatParams {
    pub row_size_elems: u64,
    pub bank_size_rows: u64,
    pub clock_gating: bool,
}

/// Count every action of one layer's run from its demand trace.
pub fn count_layer_actions(trace: &DemandTrace, report: &ComputeReport, params: RepeatParams) -> Result<ActionCounts> {
    let mut trackers = [
        RepeatTracker::new(params.row_size_elems, params.bank_size_rows)?,
        RepeatTracker::new(params.row_size_elems, params.bank_size_rows)?,
        RepeatTracker::new(params.row_size_elems, params.bank_size_rows)?,
    ];
    let mut totals = [0u64; 3];
    let mut repeats = [0u64; 3];
    trace.for_each_cycle(|_, d| {
        for op in Operand::ALL {
            let i = op.index();
            for &a in d.get(op) {
                if a != BUBBLE {
                    totals[i] += 1;
                    repeats[i] += u64::from(trackers[i].access(a));
                }
            }
        }
    });
    let mut sram = [SramCounts::default(); 3];
    for op in Operand::ALL {
        let i = op.index();
        sram[i] = finish_sram(totals[i], repeats[i], op == Operand::Ofmap, report.cycles, trace.width(op) as u64)?;
    }
    let (ifmap_spad, weight_spad, psum_spad) = count_spad_actions(totals[0], totals[1], report.macs);
    Ok(ActionCounts {
        mac: count_mac_actions(report.pes, report.cycles, report.utilization, params.clock_gating),
        sram,
        ifmap_spad,
        weight_spad,
        psum_spad,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTable {
    entries: HashMap<(Component, Action), f64>,
    leakage: HashMap<Component, f64>,
}

impl EnergyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, component: Component, action: Action, pj: f64) {
        self.entries.insert((component, action), pj);
    }

    pub fn set_leakage(&mut self, component: Component, pj_per_cycle: f64) {
        self.leakage.insert(component, pj_per_cycle);
    }

    pub fn entry(&self, component: Component, action: Action) -> Result<f64> {
        self.entries
            .get(&(component, action))
            .copied()
            .ok_or_else(|| SimError::MissingEnergyEntry { component: component.name().into(), action: action.name().into() })
    }

    pub fn leakage(&self, component: Component) -> f64 {
        self.leakage.get(&component).copied().unwrap_or(0.0)
    }

    /// Error naming the first action the counter can emit that has no entry.
    pub fn check_complete(&self) -> Result<()> {
        for c in Component::ALL {
            for &a in c.actions() {
                self.entry(c, a)?;
            }
        }
        Ok(())
    }

    /// Every dynamic entry and leakage multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        EnergyTable {
            entries: self.entries.iter().map(|(key, v)| (*key, v * k)).collect(),
            leakage: self.leakage.iter().map(|(key, v)| (*key, v * k)).collect(),
        }
    }
}

/// Parse `component,action,energy_pJ` rows. The action `leakage` gives the
/// component's per-cycle static energy.
pub fn parse_energy_table(text: &str) -> Result<EnergyTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut table = EnergyTable::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < 3 {
            return Err(SimError::parse(line, "expected `component,action,energy_pJ`"));
        }
        let component: Component = record[0].parse().map_err(|e| SimError::parse(line, e))?;
        let pj: f64 = record[2].parse().map_err(|_| SimError::parse(line, format!("energy `{}` is not a number", &record[2])))?;
        if !pj.is_finite() || pj < 0.0 {
            return Err(SimError::parse(line, "energy must be finite and >= 0"));
        }
        let action_name = &record[1];
        if action_name == "leakage" {
            table.set_leakage(component, pj);
            continue;
        }
        let action = component
            .actions()
            .iter()
            .copied()
            .find(|a| a.name() == action_name)
            .ok_or_else(|| SimError::parse(line, format!("component {component} has no action `{action_name}`")))?;
        table.set(component, action, pj);
    }
    table.check_complete()?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLine {
    pub component: Component,
    /// `None` marks the leakage line (count = cycles).
    pub action: Option<Action>,
    pub count: u64,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub lines: Vec<EnergyLine>,
    pub dynamic_pj: f64,
    pub leakage_pj: f64,
    pub total_pj: f64,
    pub cycles: u64,
    pub power_mw: f64,
    /// cycles x energy in mJ.
    pub edp: f64,
}

impl EnergyReport {
    pub fn component_pj(&self, c: Component) -> f64 {
        self.lines.iter().filter(|l| l.component == c).map(|l| l.energy_pj).sum()
    }
}

pub fn compute_energy(counts: &ActionCounts, table: &EnergyTable, cycles: u64, clock_mhz: u64) -> Result<EnergyReport> {
    let mut lines = Vec::new();
    let (mut dynamic, mut leakage) = (0.0, 0.0);
    for c in Component::ALL {
        for &a in c.actions() {
            let count = counts.get(c, a);
            let e = count as f64 * table.entry(c, a)?;
            dynamic += e;
            lines.push(EnergyLine { component: c, action: Some(a), count, energy_pj: e });
        }
        let l = cycles as f64 * table.leakage(c);
        leakage += l;
        lines.push(EnergyLine { component: c, action: None, count: cycles, energy_pj: l });
    }
    let total = dynamic + leakage;
    Ok(EnergyReport {
        lines,
        dynamic_pj: dynamic,
        leakage_pj: leakage,
        total_pj: total,
        cycles,
        power_mw: if cycles == 0 { 0.0 } else { total * clock_mhz as f64 * 1e-3 / cycles as f64 },
        edp: cycles as f64 * total * 1e-9,
    })
}

/// Structured action-count file with per-action address/data delta arguments.
pub fn export_action_counts(layer: &str, counts: &ActionCounts) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "layer: {layer}");
    let _ = writeln!(s, "action_counts:");
    for c in Component::ALL {
        let _ = writeln!(s, "  - name: {c}");
        let _ = writeln!(s, "    action_counts:");
        for &a in c.actions() {
            let (ad, dd) = a.deltas();
            let _ = writeln!(s, "      - name: {a}");
            let _ = writeln!(s, "        arguments:");
            let _ = writeln!(s, "          address_delta: {ad}");
            let _ = writeln!(s, "          data_delta: {dd}");
            let _ = writeln!(s, "        counts: {}", counts.get(c, a));
        }
    }
    s
}

pub const ENERGY_REPORT_HEADER: &str = "Layer,Component,Action,Count,Energy_pJ";
