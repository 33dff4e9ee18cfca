use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use systolic_sim::config::Dataflow;
use systolic_sim::memory::{build_requests, export_trace_csv, RequestStreamOptions};
use systolic_sim::multicore::{sweep_csv, sweep_partitions, SweepRow, SWEEP_HEADER};
use systolic_sim::pipeline::{layer_trace, render_reports, run_layers, RunSetup, Stages};
use systolic_sim::systolic::Operand;
use systolic_sim::topology::{parse_topology, GemmOp, TopologyKind};
use systolic_sim::{parse_config, SimConfig};

#[derive(Parser)]
#[command(name = "systolic-sim", version, about = "Cycle-accurate systolic-array accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a topology and write per-layer CSV reports.
    Run(RunArgs),
    /// Enumerate multi-core partitions of one GEMM with the closed-form model.
    Analytical(AnalyticalArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma list from compute,memory,layout,energy,sparsity. Defaults to compute.
    #[arg(long, default_value = "compute")]
    stages: String,
    /// Also write per-layer operand traces (and DRAM request traces when memory is on).
    #[arg(long)]
    dump_traces: bool,
    /// Overrides the sparsity seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = "auto")]
    topology_kind: TopologyKind,
}

#[derive(Args)]
struct AnalyticalArgs {
    #[arg(long)]
    m: u64,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    k: u64,
    #[arg(long)]
    rows: u64,
    #[arg(long)]
    cols: u64,
    #[arg(long)]
    cores: u64,
    #[arg(long, default_value = "os")]
    dataflow: Dataflow,
    /// Directory for SWEEP.csv and SWEEP_OPTIMAL.csv; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn runtime(err: anyhow::Error) -> Failure {
    Failure { code: 1, err }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Analytical(a) => analytical(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display())).map_err(usage)
}

fn load_config(args: &RunArgs) -> Result<SimConfig, Failure> {
    let text = read_input(&args.config, "config")?;
    let mut cfg = parse_config(&text).with_context(|| format!("in config {}", args.config.display())).map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.sparsity.seed = seed;
    }
    Ok(cfg)
}

/// Files written so far; removed again if the run fails.
struct OutputSet {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<(String, String)>,
    written: Vec<PathBuf>,
}

impl OutputSet {
    fn write(&mut self, name: &str, contents: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
        self.written.push(path.clone());
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push((name.to_string(), hex::encode(Sha256::digest(contents))));
        Ok(())
    }

    fn discard(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        let _ = fs::remove_dir(self.dir.join("traces"));
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load_config(&args)?;
    let topo_text = read_input(&args.topology, "topology")?;
    let layers = parse_topology(&topo_text, args.topology_kind)
        .with_context(|| format!("in topology {}", args.topology.display()))
        .map_err(usage)?;
    let stages = Stages::parse(&args.stages).map_err(|e| usage(e.into()))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let setup = RunSetup::load(cfg, stages, base).map_err(|e| usage(e.into()))?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build().map_err(|e| runtime(e.into()))?;
    let results = pool.install(|| run_layers(&setup, &layers)).map_err(|e| runtime(e.into()))?;
    let reports = render_reports(&setup, &results);

    let created_dir = !args.out.exists();
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display())).map_err(usage)?;
    let mut out = OutputSet { dir: args.out.clone(), created_dir, files: Vec::new(), written: Vec::new() };
    let written = write_outputs(&args, &setup, &layers, &reports, &mut out, started);
    if let Err(e) = written {
        out.discard();
        return Err(runtime(e));
    }
    Ok(())
}

fn write_outputs(
    args: &RunArgs,
    setup: &RunSetup,
    layers: &[systolic_sim::LayerSpec],
    reports: &[(String, String)],
    out: &mut OutputSet,
    started: Instant,
) -> anyhow::Result<()> {
    for (name, text) in reports {
        out.write(name, text.as_bytes())?;
    }
    if args.dump_traces {
        for (i, layer) in layers.iter().enumerate() {
            let trace = layer_trace(&setup.cfg, i, layer)?;
            let stem = format!("traces/{:03}_{}", i, sanitize(&layer.name));
            for op in Operand::ALL {
                let mut buf = Vec::new();
                trace.write_operand_csv(op, &mut buf)?;
                out.write(&format!("{stem}_{}.csv", op.name()), &buf)?;
            }
            if setup.stages.memory {
                let reqs = build_requests(&trace, &RequestStreamOptions::from_config(&setup.cfg));
                out.write(&format!("{stem}_requests.csv"), export_trace_csv(&reqs).as_bytes())?;
            }
        }
    }
    let manifest = manifest(args, setup, out, started);
    out.write("RUN_MANIFEST.txt", manifest.as_bytes())
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn manifest(args: &RunArgs, setup: &RunSetup, out: &OutputSet, started: Instant) -> String {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let stages: Vec<String> = setup.stages.names().iter().map(|s| format!("{s:?}")).collect();
    let mut s = String::from("{\n");
    let _ = writeln!(s, "  \"tool\": \"systolic-sim {}\",", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "  \"config\": {:?},", args.config.display().to_string());
    let _ = writeln!(s, "  \"topology\": {:?},", args.topology.display().to_string());
    let _ = writeln!(s, "  \"output_dir\": {:?},", args.out.display().to_string());
    let _ = writeln!(s, "  \"stages\": [{}],", stages.join(", "));
    let _ = writeln!(s, "  \"seed\": {},", setup.cfg.sparsity.seed);
    let _ = writeln!(s, "  \"started_unix\": {unix},");
    let _ = writeln!(s, "  \"wall_clock_s\": {:.3},", started.elapsed().as_secs_f64());
    s.push_str("  \"files\": [\n");
    for (i, (name, digest)) in out.files.iter().enumerate() {
        let sep = if i + 1 == out.files.len() { "" } else { "," };
        let _ = writeln!(s, "    {{\"path\": {name:?}, \"sha256\": \"{digest}\"}}{sep}");
    }
    s.push_str("  ]\n}\n");
    s
}

fn pick_line(label: &str, r: &SweepRow) -> String {
    format!(
        "{label},{},{},{},{},{},{}\n",
        r.scheme, r.pr, r.pc, r.cycles, r.footprint.input_l2_words, r.footprint.weight_l2_words
    )
}

fn analytical(a: AnalyticalArgs) -> Result<(), Failure> {
    if [a.m, a.n, a.k, a.rows, a.cols, a.cores].contains(&0) {
        return Err(usage(anyhow!("GEMM dimensions, array shape and core count must be positive")));
    }
    let op = GemmOp::new(a.m, a.n, a.k);
    let sweep = sweep_partitions(&op, a.dataflow, a.rows, a.cols, a.cores).map_err(|e| usage(e.into()))?;
    let csv = sweep_csv(&sweep);
    let optimal = format!("pick,{SWEEP_HEADER}\n")
        + &pick_line("compute", &sweep.compute_optimal)
        + &pick_line("footprint", &sweep.footprint_optimal);
    match a.out {
        Some(dir) => {
            let wrote = fs::create_dir_all(&dir)
                .and_then(|_| fs::write(dir.join("SWEEP.csv"), &csv))
                .and_then(|_| fs::write(dir.join("SWEEP_OPTIMAL.csv"), &optimal));
            wrote.with_context(|| format!("cannot write to {}", dir.display())).map_err(runtime)
        }
        None => {
            print!("{csv}");
            eprint!("{optimal}");
            Ok(())
        }
    }
}
