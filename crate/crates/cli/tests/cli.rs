use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ALL_STAGES: &str = "compute,memory,layout,energy,sparsity";

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_systolic-sim")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().skip(1).filter(|l| !l.is_empty()).collect()
}

/// Three small convolutions, enough to exercise every stage quickly.
fn small_conv_topology(dir: &Path) -> PathBuf {
    let topo = dir.join("small.csv");
    fs::write(
        &topo,
        "Layer name, IFMAP Height, IFMAP Width, Filter Height, Filter Width, Channels, Num Filter, Strides,\n\
         A, 16, 16, 3, 3, 8, 16, 1,\n\
         B, 14, 14, 1, 1, 16, 32, 2,\n\
         C, 16, 16, 3, 3, 8, 16, 1,\n",
    )
    .unwrap();
    topo
}

fn run_small(dir: &Path, out: &str, stages: &str) -> PathBuf {
    let topo = small_conv_topology(dir);
    let out = dir.join(out);
    let cfg = repo("configs/resnet18_ws_32x32.cfg");
    let o = sim(&["run", "--config", path(&cfg), "--topology", path(&topo), "--out", path(&out), "--stages", stages]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn single_gemm_compute_only() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("one.csv");
    fs::write(&topo, "Layer Name, M, N, K,\nonly, 64, 32, 16,\n").unwrap();
    let out = dir.path().join("out");
    let cfg = repo("configs/vit_ws_32x32.cfg");
    let o = sim(&["run", "--config", path(&cfg), "--topology", path(&topo), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("COMPUTE_REPORT.csv")).unwrap();
    assert!(report.starts_with("Layer,Dataflow,M,N,K,Folds,TotalCycles,MACs,Utilization"));
    let rows = data_rows(&report);
    assert_eq!(rows.len(), 1);
    // WS maps (Sr, Sc, T) = (16, 64, 32): (64 + 32 + 32 - 2) * 1 * 2
    assert!(rows[0].starts_with("only,ws,64,32,16,2,252,32768,"), "{}", rows[0]);
    assert!(fs::read_to_string(out.join("RUN_MANIFEST.txt")).unwrap().contains("COMPUTE_REPORT.csv"));
}

#[test]
fn resnet18_with_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = repo("configs/resnet18_ws_32x32.cfg");
    let topo = repo("topologies/resnet18.csv");
    let o = sim(&["run", "--config", path(&cfg), "--topology", path(&topo), "--out", path(&out), "--stages", ALL_STAGES]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "COMPUTE_REPORT.csv",
        "BANDWIDTH_REPORT.csv",
        "STALL_REPORT.csv",
        "MEMORY_REPORT.csv",
        "SPARSE_REPORT.csv",
        "LAYOUT_REPORT.csv",
        "ENERGY_REPORT.csv",
        "ENERGY_SUMMARY.csv",
    ] {
        let text = fs::read_to_string(out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(data_rows(&text).len() >= 21, "{name} has {} rows", data_rows(&text).len());
    }
}

#[test]
fn missing_topology_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.csv");
    let cfg = repo("configs/vit_ws_32x32.cfg");
    let o = sim(&["run", "--config", path(&cfg), "--topology", path(&missing), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(path(&missing)));
    assert!(!out.exists());
}

#[test]
fn unknown_stage_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let topo = small_conv_topology(dir.path());
    let cfg = repo("configs/resnet18_ws_32x32.cfg");
    let o = sim(&[
        "run",
        "--config",
        path(&cfg),
        "--topology",
        path(&topo),
        "--out",
        path(&dir.path().join("o")),
        "--stages",
        "compute,warp",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp"));
}

#[test]
fn analytical_sweep() {
    let o = sim(&["analytical", "--m", "1000", "--n", "1000", "--k", "1000", "--rows", "32", "--cols", "32", "--cores", "16"]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().next(), Some("scheme,Pr,Pc,cycles,l2_input_words,l2_weight_words"));
    // 5 grids for 16 cores under 3 schemes
    assert_eq!(data_rows(&stdout).len(), 15);
    assert!(String::from_utf8(o.stderr).unwrap().lines().any(|l| l.starts_with("compute,")));

    let o = sim(&["analytical", "--m", "100", "--n", "100", "--k", "100", "--rows", "8", "--cols", "8", "--cores", "1"]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    let cycles: Vec<&str> = data_rows(&stdout).iter().map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(cycles.len(), 3);
    assert!(cycles.iter().all(|c| *c == cycles[0]));

    let o = sim(&["analytical", "--m", "10", "--n", "10", "--k", "10", "--rows", "8", "--cols", "8", "--cores", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analytical_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = sim(&[
        "analytical",
        "--m",
        "500",
        "--n",
        "300",
        "--k",
        "200",
        "--rows",
        "16",
        "--cols",
        "16",
        "--cores",
        "4",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success());
    assert_eq!(data_rows(&fs::read_to_string(out.join("SWEEP.csv")).unwrap()).len(), 9);
    assert_eq!(data_rows(&fs::read_to_string(out.join("SWEEP_OPTIMAL.csv")).unwrap()).len(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_small(dir.path(), "a", ALL_STAGES);
    let b = run_small(dir.path(), "b", ALL_STAGES);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for name in names.iter().filter(|n| *n != "RUN_MANIFEST.txt") {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn extra_stages_leave_compute_results_alone() {
    let dir = tempfile::tempdir().unwrap();
    let alone = run_small(dir.path(), "alone", "compute");
    let full = run_small(dir.path(), "full", ALL_STAGES);
    for name in ["COMPUTE_REPORT.csv", "BANDWIDTH_REPORT.csv"] {
        assert_eq!(fs::read(alone.join(name)).unwrap(), fs::read(full.join(name)).unwrap(), "{name}");
    }
    assert!(!alone.join("ENERGY_REPORT.csv").exists());
}

#[test]
fn traces_are_dumped_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    let topo = small_conv_topology(dir.path());
    let out = dir.path().join("t");
    let cfg = repo("configs/resnet18_ws_32x32.cfg");
    let o = sim(&[
        "run",
        "--config",
        path(&cfg),
        "--topology",
        path(&topo),
        "--out",
        path(&out),
        "--stages",
        "compute,memory",
        "--dump-traces",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for suffix in ["ifmap", "filter", "ofmap", "requests"] {
        assert!(out.join(format!("traces/001_B_{suffix}.csv")).exists(), "{suffix}");
    }
}
