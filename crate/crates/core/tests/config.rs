use proptest::prelude::*;
use systolic_sim::config::{Dataflow, PartitionScheme};
use systolic_sim::{parse_config, SimConfig, SimError};

const BUNDLED: [&str; 6] = [
    "multicore_4x4_os.cfg",
    "resnet18_memory.cfg",
    "resnet18_ws_32x32.cfg",
    "rowwise_sparse_ws.cfg",
    "vit_ws_128x128.cfg",
    "vit_ws_32x32.cfg",
];

fn bundled(name: &str) -> String {
    let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn bundled_configs_round_trip() {
    for name in BUNDLED {
        let cfg = parse_config(&bundled(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = parse_config(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}

fn line_of(text: &str) -> usize {
    match parse_config(text) {
        Err(SimError::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let head = "[architecture]\nArrayHeight = 8\nArrayWidth = 8\nDataflow = ws\n";
    assert_eq!(line_of(&format!("{head}Bogus = 1\n")), 5);
    assert_eq!(line_of(&format!("{head}ArrayHeight = 4\n")), 5);
    assert_eq!(line_of(&format!("{head}[nowhere]\n")), 5);
    assert_eq!(line_of("[architecture]\nArrayHeight = eight\nArrayWidth = 8\nDataflow = ws\n"), 2);
    assert_eq!(line_of("Dataflow = ws\n"), 1);
}

#[test]
fn invalid_values_are_rejected() {
    let base = "[architecture]\nArrayHeight = 8\nArrayWidth = 8\nDataflow = ws\n";
    let zero = parse_config("[architecture]\nArrayHeight = 0\nArrayWidth = 8\nDataflow = ws\n");
    assert!(matches!(zero, Err(SimError::Validation(_))), "{zero:?}");
    let grid = parse_config(&format!("{base}NumCores = 4\nPr = 3\nPc = 1\n"));
    assert!(matches!(grid, Err(SimError::Validation(_))), "{grid:?}");
    let sparse_os = parse_config("[architecture]\nArrayHeight = 8\nArrayWidth = 8\nDataflow = os\n[sparsity]\nSparsitySupport = true\n");
    assert!(matches!(sparse_os, Err(SimError::Config(_))), "{sparse_os:?}");
    assert!(matches!(parse_config("[architecture]\nArrayHeight = 8\n"), Err(SimError::MissingKey(_))));
}

proptest! {
    #[test]
    fn generated_configs_round_trip(rows in 1u64..256, cols in 1u64..256, df in 0usize..3, pr in 1u64..5, pc in 1u64..5, scheme in 0usize..3, hop in 0u64..10, mhz in 1u64..4000) {
        let mut cfg = SimConfig::new(rows, cols, Dataflow::ALL[df]);
        cfg.multicore.num_cores = pr * pc;
        cfg.multicore.pr = pr;
        cfg.multicore.pc = pc;
        cfg.multicore.scheme = PartitionScheme::ALL[scheme];
        cfg.multicore.hop_latency = hop;
        cfg.clock_mhz = mhz;
        prop_assert_eq!(parse_config(&cfg.to_config_string()).unwrap(), cfg);
    }
}
