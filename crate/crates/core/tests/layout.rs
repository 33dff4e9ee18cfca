mod common;

use proptest::prelude::*;
use systolic_sim::config::Dataflow;
use systolic_sim::layout::{cycle_conflicts, evaluate_layout, locate, Dim, LayoutSpec};
use systolic_sim::systolic::{AddressBases, DemandTrace, Operand};
use systolic_sim::topology::GemmOp;

const BASES: AddressBases = AddressBases { ifmap: 0, filter: 10_000_000, ofmap: 20_000_000 };

fn order() -> impl Strategy<Value = [Dim; 3]> {
    let all = [
        [Dim::C, Dim::H, Dim::W],
        [Dim::C, Dim::W, Dim::H],
        [Dim::H, Dim::C, Dim::W],
        [Dim::H, Dim::W, Dim::C],
        [Dim::W, Dim::C, Dim::H],
        [Dim::W, Dim::H, Dim::C],
    ];
    (0usize..6).prop_map(move |i| all[i])
}

fn spec_strategy() -> impl Strategy<Value = LayoutSpec> {
    (1u64..5, 1u64..9, 1u64..9, order(), order(), 1u64..4)
        .prop_flat_map(|(c, h, w, inter, intra, ports)| {
            (Just([c, h, w]), 1..=c, 1..=h, 1..=w, Just(inter), Just(intra), Just(ports))
        })
        .prop_flat_map(|(dims, c1, h1, w1, inter, intra, ports)| {
            let width = c1 * h1 * w1;
            (Just((dims, [c1, h1, w1], inter, intra, ports)), 1..=width)
        })
        .prop_map(|((dims, steps, inter, intra, ports), bw)| {
            let banks = (steps.iter().product::<u64>()).div_ceil(bw);
            LayoutSpec::new(dims, steps, bw, banks, ports).unwrap().with_orders(inter, intra)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn placement_matches_enumeration_and_is_injective(spec in spec_strategy()) {
        let reference = common::enumerate_placement(&spec);
        let mut seen = std::collections::HashSet::new();
        for (coord, &(line, col)) in &reference {
            let p = locate(coord[0], coord[1], coord[2], &spec).unwrap();
            prop_assert_eq!((p.line_id, p.col_id), (line, col));
            prop_assert_eq!(p.bank_id, col / spec.bandwidth_per_bank);
            prop_assert!(p.bank_id < spec.num_banks);
            prop_assert!(seen.insert((p.line_id, p.col_id)));
        }
    }

    #[test]
    fn conflicts_match_port_scheduler(spec in spec_strategy(), picks in prop::collection::vec((0u64..64, 0u64..64, 0u64..64), 1..40)) {
        let reqs: Vec<(u64, u64, u64)> = picks.iter().map(|&(c, h, w)| (c % spec.dims[0], h % spec.dims[1], w % spec.dims[2])).collect();
        let reference = common::enumerate_placement(&spec);
        let placed: Vec<(u64, u64)> = reqs
            .iter()
            .map(|&(c, h, w)| {
                let (line, col) = reference[&[c, h, w]];
                (col / spec.bandwidth_per_bank, line)
            })
            .collect();
        prop_assert_eq!(cycle_conflicts(&reqs, &spec).unwrap(), common::port_schedule(&placed, spec.ports_per_bank));
    }

    #[test]
    fn splitting_banks_never_slows_a_trace(m in 1u64..20, n in 1u64..20, k in 1u64..20, seed in 0usize..3) {
        let df = [Dataflow::Is, Dataflow::Ws, Dataflow::Os][seed];
        let trace = DemandTrace::new(&GemmOp::new(m, n, k), df, 4, 4, BASES).unwrap();
        let mut last = u64::MAX;
        for banks in [1u64, 2, 4, 8, 16] {
            let specs = Operand::ALL.map(|op| {
                let (rows, cols) = trace.operand_shape(op);
                let steps = systolic_sim::layout::default_steps([1, rows, cols], 16);
                LayoutSpec::new([1, rows, cols], steps, 16 / banks, banks, 1).unwrap()
            });
            let total = evaluate_layout(&trace, &specs).unwrap().total_cycles;
            prop_assert!(total <= last, "{} banks: {} > {}", banks, total, last);
            last = total;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trace_replay_matches_brute_force(m in 1u64..12, n in 1u64..12, k in 1u64..12, seed in 0usize..3, bw in 1u64..5, ports in 1u64..3, intra in order(), inter in order()) {
        let df = [Dataflow::Is, Dataflow::Ws, Dataflow::Os][seed];
        let trace = DemandTrace::new(&GemmOp::new(m, n, k), df, 3, 3, BASES).unwrap();
        let specs = Operand::ALL.map(|op| {
            let (rows, cols) = trace.operand_shape(op);
            let steps = systolic_sim::layout::default_steps([1, rows, cols], 8);
            let banks = steps.iter().product::<u64>().div_ceil(bw);
            LayoutSpec::new([1, rows, cols], steps, bw, banks, ports).unwrap().with_orders(inter, intra)
        });
        let report = evaluate_layout(&trace, &specs).unwrap();
        prop_assert_eq!(report.total_cycles, common::brute_force_total(&trace, &specs));
        prop_assert_eq!(report.baseline_cycles, trace.cycles());
    }
}
