mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use systolic_sim::config::{Dataflow, SparseRep};
use systolic_sim::sparsity::{sparse_mapped_dims, storage_report, SparsityPattern};
use systolic_sim::systolic::{map_gemm, simulate_compute, AddressBases, DemandTrace};
use systolic_sim::topology::{GemmOp, NmRatio};

const BASES: AddressBases = AddressBases { ifmap: 0, filter: 10_000_000, ofmap: 20_000_000 };

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellpack_bytes_match_bit_encoder(rows in 1u64..=64, cols in 1u64..=64, log_block in 1u32..5, frac in 0.0f64..1.0, row_wise in any::<bool>(), seed in any::<u64>()) {
        let block = 1u64 << log_block;
        let pattern = if row_wise {
            SparsityPattern::row_wise(rows, block, seed, 0).unwrap()
        } else {
            let n = 1 + (frac * block as f64) as u64 % block;
            SparsityPattern::layer_wise(rows, NmRatio { n, m: block }).unwrap()
        };
        let mask = common::random_block_mask(&pattern, cols, &mut ChaCha8Rng::seed_from_u64(seed));
        let report = storage_report(rows, cols, &pattern, SparseRep::EllpackBlock, 16);
        let (values, meta) = common::ellpack_encode(&mask, block, 16);
        prop_assert_eq!(report.value_bytes(), values);
        prop_assert_eq!(report.metadata_bytes(), meta);
    }

    #[test]
    fn row_wise_draws_stay_within_half_block(rows in 1u64..500, log_block in 1u32..6, seed in any::<u64>(), stream in 0u64..50) {
        let block = 1u64 << log_block;
        let p = SparsityPattern::row_wise(rows, block, seed, stream).unwrap();
        prop_assert_eq!(p.per_block_n.len() as u64, rows.div_ceil(block));
        prop_assert!(p.per_block_n.iter().all(|&n| n >= 1 && n <= block / 2));
        prop_assert_eq!(&p, &SparsityPattern::row_wise(rows, block, seed, stream).unwrap());
    }

    #[test]
    fn sparse_trace_length_matches_compressed_mapping(m in 1u64..30, n in 1u64..30, k in 1u64..60, r in 1u64..6, c in 1u64..6, nz in 1u64..5) {
        let pattern = SparsityPattern::layer_wise(k, NmRatio { n: nz, m: 4 }).unwrap();
        let op = GemmOp::new(m, n, k);
        let dims = sparse_mapped_dims(&map_gemm(&op, Dataflow::Ws), &pattern).unwrap();
        let trace = DemandTrace::new_sparse_ws(&op, r, c, BASES, Arc::new(pattern.row_map())).unwrap();
        let report = simulate_compute(&trace);
        prop_assert_eq!(report.cycles, common::single_core_cycles(dims.sr, dims.sc, dims.t, r, c));
    }
}

#[test]
fn two_of_four_halves_folds_and_cycles() {
    for (m, n, k, r) in [(32, 16, 64, 8), (10, 7, 96, 4), (50, 50, 256, 16)] {
        assert_eq!(k % (2 * r), 0);
        let op = GemmOp::new(m, n, k);
        let dense = simulate_compute(&DemandTrace::new(&op, Dataflow::Ws, r, r, BASES).unwrap());
        let pattern = SparsityPattern::layer_wise(k, NmRatio { n: 2, m: 4 }).unwrap();
        let sparse = simulate_compute(&DemandTrace::new_sparse_ws(&op, r, r, BASES, Arc::new(pattern.row_map())).unwrap());
        assert_eq!(sparse.folds * 2, dense.folds);
        assert_eq!(sparse.cycles * 2, dense.cycles);
    }
}

#[test]
fn csr_and_csc_count_indices_and_pointers() {
    let p = SparsityPattern::layer_wise(8, NmRatio { n: 2, m: 4 }).unwrap();
    // 4 kept rows x 5 cols = 20 nonzeros; 3 column bits, 5 pointer bits for 21 positions
    let csr = storage_report(8, 5, &p, SparseRep::Csr, 16);
    assert_eq!(csr.metadata_bits, 20 * 3 + 9 * 5);
    let csc = storage_report(8, 5, &p, SparseRep::Csc, 16);
    assert_eq!(csc.metadata_bits, 20 * 3 + 6 * 5);
}
