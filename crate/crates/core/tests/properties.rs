mod common;

use common::props::{self, Variant};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gc_forward_is_permutation_equivariant(case in props::graph_case()) {
        props::permutation_equivariance(&case, Variant::Gc)?;
    }

    #[test]
    fn ga_forward_is_permutation_equivariant(case in props::graph_case()) {
        props::permutation_equivariance(&case, Variant::Ga)?;
    }

    #[test]
    fn residual_forward_is_permutation_equivariant(case in props::graph_case()) {
        props::permutation_equivariance(&case, Variant::Residual)?;
    }

    #[test]
    fn rank_order_decisions_are_permutation_equivariant(case in props::graph_case()) {
        props::permutation_equivariance(&case, Variant::Roc)?;
    }

    #[test]
    fn spikes_are_binary_in_every_variant(case in props::graph_case()) {
        for v in props::VARIANTS {
            props::spikes_are_binary(&case, v)?;
        }
    }

    #[test]
    fn attention_rows_sum_to_one(case in props::graph_case(), heads in 1usize..4) {
        props::attention_rows_normalized(&case, heads)?;
    }

    #[test]
    fn normalized_nodes_have_zero_mean(block in props::spike_block()) {
        props::normalization_zero_mean(&block)?;
    }

    #[test]
    fn seeded_runs_are_bitwise_identical(case in props::graph_case()) {
        for v in props::VARIANTS {
            props::seeded_runs_are_bitwise_equal(&case, v)?;
        }
    }

    #[test]
    fn normalization_weights_are_symmetric(case in props::graph_case()) {
        props::symmetric_normalization(&case)?;
    }

    #[test]
    fn feature_blobs_round_trip((rows, cols, data) in props::blob_case()) {
        props::feature_blob_round_trip(rows, cols, &data)?;
    }

    #[test]
    fn fused_unroll_matches_stepwise(block in props::spike_block(), kappa in 0.0f32..=1.0) {
        props::unroll_matches_stepwise(&block, kappa)?;
    }
}
