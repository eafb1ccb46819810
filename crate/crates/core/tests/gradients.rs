//! Analytic gradients against central finite differences.

mod common;

use common::gradcheck::{gnn_instance, text_head_instance, VARIANTS};

#[test]
fn gnn_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        for variant in VARIANTS {
            let bad = gnn_instance(seed, variant);
            assert!(bad.is_none(), "{} seed {seed}: {bad:?}", variant.name());
        }
    }
}

#[test]
fn text_head_gradients_match_finite_differences() {
    for seed in 0..30u64 {
        let bad = text_head_instance(1000 + seed);
        assert!(bad.is_none(), "seed {seed}: {bad:?}");
    }
}
