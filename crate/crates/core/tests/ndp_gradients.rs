mod common;

use common::{ndp_fd_max_error, random_matrix, random_ndp, rng};
use ndarray::{Array1, Array2};
use ndp_core::ndp::{ndp_weight, NdpParams};
use ndp_core::scoring::{ndp_score, static_scores};
use ndp_core::{LogitField, ScoreMethod};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn backward_matches_central_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let c = [4, 8][(seed % 2) as usize];
        let d = [5, 16][((seed / 2) % 2) as usize];
        let n = 1 + (seed % 10) as usize;
        worst = worst.max(ndp_fd_max_error(seed, c, d, n, 1e-4));
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn small_documented_instance() {
    // Three points, C = 4, d = 5.
    assert!(ndp_fd_max_error(12345, 4, 5, 3, 1e-4) < 1e-4);
}

#[test]
fn weights_are_permutation_equivariant() {
    let mut r = rng(3);
    let params = random_ndp(&mut r, 6, 4);
    let values = random_matrix(&mut r, 9, 6, 3.0);
    let perm: Vec<usize> = vec![4, 0, 8, 2, 7, 1, 3, 6, 5];
    let permuted = Array2::from_shape_fn((9, 6), |(i, j)| values[[perm[i], j]]);
    let (w, _) = ndp_weight(&LogitField::new(values, 6, false).unwrap(), &params).unwrap();
    let (wp, _) = ndp_weight(&LogitField::new(permuted, 6, false).unwrap(), &params).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(wp[i].to_bits(), w[p].to_bits());
    }
}

#[test]
fn reweighted_score_factors_through_weight() {
    let mut r = rng(8);
    let params = random_ndp(&mut r, 8, 16);
    let logits = LogitField::new(random_matrix(&mut r, 50, 8, 4.0), 4, true).unwrap();
    let (w, _) = ndp_weight(&logits, &params).unwrap();
    for method in ScoreMethod::ALL {
        let base = static_scores(&logits, method).unwrap();
        let scaled = ndp_score(&logits, method, &params).unwrap();
        for (i, &wi) in w.iter().enumerate() {
            let (b, s) = (base.as_slice()[i], scaled.as_slice()[i]);
            assert_eq!(s, b * wi);
            assert!(b == 0.0 || s.signum() == b.signum());
        }
    }
}

#[test]
fn zero_head_reduces_to_static_scores_bitwise() {
    let mut r = rng(21);
    let mut params = random_ndp(&mut r, 8, 16);
    params.set_ws(Array1::zeros(32)).unwrap();
    let logits = LogitField::new(random_matrix(&mut r, 20_000, 8, 6.0), 4, true).unwrap();
    for method in ScoreMethod::ALL {
        let a = static_scores(&logits, method).unwrap();
        let b = ndp_score(&logits, method, &params).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_never_drop_below_one(seed in any::<u64>(), n in 1usize..12, scale in 0.1f64..20.0) {
        let mut r = rng(seed);
        let mut params = NdpParams::init(6, 3, seed).unwrap();
        params.set_ws(Array1::from_shape_simple_fn(6, || r.random_range(-scale..scale))).unwrap();
        let logits = LogitField::new(random_matrix(&mut r, n, 6, scale), 6, false).unwrap();
        let (w, tape) = ndp_weight(&logits, &params).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 1.0 && v.is_finite()));
        for row in tape.attention().rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
