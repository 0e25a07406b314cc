//! Property-based invariants of the mining primitives: mask algebra,
//! distance-matrix structure, and permutation equivariance of the losses.

mod common;

use avtnet::losses::{missing_modality_loss, triplet_hard_loss};
use avtnet::mining::{build_masks, pairwise_distances, MiniBatch};
use ndarray::Array2;
use proptest::prelude::*;

fn labels_and_validity() -> impl Strategy<Value = (Vec<u32>, Vec<bool>)> {
    (2usize..12).prop_flat_map(|k| {
        (
            proptest::collection::vec(0u32..4, k),
            proptest::collection::vec(any::<bool>(), k),
        )
    })
}

fn batch_data() -> impl Strategy<Value = (Vec<f64>, usize, Vec<u32>, Vec<bool>)> {
    (3usize..8, 2usize..6).prop_flat_map(|(k, d)| {
        (
            proptest::collection::vec(-1.0f64..1.0, k * d),
            Just(d),
            proptest::collection::vec(0u32..3, k),
            proptest::collection::vec(any::<bool>(), k),
        )
    })
}

proptest! {
    #[test]
    fn masks_satisfy_their_algebra((y, b) in labels_and_validity()) {
        let k = y.len();
        let m = build_masks(&y, &b);
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(m.a_m[[i, j]] + m.a_v[[i, j]], 1);
                prop_assert_eq!(m.a_n[[i, j]] + m.a_p[[i, j]], 1);
                prop_assert_eq!(m.a_nv[[i, j]], m.a_n[[i, j]] * m.a_v[[i, j]]);
                // masks built from pairwise predicates are symmetric
                prop_assert_eq!(m.a_p[[i, j]], m.a_p[[j, i]]);
                prop_assert_eq!(m.a_v[[i, j]], m.a_v[[j, i]]);
            }
            prop_assert_eq!(m.a_p[[i, i]], 1);
            prop_assert_eq!(m.a_pv[[i, i]], 0);
        }
    }

    #[test]
    fn distance_matrix_is_symmetric_nonnegative_zero_diagonal(
        (vals, d, y, _b) in batch_data()
    ) {
        let k = y.len();
        let x = Array2::from_shape_vec((k, d), vals).unwrap();
        let p = pairwise_distances(&x);
        for i in 0..k {
            prop_assert_eq!(p.0[[i, i]], 0.0);
            for j in 0..k {
                prop_assert!(p.0[[i, j]] >= 0.0);
                prop_assert!((p.0[[i, j]] - p.0[[j, i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn losses_are_invariant_under_sample_permutation(
        (vals, d, y, b) in batch_data(),
        shift in 1usize..7
    ) {
        let k = y.len();
        let x = Array2::from_shape_vec((k, d), vals).unwrap();
        let rot = |i: usize| (i + shift) % k;
        let mut xp = Array2::zeros((k, d));
        let mut yp = vec![0u32; k];
        let mut bp = vec![false; k];
        for i in 0..k {
            xp.row_mut(rot(i)).assign(&x.row(i));
            yp[rot(i)] = y[i];
            bp[rot(i)] = b[i];
        }
        let l1 = missing_modality_loss(
            &MiniBatch::new(x.clone(), y.clone(), b.clone()).unwrap());
        let l2 = missing_modality_loss(&MiniBatch::new(xp.clone(), yp.clone(), bp).unwrap());
        prop_assert!((l1 - l2).abs() < 1e-9, "missing: {} vs {}", l1, l2);
        let t1 = triplet_hard_loss(&x, &y, 0.2);
        let t2 = triplet_hard_loss(&xp, &yp, 0.2);
        prop_assert!((t1 - t2).abs() < 1e-9, "triplet: {} vs {}", t1, t2);
    }

    #[test]
    fn losses_are_finite_and_nonnegative((vals, d, y, b) in batch_data()) {
        let k = y.len();
        let x = Array2::from_shape_vec((k, d), vals).unwrap();
        let l = missing_modality_loss(&MiniBatch::new(x.clone(), y.clone(), b).unwrap());
        prop_assert!(l.is_finite() && l >= 0.0);
        let t = triplet_hard_loss(&x, &y, 0.2);
        prop_assert!(t.is_finite() && t >= 0.0);
    }
}
