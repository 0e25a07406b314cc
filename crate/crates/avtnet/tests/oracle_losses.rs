//! Oracle equivalence: the mining-based loss implementations against
//! independent brute-force nested-loop references, plus mask definitional
//! checks over random draws.

mod common;

use avtnet::losses::{missing_modality_loss, triplet_hard_loss};
use avtnet::mining::{build_masks, MiniBatch};
use common::{oracle_missing_modality_loss, oracle_triplet_hard_loss, random_batch, seeded};
use rand::Rng;

#[test]
fn missing_modality_loss_matches_brute_force_on_200_batches() {
    let mut rng = seeded(0xabcd);
    for case in 0..200 {
        let b = random_batch(&mut rng);
        let want = oracle_missing_modality_loss(&b.x, &b.y, &b.b);
        let batch = MiniBatch::new(b.x, b.y, b.b).unwrap();
        let got = missing_modality_loss(&batch);
        assert!(
            (got - want).abs() < 1e-6,
            "case {case}: got {got}, oracle {want}"
        );
    }
}

#[test]
fn triplet_hard_loss_matches_brute_force_on_200_batches() {
    let mut rng = seeded(0xbeef);
    for case in 0..200 {
        let b = random_batch(&mut rng);
        let want = oracle_triplet_hard_loss(&b.x, &b.y, 0.2);
        let got = triplet_hard_loss(&b.x, &b.y, 0.2);
        assert!(
            (got - want).abs() < 1e-6,
            "case {case}: got {got}, oracle {want}"
        );
    }
}

#[test]
fn mask_invariants_hold_on_1000_random_draws() {
    let mut rng = seeded(0x5eed);
    for _ in 0..1000 {
        let k = rng.gen_range(2..=12);
        let y: Vec<u32> = (0..k).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<bool> = (0..k).map(|_| rng.gen()).collect();
        let m = build_masks(&y, &b);
        for i in 0..k {
            for j in 0..k {
                assert_eq!(m.a_p[[i, j]], u8::from(y[i] == y[j]));
                assert_eq!(m.a_v[[i, j]], u8::from(b[i] && b[j]));
                // complements and conjunctions
                assert_eq!(m.a_m[[i, j]], 1 - m.a_v[[i, j]]);
                assert_eq!(m.a_n[[i, j]], 1 - m.a_p[[i, j]]);
                assert_eq!(m.a_nv[[i, j]], m.a_n[[i, j]] * m.a_v[[i, j]]);
                if i == j {
                    assert_eq!(m.a_pv[[i, j]], 0, "diagonal of A_pv must be cleared");
                } else {
                    assert_eq!(m.a_pv[[i, j]], m.a_p[[i, j]] * m.a_v[[i, j]]);
                }
            }
        }
    }
}
