//! Shared helpers for the integration tests: brute-force loss oracles written
//! as plain nested loops (no reuse of the library's mining code) and random
//! batch generators.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random batch: unit-norm rows, class labels, validity flags.
pub struct RandomBatch {
    pub x: Array2<f64>,
    pub y: Vec<u32>,
    pub b: Vec<bool>,
}

/// Draw a batch with K in [4,16], D in [2,16], classes in [2,5] and each
/// sample independently missing with probability 0.3.
pub fn random_batch(rng: &mut ChaCha8Rng) -> RandomBatch {
    let k = rng.gen_range(4..=16);
    let d = rng.gen_range(2..=16);
    let n_classes = rng.gen_range(2..=5u32);
    let mut x = Array2::<f64>::zeros((k, d));
    for mut row in x.rows_mut() {
        let mut norm2 = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
            norm2 += *v * *v;
        }
        let norm = norm2.sqrt().max(1e-12);
        row.mapv_inplace(|v| v / norm);
    }
    let y: Vec<u32> = (0..k).map(|_| rng.gen_range(0..n_classes)).collect();
    let b: Vec<bool> = (0..k).map(|_| rng.gen::<f64>() >= 0.3).collect();
    RandomBatch { x, y, b }
}

/// Plain Euclidean distance between rows `i` and `j` of `x`.
pub fn dist(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..x.ncols() {
        let d = x[[i, c]] - x[[j, c]];
        s += d * d;
    }
    s.sqrt()
}

/// Brute-force missing-modality loss: for each valid anchor walk every other
/// sample three times to find the farthest valid positive, nearest valid
/// negative and nearest missing point, then average softplus of the exponent
/// over valid anchors.
pub fn oracle_missing_modality_loss(x: &Array2<f64>, y: &[u32], b: &[bool]) -> f64 {
    let k = x.nrows();
    let n_valid = b.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        if !b[i] {
            continue;
        }
        let mut d_ap = 0.0f64;
        let mut found_p = false;
        for j in 0..k {
            if j != i && b[j] && y[j] == y[i] {
                let d = dist(x, i, j);
                if !found_p || d > d_ap {
                    d_ap = d;
                    found_p = true;
                }
            }
        }
        let mut d_an = 0.0f64;
        let mut found_n = false;
        for j in 0..k {
            if b[j] && y[j] != y[i] {
                let d = dist(x, i, j);
                if !found_n || d < d_an {
                    d_an = d;
                    found_n = true;
                }
            }
        }
        let mut d_am = 0.0f64;
        let mut found_m = false;
        for j in 0..k {
            if j != i && !(b[i] && b[j]) {
                let d = dist(x, i, j);
                if !found_m || d < d_am {
                    d_am = d;
                    found_m = true;
                }
            }
        }
        let alpha = d_ap - d_an - d_am;
        total += alpha.max(0.0) + (-alpha.abs()).exp().ln_1p();
    }
    total / n_valid as f64
}

/// Brute-force triplet hard loss: farthest positive and nearest negative per
/// anchor, hinge at `margin`, averaged over anchors that have both.
pub fn oracle_triplet_hard_loss(x: &Array2<f64>, y: &[u32], margin: f64) -> f64 {
    let k = x.nrows();
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..k {
        let mut d_ap = f64::NEG_INFINITY;
        let mut d_an = f64::INFINITY;
        for j in 0..k {
            if j == i {
                continue;
            }
            let d = dist(x, i, j);
            if y[j] == y[i] {
                d_ap = d_ap.max(d);
            } else {
                d_an = d_an.min(d);
            }
        }
        if d_ap.is_finite() && d_an.is_finite() {
            total += (d_ap - d_an + margin).max(0.0);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Nudge rows apart until the batch is safely differentiable: all pairwise
/// distances clearly separated (no argmin/argmax ties) and no triplet hinge
/// within reach of its kink at zero.
pub fn perturb_ties(x: &mut Array2<f64>, y: &[u32], margin: f64, rng: &mut ChaCha8Rng) {
    loop {
        let k = x.nrows();
        let mut ds: Vec<f64> = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                ds.push(dist(x, i, j));
            }
        }
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut tied = ds.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-3) || ds[0] < 1e-3;
        for i in 0..k {
            let mut d_ap = f64::NEG_INFINITY;
            let mut d_an = f64::INFINITY;
            for j in 0..k {
                if j == i {
                    continue;
                }
                let d = dist(x, i, j);
                if y[j] == y[i] {
                    d_ap = d_ap.max(d);
                } else {
                    d_an = d_an.min(d);
                }
            }
            if d_ap.is_finite() && d_an.is_finite() && (d_ap - d_an + margin).abs() < 1e-3 {
                tied = true;
            }
        }
        if !tied {
            return;
        }
        for v in x.iter_mut() {
            *v += 1e-2 * (rng.gen::<f64>() - 0.5);
        }
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
