//! Walk through the online hard-mining primitives on a tiny hand-made batch:
//! the pairwise distance matrix, the six mask matrices, and the per-anchor
//! hard positive / hard negative / nearest-missing distances.
//!
//! Run with `cargo run --release --example mining_walkthrough`.

use avtnet::mining::{build_masks, loss_components, pairwise_distances};
use ndarray::array;

fn main() {
    // Four samples: two of class 0, two of class 1, the last one missing.
    let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [5.0, 0.0]];
    let y = [0u32, 0, 1, 1];
    let b = [true, true, true, false];

    let p = pairwise_distances(&x);
    println!("distance matrix:\n{:.3}\n", p.0);

    let masks = build_masks(&y, &b);
    println!("A_p (same class):\n{}", masks.a_p);
    println!("A_v (both valid):\n{}", masks.a_v);
    println!("A_m (at least one missing):\n{}", masks.a_m);
    println!("A_pv (valid positives, zero diagonal):\n{}", masks.a_pv);
    println!("A_nv (valid negatives):\n{}\n", masks.a_nv);

    let c = loss_components(&p, &masks, &b);
    for i in 0..y.len() {
        println!(
            "anchor {i}: d_ap = {:.3} (from {:?}), d_an = {:.3} (from {:?}), d_am = {:.3} (from {:?})",
            c.d_ap[i], c.idx_ap[i], c.d_an[i], c.idx_an[i], c.d_am[i], c.idx_am[i]
        );
    }
}
