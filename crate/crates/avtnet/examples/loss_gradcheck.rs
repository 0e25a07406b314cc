//! Evaluate both training losses on a random batch and verify a few entries
//! of their analytic gradients against central finite differences.
//!
//! Run with `cargo run --release --example loss_gradcheck`.

use avtnet::losses::{
    missing_modality_loss, missing_modality_loss_grad, triplet_hard_loss, triplet_hard_loss_grad,
};
use avtnet::mining::MiniBatch;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> avtnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (k, d) = (8, 6);
    let mut x = Array2::<f64>::zeros((k, d));
    for mut row in x.rows_mut() {
        for v in row.iter_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    let y: Vec<u32> = (0..k).map(|_| rng.gen_range(0..3)).collect();
    let b: Vec<bool> = (0..k).map(|_| rng.gen::<f64>() >= 0.3).collect();

    let batch = MiniBatch::new(x.clone(), y.clone(), b.clone())?;
    let (l_m, g_m) = missing_modality_loss_grad(&batch);
    let (l_t, g_t) = triplet_hard_loss_grad(&x, &y, 0.2);
    println!("missing-modality loss: {l_m:.6}");
    println!("triplet hard loss:     {l_t:.6}\n");

    let h = 1e-5;
    println!("entry      analytic        finite-diff     rel err");
    for (i, c) in [(0usize, 0usize), (3, 2), (7, 5)] {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[[i, c]] += h;
        xm[[i, c]] -= h;
        let fd_m = (missing_modality_loss(&MiniBatch::new(xp.clone(), y.clone(), b.clone())?)
            - missing_modality_loss(&MiniBatch::new(xm.clone(), y.clone(), b.clone())?))
            / (2.0 * h);
        let fd_t = (triplet_hard_loss(&xp, &y, 0.2) - triplet_hard_loss(&xm, &y, 0.2)) / (2.0 * h);
        for (name, a, fd) in [("missing", g_m[[i, c]], fd_m), ("triplet", g_t[[i, c]], fd_t)] {
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            println!("{name} ({i},{c})  {a:>14.9}  {fd:>14.9}  {rel:.2e}");
        }
    }
    Ok(())
}
