//! The acceptance gate: every release-blocking criterion in one place, one
//! pass/fail line each. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines as they complete; the test fails if any criterion fails.

mod common;

use avtnet::data::{
    ablate_dataset, generate_synthetic_dataset, load_sample, materialize_dataset, split_dataset,
    ModalitySample, Split, SyntheticOpts,
};
use avtnet::eval::{emit_report, evaluate_conditions, ConditionReport};
use avtnet::losses::{
    missing_modality_loss, missing_modality_loss_grad, triplet_hard_loss, triplet_hard_loss_grad,
};
use avtnet::mining::{build_masks, MiniBatch};
use avtnet::model::{AvtNetConfig, BatchInputs};
use avtnet::training::{
    export_embeddings, train_embeddings, train_end_to_end, train_recognizer, TrainConfig,
};
use avtnet::variants::{build_variant, BuiltVariant, VariantConfig};
use common::{
    oracle_missing_modality_loss, oracle_triplet_hard_loss, perturb_ties, random_batch, seeded,
};
use ndarray::array;
use rand::Rng;
use std::time::Instant;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn check(&mut self, n: usize, name: &str, result: std::result::Result<(), String>) {
        match result {
            Ok(()) => println!("PASS criterion {n}: {name}"),
            Err(why) => {
                println!("FAIL criterion {n}: {name}: {why}");
                self.failures.push(format!("criterion {n}: {name}: {why}"));
            }
        }
    }
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[1]
}

#[test]
fn acceptance() {
    let mut gate = Gate { failures: Vec::new() };

    gate.check(1, "mining oracle equivalence (200 batches, 1e-6)", criterion_1());
    gate.check(2, "mask definitional tests (hand case + 1000 draws)", criterion_2());
    gate.check(3, "gradient verification (50 batches, rel < 1e-4)", criterion_3());
    gate.check(4, "model invariants (norms, attention, shared latent)", criterion_4());

    // Criteria 5-7 share one toy dataset and its trained models.
    match toy_experiment() {
        Ok((smoke, reports)) => {
            gate.check(5, "toy smoke experiment (3-seed median, <= 10 min)", smoke);
            gate.check(7, "report fidelity (columns, avg, byte-identical)", criterion_7(&reports));
        }
        Err(why) => {
            gate.check(5, "toy smoke experiment (3-seed median, <= 10 min)", Err(why.clone()));
            gate.check(7, "report fidelity (columns, avg, byte-identical)", Err(why));
        }
    }
    gate.check(6, "comparative structure check (Prop >= E2E, skewed noise)", criterion_6());
    gate.check(8, "pipeline counts (ablation x4, exact zeros, split determinism)", criterion_8());

    assert!(
        gate.failures.is_empty(),
        "acceptance failures:\n{}",
        gate.failures.join("\n")
    );
}

fn criterion_1() -> std::result::Result<(), String> {
    let t0 = Instant::now();
    let mut rng = seeded(0x0acc_0001);
    for case in 0..200 {
        let b = random_batch(&mut rng);
        let want_m = oracle_missing_modality_loss(&b.x, &b.y, &b.b);
        let want_t = oracle_triplet_hard_loss(&b.x, &b.y, 0.2);
        let got_t = triplet_hard_loss(&b.x, &b.y, 0.2);
        let got_m = missing_modality_loss(&MiniBatch::new(b.x, b.y, b.b).unwrap());
        if (got_m - want_m).abs() >= 1e-6 {
            return Err(format!("missing-modality case {case}: {got_m} vs oracle {want_m}"));
        }
        if (got_t - want_t).abs() >= 1e-6 {
            return Err(format!("triplet case {case}: {got_t} vs oracle {want_t}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("took {secs:.1} s, budget 30 s"));
    }
    Ok(())
}

fn criterion_2() -> std::result::Result<(), String> {
    let m = build_masks(&[1, 1, 2], &[true, false, true]);
    let hand = [
        ("A_p", &m.a_p, array![[1u8, 1, 0], [1, 1, 0], [0, 0, 1]]),
        ("A_v", &m.a_v, array![[1u8, 0, 1], [0, 0, 0], [1, 0, 1]]),
        ("A_m", &m.a_m, array![[0u8, 1, 0], [1, 1, 1], [0, 1, 0]]),
        ("A_pv", &m.a_pv, array![[0u8, 0, 0], [0, 0, 0], [0, 0, 0]]),
        ("A_n", &m.a_n, array![[0u8, 0, 1], [0, 0, 1], [1, 1, 0]]),
        ("A_nv", &m.a_nv, array![[0u8, 0, 1], [0, 0, 0], [1, 0, 0]]),
    ];
    for (name, got, want) in hand {
        if *got != want {
            return Err(format!("hand-enumerated {name} mismatch: {got:?}"));
        }
    }
    let mut rng = seeded(0x0acc_0002);
    for draw in 0..1000 {
        let k = rng.gen_range(2..=12);
        let y: Vec<u32> = (0..k).map(|_| rng.gen_range(0..5)).collect();
        let b: Vec<bool> = (0..k).map(|_| rng.gen()).collect();
        let m = build_masks(&y, &b);
        for i in 0..k {
            if m.a_pv[[i, i]] != 0 {
                return Err(format!("draw {draw}: diagonal of A_pv not cleared"));
            }
            for j in 0..k {
                let ok = m.a_p[[i, j]] == u8::from(y[i] == y[j])
                    && m.a_v[[i, j]] == u8::from(b[i] && b[j])
                    && m.a_m[[i, j]] == 1 - m.a_v[[i, j]]
                    && m.a_n[[i, j]] == 1 - m.a_p[[i, j]]
                    && m.a_nv[[i, j]] == m.a_n[[i, j]] * m.a_v[[i, j]]
                    && (i == j || m.a_pv[[i, j]] == m.a_p[[i, j]] * m.a_v[[i, j]]);
                if !ok {
                    return Err(format!("draw {draw}: invariant broken at ({i},{j})"));
                }
            }
        }
    }
    Ok(())
}

fn criterion_3() -> std::result::Result<(), String> {
    let t0 = Instant::now();
    let h = 1e-5;
    let mut rng = seeded(0x0acc_0003);
    for case in 0..50 {
        let mut b = random_batch(&mut rng);
        perturb_ties(&mut b.x, &b.y, 0.2, &mut rng);
        let batch = MiniBatch::new(b.x.clone(), b.y.clone(), b.b.clone()).unwrap();
        let (_, g_m) = missing_modality_loss_grad(&batch);
        let (_, g_t) = triplet_hard_loss_grad(&b.x, &b.y, 0.2);
        for i in 0..b.x.nrows() {
            for c in 0..b.x.ncols() {
                let mut xp = b.x.clone();
                let mut xm = b.x.clone();
                xp[[i, c]] += h;
                xm[[i, c]] -= h;
                let fd_m = (missing_modality_loss(
                    &MiniBatch::new(xp.clone(), b.y.clone(), b.b.clone()).unwrap(),
                ) - missing_modality_loss(
                    &MiniBatch::new(xm.clone(), b.y.clone(), b.b.clone()).unwrap(),
                )) / (2.0 * h);
                let fd_t =
                    (triplet_hard_loss(&xp, &b.y, 0.2) - triplet_hard_loss(&xm, &b.y, 0.2))
                        / (2.0 * h);
                for (name, analytic, fd) in
                    [("missing", g_m[[i, c]], fd_m), ("triplet", g_t[[i, c]], fd_t)]
                {
                    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
                    if rel >= 1e-4 {
                        return Err(format!(
                            "{name} case {case} entry ({i},{c}): analytic {analytic}, fd {fd}"
                        ));
                    }
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.1} s, budget 60 s"));
    }
    Ok(())
}

fn criterion_4() -> std::result::Result<(), String> {
    let opts = SyntheticOpts::toy();
    let base = generate_synthetic_dataset(2, 4, 99, &opts).map_err(|e| e.to_string())?;
    let samples = ablate_dataset(&base[..2]).map_err(|e| e.to_string())?;
    let refs: Vec<&ModalitySample> = samples.iter().collect();
    let inputs = BatchInputs::from_samples(&refs).map_err(|e| e.to_string())?;
    let variant = VariantConfig::by_name("Prop").map_err(|e| e.to_string())?;
    let arch = AvtNetConfig::toy(2);
    let BuiltVariant::Embedding { mut net, .. } = build_variant(&variant, &arch, 7) else {
        return Err("Prop should build an embedding network".into());
    };
    let out = net.forward(&inputs);
    for (name, e) in [
        ("e_s", out.e_s.as_ref()),
        ("e_c", out.e_c.as_ref()),
        ("e_t", out.e_t.as_ref()),
        ("e_j", Some(&out.e_j)),
    ] {
        let Some(e) = e else {
            return Err(format!("{name} missing from the Prop outputs"));
        };
        for (i, row) in e.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() >= 1e-5 {
                return Err(format!("{name} row {i} norm {norm}"));
            }
        }
    }
    let Some(att) = net.last_attention() else {
        return Err("transformer joint branch produced no attention".into());
    };
    let (k, heads, q, _) = att.dim();
    for s in 0..k {
        for hd in 0..heads {
            for r in 0..q {
                let sum: f64 = att
                    .index_axis(ndarray::Axis(0), s)
                    .index_axis(ndarray::Axis(0), hd)
                    .row(r)
                    .sum();
                if (sum - 1.0).abs() >= 1e-6 {
                    return Err(format!("attention row sums to {sum}"));
                }
            }
        }
    }
    // the two ablation groups: rows 1 and 5 both miss audio (samples are
    // ordered original, -noa, -nov, -not per base sample)
    let e_s = out.e_s.as_ref().unwrap();
    let diff: f64 = (&e_s.row(1) - &e_s.row(5)).mapv(f64::abs).sum();
    if diff >= 1e-6 {
        return Err(format!("missing-audio samples diverge in e_s by {diff}"));
    }
    Ok(())
}

struct SeedOutcome {
    report: ConditionReport,
}

fn run_embedding_seed(
    samples_train: &[ModalitySample],
    samples_test: &[ModalitySample],
    variant: &VariantConfig,
    arch: &AvtNetConfig,
    seed: u64,
    n_classes: u32,
) -> std::result::Result<SeedOutcome, String> {
    let cfg = TrainConfig {
        phase1_epochs: 15,
        phase2_epochs: 15,
        seed,
        toy_scale: true,
        ..TrainConfig::default()
    };
    let BuiltVariant::Embedding {
        mut net,
        mut recognizer,
    } = build_variant(variant, arch, seed)
    else {
        return Err("expected an embedding variant".into());
    };
    train_embeddings(&mut net, samples_train, variant, &cfg, None).map_err(|e| e.to_string())?;
    let train_table =
        export_embeddings(&mut net, samples_train, cfg.batch_size).map_err(|e| e.to_string())?;
    let test_table =
        export_embeddings(&mut net, samples_test, cfg.batch_size).map_err(|e| e.to_string())?;
    train_recognizer(&mut recognizer, &train_table, variant, n_classes, &cfg)
        .map_err(|e| e.to_string())?;
    let report =
        evaluate_conditions(&mut recognizer, &test_table, variant, seed).map_err(|e| e.to_string())?;
    Ok(SeedOutcome { report })
}

/// Build the shared toy dataset (8 subjects x 20 samples, quadrupled by
/// ablation), materialize and split it the same way the CLI does, and train
/// Prop for three seeds.
fn toy_experiment() -> std::result::Result<(std::result::Result<(), String>, Vec<ConditionReport>), String>
{
    let t0 = Instant::now();
    let opts = SyntheticOpts::toy();
    let base = generate_synthetic_dataset(8, 20, 42, &opts).map_err(|e| e.to_string())?;
    let all = ablate_dataset(&base).map_err(|e| e.to_string())?;
    if all.len() != 640 {
        return Err(format!("expected 640 samples after ablation, got {}", all.len()));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = materialize_dataset(dir.path(), &all, 8, 42).map_err(|e| e.to_string())?;
    let manifest = split_dataset(&manifest, 0.25, 42).map_err(|e| e.to_string())?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.entries {
        let s = load_sample(dir.path(), e).map_err(|e| e.to_string())?;
        match e.split {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }
    let variant = VariantConfig::by_name("Prop").map_err(|e| e.to_string())?;
    let arch = AvtNetConfig::toy(8);
    let mut reports = Vec::new();
    for seed in [41u64, 42, 43] {
        let outcome = run_embedding_seed(&train, &test, &variant, &arch, seed, 8)?;
        reports.push(outcome.report);
    }
    let secs = t0.elapsed().as_secs_f64();

    let median_for = |cond: &str| {
        let mut v = [0.0f64; 3];
        for (i, r) in reports.iter().enumerate() {
            v[i] = r.accuracy(cond).unwrap_or(0.0);
        }
        median3(v)
    };
    let mut smoke: std::result::Result<(), String> = Ok(());
    let nm = median_for("no_missing");
    if nm < 0.90 {
        smoke = Err(format!("no-missing median {nm:.4} below 0.90"));
    }
    for cond in ["miss_audio", "miss_visible", "miss_thermal"] {
        let m = median_for(cond);
        if m < 0.80 {
            smoke = Err(format!("{cond} median {m:.4} below 0.80"));
        }
    }
    if secs > 600.0 {
        smoke = Err(format!("took {secs:.0} s, budget 600 s"));
    }
    Ok((smoke, reports))
}

fn criterion_6() -> std::result::Result<(), String> {
    let mut opts = SyntheticOpts::toy();
    opts.noise = 0.25;
    opts.modality_noise = [6.0, 1.5, 1.5];
    let base = generate_synthetic_dataset(8, 20, 42, &opts).map_err(|e| e.to_string())?;
    let all = ablate_dataset(&base).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = materialize_dataset(dir.path(), &all, 8, 42).map_err(|e| e.to_string())?;
    let manifest = split_dataset(&manifest, 0.25, 42).map_err(|e| e.to_string())?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.entries {
        let s = load_sample(dir.path(), e).map_err(|e| e.to_string())?;
        match e.split {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }
    let arch = AvtNetConfig::toy(8);
    let prop = VariantConfig::by_name("Prop").map_err(|e| e.to_string())?;
    let e2e = VariantConfig::by_name("E2E").map_err(|e| e.to_string())?;
    let mut prop_avgs = [0.0f64; 3];
    let mut e2e_avgs = [0.0f64; 3];
    for (i, seed) in [41u64, 42, 43].into_iter().enumerate() {
        prop_avgs[i] = run_embedding_seed(&train, &test, &prop, &arch, seed, 8)?.report.avg;

        let cfg = TrainConfig {
            phase1_epochs: 15,
            phase2_epochs: 15,
            seed,
            toy_scale: true,
            ..TrainConfig::default()
        };
        let BuiltVariant::EndToEnd(mut net) = build_variant(&e2e, &arch, seed) else {
            return Err("E2E should build an end-to-end network".into());
        };
        train_end_to_end(&mut net, &train, &cfg).map_err(|e| e.to_string())?;
        net.set_training(false);
        let mut labels = Vec::new();
        let mut validities = Vec::new();
        let mut rows = Vec::new();
        for chunk in test.chunks(32) {
            let refs: Vec<&ModalitySample> = chunk.iter().collect();
            let inputs = BatchInputs::from_samples(&refs).map_err(|e| e.to_string())?;
            let logits = net.forward(&inputs).map_err(|e| e.to_string())?;
            for (bi, s) in chunk.iter().enumerate() {
                labels.push(s.subject_id);
                validities.push(s.validity);
                rows.push(logits.row(bi).to_owned());
            }
        }
        let mut all_logits = ndarray::Array2::zeros((rows.len(), 8));
        for (ri, row) in rows.iter().enumerate() {
            all_logits.row_mut(ri).assign(row);
        }
        let report = avtnet::eval::conditions_from_logits(
            &all_logits,
            &labels,
            &validities,
            "E2E",
            seed,
        )
        .map_err(|e| e.to_string())?;
        e2e_avgs[i] = report.avg;
    }
    let p = median3(prop_avgs);
    let e = median3(e2e_avgs);
    if p < e {
        return Err(format!("Prop median avg {p:.4} below E2E median avg {e:.4}"));
    }
    println!("  (Prop median avg {p:.4}, E2E median avg {e:.4})");
    Ok(())
}

fn criterion_7(reports: &[ConditionReport]) -> std::result::Result<(), String> {
    let text_a = emit_report(reports).map_err(|e| e.to_string())?;
    let text_b = emit_report(reports).map_err(|e| e.to_string())?;
    if text_a != text_b {
        return Err("report text differs between identical runs".into());
    }
    let header = text_a
        .lines()
        .find(|l| l.starts_with("Algorithm"))
        .ok_or("missing header line")?;
    for col in ["No-Missing", "Miss. Visible", "Miss. Thermal", "Miss. Audio", "Avg"] {
        if !header.contains(col) {
            return Err(format!("header misses column '{col}'"));
        }
    }
    for r in reports {
        let accs: Vec<f64> = r.conditions.values().filter_map(|c| c.map(|(a, _)| a)).collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        if (mean - r.avg).abs() >= 1e-9 {
            return Err(format!("avg {} differs from row mean {mean}", r.avg));
        }
    }
    Ok(())
}

fn criterion_8() -> std::result::Result<(), String> {
    let opts = SyntheticOpts::toy();
    let base = generate_synthetic_dataset(3, 4, 7, &opts).map_err(|e| e.to_string())?;
    let all = ablate_dataset(&base).map_err(|e| e.to_string())?;
    if all.len() != base.len() * 4 {
        return Err(format!("{} base samples became {}", base.len(), all.len()));
    }
    for s in &all {
        if !s.validity.audio && s.spectrogram.iter().any(|&v| v != 0.0) {
            return Err(format!("{}: ablated spectrogram not exactly zero", s.sample_id));
        }
        if !s.validity.visible && s.visible.iter().any(|&v| v != 0.0) {
            return Err(format!("{}: ablated visible not exactly zero", s.sample_id));
        }
        if !s.validity.thermal && s.thermal.iter().any(|&v| v != 0.0) {
            return Err(format!("{}: ablated thermal not exactly zero", s.sample_id));
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = materialize_dataset(dir.path(), &all, 3, 7).map_err(|e| e.to_string())?;
    let a = split_dataset(&manifest, 0.25, 5).map_err(|e| e.to_string())?;
    let b = split_dataset(&manifest, 0.25, 5).map_err(|e| e.to_string())?;
    for (x, y) in a.entries.iter().zip(&b.entries) {
        if x.split != y.split {
            return Err(format!("split of {} differs across identical seeds", x.sample_id));
        }
    }
    Ok(())
}
