//! The `avtnet` command line: dataset synthesis and preparation, two-phase
//! training of a named variant, per-condition evaluation, report aggregation,
//! and a self-check (`verify`) that replays the oracle and gradient suites.

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::data::{
    ablate_dataset, generate_synthetic_dataset, ingest_real_data, load_sample, materialize_dataset,
    read_manifest, split_dataset, write_manifest, DatasetManifest, ModalitySample, ShapeConfig,
    SpectrogramConfig, Split, SyntheticOpts, Validity,
};
use crate::eval::{conditions_from_logits, emit_report, evaluate_conditions, ConditionReport};
use crate::losses::{missing_modality_loss, missing_modality_loss_grad, triplet_hard_loss, triplet_hard_loss_grad};
use crate::mining::{build_masks, loss_components, pairwise_distances, MiniBatch};
use crate::model::{
    load_params, read_checkpoint_meta, save_params, AvtNet, AvtNetConfig, AvtNetStructure,
    BatchInputs, Recognizer,
};
use crate::training::{
    export_embeddings, read_embedding_table, train_embeddings, train_end_to_end, train_recognizer,
    write_embedding_table, TrainConfig,
};
use crate::variants::{build_variant, BuiltVariant, E2eNet, VariantConfig};
use crate::{AvtError, Result};

#[derive(Parser, Debug)]
#[command(name = "avtnet", about = "Trimodal person recognition robust to missing modalities")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
    /// TOML config file overriding dataset and schedule defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Model variant name (see `train --variant nosuch` for the list).
    #[arg(long, global = true, default_value = "Prop")]
    pub variant: String,
    /// Toy-scale tensor shapes (64x64 images, 64x128 spectrograms).
    #[arg(long, global = true)]
    pub toy: bool,
    /// Output directory; all artifact paths are relative to it.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate, ablate, split and materialize a synthetic dataset.
    Synth,
    /// Ingest real data from a raw CSV manifest, then ablate and split.
    Prep {
        /// CSV with columns sample_id, subject_id, audio_path, visible_path,
        /// thermal_path pointing at `.npy` files.
        #[arg(long)]
        input: PathBuf,
    },
    /// Phase 1 + phase 2 training for the selected variant.
    Train,
    /// Per-missing-condition accuracy of a trained variant.
    Eval,
    /// Aggregate all evaluation JSON files into the comparison tables.
    Report,
    /// Replay the oracle / gradient / invariant suites; non-zero exit on any failure.
    Verify,
}

/// Optional TOML overrides: `[synth]` for dataset generation, `[train]` for
/// the schedule.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    synth: SynthSection,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    n_subjects: u32,
    samples_per_subject: usize,
    noise: f64,
    modality_noise: [f64; 3],
    test_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            samples_per_subject: 20,
            noise: 0.08,
            modality_noise: [1.0, 1.0, 1.0],
            test_fraction: 0.25,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    phase1_epochs: Option<usize>,
    phase2_epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    margin: Option<f64>,
    stratified_batches: Option<bool>,
    checkpoint_every: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| AvtError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn train_config(cli: &Cli, file: &FileConfig) -> TrainConfig {
    let t = &file.train;
    let mut cfg = TrainConfig {
        seed: cli.seed,
        toy_scale: cli.toy,
        ..TrainConfig::default()
    };
    if let Some(v) = t.phase1_epochs {
        cfg.phase1_epochs = v;
    }
    if let Some(v) = t.phase2_epochs {
        cfg.phase2_epochs = v;
    }
    if let Some(v) = t.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = t.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = t.margin {
        cfg.margin = v;
    }
    if let Some(v) = t.stratified_batches {
        cfg.stratified_batches = v;
    }
    if let Some(v) = t.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    cfg
}

fn data_dir(cli: &Cli) -> PathBuf {
    cli.out.join("data")
}

fn manifest_path(cli: &Cli) -> PathBuf {
    data_dir(cli).join("manifest.csv")
}

fn model_dir(cli: &Cli) -> PathBuf {
    cli.out
        .join("models")
        .join(format!("{}-seed{}", cli.variant, cli.seed))
}

fn table_path(cli: &Cli, split: &str) -> PathBuf {
    cli.out
        .join("embeddings")
        .join(format!("{}-seed{}-{split}.csv", cli.variant, cli.seed))
}

fn report_path(cli: &Cli) -> PathBuf {
    cli.out
        .join("reports")
        .join(format!("{}-seed{}.json", cli.variant, cli.seed))
}

/// Top-level dispatch; returns the process exit code.
pub fn run(cli: &Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    match &cli.cmd {
        Cmd::Synth => cmd_synth(cli, &file),
        Cmd::Prep { input } => cmd_prep(cli, &file, input),
        Cmd::Train => cmd_train(cli, &file),
        Cmd::Eval => cmd_eval(cli),
        Cmd::Report => cmd_report(cli),
        Cmd::Verify => cmd_verify(),
    }
}

/// Entry point for the binary: maps errors to exit codes (2 for an unknown
/// variant, 1 otherwise).
pub fn main_with_exit() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e @ AvtError::UnknownVariant(..)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn synth_opts(cli: &Cli, s: &SynthSection) -> SyntheticOpts {
    let mut opts = if cli.toy {
        SyntheticOpts::toy()
    } else {
        SyntheticOpts::full_scale()
    };
    opts.noise = s.noise;
    opts.modality_noise = s.modality_noise;
    opts
}

fn finish_dataset(
    cli: &Cli,
    samples: &[ModalitySample],
    n_classes: u32,
    test_fraction: f64,
) -> Result<()> {
    let ablated = ablate_dataset(samples)?;
    let dir = data_dir(cli);
    let manifest = materialize_dataset(&dir, &ablated, n_classes, cli.seed)?;
    let manifest = split_dataset(&manifest, test_fraction, cli.seed)?;
    write_manifest(&manifest_path(cli), &manifest)?;
    let train = manifest.split_entries(Split::Train).len();
    let test = manifest.split_entries(Split::Test).len();
    println!(
        "materialized {} samples ({train} train / {test} test) under {}",
        manifest.entries.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_synth(cli: &Cli, file: &FileConfig) -> Result<()> {
    let s = &file.synth;
    let opts = synth_opts(cli, s);
    let samples =
        generate_synthetic_dataset(s.n_subjects, s.samples_per_subject, cli.seed, &opts)?;
    finish_dataset(cli, &samples, s.n_subjects, s.test_fraction)
}

fn cmd_prep(cli: &Cli, file: &FileConfig, input: &Path) -> Result<()> {
    let shapes = if cli.toy {
        ShapeConfig::toy()
    } else {
        ShapeConfig::full()
    };
    let spec_cfg = if cli.toy {
        SpectrogramConfig::toy()
    } else {
        SpectrogramConfig::full()
    };
    let samples = ingest_real_data(input, &shapes, &spec_cfg, spec_cfg.sample_rate)?;
    let n_classes = samples
        .iter()
        .map(|s| s.subject_id)
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| AvtError::Dataset("no samples ingested".into()))?;
    finish_dataset(cli, &samples, n_classes, file.synth.test_fraction)
}

fn arch_for(cli: &Cli, n_classes: u32) -> AvtNetConfig {
    if cli.toy {
        AvtNetConfig::toy(n_classes)
    } else {
        AvtNetConfig::full(n_classes)
    }
}

fn load_split(cli: &Cli, manifest: &DatasetManifest, split: Split) -> Result<Vec<ModalitySample>> {
    let base = data_dir(cli);
    let mut out = Vec::new();
    for e in manifest.split_entries(split) {
        match load_sample(&base, e) {
            Ok(s) => out.push(s),
            Err(err) => log::error!("skipping sample {}: {err}", e.sample_id),
        }
    }
    if out.is_empty() {
        return Err(AvtError::Dataset(format!("no loadable samples in {split:?} split")));
    }
    Ok(out)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| AvtError::Serde(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_train(cli: &Cli, file: &FileConfig) -> Result<()> {
    let variant = VariantConfig::by_name(&cli.variant)?;
    let manifest = read_manifest(&manifest_path(cli))?;
    let cfg = train_config(cli, file);
    let train_samples = load_split(cli, &manifest, Split::Train)?;
    let arch = arch_for(cli, manifest.n_classes);
    let mdir = model_dir(cli);
    std::fs::create_dir_all(&mdir)?;
    match build_variant(&variant, &arch, cli.seed) {
        BuiltVariant::EndToEnd(mut net) => {
            let history = train_end_to_end(&mut net, &train_samples, &cfg)?;
            let extra = serde_json::json!({ "variant": variant, "arch": arch });
            save_params(&mdir.join("final"), &mut net, extra)?;
            write_json(&mdir.join("phase1_log.json"), &history)?;
            println!(
                "trained {} for {} epochs, final train accuracy {:.4}",
                cli.variant,
                history.len(),
                history.last().map_or(0.0, |h| h.accuracy)
            );
        }
        BuiltVariant::Embedding {
            mut net,
            mut recognizer,
        } => {
            let history =
                train_embeddings(&mut net, &train_samples, &variant, &cfg, Some(&mdir))?;
            write_json(&mdir.join("phase1_log.json"), &history)?;
            let train_table = export_embeddings(&mut net, &train_samples, cfg.batch_size)?;
            write_embedding_table(&table_path(cli, "train"), &train_table)?;
            let test_samples = load_split(cli, &manifest, Split::Test)?;
            let test_table = export_embeddings(&mut net, &test_samples, cfg.batch_size)?;
            write_embedding_table(&table_path(cli, "test"), &test_table)?;
            let rec_history =
                train_recognizer(&mut recognizer, &train_table, &variant, manifest.n_classes, &cfg)?;
            write_json(&mdir.join("phase2_log.json"), &rec_history)?;
            let extra = serde_json::json!({ "variant": variant, "arch": arch, "kind": "recognizer" });
            save_params(&mdir.join("recognizer"), &mut recognizer, extra)?;
            println!(
                "trained {} ({} + {} epochs), final phase-2 train accuracy {:.4}",
                cli.variant,
                history.len(),
                rec_history.len(),
                rec_history.last().map_or(0.0, |h| h.accuracy)
            );
        }
    }
    Ok(())
}

fn cmd_eval(cli: &Cli) -> Result<()> {
    let variant = VariantConfig::by_name(&cli.variant)?;
    let manifest = read_manifest(&manifest_path(cli))?;
    let arch = arch_for(cli, manifest.n_classes);
    let mdir = model_dir(cli);
    let report: ConditionReport = if variant.end_to_end {
        let mut net = E2eNet::new(arch, cli.seed);
        load_params(&mdir.join("final"), &mut net)?;
        net.set_training(false);
        let test_samples = load_split(cli, &manifest, Split::Test)?;
        let mut labels = Vec::new();
        let mut validities: Vec<Validity> = Vec::new();
        let mut logits_rows = Vec::new();
        for chunk in test_samples.chunks(32) {
            let refs: Vec<&ModalitySample> = chunk.iter().collect();
            let inputs = BatchInputs::from_samples(&refs)?;
            let logits = net.forward(&inputs)?;
            for (i, s) in chunk.iter().enumerate() {
                labels.push(s.subject_id);
                validities.push(s.validity);
                logits_rows.push(logits.row(i).to_owned());
            }
        }
        let mut all = ndarray::Array2::zeros((logits_rows.len(), manifest.n_classes as usize));
        for (i, row) in logits_rows.iter().enumerate() {
            all.row_mut(i).assign(row);
        }
        conditions_from_logits(&all, &labels, &validities, &variant.display_name(), cli.seed)?
    } else {
        // rebuild the recognizer at the checkpointed width, then score the
        // exported test table
        let meta = read_checkpoint_meta(&mdir.join("recognizer"))?;
        let _ = meta; // width is implied by the variant structure
        let net = AvtNet::new(arch.clone(), variant.structure.clone(), cli.seed);
        let mut rec = Recognizer::new(
            cli.seed ^ 0x5eed,
            arch.embed_dim * net.n_embeddings(),
            arch.recognizer_dense,
            manifest.n_classes,
        );
        load_params(&mdir.join("recognizer"), &mut rec)?;
        let table = read_embedding_table(&table_path(cli, "test"))?;
        evaluate_conditions(&mut rec, &table, &variant, cli.seed)?
    };
    write_json(&report_path(cli), &report)?;
    println!(
        "{}: avg accuracy {:.2}% over {} test samples -> {}",
        report.variant,
        report.avg * 100.0,
        report.n_samples(),
        report_path(cli).display()
    );
    Ok(())
}

fn cmd_report(cli: &Cli) -> Result<()> {
    let dir = cli.out.join("reports");
    let mut reports = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let r: ConditionReport =
            serde_json::from_str(&text).map_err(|e| AvtError::Serde(format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    let text = emit_report(&reports)?;
    std::fs::write(cli.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

// --- verify: self-contained replays of the property suites ---

/// Brute-force reference for the mining components: triple loops over the
/// definitional candidate sets, no mask algebra.
fn brute_force_components(
    x: &ndarray::Array2<f64>,
    y: &[u32],
    b: &[bool],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = x.nrows();
    let d = |i: usize, j: usize| {
        let diff = &x.row(i) - &x.row(j);
        diff.dot(&diff).sqrt()
    };
    let mut ap = vec![0.0; k];
    let mut an = vec![0.0; k];
    let mut am = vec![0.0; k];
    for i in 0..k {
        let mut best_ap: f64 = 0.0;
        let mut best_an = f64::INFINITY;
        let mut best_am = f64::INFINITY;
        for j in 0..k {
            if j != i && y[j] == y[i] && b[j] && b[i] {
                best_ap = best_ap.max(d(i, j));
            }
            if y[j] != y[i] && b[j] && b[i] {
                best_an = best_an.min(d(i, j));
            }
            if !b[j] {
                best_am = best_am.min(d(i, j));
            }
        }
        ap[i] = best_ap;
        an[i] = if best_an.is_finite() { best_an } else { 0.0 };
        am[i] = if best_am.is_finite() { best_am } else { 0.0 };
    }
    (ap, an, am)
}

fn random_batch(rng: &mut ChaCha8Rng, k: usize, dim: usize, n_classes: u32) -> MiniBatch {
    let x = ndarray::Array2::from_shape_fn((k, dim), |_| rng.gen_range(-1.0..1.0));
    let y: Vec<u32> = (0..k).map(|_| rng.gen_range(0..n_classes)).collect();
    let b: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.75)).collect();
    MiniBatch::new(x, y, b).unwrap()
}

fn check(name: &str, ok: bool, failures: &mut usize) {
    if ok {
        println!("PASS {name}");
    } else {
        println!("FAIL {name}");
        *failures += 1;
    }
}

fn cmd_verify() -> Result<()> {
    let mut failures = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);

    let mut oracle_ok = true;
    for _ in 0..50 {
        let batch = random_batch(&mut rng, 16, 8, 4);
        let p = pairwise_distances(&batch.x);
        let masks = build_masks(&batch.y, &batch.b);
        let comps = loss_components(&p, &masks, &batch.b);
        let (ap, an, am) = brute_force_components(&batch.x, &batch.y, &batch.b);
        for i in 0..batch.len() {
            if !batch.b[i] {
                continue;
            }
            if (comps.d_ap[i] - ap[i]).abs() > 1e-6
                || (comps.d_an[i] - an[i]).abs() > 1e-6
                || (comps.d_am[i] - am[i]).abs() > 1e-6
            {
                oracle_ok = false;
            }
        }
    }
    check("mining components match the brute-force oracle (50 batches)", oracle_ok, &mut failures);

    let mut mask_ok = true;
    for _ in 0..200 {
        let k = rng.gen_range(2..12);
        let y: Vec<u32> = (0..k).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.7)).collect();
        let m = build_masks(&y, &b);
        for i in 0..k {
            for j in 0..k {
                let (i, j) = (i as usize, j as usize);
                if m.a_m[[i, j]] != 1 - m.a_v[[i, j]] {
                    mask_ok = false;
                }
                if i == j && m.a_pv[[i, j]] != 0 {
                    mask_ok = false;
                }
                if i != j && m.a_pv[[i, j]] != m.a_p[[i, j]] * m.a_v[[i, j]] {
                    mask_ok = false;
                }
                if m.a_nv[[i, j]] != (1 - m.a_p[[i, j]]) * m.a_v[[i, j]] {
                    mask_ok = false;
                }
            }
        }
    }
    check("mask algebra invariants (200 draws)", mask_ok, &mut failures);

    let mut grad_ok = true;
    let h = 1e-5;
    for _ in 0..5 {
        let batch = random_batch(&mut rng, 10, 6, 3);
        let (_, g) = missing_modality_loss_grad(&batch);
        for i in 0..batch.len() {
            for c in 0..batch.x.ncols() {
                let mut bp = batch.clone();
                let mut bm = batch.clone();
                bp.x[[i, c]] += h;
                bm.x[[i, c]] -= h;
                let fd = (missing_modality_loss(&bp) - missing_modality_loss(&bm)) / (2.0 * h);
                let denom = fd.abs().max(g[[i, c]].abs()).max(1e-6);
                if (fd - g[[i, c]]).abs() / denom > 1e-4 {
                    grad_ok = false;
                }
            }
        }
        let (_, gt) = triplet_hard_loss_grad(&batch.x, &batch.y, 0.2);
        for i in 0..batch.len() {
            for c in 0..batch.x.ncols() {
                let mut xp = batch.x.clone();
                let mut xm = batch.x.clone();
                xp[[i, c]] += h;
                xm[[i, c]] -= h;
                let fd = (triplet_hard_loss(&xp, &batch.y, 0.2)
                    - triplet_hard_loss(&xm, &batch.y, 0.2))
                    / (2.0 * h);
                let denom = fd.abs().max(gt[[i, c]].abs()).max(1e-6);
                if (fd - gt[[i, c]]).abs() / denom > 1e-4 {
                    grad_ok = false;
                }
            }
        }
    }
    check("analytic gradients match central differences (5 batches)", grad_ok, &mut failures);

    let arch = AvtNetConfig {
        shapes: ShapeConfig {
            n_mels: 8,
            n_frames: 16,
            image_h: 24,
            image_w: 24,
        },
        audio_filters: 4,
        audio_kernel: 3,
        image_filters: 4,
        feature_dim: 8,
        embed_dim: 16,
        transformer_heads: 2,
        transformer_ff: 8,
        transformer_width: 8,
        recognizer_dense: (16, 8),
        n_classes: 2,
    };
    let mut net = AvtNet::new(arch.clone(), AvtNetStructure::default(), 1);
    let samples: Vec<ModalitySample> = (0..4)
        .map(|i| {
            let validity = if i < 2 {
                Validity {
                    audio: false,
                    ..Validity::ALL_VALID
                }
            } else {
                Validity::ALL_VALID
            };
            let mut s = ModalitySample {
                sample_id: format!("v{i}"),
                subject_id: i % 2,
                spectrogram: ndarray::Array2::from_shape_fn(
                    (arch.shapes.n_mels, arch.shapes.n_frames),
                    |_| rng.gen_range(-1.0..1.0),
                ),
                visible: ndarray::Array3::from_shape_fn(
                    (arch.shapes.image_h, arch.shapes.image_w, 3),
                    |_| rng.gen_range(0.0..1.0),
                ),
                thermal: ndarray::Array3::from_shape_fn(
                    (arch.shapes.image_h, arch.shapes.image_w, 1),
                    |_| rng.gen_range(0.0..1.0),
                ),
                validity,
            };
            if !validity.audio {
                s.spectrogram.fill(0.0);
            }
            s
        })
        .collect();
    let refs: Vec<&ModalitySample> = samples.iter().collect();
    let out = net.forward(&BatchInputs::from_samples(&refs)?);
    let mut model_ok = true;
    for e in [out.e_s.as_ref(), out.e_c.as_ref(), out.e_t.as_ref(), Some(&out.e_j)] {
        for row in e.unwrap().rows() {
            if (row.dot(&row).sqrt() - 1.0).abs() > 1e-5 {
                model_ok = false;
            }
        }
    }
    let e_s = out.e_s.as_ref().unwrap();
    if (&e_s.row(0) - &e_s.row(1)).mapv(f64::abs).sum() > 1e-6 {
        model_ok = false;
    }
    if let Some(att) = net.last_attention() {
        let (k, heads, s, _) = att.dim();
        for bi in 0..k {
            for hh in 0..heads {
                for i in 0..s {
                    let sum: f64 = (0..s).map(|j| att[[bi, hh, i, j]]).sum();
                    if (sum - 1.0).abs() > 1e-6 {
                        model_ok = false;
                    }
                }
            }
        }
    } else {
        model_ok = false;
    }
    check(
        "model invariants (unit norms, shared missing latent, attention rows)",
        model_ok,
        &mut failures,
    );

    if failures > 0 {
        return Err(AvtError::invalid(format!("{failures} verify check(s) failed")));
    }
    println!("all checks passed");
    Ok(())
}
