//! The two-phase training protocol: phase 1 trains the embedding network
//! with the composite loss on ablated data, phase 2 freezes it, exports
//! embeddings, and trains the recognizer with cross-entropy. The end-to-end
//! baseline gets its own single-phase loop.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::data::{Modality, ModalitySample, Validity};
use crate::losses::{
    missing_modality_loss_grad, triplet_hard_loss_grad, LossBreakdown,
};
use crate::mining::MiniBatch;
use crate::model::{
    load_params, save_params, AvtNet, BatchInputs, EmbeddingOutputs, Recognizer,
};
use crate::nn::dense::softmax_cross_entropy;
use crate::nn::{Adam, Module};
use crate::variants::{
    triplet_prototypical_loss_grad, E2eNet, IndividualLoss, JointLoss, VariantConfig,
};
use crate::{AvtError, Result};

/// Optimizer and schedule hyperparameters for both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub margin: f64,
    pub seed: u64,
    pub toy_scale: bool,
    /// Re-arrange shuffled batches so each holds at least two classes and,
    /// where the data has any, at least one missing-modality sample.
    pub stratified_batches: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_epochs: 50,
            phase2_epochs: 25,
            batch_size: 32,
            learning_rate: 0.001,
            beta1: 0.5,
            beta2: 0.99,
            margin: 0.2,
            seed: 0,
            toy_scale: false,
            stratified_batches: true,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 {
            return Err(AvtError::Config(
                "batch_size must be at least 4 (mining needs positives, negatives and missing samples)".into(),
            ));
        }
        if self.phase1_epochs == 0 || self.phase2_epochs == 0 {
            return Err(AvtError::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One structured log record per phase-1 epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_c: f64,
    pub l_t: f64,
    pub l_s: f64,
    pub l_j: f64,
    pub l_total: f64,
    pub skipped_steps: usize,
    pub seconds: f64,
}

/// One log record per phase-2 (or end-to-end) epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

/// Shuffled batch indices for one epoch; with `stratified` a repair pass
/// swaps samples so every batch sees at least two classes and, where the
/// dataset has any, at least one missing-modality sample.
fn epoch_batches(
    samples: &[ModalitySample],
    batch_size: usize,
    stratified: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    // a trailing sliver smaller than 4 cannot be mined; fold it into the
    // previous batch
    if batches.len() > 1 && batches.last().map_or(false, |b| b.len() < 4) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    if !stratified {
        return batches;
    }
    let any_missing = samples.iter().any(|s| s.validity != Validity::ALL_VALID);
    for bi in 0..batches.len() {
        let single_class = |b: &[usize]| {
            let first = samples[b[0]].subject_id;
            b.iter().all(|&i| samples[i].subject_id == first)
        };
        let no_missing = |b: &[usize]| {
            any_missing && b.iter().all(|&i| samples[i].validity == Validity::ALL_VALID)
        };
        let checks: [&dyn Fn(&[usize]) -> bool; 2] = [&single_class, &no_missing];
        for needs in checks {
            if !needs(&batches[bi]) {
                continue;
            }
            'search: for bj in 0..batches.len() {
                if bj == bi {
                    continue;
                }
                for pos in 0..batches[bj].len() {
                    let cand = batches[bj][pos];
                    let mut probe = batches[bi].clone();
                    probe[0] = cand;
                    if !needs(&probe) {
                        let old = batches[bi][0];
                        batches[bi][0] = cand;
                        batches[bj][pos] = old;
                        break 'search;
                    }
                }
            }
        }
    }
    batches
}

/// Triplet hard loss restricted to rows with `b = true`; gradients scatter
/// back to the full matrix. Missing samples all sit on the shared latent
/// point, so including them would mine meaningless triplets.
fn valid_rows_triplet_grad(
    x: &Array2<f64>,
    y: &[u32],
    b: &[bool],
    margin: f64,
) -> (f64, Array2<f64>) {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| b[i]).collect();
    let mut grad = Array2::zeros(x.raw_dim());
    if rows.len() < 2 {
        return (0.0, grad);
    }
    let sub = x.select(ndarray::Axis(0), &rows);
    let suby: Vec<u32> = rows.iter().map(|&i| y[i]).collect();
    let (loss, subg) = triplet_hard_loss_grad(&sub, &suby, margin);
    for (ri, &i) in rows.iter().enumerate() {
        grad.row_mut(i).assign(&subg.row(ri));
    }
    (loss, grad)
}

/// Per-step loss and embedding gradients for one variant's recipe. Returns
/// `None` when the batch holds a single class (the step is skipped).
fn step_loss_grads(
    variant: &VariantConfig,
    inputs: &BatchInputs,
    out: &EmbeddingOutputs,
    margin: f64,
) -> Option<(LossBreakdown, [Option<Array2<f64>>; 3], Array2<f64>)> {
    let y = &inputs.labels;
    let first = y[0];
    if y.iter().all(|&l| l == first) {
        return None;
    }
    let mut individual: [Option<Array2<f64>>; 3] = [None, None, None];
    let mut terms = [0.0f64; 3]; // audio, visible, thermal
    if let Some(kind) = variant.individual_loss {
        let per_mod = [
            (0usize, Modality::Audio, &out.e_s),
            (1, Modality::Visible, &out.e_c),
            (2, Modality::Thermal, &out.e_t),
        ];
        for (slot, m, e) in per_mod {
            let Some(e) = e.as_ref() else { continue };
            let b = inputs.validity(m);
            let (loss, grad) = match kind {
                IndividualLoss::MissingModality => {
                    let batch = MiniBatch::new(e.clone(), y.clone(), b.to_vec())
                        .expect("aligned embedding batch");
                    missing_modality_loss_grad(&batch)
                }
                IndividualLoss::TripletHard => valid_rows_triplet_grad(e, y, b, margin),
            };
            terms[slot] = loss;
            individual[slot] = Some(grad);
        }
    }
    let (l_j, g_j) = match variant.joint_loss.expect("embedding variants have a joint loss") {
        JointLoss::TripletHard => triplet_hard_loss_grad(&out.e_j, y, margin),
        JointLoss::TripletPrototypical => triplet_prototypical_loss_grad(&out.e_j, y, margin),
    };
    let [l_s, l_c, l_t] = terms;
    let breakdown = LossBreakdown {
        l_c,
        l_t,
        l_s,
        l_j,
        l_total: l_c + l_t + l_s + l_j,
    };
    Some((breakdown, individual, g_j))
}

fn write_checkpoint(dir: &Path, net: &mut AvtNet, epoch: usize, variant: &VariantConfig) -> Result<()> {
    let extra = serde_json::json!({
        "epoch": epoch,
        "variant": variant,
        "arch": net.config,
    });
    save_params(dir, net, extra)
}

/// Phase 1: train the embedding network on the (already ablated) samples.
/// Checkpoints land under `ckpt_dir` every `checkpoint_every` epochs as
/// `epoch-NNN` plus a `final` directory; an existing `final` checkpoint with
/// a matching variant resumes from its recorded epoch.
pub fn train_embeddings(
    net: &mut AvtNet,
    samples: &[ModalitySample],
    variant: &VariantConfig,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if variant.end_to_end {
        return Err(AvtError::Config(
            "end-to-end variants train with train_end_to_end, not the embedding phase".into(),
        ));
    }
    if samples.len() < cfg.batch_size.min(8) {
        return Err(AvtError::invalid("not enough samples to form a batch"));
    }
    let mut start_epoch = 0;
    if let Some(dir) = ckpt_dir {
        let final_dir = dir.join("final");
        if final_dir.join("meta.json").exists() {
            let meta = crate::model::read_checkpoint_meta(&final_dir)?;
            let same: Option<VariantConfig> =
                serde_json::from_value(meta["variant"].clone()).ok();
            if same.as_ref() == Some(variant) {
                load_params(&final_dir, net)?;
                start_epoch = meta["epoch"].as_u64().unwrap_or(0) as usize;
                log::info!("resuming {} from epoch {start_epoch}", variant.name);
            }
        }
    }
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xfeed));
    let mut history = Vec::new();
    for epoch in 0..cfg.phase1_epochs {
        let t0 = Instant::now();
        let batches = epoch_batches(samples, cfg.batch_size, cfg.stratified_batches, &mut rng);
        if epoch < start_epoch {
            continue; // replay the batch stream so a resume stays aligned
        }
        let mut sums = LossBreakdown {
            l_c: 0.0,
            l_t: 0.0,
            l_s: 0.0,
            l_j: 0.0,
            l_total: 0.0,
        };
        let mut steps = 0usize;
        let mut skipped = 0usize;
        for batch in &batches {
            let refs: Vec<&ModalitySample> = batch.iter().map(|&i| &samples[i]).collect();
            let inputs = BatchInputs::from_samples(&refs)?;
            let out = net.forward(&inputs);
            let Some((breakdown, [g_s, g_c, g_t], g_j)) =
                step_loss_grads(variant, &inputs, &out, cfg.margin)
            else {
                skipped += 1;
                log::warn!("skipping single-class batch in epoch {epoch}");
                continue;
            };
            if !breakdown.l_total.is_finite() {
                return Err(AvtError::invalid(format!(
                    "non-finite loss at epoch {epoch}: {breakdown:?}"
                )));
            }
            net.zero_grad();
            net.backward(g_s.as_ref(), g_c.as_ref(), g_t.as_ref(), &g_j);
            adam.step(net);
            sums.l_c += breakdown.l_c;
            sums.l_t += breakdown.l_t;
            sums.l_s += breakdown.l_s;
            sums.l_j += breakdown.l_j;
            sums.l_total += breakdown.l_total;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            l_c: sums.l_c / n,
            l_t: sums.l_t / n,
            l_s: sums.l_s / n,
            l_j: sums.l_j / n,
            l_total: sums.l_total / n,
            skipped_steps: skipped,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if let Some(dir) = ckpt_dir {
            if (epoch + 1) % cfg.checkpoint_every == 0 {
                write_checkpoint(&dir.join(format!("epoch-{:03}", epoch + 1)), net, epoch + 1, variant)?;
            }
        }
    }
    if let Some(dir) = ckpt_dir {
        write_checkpoint(&dir.join("final"), net, cfg.phase1_epochs, variant)?;
    }
    Ok(history)
}

/// One sample's four embeddings; absent individual heads export zero vectors
/// so the table layout stays fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub sample_id: String,
    pub subject_id: u32,
    pub validity: Validity,
    pub e_s: Vec<f64>,
    pub e_c: Vec<f64>,
    pub e_t: Vec<f64>,
    pub e_j: Vec<f64>,
}

/// The exported embedding table; rows keep the input sample order.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub rows: Vec<EmbeddingRow>,
    pub embed_dim: usize,
}

/// Forward every sample through the frozen network and collect the four
/// embeddings per sample.
pub fn export_embeddings(
    net: &mut AvtNet,
    samples: &[ModalitySample],
    batch_size: usize,
) -> Result<EmbeddingTable> {
    let dim = net.config.embed_dim;
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&ModalitySample> = chunk.iter().collect();
        let inputs = BatchInputs::from_samples(&refs)?;
        let out = net.forward(&inputs);
        for (sm, bundle) in chunk.iter().zip(net.bundles(&out)) {
            rows.push(EmbeddingRow {
                sample_id: sm.sample_id.clone(),
                subject_id: sm.subject_id,
                validity: sm.validity,
                e_s: bundle.e_s,
                e_c: bundle.e_c,
                e_t: bundle.e_t,
                e_j: bundle.e_j,
            });
        }
    }
    Ok(EmbeddingTable {
        rows,
        embed_dim: dim,
    })
}

/// Persist the table as CSV: sample_id, subject_id, the three validity bits,
/// then the four embeddings (`{name}_{index}` columns, round-trip floats).
pub fn write_embedding_table(path: &Path, table: &EmbeddingTable) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let dim = table.embed_dim;
    let mut header = vec![
        "sample_id".to_string(),
        "subject_id".to_string(),
        "b_audio".to_string(),
        "b_visible".to_string(),
        "b_thermal".to_string(),
    ];
    for name in ["e_s", "e_c", "e_t", "e_j"] {
        for i in 0..dim {
            header.push(format!("{name}_{i}"));
        }
    }
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![
            r.sample_id.clone(),
            r.subject_id.to_string(),
            (r.validity.audio as u8).to_string(),
            (r.validity.visible as u8).to_string(),
            (r.validity.thermal as u8).to_string(),
        ];
        for vec in [&r.e_s, &r.e_c, &r.e_t, &r.e_j] {
            rec.extend(vec.iter().map(|v| format!("{v}")));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a table written by [`write_embedding_table`].
pub fn read_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let n_embed_cols = header.len().checked_sub(5).ok_or_else(|| {
        AvtError::invalid(format!("embedding table {} has too few columns", path.display()))
    })?;
    if n_embed_cols % 4 != 0 {
        return Err(AvtError::invalid("embedding columns not divisible by 4"));
    }
    let dim = n_embed_cols / 4;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| AvtError::invalid(format!("bad float in embedding table: {e}")))
        };
        let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(4);
        for v in 0..4 {
            let base = 5 + v * dim;
            let mut out = Vec::with_capacity(dim);
            for i in 0..dim {
                out.push(field(base + i)?);
            }
            vecs.push(out);
        }
        let e_j = vecs.pop().unwrap();
        let e_t = vecs.pop().unwrap();
        let e_c = vecs.pop().unwrap();
        let e_s = vecs.pop().unwrap();
        rows.push(EmbeddingRow {
            sample_id: rec[0].to_string(),
            subject_id: rec[1]
                .parse()
                .map_err(|e| AvtError::invalid(format!("bad subject_id: {e}")))?,
            validity: Validity {
                audio: &rec[2] == "1",
                visible: &rec[3] == "1",
                thermal: &rec[4] == "1",
            },
            e_s,
            e_c,
            e_t,
            e_j,
        });
    }
    Ok(EmbeddingTable { rows, embed_dim: dim })
}

/// Stack the recognizer's input features from a table row: the individual
/// embeddings of the enabled modalities (in audio, visible, thermal order)
/// followed by the joint embedding.
pub fn assemble_features(table: &EmbeddingTable, variant: &VariantConfig) -> Array2<f64> {
    let use_individual = variant.structure.individual_embeddings;
    let mods = variant.structure.modalities;
    let dim = table.embed_dim;
    let n_embed = (if use_individual {
        mods.iter().filter(|&&m| m).count()
    } else {
        0
    }) + 1;
    let mut x = Array2::zeros((table.rows.len(), n_embed * dim));
    for (ri, row) in table.rows.iter().enumerate() {
        let mut off = 0;
        if use_individual {
            for (on, vec) in [
                (mods[0], &row.e_s),
                (mods[1], &row.e_c),
                (mods[2], &row.e_t),
            ] {
                if on {
                    for (i, &v) in vec.iter().enumerate() {
                        x[[ri, off + i]] = v;
                    }
                    off += dim;
                }
            }
        }
        for (i, &v) in row.e_j.iter().enumerate() {
            x[[ri, off + i]] = v;
        }
    }
    x
}

/// Phase 2: cross-entropy training of the recognizer on frozen embeddings.
pub fn train_recognizer(
    rec: &mut Recognizer,
    table: &EmbeddingTable,
    variant: &VariantConfig,
    n_classes: u32,
    cfg: &TrainConfig,
) -> Result<Vec<ClassifierEpochRecord>> {
    cfg.validate()?;
    let labels: Vec<u32> = table.rows.iter().map(|r| r.subject_id).collect();
    for c in 0..n_classes {
        if !labels.contains(&c) {
            return Err(AvtError::Config(format!(
                "class {c} absent from the training table"
            )));
        }
    }
    let x = assemble_features(table, variant);
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xbeef));
    let mut history = Vec::new();
    rec.set_training(true);
    for epoch in 0..cfg.phase2_epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(ndarray::Axis(0), batch);
            let yb: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
            let logits = rec.forward(&xb)?;
            for (bi, &label) in yb.iter().enumerate() {
                let row = logits.row(bi);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if pred as u32 == label {
                    correct += 1;
                }
            }
            let (loss, dlogits) = softmax_cross_entropy(&logits, &yb);
            if !loss.is_finite() {
                return Err(AvtError::invalid(format!(
                    "non-finite recognizer loss at epoch {epoch}"
                )));
            }
            rec.zero_grad();
            rec.backward(&dlogits);
            adam.step(rec);
            loss_sum += loss;
            steps += 1;
        }
        history.push(ClassifierEpochRecord {
            epoch,
            loss: loss_sum / steps.max(1) as f64,
            accuracy: correct as f64 / x.nrows() as f64,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    rec.set_training(false);
    Ok(history)
}

/// Single-phase cross-entropy training for the end-to-end baseline; runs for
/// the phase-1 epoch count, mirroring the shared schedule.
pub fn train_end_to_end(
    net: &mut E2eNet,
    samples: &[ModalitySample],
    cfg: &TrainConfig,
) -> Result<Vec<ClassifierEpochRecord>> {
    cfg.validate()?;
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xe2e));
    let mut history = Vec::new();
    net.set_training(true);
    for epoch in 0..cfg.phase1_epochs {
        let t0 = Instant::now();
        let batches = epoch_batches(samples, cfg.batch_size, cfg.stratified_batches, &mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut steps = 0usize;
        for batch in &batches {
            let refs: Vec<&ModalitySample> = batch.iter().map(|&i| &samples[i]).collect();
            let inputs = BatchInputs::from_samples(&refs)?;
            let logits = net.forward(&inputs)?;
            for (bi, &label) in inputs.labels.iter().enumerate() {
                let row = logits.row(bi);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if pred as u32 == label {
                    correct += 1;
                }
                seen += 1;
            }
            let (loss, dlogits) = softmax_cross_entropy(&logits, &inputs.labels);
            if !loss.is_finite() {
                return Err(AvtError::invalid(format!(
                    "non-finite end-to-end loss at epoch {epoch}"
                )));
            }
            net.zero_grad();
            net.backward(&dlogits);
            adam.step(net);
            loss_sum += loss;
            steps += 1;
        }
        history.push(ClassifierEpochRecord {
            epoch,
            loss: loss_sum / steps.max(1) as f64,
            accuracy: correct as f64 / seen.max(1) as f64,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    net.set_training(false);
    Ok(history)
}

/// A stable digest of all parameter tensors, used to show that phase 2 never
/// touches phase-1 weights.
pub fn param_checksum(module: &mut dyn Module) -> u64 {
    use std::hash::Hasher;
    let mut h = std::collections::hash_map::DefaultHasher::new();
    module.visit_params("", &mut |name, p| {
        h.write(name.as_bytes());
        for v in p.w.iter() {
            h.write_u64(v.to_bits());
        }
    });
    h.finish()
}
