//! Ablation, train/test splitting and real-data ingestion.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

use super::spectrogram::{compute_log_mel_spectrogram, SpectrogramConfig};
use super::types::{DatasetManifest, Modality, ModalitySample, ShapeConfig, Split, Validity};
use crate::error::{AvtError, Result};

/// Expand one fully-valid sample into four: the original plus one copy per
/// modality with that modality's tensor zero-filled and its validity flag
/// cleared.
pub fn make_ablations(sample: &ModalitySample) -> Result<Vec<ModalitySample>> {
    make_ablations_with(sample, false)
}

/// As [`make_ablations`]; with `include_multi` three additional copies with
/// two modalities zero-filled each are produced (never all three at once).
pub fn make_ablations_with(
    sample: &ModalitySample,
    include_multi: bool,
) -> Result<Vec<ModalitySample>> {
    if !sample.validity.all_valid() {
        return Err(AvtError::invalid(format!(
            "make_ablations expects a fully-valid sample, got {:?} for '{}'",
            sample.validity, sample.sample_id
        )));
    }
    let mut out = vec![sample.clone()];
    for m in Modality::ALL {
        out.push(ablate(sample, &[m]));
    }
    if include_multi {
        out.push(ablate(sample, &[Modality::Audio, Modality::Visible]));
        out.push(ablate(sample, &[Modality::Audio, Modality::Thermal]));
        out.push(ablate(sample, &[Modality::Visible, Modality::Thermal]));
    }
    Ok(out)
}

/// Ablate every sample of a fully-valid dataset, quadrupling it.
pub fn ablate_dataset(samples: &[ModalitySample]) -> Result<Vec<ModalitySample>> {
    let mut out = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        out.extend(make_ablations(s)?);
    }
    Ok(out)
}

fn ablate(sample: &ModalitySample, missing: &[Modality]) -> ModalitySample {
    let mut s = sample.clone();
    for &m in missing {
        s.validity = s.validity.without(m);
        s.sample_id = format!("{}-no{}", s.sample_id, m.short());
        match m {
            Modality::Audio => s.spectrogram = Array2::zeros(s.spectrogram.raw_dim()),
            Modality::Visible => s.visible = Array3::zeros(s.visible.raw_dim()),
            Modality::Thermal => s.thermal = Array3::zeros(s.thermal.raw_dim()),
        }
    }
    s
}

/// Deterministic random split, stratified per subject so every subject
/// appears in both splits.
pub fn split_dataset(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(AvtError::invalid(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_subject.entry(e.subject_id).or_default().push(i);
    }
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (subject, mut idxs) in by_subject {
        if idxs.len() < 2 {
            return Err(AvtError::Dataset(format!(
                "subject {subject} has {} sample(s); stratified splitting needs at least 2",
                idxs.len()
            )));
        }
        idxs.shuffle(&mut rng);
        let n_test = ((idxs.len() as f64 * test_fraction).round() as usize)
            .clamp(1, idxs.len() - 1);
        for (pos, &i) in idxs.iter().enumerate() {
            out.entries[i].split = if pos < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(out)
}

/// A row of the raw-data manifest accepted by [`ingest_real_data`].
#[derive(Debug, serde::Deserialize)]
struct RawRow {
    sample_id: String,
    subject_id: u32,
    audio_path: String,
    visible_path: String,
    thermal_path: String,
}

/// Ingest user-supplied data. `raw_manifest` is a CSV with columns
/// (sample_id, subject_id, audio_path, visible_path, thermal_path); audio is
/// a 1-D waveform `.npy` (f32, 44 kHz unless the spectrogram config allows
/// resampling via `rate_hint`), images are `.npy` of shape (h, w, 3) and
/// (h, w, 1) in [0,1]. Images are bilinearly resized to the configured
/// shapes. All ingested samples are fully valid; ablate and split afterwards.
pub fn ingest_real_data(
    raw_manifest: &Path,
    shapes: &ShapeConfig,
    spec_cfg: &SpectrogramConfig,
    rate_hint: u32,
) -> Result<Vec<ModalitySample>> {
    let base = raw_manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_path(raw_manifest)?;
    let mut samples = Vec::new();
    for row in reader.deserialize::<RawRow>() {
        let row = row?;
        let wave: ndarray::Array1<f32> = super::store::read_npy1(&base.join(&row.audio_path))?;
        let wave: Vec<f64> = wave.iter().map(|&v| v as f64).collect();
        let spectrogram = compute_log_mel_spectrogram(&wave, rate_hint, spec_cfg)?;
        let visible = resize_bilinear(
            &super::store::read_npy3(&base.join(&row.visible_path))?.mapv(|v| v as f64),
            shapes.image_h,
            shapes.image_w,
        );
        let thermal = resize_bilinear(
            &super::store::read_npy3(&base.join(&row.thermal_path))?.mapv(|v| v as f64),
            shapes.image_h,
            shapes.image_w,
        );
        samples.push(ModalitySample {
            sample_id: row.sample_id,
            subject_id: row.subject_id,
            spectrogram,
            visible,
            thermal,
            validity: Validity::ALL_VALID,
        });
    }
    if samples.is_empty() {
        return Err(AvtError::Dataset("raw manifest contains no rows".into()));
    }
    Ok(samples)
}

/// Bilinear resize of an (h, w, c) tensor.
pub fn resize_bilinear(img: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let mut out = Array3::<f64>::zeros((out_h, out_w, c));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let top = img[[y0, x0, ch]] * (1.0 - wx) + img[[y0, x1, ch]] * wx;
                let bot = img[[y1, x0, ch]] * (1.0 - wx) + img[[y1, x1, ch]] * wx;
                out[[oy, ox, ch]] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}
