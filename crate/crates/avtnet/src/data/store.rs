//! On-disk layout: tensors as little-endian f32 `.npy` files (readable from
//! numpy unchanged), one directory per sample, plus the delimited manifest.
//!
//! Manifest format: CSV with header
//! `sample_id,subject_id,audio_path,visible_path,thermal_path,b_audio,b_visible,b_thermal,split`,
//! booleans as 0/1, paths relative to the manifest's directory. Dataset-level
//! metadata (n_classes, seed) lives in `<manifest>.meta.json` next to it.

use ndarray::{Array1, Array2, Array3};
use ndarray_npy::{read_npy, write_npy};
use rayon::prelude::*;
use std::path::Path;

use super::types::{DatasetManifest, ManifestEntry, ModalitySample, Split, Validity};
use crate::error::{AvtError, Result};

fn npy_err(e: impl std::fmt::Display, path: &Path) -> AvtError {
    AvtError::Npy(format!("{}: {e}", path.display()))
}

pub(crate) fn read_npy1(path: &Path) -> Result<Array1<f32>> {
    read_npy(path).map_err(|e| npy_err(e, path))
}

pub(crate) fn read_npy2(path: &Path) -> Result<Array2<f32>> {
    read_npy(path).map_err(|e| npy_err(e, path))
}

pub(crate) fn read_npy3(path: &Path) -> Result<Array3<f32>> {
    read_npy(path).map_err(|e| npy_err(e, path))
}

/// Write every sample under `dir/samples/<sample_id>/` and return a manifest
/// with all entries tagged `train` (split afterwards). Sample tensors are
/// written in parallel; the manifest itself is assembled single-threaded.
pub fn materialize_dataset(
    dir: &Path,
    samples: &[ModalitySample],
    n_classes: u32,
    seed: u64,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir.join("samples"))?;
    samples
        .par_iter()
        .try_for_each(|s| -> Result<()> {
            let sdir = dir.join("samples").join(&s.sample_id);
            std::fs::create_dir_all(&sdir)?;
            let spec = s.spectrogram.mapv(|v| v as f32);
            let vis = s.visible.mapv(|v| v as f32);
            let th = s.thermal.mapv(|v| v as f32);
            write_npy(sdir.join("spectrogram.npy"), &spec)
                .map_err(|e| npy_err(e, &sdir))?;
            write_npy(sdir.join("visible.npy"), &vis).map_err(|e| npy_err(e, &sdir))?;
            write_npy(sdir.join("thermal.npy"), &th).map_err(|e| npy_err(e, &sdir))?;
            Ok(())
        })?;
    let entries = samples
        .iter()
        .map(|s| ManifestEntry {
            sample_id: s.sample_id.clone(),
            subject_id: s.subject_id,
            audio_path: format!("samples/{}/spectrogram.npy", s.sample_id),
            visible_path: format!("samples/{}/visible.npy", s.sample_id),
            thermal_path: format!("samples/{}/thermal.npy", s.sample_id),
            validity: s.validity,
            split: Split::Train,
        })
        .collect();
    let manifest = DatasetManifest {
        entries,
        n_classes,
        seed,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Load one sample's tensors back; paths are resolved against `base`.
pub fn load_sample(base: &Path, entry: &ManifestEntry) -> Result<ModalitySample> {
    let spectrogram = read_npy2(&base.join(&entry.audio_path))?.mapv(|v| v as f64);
    let visible = read_npy3(&base.join(&entry.visible_path))?.mapv(|v| v as f64);
    let thermal = read_npy3(&base.join(&entry.thermal_path))?.mapv(|v| v as f64);
    Ok(ModalitySample {
        sample_id: entry.sample_id.clone(),
        subject_id: entry.subject_id,
        spectrogram,
        visible,
        thermal,
        validity: entry.validity,
    })
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sample_id",
        "subject_id",
        "audio_path",
        "visible_path",
        "thermal_path",
        "b_audio",
        "b_visible",
        "b_thermal",
        "split",
    ])?;
    for e in &manifest.entries {
        w.write_record([
            e.sample_id.as_str(),
            &e.subject_id.to_string(),
            &e.audio_path,
            &e.visible_path,
            &e.thermal_path,
            if e.validity.audio { "1" } else { "0" },
            if e.validity.visible { "1" } else { "0" },
            if e.validity.thermal { "1" } else { "0" },
            e.split.as_str(),
        ])?;
    }
    w.flush()?;
    let meta = serde_json::json!({
        "version": 1,
        "n_classes": manifest.n_classes,
        "seed": manifest.seed,
    });
    std::fs::write(
        meta_path(path),
        serde_json::to_string_pretty(&meta).map_err(|e| AvtError::Serde(e.to_string()))?,
    )?;
    Ok(())
}

fn meta_path(manifest_path: &Path) -> std::path::PathBuf {
    let mut p = manifest_path.as_os_str().to_owned();
    p.push(".meta.json");
    p.into()
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 9 {
            return Err(AvtError::Dataset(format!(
                "manifest row has {} columns, expected 9",
                rec.len()
            )));
        }
        let parse_bool = |s: &str| -> Result<bool> {
            match s {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(AvtError::Dataset(format!("bad boolean '{other}'"))),
            }
        };
        entries.push(ManifestEntry {
            sample_id: rec[0].to_string(),
            subject_id: rec[1]
                .parse()
                .map_err(|_| AvtError::Dataset(format!("bad subject_id '{}'", &rec[1])))?,
            audio_path: rec[2].to_string(),
            visible_path: rec[3].to_string(),
            thermal_path: rec[4].to_string(),
            validity: Validity {
                audio: parse_bool(&rec[5])?,
                visible: parse_bool(&rec[6])?,
                thermal: parse_bool(&rec[7])?,
            },
            split: Split::parse(&rec[8])?,
        });
    }
    let (n_classes, seed) = match std::fs::read_to_string(meta_path(path)) {
        Ok(text) => {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| AvtError::Serde(e.to_string()))?;
            (
                v["n_classes"].as_u64().unwrap_or(0) as u32,
                v["seed"].as_u64().unwrap_or(0),
            )
        }
        Err(_) => (
            entries.iter().map(|e| e.subject_id).max().map_or(0, |m| m + 1),
            0,
        ),
    };
    let manifest = DatasetManifest {
        entries,
        n_classes,
        seed,
    };
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::ShapeConfig;

    #[test]
    fn materialize_and_reload_round_trip() {
        let shapes = ShapeConfig {
            n_mels: 4,
            n_frames: 6,
            image_h: 5,
            image_w: 5,
        };
        let sample = ModalitySample {
            sample_id: "a0".into(),
            subject_id: 0,
            spectrogram: Array2::from_shape_fn((4, 6), |(i, j)| (i * 7 + j) as f64 * 0.125),
            visible: Array3::from_elem((5, 5, 3), 0.5),
            thermal: Array3::from_elem((5, 5, 1), 0.25),
            validity: Validity::ALL_VALID,
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = materialize_dataset(dir.path(), &[sample.clone()], 1, 7).unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.n_classes, 1);
        assert_eq!(back.seed, 7);
        let loaded = load_sample(dir.path(), &back.entries[0]).unwrap();
        assert_eq!(loaded.spectrogram, sample.spectrogram);
        loaded.validate(&shapes, 1).unwrap();
    }
}
