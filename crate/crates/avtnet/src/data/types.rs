//! Core dataset types: samples, validity flags, manifests, shape presets.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{AvtError, Result};

/// The three sensor streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Audio,
    Visible,
    Thermal,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Visible, Modality::Thermal];

    pub fn short(&self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visible => "visible",
            Modality::Thermal => "thermal",
        }
    }
}

/// Per-modality validity flags; `false` means the tensor is a zero-filled
/// placeholder for a missing sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Validity {
    pub audio: bool,
    pub visible: bool,
    pub thermal: bool,
}

impl Validity {
    pub const ALL_VALID: Validity = Validity {
        audio: true,
        visible: true,
        thermal: true,
    };

    pub fn get(&self, m: Modality) -> bool {
        match m {
            Modality::Audio => self.audio,
            Modality::Visible => self.visible,
            Modality::Thermal => self.thermal,
        }
    }

    pub fn without(mut self, m: Modality) -> Validity {
        match m {
            Modality::Audio => self.audio = false,
            Modality::Visible => self.visible = false,
            Modality::Thermal => self.thermal = false,
        }
        self
    }

    pub fn all_valid(&self) -> bool {
        self.audio && self.visible && self.thermal
    }

    /// Evaluation condition name for this pattern, e.g. `miss_visible`.
    pub fn condition(&self) -> &'static str {
        match (self.audio, self.visible, self.thermal) {
            (true, true, true) => "no_missing",
            (false, true, true) => "miss_audio",
            (true, false, true) => "miss_visible",
            (true, true, false) => "miss_thermal",
            _ => "multi_missing",
        }
    }
}

/// Tensor shapes for one run. The full-scale preset is the default; the toy
/// preset keeps tests and the smoke experiment fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub n_mels: usize,
    pub n_frames: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl ShapeConfig {
    pub fn full() -> Self {
        Self {
            n_mels: 128,
            n_frames: 589,
            image_h: 224,
            image_w: 224,
        }
    }

    pub fn toy() -> Self {
        Self {
            n_mels: 64,
            n_frames: 128,
            image_h: 64,
            image_w: 64,
        }
    }
}

/// One synchronized trimodal record. Images are channel-last in [0,1]; the
/// spectrogram is per-sample standardized log-Mel power.
#[derive(Debug, Clone)]
pub struct ModalitySample {
    pub sample_id: String,
    pub subject_id: u32,
    pub spectrogram: Array2<f64>, // (n_mels, n_frames)
    pub visible: Array3<f64>,     // (h, w, 3)
    pub thermal: Array3<f64>,     // (h, w, 1)
    pub validity: Validity,
}

impl ModalitySample {
    /// Check the shape contract and the validity/zero-fill coupling for the
    /// ablated modalities.
    pub fn validate(&self, shapes: &ShapeConfig, n_classes: u32) -> Result<()> {
        if self.subject_id >= n_classes {
            return Err(AvtError::Dataset(format!(
                "sample {}: subject {} out of range (n_classes {n_classes})",
                self.sample_id, self.subject_id
            )));
        }
        let want_spec = (shapes.n_mels, shapes.n_frames);
        if self.spectrogram.dim() != want_spec {
            return Err(AvtError::shape(
                format!("{want_spec:?}"),
                format!("{:?}", self.spectrogram.dim()),
            ));
        }
        if self.visible.dim() != (shapes.image_h, shapes.image_w, 3) {
            return Err(AvtError::shape(
                format!("({}, {}, 3)", shapes.image_h, shapes.image_w),
                format!("{:?}", self.visible.dim()),
            ));
        }
        if self.thermal.dim() != (shapes.image_h, shapes.image_w, 1) {
            return Err(AvtError::shape(
                format!("({}, {}, 1)", shapes.image_h, shapes.image_w),
                format!("{:?}", self.thermal.dim()),
            ));
        }
        if !self.validity.audio && self.spectrogram.iter().any(|&v| v != 0.0) {
            return Err(AvtError::Dataset(format!(
                "sample {}: audio marked missing but spectrogram is not all-zero",
                self.sample_id
            )));
        }
        if !self.validity.visible && self.visible.iter().any(|&v| v != 0.0) {
            return Err(AvtError::Dataset(format!(
                "sample {}: visible marked missing but image is not all-zero",
                self.sample_id
            )));
        }
        if !self.validity.thermal && self.thermal.iter().any(|&v| v != 0.0) {
            return Err(AvtError::Dataset(format!(
                "sample {}: thermal marked missing but image is not all-zero",
                self.sample_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(AvtError::Dataset(format!("unknown split tag '{other}'"))),
        }
    }
}

/// One manifest row: where the sample's tensors live plus its labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub subject_id: u32,
    pub audio_path: String,
    pub visible_path: String,
    pub thermal_path: String,
    pub validity: Validity,
    pub split: Split,
}

/// The dataset index written next to the materialized tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub n_classes: u32,
    pub seed: u64,
}

impl DatasetManifest {
    /// Unique ids, in-range subjects.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.sample_id) {
                return Err(AvtError::Dataset(format!(
                    "duplicate sample_id '{}'",
                    e.sample_id
                )));
            }
            if e.subject_id >= self.n_classes {
                return Err(AvtError::Dataset(format!(
                    "sample {}: subject {} out of range",
                    e.sample_id, e.subject_id
                )));
            }
        }
        Ok(())
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}
