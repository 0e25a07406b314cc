//! Dataset production: trimodal samples from the seeded synthetic generator
//! or user-supplied directories, zero-fill ablation, train/test splitting and
//! manifest / tensor persistence.

mod pipeline;
mod spectrogram;
mod store;
mod synthetic;
mod types;

pub use pipeline::{ablate_dataset, ingest_real_data, make_ablations, make_ablations_with, split_dataset};
pub use spectrogram::{
    compute_log_mel_spectrogram, compute_log_mel_unstandardized, mel_filterbank, standardize,
    ResamplePolicy, SpectrogramConfig,
};
pub use store::{load_sample, materialize_dataset, read_manifest, write_manifest};
pub use synthetic::{generate_synthetic_dataset, SyntheticOpts};
pub use types::{
    DatasetManifest, ManifestEntry, Modality, ModalitySample, ShapeConfig, Split, Validity,
};
