//! Generate a small synthetic trimodal dataset, expand it with the three
//! single-modality ablations, materialize it to disk and split it into
//! train/test.
//!
//! Run with `cargo run --release --example synth_dataset`.

use avtnet::data::{
    ablate_dataset, generate_synthetic_dataset, materialize_dataset, split_dataset, Split,
    SyntheticOpts,
};

fn main() -> avtnet::Result<()> {
    let opts = SyntheticOpts::toy();
    let base = generate_synthetic_dataset(4, 6, 7, &opts)?;
    println!("generated {} fully-valid samples (4 subjects x 6)", base.len());

    let all = ablate_dataset(&base)?;
    println!("after ablation: {} samples", all.len());
    for s in all.iter().take(4) {
        println!(
            "  {:<18} subject {} condition {}",
            s.sample_id,
            s.subject_id,
            s.validity.condition()
        );
    }

    let dir = tempfile::tempdir().map_err(avtnet::AvtError::from)?;
    let manifest = materialize_dataset(dir.path(), &all, 4, 7)?;
    let manifest = split_dataset(&manifest, 0.25, 7)?;
    let n_train = manifest.split_entries(Split::Train).len();
    let n_test = manifest.split_entries(Split::Test).len();
    println!("materialized under {:?}: {n_train} train / {n_test} test", dir.path());
    Ok(())
}
