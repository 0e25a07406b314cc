//! Train the full model on a very small synthetic dataset and print the
//! per-epoch losses, the phase-2 recognizer accuracy, and the final
//! per-condition evaluation report. Takes around a minute on one core.
//!
//! Run with `cargo run --release --example train_toy`.

use avtnet::data::{
    ablate_dataset, generate_synthetic_dataset, materialize_dataset, split_dataset, load_sample,
    Split, SyntheticOpts,
};
use avtnet::eval::{emit_report, evaluate_conditions};
use avtnet::model::AvtNetConfig;
use avtnet::training::{export_embeddings, train_embeddings, train_recognizer, TrainConfig};
use avtnet::variants::{build_variant, BuiltVariant, VariantConfig};

fn main() -> avtnet::Result<()> {
    let n_classes = 4u32;
    let opts = SyntheticOpts::toy();
    let base = generate_synthetic_dataset(n_classes, 8, 21, &opts)?;
    let all = ablate_dataset(&base)?;
    let dir = tempfile::tempdir().map_err(avtnet::AvtError::from)?;
    let manifest = materialize_dataset(dir.path(), &all, n_classes, 21)?;
    let manifest = split_dataset(&manifest, 0.25, 21)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.entries {
        let s = load_sample(dir.path(), e)?;
        match e.split {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }
    println!("{} train / {} test samples", train.len(), test.len());

    let variant = VariantConfig::by_name("Prop")?;
    let arch = AvtNetConfig::toy(n_classes);
    let cfg = TrainConfig {
        phase1_epochs: 8,
        phase2_epochs: 10,
        seed: 21,
        toy_scale: true,
        ..TrainConfig::default()
    };
    let BuiltVariant::Embedding {
        mut net,
        mut recognizer,
    } = build_variant(&variant, &arch, cfg.seed)
    else {
        unreachable!("Prop is an embedding variant");
    };

    println!("phase 1 (embeddings):");
    let history = train_embeddings(&mut net, &train, &variant, &cfg, None)?;
    for h in &history {
        println!(
            "  epoch {:>2}  total {:.4}  (audio {:.4}, visible {:.4}, thermal {:.4}, joint {:.4})  {:.1} s",
            h.epoch, h.l_total, h.l_s, h.l_c, h.l_t, h.l_j, h.seconds
        );
    }

    println!("phase 2 (recognizer):");
    let train_table = export_embeddings(&mut net, &train, cfg.batch_size)?;
    let rec_history = train_recognizer(&mut recognizer, &train_table, &variant, n_classes, &cfg)?;
    for h in rec_history.iter().step_by(3) {
        println!("  epoch {:>2}  loss {:.4}  train accuracy {:.4}", h.epoch, h.loss, h.accuracy);
    }

    let test_table = export_embeddings(&mut net, &test, cfg.batch_size)?;
    let report = evaluate_conditions(&mut recognizer, &test_table, &variant, cfg.seed)?;
    println!("\n{}", emit_report(std::slice::from_ref(&report))?);
    Ok(())
}
