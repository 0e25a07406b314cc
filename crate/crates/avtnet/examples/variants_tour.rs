//! Enumerate every model variant and show its structure: which modalities it
//! uses, whether it keeps the individual embedding heads, the joint branch
//! kind, the losses it trains with, and the recognizer input width.
//!
//! Run with `cargo run --release --example variants_tour`.

use avtnet::model::AvtNetConfig;
use avtnet::variants::{build_variant, BuiltVariant, VariantConfig, VARIANT_NAMES};

fn main() -> avtnet::Result<()> {
    let arch = AvtNetConfig::toy(4);
    println!(
        "{:<22} {:<9} {:<11} {:<12} {:<20} {:<18} width",
        "variant", "modal.", "individual", "joint", "individual loss", "joint loss"
    );
    for name in VARIANT_NAMES {
        let v = VariantConfig::by_name(name)?;
        let mods: String = ["a", "v", "t"]
            .iter()
            .zip(v.structure.modalities)
            .map(|(s, on)| if on { *s } else { "-" })
            .collect();
        let width = match build_variant(&v, &arch, 0) {
            BuiltVariant::Embedding { recognizer, .. } => recognizer.d_in,
            BuiltVariant::EndToEnd(net) => net.head.d_in,
        };
        println!(
            "{:<22} {:<9} {:<11} {:<12} {:<20} {:<18} {width}",
            v.display_name(),
            mods,
            v.structure.individual_embeddings,
            format!("{:?}", v.structure.joint),
            v.individual_loss
                .map_or("(none)".to_string(), |l| format!("{l:?}")),
            v.joint_loss.map_or("cross-entropy".to_string(), |l| format!("{l:?}")),
        );
    }
    Ok(())
}
