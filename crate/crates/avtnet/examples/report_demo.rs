//! Render the per-condition accuracy report from hand-made evaluation
//! results, including the bimodal comparison block and the machine-readable
//! CSV footer.
//!
//! Run with `cargo run --release --example report_demo`.

use avtnet::eval::{conditions_from_logits, emit_report};
use avtnet::data::Validity;
use ndarray::Array2;

fn main() -> avtnet::Result<()> {
    // Fake logits for 8 test samples of 2 classes, two per condition.
    let labels: Vec<u32> = vec![0, 1, 0, 1, 0, 1, 0, 1];
    let validities = vec![
        Validity::ALL_VALID,
        Validity::ALL_VALID,
        Validity { audio: false, ..Validity::ALL_VALID },
        Validity { audio: false, ..Validity::ALL_VALID },
        Validity { visible: false, ..Validity::ALL_VALID },
        Validity { visible: false, ..Validity::ALL_VALID },
        Validity { thermal: false, ..Validity::ALL_VALID },
        Validity { thermal: false, ..Validity::ALL_VALID },
    ];
    let mut reports = Vec::new();
    for (name, wrong) in [("Prop", 0usize), ("AV", 1), ("AT", 2), ("VT", 2)] {
        let mut logits = Array2::<f64>::zeros((labels.len(), 2));
        for (i, &y) in labels.iter().enumerate() {
            let correct = i >= wrong; // the first `wrong` samples are missed
            let target = if correct { y } else { 1 - y };
            logits[[i, target as usize]] = 1.0;
        }
        reports.push(conditions_from_logits(&logits, &labels, &validities, name, 0)?);
    }
    println!("{}", emit_report(&reports)?);
    Ok(())
}
