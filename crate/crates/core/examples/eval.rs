//! Scores threshold-baseline predictions against ground truth across the
//! IoU sweep, class-agnostically, and prints the table.
//!
//!     cargo run --example eval

use fluoroseg::coco::CocoDataset;
use fluoroseg::eval::{default_thresholds, evaluate, render_table, IouKind, Predictions};
use fluoroseg::segment::{segment, Backend, ThresholdConfig};
use fluoroseg::synth::{generate_dataset, ScenarioClass, ScenarioMix, SceneGeometry};

fn main() -> fluoroseg::Result<()> {
    let mix = ScenarioMix::new([(ScenarioClass::Clean, 0.5), (ScenarioClass::Blur, 0.25), (ScenarioClass::Crop, 0.25)])?;
    let samples = generate_dataset(30, &mix, 2, &SceneGeometry::standard(256))?;
    let truth = CocoDataset::from_samples(&samples, None);
    let backend = Backend::Threshold(ThresholdConfig::default());

    let mut preds = Predictions::new();
    for (img, s) in truth.images.iter().zip(&samples) {
        preds.insert(img.id, segment(&backend, &s.image)?);
    }
    let report = evaluate(&preds, &truth, &default_thresholds(), &IouKind::BOTH, backend.is_class_agnostic())?;
    print!("{}", render_table(&report)?);
    Ok(())
}
