//! Trains the prototype-mask model on clean synthetic frames, reports the
//! loss curve and held-out mask mAP@0.50, and saves the checkpoint.
//!
//!     cargo run --release --example train -- 2000 /tmp/knee.fseg

use std::time::Instant;

use fluoroseg::coco::{split_train_test, CocoDataset};
use fluoroseg::eval::{evaluate, IouKind, Predictions};
use fluoroseg::segment::{segment, train, Backend, ProtoConfig, ProtoModel, TrainConfig, TrainingSet};
use fluoroseg::synth::{generate_dataset, ScenarioClass, ScenarioMix, SceneGeometry};

fn main() -> fluoroseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let ckpt = args.next().unwrap_or_else(|| "knee.fseg".into());

    let samples = generate_dataset(250, &ScenarioMix::pure(ScenarioClass::Clean), 8, &SceneGeometry::standard(128))?;
    let ds = CocoDataset::from_samples(&samples, None);
    let (train_ds, test_ds) = split_train_test(&ds, 0.8, 8)?;
    let frames = |d: &CocoDataset| -> Vec<_> { d.images.iter().map(|i| samples[i.id as usize - 1].image.clone()).collect() };
    let set = TrainingSet::new(&train_ds, &frames(&train_ds))?;

    let cfg = TrainConfig { iterations, ..Default::default() };
    let mut model = ProtoModel::init(cfg.seed);
    println!("{} parameters, {} training frames", model.param_count(), set.len());
    let start = Instant::now();
    let trace = train(&mut model, &set, &cfg)?;
    println!("{} iterations in {:.0} s", trace.len(), start.elapsed().as_secs_f64());
    for (i, chunk) in trace.chunks(250).enumerate() {
        println!("  iter {:>5}: mean loss {:.4}", i * 250, chunk.iter().sum::<f64>() / chunk.len() as f64);
    }

    let backend = Backend::Proto(model, ProtoConfig::default());
    let mut preds = Predictions::new();
    for (img, frame) in test_ds.images.iter().zip(frames(&test_ds)) {
        preds.insert(img.id, segment(&backend, &frame)?);
    }
    let report = evaluate(&preds, &test_ds, &[0.5], &IouKind::BOTH, false)?;
    println!(
        "held-out ({} frames): mask mAP@0.50 {:.2}, box mAP@0.50 {:.2}",
        test_ds.images.len(),
        report.map_at(IouKind::Mask, 0).unwrap_or(0.0),
        report.map_at(IouKind::Box, 0).unwrap_or(0.0)
    );
    if let Backend::Proto(model, _) = backend {
        model.save(&ckpt)?;
        println!("saved {ckpt}");
    }
    Ok(())
}
