//! Exports a small synthetic dataset in COCO form, splits it, and shows the
//! RLE encoding of one mask.
//!
//!     cargo run --example coco -- /tmp/knee_coco 20

use std::collections::HashSet;

use fluoroseg::coco::{export_samples, split_train_test, CocoDataset, CocoInfo, RleMask};
use fluoroseg::synth::{generate_dataset, ScenarioClass, ScenarioMix, SceneGeometry};

fn main() -> fluoroseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "knee_coco".into());
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let mix = ScenarioMix::new([(ScenarioClass::Clean, 0.5), (ScenarioClass::Overlap, 0.25), (ScenarioClass::Bilateral, 0.25)])?;
    let samples = generate_dataset(n, &mix, 1, &SceneGeometry::standard(128))?;
    let ds = export_samples(&out, &samples, Some(CocoInfo::generated(1)))?;
    println!("{out}/annotations.json: {} images, {} annotations", ds.images.len(), ds.annotations.len());

    let reread = CocoDataset::read(format!("{out}/annotations.json"))?;
    reread.validate()?;
    assert_eq!(reread, ds);

    let first = &ds.annotations[0];
    let mask = first.segmentation.decode()?;
    let rle = RleMask::encode(&mask);
    println!(
        "annotation {}: {}x{} mask, area {}, {} runs, first counts {:?}",
        first.id,
        rle.width(),
        rle.height(),
        rle.area(),
        rle.counts.len(),
        &rle.counts[..rle.counts.len().min(6)]
    );

    let (train, test) = split_train_test(&ds, 0.9, 0)?;
    let ids = |d: &CocoDataset| d.images.iter().map(|i| i.id).collect::<HashSet<_>>();
    assert!(ids(&train).is_disjoint(&ids(&test)));
    train.write(format!("{out}/train.json"))?;
    test.write(format!("{out}/test.json"))?;
    println!("split: {} train / {} test images", train.images.len(), test.images.len());
    Ok(())
}
