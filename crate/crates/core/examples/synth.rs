//! Renders one sample of every scenario class and writes the frames as PGM.
//!
//!     cargo run --example synth -- /tmp/frames 256

use fluoroseg::synth::{generate_dataset, ScenarioClass, ScenarioMix, SceneGeometry};

fn main() -> fluoroseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synth_frames".into());
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(256);
    std::fs::create_dir_all(&out)?;

    let geometry = SceneGeometry::standard(size);
    for (i, class) in ScenarioClass::ALL.into_iter().enumerate() {
        let sample = generate_dataset(1, &ScenarioMix::pure(class), i as u64, &geometry)?.remove(0);
        let path = format!("{out}/{class}.pgm");
        sample.image.write_pgm(&path)?;
        let parts: Vec<String> = sample
            .parts
            .iter()
            .map(|p| format!("{} {} px", p.category, p.mask.count()))
            .collect();
        println!("{path}: {}", parts.join(", "));
    }
    Ok(())
}
