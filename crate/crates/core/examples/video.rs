//! Writes a synthetic flexion sweep as numbered frames, segments it with a
//! worker pool, and draws colour overlays.
//!
//!     cargo run --release --example video -- /tmp/sweep 60 2

use fluoroseg::segment::{Backend, ThresholdConfig};
use fluoroseg::synth::{render_flexion_sweep, ScenarioClass, SceneGeometry};
use fluoroseg::video::{run_video, FrameSource};

fn main() -> fluoroseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "sweep".into());
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let workers: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let frames = format!("{dir}/frames");
    std::fs::create_dir_all(&frames)?;
    for (i, s) in render_flexion_sweep(&SceneGeometry::standard(256), n, ScenarioClass::Blur, 0)?.iter().enumerate() {
        s.image.write_pgm(format!("{frames}/{i:05}.pgm"))?;
    }

    let src = FrameSource::open(&frames)?;
    let out = format!("{dir}/run");
    let run = run_video(&src, &Backend::Threshold(ThresholdConfig::default()), Some(out.as_ref()), true, workers)?;
    for r in run.records.iter().step_by((n / 6).max(1)) {
        println!("frame {:>3}: {} detection(s), {:.1} ms", r.index, r.detections.len(), r.latency * 1e3);
    }
    println!("{}", run.report.summary());
    println!("results, report and overlays in {out}");
    Ok(())
}
