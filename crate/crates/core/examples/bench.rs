//! Throughput of both backends on in-memory 256×256 frames.
//!
//!     cargo run --release --example bench -- 100 [checkpoint.fseg]

use fluoroseg::segment::{Backend, ProtoConfig, ProtoModel, ThresholdConfig};
use fluoroseg::video::bench;

fn main() -> fluoroseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let model = match args.next() {
        Some(path) => ProtoModel::load(path)?,
        None => ProtoModel::init(0),
    };
    for backend in [Backend::Threshold(ThresholdConfig::default()), Backend::Proto(model, ProtoConfig::default())] {
        let run = bench(&backend, 256, frames, 1, 0)?;
        println!("{}", run.report.summary());
    }
    Ok(())
}
