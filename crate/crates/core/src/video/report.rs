use serde::{Deserialize, Serialize};

use crate::segment::BackendKind;

/// Nominal real-time rate that throughput is compared against.
pub const REFERENCE_FPS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub backend: BackendKind,
    pub image_size: (usize, usize),
    pub workers: usize,
    /// Successfully segmented frames.
    pub frames: usize,
    pub failed: usize,
    pub wall_seconds: f64,
    pub fps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Sum of per-frame latencies, seconds.
    pub busy_seconds: f64,
    pub hardware: String,
    pub reference_fps: f64,
}

/// Nearest-rank percentile of `values` (need not be sorted); 0 when empty.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// CPU model and logical core count, as far as the platform reveals them.
pub fn hardware_description() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{model}, {cores} logical cores, {}", std::env::consts::OS)
}

impl ThroughputReport {
    pub fn new(
        backend: BackendKind,
        image_size: (usize, usize),
        workers: usize,
        wall_seconds: f64,
        latencies: &[f64],
        failed: usize,
    ) -> Self {
        let frames = latencies.len();
        Self {
            backend,
            image_size,
            workers,
            frames,
            failed,
            wall_seconds,
            fps: if wall_seconds > 0.0 { frames as f64 / wall_seconds } else { f64::INFINITY },
            p50_ms: 1e3 * percentile(latencies, 50.0),
            p95_ms: 1e3 * percentile(latencies, 95.0),
            busy_seconds: latencies.iter().sum(),
            hardware: hardware_description(),
            reference_fps: REFERENCE_FPS,
        }
    }

    /// Per-worker busy time should not exceed the wall clock by much.
    pub fn overhead_ok(&self) -> bool {
        self.busy_seconds / self.workers as f64 <= self.wall_seconds * 1.25
    }

    pub fn summary(&self) -> String {
        format!(
            "{:?} backend, {}x{}, {} worker(s): {} frames in {:.3} s = {:.1} fps \
             (p50 {:.2} ms, p95 {:.2} ms){}\n\
             hardware: {}\n\
             reference rate {:.0} fps; this run is {:.2}x that",
            self.backend,
            self.image_size.0,
            self.image_size.1,
            self.workers,
            self.frames,
            self.wall_seconds,
            self.fps,
            self.p50_ms,
            self.p95_ms,
            if self.failed > 0 { format!(", {} failed", self.failed) } else { String::new() },
            self.hardware,
            self.reference_fps,
            self.fps / self.reference_fps,
        )
    }
}
