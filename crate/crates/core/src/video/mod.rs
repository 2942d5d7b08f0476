//! Frame-sequence segmentation with an ordered worker pool, colour overlays
//! and throughput accounting.

mod overlay;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::{write_results, CocoResult};
use crate::error::{Error, Result};
use crate::netpbm::GrayImage;
use crate::segment::{segment, Backend, Detection};
use crate::synth::{render_flexion_sweep, ScenarioClass, SceneGeometry};

pub use overlay::{overlay, tint};
pub use report::{hardware_description, percentile, ThroughputReport, REFERENCE_FPS};

/// Numbered PGM frames in a directory, ordered by the numeric file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSource {
    pub dir: PathBuf,
    /// `(frame index, path)` in playback order.
    pub frames: Vec<(u64, PathBuf)>,
    pub width: usize,
    pub height: usize,
}

impl FrameSource {
    /// Lists `*.pgm` files whose stem is a decimal number; the first frame
    /// fixes the dimensions.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mut frames = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let index: u64 = stem
                .parse()
                .map_err(|_| Error::Config(format!("frame name {} is not numbered", path.display())))?;
            frames.push((index, path));
        }
        frames.sort();
        if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Config(format!("two frames numbered {}", w[0].0)));
        }
        let first = frames
            .first()
            .ok_or_else(|| Error::Config(format!("no numbered .pgm frames in {}", dir.display())))?;
        let probe = GrayImage::read_pgm(&first.1)?;
        Ok(Self {
            dir,
            width: probe.width(),
            height: probe.height(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn decode(&self, path: &Path) -> Result<GrayImage> {
        let img = GrayImage::read_pgm(path)?;
        if (img.width(), img.height()) != (self.width, self.height) {
            return Err(Error::Shape(format!(
                "frame is {}x{}, sequence is {}x{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        Ok(img)
    }
}

/// Outcome for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u64,
    pub detections: Vec<CocoResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Decode + segment time, seconds.
    pub latency: f64,
}

#[derive(Debug, Clone)]
pub struct VideoRun {
    pub records: Vec<FrameRecord>,
    pub report: ThroughputReport,
}

impl VideoRun {
    /// All detections in frame order, `image_id` = frame index.
    pub fn results(&self) -> Vec<CocoResult> {
        self.records.iter().flat_map(|r| r.detections.iter().cloned()).collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("need at least one worker".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Run(format!("cannot start worker pool: {e}")))
}

fn to_results(index: u64, dets: &[Detection]) -> Vec<CocoResult> {
    dets.iter().map(|d| d.to_result(index)).collect()
}

/// Segments every frame once with `workers` threads. Results are merged in
/// frame order, so the output does not depend on the worker count. With
/// `out_dir`, writes `detections.json`, `report.json` and optionally
/// `overlays/NNNNN.ppm`; overlays are drawn after the timed stage.
pub fn run_video(
    src: &FrameSource,
    backend: &Backend,
    out_dir: Option<&Path>,
    overlay_frames: bool,
    workers: usize,
) -> Result<VideoRun> {
    let pool = pool(workers)?;
    let start = Instant::now();
    let outcomes: Vec<(u64, Result<(GrayImage, Vec<Detection>)>, f64)> = pool.install(|| {
        src.frames
            .par_iter()
            .map(|(index, path)| {
                let t = Instant::now();
                let out = src.decode(path).and_then(|img| {
                    let dets = segment(backend, &img)?;
                    Ok((img, dets))
                });
                (*index, out, t.elapsed().as_secs_f64())
            })
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut latencies = Vec::new();
    let mut frames_ok = Vec::new();
    for (index, outcome, latency) in outcomes {
        match outcome {
            Ok((img, dets)) => {
                latencies.push(latency);
                records.push(FrameRecord {
                    index,
                    detections: to_results(index, &dets),
                    error: None,
                    latency,
                });
                frames_ok.push((index, img, dets));
            }
            Err(e) => records.push(FrameRecord {
                index,
                detections: Vec::new(),
                error: Some(e.to_string()),
                latency,
            }),
        }
    }
    if frames_ok.is_empty() {
        return Err(Error::Run(format!("all {} frames failed", records.len())));
    }
    let report = ThroughputReport::new(
        backend.kind(),
        (src.width, src.height),
        workers,
        wall,
        &latencies,
        records.iter().filter(|r| r.error.is_some()).count(),
    );
    let run = VideoRun { records, report };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_results(dir.join("detections.json"), &run.results())?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&run.report)?)?;
        let errors: Vec<&FrameRecord> = run.records.iter().filter(|r| r.error.is_some()).collect();
        if !errors.is_empty() {
            fs::write(dir.join("errors.json"), serde_json::to_string_pretty(&errors)?)?;
        }
        if overlay_frames {
            let odir = dir.join("overlays");
            fs::create_dir_all(&odir)?;
            pool.install(|| {
                frames_ok
                    .par_iter()
                    .try_for_each(|(index, img, dets)| overlay(img, dets).write_ppm(odir.join(format!("{index:05}.ppm"))))
            })?;
        }
    }
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: ThroughputReport,
    /// Per timed frame, in order.
    pub detections: Vec<Vec<CocoResult>>,
}

pub const WARMUP_FRAMES: usize = 5;

/// Synthetic flexion sweep held in memory as PGM bytes. The first
/// [`WARMUP_FRAMES`] frames are segmented untimed; the remaining
/// `n_frames` are decoded and segmented under the clock.
pub fn bench(backend: &Backend, image_size: usize, n_frames: usize, workers: usize, seed: u64) -> Result<BenchRun> {
    if n_frames < 10 {
        return Err(Error::Config(format!("bench needs at least 10 frames, got {n_frames}")));
    }
    let geometry = SceneGeometry::standard(image_size);
    let encoded: Vec<Vec<u8>> = render_flexion_sweep(&geometry, n_frames + WARMUP_FRAMES, ScenarioClass::Clean, seed)?
        .into_iter()
        .map(|s| s.image.to_pgm())
        .collect();
    let pool = pool(workers)?;
    let (warm, timed) = encoded.split_at(WARMUP_FRAMES);
    pool.install(|| {
        warm.par_iter()
            .try_for_each(|bytes| segment(backend, &GrayImage::from_pgm(bytes)?).map(drop))
    })?;

    let start = Instant::now();
    let outcomes: Vec<Result<(Vec<Detection>, f64)>> = pool.install(|| {
        timed
            .par_iter()
            .map(|bytes| {
                let t = Instant::now();
                let dets = segment(backend, &GrayImage::from_pgm(bytes)?)?;
                Ok((dets, t.elapsed().as_secs_f64()))
            })
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();
    let mut latencies = Vec::with_capacity(n_frames);
    let mut detections = Vec::with_capacity(n_frames);
    for (i, o) in outcomes.into_iter().enumerate() {
        let (dets, latency) = o?;
        latencies.push(latency);
        detections.push(to_results(i as u64, &dets));
    }
    let report = ThroughputReport::new(backend.kind(), (image_size, image_size), workers, wall, &latencies, 0);
    Ok(BenchRun { report, detections })
}
