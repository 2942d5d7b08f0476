use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Bright inset panel burned into the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subscreen {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub intensity: u8,
}

/// Degradations applied to one rendered frame. Shifts are in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub blur_sigma: f64,
    /// Moves every part before rasterization, pushing it towards the border.
    pub crop_shift: (f64, f64),
    /// Moves the femoral component relative to the tibial one.
    pub overlap_shift: (f64, f64),
    /// Adds a second femur/tibia pair.
    pub bilateral: bool,
    pub subscreen: Option<Subscreen>,
    /// Background texture amplitude in `[0, 1]`.
    pub noise_amp: f64,
    /// Radius of the circular field of view around the image centre.
    pub field_radius: f64,
}

impl ScenarioSpec {
    /// No degradation at all.
    pub fn clean() -> Self {
        Self {
            blur_sigma: 0.0,
            crop_shift: (0.0, 0.0),
            overlap_shift: (0.0, 0.0),
            bilateral: false,
            subscreen: None,
            noise_amp: 0.0,
            field_radius: f64::INFINITY,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let limit = width.min(height) as f64 / 4.0;
        if !(self.blur_sigma >= 0.0 && self.blur_sigma <= limit) {
            return Err(Error::Config(format!("blur sigma {} outside [0, {limit}]", self.blur_sigma)));
        }
        if !(0.0..=1.0).contains(&self.noise_amp) {
            return Err(Error::Config(format!("noise amplitude {} outside [0, 1]", self.noise_amp)));
        }
        if !(self.field_radius > 0.0) {
            return Err(Error::Config(format!("field radius {} must be positive", self.field_radius)));
        }
        if let Some(s) = self.subscreen {
            if s.width == 0 || s.height == 0 || s.x + s.width > width || s.y + s.height > height {
                return Err(Error::Config(format!("subscreen {s:?} does not fit a {width}x{height} image")));
            }
        }
        Ok(())
    }
}

/// Families of frames, each stressing one way segmentation goes wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioClass {
    Clean,
    /// Motion blur from low frame rates.
    Blur,
    /// Knee partly outside the field.
    Crop,
    /// Femoral and tibial silhouettes overlapping.
    Overlap,
    /// Both knees implanted.
    Bilateral,
    /// Inset screen burned into the frame.
    Subscreen,
    /// Blur and overlap together, sometimes with an inset.
    Combined,
}

impl ScenarioClass {
    pub const ALL: [ScenarioClass; 7] = [
        ScenarioClass::Clean,
        ScenarioClass::Blur,
        ScenarioClass::Crop,
        ScenarioClass::Overlap,
        ScenarioClass::Bilateral,
        ScenarioClass::Subscreen,
        ScenarioClass::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioClass::Clean => "clean",
            ScenarioClass::Blur => "blur",
            ScenarioClass::Crop => "crop",
            ScenarioClass::Overlap => "overlap",
            ScenarioClass::Bilateral => "bilateral",
            ScenarioClass::Subscreen => "subscreen",
            ScenarioClass::Combined => "combined",
        }
    }

    /// Draws concrete degradation parameters for a `width`×`height` frame.
    pub fn sample_spec<R: Rng + ?Sized>(self, width: usize, height: usize, rng: &mut R) -> ScenarioSpec {
        if self == ScenarioClass::Clean {
            return ScenarioSpec::clean();
        }
        let size = width.min(height) as f64;
        let scale = size / 256.0;
        let mut spec = ScenarioSpec {
            noise_amp: rng.gen_range(0.1..0.3),
            field_radius: size / 2.0 * rng.gen_range(0.98..1.15),
            ..ScenarioSpec::clean()
        };
        let blur = |rng: &mut R| rng.gen_range(1.5..3.0) * scale;
        let overlap = |rng: &mut R| (rng.gen_range(-4.0..4.0) * scale, rng.gen_range(0.06..0.12) * size);
        let subscreen = |rng: &mut R| {
            let w = (rng.gen_range(0.2..0.3) * width as f64) as usize;
            let h = (rng.gen_range(0.15..0.25) * height as f64) as usize;
            let x = if rng.gen_bool(0.5) { 0 } else { width - w };
            let y = if rng.gen_bool(0.5) { 0 } else { height - h };
            Subscreen {
                x,
                y,
                width: w.max(1),
                height: h.max(1),
                intensity: 230,
            }
        };
        match self {
            ScenarioClass::Clean => unreachable!(),
            ScenarioClass::Blur => spec.blur_sigma = blur(rng),
            ScenarioClass::Crop => {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let magnitude = rng.gen_range(0.3..0.45) * size;
                spec.crop_shift = (magnitude * angle.cos(), magnitude * angle.sin());
            }
            ScenarioClass::Overlap => spec.overlap_shift = overlap(rng),
            ScenarioClass::Bilateral => spec.bilateral = true,
            ScenarioClass::Subscreen => spec.subscreen = Some(subscreen(rng)),
            ScenarioClass::Combined => {
                spec.blur_sigma = blur(rng);
                spec.overlap_shift = overlap(rng);
                if rng.gen_bool(0.5) {
                    spec.subscreen = Some(subscreen(rng));
                }
            }
        }
        spec
    }
}

impl fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario class {s:?}")))
    }
}

/// Fractions of each scenario class in a dataset; they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMix {
    entries: Vec<(ScenarioClass, f64)>,
}

const MIX_TOLERANCE: f64 = 1e-9;

impl ScenarioMix {
    pub fn new(entries: impl IntoIterator<Item = (ScenarioClass, f64)>) -> Result<Self> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by_key(|(c, _)| *c);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("scenario class listed twice in mix".into()));
        }
        if let Some((c, f)) = entries.iter().find(|(_, f)| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config(format!("fraction {f} for {c} is not a non-negative number")));
        }
        let total: f64 = entries.iter().map(|(_, f)| f).sum();
        if (total - 1.0).abs() > MIX_TOLERANCE {
            return Err(Error::Config(format!("mix fractions sum to {total}, expected 1")));
        }
        Ok(Self { entries })
    }

    pub fn pure(class: ScenarioClass) -> Self {
        Self {
            entries: vec![(class, 1.0)],
        }
    }

    pub fn entries(&self) -> &[(ScenarioClass, f64)] {
        &self.entries
    }

    /// Maps a uniform draw in `[0, 1)` to a class.
    pub fn pick(&self, u: f64) -> ScenarioClass {
        let mut acc = 0.0;
        for &(class, fraction) in &self.entries {
            acc += fraction;
            if u < acc {
                return class;
            }
        }
        self.entries
            .iter()
            .rev()
            .find(|(_, f)| *f > 0.0)
            .map(|(c, _)| *c)
            .expect("mix has positive mass")
    }
}

impl FromStr for ScenarioMix {
    type Err = Error;

    /// `clean=0.5,overlap=0.5`
    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|pair| {
                let (name, value) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("mix entry {pair:?} is not name=fraction")))?;
                let fraction = value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad fraction {value:?}")))?;
                Ok((name.trim().parse::<ScenarioClass>()?, fraction))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }
}

impl fmt::Display for ScenarioMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|(c, v)| format!("{c}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}
