use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BinaryMask;

/// Uncompressed COCO run-length encoding. Pixels are scanned column by
/// column; `counts` alternates background and foreground runs, starting with
/// a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`, COCO order.
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn encode(mask: &BinaryMask) -> RleMask {
        let (w, h) = mask.dims();
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for x in 0..w {
            for y in 0..h {
                if mask.get(x, y) != current {
                    counts.push(run);
                    run = 0;
                    current = !current;
                }
                run += 1;
            }
        }
        counts.push(run);
        RleMask { size: [h, w], counts }
    }

    pub fn height(&self) -> usize {
        self.size[0]
    }

    pub fn width(&self) -> usize {
        self.size[1]
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().sum();
        let want = (self.height() * self.width()) as u64;
        if total != want {
            return Err(Error::Codec(format!(
                "run lengths sum to {total}, mask {}x{} has {want} pixels",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        self.validate()?;
        let (w, h) = (self.width(), self.height());
        let mut mask = BinaryMask::new(w, h);
        let mut pos = 0usize;
        for (i, &run) in self.counts.iter().enumerate() {
            let run = run as usize;
            if i % 2 == 1 {
                for p in pos..pos + run {
                    mask.set(p / h, p % h, true);
                }
            }
            pos += run;
        }
        Ok(mask)
    }

    /// Foreground pixel count, without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}
