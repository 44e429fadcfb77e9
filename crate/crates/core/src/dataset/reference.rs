//! Clean-reference construction from a co-registered temporal stack.
//!
//! The reference is the intensity-domain multilook of all acquisitions.
//! Pixels are tested for temporal change with the coefficient of variation
//! (CV) of their intensity series: for a static single-look scene the CV is
//! 1 regardless of reflectivity. A pixel is flagged when its sample CV
//! exceeds `threshold` times that value. Single-look speckle can hide even
//! large changes at individual pixels, so flags are consolidated over the
//! 3x3 neighborhood: a pixel is rejected when at least `min_votes` pixels
//! around it (itself included) are flagged.

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::speckle::{multilook, Format};

#[derive(Debug, Clone)]
pub struct TemporalStack {
    looks: Vec<Raster>,
    format: Format,
}

impl TemporalStack {
    pub fn new(looks: Vec<Raster>, format: Format) -> Result<Self> {
        let first = looks.first().ok_or_else(|| Error::usage("empty temporal stack"))?;
        for (t, r) in looks.iter().enumerate().skip(1) {
            first.same_dims(r, &format!("temporal look {t}"))?;
        }
        Ok(TemporalStack { looks, format })
    }

    pub fn looks(&self) -> &[Raster] {
        &self.looks
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn len(&self) -> usize {
        self.looks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.looks.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.looks[0].dims()
    }
}

/// `true` marks temporally stable pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMask {
    pub height: usize,
    pub width: usize,
    pub stable: Vec<bool>,
}

impl ChangeMask {
    pub fn all(height: usize, width: usize, stable: bool) -> Self {
        ChangeMask { height, width, stable: vec![stable; height * width] }
    }

    pub fn is_stable(&self, row: usize, col: usize) -> bool {
        self.stable[row * self.width + col]
    }

    pub fn stable_fraction(&self) -> f64 {
        self.stable.iter().filter(|&&s| s).count() as f64 / self.stable.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConfig {
    /// Multiple of the speckle-only CV above which a pixel is flagged.
    pub threshold: f64,
    /// Equivalent looks of each acquisition; the speckle-only CV is `1/sqrt(looks)`.
    pub looks: u32,
    /// 3x3 vote count that rejects a pixel; `None` uses the raw per-pixel test.
    pub min_votes: Option<usize>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig { threshold: 1.5, looks: 1, min_votes: Some(2) }
    }
}

/// Per-pixel sample CV of the intensity series.
pub fn temporal_cv(stack: &TemporalStack) -> Vec<f64> {
    let (h, w) = stack.dims();
    let t = stack.len() as f64;
    (0..h * w)
        .map(|i| {
            let series = stack.looks.iter().map(|r| stack.format.to_intensity(f64::from(r.data()[i])));
            let mean = series.clone().sum::<f64>() / t;
            let var = series.map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
            var.sqrt() / mean
        })
        .collect()
}

pub fn build_reference(stack: &TemporalStack, cfg: &ReferenceConfig) -> Result<(Raster, ChangeMask)> {
    if stack.len() < 2 {
        return Err(Error::usage(format!(
            "reference building needs at least 2 acquisitions, got {}",
            stack.len()
        )));
    }
    if !(cfg.threshold > 0.0) {
        return Err(Error::usage("change threshold must be positive"));
    }
    let reference = multilook(&stack.looks, stack.format)?;
    let (h, w) = stack.dims();
    let limit = cfg.threshold / f64::from(cfg.looks.max(1)).sqrt();
    let flagged: Vec<bool> = temporal_cv(stack).into_iter().map(|cv| cv > limit).collect();
    let stable = match cfg.min_votes {
        None => flagged.iter().map(|f| !f).collect(),
        Some(votes) => (0..h * w)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                let mut count = 0;
                for rr in r.saturating_sub(1)..(r + 2).min(h) {
                    for cc in c.saturating_sub(1)..(c + 2).min(w) {
                        count += usize::from(flagged[rr * w + cc]);
                    }
                }
                count < votes.max(1)
            })
            .collect(),
    };
    Ok((reference, ChangeMask { height: h, width: w, stable }))
}
