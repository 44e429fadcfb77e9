//! Image quality metrics: PSNR and SSIM against a reference, ENL on
//! homogeneous blocks, and ratio-image statistics for no-reference
//! assessment.
//!
//! Undefined results are never reported as zero: a perfect match gives an
//! infinite PSNR and a constant block an infinite ENL.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::speckle::Format;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Minimum pixel count of an ENL block.
pub const MIN_BLOCK_AREA: usize = 64;

fn amplitudes(r: &Raster) -> impl Iterator<Item = f64> + '_ {
    r.data().iter().map(|&v| f64::from(v))
}

pub fn psnr(reference: &Raster, test: &Raster, peak: f64) -> Result<f64> {
    reference.same_dims(test, "psnr")?;
    if !(peak > 0.0) {
        return Err(Error::usage("peak must be positive"));
    }
    let mse = amplitudes(reference)
        .zip(amplitudes(test))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "valid" Gaussian filtering of an h x w image.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * img[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over all 11x11 Gaussian windows fully inside the image.
pub fn ssim(reference: &Raster, test: &Raster, peak: f64) -> Result<f64> {
    reference.same_dims(test, "ssim")?;
    let (h, w) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::usage(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::usage("peak must be positive"));
    }
    let taps = gaussian_taps();
    let x: Vec<f64> = amplitudes(reference).collect();
    let y: Vec<f64> = amplitudes(test).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = filter_valid(&x, h, w, &taps);
    let my = filter_valid(&y, h, w, &taps);
    let mxx = filter_valid(&prod(&x, &x), h, w, &taps);
    let myy = filter_valid(&prod(&y, &y), h, w, &taps);
    let mxy = filter_valid(&prod(&x, &y), h, w, &taps);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// The `q`-th percentile (0..=100) of the samples, nearest-rank.
pub fn percentile(r: &Raster, q: f64) -> f64 {
    let mut v: Vec<f32> = r.data().to_vec();
    v.sort_by(f32::total_cmp);
    let rank = ((q / 100.0) * (v.len() - 1) as f64).round() as usize;
    f64::from(v[rank.min(v.len() - 1)])
}

/// Peak for amplitude SAR data: the 99.9th percentile of the reference.
pub fn auto_peak(reference: &Raster) -> f64 {
    percentile(reference, 99.9)
}

/// Axis-aligned rectangle (row, col, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockSpec {
    pub rects: Vec<Rect>,
}

impl BlockSpec {
    /// Parses one `row col h w` rectangle per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rects = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(format!("line {}: expected four integers", lineno + 1)))?;
            match nums[..] {
                [row, col, h, w] => rects.push(Rect { row, col, h, w }),
                _ => return Err(Error::format(format!("line {}: expected `row col h w`", lineno + 1))),
            }
        }
        Ok(BlockSpec { rects })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks every rectangle against an image; errors name the rectangle index.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (i, r) in self.rects.iter().enumerate() {
            if r.row + r.h > height || r.col + r.w > width {
                return Err(Error::usage(format!(
                    "block {i} ({} {} {} {}) exceeds the {height}x{width} image",
                    r.row, r.col, r.h, r.w
                )));
            }
            if r.h * r.w < MIN_BLOCK_AREA {
                return Err(Error::usage(format!(
                    "block {i} has {} pixels, fewer than {MIN_BLOCK_AREA}",
                    r.h * r.w
                )));
            }
        }
        Ok(())
    }
}

/// `mean^2 / variance`, or +inf for zero variance.
fn enl_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        f64::INFINITY
    } else {
        mean * mean / var
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnlReport {
    pub per_block: Vec<f64>,
    pub mean: f64,
}

/// Equivalent number of looks of each block, computed in intensity.
pub fn enl(image: &Raster, blocks: &BlockSpec, format: Format) -> Result<EnlReport> {
    blocks.validate(image.height(), image.width())?;
    if blocks.rects.is_empty() {
        return Err(Error::usage("no blocks given for ENL"));
    }
    let w = image.width();
    let per_block: Vec<f64> = blocks
        .rects
        .iter()
        .map(|r| {
            let values = (r.row..r.row + r.h)
                .flat_map(move |row| (r.col..r.col + r.w).map(move |col| row * w + col))
                .map(|i| format.to_intensity(f64::from(image.data()[i])));
            enl_of(values)
        })
        .collect();
    let mean = per_block.iter().sum::<f64>() / per_block.len() as f64;
    Ok(EnlReport { per_block, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioMetrics {
    pub mean: f64,
    pub enl: f64,
    /// `(|mean - 1| + |enl - L| / L) / 2`; `None` when the ratio image is
    /// constant (infinite ENL) and the deviation is undefined.
    pub deviation: Option<f64>,
}

/// Statistics of the intensity ratio `noisy / filtered`. For an ideal filter
/// the ratio is pure L-look speckle: mean 1 and ENL `looks`.
pub fn ratio_metrics(noisy: &Raster, filtered: &Raster, format: Format, looks: u32) -> Result<RatioMetrics> {
    noisy.same_dims(filtered, "ratio image")?;
    if looks == 0 {
        return Err(Error::usage("looks must be >= 1"));
    }
    let ratio: Vec<f64> = amplitudes(noisy)
        .zip(amplitudes(filtered))
        .map(|(y, x)| format.to_intensity(y / x))
        .collect();
    let mean = ratio.iter().sum::<f64>() / ratio.len() as f64;
    let enl = enl_of(ratio.iter().copied());
    let l = f64::from(looks);
    let deviation = enl.is_finite().then(|| ((mean - 1.0).abs() + (enl - l).abs() / l) / 2.0);
    Ok(RatioMetrics { mean, enl, deviation })
}

/// One CSV row of metrics; absent entries are left empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub name: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub enl: Option<EnlReport>,
    pub ratio: Option<RatioMetrics>,
}

pub const CSV_HEADER: &str = "image,psnr,ssim,enl_mean,enl_blocks,ratio_mean,ratio_enl,ratio_deviation";

/// Formats a metric value: `inf` for +infinity, shortest round-trip otherwise.
pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_value).unwrap_or_default();
        let mut row = String::new();
        let name = self.name.replace([',', '\n'], "_");
        let blocks = self
            .enl
            .as_ref()
            .map(|e| e.per_block.iter().map(|&v| format_value(v)).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let _ = write!(
            row,
            "{name},{},{},{},{blocks},{},{},{}",
            opt(self.psnr),
            opt(self.ssim),
            opt(self.enl.as_ref().map(|e| e.mean)),
            opt(self.ratio.as_ref().map(|r| r.mean)),
            opt(self.ratio.as_ref().map(|r| r.enl)),
            opt(self.ratio.as_ref().and_then(|r| r.deviation)),
        );
        row
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_none() && self.ssim.is_none() && self.enl.is_none() && self.ratio.is_none()
    }
}

/// Header plus one row per report, LF-terminated.
pub fn to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Raster {
        Raster::from_fn(h, w, |r, c| 10.0 + ((r * 7 + c * 13) % 200) as f32).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = ramp(16, 16);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        let floor = Raster::constant(8, 8, 0.255).unwrap();
        let shifted = Raster::constant(8, 8, 0.255 + 25.5).unwrap();
        let v = psnr(&floor, &shifted, 255.0).unwrap();
        assert!((v - 20.0).abs() < 1e-4, "{v}");
        assert!(psnr(&a, &ramp(8, 8), 255.0).is_err());
    }

    #[test]
    fn ssim_identity_and_size_limit() {
        let a = ramp(20, 24);
        assert_eq!(ssim(&a, &a, 255.0).unwrap(), 1.0);
        let small = ramp(10, 30);
        assert!(matches!(ssim(&small, &small, 255.0), Err(Error::Usage(_))));
    }

    #[test]
    fn ssim_of_constants_is_closed_form() {
        let a = Raster::constant(16, 16, 100.0).unwrap();
        let b = Raster::constant(16, 16, 140.0).unwrap();
        let c1 = (0.01f64 * 255.0).powi(2);
        let expected = (2.0 * 100.0 * 140.0 + c1) / (100.0f64.powi(2) + 140.0f64.powi(2) + c1);
        assert!((ssim(&a, &b, 255.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn enl_constant_block_is_infinite() {
        let a = Raster::constant(16, 16, 3.0).unwrap();
        let blocks = BlockSpec { rects: vec![Rect { row: 0, col: 0, h: 8, w: 8 }] };
        let r = enl(&a, &blocks, Format::Amplitude).unwrap();
        assert_eq!(r.per_block, vec![f64::INFINITY]);
    }

    #[test]
    fn block_spec_parsing_and_validation() {
        let spec = BlockSpec::parse("# blocks\n0 0 8 8\n\n 4 4 10 10 # second\n").unwrap();
        assert_eq!(spec.rects.len(), 2);
        assert!(spec.validate(20, 20).is_ok());
        let err = spec.validate(12, 20).unwrap_err().to_string();
        assert!(err.contains("block 1"), "{err}");
        assert!(BlockSpec::parse("0 0 8").is_err());
        let tiny = BlockSpec::parse("0 0 4 4").unwrap();
        assert!(tiny.validate(20, 20).is_err());
    }

    #[test]
    fn identity_filter_ratio_is_degenerate() {
        let a = ramp(16, 16);
        let r = ratio_metrics(&a, &a, Format::Amplitude, 1).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.enl, f64::INFINITY);
        assert_eq!(r.deviation, None);
    }

    #[test]
    fn csv_rendering() {
        let report = MetricReport {
            name: "clip".into(),
            psnr: Some(f64::INFINITY),
            ssim: Some(1.0),
            enl: None,
            ratio: None,
        };
        assert_eq!(report.csv_row(), "clip,inf,1,,,,,");
        let csv = to_csv(&[report]);
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.ends_with('\n') && !csv.contains('\r'));
    }

    #[test]
    fn percentile_nearest_rank() {
        let r = Raster::from_fn(1, 1001, |_, c| (c + 1) as f32).unwrap();
        assert_eq!(percentile(&r, 99.9), 1000.0);
        assert_eq!(percentile(&r, 0.0), 1.0);
    }
}
