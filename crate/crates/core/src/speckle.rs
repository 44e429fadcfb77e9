//! Fully developed speckle: simulation, homomorphic transforms, the
//! log-speckle mean and multilooking.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
pub use crate::raster::Raster;

/// Radiometric format of a SAR sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Format {
    #[default]
    Amplitude,
    Intensity,
}

impl Format {
    /// Maps a sample to intensity.
    pub fn to_intensity(self, v: f64) -> f64 {
        match self {
            Format::Amplitude => v * v,
            Format::Intensity => v,
        }
    }

    pub fn from_intensity(self, v: f64) -> f64 {
        match self {
            Format::Amplitude => v.sqrt(),
            Format::Intensity => v,
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Amplitude => "amplitude",
            Format::Intensity => "intensity",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "amplitude" | "amp" => Ok(Format::Amplitude),
            "intensity" | "int" => Ok(Format::Intensity),
            other => Err(Error::usage(format!(
                "unknown format {other:?}, expected amplitude or intensity"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeckleConfig {
    pub looks: u32,
    pub format: Format,
    pub seed: u64,
}

impl SpeckleConfig {
    pub fn new(looks: u32, format: Format, seed: u64) -> Result<Self> {
        if looks == 0 {
            return Err(Error::usage("number of looks must be >= 1"));
        }
        Ok(SpeckleConfig { looks, format, seed })
    }

    /// Single-look amplitude speckle.
    pub fn single_look_amplitude(seed: u64) -> Self {
        SpeckleConfig { looks: 1, format: Format::Amplitude, seed }
    }
}

/// Draws unit-mean L-look speckle factors in the given format.
///
/// Intensity factors are Gamma(L, 1/L); amplitude factors are their square
/// roots, so the squared amplitude factor has unit mean.
pub struct SpeckleSampler {
    gamma: Gamma<f64>,
    format: Format,
}

impl SpeckleSampler {
    pub fn new(looks: u32, format: Format) -> Result<Self> {
        if looks == 0 {
            return Err(Error::usage("number of looks must be >= 1"));
        }
        let l = f64::from(looks);
        let gamma = Gamma::new(l, 1.0 / l).map_err(|e| Error::usage(e.to_string()))?;
        Ok(SpeckleSampler { gamma, format })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = self.gamma.sample(rng);
        match self.format {
            Format::Intensity => n,
            Format::Amplitude => n.sqrt(),
        }
    }
}

/// Multiplies every pixel by an independent speckle factor, in row-major
/// order from a single RNG stream seeded with `cfg.seed`.
pub fn simulate_speckle(clean: &Raster, cfg: &SpeckleConfig) -> Result<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    apply_speckle(clean.data(), clean.height(), clean.width(), cfg, &mut rng)
}

pub(crate) fn apply_speckle<R: Rng + ?Sized>(
    clean: &[f32],
    height: usize,
    width: usize,
    cfg: &SpeckleConfig,
    rng: &mut R,
) -> Result<Raster> {
    if let Some(i) = clean.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::domain(format!("clean pixel {i} = {} is not positive", clean[i])));
    }
    let sampler = SpeckleSampler::new(cfg.looks, cfg.format)?;
    let data = clean
        .iter()
        .map(|&x| ((f64::from(x) * sampler.sample(rng)) as f32).max(f32::MIN_POSITIVE))
        .collect();
    Raster::new(height, width, data)
}

/// A raster in the natural-log domain; samples may have any sign.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRaster {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

pub fn log_transform(y: &Raster) -> LogRaster {
    LogRaster {
        height: y.height(),
        width: y.width(),
        values: y.data().iter().map(|v| v.ln()).collect(),
    }
}

/// Natural log of raw samples; fails on any non-positive value.
pub fn log_values(values: &[f32]) -> Result<Vec<f32>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::domain(format!("log of non-positive sample {i} = {v}")))
            }
        })
        .collect()
}

pub fn exp_transform(x: &LogRaster) -> Result<Raster> {
    Raster::new(x.height, x.width, x.values.iter().map(|v| v.exp()).collect())
}

/// Digamma function for positive arguments, via upward recurrence and the
/// asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "digamma is only evaluated for positive arguments");
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli terms B_2k / (2k x^2k) for k = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

/// Expected value of the log of unit-mean L-look speckle in `format`.
pub fn log_speckle_mean(looks: u32, format: Format) -> f64 {
    let l = f64::from(looks.max(1));
    let intensity = digamma(l) - l.ln();
    match format {
        Format::Intensity => intensity,
        Format::Amplitude => 0.5 * intensity,
    }
}

/// Per-pixel average of the stack in intensity, returned in `format`.
pub fn multilook(stack: &[Raster], format: Format) -> Result<Raster> {
    let first = stack.first().ok_or_else(|| Error::usage("multilook of an empty stack"))?;
    for (t, r) in stack.iter().enumerate().skip(1) {
        first.same_dims(r, &format!("multilook look {t}"))?;
    }
    if stack.len() == 1 {
        return Ok(first.clone());
    }
    let count = stack.len() as f64;
    let data = (0..first.len())
        .map(|i| {
            let mean = stack.iter().map(|r| format.to_intensity(f64::from(r.data()[i]))).sum::<f64>() / count;
            format.from_intensity(mean) as f32
        })
        .collect();
    Raster::new(first.height(), first.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
        // psi(n + 1) = psi(n) + 1/n
        let mut expected = -EULER_GAMMA;
        for n in 1..40u32 {
            assert!((digamma(f64::from(n)) - expected).abs() < 1e-11, "n = {n}");
            expected += 1.0 / f64::from(n);
        }
        // psi(1/2) = -gamma - 2 ln 2
        assert!((digamma(0.5) + EULER_GAMMA + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_speckle_mean_closed_forms() {
        assert!((log_speckle_mean(1, Format::Amplitude) + EULER_GAMMA / 2.0).abs() < 1e-12);
        assert!((log_speckle_mean(1, Format::Intensity) + EULER_GAMMA).abs() < 1e-12);
        let c100 = log_speckle_mean(100, Format::Amplitude);
        assert!(c100 < 0.0 && c100.abs() < 0.01);
    }

    #[test]
    fn log_exp_round_trip() {
        let y = Raster::from_fn(16, 16, |r, c| 0.01 + (r * 16 + c) as f32 * 3.7).unwrap();
        let l = log_transform(&y);
        let back = exp_transform(&l).unwrap();
        for (a, b) in back.data().iter().zip(y.data()) {
            assert!(((a - b) / b).abs() <= 1e-6);
        }
        let one = log_transform(&Raster::constant(1, 2, 1.0).unwrap());
        assert_eq!(one.values, vec![0.0, 0.0]);
        let e = log_transform(&Raster::constant(1, 1, std::f32::consts::E).unwrap());
        assert!((e.values[0] - 1.0).abs() < 1e-7);
        assert!(matches!(log_values(&[1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn multilook_identities() {
        let a = Raster::from_fn(3, 4, |r, c| 1.0 + (r + c) as f32).unwrap();
        assert_eq!(multilook(std::slice::from_ref(&a), Format::Amplitude).unwrap(), a);
        let same = vec![a.clone(); 5];
        let out = multilook(&same, Format::Amplitude).unwrap();
        for (x, y) in out.data().iter().zip(a.data()) {
            assert!((x - y).abs() <= 1e-6 * y);
        }
        assert_eq!(multilook(&same, Format::Intensity).unwrap(), a);
        let b = Raster::constant(4, 4, 1.0).unwrap();
        assert!(matches!(multilook(&[a, b], Format::Intensity), Err(Error::Shape(_))));
        assert!(matches!(multilook(&[], Format::Intensity), Err(Error::Usage(_))));
    }

    #[test]
    fn amplitude_multilook_averages_power() {
        let a = Raster::constant(1, 1, 3.0).unwrap();
        let b = Raster::constant(1, 1, 4.0).unwrap();
        let out = multilook(&[a, b], Format::Amplitude).unwrap();
        assert!((out.get(0, 0) - 12.5f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn simulate_rejects_zero_looks_and_is_seeded() {
        assert!(SpeckleConfig::new(0, Format::Amplitude, 1).is_err());
        let clean = Raster::constant(8, 8, 2.0).unwrap();
        let cfg = SpeckleConfig::single_look_amplitude(3);
        assert_eq!(simulate_speckle(&clean, &cfg).unwrap(), simulate_speckle(&clean, &cfg).unwrap());
        let other = SpeckleConfig::single_look_amplitude(4);
        assert_ne!(simulate_speckle(&clean, &cfg).unwrap(), simulate_speckle(&clean, &other).unwrap());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("Amplitude".parse::<Format>().unwrap(), Format::Amplitude);
        assert_eq!("intensity".parse::<Format>().unwrap(), Format::Intensity);
        assert!("db".parse::<Format>().is_err());
    }
}
