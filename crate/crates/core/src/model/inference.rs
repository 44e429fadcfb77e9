use super::SarCnnModel;
use crate::error::{Error, Result};
use crate::exec;
use crate::raster::Raster;
use crate::tensor::{Dims, Real, Tensor4};

/// Tiling for inference on large rasters: each `tile x tile` block is
/// processed with `overlap` extra pixels of context on every side and only
/// its central block is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig { tile: 256, overlap: 16 }
    }
}

/// Homomorphic despeckling: `exp(ln y - R(ln y) - c)`.
///
/// Batch norms always use their running statistics here.
pub fn despeckle<T: Real>(
    model: &SarCnnModel<T>,
    noisy: &Raster,
    c: f64,
    tiles: TileConfig,
) -> Result<Raster> {
    if tiles.tile == 0 {
        return Err(Error::usage("tile size must be >= 1"));
    }
    if !c.is_finite() {
        return Err(Error::numeric("log-speckle mean is not finite"));
    }
    let log_bias = c;
    let (h, w) = noisy.dims();
    let log_y: Vec<f64> = noisy.data().iter().map(|&v| f64::from(v).ln()).collect();
    let origins: Vec<(usize, usize)> = (0..h)
        .step_by(tiles.tile)
        .flat_map(|r| (0..w).step_by(tiles.tile).map(move |c| (r, c)))
        .collect();

    let results = exec::map_indices(origins.len(), || (), |_, i| -> Result<Vec<f64>> {
        let (r0, c0) = origins[i];
        let (r1, c1) = ((r0 + tiles.tile).min(h), (c0 + tiles.tile).min(w));
        let (er0, ec0) = (r0.saturating_sub(tiles.overlap), c0.saturating_sub(tiles.overlap));
        let (er1, ec1) = ((r1 + tiles.overlap).min(h), (c1 + tiles.overlap).min(w));
        let (eh, ew) = (er1 - er0, ec1 - ec0);
        let mut input = Vec::with_capacity(eh * ew);
        for r in er0..er1 {
            input.extend(log_y[r * w + ec0..r * w + ec1].iter().map(|&v| T::lit(v)));
        }
        let residual = model.infer(&Tensor4::from_vec(Dims::new(1, 1, eh, ew), input)?)?;
        let res = residual.data();
        let mut core = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for r in r0..r1 {
            for c in c0..c1 {
                core.push(res[(r - er0) * ew + (c - ec0)].as_f64());
            }
        }
        Ok(core)
    });

    let (lo, hi) = (f64::from(f32::MIN_POSITIVE).ln(), f64::from(f32::MAX).ln());
    let mut out = vec![0f32; h * w];
    for (&(r0, c0), core) in origins.iter().zip(results) {
        let core = core?;
        let cw = (c0 + tiles.tile).min(w) - c0;
        for (k, &r_hat) in core.iter().enumerate() {
            let (r, c) = (r0 + k / cw, c0 + k % cw);
            let log_x = log_y[r * w + c] - r_hat - log_bias;
            if !log_x.is_finite() {
                return Err(Error::numeric(format!("despeckled pixel ({r}, {c}) is not finite")));
            }
            out[r * w + c] = (log_x.clamp(lo, hi).exp() as f32).clamp(f32::MIN_POSITIVE, f32::MAX);
        }
    }
    Raster::new(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_scene;

    #[test]
    fn zero_residual_is_identity_or_pure_bias() {
        let mut m = SarCnnModel::<f32>::build(4, 4, 1).unwrap();
        m.zero_last_layer();
        let y = synthetic_scene(37, 45, 2);
        let same = despeckle(&m, &y, 0.0, TileConfig::default()).unwrap();
        for (a, b) in same.data().iter().zip(y.data()) {
            assert!(((a - b) / b).abs() <= 1e-6);
        }
        let c = -0.2886;
        let shifted = despeckle(&m, &y, c, TileConfig { tile: 16, overlap: 4 }).unwrap();
        for (a, b) in shifted.data().iter().zip(y.data()) {
            let want = f64::from(*b) * 0.2886f64.exp();
            assert!((f64::from(*a) - want).abs() <= 1e-6 * want);
        }
    }

    #[test]
    fn output_positive_even_for_wild_models() {
        let mut m = SarCnnModel::<f32>::build(3, 2, 3).unwrap();
        m.layers_mut()[2].conv.bias[0] = 500.0;
        let y = synthetic_scene(12, 12, 1);
        let out = despeckle(&m, &y, 0.0, TileConfig::default()).unwrap();
        assert!(out.data().iter().all(|&v| v > 0.0 && v.is_finite()));
        m.layers_mut()[2].conv.bias[0] = -500.0;
        let out = despeckle(&m, &y, 0.0, TileConfig::default()).unwrap();
        assert!(out.data().iter().all(|&v| v > 0.0 && v.is_finite()));
    }

    #[test]
    fn zero_tile_rejected() {
        let m = SarCnnModel::<f32>::build(3, 1, 3).unwrap();
        let y = synthetic_scene(8, 8, 1);
        assert!(despeckle(&m, &y, 0.0, TileConfig { tile: 0, overlap: 0 }).is_err());
    }
}
