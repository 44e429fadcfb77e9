//! Reference filters used as baselines.

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::speckle::Format;

/// Boxcar (moving-average) filter in intensity with a `size x size` window,
/// shrunk at the borders.
pub fn boxcar(image: &Raster, size: usize, format: Format) -> Result<Raster> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::usage(format!("boxcar size must be odd, got {size}")));
    }
    let (h, w) = image.dims();
    let half = size / 2;
    // summed-area table of intensities
    let mut table = vec![0.0f64; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            table[(r + 1) * (w + 1) + c + 1] = format.to_intensity(f64::from(image.get(r, c)))
                + table[r * (w + 1) + c + 1]
                + table[(r + 1) * (w + 1) + c]
                - table[r * (w + 1) + c];
        }
    }
    Raster::from_fn(h, w, |r, c| {
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
        let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
        let sum = table[r1 * (w + 1) + c1] + table[r0 * (w + 1) + c0]
            - table[r0 * (w + 1) + c1]
            - table[r1 * (w + 1) + c0];
        let mean = (sum / ((r1 - r0) * (c1 - c0)) as f64).max(f64::from(f32::MIN_POSITIVE));
        format.from_intensity(mean) as f32
    })
}
