//! Procedural clean scenes standing in for optical training images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::Raster;

/// An 8-bit-range amplitude scene: a smooth background with flat rectangles,
/// disks, stripes and ramps. Values lie in roughly [8, 250].
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let base = rng.gen_range(40.0..200.0);
    let (gx, gy) = (rng.gen_range(-60.0..60.0) / w, rng.gen_range(-60.0..60.0) / h);
    let mut img: Vec<f64> = (0..height * width)
        .map(|i| base + gx * (i % width) as f64 + gy * (i / width) as f64)
        .collect();

    let area = h * w;
    let shapes = 4 + (area / 2500.0).sqrt() as usize * 3;
    for _ in 0..shapes {
        let level = rng.gen_range(10.0..245.0);
        let cy = rng.gen_range(0.0..h);
        let cx = rng.gen_range(0.0..w);
        let size = rng.gen_range(4.0..(h.min(w) / 3.0).max(5.0));
        match rng.gen_range(0..4) {
            0 => {
                let (hh, hw) = (size, rng.gen_range(4.0..size.max(5.0) * 1.5));
                paint(&mut img, height, width, |r, c| (r - cy).abs() < hh / 2.0 && (c - cx).abs() < hw / 2.0, |_, _| level);
            }
            1 => {
                paint(&mut img, height, width, |r, c| (r - cy).hypot(c - cx) < size / 2.0, |_, _| level);
            }
            2 => {
                let period = rng.gen_range(4.0..12.0);
                let other = rng.gen_range(10.0..245.0);
                paint(
                    &mut img,
                    height,
                    width,
                    |r, c| (r - cy).abs() < size && (c - cx).abs() < size,
                    |r, _| if (r / period).floor() as i64 % 2 == 0 { level } else { other },
                );
            }
            _ => {
                let other = rng.gen_range(10.0..245.0);
                paint(
                    &mut img,
                    height,
                    width,
                    |r, c| (r - cy).abs() < size && (c - cx).abs() < size,
                    |_, c| level + (other - level) * ((c - cx + size) / (2.0 * size)).clamp(0.0, 1.0),
                );
            }
        }
    }
    let data = img.into_iter().map(|v| v.clamp(8.0, 250.0) as f32).collect();
    Raster::new(height, width, data).expect("scene values are clamped positive")
}

fn paint(
    img: &mut [f64],
    height: usize,
    width: usize,
    inside: impl Fn(f64, f64) -> bool,
    value: impl Fn(f64, f64) -> f64,
) {
    for r in 0..height {
        for c in 0..width {
            let (rf, cf) = (r as f64, c as f64);
            if inside(rf, cf) {
                img[r * width + c] = value(rf, cf);
            }
        }
    }
}
