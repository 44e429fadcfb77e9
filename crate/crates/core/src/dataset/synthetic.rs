use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PatchPair, PATCH_SIZE};
use crate::error::Result;
use crate::raster::Raster;
use crate::speckle::{apply_speckle, SpeckleConfig};

/// Images that could not contribute patches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticReport {
    pub skipped: Vec<(u32, String)>,
    pub generated: usize,
}

/// Draws `patches_per_image` uniformly placed windows from each clean image
/// and injects speckle into them.
///
/// Offsets for image `i` come from stream `i` of a generator seeded with
/// `seed`; the speckle for image `i` comes from stream `i` seeded with
/// `cfg.seed`.
pub fn make_synthetic_set(
    clean_images: &[Raster],
    cfg: &SpeckleConfig,
    patches_per_image: usize,
    seed: u64,
) -> Result<(Vec<PatchPair>, SyntheticReport)> {
    let mut report = SyntheticReport::default();
    let mut pairs = Vec::with_capacity(clean_images.len() * patches_per_image);
    for (id, image) in clean_images.iter().enumerate() {
        let id = id as u32;
        let (h, w) = image.dims();
        if h < PATCH_SIZE || w < PATCH_SIZE {
            let msg = format!("image {h}x{w} is smaller than {PATCH_SIZE}x{PATCH_SIZE}");
            log::warn!("skipping source {id}: {msg}");
            report.skipped.push((id, msg));
            continue;
        }
        let mut placement = ChaCha8Rng::seed_from_u64(seed);
        placement.set_stream(u64::from(id));
        let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise.set_stream(u64::from(id));
        for _ in 0..patches_per_image {
            let row = placement.gen_range(0..=h - PATCH_SIZE);
            let col = placement.gen_range(0..=w - PATCH_SIZE);
            let clean = image.window(row, col, PATCH_SIZE, PATCH_SIZE)?;
            let noisy = apply_speckle(clean.data(), PATCH_SIZE, PATCH_SIZE, cfg, &mut noise)?;
            pairs.push(PatchPair { clean, noisy, source_id: id, offset: (row as u32, col as u32) });
        }
    }
    report.generated = pairs.len();
    Ok((pairs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_scene;

    #[test]
    fn exact_fit_forces_origin() {
        let img = synthetic_scene(40, 40, 1);
        let (p, _) = make_synthetic_set(&[img], &SpeckleConfig::single_look_amplitude(1), 1, 2).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].offset, (0, 0));
    }

    #[test]
    fn windows_stay_in_bounds() {
        let img = synthetic_scene(256, 256, 2);
        let (p, report) = make_synthetic_set(std::slice::from_ref(&img), &SpeckleConfig::single_look_amplitude(1), 128, 3).unwrap();
        assert_eq!(p.len(), 128);
        assert_eq!(report.generated, 128);
        for pair in &p {
            let (r, c) = (pair.offset.0 as usize, pair.offset.1 as usize);
            assert!(r + 40 <= 256 && c + 40 <= 256);
            assert_eq!(pair.clean, img.window(r, c, 40, 40).unwrap());
            assert_eq!(pair.noisy.dims(), (40, 40));
        }
    }

    #[test]
    fn small_images_are_skipped_and_reported() {
        let imgs = [synthetic_scene(39, 80, 1), synthetic_scene(50, 50, 2)];
        let (p, report) = make_synthetic_set(&imgs, &SpeckleConfig::single_look_amplitude(1), 3, 3).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|x| x.source_id == 1));
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].0, 0);
    }

    #[test]
    fn seeded_reproducibility() {
        let imgs = [synthetic_scene(64, 64, 1)];
        let cfg = SpeckleConfig::single_look_amplitude(5);
        let a = make_synthetic_set(&imgs, &cfg, 10, 6).unwrap().0;
        assert_eq!(a, make_synthetic_set(&imgs, &cfg, 10, 6).unwrap().0);
        let b = make_synthetic_set(&imgs, &cfg, 10, 7).unwrap().0;
        assert_ne!(a.iter().map(|p| p.offset).collect::<Vec<_>>(), b.iter().map(|p| p.offset).collect::<Vec<_>>());
    }
}
