use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::reference::ChangeMask;
use super::{PatchPair, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Spacing of the candidate window grid.
pub const CANDIDATE_STRIDE: usize = 4;
/// Minimum stable fraction of an eligible window.
pub const MIN_STABLE_FRACTION: f64 = 0.99;

/// Axis-aligned image region (row, col, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractReport {
    pub candidates: usize,
    pub eligible: usize,
    pub requested: usize,
    pub returned: usize,
    pub shortfall: usize,
    pub mask_coverage: f64,
}

/// Samples up to `count` distinct stride-4 windows whose mask is at least 99%
/// stable, pairing the reference window (clean) with the same window of
/// `noisy`. Windows are restricted to `region` when given.
pub fn extract_real_patches(
    reference: &Raster,
    noisy: &Raster,
    mask: &ChangeMask,
    count: usize,
    seed: u64,
    region: Option<Region>,
) -> Result<(Vec<PatchPair>, ExtractReport)> {
    reference.same_dims(noisy, "reference vs noisy look")?;
    let (h, w) = reference.dims();
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::shape(format!(
            "mask {}x{} vs image {h}x{w}",
            mask.height, mask.width
        )));
    }
    let region = region.unwrap_or(Region { row: 0, col: 0, height: h, width: w });
    if region.row + region.height > h || region.col + region.width > w {
        return Err(Error::shape(format!("region {region:?} exceeds {h}x{w}")));
    }

    // summed-area table of stable pixels
    let mut table = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            table[(r + 1) * (w + 1) + c + 1] = u32::from(mask.is_stable(r, c))
                + table[r * (w + 1) + c + 1]
                + table[(r + 1) * (w + 1) + c]
                - table[r * (w + 1) + c];
        }
    }
    let stable_in = |r: usize, c: usize| {
        let (r1, c1) = (r + PATCH_SIZE, c + PATCH_SIZE);
        table[r1 * (w + 1) + c1] + table[r * (w + 1) + c] - table[r * (w + 1) + c1] - table[r1 * (w + 1) + c]
    };

    let need = (MIN_STABLE_FRACTION * (PATCH_SIZE * PATCH_SIZE) as f64).ceil() as u32;
    let mut candidates = 0;
    let mut eligible = Vec::new();
    if region.height >= PATCH_SIZE && region.width >= PATCH_SIZE {
        for r in (region.row..=region.row + region.height - PATCH_SIZE).step_by(CANDIDATE_STRIDE) {
            for c in (region.col..=region.col + region.width - PATCH_SIZE).step_by(CANDIDATE_STRIDE) {
                candidates += 1;
                if stable_in(r, c) >= need {
                    eligible.push((r, c));
                }
            }
        }
    }

    let take = count.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<(usize, usize)> = sample(&mut rng, eligible.len(), take).into_iter().map(|i| eligible[i]).collect();
    chosen.sort_unstable();
    let pairs = chosen
        .into_iter()
        .map(|(r, c)| {
            Ok(PatchPair {
                clean: reference.window(r, c, PATCH_SIZE, PATCH_SIZE)?,
                noisy: noisy.window(r, c, PATCH_SIZE, PATCH_SIZE)?,
                source_id: 0,
                offset: (r as u32, c as u32),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if take < count {
        log::warn!("only {take} of {count} requested windows are eligible");
    }
    let report = ExtractReport {
        candidates,
        eligible: eligible.len(),
        requested: count,
        returned: pairs.len(),
        shortfall: count - take,
        mask_coverage: mask.stable_fraction(),
    };
    Ok((pairs, report))
}
