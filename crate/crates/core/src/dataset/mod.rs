//! Training-set construction: synthetic speckled patches, multitemporal
//! reference building with change masking, patch extraction, minibatching
//! and file formats.

pub mod batches;
pub mod extract;
pub mod io;
pub mod reference;
pub mod scene;
pub mod synthetic;

use crate::raster::Raster;

pub use batches::{minibatches, Minibatches};
pub use extract::{extract_real_patches, ExtractReport, Region};
pub use io::{read_patch_set, read_raster, write_patch_set, write_raster};
pub use reference::{build_reference, ChangeMask, ReferenceConfig, TemporalStack};
pub use scene::synthetic_scene;
pub use synthetic::{make_synthetic_set, SyntheticReport};

/// Side length of training patches.
pub const PATCH_SIZE: usize = 40;

/// A clean/noisy training pair with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub clean: Raster,
    pub noisy: Raster,
    pub source_id: u32,
    /// (row, col) of the patch's top-left corner in the source image.
    pub offset: (u32, u32),
}

impl PatchPair {
    fn key(&self) -> (u32, u32, u32) {
        (self.source_id, self.offset.0, self.offset.1)
    }
}
