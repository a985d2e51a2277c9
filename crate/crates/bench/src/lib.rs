//! Shared inputs for the benchmarks.

use xfr_core::synth::{render_face, FaceParams};
use xfr_core::{AlignedFace, FaceImage};

/// A synthetic face image with detectable landmarks.
pub fn face(seed: u64) -> FaceImage {
    FaceImage::new(render_face(&FaceParams::from_seed(seed), 160, 160), format!("face{seed}")).expect("valid image")
}

/// A synthetic face at the aligned crop size.
pub fn aligned(seed: u64) -> AlignedFace {
    AlignedFace::from_aligned_raster(render_face(&FaceParams::from_seed(seed), 112, 112), format!("aligned{seed}"))
}
