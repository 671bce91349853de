//! Patch extraction, linear patch embedding and sine-cosine positions.

use super::{PatchGrid, VideoClip};
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};

/// Per-channel pixel normalization applied during patch extraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// Leaves pixels untouched.
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

/// Flattens every patch of the clip into one row of a
/// `(frames * tokens_per_frame, patch_input_dim)` matrix. Rows are
/// frame-major with spatial positions in row-major raster order; within a
/// row, pixels are laid out `(frame offset, y, x, channel)`.
pub fn extract_patches(
    clip: &VideoClip,
    grid: &PatchGrid,
    norm: &Normalization,
) -> Result<Array2<f64>> {
    let expected_frames = grid.frames * grid.frames_per_token;
    if clip.num_frames() != expected_frames {
        return Err(Error::invalid(format!(
            "grid covers {expected_frames} source frames, clip has {}",
            clip.num_frames()
        )));
    }
    if clip.height() != grid.rows * grid.patch_size || clip.width() != grid.cols * grid.patch_size {
        return Err(Error::invalid(format!(
            "clip {}x{} does not match grid {}x{} patches of size {}",
            clip.height(),
            clip.width(),
            grid.rows,
            grid.cols,
            grid.patch_size
        )));
    }
    if norm.std.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("normalization std must be positive"));
    }
    let p = grid.patch_size;
    let fpt = grid.frames_per_token;
    let mut out = Array2::zeros((grid.total_tokens(), grid.patch_input_dim()));
    for t in 0..grid.frames {
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let token = grid.flat_index(t, row * grid.cols + col);
                let mut j = 0;
                for f in 0..fpt {
                    let frame = t * fpt + f;
                    for py in 0..p {
                        for px in 0..p {
                            for c in 0..3 {
                                let v =
                                    clip.frames[[frame, row * p + py, col * p + px, c]] as f64;
                                out[[token, j]] = (v - norm.mean[c]) / norm.std[c];
                                j += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Linear patch embedding: raw patches times `weights` plus `bias`,
/// reshaped to `(frames, tokens_per_frame, embed_dim)`.
pub fn patchify(
    clip: &VideoClip,
    grid: &PatchGrid,
    weights: &Array2<f64>,
    bias: &Array2<f64>,
) -> Result<Array3<f64>> {
    if weights.dim() != (grid.patch_input_dim(), grid.embed_dim) {
        return Err(Error::invalid(format!(
            "patch weights {:?} do not match ({}, {})",
            weights.dim(),
            grid.patch_input_dim(),
            grid.embed_dim
        )));
    }
    if bias.dim() != (1, grid.embed_dim) {
        return Err(Error::invalid(format!(
            "patch bias {:?} must be (1, {})",
            bias.dim(),
            grid.embed_dim
        )));
    }
    let patches = extract_patches(clip, grid, &Normalization::identity())?;
    let embedded = patches.dot(weights) + bias;
    let out = embedded
        .into_shape((grid.frames, grid.tokens_per_frame(), grid.embed_dim))
        .map_err(|e| Error::invalid(format!("reshape failed: {e}")))?;
    Ok(out)
}

/// Fixed sine-cosine position table over the flattened `(frame, spatial)`
/// sequence: row `t * L + l` interleaves `sin(p / 10000^(2i/C))` and the
/// matching cosine across the feature dimension.
pub fn sincos_positions(frames: usize, tokens_per_frame: usize, dim: usize) -> Result<Array2<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!(
            "position dimension must be even and positive, got {dim}"
        )));
    }
    let n = frames * tokens_per_frame;
    let mut out = Array2::zeros((n, dim));
    for pos in 0..n {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = pos as f64 * freq;
            out[[pos, 2 * i]] = angle.sin();
            out[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    Ok(out)
}
