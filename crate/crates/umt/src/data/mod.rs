//! Clips, patch grids, token batches, synthetic data and the on-disk
//! clip container.

mod container;
mod patch;
mod sampling;
mod synth;

pub use container::{read_clip, read_manifest, write_clip, write_manifest, ManifestEntry};
pub use patch::{extract_patches, patchify, sincos_positions, Normalization};
pub use sampling::{dense_sample, sparse_sample};
pub use synth::{default_vocab, SynthItem, SynthSpec, CLS_ID, MASK_ID, MIN_VOCAB, PAD_ID, SEP_ID};

use crate::error::{Error, Result};
use ndarray::Array2;
pub use ndarray::Array4;

/// A sampled stack of frames with its sampling metadata.
///
/// Frames are `(T, H, W, 3)` with pixel values in `[0, 1]`, stored as `f32`
/// to match the container payload exactly.
#[derive(Clone, Debug)]
pub struct VideoClip {
    pub frames: Array4<f32>,
    pub frame_indices: Vec<usize>,
    pub source_id: String,
    pub label: Option<i64>,
}

impl VideoClip {
    pub fn new(
        frames: Array4<f32>,
        frame_indices: Vec<usize>,
        source_id: String,
        label: Option<i64>,
    ) -> Result<Self> {
        let (t, _, _, ch) = frames.dim();
        if t < 1 {
            return Err(Error::invalid("clip must have at least one frame"));
        }
        if ch != 3 {
            return Err(Error::invalid(format!("expected 3 channels, got {ch}")));
        }
        if frame_indices.len() != t {
            return Err(Error::invalid(format!(
                "frame_indices length {} does not match frame count {t}",
                frame_indices.len()
            )));
        }
        if !frame_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("frame_indices must be strictly increasing"));
        }
        if frames.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(VideoClip {
            frames,
            frame_indices,
            source_id,
            label,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }
}

/// Wraps a single image as a one-frame clip; the image pathway of Stage 2.
pub fn image_as_video(image: ndarray::Array3<f32>, source_id: String) -> Result<VideoClip> {
    let (h, w, c) = image.dim();
    let mut frames = Array4::zeros((1, h, w, c));
    frames.index_axis_mut(ndarray::Axis(0), 0).assign(&image);
    VideoClip::new(frames, vec![0], source_id, None)
}

/// Token-grid geometry for one clip: how frames map to patch tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Temporal token positions. Equals the clip frame count unless
    /// temporal downsampling folds frame pairs together.
    pub frames: usize,
    pub frames_per_token: usize,
    pub embed_dim: usize,
}

impl PatchGrid {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        patch_size: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        if patch_size == 0 || height % patch_size != 0 || width % patch_size != 0 {
            return Err(Error::invalid(format!(
                "frame {height}x{width} not divisible by patch size {patch_size}"
            )));
        }
        if frames == 0 {
            return Err(Error::invalid("grid needs at least one frame"));
        }
        Ok(PatchGrid {
            patch_size,
            rows: height / patch_size,
            cols: width / patch_size,
            frames,
            frames_per_token: 1,
            embed_dim,
        })
    }

    pub fn for_clip(clip: &VideoClip, patch_size: usize, embed_dim: usize) -> Result<Self> {
        PatchGrid::new(
            clip.num_frames(),
            clip.height(),
            clip.width(),
            patch_size,
            embed_dim,
        )
    }

    /// Folds frame pairs into single tokens (patch stride 2 in time).
    /// The default pipeline keeps this off so teacher tokens align frame
    /// by frame.
    pub fn with_temporal_downsample(mut self) -> Result<Self> {
        if self.frames_per_token != 1 {
            return Err(Error::invalid("temporal downsampling already applied"));
        }
        if self.frames % 2 != 0 {
            return Err(Error::invalid(format!(
                "temporal downsampling needs an even frame count, got {}",
                self.frames
            )));
        }
        self.frames /= 2;
        self.frames_per_token = 2;
        Ok(self)
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    pub fn total_tokens(&self) -> usize {
        self.tokens_per_frame() * self.frames
    }

    /// Input width of the patch projection: pixels of one patch.
    pub fn patch_input_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3 * self.frames_per_token
    }

    /// Flattened sequence index of `(frame, spatial)`, frame-major.
    pub fn flat_index(&self, frame: usize, spatial: usize) -> usize {
        frame * self.tokens_per_frame() + spatial
    }
}

/// Unmasked tokens gathered from a `(T, L, C)` grid, with the
/// `(frame, spatial)` provenance needed to pair them with teacher tokens.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    pub tokens: Array2<f64>,
    pub provenance: Vec<(usize, usize)>,
    pub grid: PatchGrid,
}

impl TokenBatch {
    pub fn new(
        tokens: Array2<f64>,
        provenance: Vec<(usize, usize)>,
        grid: PatchGrid,
    ) -> Result<Self> {
        if tokens.nrows() != provenance.len() {
            return Err(Error::invalid(format!(
                "{} tokens but {} provenance entries",
                tokens.nrows(),
                provenance.len()
            )));
        }
        if provenance.len() > grid.total_tokens() {
            return Err(Error::invalid("more tokens than grid positions"));
        }
        let mut seen = std::collections::HashSet::new();
        for &(t, l) in &provenance {
            if t >= grid.frames || l >= grid.tokens_per_frame() {
                return Err(Error::invalid(format!(
                    "provenance ({t}, {l}) outside grid {}x{}",
                    grid.frames,
                    grid.tokens_per_frame()
                )));
            }
            if !seen.insert((t, l)) {
                return Err(Error::invalid(format!("duplicate provenance ({t}, {l})")));
            }
        }
        Ok(TokenBatch {
            tokens,
            provenance,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    /// Flattened `t * L + l` sequence indices, in batch row order.
    pub fn flat_indices(&self) -> Vec<usize> {
        self.provenance
            .iter()
            .map(|&(t, l)| self.grid.flat_index(t, l))
            .collect()
    }

    /// Frame of every row; the grouping key for per-frame attention.
    pub fn frame_groups(&self) -> Vec<usize> {
        self.provenance.iter().map(|&(t, _)| t).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_validation_rejects_bad_indices() {
        let frames = Array4::zeros((2, 4, 4, 3));
        let err = VideoClip::new(frames, vec![3, 3], "x".into(), None);
        assert!(err.is_err());
    }

    #[test]
    fn clip_validation_rejects_out_of_range_pixels() {
        let mut frames = Array4::zeros((1, 4, 4, 3));
        frames[[0, 0, 0, 0]] = 1.5;
        assert!(VideoClip::new(frames, vec![0], "x".into(), None).is_err());
    }

    #[test]
    fn grid_divisibility() {
        assert!(PatchGrid::new(8, 224, 224, 16, 768).is_ok());
        assert!(PatchGrid::new(8, 220, 224, 16, 768).is_err());
        let g = PatchGrid::new(8, 224, 224, 16, 768).unwrap();
        assert_eq!(g.tokens_per_frame(), 196);
        assert_eq!(g.total_tokens(), 1568);
    }

    #[test]
    fn temporal_downsample_halves_frames() {
        let g = PatchGrid::new(8, 224, 224, 16, 768)
            .unwrap()
            .with_temporal_downsample()
            .unwrap();
        assert_eq!(g.frames, 4);
        assert_eq!(g.total_tokens(), 784);
        assert_eq!(g.patch_input_dim(), 16 * 16 * 3 * 2);
        let odd = PatchGrid::new(7, 32, 32, 8, 64).unwrap();
        assert!(odd.with_temporal_downsample().is_err());
    }

    #[test]
    fn token_batch_rejects_duplicates() {
        let grid = PatchGrid::new(2, 8, 8, 4, 16).unwrap();
        let tokens = Array2::zeros((2, 16));
        assert!(TokenBatch::new(tokens.clone(), vec![(0, 1), (0, 1)], grid.clone()).is_err());
        assert!(TokenBatch::new(tokens, vec![(0, 1), (1, 3)], grid).is_ok());
    }
}
