//! Token masking: which patch tokens the student keeps.
//!
//! Every plan keeps exactly `floor(L * (1 - ratio))` tokens per frame.
//! Semantic plans sample without replacement from the teacher's
//! class-token attention, so well-attended tokens survive most often;
//! random plans use uniform weights; tube plans reuse one spatial draw
//! for every frame.

use crate::data::{PatchGrid, TokenBatch};
use crate::error::{Error, Result};
use crate::teacher::AttentionMap;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Which tokens stay visible, per `(frame, spatial)` position.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub keep: Array2<bool>,
    pub ratio: f64,
    pub unmasked_per_frame: usize,
}

/// Tokens kept per frame: `floor(tokens_per_frame * (1 - ratio))`.
pub fn unmasked_count(tokens_per_frame: usize, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let m = (tokens_per_frame as f64 * (1.0 - ratio)).floor() as usize;
    if m == 0 {
        return Err(Error::invalid(format!(
            "mask ratio {ratio} leaves no tokens out of {tokens_per_frame}"
        )));
    }
    Ok(m)
}

impl MaskPlan {
    pub fn frames(&self) -> usize {
        self.keep.nrows()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.keep.ncols()
    }

    /// Kept positions in frame-major order, spatial index ascending.
    pub fn kept(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.frames() * self.unmasked_per_frame);
        for t in 0..self.frames() {
            for l in 0..self.tokens_per_frame() {
                if self.keep[[t, l]] {
                    out.push((t, l));
                }
            }
        }
        out
    }

    pub fn total_kept(&self) -> usize {
        self.frames() * self.unmasked_per_frame
    }

    /// Header of three u32 (frames, tokens per frame, kept per frame)
    /// followed by a bitset over flattened positions, least significant
    /// bit first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = self.frames();
        let l = self.tokens_per_frame();
        let mut out = Vec::with_capacity(12 + (t * l + 7) / 8);
        out.write_u32::<LittleEndian>(t as u32).unwrap();
        out.write_u32::<LittleEndian>(l as u32).unwrap();
        out.write_u32::<LittleEndian>(self.unmasked_per_frame as u32)
            .unwrap();
        let mut bits = vec![0u8; (t * l + 7) / 8];
        for (idx, &kept) in self.keep.iter().enumerate() {
            if kept {
                bits[idx / 8] |= 1 << (idx % 8);
            }
        }
        out.extend_from_slice(&bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MaskPlan> {
        let mut cur = std::io::Cursor::new(bytes);
        let t = cur.read_u32::<LittleEndian>().map_err(|_| truncated(bytes))? as usize;
        let l = cur.read_u32::<LittleEndian>().map_err(|_| truncated(bytes))? as usize;
        let m = cur.read_u32::<LittleEndian>().map_err(|_| truncated(bytes))? as usize;
        let nbits = t
            .checked_mul(l)
            .ok_or_else(|| Error::DimOverflow(format!("{t}x{l} positions overflow")))?;
        let need = 12 + (nbits + 7) / 8;
        if bytes.len() < need {
            return Err(Error::Truncated {
                expected: need as u64,
                got: bytes.len() as u64,
            });
        }
        if l == 0 || m == 0 || m > l {
            return Err(Error::invalid(format!(
                "plan header keeps {m} of {l} tokens per frame"
            )));
        }
        let bits = &bytes[12..need];
        let mut keep = Array2::from_elem((t, l), false);
        for (idx, v) in keep.iter_mut().enumerate() {
            *v = bits[idx / 8] & (1 << (idx % 8)) != 0;
        }
        for frame in 0..t {
            let count = (0..l).filter(|&i| keep[[frame, i]]).count();
            if count != m {
                return Err(Error::invalid(format!(
                    "frame {frame} keeps {count} tokens, header says {m}"
                )));
            }
        }
        Ok(MaskPlan {
            keep,
            ratio: 1.0 - m as f64 / l as f64,
            unmasked_per_frame: m,
        })
    }
}

fn truncated(bytes: &[u8]) -> Error {
    Error::Truncated {
        expected: 12,
        got: bytes.len() as u64,
    }
}

/// Keeps the tokens the teacher's class token attends to, drawing
/// without replacement per frame: each draw removes the chosen token and
/// renormalizes the remaining attention mass.
pub fn semantic_mask(
    attention: &AttentionMap,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskPlan> {
    let t = attention.frames();
    let l = attention.tokens_per_frame();
    if t == 0 || l == 0 {
        return Err(Error::invalid("attention map is empty"));
    }
    if attention.weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::invalid("attention weights must be finite and non-negative"));
    }
    let m = unmasked_count(l, ratio)?;
    let mut keep = Array2::from_elem((t, l), false);
    for frame in 0..t {
        let weights: Vec<f64> = attention.weights.row(frame).to_vec();
        for idx in draw_without_replacement(&weights, m, rng) {
            keep[[frame, idx]] = true;
        }
    }
    Ok(MaskPlan {
        keep,
        ratio,
        unmasked_per_frame: m,
    })
}

/// Uniform per-frame sampling without replacement.
pub fn random_mask(grid: &PatchGrid, ratio: f64, rng: &mut ChaCha8Rng) -> Result<MaskPlan> {
    let l = grid.tokens_per_frame();
    let m = unmasked_count(l, ratio)?;
    let weights = vec![1.0; l];
    let mut keep = Array2::from_elem((grid.frames, l), false);
    for frame in 0..grid.frames {
        for idx in draw_without_replacement(&weights, m, rng) {
            keep[[frame, idx]] = true;
        }
    }
    Ok(MaskPlan {
        keep,
        ratio,
        unmasked_per_frame: m,
    })
}

/// One uniform spatial draw shared by every frame, masking aligned
/// space-time tubes.
pub fn tube_mask(grid: &PatchGrid, ratio: f64, rng: &mut ChaCha8Rng) -> Result<MaskPlan> {
    let l = grid.tokens_per_frame();
    let m = unmasked_count(l, ratio)?;
    let weights = vec![1.0; l];
    let chosen = draw_without_replacement(&weights, m, rng);
    let mut keep = Array2::from_elem((grid.frames, l), false);
    for frame in 0..grid.frames {
        for &idx in &chosen {
            keep[[frame, idx]] = true;
        }
    }
    Ok(MaskPlan {
        keep,
        ratio,
        unmasked_per_frame: m,
    })
}

/// Samples `m` distinct indices; the chance of each draw is proportional
/// to the remaining weight. Exhausted mass falls back to uniform over
/// the leftovers.
fn draw_without_replacement(weights: &[f64], m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(m <= weights.len());
    let mut remaining = weights.to_vec();
    let mut mass: f64 = remaining.iter().sum();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let pick = if mass > 1e-12 {
            let u: f64 = rng.gen::<f64>() * mass;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in remaining.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                if u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| {
                remaining
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .expect("positive weight must remain")
            })
        } else {
            let open: Vec<usize> = remaining
                .iter()
                .enumerate()
                .filter(|(i, _)| !chosen.contains(i))
                .map(|(i, _)| i)
                .collect();
            open[rng.gen_range(0..open.len())]
        };
        mass -= remaining[pick];
        remaining[pick] = 0.0;
        chosen.push(pick);
    }
    chosen
}

/// Gathers kept positions from a `(frames, tokens_per_frame, C)` grid in
/// frame-major order, recording provenance for alignment.
pub fn apply_mask(tokens: &Array3<f64>, plan: &MaskPlan, grid: &PatchGrid) -> Result<TokenBatch> {
    let (t, l, c) = tokens.dim();
    if t != plan.frames() || l != plan.tokens_per_frame() {
        return Err(Error::invalid(format!(
            "plan {}x{} does not match tokens {t}x{l}",
            plan.frames(),
            plan.tokens_per_frame()
        )));
    }
    if t != grid.frames || l != grid.tokens_per_frame() {
        return Err(Error::invalid(format!(
            "grid {}x{} does not match tokens {t}x{l}",
            grid.frames,
            grid.tokens_per_frame()
        )));
    }
    let kept = plan.kept();
    let mut out = Array2::zeros((kept.len(), c));
    for (row, &(frame, spatial)) in kept.iter().enumerate() {
        for j in 0..c {
            out[[row, j]] = tokens[[frame, spatial, j]];
        }
    }
    TokenBatch::new(out, kept, grid.clone())
}
