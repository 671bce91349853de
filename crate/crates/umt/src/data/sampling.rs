//! Frame samplers: segment-spread sparse sampling and fixed-stride dense
//! sampling.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Splits `total_frames` into `frames` contiguous segments and picks one
/// index per segment: the segment midpoint when `deterministic`, otherwise
/// uniform within the segment. Indices come out strictly increasing.
pub fn sparse_sample(
    total_frames: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
    deterministic: bool,
) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::invalid("cannot sample zero frames"));
    }
    if total_frames < frames {
        return Err(Error::invalid(format!(
            "cannot sample {frames} frames from a {total_frames}-frame video"
        )));
    }
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let start = k * total_frames / frames;
        let end = (k + 1) * total_frames / frames;
        let pick = if deterministic {
            start + (end - start) / 2
        } else {
            rng.gen_range(start..end)
        };
        out.push(pick);
    }
    Ok(out)
}

/// Picks a uniformly placed window of `frames` indices spaced `stride`
/// apart.
pub fn dense_sample(
    total_frames: usize,
    frames: usize,
    stride: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::invalid("cannot sample zero frames"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let span = (frames - 1) * stride + 1;
    if span > total_frames {
        return Err(Error::invalid(format!(
            "window of {frames} frames at stride {stride} needs {span} frames, video has {total_frames}"
        )));
    }
    let start = rng.gen_range(0..=total_frames - span);
    Ok((0..frames).map(|k| start + k * stride).collect())
}
