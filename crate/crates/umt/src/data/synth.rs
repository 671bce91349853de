//! Deterministic synthetic corpus: colored shapes drifting across a dark
//! background, captioned from a small closed vocabulary.

use super::{sparse_sample, VideoClip};
use crate::error::{Error, Result};
use crate::rng::item_rng;
use ndarray::Array4;
use rand::Rng;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

const SHAPES: [&str; 3] = ["square", "disc", "cross"];
const COLORS: [(&str, [f32; 3]); 6] = [
    ("red", [0.9, 0.15, 0.15]),
    ("green", [0.15, 0.85, 0.2]),
    ("blue", [0.2, 0.25, 0.9]),
    ("yellow", [0.9, 0.85, 0.15]),
    ("magenta", [0.85, 0.2, 0.8]),
    ("cyan", [0.2, 0.8, 0.85]),
];
const DIRECTIONS: [(&str, (i64, i64)); 4] = [
    ("left", (-1, 0)),
    ("right", (1, 0)),
    ("up", (0, -1)),
    ("down", (0, 1)),
];
const VERBS: [&str; 2] = ["moves", "drifts"];

const SHAPE_BASE: u32 = 4;
const COLOR_BASE: u32 = SHAPE_BASE + SHAPES.len() as u32;
const DIR_BASE: u32 = COLOR_BASE + COLORS.len() as u32;
const VERB_BASE: u32 = DIR_BASE + DIRECTIONS.len() as u32;

/// Smallest vocabulary that can hold every token the generator emits.
pub const MIN_VOCAB: u32 = VERB_BASE + VERBS.len() as u32;

/// Surface form of every generated token id, in id order. Extra vocabulary
/// slots beyond these are never emitted.
pub fn default_vocab() -> Vec<String> {
    let mut v: Vec<String> = ["<pad>", "<cls>", "<mask>", "<sep>"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend(SHAPES.iter().map(|s| s.to_string()));
    v.extend(COLORS.iter().map(|(s, _)| s.to_string()));
    v.extend(DIRECTIONS.iter().map(|(s, _)| s.to_string()));
    v.extend(VERBS.iter().map(|s| s.to_string()));
    v
}

/// Geometry and vocabulary of the generated corpus.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub vocab_size: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            frames: 4,
            height: 32,
            width: 32,
            vocab_size: 64,
        }
    }
}

/// One clip-caption pair plus its stable corpus index.
#[derive(Clone, Debug)]
pub struct SynthItem {
    pub clip: VideoClip,
    pub caption: Vec<u32>,
    pub index: u64,
}

impl SynthSpec {
    /// Generates `count` clip-caption pairs. Every item is a pure function
    /// of `(corpus_seed, item index)`, so regeneration and out-of-order
    /// assembly reproduce identical bytes.
    pub fn generate(&self, count: usize, corpus_seed: u64) -> Result<Vec<SynthItem>> {
        (0..count as u64)
            .map(|i| self.generate_item(corpus_seed, i))
            .collect()
    }

    pub fn generate_item(&self, corpus_seed: u64, index: u64) -> Result<SynthItem> {
        if self.vocab_size < MIN_VOCAB {
            return Err(Error::invalid(format!(
                "vocab size {} cannot hold the {MIN_VOCAB} generated tokens",
                self.vocab_size
            )));
        }
        if self.height < 8 || self.width < 8 || self.frames == 0 {
            return Err(Error::invalid("synthetic clips need >= 8x8 pixels and >= 1 frame"));
        }
        let mut rng = item_rng(corpus_seed, index);
        let shape = rng.gen_range(0..SHAPES.len());
        let color = rng.gen_range(0..COLORS.len());
        let dir = rng.gen_range(0..DIRECTIONS.len());
        let verb = rng.gen_range(0..VERBS.len());
        let template = rng.gen_range(0..2u8);
        let speed = rng.gen_range(1..=2i64);
        let radius = (self.height.min(self.width) / 8).max(2) as i64;
        let cx0 = rng.gen_range(0..self.width as i64);
        let cy0 = rng.gen_range(0..self.height as i64);
        let (_, (dx, dy)) = DIRECTIONS[dir];
        let (_, rgb) = COLORS[color];

        let mut frames = Array4::from_elem((self.frames, self.height, self.width, 3), 0.08f32);
        for t in 0..self.frames {
            let cx = (cx0 + dx * speed * t as i64).rem_euclid(self.width as i64);
            let cy = (cy0 + dy * speed * t as i64).rem_euclid(self.height as i64);
            for y in 0..self.height as i64 {
                for x in 0..self.width as i64 {
                    // Toroidal distance keeps the shape whole as it wraps.
                    let ddx = wrap_delta(x - cx, self.width as i64);
                    let ddy = wrap_delta(y - cy, self.height as i64);
                    if covers(shape, ddx, ddy, radius) {
                        for c in 0..3 {
                            frames[[t, y as usize, x as usize, c]] = rgb[c];
                        }
                    }
                }
            }
        }

        let shape_tok = SHAPE_BASE + shape as u32;
        let color_tok = COLOR_BASE + color as u32;
        let dir_tok = DIR_BASE + dir as u32;
        let verb_tok = VERB_BASE + verb as u32;
        let caption = if template == 0 {
            vec![CLS_ID, shape_tok, color_tok, dir_tok, SEP_ID]
        } else {
            vec![CLS_ID, color_tok, shape_tok, verb_tok, dir_tok, SEP_ID]
        };

        // Pretend each clip was sparsely sampled from a longer source; the
        // midpoints give strictly increasing indices.
        let frame_indices = sparse_sample(self.frames * 4, self.frames, &mut rng, true)?;
        let clip = VideoClip::new(
            frames,
            frame_indices,
            format!("synth-{corpus_seed}-{index}"),
            Some(shape as i64),
        )?;
        Ok(SynthItem {
            clip,
            caption,
            index,
        })
    }
}

fn wrap_delta(d: i64, size: i64) -> i64 {
    let m = d.rem_euclid(size);
    if m > size / 2 {
        m - size
    } else {
        m
    }
}

fn covers(shape: usize, dx: i64, dy: i64, r: i64) -> bool {
    match shape {
        0 => dx.abs() <= r && dy.abs() <= r,
        1 => dx * dx + dy * dy <= r * r,
        _ => (dx.abs() <= r / 2 && dy.abs() <= r) || (dx.abs() <= r && dy.abs() <= r / 2),
    }
}
