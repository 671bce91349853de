//! Text encoder and cross-modal decoder for the second training stage.
//!
//! The text encoder is a pad-masked transformer over learned token
//! embeddings with fixed sine-cosine positions. The decoder interleaves
//! text self-attention, cross-attention into the student's visible video
//! tokens, and an MLP, per block.

use crate::error::{Error, Result};
use crate::nn::{self, key_mask, Ctx, DropPath, ParamStore};
use crate::objectives::SpecialTokens;
use crate::rng::rng_from;
use crate::tape::{Tape, Var};
use ndarray::Array2;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub vocab_size: u32,
    pub max_len: usize,
    pub special: SpecialTokens,
}

impl TextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("text encoder needs at least one block"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "text width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.width % 2 != 0 {
            return Err(Error::config("text width must be even for positions"));
        }
        if self.max_len == 0 {
            return Err(Error::config("text max length must be positive"));
        }
        let sp = self.special.all();
        for (i, a) in sp.iter().enumerate() {
            if *a >= self.vocab_size {
                return Err(Error::config(format!(
                    "special token id {a} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            if sp[i + 1..].contains(a) {
                return Err(Error::config("special token ids must be distinct"));
            }
        }
        if self.vocab_size <= 4 {
            return Err(Error::config("vocabulary needs non-special ids"));
        }
        Ok(())
    }
}

pub fn init_text(cfg: &TextConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let mut store = ParamStore::new();
    store.insert(
        "text.embed",
        nn::trunc_normal(&mut rng, cfg.vocab_size as usize, cfg.width, 0.02),
    );
    for i in 0..cfg.depth {
        nn::init_block(&mut store, &format!("text.block{i}"), cfg.width, &mut rng);
    }
    nn::init_layer_norm(&mut store, "text.ln_f", cfg.width);
    Ok(store)
}

/// Token positions a text forward can attend to (pad tokens are hidden
/// from everyone as keys).
pub fn visible_tokens(cfg: &TextConfig, ids: &[u32]) -> Vec<bool> {
    ids.iter().map(|&t| t != cfg.special.pad).collect()
}

/// Encodes token ids to `(n, width)` features on the tape. Pad tokens
/// are masked out of every attention key set.
pub fn text_forward_tape(cfg: &TextConfig, ctx: &mut Ctx, ids: &[u32]) -> Result<Var> {
    cfg.validate()?;
    if ids.is_empty() || ids.len() > cfg.max_len {
        return Err(Error::invalid(format!(
            "text length {} outside 1..={}",
            ids.len(),
            cfg.max_len
        )));
    }
    if ids.iter().any(|&t| t >= cfg.vocab_size) {
        return Err(Error::invalid("token id outside vocabulary"));
    }
    let visible = visible_tokens(cfg, ids);
    if visible.iter().all(|v| !v) {
        return Err(Error::invalid("text is all padding"));
    }
    let n = ids.len();
    let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
    let table = ctx.param("text.embed");
    let embedded = ctx.tape.select_rows(table, &idx);
    let pos = crate::data::sincos_positions(1, n, cfg.width)?;
    let mut x = ctx.tape.add_const(embedded, &pos);
    let mask = key_mask(n, &visible);
    for i in 0..cfg.depth {
        x = ctx.block(
            x,
            &format!("text.block{i}"),
            cfg.heads,
            Some(&mask),
            DropPath::Off,
        );
    }
    Ok(ctx.layer_norm(x, "text.ln_f"))
}

pub fn text_forward(cfg: &TextConfig, store: &ParamStore, ids: &[u32]) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store);
    let out = text_forward_tape(cfg, &mut ctx, ids)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("decoder needs at least one block"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "decoder width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

/// Decoder parameters; cross-attention keys and values read `visual_dim`
/// features.
pub fn init_decoder(cfg: &DecoderConfig, visual_dim: usize, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    if visual_dim == 0 {
        return Err(Error::config("visual width must be positive"));
    }
    let mut rng = rng_from(seed);
    let mut store = ParamStore::new();
    for i in 0..cfg.depth {
        let p = format!("decoder.block{i}");
        nn::init_layer_norm(&mut store, &format!("{p}.ln1"), cfg.width);
        nn::init_attention(&mut store, &format!("{p}.attn"), cfg.width, cfg.width, cfg.width, &mut rng);
        nn::init_layer_norm(&mut store, &format!("{p}.lnx"), cfg.width);
        nn::init_attention(&mut store, &format!("{p}.cross"), cfg.width, visual_dim, cfg.width, &mut rng);
        nn::init_layer_norm(&mut store, &format!("{p}.ln2"), cfg.width);
        nn::init_linear(&mut store, &format!("{p}.mlp.fc1"), cfg.width, 4 * cfg.width, &mut rng);
        nn::init_linear(&mut store, &format!("{p}.mlp.fc2"), 4 * cfg.width, cfg.width, &mut rng);
    }
    nn::init_layer_norm(&mut store, "decoder.ln_f", cfg.width);
    Ok(store)
}

/// Fuses text features with video tokens: per block, pad-masked text
/// self-attention, cross-attention from text queries into the video
/// tokens, then an MLP, all pre-normalized residual branches.
pub fn cross_decode_tape(
    cfg: &DecoderConfig,
    ctx: &mut Ctx,
    text: Var,
    text_visible: &[bool],
    visual: Var,
) -> Result<Var> {
    cfg.validate()?;
    let (n, w) = ctx.tape.value(text).dim();
    if w != cfg.width {
        return Err(Error::invalid(format!(
            "text width {w} does not match decoder width {}",
            cfg.width
        )));
    }
    if text_visible.len() != n {
        return Err(Error::invalid(format!(
            "{n} text rows but {} visibility flags",
            text_visible.len()
        )));
    }
    let nv = ctx.tape.value(visual).nrows();
    if nv == 0 {
        return Err(Error::invalid("decoder needs at least one video token"));
    }
    let self_mask = key_mask(n, text_visible);
    let mut x = text;
    for i in 0..cfg.depth {
        let p = format!("decoder.block{i}");
        let h = ctx.layer_norm(x, &format!("{p}.ln1"));
        let a = ctx.attention(h, h, &format!("{p}.attn"), cfg.heads, Some(&self_mask));
        x = ctx.tape.add(x, a);
        let h = ctx.layer_norm(x, &format!("{p}.lnx"));
        let c = ctx.attention(h, visual, &format!("{p}.cross"), cfg.heads, None);
        x = ctx.tape.add(x, c);
        let h = ctx.layer_norm(x, &format!("{p}.ln2"));
        let m = ctx.mlp(h, &format!("{p}.mlp"));
        x = ctx.tape.add(x, m);
    }
    Ok(ctx.layer_norm(x, "decoder.ln_f"))
}

/// Same stack with the cross-attention branch skipped entirely; the
/// reference a zeroed cross-attention output must reproduce.
pub fn cross_decode_text_only(
    cfg: &DecoderConfig,
    ctx: &mut Ctx,
    text: Var,
    text_visible: &[bool],
) -> Result<Var> {
    cfg.validate()?;
    let n = ctx.tape.value(text).nrows();
    if text_visible.len() != n {
        return Err(Error::invalid(format!(
            "{n} text rows but {} visibility flags",
            text_visible.len()
        )));
    }
    let self_mask = key_mask(n, text_visible);
    let mut x = text;
    for i in 0..cfg.depth {
        let p = format!("decoder.block{i}");
        let h = ctx.layer_norm(x, &format!("{p}.ln1"));
        let a = ctx.attention(h, h, &format!("{p}.attn"), cfg.heads, Some(&self_mask));
        x = ctx.tape.add(x, a);
        let h = ctx.layer_norm(x, &format!("{p}.ln2"));
        let m = ctx.mlp(h, &format!("{p}.mlp"));
        x = ctx.tape.add(x, m);
    }
    Ok(ctx.layer_norm(x, "decoder.ln_f"))
}

pub fn cross_decode(
    cfg: &DecoderConfig,
    store: &ParamStore,
    text: &Array2<f64>,
    text_visible: &[bool],
    visual: &Array2<f64>,
) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store);
    let t = ctx.tape.leaf(text.clone());
    let v = ctx.tape.leaf(visual.clone());
    let out = cross_decode_tape(cfg, &mut ctx, t, text_visible, v)?;
    Ok(tape.value(out).clone())
}

/// Writes `id<TAB>surface` lines, one per vocabulary entry.
pub fn write_vocab(path: &Path, words: &[String]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, word) in words.iter().enumerate() {
        if word.contains('\t') || word.contains('\n') {
            return Err(Error::invalid(format!(
                "vocabulary entry {id} contains a separator"
            )));
        }
        writeln!(out, "{id}\t{word}")?;
    }
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut words = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, word) = line.split_once('\t').ok_or_else(|| {
            Error::invalid(format!("vocabulary line {} lacks a tab", lineno + 1))
        })?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::invalid(format!("vocabulary line {}: bad id", lineno + 1)))?;
        if id != words.len() {
            return Err(Error::invalid(format!(
                "vocabulary ids must be dense and ascending, saw {id} at position {}",
                words.len()
            )));
        }
        words.push(word.to_string());
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_vocab;

    fn text_cfg() -> TextConfig {
        TextConfig {
            depth: 2,
            width: 16,
            heads: 4,
            vocab_size: 32,
            max_len: 8,
            special: SpecialTokens::synth_default(),
        }
    }

    fn dec_cfg() -> DecoderConfig {
        DecoderConfig {
            depth: 2,
            width: 16,
            heads: 4,
        }
    }

    #[test]
    fn text_forward_shapes_and_bounds() {
        let cfg = text_cfg();
        let store = init_text(&cfg, 1).unwrap();
        let out = text_forward(&cfg, &store, &[1, 10, 11, 3]).unwrap();
        assert_eq!(out.dim(), (4, 16));
        assert!(text_forward(&cfg, &store, &[]).is_err());
        assert!(text_forward(&cfg, &store, &[1; 9]).is_err());
        assert!(text_forward(&cfg, &store, &[40]).is_err());
    }

    #[test]
    fn padding_does_not_leak_into_real_tokens() {
        let cfg = text_cfg();
        let store = init_text(&cfg, 2).unwrap();
        let short = text_forward(&cfg, &store, &[1, 10, 11, 3, 0, 0]).unwrap();
        let longer = text_forward(&cfg, &store, &[1, 10, 11, 3, 0, 0, 0, 0]).unwrap();
        // Positions of real tokens are identical, so their features must
        // not depend on how much padding follows.
        for i in 0..4 {
            for j in 0..16 {
                assert!((short[[i, j]] - longer[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn changing_pad_content_changes_nothing() {
        // The same ids with pads in the same places but different
        // trailing length: already covered above. Here, swap a real
        // token and check the encoding reacts (sanity that masking is
        // not hiding everything).
        let cfg = text_cfg();
        let store = init_text(&cfg, 2).unwrap();
        let a = text_forward(&cfg, &store, &[1, 10, 3]).unwrap();
        let b = text_forward(&cfg, &store, &[1, 11, 3]).unwrap();
        assert!(a != b);
    }

    #[test]
    fn zeroed_cross_attention_reduces_to_text_stack() {
        let tcfg = text_cfg();
        let dcfg = dec_cfg();
        let mut store = init_text(&tcfg, 3).unwrap();
        for (name, value) in init_decoder(&dcfg, 12, 4).unwrap().iter() {
            store.insert(name, value.clone());
        }
        // Kill the cross branch by zeroing its output projection.
        for i in 0..dcfg.depth {
            store
                .get_mut(&format!("decoder.block{i}.cross.o.w"))
                .unwrap()
                .fill(0.0);
            store
                .get_mut(&format!("decoder.block{i}.cross.o.b"))
                .unwrap()
                .fill(0.0);
        }
        let ids = [1u32, 10, 11, 3];
        let visible = visible_tokens(&tcfg, &ids);
        let text = text_forward(&tcfg, &store, &ids).unwrap();
        let visual = Array2::from_shape_fn((5, 12), |(i, j)| ((i * 7 + j) as f64).sin());

        let fused = cross_decode(&dcfg, &store, &text, &visible, &visual).unwrap();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store);
        let t = ctx.tape.leaf(text.clone());
        let reference = cross_decode_text_only(&dcfg, &mut ctx, t, &visible).unwrap();
        let reference = tape.value(reference);
        for (a, b) in fused.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_needs_video_tokens() {
        let tcfg = text_cfg();
        let dcfg = dec_cfg();
        let mut store = init_text(&tcfg, 5).unwrap();
        for (name, value) in init_decoder(&dcfg, 12, 6).unwrap().iter() {
            store.insert(name, value.clone());
        }
        let ids = [1u32, 10, 3];
        let text = text_forward(&tcfg, &store, &ids).unwrap();
        let visible = visible_tokens(&tcfg, &ids);
        let empty = Array2::zeros((0, 12));
        assert!(cross_decode(&dcfg, &store, &text, &visible, &empty).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("umt-vocab-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.tsv");
        let words = default_vocab();
        write_vocab(&path, &words).unwrap();
        assert_eq!(read_vocab(&path).unwrap(), words);
        std::fs::write(&path, "0\ta\n2\tb\n").unwrap();
        assert!(read_vocab(&path).is_err());
    }
}
