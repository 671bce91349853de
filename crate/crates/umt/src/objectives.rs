//! Training objectives: unmasked-token alignment, video-text contrast,
//! video-text matching support and masked language modeling.
//!
//! Stochastic choices (negative mining, text masking) are separated from
//! the differentiable losses so every loss is a deterministic function of
//! its inputs.

use crate::error::{Error, Result};
use crate::tape::{softmax_rows, Tape, Var};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Row-norm floor shared by every normalized embedding.
pub const NORM_EPS: f64 = 1e-12;

/// Reserved text token ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: u32,
    pub cls: u32,
    pub mask: u32,
    pub sep: u32,
}

impl SpecialTokens {
    pub fn synth_default() -> Self {
        SpecialTokens {
            pad: crate::data::PAD_ID,
            cls: crate::data::CLS_ID,
            mask: crate::data::MASK_ID,
            sep: crate::data::SEP_ID,
        }
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.pad || id == self.cls || id == self.mask || id == self.sep
    }

    pub fn all(&self) -> [u32; 4] {
        [self.pad, self.cls, self.mask, self.sep]
    }
}

/// Per-layer regression targets with unit-norm rows, one matrix per
/// aligned layer, rows ordered like the unmasked token batch.
#[derive(Clone, Debug)]
pub struct AlignmentTarget {
    pub layers: Vec<Array2<f64>>,
}

pub fn l2_normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        row.mapv_inplace(|v| v / norm);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub uta: f64,
    pub vtc: f64,
    pub vtm: f64,
    pub mlm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            uta: 1.0,
            vtc: 1.0,
            vtm: 1.0,
            mlm: 1.0,
        }
    }
}

/// Per-step loss values; `None` means the objective was disabled or
/// skipped this step (skips carry a warning).
#[derive(Clone, Debug, Default)]
pub struct LossReport {
    pub uta: Option<f64>,
    pub vtc: Option<f64>,
    pub vtm: Option<f64>,
    pub mlm: Option<f64>,
    pub total: f64,
    pub warnings: Vec<String>,
}

/// Mean squared error between unit-normalized student projections and
/// the targets, averaged over elements within a layer and then over
/// layers. Targets enter as constants; only the projections get
/// gradients.
pub fn uta_loss_tape(tape: &mut Tape, projected: &[Var], target: &AlignmentTarget) -> Result<Var> {
    if projected.is_empty() || projected.len() != target.layers.len() {
        return Err(Error::invalid(format!(
            "{} projected layers against {} target layers",
            projected.len(),
            target.layers.len()
        )));
    }
    let k = projected.len();
    let mut acc: Option<Var> = None;
    for (var, t) in projected.iter().zip(&target.layers) {
        if tape.value(*var).dim() != t.dim() {
            return Err(Error::invalid(format!(
                "projection {:?} does not match target {:?}",
                tape.value(*var).dim(),
                t.dim()
            )));
        }
        let n = tape.l2norm_rows(*var, NORM_EPS);
        let diff = tape.add_const(n, &(-t));
        let sq = tape.mul(diff, diff);
        let lk = tape.mean_all(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, lk),
            None => lk,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / k as f64))
}

pub fn uta_loss(projected: &[Array2<f64>], target: &AlignmentTarget) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = projected.iter().map(|a| tape.leaf(a.clone())).collect();
    let loss = uta_loss_tape(&mut tape, &vars, target)?;
    Ok(tape.scalar(loss))
}

/// Symmetric InfoNCE over in-batch pairs. `video` and `text` are `(B, E)`
/// with unit rows; `temperature` is a `(1, 1)` variable holding the
/// current softmax temperature.
pub fn vtc_loss_tape(tape: &mut Tape, video: Var, text: Var, temperature: Var) -> Result<Var> {
    let (bv, ev) = tape.value(video).dim();
    let (bt, et) = tape.value(text).dim();
    if bv != bt || ev != et || bv == 0 {
        return Err(Error::invalid(format!(
            "embedding shapes ({bv}, {ev}) and ({bt}, {et}) must match with B >= 1"
        )));
    }
    let tt = tape.transpose(text);
    let sim = tape.matmul(video, tt);
    let inv = tape.recip(temperature);
    let logits = tape.scale_by(sim, inv);
    let diag: Vec<usize> = (0..bv).collect();
    let lv = tape.log_softmax_rows(logits);
    let dv = tape.gather_cols_per_row(lv, &diag);
    let mv = tape.mean_all(dv);
    let logits_t = tape.transpose(logits);
    let lt = tape.log_softmax_rows(logits_t);
    let dt = tape.gather_cols_per_row(lt, &diag);
    let mt = tape.mean_all(dt);
    let sum = tape.add(mv, mt);
    Ok(tape.scale(sum, -0.5))
}

pub fn vtc_loss(video: &Array2<f64>, text: &Array2<f64>, temperature: f64) -> Result<f64> {
    if temperature <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut tape = Tape::new();
    let v = tape.leaf(video.clone());
    let t = tape.leaf(text.clone());
    let temp = tape.leaf(Array2::from_elem((1, 1), temperature));
    let loss = vtc_loss_tape(&mut tape, v, t, temp)?;
    Ok(tape.scalar(loss))
}

/// Hard negatives for matching: for every video a text index sampled from
/// the softmax over its off-diagonal similarities, and symmetrically for
/// every text. Videos are drawn first (index order), then texts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinedNegatives {
    pub text_for_video: Vec<usize>,
    pub video_for_text: Vec<usize>,
}

pub fn mine_negatives(sim: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<MinedNegatives> {
    let b = sim.nrows();
    if sim.ncols() != b {
        return Err(Error::invalid(format!(
            "similarity matrix must be square, got {:?}",
            sim.dim()
        )));
    }
    if b < 2 {
        return Err(Error::invalid("negative mining needs at least two pairs"));
    }
    let mut text_for_video = Vec::with_capacity(b);
    for i in 0..b {
        let candidates: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        let vals: Vec<f64> = candidates.iter().map(|&j| sim[[i, j]]).collect();
        text_for_video.push(candidates[sample_softmax(&vals, rng)]);
    }
    let mut video_for_text = Vec::with_capacity(b);
    for j in 0..b {
        let candidates: Vec<usize> = (0..b).filter(|&i| i != j).collect();
        let vals: Vec<f64> = candidates.iter().map(|&i| sim[[i, j]]).collect();
        video_for_text.push(candidates[sample_softmax(&vals, rng)]);
    }
    Ok(MinedNegatives {
        text_for_video,
        video_for_text,
    })
}

fn sample_softmax(vals: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let row = Array2::from_shape_vec((1, vals.len()), vals.to_vec()).unwrap();
    let probs = softmax_rows(&row);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.row(0).iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    vals.len() - 1
}

/// Binary cross-entropy over match logits; labels are 1 for aligned
/// pairs and 0 for mined negatives.
pub fn vtm_loss(logits: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if logits.dim() != labels.dim() || logits.is_empty() {
        return Err(Error::invalid(format!(
            "logits {:?} and labels {:?} must match and be non-empty",
            logits.dim(),
            labels.dim()
        )));
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::invalid("matching labels must be 0 or 1"));
    }
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let loss = tape.bce_with_logits(z, labels);
    Ok(tape.scalar(loss))
}

/// Corrupted text with the recoverable targets. `positions` index into
/// `input_ids` and come out sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedText {
    pub input_ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Selects `floor(ratio * maskable)` non-special positions and corrupts
/// them BERT-style: 80% become the mask token, 10% a random non-special
/// id, 10% stay unchanged (but are still predicted).
pub fn mask_text(
    ids: &[u32],
    vocab_size: u32,
    special: &SpecialTokens,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedText> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside [0, 1]")));
    }
    if special.all().iter().any(|&s| s >= vocab_size) {
        return Err(Error::invalid("special token ids outside vocabulary"));
    }
    if vocab_size <= 4 {
        return Err(Error::invalid("vocabulary has no non-special ids"));
    }
    if ids.iter().any(|&t| t >= vocab_size) {
        return Err(Error::invalid("token id outside vocabulary"));
    }
    let mut maskable: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| !special.is_special(t))
        .map(|(i, _)| i)
        .collect();
    if maskable.is_empty() {
        return Err(Error::invalid("sequence has no maskable tokens"));
    }
    let m = (ratio * maskable.len() as f64).floor() as usize;
    for i in 0..m {
        let j = rng.gen_range(i..maskable.len());
        maskable.swap(i, j);
    }
    let mut positions: Vec<usize> = maskable[..m].to_vec();
    positions.sort_unstable();
    let mut input_ids = ids.to_vec();
    let mut targets = Vec::with_capacity(m);
    for &pos in &positions {
        targets.push(ids[pos]);
        let roll: f64 = rng.gen();
        if roll < 0.8 {
            input_ids[pos] = special.mask;
        } else if roll < 0.9 {
            input_ids[pos] = loop {
                let cand = rng.gen_range(0..vocab_size);
                if !special.is_special(cand) {
                    break cand;
                }
            };
        }
    }
    Ok(MaskedText {
        input_ids,
        positions,
        targets,
    })
}

/// Mean cross-entropy of vocabulary logits at masked positions.
pub fn mlm_loss_tape(tape: &mut Tape, logits: Var, targets: &[u32]) -> Result<Var> {
    let (m, v) = tape.value(logits).dim();
    if m == 0 {
        return Err(Error::invalid("no masked positions to score"));
    }
    if targets.len() != m {
        return Err(Error::invalid(format!(
            "{m} logit rows but {} targets",
            targets.len()
        )));
    }
    if targets.iter().any(|&t| t as usize >= v) {
        return Err(Error::invalid("target id outside vocabulary"));
    }
    let cols: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let lsm = tape.log_softmax_rows(logits);
    let picked = tape.gather_cols_per_row(lsm, &cols);
    let mean = tape.mean_all(picked);
    Ok(tape.scale(mean, -1.0))
}

pub fn mlm_loss(logits: &Array2<f64>, targets: &[u32]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let loss = mlm_loss_tape(&mut tape, z, targets)?;
    Ok(tape.scalar(loss))
}

/// Video embedding for contrast: mean over unmasked tokens, affine
/// projection, unit normalization. Returns a `(1, E)` row.
pub fn pool_video(tokens: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if tokens.nrows() == 0 {
        return Err(Error::invalid("cannot pool an empty token batch"));
    }
    if w.nrows() != tokens.ncols() || b.dim() != (1, w.ncols()) {
        return Err(Error::invalid(format!(
            "projection ({:?}, {:?}) does not fit tokens {:?}",
            w.dim(),
            b.dim(),
            tokens.dim()
        )));
    }
    let mean: Array1<f64> = tokens.mean_axis(Axis(0)).unwrap();
    let pooled = mean.insert_axis(Axis(0)).dot(w) + b;
    Ok(l2_normalize_rows(&pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::array;

    #[test]
    fn uta_zero_for_identical_inputs() {
        let t = l2_normalize_rows(&array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]]);
        let target = AlignmentTarget {
            layers: vec![t.clone()],
        };
        let loss = uta_loss(&[t], &target).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn uta_orthogonal_rows_give_two_over_dim() {
        // Unit rows at right angles: squared distance 2 per row, spread
        // over D elements.
        let proj = array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 3.0, 0.0]];
        let target = AlignmentTarget {
            layers: vec![array![[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]],
        };
        let loss = uta_loss(&[proj], &target).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uta_averages_layers() {
        let unit = array![[1.0, 0.0]];
        let ortho = array![[0.0, 1.0]];
        let target = AlignmentTarget {
            layers: vec![unit.clone(), unit.clone()],
        };
        let loss = uta_loss(&[unit.clone(), ortho], &target).unwrap();
        assert!((loss - 0.5).abs() < 1e-12, "mean of 0 and 2/D = 1");
    }

    #[test]
    fn vtc_identity_is_log_batch() {
        for b in [2usize, 4, 7] {
            let mut e = Array2::zeros((b, b));
            for i in 0..b {
                e[[i, i]] = 1.0;
            }
            let loss = vtc_loss(&e, &e, 1.0).unwrap();
            // Identical unit embeddings: diagonal logit 1, off-diagonal 0.
            let expected = {
                let z = 1f64.exp() + (b - 1) as f64;
                -(1f64.exp() / z).ln()
            };
            assert!((loss - expected).abs() < 1e-10, "b={b}");
        }
    }

    #[test]
    fn vtc_two_pair_value() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = vtc_loss(&e, &e, 1.0).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.313_261_687_5).abs() < 1e-9);
    }

    #[test]
    fn vtc_rejects_bad_temperature() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(vtc_loss(&e, &e, 0.0).is_err());
        assert!(vtc_loss(&e, &e, -1.0).is_err());
    }

    #[test]
    fn vtm_known_values() {
        // Logit 0 scores probability one half on both labels.
        let logits = array![[0.0], [0.0]];
        let labels = array![[1.0], [0.0]];
        let loss = vtm_loss(&logits, &labels).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        // Strong correct logits drive the loss toward zero.
        let confident = array![[30.0], [-30.0]];
        let loss = vtm_loss(&confident, &labels).unwrap();
        assert!(loss < 1e-9);
        assert!(vtm_loss(&logits, &array![[0.5], [0.0]]).is_err());
    }

    #[test]
    fn mining_prefers_similar_negatives() {
        let sim = array![
            [9.0, 3.0, 0.0],
            [0.0, 9.0, 3.0],
            [3.0, 0.0, 9.0]
        ];
        let mut rng = rng_from(5);
        let mut hit = 0usize;
        let total = 4000;
        for _ in 0..total {
            let mined = mine_negatives(&sim, &mut rng).unwrap();
            assert!(mined.text_for_video.iter().enumerate().all(|(i, &j)| i != j));
            assert!(mined.video_for_text.iter().enumerate().all(|(j, &i)| i != j));
            if mined.text_for_video[0] == 1 {
                hit += 1;
            }
        }
        // softmax(3, 0) puts ~0.953 on the harder negative.
        let p = hit as f64 / total as f64;
        assert!((p - 0.9526).abs() < 0.02, "hard negative rate {p}");
    }

    #[test]
    fn mining_needs_two_pairs() {
        let sim = array![[1.0]];
        assert!(mine_negatives(&sim, &mut rng_from(0)).is_err());
    }

    #[test]
    fn mask_text_counts_and_specials() {
        let sp = SpecialTokens::synth_default();
        let ids = vec![1, 10, 11, 12, 13, 3];
        let mut rng = rng_from(2);
        for _ in 0..200 {
            let m = mask_text(&ids, 64, &sp, 0.5, &mut rng).unwrap();
            assert_eq!(m.positions.len(), 2);
            assert!(m.positions.windows(2).all(|w| w[0] < w[1]));
            for (&pos, &t) in m.positions.iter().zip(&m.targets) {
                assert_eq!(t, ids[pos]);
                assert!(!sp.is_special(t));
            }
            assert_eq!(m.input_ids[0], 1);
            assert_eq!(*m.input_ids.last().unwrap(), 3);
            assert!(m.input_ids.iter().all(|&t| t < 64));
        }
    }

    #[test]
    fn mask_text_corruption_rates() {
        let sp = SpecialTokens::synth_default();
        let ids = vec![10];
        let mut rng = rng_from(9);
        let (mut masked, mut random, mut kept) = (0, 0, 0);
        let total = 20000;
        for _ in 0..total {
            let m = mask_text(&ids, 64, &sp, 1.0, &mut rng).unwrap();
            match m.input_ids[0] {
                2 => masked += 1,
                10 => kept += 1,
                _ => random += 1,
            }
        }
        let f = |c: usize| c as f64 / total as f64;
        assert!((f(masked) - 0.8).abs() < 0.01, "mask rate {}", f(masked));
        // The random branch can also redraw the original id (1/60).
        assert!((f(random) - 0.1 * 59.0 / 60.0).abs() < 0.01);
        assert!((f(kept) - (0.1 + 0.1 / 60.0)).abs() < 0.01);
    }

    #[test]
    fn mask_text_rejects_all_special() {
        let sp = SpecialTokens::synth_default();
        let mut rng = rng_from(0);
        assert!(mask_text(&[1, 3, 0, 0], 64, &sp, 0.5, &mut rng).is_err());
    }

    #[test]
    fn mlm_uniform_logits_give_log_vocab() {
        for v in [4usize, 64] {
            let logits = Array2::zeros((3, v));
            let loss = mlm_loss(&logits, &[0, 1, (v - 1) as u32]).unwrap();
            assert!((loss - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mlm_perfect_logits_drive_loss_down() {
        let mut logits = Array2::zeros((2, 8));
        logits[[0, 3]] = 40.0;
        logits[[1, 5]] = 40.0;
        let loss = mlm_loss(&logits, &[3, 5]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn pool_video_is_unit_norm() {
        let tokens = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let w = array![[0.3, -0.1, 0.7], [0.2, 0.5, -0.4]];
        let b = array![[0.1, 0.0, -0.2]];
        let out = pool_video(&tokens, &w, &b).unwrap();
        let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(pool_video(&Array2::zeros((0, 2)), &w, &b).is_err());
    }
}
