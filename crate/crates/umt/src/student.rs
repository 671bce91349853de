//! Trainable spatiotemporal encoder. Unmasked patch tokens from every
//! frame attend jointly (or per frame, for ablation); the deepest blocks
//! feed normalization-plus-linear heads that regress onto teacher
//! targets.

use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::nn::{self, group_mask, Ctx, DropPath, ParamStore};
use crate::rng::rng_from;
use crate::tape::{Tape, Var};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnPattern {
    /// Every unmasked token attends to every other, across frames.
    Joint,
    /// Tokens attend within their own frame only.
    PerFrame,
}

impl std::str::FromStr for AttnPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(AttnPattern::Joint),
            "frame" | "per-frame" => Ok(AttnPattern::PerFrame),
            other => Err(Error::config(format!(
                "unknown attention pattern {other:?} (expected joint or frame)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    /// How many of the deepest blocks carry alignment heads.
    pub aligned_layers: usize,
    /// Output width of the deepest alignment head.
    pub proj_dim: usize,
    pub drop_path_rate: f64,
    pub attention: AttnPattern,
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("student needs at least one block"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "student width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.width % 2 != 0 {
            return Err(Error::config("student width must be even for positions"));
        }
        if self.aligned_layers == 0 || self.aligned_layers > self.depth {
            return Err(Error::config(format!(
                "cannot align {} layers of a depth-{} student",
                self.aligned_layers, self.depth
            )));
        }
        if self.proj_dim == 0 {
            return Err(Error::config("projection width must be positive"));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::config(format!(
                "drop path rate {} outside [0, 1)",
                self.drop_path_rate
            )));
        }
        Ok(())
    }
}

/// Fresh student parameters under the `student.` prefix. Intermediate
/// alignment heads map to `intermediate_dim` (the teacher width); the
/// deepest maps to `proj_dim`.
pub fn init_student(
    cfg: &StudentConfig,
    patch_input_dim: usize,
    intermediate_dim: usize,
    seed: u64,
) -> Result<ParamStore> {
    cfg.validate()?;
    if patch_input_dim == 0 || intermediate_dim == 0 {
        return Err(Error::config("patch and intermediate widths must be positive"));
    }
    let mut rng = rng_from(seed);
    let mut store = ParamStore::new();
    nn::init_linear(&mut store, "student.patch", patch_input_dim, cfg.width, &mut rng);
    for i in 0..cfg.depth {
        nn::init_block(&mut store, &format!("student.block{i}"), cfg.width, &mut rng);
    }
    nn::init_layer_norm(&mut store, "student.ln_f", cfg.width);
    for k in 0..cfg.aligned_layers {
        let out = if k + 1 == cfg.aligned_layers {
            cfg.proj_dim
        } else {
            intermediate_dim
        };
        nn::init_layer_norm(&mut store, &format!("student.align{k}.ln"), cfg.width);
        nn::init_linear(&mut store, &format!("student.align{k}.proj"), cfg.width, out, &mut rng);
    }
    Ok(store)
}

/// Per-block stochastic-depth decisions, rate scaled linearly with
/// depth. All `Off` when the configured rate is zero.
pub fn drop_schedule(cfg: &StudentConfig, rng: &mut ChaCha8Rng) -> Vec<DropPath> {
    (0..cfg.depth)
        .map(|i| {
            let rate = if cfg.depth > 1 {
                cfg.drop_path_rate * i as f64 / (cfg.depth - 1) as f64
            } else {
                cfg.drop_path_rate
            };
            DropPath::draw(rate, rng)
        })
        .collect()
}

/// Tape-resident forward outputs: residual stream of each aligned block
/// plus the head projections, deepest last, and the normalized final
/// tokens.
pub struct StudentForwardVars {
    pub layers: Vec<Var>,
    pub projected: Vec<Var>,
    pub final_tokens: Var,
}

/// Runs the student over the unmasked tokens only. `batch.tokens` holds
/// raw patch rows; `positions` is the full position table for the grid,
/// from which the kept rows are gathered.
pub fn student_forward_tape(
    cfg: &StudentConfig,
    ctx: &mut Ctx,
    batch: &TokenBatch,
    positions: &Array2<f64>,
    drops: &[DropPath],
) -> Result<StudentForwardVars> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("student got an empty token batch"));
    }
    if drops.len() != cfg.depth {
        return Err(Error::invalid(format!(
            "{} drop decisions for {} blocks",
            drops.len(),
            cfg.depth
        )));
    }
    if positions.dim() != (batch.grid.total_tokens(), cfg.width) {
        return Err(Error::invalid(format!(
            "position table {:?} does not match grid ({}, {})",
            positions.dim(),
            batch.grid.total_tokens(),
            cfg.width
        )));
    }
    let patch_w = ctx
        .store
        .get("student.patch.w")
        .ok_or_else(|| Error::MissingTensors(vec!["student.patch.w".into()]))?;
    if batch.tokens.ncols() != patch_w.nrows() {
        return Err(Error::invalid(format!(
            "patch rows of width {} against embedding input {}",
            batch.tokens.ncols(),
            patch_w.nrows()
        )));
    }
    let mut kept_pos = Array2::zeros((batch.len(), cfg.width));
    for (row, idx) in batch.flat_indices().into_iter().enumerate() {
        kept_pos.row_mut(row).assign(&positions.row(idx));
    }
    let mask = match cfg.attention {
        AttnPattern::Joint => None,
        AttnPattern::PerFrame => Some(group_mask(&batch.frame_groups())),
    };

    let raw = ctx.tape.leaf(batch.tokens.clone());
    let embedded = ctx.linear(raw, "student.patch");
    let mut x = ctx.tape.add_const(embedded, &kept_pos);
    let mut layers = Vec::with_capacity(cfg.aligned_layers);
    let mut projected = Vec::with_capacity(cfg.aligned_layers);
    let first_aligned = cfg.depth - cfg.aligned_layers;
    for i in 0..cfg.depth {
        x = ctx.block(x, &format!("student.block{i}"), cfg.heads, mask.as_ref(), drops[i]);
        if i >= first_aligned {
            let k = i - first_aligned;
            let h = ctx.layer_norm(x, &format!("student.align{k}.ln"));
            let p = ctx.linear(h, &format!("student.align{k}.proj"));
            layers.push(x);
            projected.push(p);
        }
    }
    let final_tokens = ctx.layer_norm(x, "student.ln_f");
    Ok(StudentForwardVars {
        layers,
        projected,
        final_tokens,
    })
}

/// Plain-array forward pass (no stochastic depth), for evaluation and
/// tests.
#[derive(Clone, Debug)]
pub struct StudentOutput {
    pub layers: Vec<Array2<f64>>,
    pub projected: Vec<Array2<f64>>,
    pub final_tokens: Array2<f64>,
}

pub fn student_forward(
    cfg: &StudentConfig,
    store: &ParamStore,
    batch: &TokenBatch,
    positions: &Array2<f64>,
) -> Result<StudentOutput> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store);
    let drops = vec![DropPath::Off; cfg.depth];
    let vars = student_forward_tape(cfg, &mut ctx, batch, positions, &drops)?;
    Ok(StudentOutput {
        layers: vars.layers.iter().map(|&v| tape.value(v).clone()).collect(),
        projected: vars
            .projected
            .iter()
            .map(|&v| tape.value(v).clone())
            .collect(),
        final_tokens: tape.value(vars.final_tokens).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sincos_positions, PatchGrid};

    fn tiny_cfg(attention: AttnPattern) -> StudentConfig {
        StudentConfig {
            depth: 3,
            width: 16,
            heads: 4,
            aligned_layers: 2,
            proj_dim: 8,
            drop_path_rate: 0.0,
            attention,
        }
    }

    fn tiny_batch(grid: &PatchGrid, kept: Vec<(usize, usize)>) -> TokenBatch {
        let tokens = Array2::from_shape_fn((kept.len(), grid.patch_input_dim()), |(i, j)| {
            ((kept[i].0 * 131 + kept[i].1 * 17 + j) % 23) as f64 / 23.0 - 0.5
        });
        TokenBatch::new(tokens, kept, grid.clone()).unwrap()
    }

    #[test]
    fn forward_shapes_follow_config() {
        let cfg = tiny_cfg(AttnPattern::Joint);
        let grid = PatchGrid::new(2, 8, 8, 4, cfg.width).unwrap();
        let store = init_student(&cfg, grid.patch_input_dim(), 12, 1).unwrap();
        let batch = tiny_batch(&grid, vec![(0, 0), (0, 3), (1, 1), (1, 2)]);
        let pos = sincos_positions(grid.frames, grid.tokens_per_frame(), cfg.width).unwrap();
        let out = student_forward(&cfg, &store, &batch, &pos).unwrap();
        assert_eq!(out.layers.len(), 2);
        assert_eq!(out.projected[0].dim(), (4, 12));
        assert_eq!(out.projected[1].dim(), (4, 8));
        assert_eq!(out.final_tokens.dim(), (4, cfg.width));
    }

    #[test]
    fn joint_attention_is_permutation_equivariant() {
        let cfg = tiny_cfg(AttnPattern::Joint);
        let grid = PatchGrid::new(2, 8, 8, 4, cfg.width).unwrap();
        let store = init_student(&cfg, grid.patch_input_dim(), 12, 2).unwrap();
        let pos = sincos_positions(grid.frames, grid.tokens_per_frame(), cfg.width).unwrap();
        let kept = vec![(0, 1), (0, 2), (1, 0), (1, 3)];
        let batch = tiny_batch(&grid, kept.clone());
        let out = student_forward(&cfg, &store, &batch, &pos).unwrap();

        let perm = [2usize, 0, 3, 1];
        let kept_p: Vec<(usize, usize)> = perm.iter().map(|&i| kept[i]).collect();
        let mut tokens_p = Array2::zeros(batch.tokens.dim());
        for (row, &src) in perm.iter().enumerate() {
            tokens_p.row_mut(row).assign(&batch.tokens.row(src));
        }
        let batch_p = TokenBatch::new(tokens_p, kept_p, grid.clone()).unwrap();
        let out_p = student_forward(&cfg, &store, &batch_p, &pos).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            for j in 0..cfg.proj_dim {
                let a = out.projected[1][[src, j]];
                let b = out_p.projected[1][[row, j]];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_frame_attention_isolates_frames() {
        // With per-frame attention, changing one frame's tokens must not
        // alter the other frame's outputs.
        let cfg = tiny_cfg(AttnPattern::PerFrame);
        let grid = PatchGrid::new(2, 8, 8, 4, cfg.width).unwrap();
        let store = init_student(&cfg, grid.patch_input_dim(), 12, 3).unwrap();
        let pos = sincos_positions(grid.frames, grid.tokens_per_frame(), cfg.width).unwrap();
        let kept = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let batch = tiny_batch(&grid, kept.clone());
        let out = student_forward(&cfg, &store, &batch, &pos).unwrap();

        let mut tokens2 = batch.tokens.clone();
        tokens2.row_mut(2).fill(0.42);
        tokens2.row_mut(3).fill(-0.17);
        let batch2 = TokenBatch::new(tokens2, kept, grid.clone()).unwrap();
        let out2 = student_forward(&cfg, &store, &batch2, &pos).unwrap();
        for j in 0..cfg.width {
            assert_eq!(out.final_tokens[[0, j]], out2.final_tokens[[0, j]]);
            assert_eq!(out.final_tokens[[1, j]], out2.final_tokens[[1, j]]);
        }
        assert_ne!(out.final_tokens[[2, 0]], out2.final_tokens[[2, 0]]);
    }

    #[test]
    fn joint_attention_mixes_frames() {
        let cfg = tiny_cfg(AttnPattern::Joint);
        let grid = PatchGrid::new(2, 8, 8, 4, cfg.width).unwrap();
        let store = init_student(&cfg, grid.patch_input_dim(), 12, 3).unwrap();
        let pos = sincos_positions(grid.frames, grid.tokens_per_frame(), cfg.width).unwrap();
        let kept = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let batch = tiny_batch(&grid, kept.clone());
        let out = student_forward(&cfg, &store, &batch, &pos).unwrap();
        let mut tokens2 = batch.tokens.clone();
        tokens2.row_mut(2).fill(0.42);
        let batch2 = TokenBatch::new(tokens2, kept, grid.clone()).unwrap();
        let out2 = student_forward(&cfg, &store, &batch2, &pos).unwrap();
        let drift: f64 = (0..cfg.width)
            .map(|j| (out.final_tokens[[0, j]] - out2.final_tokens[[0, j]]).abs())
            .sum();
        assert!(drift > 1e-9, "frame 1 edit should leak into frame 0 under joint attention");
    }

    #[test]
    fn drop_schedule_scales_with_depth() {
        let cfg = StudentConfig {
            drop_path_rate: 0.5,
            ..tiny_cfg(AttnPattern::Joint)
        };
        let mut rng = rng_from(5);
        let drops = drop_schedule(&cfg, &mut rng);
        assert_eq!(drops.len(), 3);
        // First block rate is zero, so it can never drop.
        assert_eq!(drops[0], DropPath::Off);
        let zero = StudentConfig {
            drop_path_rate: 0.0,
            ..cfg
        };
        assert!(drop_schedule(&zero, &mut rng).iter().all(|d| *d == DropPath::Off));
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut cfg = tiny_cfg(AttnPattern::Joint);
        cfg.heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg(AttnPattern::Joint);
        cfg.aligned_layers = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg(AttnPattern::Joint);
        cfg.drop_path_rate = 1.0;
        assert!(cfg.validate().is_err());
    }
}
