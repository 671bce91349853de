//! Frozen per-frame image transformer that supplies alignment targets
//! and the class-token attention used for semantic masking.
//!
//! The teacher never trains: its parameters live behind an immutable
//! store and the forward pass is plain array math with no gradient tape.

use crate::data::{patchify, sincos_positions, PatchGrid, VideoClip};
use crate::error::{Error, Result};
use crate::nn::{self, ParamStore, LN_EPS};
use crate::objectives::{l2_normalize_rows, AlignmentTarget};
use crate::rng::rng_from;
use crate::tape::{gelu, softmax_rows};
use crate::tensorio::{load_tensors, save_tensors, Tensor};
use indexmap::IndexMap;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TeacherConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub proj_dim: usize,
    pub patch_size: usize,
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("teacher needs at least one block"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "teacher width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.width % 2 != 0 {
            return Err(Error::config("teacher width must be even for positions"));
        }
        if self.proj_dim == 0 || self.patch_size == 0 {
            return Err(Error::config("teacher projection and patch size must be positive"));
        }
        Ok(())
    }
}

/// Per-frame class-token attention over spatial tokens; rows sum to one.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub weights: Array2<f64>,
}

impl AttentionMap {
    pub fn frames(&self) -> usize {
        self.weights.nrows()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.weights.ncols()
    }
}

/// Everything one teacher pass exposes: the residual stream of every
/// block (spatial rows only), the final class tokens, and the attention
/// map of the last block.
#[derive(Clone, Debug)]
pub struct TeacherOutput {
    pub layer_tokens: Vec<Array3<f64>>,
    pub class_tokens: Array2<f64>,
    pub attention: AttentionMap,
}

pub struct Teacher {
    pub cfg: TeacherConfig,
    store: ParamStore,
}

impl Teacher {
    pub fn init(cfg: TeacherConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from(seed);
        let mut store = ParamStore::new();
        let patch_in = cfg.patch_size * cfg.patch_size * 3;
        nn::init_linear(&mut store, "teacher.patch", patch_in, cfg.width, &mut rng);
        store.insert("teacher.cls", nn::trunc_normal(&mut rng, 1, cfg.width, 0.02));
        for i in 0..cfg.depth {
            nn::init_block(&mut store, &format!("teacher.block{i}"), cfg.width, &mut rng);
        }
        nn::init_layer_norm(&mut store, "teacher.ln_f", cfg.width);
        nn::init_linear(&mut store, "teacher.visual_proj", cfg.width, cfg.proj_dim, &mut rng);
        Ok(Teacher { cfg, store })
    }

    /// Read-only access; the teacher stays frozen.
    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn checksum(&self) -> u32 {
        self.store.checksum()
    }

    /// Patch-embeds a clip with the teacher's own projection. The grid
    /// must carry the teacher width and leave frames unfolded so teacher
    /// and student tokens correspond one to one.
    pub fn embed(&self, clip: &VideoClip, grid: &PatchGrid) -> Result<Array3<f64>> {
        if grid.embed_dim != self.cfg.width {
            return Err(Error::invalid(format!(
                "grid embeds at {}, teacher width is {}",
                grid.embed_dim, self.cfg.width
            )));
        }
        if grid.frames_per_token != 1 {
            return Err(Error::invalid(
                "teacher consumes one frame per token; temporal folding is student-side only",
            ));
        }
        if grid.patch_size != self.cfg.patch_size {
            return Err(Error::invalid(format!(
                "grid patch size {} does not match teacher patch size {}",
                grid.patch_size, self.cfg.patch_size
            )));
        }
        patchify(
            clip,
            grid,
            self.get("teacher.patch.w"),
            self.get("teacher.patch.b"),
        )
    }

    pub fn forward_clip(&self, clip: &VideoClip, grid: &PatchGrid) -> Result<TeacherOutput> {
        let tokens = self.embed(clip, grid)?;
        self.forward(&tokens)
    }

    /// Runs every frame independently through the transformer with a
    /// prepended class token.
    pub fn forward(&self, tokens: &Array3<f64>) -> Result<TeacherOutput> {
        let (t, l, c) = tokens.dim();
        if c != self.cfg.width {
            return Err(Error::invalid(format!(
                "token width {c} does not match teacher width {}",
                self.cfg.width
            )));
        }
        if l == 0 {
            return Err(Error::invalid("teacher needs at least one spatial token"));
        }
        let pos = sincos_positions(1, l, c)?;
        let cls = self.get("teacher.cls");
        let mut layer_tokens = vec![Array3::zeros((t, l, c)); self.cfg.depth];
        let mut class_tokens = Array2::zeros((t, c));
        let mut attention = Array2::zeros((t, l));
        for frame in 0..t {
            let mut x = Array2::zeros((l + 1, c));
            x.row_mut(0).assign(&cls.row(0));
            for i in 0..l {
                for j in 0..c {
                    x[[i + 1, j]] = tokens[[frame, i, j]] + pos[[i, j]];
                }
            }
            for b in 0..self.cfg.depth {
                let prefix = format!("teacher.block{b}");
                if b == self.cfg.depth - 1 {
                    let h = self.ln(&x, &format!("{prefix}.ln1"));
                    let row = class_attention(
                        h.row(0),
                        &h.slice(s![1.., ..]).to_owned(),
                        self.get(&format!("{prefix}.attn.q.w")),
                        self.get(&format!("{prefix}.attn.q.b")),
                        self.get(&format!("{prefix}.attn.k.w")),
                        self.get(&format!("{prefix}.attn.k.b")),
                        self.cfg.heads,
                    )?;
                    attention.row_mut(frame).assign(&row);
                }
                x = self.block(&x, &prefix);
                layer_tokens[b]
                    .index_axis_mut(Axis(0), frame)
                    .assign(&x.slice(s![1.., ..]));
            }
            class_tokens.row_mut(frame).assign(&x.row(0));
        }
        Ok(TeacherOutput {
            layer_tokens,
            class_tokens,
            attention: AttentionMap { weights: attention },
        })
    }

    /// Maps final-layer tokens into the shared target space.
    pub fn project(&self, tokens: &Array2<f64>) -> Result<Array2<f64>> {
        if tokens.ncols() != self.cfg.width {
            return Err(Error::invalid(format!(
                "cannot project width {}, teacher width is {}",
                tokens.ncols(),
                self.cfg.width
            )));
        }
        Ok(affine(
            tokens,
            self.get("teacher.visual_proj.w"),
            self.get("teacher.visual_proj.b"),
        ))
    }

    /// Feature width of each aligned layer, deepest last. Intermediate
    /// layers keep the teacher width; the last aligned layer passes
    /// through the projection head.
    pub fn target_dims(&self, aligned_layers: usize) -> Result<Vec<usize>> {
        if aligned_layers == 0 || aligned_layers > self.cfg.depth {
            return Err(Error::config(format!(
                "cannot align {aligned_layers} layers of a depth-{} teacher",
                self.cfg.depth
            )));
        }
        let mut dims = vec![self.cfg.width; aligned_layers - 1];
        dims.push(self.cfg.proj_dim);
        Ok(dims)
    }

    /// Gathers unit-normalized regression targets for the unmasked
    /// positions, one matrix per aligned layer (the deepest
    /// `aligned_layers` blocks, in depth order). Every layer is read
    /// through the final normalization; the deepest additionally through
    /// the projection head.
    pub fn alignment_targets(
        &self,
        output: &TeacherOutput,
        aligned_layers: usize,
        provenance: &[(usize, usize)],
    ) -> Result<AlignmentTarget> {
        if aligned_layers == 0 || aligned_layers > self.cfg.depth {
            return Err(Error::config(format!(
                "cannot align {aligned_layers} layers of a depth-{} teacher",
                self.cfg.depth
            )));
        }
        let (t, l, _) = output.layer_tokens[0].dim();
        let mut layers = Vec::with_capacity(aligned_layers);
        for k in 0..aligned_layers {
            let layer = self.cfg.depth - aligned_layers + k;
            let tokens = &output.layer_tokens[layer];
            let mut gathered = Array2::zeros((provenance.len(), self.cfg.width));
            for (row, &(frame, spatial)) in provenance.iter().enumerate() {
                if frame >= t || spatial >= l {
                    return Err(Error::invalid(format!(
                        "provenance ({frame}, {spatial}) outside teacher output {t}x{l}"
                    )));
                }
                gathered
                    .row_mut(row)
                    .assign(&tokens.slice(s![frame, spatial, ..]));
            }
            let normed = self.ln(&gathered, "teacher.ln_f");
            let target = if k == aligned_layers - 1 {
                self.project(&normed)?
            } else {
                normed
            };
            layers.push(l2_normalize_rows(&target));
        }
        Ok(AlignmentTarget { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = IndexMap::new();
        for (name, value) in self.store.iter() {
            tensors.insert(name.to_string(), Tensor::F64(value.clone()));
        }
        save_tensors(path, &tensors)
    }

    /// Loads a snapshot, checking the tensor set against the
    /// configuration. Unknown tensors are tolerated and returned as
    /// warnings.
    pub fn load(path: &Path, cfg: TeacherConfig) -> Result<(Teacher, Vec<String>)> {
        let reference = Teacher::init(cfg, 0)?;
        let tensors = load_tensors(path)?;
        let mut store = ParamStore::new();
        let mut missing = Vec::new();
        for (name, expected) in reference.store.iter() {
            match tensors.get(name) {
                Some(Tensor::F64(a)) => {
                    if a.dim() != expected.dim() {
                        return Err(Error::ShapeMismatch {
                            name: name.to_string(),
                            expected: vec![expected.nrows(), expected.ncols()],
                            got: vec![a.nrows(), a.ncols()],
                        });
                    }
                    store.insert(name, a.clone());
                }
                Some(Tensor::U64(v)) => {
                    return Err(Error::ShapeMismatch {
                        name: name.to_string(),
                        expected: vec![expected.nrows(), expected.ncols()],
                        got: vec![v.len()],
                    });
                }
                None => missing.push(name.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingTensors(missing));
        }
        let warnings: Vec<String> = tensors
            .keys()
            .filter(|name| !reference.store.contains(name))
            .map(|name| format!("ignoring unknown tensor {name:?}"))
            .collect();
        Ok((Teacher { cfg, store }, warnings))
    }

    fn get(&self, name: &str) -> &Array2<f64> {
        self.store
            .get(name)
            .unwrap_or_else(|| panic!("teacher tensor {name} missing"))
    }

    fn ln(&self, x: &Array2<f64>, prefix: &str) -> Array2<f64> {
        layer_norm(
            x,
            self.get(&format!("{prefix}.g")),
            self.get(&format!("{prefix}.b")),
        )
    }

    fn block(&self, x: &Array2<f64>, prefix: &str) -> Array2<f64> {
        let h = self.ln(x, &format!("{prefix}.ln1"));
        let x = x + &self.self_attention(&h, &format!("{prefix}.attn"));
        let h = self.ln(&x, &format!("{prefix}.ln2"));
        let m1 = affine(
            &h,
            self.get(&format!("{prefix}.mlp.fc1.w")),
            self.get(&format!("{prefix}.mlp.fc1.b")),
        );
        let m1 = m1.mapv(gelu);
        let m2 = affine(
            &m1,
            self.get(&format!("{prefix}.mlp.fc2.w")),
            self.get(&format!("{prefix}.mlp.fc2.b")),
        );
        x + m2
    }

    fn self_attention(&self, x: &Array2<f64>, prefix: &str) -> Array2<f64> {
        let q = affine(x, self.get(&format!("{prefix}.q.w")), self.get(&format!("{prefix}.q.b")));
        let k = affine(x, self.get(&format!("{prefix}.k.w")), self.get(&format!("{prefix}.k.b")));
        let v = affine(x, self.get(&format!("{prefix}.v.w")), self.get(&format!("{prefix}.v.b")));
        let heads = self.cfg.heads;
        let d = self.cfg.width / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut joined = Array2::zeros((x.nrows(), self.cfg.width));
        for h in 0..heads {
            let cols = s![.., h * d..(h + 1) * d];
            let logits = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let p = softmax_rows(&logits);
            joined
                .slice_mut(cols)
                .assign(&p.dot(&v.slice(cols).to_owned()));
        }
        affine(
            &joined,
            self.get(&format!("{prefix}.o.w")),
            self.get(&format!("{prefix}.o.b")),
        )
    }
}

/// How much the class token attends to each spatial token, averaged over
/// heads: per head, softmax of the scaled class-query key products over
/// the spatial tokens only.
pub fn class_attention(
    z_cls: ArrayView1<f64>,
    z: &Array2<f64>,
    wq: &Array2<f64>,
    bq: &Array2<f64>,
    wk: &Array2<f64>,
    bk: &Array2<f64>,
    heads: usize,
) -> Result<Array1<f64>> {
    let c = z_cls.len();
    if z.ncols() != c || z.nrows() == 0 {
        return Err(Error::invalid(format!(
            "keys {:?} do not match class width {c}",
            z.dim()
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::config(format!(
            "width {c} not divisible by {heads} heads"
        )));
    }
    if wq.dim() != (c, c) || wk.dim() != (c, c) || bq.ncols() != c || bk.ncols() != c {
        return Err(Error::invalid("projection shapes do not match width"));
    }
    let q = z_cls.insert_axis(Axis(0)).dot(wq) + bq;
    let k = z.dot(wk) + bk;
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut acc = Array1::zeros(z.nrows());
    for h in 0..heads {
        let cols = s![.., h * d..(h + 1) * d];
        let logits = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let p = softmax_rows(&logits);
        acc += &p.row(0);
    }
    Ok(acc / heads as f64)
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

fn layer_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[[0, j]] + bias[[0, j]];
        }
    }
    out
}
