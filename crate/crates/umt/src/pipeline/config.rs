//! Run configuration: one struct covering both training stages, with
//! named presets and a `key = value` overlay format.

use crate::data::{Normalization, PatchGrid};
use crate::error::{Error, Result};
use crate::masking::unmasked_count;
use crate::objectives::{LossWeights, SpecialTokens};
use crate::multimodal::{DecoderConfig, TextConfig};
use crate::student::{AttnPattern, StudentConfig};
use crate::teacher::TeacherConfig;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Semantic,
    Random,
    Tube,
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(MaskKind::Semantic),
            "random" => Ok(MaskKind::Random),
            "tube" => Ok(MaskKind::Tube),
            other => Err(Error::config(format!(
                "unknown mask kind {other:?} (expected semantic, random or tube)"
            ))),
        }
    }
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MaskKind::Semantic => "semantic",
            MaskKind::Random => "random",
            MaskKind::Tube => "tube",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingKind {
    /// One frame per equal segment of the source video.
    Sparse,
    /// A contiguous window at a fixed stride.
    Dense,
}

impl FromStr for SamplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(SamplingKind::Sparse),
            "dense" => Ok(SamplingKind::Dense),
            other => Err(Error::config(format!(
                "unknown sampling {other:?} (expected sparse or dense)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Length of the notional source videos frames are sampled from.
    pub source_frames: usize,
    pub corpus_size: usize,
    pub normalization: Normalization,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    pub kind: MaskKind,
    pub video_ratio: f64,
    pub image_ratio: f64,
    pub text_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectiveSet {
    pub uta: bool,
    pub vtc: bool,
    pub vtm: bool,
    pub mlm: bool,
}

impl ObjectiveSet {
    pub fn any(&self) -> bool {
        self.uta || self.vtc || self.vtm || self.mlm
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub sampling: SamplingKind,
    pub dense_stride: usize,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub text: TextConfig,
    pub decoder: DecoderConfig,
    /// Width of the shared contrastive embedding space.
    pub embed_dim: usize,
    pub mask: MaskConfig,
    pub objectives: ObjectiveSet,
    pub weights: LossWeights,
    pub opt: OptimConfig,
    /// Fold frame pairs into single tokens (incompatible with
    /// alignment, which needs frame-matched teacher targets).
    pub temporal_downsample: bool,
    /// Alternate image and video batches during the second stage.
    pub image_alternate: bool,
    /// Let stage 2 start from random visual weights.
    pub allow_scratch_stage2: bool,
}

impl RunConfig {
    /// Small CPU-friendly setup used by tests and examples.
    pub fn desk_tiny() -> Self {
        RunConfig {
            seed: 7,
            data: DataConfig {
                frames: 4,
                height: 32,
                width: 32,
                source_frames: 16,
                corpus_size: 16,
                normalization: Normalization::default(),
            },
            sampling: SamplingKind::Sparse,
            dense_stride: 2,
            teacher: TeacherConfig {
                depth: 3,
                width: 48,
                heads: 4,
                proj_dim: 32,
                patch_size: 8,
            },
            student: StudentConfig {
                depth: 4,
                width: 128,
                heads: 4,
                aligned_layers: 2,
                proj_dim: 32,
                drop_path_rate: 0.0,
                attention: AttnPattern::Joint,
            },
            text: TextConfig {
                depth: 2,
                width: 64,
                heads: 4,
                vocab_size: 64,
                max_len: 16,
                special: SpecialTokens::synth_default(),
            },
            decoder: DecoderConfig {
                depth: 2,
                width: 64,
                heads: 4,
            },
            embed_dim: 32,
            mask: MaskConfig {
                kind: MaskKind::Semantic,
                video_ratio: 0.8,
                image_ratio: 0.5,
                text_ratio: 0.5,
            },
            objectives: ObjectiveSet {
                uta: true,
                vtc: true,
                vtm: true,
                mlm: true,
            },
            weights: LossWeights::default(),
            opt: OptimConfig {
                lr: 1e-3,
                min_lr: 1e-5,
                warmup_steps: 20,
                total_steps: 500,
                weight_decay: 0.02,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                batch_size: 4,
            },
            temporal_downsample: false,
            image_alternate: false,
            allow_scratch_stage2: false,
        }
    }

    /// Base-scale first-stage recipe: 8-frame clips, 16-pixel patches,
    /// alignment only, heavy masking.
    pub fn paper_b16_stage1() -> Self {
        let mut cfg = RunConfig::desk_tiny();
        cfg.data = DataConfig {
            frames: 8,
            height: 224,
            width: 224,
            source_frames: 300,
            corpus_size: 240_000,
            normalization: Normalization::default(),
        };
        cfg.teacher = TeacherConfig {
            depth: 24,
            width: 1024,
            heads: 16,
            proj_dim: 512,
            patch_size: 16,
        };
        cfg.student = StudentConfig {
            depth: 12,
            width: 768,
            heads: 12,
            aligned_layers: 6,
            proj_dim: 512,
            drop_path_rate: 0.1,
            attention: AttnPattern::Joint,
        };
        cfg.embed_dim = 256;
        cfg.objectives = ObjectiveSet {
            uta: true,
            vtc: false,
            vtm: false,
            mlm: false,
        };
        cfg.mask.video_ratio = 0.8;
        // 200 epochs at batch 2048 over the corpus, 40 of them warmup.
        let steps_per_epoch = (cfg.data.corpus_size / 2048) as u64;
        cfg.opt = OptimConfig {
            lr: 1.2e-3,
            min_lr: 1e-6,
            warmup_steps: 40 * steps_per_epoch,
            total_steps: 200 * steps_per_epoch,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            batch_size: 2048,
        };
        cfg
    }

    /// Base-scale second-stage recipe over a 5.5M-pair corpus:
    /// contrast, matching and masked-language objectives beside the
    /// alignment, alternating image and video batches.
    pub fn paper_stage2_5m() -> Self {
        let mut cfg = RunConfig::paper_b16_stage1();
        cfg.data.frames = 4;
        cfg.data.source_frames = 150;
        cfg.data.corpus_size = 5_500_000;
        cfg.text = TextConfig {
            depth: 9,
            width: 768,
            heads: 12,
            vocab_size: 30522,
            max_len: 32,
            special: SpecialTokens::synth_default(),
        };
        cfg.decoder = DecoderConfig {
            depth: 3,
            width: 768,
            heads: 12,
        };
        cfg.objectives = ObjectiveSet {
            uta: true,
            vtc: true,
            vtm: true,
            mlm: true,
        };
        cfg.mask = MaskConfig {
            kind: MaskKind::Semantic,
            video_ratio: 0.8,
            image_ratio: 0.5,
            text_ratio: 0.5,
        };
        let steps_per_epoch = (cfg.data.corpus_size / 4096) as u64;
        cfg.opt = OptimConfig {
            lr: 1e-4,
            min_lr: 1e-6,
            warmup_steps: steps_per_epoch,
            total_steps: 10 * steps_per_epoch,
            weight_decay: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4096,
        };
        cfg.image_alternate = true;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-tiny" => Ok(RunConfig::desk_tiny()),
            "paper-b16-stage1" => Ok(RunConfig::paper_b16_stage1()),
            "paper-stage2-5m" => Ok(RunConfig::paper_stage2_5m()),
            other => Err(Error::config(format!(
                "unknown preset {other:?} (expected desk-tiny, paper-b16-stage1 or paper-stage2-5m)"
            ))),
        }
    }

    /// Token grid the student trains on.
    pub fn student_grid(&self) -> Result<PatchGrid> {
        let grid = PatchGrid::new(
            self.data.frames,
            self.data.height,
            self.data.width,
            self.teacher.patch_size,
            self.student.width,
        )?;
        if self.temporal_downsample {
            grid.with_temporal_downsample()
        } else {
            Ok(grid)
        }
    }

    /// Token grid the teacher reads (never temporally folded).
    pub fn teacher_grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(
            self.data.frames,
            self.data.height,
            self.data.width,
            self.teacher.patch_size,
            self.teacher.width,
        )
    }

    /// Single-frame grid for the image pathway.
    pub fn image_grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(
            1,
            self.data.height,
            self.data.width,
            self.teacher.patch_size,
            self.student.width,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.student.validate()?;
        self.text.validate()?;
        self.decoder.validate()?;
        if self.decoder.width != self.text.width {
            return Err(Error::config(format!(
                "decoder width {} must match text width {}",
                self.decoder.width, self.text.width
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embedding width must be positive"));
        }
        let grid = self.student_grid()?;
        let tgrid = self.teacher_grid()?;
        unmasked_count(grid.tokens_per_frame(), self.mask.video_ratio)?;
        unmasked_count(grid.tokens_per_frame(), self.mask.image_ratio)?;
        if !(0.0..=1.0).contains(&self.mask.text_ratio) {
            return Err(Error::config(format!(
                "text mask ratio {} outside [0, 1]",
                self.mask.text_ratio
            )));
        }
        if self.temporal_downsample && self.objectives.uta {
            return Err(Error::config(
                "temporal downsampling folds frame pairs, so student tokens no longer \
                 correspond to teacher frames; disable the alignment objective to use it",
            ));
        }
        if self.student.aligned_layers > self.teacher.depth {
            return Err(Error::config(format!(
                "student aligns {} layers but the teacher only has {}",
                self.student.aligned_layers, self.teacher.depth
            )));
        }
        if self.objectives.uta && self.student.proj_dim != self.teacher.proj_dim {
            return Err(Error::config(format!(
                "student projects its deepest aligned layer to {} but the teacher's \
                 projection width is {}",
                self.student.proj_dim, self.teacher.proj_dim
            )));
        }
        debug_assert_eq!(grid.tokens_per_frame(), tgrid.tokens_per_frame());
        if self.data.corpus_size == 0 {
            return Err(Error::config("corpus must hold at least one item"));
        }
        match self.sampling {
            SamplingKind::Sparse => {
                if self.data.source_frames < self.data.frames {
                    return Err(Error::config(format!(
                        "cannot sparse-sample {} frames from {} source frames",
                        self.data.frames, self.data.source_frames
                    )));
                }
            }
            SamplingKind::Dense => {
                if self.dense_stride == 0 {
                    return Err(Error::config("dense stride must be positive"));
                }
                let span = (self.data.frames - 1) * self.dense_stride + 1;
                if span > self.data.source_frames {
                    return Err(Error::config(format!(
                        "dense window of {span} frames exceeds {} source frames",
                        self.data.source_frames
                    )));
                }
            }
        }
        let o = &self.opt;
        if o.lr <= 0.0 || o.min_lr < 0.0 || o.min_lr > o.lr {
            return Err(Error::config(format!(
                "learning rates ({}, min {}) must satisfy 0 < min <= lr",
                o.lr, o.min_lr
            )));
        }
        if o.total_steps == 0 || o.warmup_steps > o.total_steps {
            return Err(Error::config(format!(
                "warmup {} must fit inside total {} steps",
                o.warmup_steps, o.total_steps
            )));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("momentum factors must lie in [0, 1)"));
        }
        if o.eps <= 0.0 || o.weight_decay < 0.0 {
            return Err(Error::config("eps must be positive and weight decay non-negative"));
        }
        if o.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !self.objectives.any() {
            return Err(Error::config("every objective is disabled"));
        }
        for (name, w) in [
            ("uta", self.weights.uta),
            ("vtc", self.weights.vtc),
            ("vtm", self.weights.vtm),
            ("mlm", self.weights.mlm),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::config(format!(
                    "loss weight {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        if self.text.vocab_size < crate::data::MIN_VOCAB {
            return Err(Error::config(format!(
                "vocabulary of {} cannot hold the synthetic caption tokens",
                self.text.vocab_size
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` override; keys follow the config field
    /// paths.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::config(format!("cannot parse {value:?} for key {key:?}"))
            })
        }
        match key {
            "seed" => self.seed = p(key, value)?,
            "frames" => self.data.frames = p(key, value)?,
            "height" => self.data.height = p(key, value)?,
            "width" => self.data.width = p(key, value)?,
            "source_frames" => self.data.source_frames = p(key, value)?,
            "corpus_size" => self.data.corpus_size = p(key, value)?,
            "sampling" => self.sampling = value.parse()?,
            "dense_stride" => self.dense_stride = p(key, value)?,
            "teacher.depth" => self.teacher.depth = p(key, value)?,
            "teacher.width" => self.teacher.width = p(key, value)?,
            "teacher.heads" => self.teacher.heads = p(key, value)?,
            "teacher.proj_dim" => self.teacher.proj_dim = p(key, value)?,
            "teacher.patch_size" => self.teacher.patch_size = p(key, value)?,
            "student.depth" => self.student.depth = p(key, value)?,
            "student.width" => self.student.width = p(key, value)?,
            "student.heads" => self.student.heads = p(key, value)?,
            "student.aligned_layers" => self.student.aligned_layers = p(key, value)?,
            "student.proj_dim" => self.student.proj_dim = p(key, value)?,
            "student.drop_path_rate" => self.student.drop_path_rate = p(key, value)?,
            "student.attention" => self.student.attention = value.parse()?,
            "text.depth" => self.text.depth = p(key, value)?,
            "text.width" => self.text.width = p(key, value)?,
            "text.heads" => self.text.heads = p(key, value)?,
            "text.vocab_size" => self.text.vocab_size = p(key, value)?,
            "text.max_len" => self.text.max_len = p(key, value)?,
            "decoder.depth" => self.decoder.depth = p(key, value)?,
            "decoder.width" => self.decoder.width = p(key, value)?,
            "decoder.heads" => self.decoder.heads = p(key, value)?,
            "embed_dim" => self.embed_dim = p(key, value)?,
            "mask.kind" => self.mask.kind = value.parse()?,
            "mask.video_ratio" => self.mask.video_ratio = p(key, value)?,
            "mask.image_ratio" => self.mask.image_ratio = p(key, value)?,
            "mask.text_ratio" => self.mask.text_ratio = p(key, value)?,
            "objectives.uta" => self.objectives.uta = p(key, value)?,
            "objectives.vtc" => self.objectives.vtc = p(key, value)?,
            "objectives.vtm" => self.objectives.vtm = p(key, value)?,
            "objectives.mlm" => self.objectives.mlm = p(key, value)?,
            "weights.uta" => self.weights.uta = p(key, value)?,
            "weights.vtc" => self.weights.vtc = p(key, value)?,
            "weights.vtm" => self.weights.vtm = p(key, value)?,
            "weights.mlm" => self.weights.mlm = p(key, value)?,
            "opt.lr" => self.opt.lr = p(key, value)?,
            "opt.min_lr" => self.opt.min_lr = p(key, value)?,
            "opt.warmup_steps" => self.opt.warmup_steps = p(key, value)?,
            "opt.total_steps" => self.opt.total_steps = p(key, value)?,
            "opt.weight_decay" => self.opt.weight_decay = p(key, value)?,
            "opt.beta1" => self.opt.beta1 = p(key, value)?,
            "opt.beta2" => self.opt.beta2 = p(key, value)?,
            "opt.eps" => self.opt.eps = p(key, value)?,
            "opt.batch_size" => self.opt.batch_size = p(key, value)?,
            "temporal_downsample" => self.temporal_downsample = p(key, value)?,
            "image_alternate" => self.image_alternate = p(key, value)?,
            "allow_scratch_stage2" => self.allow_scratch_stage2 = p(key, value)?,
            other => {
                return Err(Error::config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Applies a config file of `key = value` lines; `#` starts a
    /// comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {} of {}: expected key = value",
                    lineno + 1,
                    path.display()
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
