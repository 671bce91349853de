//! The training loop for both stages: a frozen teacher supervises a
//! masked student in stage one; stage two adds a text encoder, a
//! cross-modal decoder and the contrastive, matching and
//! masked-language objectives on top of the same alignment.

use crate::data::{
    extract_patches, image_as_video, sincos_positions, PatchGrid, SynthItem, SynthSpec, VideoClip,
};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, random_mask, semantic_mask, tube_mask, MaskPlan};
use crate::multimodal::{
    cross_decode_tape, init_decoder, init_text, text_forward, text_forward_tape, visible_tokens,
};
use crate::nn::{init_linear, Ctx, DropPath, ParamStore};
use crate::objectives::{
    l2_normalize_rows, mask_text, mine_negatives, mlm_loss_tape, pool_video, uta_loss_tape,
    vtc_loss_tape, AlignmentTarget, LossReport, MaskedText,
};
use crate::pipeline::checkpoint::{
    load_matching_params, load_snapshot, save_snapshot, InitReport, Snapshot, TrainerCounters,
};
use crate::pipeline::config::{MaskKind, RunConfig};
use crate::pipeline::loader::CorpusLoader;
use crate::pipeline::metrics::{MetricsLog, StepRecord};
use crate::pipeline::optim::{adamw_step, cosine_lr, AdamState};
use crate::rng::rng_from;
use crate::tape::{Tape, Var};
use crate::teacher::{AttentionMap, Teacher};
use ndarray::{Array2, Array3, Axis};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Learnable softmax temperature: starting value and clamp range.
const TEMP_INIT: f64 = 0.07;
const TEMP_MIN: f64 = 1e-3;
const TEMP_MAX: f64 = 0.5;

/// Seed-stream roles, added to the run seed so each component draws
/// from an independent generator.
const SEED_TEACHER: u64 = 1;
const SEED_STUDENT: u64 = 2;
const SEED_TEXT: u64 = 3;
const SEED_DECODER: u64 = 4;
const SEED_HEADS: u64 = 5;
const SEED_TRAIN: u64 = 6;
const SEED_CORPUS: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    fn as_u64(self) -> u64 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    fn from_u64(v: u64) -> Result<Stage> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(Error::invalid(format!("unknown stage {other}"))),
        }
    }
}

pub struct Trainer {
    pub cfg: RunConfig,
    stage: Stage,
    teacher: Teacher,
    params: ParamStore,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    tokens_processed: u64,
    attn_elements: u64,
    loader: CorpusLoader,
    student_grid: PatchGrid,
    teacher_grid: PatchGrid,
    image_grid: PatchGrid,
    image_teacher_grid: PatchGrid,
    positions_video: Array2<f64>,
    positions_image: Array2<f64>,
}

/// Everything drawn or computed for one batch item before the tape is
/// built, so random draws happen in a fixed order.
struct PreparedItem {
    batch: crate::data::TokenBatch,
    target: Option<AlignmentTarget>,
    drops: Vec<DropPath>,
    caption: Vec<u32>,
    masked: Option<MaskedText>,
}

fn draw_plan(
    kind: MaskKind,
    attention: &AttentionMap,
    grid: &PatchGrid,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskPlan> {
    match kind {
        MaskKind::Semantic => semantic_mask(attention, ratio, rng),
        MaskKind::Random => random_mask(grid, ratio, rng),
        MaskKind::Tube => tube_mask(grid, ratio, rng),
    }
}

/// Raw normalized patch pixels shaped (frames, tokens, patch dim).
fn raw_tokens(
    clip: &VideoClip,
    grid: &PatchGrid,
    norm: &crate::data::Normalization,
) -> Result<Array3<f64>> {
    let flat = extract_patches(clip, grid, norm)?;
    let (t, l) = (grid.frames, grid.tokens_per_frame());
    let d = flat.ncols();
    flat.into_shape((t, l, d))
        .map_err(|e| Error::invalid(format!("patch reshape failed: {e}")))
}

impl Trainer {
    fn build(cfg: RunConfig, stage: Stage) -> Result<Trainer> {
        cfg.validate()?;
        let student_grid = cfg.student_grid()?;
        let teacher_grid = cfg.teacher_grid()?;
        let image_grid = cfg.image_grid()?;
        let image_teacher_grid = PatchGrid::new(
            1,
            cfg.data.height,
            cfg.data.width,
            cfg.teacher.patch_size,
            cfg.teacher.width,
        )?;
        let teacher = Teacher::init(cfg.teacher, cfg.seed + SEED_TEACHER)?;
        let mut params = crate::student::init_student(
            &cfg.student,
            student_grid.patch_input_dim(),
            cfg.teacher.width,
            cfg.seed + SEED_STUDENT,
        )?;
        if stage == Stage::Two {
            let text = init_text(&cfg.text, cfg.seed + SEED_TEXT)?;
            for (name, v) in text.iter() {
                params.insert(name, v.clone());
            }
            let dec = init_decoder(&cfg.decoder, cfg.student.width, cfg.seed + SEED_DECODER)?;
            for (name, v) in dec.iter() {
                params.insert(name, v.clone());
            }
            let mut head_rng = rng_from(cfg.seed + SEED_HEADS);
            init_linear(&mut params, "mm.video_proj", cfg.student.width, cfg.embed_dim, &mut head_rng);
            init_linear(&mut params, "mm.text_proj", cfg.text.width, cfg.embed_dim, &mut head_rng);
            init_linear(&mut params, "mm.vtm", cfg.text.width, 1, &mut head_rng);
            init_linear(
                &mut params,
                "mm.mlm",
                cfg.text.width,
                cfg.text.vocab_size as usize,
                &mut head_rng,
            );
            params.insert("mm.temperature", Array2::from_elem((1, 1), TEMP_INIT));
        }
        let adam = AdamState::for_params(&params);
        let loader = CorpusLoader::new(
            SynthSpec {
                frames: cfg.data.frames,
                height: cfg.data.height,
                width: cfg.data.width,
                vocab_size: cfg.text.vocab_size,
            },
            cfg.seed + SEED_CORPUS,
            cfg.data.corpus_size,
            cfg.opt.batch_size,
        )?;
        let positions_video = sincos_positions(
            student_grid.frames,
            student_grid.tokens_per_frame(),
            cfg.student.width,
        )?;
        let positions_image =
            sincos_positions(1, image_grid.tokens_per_frame(), cfg.student.width)?;
        Ok(Trainer {
            rng: rng_from(cfg.seed + SEED_TRAIN),
            cfg,
            stage,
            teacher,
            params,
            adam,
            step: 0,
            tokens_processed: 0,
            attn_elements: 0,
            loader,
            student_grid,
            teacher_grid,
            image_grid,
            image_teacher_grid,
            positions_video,
            positions_image,
        })
    }

    pub fn new_stage1(cfg: RunConfig) -> Result<Trainer> {
        Trainer::build(cfg, Stage::One)
    }

    /// Stage-two trainer. `visual_init` seeds the student tower from a
    /// stage-one snapshot; without it the config must explicitly allow
    /// starting from scratch.
    pub fn new_stage2(cfg: RunConfig, visual_init: Option<&Path>) -> Result<(Trainer, InitReport)> {
        let allow_scratch = cfg.allow_scratch_stage2;
        let mut trainer = Trainer::build(cfg, Stage::Two)?;
        match visual_init {
            Some(path) => {
                let report = load_matching_params(path, &mut trainer.params)?;
                if report.loaded.is_empty() {
                    return Err(Error::config(format!(
                        "snapshot {} shares no parameters with this student",
                        path.display()
                    )));
                }
                Ok((trainer, report))
            }
            None if allow_scratch => Ok((trainer, InitReport::default())),
            None => Err(Error::config(
                "stage two expects a stage-one snapshot for the student tower; \
                 pass one or set allow_scratch_stage2",
            )),
        }
    }

    /// Rebuilds a trainer from a snapshot, restoring parameters,
    /// optimizer moments, counters and the exact generator state.
    pub fn resume(cfg: RunConfig, snapshot_path: &Path) -> Result<Trainer> {
        let snap = load_snapshot(snapshot_path)?;
        let stage = Stage::from_u64(snap.counters.stage)?;
        let mut trainer = Trainer::build(cfg, stage)?;
        for (name, value) in snap.params.iter() {
            match trainer.params.get(name) {
                Some(existing) if existing.raw_dim() == value.raw_dim() => {}
                Some(existing) => {
                    return Err(Error::ShapeMismatch {
                        name: name.to_string(),
                        expected: existing.shape().to_vec(),
                        got: value.shape().to_vec(),
                    });
                }
                None => {
                    return Err(Error::invalid(format!(
                        "snapshot parameter {name} does not exist in this config"
                    )));
                }
            }
        }
        if snap.params.len() != trainer.params.len() {
            return Err(Error::invalid(format!(
                "snapshot holds {} parameters, config builds {}",
                snap.params.len(),
                trainer.params.len()
            )));
        }
        trainer.params = snap.params;
        trainer.adam = snap.adam;
        trainer.rng = snap.rng;
        trainer.step = snap.counters.step;
        trainer.tokens_processed = snap.counters.tokens_processed;
        trainer.attn_elements = snap.counters.attn_elements;
        Ok(trainer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_snapshot(
            path,
            &Snapshot {
                params: self.params.clone(),
                adam: self.adam.clone(),
                rng: self.rng.clone(),
                counters: TrainerCounters {
                    stage: self.stage.as_u64(),
                    step: self.step,
                    tokens_processed: self.tokens_processed,
                    attn_elements: self.attn_elements,
                },
            },
        )
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn tokens_processed(&self) -> u64 {
        self.tokens_processed
    }

    /// Score-matrix elements accumulated over every differentiable
    /// attention call so far.
    pub fn attn_elements(&self) -> u64 {
        self.attn_elements
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn teacher(&self) -> &Teacher {
        &self.teacher
    }

    pub fn params_checksum(&self) -> u32 {
        self.params.checksum()
    }

    /// One optimization step; dispatches on the stage.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let lr = cosine_lr(self.step, &self.cfg.opt);
        let report = match self.stage {
            Stage::One => self.stage1_step(lr)?,
            Stage::Two => self.stage2_step(lr)?,
        };
        Ok(StepRecord::from_report(self.step - 1, lr, &report, self.tokens_processed))
    }

    /// Runs `steps` more steps, appending one metrics line per step.
    pub fn run(&mut self, steps: u64, log: Option<&MetricsLog>) -> Result<Vec<StepRecord>> {
        let mut records = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let record = self.train_step()?;
            if let Some(log) = log {
                log.append(&record)?;
            }
            records.push(record);
        }
        Ok(records)
    }

    /// Prepares one item: mask plan, student tokens, teacher targets
    /// and stochastic-depth draws, consuming randomness in a fixed
    /// order regardless of which objectives are enabled.
    fn prepare_item(
        &mut self,
        item: &SynthItem,
        image_mode: bool,
        need_text_mask: bool,
    ) -> Result<PreparedItem> {
        let (clip, sgrid, tgrid, ratio) = if image_mode {
            let first = item.clip.frames.index_axis(Axis(0), 0).to_owned();
            (
                image_as_video(first, format!("{}#frame0", item.clip.source_id))?,
                &self.image_grid,
                &self.image_teacher_grid,
                self.cfg.mask.image_ratio,
            )
        } else {
            (
                item.clip.clone(),
                &self.student_grid,
                &self.teacher_grid,
                self.cfg.mask.video_ratio,
            )
        };
        let tout = self.teacher.forward_clip(&clip, tgrid)?;
        let plan = draw_plan(self.cfg.mask.kind, &tout.attention, sgrid, ratio, &mut self.rng)?;
        let raw = raw_tokens(&clip, sgrid, &self.cfg.data.normalization)?;
        let batch = apply_mask(&raw, &plan, sgrid)?;
        let target = if self.cfg.objectives.uta {
            Some(self.teacher.alignment_targets(
                &tout,
                self.cfg.student.aligned_layers,
                &batch.provenance,
            )?)
        } else {
            None
        };
        let drops = crate::student::drop_schedule(&self.cfg.student, &mut self.rng);
        let masked = if need_text_mask {
            Some(mask_text(
                &item.caption,
                self.cfg.text.vocab_size,
                &self.cfg.text.special,
                self.cfg.mask.text_ratio,
                &mut self.rng,
            )?)
        } else {
            None
        };
        Ok(PreparedItem {
            batch,
            target,
            drops,
            caption: item.caption.clone(),
            masked,
        })
    }

    fn stage1_step(&mut self, lr: f64) -> Result<LossReport> {
        if !self.cfg.objectives.uta {
            return Err(Error::config("stage one trains only the alignment objective"));
        }
        let items = self.loader.batch(self.step)?;
        let mut prepared = Vec::with_capacity(items.len());
        for item in &items {
            prepared.push(self.prepare_item(item, false, false)?);
        }
        let kept: usize = prepared.iter().map(|p| p.batch.len()).sum();

        let mut tape = Tape::new();
        let report;
        let grads_by_name: BTreeMap<String, Array2<f64>>;
        {
            let mut ctx = Ctx::new(&mut tape, &self.params);
            let inv_b = 1.0 / prepared.len() as f64;
            let mut mean_uta: Option<Var> = None;
            for p in &prepared {
                let vars = crate::student::student_forward_tape(
                    &self.cfg.student,
                    &mut ctx,
                    &p.batch,
                    &self.positions_video,
                    &p.drops,
                )?;
                let target = p.target.as_ref().expect("stage one always aligns");
                let l = uta_loss_tape(ctx.tape, &vars.projected, target)?;
                let scaled = ctx.tape.scale(l, inv_b);
                mean_uta = Some(match mean_uta {
                    Some(acc) => ctx.tape.add(acc, scaled),
                    None => scaled,
                });
            }
            let mean_uta = mean_uta.expect("batch is never empty");
            let total = ctx.tape.scale(mean_uta, self.cfg.weights.uta);
            let grads = ctx.tape.backward(total);
            grads_by_name = ctx.param_grads(&grads).into_iter().collect();
            report = LossReport {
                uta: Some(ctx.tape.scalar(mean_uta)),
                vtc: None,
                vtm: None,
                mlm: None,
                total: ctx.tape.scalar(total),
                warnings: Vec::new(),
            };
        }
        self.attn_elements += tape.attn_elements;
        adamw_step(&mut self.params, &mut self.adam, &grads_by_name, self.step, lr, &self.cfg.opt)?;
        self.tokens_processed += kept as u64;
        self.step += 1;
        Ok(report)
    }

    fn stage2_step(&mut self, lr: f64) -> Result<LossReport> {
        let obj = self.cfg.objectives;
        let image_mode = self.cfg.image_alternate && self.step % 2 == 1;
        let items = self.loader.batch(self.step)?;
        let b = items.len();
        let mut prepared = Vec::with_capacity(b);
        for item in &items {
            prepared.push(self.prepare_item(item, image_mode, obj.mlm)?);
        }
        let kept: usize = prepared.iter().map(|p| p.batch.len()).sum();
        let positions = if image_mode { &self.positions_image } else { &self.positions_video };

        let mut warnings = Vec::new();
        let mut tape = Tape::new();
        let report;
        let grads_by_name: BTreeMap<String, Array2<f64>>;
        {
            let rng = &mut self.rng;
            let mut ctx = Ctx::new(&mut tape, &self.params);
            let inv_b = 1.0 / b as f64;

            // Visual tower over every item, alignment accumulated.
            let mut visual_tokens = Vec::with_capacity(b);
            let mut mean_uta: Option<Var> = None;
            for p in &prepared {
                let vars = crate::student::student_forward_tape(
                    &self.cfg.student,
                    &mut ctx,
                    &p.batch,
                    positions,
                    &p.drops,
                )?;
                if obj.uta {
                    let target = p.target.as_ref().expect("targets prepared when aligning");
                    let l = uta_loss_tape(ctx.tape, &vars.projected, target)?;
                    let scaled = ctx.tape.scale(l, inv_b);
                    mean_uta = Some(match mean_uta {
                        Some(acc) => ctx.tape.add(acc, scaled),
                        None => scaled,
                    });
                }
                visual_tokens.push(vars.final_tokens);
            }

            // Full-caption text tower; row 0 carries the sentence.
            let mut text_tokens = Vec::with_capacity(b);
            let mut text_visible = Vec::with_capacity(b);
            for p in &prepared {
                text_tokens.push(text_forward_tape(&self.cfg.text, &mut ctx, &p.caption)?);
                text_visible.push(visible_tokens(&self.cfg.text, &p.caption));
            }

            let need_embeds = obj.vtc || obj.vtm;
            let (video_embed, text_embed) = if need_embeds {
                let mut v_rows = Vec::with_capacity(b);
                let mut t_rows = Vec::with_capacity(b);
                for i in 0..b {
                    let pooled = ctx.tape.mean_rows(visual_tokens[i]);
                    let proj = ctx.linear(pooled, "mm.video_proj");
                    v_rows.push(ctx.tape.l2norm_rows(proj, crate::objectives::NORM_EPS));
                    let cls = ctx.tape.select_rows(text_tokens[i], &[0]);
                    let proj = ctx.linear(cls, "mm.text_proj");
                    t_rows.push(ctx.tape.l2norm_rows(proj, crate::objectives::NORM_EPS));
                }
                (
                    Some(ctx.tape.concat_rows(&v_rows)),
                    Some(ctx.tape.concat_rows(&t_rows)),
                )
            } else {
                (None, None)
            };

            let mut vtc_var = None;
            if obj.vtc {
                let temp = ctx.param("mm.temperature");
                vtc_var = Some(vtc_loss_tape(
                    ctx.tape,
                    video_embed.unwrap(),
                    text_embed.unwrap(),
                    temp,
                )?);
            }

            // Matching: score the true pair against one mined hard
            // negative per direction, three decodes per item.
            let mut vtm_var = None;
            if obj.vtm {
                if b < 2 {
                    warnings.push("matching skipped: batch has a single pair".into());
                } else {
                    let v = ctx.tape.value(video_embed.unwrap()).clone();
                    let t = ctx.tape.value(text_embed.unwrap()).clone();
                    let temp = self
                        .params
                        .get("mm.temperature")
                        .expect("stage two always has a temperature")[[0, 0]];
                    let sim = v.dot(&t.t()) / temp;
                    let mined = mine_negatives(&sim, rng)?;
                    let mut score_rows = Vec::with_capacity(3 * b);
                    let score = |ctx: &mut Ctx, ti: usize, vi: usize| -> Result<Var> {
                        let dec = cross_decode_tape(
                            &self.cfg.decoder,
                            ctx,
                            text_tokens[ti],
                            &text_visible[ti],
                            visual_tokens[vi],
                        )?;
                        let cls = ctx.tape.select_rows(dec, &[0]);
                        Ok(ctx.linear(cls, "mm.vtm"))
                    };
                    for i in 0..b {
                        score_rows.push(score(&mut ctx, i, i)?);
                    }
                    for i in 0..b {
                        score_rows.push(score(&mut ctx, mined.text_for_video[i], i)?);
                    }
                    for i in 0..b {
                        score_rows.push(score(&mut ctx, i, mined.video_for_text[i])?);
                    }
                    let logits = ctx.tape.concat_rows(&score_rows);
                    let mut labels = Array2::zeros((3 * b, 1));
                    labels.slice_mut(ndarray::s![..b, ..]).fill(1.0);
                    vtm_var = Some(ctx.tape.bce_with_logits(logits, &labels));
                }
            }

            // Masked-language: corrupted captions re-encoded, decoded
            // against the clip, scored at the masked positions.
            let mut mlm_var = None;
            if obj.mlm {
                let mut used = 0usize;
                let mut acc: Option<Var> = None;
                for (i, p) in prepared.iter().enumerate() {
                    let masked = p.masked.as_ref().expect("text masks prepared when mlm is on");
                    if masked.positions.is_empty() {
                        continue;
                    }
                    let enc = text_forward_tape(&self.cfg.text, &mut ctx, &masked.input_ids)?;
                    let vis = visible_tokens(&self.cfg.text, &masked.input_ids);
                    let dec = cross_decode_tape(
                        &self.cfg.decoder,
                        &mut ctx,
                        enc,
                        &vis,
                        visual_tokens[i],
                    )?;
                    let rows = ctx.tape.select_rows(dec, &masked.positions);
                    let logits = ctx.linear(rows, "mm.mlm");
                    let l = mlm_loss_tape(ctx.tape, logits, &masked.targets)?;
                    acc = Some(match acc {
                        Some(a) => ctx.tape.add(a, l),
                        None => l,
                    });
                    used += 1;
                }
                match acc {
                    Some(sum) => mlm_var = Some(ctx.tape.scale(sum, 1.0 / used as f64)),
                    None => warnings.push("masked-language skipped: no positions drawn".into()),
                }
            }

            // Weighted total over whichever objectives produced a loss.
            let w = self.cfg.weights;
            let mut total: Option<Var> = None;
            let mut add_part = |ctx: &mut Ctx, var: Option<Var>, weight: f64| {
                if let Some(v) = var {
                    let scaled = ctx.tape.scale(v, weight);
                    total = Some(match total {
                        Some(acc) => ctx.tape.add(acc, scaled),
                        None => scaled,
                    });
                }
            };
            add_part(&mut ctx, mean_uta, w.uta);
            add_part(&mut ctx, vtc_var, w.vtc);
            add_part(&mut ctx, vtm_var, w.vtm);
            add_part(&mut ctx, mlm_var, w.mlm);
            let total = total.ok_or_else(|| {
                Error::config("no objective produced a loss this step")
            })?;
            let grads = ctx.tape.backward(total);
            grads_by_name = ctx.param_grads(&grads).into_iter().collect();
            report = LossReport {
                uta: mean_uta.map(|v| ctx.tape.scalar(v)),
                vtc: vtc_var.map(|v| ctx.tape.scalar(v)),
                vtm: vtm_var.map(|v| ctx.tape.scalar(v)),
                mlm: mlm_var.map(|v| ctx.tape.scalar(v)),
                total: ctx.tape.scalar(total),
                warnings,
            };
        }
        self.attn_elements += tape.attn_elements;
        adamw_step(&mut self.params, &mut self.adam, &grads_by_name, self.step, lr, &self.cfg.opt)?;
        if let Some(temp) = self.params.get_mut("mm.temperature") {
            temp[[0, 0]] = temp[[0, 0]].clamp(TEMP_MIN, TEMP_MAX);
        }
        self.tokens_processed += kept as u64;
        self.step += 1;
        Ok(report)
    }

    /// Unmasked embeddings for the first `count` corpus items, for
    /// retrieval scoring: all rows unit length.
    pub fn eval_embeddings(&self, count: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        if self.stage != Stage::Two {
            return Err(Error::config("retrieval embeddings need the multimodal stage"));
        }
        if count == 0 {
            return Err(Error::config("need at least one item to embed"));
        }
        let grid = &self.student_grid;
        let keep_all = MaskPlan {
            keep: Array2::from_elem((grid.frames, grid.tokens_per_frame()), true),
            ratio: 0.0,
            unmasked_per_frame: grid.tokens_per_frame(),
        };
        let w_v = self.params.get("mm.video_proj.w").expect("head exists");
        let b_v = self.params.get("mm.video_proj.b").expect("head exists");
        let w_t = self.params.get("mm.text_proj.w").expect("head exists");
        let b_t = self.params.get("mm.text_proj.b").expect("head exists");
        let mut video = Array2::zeros((count, self.cfg.embed_dim));
        let mut text = Array2::zeros((count, self.cfg.embed_dim));
        for i in 0..count {
            let item = self.loader.item(i)?;
            let raw = raw_tokens(&item.clip, grid, &self.cfg.data.normalization)?;
            let batch = apply_mask(&raw, &keep_all, grid)?;
            let out = crate::student::student_forward(
                &self.cfg.student,
                &self.params,
                &batch,
                &self.positions_video,
            )?;
            let v = pool_video(&out.final_tokens, w_v, b_v)?;
            video.row_mut(i).assign(&v.row(0));
            let rows = text_forward(&self.cfg.text, &self.params, &item.caption)?;
            let cls = rows.slice(ndarray::s![0..1, ..]).to_owned();
            let e = l2_normalize_rows(&(cls.dot(w_t) + b_t));
            text.row_mut(i).assign(&e.row(0));
        }
        Ok((video, text))
    }
}
