//! One-axis ablations: clone the run config, vary a single choice,
//! train each variant from the same seed and tabulate the losses.

use crate::error::{Error, Result};
use crate::pipeline::config::{MaskKind, ObjectiveSet, RunConfig, SamplingKind};
use crate::pipeline::metrics::StepRecord;
use crate::pipeline::train::Trainer;
use crate::student::AttnPattern;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    /// Semantic vs random vs tube masking.
    MaskKind,
    /// How much of each frame is hidden.
    MaskRatio,
    /// How many student layers the teacher supervises.
    AlignedLayers,
    /// Drop one training objective at a time.
    Objectives,
    /// Joint space-time attention vs per-frame attention.
    Attention,
    /// Sparse segment sampling vs dense windows.
    Sampling,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask-kind" => Ok(AblationAxis::MaskKind),
            "mask-ratio" => Ok(AblationAxis::MaskRatio),
            "aligned-layers" => Ok(AblationAxis::AlignedLayers),
            "objectives" => Ok(AblationAxis::Objectives),
            "attention" => Ok(AblationAxis::Attention),
            "sampling" => Ok(AblationAxis::Sampling),
            other => Err(Error::config(format!(
                "unknown ablation axis {other:?} (expected mask-kind, mask-ratio, \
                 aligned-layers, objectives, attention or sampling)"
            ))),
        }
    }
}

pub struct AblationRow {
    pub label: String,
    /// Mean over the last few recorded steps, one slot per objective.
    pub total: f64,
    pub uta: Option<f64>,
    pub vtc: Option<f64>,
    pub vtm: Option<f64>,
    pub mlm: Option<f64>,
    pub tokens_processed: u64,
}

pub struct AblationTable {
    pub axis: AblationAxis,
    pub steps: u64,
    pub rows: Vec<AblationRow>,
}

/// Config variants for one axis; labels name the varied value only.
fn variants(base: &RunConfig, axis: AblationAxis) -> Result<Vec<(String, RunConfig)>> {
    let mut out = Vec::new();
    match axis {
        AblationAxis::MaskKind => {
            for kind in [MaskKind::Semantic, MaskKind::Random, MaskKind::Tube] {
                let mut cfg = base.clone();
                cfg.mask.kind = kind;
                out.push((kind.to_string(), cfg));
            }
        }
        AblationAxis::MaskRatio => {
            for ratio in [0.5, 0.75, 0.9] {
                let mut cfg = base.clone();
                cfg.mask.video_ratio = ratio;
                if cfg.validate().is_ok() {
                    out.push((format!("{ratio}"), cfg));
                }
            }
        }
        AblationAxis::AlignedLayers => {
            let max = base.student.depth.min(base.teacher.depth);
            let mut ks = vec![1, max.div_ceil(2), max];
            ks.dedup();
            for k in ks {
                let mut cfg = base.clone();
                cfg.student.aligned_layers = k;
                out.push((format!("{k}"), cfg));
            }
        }
        AblationAxis::Objectives => {
            let all = ObjectiveSet { uta: true, vtc: true, vtm: true, mlm: true };
            out.push(("all".into(), {
                let mut cfg = base.clone();
                cfg.objectives = all;
                cfg
            }));
            for (label, set) in [
                ("no-uta", ObjectiveSet { uta: false, ..all }),
                ("no-vtc", ObjectiveSet { vtc: false, ..all }),
                ("no-vtm", ObjectiveSet { vtm: false, ..all }),
                ("no-mlm", ObjectiveSet { mlm: false, ..all }),
            ] {
                let mut cfg = base.clone();
                cfg.objectives = set;
                out.push((label.into(), cfg));
            }
        }
        AblationAxis::Attention => {
            for (label, pattern) in [("joint", AttnPattern::Joint), ("frame", AttnPattern::PerFrame)]
            {
                let mut cfg = base.clone();
                cfg.student.attention = pattern;
                out.push((label.into(), cfg));
            }
        }
        AblationAxis::Sampling => {
            for (label, kind) in [("sparse", SamplingKind::Sparse), ("dense", SamplingKind::Dense)]
            {
                let mut cfg = base.clone();
                cfg.sampling = kind;
                if cfg.validate().is_ok() {
                    out.push((label.into(), cfg));
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::config("no valid variant for this axis under the base config"));
    }
    Ok(out)
}

fn summarize(label: String, records: &[StepRecord]) -> AblationRow {
    let window = &records[records.len().saturating_sub(5)..];
    let mean = |f: fn(&StepRecord) -> Option<f64>| {
        let vals: Vec<f64> = window.iter().filter_map(f).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let totals: Vec<f64> = window
        .iter()
        .map(|r| {
            [r.uta, r.vtc, r.vtm, r.mlm]
                .iter()
                .flatten()
                .sum::<f64>()
        })
        .collect();
    AblationRow {
        label,
        total: totals.iter().sum::<f64>() / totals.len() as f64,
        uta: mean(|r| r.uta),
        vtc: mean(|r| r.vtc),
        vtm: mean(|r| r.vtm),
        mlm: mean(|r| r.mlm),
        tokens_processed: records.last().map_or(0, |r| r.tokens_processed),
    }
}

/// Trains every variant of `axis` for `steps` from identical seeds.
/// Objective ablations run the multimodal stage; the rest run the
/// stage the base config's objectives imply.
pub fn run_ablation(base: &RunConfig, axis: AblationAxis, steps: u64) -> Result<AblationTable> {
    if steps == 0 {
        return Err(Error::config("ablation needs at least one step"));
    }
    let multimodal = axis == AblationAxis::Objectives
        || base.objectives.vtc
        || base.objectives.vtm
        || base.objectives.mlm;
    let mut rows = Vec::new();
    for (label, mut cfg) in variants(base, axis)? {
        let records = if multimodal {
            cfg.allow_scratch_stage2 = true;
            cfg.validate()?;
            let (mut t, _) = Trainer::new_stage2(cfg, None)?;
            t.run(steps, None)?
        } else {
            cfg.validate()?;
            let mut t = Trainer::new_stage1(cfg)?;
            t.run(steps, None)?
        };
        rows.push(summarize(label, &records));
    }
    Ok(AblationTable { axis, steps, rows })
}

impl std::fmt::Display for AblationTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let axis = match self.axis {
            AblationAxis::MaskKind => "mask-kind",
            AblationAxis::MaskRatio => "mask-ratio",
            AblationAxis::AlignedLayers => "aligned-layers",
            AblationAxis::Objectives => "objectives",
            AblationAxis::Attention => "attention",
            AblationAxis::Sampling => "sampling",
        };
        writeln!(f, "axis {axis}, {} steps, losses averaged over the last 5", self.steps)?;
        writeln!(
            f,
            "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}{:>12}",
            "variant", "total", "uta", "vtc", "vtm", "mlm", "tokens"
        )?;
        for row in &self.rows {
            let cell = |v: Option<f64>| match v {
                Some(x) => format!("{x:.4}"),
                None => "-".to_string(),
            };
            writeln!(
                f,
                "{:<16}{:>10.4}{:>10}{:>10}{:>10}{:>10}{:>12}",
                row.label,
                row.total,
                cell(row.uta),
                cell(row.vtc),
                cell(row.vtm),
                cell(row.mlm),
                row.tokens_processed
            )?;
        }
        Ok(())
    }
}
