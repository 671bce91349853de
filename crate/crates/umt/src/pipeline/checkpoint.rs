//! Trainer snapshots: parameters, optimizer moments and counters in
//! one tensor file, restored bit-for-bit.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pipeline::optim::AdamState;
use crate::tensorio::{load_tensors, save_tensors, Tensor};
use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Bundle layout revision; bumped only on incompatible change.
const BUNDLE_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainerCounters {
    pub stage: u64,
    pub step: u64,
    pub tokens_processed: u64,
    pub attn_elements: u64,
}

/// Everything a resumed run needs.
pub struct Snapshot {
    pub params: ParamStore,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub counters: TrainerCounters,
}

pub fn save_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    let mut tensors: IndexMap<String, Tensor> = IndexMap::new();
    tensors.insert("trainer.version".into(), Tensor::U64(vec![BUNDLE_VERSION]));
    tensors.insert(
        "trainer.counters".into(),
        Tensor::U64(vec![
            snap.counters.stage,
            snap.counters.step,
            snap.counters.tokens_processed,
            snap.counters.attn_elements,
        ]),
    );
    tensors.insert(
        "trainer.rng".into(),
        Tensor::U64(crate::rng::rng_state_words(&snap.rng).to_vec()),
    );
    for (name, value) in snap.params.iter() {
        tensors.insert(format!("param.{name}"), Tensor::F64(value.clone()));
    }
    for (name, value) in snap.adam.m.iter() {
        tensors.insert(format!("adam_m.{name}"), Tensor::F64(value.clone()));
    }
    for (name, value) in snap.adam.v.iter() {
        tensors.insert(format!("adam_v.{name}"), Tensor::F64(value.clone()));
    }
    save_tensors(path, &tensors)
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let tensors = load_tensors(path)?;
    let version = scalar_u64(&tensors, "trainer.version")?;
    if version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version as u16,
            expected: BUNDLE_VERSION as u16,
        });
    }
    let counters = vec_u64(&tensors, "trainer.counters")?;
    if counters.len() != 4 {
        return Err(Error::invalid(format!(
            "trainer.counters holds {} values, expected 4",
            counters.len()
        )));
    }
    let rng_words = vec_u64(&tensors, "trainer.rng")?;
    let words: [u64; 6] = rng_words.as_slice().try_into().map_err(|_| {
        Error::invalid(format!("trainer.rng holds {} words, expected 6", rng_words.len()))
    })?;
    let mut params = ParamStore::new();
    let mut adam = AdamState::default();
    for (name, tensor) in &tensors {
        let Tensor::F64(value) = tensor else { continue };
        if let Some(rest) = name.strip_prefix("param.") {
            params.insert(rest, value.clone());
        } else if let Some(rest) = name.strip_prefix("adam_m.") {
            adam.m.insert(rest, value.clone());
        } else if let Some(rest) = name.strip_prefix("adam_v.") {
            adam.v.insert(rest, value.clone());
        }
    }
    let unmatched: Vec<String> = params
        .iter()
        .filter(|(name, _)| !adam.m.contains(name) || !adam.v.contains(name))
        .map(|(name, _)| format!("adam moments for {name}"))
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::MissingTensors(unmatched));
    }
    Ok(Snapshot {
        params,
        adam,
        rng: crate::rng::rng_from_state_words(&words),
        counters: TrainerCounters {
            stage: counters[0],
            step: counters[1],
            tokens_processed: counters[2],
            attn_elements: counters[3],
        },
    })
}

/// Outcome of seeding one parameter store from another's snapshot.
#[derive(Debug, Default)]
pub struct InitReport {
    pub loaded: Vec<String>,
    /// Present in the snapshot but absent (or shaped differently) here.
    pub skipped: Vec<String>,
    /// Present here but absent from the snapshot; left at random init.
    pub missing: Vec<String>,
}

/// Copies every snapshot parameter whose name and shape match into
/// `params`, reporting what transferred. Used to warm-start the second
/// stage's visual tower from a first-stage run.
pub fn load_matching_params(path: &Path, params: &mut ParamStore) -> Result<InitReport> {
    let snap = load_snapshot(path)?;
    let mut report = InitReport::default();
    for (name, value) in snap.params.iter() {
        match params.get(name) {
            Some(existing) if existing.raw_dim() == value.raw_dim() => {
                params.insert(name, value.clone());
                report.loaded.push(name.to_string());
            }
            _ => report.skipped.push(name.to_string()),
        }
    }
    for (name, _) in params.iter() {
        if !snap.params.contains(name) {
            report.missing.push(name.to_string());
        }
    }
    report.loaded.sort();
    report.skipped.sort();
    report.missing.sort();
    Ok(report)
}

fn vec_u64(tensors: &IndexMap<String, Tensor>, name: &str) -> Result<Vec<u64>> {
    match tensors.get(name) {
        Some(Tensor::U64(v)) => Ok(v.clone()),
        Some(_) => Err(Error::invalid(format!("{name} has the wrong dtype"))),
        None => Err(Error::MissingTensors(vec![name.to_string()])),
    }
}

fn scalar_u64(tensors: &IndexMap<String, Tensor>, name: &str) -> Result<u64> {
    let v = vec_u64(tensors, name)?;
    if v.len() != 1 {
        return Err(Error::invalid(format!("{name} is not a scalar")));
    }
    Ok(v[0])
}
