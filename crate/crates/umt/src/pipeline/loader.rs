//! Deterministic corpus batching. Each item is a pure function of
//! (corpus seed, index), so batches can be assembled by any number of
//! worker threads without changing a single byte.

use crate::data::{SynthItem, SynthSpec};
use crate::error::{Error, Result};

/// Worker-count override; parsed once per loader.
pub const WORKERS_ENV: &str = "UMT_NUM_WORKERS";

#[derive(Clone, Debug)]
pub struct CorpusLoader {
    spec: SynthSpec,
    corpus_seed: u64,
    corpus_size: usize,
    batch_size: usize,
    workers: usize,
}

impl CorpusLoader {
    pub fn new(
        spec: SynthSpec,
        corpus_seed: u64,
        corpus_size: usize,
        batch_size: usize,
    ) -> Result<Self> {
        if corpus_size == 0 || batch_size == 0 {
            return Err(Error::config("corpus and batch sizes must be positive"));
        }
        let workers = match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .parse::<usize>()
                .ok()
                .filter(|&w| w >= 1)
                .ok_or_else(|| {
                    Error::config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))
                })?,
            Err(_) => 1,
        };
        Ok(CorpusLoader {
            spec,
            corpus_seed,
            corpus_size,
            batch_size,
            workers,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Overrides the environment-derived worker count.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::config("worker count must be positive"));
        }
        self.workers = workers;
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Corpus index of batch position `j` at `step`: a stride over the
    /// corpus that wraps, so every run visits items in the same order.
    pub fn index_at(&self, step: u64, j: usize) -> usize {
        ((step as usize).wrapping_mul(self.batch_size) + j) % self.corpus_size
    }

    /// Regenerates one corpus item by index.
    pub fn item(&self, index: usize) -> Result<SynthItem> {
        if index >= self.corpus_size {
            return Err(Error::config(format!(
                "item {index} outside corpus of {}",
                self.corpus_size
            )));
        }
        self.spec.generate_item(self.corpus_seed, index as u64)
    }

    /// Assembles the batch for `step`, fanning item generation across
    /// worker threads when more than one is configured.
    pub fn batch(&self, step: u64) -> Result<Vec<SynthItem>> {
        let indices: Vec<usize> = (0..self.batch_size).map(|j| self.index_at(step, j)).collect();
        if self.workers == 1 || self.batch_size == 1 {
            return indices
                .iter()
                .map(|&i| self.spec.generate_item(self.corpus_seed, i as u64))
                .collect();
        }
        let chunk = self.batch_size.div_ceil(self.workers);
        let mut out: Vec<Option<SynthItem>> = (0..self.batch_size).map(|_| None).collect();
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for (w, idx_chunk) in indices.chunks(chunk).enumerate() {
                let spec = &self.spec;
                let seed = self.corpus_seed;
                handles.push((
                    w * chunk,
                    scope.spawn(move || -> Result<Vec<SynthItem>> {
                        idx_chunk
                            .iter()
                            .map(|&i| spec.generate_item(seed, i as u64))
                            .collect()
                    }),
                ));
            }
            for (offset, handle) in handles {
                let items = handle
                    .join()
                    .map_err(|_| Error::config("batch worker thread panicked"))?;
                for (k, item) in items?.into_iter().enumerate() {
                    out[offset + k] = Some(item);
                }
            }
            Ok(())
        })?;
        Ok(out.into_iter().map(|o| o.expect("every slot filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            frames: 2,
            height: 16,
            width: 16,
            vocab_size: 32,
        }
    }

    #[test]
    fn indices_stride_and_wrap() {
        let loader = CorpusLoader::new(spec(), 5, 10, 4).unwrap();
        assert_eq!(loader.index_at(0, 0), 0);
        assert_eq!(loader.index_at(0, 3), 3);
        assert_eq!(loader.index_at(2, 0), 8);
        assert_eq!(loader.index_at(2, 3), 1); // wrapped
    }

    #[test]
    fn batches_are_reproducible() {
        let loader = CorpusLoader::new(spec(), 5, 10, 3).unwrap();
        let a = loader.batch(4).unwrap();
        let b = loader.batch(4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.caption, y.caption);
            assert_eq!(x.clip.frames, y.clip.frames);
        }
    }

    #[test]
    fn worker_count_never_changes_bytes() {
        let one = CorpusLoader::new(spec(), 5, 11, 7).unwrap().with_workers(1).unwrap();
        let three = CorpusLoader::new(spec(), 5, 11, 7).unwrap().with_workers(3).unwrap();
        for step in [0u64, 3, 9] {
            let a = one.batch(step).unwrap();
            let b = three.batch(step).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.index, y.index);
                assert_eq!(x.caption, y.caption);
                // Bitwise pixel equality, not approximate.
                assert_eq!(x.clip.frames, y.clip.frames);
            }
        }
    }

    #[test]
    fn workers_must_be_positive() {
        assert!(CorpusLoader::new(spec(), 5, 11, 7).unwrap().with_workers(0).is_err());
    }
}
