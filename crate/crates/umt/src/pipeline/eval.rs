//! Cross-modal retrieval scoring: recall at rank over paired
//! embeddings, in both directions.

use crate::error::{Error, Result};
use ndarray::Array2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalReport {
    pub pairs: usize,
    pub video_to_text_r1: f64,
    pub video_to_text_r5: f64,
    pub text_to_video_r1: f64,
    pub text_to_video_r5: f64,
}

/// Rank of the matching column for each row of a similarity matrix;
/// equal scores resolve toward the lower index, so rank is the count
/// of strictly-better columns plus equal-scored earlier columns.
fn match_ranks(sim: &Array2<f64>) -> Vec<usize> {
    let n = sim.nrows();
    (0..n)
        .map(|i| {
            let own = sim[[i, i]];
            (0..n)
                .filter(|&j| {
                    let s = sim[[i, j]];
                    s > own || (s == own && j < i)
                })
                .count()
        })
        .collect()
}

fn recall_at(ranks: &[usize], k: usize) -> f64 {
    let hits = ranks.iter().filter(|&&r| r < k).count();
    hits as f64 / ranks.len() as f64
}

/// Scores row-aligned embedding sets: row `i` of both matrices is the
/// same underlying pair. Embeddings are compared by dot product, so
/// callers normalize first if they want cosine.
pub fn retrieval(video: &Array2<f64>, text: &Array2<f64>) -> Result<RetrievalReport> {
    if video.nrows() == 0 {
        return Err(Error::config("retrieval needs at least one pair"));
    }
    if video.raw_dim() != text.raw_dim() {
        return Err(Error::ShapeMismatch {
            name: "retrieval embeddings".into(),
            expected: video.shape().to_vec(),
            got: text.shape().to_vec(),
        });
    }
    let sim = video.dot(&text.t());
    if sim.iter().any(|s| !s.is_finite()) {
        return Err(Error::config("similarity matrix contains non-finite scores"));
    }
    let v2t = match_ranks(&sim);
    let t2v = match_ranks(&sim.t().to_owned());
    Ok(RetrievalReport {
        pairs: video.nrows(),
        video_to_text_r1: recall_at(&v2t, 1),
        video_to_text_r5: recall_at(&v2t, 5),
        text_to_video_r1: recall_at(&t2v, 1),
        text_to_video_r5: recall_at(&t2v, 5),
    })
}

impl std::fmt::Display for RetrievalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "pairs        {}", self.pairs)?;
        writeln!(
            f,
            "video->text  R@1 {:.3}  R@5 {:.3}",
            self.video_to_text_r1, self.video_to_text_r5
        )?;
        write!(
            f,
            "text->video  R@1 {:.3}  R@5 {:.3}",
            self.text_to_video_r1, self.text_to_video_r5
        )
    }
}
