//! Salient frame proposal: segment sampling, frame-text relevance and top-k selection.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Eval,
}

/// Split `frame_count` frames into `segments` equal segments and take one frame
/// from each: uniformly at random in train mode, the segment midpoint in eval mode.
pub fn two_stage_sample<R: Rng + ?Sized>(frame_count: usize, segments: usize, mode: SampleMode, rng: &mut R) -> Result<Vec<usize>> {
    if segments == 0 || frame_count < segments {
        return Err(Error::TooFewFrames { frames: frame_count, segments });
    }
    Ok((0..segments)
        .map(|k| {
            let lo = k * frame_count / segments;
            let hi = (k + 1) * frame_count / segments;
            match mode {
                SampleMode::Train => rng.random_range(lo..hi),
                SampleMode::Eval => lo + (hi - lo) / 2,
            }
        })
        .collect())
}

/// How `R(j|i)` is estimated from online and momentum embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelevanceStrategy {
    #[serde(rename = "simdot")]
    SimDot,
    #[serde(rename = "momentum")]
    Momentum,
    #[serde(rename = "crossmom")]
    CrossMom,
    #[default]
    #[serde(rename = "collab")]
    Collaborative,
}

impl RelevanceStrategy {
    pub const ALL: [RelevanceStrategy; 4] = [Self::SimDot, Self::Momentum, Self::CrossMom, Self::Collaborative];

    pub fn name(self) -> &'static str {
        match self {
            Self::SimDot => "simdot",
            Self::Momentum => "momentum",
            Self::CrossMom => "crossmom",
            Self::Collaborative => "collab",
        }
    }

    /// Score one frame against the text.
    pub fn score<T: Scalar>(self, frame: &[T], frame_hat: &[T], text: &[T], text_hat: &[T]) -> T {
        match self {
            Self::SimDot => dot(frame, text),
            Self::Momentum => dot(frame, text) + dot(frame_hat, text_hat),
            Self::CrossMom => dot(frame_hat, text) + dot(frame, text_hat),
            Self::Collaborative => frame
                .iter()
                .zip(frame_hat)
                .zip(text.iter().zip(text_hat))
                .fold(T::zero(), |acc, ((&e, &eh), (&l, &lh))| acc + (e + eh) * (l + lh)),
        }
    }
}

impl fmt::Display for RelevanceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelevanceStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simdot" => Ok(Self::SimDot),
            "momentum" => Ok(Self::Momentum),
            "crossmom" => Ok(Self::CrossMom),
            "collab" | "collaborative" => Ok(Self::Collaborative),
            other => Err(Error::InvalidConfig(format!("unknown relevance strategy `{other}`"))),
        }
    }
}

/// Relevance of every frame of one video to its paired text. All inputs are
/// plain values, so nothing here touches a gradient.
pub fn relevance<T: Scalar>(
    strategy: RelevanceStrategy,
    frames: &[Vec<T>],
    frames_hat: &[Vec<T>],
    text: &[T],
    text_hat: &[T],
) -> Result<Vec<T>> {
    if frames.len() != frames_hat.len() {
        return Err(shape_err("relevance", format!("{} online vs {} momentum frames", frames.len(), frames_hat.len())));
    }
    let d = text.len();
    if text_hat.len() != d || frames.iter().chain(frames_hat).any(|f| f.len() != d) {
        return Err(shape_err("relevance", "embedding widths differ"));
    }
    Ok(frames.iter().zip(frames_hat).map(|(e, eh)| strategy.score(e, eh, text, text_hat)).collect())
}

/// Relevance rows for a batch of pairs, `scores[i][j] = R(j|i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMatrix<T> {
    pub scores: Vec<Vec<T>>,
    pub strategy: RelevanceStrategy,
}

/// Selected frame indices for one pair, ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SalientSet<T> {
    pub indices: Vec<usize>,
    pub source_scores: Vec<T>,
}

/// Keep the `min(n_salient, N)` highest-scoring frames; ties go to the lower index.
pub fn select_salient<T: Scalar>(row: &[T], n_salient: usize) -> SalientSet<T> {
    let k = n_salient.min(row.len());
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();
    SalientSet { indices, source_scores: row.to_vec() }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(two_stage_sample(16, 16, SampleMode::Train, &mut rng).unwrap(), (0..16).collect::<Vec<_>>());
        let mids = two_stage_sample(32, 16, SampleMode::Eval, &mut rng).unwrap();
        assert_eq!(mids, (0..16).map(|k| 2 * k + 1).collect::<Vec<_>>());
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = two_stage_sample(32, 16, SampleMode::Train, &mut rng).unwrap();
            for (k, &i) in idx.iter().enumerate() {
                assert!((2 * k..2 * k + 2).contains(&i));
            }
        }
        assert!(matches!(two_stage_sample(3, 4, SampleMode::Eval, &mut rng), Err(Error::TooFewFrames { .. })));
    }

    #[test]
    fn uneven_segments_are_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for f in 5..40 {
            for mode in [SampleMode::Train, SampleMode::Eval] {
                let idx = two_stage_sample(f, 5, mode, &mut rng).unwrap();
                assert!(idx.windows(2).all(|w| w[0] < w[1]));
                assert!(*idx.last().unwrap() < f);
            }
        }
    }

    #[test]
    fn strategy_examples() {
        let fe = vec![vec![1.0, 0.0]];
        let fe_hat = vec![vec![0.0, 1.0]];
        let fl = [1.0, 0.0];
        let fl_hat = [0.0, 1.0];
        let expect = [1.0, 2.0, 0.0, 2.0];
        for (s, want) in RelevanceStrategy::ALL.into_iter().zip(expect) {
            assert_eq!(relevance(s, &fe, &fe_hat, &fl, &fl_hat).unwrap(), vec![want], "{s}");
        }
        // Everything mutually orthogonal.
        let fe = vec![vec![1.0, 0.0, 0.0, 0.0]];
        let fe_hat = vec![vec![0.0, 1.0, 0.0, 0.0]];
        let fl = [0.0, 0.0, 1.0, 0.0];
        let fl_hat = [0.0, 0.0, 0.0, 1.0];
        for s in RelevanceStrategy::ALL {
            assert_eq!(relevance(s, &fe, &fe_hat, &fl, &fl_hat).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_salient(&[0.9, 0.1, 0.8, 0.2], 2).indices, vec![0, 2]);
        assert_eq!(select_salient(&[0.5, 0.5, 0.1], 1).indices, vec![0]);
        assert_eq!(select_salient(&[0.3, 0.1, 0.2], 3).indices, vec![0, 1, 2]);
        assert_eq!(select_salient(&[0.3, 0.1], 5).indices, vec![0, 1]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in RelevanceStrategy::ALL {
            assert_eq!(s.name().parse::<RelevanceStrategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("cosine".parse::<RelevanceStrategy>().is_err());
    }
}
