//! Retrieval metrics over a query × candidate score matrix whose ground truth
//! is the diagonal.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TextToVideo,
    VideoToText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Global,
    Local,
    Ensemble,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "local" => Ok(Self::Local),
            "ensemble" => Ok(Self::Ensemble),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// Row-major `queries × candidates`; the match of query `i` is candidate `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
    pub direction: Direction,
    pub mode: Mode,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, scores: Vec<f64>, direction: Direction, mode: Mode) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if scores.len() != rows * cols {
            return Err(crate::error::shape_err("similarity_matrix", format!("{} scores for {rows}x{cols}", scores.len())));
        }
        if rows > cols {
            return Err(crate::error::shape_err("similarity_matrix", "more queries than candidates"));
        }
        Ok(Self { rows, cols, scores, direction, mode })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.cols..(i + 1) * self.cols]
    }

    /// Candidates become queries.
    pub fn transposed(&self) -> Result<Self> {
        let mut t = vec![0.0; self.scores.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[j * self.rows + i] = self.scores[i * self.cols + j];
            }
        }
        let direction = match self.direction {
            Direction::TextToVideo => Direction::VideoToText,
            Direction::VideoToText => Direction::TextToVideo,
        };
        Self::new(self.cols, self.rows, t, direction, self.mode)
    }
}

/// 1-based rank of the ground-truth candidate in every row. A candidate
/// outranks the truth when it scores higher, or equal with a lower index.
pub fn ranks(sim: &SimilarityMatrix) -> Result<Vec<usize>> {
    if sim.rows == 0 || sim.cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok((0..sim.rows)
        .map(|i| {
            let row = sim.row(i);
            let truth = row[i];
            1 + row
                .iter()
                .enumerate()
                .filter(|&(j, &s)| match s.partial_cmp(&truth) {
                    Some(Ordering::Greater) => true,
                    Some(Ordering::Equal) => j < i,
                    _ => false,
                })
                .count()
        })
        .collect())
}

/// Percentage of queries whose truth ranks within the top `k`.
pub fn recall_at_k(sim: &SimilarityMatrix, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let r = ranks(sim)?;
    Ok(recall_from_ranks(&r, k))
}

pub fn recall_from_ranks(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// (median rank, mean rank). Even counts take the midpoint of the two middle ranks.
pub fn rank_stats(sim: &SimilarityMatrix) -> Result<(f64, f64)> {
    Ok(stats_from_ranks(&ranks(sim)?))
}

pub fn stats_from_ranks(ranks: &[usize]) -> (f64, f64) {
    let mut r = ranks.to_vec();
    r.sort_unstable();
    let n = r.len();
    let median = if n % 2 == 1 { r[n / 2] as f64 } else { (r[n / 2 - 1] + r[n / 2]) as f64 / 2.0 };
    let mean = r.iter().sum::<usize>() as f64 / n as f64;
    (median, mean)
}

/// Sum of an explicit list of recalls, with Neumaier compensation so that
/// one-decimal percentages add up to the decimal total.
pub fn r_sum(recalls: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &x in recalls {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mdr: f64,
    pub mnr: f64,
}

impl DirectionMetrics {
    pub fn compute(sim: &SimilarityMatrix) -> Result<Self> {
        let r = ranks(sim)?;
        let (mdr, mnr) = stats_from_ranks(&r);
        Ok(Self { r1: recall_from_ranks(&r, 1), r5: recall_from_ranks(&r, 5), r10: recall_from_ranks(&r, 10), mdr, mnr })
    }

    pub fn recalls(&self) -> [f64; 3] {
        [self.r1, self.r5, self.r10]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub t2v: DirectionMetrics,
    pub v2t: DirectionMetrics,
    pub r_sum: f64,
    pub r_mean: f64,
}

impl RetrievalReport {
    pub fn from_parts(t2v: DirectionMetrics, v2t: DirectionMetrics) -> Self {
        let all = [t2v.recalls(), v2t.recalls()].concat();
        let s = r_sum(&all);
        Self { t2v, v2t, r_sum: s, r_mean: s / all.len() as f64 }
    }

    /// Metrics for a text-to-video matrix and its transpose.
    pub fn from_t2v(sim: &SimilarityMatrix) -> Result<Self> {
        Ok(Self::from_parts(DirectionMetrics::compute(sim)?, DirectionMetrics::compute(&sim.transposed()?)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, s: Vec<f64>) -> SimilarityMatrix {
        SimilarityMatrix::new(rows, cols, s, Direction::TextToVideo, Mode::Global).unwrap()
    }

    #[test]
    fn recall_examples() {
        // Truth ranks 2, 3, 1.
        let sim = m(3, 3, vec![0.5, 0.9, 0.1, 0.8, 0.1, 0.9, 0.0, 0.1, 0.2]);
        assert_eq!(ranks(&sim).unwrap(), vec![2, 3, 1]);
        assert!((recall_at_k(&sim, 1).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!((recall_at_k(&sim, 2).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at_k(&sim, 3).unwrap(), 100.0);
        assert_eq!(recall_at_k(&sim, 50).unwrap(), 100.0);
        assert_eq!(rank_stats(&sim).unwrap(), (2.0, 2.0));
        let eye = m(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(recall_at_k(&eye, 1).unwrap(), 100.0);
        assert_eq!(rank_stats(&eye).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn even_median_and_ties() {
        assert_eq!(stats_from_ranks(&[1, 3]), (2.0, 2.0));
        // All equal: truth i has i lower-index ties ahead of it.
        let flat = m(3, 3, vec![0.0; 9]);
        assert_eq!(ranks(&flat).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn r_sum_values() {
        assert_eq!(r_sum(&[38.9, 65.7, 76.5, 37.9, 65.4, 76.0]), 360.4);
        assert_eq!(r_sum(&[31.4, 59.8, 70.3, 34.9, 61.9, 72.9]), 331.2);
        assert_eq!(r_sum(&[0.0; 6]), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(SimilarityMatrix::new(0, 0, vec![], Direction::TextToVideo, Mode::Local), Err(Error::EmptyMatrix)));
        assert!(recall_at_k(&m(1, 1, vec![0.3]), 0).is_err());
    }
}
