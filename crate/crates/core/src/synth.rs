//! Synthetic video-text corpus with planted salient frames.
//!
//! Every concept owns a unit prototype in token space. Text tokens and salient
//! frame tokens scatter around the pair's prototype; the noise frames of a
//! video scatter around the prototype of one other concept.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::TokenSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CORPUS_VERSION: &str = "lgdn-corpus/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_concepts: usize,
    pub frames_per_video: usize,
    pub tokens_per_frame: usize,
    pub tokens_per_text: usize,
    pub token_width: usize,
    /// Fraction of frames per video that belong to another concept.
    pub noise_fraction: f64,
    /// Expected distance of a token from its prototype.
    pub concept_spread: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 50,
            n_test: 100,
            n_concepts: 16,
            frames_per_video: 16,
            tokens_per_frame: 4,
            tokens_per_text: 4,
            token_width: 32,
            noise_fraction: 0.5,
            concept_spread: 0.3,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_concepts < 2 {
            return bad("n_concepts must be at least 2");
        }
        if self.frames_per_video == 0 || self.tokens_per_frame == 0 || self.tokens_per_text == 0 || self.token_width == 0 {
            return bad("frame, token and width counts must be positive");
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return bad("noise_fraction must lie in [0, 1)");
        }
        if !(self.concept_spread >= 0.0 && self.concept_spread.is_finite()) {
            return bad("concept_spread must be finite and non-negative");
        }
        if self.n_train + self.n_val + self.n_test == 0 {
            return bad("corpus has no pairs");
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// `round((1 - ρ)·F)`, never below one.
    pub fn salient_count(&self) -> usize {
        (((1.0 - self.noise_fraction) * self.frames_per_video as f64).round() as usize).clamp(1, self.frames_per_video)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoTextPair {
    pub id: usize,
    pub concept_id: usize,
    pub noise_concept_id: usize,
    pub video: Vec<TokenSequence<f64>>,
    pub text: TokenSequence<f64>,
    /// True where the frame was drawn from the pair's own concept.
    pub salient_mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub version: String,
    pub config: CorpusConfig,
    pub train: Vec<VideoTextPair>,
    pub val: Vec<VideoTextPair>,
    pub test: Vec<VideoTextPair>,
}

impl Corpus {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Corpus = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.version != CORPUS_VERSION {
            return Err(Error::Version { found: c.version, expected: CORPUS_VERSION });
        }
        Ok(c)
    }
}

fn unit_gaussian<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn scatter<R: Rng>(proto: &[f64], count: usize, noise: &Normal<f64>, rng: &mut R) -> TokenSequence<f64> {
    let d = proto.len();
    let values = (0..count).flat_map(|_| proto.iter().map(|&p| p + noise.sample(rng)).collect::<Vec<_>>()).collect();
    TokenSequence::dense(Tensor::new(vec![count, d], values).expect("shape matches")).expect("non-empty")
}

/// Concept prototypes, one unit vector per concept.
pub fn prototypes(cfg: &CorpusConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_concepts).map(|_| unit_gaussian(cfg.token_width, &mut rng)).collect()
}

fn generate_pair(cfg: &CorpusConfig, protos: &[Vec<f64>], id: usize) -> VideoTextPair {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id as u64 + 1);
    // Per-coordinate std chosen so the noise vector has norm ≈ concept_spread.
    let noise = Normal::new(0.0, cfg.concept_spread / (cfg.token_width as f64).sqrt()).expect("valid std");
    let concept = rng.random_range(0..cfg.n_concepts);
    let f = cfg.frames_per_video;
    let mut order: Vec<usize> = (0..f).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut salient_mask = vec![false; f];
    for &j in &order[..cfg.salient_count()] {
        salient_mask[j] = true;
    }
    // All noise frames of a video share one other concept, as an unrelated scene would.
    let other = rng.random_range(0..cfg.n_concepts - 1);
    let noise_concept = if other >= concept { other + 1 } else { other };
    let video = salient_mask
        .iter()
        .map(|&salient| scatter(&protos[if salient { concept } else { noise_concept }], cfg.tokens_per_frame, &noise, &mut rng))
        .collect();
    let text = scatter(&protos[concept], cfg.tokens_per_text, &noise, &mut rng);
    VideoTextPair { id, concept_id: concept, noise_concept_id: noise_concept, video, text, salient_mask }
}

/// Deterministic in `cfg.seed`; each pair has its own derived stream.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let mut pairs: Vec<VideoTextPair> = (0..cfg.n_pairs()).map(|id| generate_pair(cfg, &protos, id)).collect();
    let test = pairs.split_off(cfg.n_train + cfg.n_val);
    let val = pairs.split_off(cfg.n_train);
    Ok(Corpus { version: CORPUS_VERSION.into(), config: cfg.clone(), train: pairs, val, test })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::tensor::cosine_slices;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig { n_train: 20, n_val: 5, n_test: 10, seed, ..Default::default() }
    }

    #[test]
    fn salient_counts_and_noise_concepts() {
        let cfg = small(3);
        let c = generate_corpus(&cfg).unwrap();
        let protos = prototypes(&cfg);
        for p in c.train.iter().chain(&c.val).chain(&c.test) {
            assert_eq!(p.salient_mask.iter().filter(|&&s| s).count(), 8);
            assert_ne!(p.noise_concept_id, p.concept_id);
            // Each frame's mean token lies nearest its own generating prototype.
            for (frame, &salient) in p.video.iter().zip(&p.salient_mask) {
                let mean: Vec<f64> = (0..32).map(|c| (0..4).map(|r| frame.tokens.row_slice(r)[c]).sum::<f64>() / 4.0).collect();
                let best = (0..16)
                    .max_by(|&a, &b| cosine_slices(&mean, &protos[a]).unwrap().total_cmp(&cosine_slices(&mean, &protos[b]).unwrap()))
                    .unwrap();
                assert_eq!(best, if salient { p.concept_id } else { p.noise_concept_id });
            }
        }
    }

    #[test]
    fn no_noise_means_all_salient() {
        let cfg = CorpusConfig { noise_fraction: 0.0, ..small(1) };
        let c = generate_corpus(&cfg).unwrap();
        assert!(c.train.iter().all(|p| p.salient_mask.iter().all(|&s| s)));
        let cfg = CorpusConfig { noise_fraction: 0.99, ..small(1) };
        assert_eq!(cfg.salient_count(), 1);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let a = generate_corpus(&small(9)).unwrap();
        let b = generate_corpus(&small(9)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_corpus(&small(10)).unwrap();
        assert_ne!(a.train[0].text, c.train[0].text);
        let ids: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).map(|p| p.id).collect();
        assert_eq!(ids.len(), ids.iter().collect::<HashSet<_>>().len());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (20, 5, 10));
    }

    #[test]
    fn intra_concept_tokens_are_closer() {
        let c = generate_corpus(&CorpusConfig { seed: 4, ..Default::default() }).unwrap();
        let all: Vec<&VideoTextPair> = c.train.iter().chain(&c.test).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        while intra.len() < 1000 || inter.len() < 1000 {
            let a = all[rng.random_range(0..all.len())];
            let b = all[rng.random_range(0..all.len())];
            if a.id == b.id {
                continue;
            }
            let ta = a.text.tokens.row_slice(rng.random_range(0..4));
            let tb = b.text.tokens.row_slice(rng.random_range(0..4));
            let cos = cosine_slices(ta, tb).unwrap();
            if a.concept_id == b.concept_id {
                if intra.len() < 1000 {
                    intra.push(cos);
                }
            } else if inter.len() < 1000 {
                inter.push(cos);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mi, mo) = (mean(&intra), mean(&inter));
        let sd = (inter.iter().map(|x| (x - mo).powi(2)).sum::<f64>() / (inter.len() - 1) as f64).sqrt();
        assert!(mi - mo >= 3.0 * sd, "intra {mi} inter {mo} sd {sd}");
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            CorpusConfig { n_concepts: 1, ..Default::default() },
            CorpusConfig { noise_fraction: 1.0, ..Default::default() },
            CorpusConfig { frames_per_video: 0, ..Default::default() },
        ] {
            assert!(matches!(generate_corpus(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = generate_corpus(&small(2)).unwrap();
        c.save(&path).unwrap();
        assert_eq!(Corpus::load(&path).unwrap(), c);
    }
}
