//! Finite-difference check of every training loss on a small fixed problem:
//! three pairs of four frames, four-entry banks, a two-layer fusion model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::banks::MemoryBank;
use crate::encoders::EncoderConfig;
use crate::error::Result;
use crate::fusion::FusionConfig;
use crate::objectives::{loss_lsfm, loss_mfcl, loss_mvcl, loss_total, ContrastiveBatch, MatchPair, PairFeatures};
use crate::params::{BoundParams, ParamStore};
use crate::synth::{generate_corpus, CorpusConfig, VideoTextPair};
use crate::tensor::{grad_check, Graph, Tensor, Var};
use crate::train::{embed_pair, init_model, Config, Model, PairEmbeddings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mvcl,
    Mfcl,
    Lsfm,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [Self::Mvcl, Self::Mfcl, Self::Lsfm, Self::Total];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mvcl => "L_MVCL",
            Self::Mfcl => "L_MFCL",
            Self::Lsfm => "L_LSFM",
            Self::Total => "L_total",
        }
    }

    /// Whether the tensor `name` of store `store` (0 vision, 1 text, 2 fusion)
    /// can influence this loss and is therefore perturbed.
    fn perturbs(self, store: usize, name: &str) -> bool {
        let token_stack = !name.contains(".project") && !name.starts_with("temporal");
        match self {
            Self::Mvcl => store < 2,
            Self::Mfcl => store < 2 && !name.starts_with("temporal"),
            Self::Lsfm => store == 2 || token_stack,
            Self::Total => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub loss: LossKind,
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub eps: f64,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

/// The fixed problem every loss is checked on.
pub struct Problem {
    pub model: Model,
    pub stores: [ParamStore<f64>; 3],
    pub pairs: Vec<VideoTextPair>,
    pub hats: Vec<PairEmbeddings>,
    pub positives: Vec<Vec<usize>>,
    pub banks: [MemoryBank<f64>; 3],
    pub tau: f64,
}

pub fn small_config() -> Config {
    Config {
        frames: 4,
        n_salient: 2,
        batch_size: 3,
        bank_size: 12,
        encoder: EncoderConfig {
            token_width: 8,
            frame_tokens: 3,
            text_tokens: 3,
            layers: 1,
            heads: 2,
            ffn_hidden: 12,
            joint_dim: 6,
            max_frames: 4,
            temporal_heads: 2,
            temporal_ffn_hidden: 8,
        },
        fusion: FusionConfig { layers: 2, width: 8, heads: 2, ffn_hidden: 12 },
        seed: 11,
        ..Config::default()
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl Problem {
    pub fn new() -> Result<Self> {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (model, pv, pt, pf) = init_model(&cfg, &mut rng);
        let corpus = generate_corpus(&CorpusConfig {
            n_train: 3,
            n_val: 0,
            n_test: 0,
            frames_per_video: 4,
            tokens_per_frame: 3,
            tokens_per_text: 3,
            token_width: 8,
            // Widely spread tokens keep attention away from uniform, so no
            // gradient entry sits at the finite-difference noise floor.
            concept_spread: 2.0,
            seed: cfg.seed,
            ..CorpusConfig::default()
        })?;
        // Momentum twins a small step away from the online weights.
        let jitter = |s: &ParamStore<f64>, rng: &mut ChaCha8Rng| {
            let mut m = s.clone();
            for t in m.tensors_mut() {
                for v in t.values_mut() {
                    *v += 0.01 * rng.random_range(-1.0..1.0);
                }
            }
            m
        };
        let (mv, mt) = (jitter(&pv, &mut rng), jitter(&pt, &mut rng));
        let all: Vec<usize> = (0..4).collect();
        let hats = corpus.train.iter().map(|p| embed_pair(&model, &mv, &mt, p, &all)).collect::<Result<Vec<_>>>()?;
        let d = cfg.encoder.joint_dim;
        let mut bank = || -> Result<MemoryBank<f64>> {
            let mut b = MemoryBank::new(4, d)?;
            let rows: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, d)).collect();
            b.enqueue(&rows)?;
            Ok(b)
        };
        let banks = [bank()?, bank()?, bank()?];
        Ok(Self {
            model,
            stores: [pv, pt, pf],
            pairs: corpus.train,
            hats,
            positives: vec![vec![0, 2], vec![1], vec![0, 1, 3]],
            banks,
            tau: cfg.temperature,
        })
    }

    /// Value of one loss. `bound` holds graph handles for vision, text and fusion.
    pub fn loss(&self, g: &mut Graph<f64>, bound: &[BoundParams; 3], kind: LossKind) -> Result<Var> {
        let [pv, pt, pf] = bound;
        let mut feats = Vec::new();
        let mut encoded = Vec::new();
        for (i, p) in self.pairs.iter().enumerate() {
            let frames: Vec<_> = p.video.iter().collect();
            let (enc, video) = self.model.vision.forward_video(g, pv, &frames)?;
            let text = self.model.text.forward(g, pt, &p.text)?;
            feats.push(PairFeatures {
                video,
                text: text.embedding,
                frames: enc.iter().map(|e| e.embedding).collect(),
                video_hat: self.hats[i].video.clone(),
                text_hat: self.hats[i].text.clone(),
                frames_hat: self.hats[i].frames.clone(),
                positives: self.positives[i].clone(),
            });
            encoded.push((enc, text));
        }
        let batch = ContrastiveBatch { pairs: feats, tau: self.tau };
        let [video_bank, text_bank, frame_bank] = &self.banks;
        let mut matches = Vec::new();
        for (i, pos) in self.positives.iter().enumerate() {
            let other = (i + 1) % self.pairs.len();
            for &j in pos {
                for (k, label) in [(i, true), (other, false)] {
                    matches.push(MatchPair {
                        frame: encoded[i].0[j].hidden,
                        frame_mask: self.pairs[i].video[j].pad_mask.clone(),
                        text: encoded[k].1.hidden,
                        text_mask: self.pairs[k].text.pad_mask.clone(),
                        label,
                    });
                }
            }
        }
        match kind {
            LossKind::Mvcl => Ok(loss_mvcl(g, &batch, video_bank, text_bank)?.total),
            LossKind::Mfcl => Ok(loss_mfcl(g, &batch, frame_bank, text_bank)?.total),
            LossKind::Lsfm => Ok(loss_lsfm(g, &matches, &self.model.fusion, pf)?.loss),
            LossKind::Total => {
                let a = loss_mvcl(g, &batch, video_bank, text_bank)?;
                let b = loss_mfcl(g, &batch, frame_bank, text_bank)?;
                let c = loss_lsfm(g, &matches, &self.model.fusion, pf)?;
                Ok(loss_total(g, a, b, c)?.total)
            }
        }
    }

    /// Tensors perturbed for `kind`, with their (store, index) origin.
    fn selection(&self, kind: LossKind) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (s, store) in self.stores.iter().enumerate() {
            for (k, (name, _)) in store.iter().enumerate() {
                if kind.perturbs(s, name) {
                    out.push((s, k));
                }
            }
        }
        out
    }

    /// Bind all three stores, taking the selected tensors from `vars`.
    fn bind_mixed(&self, g: &mut Graph<f64>, sel: &[(usize, usize)], vars: &[Var]) -> [BoundParams; 3] {
        let mut next = 0;
        let mut bind = |s: usize, store: &ParamStore<f64>| {
            let vs = store
                .tensors()
                .enumerate()
                .map(|(k, t)| {
                    if sel.get(next) == Some(&(s, k)) {
                        next += 1;
                        vars[next - 1]
                    } else {
                        g.leaf(t, false)
                    }
                })
                .collect();
            BoundParams::from_vars(vs)
        };
        [bind(0, &self.stores[0]), bind(1, &self.stores[1]), bind(2, &self.stores[2])]
    }

    pub fn check(&self, kind: LossKind, eps: f64) -> Result<SuiteEntry> {
        let sel = self.selection(kind);
        let params: Vec<Tensor<f64>> = sel.iter().map(|&(s, k)| self.stores[s].tensors().nth(k).expect("index").clone()).collect();
        let report = grad_check(
            |g, vars| {
                let bound = self.bind_mixed(g, &sel, vars);
                self.loss(g, &bound, kind)
            },
            &params,
            eps,
        )?;
        let worst = report.worst.map(|(t, e)| {
            let (s, k) = sel[t];
            let name = self.stores[s].iter().nth(k).expect("index").0;
            format!("{name}[{e}]")
        });
        Ok(SuiteEntry { loss: kind, max_rel_error: report.max_rel_error, checked: report.entries, worst })
    }
}

/// Check all four losses with central differences of step `eps`.
pub fn run_gradient_suite(eps: f64) -> Result<SuiteReport> {
    let problem = Problem::new()?;
    let entries = LossKind::ALL.iter().map(|&k| problem.check(k, eps)).collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport { eps, entries })
}
