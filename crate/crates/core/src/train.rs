//! Training configuration, model state and the training loop.
//!
//! One step: sample frames, encode with online and momentum encoders, choose
//! positive frames (all frames during warm-up, salient frames afterwards),
//! compute the total loss, AdamW on the online parameters, momentum update,
//! then enqueue freshly computed momentum features into the banks.

use std::io::Write;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::banks::MemoryBank;
use crate::encoders::{EncoderConfig, MomentumPair, TextEncoder, TokenSequence, VisionEncoder};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionModel};
use crate::objectives::{loss_lsfm, loss_mfcl, loss_mvcl, loss_total, ContrastiveBatch, LossValues, MatchPair, PairFeatures};
use crate::optim::{optimizer_step, AdamWConfig, AdamWState};
use crate::params::{BoundParams, ParamStore};
use crate::sfp::{relevance, select_salient, two_stage_sample, RelevanceStrategy, SampleMode};
use crate::synth::VideoTextPair;
use crate::tensor::{Gradients, Graph};

/// How the global and local score matrices are combined in ensemble mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleRule {
    /// Min-max normalize each matrix to [0, 1], then add.
    #[default]
    MinMaxSum,
    /// Add per-query reciprocal ranks.
    RankSum,
}

/// Every hyperparameter of a run. Loaded from JSON with missing fields defaulted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Frames sampled per video (N).
    pub frames: usize,
    pub n_salient: usize,
    pub batch_size: usize,
    /// Momentum coefficient m.
    pub momentum: f64,
    /// Temperature τ.
    pub temperature: f64,
    /// Capacity of each memory bank (N_m).
    pub bank_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub strategy: RelevanceStrategy,
    /// Salient frame proposal after warm-up. When false every epoch trains like warm-up.
    pub sfp: bool,
    pub ensemble: EnsembleRule,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            frames: 16,
            n_salient: 2,
            batch_size: 16,
            momentum: 0.99,
            temperature: 0.07,
            bank_size: 512,
            lr: 1e-3,
            weight_decay: 0.02,
            epochs: 5,
            warmup_epochs: 1,
            strategy: RelevanceStrategy::Collaborative,
            sfp: true,
            ensemble: EnsembleRule::MinMaxSum,
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            seed: 0,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.encoder.validate()?;
        self.fusion.validate()?;
        if self.frames == 0 || self.frames > self.encoder.max_frames {
            return bad(format!("frames must lie in 1..={}", self.encoder.max_frames));
        }
        if self.n_salient == 0 || self.n_salient > self.frames {
            return bad("n_salient must lie in 1..=frames".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1]".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        if self.bank_size < self.batch_size * self.frames {
            return bad("bank_size must hold one batch of frame features (batch_size * frames)".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative".into());
        }
        if self.warmup_epochs < 1 || self.warmup_epochs > self.epochs {
            return bad("warmup_epochs must lie in 1..=epochs".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Network structure (no parameters). Rebuilt from a [`Config`] on load.
#[derive(Clone, Debug)]
pub struct Model {
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub fusion: FusionModel,
}

/// Fresh model structure and initial parameters for vision, text and fusion.
pub fn init_model(cfg: &Config, rng: &mut ChaCha8Rng) -> (Model, ParamStore<f64>, ParamStore<f64>, ParamStore<f64>) {
    let (vision, pv) = VisionEncoder::build(&cfg.encoder, rng);
    let (text, pt) = TextEncoder::build(&cfg.encoder, rng);
    let (fusion, pf) = FusionModel::build(&cfg.fusion, cfg.encoder.token_width, cfg.encoder.token_width, rng);
    (Model { vision, text, fusion }, pv, pt, pf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Banks {
    pub video: MemoryBank<f64>,
    pub text: MemoryBank<f64>,
    pub frame: MemoryBank<f64>,
}

impl Banks {
    pub fn new(capacity: usize, width: usize) -> Result<Self> {
        Ok(Self {
            video: MemoryBank::new(capacity, width)?,
            text: MemoryBank::new(capacity, width)?,
            frame: MemoryBank::new(capacity, width)?,
        })
    }
}

/// Independent random streams derived from the run seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RngStreams {
    pub sampling: ChaCha8Rng,
    pub negatives: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub warmup_frames: ChaCha8Rng,
}

pub const STREAM_INIT: u64 = 0;
const STREAM_SAMPLING: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_WARMUP: u64 = 4;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            sampling: stream(seed, STREAM_SAMPLING),
            negatives: stream(seed, STREAM_NEGATIVES),
            shuffle: stream(seed, STREAM_SHUFFLE),
            warmup_frames: stream(seed, STREAM_WARMUP),
        }
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: Config,
    pub model: Model,
    pub vision: MomentumPair<f64>,
    pub text: MomentumPair<f64>,
    pub fusion: ParamStore<f64>,
    pub opt_vision: AdamWState<f64>,
    pub opt_text: AdamWState<f64>,
    pub opt_fusion: AdamWState<f64>,
    pub banks: Banks,
    /// Completed optimizer steps.
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngStreams,
}

impl TrainState {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let (model, pv, pt, pf) = init_model(&config, &mut stream(config.seed, STREAM_INIT));
        let vision = MomentumPair::new(pv, config.momentum)?;
        let text = MomentumPair::new(pt, config.momentum)?;
        Ok(Self {
            opt_vision: AdamWState::for_store(&vision.online),
            opt_text: AdamWState::for_store(&text.online),
            opt_fusion: AdamWState::for_store(&pf),
            banks: Banks::new(config.bank_size, config.encoder.joint_dim)?,
            rng: RngStreams::new(config.seed),
            model,
            vision,
            text,
            fusion: pf,
            step: 0,
            epoch: 0,
            config,
        })
    }
}

/// One CSV log row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub sfp_active: bool,
    pub l_v2t: f64,
    pub l_t2v: f64,
    pub l_t2e: f64,
    pub l_e2t: f64,
    pub l_lsfm: f64,
    pub l_total: f64,
}

impl LogRow {
    fn new(step: usize, epoch: usize, sfp_active: bool, l: LossValues) -> Self {
        Self { step, epoch, sfp_active, l_v2t: l.v2t, l_t2v: l.t2v, l_t2e: l.t2e, l_e2t: l.e2t, l_lsfm: l.lsfm, l_total: l.total }
    }
}

/// Plain-valued embeddings of one video-text pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEmbeddings {
    pub frames: Vec<Vec<f64>>,
    pub video: Vec<f64>,
    pub text: Vec<f64>,
}

/// Embeddings of the frames at `picks` and of the text, without gradients.
pub fn embed_pair(
    model: &Model,
    vision: &ParamStore<f64>,
    text: &ParamStore<f64>,
    pair: &VideoTextPair,
    picks: &[usize],
) -> Result<PairEmbeddings> {
    let mut g = Graph::new();
    let pv = vision.bind(&mut g, false);
    let pt = text.bind(&mut g, false);
    let frames: Vec<&TokenSequence<f64>> = picks.iter().map(|&j| &pair.video[j]).collect();
    let (enc, video) = model.vision.forward_video(&mut g, &pv, &frames)?;
    let t = model.text.forward(&mut g, &pt, &pair.text)?;
    let outputs = enc.iter().map(|e| e.embedding).chain([video, t.embedding]);
    for v in outputs {
        // Momentum features must never carry a gradient path.
        assert!(!g.requires_grad(v), "embedding unexpectedly tracks gradients");
    }
    Ok(PairEmbeddings {
        frames: enc.iter().map(|e| g.value(e.embedding).to_vec()).collect(),
        video: g.value(video).to_vec(),
        text: g.value(t.embedding).to_vec(),
    })
}

fn embed_batch(state: &TrainState, batch: &[&VideoTextPair], picks: &[Vec<usize>]) -> Result<Vec<PairEmbeddings>> {
    batch
        .par_iter()
        .zip(picks)
        .map(|(p, idx)| embed_pair(&state.model, &state.vision.momentum, &state.text.momentum, p, idx))
        .collect()
}

fn store_grads(grads: &Gradients<f64>, bound: &BoundParams, store: &ParamStore<f64>) -> Vec<Vec<f64>> {
    bound.vars().iter().zip(store.tensors()).map(|(&v, t)| grads.get_or_zeros(v, t.len())).collect()
}

fn other_index<R: Rng>(i: usize, n: usize, rng: &mut R) -> usize {
    let r = rng.random_range(0..n - 1);
    if r >= i { r + 1 } else { r }
}

fn as_loss_error(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { step: Some(step) },
        other => other,
    }
}

/// One optimization step on `batch`. Returns the logged losses.
pub fn train_step(state: &mut TrainState, batch: &[&VideoTextPair], sfp_active: bool) -> Result<LogRow> {
    let cfg = state.config.clone();
    if batch.len() < 2 {
        return Err(Error::InvalidConfig("a training batch needs at least two pairs".into()));
    }
    let step = state.step + 1;
    let n = cfg.frames;

    // (1) frame sampling
    let picks = batch
        .iter()
        .map(|p| two_stage_sample(p.video.len(), n, SampleMode::Train, &mut state.rng.sampling))
        .collect::<Result<Vec<_>>>()?;

    // (2) momentum and online encodings
    let hats = embed_batch(state, batch, &picks)?;
    let mut g = Graph::new();
    let pv = state.vision.online.bind(&mut g, true);
    let pt = state.text.online.bind(&mut g, true);
    let pf = state.fusion.bind(&mut g, true);
    let mut encoded = Vec::with_capacity(batch.len());
    for (p, idx) in batch.iter().zip(&picks) {
        let frames: Vec<&TokenSequence<f64>> = idx.iter().map(|&j| &p.video[j]).collect();
        let (enc, video) = state.model.vision.forward_video(&mut g, &pv, &frames).map_err(as_loss_error(step))?;
        let text = state.model.text.forward(&mut g, &pt, &p.text).map_err(as_loss_error(step))?;
        encoded.push((enc, video, text));
    }

    // (3) positive and matching frame sets
    let mut positives = Vec::with_capacity(batch.len());
    let mut matching = Vec::with_capacity(batch.len());
    for ((enc, _, text), hat) in encoded.iter().zip(&hats) {
        if sfp_active {
            let online: Vec<Vec<f64>> = enc.iter().map(|e| g.value(e.embedding).to_vec()).collect();
            let scores = relevance(cfg.strategy, &online, &hat.frames, g.value(text.embedding), &hat.text)?;
            let chosen = select_salient(&scores, cfg.n_salient).indices;
            positives.push(chosen.clone());
            matching.push(chosen);
        } else {
            positives.push((0..n).collect());
            let mut r = index::sample(&mut state.rng.warmup_frames, n, cfg.n_salient).into_vec();
            r.sort_unstable();
            matching.push(r);
        }
    }

    // (4) losses
    let pairs: Vec<PairFeatures<f64>> = encoded
        .iter()
        .zip(&hats)
        .zip(positives)
        .map(|(((enc, video, text), hat), pos)| PairFeatures {
            video: *video,
            text: text.embedding,
            frames: enc.iter().map(|e| e.embedding).collect(),
            video_hat: hat.video.clone(),
            text_hat: hat.text.clone(),
            frames_hat: hat.frames.clone(),
            positives: pos,
        })
        .collect();
    let cb = ContrastiveBatch { pairs, tau: cfg.temperature };
    let mut match_pairs = Vec::new();
    for (i, frames) in matching.iter().enumerate() {
        let (enc, _, text) = &encoded[i];
        for &j in frames {
            let frame_mask = batch[i].video[picks[i][j]].pad_mask.clone();
            match_pairs.push(MatchPair {
                frame: enc[j].hidden,
                frame_mask: frame_mask.clone(),
                text: text.hidden,
                text_mask: batch[i].text.pad_mask.clone(),
                label: true,
            });
            let k = other_index(i, batch.len(), &mut state.rng.negatives);
            match_pairs.push(MatchPair {
                frame: enc[j].hidden,
                frame_mask,
                text: encoded[k].2.hidden,
                text_mask: batch[k].text.pad_mask.clone(),
                label: false,
            });
        }
    }
    let banks = &state.banks;
    let total = (|| {
        let mvcl = loss_mvcl(&mut g, &cb, &banks.video, &banks.text)?;
        let mfcl = loss_mfcl(&mut g, &cb, &banks.frame, &banks.text)?;
        let lsfm = loss_lsfm(&mut g, &match_pairs, &state.model.fusion, &pf)?;
        loss_total(&mut g, mvcl, mfcl, lsfm)
    })()
    .map_err(as_loss_error(step))?;
    let values = LossValues::read(&g, &total);
    if !values.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: Some(step) });
    }

    // (5) optimizer on online parameters only
    let grads = g.backward(total.total).map_err(as_loss_error(step))?;
    let adamw = cfg.adamw();
    let gv = store_grads(&grads, &pv, &state.vision.online);
    let gt = store_grads(&grads, &pt, &state.text.online);
    let gf = store_grads(&grads, &pf, &state.fusion);
    drop(g);
    optimizer_step(&mut state.vision.online, &gv, &mut state.opt_vision, &adamw)?;
    optimizer_step(&mut state.text.online, &gt, &mut state.opt_text, &adamw)?;
    optimizer_step(&mut state.fusion, &gf, &mut state.opt_fusion, &adamw)?;

    // (6) momentum update, (7) enqueue post-update momentum features
    state.vision.update();
    state.text.update();
    let fresh = embed_batch(state, batch, &picks)?;
    let videos: Vec<&[f64]> = fresh.iter().map(|f| f.video.as_slice()).collect();
    let texts: Vec<&[f64]> = fresh.iter().map(|f| f.text.as_slice()).collect();
    let frames: Vec<&[f64]> = fresh.iter().flat_map(|f| f.frames.iter().map(Vec::as_slice)).collect();
    state.banks.video.enqueue(&videos)?;
    state.banks.text.enqueue(&texts)?;
    state.banks.frame.enqueue(&frames)?;

    state.step = step;
    Ok(LogRow::new(step, state.epoch + 1, sfp_active, values))
}

/// Train until `config.epochs` epochs are complete, calling `on_row` after every step.
/// Trailing batches smaller than two pairs are skipped.
pub fn train(state: &mut TrainState, data: &[VideoTextPair], mut on_row: impl FnMut(&LogRow) -> Result<()>) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::EmptyBatch);
    }
    while state.epoch < state.config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut state.rng.shuffle);
        let sfp_active = state.config.sfp && state.epoch >= state.config.warmup_epochs;
        for chunk in order.chunks(state.config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&VideoTextPair> = chunk.iter().map(|&i| &data[i]).collect();
            let row = train_step(state, &batch, sfp_active)?;
            on_row(&row)?;
        }
        state.epoch += 1;
    }
    Ok(())
}

/// CSV writer for [`LogRow`]s with the fixed header.
pub struct LogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> LogWriter<W> {
    pub fn new(w: W) -> Self {
        Self { inner: csv::Writer::from_writer(w) }
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, CorpusConfig};

    fn tiny() -> (Config, Vec<VideoTextPair>) {
        let corpus = generate_corpus(&CorpusConfig {
            n_train: 6,
            n_val: 0,
            n_test: 0,
            frames_per_video: 4,
            token_width: 8,
            tokens_per_frame: 2,
            tokens_per_text: 2,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let encoder = EncoderConfig {
            token_width: 8,
            frame_tokens: 2,
            text_tokens: 2,
            layers: 1,
            heads: 2,
            ffn_hidden: 8,
            joint_dim: 4,
            max_frames: 4,
            temporal_heads: 2,
            temporal_ffn_hidden: 8,
        };
        let cfg = Config {
            frames: 4,
            batch_size: 3,
            bank_size: 16,
            epochs: 2,
            encoder,
            fusion: FusionConfig { layers: 1, width: 8, heads: 2, ffn_hidden: 8 },
            ..Default::default()
        };
        (cfg, corpus.train)
    }

    #[test]
    fn warmup_then_sfp_and_banks_fill() {
        let (cfg, data) = tiny();
        let mut state = TrainState::new(cfg).unwrap();
        let mut rows = Vec::new();
        train(&mut state, &data, |r| {
            rows.push(*r);
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().map(|r| r.sfp_active).collect::<Vec<_>>(), vec![false, false, true, true]);
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        // Empty banks on the first step make every contrastive term exactly zero.
        assert_eq!((rows[0].l_v2t, rows[0].l_t2v, rows[0].l_t2e, rows[0].l_e2t), (0.0, 0.0, 0.0, 0.0));
        assert!(rows[1].l_v2t > 0.0);
        assert_eq!(state.banks.video.len(), 12);
        assert_eq!(state.banks.frame.len(), 16);
        assert_eq!(state.opt_vision.step, 4);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let (cfg, data) = tiny();
        let run = || {
            let mut s = TrainState::new(cfg.clone()).unwrap();
            let mut rows = Vec::new();
            train(&mut s, &data, |r| {
                rows.push(*r);
                Ok(())
            })
            .unwrap();
            (rows, s.vision.online)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        let bad = [
            Config { n_salient: 17, ..Default::default() },
            Config { warmup_epochs: 0, ..Default::default() },
            Config { warmup_epochs: 6, ..Default::default() },
            Config { batch_size: 1, ..Default::default() },
            Config { temperature: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        }
        Config::default().validate().unwrap();
        assert_eq!(Config::default().hash(), Config::default().hash());
        assert_ne!(Config::default().hash(), Config { seed: 1, ..Default::default() }.hash());
    }
}
