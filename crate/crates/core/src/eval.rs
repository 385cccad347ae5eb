//! Global, local and ensemble retrieval over a test split, plus the
//! salient-count sweep.
//!
//! Local mode costs O(Q·C·N) relevance evaluations and O(Q·C·N_salient)
//! fusion passes, so it dominates evaluation time.

use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::TokenSequence;
use crate::error::{Error, Result};
use crate::fusion::{video_match_score, FusionScorer};
use crate::metrics::{Direction, Mode, RetrievalReport, SimilarityMatrix};
use crate::params::ParamStore;
use crate::scalar::dot;
use crate::sfp::{relevance, select_salient, two_stage_sample, RelevanceStrategy, SalientSet, SampleMode};
use crate::synth::VideoTextPair;
use crate::train::{embed_pair, stream, EnsembleRule, Model, PairEmbeddings, TrainState};
use crate::tensor::Graph;

/// How local mode picks the frames fed to the fusion model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Top-N_salient frames by relevance.
    Salient,
    /// N_salient frames uniformly at random, seeded per (query, candidate) cell.
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_salient: usize,
    pub strategy: RelevanceStrategy,
    pub selection: Selection,
    pub ensemble: EnsembleRule,
}

impl EvalSettings {
    pub fn from_state(state: &TrainState) -> Self {
        let c = &state.config;
        Self { n_salient: c.n_salient, strategy: c.strategy, selection: Selection::Salient, ensemble: c.ensemble }
    }
}

/// Size of the worker pool: `LGDN_THREADS`, with 0 or unset meaning one per core.
pub fn thread_count() -> usize {
    std::env::var("LGDN_THREADS").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Everything the three modes need from the test split, computed once.
#[derive(Clone, Debug)]
pub struct TestFeatures {
    /// Eval-mode frame indices per video.
    pub picks: Vec<Vec<usize>>,
    pub online: Vec<PairEmbeddings>,
    pub momentum: Vec<PairEmbeddings>,
    /// Online encoder hidden states of every sampled frame.
    pub frame_tokens: Vec<Vec<TokenSequence<f64>>>,
    pub text_tokens: Vec<TokenSequence<f64>>,
    /// Planted labels of the sampled frames.
    pub salient: Vec<Vec<bool>>,
}

impl TestFeatures {
    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }
}

struct OnlinePass {
    emb: PairEmbeddings,
    frames: Vec<TokenSequence<f64>>,
    text: TokenSequence<f64>,
}

fn online_pass(model: &Model, vision: &ParamStore<f64>, text: &ParamStore<f64>, pair: &VideoTextPair, picks: &[usize]) -> Result<OnlinePass> {
    let mut g = Graph::new();
    let pv = vision.bind(&mut g, false);
    let pt = text.bind(&mut g, false);
    let frames: Vec<&TokenSequence<f64>> = picks.iter().map(|&j| &pair.video[j]).collect();
    let (enc, video) = model.vision.forward_video(&mut g, &pv, &frames)?;
    let t = model.text.forward(&mut g, &pt, &pair.text)?;
    let hidden_frames = enc
        .iter()
        .zip(&frames)
        .map(|(e, f)| TokenSequence::new(g.to_tensor(e.hidden), f.pad_mask.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(OnlinePass {
        emb: PairEmbeddings {
            frames: enc.iter().map(|e| g.value(e.embedding).to_vec()).collect(),
            video: g.value(video).to_vec(),
            text: g.value(t.embedding).to_vec(),
        },
        frames: hidden_frames,
        text: TokenSequence::new(g.to_tensor(t.hidden), pair.text.pad_mask.clone())?,
    })
}

pub fn extract_features(state: &TrainState, pairs: &[VideoTextPair]) -> Result<TestFeatures> {
    if pairs.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let n = state.config.frames;
    let mut unused = stream(0, 0);
    let picks = pairs
        .iter()
        .map(|p| two_stage_sample(p.video.len(), n, SampleMode::Eval, &mut unused))
        .collect::<Result<Vec<_>>>()?;
    let pool = thread_pool()?;
    let done = pool.install(|| {
        pairs
            .par_iter()
            .zip(&picks)
            .map(|(p, idx)| {
                let on = online_pass(&state.model, &state.vision.online, &state.text.online, p, idx)?;
                let mom = embed_pair(&state.model, &state.vision.momentum, &state.text.momentum, p, idx)?;
                Ok((on, mom))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let salient = pairs.iter().zip(&picks).map(|(p, idx)| idx.iter().map(|&j| p.salient_mask[j]).collect()).collect();
    let mut f = TestFeatures { picks, online: vec![], momentum: vec![], frame_tokens: vec![], text_tokens: vec![], salient };
    for (on, mom) in done {
        f.online.push(on.emb);
        f.frame_tokens.push(on.frames);
        f.text_tokens.push(on.text);
        f.momentum.push(mom);
    }
    Ok(f)
}

/// Text-to-video cosine of the unit-norm video and text embeddings.
pub fn global_matrix(f: &TestFeatures) -> Result<SimilarityMatrix> {
    let q = f.len();
    let scores = (0..q).flat_map(|i| (0..q).map(move |j| dot(&f.online[i].text, &f.online[j].video))).collect();
    SimilarityMatrix::new(q, q, scores, Direction::TextToVideo, Mode::Global)
}

fn choose(f: &TestFeatures, i: usize, j: usize, settings: &EvalSettings) -> Result<SalientSet<f64>> {
    match settings.selection {
        Selection::Salient => {
            let (on, mom) = (&f.online, &f.momentum);
            let scores = relevance(settings.strategy, &on[j].frames, &mom[j].frames, &on[i].text, &mom[i].text)?;
            Ok(select_salient(&scores, settings.n_salient))
        }
        Selection::Random { seed } => {
            let n = f.online[j].frames.len();
            let mut rng = stream(seed, (i * f.len() + j) as u64);
            let mut indices = index::sample(&mut rng, n, settings.n_salient.min(n)).into_vec();
            indices.sort_unstable();
            Ok(SalientSet { indices, source_scores: vec![] })
        }
    }
}

/// Text-to-video mean match probability over the selected frames of each candidate.
pub fn local_matrix(state: &TrainState, f: &TestFeatures, settings: &EvalSettings) -> Result<SimilarityMatrix> {
    let q = f.len();
    let pool = thread_pool()?;
    let rows = pool.install(|| {
        (0..q)
            .into_par_iter()
            .map_init(
                || FusionScorer::new(&state.model.fusion, &state.fusion),
                |scorer, i| {
                    (0..q)
                        .map(|j| {
                            let chosen = choose(f, i, j, settings)?;
                            video_match_score(&f.frame_tokens[j], &f.text_tokens[i], &chosen, scorer)
                        })
                        .collect::<Result<Vec<f64>>>()
                },
            )
            .collect::<Result<Vec<_>>>()
    })?;
    SimilarityMatrix::new(q, q, rows.concat(), Direction::TextToVideo, Mode::Local)
}

fn min_max(s: &[f64]) -> Vec<f64> {
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo { s.iter().map(|x| (x - lo) / (hi - lo)).collect() } else { vec![0.0; s.len()] }
}

fn reciprocal_ranks(m: &SimilarityMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.scores.len()];
    for i in 0..m.rows {
        let row = m.row(i);
        let mut order: Vec<usize> = (0..m.cols).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for (r, &j) in order.iter().enumerate() {
            out[i * m.cols + j] = 1.0 / (r + 1) as f64;
        }
    }
    out
}

/// Combine global and local matrices of the same shape.
pub fn ensemble_matrix(global: &SimilarityMatrix, local: &SimilarityMatrix, rule: EnsembleRule) -> Result<SimilarityMatrix> {
    if global.rows != local.rows || global.cols != local.cols {
        return Err(crate::error::shape_err("ensemble", "matrix shapes differ"));
    }
    let (a, b) = match rule {
        EnsembleRule::MinMaxSum => (min_max(&global.scores), min_max(&local.scores)),
        EnsembleRule::RankSum => (reciprocal_ranks(global), reciprocal_ranks(local)),
    };
    let scores = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    SimilarityMatrix::new(global.rows, global.cols, scores, Direction::TextToVideo, Mode::Ensemble)
}

/// Agreement between SFP choices on matched pairs and the planted labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    /// Selected salient frames / salient frames among those sampled, averaged over pairs (percent).
    pub recall: f64,
    /// Selected salient frames / selected frames, averaged over pairs (percent).
    pub precision: f64,
    /// Expected recall of a uniformly random choice of the same size (percent).
    pub random_recall: f64,
}

pub fn selection_stats(f: &TestFeatures, settings: &EvalSettings) -> Result<SelectionStats> {
    let (mut rec, mut prec, mut rand_rec, mut counted) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..f.len() {
        let positives = f.salient[i].iter().filter(|&&s| s).count();
        if positives == 0 {
            continue;
        }
        let chosen = choose(f, i, i, settings)?;
        let hits = chosen.indices.iter().filter(|&&j| f.salient[i][j]).count() as f64;
        let n = f.salient[i].len() as f64;
        let k = chosen.indices.len() as f64;
        rec += hits / positives as f64;
        prec += hits / k;
        rand_rec += k / n;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::EmptySalientSet);
    }
    let c = counted as f64;
    Ok(SelectionStats { recall: 100.0 * rec / c, precision: 100.0 * prec / c, random_recall: 100.0 * rand_rec / c })
}

/// Report file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub config_hash: String,
    pub settings: EvalSettings,
    pub metrics: RetrievalReport,
    pub selection: Option<SelectionStats>,
}

/// Score matrix for `mode` (text-to-video orientation).
pub fn similarity(state: &TrainState, f: &TestFeatures, mode: Mode, settings: &EvalSettings) -> Result<SimilarityMatrix> {
    match mode {
        Mode::Global => global_matrix(f),
        Mode::Local => local_matrix(state, f, settings),
        Mode::Ensemble => ensemble_matrix(&global_matrix(f)?, &local_matrix(state, f, settings)?, settings.ensemble),
    }
}

pub fn retrieve(state: &TrainState, f: &TestFeatures, mode: Mode, settings: &EvalSettings) -> Result<(SimilarityMatrix, EvalReport)> {
    let sim = similarity(state, f, mode, settings)?;
    let metrics = RetrievalReport::from_t2v(&sim)?;
    let selection = match (mode, settings.selection) {
        (Mode::Global, _) => None,
        _ => Some(selection_stats(f, settings)?),
    };
    let report = EvalReport { mode, config_hash: state.config.hash(), settings: *settings, metrics, selection };
    Ok((sim, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_salient: usize,
    pub r_sum: f64,
    pub r1_t2v: f64,
    pub r5_t2v: f64,
    pub r10_t2v: f64,
    pub r1_v2t: f64,
    pub r5_v2t: f64,
    pub r10_v2t: f64,
    pub wall_ms: f64,
    pub speedup: f64,
}

/// Local-mode evaluation at each salient count. Wall time is the fastest of
/// `repeats` runs; speedup is relative to `N_salient = N` when requested,
/// otherwise to the largest requested value.
pub fn sweep_salient(state: &TrainState, f: &TestFeatures, values: &[usize], repeats: usize) -> Result<Vec<SweepRow>> {
    if values.is_empty() || values.contains(&0) {
        return Err(Error::InvalidConfig("salient counts must be positive".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &k in values {
        let settings = EvalSettings { n_salient: k, ..EvalSettings::from_state(state) };
        let mut best = f64::INFINITY;
        let mut sim = None;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let s = local_matrix(state, f, &settings)?;
            best = best.min(t.elapsed().as_secs_f64() * 1e3);
            sim = Some(s);
        }
        let m = RetrievalReport::from_t2v(&sim.expect("at least one repeat"))?;
        rows.push(SweepRow {
            n_salient: k,
            r_sum: m.r_sum,
            r1_t2v: m.t2v.r1,
            r5_t2v: m.t2v.r5,
            r10_t2v: m.t2v.r10,
            r1_v2t: m.v2t.r1,
            r5_v2t: m.v2t.r5,
            r10_v2t: m.v2t.r10,
            wall_ms: best,
            speedup: 0.0,
        });
    }
    let n = state.config.frames;
    let reference = rows
        .iter()
        .find(|r| r.n_salient == n)
        .or_else(|| rows.iter().max_by_key(|r| r.n_salient))
        .map(|r| r.wall_ms)
        .expect("non-empty");
    for r in &mut rows {
        r.speedup = reference / r.wall_ms;
    }
    Ok(rows)
}

pub fn write_sweep<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
