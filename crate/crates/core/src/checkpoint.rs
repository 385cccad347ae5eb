//! JSON checkpoints of a [`TrainState`].

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::MomentumPair;
use crate::error::{Error, Result};
use crate::optim::AdamWState;
use crate::params::ParamStore;
use crate::train::{init_model, stream, Banks, Config, RngStreams, TrainState, STREAM_INIT};

pub const CHECKPOINT_VERSION: &str = "lgdn-ckpt/1";

/// Position of one ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngRecord {
    fn capture(r: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(r.get_seed()), stream: r.get_stream(), word_pos: r.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::InvalidConfig("corrupt rng record in checkpoint".into());
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad())?.try_into().map_err(|_| bad())?;
        let mut r = ChaCha8Rng::from_seed(seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub sampling: RngRecord,
    pub negatives: RngRecord,
    pub shuffle: RngRecord,
    pub warmup_frames: RngRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config: Config,
    pub vision_online: ParamStore<f64>,
    pub vision_momentum: ParamStore<f64>,
    pub text_online: ParamStore<f64>,
    pub text_momentum: ParamStore<f64>,
    pub fusion: ParamStore<f64>,
    pub opt_vision: AdamWState<f64>,
    pub opt_text: AdamWState<f64>,
    pub opt_fusion: AdamWState<f64>,
    pub banks: Banks,
    pub step: usize,
    pub epoch: usize,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn capture(s: &TrainState) -> Self {
        Self {
            version: CHECKPOINT_VERSION.into(),
            config: s.config.clone(),
            vision_online: s.vision.online.clone(),
            vision_momentum: s.vision.momentum.clone(),
            text_online: s.text.online.clone(),
            text_momentum: s.text.momentum.clone(),
            fusion: s.fusion.clone(),
            opt_vision: s.opt_vision.clone(),
            opt_text: s.opt_text.clone(),
            opt_fusion: s.opt_fusion.clone(),
            banks: s.banks.clone(),
            step: s.step,
            epoch: s.epoch,
            rng: RngState {
                sampling: RngRecord::capture(&s.rng.sampling),
                negatives: RngRecord::capture(&s.rng.negatives),
                shuffle: RngRecord::capture(&s.rng.shuffle),
                warmup_frames: RngRecord::capture(&s.rng.warmup_frames),
            },
        }
    }

    /// Rebuild the training state, checking every store against the layout the config implies.
    pub fn restore(self) -> Result<TrainState> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: self.version, expected: CHECKPOINT_VERSION });
        }
        self.config.validate()?;
        let (model, pv, pt, pf) = init_model(&self.config, &mut stream(self.config.seed, STREAM_INIT));
        pv.check_layout(&self.vision_online, "checkpoint.vision")?;
        pt.check_layout(&self.text_online, "checkpoint.text")?;
        pf.check_layout(&self.fusion, "checkpoint.fusion")?;
        let m = self.config.momentum;
        let vision = MomentumPair::from_parts(self.vision_online, self.vision_momentum, m)?;
        let text = MomentumPair::from_parts(self.text_online, self.text_momentum, m)?;
        self.opt_vision.check(&vision.online)?;
        self.opt_text.check(&text.online)?;
        self.opt_fusion.check(&self.fusion)?;
        Ok(TrainState {
            rng: RngStreams {
                sampling: self.rng.sampling.restore()?,
                negatives: self.rng.negatives.restore()?,
                shuffle: self.rng.shuffle.restore()?,
                warmup_frames: self.rng.warmup_frames.restore()?,
            },
            config: self.config,
            model,
            vision,
            text,
            fusion: self.fusion,
            opt_vision: self.opt_vision,
            opt_text: self.opt_text,
            opt_fusion: self.opt_fusion,
            banks: self.banks,
            step: self.step,
            epoch: self.epoch,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::capture(state).to_json()?)?;
    Ok(())
}

/// Missing files surface as [`Error::MissingCheckpoint`].
pub fn load(path: &Path) -> Result<TrainState> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingCheckpoint { path: Some(path.display().to_string()) },
        _ => Error::Io(e),
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.restore()
}
