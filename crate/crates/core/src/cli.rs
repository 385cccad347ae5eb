//! Command-line surface: corpus generation, training, evaluation, the
//! salient-count sweep, the gradient suite and the strategy ablation.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::eval::{extract_features, retrieve, sweep_salient, write_sweep, EvalSettings, Selection};
use crate::gradsuite::run_gradient_suite;
use crate::metrics::Mode;
use crate::sfp::RelevanceStrategy;
use crate::synth::{generate_corpus, Corpus, CorpusConfig, VideoTextPair};
use crate::train::{train, Config, LogWriter, TrainState};

#[derive(Parser, Debug)]
#[command(name = "lgdn", version, about = "Salient-frame denoising for video-text retrieval on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train from scratch and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Local-mode evaluation at several salient-frame counts.
    Sweep(SweepArgs),
    /// Finite-difference check of every loss.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate once per relevance strategy.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON corpus config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

/// Training hyperparameter overrides shared by `train` and `ablate`.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON training config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub n_salient: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub bank_size: Option<usize>,
    /// Train every epoch without salient frame proposal.
    #[arg(long)]
    pub no_sfp: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config> {
        let mut c: Config = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => Config::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(seed, epochs, warmup_epochs, batch_size, lr, weight_decay, n_salient, temperature, momentum, bank_size);
        if self.no_sfp {
            c.sfp = false;
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<RelevanceStrategy>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Global,
    Local,
    Ensemble,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Global => Mode::Global,
            ModeArg::Local => Mode::Local,
            ModeArg::Ensemble => Mode::Ensemble,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SelectionArg {
    /// Top frames by relevance.
    Salient,
    /// Uniformly random frames.
    Random,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "salient")]
    pub selection: SelectionArg,
    #[arg(long)]
    pub n_salient: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<RelevanceStrategy>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,8,16")]
    pub salient: Vec<usize>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Timed runs per value; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_value = "simdot,momentum,crossmom,collab")]
    pub strategy: Vec<RelevanceStrategy>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn parse_strategy(s: &str) -> std::result::Result<RelevanceStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_checkpoint(path: Option<&Path>) -> Result<TrainState> {
    match path {
        Some(p) => checkpoint::load(p),
        None => Err(Error::MissingCheckpoint { path: None }),
    }
}

fn run_training(cfg: Config, train_split: &[VideoTextPair], log: Option<&Path>) -> Result<TrainState> {
    let mut state = TrainState::new(cfg)?;
    let mut writer = log.map(|p| File::create(p).map(|f| LogWriter::new(BufWriter::new(f)))).transpose()?;
    train(&mut state, train_split, |row| match writer.as_mut() {
        Some(w) => w.write(row),
        None => Ok(()),
    })?;
    Ok(state)
}

#[derive(Serialize)]
struct AblationRow {
    strategy: RelevanceStrategy,
    r_sum_global: f64,
    r_sum_local: f64,
    r_sum_ensemble: f64,
    selection_recall: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let mut cfg: CorpusConfig = match &a.config {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => CorpusConfig::default(),
            };
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            if let Some(v) = a.noise_fraction {
                cfg.noise_fraction = v;
            }
            if let Some(v) = a.n_train {
                cfg.n_train = v;
            }
            if let Some(v) = a.n_test {
                cfg.n_test = v;
            }
            generate_corpus(&cfg)?.save(&a.out)
        }
        Command::Train(a) => {
            let mut cfg = a.cfg.resolve()?;
            if let Some(s) = a.strategy {
                cfg.strategy = s;
            }
            let corpus = Corpus::load(&a.corpus)?;
            let state = run_training(cfg, &corpus.train, a.log.as_deref())?;
            checkpoint::save(&state, &a.out)
        }
        Command::Eval(a) => {
            let state = load_checkpoint(a.checkpoint.as_deref())?;
            let corpus = Corpus::load(&a.corpus)?;
            let mut settings = EvalSettings::from_state(&state);
            if let Some(k) = a.n_salient {
                settings.n_salient = k;
            }
            if let Some(s) = a.strategy {
                settings.strategy = s;
            }
            if let SelectionArg::Random = a.selection {
                settings.selection = Selection::Random { seed: state.config.seed };
            }
            let features = extract_features(&state, &corpus.test)?;
            let (_, report) = retrieve(&state, &features, a.mode.into(), &settings)?;
            let mut w = output(a.out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            Ok(())
        }
        Command::Sweep(a) => {
            let state = load_checkpoint(a.checkpoint.as_deref())?;
            let corpus = Corpus::load(&a.corpus)?;
            let features = extract_features(&state, &corpus.test)?;
            let rows = sweep_salient(&state, &features, &a.salient, a.repeats)?;
            write_sweep(&rows, output(a.out.as_deref())?)
        }
        Command::Gradcheck(a) => {
            let report = run_gradient_suite(a.eps)?;
            for e in &report.entries {
                println!(
                    "{:<8} max_rel_err={:.3e} checked={} worst={}",
                    e.loss.name(),
                    e.max_rel_error,
                    e.checked,
                    e.worst.as_deref().unwrap_or("-")
                );
            }
            let max = report.max_rel_error();
            println!("max_rel_err={max:.3e}");
            if max < 1e-4 {
                Ok(())
            } else {
                Err(Error::GradientCheckFailed { max, tolerance: 1e-4 })
            }
        }
        Command::Ablate(a) => {
            let base = a.cfg.resolve()?;
            let corpus = Corpus::load(&a.corpus)?;
            let mut out = csv::Writer::from_writer(output(a.out.as_deref())?);
            for &strategy in &a.strategy {
                let state = run_training(Config { strategy, ..base.clone() }, &corpus.train, None)?;
                let features = extract_features(&state, &corpus.test)?;
                let settings = EvalSettings::from_state(&state);
                let (_, global) = retrieve(&state, &features, Mode::Global, &settings)?;
                let (_, local) = retrieve(&state, &features, Mode::Local, &settings)?;
                let (_, ens) = retrieve(&state, &features, Mode::Ensemble, &settings)?;
                out.serialize(AblationRow {
                    strategy,
                    r_sum_global: global.metrics.r_sum,
                    r_sum_local: local.metrics.r_sum,
                    r_sum_ensemble: ens.metrics.r_sum,
                    selection_recall: local.selection.map_or(f64::NAN, |s| s.recall),
                })?;
                out.flush()?;
            }
            Ok(())
        }
    }
}

/// Parse `args` and run. Usage errors exit 2, runtime failures exit 1.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
