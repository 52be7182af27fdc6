//! End-to-end runs: data preparation, training and evaluation from one
//! configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    augment, derive_seed, drop_observations, generate_synthetic, load_csv, make_batch_samples, window_split,
    AugmentSpec, BatchSample, NormStats, RawSequence, SyntheticConfig,
};
use crate::error::{PadError, Result};
use crate::metrics::{self, EvalReport, Task};
use crate::model::{predict, ModelConfig, PadParameters};
use crate::path::TimeSeriesWindow;
use crate::solver::SolverConfig;
use crate::train::{fit, EpochLog, FitResult, TrainConfig};

/// Where the data comes from. Exactly one of `synthetic` and `train_csv`
/// must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticConfig>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    /// Leading fraction of a single sequence used for training when no
    /// separate test file is given.
    pub train_fraction: f64,
    /// Fraction of observations removed at random from every input window
    /// of every split, after windowing.
    pub drop: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: None,
            train_csv: None,
            test_csv: None,
            train_fraction: 0.5,
            drop: 0.0,
        }
    }
}

/// Complete configuration of a run.
///
/// `seed` is the master seed: data generation, augmentation, initialisation,
/// shuffling and observation dropping all draw from seeds derived from it,
/// overriding the `seed` fields of the nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// Implant copied segments into unlabeled training data.
    pub augment: Option<AugmentSpec>,
    pub model: ModelConfig,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    /// Output lengths visited by the sweep command.
    pub sweep_horizons: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig {
                synthetic: Some(SyntheticConfig::default()),
                ..DataConfig::default()
            },
            augment: None,
            model: ModelConfig {
                n_channels: 4,
                ..ModelConfig::default()
            },
            solver: SolverConfig::default(),
            train: TrainConfig::default(),
            sweep_horizons: vec![1, 5, 10, 15, 20],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.solver.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        match (&self.data.synthetic, &self.data.train_csv) {
            (Some(_), Some(_)) => {
                return Err(PadError::Config("data.synthetic and data.train_csv are mutually exclusive".into()))
            }
            (None, None) => return Err(PadError::Config("set data.synthetic or data.train_csv".into())),
            _ => {}
        }
        if self.data.synthetic.is_some() && self.data.test_csv.is_some() {
            return Err(PadError::Config("data.test_csv cannot be combined with data.synthetic".into()));
        }
        if !(0.0..1.0).contains(&self.data.drop) {
            return Err(PadError::Config("data.drop must be in [0, 1)".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(PadError::Config("data.train_fraction must be in (0, 1)".into()));
        }
        for path in [&self.data.train_csv, &self.data.test_csv].into_iter().flatten() {
            if !path.exists() {
                return Err(PadError::io(path, std::io::ErrorKind::NotFound.into()));
            }
        }
        Ok(())
    }

    /// Parse JSON or TOML by file extension; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| PadError::Config(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            Some("json") => Self::from_json(&text),
            _ => Err(PadError::Config(format!(
                "{}: config must be a .json or .toml file",
                path.display()
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| PadError::Config(format!("config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| PadError::Config(format!("config: {e}")))
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always serializable")
    }

    fn synthetic(&self) -> Option<SyntheticConfig> {
        self.data.synthetic.clone().map(|s| SyntheticConfig {
            seed: derive_seed(self.seed, "synthetic"),
            ..s
        })
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "shuffle"),
            ..self.train.clone()
        }
    }
}

/// Raw (unnormalized) train and test sequences described by the config.
pub fn load_sequences(cfg: &RunConfig) -> Result<(RawSequence, RawSequence)> {
    let (train, test) = if let Some(syn) = cfg.synthetic() {
        let seq = generate_synthetic(&syn)?.sequence;
        split(&seq, cfg.data.train_fraction)
    } else {
        let path = cfg.data.train_csv.as_ref().expect("validated");
        let seq = load_csv(path)?;
        match &cfg.data.test_csv {
            Some(t) => (seq, load_csv(t)?),
            None => split(&seq, cfg.data.train_fraction),
        }
    };
    let train = match &cfg.augment {
        Some(spec) => augment(
            &train,
            &AugmentSpec {
                seed: derive_seed(cfg.seed, "augment"),
                ..spec.clone()
            },
        )?,
        None => train,
    };
    if train.anomaly_flags.is_none() {
        return Err(PadError::Input(
            "training data has no labels; enable augmentation or provide a label column".into(),
        ));
    }
    if test.anomaly_flags.is_none() {
        return Err(PadError::Input("test data needs a label column".into()));
    }
    Ok((train, test))
}

fn split(seq: &RawSequence, fraction: f64) -> (RawSequence, RawSequence) {
    let cut = (seq.len() as f64 * fraction).round() as usize;
    (seq.slice(0, cut), seq.slice(cut, seq.len()))
}

/// Normalized, windowed samples ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<BatchSample>,
    pub val: Vec<BatchSample>,
    pub test: Vec<BatchSample>,
    pub norm: NormStats,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    prepare_with(cfg, None)
}

/// Like [`prepare`], reusing stored normalization statistics when given.
pub fn prepare_with(cfg: &RunConfig, norm: Option<&NormStats>) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_sequences(cfg)?;
    if train.n_channels != cfg.model.n_channels || test.n_channels != cfg.model.n_channels {
        return Err(PadError::Config(format!(
            "model.n_channels = {} but data has {} (train) / {} (test) channels",
            cfg.model.n_channels, train.n_channels, test.n_channels
        )));
    }
    let norm = match norm {
        Some(n) if n.n_channels() == train.n_channels => n.clone(),
        Some(n) => {
            return Err(PadError::Config(format!(
                "stored normalization has {} channels, data has {}",
                n.n_channels(),
                train.n_channels
            )))
        }
        None => NormStats::fit(&[&train])?,
    };
    let (train, test) = (norm.apply(&train)?, norm.apply(&test)?);
    let b = cfg.train.window_size;
    let p = cfg.train.poa_horizon;
    let samples = make_batch_samples(&window_split(&train, b)?, p)?;
    let test = make_batch_samples(&window_split(&test, b)?, p)?;
    let (mut samples, test) = if cfg.data.drop > 0.0 {
        (
            drop_inputs(samples, cfg.data.drop, cfg.seed, "train")?,
            drop_inputs(test, cfg.data.drop, cfg.seed, "test")?,
        )
    } else {
        (samples, test)
    };
    let n_val = (samples.len() as f64 * cfg.train.val_fraction).round() as usize;
    let val = samples.split_off(samples.len() - n_val);
    if samples.is_empty() || test.is_empty() {
        return Err(PadError::Input(format!(
            "window size {b} leaves no training or test samples"
        )));
    }
    Ok(Prepared {
        train: samples,
        val,
        test,
        norm,
    })
}

/// Thin out each input window; its anomaly label follows the surviving
/// flags. Teacher windows and PoA labels are left untouched.
fn drop_inputs(samples: Vec<BatchSample>, ratio: f64, seed: u64, split: &str) -> Result<Vec<BatchSample>> {
    samples
        .into_iter()
        .map(|s| {
            let tag = format!("drop-{split}-{}", s.input.window_index());
            let input = drop_observations(&s.input, ratio, derive_seed(seed, &tag))?;
            Ok(BatchSample {
                label: input.label(),
                input,
                ..s
            })
        })
        .collect()
}

pub fn init_params(cfg: &RunConfig) -> Result<PadParameters> {
    PadParameters::init(&cfg.model, derive_seed(cfg.seed, "init"))
}

pub fn train(cfg: &RunConfig, data: &Prepared, on_epoch: impl FnMut(&EpochLog)) -> Result<FitResult> {
    fit(
        &data.train,
        &data.val,
        init_params(cfg)?,
        &cfg.model,
        &cfg.solver,
        &cfg.train_config(),
        on_epoch,
    )
}

/// Anomaly and PoA reports on `samples`.
pub fn evaluate_samples(
    samples: &[BatchSample],
    params: &PadParameters,
    model: &ModelConfig,
    solver: &SolverConfig,
    threshold: f64,
) -> Result<(EvalReport, EvalReport)> {
    let inputs: Vec<TimeSeriesWindow> = samples.iter().map(|s| s.input.clone()).collect();
    let probs = predict(&inputs, params, model, solver)?;
    let pa: Vec<f64> = probs.iter().map(|p| p.0).collect();
    let pp: Vec<f64> = probs.iter().map(|p| p.1).collect();
    let la: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let lp: Vec<u8> = samples.iter().map(|s| s.poa_label).collect();
    Ok((
        metrics::evaluate(Task::Anomaly, &pa, &la, threshold)?,
        metrics::evaluate(Task::Poa, &pp, &lp, threshold)?,
    ))
}

pub fn evaluate_test(cfg: &RunConfig, data: &Prepared, params: &PadParameters) -> Result<(EvalReport, EvalReport)> {
    evaluate_samples(&data.test, params, &cfg.model, &cfg.solver, cfg.train.threshold)
}
