//! Tape gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BatchSample;
use crate::error::Result;
use crate::model::{ModelConfig, PadParameters, ParamGroup};
use crate::path::TimeSeriesWindow;
use crate::solver::{Scheme, SolverConfig};
use crate::train::joint_loss_and_gradients;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub solver: SolverConfig,
    pub window: usize,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig {
                n_channels: 3,
                hidden_dim: 4,
                width_f: 5,
                width_g: 5,
                width_c: 5,
                ..ModelConfig::default()
            },
            solver: SolverConfig {
                scheme: Scheme::Rk4,
                steps_per_window: 16,
                knot_aligned: false,
            },
            window: 8,
            batch: 3,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub coordinates: usize,
    pub max_rel_err: f64,
    /// Largest analytic gradient magnitude in the group.
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Random irregularly sampled windows, labels and soft PoA targets.
pub fn random_problem(cfg: &GradcheckConfig) -> Result<(Vec<BatchSample>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.model.n_channels;
    let mut samples = Vec::with_capacity(cfg.batch);
    for i in 0..cfg.batch {
        let mut t = 0.0;
        let times: Vec<f64> = (0..cfg.window)
            .map(|_| {
                t += rng.gen_range(0.5..1.5);
                t
            })
            .collect();
        let values: Vec<f64> = (0..cfg.window * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let input = TimeSeriesWindow::new(times, values, n, Vec::new(), i)?;
        samples.push(BatchSample {
            teacher: input.prefix(2)?,
            input,
            label: rng.gen_bool(0.5) as u8,
            poa_label: 0,
        });
    }
    let targets = (0..cfg.batch).map(|_| rng.gen_range(0.05..0.95)).collect();
    Ok((samples, targets))
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let (samples, targets) = random_problem(cfg)?;
    let batch: Vec<&BatchSample> = samples.iter().collect();
    let params = PadParameters::init(&cfg.model, cfg.seed)?;
    let loss = |p: &PadParameters| -> Result<f64> {
        Ok(joint_loss_and_gradients(&batch, p, &cfg.model, &cfg.solver, Some(&targets))?.0)
    };
    let (_, grads) = joint_loss_and_gradients(&batch, &params, &cfg.model, &cfg.solver, Some(&targets))?;

    let mut groups = Vec::new();
    for group in params.groups() {
        let analytic = grads.flat(group);
        let mut max_rel_err: f64 = 0.0;
        let mut probe = params.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let x = *probe.coord_mut(group, i);
            *probe.coord_mut(group, i) = x + cfg.step;
            let up = loss(&probe)?;
            *probe.coord_mut(group, i) = x - cfg.step;
            let down = loss(&probe)?;
            *probe.coord_mut(group, i) = x;
            let numeric = (up - down) / (2.0 * cfg.step);
            max_rel_err = max_rel_err.max(relative_error(a, numeric));
        }
        groups.push(GroupCheck {
            group,
            coordinates: analytic.len(),
            max_rel_err,
            max_abs_grad: analytic.iter().fold(0.0, |m, g| m.max(g.abs())),
        });
    }
    let max_rel_err = groups.iter().fold(0.0, |m: f64, g| m.max(g.max_rel_err));
    Ok(GradcheckReport {
        passed: max_rel_err <= cfg.tolerance,
        max_rel_err,
        tolerance: cfg.tolerance,
        groups,
    })
}
