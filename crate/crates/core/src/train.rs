//! Multi-task training with knowledge distillation.
//!
//! Each iteration runs three updates in order:
//!
//! 1. `θ_f, θ_h, θ_a` on the anomaly loss of the input windows;
//! 2. `θ_g, θ_z, θ_p` on the distillation loss, where the anomaly branch
//!    reads the first `p` observations of the next window (teacher, detached)
//!    and the PoA branch reads the input window (student);
//! 3. `θ_c` on the sum of both losses, recomputed after steps 1 and 2.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, BatchSample};
use crate::error::{PadError, Result};
use crate::metrics::{self, Task};
use crate::model::{
    forward_on_tape, locate_divergence, predict, shard_indices, Branches, ModelConfig, PadParameters,
    ParamGroup, ParamVars,
};
use crate::path::TimeSeriesWindow;
use crate::solver::SolverConfig;
use crate::tape::{bce, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Observations per window (`b`).
    pub window_size: usize,
    /// PoA horizon / output length (`p`).
    pub poa_horizon: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Windows per tape shard; shards run in parallel and are reduced in order.
    pub shard_size: usize,
    /// Trailing fraction of training windows held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 256,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            window_size: 30,
            poa_horizon: 10,
            seed: 0,
            threshold: 0.5,
            shard_size: 16,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(PadError::Config("train.window_size must be >= 2".into()));
        }
        if self.poa_horizon == 0 || self.poa_horizon > self.window_size {
            return Err(PadError::Config(format!(
                "train.poa_horizon must be in 1..={}, got {}",
                self.window_size, self.poa_horizon
            )));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(PadError::Config("learning_rate and weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.shard_size == 0 {
            return Err(PadError::Config("batch_size and shard_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(PadError::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Anomaly loss with a hard target.
pub fn loss_anomaly(p_anomaly: f64, label: u8) -> f64 {
    bce(label as f64, p_anomaly)
}

/// Distillation loss: teacher probability as the soft target for the student.
pub fn loss_kd(teacher_p: f64, student_p: f64) -> f64 {
    bce(teacher_p, student_p)
}

/// Parameter groups each sub-step updates.
pub const ANOMALY_GROUPS: [ParamGroup; 3] = [ParamGroup::F, ParamGroup::H, ParamGroup::A];
pub const KD_GROUPS: [ParamGroup; 3] = [ParamGroup::G, ParamGroup::Z, ParamGroup::P];
pub const SHARED_GROUPS: [ParamGroup; 1] = [ParamGroup::C];

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Running moments for one flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    /// One AdamW step: bias-corrected moments, decoupled weight decay.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * params[i]);
        }
    }
}

/// AdamW with one moment state per parameter group.
#[derive(Debug, Clone, Default)]
pub struct Optimizer {
    states: BTreeMap<ParamGroup, AdamState>,
}

impl Optimizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Update only `groups` of `params` with the matching entries of `grads`.
    /// Nothing is modified if any selected gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut PadParameters,
        grads: &PadParameters,
        groups: &[ParamGroup],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let groups: Vec<ParamGroup> = groups.iter().copied().filter(|&g| params.has_group(g)).collect();
        for &g in &groups {
            if grads.flat(g).iter().any(|v| !v.is_finite()) {
                return Err(PadError::NonFiniteGradient { group: g.name() });
            }
        }
        for g in groups {
            let mut flat = params.flat(g);
            self.states
                .entry(g)
                .or_default()
                .step(&mut flat, &grads.flat(g), lr, weight_decay);
            let mut k = 0;
            for t in params.tensors_mut(g) {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[k..k + n]);
                k += n;
            }
        }
        Ok(())
    }
}

/// Which loss a gradient pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Anomaly,
    Distill,
    Joint,
}

struct Pass<'a> {
    params: &'a PadParameters,
    model: &'a ModelConfig,
    solver: &'a SolverConfig,
    shard_size: usize,
}

/// Batch-mean loss and gradient.
struct LossGrad {
    loss: f64,
    grads: PadParameters,
}

impl Pass<'_> {
    /// Teacher probabilities: anomaly branch on the teacher windows, no
    /// gradient.
    fn teacher_probs(&self, batch: &[&BatchSample]) -> Result<Vec<f64>> {
        let teachers: Vec<&TimeSeriesWindow> = batch.iter().map(|s| &s.teacher).collect();
        let shards = shard_indices(&teachers, self.solver, self.shard_size);
        let parts = shards
            .par_iter()
            .map(|idx| {
                let windows: Vec<&TimeSeriesWindow> = idx.iter().map(|&i| teachers[i]).collect();
                let mut tape = Tape::new();
                let vars = ParamVars::register(&mut tape, self.params, &[]);
                let out = forward_on_tape(&mut tape, &vars, &windows, Branches::Anomaly, self.model, self.solver)
                    .map_err(|e| locate_divergence(e, &windows, self.params, self.model, self.solver))?;
                let pa = tape.value(out.p_anomaly.expect("anomaly branch")).data().to_vec();
                Ok(idx.iter().copied().zip(pa).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut probs = vec![0.0; batch.len()];
        for (i, p) in parts.into_iter().flatten() {
            probs[i] = p;
        }
        Ok(probs)
    }

    fn run(&self, batch: &[&BatchSample], objective: Objective, trainable: &[ParamGroup]) -> Result<LossGrad> {
        let teacher = match objective {
            Objective::Anomaly => None,
            _ => Some(self.teacher_probs(batch)?),
        };
        let inputs: Vec<&TimeSeriesWindow> = batch.iter().map(|s| &s.input).collect();
        let shards = shard_indices(&inputs, self.solver, self.shard_size);
        let partials = shards
            .par_iter()
            .map(|idx| {
                let windows: Vec<&TimeSeriesWindow> = idx.iter().map(|&i| inputs[i]).collect();
                let labels: Vec<f64> = idx.iter().map(|&i| batch[i].label as f64).collect();
                let targets: Option<Vec<f64>> = teacher.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect());
                self.shard(&windows, &labels, targets.as_deref(), objective, trainable)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            grads.add_assign(&g)?;
        }
        let n = batch.len() as f64;
        grads.scale_in_place(1.0 / n);
        Ok(LossGrad { loss: loss / n, grads })
    }

    fn shard(
        &self,
        windows: &[&TimeSeriesWindow],
        labels: &[f64],
        teacher: Option<&[f64]>,
        objective: Objective,
        trainable: &[ParamGroup],
    ) -> Result<(f64, PadParameters)> {
        let branches = match objective {
            Objective::Anomaly => Branches::Anomaly,
            Objective::Distill => Branches::Poa,
            Objective::Joint => Branches::Both,
        };
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, self.params, trainable);
        let out = forward_on_tape(&mut tape, &vars, windows, branches, self.model, self.solver)
            .map_err(|e| locate_divergence(e, windows, self.params, self.model, self.solver))?;
        let mut terms: Vec<Var> = Vec::new();
        if let Some(pa) = out.p_anomaly {
            terms.push(tape.bce_sum(pa, labels)?);
        }
        if let (Some(pp), Some(t)) = (out.p_poa, teacher) {
            terms.push(tape.bce_sum(pp, t)?);
        }
        let loss = match terms[..] {
            [one] => one,
            [a, b] => tape.add(a, b)?,
            _ => unreachable!("every objective produces one or two loss terms"),
        };
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, vars.gradients(&grads, self.params)))
    }
}

/// Batch-mean losses observed before the corresponding updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLosses {
    pub anomaly: f64,
    pub kd: f64,
}

/// Hooks observing parameters between the sub-steps of an iteration.
pub trait StepObserver {
    fn after_substep(&mut self, _substep: usize, _params: &PadParameters) {}
}

impl StepObserver for () {}

pub fn train_iteration(
    batch: &[&BatchSample],
    params: &mut PadParameters,
    optimizer: &mut Optimizer,
    model: &ModelConfig,
    solver: &SolverConfig,
    cfg: &TrainConfig,
) -> Result<IterationLosses> {
    train_iteration_observed(batch, params, optimizer, model, solver, cfg, &mut ())
}

pub fn train_iteration_observed(
    batch: &[&BatchSample],
    params: &mut PadParameters,
    optimizer: &mut Optimizer,
    model: &ModelConfig,
    solver: &SolverConfig,
    cfg: &TrainConfig,
    observer: &mut dyn StepObserver,
) -> Result<IterationLosses> {
    if batch.is_empty() {
        return Err(PadError::Input("empty training batch".into()));
    }
    let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);

    let step1 = {
        let pass = Pass { params: &*params, model, solver, shard_size: cfg.shard_size };
        pass.run(batch, Objective::Anomaly, &ANOMALY_GROUPS)?
    };
    optimizer.step(params, &step1.grads, &ANOMALY_GROUPS, lr, wd)?;
    observer.after_substep(1, params);

    let step2 = {
        let pass = Pass { params: &*params, model, solver, shard_size: cfg.shard_size };
        pass.run(batch, Objective::Distill, &KD_GROUPS)?
    };
    optimizer.step(params, &step2.grads, &KD_GROUPS, lr, wd)?;
    observer.after_substep(2, params);

    if params.has_group(ParamGroup::C) {
        let step3 = {
            let pass = Pass { params: &*params, model, solver, shard_size: cfg.shard_size };
            pass.run(batch, Objective::Joint, &SHARED_GROUPS)?
        };
        optimizer.step(params, &step3.grads, &SHARED_GROUPS, lr, wd)?;
    }
    observer.after_substep(3, params);

    Ok(IterationLosses {
        anomaly: step1.loss,
        kd: step2.loss,
    })
}

/// Batch-mean joint loss `L_a + CE(target, p_poa)` on the input windows and
/// its gradient with respect to every parameter group. With
/// `poa_targets = None` the PoA term uses detached teacher outputs.
pub fn joint_loss_and_gradients(
    batch: &[&BatchSample],
    params: &PadParameters,
    model: &ModelConfig,
    solver: &SolverConfig,
    poa_targets: Option<&[f64]>,
) -> Result<(f64, PadParameters)> {
    let pass = Pass {
        params,
        model,
        solver,
        shard_size: batch.len().max(1),
    };
    let groups = params.groups();
    match poa_targets {
        None => {
            let r = pass.run(batch, Objective::Joint, &groups)?;
            Ok((r.loss, r.grads))
        }
        Some(targets) => {
            let windows: Vec<&TimeSeriesWindow> = batch.iter().map(|s| &s.input).collect();
            let labels: Vec<f64> = batch.iter().map(|s| s.label as f64).collect();
            let (loss, mut grads) = pass.shard(&windows, &labels, Some(targets), Objective::Joint, &groups)?;
            grads.scale_in_place(1.0 / batch.len() as f64);
            Ok((loss / batch.len() as f64, grads))
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_a")]
    pub loss_anomaly: f64,
    #[serde(rename = "L_KD")]
    pub loss_kd: f64,
    pub val_f1_anomaly: f64,
    pub val_f1_poa: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best_params: PadParameters,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub best_score: f64,
    pub history: Vec<EpochLog>,
}

/// Validation `(anomaly F1, PoA F1)`.
pub fn validation_f1(
    samples: &[BatchSample],
    params: &PadParameters,
    model: &ModelConfig,
    solver: &SolverConfig,
    threshold: f64,
) -> Result<(f64, f64)> {
    let windows: Vec<TimeSeriesWindow> = samples.iter().map(|s| s.input.clone()).collect();
    let probs = predict(&windows, params, model, solver)?;
    let pa: Vec<f64> = probs.iter().map(|p| p.0).collect();
    let pp: Vec<f64> = probs.iter().map(|p| p.1).collect();
    let la: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let lp: Vec<u8> = samples.iter().map(|s| s.poa_label).collect();
    let a = metrics::evaluate(Task::Anomaly, &pa, &la, threshold)?;
    let p = metrics::evaluate(Task::Poa, &pp, &lp, threshold)?;
    Ok((a.f1, p.f1))
}

/// Train for `cfg.epochs` epochs, validating after each, and return the
/// snapshot with the best summed validation F1 (earliest on ties).
pub fn fit(
    train: &[BatchSample],
    val: &[BatchSample],
    init: PadParameters,
    model: &ModelConfig,
    solver: &SolverConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PadError::Input("empty training set".into()));
    }
    let mut params = init;
    let mut best = FitResult {
        best_params: params.clone(),
        best_epoch: 0,
        best_score: f64::NEG_INFINITY,
        history: Vec::new(),
    };
    if cfg.epochs == 0 {
        return Ok(best);
    }
    if val.is_empty() {
        return Err(PadError::Input("empty validation set".into()));
    }

    let mut optimizer = Optimizer::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch-{epoch}")));
        order.shuffle(&mut rng);
        let (mut la, mut lkd, mut iters) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&BatchSample> = chunk.iter().map(|&i| &train[i]).collect();
            let losses = train_iteration(&batch, &mut params, &mut optimizer, model, solver, cfg)?;
            la += losses.anomaly;
            lkd += losses.kd;
            iters += 1;
        }
        let (f1_a, f1_p) = validation_f1(val, &params, model, solver, cfg.threshold)?;
        let log = EpochLog {
            epoch,
            loss_anomaly: la / iters as f64,
            loss_kd: lkd / iters as f64,
            val_f1_anomaly: f1_a,
            val_f1_poa: f1_p,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_epoch(&log);
        best.history.push(log);
        let score = f1_a + f1_p;
        if score > best.best_score {
            best.best_score = score;
            best.best_epoch = epoch;
            best.best_params = params.clone();
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anomaly_loss_reference_values() {
        assert!(loss_anomaly(1.0 - 1e-7, 1) < 1e-6);
        assert!((loss_anomaly(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss_anomaly(0.25, 1) - 1.386_294_361).abs() < 1e-8);
    }

    #[test]
    fn kd_loss_reference_values() {
        // equal teacher and student gives the teacher's entropy
        let t: f64 = 0.3;
        let entropy = -(t * t.ln() + (1.0 - t) * (1.0 - t).ln());
        assert!((loss_kd(t, t) - entropy).abs() < 1e-12);
        assert!((loss_kd(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss_kd(0.8, 0.6) - 0.591_918_6).abs() < 1e-6);
        // minimum over the student is at the teacher
        for s in [0.1, 0.2, 0.29, 0.31, 0.5, 0.9] {
            assert!(loss_kd(t, s) > loss_kd(t, t));
        }
    }

    #[test]
    fn adam_zero_gradient_no_decay_is_identity() {
        let mut st = AdamState::default();
        let mut p = vec![1.0, -2.0];
        st.step(&mut p, &[0.0, 0.0], 0.1, 0.0);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_descends_half_square() {
        let mut st = AdamState::default();
        let mut p = vec![1.0];
        // f = θ²/2, ∇f = θ
        let g = p.clone();
        st.step(&mut p, &g, 0.01, 0.0);
        assert!(p[0] < 1.0 && p[0] > 0.0);
    }

    #[test]
    fn adam_reaches_quadratic_minimum() {
        // f(x, y) = (x − 3)² + 10 (y + 1)², minimum at (3, −1)
        let mut st = AdamState::default();
        let mut p = vec![0.0, 0.0];
        for k in 0..500 {
            let g = vec![2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)];
            let lr = if k < 400 { 0.1 } else { 0.01 };
            st.step(&mut p, &g, lr, 0.0);
        }
        assert!((p[0] - 3.0).abs() < 1e-3 && (p[1] + 1.0).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn non_finite_gradient_aborts_with_group_name() {
        let cfg = ModelConfig {
            n_channels: 2,
            hidden_dim: 2,
            width_f: 3,
            width_g: 3,
            width_c: 3,
            ..ModelConfig::default()
        };
        let mut p = PadParameters::init(&cfg, 0).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        *g.coord_mut(ParamGroup::G, 1) = f64::NAN;
        let mut opt = Optimizer::new();
        let err = opt.step(&mut p, &g, &[ParamGroup::F, ParamGroup::G], 0.1, 0.0).unwrap_err();
        assert!(matches!(err, PadError::NonFiniteGradient { group: "theta_g" }));
        assert_eq!(p, before);
    }
}
