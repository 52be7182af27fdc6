//! Dual co-evolving NCDE network.
//!
//! Two hidden states evolve along the same control path:
//!
//! ```text
//! dh/dt = f(h) · dX/dt        f = tanh(MLP_f(h)) + tanh(MLP_c(h))
//! dz/dt = g(z) · dX/dt        g = tanh(MLP_g(z)) + tanh(MLP_c(z))
//! h(0) = FC_h(X(0)),  z(0) = FC_z(X(0))
//! p_anomaly = σ(FC_a(h(T))),  p_poa = σ(FC_p(z(T)))
//! ```
//!
//! `MLP_c` is one set of tensors used by both fields, so it is the only
//! coupling between the two states. The states are integrated jointly on a
//! reparameterised clock `s` (see [`ControlClock`]) which lets windows with
//! different sampling times share a step size inside one batch.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::path::{CubicSplinePath, TimeSeriesWindow};
use crate::solver::{integrate, OdeSystem, SolverConfig};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub hidden_dim: usize,
    pub width_f: usize,
    pub width_g: usize,
    pub width_c: usize,
    pub n_hidden_layers_f: usize,
    pub n_hidden_layers_g: usize,
    pub n_hidden_layers_c: usize,
    /// Include the shared branch `c` in both vector fields.
    pub shared_branch: bool,
    /// Append elapsed time as an extra path channel.
    pub append_time: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_channels: 1,
            hidden_dim: 8,
            width_f: 16,
            width_g: 16,
            width_c: 16,
            n_hidden_layers_f: 4,
            n_hidden_layers_g: 4,
            n_hidden_layers_c: 1,
            shared_branch: true,
            append_time: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_channels", self.n_channels),
            ("hidden_dim", self.hidden_dim),
            ("width_f", self.width_f),
            ("width_g", self.width_g),
            ("width_c", self.width_c),
            ("n_hidden_layers_f", self.n_hidden_layers_f),
            ("n_hidden_layers_g", self.n_hidden_layers_g),
            ("n_hidden_layers_c", self.n_hidden_layers_c),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(PadError::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Channels of the control path (data channels plus optional time).
    pub fn path_channels(&self) -> usize {
        self.n_channels + self.append_time as usize
    }

    /// Entries of one vector-field output: `hidden_dim × path_channels`.
    pub fn field_size(&self) -> usize {
        self.hidden_dim * self.path_channels()
    }

    fn mlp_shapes(&self, width: usize, hidden_layers: usize) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.hidden_dim, width)];
        shapes.extend((1..hidden_layers).map(|_| (width, width)));
        shapes.push((width, self.field_size()));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        let mlp = |shapes: Vec<(usize, usize)>| shapes.iter().map(|(i, o)| i * o + o).sum::<usize>();
        let mut n = mlp(self.mlp_shapes(self.width_f, self.n_hidden_layers_f))
            + mlp(self.mlp_shapes(self.width_g, self.n_hidden_layers_g));
        if self.shared_branch {
            n += mlp(self.mlp_shapes(self.width_c, self.n_hidden_layers_c));
        }
        let init = self.path_channels() * self.hidden_dim + self.hidden_dim;
        let head = self.hidden_dim + 1;
        n + 2 * init + 2 * head
    }

    /// Same model without the shared branch, with `width_f`/`width_g` widened
    /// by a common amount so the parameter count is as close as possible to
    /// this configuration's with the shared branch enabled.
    pub fn without_shared_branch_matched(&self) -> ModelConfig {
        let target = ModelConfig {
            shared_branch: true,
            ..self.clone()
        }
        .parameter_count() as i64;
        let mut best = ModelConfig {
            shared_branch: false,
            ..self.clone()
        };
        let mut best_gap = (best.parameter_count() as i64 - target).abs();
        for extra in 1..=4 * self.width_c.max(self.width_f) {
            let candidate = ModelConfig {
                width_f: self.width_f + extra,
                width_g: self.width_g + extra,
                shared_branch: false,
                ..self.clone()
            };
            let gap = candidate.parameter_count() as i64 - target;
            if gap.abs() < best_gap {
                best_gap = gap.abs();
                best = candidate;
            }
            if gap > best_gap {
                break;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    #[serde(rename = "theta_f")]
    F,
    #[serde(rename = "theta_g")]
    G,
    #[serde(rename = "theta_c")]
    C,
    #[serde(rename = "theta_h")]
    H,
    #[serde(rename = "theta_z")]
    Z,
    #[serde(rename = "theta_a")]
    A,
    #[serde(rename = "theta_p")]
    P,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::F,
        ParamGroup::G,
        ParamGroup::C,
        ParamGroup::H,
        ParamGroup::Z,
        ParamGroup::A,
        ParamGroup::P,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::F => "theta_f",
            ParamGroup::G => "theta_g",
            ParamGroup::C => "theta_c",
            ParamGroup::H => "theta_h",
            ParamGroup::Z => "theta_z",
            ParamGroup::A => "theta_a",
            ParamGroup::P => "theta_p",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Fully-connected layer `y = x·W + b`, `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        Linear {
            weight: Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("shape"),
            bias: Tensor::matrix(1, fan_out, draw(fan_out)).expect("shape"),
        }
    }

    fn zeros_like(&self) -> Linear {
        Linear {
            weight: Tensor::zeros(self.weight.rows(), self.weight.cols()),
            bias: Tensor::zeros(1, self.bias.cols()),
        }
    }
}

/// ReLU hidden layers followed by a tanh output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Every trainable tensor of the network, grouped as the training schedule
/// addresses them. Also used as the container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PadParameters {
    pub f: Mlp,
    pub g: Mlp,
    pub c: Option<Mlp>,
    pub h_init: Linear,
    pub z_init: Linear,
    pub anomaly_head: Linear,
    pub poa_head: Linear,
}

impl PadParameters {
    /// Uniform `±1/√fan_in` initialisation.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = |width, layers| Mlp {
            layers: cfg
                .mlp_shapes(width, layers)
                .into_iter()
                .map(|(i, o)| Linear::init(&mut rng, i, o))
                .collect(),
        };
        let f = mlp(cfg.width_f, cfg.n_hidden_layers_f);
        let g = mlp(cfg.width_g, cfg.n_hidden_layers_g);
        let c = cfg.shared_branch.then(|| mlp(cfg.width_c, cfg.n_hidden_layers_c));
        let x = cfg.path_channels();
        let h = cfg.hidden_dim;
        Ok(PadParameters {
            f,
            g,
            c,
            h_init: Linear::init(&mut rng, x, h),
            z_init: Linear::init(&mut rng, x, h),
            anomaly_head: Linear::init(&mut rng, h, 1),
            poa_head: Linear::init(&mut rng, h, 1),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mlp = |m: &Mlp| Mlp {
            layers: m.layers.iter().map(Linear::zeros_like).collect(),
        };
        PadParameters {
            f: mlp(&self.f),
            g: mlp(&self.g),
            c: self.c.as_ref().map(mlp),
            h_init: self.h_init.zeros_like(),
            z_init: self.z_init.zeros_like(),
            anomaly_head: self.anomaly_head.zeros_like(),
            poa_head: self.poa_head.zeros_like(),
        }
    }

    pub fn has_group(&self, group: ParamGroup) -> bool {
        group != ParamGroup::C || self.c.is_some()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL.into_iter().filter(|&g| self.has_group(g)).collect()
    }

    fn layers(&self, group: ParamGroup) -> Vec<&Linear> {
        match group {
            ParamGroup::F => self.f.layers.iter().collect(),
            ParamGroup::G => self.g.layers.iter().collect(),
            ParamGroup::C => self.c.iter().flat_map(|m| m.layers.iter()).collect(),
            ParamGroup::H => vec![&self.h_init],
            ParamGroup::Z => vec![&self.z_init],
            ParamGroup::A => vec![&self.anomaly_head],
            ParamGroup::P => vec![&self.poa_head],
        }
    }

    fn layers_mut(&mut self, group: ParamGroup) -> Vec<&mut Linear> {
        match group {
            ParamGroup::F => self.f.layers.iter_mut().collect(),
            ParamGroup::G => self.g.layers.iter_mut().collect(),
            ParamGroup::C => self.c.iter_mut().flat_map(|m| m.layers.iter_mut()).collect(),
            ParamGroup::H => vec![&mut self.h_init],
            ParamGroup::Z => vec![&mut self.z_init],
            ParamGroup::A => vec![&mut self.anomaly_head],
            ParamGroup::P => vec![&mut self.poa_head],
        }
    }

    /// Tensors of a group in a fixed order: weight, bias per layer.
    pub fn tensors(&self, group: ParamGroup) -> Vec<&Tensor> {
        self.layers(group)
            .into_iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor> {
        self.layers_mut(group)
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.tensors(group).iter().map(|t| t.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.groups().into_iter().map(|g| self.group_len(g)).sum()
    }

    /// Flattened copy of a group.
    pub fn flat(&self, group: ParamGroup) -> Vec<f64> {
        self.tensors(group)
            .into_iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Mutable access to coordinate `index` of the flattened group.
    pub fn coord_mut(&mut self, group: ParamGroup, mut index: usize) -> &mut f64 {
        for t in self.tensors_mut(group) {
            if index < t.len() {
                return &mut t.data_mut()[index];
            }
            index -= t.len();
        }
        panic!("coordinate out of range for {}", group.name());
    }

    /// Elementwise `self += other` over every shared group.
    pub fn add_assign(&mut self, other: &PadParameters) -> Result<()> {
        for group in self.groups() {
            if !other.has_group(group) {
                continue;
            }
            for (a, b) in self.tensors_mut(group).into_iter().zip(other.tensors(group)) {
                a.add_assign(b)?;
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for group in self.groups() {
            for t in self.tensors_mut(group) {
                t.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// Stable fingerprint of one group's exact bit pattern (FNV-1a).
    pub fn group_hash(&self, group: ParamGroup) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors(group) {
            for &d in t.shape() {
                h = fnv(h, d as u64);
            }
            for v in t.data() {
                h = fnv(h, v.to_bits());
            }
        }
        h
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = PadParameters::init(cfg, 0)?;
        for group in ParamGroup::ALL {
            if self.has_group(group) != expected.has_group(group) {
                return Err(PadError::Config(format!(
                    "group {} presence does not match model config",
                    group.name()
                )));
            }
            let a: Vec<_> = self.tensors(group).iter().map(|t| t.shape().to_vec()).collect();
            let b: Vec<_> = expected.tensors(group).iter().map(|t| t.shape().to_vec()).collect();
            if a != b {
                return Err(PadError::Config(format!(
                    "group {} shapes {a:?} do not match model config {b:?}",
                    group.name()
                )));
            }
        }
        Ok(())
    }
}

fn fnv(mut h: u64, word: u64) -> u64 {
    for byte in word.to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy)]
struct LinearVars {
    weight: Var,
    bias: Var,
}

/// Parameters as recorded on a tape. `c` is registered once and referenced
/// from both vector fields.
#[derive(Debug, Clone)]
pub struct ParamVars {
    f: Vec<LinearVars>,
    g: Vec<LinearVars>,
    c: Option<Vec<LinearVars>>,
    h_init: LinearVars,
    z_init: LinearVars,
    anomaly_head: LinearVars,
    poa_head: LinearVars,
}

impl ParamVars {
    /// Register `params` on `tape`. Groups outside `trainable` are recorded
    /// as constants and receive no gradient.
    pub fn register(tape: &mut Tape, params: &PadParameters, trainable: &[ParamGroup]) -> ParamVars {
        let mut lin = |l: &Linear, group: ParamGroup| {
            let train = trainable.contains(&group);
            let mut leaf = |t: &Tensor| {
                if train {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            };
            LinearVars {
                weight: leaf(&l.weight),
                bias: leaf(&l.bias),
            }
        };
        ParamVars {
            f: params.f.layers.iter().map(|l| lin(l, ParamGroup::F)).collect(),
            g: params.g.layers.iter().map(|l| lin(l, ParamGroup::G)).collect(),
            c: params
                .c
                .as_ref()
                .map(|m| m.layers.iter().map(|l| lin(l, ParamGroup::C)).collect()),
            h_init: lin(&params.h_init, ParamGroup::H),
            z_init: lin(&params.z_init, ParamGroup::Z),
            anomaly_head: lin(&params.anomaly_head, ParamGroup::A),
            poa_head: lin(&params.poa_head, ParamGroup::P),
        }
    }

    /// Read the gradients of every registered tensor into a parameter-shaped
    /// container (zeros for constants and unreached tensors).
    pub fn gradients(&self, grads: &Gradients, like: &PadParameters) -> PadParameters {
        let lin = |v: &LinearVars| Linear {
            weight: grads.get(v.weight),
            bias: grads.get(v.bias),
        };
        let mlp = |vs: &[LinearVars]| Mlp {
            layers: vs.iter().map(lin).collect(),
        };
        let out = PadParameters {
            f: mlp(&self.f),
            g: mlp(&self.g),
            c: self.c.as_deref().map(mlp),
            h_init: lin(&self.h_init),
            z_init: lin(&self.z_init),
            anomaly_head: lin(&self.anomaly_head),
            poa_head: lin(&self.poa_head),
        };
        debug_assert_eq!(out.parameter_count(), like.parameter_count());
        out
    }
}

fn mlp_forward(tape: &mut Tape, layers: &[LinearVars], x: Var) -> Result<Var> {
    let mut a = x;
    let last = layers.len() - 1;
    for (i, l) in layers.iter().enumerate() {
        a = tape.affine(a, l.weight, l.bias)?;
        a = if i == last { tape.tanh(a)? } else { tape.relu(a)? };
    }
    Ok(a)
}

/// Which output branches a forward pass needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branches {
    Anomaly,
    Poa,
    Both,
}

impl Branches {
    fn anomaly(self) -> bool {
        matches!(self, Branches::Anomaly | Branches::Both)
    }
    fn poa(self) -> bool {
        matches!(self, Branches::Poa | Branches::Both)
    }
}

/// Batch field `f(h)` as `B × (hidden·channels)`.
fn field_f(tape: &mut Tape, vars: &ParamVars, h: Var) -> Result<Var> {
    let own = mlp_forward(tape, &vars.f, h)?;
    match &vars.c {
        Some(c) => {
            let shared = mlp_forward(tape, c, h)?;
            tape.add(own, shared)
        }
        None => Ok(own),
    }
}

fn field_g(tape: &mut Tape, vars: &ParamVars, z: Var) -> Result<Var> {
    let own = mlp_forward(tape, &vars.g, z)?;
    match &vars.c {
        Some(c) => {
            let shared = mlp_forward(tape, c, z)?;
            tape.add(own, shared)
        }
        None => Ok(own),
    }
}

/// Maps the integration clock `s` onto each window's timeline.
///
/// Knot-aligned: `s ∈ [0, n_intervals]`, interval `i` covering `[i, i+1]`.
/// Otherwise `s ∈ [0, 1]` spanning the window linearly. Both maps are affine
/// per piece, so `dX/ds = dX/dt · dt/ds` and the integral is unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlClock {
    KnotAligned { n_intervals: usize },
    Uniform,
}

impl ControlClock {
    pub fn end(self) -> f64 {
        match self {
            ControlClock::KnotAligned { n_intervals } => n_intervals as f64,
            ControlClock::Uniform => 1.0,
        }
    }

    fn control(self, path: &CubicSplinePath, s: f64) -> Vec<f64> {
        let s = s.clamp(0.0, self.end());
        match self {
            ControlClock::KnotAligned { n_intervals } => {
                let i = (s.floor() as usize).min(n_intervals - 1);
                let width = path.interval_width(i);
                let u = (s - i as f64) * width;
                let mut d = path.derivative_at(i, u);
                d.iter_mut().for_each(|v| *v *= width);
                d
            }
            ControlClock::Uniform => {
                let (lo, hi) = path.domain();
                let t = (lo + s * (hi - lo)).clamp(lo, hi);
                let mut d = path.eval_derivative(t).expect("t clamped into domain").into_data();
                d.iter_mut().for_each(|v| *v *= hi - lo);
                d
            }
        }
    }
}

/// Number of integration steps a window needs, and the clock it runs on.
pub fn step_plan(window: &TimeSeriesWindow, solver: &SolverConfig) -> (ControlClock, usize) {
    if solver.knot_aligned {
        let n = window.n_obs() - 1;
        (ControlClock::KnotAligned { n_intervals: n }, n * solver.steps_per_window)
    } else {
        (ControlClock::Uniform, solver.steps_per_window)
    }
}

/// Spline fitted to a window, with elapsed time appended when configured.
pub fn control_path(window: &TimeSeriesWindow, cfg: &ModelConfig) -> Result<CubicSplinePath> {
    if window.n_channels() != cfg.n_channels {
        return Err(PadError::Input(format!(
            "window {} has {} channels, model expects {}",
            window.window_index(),
            window.n_channels(),
            cfg.n_channels
        )));
    }
    if !cfg.append_time {
        return CubicSplinePath::fit(window);
    }
    let t0 = window.times()[0];
    let c = window.n_channels();
    let mut values = Vec::with_capacity(window.n_obs() * (c + 1));
    for i in 0..window.n_obs() {
        values.extend_from_slice(window.observation(i));
        values.push(window.times()[i] - t0);
    }
    CubicSplinePath::from_knots(window.times(), &values, c + 1)
}

#[derive(Clone, Copy)]
struct JointState {
    h: Option<Var>,
    z: Option<Var>,
}

struct CoEvolvingSystem<'a> {
    tape: &'a mut Tape,
    vars: &'a ParamVars,
    paths: &'a [CubicSplinePath],
    clock: ControlClock,
}

impl CoEvolvingSystem<'_> {
    fn control(&self, s: f64) -> Result<Tensor> {
        let channels = self.paths[0].n_channels();
        let data: Vec<f64> = self
            .paths
            .iter()
            .flat_map(|p| self.clock.control(p, s))
            .collect();
        Tensor::matrix(self.paths.len(), channels, data)
    }
}

impl OdeSystem for CoEvolvingSystem<'_> {
    type State = JointState;

    fn derivative(&mut self, s: f64, state: &JointState) -> Result<JointState> {
        let u = self.control(s)?;
        let h = match state.h {
            Some(h) => {
                let f = field_f(self.tape, self.vars, h)?;
                Some(self.tape.contract(f, &u)?)
            }
            None => None,
        };
        let z = match state.z {
            Some(z) => {
                let g = field_g(self.tape, self.vars, z)?;
                Some(self.tape.contract(g, &u)?)
            }
            None => None,
        };
        Ok(JointState { h, z })
    }

    fn combine(&mut self, base: &JointState, terms: &[(f64, &JointState)]) -> Result<JointState> {
        let mut part = |pick: fn(&JointState) -> Option<Var>| -> Result<Option<Var>> {
            match pick(base) {
                Some(b) => {
                    let ts: Vec<(f64, Var)> = terms
                        .iter()
                        .map(|(c, s)| (*c, pick(s).expect("branch present in all stages")))
                        .collect();
                    Ok(Some(self.tape.combine(b, &ts)?))
                }
                None => Ok(None),
            }
        };
        Ok(JointState {
            h: part(|s| s.h)?,
            z: part(|s| s.z)?,
        })
    }

    fn is_finite(&self, state: &JointState) -> bool {
        [state.h, state.z]
            .into_iter()
            .flatten()
            .all(|v| self.tape.value(v).is_finite())
    }
}

/// Tape nodes produced by a batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `B × 1`
    pub p_anomaly: Option<Var>,
    pub p_poa: Option<Var>,
    /// `B × hidden`
    pub h_final: Option<Var>,
    pub z_final: Option<Var>,
}

/// Record the network on `tape` for a batch of windows that share a step plan.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    windows: &[&TimeSeriesWindow],
    branches: Branches,
    model: &ModelConfig,
    solver: &SolverConfig,
) -> Result<ForwardVars> {
    if windows.is_empty() {
        return Err(PadError::Input("empty batch".into()));
    }
    solver.validate()?;
    let (clock, n_steps) = step_plan(windows[0], solver);
    if windows.iter().any(|w| step_plan(w, solver).1 != n_steps) {
        return Err(PadError::Input(
            "windows in one tape batch must share the same observation count".into(),
        ));
    }
    let paths = windows
        .iter()
        .map(|w| control_path(w, model))
        .collect::<Result<Vec<_>>>()?;

    let channels = model.path_channels();
    let x0: Vec<f64> = paths
        .iter()
        .flat_map(|p| p.eval(p.domain().0).expect("start of domain").into_data())
        .collect();
    let x0 = tape.constant(Tensor::matrix(windows.len(), channels, x0)?);

    let h0 = if branches.anomaly() {
        Some(tape.affine(x0, vars.h_init.weight, vars.h_init.bias)?)
    } else {
        None
    };
    let z0 = if branches.poa() {
        Some(tape.affine(x0, vars.z_init.weight, vars.z_init.bias)?)
    } else {
        None
    };

    let mut system = CoEvolvingSystem {
        tape,
        vars,
        paths: &paths,
        clock,
    };
    let end = integrate(
        &mut system,
        JointState { h: h0, z: z0 },
        0.0,
        clock.end(),
        n_steps,
        solver.scheme,
    )
    .map_err(|e| e.in_window(windows[0].window_index()))?;

    let p_anomaly = match end.h {
        Some(h) => {
            let logit = tape.affine(h, vars.anomaly_head.weight, vars.anomaly_head.bias)?;
            Some(tape.sigmoid(logit)?)
        }
        None => None,
    };
    let p_poa = match end.z {
        Some(z) => {
            let logit = tape.affine(z, vars.poa_head.weight, vars.poa_head.bias)?;
            Some(tape.sigmoid(logit)?)
        }
        None => None,
    };
    Ok(ForwardVars {
        p_anomaly,
        p_poa,
        h_final: end.h,
        z_final: end.z,
    })
}

/// Result of running the network on one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutput {
    pub p_anomaly: f64,
    pub p_poa: f64,
    pub h_final: Tensor,
    pub z_final: Tensor,
}

pub fn forward(
    window: &TimeSeriesWindow,
    params: &PadParameters,
    model: &ModelConfig,
    solver: &SolverConfig,
) -> Result<WindowOutput> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, &[]);
    let out = forward_on_tape(&mut tape, &vars, &[window], Branches::Both, model, solver)?;
    let get = |v: Option<Var>| tape.value(v.expect("both branches")).clone();
    Ok(WindowOutput {
        p_anomaly: get(out.p_anomaly).data()[0],
        p_poa: get(out.p_poa).data()[0],
        h_final: get(out.h_final),
        z_final: get(out.z_final),
    })
}

/// Group window indices into tape batches: same step count, at most
/// `shard_size` windows each, in first-appearance order.
pub fn shard_indices(windows: &[&TimeSeriesWindow], solver: &SolverConfig, shard_size: usize) -> Vec<Vec<usize>> {
    let mut by_steps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        let steps = step_plan(w, solver).1;
        let entry = by_steps.entry(steps).or_default();
        if entry.is_empty() {
            order.push(steps);
        }
        entry.push(i);
    }
    let shard_size = shard_size.max(1);
    order
        .into_iter()
        .flat_map(|steps| {
            by_steps[&steps]
                .chunks(shard_size)
                .map(<[usize]>::to_vec)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `(p_anomaly, p_poa)` for every window, computed in parallel shards.
pub fn predict(
    windows: &[TimeSeriesWindow],
    params: &PadParameters,
    model: &ModelConfig,
    solver: &SolverConfig,
) -> Result<Vec<(f64, f64)>> {
    let refs: Vec<&TimeSeriesWindow> = windows.iter().collect();
    let shards = shard_indices(&refs, solver, 32);
    let results = shards
        .par_iter()
        .map(|idx| {
            let batch: Vec<&TimeSeriesWindow> = idx.iter().map(|&i| refs[i]).collect();
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, params, &[]);
            let out = forward_on_tape(&mut tape, &vars, &batch, Branches::Both, model, solver)
                .map_err(|e| locate_divergence(e, &batch, params, model, solver))?;
            let pa = tape.value(out.p_anomaly.expect("anomaly")).data().to_vec();
            let pp = tape.value(out.p_poa.expect("poa")).data().to_vec();
            Ok(idx.iter().copied().zip(pa.into_iter().zip(pp)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![(0.0, 0.0); windows.len()];
    for (i, p) in results.into_iter().flatten() {
        out[i] = p;
    }
    Ok(out)
}

/// Re-run a diverged batch window by window so the error names the culprit.
pub(crate) fn locate_divergence(
    err: PadError,
    batch: &[&TimeSeriesWindow],
    params: &PadParameters,
    model: &ModelConfig,
    solver: &SolverConfig,
) -> PadError {
    if !matches!(err, PadError::Divergence { .. }) || batch.len() == 1 {
        return err;
    }
    for w in batch {
        if let Err(e @ PadError::Divergence { .. }) = forward(w, params, model, solver) {
            return e;
        }
    }
    err
}

/// `f(h)` for a single state, reshaped to `hidden × path_channels`.
pub fn vector_field_f(h: &Tensor, params: &PadParameters, model: &ModelConfig) -> Result<Tensor> {
    single_field(h, params, model, true)
}

/// `g(z)` for a single state, reshaped to `hidden × path_channels`.
pub fn vector_field_g(z: &Tensor, params: &PadParameters, model: &ModelConfig) -> Result<Tensor> {
    single_field(z, params, model, false)
}

fn single_field(state: &Tensor, params: &PadParameters, model: &ModelConfig, is_f: bool) -> Result<Tensor> {
    if state.len() != model.hidden_dim {
        return Err(PadError::Dimension {
            op: "vector_field",
            detail: format!("state of {} entries, hidden_dim {}", state.len(), model.hidden_dim),
        });
    }
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, &[]);
    let x = tape.constant(Tensor::row(state.data().to_vec()));
    let out = if is_f {
        field_f(&mut tape, &vars, x)?
    } else {
        field_g(&mut tape, &vars, x)?
    };
    tape.value(out)
        .clone()
        .reshape(vec![model.hidden_dim, model.path_channels()])
}

/// `(h(0), z(0))` from the first path value.
pub fn init_states(x0: &Tensor, params: &PadParameters) -> Result<(Tensor, Tensor)> {
    let x = Tensor::row(x0.data().to_vec());
    let map = |l: &Linear| -> Result<Tensor> {
        let mut y = x.matmul(&l.weight)?;
        y.add_assign(&l.bias)?;
        Ok(y)
    };
    Ok((map(&params.h_init)?, map(&params.z_init)?))
}
