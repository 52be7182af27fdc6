//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`]; [`Tape::backward`] replays
//! the nodes in reverse insertion order, which is a valid reverse topological
//! order because a node can only reference nodes created before it.
//!
//! Tensors are rank-2 throughout and the leading dimension is the batch.

use crate::error::{PadError, Result};
use crate::tensor::{matmul_a_bt_into, matmul_at_b_into, same_shape, Tensor};

/// Probability clamp used by [`Tape::bce_sum`] and [`bce`].
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `base + Σ cᵢ·termᵢ`
    Combine(Var, Vec<(f64, Var)>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Row-wise `F[b] (H×N) · u[b] (N)` with a constant control `u`.
    Contract { field: Var, control: Tensor },
    /// `Σ_b −[t_b ln q_b + (1 − t_b) ln(1 − q_b)]` with clamped `q`.
    BceSum { pred: Var, targets: Vec<f64> },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the node was not reached from the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Constant copy of `v`'s current value: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let value = if value.shape().len() == 2 {
            value
        } else {
            let (r, c) = (value.rows(), value.cols());
            value.reshape(vec![r, c]).expect("rows*cols equals len")
        };
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(PadError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `x[r×c] + bias[1×c]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(PadError::Dimension {
                op: "add_row",
                detail: format!("{:?} + {:?}", xv.shape(), bv.shape()),
            });
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::matrix(xv.rows(), c, data)?;
        self.push("add_row", value, Op::AddRow(x, bias), &[x, bias])
    }

    /// `x·W + b`
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_row(xw, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push("scale", value, Op::Scale(a, s), &[a])
    }

    /// `base + Σ cᵢ·termᵢ`, all operands of the same shape.
    pub fn combine(&mut self, base: Var, terms: &[(f64, Var)]) -> Result<Var> {
        let mut value = self.value(base).clone();
        for &(c, t) in terms {
            let tv = self.value(t);
            same_shape("combine", &value, tv)?;
            for (o, x) in value.data_mut().iter_mut().zip(tv.data()) {
                *o += c * x;
            }
        }
        let mut inputs = vec![base];
        inputs.extend(terms.iter().map(|&(_, t)| t));
        self.push("combine", value, Op::Combine(base, terms.to_vec()), &inputs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    /// Treat each row of `field` (`B × hidden·channels`) as a `hidden × channels`
    /// matrix and multiply it by the matching row of `control` (`B × channels`).
    pub fn contract(&mut self, field: Var, control: &Tensor) -> Result<Var> {
        let fv = self.value(field);
        let (batch, channels) = (control.rows(), control.cols());
        if fv.rows() != batch || channels == 0 || fv.cols() % channels != 0 {
            return Err(PadError::Dimension {
                op: "contract",
                detail: format!("field {:?} with control {:?}", fv.shape(), control.shape()),
            });
        }
        let hidden = fv.cols() / channels;
        let mut out = vec![0.0; batch * hidden];
        for b in 0..batch {
            let u = &control.data()[b * channels..(b + 1) * channels];
            let frow = &fv.data()[b * hidden * channels..(b + 1) * hidden * channels];
            for i in 0..hidden {
                let fi = &frow[i * channels..(i + 1) * channels];
                out[b * hidden + i] = fi.iter().zip(u).map(|(x, y)| x * y).sum();
            }
        }
        let value = Tensor::matrix(batch, hidden, out)?;
        self.push(
            "contract",
            value,
            Op::Contract {
                field,
                control: control.clone(),
            },
            &[field],
        )
    }

    /// Summed binary cross-entropy of a `B×1` probability column against
    /// (possibly soft) constant targets.
    pub fn bce_sum(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != targets.len() {
            return Err(PadError::Dimension {
                op: "bce",
                detail: format!("{} predictions vs {} targets", pv.len(), targets.len()),
            });
        }
        let total: f64 = pv.data().iter().zip(targets).map(|(&q, &t)| bce(t, q)).sum();
        self.push(
            "bce",
            Tensor::scalar(total),
            Op::BceSum {
                pred,
                targets: targets.to_vec(),
            },
            &[pred],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept once; call
    /// [`Tape::reset`] before recording again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(PadError::Contract(
                "backward called twice on the same tape without reset".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(PadError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| (n.value.rows(), n.value.cols()))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    let ga = slot(grads, *a, m, k);
                    matmul_a_bt_into(g.data(), bv.data(), ga.data_mut(), m, n, k);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, k, n);
                    matmul_at_b_into(av.data(), g.data(), gb.data_mut(), m, k, n);
                }
            }
            Op::AddRow(x, bias) => {
                if wants(*x) {
                    accumulate(grads, *x, g)?;
                }
                if wants(*bias) {
                    let c = g.cols();
                    let gb = slot(grads, *bias, 1, c);
                    for row in g.data().chunks(c) {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g)?;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    accumulate_map(grads, *a, g, |i, gi| gi * bv.data()[i]);
                }
                if wants(*b) {
                    accumulate_map(grads, *b, g, |i, gi| gi * av.data()[i]);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    accumulate_map(grads, *a, g, |_, gi| gi * s);
                }
            }
            Op::Combine(base, terms) => {
                if wants(*base) {
                    accumulate(grads, *base, g)?;
                }
                for &(c, t) in terms {
                    if wants(t) {
                        accumulate_map(grads, t, g, |_, gi| gi * c);
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = &nodes[a.0].value;
                    accumulate_map(grads, *a, g, |i, gi| if x.data()[i] > 0.0 { gi } else { 0.0 });
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let y = &node.value;
                    accumulate_map(grads, *a, g, |i, gi| {
                        let t = y.data()[i];
                        gi * (1.0 - t * t)
                    });
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let y = &node.value;
                    accumulate_map(grads, *a, g, |i, gi| {
                        let s = y.data()[i];
                        gi * s * (1.0 - s)
                    });
                }
            }
            Op::Contract { field, control } => {
                if wants(*field) {
                    let fv = &nodes[field.0].value;
                    let (batch, channels) = (control.rows(), control.cols());
                    let hidden = fv.cols() / channels;
                    let gf = slot(grads, *field, batch, hidden * channels);
                    let gd = gf.data_mut();
                    for b in 0..batch {
                        let u = &control.data()[b * channels..(b + 1) * channels];
                        for i in 0..hidden {
                            let gi = g.data()[b * hidden + i];
                            let base = b * hidden * channels + i * channels;
                            for (o, uj) in gd[base..base + channels].iter_mut().zip(u) {
                                *o += gi * uj;
                            }
                        }
                    }
                }
            }
            Op::BceSum { pred, targets } => {
                if wants(*pred) {
                    let q = &nodes[pred.0].value;
                    let gs = g.data()[0];
                    accumulate_map(grads, *pred, q, |i, _| gs * bce_grad(targets[i], q.data()[i]));
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let gs = g.data()[0];
                    let av = &nodes[a.0].value;
                    accumulate_map(grads, *a, av, |_, _| gs);
                }
            }
        }
        Ok(())
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(g),
        empty => {
            *empty = Some(g.clone());
            Ok(())
        }
    }
}

/// Adds `f(i, g[i])` elementwise into the gradient slot of `v`; `g` supplies
/// the shape and the upstream values.
fn accumulate_map(grads: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
    let target = slot(grads, v, g.rows(), g.cols());
    for (i, (o, &gi)) in target.data_mut().iter_mut().zip(g.data()).enumerate() {
        *o += f(i, gi);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of prediction `q` against target `t`, with `q`
/// clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub fn bce(target: f64, pred: f64) -> f64 {
    let q = pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * q.ln() + (1.0 - target) * (1.0 - q).ln())
}

/// d bce / d pred; zero where the clamp is active.
fn bce_grad(target: f64, pred: f64) -> f64 {
    if pred < PROB_EPS || pred > 1.0 - PROB_EPS {
        return 0.0;
    }
    -target / pred + (1.0 - target) / (1.0 - pred)
}
