use pad_core::model::{
    forward, init_states, predict, vector_field_f, vector_field_g, Linear, Mlp, ModelConfig, PadParameters,
    ParamGroup,
};
use pad_core::path::{CubicSplinePath, TimeSeriesWindow};
use pad_core::solver::{Scheme, SolverConfig};
use pad_core::tensor::Tensor;
use proptest::prelude::*;

fn cfg() -> ModelConfig {
    ModelConfig {
        n_channels: 2,
        hidden_dim: 3,
        width_f: 4,
        width_g: 5,
        width_c: 3,
        n_hidden_layers_f: 2,
        n_hidden_layers_g: 1,
        n_hidden_layers_c: 1,
        shared_branch: true,
        append_time: false,
    }
}

fn window(n: usize, seed: f64) -> TimeSeriesWindow {
    let times: Vec<f64> = (0..n).map(|i| i as f64 + 0.3 * ((i as f64) * seed).sin().abs()).collect();
    let values: Vec<f64> = times
        .iter()
        .flat_map(|t| [(t * 0.7 + seed).sin(), (t * 0.3 - seed).cos()])
        .collect();
    TimeSeriesWindow::new(times, values, 2, vec![], 0).unwrap()
}

// Plain f64 reimplementation of the network.

fn linear(l: &Linear, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (l.weight.rows(), l.weight.cols());
    (0..cols)
        .map(|j| l.bias.data()[j] + (0..rows).map(|i| x[i] * l.weight.data()[i * cols + j]).sum::<f64>())
        .collect()
}

fn mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let last = m.layers.len() - 1;
    for (i, l) in m.layers.iter().enumerate() {
        a = linear(l, &a);
        for v in &mut a {
            *v = if i == last { v.tanh() } else { v.max(0.0) };
        }
    }
    a
}

fn field(own: &Mlp, shared: Option<&Mlp>, state: &[f64]) -> Vec<f64> {
    let mut out = mlp(own, state);
    if let Some(c) = shared {
        for (o, s) in out.iter_mut().zip(mlp(c, state)) {
            *o += s;
        }
    }
    out
}

fn contract(field: &[f64], u: &[f64]) -> Vec<f64> {
    field.chunks(u.len()).map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(p_anomaly, p_poa)` by classic RK4 on the stacked state `[h, z]`.
fn oracle(w: &TimeSeriesWindow, p: &PadParameters, solver: &SolverConfig) -> (f64, f64) {
    let path = CubicSplinePath::fit(w).unwrap();
    let knots = path.knots().to_vec();
    let (lo, hi) = path.domain();
    let n_int = knots.len() - 1;
    let control = |s: f64| -> Vec<f64> {
        if solver.knot_aligned {
            let s = s.clamp(0.0, n_int as f64);
            let i = (s.floor() as usize).min(n_int - 1);
            let width = knots[i + 1] - knots[i];
            let t = knots[i] + (s - i as f64) * width;
            path.eval_derivative(t).unwrap().data().iter().map(|d| d * width).collect()
        } else {
            let t = (lo + s * (hi - lo)).clamp(lo, hi);
            path.eval_derivative(t).unwrap().data().iter().map(|d| d * (hi - lo)).collect()
        }
    };
    let k = p.h_init.bias.cols();
    let deriv = |s: f64, y: &[f64]| -> Vec<f64> {
        let u = control(s);
        let mut d = contract(&field(&p.f, p.c.as_ref(), &y[..k]), &u);
        d.extend(contract(&field(&p.g, p.c.as_ref(), &y[k..]), &u));
        d
    };
    let x0 = w.observation(0);
    let mut y = linear(&p.h_init, x0);
    y.extend(linear(&p.z_init, x0));
    let (end, n) = if solver.knot_aligned {
        (n_int as f64, n_int * solver.steps_per_window)
    } else {
        (1.0, solver.steps_per_window)
    };
    let h = end / n as f64;
    let axpy = |a: &[f64], c: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + c * y).collect() };
    for step in 0..n {
        let t = step as f64 * h;
        y = match solver.scheme {
            Scheme::Euler => axpy(&y, h, &deriv(t, &y)),
            Scheme::Rk4 => {
                let k1 = deriv(t, &y);
                let k2 = deriv(t + h / 2.0, &axpy(&y, h / 2.0, &k1));
                let k3 = deriv(t + h / 2.0, &axpy(&y, h / 2.0, &k2));
                let k4 = deriv(t + h, &axpy(&y, h, &k3));
                (0..y.len())
                    .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
    }
    (
        sigmoid(linear(&p.anomaly_head, &y[..k])[0]),
        sigmoid(linear(&p.poa_head, &y[k..])[0]),
    )
}

fn assert_matches_oracle(solver: SolverConfig) {
    let model = cfg();
    let p = PadParameters::init(&model, 42).unwrap();
    for (n, seed) in [(2, 0.4), (7, 1.3), (12, 2.9)] {
        let w = window(n, seed);
        let out = forward(&w, &p, &model, &solver).unwrap();
        let (pa, pp) = oracle(&w, &p, &solver);
        assert!((out.p_anomaly - pa).abs() < 1e-10, "{solver:?} n={n}: {} vs {pa}", out.p_anomaly);
        assert!((out.p_poa - pp).abs() < 1e-10, "{solver:?} n={n}: {} vs {pp}", out.p_poa);
    }
}

#[test]
fn forward_matches_plain_oracle_knot_aligned() {
    for steps in [1, 3] {
        assert_matches_oracle(SolverConfig {
            scheme: Scheme::Rk4,
            steps_per_window: steps,
            knot_aligned: true,
        });
    }
}

#[test]
fn forward_matches_plain_oracle_uniform_clock() {
    for scheme in [Scheme::Rk4, Scheme::Euler] {
        assert_matches_oracle(SolverConfig {
            scheme,
            steps_per_window: 10,
            knot_aligned: false,
        });
    }
}

#[test]
fn batched_predict_equals_single_forward() {
    let model = cfg();
    let solver = SolverConfig::default();
    let p = PadParameters::init(&model, 5).unwrap();
    let ws: Vec<_> = [(5, 0.1), (5, 0.7), (9, 1.1), (5, 2.0)]
        .iter()
        .map(|&(n, s)| window(n, s))
        .collect();
    let batched = predict(&ws, &p, &model, &solver).unwrap();
    for (w, (pa, pp)) in ws.iter().zip(batched) {
        let single = forward(w, &p, &model, &solver).unwrap();
        assert!((single.p_anomaly - pa).abs() < 1e-12);
        assert!((single.p_poa - pp).abs() < 1e-12);
    }
}

#[test]
fn initial_states_are_affine_in_first_value() {
    let model = cfg();
    let p = PadParameters::init(&model, 8).unwrap();
    let x0 = Tensor::row(vec![0.4, -1.2]);
    let (h, z) = init_states(&x0, &p).unwrap();
    assert_eq!(h.data(), linear(&p.h_init, x0.data()).as_slice());
    assert_eq!(z.data(), linear(&p.z_init, x0.data()).as_slice());
}

#[test]
fn shared_branch_is_the_only_coupling() {
    let model = cfg();
    let p = PadParameters::init(&model, 13).unwrap();
    let state = Tensor::row(vec![0.2, -0.5, 0.9]);
    let f0 = vector_field_f(&state, &p, &model).unwrap();
    let g0 = vector_field_g(&state, &p, &model).unwrap();

    // f ignores θ_g, g ignores θ_f
    let mut q = p.clone();
    for i in 0..q.group_len(ParamGroup::G) {
        *q.coord_mut(ParamGroup::G, i) += 0.1;
    }
    assert_eq!(vector_field_f(&state, &q, &model).unwrap(), f0);
    let mut q = p.clone();
    for i in 0..q.group_len(ParamGroup::F) {
        *q.coord_mut(ParamGroup::F, i) += 0.1;
    }
    assert_eq!(vector_field_g(&state, &q, &model).unwrap(), g0);

    // f - g does not depend on θ_c
    let mut q = p.clone();
    for i in 0..q.group_len(ParamGroup::C) {
        *q.coord_mut(ParamGroup::C, i) -= 0.05;
    }
    let (f1, g1) = (vector_field_f(&state, &q, &model).unwrap(), vector_field_g(&state, &q, &model).unwrap());
    let own = |f: &Tensor, g: &Tensor| -> Vec<f64> { f.data().iter().zip(g.data()).map(|(a, b)| a - b).collect() };
    for (a, b) in own(&f0, &g0).iter().zip(own(&f1, &g1)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn without_shared_branch_fields_are_independent() {
    let model = ModelConfig {
        shared_branch: false,
        ..cfg()
    };
    let p = PadParameters::init(&model, 2).unwrap();
    assert!(!p.has_group(ParamGroup::C));
    let state = Tensor::row(vec![0.2, -0.5, 0.9]);
    let expected = mlp(&p.f, state.data());
    assert_eq!(vector_field_f(&state, &p, &model).unwrap().data(), expected.as_slice());
}

#[test]
fn parameter_count_agrees_with_tensors() {
    for shared in [true, false] {
        let model = ModelConfig {
            shared_branch: shared,
            ..cfg()
        };
        let p = PadParameters::init(&model, 0).unwrap();
        assert_eq!(p.parameter_count(), model.parameter_count());
    }
    let matched = cfg().without_shared_branch_matched();
    let gap = matched.parameter_count() as f64 / cfg().parameter_count() as f64 - 1.0;
    assert!(gap.abs() < 0.1, "matched ablation off by {gap}");
}

#[test]
fn group_hash_tracks_each_group() {
    let p = PadParameters::init(&cfg(), 1).unwrap();
    let mut q = p.clone();
    *q.coord_mut(ParamGroup::Z, 0) += 1e-12;
    for g in p.groups() {
        assert_eq!(p.group_hash(g) == q.group_hash(g), g != ParamGroup::Z, "{}", g.name());
    }
}

fn arbitrary_window() -> impl Strategy<Value = TimeSeriesWindow> {
    (2usize..15).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..5.0, n),
            prop::collection::vec(-3.0f64..3.0, 2 * n),
        )
            .prop_map(move |(gaps, values)| {
                let mut t = -1.0;
                let times = gaps
                    .iter()
                    .map(|g| {
                        t += g;
                        t
                    })
                    .collect();
                TimeSeriesWindow::new(times, values, 2, vec![], 3).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_accepts_any_window(w in arbitrary_window(), knot_aligned in any::<bool>()) {
        let model = cfg();
        let solver = SolverConfig { knot_aligned, ..SolverConfig::default() };
        let p = PadParameters::init(&model, 21).unwrap();
        let out = forward(&w, &p, &model, &solver).unwrap();
        prop_assert!((0.0..=1.0).contains(&out.p_anomaly));
        prop_assert!((0.0..=1.0).contains(&out.p_poa));
        prop_assert!(out.h_final.is_finite() && out.z_final.is_finite());
        prop_assert_eq!(out.h_final.len(), model.hidden_dim);
        prop_assert_eq!(out.z_final.len(), model.hidden_dim);
    }
}
