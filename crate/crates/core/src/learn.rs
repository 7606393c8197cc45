//! Proximal gradient training of the surrogate coefficients under an
//! elastic-net penalty, with Barzilai-Borwein trial steps and a non-monotone
//! backtracking line search.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::adjoint::SampleObjective;
use crate::basis::PolynomialAnsatz;
use crate::dynamics::ControlProblem;
use crate::error::{Error, Result};

/// Smooth part of the training objective in a flat coefficient layout.
pub trait Objective: Sync {
    /// `+inf` when the coefficients are infeasible.
    fn value(&self, theta: &[f64]) -> f64;

    /// Value and gradient; the gradient is `None` when the value is not finite.
    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Option<Vec<f64>>);
}

const LINE_SEARCH_CAP: usize = 60;

fn default_kappa() -> f64 {
    1e-4
}
fn default_shrink() -> f64 {
    0.5
}
fn default_window() -> usize {
    5
}
fn default_tol() -> f64 {
    1e-5
}
fn default_max_iters() -> usize {
    5000
}
fn default_s() -> f64 {
    1.0
}
fn default_bb_bounds() -> [f64; 2] {
    [1e-8, 1e8]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Penalty weight.
    pub gamma: f64,
    /// Share of the penalty carried by the l1 term.
    pub r: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    /// Number of past values the line search may compare against.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_s")]
    pub s_default: f64,
    #[serde(default = "default_bb_bounds")]
    pub bb_bounds: [f64; 2],
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            gamma: 0.0,
            r: 0.0,
            kappa: default_kappa(),
            shrink: default_shrink(),
            window: default_window(),
            tol: default_tol(),
            max_iters: default_max_iters(),
            s_default: default_s(),
            bb_bounds: default_bb_bounds(),
        }
    }
}

impl OptimizerConfig {
    pub fn with_penalty(gamma: f64, r: f64) -> Self {
        OptimizerConfig {
            gamma,
            r,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.r) {
            return bad("r must lie in [0, 1]");
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad("kappa must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.s_default > 0.0 && self.s_default.is_finite()) {
            return bad("s_default must be positive");
        }
        let [lo, hi] = self.bb_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("bb_bounds must satisfy 0 < s_min <= s_max < inf");
        }
        Ok(())
    }
}

/// `gamma ((1 - r)/2 |theta|^2 + r |theta|_1)`
pub fn penalty(theta: &[f64], cfg: &OptimizerConfig) -> f64 {
    let sq: f64 = theta.iter().map(|x| x * x).sum();
    let l1: f64 = theta.iter().map(|x| x.abs()).sum();
    cfg.gamma * (0.5 * (1.0 - cfg.r) * sq + cfg.r * l1)
}

/// Gradient of the smooth part: `grad J + gamma (1 - r) theta`.
pub fn smooth_gradient(theta: &[f64], grad_j: &[f64], cfg: &OptimizerConfig) -> Vec<f64> {
    assert_eq!(theta.len(), grad_j.len());
    let c = cfg.gamma * (1.0 - cfg.r);
    theta.iter().zip(grad_j).map(|(t, g)| g + c * t).collect()
}

/// Soft-thresholded gradient step.
pub fn prox_step(theta: &[f64], d: &[f64], s: f64, cfg: &OptimizerConfig) -> Vec<f64> {
    let thr = s * cfg.gamma * cfg.r;
    theta
        .iter()
        .zip(d)
        .map(|(t, g)| {
            let z = t - s * g;
            z.signum() * (z.abs() - thr).max(0.0)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Barzilai-Borwein trial step, alternating the two classical quotients
/// with the parity of `k`.
pub fn bb_step(
    theta_k: &[f64],
    theta_km1: &[f64],
    d_k: &[f64],
    d_km1: &[f64],
    k: usize,
    cfg: &OptimizerConfig,
) -> f64 {
    let dt = diff(theta_k, theta_km1);
    let dd = diff(d_k, d_km1);
    let cross = dot(&dt, &dd);
    let (num, den) = if k % 2 == 1 {
        (cross, dot(&dd, &dd))
    } else {
        (dot(&dt, &dt), cross)
    };
    let s = num / den;
    if !(den > 0.0) || !(cross > 0.0) || !s.is_finite() || s <= 0.0 {
        return cfg.s_default;
    }
    s.clamp(cfg.bb_bounds[0], cfg.bb_bounds[1])
}

/// The last `window + 1` penalized objective values.
#[derive(Clone, Debug)]
pub struct History {
    window: usize,
    values: VecDeque<f64>,
}

impl History {
    pub fn new(window: usize) -> Self {
        History {
            window,
            values: VecDeque::with_capacity(window + 1),
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.values.len() == self.window + 1 {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LineSearchOutcome {
    pub theta: Vec<f64>,
    pub s: f64,
    pub backtracks: usize,
    /// Smooth objective at the accepted point.
    pub value: f64,
    /// Smooth objective plus penalty at the accepted point.
    pub penalized: f64,
    /// Gradient of the smooth objective, when it came for free.
    pub gradient: Option<Vec<f64>>,
}

/// Backtracks from `s0` until the penalized objective at the prox point lies
/// below the window maximum minus `kappa/s |theta - theta_plus|^2`.
///
/// `eval(theta, want_gradient)` returns the smooth objective. Returns `None`
/// once the backtracking cap is reached.
pub fn line_search(
    theta_k: &[f64],
    d_k: &[f64],
    s0: f64,
    history: &History,
    cfg: &OptimizerConfig,
    mut eval: impl FnMut(&[f64], bool) -> (f64, Option<Vec<f64>>),
) -> Option<LineSearchOutcome> {
    let reference = history.max();
    let mut s = s0;
    for backtracks in 0..=LINE_SEARCH_CAP {
        let theta = prox_step(theta_k, d_k, s, cfg);
        let (value, gradient) = eval(&theta, backtracks == 0);
        let penalized = value + penalty(&theta, cfg);
        let step: f64 = theta.iter().zip(theta_k).map(|(a, b)| (a - b).powi(2)).sum();
        if penalized.is_finite() && penalized <= reference - cfg.kappa / s * step {
            return Some(LineSearchOutcome {
                theta,
                s,
                backtracks,
                value,
                penalized,
                gradient,
            });
        }
        s *= cfg.shrink;
    }
    None
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    pub theta_prev: Vec<f64>,
    pub d: Vec<f64>,
    pub d_prev: Vec<f64>,
    pub history: History,
    pub k: usize,
    pub best_theta: Vec<f64>,
    pub best_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Smooth objective.
    pub value: f64,
    pub penalty: f64,
    pub s_accepted: f64,
    pub backtracks: usize,
    pub support: usize,
    pub wall_time_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    LineSearchFailure,
    GradientFailure,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub theta: Vec<f64>,
    /// Penalized objective at `theta`.
    pub penalized: f64,
    pub log: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl OptimizeResult {
    pub fn iterations(&self) -> usize {
        self.log.last().map_or(0, |r| r.k)
    }
}

fn support(theta: &[f64]) -> usize {
    theta.iter().filter(|x| **x != 0.0).count()
}

/// Runs the proximal gradient loop from `theta0` and returns the iterate with
/// the smallest penalized objective.
pub fn optimize(objective: &dyn Objective, theta0: Vec<f64>, cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    let start = Instant::now();
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;
    let (j0, g0) = objective.value_and_gradient(&theta0);
    let Some(g0) = g0.filter(|_| j0.is_finite()) else {
        return Err(Error::InfeasibleStart);
    };
    let pen0 = penalty(&theta0, cfg);
    let d0 = smooth_gradient(&theta0, &g0, cfg);
    let mut history = History::new(cfg.window);
    history.push(j0 + pen0);
    let mut log = vec![IterationRecord {
        k: 0,
        value: j0,
        penalty: pen0,
        s_accepted: 0.0,
        backtracks: 0,
        support: support(&theta0),
        wall_time_ms: elapsed(),
    }];
    let mut state = OptimizerState {
        theta: theta0.clone(),
        theta_prev: theta0.clone(),
        d: d0.clone(),
        d_prev: d0,
        history,
        k: 0,
        best_theta: theta0,
        best_value: j0 + pen0,
    };

    let mut eval = |theta: &[f64], want_gradient: bool| {
        if want_gradient {
            objective.value_and_gradient(theta)
        } else {
            (objective.value(theta), None)
        }
    };

    let stop = loop {
        if state.k >= cfg.max_iters {
            break StopReason::MaxIterations;
        }
        let s0 = if state.k == 0 {
            cfg.s_default
        } else {
            bb_step(&state.theta, &state.theta_prev, &state.d, &state.d_prev, state.k, cfg)
        };
        let Some(out) = line_search(&state.theta, &state.d, s0, &state.history, cfg, &mut eval) else {
            log::info!("line search failed at iteration {}", state.k + 1);
            break StopReason::LineSearchFailure;
        };
        let grad = match out.gradient {
            Some(g) => Some(g),
            None => objective.value_and_gradient(&out.theta).1,
        };
        let Some(grad) = grad else {
            break StopReason::GradientFailure;
        };
        let j_max = state.history.max();
        state.k += 1;
        state.theta_prev = std::mem::replace(&mut state.theta, out.theta);
        state.d_prev = std::mem::replace(&mut state.d, smooth_gradient(&state.theta, &grad, cfg));
        state.history.push(out.penalized);
        if out.penalized < state.best_value {
            state.best_value = out.penalized;
            state.best_theta = state.theta.clone();
        }
        log.push(IterationRecord {
            k: state.k,
            value: out.value,
            penalty: out.penalized - out.value,
            s_accepted: out.s,
            backtracks: out.backtracks,
            support: support(&state.theta),
            wall_time_ms: elapsed(),
        });
        log::debug!("iteration {}: J = {:.6e}, s = {:.3e}", state.k, out.penalized, out.s);
        if j_max - out.penalized <= cfg.tol * j_max {
            break StopReason::Converged;
        }
    };
    Ok(OptimizeResult {
        theta: state.best_theta,
        penalized: state.best_value,
        log,
        stop,
    })
}

/// Trains `init` on the fixed sample set and returns the best surrogate.
pub fn train(
    problem: &dyn ControlProblem,
    init: &PolynomialAnsatz,
    samples: &[(f64, DVector<f64>)],
    cfg: &OptimizerConfig,
) -> Result<(PolynomialAnsatz, OptimizeResult)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if init.index_set().is_empty() {
        return Err(Error::Config("the basis is empty".into()));
    }
    let objective = SampleObjective {
        problem,
        template: init,
        samples,
    };
    let result = optimize(&objective, init.flat_theta(), cfg)?;
    let trained = init.with_flat_theta(&result.theta)?;
    Ok((trained, result))
}

/// CSV with columns `k,J_k,penalty,s_accepted,backtracks,support_cardinality,wall_time_ms`.
pub fn iteration_log_csv(log: &[IterationRecord], config_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = config_hash {
        writeln!(out, "# config_hash={h}").unwrap();
    }
    out.push_str("k,J_k,penalty,s_accepted,backtracks,support_cardinality,wall_time_ms\n");
    for r in log {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{},{},{:.3}",
            r.k, r.value, r.penalty, r.s_accepted, r.backtracks, r.support, r.wall_time_ms
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `J(theta) = 1/2 sum a_i (theta_i - c_i)^2`
    struct Quadratic {
        a: Vec<f64>,
        c: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&self, theta: &[f64]) -> f64 {
            theta
                .iter()
                .zip(&self.a)
                .zip(&self.c)
                .map(|((t, a), c)| 0.5 * a * (t - c).powi(2))
                .sum()
        }

        fn value_and_gradient(&self, theta: &[f64]) -> (f64, Option<Vec<f64>>) {
            let g = theta
                .iter()
                .zip(&self.a)
                .zip(&self.c)
                .map(|((t, a), c)| a * (t - c))
                .collect();
            (self.value(theta), Some(g))
        }
    }

    #[test]
    fn smooth_gradient_arithmetic() {
        let cfg = OptimizerConfig::with_penalty(0.5, 0.5);
        let d = smooth_gradient(&[1.0, -2.0], &[0.1, 0.2], &cfg);
        assert!((d[0] - 0.35).abs() < 1e-15 && (d[1] + 0.3).abs() < 1e-15);
        let cfg0 = OptimizerConfig::with_penalty(0.0, 0.5);
        assert_eq!(smooth_gradient(&[1.0, -2.0], &[0.1, 0.2], &cfg0), vec![0.1, 0.2]);
        let cfg1 = OptimizerConfig::with_penalty(3.0, 1.0);
        assert_eq!(smooth_gradient(&[1.0, -2.0], &[0.0, 0.0], &cfg1), vec![0.0, 0.0]);
    }

    #[test]
    fn prox_arithmetic() {
        let cfg = OptimizerConfig::with_penalty(0.4, 1.0);
        assert!((prox_step(&[1.0], &[0.0], 0.5, &cfg)[0] - 0.8).abs() < 1e-15);
        let plain = OptimizerConfig::with_penalty(0.0, 1.0);
        assert_eq!(prox_step(&[1.0, 2.0], &[0.5, -1.0], 0.2, &plain), vec![0.9, 2.2]);
    }

    /// Minimizes `d (x - theta) + (x - theta)^2 / (2 s) + gamma r |x|` on a grid.
    pub(crate) fn prox_grid_oracle(theta: f64, d: f64, s: f64, gr: f64) -> f64 {
        let obj = |x: f64| d * (x - theta) + (x - theta).powi(2) / (2.0 * s) + gr * x.abs();
        let lo = theta - s * d - s * gr - 1.0;
        let hi = theta - s * d + s * gr + 1.0;
        let n = ((hi - lo) / 1e-4).ceil() as usize;
        (0..=n)
            .map(|i| lo + i as f64 * 1e-4)
            .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
            .unwrap()
    }

    proptest! {
        #[test]
        fn prox_matches_grid_search(theta in -2.0f64..2.0, d in -2.0f64..2.0, s in 0.05f64..2.0, gamma in 0.0f64..1.0) {
            let cfg = OptimizerConfig::with_penalty(gamma, 1.0);
            let got = prox_step(&[theta], &[d], s, &cfg)[0];
            prop_assert!((got - prox_grid_oracle(theta, d, s, gamma)).abs() <= 1e-4);
        }

        #[test]
        fn prox_is_non_expansive(z1 in proptest::collection::vec(-3.0f64..3.0, 5), z2 in proptest::collection::vec(-3.0f64..3.0, 5), gr in 0.0f64..2.0) {
            let cfg = OptimizerConfig::with_penalty(gr, 1.0);
            let zero = vec![0.0; 5];
            let p1 = prox_step(&z1, &zero, 1.0, &cfg);
            let p2 = prox_step(&z2, &zero, 1.0, &cfg);
            for i in 0..5 {
                prop_assert!((p1[i] - p2[i]).abs() <= (z1[i] - z2[i]).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn bb_rules() {
        let cfg = OptimizerConfig::default();
        // delta theta = c delta d
        let c = 0.25;
        for k in [1, 2] {
            let s = bb_step(&[1.0, 2.0], &[0.0, 0.0], &[4.0, 8.0], &[0.0, 0.0], k, &cfg);
            assert!((s - c).abs() < 1e-15);
        }
        assert_eq!(bb_step(&[1.0], &[0.0], &[-1.0], &[0.0], 1, &cfg), cfg.s_default);
        assert_eq!(bb_step(&[1.0], &[0.0], &[-1.0], &[0.0], 2, &cfg), cfg.s_default);
        assert_eq!(bb_step(&[1.0], &[1.0], &[1.0], &[1.0], 2, &cfg), cfg.s_default);
    }

    #[test]
    fn bb_recovers_inverse_curvature() {
        let cfg = OptimizerConfig::default();
        for a in [0.3, 1.0, 7.5] {
            let (t0, t1) = (1.3, 0.4);
            for k in [1, 2] {
                let s = bb_step(&[t1], &[t0], &[a * t1], &[a * t0], k, &cfg);
                assert!((s - 1.0 / a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn line_search_accepts_first_trial_when_sufficient() {
        let cfg = OptimizerConfig::default();
        let q = Quadratic { a: vec![1.0], c: vec![0.0] };
        let mut h = History::new(0);
        h.push(q.value(&[1.0]));
        let out = line_search(&[1.0], &[1.0], 0.5, &h, &cfg, |t, _| (q.value(t), None)).unwrap();
        assert_eq!(out.backtracks, 0);
        assert_eq!(out.s, 0.5);
    }

    #[test]
    fn line_search_accepts_prox_fixed_point() {
        let cfg = OptimizerConfig::with_penalty(1.0, 1.0);
        // theta = 0 with |d| below the threshold is a fixed point
        let mut h = History::new(2);
        h.push(0.0);
        let out = line_search(&[0.0], &[0.3], 1.0, &h, &cfg, |_, _| (0.0, None)).unwrap();
        assert_eq!(out.theta, vec![0.0]);
        assert_eq!(out.backtracks, 0);
    }

    #[test]
    fn classical_backtracking_on_scalar_quadratic() {
        // 1/2 theta^2 from theta = 1 with s0 = 4: s = 4, 2 fail, s = 1 is accepted
        let cfg = OptimizerConfig::default();
        let mut h = History::new(0);
        h.push(0.5);
        let out = line_search(&[1.0], &[1.0], 4.0, &h, &cfg, |t, _| (0.5 * t[0] * t[0], None)).unwrap();
        assert_eq!(out.s, 1.0);
        assert_eq!(out.backtracks, 2);
        assert_eq!(out.theta, vec![0.0]);
    }

    #[test]
    fn window_zero_gives_monotone_values() {
        let q = Quadratic {
            a: vec![1.0, 10.0, 100.0],
            c: vec![1.0, -1.0, 0.5],
        };
        let cfg = OptimizerConfig {
            window: 0,
            tol: 1e-12,
            ..OptimizerConfig::with_penalty(0.01, 0.5)
        };
        let res = optimize(&q, vec![0.0; 3], &cfg).unwrap();
        let vals: Vec<f64> = res.log.iter().map(|r| r.value + r.penalty).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.penalized <= vals[0]);
    }

    #[test]
    fn converges_to_the_elastic_net_minimizer() {
        let q = Quadratic {
            a: vec![2.0, 0.5, 4.0],
            c: vec![1.0, -0.1, 0.3],
        };
        let cfg = OptimizerConfig {
            tol: 1e-14,
            ..OptimizerConfig::with_penalty(0.2, 0.5)
        };
        let res = optimize(&q, vec![0.0; 3], &cfg).unwrap();
        // separable closed form: soft-threshold of a c by gamma r, over a + gamma (1 - r)
        for i in 0..3 {
            let (a, c) = (q.a[i], q.c[i]);
            let z: f64 = a * c;
            let expected = z.signum() * (z.abs() - 0.1).max(0.0) / (a + 0.1);
            assert!((res.theta[i] - expected).abs() < 1e-6, "{i}: {} vs {expected}", res.theta[i]);
        }
        assert_eq!(res.theta[1], 0.0);
    }

    #[test]
    fn large_l1_penalty_returns_zero() {
        let q = Quadratic {
            a: vec![1.0, 3.0],
            c: vec![0.5, -0.7],
        };
        let cfg = OptimizerConfig::with_penalty(10.0, 1.0);
        let res = optimize(&q, vec![0.0; 2], &cfg).unwrap();
        assert_eq!(res.theta, vec![0.0, 0.0]);
        let res = optimize(&q, vec![2.0, 2.0], &cfg).unwrap();
        assert_eq!(res.theta, vec![0.0, 0.0]);
    }

    #[test]
    fn infinite_tolerance_stops_after_one_step() {
        let q = Quadratic { a: vec![1.0], c: vec![1.0] };
        let cfg = OptimizerConfig {
            tol: f64::INFINITY,
            ..Default::default()
        };
        let res = optimize(&q, vec![0.0], &cfg).unwrap();
        assert_eq!(res.iterations(), 1);
        assert_eq!(res.stop, StopReason::Converged);
        // s = 1 on curvature 1 lands on the minimizer
        assert_eq!(res.theta, vec![1.0]);
    }

    struct Infeasible;

    impl Objective for Infeasible {
        fn value(&self, _: &[f64]) -> f64 {
            f64::INFINITY
        }
        fn value_and_gradient(&self, _: &[f64]) -> (f64, Option<Vec<f64>>) {
            (f64::INFINITY, None)
        }
    }

    #[test]
    fn infeasible_start_is_an_error() {
        assert!(matches!(
            optimize(&Infeasible, vec![0.0], &OptimizerConfig::default()),
            Err(Error::InfeasibleStart)
        ));
    }

    #[test]
    fn config_validation_and_log() {
        assert!(OptimizerConfig::with_penalty(-1.0, 0.5).validate().is_err());
        assert!(OptimizerConfig::with_penalty(1.0, 1.5).validate().is_err());
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"gamma":0.01,"r":0.5}"#).unwrap();
        assert_eq!(cfg.window, 5);
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"gamma":0.01,"r":0.5,"eta":1}"#).is_err());
        let q = Quadratic { a: vec![1.0], c: vec![1.0] };
        let res = optimize(&q, vec![0.0], &cfg).unwrap();
        let csv = iteration_log_csv(&res.log, Some("abc"));
        assert!(csv.starts_with("# config_hash=abc\nk,J_k,penalty"));
        assert_eq!(csv.lines().count(), res.log.len() + 2);
    }
}
