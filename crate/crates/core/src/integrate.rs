//! Fixed-grid rollouts of the closed- and open-loop dynamics.
//!
//! Explicit Euler is paired with left-rectangle quadrature of the running
//! cost, Crank-Nicolson with the trapezoid rule.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ControlProblem, FeedbackLaw, Stepper};
use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 10;

/// Equispaced nodes `t0 = t_0 < ... < t_N = T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0 >= 0.0 && t0 < t_end && t_end.is_finite()) {
            return Err(Error::Config(format!("invalid time interval [{t0}, {t_end}]")));
        }
        if steps == 0 {
            return Err(Error::Config("a time grid needs at least one step".into()));
        }
        Ok(TimeGrid { t0, t_end, steps })
    }

    /// Grid on `[t0, T]` whose spacing is as close as possible to
    /// `T / full_steps` (at least one step).
    pub fn for_sample(t0: f64, horizon: f64, full_steps: usize) -> Result<Self> {
        let frac = (horizon - t0) / horizon;
        let steps = ((frac * full_steps as f64) - 1e-9).ceil().max(1.0) as usize;
        Self::new(t0, horizon, steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Quadrature weights matched to the stepper.
    pub fn weights(&self, stepper: Stepper) -> Vec<f64> {
        let h = self.step();
        let n = self.steps;
        (0..=n)
            .map(|k| match stepper {
                Stepper::ExplicitEuler => {
                    if k < n {
                        h
                    } else {
                        0.0
                    }
                }
                Stepper::CrankNicolson => {
                    if k == 0 || k == n {
                        0.5 * h
                    } else {
                        h
                    }
                }
            })
            .collect()
    }

    /// Trapezoid weights regardless of the stepper.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        self.weights(Stepper::CrankNicolson)
    }
}

/// One rollout on a grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub stepper: Stepper,
    /// State at each node. Shorter than the grid when the rollout diverged.
    pub states: Vec<DVector<f64>>,
    /// Control applied at each node.
    pub controls: Option<Vec<DVector<f64>>>,
    pub running_cost: f64,
    pub terminal_cost: f64,
    pub diverged: bool,
    pub newton_iterations: usize,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.running_cost + self.terminal_cost
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    /// CSV with header `t,y_1..y_d,u_1..u_M`.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, |y| y.len());
        let m = self
            .controls
            .as_ref()
            .and_then(|c| c.first())
            .map_or(0, |u| u.len());
        let mut out = String::from("t");
        for k in 1..=d {
            write!(out, ",y_{k}").unwrap();
        }
        for k in 1..=m {
            write!(out, ",u_{k}").unwrap();
        }
        out.push('\n');
        for (k, y) in self.states.iter().enumerate() {
            write!(out, "{}", self.grid.node(k)).unwrap();
            for x in y.iter() {
                write!(out, ",{x}").unwrap();
            }
            if let Some(controls) = &self.controls {
                for x in controls[k].iter() {
                    write!(out, ",{x}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the CSV written by [`Trajectory::to_csv`] into `(t, y, u)` rows.
pub fn parse_trajectory_csv(
    text: &str,
) -> Result<Vec<(f64, DVector<f64>, DVector<f64>)>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty trajectory file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().filter(|c| c.starts_with("y_")).count();
    let m = cols.iter().filter(|c| c.starts_with("u_")).count();
    let mut rows = Vec::new();
    for line in lines {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 1 + d + m {
            return Err(Error::Shape(format!(
                "row has {} values, header has {}",
                vals.len(),
                1 + d + m
            )));
        }
        rows.push((
            vals[0],
            DVector::from_column_slice(&vals[1..1 + d]),
            DVector::from_column_slice(&vals[1 + d..]),
        ));
    }
    Ok(rows)
}

/// State-dependent right-hand side seen by the steppers.
trait Field {
    fn problem(&self) -> &dyn ControlProblem;
    /// Returns `(F(t,y), u)`, plus `D_y F` when `jacobian` is set.
    fn eval(&self, k: usize, t: f64, y: &DVector<f64>, jacobian: bool)
        -> (DVector<f64>, DVector<f64>, Option<DMatrix<f64>>);
}

struct ClosedLoop<'a>(FeedbackLaw<'a>);

impl Field for ClosedLoop<'_> {
    fn problem(&self) -> &dyn ControlProblem {
        self.0.problem
    }

    fn eval(
        &self,
        _k: usize,
        t: f64,
        y: &DVector<f64>,
        jacobian: bool,
    ) -> (DVector<f64>, DVector<f64>, Option<DMatrix<f64>>) {
        let p = self.0.evaluate(t, y, jacobian);
        let jac = jacobian.then_some(p.field_jacobian);
        (p.field, p.control, jac)
    }
}

struct OpenLoop<'a> {
    problem: &'a dyn ControlProblem,
    controls: &'a [DVector<f64>],
}

impl Field for OpenLoop<'_> {
    fn problem(&self) -> &dyn ControlProblem {
        self.problem
    }

    fn eval(
        &self,
        k: usize,
        t: f64,
        y: &DVector<f64>,
        jacobian: bool,
    ) -> (DVector<f64>, DVector<f64>, Option<DMatrix<f64>>) {
        let u = self.controls[k].clone();
        let f = self.problem.drift(t, y) + self.problem.input_matrix() * &u;
        let jac = jacobian.then(|| self.problem.drift_jacobian(t, y));
        (f, u, jac)
    }
}

fn out_of_guard(y: &DVector<f64>, guard: f64) -> bool {
    y.iter().any(|x| !x.is_finite() || x.abs() > guard)
}

fn integrate(field: &dyn Field, grid: TimeGrid, stepper: Stepper, y0: &DVector<f64>) -> Result<Trajectory> {
    let problem = field.problem();
    if y0.len() != problem.dim() {
        return Err(Error::Shape(format!(
            "initial state has length {}, problem dimension is {}",
            y0.len(),
            problem.dim()
        )));
    }
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("initial state is not finite".into()));
    }
    let guard = problem.state_guard();
    let beta = problem.beta();
    let h = grid.step();
    let weights = grid.weights(stepper);
    let n = grid.steps();
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n + 1);
    let mut running = 0.0;
    let mut newton_iterations = 0;
    let diverged_at = |states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>, newton_iterations| Trajectory {
        grid,
        stepper,
        states,
        controls: Some(controls),
        running_cost: f64::INFINITY,
        terminal_cost: f64::INFINITY,
        diverged: true,
        newton_iterations,
    };
    if out_of_guard(y0, guard) {
        return Ok(diverged_at(vec![y0.clone()], vec![], 0));
    }

    let mut y = y0.clone();
    let (mut f_cur, mut u_cur, _) = field.eval(0, grid.node(0), &y, false);
    for k in 0..n {
        let t = grid.node(k);
        running += weights[k] * (problem.running_cost(t, &y) + 0.5 * beta * u_cur.norm_squared());
        let t_next = grid.node(k + 1);
        let y_next = match stepper {
            Stepper::ExplicitEuler => &y + h * &f_cur,
            Stepper::CrankNicolson => {
                let (z, iters) = newton_cn(field, k + 1, t_next, &y, &f_cur, h)?;
                newton_iterations += iters;
                z
            }
        };
        states.push(std::mem::replace(&mut y, y_next));
        controls.push(u_cur.clone());
        if out_of_guard(&y, guard) {
            states.push(y);
            return Ok(diverged_at(states, controls, newton_iterations));
        }
        let (f_next, u_next, _) = field.eval(k + 1, t_next, &y, false);
        f_cur = f_next;
        u_cur = u_next;
    }
    running += weights[n] * (problem.running_cost(grid.node(n), &y) + 0.5 * beta * u_cur.norm_squared());
    let terminal = problem.terminal_cost(&y);
    states.push(y);
    controls.push(u_cur);
    let (running_cost, terminal_cost, diverged) = if running.is_finite() && terminal.is_finite() {
        (running, terminal, false)
    } else {
        (f64::INFINITY, f64::INFINITY, true)
    };
    Ok(Trajectory {
        grid,
        stepper,
        states,
        controls: Some(controls),
        running_cost,
        terminal_cost,
        diverged,
        newton_iterations,
    })
}

/// Solves `z = y + h/2 (F_k + F(t_next, z))` by damped Newton, starting from
/// the explicit Euler predictor.
fn newton_cn(
    field: &dyn Field,
    k_next: usize,
    t_next: f64,
    y: &DVector<f64>,
    f_cur: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, usize)> {
    let d = y.len();
    let base = y + 0.5 * h * f_cur;
    let residual = |z: &DVector<f64>| -> (DVector<f64>, Option<DMatrix<f64>>) {
        let (f, _, jac) = field.eval(k_next, t_next, z, true);
        (z - &base - 0.5 * h * f, jac)
    };
    let mut z = y + h * f_cur;
    let (mut r, mut jac) = residual(&z);
    let mut r_norm = r.amax();
    for iter in 0..=NEWTON_MAX_ITERS {
        if r_norm <= NEWTON_TOL * z.amax().max(1.0) {
            return Ok((z, iter));
        }
        if iter == NEWTON_MAX_ITERS || !r_norm.is_finite() {
            break;
        }
        let j = DMatrix::identity(d, d) - 0.5 * h * jac.take().expect("jacobian requested");
        let delta = j
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Numeric("singular Crank-Nicolson Newton matrix".into()))?;
        let mut lambda = 1.0;
        for halving in 0..=NEWTON_MAX_HALVINGS {
            let trial = &z - lambda * &delta;
            let (r_trial, jac_trial) = residual(&trial);
            let n_trial = r_trial.amax();
            if n_trial < r_norm || halving == NEWTON_MAX_HALVINGS {
                z = trial;
                r = r_trial;
                jac = jac_trial;
                r_norm = n_trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::NewtonFailure {
        step: k_next,
        residual: r_norm,
    })
}

pub fn euler_rollout(law: &FeedbackLaw<'_>, grid: TimeGrid, y0: &DVector<f64>) -> Result<Trajectory> {
    integrate(&ClosedLoop(*law), grid, Stepper::ExplicitEuler, y0)
}

pub fn crank_nicolson_rollout(law: &FeedbackLaw<'_>, grid: TimeGrid, y0: &DVector<f64>) -> Result<Trajectory> {
    integrate(&ClosedLoop(*law), grid, Stepper::CrankNicolson, y0)
}

/// Closed-loop rollout with the problem's own stepper.
pub fn closed_loop_rollout(law: &FeedbackLaw<'_>, grid: TimeGrid, y0: &DVector<f64>) -> Result<Trajectory> {
    integrate(&ClosedLoop(*law), grid, law.problem.discretization().stepper, y0)
}

/// Rollout under prescribed nodal controls, with the problem's stepper.
pub fn rollout_open_loop(
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    y0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<Trajectory> {
    rollout_open_loop_with(problem, grid, problem.discretization().stepper, y0, controls)
}

pub fn rollout_open_loop_with(
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    stepper: Stepper,
    y0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<Trajectory> {
    if controls.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} control samples for a grid with {} nodes",
            controls.len(),
            grid.len()
        )));
    }
    if controls.iter().any(|u| u.len() != problem.control_dim()) {
        return Err(Error::Shape("control sample has the wrong length".into()));
    }
    integrate(&OpenLoop { problem, controls }, grid, stepper, y0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{enumerate_total_degree, filter_by_b, FilterMode, PolynomialAnsatz};
    use crate::problems::LinearQuadratic;

    fn scalar(lambda: f64, b: f64) -> LinearQuadratic {
        LinearQuadratic::constant(
            DMatrix::from_element(1, 1, lambda),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            1.0,
        )
    }

    fn zero_law_parts(p: &LinearQuadratic) -> PolynomialAnsatz {
        let set = filter_by_b(&enumerate_total_degree(p.dim(), 2), &DMatrix::identity(p.dim(), p.dim()), FilterMode::Exists).unwrap();
        PolynomialAnsatz::zeros(set, 1, 1.0, p.horizon()).unwrap()
    }

    #[test]
    fn grid_nodes_and_weights() {
        let g = TimeGrid::new(0.2, 1.0, 4).unwrap();
        assert_eq!(g.node(0), 0.2);
        assert_eq!(g.node(4), 1.0);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        let s: f64 = g.weights(Stepper::CrankNicolson).iter().sum();
        assert!((s - 0.8).abs() < 1e-15);
        let s: f64 = g.weights(Stepper::ExplicitEuler).iter().sum();
        assert!((s - 0.8).abs() < 1e-15);
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert_eq!(TimeGrid::for_sample(0.5, 1.0, 100).unwrap().steps(), 50);
        assert_eq!(TimeGrid::for_sample(0.999, 1.0, 100).unwrap().steps(), 1);
    }

    #[test]
    fn uncontrolled_static_system_stays_constant() {
        let p = scalar(0.0, 0.0);
        let v = zero_law_parts(&p);
        let law = FeedbackLaw::new(&v, &p);
        let y0 = DVector::from_element(1, 0.37);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        for tr in [euler_rollout(&law, grid, &y0).unwrap(), crank_nicolson_rollout(&law, grid, &y0).unwrap()] {
            assert!(tr.states.iter().all(|y| y[0] == 0.37));
            assert_eq!(tr.newton_iterations, 0);
        }
    }

    #[test]
    fn euler_single_step_and_convergence() {
        let p = scalar(-1.0, 0.0);
        let v = zero_law_parts(&p);
        let law = FeedbackLaw::new(&v, &p);
        let y0 = DVector::from_element(1, 1.0);
        let tr = euler_rollout(&law, TimeGrid::new(0.0, 0.1, 1).unwrap(), &y0).unwrap();
        assert!((tr.states[1][0] - 0.9).abs() < 1e-15);
        let tr = euler_rollout(&law, TimeGrid::new(0.0, 1.0, 1000).unwrap(), &y0).unwrap();
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 2e-4);
    }

    #[test]
    fn crank_nicolson_linear_step_is_exact_rational() {
        let lambda = -3.0;
        let p = scalar(lambda, 0.0);
        let v = zero_law_parts(&p);
        let law = FeedbackLaw::new(&v, &p);
        let y0 = DVector::from_element(1, 1.0);
        let h = 0.1;
        let tr = crank_nicolson_rollout(&law, TimeGrid::new(0.0, h, 1).unwrap(), &y0).unwrap();
        let expected = (1.0 + h * lambda / 2.0) / (1.0 - h * lambda / 2.0);
        assert!((tr.states[1][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn crank_nicolson_is_a_stable_where_euler_is_not() {
        let p = scalar(-50.0, 0.0);
        let v = zero_law_parts(&p);
        let law = FeedbackLaw::new(&v, &p);
        let y0 = DVector::from_element(1, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let cn = crank_nicolson_rollout(&law, grid, &y0).unwrap();
        let eu = euler_rollout(&law, grid, &y0).unwrap();
        assert!(cn.states.iter().all(|y| y[0].abs() <= 1.0));
        assert!(eu.final_state()[0].abs() > 1e6);
    }

    #[test]
    fn zero_control_open_loop_matches_uncontrolled() {
        let p = scalar(0.7, 1.0);
        let v = zero_law_parts(&p);
        let law = FeedbackLaw::new(&v, &p);
        let y0 = DVector::from_element(1, 0.4);
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let u = vec![DVector::zeros(1); grid.len()];
        let a = rollout_open_loop(&p, grid, &y0, &u).unwrap();
        let b = closed_loop_rollout(&law, grid, &y0).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.total_cost(), b.total_cost());
    }

    #[test]
    fn diverged_rollout_has_infinite_cost() {
        let mut p = scalar(50.0, 0.0);
        p.set_state_guard(10.0);
        let v = zero_law_parts(&p);
        let law = FeedbackLaw::new(&v, &p);
        let tr = euler_rollout(&law, TimeGrid::new(0.0, 1.0, 50).unwrap(), &DVector::from_element(1, 1.0)).unwrap();
        assert!(tr.diverged);
        assert!(tr.total_cost().is_infinite());
    }

    #[test]
    fn euler_cost_error_is_first_order() {
        // y' = -y, l = y^2/2, g = y^2/2, u = 0: J = (1 - e^-2)/4 + e^-2/2
        let p = scalar(-1.0, 0.0);
        let exact = (1.0 - (-2.0f64).exp()) / 4.0 + 0.5 * (-2.0f64).exp();
        let y0 = DVector::from_element(1, 1.0);
        let err = |n: usize| {
            let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
            let u = vec![DVector::zeros(1); grid.len()];
            (rollout_open_loop(&p, grid, &y0, &u).unwrap().total_cost() - exact).abs()
        };
        let ratio = err(200) / err(400);
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn csv_round_trip() {
        let p = scalar(-1.0, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let u: Vec<_> = (0..6).map(|k| DVector::from_element(1, 0.1 * k as f64 + 1.0 / 3.0)).collect();
        let tr = rollout_open_loop(&p, grid, &DVector::from_element(1, 0.3), &u).unwrap();
        let rows = parse_trajectory_csv(&tr.to_csv()).unwrap();
        assert_eq!(rows.len(), 6);
        for (k, (t, y, uu)) in rows.iter().enumerate() {
            assert_eq!(*t, grid.node(k));
            assert_eq!(y, &tr.states[k]);
            assert_eq!(uu, &u[k]);
        }
    }

    #[test]
    fn rollouts_are_deterministic() {
        let p = scalar(0.3, 1.0);
        let set = filter_by_b(&enumerate_total_degree(1, 3), p.input_matrix(), FilterMode::Exists).unwrap();
        let theta = DMatrix::from_fn(2, set.len(), |j, i| 0.1 * (j as f64 + 1.0) - 0.05 * i as f64);
        let v = PolynomialAnsatz::new(set, 2, theta, 1.0, 1.0).unwrap();
        let law = FeedbackLaw::new(&v, &p);
        let grid = TimeGrid::new(0.0, 1.0, 30).unwrap();
        let y0 = DVector::from_element(1, 0.8);
        let a = crank_nicolson_rollout(&law, grid, &y0).unwrap();
        let b = crank_nicolson_rollout(&law, grid, &y0).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.total_cost().to_bits(), b.total_cost().to_bits());
    }
}
