//! Reference open-loop solutions by gradient descent, and the Riccati
//! oracle for linear-quadratic problems.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjoint::sample_grid;
use crate::basis::{IndexSet, PolynomialAnsatz};
use crate::dynamics::{ControlProblem, Stepper};
use crate::error::{Error, Result};
use crate::integrate::{parse_trajectory_csv, rollout_open_loop, TimeGrid, Trajectory};
use crate::problems::LinearQuadratic;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK_CAP: usize = 60;

#[derive(Clone, Debug)]
pub struct OpenLoopSolution {
    pub grid: TimeGrid,
    pub stepper: Stepper,
    /// Control at each node.
    pub u: Vec<DVector<f64>>,
    pub trajectory: Trajectory,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted L2 norm of the per-unit-time gradient at `u`.
    pub grad_norm: f64,
}

fn weighted_dot(w: &[f64], a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    w.iter().zip(a.iter().zip(b)).map(|(wk, (x, y))| wk * x.dot(y)).sum()
}

/// Cost, per-unit-time gradient `dJ/du_k / w_k` and the rollout. The
/// gradient is the exact derivative of the discrete cost; nodes with zero
/// quadrature weight get the continuous-time extrapolation
/// `beta u + B^T lambda` instead.
pub fn open_loop_gradient(
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    y0: &DVector<f64>,
    u: &[DVector<f64>],
) -> Result<(f64, Vec<DVector<f64>>, Trajectory)> {
    let traj = rollout_open_loop(problem, grid, y0, u)?;
    if traj.diverged {
        return Err(Error::Diverged);
    }
    let stepper = traj.stepper;
    let n = grid.steps();
    let h = grid.step();
    let w = grid.weights(stepper);
    let d = problem.dim();
    let beta = problem.beta();
    let bt = problem.input_matrix().transpose();
    let y = &traj.states;
    let gl = |k: usize| problem.running_cost_grad(grid.node(k), &y[k]);
    let df = |k: usize| problem.drift_jacobian(grid.node(k), &y[k]);
    let terminal = problem.terminal_cost_grad(&y[n]);
    let mut lambda = vec![DVector::zeros(d); n + 1];
    let mut grad = vec![DVector::zeros(problem.control_dim()); n + 1];
    match stepper {
        Stepper::ExplicitEuler => {
            lambda[n] = &terminal + w[n] * gl(n);
            for k in (0..n).rev() {
                lambda[k] = w[k] * gl(k) + &lambda[k + 1] + h * (df(k).transpose() * &lambda[k + 1]);
                grad[k] = beta * &u[k] + &bt * &lambda[k + 1];
            }
            grad[n] = beta * &u[n] + &bt * &lambda[n];
        }
        Stepper::CrankNicolson => {
            let solve = |k: usize, jac: &DMatrix<f64>, rhs: DVector<f64>| -> Result<DVector<f64>> {
                (DMatrix::identity(d, d) - 0.5 * h * jac.transpose())
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Numeric(format!("singular open-loop adjoint system at node {k}")))
            };
            let jn = df(n);
            lambda[n] = solve(n, &jn, &terminal + w[n] * gl(n))?;
            for k in (1..n).rev() {
                let jk = df(k);
                let rhs = &lambda[k + 1] + 0.5 * h * (jk.transpose() * &lambda[k + 1]) + w[k] * gl(k);
                lambda[k] = solve(k, &jk, rhs)?;
            }
            for k in 0..=n {
                let mut m = DVector::zeros(d);
                if k < n {
                    m += &lambda[k + 1];
                }
                if k >= 1 {
                    m += &lambda[k];
                }
                grad[k] = beta * &u[k] + (0.5 * h / w[k]) * (&bt * m);
            }
        }
    }
    if grad.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric("open-loop gradient overflow".into()));
    }
    Ok((traj.total_cost(), grad, traj))
}

/// Gradient descent with Barzilai-Borwein trial steps and monotone Armijo
/// backtracking. Stops once the relative cost decrease falls below `tol`
/// with a gradient norm at most `10 tol (1 + |u|)`.
pub fn solve_open_loop(
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    y0: &DVector<f64>,
    u_init: Option<&[DVector<f64>]>,
    tol: f64,
    max_iters: usize,
) -> Result<OpenLoopSolution> {
    let stepper = problem.discretization().stepper;
    let w = grid.weights(stepper);
    // zero-weight nodes do not enter the cost; weight them lightly so the
    // descent still moves their controls toward the extrapolated optimum
    let wg: Vec<f64> = w.iter().map(|&x| if x > 0.0 { x } else { grid.step() }).collect();
    let m = problem.control_dim();
    let mut u: Vec<DVector<f64>> = match u_init {
        Some(u0) => u0.to_vec(),
        None => vec![DVector::zeros(m); grid.len()],
    };
    let (mut cost, mut grad, mut traj) = open_loop_gradient(problem, grid, y0, &u)?;
    let norm = |g: &[DVector<f64>]| weighted_dot(&wg, g, g).sqrt();
    let mut gnorm = norm(&grad);
    let mut prev: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)> = None;
    let mut iterations = 0;
    let mut converged = gnorm == 0.0;
    while !converged && iterations < max_iters {
        let s0 = match &prev {
            Some((u_prev, g_prev)) => {
                let du: Vec<_> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
                let dg: Vec<_> = grad.iter().zip(g_prev).map(|(a, b)| a - b).collect();
                let cross = weighted_dot(&wg, &du, &dg);
                let s = if iterations % 2 == 1 {
                    cross / weighted_dot(&wg, &dg, &dg)
                } else {
                    weighted_dot(&wg, &du, &du) / cross
                };
                if cross > 0.0 && s.is_finite() && s > 0.0 {
                    s
                } else {
                    1.0 / problem.beta()
                }
            }
            None => 1.0 / problem.beta(),
        };
        let mut s = s0;
        let mut accepted = None;
        for _ in 0..BACKTRACK_CAP {
            let trial: Vec<_> = u.iter().zip(&grad).map(|(a, g)| a - s * g).collect();
            match open_loop_gradient(problem, grid, y0, &trial) {
                Ok((c, g, tr)) if c <= cost - ARMIJO_C * s * gnorm * gnorm => {
                    accepted = Some((trial, c, g, tr));
                    break;
                }
                Ok(_) | Err(Error::Diverged) | Err(Error::NewtonFailure { .. }) => s *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((u_new, c_new, g_new, tr_new)) = accepted else {
            break;
        };
        iterations += 1;
        let rel = (cost - c_new) / cost.abs().max(f64::MIN_POSITIVE);
        prev = Some((std::mem::replace(&mut u, u_new), std::mem::replace(&mut grad, g_new)));
        cost = c_new;
        traj = tr_new;
        gnorm = norm(&grad);
        let unorm = weighted_dot(&wg, &u, &u).sqrt();
        if rel < tol && gnorm <= 10.0 * tol * (1.0 + unorm) {
            converged = true;
        }
    }
    if !converged {
        log::debug!("open-loop solve stopped after {iterations} iterations, gradient norm {gnorm:.3e}");
    }
    Ok(OpenLoopSolution {
        grid,
        stepper,
        u,
        trajectory: traj,
        cost,
        iterations,
        converged,
        grad_norm: gnorm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    key: String,
    t0: f64,
    t_end: f64,
    steps: usize,
    stepper: Stepper,
    cost: f64,
    running_cost: f64,
    terminal_cost: f64,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
}

impl OpenLoopSolution {
    /// Writes `<key>.csv` and `<key>.json` into `dir`.
    pub fn save(&self, dir: &Path, key: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let sidecar = Sidecar {
            key: key.to_string(),
            t0: self.grid.t0(),
            t_end: self.grid.t_end(),
            steps: self.grid.steps(),
            stepper: self.stepper,
            cost: self.cost,
            running_cost: self.trajectory.running_cost,
            terminal_cost: self.trajectory.terminal_cost,
            iterations: self.iterations,
            converged: self.converged,
            grad_norm: self.grad_norm,
        };
        fs::write(dir.join(format!("{key}.csv")), self.trajectory.to_csv())?;
        fs::write(dir.join(format!("{key}.json")), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Loads a solution saved under `key`, or `None` if absent or written
    /// for a different grid.
    pub fn load(dir: &Path, key: &str, grid: TimeGrid) -> Result<Option<Self>> {
        let json = dir.join(format!("{key}.json"));
        let csv = dir.join(format!("{key}.csv"));
        if !json.exists() || !csv.exists() {
            return Ok(None);
        }
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(json)?)?;
        if sidecar.key != key || sidecar.steps != grid.steps() || sidecar.t0 != grid.t0() || sidecar.t_end != grid.t_end() {
            return Ok(None);
        }
        let rows = parse_trajectory_csv(&fs::read_to_string(csv)?)?;
        if rows.len() != grid.len() {
            return Ok(None);
        }
        let (states, u): (Vec<_>, Vec<_>) = rows.into_iter().map(|(_, y, u)| (y, u)).unzip();
        let trajectory = Trajectory {
            grid,
            stepper: sidecar.stepper,
            states,
            controls: Some(u.clone()),
            running_cost: sidecar.running_cost,
            terminal_cost: sidecar.terminal_cost,
            diverged: false,
            newton_iterations: 0,
        };
        Ok(Some(OpenLoopSolution {
            grid,
            stepper: sidecar.stepper,
            u,
            trajectory,
            cost: sidecar.cost,
            iterations: sidecar.iterations,
            converged: sidecar.converged,
            grad_norm: sidecar.grad_norm,
        }))
    }
}

/// Cache key for the reference solve of one sample.
pub fn reference_key(prefix: &str, t0: f64, y0: &DVector<f64>, grid: TimeGrid, tol: f64) -> String {
    let mut h = Sha256::new();
    h.update(prefix.as_bytes());
    for x in [t0, grid.t_end(), tol].into_iter().chain(y0.iter().copied()) {
        h.update(x.to_bits().to_le_bytes());
    }
    h.update((grid.steps() as u64).to_le_bytes());
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Reference solves for every sample, from `u = 0`, on the sample grids.
/// With `cache = Some((dir, prefix))` solutions are read from and written
/// to `dir`.
pub fn solve_references(
    problem: &dyn ControlProblem,
    samples: &[(f64, DVector<f64>)],
    tol: f64,
    max_iters: usize,
    cache: Option<(&Path, &str)>,
) -> Result<Vec<OpenLoopSolution>> {
    samples
        .par_iter()
        .map(|(t0, y0)| {
            let grid = sample_grid(problem, *t0)?;
            let key = cache.map(|(_, prefix)| reference_key(prefix, *t0, y0, grid, tol));
            if let (Some((dir, _)), Some(key)) = (cache, &key) {
                if let Some(sol) = OpenLoopSolution::load(dir, key, grid)? {
                    return Ok(sol);
                }
            }
            let sol = solve_open_loop(problem, grid, y0, None, tol, max_iters)?;
            if !sol.converged {
                log::warn!("reference solve from t0 = {t0:.4} did not converge (gradient norm {:.3e})", sol.grad_norm);
            }
            if let (Some((dir, _)), Some(key)) = (cache, &key) {
                sol.save(dir, key)?;
            }
            Ok(sol)
        })
        .collect()
}

/// Integrates `-P' = A^T P + P A - (1/beta) P B B^T P + Q`, `P(T) = P_T`,
/// backward with the implicit trapezoid rule on `substeps` sub-intervals per
/// grid interval. Returns `P` at the grid nodes.
pub fn riccati(
    a: impl Fn(f64) -> DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    beta: f64,
    p_terminal: &DMatrix<f64>,
    grid: TimeGrid,
    substeps: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let substeps = substeps.max(1);
    let bbt = b * b.transpose() / beta;
    let rhs = |t: f64, p: &DMatrix<f64>| {
        let at = a(t);
        at.transpose() * p + p * &at - p * &bbt * p + q
    };
    let n = grid.steps();
    let mut out = vec![DMatrix::zeros(0, 0); n + 1];
    let mut p = p_terminal.clone();
    out[n] = p.clone();
    for k in (0..n).rev() {
        let (t_hi, t_lo) = (grid.node(k + 1), grid.node(k));
        let h = (t_hi - t_lo) / substeps as f64;
        for s in 0..substeps {
            let t1 = t_hi - s as f64 * h;
            let t0 = t1 - h;
            let r1 = rhs(t1, &p);
            let mut next = &p + h * &r1;
            for _ in 0..100 {
                let cand = &p + 0.5 * h * (&r1 + rhs(t0, &next));
                let delta = (&cand - &next).amax();
                next = cand;
                if delta <= 1e-15 * (1.0 + next.amax()) {
                    break;
                }
            }
            p = 0.5 * (&next + next.transpose());
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("Riccati solution blew up near t = {t0}")));
            }
        }
        out[k] = p.clone();
    }
    Ok(out)
}

/// Riccati solution for a linear-quadratic problem on `grid`.
pub fn riccati_oracle(problem: &LinearQuadratic, grid: TimeGrid, substeps: usize) -> Result<Vec<DMatrix<f64>>> {
    riccati(
        |t| problem.a_matrix(t),
        problem.input_matrix(),
        problem.running_weight(),
        problem.beta(),
        problem.terminal_weight(),
        grid,
        substeps,
    )
}

/// Least-squares fit of `v(t, y) = 1/2 y^T P(t) y` onto an ansatz whose index
/// set holds degree-2 monomials. Quadratic monomials missing from the index
/// set are dropped; other basis functions get zero coefficients.
pub fn quadratic_surrogate(
    index_set: IndexSet,
    time_degree: usize,
    space_scale: f64,
    horizon: f64,
    nodes: &[f64],
    p: &[DMatrix<f64>],
) -> Result<PolynomialAnsatz> {
    if nodes.len() != p.len() || nodes.len() < time_degree {
        return Err(Error::Shape("need at least time_degree Riccati nodes".into()));
    }
    let vander = DMatrix::from_fn(nodes.len(), time_degree, |r, j| (nodes[r] / horizon).powi(j as i32));
    let svd = vander.svd(true, true);
    let l2 = space_scale * space_scale;
    let mut theta = DMatrix::zeros(time_degree, index_set.len());
    for (i, alpha) in index_set.iter().enumerate() {
        if alpha.degree() != 2 {
            continue;
        }
        let sup = alpha.support();
        let coef = |pk: &DMatrix<f64>| match sup.as_slice() {
            [(k, 2)] => 0.5 * pk[(*k, *k)] * l2,
            [(k, 1), (j, 1)] => pk[(*k, *j)] * l2,
            _ => unreachable!("degree-2 support"),
        };
        let rhs = DVector::from_iterator(p.len(), p.iter().map(coef));
        let c = svd
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Numeric(format!("surrogate fit failed: {e}")))?;
        theta.set_column(i, &c);
    }
    PolynomialAnsatz::new(index_set, time_degree, theta, space_scale, horizon)
}
