//! Error metrics against open-loop references, and result tables.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::rollout_sample;
use crate::basis::PolynomialAnsatz;
use crate::dynamics::{ControlProblem, FeedbackLaw};
use crate::error::{Error, Result};
use crate::integrate::{TimeGrid, Trajectory};
use crate::openloop::OpenLoopSolution;

/// `sum_k w_k |a_k - b_k|^2` and `sum_k w_k |b_k|^2` with trapezoid weights.
pub fn squared_error_terms(grid: &TimeGrid, estimate: &[DVector<f64>], reference: &[DVector<f64>]) -> Result<(f64, f64)> {
    if estimate.len() != grid.len() || reference.len() != grid.len() {
        return Err(Error::Shape(format!(
            "sequences of length {} and {} on a grid with {} nodes",
            estimate.len(),
            reference.len(),
            grid.len()
        )));
    }
    let w = grid.trapezoid_weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), wk) in estimate.iter().zip(reference).zip(&w) {
        num += wk * (a - b).norm_squared();
        den += wk * b.norm_squared();
    }
    Ok((num, den))
}

/// Summed squared L2 errors over summed squared L2 reference norms.
pub fn mnse(pairs: &[(TimeGrid, &[DVector<f64>], &[DVector<f64>])]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (grid, est, reference) in pairs {
        let (n, d) = squared_error_terms(grid, est, reference)?;
        num += n;
        den += d;
    }
    ratio(num, den)
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::DegenerateReference("reference norms sum to zero"))
    }
}

/// `sum |J* - J| / sum J*` over `(J*, J)` pairs.
pub fn mnae_j(costs: &[(f64, f64)]) -> Result<f64> {
    let num: f64 = costs.iter().map(|(r, e)| (r - e).abs()).sum();
    let den: f64 = costs.iter().map(|(r, _)| r).sum();
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::DegenerateReference("reference costs sum to zero"))
    }
}

/// Entries with `|theta_i| > threshold`, and their share in percent.
pub fn support_cardinality(theta: &[f64], threshold: f64) -> (usize, f64) {
    let count = theta.iter().filter(|x| x.abs() > threshold).count();
    let pct = if theta.is_empty() {
        0.0
    } else {
        100.0 * count as f64 / theta.len() as f64
    };
    (count, pct)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleComparison {
    pub t0: f64,
    pub j_feedback: f64,
    pub j_reference: f64,
    pub control_error: f64,
    pub control_norm: f64,
    pub state_error: f64,
    pub state_norm: f64,
    pub diverged: bool,
    pub reference_converged: bool,
}

pub fn compare(feedback: &Trajectory, reference: &OpenLoopSolution) -> Result<SampleComparison> {
    let grid = reference.grid;
    if feedback.grid != grid {
        return Err(Error::Shape("feedback and reference grids differ".into()));
    }
    let (control_error, control_norm, state_error, state_norm) = if feedback.diverged {
        (f64::INFINITY, squared_error_terms(&grid, &reference.u, &reference.u)?.1, f64::INFINITY, 0.0)
    } else {
        let u = feedback.controls.as_ref().ok_or_else(|| Error::Shape("feedback rollout lacks controls".into()))?;
        let (ce, cn) = squared_error_terms(&grid, u, &reference.u)?;
        let (se, sn) = squared_error_terms(&grid, &feedback.states, &reference.trajectory.states)?;
        (ce, cn, se, sn)
    };
    Ok(SampleComparison {
        t0: grid.t0(),
        j_feedback: feedback.total_cost(),
        j_reference: reference.cost,
        control_error,
        control_norm,
        state_error,
        state_norm,
        diverged: feedback.diverged,
        reference_converged: reference.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationResult {
    pub samples: Vec<SampleComparison>,
    pub mnse_u: f64,
    pub mnse_y: f64,
    pub mnae_j: f64,
    pub support_count: usize,
    pub support_pct: f64,
    pub diverged: usize,
}

impl EvaluationResult {
    pub fn from_samples(samples: Vec<SampleComparison>, theta: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let sum = |f: fn(&SampleComparison) -> f64| samples.iter().map(f).sum::<f64>();
        let mnse_u = ratio(sum(|s| s.control_error), sum(|s| s.control_norm)).unwrap_or(f64::NAN);
        let mnse_y = ratio(sum(|s| s.state_error), sum(|s| s.state_norm))?;
        let costs: Vec<(f64, f64)> = samples.iter().map(|s| (s.j_reference, s.j_feedback)).collect();
        let mnae_j = mnae_j(&costs)?;
        let (support_count, support_pct) = support_cardinality(theta, 0.0);
        let diverged = samples.iter().filter(|s| s.diverged).count();
        Ok(EvaluationResult {
            samples,
            mnse_u,
            mnse_y,
            mnae_j,
            support_count,
            support_pct,
            diverged,
        })
    }

    pub fn mean_feedback_cost(&self) -> f64 {
        self.samples.iter().map(|s| s.j_feedback).sum::<f64>() / self.samples.len() as f64
    }

    /// Per-sample CSV.
    pub fn samples_csv(&self, config_hash: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = config_hash {
            writeln!(out, "# config_hash={h}").unwrap();
        }
        out.push_str("sample,t0,J_feedback,J_reference,control_error,control_norm,state_error,state_norm,diverged,reference_converged\n");
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                s.t0,
                s.j_feedback,
                s.j_reference,
                s.control_error,
                s.control_norm,
                s.state_error,
                s.state_norm,
                s.diverged,
                s.reference_converged
            )
            .unwrap();
        }
        out
    }
}

/// Rolls out the feedback of `surrogate` from every sample and compares
/// against the matching references.
pub fn evaluate(
    problem: &dyn ControlProblem,
    surrogate: &PolynomialAnsatz,
    samples: &[(f64, DVector<f64>)],
    references: &[OpenLoopSolution],
) -> Result<EvaluationResult> {
    if samples.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} references",
            samples.len(),
            references.len()
        )));
    }
    let law = FeedbackLaw::new(surrogate, problem);
    let parts: Vec<Result<SampleComparison>> = samples
        .par_iter()
        .zip(references.par_iter())
        .map(|((t0, y0), reference)| {
            let traj = match rollout_sample(&law, *t0, y0) {
                Ok(t) => t,
                Err(Error::NewtonFailure { .. }) => diverged_stub(reference, y0),
                Err(e) => return Err(e),
            };
            compare(&traj, reference)
        })
        .collect();
    let samples = parts.into_iter().collect::<Result<Vec<_>>>()?;
    EvaluationResult::from_samples(samples, &surrogate.flat_theta())
}

fn diverged_stub(reference: &OpenLoopSolution, y0: &DVector<f64>) -> Trajectory {
    Trajectory {
        grid: reference.grid,
        stepper: reference.stepper,
        states: vec![y0.clone()],
        controls: None,
        running_cost: f64::INFINITY,
        terminal_cost: f64::INFINITY,
        diverged: true,
        newton_iterations: 0,
    }
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub gamma: f64,
    pub spatial_degree: u32,
    pub train_mnae_j: f64,
    pub test_mnae_j: f64,
    pub train_mnse_u: f64,
    pub test_mnse_u: f64,
    pub train_mnse_y: f64,
    pub test_mnse_y: f64,
    pub support_pct: f64,
    pub support_count: usize,
    pub basis_size: usize,
    pub iterations: usize,
    pub status: String,
}

impl ResultRow {
    pub fn failed(gamma: f64, spatial_degree: u32, basis_size: usize, status: String) -> Self {
        ResultRow {
            gamma,
            spatial_degree,
            train_mnae_j: f64::NAN,
            test_mnae_j: f64::NAN,
            train_mnse_u: f64::NAN,
            test_mnse_u: f64::NAN,
            train_mnse_y: f64::NAN,
            test_mnse_y: f64::NAN,
            support_pct: f64::NAN,
            support_count: 0,
            basis_size,
            iterations: 0,
            status,
        }
    }
}

/// Results table sorted by `gamma` descending, then degree ascending.
pub fn results_csv(rows: &[ResultRow], config_hash: &str) -> String {
    let mut rows: Vec<&ResultRow> = rows.iter().collect();
    rows.sort_by(|a, b| b.gamma.total_cmp(&a.gamma).then(a.spatial_degree.cmp(&b.spatial_degree)));
    let mut out = format!("# config_hash={config_hash}\n");
    out.push_str(
        "gamma,spatial_degree,train_MNAE_J_pct,test_MNAE_J_pct,support_pct,support_count,\
         train_MNSE_u_pct,test_MNSE_u_pct,train_MNSE_y_pct,test_MNSE_y_pct,basis_size,iterations,status\n",
    );
    for r in rows {
        writeln!(
            out,
            "{:e},{},{:.4},{:.4},{:.2},{},{:.4},{:.4},{:.4},{:.4},{},{},{}",
            r.gamma,
            r.spatial_degree,
            100.0 * r.train_mnae_j,
            100.0 * r.test_mnae_j,
            r.support_pct,
            r.support_count,
            100.0 * r.train_mnse_u,
            100.0 * r.test_mnse_u,
            100.0 * r.train_mnse_y,
            100.0 * r.test_mnse_y,
            r.basis_size,
            r.iterations,
            r.status
        )
        .unwrap();
    }
    out
}

/// Run manifest written next to every output set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub train_seed: u64,
    pub test_seed: u64,
    pub version: String,
    pub command: String,
    pub wall_time_s: f64,
    /// `beta`/`alpha` were not set in the config and took their defaults.
    pub assumed_beta: bool,
    pub assumed_alpha: bool,
}

pub fn version_string() -> String {
    format!("polyfeed {}", env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{prox_step, OptimizerConfig};

    fn seq(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn mnse_identity_and_scaling() {
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let u = seq(&[1.0, -2.0, 0.5, 3.0]);
        let u2: Vec<_> = u.iter().map(|x| 2.0 * x).collect();
        assert_eq!(mnse(&[(grid, &u, &u)]).unwrap(), 0.0);
        assert!((mnse(&[(grid, &u2, &u)]).unwrap() - 1.0).abs() < 1e-15);
        let z = seq(&[0.0; 4]);
        assert!(matches!(mnse(&[(grid, &u, &z)]), Err(Error::DegenerateReference(_))));
    }

    #[test]
    fn mnse_two_sample_hand_sum() {
        let g1 = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let g2 = TimeGrid::new(0.5, 1.0, 1).unwrap();
        let (a1, r1) = (seq(&[1.0, 2.0, 3.0]), seq(&[1.5, 2.0, 2.0]));
        let (a2, r2) = (seq(&[0.0, 1.0]), seq(&[1.0, 1.0]));
        // trapezoid weights: g1 (0.25, 0.5, 0.25), g2 (0.25, 0.25)
        let num = 0.25 * 0.25 + 0.0 + 0.25 * 1.0 + 0.25 * 1.0 + 0.0;
        let den = 0.25 * 2.25 + 0.5 * 4.0 + 0.25 * 4.0 + 0.25 + 0.25;
        let got = mnse(&[(g1, &a1, &r1), (g2, &a2, &r2)]).unwrap();
        assert!((got - num / den).abs() < 1e-12);
    }

    #[test]
    fn mnae_cases() {
        assert_eq!(mnae_j(&[(2.0, 2.0), (1.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(mnae_j(&[(2.0, 3.0)]).unwrap(), 0.5);
        assert!(mnae_j(&[(0.0, 1.0)]).is_err());
        let pairs = [(1.3, 1.1), (0.4, 0.7), (2.2, 2.5)];
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, e) in pairs {
            num += f64::abs(r - e);
            den += r;
        }
        assert!((mnae_j(&pairs).unwrap() - num / den).abs() < 1e-15);
    }

    #[test]
    fn support_counts() {
        assert_eq!(support_cardinality(&[0.0; 10], 0.0), (0, 0.0));
        assert_eq!(support_cardinality(&vec![0.1; 390], 0.0), (390, 100.0));
        // prox with threshold 0.5 kills exactly the three entries below it
        let cfg = OptimizerConfig::with_penalty(0.5, 1.0);
        let theta = [0.1, -0.3, 0.49, 0.7, -2.0, 1.0];
        let out = prox_step(&theta, &[0.0; 6], 1.0, &cfg);
        assert_eq!(support_cardinality(&out, 0.0).0, 3);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let pairs = vec![(1.3, 1.1), (0.4, 0.7), (2.2, 2.5), (0.9, 0.91)];
        let mut rev = pairs.clone();
        rev.reverse();
        assert!((mnae_j(&pairs).unwrap() - mnae_j(&rev).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn results_rows_are_sorted() {
        let mk = |g: f64, n: u32| ResultRow::failed(g, n, 10, "ok".into());
        let csv = results_csv(&[mk(1e-3, 4), mk(1e-1, 4), mk(1e-3, 2), mk(1e-1, 2)], "h");
        let keys: Vec<String> = csv
            .lines()
            .skip(2)
            .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
            .collect();
        assert_eq!(keys, vec!["1e-1,2", "1e-1,4", "1e-3,2", "1e-3,4"]);
    }
}
