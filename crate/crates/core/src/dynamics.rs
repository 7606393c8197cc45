//! Control problems and the feedback laws induced by value-function surrogates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{AnsatzEval, PolynomialAnsatz};
use crate::error::{Error, Result};

/// Time stepping scheme used for closed- and open-loop rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    ExplicitEuler,
    CrankNicolson,
}

/// Stepper plus the number of steps that would cover the full horizon `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Discretization {
    pub stepper: Stepper,
    pub steps: usize,
}

/// Where initial conditions `(t0, y0)` are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SampleRegion {
    /// `y0` uniform in the box `[lo_k, hi_k]`.
    Box {
        t0: (f64, f64),
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Agent `i` placed uniformly in radius `[r_min, r_max]` and angle
    /// `(2 pi i / n, 2 pi (i + 1) / n)`; positions concatenated.
    AnnularSectors {
        t0: (f64, f64),
        agents: usize,
        r_min: f64,
        r_max: f64,
    },
}

impl SampleRegion {
    pub fn t0_range(&self) -> (f64, f64) {
        match self {
            SampleRegion::Box { t0, .. } | SampleRegion::AnnularSectors { t0, .. } => *t0,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (f64, DVector<f64>) {
        match self {
            SampleRegion::Box { t0, lo, hi } => {
                let t = uniform(rng, t0.0, t0.1);
                let y = DVector::from_iterator(
                    lo.len(),
                    lo.iter().zip(hi).map(|(&a, &b)| uniform(rng, a, b)),
                );
                (t, y)
            }
            SampleRegion::AnnularSectors {
                t0,
                agents,
                r_min,
                r_max,
            } => {
                let t = uniform(rng, t0.0, t0.1);
                let mut y = DVector::zeros(2 * agents);
                let width = 2.0 * std::f64::consts::PI / *agents as f64;
                for i in 0..*agents {
                    let rho = uniform(rng, *r_min, *r_max);
                    let angle = uniform(rng, width * i as f64, width * (i + 1) as f64);
                    y[2 * i] = rho * angle.cos();
                    y[2 * i + 1] = rho * angle.sin();
                }
                (t, y)
            }
        }
    }
}

fn uniform(rng: &mut impl Rng, a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else {
        rng.gen_range(a..b)
    }
}

/// Finite-horizon problem `min int l(t,y) + beta/2 |u|^2 dt + g(y(T))`
/// subject to `y' = f(t,y) + B u`.
///
/// Implementors supply analytic derivatives; [`validate_derivatives`] checks
/// them against finite differences.
pub trait ControlProblem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn control_dim(&self) -> usize {
        self.input_matrix().ncols()
    }

    fn drift(&self, t: f64, y: &DVector<f64>) -> DVector<f64>;

    fn drift_jacobian(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64>;

    fn input_matrix(&self) -> &DMatrix<f64>;

    fn running_cost(&self, t: f64, y: &DVector<f64>) -> f64;

    fn running_cost_grad(&self, t: f64, y: &DVector<f64>) -> DVector<f64>;

    fn terminal_cost(&self, y: &DVector<f64>) -> f64;

    fn terminal_cost_grad(&self, y: &DVector<f64>) -> DVector<f64>;

    fn beta(&self) -> f64;

    fn horizon(&self) -> f64;

    /// Rollouts with `|y|_inf` above this bound are flagged as diverged.
    fn state_guard(&self) -> f64;

    fn discretization(&self) -> Discretization;

    fn sample_region(&self) -> SampleRegion;

    /// Default normalization `l` of the monomial arguments.
    fn space_scale(&self) -> f64 {
        1.0
    }
}

/// Checks `drift_jacobian`, `running_cost_grad` and `terminal_cost_grad`
/// against central differences at `points` states drawn from the sample
/// region.
pub fn validate_derivatives(problem: &dyn ControlProblem, points: usize, seed: u64) -> Result<()> {
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = problem.sample_region();
    let d = problem.dim();
    for _ in 0..points {
        let (t, y) = region.sample(&mut rng);
        let scale = 1.0 + y.amax();
        let h = 1e-6 * scale;
        let jac = problem.drift_jacobian(t, &y);
        let gl = problem.running_cost_grad(t, &y);
        let gg = problem.terminal_cost_grad(&y);
        let mut fd_jac = DMatrix::zeros(d, d);
        let mut fd_gl = DVector::zeros(d);
        let mut fd_gg = DVector::zeros(d);
        for k in 0..d {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let col = (problem.drift(t, &yp) - problem.drift(t, &ym)) / (2.0 * h);
            fd_jac.set_column(k, &col);
            fd_gl[k] = (problem.running_cost(t, &yp) - problem.running_cost(t, &ym)) / (2.0 * h);
            fd_gg[k] = (problem.terminal_cost(&yp) - problem.terminal_cost(&ym)) / (2.0 * h);
        }
        let check = |what: &str, a: &[f64], b: &[f64]| -> Result<()> {
            let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            let rel_err = num / den;
            if rel_err > TOL {
                return Err(Error::DerivativeCheck {
                    what: format!("{} {}", problem.name(), what),
                    rel_err,
                });
            }
            Ok(())
        };
        check("drift jacobian", jac.as_slice(), fd_jac.as_slice())?;
        check("running cost gradient", gl.as_slice(), fd_gl.as_slice())?;
        check("terminal cost gradient", gg.as_slice(), fd_gg.as_slice())?;
    }
    Ok(())
}

/// Everything the steppers and the adjoint need at one `(t, y)`.
#[derive(Clone, Debug)]
pub struct LawPoint {
    pub surrogate: AnsatzEval,
    /// `U_v(t,y)`
    pub control: DVector<f64>,
    /// `F_v(t,y)`
    pub field: DVector<f64>,
    /// `D_y F_v(t,y)`, empty unless requested.
    pub field_jacobian: DMatrix<f64>,
    /// `D_y U_v(t,y)`, empty unless requested.
    pub control_jacobian: DMatrix<f64>,
}

/// Feedback `U_v = -(1/beta) B^T grad_y v` induced by a surrogate `v`.
#[derive(Clone, Copy)]
pub struct FeedbackLaw<'a> {
    pub surrogate: &'a PolynomialAnsatz,
    pub problem: &'a dyn ControlProblem,
}

impl<'a> FeedbackLaw<'a> {
    pub fn new(surrogate: &'a PolynomialAnsatz, problem: &'a dyn ControlProblem) -> Self {
        assert_eq!(surrogate.dim(), problem.dim(), "surrogate and problem dimensions differ");
        FeedbackLaw { surrogate, problem }
    }

    pub fn feedback(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        let e = self.surrogate.eval_first_order(t, y);
        self.control_from_grad(&e.grad)
    }

    fn control_from_grad(&self, grad: &DVector<f64>) -> DVector<f64> {
        -(self.problem.input_matrix().transpose() * grad) / self.problem.beta()
    }

    /// `(F_v, D_y F_v)` with `D_y F_v = D_y f - (1/beta) B B^T hess_y v`.
    pub fn closed_loop_rhs(&self, t: f64, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.evaluate(t, y, true);
        (p.field, p.field_jacobian)
    }

    /// `D_y U_v = -(1/beta) B^T hess_y v`.
    pub fn feedback_jacobian(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        self.evaluate(t, y, true).control_jacobian
    }

    pub fn evaluate(&self, t: f64, y: &DVector<f64>, with_jacobians: bool) -> LawPoint {
        let b = self.problem.input_matrix();
        let surrogate = if with_jacobians {
            self.surrogate.eval(t, y)
        } else {
            self.surrogate.eval_first_order(t, y)
        };
        let control = self.control_from_grad(&surrogate.grad);
        let field = self.problem.drift(t, y) + b * &control;
        let (field_jacobian, control_jacobian) = if with_jacobians {
            let du = -(b.transpose() * &surrogate.hess) / self.problem.beta();
            let df = self.problem.drift_jacobian(t, y) + b * &du;
            (df, du)
        } else {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        };
        LawPoint {
            surrogate,
            control,
            field,
            field_jacobian,
            control_jacobian,
        }
    }

    /// Hamiltonian `beta/2 |u|^2 + grad_y v . (f + B u)` at an arbitrary
    /// control.
    pub fn hamiltonian(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = self.surrogate.eval_first_order(t, y);
        let rhs = self.problem.drift(t, y) + self.problem.input_matrix() * u;
        0.5 * self.problem.beta() * u.norm_squared() + e.grad.dot(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{enumerate_total_degree, filter_by_b, FilterMode, IndexKind, IndexSet, MultiIndex};
    use crate::problems::LinearQuadratic;

    fn scalar_problem(beta: f64) -> LinearQuadratic {
        LinearQuadratic::constant(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
            beta,
            1.0,
        )
    }

    #[test]
    fn zero_surrogate_gives_zero_control() {
        let p = scalar_problem(1.0);
        let set = filter_by_b(&enumerate_total_degree(1, 2), p.input_matrix(), FilterMode::Exists).unwrap();
        let v = PolynomialAnsatz::zeros(set, 2, 1.0, 1.0).unwrap();
        let law = FeedbackLaw::new(&v, &p);
        let y = DVector::from_element(1, 2.0);
        assert_eq!(law.feedback(0.3, &y)[0], 0.0);
        let (f, df) = law.closed_loop_rhs(0.3, &y);
        assert_eq!(f, p.drift(0.3, &y));
        assert_eq!(df, p.drift_jacobian(0.3, &y));
        assert!(law.feedback_jacobian(0.3, &y).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_hand_computed_feedback() {
        let p = scalar_problem(2.0);
        let set = IndexSet::from_indices(IndexKind::TotalDegree, 2, 1, vec![MultiIndex::new(vec![2])]).unwrap();
        let v = PolynomialAnsatz::new(set, 1, DMatrix::from_element(1, 1, 1.0), 1.0, 1.0).unwrap();
        let law = FeedbackLaw::new(&v, &p);
        let u = law.feedback(0.0, &DVector::from_element(1, 3.0));
        assert!((u[0] + 3.0).abs() < 1e-15);
    }

    fn random_quadratic_setup(seed: u64) -> (LinearQuadratic, PolynomialAnsatz, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(d, 2, |_, _| rng.gen_range(-1.0..1.0));
        let p = LinearQuadratic::constant(a, b, DMatrix::identity(d, d), DMatrix::identity(d, d), 0.7, 1.0);
        // v = 1/2 y^T P y encoded on the degree-2 homogeneous monomials
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let pm = &m * m.transpose();
        let set = enumerate_total_degree(d, 2);
        let theta = DMatrix::from_fn(1, set.len(), |_, i| {
            let alpha = set.indices()[i].exponents();
            let s = alpha.iter().sum::<u32>();
            if s != 2 {
                return 0.0;
            }
            let nz: Vec<usize> = (0..d).filter(|&k| alpha[k] > 0).collect();
            if nz.len() == 1 {
                0.5 * pm[(nz[0], nz[0])]
            } else {
                pm[(nz[0], nz[1])]
            }
        });
        let v = PolynomialAnsatz::new(set, 1, theta, 1.0, 1.0).unwrap();
        (p, v, pm)
    }

    #[test]
    fn quadratic_surrogate_gives_linear_closed_loop() {
        let (p, v, pm) = random_quadratic_setup(5);
        let law = FeedbackLaw::new(&v, &p);
        let b = p.input_matrix().clone();
        let expected = p.drift_jacobian(0.0, &DVector::zeros(3)) - &b * b.transpose() * &pm / p.beta();
        let expected_du = -(b.transpose() * &pm) / p.beta();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let y = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let (_, df) = law.closed_loop_rhs(0.4, &y);
            assert!((df - &expected).amax() < 1e-12);
            assert!((law.feedback_jacobian(0.4, &y) - &expected_du).amax() < 1e-12);
        }
    }

    #[test]
    fn lipschitz_bound_for_quadratic_surrogate() {
        let (p, v, pm) = random_quadratic_setup(9);
        let law = FeedbackLaw::new(&v, &p);
        let b = p.input_matrix();
        let bound = b.norm() / p.beta() * pm.norm();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let y1 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let y2 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let du = (law.feedback(0.0, &y1) - law.feedback(0.0, &y2)).norm();
            assert!(du <= bound * (&y1 - &y2).norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn feedback_minimizes_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (p, v, _) = random_quadratic_setup(21);
        let set = v.index_set().clone();
        let theta = DMatrix::from_fn(2, set.len(), |_, _| rng.gen_range(-1.0..1.0));
        let v = PolynomialAnsatz::new(set, 2, theta, 1.0, 1.0).unwrap();
        let law = FeedbackLaw::new(&v, &p);
        for _ in 0..10 {
            let t = rng.gen_range(0.0..1.0);
            let y = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let u = law.feedback(t, &y);
            let h0 = law.hamiltonian(t, &y, &u);
            for _ in 0..1000 {
                let du = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
                assert!(h0 <= law.hamiltonian(t, &y, &(&u + du)));
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (p, v, _) = random_quadratic_setup(4);
        let set = enumerate_total_degree(3, 4);
        let theta = DMatrix::from_fn(3, set.len(), |_, _| rng.gen_range(-1.0..1.0));
        let _ = v;
        let v = PolynomialAnsatz::new(set, 3, theta, 1.0, 1.0).unwrap();
        let law = FeedbackLaw::new(&v, &p);
        for _ in 0..10 {
            let t = rng.gen_range(0.0..1.0);
            let y = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let (_, df) = law.closed_loop_rhs(t, &y);
            let du = law.feedback_jacobian(t, &y);
            let h = 1e-6;
            for k in 0..3 {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[k] += h;
                ym[k] -= h;
                let fd_f = (law.closed_loop_rhs(t, &yp).0 - law.closed_loop_rhs(t, &ym).0) / (2.0 * h);
                let fd_u = (law.feedback(t, &yp) - law.feedback(t, &ym)) / (2.0 * h);
                let col = df.column(k).into_owned();
                assert!((&fd_f - &col).norm() <= 1e-6 * (1.0 + col.norm()));
                let col = du.column(k).into_owned();
                assert!((&fd_u - &col).norm() <= 1e-6 * (1.0 + col.norm()));
            }
        }
    }

    #[test]
    fn box_sampler_stays_in_box() {
        let region = SampleRegion::Box {
            t0: (0.0, 1.0),
            lo: vec![-0.5; 4],
            hi: vec![0.5; 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (t, y) = region.sample(&mut rng);
            assert!((0.0..1.0).contains(&t));
            assert!(y.iter().all(|x| (-0.5..0.5).contains(x)));
        }
    }
}
