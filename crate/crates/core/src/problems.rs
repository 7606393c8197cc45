//! Concrete control problems: a generic linear-quadratic family (with the
//! time-varying inverted pendulum as an instance), a Chebyshev collocation of
//! the controlled Allen-Cahn equation, and a collision-avoiding multi-agent
//! problem.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{validate_derivatives, ControlProblem, Discretization, SampleRegion, Stepper};
use crate::error::{Error, Result};

type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// `y' = A(t) y + B u`, `l = 1/2 y^T Q y`, `g = 1/2 y^T G y`.
#[derive(Clone)]
pub struct LinearQuadratic {
    name: String,
    a: MatrixFn,
    b: DMatrix<f64>,
    running_weight: DMatrix<f64>,
    terminal_weight: DMatrix<f64>,
    beta: f64,
    horizon: f64,
    guard: f64,
    discretization: Discretization,
    region: SampleRegion,
    space_scale: f64,
}

impl LinearQuadratic {
    pub fn new(
        a: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        b: DMatrix<f64>,
        running_weight: DMatrix<f64>,
        terminal_weight: DMatrix<f64>,
        beta: f64,
        horizon: f64,
    ) -> Self {
        let d = b.nrows();
        LinearQuadratic {
            name: "linear_quadratic".into(),
            a: Arc::new(a),
            b,
            running_weight,
            terminal_weight,
            beta,
            horizon,
            guard: 1e6,
            discretization: Discretization {
                stepper: Stepper::ExplicitEuler,
                steps: 100,
            },
            region: SampleRegion::Box {
                t0: (0.0, horizon),
                lo: vec![-1.0; d],
                hi: vec![1.0; d],
            },
            space_scale: 1.0,
        }
    }

    pub fn constant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        running_weight: DMatrix<f64>,
        terminal_weight: DMatrix<f64>,
        beta: f64,
        horizon: f64,
    ) -> Self {
        Self::new(move |_| a.clone(), b, running_weight, terminal_weight, beta, horizon)
    }

    pub fn a_matrix(&self, t: f64) -> DMatrix<f64> {
        (self.a)(t)
    }

    pub fn running_weight(&self) -> &DMatrix<f64> {
        &self.running_weight
    }

    pub fn terminal_weight(&self) -> &DMatrix<f64> {
        &self.terminal_weight
    }

    pub fn set_name(&mut self, name: &str) {
        self.name = name.to_string();
    }

    pub fn set_state_guard(&mut self, guard: f64) {
        self.guard = guard;
    }

    pub fn set_discretization(&mut self, discretization: Discretization) {
        self.discretization = discretization;
    }

    pub fn set_region(&mut self, region: SampleRegion) {
        self.region = region;
    }

    pub fn set_space_scale(&mut self, l: f64) {
        self.space_scale = l;
    }
}

impl ControlProblem for LinearQuadratic {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn drift(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        (self.a)(t) * y
    }

    fn drift_jacobian(&self, t: f64, _y: &DVector<f64>) -> DMatrix<f64> {
        (self.a)(t)
    }

    fn input_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn running_cost(&self, _t: f64, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.running_weight * y))
    }

    fn running_cost_grad(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        &self.running_weight * y
    }

    fn terminal_cost(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.terminal_weight * y))
    }

    fn terminal_cost_grad(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.terminal_weight * y
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn state_guard(&self) -> f64 {
        self.guard
    }

    fn discretization(&self) -> Discretization {
        self.discretization
    }

    fn sample_region(&self) -> SampleRegion {
        self.region.clone()
    }

    fn space_scale(&self) -> f64 {
        self.space_scale
    }
}

pub mod pendulum {
    pub const FRICTION: f64 = 1.0;
    pub const GRAVITY: f64 = 9.8;
    pub const LENGTH: f64 = 0.842;
    pub const HORIZON: f64 = 1.0;

    /// Cart mass `M_c(t) = exp(-10 t) + 1`.
    pub fn cart_mass(t: f64) -> f64 {
        (-10.0 * t).exp() + 1.0
    }

    pub fn cart_mass_rate(t: f64) -> f64 {
        -10.0 * (-10.0 * t).exp()
    }
}

/// Linearized cart-pendulum with a time-varying cart mass.
pub fn pendulum_matrix(t: f64) -> DMatrix<f64> {
    use pendulum::*;
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 1)] = 1.0;
    a[(1, 1)] = -(FRICTION + cart_mass_rate(t)) / cart_mass(t);
    a[(2, 3)] = 1.0;
    a[(3, 0)] = -GRAVITY / LENGTH;
    a[(3, 2)] = GRAVITY / LENGTH;
    a
}

pub fn build_pendulum(alpha: f64, beta: f64, steps: usize) -> Result<LinearQuadratic> {
    check_positive("alpha", alpha)?;
    check_positive("beta", beta)?;
    let mut b = DMatrix::zeros(4, 1);
    b[(1, 0)] = 1.0;
    let mut p = LinearQuadratic::new(
        pendulum_matrix,
        b,
        DMatrix::identity(4, 4),
        DMatrix::identity(4, 4) * alpha,
        beta,
        pendulum::HORIZON,
    );
    p.set_name("pendulum");
    p.set_state_guard(1e3);
    p.set_discretization(Discretization {
        stepper: Stepper::ExplicitEuler,
        steps,
    });
    p.set_region(SampleRegion::Box {
        t0: (0.0, 1.0),
        lo: vec![-0.5; 4],
        hi: vec![0.5; 4],
    });
    p.set_space_scale(0.5);
    Ok(p)
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {x}")))
    }
}

/// Gauss-Lobatto nodes `x_j = cos(j pi / n)`, `j = 0..=n`.
pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    (0..=n).map(|j| (j as f64 * PI / n as f64).cos()).collect()
}

/// First-derivative collocation matrix on the Chebyshev nodes.
pub fn chebyshev_diff_matrix(n: usize) -> DMatrix<f64> {
    let x = chebyshev_nodes(n);
    let c = |j: usize| {
        let base = if j == 0 || j == n { 2.0 } else { 1.0 };
        if j % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
    }
    // negative sum trick for the diagonal
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    d
}

/// Clenshaw-Curtis weights on the Chebyshev nodes, `n` even.
pub fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    assert!(n % 2 == 0 && n >= 2, "Clenshaw-Curtis needs an even number of intervals");
    let nf = n as f64;
    let theta: Vec<f64> = (0..=n).map(|j| j as f64 * PI / nf).collect();
    let mut w = vec![0.0; n + 1];
    w[0] = 1.0 / (nf * nf - 1.0);
    w[n] = w[0];
    for j in 1..n {
        let mut v = 1.0;
        for k in 1..n / 2 {
            let kf = k as f64;
            v -= 2.0 * (2.0 * kf * theta[j]).cos() / (4.0 * kf * kf - 1.0);
        }
        v -= (nf * theta[j]).cos() / (nf * nf - 1.0);
        w[j] = 2.0 * v / nf;
    }
    w
}

pub mod allen_cahn {
    pub const DIFFUSION: f64 = 0.5;
    pub const HORIZON: f64 = 4.0;
    pub const INTERVALS: usize = 40;
    pub const CONTROL_SETS: [(f64, f64); 3] = [(-0.7, -0.4), (-0.2, 0.2), (0.4, 0.7)];
}

/// Allen-Cahn equation with homogeneous Neumann conditions on `(-1, 1)`,
/// discretized by Chebyshev collocation; the two boundary values are
/// eliminated through the Neumann rows of the differentiation matrix.
#[derive(Clone, Debug)]
pub struct AllenCahn {
    laplacian: DMatrix<f64>,
    cost_matrix: DMatrix<f64>,
    reduced_weights: DVector<f64>,
    interior_nodes: Vec<f64>,
    b: DMatrix<f64>,
    nu: f64,
    alpha: f64,
    beta: f64,
    horizon: f64,
    guard: f64,
    discretization: Discretization,
    region: SampleRegion,
}

impl AllenCahn {
    /// Reduced Laplacian acting on interior values.
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Quadrature weights for `int y dx` in terms of interior values.
    pub fn reduced_weights(&self) -> &DVector<f64> {
        &self.reduced_weights
    }

    /// Symmetric matrix with `int y^2 dx ~= y^T C y`.
    pub fn cost_matrix(&self) -> &DMatrix<f64> {
        &self.cost_matrix
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.interior_nodes
    }

    pub fn set_region(&mut self, region: SampleRegion) {
        self.region = region;
    }

    pub fn set_state_guard(&mut self, guard: f64) {
        self.guard = guard;
    }

    pub fn set_horizon(&mut self, horizon: f64) {
        self.horizon = horizon;
    }
}

pub fn build_allen_cahn(alpha: f64, beta: f64, steps: usize) -> Result<AllenCahn> {
    use allen_cahn::*;
    check_positive("alpha", alpha)?;
    check_positive("beta", beta)?;
    let n = INTERVALS;
    let x = chebyshev_nodes(n);
    let d1 = chebyshev_diff_matrix(n);
    let d2 = &d1 * &d1;
    let interior: Vec<usize> = (1..n).collect();
    let boundary = [0usize, n];
    let ni = interior.len();

    // D1[b, b] y_b + D1[b, int] y_int = 0  =>  y_b = E y_int
    let m = DMatrix::from_fn(2, 2, |i, j| d1[(boundary[i], boundary[j])]);
    let rhs = DMatrix::from_fn(2, ni, |i, j| -d1[(boundary[i], interior[j])]);
    let e = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular Neumann boundary elimination".into()))?;

    let d2_ii = DMatrix::from_fn(ni, ni, |i, j| d2[(interior[i], interior[j])]);
    let d2_ib = DMatrix::from_fn(ni, 2, |i, j| d2[(interior[i], boundary[j])]);
    let laplacian = d2_ii + d2_ib * &e;

    let w = clenshaw_curtis_weights(n);
    let w_b = DVector::from_vec(boundary.iter().map(|&k| w[k]).collect());
    let w_i = DVector::from_vec(interior.iter().map(|&k| w[k]).collect());
    let reduced_weights = &w_i + e.transpose() * &w_b;
    let cost_matrix = DMatrix::from_diagonal(&w_i) + e.transpose() * DMatrix::from_diagonal(&w_b) * &e;

    let interior_nodes: Vec<f64> = interior.iter().map(|&k| x[k]).collect();
    let b = DMatrix::from_fn(ni, CONTROL_SETS.len(), |i, j| {
        let (lo, hi) = CONTROL_SETS[j];
        let xi = interior_nodes[i];
        if xi > lo && xi < hi {
            1.0
        } else {
            0.0
        }
    });
    Ok(AllenCahn {
        laplacian,
        cost_matrix,
        reduced_weights,
        interior_nodes,
        b,
        nu: DIFFUSION,
        alpha,
        beta,
        horizon: HORIZON,
        guard: 1e3,
        discretization: Discretization {
            stepper: Stepper::CrankNicolson,
            steps,
        },
        region: SampleRegion::Box {
            t0: (0.0, 1.0),
            lo: vec![-10.0; ni],
            hi: vec![10.0; ni],
        },
    })
}

impl ControlProblem for AllenCahn {
    fn name(&self) -> &str {
        "allen_cahn"
    }

    fn dim(&self) -> usize {
        self.interior_nodes.len()
    }

    fn drift(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        self.nu * (&self.laplacian * y) + y.map(|v| v * (1.0 - v * v))
    }

    fn drift_jacobian(&self, _t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.nu * &self.laplacian;
        for k in 0..y.len() {
            j[(k, k)] += 1.0 - 3.0 * y[k] * y[k];
        }
        j
    }

    fn input_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn running_cost(&self, _t: f64, y: &DVector<f64>) -> f64 {
        y.dot(&(&self.cost_matrix * y))
    }

    fn running_cost_grad(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        2.0 * (&self.cost_matrix * y)
    }

    fn terminal_cost(&self, y: &DVector<f64>) -> f64 {
        0.5 * self.alpha * y.dot(&(&self.cost_matrix * y))
    }

    fn terminal_cost_grad(&self, y: &DVector<f64>) -> DVector<f64> {
        self.alpha * (&self.cost_matrix * y)
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn state_guard(&self) -> f64 {
        self.guard
    }

    fn discretization(&self) -> Discretization {
        self.discretization
    }

    fn sample_region(&self) -> SampleRegion {
        self.region.clone()
    }

    fn space_scale(&self) -> f64 {
        10.0
    }
}

pub mod multi_agent {
    pub const PLANE_DIM: usize = 2;
    pub const AGENTS: usize = 10;
    pub const OBSTACLES: usize = 4;
    pub const OBSTACLE_RADIUS: f64 = 0.2;
    pub const AGENT_RADIUS: f64 = 0.1;
    pub const SIGMA_OBSTACLE: f64 = 10.0;
    pub const SIGMA_AGENT: f64 = 10.0;
    pub const SIGMA_TARGET: f64 = 100.0;
}

/// Agents in the plane with velocity control, Gaussian collision penalties
/// against obstacles and each other, and a quadratic terminal pull towards
/// per-agent targets.
///
/// The control cost `beta/(2 N_a) sum_i |u_i|^2` is carried as the generic
/// `beta/2 |u|^2` with `beta = beta_agent / N_a`.
#[derive(Clone, Debug)]
pub struct MultiAgent {
    obstacles: Vec<[f64; 2]>,
    targets: Vec<[f64; 2]>,
    b: DMatrix<f64>,
    beta: f64,
    horizon: f64,
    guard: f64,
    discretization: Discretization,
    region: SampleRegion,
}

fn circle_points(count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let a = 2.0 * i as f64 * PI / count as f64;
            [0.5 * a.cos(), 0.5 * a.sin()]
        })
        .collect()
}

pub fn build_multi_agent(beta: f64, steps: usize, horizon: f64) -> Result<MultiAgent> {
    use multi_agent::*;
    check_positive("beta", beta)?;
    check_positive("T", horizon)?;
    let d = PLANE_DIM * AGENTS;
    Ok(MultiAgent {
        obstacles: circle_points(OBSTACLES),
        targets: circle_points(AGENTS),
        b: DMatrix::identity(d, d),
        beta: beta / AGENTS as f64,
        horizon,
        guard: 1e2,
        discretization: Discretization {
            stepper: Stepper::ExplicitEuler,
            steps,
        },
        // Trajectories start at time zero; the sampler override can widen this.
        region: SampleRegion::AnnularSectors {
            t0: (0.0, 0.0),
            agents: AGENTS,
            r_min: 0.8,
            r_max: 2.0,
        },
    })
}

impl MultiAgent {
    pub fn obstacles(&self) -> &[[f64; 2]] {
        &self.obstacles
    }

    pub fn targets(&self) -> &[[f64; 2]] {
        &self.targets
    }

    pub fn set_region(&mut self, region: SampleRegion) {
        self.region = region;
    }

    pub fn set_state_guard(&mut self, guard: f64) {
        self.guard = guard;
    }

    fn agent(y: &DVector<f64>, i: usize) -> [f64; 2] {
        [y[2 * i], y[2 * i + 1]]
    }

    /// Agent-obstacle collision term.
    pub fn obstacle_penalty(&self, y: &DVector<f64>) -> f64 {
        use multi_agent::*;
        let s2 = 2.0 * OBSTACLE_RADIUS * OBSTACLE_RADIUS;
        let mut acc = 0.0;
        for i in 0..AGENTS {
            let a = Self::agent(y, i);
            for o in &self.obstacles {
                acc += (-dist2(a, *o) / s2).exp();
            }
        }
        acc / (AGENTS * OBSTACLES) as f64
    }

    /// Agent-agent collision term.
    pub fn agent_penalty(&self, y: &DVector<f64>) -> f64 {
        use multi_agent::*;
        let s2 = 2.0 * AGENT_RADIUS * AGENT_RADIUS;
        let mut acc = 0.0;
        for i in 0..AGENTS {
            for j in (i + 1)..AGENTS {
                acc += (-dist2(Self::agent(y, i), Self::agent(y, j)) / s2).exp();
            }
        }
        2.0 * acc / (AGENTS * (AGENTS - 1)) as f64
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

impl ControlProblem for MultiAgent {
    fn name(&self) -> &str {
        "multi_agent"
    }

    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn drift(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(y.len())
    }

    fn drift_jacobian(&self, _t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(y.len(), y.len())
    }

    fn input_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn running_cost(&self, _t: f64, y: &DVector<f64>) -> f64 {
        use multi_agent::*;
        SIGMA_OBSTACLE * self.obstacle_penalty(y) + SIGMA_AGENT * self.agent_penalty(y)
    }

    fn running_cost_grad(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        use multi_agent::*;
        let mut g = DVector::zeros(y.len());
        let so2 = OBSTACLE_RADIUS * OBSTACLE_RADIUS;
        let co = SIGMA_OBSTACLE / (AGENTS * OBSTACLES) as f64;
        for i in 0..AGENTS {
            let a = Self::agent(y, i);
            for o in &self.obstacles {
                let k = (-dist2(a, *o) / (2.0 * so2)).exp();
                g[2 * i] -= co * k * (a[0] - o[0]) / so2;
                g[2 * i + 1] -= co * k * (a[1] - o[1]) / so2;
            }
        }
        let sa2 = AGENT_RADIUS * AGENT_RADIUS;
        let ca = SIGMA_AGENT * 2.0 / (AGENTS * (AGENTS - 1)) as f64;
        for i in 0..AGENTS {
            let a = Self::agent(y, i);
            for j in (i + 1)..AGENTS {
                let b = Self::agent(y, j);
                let k = (-dist2(a, b) / (2.0 * sa2)).exp();
                for c in 0..2 {
                    let gc = ca * k * (a[c] - b[c]) / sa2;
                    g[2 * i + c] -= gc;
                    g[2 * j + c] += gc;
                }
            }
        }
        g
    }

    fn terminal_cost(&self, y: &DVector<f64>) -> f64 {
        use multi_agent::*;
        let s: f64 = (0..AGENTS).map(|i| dist2(Self::agent(y, i), self.targets[i])).sum();
        SIGMA_TARGET / (2.0 * AGENTS as f64) * s
    }

    fn terminal_cost_grad(&self, y: &DVector<f64>) -> DVector<f64> {
        use multi_agent::*;
        let c = SIGMA_TARGET / AGENTS as f64;
        DVector::from_fn(y.len(), |k, _| c * (y[k] - self.targets[k / 2][k % 2]))
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn state_guard(&self) -> f64 {
        self.guard
    }

    fn discretization(&self) -> Discretization {
        self.discretization
    }

    fn sample_region(&self) -> SampleRegion {
        self.region.clone()
    }

    fn space_scale(&self) -> f64 {
        2.0
    }
}

/// `N` initial conditions drawn from the problem's region, reproducible
/// under `seed`.
pub fn sample_initial_conditions(problem: &dyn ControlProblem, n: usize, seed: u64) -> Vec<(f64, DVector<f64>)> {
    let region = problem.sample_region();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| region.sample(&mut rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Pendulum,
    AllenCahn,
    MultiAgent,
}

/// Optional changes to the default sampling region.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerOverrides {
    /// Initial time interval.
    #[serde(default)]
    pub t0: Option<[f64; 2]>,
    /// Symmetric box bounds applied to every coordinate.
    #[serde(default, rename = "box")]
    pub bounds: Option<[f64; 2]>,
    /// Radial interval for the annular sectors.
    #[serde(default)]
    pub radius: Option<[f64; 2]>,
}

fn default_beta() -> f64 {
    0.1
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: ProblemKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default, rename = "N_t")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub state_guard: Option<f64>,
    #[serde(default)]
    pub sampler: Option<SamplerOverrides>,
}

impl ProblemConfig {
    pub fn new(problem: ProblemKind) -> Self {
        ProblemConfig {
            problem,
            beta: default_beta(),
            alpha: default_alpha(),
            horizon: None,
            steps: None,
            state_guard: None,
            sampler: None,
        }
    }

    pub fn default_steps(&self) -> usize {
        match self.problem {
            ProblemKind::Pendulum => 100,
            ProblemKind::AllenCahn => 200,
            ProblemKind::MultiAgent => 100,
        }
    }

    /// Builds the problem and runs the derivative validator on it.
    pub fn build(&self) -> Result<Box<dyn ControlProblem>> {
        let steps = self.steps.unwrap_or_else(|| self.default_steps());
        if steps == 0 {
            return Err(Error::Config("N_t must be positive".into()));
        }
        let problem: Box<dyn ControlProblem> = match self.problem {
            ProblemKind::Pendulum => {
                if self.horizon.is_some_and(|t| t != pendulum::HORIZON) {
                    return Err(Error::Config("the pendulum horizon is fixed at T = 1".into()));
                }
                let mut p = build_pendulum(self.alpha, self.beta, steps)?;
                if let Some(g) = self.state_guard {
                    p.set_state_guard(g);
                }
                p.set_region(self.apply_overrides(p.sample_region())?);
                Box::new(p)
            }
            ProblemKind::AllenCahn => {
                let mut p = build_allen_cahn(self.alpha, self.beta, steps)?;
                if let Some(t) = self.horizon {
                    check_positive("T", t)?;
                    p.set_horizon(t);
                }
                if let Some(g) = self.state_guard {
                    p.set_state_guard(g);
                }
                p.set_region(self.apply_overrides(p.sample_region())?);
                Box::new(p)
            }
            ProblemKind::MultiAgent => {
                let mut p = build_multi_agent(self.beta, steps, self.horizon.unwrap_or(1.0))?;
                if let Some(g) = self.state_guard {
                    p.set_state_guard(g);
                }
                p.set_region(self.apply_overrides(p.sample_region())?);
                Box::new(p)
            }
        };
        validate_derivatives(problem.as_ref(), 5, 0x5eed)?;
        Ok(problem)
    }

    fn apply_overrides(&self, region: SampleRegion) -> Result<SampleRegion> {
        let Some(ov) = &self.sampler else {
            return Ok(region);
        };
        let check = |name: &str, r: [f64; 2]| {
            if r[0] <= r[1] && r.iter().all(|x| x.is_finite()) {
                Ok((r[0], r[1]))
            } else {
                Err(Error::Config(format!("invalid sampler range {name}: {r:?}")))
            }
        };
        Ok(match region {
            SampleRegion::Box { t0, lo, hi } => {
                if ov.radius.is_some() {
                    return Err(Error::Config("radius override only applies to the multi-agent sampler".into()));
                }
                let t0 = ov.t0.map(|r| check("t0", r)).transpose()?.unwrap_or(t0);
                let (lo, hi) = match ov.bounds {
                    Some(r) => {
                        let (a, b) = check("box", r)?;
                        (vec![a; lo.len()], vec![b; hi.len()])
                    }
                    None => (lo, hi),
                };
                SampleRegion::Box { t0, lo, hi }
            }
            SampleRegion::AnnularSectors {
                t0,
                agents,
                r_min,
                r_max,
            } => {
                if ov.bounds.is_some() {
                    return Err(Error::Config("box override does not apply to the multi-agent sampler".into()));
                }
                let t0 = ov.t0.map(|r| check("t0", r)).transpose()?.unwrap_or(t0);
                let (r_min, r_max) = ov
                    .radius
                    .map(|r| check("radius", r))
                    .transpose()?
                    .unwrap_or((r_min, r_max));
                SampleRegion::AnnularSectors {
                    t0,
                    agents,
                    r_min,
                    r_max,
                }
            }
        })
    }
}
