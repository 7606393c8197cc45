//! Multi-index sets and the space-time polynomial ansatz.
//!
//! A surrogate value function is expanded as
//!
//! ```text
//! v(t, y) = sum_{j < m} sum_i theta[j, i] * (t / T)^j * prod_k (y_k / l)^{alpha_i[k]}
//! ```
//!
//! where the multi-indices `alpha_i` come from a total-degree or hyperbolic
//! cross set that has been filtered against the input matrix `B` (monomials
//! whose gradient is annihilated by `B^T` cannot influence the feedback).

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial in `d` state coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(alpha: Vec<u32>) -> Self {
        MultiIndex(alpha)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    /// Total degree `sum_j alpha_j`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `prod_j (alpha_j + 1)`, the hyperbolic cross weight.
    pub fn cross_weight(&self) -> u64 {
        self.0.iter().map(|&a| a as u64 + 1).product()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// Non-zero entries as `(coordinate, exponent)` pairs.
    pub fn support(&self) -> Vec<(usize, u32)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0)
            .map(|(k, &a)| (k, a))
            .collect()
    }

    /// Graded lexicographic order: lower total degree first, ties broken so
    /// that `(1,0)` precedes `(0,1)`.
    pub fn graded_lex_cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    #[serde(alias = "total")]
    TotalDegree,
    #[serde(alias = "hc")]
    HyperbolicCross,
}

impl IndexKind {
    pub fn admits(self, alpha: &MultiIndex, degree: u32) -> bool {
        match self {
            IndexKind::TotalDegree => alpha.degree() <= degree,
            IndexKind::HyperbolicCross => alpha.cross_weight() <= degree as u64 + 1,
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexKind::TotalDegree => write!(f, "total_degree"),
            IndexKind::HyperbolicCross => write!(f, "hyperbolic_cross"),
        }
    }
}

/// Ordered set of distinct multi-indices of a given family.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSet {
    kind: IndexKind,
    degree: u32,
    dim: usize,
    indices: Vec<MultiIndex>,
}

impl IndexSet {
    /// Builds a set from explicit indices, checking family membership and
    /// distinctness. The given order is kept.
    pub fn from_indices(
        kind: IndexKind,
        degree: u32,
        dim: usize,
        indices: Vec<MultiIndex>,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for alpha in &indices {
            if alpha.dim() != dim {
                return Err(Error::Shape(format!(
                    "multi-index {alpha} has length {} but state dimension is {dim}",
                    alpha.dim()
                )));
            }
            if !kind.admits(alpha, degree) {
                return Err(Error::Config(format!(
                    "multi-index {alpha} is not in the {kind} set of degree {degree}"
                )));
            }
            if !seen.insert(alpha.clone()) {
                return Err(Error::Config(format!("duplicate multi-index {alpha}")));
            }
        }
        Ok(IndexSet {
            kind,
            degree,
            dim,
            indices,
        })
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.indices.iter()
    }

    pub fn contains(&self, alpha: &MultiIndex) -> bool {
        self.indices.contains(alpha)
    }

    fn sorted(kind: IndexKind, degree: u32, dim: usize, mut indices: Vec<MultiIndex>) -> Self {
        indices.sort_by(MultiIndex::graded_lex_cmp);
        IndexSet {
            kind,
            degree,
            dim,
            indices,
        }
    }
}

/// Enumerates `{alpha : sum_j alpha_j <= n}` in graded lexicographic order.
pub fn enumerate_total_degree(dim: usize, degree: u32) -> IndexSet {
    let mut out = Vec::new();
    let mut current = vec![0u32; dim];
    fn recurse(k: usize, budget: u32, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if k == current.len() {
            out.push(MultiIndex(current.clone()));
            return;
        }
        for a in 0..=budget {
            current[k] = a;
            recurse(k + 1, budget - a, current, out);
        }
        current[k] = 0;
    }
    recurse(0, degree, &mut current, &mut out);
    IndexSet::sorted(IndexKind::TotalDegree, degree, dim, out)
}

/// Enumerates `{alpha : prod_j (alpha_j + 1) <= n + 1}` in graded
/// lexicographic order.
pub fn enumerate_hyperbolic_cross(dim: usize, degree: u32) -> IndexSet {
    let mut out = Vec::new();
    let mut current = vec![0u32; dim];
    fn recurse(k: usize, budget: u64, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if k == current.len() {
            out.push(MultiIndex(current.clone()));
            return;
        }
        let mut a = 0u32;
        while (a as u64 + 1) <= budget {
            current[k] = a;
            recurse(k + 1, budget / (a as u64 + 1), current, out);
            a += 1;
        }
        current[k] = 0;
    }
    recurse(0, degree as u64 + 1, &mut current, &mut out);
    IndexSet::sorted(IndexKind::HyperbolicCross, degree, dim, out)
}

pub fn enumerate(kind: IndexKind, dim: usize, degree: u32) -> IndexSet {
    match kind {
        IndexKind::TotalDegree => enumerate_total_degree(dim, degree),
        IndexKind::HyperbolicCross => enumerate_hyperbolic_cross(dim, degree),
    }
}

/// Upper bound `min{2 n^3 4^d, e^2 n^(2 + log2 n)}` on the size of the
/// hyperbolic cross. Infinite when the expression overflows.
pub fn hyperbolic_cross_bound(dim: usize, degree: u32) -> f64 {
    let n = degree as f64;
    let first = 2.0 * n.powi(3) * 4f64.powi(dim as i32);
    let second = if degree == 0 {
        0.0
    } else {
        std::f64::consts::E.powi(2) * n.powf(2.0 + n.log2())
    };
    first.min(second)
}

/// How the `B`-filter treats multi-indices with several active coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Keep `alpha` if at least one coordinate with `alpha_i > 0` is actuated.
    #[default]
    Exists,
    /// Keep `alpha` only if every coordinate with `alpha_i > 0` is actuated.
    ForAll,
}

/// Row `i` of `B` is non-zero, i.e. `B^T e_i != 0`.
pub fn actuated_coordinates(b: &DMatrix<f64>) -> Vec<bool> {
    (0..b.nrows())
        .map(|i| b.row(i).iter().any(|&x| x != 0.0))
        .collect()
}

/// Removes monomials that cannot contribute to `B^T grad v`. The zero index
/// is always removed. An all-zero `B` yields an empty set.
pub fn filter_by_b(set: &IndexSet, b: &DMatrix<f64>, mode: FilterMode) -> Result<IndexSet> {
    if b.nrows() != set.dim() {
        return Err(Error::Shape(format!(
            "B has {} rows but the index set has dimension {}",
            b.nrows(),
            set.dim()
        )));
    }
    let actuated = actuated_coordinates(b);
    let keep = |alpha: &MultiIndex| {
        if alpha.is_zero() {
            return false;
        }
        let mut active = alpha
            .exponents()
            .iter()
            .zip(&actuated)
            .filter(|(&a, _)| a > 0)
            .map(|(_, &act)| act);
        match mode {
            FilterMode::Exists => active.any(|act| act),
            FilterMode::ForAll => active.all(|act| act),
        }
    };
    Ok(IndexSet {
        kind: set.kind,
        degree: set.degree,
        dim: set.dim,
        indices: set.indices.iter().filter(|a| keep(a)).cloned().collect(),
    })
}

/// Value and derivatives of the ansatz at one point.
#[derive(Clone, Debug)]
pub struct AnsatzEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub dt: f64,
}

/// Space-time polynomial surrogate of the value function.
#[derive(Clone, Debug)]
pub struct PolynomialAnsatz {
    time_degree: usize,
    index_set: IndexSet,
    theta: DMatrix<f64>,
    space_scale: f64,
    horizon: f64,
    terms: Vec<Vec<(usize, u32)>>,
    max_exponent: u32,
}

impl PolynomialAnsatz {
    pub fn new(
        index_set: IndexSet,
        time_degree: usize,
        theta: DMatrix<f64>,
        space_scale: f64,
        horizon: f64,
    ) -> Result<Self> {
        if time_degree == 0 {
            return Err(Error::Config("time degree must be at least 1".into()));
        }
        if !(space_scale > 0.0 && space_scale.is_finite()) {
            return Err(Error::Config(format!("space scale must be positive, got {space_scale}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if theta.nrows() != time_degree || theta.ncols() != index_set.len() {
            return Err(Error::Shape(format!(
                "theta is {}x{} but the basis is {}x{}",
                theta.nrows(),
                theta.ncols(),
                time_degree,
                index_set.len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("theta has non-finite entries".into()));
        }
        let terms: Vec<_> = index_set.iter().map(MultiIndex::support).collect();
        let max_exponent = terms
            .iter()
            .flat_map(|t| t.iter().map(|&(_, a)| a))
            .max()
            .unwrap_or(0);
        Ok(PolynomialAnsatz {
            time_degree,
            index_set,
            theta,
            space_scale,
            horizon,
            terms,
            max_exponent,
        })
    }

    pub fn zeros(
        index_set: IndexSet,
        time_degree: usize,
        space_scale: f64,
        horizon: f64,
    ) -> Result<Self> {
        let theta = DMatrix::zeros(time_degree, index_set.len());
        Self::new(index_set, time_degree, theta, space_scale, horizon)
    }

    pub fn time_degree(&self) -> usize {
        self.time_degree
    }

    pub fn index_set(&self) -> &IndexSet {
        &self.index_set
    }

    pub fn dim(&self) -> usize {
        self.index_set.dim()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn space_scale(&self) -> f64 {
        self.space_scale
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of coefficients `m * |basis|`.
    pub fn num_params(&self) -> usize {
        self.time_degree * self.index_set.len()
    }

    /// Coefficients flattened row by row (time power major).
    pub fn flat_theta(&self) -> Vec<f64> {
        let (m, k) = self.theta.shape();
        let mut out = Vec::with_capacity(m * k);
        for j in 0..m {
            out.extend(self.theta.row(j).iter());
        }
        out
    }

    pub fn with_flat_theta(&self, flat: &[f64]) -> Result<Self> {
        let (m, k) = self.theta.shape();
        if flat.len() != m * k {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                m * k,
                flat.len()
            )));
        }
        let theta = DMatrix::from_row_slice(m, k, flat);
        Self::new(
            self.index_set.clone(),
            self.time_degree,
            theta,
            self.space_scale,
            self.horizon,
        )
    }

    /// `(t/T)^j` for `j < m`.
    pub fn time_powers(&self, t: f64) -> Vec<f64> {
        let tau = t / self.horizon;
        let mut out = Vec::with_capacity(self.time_degree);
        let mut p = 1.0;
        for _ in 0..self.time_degree {
            out.push(p);
            p *= tau;
        }
        out
    }

    /// Spatial coefficients `c_i(t) = sum_j theta[j,i] (t/T)^j` and their time
    /// derivatives.
    fn spatial_coefficients(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let tau = t / self.horizon;
        let k = self.index_set.len();
        let mut c = vec![0.0; k];
        let mut c_dt = vec![0.0; k];
        let mut p = 1.0;
        let mut dp = 0.0;
        for j in 0..self.time_degree {
            let row = self.theta.row(j);
            for i in 0..k {
                let th = row[i];
                c[i] += th * p;
                c_dt[i] += th * dp;
            }
            dp = (j + 1) as f64 * p / self.horizon;
            p *= tau;
        }
        (c, c_dt)
    }

    fn power_table(&self, y: &DVector<f64>) -> Vec<Vec<f64>> {
        let cols = self.max_exponent as usize + 1;
        y.iter()
            .map(|&yk| {
                let z = yk / self.space_scale;
                let mut row = Vec::with_capacity(cols);
                let mut p = 1.0;
                for _ in 0..cols {
                    row.push(p);
                    p *= z;
                }
                row
            })
            .collect()
    }

    /// Full evaluation: value, spatial gradient, spatial Hessian and time
    /// derivative.
    pub fn eval(&self, t: f64, y: &DVector<f64>) -> AnsatzEval {
        self.eval_inner(t, y, true)
    }

    /// Value, gradient and time derivative only (Hessian left as zeros of
    /// size 0).
    pub fn eval_first_order(&self, t: f64, y: &DVector<f64>) -> AnsatzEval {
        self.eval_inner(t, y, false)
    }

    fn eval_inner(&self, t: f64, y: &DVector<f64>, with_hess: bool) -> AnsatzEval {
        let d = self.dim();
        assert_eq!(y.len(), d, "state dimension mismatch");
        let (c, c_dt) = self.spatial_coefficients(t);
        let pow = self.power_table(y);
        let inv_l = 1.0 / self.space_scale;
        let mut value = 0.0;
        let mut dt = 0.0;
        let mut grad = DVector::zeros(d);
        let mut hess = if with_hess {
            DMatrix::zeros(d, d)
        } else {
            DMatrix::zeros(0, 0)
        };
        let mut f = Vec::new();
        let mut df = Vec::new();
        let mut ddf = Vec::new();
        for (i, term) in self.terms.iter().enumerate() {
            let ci = c[i];
            let ci_dt = c_dt[i];
            if ci == 0.0 && ci_dt == 0.0 {
                continue;
            }
            f.clear();
            df.clear();
            ddf.clear();
            for &(k, a) in term {
                let a_us = a as usize;
                f.push(pow[k][a_us]);
                df.push(a as f64 * pow[k][a_us - 1] * inv_l);
                ddf.push(if a >= 2 {
                    (a * (a - 1)) as f64 * pow[k][a_us - 2] * inv_l * inv_l
                } else {
                    0.0
                });
            }
            let phi: f64 = f.iter().product();
            value += ci * phi;
            dt += ci_dt * phi;
            if ci == 0.0 {
                continue;
            }
            let s = term.len();
            for r in 0..s {
                let others: f64 = (0..s).filter(|&q| q != r).map(|q| f[q]).product();
                let (kr, _) = term[r];
                grad[kr] += ci * df[r] * others;
                if with_hess {
                    hess[(kr, kr)] += ci * ddf[r] * others;
                    for q in (r + 1)..s {
                        let rest: f64 = (0..s)
                            .filter(|&x| x != r && x != q)
                            .map(|x| f[x])
                            .product();
                        let (kq, _) = term[q];
                        let h = ci * df[r] * df[q] * rest;
                        hess[(kr, kq)] += h;
                        hess[(kq, kr)] += h;
                    }
                }
            }
        }
        AnsatzEval {
            value,
            grad,
            hess,
            dt,
        }
    }

    /// `grad_y phi_i(y) . direction` for every spatial basis function.
    pub fn basis_directional_derivatives(&self, y: &DVector<f64>, direction: &DVector<f64>) -> Vec<f64> {
        let pow = self.power_table(y);
        let inv_l = 1.0 / self.space_scale;
        self.terms
            .iter()
            .map(|term| {
                let mut acc = 0.0;
                for (r, &(kr, ar)) in term.iter().enumerate() {
                    if direction[kr] == 0.0 {
                        continue;
                    }
                    let mut g = ar as f64 * pow[kr][ar as usize - 1] * inv_l;
                    for (q, &(kq, aq)) in term.iter().enumerate() {
                        if q != r {
                            g *= pow[kq][aq as usize];
                        }
                    }
                    acc += g * direction[kr];
                }
                acc
            })
            .collect()
    }

    pub fn to_file(&self, config_hash: Option<String>) -> AnsatzFile {
        AnsatzFile {
            time_degree: self.time_degree,
            kind: self.index_set.kind(),
            degree: self.index_set.degree(),
            space_scale: self.space_scale,
            horizon: self.horizon,
            indices: self
                .index_set
                .iter()
                .map(|a| a.exponents().to_vec())
                .collect(),
            theta: (0..self.theta.nrows())
                .map(|j| self.theta.row(j).iter().copied().collect())
                .collect(),
            config_hash,
            iterations: None,
        }
    }

    /// Rebuilds an ansatz from its persisted form. `dim` is needed when the
    /// stored basis is empty.
    pub fn from_file(file: &AnsatzFile, dim: usize) -> Result<Self> {
        let indices = file
            .indices
            .iter()
            .map(|a| MultiIndex::new(a.clone()))
            .collect();
        let set = IndexSet::from_indices(file.kind, file.degree, dim, indices)?;
        if file.theta.len() != file.time_degree {
            return Err(Error::Shape(format!(
                "theta has {} rows, time degree is {}",
                file.theta.len(),
                file.time_degree
            )));
        }
        let mut flat = Vec::with_capacity(file.time_degree * set.len());
        for row in &file.theta {
            if row.len() != set.len() {
                return Err(Error::Shape(format!(
                    "theta row has {} entries, basis has {}",
                    row.len(),
                    set.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        let theta = DMatrix::from_row_slice(file.time_degree, set.len(), &flat);
        Self::new(set, file.time_degree, theta, file.space_scale, file.horizon)
    }
}

/// JSON form of a trained ansatz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzFile {
    pub time_degree: usize,
    pub kind: IndexKind,
    pub degree: u32,
    pub space_scale: f64,
    pub horizon: f64,
    pub indices: Vec<Vec<u32>>,
    pub theta: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Optimizer iterations that produced `theta`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn idx(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    fn binomial(n: u64, k: u64) -> u64 {
        (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
    }

    /// Brute force over the box {0..n}^d.
    fn brute_force(dim: usize, n: u32, keep: impl Fn(&MultiIndex) -> bool) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let total = (n as usize + 1).pow(dim as u32);
        for code in 0..total {
            let mut c = code;
            let mut alpha = vec![0u32; dim];
            for a in alpha.iter_mut() {
                *a = (c % (n as usize + 1)) as u32;
                c /= n as usize + 1;
            }
            let alpha = MultiIndex::new(alpha);
            if keep(&alpha) {
                out.push(alpha);
            }
        }
        out
    }

    #[test]
    fn total_degree_small_cases() {
        let s = enumerate_total_degree(2, 0);
        assert_eq!(s.indices(), &[idx(&[0, 0])]);

        let s = enumerate_total_degree(2, 2);
        let expected = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];
        let expected: Vec<_> = expected.iter().map(|a| idx(a)).collect();
        assert_eq!(s.indices(), expected.as_slice());

        assert_eq!(enumerate_total_degree(4, 2).len(), 15);
    }

    #[test]
    fn total_degree_matches_binomial_count() {
        for d in 1..=6usize {
            for n in 0..=6u32 {
                let s = enumerate_total_degree(d, n);
                let brute = brute_force(d, n, |a| a.degree() <= n);
                assert_eq!(s.len(), brute.len());
                assert_eq!(s.len() as u64, binomial(n as u64 + d as u64, d as u64));
                for a in &brute {
                    assert!(s.contains(a));
                }
            }
        }
    }

    #[test]
    fn hyperbolic_cross_small_cases() {
        let s = enumerate_hyperbolic_cross(2, 3);
        let expected = [[0, 0], [1, 0], [2, 0], [3, 0], [0, 1], [1, 1], [0, 2], [0, 3]];
        assert_eq!(s.len(), 8);
        for a in expected {
            assert!(s.contains(&idx(&a)), "missing {a:?}");
        }

        let s = enumerate_hyperbolic_cross(39, 2);
        assert_eq!(s.len(), 79);
        assert!(s.iter().all(|a| a.support().len() <= 1));

        let s = enumerate_hyperbolic_cross(1, 0);
        assert_eq!(s.indices(), &[idx(&[0])]);
    }

    #[test]
    fn hyperbolic_cross_is_subset_of_total_degree() {
        for d in 1..=4usize {
            for n in 0..=8u32 {
                let hc = enumerate_hyperbolic_cross(d, n);
                let td = enumerate_total_degree(d, n);
                let brute = brute_force(d, n, |a| a.cross_weight() <= n as u64 + 1);
                assert_eq!(hc.len(), brute.len());
                for a in hc.iter() {
                    assert!(td.contains(a));
                }
                if n >= 1 {
                    assert!(hc.len() as f64 <= hyperbolic_cross_bound(d, n));
                }
            }
        }
    }

    #[test]
    fn enumeration_is_deterministic() {
        assert_eq!(enumerate_hyperbolic_cross(5, 6), enumerate_hyperbolic_cross(5, 6));
        assert_eq!(enumerate_total_degree(4, 3), enumerate_total_degree(4, 3));
    }

    #[test]
    fn filter_keeps_monomials_touching_actuated_coordinates() {
        let mut b = DMatrix::zeros(4, 1);
        b[(1, 0)] = 1.0;
        let s = filter_by_b(&enumerate_total_degree(4, 2), &b, FilterMode::Exists).unwrap();
        let expected = [[1, 1, 0, 0], [0, 2, 0, 0], [0, 1, 1, 0], [0, 1, 0, 1], [0, 1, 0, 0]];
        assert_eq!(s.len(), 5);
        for a in expected {
            assert!(s.contains(&idx(&a)));
        }
        for a in enumerate_total_degree(4, 2).iter() {
            // removed iff no positive exponent on the actuated coordinate
            assert_eq!(s.contains(a), a.exponents()[1] > 0);
        }
    }

    #[test]
    fn filter_forall_mode_drops_cross_terms() {
        let mut b = DMatrix::zeros(4, 1);
        b[(1, 0)] = 1.0;
        let s = filter_by_b(&enumerate_total_degree(4, 2), &b, FilterMode::ForAll).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn filter_reproduces_benchmark_cardinalities() {
        let mut b = DMatrix::zeros(39, 3);
        for i in 0..13 {
            b[(i + 5, i % 3)] = 1.0;
        }
        let s = filter_by_b(&enumerate_hyperbolic_cross(39, 2), &b, FilterMode::Exists).unwrap();
        assert_eq!(s.len(), 26);

        let eye = DMatrix::identity(20, 20);
        let s = filter_by_b(&enumerate_hyperbolic_cross(20, 4), &eye, FilterMode::Exists).unwrap();
        assert_eq!(s.len(), 270);
    }

    #[test]
    fn filter_with_zero_b_is_empty() {
        let b = DMatrix::zeros(3, 2);
        let s = filter_by_b(&enumerate_total_degree(3, 3), &b, FilterMode::Exists).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn single_monomial_evaluation() {
        let set = IndexSet::from_indices(IndexKind::TotalDegree, 2, 2, vec![idx(&[2, 0])]).unwrap();
        let theta = DMatrix::from_element(1, 1, 1.0);
        let a = PolynomialAnsatz::new(set, 1, theta, 1.0, 1.0).unwrap();
        let e = a.eval(0.3, &DVector::from_vec(vec![3.0, 5.0]));
        assert_eq!(e.value, 9.0);
        assert_eq!(e.grad.as_slice(), &[6.0, 0.0]);
        assert_eq!(e.hess, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert_eq!(e.dt, 0.0);
    }

    #[test]
    fn zero_theta_evaluates_to_zero() {
        let set = enumerate_total_degree(3, 3);
        let a = PolynomialAnsatz::zeros(set, 4, 0.7, 2.0).unwrap();
        let e = a.eval(0.5, &DVector::from_vec(vec![1.0, -2.0, 0.5]));
        assert_eq!(e.value, 0.0);
        assert!(e.grad.iter().all(|&x| x == 0.0));
        assert!(e.hess.iter().all(|&x| x == 0.0));
        assert_eq!(e.dt, 0.0);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set = enumerate_hyperbolic_cross(3, 5);
        let (l, horizon) = (0.8, 2.0);
        for _ in 0..100 {
            let m = 4;
            let theta = DMatrix::from_fn(m, set.len(), |_, _| rng.gen_range(-1.0..1.0));
            let a = PolynomialAnsatz::new(set.clone(), m, theta, l, horizon).unwrap();
            let t = rng.gen_range(0.0..horizon);
            let y = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let e = a.eval(t, &y);
            // step of 1e-5 in normalized variables
            let hy = 1e-5 * l;
            let ht = 1e-5 * horizon;
            let fd_t = (a.eval(t + ht, &y).value - a.eval(t - ht, &y).value) / (2.0 * ht);
            assert!(rel_err(e.dt, fd_t) < 1e-6, "dt {} vs {}", e.dt, fd_t);
            for k in 0..3 {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[k] += hy;
                ym[k] -= hy;
                let ep = a.eval(t, &yp);
                let em = a.eval(t, &ym);
                let fd = (ep.value - em.value) / (2.0 * hy);
                assert!(rel_err(e.grad[k], fd) < 1e-6);
                for q in 0..3 {
                    let fd = (ep.grad[q] - em.grad[q]) / (2.0 * hy);
                    assert!(rel_err(e.hess[(k, q)], fd) < 1e-6);
                    assert_eq!(e.hess[(k, q)], e.hess[(q, k)]);
                }
            }
        }
    }

    #[test]
    fn directional_derivatives_agree_with_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = enumerate_total_degree(3, 3);
        let y = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let dir = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let a = PolynomialAnsatz::zeros(set.clone(), 1, 0.5, 1.0).unwrap();
        let dd = a.basis_directional_derivatives(&y, &dir);
        for (i, _) in set.iter().enumerate() {
            let mut theta = DMatrix::zeros(1, set.len());
            theta[(0, i)] = 1.0;
            let single = a.with_flat_theta(theta.as_slice()).unwrap();
            let g = single.eval(0.0, &y).grad;
            assert!((g.dot(&dir) - dd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let set = enumerate_hyperbolic_cross(4, 3);
        let theta = DMatrix::from_fn(3, set.len(), |_, _| rng.gen_range(-1e3..1e3) * 1.1e-7);
        let a = PolynomialAnsatz::new(set, 3, theta, 0.5, 1.0).unwrap();
        let json = serde_json::to_string(&a.to_file(Some("abc".into()))).unwrap();
        let file: AnsatzFile = serde_json::from_str(&json).unwrap();
        let b = PolynomialAnsatz::from_file(&file, 4).unwrap();
        assert_eq!(a.theta(), b.theta());
        assert_eq!(a.index_set(), b.index_set());
        assert_eq!(file.config_hash.as_deref(), Some("abc"));
    }
}
