//! Run configuration and the batch commands behind the `polyfeed` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{enumerate, filter_by_b, hyperbolic_cross_bound, AnsatzFile, FilterMode, IndexKind, PolynomialAnsatz};
use crate::dynamics::ControlProblem;
use crate::error::{Error, Result};
use crate::learn::{iteration_log_csv, train, OptimizeResult, OptimizerConfig};
use crate::openloop::{solve_references, OpenLoopSolution};
use crate::problems::{sample_initial_conditions, ProblemConfig};
use crate::report::{evaluate, results_csv, version_string, EvaluationResult, Manifest, ResultRow};

fn default_filter() -> FilterMode {
    FilterMode::Exists
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: IndexKind,
    /// Spatial degree `n`.
    pub degree: u32,
    /// Number of time monomials `m`.
    pub time_degree: usize,
    /// Monomial normalization; the problem default when absent.
    #[serde(default)]
    pub space_scale: Option<f64>,
    #[serde(default = "default_filter")]
    pub filter: FilterMode,
}

fn default_ref_tol() -> f64 {
    1e-6
}

fn default_ref_iters() -> usize {
    5000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "default_ref_tol")]
    pub tol: f64,
    #[serde(default = "default_ref_iters")]
    pub max_iters: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            tol: default_ref_tol(),
            max_iters: default_ref_iters(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub degrees: Vec<u32>,
}

fn default_test_size() -> usize {
    50
}

fn default_train_seed() -> u64 {
    1
}

fn default_test_seed() -> u64 {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub basis: BasisConfig,
    pub optimizer: OptimizerConfig,
    pub train_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_train_seed")]
    pub train_seed: u64,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

/// A parsed config plus what was filled in by defaults.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub assumed_beta: bool,
    pub assumed_alpha: bool,
}

pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    let has = |key: &str| raw.get("problem").and_then(|p| p.get(key)).is_some();
    let (assumed_beta, assumed_alpha) = (!has("beta"), !has("alpha"));
    let config: RunConfig = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(LoadedConfig {
        config,
        assumed_beta,
        assumed_alpha,
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    hex(&Sha256::digest(text.as_bytes()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_size == 0 {
            return Err(Error::Config("train_size must be positive".into()));
        }
        if self.test_size == 0 {
            return Err(Error::Config("test_size must be positive".into()));
        }
        if self.basis.time_degree == 0 {
            return Err(Error::Config("time_degree must be at least 1".into()));
        }
        if self.basis.space_scale.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("space_scale must be positive".into()));
        }
        if !(self.reference.tol > 0.0) {
            return Err(Error::Config("reference tol must be positive".into()));
        }
        self.optimizer.validate()?;
        if let Some(s) = &self.sweep {
            if s.gammas.is_empty() || s.degrees.is_empty() {
                return Err(Error::Config("sweep lists must be non-empty".into()));
            }
        }
        Ok(())
    }

    /// Hash of everything that influences results.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Hash of what a coefficient file depends on: problem and basis.
    pub fn basis_hash(&self) -> String {
        hash_json(&(&self.problem, &self.basis))
    }

    /// Hash keying the reference cache.
    pub fn reference_prefix(&self) -> String {
        hash_json(&(&self.problem, &self.reference))
    }

    pub fn with_cell(&self, gamma: f64, degree: u32) -> RunConfig {
        let mut c = self.clone();
        c.optimizer.gamma = gamma;
        c.basis.degree = degree;
        c.sweep = None;
        c
    }
}

/// Problem, basis and sample sets materialized from a config.
pub struct Setup {
    pub problem: Box<dyn ControlProblem>,
    pub init: PolynomialAnsatz,
    pub unfiltered: usize,
    pub train: Vec<(f64, DVector<f64>)>,
    pub test: Vec<(f64, DVector<f64>)>,
}

pub fn setup(config: &RunConfig) -> Result<Setup> {
    let problem = config.problem.build()?;
    let b = &config.basis;
    let full = enumerate(b.kind, problem.dim(), b.degree);
    let set = filter_by_b(&full, problem.input_matrix(), b.filter)?;
    if set.is_empty() {
        return Err(Error::Config("the filtered basis is empty".into()));
    }
    let l = b.space_scale.unwrap_or_else(|| problem.space_scale());
    let init = PolynomialAnsatz::zeros(set, b.time_degree, l, problem.horizon())?;
    let train = sample_initial_conditions(problem.as_ref(), config.train_size, config.train_seed);
    let test = sample_initial_conditions(problem.as_ref(), config.test_size, config.test_seed);
    Ok(Setup {
        problem,
        init,
        unfiltered: full.len(),
        train,
        test,
    })
}

/// Cardinalities before and after the input-matrix filter.
pub fn cmd_basis_info(config: &RunConfig) -> Result<String> {
    let problem = config.problem.build()?;
    let b = &config.basis;
    let full = enumerate(b.kind, problem.dim(), b.degree);
    let set = filter_by_b(&full, problem.input_matrix(), b.filter)?;
    let mut out = String::new();
    writeln!(out, "problem: {} (d = {}, M = {})", problem.name(), problem.dim(), problem.control_dim()).unwrap();
    writeln!(out, "index set: {} of degree {}", b.kind, b.degree).unwrap();
    writeln!(out, "unfiltered: {}", full.len()).unwrap();
    writeln!(out, "filtered: {}", set.len()).unwrap();
    if b.kind == IndexKind::HyperbolicCross {
        writeln!(out, "hyperbolic cross bound: {:.1}", hyperbolic_cross_bound(problem.dim(), b.degree)).unwrap();
    }
    writeln!(out, "time degree: {}", b.time_degree).unwrap();
    writeln!(out, "total parameters: {}", set.len() * b.time_degree).unwrap();
    Ok(out)
}

pub struct TrainOutcome {
    pub setup: Setup,
    pub surrogate: PolynomialAnsatz,
    pub result: OptimizeResult,
}

pub fn run_train(config: &RunConfig) -> Result<TrainOutcome> {
    let setup = setup(config)?;
    let (surrogate, result) = train(setup.problem.as_ref(), &setup.init, &setup.train, &config.optimizer)?;
    log::info!(
        "trained {} coefficients in {} iterations ({:?})",
        surrogate.num_params(),
        result.iterations(),
        result.stop
    );
    Ok(TrainOutcome {
        setup,
        surrogate,
        result,
    })
}

fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}

fn manifest(loaded: &LoadedConfig, command: &str, start: Instant) -> Manifest {
    Manifest {
        config_hash: loaded.config.hash(),
        train_seed: loaded.config.train_seed,
        test_seed: loaded.config.test_seed,
        version: version_string(),
        command: command.to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        assumed_beta: loaded.assumed_beta,
        assumed_alpha: loaded.assumed_alpha,
    }
}

/// Writes `coefficients.json`, `iteration_log.csv` and `manifest_train.json`.
pub fn cmd_train(loaded: &LoadedConfig, out: &Path) -> Result<PathBuf> {
    let start = Instant::now();
    let config = &loaded.config;
    let trained = run_train(config)?;
    let mut file = trained.surrogate.to_file(Some(config.basis_hash()));
    file.iterations = Some(trained.result.iterations());
    let coef = write(out, "coefficients.json", &serde_json::to_string_pretty(&file)?)?;
    let hash = config.hash();
    write(out, "iteration_log.csv", &iteration_log_csv(&trained.result.log, Some(&hash)))?;
    let m = manifest(loaded, "train", start);
    write(out, "manifest_train.json", &serde_json::to_string_pretty(&m)?)?;
    Ok(coef)
}

/// Loads coefficients written for this config's problem and basis.
pub fn load_coefficients(config: &RunConfig, path: &Path, dim: usize) -> Result<(PolynomialAnsatz, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: AnsatzFile = serde_json::from_str(&text)?;
    let expected = config.basis_hash();
    match &file.config_hash {
        Some(h) if *h == expected => {}
        Some(h) => {
            return Err(Error::Config(format!(
                "coefficient file was written for basis config {h}, this config is {expected}"
            )))
        }
        None => return Err(Error::Config("coefficient file carries no config hash".into())),
    }
    Ok((PolynomialAnsatz::from_file(&file, dim)?, file.iterations.unwrap_or(0)))
}

pub struct EvalOutcome {
    pub train: EvaluationResult,
    pub test: EvaluationResult,
    pub row: ResultRow,
}

fn references(
    config: &RunConfig,
    problem: &dyn ControlProblem,
    samples: &[(f64, DVector<f64>)],
    cache: Option<&Path>,
) -> Result<Vec<OpenLoopSolution>> {
    let prefix = config.reference_prefix();
    solve_references(
        problem,
        samples,
        config.reference.tol,
        config.reference.max_iters,
        cache.map(|d| (d, prefix.as_str())),
    )
}

pub fn run_eval(
    config: &RunConfig,
    setup: &Setup,
    surrogate: &PolynomialAnsatz,
    iterations: usize,
    cache: Option<&Path>,
) -> Result<EvalOutcome> {
    let problem = setup.problem.as_ref();
    let train_refs = references(config, problem, &setup.train, cache)?;
    let test_refs = references(config, problem, &setup.test, cache)?;
    let train = evaluate(problem, surrogate, &setup.train, &train_refs)?;
    let test = evaluate(problem, surrogate, &setup.test, &test_refs)?;
    let status = if train.diverged + test.diverged > 0 {
        format!("diverged_{}", train.diverged + test.diverged)
    } else {
        "ok".to_string()
    };
    let row = ResultRow {
        gamma: config.optimizer.gamma,
        spatial_degree: config.basis.degree,
        train_mnae_j: train.mnae_j,
        test_mnae_j: test.mnae_j,
        train_mnse_u: train.mnse_u,
        test_mnse_u: test.mnse_u,
        train_mnse_y: train.mnse_y,
        test_mnse_y: test.mnse_y,
        support_pct: test.support_pct,
        support_count: test.support_count,
        basis_size: surrogate.num_params(),
        iterations,
        status,
    };
    Ok(EvalOutcome { train, test, row })
}

/// Writes `results.csv`, per-sample tables and `manifest_eval.json`.
pub fn cmd_eval(loaded: &LoadedConfig, coefficients: &Path, out: &Path) -> Result<PathBuf> {
    let start = Instant::now();
    let config = &loaded.config;
    let setup = setup(config)?;
    let (surrogate, iterations) = load_coefficients(config, coefficients, setup.problem.dim())?;
    if surrogate.index_set() != setup.init.index_set() || surrogate.time_degree() != setup.init.time_degree() {
        return Err(Error::Shape("coefficient basis differs from the configured basis".into()));
    }
    let cache = out.join("cache");
    let ev = run_eval(config, &setup, &surrogate, iterations, Some(&cache))?;
    let hash = config.hash();
    let results = write(out, "results.csv", &results_csv(std::slice::from_ref(&ev.row), &hash))?;
    write(out, "samples_train.csv", &ev.train.samples_csv(Some(&hash)))?;
    write(out, "samples_test.csv", &ev.test.samples_csv(Some(&hash)))?;
    let m = manifest(loaded, "eval", start);
    write(out, "manifest_eval.json", &serde_json::to_string_pretty(&m)?)?;
    Ok(results)
}

/// Trains and evaluates every `(gamma, degree)` cell; failed cells become
/// rows with a status flag.
pub fn cmd_sweep(loaded: &LoadedConfig, gammas: &[f64], degrees: &[u32], out: &Path) -> Result<PathBuf> {
    let start = Instant::now();
    let config = &loaded.config;
    let cache = out.join("cache");
    let mut rows = Vec::new();
    for &degree in degrees {
        for &gamma in gammas {
            let cell = config.with_cell(gamma, degree);
            log::info!("sweep cell gamma = {gamma:e}, degree = {degree}");
            let row = match run_train(&cell).and_then(|t| {
                run_eval(&cell, &t.setup, &t.surrogate, t.result.iterations(), Some(&cache))
            }) {
                Ok(ev) => ev.row,
                Err(e) if e.is_config() => return Err(e),
                Err(e) => {
                    log::warn!("sweep cell gamma = {gamma:e}, degree = {degree} failed: {e}");
                    let size = setup(&cell).map(|s| s.init.num_params()).unwrap_or(0);
                    ResultRow::failed(gamma, degree, size, format!("failed: {e}").replace(',', ";"))
                }
            };
            rows.push(row);
        }
    }
    let results = write(out, "results.csv", &results_csv(&rows, &config.hash()))?;
    let m = manifest(loaded, "sweep", start);
    write(out, "manifest_sweep.json", &serde_json::to_string_pretty(&m)?)?;
    Ok(results)
}
