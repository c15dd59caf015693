//! Stochastic dynamics: mini-batch SGD, the diffusion coefficient, Euler
//! discretizations of stochastic gradient flow, the one-dimensional
//! processes, and Monte Carlo ensembles.
//!
//! One Euler step of the flow uses `Δt = ε`:
//!
//! ```text
//! β ← β + (ε/n) Xᵀ(y − Xβ) + √ε · Q_ε(β)^{1/2} z
//! ```
//!
//! so step `k` sits at effective time `t = kε` and the step noise has
//! covariance `ε Q_ε(β)`, the same as one mini-batch step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::output::Table;
use crate::problem::RegressionProblem;
use crate::rng::{derive_seed, replicate_rng};
use crate::spectral::{sym_eig, SpectralFn, DEFAULT_ZERO_THRESHOLD};

/// How mini-batch indices are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    WithReplacement,
}

/// Step size, batch size, horizon and seed of a stochastic run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epsilon: f64,
    pub m: usize,
    pub k_max: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
}

impl SgdConfig {
    pub fn new(epsilon: f64, m: usize, k_max: usize, seed: u64) -> Self {
        SgdConfig {
            epsilon,
            m,
            k_max,
            sampling: Sampling::WithReplacement,
            seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(invalid(format!("sgd: epsilon must be positive, got {}", self.epsilon)));
        }
        if self.m == 0 || self.m > n {
            return Err(invalid(format!("sgd: batch size m = {} outside [1, n = {n}]", self.m)));
        }
        Ok(())
    }
}

/// Which dynamics produced a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Sgd,
    EulerSgf,
    ConstCovSgf,
}

/// Square root used for the state-dependent diffusion.
///
/// `Symmetric` takes the PSD root of `Q_ε(β)` and draws `z ∈ Rᵖ`.
/// `Factored` uses `Q_ε = (ε/(nm)) Xᵀ D_h C D_h X` with `C = I − 11ᵀ/n`
/// and draws `ξ ∈ Rⁿ`: the noise `√(ε/(nm)) Xᵀ(h ∘ Cξ)` has exactly the
/// covariance `Q_ε` at O(np) cost instead of an eigendecomposition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRoot {
    #[default]
    Symmetric,
    Factored,
}

/// Iterates `β⁽⁰⁾ = 0, …, β⁽ᵏ⁾` of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    states: DMatrix<f64>,
    config: SgdConfig,
    kind: TrajectoryKind,
}

impl Trajectory {
    /// `(k_max + 1) × p`, row `k` is iterate `k`.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state(self.states.nrows() - 1)
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    /// Columns `iter, t_effective, beta_1, …, beta_p`.
    pub fn to_table(&self) -> Table {
        let rows = self.states.nrows();
        let mut table = Table::new()
            .int("iter", (0..rows as u64).collect())
            .real(
                "t_effective",
                (0..rows).map(|k| k as f64 * self.config.epsilon).collect(),
            );
        for j in 0..self.states.ncols() {
            table.push_real(format!("beta_{}", j + 1), self.states.column(j).iter().copied().collect());
        }
        table
    }
}

/// `Q_ε(β) = (ε/(nm)) Xᵀ(F − F̃)X` with `F = diag(h)²`, `F̃ = hhᵀ/n`,
/// `h = y − Xβ`: `ε` times the covariance of one mini-batch gradient.
pub fn diffusion_coefficient(
    problem: &RegressionProblem,
    beta: &DVector<f64>,
    epsilon: f64,
    m: usize,
) -> Result<DMatrix<f64>> {
    if beta.len() != problem.p() {
        return Err(invalid("diffusion_coefficient: beta has the wrong length"));
    }
    if m == 0 {
        return Err(invalid("diffusion_coefficient: m must be at least 1"));
    }
    let x = problem.x();
    let n = problem.n() as f64;
    let h = problem.y() - x * beta;
    let mut weighted = x.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= h[i];
    }
    let g = x.tr_mul(&h);
    let mut q = weighted.tr_mul(&weighted) - &g * g.transpose() / n;
    q *= epsilon / (n * m as f64);
    let q = (&q + q.transpose()) * 0.5;
    Ok(q)
}

/// Symmetric root of `Q`, rejecting eigenvalues below `−1e-10·tr Q`.
fn diffusion_root(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let spectrum = sym_eig(q, DEFAULT_ZERO_THRESHOLD)?;
    let tol = 1e-10 * q.trace().abs();
    if let Some(&worst) = spectrum.raw_eigenvalues().iter().find(|&&s| s < -tol) {
        return Err(Error::NotPsd {
            value: worst,
            tolerance: tol,
        });
    }
    Ok(spectrum.map(|s| s.max(0.0).sqrt()))
}

/// Single-step update rule for one of the three dynamics.
pub struct Stepper<'a> {
    problem: &'a RegressionProblem,
    epsilon: f64,
    m: usize,
    kind: TrajectoryKind,
    root: NoiseRoot,
    sign: f64,
    const_root: Option<DMatrix<f64>>,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a RegressionProblem, config: &SgdConfig, kind: TrajectoryKind) -> Result<Self> {
        config.validate(problem.n())?;
        let const_root = match kind {
            TrajectoryKind::ConstCovSgf => {
                let (eps, m) = (config.epsilon, config.m as f64);
                let root = problem.spectrum().apply(SpectralFn::PsdSqrt)?;
                Some(root * (eps / m.sqrt()))
            }
            _ => None,
        };
        Ok(Stepper {
            problem,
            epsilon: config.epsilon,
            m: config.m,
            kind,
            root: NoiseRoot::Symmetric,
            sign: 1.0,
            const_root,
        })
    }

    pub fn with_root(mut self, root: NoiseRoot) -> Self {
        self.root = root;
        self
    }

    /// Negates every Gaussian draw.
    pub fn antithetic(mut self, on: bool) -> Self {
        self.sign = if on { -1.0 } else { 1.0 };
        self
    }

    /// Full-batch gradient step `β + (ε/n)Xᵀ(y − Xβ)`.
    pub fn drift_step(&self, beta: &DVector<f64>) -> DVector<f64> {
        let x = self.problem.x();
        let h = self.problem.y() - x * beta;
        beta + x.tr_mul(&h) * (self.epsilon / self.problem.n() as f64)
    }

    /// Matrix `S` such that the step noise is `S z` with `z ∈ Rᵖ` standard
    /// normal: `√ε Q_ε(β)^{1/2}` or `√ε ((ε/m)Σ̂)^{1/2}`.
    pub fn noise_root(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self.kind {
            TrajectoryKind::Sgd => Err(invalid("noise_root: SGD noise is not Gaussian")),
            TrajectoryKind::ConstCovSgf => Ok(self.const_root.clone().expect("built in new")),
            TrajectoryKind::EulerSgf => {
                let q = diffusion_coefficient(self.problem, beta, self.epsilon, self.m)?;
                Ok(diffusion_root(&q)? * self.epsilon.sqrt())
            }
        }
    }

    /// Advances one step.
    pub fn step<R: Rng + ?Sized>(&self, beta: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let x = self.problem.x();
        let y = self.problem.y();
        let n = self.problem.n();
        match self.kind {
            TrajectoryKind::Sgd => {
                let mut grad = DVector::zeros(self.problem.p());
                for _ in 0..self.m {
                    let i = rng.random_range(0..n);
                    let row = x.row(i);
                    let resid = y[i] - (row * beta)[0];
                    grad.axpy(resid, &row.transpose(), 1.0);
                }
                Ok(beta + grad * (self.epsilon / self.m as f64))
            }
            TrajectoryKind::EulerSgf => {
                let h = y - x * beta;
                let drift = self.epsilon / n as f64;
                match self.root {
                    NoiseRoot::Symmetric => {
                        let z = self.normals(self.problem.p(), rng);
                        let mut next = beta + x.tr_mul(&h) * drift;
                        next += self.noise_root(beta)? * z;
                        Ok(next)
                    }
                    NoiseRoot::Factored => {
                        // drift and noise share one product: Xᵀ(h ∘ (ε/n + c(ξ − ξ̄)))
                        let mut w = self.normals(n, rng);
                        let mean = w.mean();
                        let scale = self.epsilon / ((n * self.m) as f64).sqrt();
                        for (v, hi) in w.iter_mut().zip(h.iter()) {
                            *v = (drift + scale * (*v - mean)) * hi;
                        }
                        let mut next = beta.clone();
                        next.gemv_tr(1.0, x, &w, 1.0);
                        Ok(next)
                    }
                }
            }
            TrajectoryKind::ConstCovSgf => {
                let z = self.normals(self.problem.p(), rng);
                Ok(self.drift_step(beta) + self.const_root.as_ref().expect("built in new") * z)
            }
        }
    }

    fn normals<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> DVector<f64> {
        let sign = self.sign;
        DVector::from_fn(len, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sign * z
        })
    }
}

fn run(problem: &RegressionProblem, config: &SgdConfig, kind: TrajectoryKind, root: NoiseRoot) -> Result<Trajectory> {
    let stepper = Stepper::new(problem, config, kind)?.with_root(root);
    let mut rng = replicate_rng(config.seed, 0);
    let mut states = DMatrix::zeros(config.k_max + 1, problem.p());
    let mut beta = DVector::zeros(problem.p());
    for k in 1..=config.k_max {
        beta = stepper.step(&beta, &mut rng)?;
        states.set_row(k, &beta.transpose());
    }
    Ok(Trajectory {
        states,
        config: config.clone(),
        kind,
    })
}

/// Mini-batch SGD from zero, batches drawn uniformly with replacement.
pub fn sgd_run(problem: &RegressionProblem, config: &SgdConfig) -> Result<Trajectory> {
    run(problem, config, TrajectoryKind::Sgd, NoiseRoot::Symmetric)
}

/// Euler–Maruyama discretization of stochastic gradient flow.
pub fn euler_sgf_run(problem: &RegressionProblem, config: &SgdConfig) -> Result<Trajectory> {
    run(problem, config, TrajectoryKind::EulerSgf, NoiseRoot::Symmetric)
}

/// As [`euler_sgf_run`] with a choice of diffusion root.
pub fn euler_sgf_run_with(problem: &RegressionProblem, config: &SgdConfig, root: NoiseRoot) -> Result<Trajectory> {
    run(problem, config, TrajectoryKind::EulerSgf, root)
}

/// Euler discretization of the flow with constant diffusion `(ε/m)Σ̂`.
pub fn const_cov_run(problem: &RegressionProblem, config: &SgdConfig) -> Result<Trajectory> {
    run(problem, config, TrajectoryKind::ConstCovSgf, NoiseRoot::Symmetric)
}

/// One-dimensional responseless problem: data `x`, start `beta_init`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateSpec {
    pub x: Vec<f64>,
    pub epsilon: f64,
    pub m: usize,
    pub beta_init: f64,
    pub k_max: usize,
    pub seed: u64,
}

impl UnivariateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(invalid("univariate: empty data"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid(format!("univariate: epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.m == 0 || self.m > self.x.len() {
            return Err(invalid("univariate: batch size outside [1, n]"));
        }
        if self.beta_init == 0.0 || !self.beta_init.is_finite() {
            return Err(invalid("univariate: beta_init must be a nonzero finite number"));
        }
        Ok(())
    }

    /// `G = mean(x²)`.
    pub fn g(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>() / self.x.len() as f64
    }

    /// `θ = √(εG/m)`.
    pub fn theta(&self) -> f64 {
        (self.epsilon * self.g() / self.m as f64).sqrt()
    }
}

/// Ensemble summary of one univariate process.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProcessSummary {
    /// Full paths of the first few replicates, each of length `k_max + 1`.
    pub paths: Vec<Vec<f64>>,
    pub terminal_mean: f64,
    /// Unbiased sample variance of the terminal values.
    pub terminal_variance: f64,
}

/// Responseless SGD next to its geometric Brownian motion and
/// Ornstein–Uhlenbeck surrogates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnivariatePaths {
    pub g: f64,
    pub theta: f64,
    pub replicates: usize,
    pub sgd: ProcessSummary,
    pub gbm: ProcessSummary,
    pub ou: ProcessSummary,
}

#[derive(Clone, Copy)]
enum Univariate {
    Sgd,
    Gbm,
    Ou,
}

fn univariate_path(spec: &UnivariateSpec, which: Univariate, rng: &mut ChaCha8Rng, keep: bool) -> (f64, Vec<f64>) {
    let (eps, g, theta) = (spec.epsilon, spec.g(), spec.theta());
    let n = spec.x.len();
    let mut beta = spec.beta_init;
    let mut path = Vec::new();
    if keep {
        path.reserve(spec.k_max + 1);
        path.push(beta);
    }
    for _ in 0..spec.k_max {
        beta = match which {
            Univariate::Sgd => {
                let mut gk = 0.0;
                for _ in 0..spec.m {
                    let xi = spec.x[rng.random_range(0..n)];
                    gk += xi * xi;
                }
                (1.0 - eps * gk / spec.m as f64) * beta
            }
            Univariate::Gbm => {
                let z: f64 = StandardNormal.sample(rng);
                beta * (1.0 - eps * g + eps.sqrt() * theta * z)
            }
            Univariate::Ou => {
                let z: f64 = StandardNormal.sample(rng);
                (1.0 - eps * g) * beta + eps.sqrt() * theta * z
            }
        };
        if keep {
            path.push(beta);
        }
    }
    (beta, path)
}

/// Mean and unbiased variance, accumulated in slice order.
pub(crate) fn mean_var(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Simulates `replicates` runs of each univariate process and keeps the
/// first `keep_paths` full paths.
pub fn univariate_paths(
    spec: &UnivariateSpec,
    replicates: usize,
    keep_paths: usize,
    exec: Execution,
) -> Result<UnivariatePaths> {
    spec.validate()?;
    if replicates < 2 {
        return Err(invalid("univariate: need at least 2 replicates"));
    }
    let summarize = |which: Univariate, tag: u64| {
        let base = derive_seed(spec.seed, tag);
        let runs = map_indexed(exec, replicates, |r| {
            let mut rng = replicate_rng(base, r as u64);
            univariate_path(spec, which, &mut rng, r < keep_paths)
        });
        let terminal: Vec<f64> = runs.iter().map(|(b, _)| *b).collect();
        let (terminal_mean, terminal_variance) = mean_var(&terminal);
        let paths = runs.into_iter().take(keep_paths).map(|(_, p)| p).collect();
        ProcessSummary {
            paths,
            terminal_mean,
            terminal_variance,
        }
    };
    Ok(UnivariatePaths {
        g: spec.g(),
        theta: spec.theta(),
        replicates,
        sgd: summarize(Univariate::Sgd, 1),
        gbm: summarize(Univariate::Gbm, 2),
        ou: summarize(Univariate::Ou, 3),
    })
}

/// What to simulate in an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub kind: TrajectoryKind,
    pub replicates: usize,
    /// Iteration counts at which states are recorded, strictly increasing.
    pub checkpoints: Vec<usize>,
    pub root: NoiseRoot,
    pub antithetic: bool,
    pub execution: Execution,
}

impl EnsembleSpec {
    pub fn new(kind: TrajectoryKind, replicates: usize, checkpoints: Vec<usize>) -> Self {
        EnsembleSpec {
            kind,
            replicates,
            checkpoints,
            root: NoiseRoot::Symmetric,
            antithetic: false,
            execution: Execution::default(),
        }
    }

    pub fn with_root(mut self, root: NoiseRoot) -> Self {
        self.root = root;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    fn validate(&self, k_max: usize) -> Result<()> {
        if self.replicates < 2 {
            return Err(invalid("ensemble: need at least 2 replicates"));
        }
        if self.checkpoints.is_empty() {
            return Err(invalid("ensemble: no checkpoints"));
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("ensemble: checkpoints must be strictly increasing"));
        }
        if *self.checkpoints.last().unwrap() > k_max {
            return Err(invalid("ensemble: checkpoint beyond k_max"));
        }
        Ok(())
    }
}

/// Raw replicate states at each checkpoint: one `R × p` matrix per
/// checkpoint, rows in replicate order.
#[derive(Clone, Debug)]
pub struct Ensemble {
    checkpoints: Vec<usize>,
    samples: Vec<DMatrix<f64>>,
}

/// Sample mean and covariance per checkpoint, with standard errors.
#[derive(Clone, Debug)]
pub struct EnsembleMoments {
    pub checkpoints: Vec<usize>,
    pub replicates: usize,
    pub mean: Vec<DVector<f64>>,
    /// Unbiased sample covariance.
    pub cov: Vec<DMatrix<f64>>,
    /// Standard error of each mean entry, `√(cov_jj / R)`.
    pub mean_se: Vec<DVector<f64>>,
    /// Standard error of each covariance entry from the fourth moments.
    pub cov_se: Vec<DMatrix<f64>>,
}

impl Ensemble {
    pub fn from_samples(checkpoints: Vec<usize>, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if checkpoints.len() != samples.len() || samples.is_empty() {
            return Err(invalid("ensemble: one sample matrix per checkpoint required"));
        }
        let r = samples[0].nrows();
        if r < 2 || samples.iter().any(|s| s.nrows() != r) {
            return Err(invalid("ensemble: inconsistent replicate counts"));
        }
        Ok(Ensemble { checkpoints, samples })
    }

    pub fn checkpoints(&self) -> &[usize] {
        &self.checkpoints
    }

    pub fn replicates(&self) -> usize {
        self.samples[0].nrows()
    }

    /// `R × p` states at checkpoint index `c`.
    pub fn samples(&self, c: usize) -> &DMatrix<f64> {
        &self.samples[c]
    }

    /// Mean and standard error of a scalar statistic of the state at each
    /// checkpoint.
    pub fn scalar<F>(&self, f: F) -> Vec<(f64, f64)>
    where
        F: Fn(&DVector<f64>) -> f64,
    {
        self.samples
            .iter()
            .map(|s| {
                let values: Vec<f64> = s.row_iter().map(|row| f(&row.transpose())).collect();
                let (mean, var) = mean_var(&values);
                (mean, (var / values.len() as f64).sqrt())
            })
            .collect()
    }

    pub fn moments(&self) -> EnsembleMoments {
        let r = self.replicates();
        let rf = r as f64;
        let mut out = EnsembleMoments {
            checkpoints: self.checkpoints.clone(),
            replicates: r,
            mean: Vec::new(),
            cov: Vec::new(),
            mean_se: Vec::new(),
            cov_se: Vec::new(),
        };
        for s in &self.samples {
            let p = s.ncols();
            let mean = DVector::from_fn(p, |j, _| s.column(j).sum() / rf);
            let mut centered = s.clone();
            for mut row in centered.row_iter_mut() {
                row -= mean.transpose();
            }
            let cov = centered.tr_mul(&centered) / (rf - 1.0);
            let cov = (&cov + cov.transpose()) * 0.5;
            let squared = centered.map(|v| v * v);
            let fourth = squared.tr_mul(&squared) / rf;
            let cov_se = DMatrix::from_fn(p, p, |j, l| ((fourth[(j, l)] - cov[(j, l)].powi(2)).max(0.0) / rf).sqrt());
            let mean_se = DVector::from_fn(p, |j, _| (cov[(j, j)].max(0.0) / rf).sqrt());
            out.mean.push(mean);
            out.cov.push(cov);
            out.mean_se.push(mean_se);
            out.cov_se.push(cov_se);
        }
        out
    }
}

/// Runs `spec.replicates` independent trajectories, replicate `r` seeded
/// with stream `r` of `config.seed`, and records the states at the
/// checkpoints. Output does not depend on the execution mode.
pub fn simulate_ensemble(problem: &RegressionProblem, config: &SgdConfig, spec: &EnsembleSpec) -> Result<Ensemble> {
    spec.validate(config.k_max)?;
    let stepper = Stepper::new(problem, config, spec.kind)?
        .with_root(spec.root)
        .antithetic(spec.antithetic);
    let p = problem.p();
    let runs = map_indexed(spec.execution, spec.replicates, |r| -> Result<Vec<DVector<f64>>> {
        let mut rng = replicate_rng(config.seed, r as u64);
        let mut beta = DVector::zeros(p);
        let mut k = 0;
        let mut recorded = Vec::with_capacity(spec.checkpoints.len());
        for &target in &spec.checkpoints {
            while k < target {
                beta = stepper.step(&beta, &mut rng)?;
                k += 1;
            }
            recorded.push(beta.clone());
        }
        Ok(recorded)
    });
    let mut samples = vec![DMatrix::zeros(spec.replicates, p); spec.checkpoints.len()];
    for (r, run) in runs.into_iter().enumerate() {
        for (c, state) in run?.into_iter().enumerate() {
            samples[c].set_row(r, &state.transpose());
        }
    }
    Ensemble::from_samples(spec.checkpoints.clone(), samples)
}

/// Ensemble mean and covariance at the checkpoints.
pub fn monte_carlo(problem: &RegressionProblem, config: &SgdConfig, spec: &EnsembleSpec) -> Result<EnsembleMoments> {
    Ok(simulate_ensemble(problem, config, spec)?.moments())
}
