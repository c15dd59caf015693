//! Exact moments of mini-batch SGD over the batch randomness.
//!
//! Conditional on `(X, y)` the mean of `β⁽ᵏ⁾` follows full-batch gradient
//! descent and the covariance obeys the linear recursion
//!
//! ```text
//! C⁽ᵏ⁾ = (I − εΣ̂) C (I − εΣ̂)
//!      + ε²/(mn) Σᵢ rᵢ² xᵢxᵢᵀ + ε²/(mn) Σᵢ (xᵢᵀ C xᵢ) xᵢxᵢᵀ
//!      − ε²/(mn²) (Xᵀr)(Xᵀr)ᵀ − ε²/m Σ̂ C Σ̂
//! ```
//!
//! with `C = C⁽ᵏ⁻¹⁾` and `r` the residual of the gradient-descent iterate
//! `k − 1`. [`exact_sgd_moment_path`] runs it in coordinates of `Rᵖ`.
//! Iterates never leave the row space of `X`, so [`batch_variance_path`]
//! runs the same recursion in the rank-`r` eigenbasis at O(n r²) per step,
//! and can average the residual terms over the response noise analytically.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::problem::RegressionProblem;
use crate::rng::derive_seed;
use crate::simulate::{simulate_ensemble, EnsembleSpec, NoiseRoot, SgdConfig, TrajectoryKind};
use crate::spectral::{sym_eig, DEFAULT_ZERO_THRESHOLD};
use crate::theory::{RiskCurve, RiskModel};

/// Exact mean and covariance of the SGD iterate at step `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub k: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn check_checkpoints(checkpoints: &[usize]) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(invalid("moments: no checkpoints"));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("moments: checkpoints must be strictly increasing"));
    }
    Ok(())
}

/// Absolute rounding floor for [`check_psd`]: a small multiple of the
/// size of one step's injected covariance.
fn psd_floor(problem: &RegressionProblem, config: &SgdConfig) -> f64 {
    let nf = problem.n() as f64;
    let energy = problem.y().norm_squared()
        + (problem.x() * problem.beta0()).norm_squared()
        + nf * problem.sigma().powi(2);
    1e-12 * config.epsilon.powi(2) * problem.x().norm_squared() * energy / (nf * nf * config.m as f64)
}

fn check_psd(cov: &DMatrix<f64>, floor: f64, k: usize) -> Result<()> {
    let tol = 1e-10 * cov.trace().abs() + floor;
    let spectrum = sym_eig(cov, DEFAULT_ZERO_THRESHOLD)?;
    let lowest = spectrum.raw_eigenvalues().min();
    if lowest < -tol {
        return Err(Error::CovarianceNotPsd { k, value: lowest });
    }
    Ok(())
}

/// Exact moments at the requested iterations, by the recursion in `Rᵖ`.
/// Cost O(k n p²).
pub fn exact_sgd_moment_path(
    problem: &RegressionProblem,
    config: &SgdConfig,
    checkpoints: &[usize],
) -> Result<Vec<MomentState>> {
    config.validate(problem.n())?;
    check_checkpoints(checkpoints)?;
    let x = problem.x();
    let y = problem.y();
    let (n, p) = (problem.n(), problem.p());
    let (nf, mf) = (n as f64, config.m as f64);
    let eps = config.epsilon;
    let floor = psd_floor(problem, config);
    let sigma_hat = x.tr_mul(x) / nf;
    let contraction = DMatrix::identity(p, p) - &sigma_hat * eps;
    let c1 = eps * eps / (mf * nf);

    let mut mean = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut k = 0;
    for &target in checkpoints {
        while k < target {
            let resid = y - x * &mean;
            let xc = x * &cov;
            let mut weights = DVector::zeros(n);
            for i in 0..n {
                weights[i] = resid[i] * resid[i] + x.row(i).dot(&xc.row(i));
            }
            let mut wx = x.clone();
            for (i, mut row) in wx.row_iter_mut().enumerate() {
                row *= weights[i];
            }
            let g = x.tr_mul(&resid);
            let mut next = &contraction * &cov * &contraction;
            next += x.tr_mul(&wx) * c1;
            next -= &g * g.transpose() * (c1 / nf);
            next -= &sigma_hat * &cov * &sigma_hat * (eps * eps / mf);
            cov = (&next + next.transpose()) * 0.5;
            mean += g * (eps / nf);
            k += 1;
        }
        check_psd(&cov, floor, k)?;
        out.push(MomentState {
            k,
            mean: mean.clone(),
            cov: cov.clone(),
        });
    }
    Ok(out)
}

/// Exact moments at iteration `k`.
pub fn exact_sgd_moments(problem: &RegressionProblem, config: &SgdConfig, k: usize) -> Result<MomentState> {
    Ok(exact_sgd_moment_path(problem, config, &[k])?.remove(0))
}

/// Which residuals drive the covariance recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualSource {
    /// The problem's own response `y`.
    Realized,
    /// Expectation over `y = Xβ₀ + η`, `η ~ (0, σ²I)`.
    Expected,
}

/// Covariance recursion in the eigenbasis of the row space of `X`.
struct Reduced {
    /// `Z = X V_r`, `n × r`.
    z: DMatrix<f64>,
    s: DVector<f64>,
    n: usize,
    /// `V_r`, `p × r`, to lift states back.
    basis: DMatrix<f64>,
}

impl Reduced {
    fn new(problem: &RegressionProblem) -> Self {
        let spectrum = problem.spectrum();
        let r = spectrum.rank();
        let basis = spectrum.eigenvectors().columns(0, r).into_owned();
        let z = problem.x() * &basis;
        let s = DVector::from_fn(r, |j, _| spectrum.eigenvalues()[j]);
        Reduced {
            z,
            s,
            n: problem.n(),
            basis,
        }
    }

    fn rank(&self) -> usize {
        self.s.len()
    }

    /// One covariance step given `e_i = E rᵢ²` and `G = E (Zᵀr)(Zᵀr)ᵀ`.
    fn step(&self, cov: &DMatrix<f64>, e: &DVector<f64>, g: &DMatrix<f64>, eps: f64, m: f64) -> DMatrix<f64> {
        let nf = self.n as f64;
        let c1 = eps * eps / (m * nf);
        let zc = &self.z * cov;
        let mut wz = self.z.clone();
        for (i, mut row) in wz.row_iter_mut().enumerate() {
            let w = e[i] + self.z.row(i).dot(&zc.row(i));
            row *= w;
        }
        let r = self.rank();
        let mut next = self.z.tr_mul(&wz) * c1 - g * (c1 / nf);
        for l in 0..r {
            for j in 0..r {
                let (sj, sl) = (self.s[j], self.s[l]);
                let factor = (1.0 - eps * sj) * (1.0 - eps * sl) - eps * eps / m * sj * sl;
                next[(j, l)] += factor * cov[(j, l)];
            }
        }
        (&next + next.transpose()) * 0.5
    }
}

/// Residual driver for the reduced recursion: gradient descent on one
/// response, or the analytic noise average.
struct Driver<'a> {
    reduced: &'a Reduced,
    eps: f64,
    /// GD coefficients in the eigenbasis for the (noiseless) response.
    coef: DVector<f64>,
    target: DVector<f64>,
    zty_over_n: DVector<f64>,
    /// `(1 − ε s_j)^k`.
    decay: DVector<f64>,
    sigma_sq: f64,
    expected: bool,
}

impl<'a> Driver<'a> {
    fn new(reduced: &'a Reduced, response: DVector<f64>, eps: f64, sigma: f64, expected: bool) -> Self {
        let r = reduced.rank();
        let zty_over_n = reduced.z.tr_mul(&response) / reduced.n as f64;
        Driver {
            reduced,
            eps,
            coef: DVector::zeros(r),
            target: response,
            zty_over_n,
            decay: DVector::from_element(r, 1.0),
            sigma_sq: sigma * sigma,
            expected,
        }
    }

    /// `(e, G)` at the current GD iterate.
    fn terms(&self) -> (DVector<f64>, DMatrix<f64>) {
        let z = &self.reduced.z;
        let resid = &self.target - z * &self.coef;
        let mut e = resid.map(|v| v * v);
        let ztr = z.tr_mul(&resid);
        let mut g = &ztr * ztr.transpose();
        if self.expected && self.sigma_sq > 0.0 {
            let nf = self.reduced.n as f64;
            let s = &self.reduced.s;
            for i in 0..self.reduced.n {
                let mut captured = 0.0;
                for j in 0..s.len() {
                    captured += z[(i, j)].powi(2) / (nf * s[j]) * (1.0 - self.decay[j].powi(2));
                }
                e[i] += self.sigma_sq * (1.0 - captured);
            }
            for j in 0..s.len() {
                g[(j, j)] += self.sigma_sq * nf * s[j] * self.decay[j].powi(2);
            }
        }
        (e, g)
    }

    fn advance(&mut self) {
        let s = &self.reduced.s;
        for j in 0..s.len() {
            self.coef[j] += self.eps * (self.zty_over_n[j] - s[j] * self.coef[j]);
            self.decay[j] *= 1.0 - self.eps * s[j];
        }
    }
}

fn reduced_path(
    problem: &RegressionProblem,
    reduced: &Reduced,
    config: &SgdConfig,
    checkpoints: &[usize],
    source: ResidualSource,
) -> Result<Vec<DMatrix<f64>>> {
    let (response, expected) = match source {
        ResidualSource::Realized => (problem.y().clone(), false),
        ResidualSource::Expected => (problem.x() * problem.beta0(), true),
    };
    let mut driver = Driver::new(reduced, response, config.epsilon, problem.sigma(), expected);
    let r = reduced.rank();
    let mut cov = DMatrix::zeros(r, r);
    let floor = psd_floor(problem, config);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut k = 0;
    for &target in checkpoints {
        while k < target {
            let (e, g) = driver.terms();
            cov = reduced.step(&cov, &e, &g, config.epsilon, config.m as f64);
            driver.advance();
            k += 1;
        }
        if r > 0 {
            check_psd(&cov, floor, k)?;
        }
        out.push(cov.clone());
    }
    Ok(out)
}

/// Exact moments by the reduced recursion, lifted back to `Rᵖ`. Agrees
/// with [`exact_sgd_moment_path`] up to round-off.
pub fn exact_sgd_moment_path_reduced(
    problem: &RegressionProblem,
    config: &SgdConfig,
    checkpoints: &[usize],
) -> Result<Vec<MomentState>> {
    config.validate(problem.n())?;
    check_checkpoints(checkpoints)?;
    let reduced = Reduced::new(problem);
    let covs = reduced_path(problem, &reduced, config, checkpoints, ResidualSource::Realized)?;
    let coords = crate::closed_form::response_coordinates(problem);
    Ok(checkpoints
        .iter()
        .zip(covs)
        .map(|(&k, c)| MomentState {
            k,
            mean: crate::closed_form::apply_filter(
                problem.spectrum(),
                &coords,
                crate::closed_form::Filter::GradientDescent {
                    epsilon: config.epsilon,
                    k: k as u64,
                },
            ),
            cov: &reduced.basis * c * reduced.basis.transpose(),
        })
        .collect())
}

/// `tr Cov β⁽ᵏ⁾` at the checkpoints, for the realized response or
/// averaged over the response noise.
pub fn batch_variance_path(
    problem: &RegressionProblem,
    config: &SgdConfig,
    checkpoints: &[usize],
    source: ResidualSource,
) -> Result<Vec<f64>> {
    config.validate(problem.n())?;
    check_checkpoints(checkpoints)?;
    let reduced = Reduced::new(problem);
    Ok(reduced_path(problem, &reduced, config, checkpoints, source)?
        .iter()
        .map(|c| c.trace())
        .collect())
}

/// How the batching variance is averaged over the response noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaAveraging {
    /// Mean over `draws` fresh responses `Xβ₀ + η`, draw `d` seeded with
    /// `derive_seed(seed, d)`.
    MonteCarlo { draws: usize, seed: u64 },
    /// Exact expectation (the recursion is linear in its residual terms).
    Analytic,
}

impl Default for EtaAveraging {
    fn default() -> Self {
        EtaAveraging::MonteCarlo { draws: 30, seed: 0 }
    }
}

/// Risk of SGD at the checkpoints: `Bias²(gd) + Var_η(gd) + E_η tr Cov_Z`.
///
/// The curve is indexed by effective time `t = kε` and carries the extra
/// columns `var_eta`, `var_batch` (and `var_batch_se` under Monte Carlo
/// averaging).
pub fn sgd_risk_exact(
    problem: &RegressionProblem,
    config: &SgdConfig,
    checkpoints: &[usize],
    averaging: EtaAveraging,
    exec: Execution,
) -> Result<RiskCurve> {
    config.validate(problem.n())?;
    check_checkpoints(checkpoints)?;
    let reduced = Reduced::new(problem);
    let (var_batch, var_batch_se) = match averaging {
        EtaAveraging::Analytic => {
            let covs = reduced_path(problem, &reduced, config, checkpoints, ResidualSource::Expected)?;
            (covs.iter().map(|c| c.trace()).collect::<Vec<_>>(), None)
        }
        EtaAveraging::MonteCarlo { draws, seed } => {
            if draws == 0 {
                return Err(invalid("sgd_risk_exact: need at least one eta draw"));
            }
            let per_draw = map_indexed(exec, draws, |d| -> Result<Vec<f64>> {
                let y = problem.resample_response(derive_seed(seed, d as u64));
                let drawn = problem.with_response(y);
                let covs = reduced_path(&drawn, &reduced, config, checkpoints, ResidualSource::Realized)?;
                Ok(covs.iter().map(|c| c.trace()).collect())
            });
            let per_draw: Vec<Vec<f64>> = per_draw.into_iter().collect::<Result<_>>()?;
            let mut means = Vec::with_capacity(checkpoints.len());
            let mut ses = Vec::with_capacity(checkpoints.len());
            for c in 0..checkpoints.len() {
                let values: Vec<f64> = per_draw.iter().map(|v| v[c]).collect();
                let (mean, var) = crate::simulate::mean_var(&values);
                means.push(mean);
                ses.push((var / draws as f64).sqrt());
            }
            (means, Some(ses))
        }
    };
    let model = RiskModel::new(problem);
    let mut bias_sq = Vec::with_capacity(checkpoints.len());
    let mut var_eta = Vec::with_capacity(checkpoints.len());
    for &k in checkpoints {
        let gd = model.gd(config.epsilon, k as u64)?;
        bias_sq.push(gd.bias_sq);
        var_eta.push(gd.variance);
    }
    let variance: Vec<f64> = var_eta.iter().zip(&var_batch).map(|(a, b)| a + b).collect();
    let t: Vec<f64> = checkpoints.iter().map(|&k| k as f64 * config.epsilon).collect();
    let mut curve = RiskCurve::new("sgd_exact", t, bias_sq, variance)?;
    curve.push_extra("var_eta", var_eta)?;
    curve.push_extra("var_batch", var_batch)?;
    if let Some(se) = var_batch_se {
        curve.push_extra("var_batch_se", se)?;
    }
    Ok(curve)
}

/// Options of [`moment_match_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct MomentMatchOptions {
    pub z_threshold: f64,
    pub root: NoiseRoot,
    pub antithetic: bool,
    pub execution: Execution,
}

impl Default for MomentMatchOptions {
    fn default() -> Self {
        MomentMatchOptions {
            z_threshold: 4.0,
            root: NoiseRoot::Symmetric,
            antithetic: false,
            execution: Execution::default(),
        }
    }
}

/// Worst standardized deviations at one checkpoint for one dynamics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointMatch {
    pub kind: TrajectoryKind,
    pub k: usize,
    pub max_mean_z: f64,
    pub max_cov_z: f64,
    pub pass: bool,
}

/// Ensemble moments of SGD and Euler SGF checked against the exact ones.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentMatchReport {
    pub replicates: usize,
    pub z_threshold: f64,
    pub checkpoints: Vec<CheckpointMatch>,
    pub pass: bool,
}

/// `|estimate − exact| / se`; a zero standard error only tolerates
/// round-off differences.
fn standardized(estimate: f64, exact: f64, se: f64) -> f64 {
    let diff = (estimate - exact).abs();
    if diff <= 1e-12 * exact.abs().max(1.0) {
        0.0
    } else if se > 0.0 {
        diff / se
    } else {
        f64::INFINITY
    }
}

/// Compares Monte Carlo ensembles of SGD and Euler SGF against
/// [`exact_sgd_moment_path`] at each checkpoint.
pub fn moment_match_report(
    problem: &RegressionProblem,
    config: &SgdConfig,
    checkpoints: &[usize],
    replicates: usize,
    options: &MomentMatchOptions,
) -> Result<MomentMatchReport> {
    if replicates < 100 {
        return Err(invalid("moment_match_report: need at least 100 replicates"));
    }
    let exact = exact_sgd_moment_path(problem, config, checkpoints)?;
    let mut config = config.clone();
    config.k_max = config.k_max.max(*checkpoints.last().expect("checked"));
    let mut rows = Vec::new();
    for kind in [TrajectoryKind::Sgd, TrajectoryKind::EulerSgf] {
        let spec = EnsembleSpec {
            kind,
            replicates,
            checkpoints: checkpoints.to_vec(),
            root: options.root,
            antithetic: options.antithetic,
            execution: options.execution,
        };
        let mc = simulate_ensemble(problem, &config, &spec)?.moments();
        for (c, state) in exact.iter().enumerate() {
            let p = state.mean.len();
            let mut max_mean_z: f64 = 0.0;
            let mut max_cov_z: f64 = 0.0;
            for j in 0..p {
                max_mean_z = max_mean_z.max(standardized(mc.mean[c][j], state.mean[j], mc.mean_se[c][j]));
                for l in 0..p {
                    max_cov_z =
                        max_cov_z.max(standardized(mc.cov[c][(j, l)], state.cov[(j, l)], mc.cov_se[c][(j, l)]));
                }
            }
            rows.push(CheckpointMatch {
                kind,
                k: state.k,
                max_mean_z,
                max_cov_z,
                pass: max_mean_z <= options.z_threshold && max_cov_z <= options.z_threshold,
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(MomentMatchReport {
        replicates,
        z_threshold: options.z_threshold,
        checkpoints: rows,
        pass,
    })
}
