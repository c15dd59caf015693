//! Risk formulas and bounds.
//!
//! Everything here is evaluated mode by mode from the spectrum of `Σ̂`:
//! bias², variance and risk of ridge, gradient flow and gradient descent;
//! the loss-decay constants `u, v, w`; the effective mini-batch variance
//! `ν_i(t)`; risk, excess-risk, relative-risk and coefficient-error bounds
//! for stochastic gradient flow; the constant-diffusion risk identity; and
//! bias/variance-balancing stopping times.

use nalgebra::DVector;
use serde::Serialize;

use crate::closed_form::{g_of_t, Filter};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::output::Table;
use crate::problem::RegressionProblem;
use crate::simulate::{simulate_ensemble, EnsembleSpec, NoiseRoot, SgdConfig, TrajectoryKind};
use crate::spectral::Spectrum;

/// Worst-case ratio of gradient-flow to ridge variance.
pub const VARIANCE_INFLATION: f64 = 1.6862;
/// `VARIANCE_INFLATION − 1`.
pub const EXCESS_VARIANCE_FACTOR: f64 = 0.6862;
/// Bound on `x(1+e^{-x})/(1-e^{-x})` for `x ≤ 1`, and on its ratio to `x`
/// for `x > 1`.
pub const GAMMA_CONSTANT: f64 = 2.164;

/// Squared bias and variance of an estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiasVariance {
    pub bias_sq: f64,
    pub variance: f64,
}

impl BiasVariance {
    pub fn risk(&self) -> f64 {
        self.bias_sq + self.variance
    }
}

/// Spectral data of a problem needed by every risk formula: eigenvalues
/// `s_i`, squared coordinates `(v_iᵀβ₀)²`, `n` and `σ`.
#[derive(Clone, Debug)]
pub struct RiskModel {
    s: Vec<f64>,
    b_sq: Vec<f64>,
    n: f64,
    sigma: f64,
}

impl RiskModel {
    pub fn new(problem: &RegressionProblem) -> Self {
        Self::from_parts(problem.spectrum(), problem.n(), problem.beta0(), problem.sigma())
    }

    pub fn from_parts(spectrum: &Spectrum, n: usize, beta0: &DVector<f64>, sigma: f64) -> Self {
        let b = spectrum.to_eigenbasis(beta0);
        RiskModel {
            s: spectrum.eigenvalues().iter().copied().collect(),
            b_sq: b.iter().map(|v| v * v).collect(),
            n: n as f64,
            sigma,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    /// `‖β₀‖²`.
    pub fn signal_norm_sq(&self) -> f64 {
        self.b_sq.iter().sum()
    }

    /// Estimation risk `E‖β̂ − β₀‖²` of a spectral filter:
    /// bias² `Σ (1 − sφ)² b²`, variance `(σ²/n) Σ s φ²`.
    pub fn risk(&self, filter: Filter) -> BiasVariance {
        let mut bias_sq = 0.0;
        let mut variance = 0.0;
        for (&s, &b2) in self.s.iter().zip(&self.b_sq) {
            let phi = filter.phi(s);
            bias_sq += (1.0 - filter.shrink(s)).powi(2) * b2;
            variance += s * phi * phi;
        }
        BiasVariance {
            bias_sq,
            variance: self.sigma * self.sigma / self.n * variance,
        }
    }

    /// In-sample risk `E‖X(β̂ − β₀)‖²/n`: the estimation terms weighted by `s`.
    pub fn risk_in_sample(&self, filter: Filter) -> BiasVariance {
        let mut bias_sq = 0.0;
        let mut variance = 0.0;
        for (&s, &b2) in self.s.iter().zip(&self.b_sq) {
            let shrink = filter.shrink(s);
            bias_sq += s * (1.0 - shrink).powi(2) * b2;
            variance += shrink * shrink;
        }
        BiasVariance {
            bias_sq,
            variance: self.sigma * self.sigma / self.n * variance,
        }
    }

    pub fn ridge(&self, lambda: f64) -> Result<BiasVariance> {
        if !(lambda > 0.0) {
            return Err(invalid(format!("ridge risk: lambda must be positive, got {lambda}")));
        }
        Ok(self.risk(Filter::Ridge { lambda }))
    }

    pub fn gf(&self, t: f64) -> Result<BiasVariance> {
        if !(t >= 0.0) {
            return Err(invalid(format!("gradient flow risk: t must be nonnegative, got {t}")));
        }
        Ok(self.risk(Filter::GradientFlow { t }))
    }

    pub fn gd(&self, epsilon: f64, k: u64) -> Result<BiasVariance> {
        let big_l = self.s.first().copied().unwrap_or(0.0);
        if !(epsilon > 0.0) || epsilon * big_l >= 2.0 {
            return Err(invalid(format!(
                "gradient descent risk needs 0 < epsilon < 2/L (epsilon = {epsilon}, L = {big_l})"
            )));
        }
        Ok(self.risk(Filter::GradientDescent { epsilon, k }))
    }

    /// `E_η‖β̂ridge(λ)‖² = Σ s(n s b² + σ²)/(n(s+λ)²)`.
    pub fn ridge_second_moment(&self, lambda: f64) -> f64 {
        let sigma_sq = self.sigma * self.sigma;
        self.s
            .iter()
            .zip(&self.b_sq)
            .map(|(&s, &b2)| s * (self.n * s * b2 + sigma_sq) / (self.n * (s + lambda).powi(2)))
            .sum()
    }

    /// Risk of the constant-diffusion flow: gradient-flow risk plus
    /// `(ε/2m) Σ_{s>0} (1 − e^{−2ts})`.
    pub fn const_process(&self, epsilon: f64, m: usize, t: f64) -> Result<BiasVariance> {
        let gf = self.gf(t)?;
        let extra: f64 = self
            .s
            .iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| -(-2.0 * t * s).exp_m1())
            .sum();
        Ok(BiasVariance {
            bias_sq: gf.bias_sq,
            variance: gf.variance + epsilon / (2.0 * m as f64) * extra,
        })
    }
}

/// Ridge risk at `λ`.
pub fn ridge_risk(problem: &RegressionProblem, lambda: f64) -> Result<BiasVariance> {
    RiskModel::new(problem).ridge(lambda)
}

/// Gradient-flow risk at `t`.
pub fn gf_risk(problem: &RegressionProblem, t: f64) -> Result<BiasVariance> {
    RiskModel::new(problem).gf(t)
}

/// Risk of `k` gradient-descent steps of size `epsilon`.
pub fn gd_risk(problem: &RegressionProblem, epsilon: f64, k: u64) -> Result<BiasVariance> {
    RiskModel::new(problem).gd(epsilon, k)
}

/// Risk of the constant-diffusion flow at `t`.
pub fn const_process_risk(problem: &RegressionProblem, epsilon: f64, m: usize, t: f64) -> Result<BiasVariance> {
    RiskModel::new(problem).const_process(epsilon, m, t)
}

/// Whether there are more samples than features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `n > p`.
    Underparam,
    /// `p ≥ n`.
    Overparam,
}

impl Regime {
    pub fn of(n: usize, p: usize) -> Self {
        if n > p {
            Regime::Underparam
        } else {
            Regime::Overparam
        }
    }

    /// `c` in `u = μ/n − c (nε)² D / m`.
    fn u_coefficient(self) -> f64 {
        match self {
            Regime::Underparam => 2.0,
            Regime::Overparam => 1.0,
        }
    }
}

/// Loss-decay constants: `f(β̂sgf(t)) ≤ e^{−ut+w} + v`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub regime: Regime,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub epsilon: f64,
    pub mu: f64,
    pub big_l: f64,
    pub rank: usize,
    /// `D = max_i (Σ̂²)_ii`.
    pub max_diag_sq: f64,
    pub u: f64,
    pub v: f64,
    /// `e^w` (kept unlogged: `w = −∞` for a zero response).
    pub exp_w: f64,
    /// `‖(I − P_X) y‖²`.
    pub q: f64,
    /// `E_η v`.
    pub v_tilde: f64,
    /// `E_η e^w`.
    pub w_tilde: f64,
}

impl TheoryConstants {
    /// `w = log e^w`.
    pub fn w(&self) -> f64 {
        self.exp_w.ln()
    }

    /// Loss bound `e^{−ut+w} + v` for the realized response.
    pub fn loss_bound(&self, t: f64) -> f64 {
        self.exp_w * (-self.u * t).exp() + self.v
    }
}

/// `max_i (Σ̂²)_ii`, the largest squared row norm of `Σ̂`.
pub fn max_diag_sq(problem: &RegressionProblem) -> f64 {
    let n = problem.n() as f64;
    let sigma_hat = problem.x().tr_mul(problem.x()) / n;
    sigma_hat
        .column_iter()
        .map(|c| c.norm_squared())
        .fold(0.0, f64::max)
}

/// `(‖y‖², ‖P_X y‖²)` with `P_X` the projector onto the column space of `X`.
fn projected_norms(problem: &RegressionProblem, y: &DVector<f64>) -> (f64, f64) {
    let spectrum = problem.spectrum();
    let n = problem.n() as f64;
    let xty = problem.x().tr_mul(y);
    let coords = spectrum.to_eigenbasis(&xty);
    let mut captured = 0.0;
    for j in 0..spectrum.rank() {
        captured += coords[j] * coords[j] / (n * spectrum.eigenvalues()[j]);
    }
    let total = y.norm_squared();
    (total, captured.min(total))
}

/// Largest step size with `u > 0`.
pub fn epsilon_max(problem: &RegressionProblem, m: usize) -> Result<f64> {
    let mu = problem.spectrum().mu();
    let d = max_diag_sq(problem);
    if !(mu > 0.0) || !(d > 0.0) {
        return Err(Error::Undefined(
            "step-size rule undefined: the design has no nonzero eigenvalue".into(),
        ));
    }
    let n = problem.n() as f64;
    let c = Regime::of(problem.n(), problem.p()).u_coefficient();
    Ok((mu * m as f64 / (c * n.powi(3) * d)).sqrt())
}

/// `safety_factor · ε_max`.
pub fn choose_epsilon(problem: &RegressionProblem, m: usize, safety_factor: f64) -> Result<f64> {
    if !(safety_factor > 0.0 && safety_factor <= 1.0) {
        return Err(invalid(format!("safety_factor must lie in (0, 1], got {safety_factor}")));
    }
    if m == 0 {
        return Err(invalid("choose_epsilon: m must be at least 1"));
    }
    Ok(safety_factor * epsilon_max(problem, m)?)
}

/// Default safety factor of [`choose_epsilon`].
pub const DEFAULT_SAFETY_FACTOR: f64 = 0.9;

/// Constants `u, v, w` for response `y`, and their noise averages for the
/// problem's `β₀, σ`.
pub fn loss_constants(problem: &RegressionProblem, epsilon: f64, m: usize, y: &DVector<f64>) -> Result<TheoryConstants> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("loss_constants: epsilon must be positive, got {epsilon}")));
    }
    if m == 0 {
        return Err(invalid("loss_constants: m must be at least 1"));
    }
    if y.len() != problem.n() {
        return Err(invalid("loss_constants: response has the wrong length"));
    }
    let (n, p) = (problem.n(), problem.p());
    let nf = n as f64;
    let mf = m as f64;
    let spectrum = problem.spectrum();
    let regime = Regime::of(n, p);
    let d = max_diag_sq(problem);
    let mu = spectrum.mu();
    let scale = (nf * epsilon).powi(2) * d / mf;
    let u = mu / nf - regime.u_coefficient() * scale;
    if !(u > 0.0) {
        let epsilon_max = epsilon_max(problem, m).unwrap_or(0.0);
        return Err(Error::StepTooLarge { epsilon, u, epsilon_max });
    }
    let (total, captured) = projected_norms(problem, y);
    let q = (total - captured).max(0.0);
    let rank = spectrum.rank();
    let sigma_sq = problem.sigma().powi(2);
    let signal = (problem.x() * problem.beta0()).norm_squared();
    let (v, exp_w, v_tilde, w_tilde) = match regime {
        Regime::Underparam => {
            let expected_q = (nf - rank as f64) * sigma_sq;
            (
                2.0 * scale * q / u,
                captured / (2.0 * nf),
                2.0 * scale * expected_q / u,
                (signal + rank as f64 * sigma_sq) / (2.0 * nf),
            )
        }
        Regime::Overparam => (0.0, total / (2.0 * nf), 0.0, (signal + nf * sigma_sq) / (2.0 * nf)),
    };
    Ok(TheoryConstants {
        regime,
        n,
        p,
        m,
        epsilon,
        mu,
        big_l: spectrum.big_l(),
        rank,
        max_diag_sq: d,
        u,
        v,
        exp_w,
        q,
        v_tilde,
        w_tilde,
    })
}

/// Realized-response constants or their noise averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Realized,
    Expected,
}

/// `ν_i(t) = e^w s_i/(s_i − u/2) (e^{−ut} − e^{−2ts_i}) + v (1 − e^{−2ts_i})`,
/// zero on null modes. `View::Expected` substitutes `w̃, ṽ`.
pub fn effective_variance(constants: &TheoryConstants, spectrum: &Spectrum, t: f64, view: View) -> Vec<f64> {
    let (ew, v) = match view {
        View::Realized => (constants.exp_w, constants.v),
        View::Expected => (constants.w_tilde, constants.v_tilde),
    };
    let u = constants.u;
    let decay_u = (-u * t).exp();
    spectrum
        .eigenvalues()
        .iter()
        .map(|&s| {
            if s == 0.0 {
                return 0.0;
            }
            let fill = -(-2.0 * t * s).exp_m1();
            ew * s / (s - u / 2.0) * (decay_u - (-2.0 * t * s).exp()) + v * fill
        })
        .collect()
}

/// `ε (n/m) Σ_i ν_i(t)`, weighted by `s_i` for in-sample risk.
pub fn minibatch_term(constants: &TheoryConstants, spectrum: &Spectrum, t: f64, view: View, in_sample: bool) -> f64 {
    let nu = effective_variance(constants, spectrum, t, view);
    let sum: f64 = if in_sample {
        nu.iter().zip(spectrum.eigenvalues().iter()).map(|(a, s)| a * s).sum()
    } else {
        nu.iter().sum()
    };
    constants.epsilon * constants.n as f64 / constants.m as f64 * sum
}

/// One risk bound at one time, by component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundBreakdown {
    pub t: f64,
    pub bias_sq: f64,
    /// Variance term, already multiplied by `variance_factor`.
    pub variance: f64,
    pub variance_factor: f64,
    pub minibatch: f64,
    pub total: f64,
}

impl BoundBreakdown {
    fn new(t: f64, base: BiasVariance, variance_factor: f64, minibatch: f64) -> Self {
        let variance = variance_factor * base.variance;
        BoundBreakdown {
            t,
            bias_sq: base.bias_sq,
            variance,
            variance_factor,
            minibatch,
            total: base.bias_sq + variance + minibatch,
        }
    }
}

/// The risk bound for stochastic gradient flow relative to gradient flow
/// (`.0`) and to ridge at `λ = 1/t` with inflated variance (`.1`).
pub fn sgf_risk_bound(
    model: &RiskModel,
    constants: &TheoryConstants,
    spectrum: &Spectrum,
    t: f64,
) -> Result<(BoundBreakdown, BoundBreakdown)> {
    sgf_risk_bound_with(model, constants, spectrum, t, false)
}

/// [`sgf_risk_bound`] for in-sample risk.
pub fn sgf_risk_bound_in_sample(
    model: &RiskModel,
    constants: &TheoryConstants,
    spectrum: &Spectrum,
    t: f64,
) -> Result<(BoundBreakdown, BoundBreakdown)> {
    sgf_risk_bound_with(model, constants, spectrum, t, true)
}

fn sgf_risk_bound_with(
    model: &RiskModel,
    constants: &TheoryConstants,
    spectrum: &Spectrum,
    t: f64,
    in_sample: bool,
) -> Result<(BoundBreakdown, BoundBreakdown)> {
    if !(t > 0.0) {
        return Err(invalid(format!("risk bound needs t > 0, got {t}")));
    }
    let mb = minibatch_term(constants, spectrum, t, View::Expected, in_sample);
    let (gf, ridge) = if in_sample {
        (
            model.risk_in_sample(Filter::GradientFlow { t }),
            model.risk_in_sample(Filter::Ridge { lambda: 1.0 / t }),
        )
    } else {
        (model.gf(t)?, model.ridge(1.0 / t)?)
    };
    Ok((
        BoundBreakdown::new(t, gf, 1.0, mb),
        BoundBreakdown::new(t, ridge, VARIANCE_INFLATION, mb),
    ))
}

/// `0.6862 Var(ridge(1/t)) + ε(n/m) Σ E_η ν_i(t)`.
pub fn excess_risk_bound(model: &RiskModel, constants: &TheoryConstants, spectrum: &Spectrum, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("excess risk bound needs t > 0, got {t}")));
    }
    let ridge = model.ridge(1.0 / t)?;
    Ok(EXCESS_VARIANCE_FACTOR * ridge.variance + minibatch_term(constants, spectrum, t, View::Expected, false))
}

/// The interpretable risk bound `bias² + δ|bias|^{1/κ} + γ(t)·var`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RelativeRiskBound {
    pub t: f64,
    pub alpha: f64,
    pub gamma_t: f64,
    pub kappa: f64,
    pub delta: f64,
    pub gf_form: f64,
    pub ridge_form: f64,
}

/// Relative-risk bound with `α = p w̃ ε nμ/(m(μ − u/2))`,
/// `γ(t) = 1 + 2.164 ε ṽ n² max(1/t, L)/(mσ²)`, `κ = L/μ`,
/// `δ = α/‖β₀‖^{1/κ}`.
pub fn relative_risk_bound(
    model: &RiskModel,
    constants: &TheoryConstants,
    t: f64,
) -> Result<RelativeRiskBound> {
    if !(t > 0.0) {
        return Err(invalid(format!("relative risk bound needs t > 0, got {t}")));
    }
    let sigma = model.sigma();
    if !(sigma > 0.0) {
        return Err(Error::Undefined(
            "relative risk bound: gamma(t) divides by sigma^2 = 0; use the direct risk bound instead".into(),
        ));
    }
    let beta_norm = model.signal_norm_sq().sqrt();
    if !(beta_norm > 0.0) {
        return Err(Error::Undefined("relative risk bound: delta needs a nonzero beta0".into()));
    }
    let (n, m, eps) = (constants.n as f64, constants.m as f64, constants.epsilon);
    let (mu, big_l, u) = (constants.mu, constants.big_l, constants.u);
    let alpha = constants.p as f64 * constants.w_tilde * eps * n * mu / (m * (mu - u / 2.0));
    let gamma_t = 1.0 + GAMMA_CONSTANT * eps * constants.v_tilde * n * n * (1.0 / t).max(big_l) / (m * sigma * sigma);
    let kappa = big_l / mu;
    let delta = alpha / beta_norm.powf(1.0 / kappa);
    let gf = model.gf(t)?;
    let ridge = model.ridge(1.0 / t)?;
    let form = |b: BiasVariance, factor: f64| b.bias_sq + delta * b.bias_sq.sqrt().powf(1.0 / kappa) + factor * gamma_t * b.variance;
    Ok(RelativeRiskBound {
        t,
        alpha,
        gamma_t,
        kappa,
        delta,
        gf_form: form(gf, 1.0),
        ridge_form: form(ridge, VARIANCE_INFLATION),
    })
}

/// `(g(t) − 1)² E_η‖β̂ridge(1/t)‖² + ε(n/m) Σ ν_i(t)`.
pub fn coefficient_error_bound(
    model: &RiskModel,
    constants: &TheoryConstants,
    spectrum: &Spectrum,
    t: f64,
    view: View,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("coefficient error bound needs t > 0, got {t}")));
    }
    let g = g_of_t(t, constants.mu, constants.big_l)?;
    let second = model.ridge_second_moment(1.0 / t);
    Ok((g - 1.0).powi(2) * second + minibatch_term(constants, spectrum, t, view, false))
}

/// `Σ_i |(y_i − x_iᵀβ)² − 1|`.
pub fn loss_deviation(problem: &RegressionProblem, beta: &DVector<f64>) -> f64 {
    let resid = problem.y() - problem.x() * beta;
    resid.iter().map(|r| (r * r - 1.0).abs()).sum()
}

/// Monte Carlo settings for [`nonconst_vs_const_bound`].
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrandSampling {
    pub replicates: usize,
    /// Number of trapezoid intervals on `[0, t]`; checkpoints are rounded
    /// to whole Euler steps.
    pub intervals: usize,
    pub seed: u64,
    pub root: NoiseRoot,
    pub execution: Execution,
}

/// Bound on `E‖β̂sgf(t) − β̃sgf(t)‖²` between the state-dependent and
/// constant-diffusion flows, with the integrand sampled along it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonconstBound {
    pub value: f64,
    pub times: Vec<f64>,
    pub integrand: Vec<f64>,
    pub integrand_se: Vec<f64>,
}

/// `4Lp³ε/m ∫₀ᵗ E_Z Σ_i |(y_i − x_iᵀβ̂sgf(τ))² − 1| dτ`, the integrand
/// estimated over Euler SGF ensembles and integrated by the trapezoid rule.
pub fn nonconst_vs_const_bound(
    problem: &RegressionProblem,
    epsilon: f64,
    m: usize,
    t: f64,
    sampling: &IntegrandSampling,
) -> Result<NonconstBound> {
    if !(t >= 0.0) {
        return Err(invalid(format!("nonconst_vs_const_bound: t must be nonnegative, got {t}")));
    }
    let k_end = (t / epsilon).round() as usize;
    let prefactor = 4.0 * problem.spectrum().big_l() * (problem.p() as f64).powi(3) * epsilon / m as f64;
    if k_end == 0 {
        return Ok(NonconstBound {
            value: 0.0,
            times: vec![0.0],
            integrand: vec![loss_deviation(problem, &DVector::zeros(problem.p()))],
            integrand_se: vec![0.0],
        });
    }
    let intervals = sampling.intervals.max(1);
    let mut checkpoints: Vec<usize> = (0..=intervals)
        .map(|i| ((i as f64 / intervals as f64) * k_end as f64).round() as usize)
        .collect();
    checkpoints.dedup();
    let config = SgdConfig::new(epsilon, m, k_end, sampling.seed);
    let spec = EnsembleSpec {
        kind: TrajectoryKind::EulerSgf,
        replicates: sampling.replicates,
        checkpoints: checkpoints.clone(),
        root: sampling.root,
        antithetic: false,
        execution: sampling.execution,
    };
    let ensemble = simulate_ensemble(problem, &config, &spec)?;
    let stats = ensemble.scalar(|beta| loss_deviation(problem, beta));
    let times: Vec<f64> = checkpoints.iter().map(|&k| k as f64 * epsilon).collect();
    let integrand: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let integral: f64 = times
        .windows(2)
        .zip(integrand.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum();
    Ok(NonconstBound {
        value: prefactor * integral,
        times,
        integrand,
        integrand_se: stats.iter().map(|s| s.1).collect(),
    })
}

/// Per-time bias², variance and risk of one estimator family, plus
/// optional named extra columns.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskCurve {
    estimator: String,
    t: Vec<f64>,
    bias_sq: Vec<f64>,
    variance: Vec<f64>,
    risk: Vec<f64>,
    extras: Vec<(String, Vec<f64>)>,
}

impl RiskCurve {
    /// An exact curve: `risk = bias_sq + variance`.
    pub fn new(estimator: impl Into<String>, t: Vec<f64>, bias_sq: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let risk = bias_sq.iter().zip(&variance).map(|(b, v)| b + v).collect();
        Self::with_risk(estimator, t, bias_sq, variance, risk)
    }

    /// A curve whose risk column carries more than bias² plus variance
    /// (bounds).
    pub fn with_risk(
        estimator: impl Into<String>,
        t: Vec<f64>,
        bias_sq: Vec<f64>,
        variance: Vec<f64>,
        risk: Vec<f64>,
    ) -> Result<Self> {
        let len = t.len();
        if len == 0 || bias_sq.len() != len || variance.len() != len || risk.len() != len {
            return Err(invalid("risk curve: columns must be non-empty and of equal length"));
        }
        if t.iter().any(|x| !(*x >= 0.0)) || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("risk curve: times must be nonnegative and strictly increasing"));
        }
        Ok(RiskCurve {
            estimator: estimator.into(),
            t,
            bias_sq,
            variance,
            risk,
            extras: Vec::new(),
        })
    }

    pub fn push_extra(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.t.len() {
            return Err(invalid("risk curve: extra column has the wrong length"));
        }
        self.extras.push((name.into(), values));
        Ok(())
    }

    pub fn estimator(&self) -> &str {
        &self.estimator
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn bias_sq(&self) -> &[f64] {
        &self.bias_sq
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn risk(&self) -> &[f64] {
        &self.risk
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn extra(&self, name: &str) -> Option<&[f64]> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn extras(&self) -> &[(String, Vec<f64>)] {
        &self.extras
    }

    /// Columns `t, lambda, bias_sq, variance, risk`, then the extras in
    /// insertion order. `lambda = 1/t` (infinite at `t = 0`).
    pub fn to_table(&self) -> Table {
        let mut table = Table::new()
            .real("t", self.t.clone())
            .real("lambda", self.t.iter().map(|t| 1.0 / t).collect())
            .real("bias_sq", self.bias_sq.clone())
            .real("variance", self.variance.clone())
            .real("risk", self.risk.clone());
        for (name, values) in &self.extras {
            table.push_real(name.clone(), values.clone());
        }
        table
    }
}

/// Ridge risk at `λ = 1/t` for each `t`.
pub fn ridge_curve(model: &RiskModel, times: &[f64], in_sample: bool) -> Result<RiskCurve> {
    filter_curve("ridge", model, times, in_sample, |t| Filter::Ridge { lambda: 1.0 / t })
}

/// Gradient-flow risk at each `t`.
pub fn gf_curve(model: &RiskModel, times: &[f64], in_sample: bool) -> Result<RiskCurve> {
    filter_curve("gf", model, times, in_sample, |t| Filter::GradientFlow { t })
}

/// Gradient-descent risk at iterations `ks`, placed at `t = kε`.
pub fn gd_curve(model: &RiskModel, epsilon: f64, ks: &[u64], in_sample: bool) -> Result<RiskCurve> {
    model.gd(epsilon, 0)?;
    let times: Vec<f64> = ks.iter().map(|&k| k as f64 * epsilon).collect();
    let mut idx = 0;
    filter_curve("gd", model, &times, in_sample, |_| {
        let f = Filter::GradientDescent { epsilon, k: ks[idx] };
        idx += 1;
        f
    })
}

fn filter_curve<F: FnMut(f64) -> Filter>(
    name: &str,
    model: &RiskModel,
    times: &[f64],
    in_sample: bool,
    mut filter: F,
) -> Result<RiskCurve> {
    let mut bias_sq = Vec::with_capacity(times.len());
    let mut variance = Vec::with_capacity(times.len());
    for &t in times {
        let f = filter(t);
        let bv = if in_sample { model.risk_in_sample(f) } else { model.risk(f) };
        bias_sq.push(bv.bias_sq);
        variance.push(bv.variance);
    }
    RiskCurve::new(name, times.to_vec(), bias_sq, variance)
}

/// Risk bound curve: main columns from the ridge form, with the
/// gradient-flow form, the mini-batch term and the excess-risk bound as
/// extra columns.
pub fn bound_curve(
    model: &RiskModel,
    constants: &TheoryConstants,
    spectrum: &Spectrum,
    times: &[f64],
    in_sample: bool,
) -> Result<RiskCurve> {
    let mut ridge_parts = Vec::with_capacity(times.len());
    let mut gf_parts = Vec::with_capacity(times.len());
    for &t in times {
        let (gf, ridge) = sgf_risk_bound_with(model, constants, spectrum, t, in_sample)?;
        gf_parts.push(gf);
        ridge_parts.push(ridge);
    }
    let mut curve = RiskCurve::with_risk(
        "sgf_bound",
        times.to_vec(),
        ridge_parts.iter().map(|b| b.bias_sq).collect(),
        ridge_parts.iter().map(|b| b.variance).collect(),
        ridge_parts.iter().map(|b| b.total).collect(),
    )?;
    curve.push_extra("minibatch", ridge_parts.iter().map(|b| b.minibatch).collect())?;
    curve.push_extra("gf_bias_sq", gf_parts.iter().map(|b| b.bias_sq).collect())?;
    curve.push_extra("gf_variance", gf_parts.iter().map(|b| b.variance).collect())?;
    curve.push_extra("gf_total", gf_parts.iter().map(|b| b.total).collect())?;
    if !in_sample {
        let excess = times
            .iter()
            .map(|&t| excess_risk_bound(model, constants, spectrum, t))
            .collect::<Result<Vec<_>>>()?;
        curve.push_extra("excess", excess)?;
    }
    Ok(curve)
}

/// Bias/variance balance and risk-minimizing times of a curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StoppingTimes {
    pub estimator: String,
    /// Where bias² = variance, interpolated between the bracketing grid
    /// points; the grid endpoint with the smallest |bias² − variance| when
    /// no crossing exists.
    pub t_star_balance: f64,
    pub risk_at_balance: f64,
    pub balance_found: bool,
    pub t_star_minrisk: f64,
    pub min_risk: f64,
    /// Whether the risk minimum is at an interior grid point.
    pub min_interior: bool,
}

/// Locates the first sign change of `bias² − variance` and the grid
/// argmin of risk.
pub fn optimal_stopping(curve: &RiskCurve) -> Result<StoppingTimes> {
    if curve.len() < 2 {
        return Err(invalid("optimal_stopping: need at least two grid points"));
    }
    let t = curve.t();
    let risk = curve.risk();
    let gap: Vec<f64> = curve.bias_sq().iter().zip(curve.variance()).map(|(b, v)| b - v).collect();

    let mut balance = None;
    for i in 0..gap.len() - 1 {
        if gap[i] == 0.0 {
            balance = Some((t[i], risk[i]));
            break;
        }
        if gap[i].signum() != gap[i + 1].signum() {
            // interpolate the gap linearly in log t (in t when the left end is 0)
            let (a, b) = if t[i] > 0.0 { (t[i].ln(), t[i + 1].ln()) } else { (t[i], t[i + 1]) };
            let frac = gap[i] / (gap[i] - gap[i + 1]);
            let x = a + frac * (b - a);
            let ts = if t[i] > 0.0 { x.exp() } else { x };
            balance = Some((ts, risk[i] + frac * (risk[i + 1] - risk[i])));
            break;
        }
    }
    let balance_found = balance.is_some();
    let (t_star_balance, risk_at_balance) = balance.unwrap_or_else(|| {
        let last = gap.len() - 1;
        let i = if gap[0].abs() <= gap[last].abs() { 0 } else { last };
        (t[i], risk[i])
    });

    let mut argmin = 0;
    for i in 1..risk.len() {
        if risk[i] < risk[argmin] {
            argmin = i;
        }
    }
    Ok(StoppingTimes {
        estimator: curve.estimator().to_string(),
        t_star_balance,
        risk_at_balance,
        balance_found,
        t_star_minrisk: t[argmin],
        min_risk: risk[argmin],
        min_interior: argmin > 0 && argmin + 1 < risk.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{gradient_descent, gradient_flow, ridge, PathGrid};
    use crate::problem::ProblemSpec;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn instance(n: usize, p: usize, seed: u64) -> RegressionProblem {
        ProblemSpec::gaussian(n, p, 0.4, seed).build().unwrap()
    }

    #[test]
    fn ridge_limits() {
        let prob = instance(8, 4, 1);
        let model = RiskModel::new(&prob);
        let big = model.ridge(1e12).unwrap();
        assert!((big.bias_sq - prob.beta0().norm_squared()).abs() < 1e-9);
        assert!(big.variance < 1e-20);
        let quiet = RiskModel::from_parts(prob.spectrum(), 8, prob.beta0(), 0.0);
        assert_eq!(quiet.ridge(0.3).unwrap().variance, 0.0);
        assert!(model.ridge(0.0).is_err());
    }

    #[test]
    fn gf_limits() {
        let prob = instance(12, 4, 2);
        let model = RiskModel::new(&prob);
        let zero = model.gf(0.0).unwrap();
        assert!((zero.bias_sq - prob.beta0().norm_squared()).abs() < 1e-12);
        assert_eq!(zero.variance, 0.0);
        let far = model.gf(1e6).unwrap();
        let s = prob.spectrum().eigenvalues();
        let expected: f64 = s.iter().map(|v| 1.0 / v).sum::<f64>() / 12.0;
        assert!(far.bias_sq < 1e-12);
        assert!((far.variance - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn gd_approaches_gf_as_steps_shrink() {
        let prob = instance(10, 5, 3);
        let model = RiskModel::new(&prob);
        let t = 1.5;
        let gf = model.gf(t).unwrap().risk();
        let d2 = (model.gd(1e-2, 150).unwrap().risk() - gf).abs();
        let d3 = (model.gd(1e-3, 1500).unwrap().risk() - gf).abs();
        assert!(d3 < d2 / 5.0 && d3 > d2 / 20.0, "{d2} {d3}");
        assert_eq!(model.gd(0.1, 0).unwrap().bias_sq, model.gf(0.0).unwrap().bias_sq);
        assert!(model.gd(2.0 / prob.spectrum().big_l(), 3).is_err());
    }

    /// Monte Carlo risk of an estimator over fresh responses.
    fn mc_risk<F>(prob: &RegressionProblem, draws: usize, seed: u64, est: F, in_sample: bool) -> (f64, f64)
    where
        F: Fn(&RegressionProblem) -> DVector<f64>,
    {
        let vals: Vec<f64> = (0..draws)
            .map(|d| {
                let y = prob.resample_response(seed.wrapping_add(d as u64));
                let b = est(&prob.with_response(y)) - prob.beta0();
                if in_sample {
                    (prob.x() * b).norm_squared() / prob.n() as f64
                } else {
                    b.norm_squared()
                }
            })
            .collect();
        let (m, v) = crate::simulate::mean_var(&vals);
        (m, (v / draws as f64).sqrt())
    }

    #[test]
    fn closed_form_risks_match_monte_carlo() {
        let prob = instance(6, 3, 4);
        let model = RiskModel::new(&prob);
        let draws = 100_000;
        let cases: Vec<(f64, (f64, f64))> = vec![
            (model.ridge(0.3).unwrap().risk(), mc_risk(&prob, draws, 10, |p| ridge(p, 0.3).unwrap(), false)),
            (model.gf(3.0).unwrap().risk(), mc_risk(&prob, draws, 11, |p| gradient_flow(p, 3.0).unwrap(), false)),
            (
                model.gd(0.05, 25).unwrap().risk(),
                mc_risk(&prob, draws, 12, |p| gradient_descent(p, 0.05, 25).unwrap(), false),
            ),
            (
                model.risk_in_sample(Filter::GradientFlow { t: 2.0 }).risk(),
                mc_risk(&prob, draws, 13, |p| gradient_flow(p, 2.0).unwrap(), true),
            ),
            (
                model.risk_in_sample(Filter::Ridge { lambda: 0.5 }).risk(),
                mc_risk(&prob, draws, 14, |p| ridge(p, 0.5).unwrap(), true),
            ),
        ];
        for (exact, (mc, se)) in cases {
            assert!((exact - mc).abs() <= 3.0 * se, "{exact} vs {mc} ± {se}");
        }
    }

    #[test]
    fn ridge_second_moment_matches_monte_carlo() {
        let prob = instance(7, 3, 5);
        let model = RiskModel::new(&prob);
        let vals: Vec<f64> = (0..100_000u64)
            .map(|d| ridge(&prob.with_response(prob.resample_response(d)), 0.4).unwrap().norm_squared())
            .collect();
        let (m, v) = crate::simulate::mean_var(&vals);
        let se = (v / vals.len() as f64).sqrt();
        assert!((model.ridge_second_moment(0.4) - m).abs() <= 3.0 * se);
    }

    #[test]
    fn in_sample_at_zero_is_signal_energy() {
        let prob = instance(9, 4, 6);
        let model = RiskModel::new(&prob);
        let at_zero = model.risk_in_sample(Filter::GradientFlow { t: 0.0 });
        let energy = (prob.x() * prob.beta0()).norm_squared() / 9.0;
        assert!((at_zero.bias_sq - energy).abs() < 1e-10 * energy);
    }

    #[test]
    fn overparam_constants() {
        let prob = instance(10, 30, 7);
        let eps = choose_epsilon(&prob, 2, 0.5).unwrap();
        let c = loss_constants(&prob, eps, 2, prob.y()).unwrap();
        assert_eq!(c.regime, Regime::Overparam);
        assert_eq!(c.v, 0.0);
        assert_eq!(c.v_tilde, 0.0);
        assert!((c.exp_w - prob.y().norm_squared() / 20.0).abs() < 1e-14);
    }

    #[test]
    fn zero_signal_zero_noise() {
        let mut spec = ProblemSpec::gaussian(10, 4, 0.0, 8);
        spec.sigma = 0.0;
        let prob = spec.build().unwrap();
        let prob = RegressionProblem::new(prob.x().clone(), DVector::zeros(10), DVector::zeros(4), 0.0).unwrap();
        let eps = choose_epsilon(&prob, 2, 0.9).unwrap();
        let c = loss_constants(&prob, eps, 2, prob.y()).unwrap();
        assert_eq!(c.w_tilde, 0.0);
        assert_eq!(c.exp_w, 0.0);
        assert_eq!(c.w(), f64::NEG_INFINITY);
        assert_eq!(c.loss_bound(1.0), c.v);
    }

    #[test]
    fn projected_loss_matches_explicit_projector() {
        let prob = instance(20, 5, 9);
        let eps = choose_epsilon(&prob, 4, 0.9).unwrap();
        let c = loss_constants(&prob, eps, 4, prob.y()).unwrap();
        let x = prob.x();
        let gram = x.tr_mul(x);
        let pinv = gram.pseudo_inverse(1e-12).unwrap();
        let proj: DMatrix<f64> = x * pinv * x.transpose();
        let y = prob.y();
        let q = (y - &proj * y).norm_squared();
        let expected = y.norm_squared() / 40.0 - q / 40.0;
        assert!((c.exp_w - expected).abs() < 1e-12);
        assert!((c.q - q).abs() < 1e-10 * y.norm_squared());
    }

    #[test]
    fn step_size_rule() {
        let prob = instance(30, 8, 10);
        let e1 = epsilon_max(&prob, 5).unwrap();
        let e2 = epsilon_max(&prob, 10).unwrap();
        assert!((e2 / e1 - 2f64.sqrt()).abs() < 1e-12);
        let eps = choose_epsilon(&prob, 5, 0.9).unwrap();
        assert!(loss_constants(&prob, eps, 5, prob.y()).unwrap().u > 0.0);
        match loss_constants(&prob, 1.01 * e1, 5, prob.y()) {
            Err(Error::StepTooLarge { epsilon_max, .. }) => assert!((epsilon_max - e1).abs() < 1e-15),
            other => panic!("expected StepTooLarge, got {other:?}"),
        }
        assert!(choose_epsilon(&prob, 5, 0.0).is_err());
    }

    #[test]
    fn paper_scale_step_size() {
        for seed in 0..10 {
            let prob = ProblemSpec::gaussian(100, 500, 0.5, seed).build().unwrap();
            let eps = choose_epsilon(&prob, 20, DEFAULT_SAFETY_FACTOR).unwrap();
            let ratio = eps / 2.2548e-4;
            assert!(ratio > 0.1 && ratio < 10.0, "seed {seed}: eps = {eps}");
        }
    }

    fn constants_for(prob: &RegressionProblem, m: usize) -> TheoryConstants {
        let eps = choose_epsilon(prob, m, 0.9).unwrap();
        loss_constants(prob, eps, m, prob.y()).unwrap()
    }

    #[test]
    fn effective_variance_limits() {
        let prob = instance(12, 30, 11);
        let c = constants_for(&prob, 3);
        let s = prob.spectrum();
        assert!(effective_variance(&c, s, 0.0, View::Realized).iter().all(|v| *v == 0.0));
        let late = effective_variance(&c, s, 1e3 / c.u, View::Expected);
        assert!(late.iter().all(|v| v.abs() < 1e-12));
    }

    /// Composite Gauss–Legendre (5 nodes) on `n` panels.
    fn quadrature<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
        let nodes = [
            (0.0, 128.0 / 225.0),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for i in 0..panels {
            let mid = a + (i as f64 + 0.5) * h;
            for (x, w) in nodes {
                total += w * f(mid + 0.5 * h * x) * 0.5 * h;
            }
        }
        total
    }

    #[test]
    fn effective_variance_matches_quadrature() {
        let prob = instance(25, 6, 12);
        let c = constants_for(&prob, 5);
        let t = 1.3;
        let nu = effective_variance(&c, prob.spectrum(), t, View::Realized);
        let (n, m, eps) = (c.n as f64, c.m as f64, c.epsilon);
        for (i, &s) in prob.spectrum().eigenvalues().iter().enumerate() {
            let integrand = |tau: f64| (c.exp_w * (-c.u * tau).exp() + c.v) * s * (2.0 * (tau - t) * s).exp();
            let integral = 2.0 * n / m * eps * quadrature(integrand, 0.0, t, 400);
            assert!((integral - eps * n / m * nu[i]).abs() < 1e-8, "mode {i}");
        }
    }

    #[test]
    fn bounds_at_small_t_are_pure_bias() {
        let prob = instance(15, 40, 13);
        let c = constants_for(&prob, 5);
        let model = RiskModel::new(&prob);
        let (gf, rr) = sgf_risk_bound(&model, &c, prob.spectrum(), 1e-10).unwrap();
        let b0 = prob.beta0().norm_squared();
        assert!((gf.total - b0).abs() < 1e-6 * b0);
        assert!((rr.total - b0).abs() < 1e-6 * b0);
    }

    #[test]
    fn interpolating_bound_vanishes() {
        let mut spec = ProblemSpec::gaussian(10, 25, 0.2, 14);
        spec.sigma = 0.0;
        spec.beta0_in_row_space = true;
        let prob = spec.build().unwrap();
        let c = constants_for(&prob, 2);
        let model = RiskModel::new(&prob);
        let t = 200.0 / c.u;
        let (gf, _) = sgf_risk_bound(&model, &c, prob.spectrum(), t).unwrap();
        assert!(gf.total < 1e-10, "{gf:?}");
        assert!(excess_risk_bound(&model, &c, prob.spectrum(), t).unwrap() < 1e-10);
    }

    #[test]
    fn excess_is_ridge_bound_minus_ridge_risk() {
        let prob = instance(20, 8, 15);
        let c = constants_for(&prob, 4);
        let model = RiskModel::new(&prob);
        for t in [0.1, 1.0, 10.0] {
            let (_, rr) = sgf_risk_bound(&model, &c, prob.spectrum(), t).unwrap();
            let ridge = model.ridge(1.0 / t).unwrap();
            let excess = excess_risk_bound(&model, &c, prob.spectrum(), t).unwrap();
            assert!((rr.total - ridge.bias_sq - ridge.variance - excess).abs() < 1e-12 * rr.total.max(1.0));
        }
    }

    #[test]
    fn relative_bound_special_cases() {
        let prob = instance(10, 30, 16);
        let c = constants_for(&prob, 2);
        let model = RiskModel::new(&prob);
        let rb = relative_risk_bound(&model, &c, 0.7).unwrap();
        assert_eq!(rb.gamma_t, 1.0);
        let quiet = RiskModel::from_parts(prob.spectrum(), 10, prob.beta0(), 0.0);
        assert!(matches!(relative_risk_bound(&quiet, &c, 0.7), Err(Error::Undefined(_))));

        let n = 6;
        let x = DMatrix::identity(n, n) * (n as f64).sqrt();
        let beta0 = DVector::from_vec(vec![1.0, -0.5, 0.3, 0.2, 0.0, 1.1]);
        let y = &x * &beta0;
        let iso = RegressionProblem::new(x, y, beta0, 0.5).unwrap();
        let ci = constants_for(&iso, 2);
        let mi = RiskModel::new(&iso);
        let rb = relative_risk_bound(&mi, &ci, 0.9).unwrap();
        assert!((rb.kappa - 1.0).abs() < 1e-12);
        let gf = mi.gf(0.9).unwrap();
        let expected = gf.bias_sq + rb.delta * gf.bias_sq.sqrt() + rb.gamma_t * gf.variance;
        assert!((rb.gf_form - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn coefficient_bound_vanishes_at_origin() {
        let prob = instance(15, 5, 17);
        let c = constants_for(&prob, 3);
        let model = RiskModel::new(&prob);
        let at = |t| coefficient_error_bound(&model, &c, prob.spectrum(), t, View::Expected).unwrap();
        let (b1, b2) = (at(1e-8), at(1e-9));
        assert!(b1 < 1e-5);
        assert!((b1 / b2 - 10.0).abs() < 0.1, "{b1} {b2}");
    }

    #[test]
    fn const_process_reduces_to_gf() {
        let prob = instance(10, 4, 18);
        let model = RiskModel::new(&prob);
        let at_zero = model.const_process(0.1, 2, 0.0).unwrap();
        assert!((at_zero.risk() - prob.beta0().norm_squared()).abs() < 1e-12);
        let t = 2.0;
        let cp = model.const_process(1e-300, 2, t).unwrap();
        assert_eq!(cp.risk(), model.gf(t).unwrap().risk());
    }

    #[test]
    fn unit_residual_integrand_vanishes() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let prob = RegressionProblem::new(x, y, DVector::zeros(2), 1.0).unwrap();
        assert_eq!(loss_deviation(&prob, &DVector::zeros(2)), 0.0);
        let sampling = IntegrandSampling {
            replicates: 4,
            intervals: 4,
            seed: 0,
            root: NoiseRoot::Symmetric,
            execution: Execution::Sequential,
        };
        assert_eq!(nonconst_vs_const_bound(&prob, 0.01, 1, 0.0, &sampling).unwrap().value, 0.0);
    }

    #[test]
    fn stopping_on_synthetic_curve() {
        let grid = PathGrid::log_spaced(1e-2, 1e2, 200).unwrap();
        let t = grid.times().to_vec();
        let bias: Vec<f64> = t.iter().map(|x| (-x).exp()).collect();
        let var: Vec<f64> = t.iter().map(|x| 1.0 - (-x).exp()).collect();
        let curve = RiskCurve::new("synthetic", t, bias, var).unwrap();
        let st = optimal_stopping(&curve).unwrap();
        assert!(st.balance_found);
        assert!((st.t_star_balance - 2f64.ln()).abs() < 2f64.ln() * 0.05);
    }

    #[test]
    fn stopping_flags_missing_crossing() {
        let curve = RiskCurve::new("flat", vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.5], vec![0.1, 0.2, 0.3]).unwrap();
        let st = optimal_stopping(&curve).unwrap();
        assert!(!st.balance_found);
        assert_eq!(st.t_star_balance, 3.0);
    }

    #[test]
    fn ridge_min_risk_dominates_balance() {
        let prob = instance(40, 20, 19);
        let model = RiskModel::new(&prob);
        let curve = ridge_curve(&model, PathGrid::default_ridge().times(), false).unwrap();
        let st = optimal_stopping(&curve).unwrap();
        assert!(st.min_risk <= st.risk_at_balance + 1e-12);
    }

    #[test]
    fn curve_csv_layout() {
        let curve = RiskCurve::new("x", vec![0.5, 1.0], vec![1.0, 0.5], vec![0.0, 0.25]).unwrap();
        let csv = curve.to_table().to_csv_string().unwrap();
        assert!(csv.starts_with("t,lambda,bias_sq,variance,risk\n5.0000000000000000e-1,2.0000000000000000e0,"));
        assert!(RiskCurve::new("x", vec![1.0, 1.0], vec![0.0; 2], vec![0.0; 2]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gradient_flow_dominated_by_ridge(seed in any::<u64>(), n in 2usize..60, p in 1usize..60) {
            let prob = instance(n, p, seed);
            let model = RiskModel::new(&prob);
            for &t in PathGrid::default_ridge().times() {
                let gf = model.gf(t).unwrap();
                let rr = model.ridge(1.0 / t).unwrap();
                prop_assert!(gf.bias_sq <= rr.bias_sq + 1e-10);
                prop_assert!(gf.variance <= VARIANCE_INFLATION * rr.variance + 1e-10);
            }
        }

        #[test]
        fn relative_form_dominates_direct_form(seed in any::<u64>(), n in 4usize..80, p in 2usize..100, rho in 0.0f64..0.9) {
            let prob = ProblemSpec::gaussian(n, p, rho, seed).build().unwrap();
            let c = constants_for(&prob, (n / 4).max(1));
            let model = RiskModel::new(&prob);
            for &t in PathGrid::default_ridge().times() {
                let rb = relative_risk_bound(&model, &c, t).unwrap();
                let (gf, rr) = sgf_risk_bound(&model, &c, prob.spectrum(), t).unwrap();
                prop_assert!(rb.gf_form >= gf.total - 1e-10, "t = {t}: {} < {}", rb.gf_form, gf.total);
                prop_assert!(rb.ridge_form >= rr.total - 1e-10);
            }
        }

        #[test]
        fn effective_variance_nonnegative(seed in any::<u64>(), n in 4usize..40, p in 1usize..40) {
            let prob = instance(n, p, seed);
            let m = (n / 3).max(1);
            let c = constants_for(&prob, m);
            for &t in PathGrid::log_spaced(1e-4, 1e4, 100).unwrap().times() {
                for view in [View::Realized, View::Expected] {
                    prop_assert!(effective_variance(&c, prob.spectrum(), t, view).iter().all(|v| *v >= 0.0));
                }
            }
        }
    }
}
