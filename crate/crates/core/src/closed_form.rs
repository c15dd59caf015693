//! Deterministic estimator paths with closed forms.
//!
//! Ridge, gradient flow and full-batch gradient descent started at zero are
//! all spectral filters of the least-squares problem:
//!
//! ```text
//! β̂ = V diag(φ(s_i)) Vᵀ Xᵀy / n
//! ```
//!
//! with `φ(s) = 1/(s+λ)`, `(1-e^{-ts})/s` and `(1-(1-εs)^k)/s`
//! respectively. Directions with `s_i = 0` carry no coefficient: the paths
//! start at zero and `Xᵀy` has no component there.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::problem::RegressionProblem;
use crate::spectral::{SpectralFn, Spectrum};

/// Location of the maximum of `(1-e^{-x})(1+x)/x`.
pub const G_ARGMAX: f64 = 1.7933;
/// Plateau value of `g(t)` between `G_ARGMAX/L` and `G_ARGMAX/μ`.
pub const G_MAX: f64 = 1.2985;

/// A spectral filter: which estimator, and where on its path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Filter {
    Ridge { lambda: f64 },
    GradientFlow { t: f64 },
    GradientDescent { epsilon: f64, k: u64 },
}

impl Filter {
    /// `φ(s)`; zero on null directions.
    pub fn phi(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        match *self {
            Filter::Ridge { lambda } => 1.0 / (s + lambda),
            Filter::GradientFlow { t } => -(-t * s).exp_m1() / s,
            Filter::GradientDescent { epsilon, k } => gd_shrink(epsilon * s, k) / s,
        }
    }

    /// `s·φ(s)`: the fraction of the least-squares coefficient kept on a mode.
    pub fn shrink(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        match *self {
            Filter::Ridge { lambda } => s / (s + lambda),
            Filter::GradientFlow { t } => -(-t * s).exp_m1(),
            Filter::GradientDescent { epsilon, k } => gd_shrink(epsilon * s, k),
        }
    }
}

/// `1 - (1-x)^k`, accurate for small `x`.
fn gd_shrink(x: f64, k: u64) -> f64 {
    if x < 1.0 {
        -((k as f64) * (-x).ln_1p()).exp_m1()
    } else {
        1.0 - (1.0 - x).powf(k as f64)
    }
}

/// Spectral coordinates `Vᵀ Xᵀy / n` of the problem's response.
pub fn response_coordinates(problem: &RegressionProblem) -> DVector<f64> {
    problem.spectrum().to_eigenbasis(&problem.xty_over_n())
}

/// Applies a filter given the response coordinates `c = Vᵀ Xᵀy / n`.
pub fn apply_filter(spectrum: &Spectrum, coords: &DVector<f64>, filter: Filter) -> DVector<f64> {
    let s = spectrum.eigenvalues();
    let scaled = DVector::from_fn(coords.len(), |i, _| filter.phi(s[i]) * coords[i]);
    spectrum.from_eigenbasis(&scaled)
}

/// Ridge estimate `(XᵀX + nλI)⁻¹ Xᵀy`.
pub fn ridge(problem: &RegressionProblem, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("ridge: lambda must be positive, got {lambda}")));
    }
    Ok(apply_filter(
        problem.spectrum(),
        &response_coordinates(problem),
        Filter::Ridge { lambda },
    ))
}

/// Gradient flow `(XᵀX)⁺(I - exp(-tXᵀX/n))Xᵀy` from zero.
pub fn gradient_flow(problem: &RegressionProblem, t: f64) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(invalid(format!("gradient_flow: t must be nonnegative, got {t}")));
    }
    Ok(apply_filter(
        problem.spectrum(),
        &response_coordinates(problem),
        Filter::GradientFlow { t },
    ))
}

/// `k` steps of full-batch gradient descent with step `epsilon` from zero,
/// in closed form.
pub fn gradient_descent(problem: &RegressionProblem, epsilon: f64, k: u64) -> Result<DVector<f64>> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("gradient_descent: epsilon must be positive, got {epsilon}")));
    }
    let big_l = problem.spectrum().big_l();
    if epsilon * big_l >= 2.0 {
        log::warn!("gradient descent step {epsilon} >= 2/L = {}; iterates diverge", 2.0 / big_l);
    }
    Ok(apply_filter(
        problem.spectrum(),
        &response_coordinates(problem),
        Filter::GradientDescent { epsilon, k },
    ))
}

/// The same iterates by explicit recursion `β ← β + (ε/n)Xᵀ(y - Xβ)`.
pub fn gradient_descent_iterative(problem: &RegressionProblem, epsilon: f64, k: u64) -> DVector<f64> {
    let x = problem.x();
    let scale = epsilon / problem.n() as f64;
    let mut beta = DVector::zeros(problem.p());
    for _ in 0..k {
        let resid = problem.y() - x * &beta;
        beta += x.tr_mul(&resid) * scale;
    }
    beta
}

/// Minimum-norm least-squares solution `(XᵀX)⁺Xᵀy`.
pub fn min_norm(problem: &RegressionProblem) -> Result<DVector<f64>> {
    let pinv = problem.spectrum().apply(SpectralFn::Pinv)?;
    Ok(pinv * problem.xty_over_n())
}

/// `(1-e^{-x})(1+x)/x`, continuously extended by 1 at 0.
pub fn g_profile(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    -(-x).exp_m1() * (1.0 + x) / x
}

/// Ratio envelope bounding `‖β̂gf(t) - β̂ridge(1/t)‖ / ‖β̂ridge(1/t)‖ + 1`.
pub fn g_of_t(t: f64, mu: f64, big_l: f64) -> Result<f64> {
    if !(t > 0.0) || !(mu > 0.0) || !(big_l >= mu) {
        return Err(invalid(format!(
            "g_of_t needs t > 0 and 0 < mu <= L (t = {t}, mu = {mu}, L = {big_l})"
        )));
    }
    Ok(if t <= G_ARGMAX / big_l {
        g_profile(big_l * t)
    } else if t >= G_ARGMAX / mu {
        g_profile(mu * t)
    } else {
        G_MAX
    })
}

/// Spacing of a [`PathGrid`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    Log,
    Linear,
}

/// Strictly increasing positive times; ridge is evaluated at `λ = 1/t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    times: Vec<f64>,
    scale: GridScale,
}

impl PathGrid {
    pub fn new(times: Vec<f64>, scale: GridScale) -> Result<Self> {
        if times.is_empty() {
            return Err(invalid("path grid is empty"));
        }
        if times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(invalid("path grid times must be finite and positive"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("path grid times must be strictly increasing"));
        }
        Ok(PathGrid { times, scale })
    }

    /// `count` log-spaced times between `t_min` and `t_max`.
    pub fn log_spaced(t_min: f64, t_max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(t_min > 0.0) || !(t_max > t_min) {
            return Err(invalid("log grid needs count >= 2 and 0 < t_min < t_max"));
        }
        let (a, b) = (t_min.ln(), t_max.ln());
        let step = (b - a) / (count - 1) as f64;
        let mut times: Vec<f64> = (0..count).map(|i| (a + step * i as f64).exp()).collect();
        times[0] = t_min;
        times[count - 1] = t_max;
        Self::new(times, GridScale::Log)
    }

    /// `count` log-spaced ridge parameters in `[lambda_min, lambda_max]`,
    /// mapped to times `t = 1/λ` in increasing order.
    pub fn from_lambdas(lambda_min: f64, lambda_max: f64, count: usize) -> Result<Self> {
        Self::log_spaced(1.0 / lambda_max, 1.0 / lambda_min, count)
    }

    /// 200 log-spaced `λ ∈ [2⁻¹⁵, 2¹⁵]`.
    pub fn default_ridge() -> Self {
        Self::from_lambdas(2f64.powi(-15), 2f64.powi(15), 200).expect("valid default grid")
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.times.iter().map(|t| 1.0 / t).collect()
    }

    pub fn scale(&self) -> GridScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps only times `<= t_max`.
    pub fn truncated(&self, t_max: f64) -> Option<Self> {
        let times: Vec<f64> = self.times.iter().copied().filter(|t| *t <= t_max).collect();
        if times.is_empty() {
            None
        } else {
            Some(PathGrid {
                times,
                scale: self.scale,
            })
        }
    }
}
