//! Fixed-design regression problems and the synthetic design generators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::output::float17;
use crate::rng::derive_seed;
use crate::spectral::{sym_eig, Spectrum, DEFAULT_ZERO_THRESHOLD};

pub const DEFAULT_STUDENT_DF: f64 = 5.0;
pub const DEFAULT_BERNOULLI_PROB: f64 = 0.5;

/// Distribution of the i.i.d. entries of `W` (always standardized to mean 0,
/// variance 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignFamily {
    #[default]
    Gaussian,
    StudentT {
        #[serde(default = "default_df")]
        df: f64,
    },
    Bernoulli {
        #[serde(default = "default_prob")]
        prob: f64,
    },
}

fn default_df() -> f64 {
    DEFAULT_STUDENT_DF
}

fn default_prob() -> f64 {
    DEFAULT_BERNOULLI_PROB
}

/// Design `X = W Σ^{1/2}` with `Σ` equicorrelated (unit diagonal, `rho`
/// off the diagonal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub family: DesignFamily,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(invalid("design: n and p must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(invalid(format!("design: rho = {} outside [0, 1)", self.rho)));
        }
        match self.family {
            DesignFamily::StudentT { df } if !(df > 2.0) => Err(invalid(format!(
                "design: student_t needs df > 2 for finite variance, got {df}"
            ))),
            DesignFamily::Bernoulli { prob } if !(prob > 0.0 && prob < 1.0) => Err(invalid(
                format!("design: bernoulli prob must lie in (0, 1), got {prob}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Symmetric square root of `(1-ρ)I + ρ11ᵀ`.
///
/// The matrix has eigenvalue `1-ρ+ρp` on the all-ones direction and `1-ρ`
/// on its orthogonal complement, so the root is available in closed form.
pub fn equicorrelation_sqrt(p: usize, rho: f64) -> DMatrix<f64> {
    let a = (1.0 - rho).sqrt();
    let b = (1.0 - rho + rho * p as f64).sqrt();
    let off = (b - a) / p as f64;
    DMatrix::from_fn(p, p, |i, j| if i == j { a + off } else { off })
}

/// Population covariance `(1-ρ)I + ρ11ᵀ`.
pub fn equicorrelation(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho })
}

fn standardized_draw(family: DesignFamily, rng: &mut ChaCha8Rng) -> f64 {
    match family {
        DesignFamily::Gaussian => StandardNormal.sample(rng),
        DesignFamily::StudentT { df } => {
            let t: f64 = StudentT::new(df).expect("df validated").sample(rng);
            t * ((df - 2.0) / df).sqrt()
        }
        DesignFamily::Bernoulli { prob } => {
            let b = if rng.random_bool(prob) { 1.0 } else { 0.0 };
            (b - prob) / (prob * (1.0 - prob)).sqrt()
        }
    }
}

/// Draws the `n × p` design. Deterministic in `spec.seed`.
pub fn generate_design(spec: &DesignSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // filled row by row so the stream order does not depend on storage layout
    let mut w = DMatrix::zeros(spec.n, spec.p);
    for i in 0..spec.n {
        for j in 0..spec.p {
            w[(i, j)] = standardized_draw(spec.family, &mut rng);
        }
    }
    if spec.rho == 0.0 {
        return Ok(w);
    }
    Ok(w * equicorrelation_sqrt(spec.p, spec.rho))
}

/// Spectrum of `Σ̂ = XᵀX / n`.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<Spectrum> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(invalid("sample_covariance: empty design"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("sample_covariance: design has non-finite entries"));
    }
    let cov = x.tr_mul(x) / x.nrows() as f64;
    sym_eig(&cov, DEFAULT_ZERO_THRESHOLD)
}

/// `y = Xβ₀ + σz`, `z` standard normal. Deterministic in `seed`.
pub fn generate_response(x: &DMatrix<f64>, beta0: &DVector<f64>, sigma: f64, seed: u64) -> DVector<f64> {
    assert_eq!(x.ncols(), beta0.len(), "generate_response: dimension mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = x * beta0;
    if sigma != 0.0 {
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    y
}

/// I.i.d. standard normal coefficient draw.
pub fn draw_coefficients(p: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng))
}

/// Signal-to-noise ratio `‖Xβ‖² / (nσ²)`.
pub fn snr(x: &DMatrix<f64>, beta: &DVector<f64>, sigma: f64) -> f64 {
    (x * beta).norm_squared() / (x.nrows() as f64 * sigma * sigma)
}

/// Rescales `beta0_raw` so that `‖Xβ₀‖² / (nσ²)` equals `target_snr`.
pub fn scale_to_snr(
    beta0_raw: &DVector<f64>,
    x: &DMatrix<f64>,
    sigma: f64,
    target_snr: f64,
) -> Result<DVector<f64>> {
    if !(sigma > 0.0) || !(target_snr > 0.0) {
        return Err(invalid("scale_to_snr: sigma and target_snr must be positive"));
    }
    let signal = (x * beta0_raw).norm_squared();
    if signal == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let n = x.nrows() as f64;
    let c = (target_snr * n * sigma * sigma / signal).sqrt();
    Ok(beta0_raw * c)
}

/// A fixed design, its response, the true coefficients and noise level,
/// with the spectrum of `XᵀX/n` cached.
#[derive(Clone, Debug)]
pub struct RegressionProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    beta0: DVector<f64>,
    sigma: f64,
    spectrum: Spectrum,
}

impl RegressionProblem {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, beta0: DVector<f64>, sigma: f64) -> Result<Self> {
        if y.len() != x.nrows() || beta0.len() != x.ncols() {
            return Err(invalid(format!(
                "problem: X is {}x{}, y has {} entries, beta0 has {}",
                x.nrows(),
                x.ncols(),
                y.len(),
                beta0.len()
            )));
        }
        if !(sigma >= 0.0) {
            return Err(invalid("problem: sigma must be nonnegative"));
        }
        let spectrum = sample_covariance(&x)?;
        Ok(RegressionProblem {
            x,
            y,
            beta0,
            sigma,
            spectrum,
        })
    }

    /// Same design and truth with a different response; reuses the spectrum.
    pub fn with_response(&self, y: DVector<f64>) -> Self {
        assert_eq!(y.len(), self.n(), "with_response: length mismatch");
        RegressionProblem {
            y,
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta0(&self) -> &DVector<f64> {
        &self.beta0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// `Xᵀy / n`.
    pub fn xty_over_n(&self) -> DVector<f64> {
        self.x.tr_mul(&self.y) / self.n() as f64
    }

    /// Draws a fresh response `Xβ₀ + η` for this design.
    pub fn resample_response(&self, seed: u64) -> DVector<f64> {
        generate_response(&self.x, &self.beta0, self.sigma, seed)
    }
}

/// Everything needed to synthesize a [`RegressionProblem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub design: DesignSpec,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Target `‖Xβ₀‖²/(nσ²)`; ignored when `sigma == 0`.
    #[serde(default = "default_snr")]
    pub snr: Option<f64>,
    /// Project the coefficient draw onto the row space of `X`.
    #[serde(default)]
    pub beta0_in_row_space: bool,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_snr() -> Option<f64> {
    Some(1.0)
}

impl ProblemSpec {
    pub fn gaussian(n: usize, p: usize, rho: f64, seed: u64) -> Self {
        ProblemSpec {
            design: DesignSpec {
                n,
                p,
                family: DesignFamily::Gaussian,
                rho,
                seed,
            },
            sigma: 1.0,
            snr: Some(1.0),
            beta0_in_row_space: false,
        }
    }

    /// Builds the problem: design from `design.seed`, coefficients and noise
    /// from seeds derived from it.
    pub fn build(&self) -> Result<RegressionProblem> {
        let x = generate_design(&self.design)?;
        let spectrum = sample_covariance(&x)?;
        let mut beta = draw_coefficients(self.design.p, derive_seed(self.design.seed, 1));
        if self.beta0_in_row_space {
            let v = spectrum.eigenvectors();
            let mut c = v.tr_mul(&beta);
            for i in 0..c.len() {
                if spectrum.is_zero_mode(i) {
                    c[i] = 0.0;
                }
            }
            beta = v * c;
        }
        let beta0 = match self.snr {
            Some(target) if self.sigma > 0.0 => scale_to_snr(&beta, &x, self.sigma, target)?,
            _ => beta,
        };
        let y = generate_response(&x, &beta0, self.sigma, derive_seed(self.design.seed, 2));
        Ok(RegressionProblem {
            x,
            y,
            beta0,
            sigma: self.sigma,
            spectrum,
        })
    }
}

/// JSON interchange form of a problem. Reals are written with 17
/// significant digits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub n: usize,
    pub p: usize,
    pub family: DesignFamily,
    #[serde(with = "float17")]
    pub rho: f64,
    pub seed: u64,
    #[serde(with = "float17")]
    pub sigma: f64,
    #[serde(with = "float17::option")]
    pub snr: Option<f64>,
    #[serde(with = "float17::vec")]
    pub beta0: Vec<f64>,
    /// Row-major.
    #[serde(rename = "X", with = "float17::vec")]
    pub x: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub y: Vec<f64>,
}

impl ProblemDocument {
    pub fn from_problem(problem: &RegressionProblem, spec: Option<&ProblemSpec>) -> Self {
        let (n, p) = (problem.n(), problem.p());
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                x.push(problem.x[(i, j)]);
            }
        }
        ProblemDocument {
            n,
            p,
            family: spec.map(|s| s.design.family).unwrap_or_default(),
            rho: spec.map(|s| s.design.rho).unwrap_or(0.0),
            seed: spec.map(|s| s.design.seed).unwrap_or(0),
            sigma: problem.sigma,
            snr: if problem.sigma > 0.0 {
                Some(snr(&problem.x, &problem.beta0, problem.sigma))
            } else {
                None
            },
            beta0: problem.beta0.iter().copied().collect(),
            x,
            y: problem.y.iter().copied().collect(),
        }
    }

    pub fn into_problem(self) -> Result<RegressionProblem> {
        if self.x.len() != self.n * self.p || self.y.len() != self.n || self.beta0.len() != self.p {
            return Err(invalid("problem document: array lengths disagree with n and p"));
        }
        let x = DMatrix::from_row_slice(self.n, self.p, &self.x);
        RegressionProblem::new(
            x,
            DVector::from_vec(self.y),
            DVector::from_vec(self.beta0),
            self.sigma,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
