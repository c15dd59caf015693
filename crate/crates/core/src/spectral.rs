//! Dense symmetric eigendecomposition and spectral matrix functions.
//!
//! Every closed form in the crate is evaluated mode by mode in the
//! eigenbasis of a symmetric matrix, so a [`Spectrum`] is computed once per
//! problem and reused across whole grids of times and step counts.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Relative threshold below which an eigenvalue counts as zero.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-10;
const PSD_TOLERANCE: f64 = 1e-10;

/// Eigendecomposition `A = V S Vᵀ` of a symmetric matrix, eigenvalues in
/// descending order.
#[derive(Clone, Debug)]
pub struct Spectrum {
    raw: DVector<f64>,
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    zero_threshold: f64,
    rank: usize,
    mu: f64,
    big_l: f64,
}

/// Scalar functions that can be lifted to the matrix through the spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralFn {
    /// `exp(c * A)`.
    ExpScaled(f64),
    /// Moore–Penrose pseudo-inverse.
    Pinv,
    /// Symmetric positive semidefinite square root.
    PsdSqrt,
    /// `A^q` on the nonzero eigenvalues, zero elsewhere.
    Power(f64),
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues with magnitude at most `zero_threshold * max|s|` are treated
/// as zero when computing the rank, `mu` and pseudo-inverses.
pub fn sym_eig(a: &DMatrix<f64>, zero_threshold: f64) -> Result<Spectrum> {
    let p = a.nrows();
    if p == 0 || a.ncols() != p {
        return Err(invalid(format!(
            "sym_eig needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("sym_eig: matrix has non-finite entries"));
    }
    if !(zero_threshold >= 0.0) {
        return Err(invalid("zero_threshold must be nonnegative"));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(invalid(format!(
            "sym_eig: matrix is not symmetric (max |A - A^T| = {asym:e})"
        )));
    }
    let sym = (a + a.transpose()) * 0.5;
    let max_iter = 100 * p + 1000;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, max_iter)
        .ok_or(Error::NoConvergence { iterations: max_iter })?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let raw = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Spectrum::from_parts(raw, vectors, zero_threshold))
}

impl Spectrum {
    fn from_parts(raw: DVector<f64>, vectors: DMatrix<f64>, zero_threshold: f64) -> Self {
        let top = raw.amax();
        let cutoff = zero_threshold * top;
        let values = raw.map(|s| if s.abs() <= cutoff { 0.0 } else { s });
        let positive: Vec<f64> = values.iter().copied().filter(|&s| s > 0.0).collect();
        let rank = values.iter().filter(|s| **s != 0.0).count();
        let big_l = positive.first().copied().unwrap_or(0.0);
        let mu = positive.last().copied().unwrap_or(0.0);
        Spectrum {
            raw,
            values,
            vectors,
            zero_threshold,
            rank,
            mu,
            big_l,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues, descending, with those under the zero threshold set to 0.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    /// Eigenvalues exactly as returned by the solver.
    pub fn raw_eigenvalues(&self) -> &DVector<f64> {
        &self.raw
    }

    /// Orthonormal eigenvectors as columns.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Smallest nonzero eigenvalue (0 when the matrix is zero).
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Largest eigenvalue.
    pub fn big_l(&self) -> f64 {
        self.big_l
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn zero_threshold(&self) -> f64 {
        self.zero_threshold
    }

    pub fn is_zero_mode(&self, i: usize) -> bool {
        self.values[i] == 0.0
    }

    /// Coordinates `Vᵀ x` of a vector in the eigenbasis.
    pub fn to_eigenbasis(&self, x: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(x)
    }

    /// Maps eigenbasis coordinates back: `V c`.
    pub fn from_eigenbasis(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.vectors * c
    }

    /// `V diag(f(s_i)) Vᵀ` for an arbitrary scalar function of the
    /// (thresholded) eigenvalues.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let d: Vec<f64> = self.values.iter().map(|&s| f(s)).collect();
        self.sandwich(&d)
    }

    fn sandwich(&self, d: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= d[j];
        }
        scaled * self.vectors.transpose()
    }

    /// `V f(S) Vᵀ` for one of the standard spectral functions.
    pub fn apply(&self, f: SpectralFn) -> Result<DMatrix<f64>> {
        match f {
            SpectralFn::ExpScaled(c) => Ok(self.map(|s| (c * s).exp())),
            SpectralFn::Pinv => Ok(self.map(|s| if s == 0.0 { 0.0 } else { 1.0 / s })),
            SpectralFn::PsdSqrt => {
                let tol = PSD_TOLERANCE * self.raw.amax();
                if let Some(&worst) = self.raw.iter().find(|&&s| s < -tol) {
                    return Err(Error::NotPsd {
                        value: worst,
                        tolerance: tol,
                    });
                }
                Ok(self.map(|s| s.max(0.0).sqrt()))
            }
            SpectralFn::Power(q) => {
                if q.fract() != 0.0 {
                    if let Some(&worst) = self.values.iter().find(|&&s| s < 0.0) {
                        return Err(Error::NotPsd {
                            value: worst,
                            tolerance: 0.0,
                        });
                    }
                }
                Ok(self.map(|s| if s == 0.0 { 0.0 } else { s.powf(q) }))
            }
        }
    }

    /// `V S Vᵀ` from the stored (untruncated) eigenvalues.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.sandwich(self.raw.as_slice())
    }
}

/// Symmetric PSD square root of a matrix, clamping round-off negatives.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_eig(a, DEFAULT_ZERO_THRESHOLD)?.apply(SpectralFn::PsdSqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(p: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(p, rank, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    fn frob(a: &DMatrix<f64>) -> f64 {
        a.norm()
    }

    #[test]
    fn identity_spectrum() {
        let s = sym_eig(&DMatrix::identity(3, 3), DEFAULT_ZERO_THRESHOLD).unwrap();
        assert_eq!(s.eigenvalues().as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.rank(), 3);
        assert_eq!(s.mu(), 1.0);
        assert_eq!(s.big_l(), 1.0);
    }

    #[test]
    fn diagonal_with_zero() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 4.0]));
        let s = sym_eig(&a, DEFAULT_ZERO_THRESHOLD).unwrap();
        assert_eq!(s.eigenvalues().as_slice(), &[4.0, 0.0]);
        assert_eq!(s.rank(), 1);
        assert_eq!(s.mu(), 4.0);
        assert_eq!(s.big_l(), 4.0);
    }

    #[test]
    fn two_by_two_matches_quadratic_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, b, d): (f64, f64, f64) = (
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let m = DMatrix::from_row_slice(2, 2, &[a, b, b, d]);
        let s = sym_eig(&m, DEFAULT_ZERO_THRESHOLD).unwrap();
        let tr = a + d;
        let det = a * d - b * b;
        let disc = (tr * tr / 4.0 - det).sqrt();
        let (hi, lo) = (tr / 2.0 + disc, tr / 2.0 - disc);
        assert!((s.raw_eigenvalues()[0] - hi).abs() < 1e-10);
        assert!((s.raw_eigenvalues()[1] - lo).abs() < 1e-10);
    }

    #[test]
    fn rejects_nonsymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            sym_eig(&m, DEFAULT_ZERO_THRESHOLD),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let s = sym_eig(&random_psd(4, 4, 1), DEFAULT_ZERO_THRESHOLD).unwrap();
        let e = s.apply(SpectralFn::ExpScaled(0.0)).unwrap();
        assert!(frob(&(e - DMatrix::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn pinv_of_singular_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let s = sym_eig(&a, DEFAULT_ZERO_THRESHOLD).unwrap();
        let pinv = s.apply(SpectralFn::Pinv).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        assert!(frob(&(pinv - expected)) < 1e-15);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = random_psd(3, 3, 11);
        let r = psd_sqrt(&a).unwrap();
        assert!(frob(&(&r * &r - &a)) < 1e-8);
        assert!(frob(&(&r - r.transpose())) < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(psd_sqrt(&a), Err(Error::NotPsd { .. })));
        // round-off sized negatives are clamped
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-14]));
        let r = psd_sqrt(&b).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn power_minus_one_is_pinv() {
        let a = random_psd(5, 3, 4);
        let s = sym_eig(&a, DEFAULT_ZERO_THRESHOLD).unwrap();
        assert_eq!(s.rank(), 3);
        let p1 = s.apply(SpectralFn::Power(-1.0)).unwrap();
        let p2 = s.apply(SpectralFn::Pinv).unwrap();
        assert!(frob(&(p1 - p2)) < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn decomposition_invariants(p in 1usize..30, rank_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let rank = ((p as f64 * rank_frac).round() as usize).max(1);
            let a = random_psd(p, rank, seed);
            let s = sym_eig(&a, DEFAULT_ZERO_THRESHOLD).unwrap();
            let v = s.eigenvectors();
            prop_assert!(frob(&(v * v.transpose() - DMatrix::identity(p, p))) < 1e-10);
            prop_assert!(frob(&(s.reconstruct() - &a)) <= 1e-8 * frob(&a).max(1e-300));
            prop_assert!(s.rank() <= rank);
            prop_assert!(s.mu() > 0.0 && s.big_l() >= s.mu());
            for w in s.eigenvalues().as_slice().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn exp_semigroup(p in 1usize..12, a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()) {
            let s = sym_eig(&random_psd(p, p, seed), DEFAULT_ZERO_THRESHOLD).unwrap();
            let ea = s.apply(SpectralFn::ExpScaled(a)).unwrap();
            let eb = s.apply(SpectralFn::ExpScaled(b)).unwrap();
            let eab = s.apply(SpectralFn::ExpScaled(a + b)).unwrap();
            prop_assert!(frob(&(&ea * &eb - &eab)) <= 1e-12 * frob(&ea) * frob(&eb) + 1e-12 * frob(&eab));
        }

        #[test]
        fn moore_penrose_identities(p in 1usize..15, rank_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let rank = ((p as f64 * rank_frac).round() as usize).max(1);
            let a = random_psd(p, rank, seed);
            let s = sym_eig(&a, DEFAULT_ZERO_THRESHOLD).unwrap();
            let pinv = s.apply(SpectralFn::Pinv).unwrap();
            let scale_a = frob(&a).max(1.0);
            let scale_p = frob(&pinv).max(1.0);
            prop_assert!(frob(&(&pinv * &a * &pinv - &pinv)) <= 1e-8 * scale_p);
            prop_assert!(frob(&(&a * &pinv * &a - &a)) <= 1e-8 * scale_a);
        }

        #[test]
        fn psd_sqrt_property(p in 1usize..=50, seed in any::<u64>()) {
            let a = random_psd(p, p, seed);
            let r = psd_sqrt(&a).unwrap();
            prop_assert!(frob(&(&r * &r - &a)) <= 1e-8 * frob(&a).max(1.0));
        }
    }
}
