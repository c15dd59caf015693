//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sgflow::problem::{ProblemSpec, RegressionProblem};

pub fn gaussian(n: usize, p: usize, rho: f64, seed: u64) -> RegressionProblem {
    ProblemSpec::gaussian(n, p, rho, seed).build().unwrap()
}

/// Every ordered batch `(i_1, …, i_m)` drawn with replacement from `0..n`.
pub fn all_batches(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|b| {
                (0..n).map(move |i| {
                    let mut c = b.clone();
                    c.push(i);
                    c
                })
            })
            .collect();
    }
    out
}

/// `(1/m) Σ_{i∈I} x_i (y_i − x_iᵀβ)`.
pub fn batch_gradient(problem: &RegressionProblem, beta: &DVector<f64>, batch: &[usize]) -> DVector<f64> {
    let x = problem.x();
    let mut g = DVector::zeros(problem.p());
    for &i in batch {
        let row = x.row(i).transpose();
        let r = problem.y()[i] - row.dot(beta);
        g += row * r;
    }
    g / batch.len() as f64
}

/// Exact law of `k` SGD steps from zero by listing every batch sequence:
/// returns (mean, covariance).
pub fn enumerate_sgd(problem: &RegressionProblem, epsilon: f64, m: usize, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let batches = all_batches(problem.n(), m);
    let mut states = vec![DVector::zeros(problem.p())];
    for _ in 0..k {
        states = states
            .iter()
            .flat_map(|b| batches.iter().map(move |batch| b + batch_gradient(problem, b, batch) * epsilon))
            .collect();
    }
    let count = states.len() as f64;
    let mean = states.iter().fold(DVector::zeros(problem.p()), |acc, s| acc + s) / count;
    let mut cov = DMatrix::zeros(problem.p(), problem.p());
    for s in &states {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / count)
}

/// `ε · Cov_I(batch gradient)` at `beta`, by enumeration.
pub fn enumerate_diffusion(problem: &RegressionProblem, beta: &DVector<f64>, epsilon: f64, m: usize) -> DMatrix<f64> {
    let grads: Vec<DVector<f64>> = all_batches(problem.n(), m)
        .iter()
        .map(|b| batch_gradient(problem, beta, b))
        .collect();
    let count = grads.len() as f64;
    let mean = grads.iter().fold(DVector::zeros(problem.p()), |acc, g| acc + g) / count;
    let mut cov = DMatrix::zeros(problem.p(), problem.p());
    for g in &grads {
        let d = g - &mean;
        cov += &d * d.transpose();
    }
    cov * (epsilon / count)
}

/// Classical RK4 on `β' = Xᵀ(y − Xβ)/n` from zero.
pub fn rk4_gradient_flow(problem: &RegressionProblem, t: f64, steps: usize) -> DVector<f64> {
    let n = problem.n() as f64;
    let x = problem.x();
    let y = problem.y();
    let f = |b: &DVector<f64>| x.tr_mul(&(y - x * b)) / n;
    let h = t / steps as f64;
    let mut b = DVector::zeros(problem.p());
    for _ in 0..steps {
        let k1 = f(&b);
        let k2 = f(&(&b + &k1 * (h / 2.0)));
        let k3 = f(&(&b + &k2 * (h / 2.0)));
        let k4 = f(&(&b + &k3 * h));
        b += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    b
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Monte Carlo of `E_η stat(β̂(y))` over fresh responses.
pub fn mc_over_eta<F>(problem: &RegressionProblem, draws: usize, seed: u64, stat: F) -> (f64, f64)
where
    F: Fn(&RegressionProblem) -> f64,
{
    let values: Vec<f64> = (0..draws)
        .map(|d| stat(&problem.with_response(problem.resample_response(seed.wrapping_mul(1_000_003).wrapping_add(d as u64)))))
        .collect();
    mean_se(&values)
}

/// Symmetric square root of a PSD matrix via an independent Jacobi sweep
/// (no shared code with the library's eigensolver).
pub fn jacobi_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    let mut d = a.clone();
    let mut v = DMatrix::identity(p, p);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    off += d[(i, j)] * d[(i, j)];
                }
            }
        }
        if off < 1e-30 * d.norm_squared().max(1e-300) {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                if d[(i, j)].abs() < 1e-300 {
                    continue;
                }
                let theta = (d[(j, j)] - d[(i, i)]) / (2.0 * d[(i, j)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = DMatrix::identity(p, p);
                rot[(i, i)] = c;
                rot[(j, j)] = c;
                rot[(i, j)] = s;
                rot[(j, i)] = -s;
                d = rot.transpose() * &d * &rot;
                v = &v * &rot;
            }
        }
    }
    let root = DMatrix::from_diagonal(&DVector::from_fn(p, |i, _| d[(i, i)].max(0.0).sqrt()));
    &v * root * v.transpose()
}

/// Coupled Euler runs of the state-dependent flow with the uncentered
/// diffusion `(ε/(nm)) Xᵀ diag(r²) X` and of the constant-diffusion flow
/// `(ε/m) Σ̂`, driven by the same Gaussian increments. Returns
/// `E‖β(t) − β̃(t)‖²` and its standard error at step `k`.
pub fn coupled_gap(problem: &RegressionProblem, epsilon: f64, m: usize, k: usize, replicates: usize, seed: u64) -> (f64, f64) {
    let (n, p) = (problem.n() as f64, problem.p());
    let x = problem.x();
    let y = problem.y();
    let sigma_hat = x.tr_mul(x) / n;
    let const_root = jacobi_sqrt(&(&sigma_hat * (epsilon / m as f64)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps: Vec<f64> = (0..replicates)
        .map(|_| {
            let mut b = DVector::zeros(p);
            let mut c = DVector::zeros(p);
            for _ in 0..k {
                let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
                let r = y - x * &b;
                let mut weighted = x.clone();
                for (i, mut row) in weighted.row_iter_mut().enumerate() {
                    row *= r[i] * r[i];
                }
                let q = x.tr_mul(&weighted) * (epsilon / (n * m as f64));
                let root = jacobi_sqrt(&q);
                b = &b + x.tr_mul(&r) * (epsilon / n) + root * &z * epsilon.sqrt();
                let rc = y - x * &c;
                c = &c + x.tr_mul(&rc) * (epsilon / n) + &const_root * &z * epsilon.sqrt();
            }
            (b - c).norm_squared()
        })
        .collect();
    mean_se(&gaps)
}
