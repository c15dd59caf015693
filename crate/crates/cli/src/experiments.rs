//! The named experiments. Each one reads the resolved configuration and
//! writes its files through an [`Emitter`].

use nalgebra::DVector;
use serde::Serialize;

use sgflow::closed_form::{self, g_of_t, PathGrid, G_ARGMAX};
use sgflow::moments::{moment_match_report, sgd_risk_exact, EtaAveraging, MomentMatchOptions};
use sgflow::output::Table;
use sgflow::problem::{DesignSpec, ProblemDocument};
use sgflow::rng::derive_seed;
use sgflow::simulate::{
    const_cov_run, euler_sgf_run_with, sgd_run, simulate_ensemble, univariate_paths, EnsembleSpec, SgdConfig,
    Trajectory, TrajectoryKind, UnivariateSpec,
};
use sgflow::theory::{self, RiskCurve, RiskModel, StoppingTimes, TheoryConstants, View};
use sgflow::{Execution, ProblemSpec, RegressionProblem};

use crate::config::{Config, Experiment};
use crate::emit::Emitter;
use crate::error::{CliError, OpContext};

/// Runs one experiment and returns the names of the files written.
pub fn run(experiment: Experiment, config: &Config) -> Result<Vec<String>, CliError> {
    let mut em = Emitter::new(experiment, config)?;
    log::info!(
        "{experiment}: writing to {} (config {})",
        em.dir().display(),
        &em.metadata().config_hash[..12]
    );
    match experiment {
        Experiment::Paths => paths(config, &mut em)?,
        Experiment::Contour1d => contour1d(config, &mut em)?,
        Experiment::GCurve => g_curve(config, &mut em)?,
        Experiment::RiskCurves => risk_curves(config, &mut em)?,
        Experiment::CoeffError => coeff_error(config, &mut em)?,
        Experiment::VerifyMoments => verify_moments(config, &mut em)?,
        Experiment::Ratios => ratios(config, &mut em)?,
    }
    em.finish()
}

fn execution(config: &Config) -> Execution {
    if config.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Builds or loads the problem and records it as `problem.json`.
fn problem(config: &Config, em: &mut Emitter) -> Result<RegressionProblem, CliError> {
    let pc = &config.problem;
    let (problem, spec) = match &pc.document {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let doc = ProblemDocument::from_json(&text)
                .map_err(|e| CliError::Config(format!("problem.document {}: {e}", path.display())))?;
            (doc.into_problem().op("load problem")?, None)
        }
        None => {
            let spec = ProblemSpec {
                design: DesignSpec {
                    n: pc.n,
                    p: pc.p,
                    family: pc.family,
                    rho: pc.rho,
                    seed: pc.seed.unwrap_or(config.seed),
                },
                sigma: pc.sigma,
                snr: pc.snr,
                beta0_in_row_space: pc.beta0_in_row_space,
            };
            (spec.build().op("build problem")?, Some(spec))
        }
    };
    if config.sgd.m > problem.n() {
        return Err(CliError::Config(format!(
            "sgd.m: batch size {} exceeds n = {}",
            config.sgd.m,
            problem.n()
        )));
    }
    let doc = ProblemDocument::from_problem(&problem, spec.as_ref());
    em.raw("problem.json", &doc.to_json().op("serialize problem")?)?;
    Ok(problem)
}

fn epsilon(config: &Config, problem: &RegressionProblem) -> Result<f64, CliError> {
    match config.sgd.epsilon {
        Some(e) => Ok(e),
        None => theory::choose_epsilon(problem, config.sgd.m, config.sgd.safety_factor).op("choose_epsilon"),
    }
}

fn grid(config: &Config) -> Result<PathGrid, CliError> {
    let g = &config.grid;
    let grid = PathGrid::from_lambdas(g.lambda_min, g.lambda_max, g.points).op("path grid")?;
    match g.t_max {
        Some(t) => grid
            .truncated(t)
            .ok_or_else(|| CliError::Config(format!("grid.t_max = {t} leaves no grid points"))),
        None => Ok(grid),
    }
}

/// Iteration counts `k = round(t/ε)` for grid times, with the grid time each
/// was taken from; duplicates and `k = 0` are dropped.
fn aligned(times: &[f64], epsilon: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(times.len());
    for &t in times {
        let k = (t / epsilon).round() as usize;
        if k == 0 || out.last().is_some_and(|(prev, _)| *prev == k) {
            continue;
        }
        out.push((k, t));
    }
    out
}

/// `count` grid times, evenly spread over the (log-spaced) grid.
fn subsample(times: &[f64], count: usize) -> Vec<f64> {
    if count >= times.len() {
        return times.to_vec();
    }
    if count == 1 {
        return vec![times[times.len() - 1]];
    }
    let last = (times.len() - 1) as f64;
    let mut picked: Vec<f64> = (0..count)
        .map(|i| times[(i as f64 * last / (count - 1) as f64).round() as usize])
        .collect();
    picked.dedup();
    picked
}

/// Adds the `k` and `t_mismatch = kε − t_grid` columns.
fn push_alignment(curve: &mut RiskCurve, ks: &[(usize, f64)], epsilon: f64) -> Result<(), CliError> {
    curve.push_extra("k", ks.iter().map(|(k, _)| *k as f64).collect()).op("risk curve")?;
    curve
        .push_extra("t_mismatch", ks.iter().map(|(k, t)| *k as f64 * epsilon - t).collect())
        .op("risk curve")
}

fn coefficient_table(first: (&str, Vec<f64>), second: Option<(&str, Vec<f64>)>, betas: &[DVector<f64>]) -> Table {
    let mut table = Table::new().real(first.0, first.1);
    if let Some((name, values)) = second {
        table.push_real(name, values);
    }
    let p = betas.first().map_or(0, |b| b.len());
    for j in 0..p {
        table.push_real(format!("beta_{}", j + 1), betas.iter().map(|b| b[j]).collect());
    }
    table
}

#[derive(Serialize)]
struct PathsSummary {
    n: usize,
    p: usize,
    m: usize,
    epsilon: f64,
    k_max: usize,
}

fn paths(config: &Config, em: &mut Emitter) -> Result<(), CliError> {
    let problem = problem(config, em)?;
    let eps = epsilon(config, &problem)?;
    let grid = grid(config)?;
    let times = grid.times();
    let ridge = times
        .iter()
        .map(|t| closed_form::ridge(&problem, 1.0 / t))
        .collect::<sgflow::Result<Vec<_>>>()
        .op("ridge")?;
    let gf = times
        .iter()
        .map(|&t| closed_form::gradient_flow(&problem, t))
        .collect::<sgflow::Result<Vec<_>>>()
        .op("gradient_flow")?;
    em.csv(
        "ridge_path.csv",
        &coefficient_table(("t", times.to_vec()), Some(("lambda", grid.lambdas())), &ridge),
    )?;
    em.csv("gf_path.csv", &coefficient_table(("t", times.to_vec()), None, &gf))?;

    let t_end = *times.last().expect("grid is non-empty");
    let k_max = config.sgd.k_max.unwrap_or((t_end / eps).round() as usize).max(1);
    let m = config.sgd.m;
    let sgd = sgd_run(&problem, &SgdConfig::new(eps, m, k_max, derive_seed(config.seed, 1))).op("sgd_run")?;
    em.csv("sgd_path.csv", &sgd.to_table())?;
    let sgf = euler_sgf_run_with(
        &problem,
        &SgdConfig::new(eps, m, k_max, derive_seed(config.seed, 2)),
        config.mc.root,
    )
    .op("euler_sgf_run")?;
    em.csv("sgf_path.csv", &sgf.to_table())?;
    em.json(
        "paths.json",
        &PathsSummary {
            n: problem.n(),
            p: problem.p(),
            m,
            epsilon: eps,
            k_max,
        },
    )
}

/// Long-format table of several trajectories: replicate, iter, t, β.
fn trajectories_table(runs: &[Trajectory]) -> Table {
    let mut replicate = Vec::new();
    let mut iter = Vec::new();
    let mut t = Vec::new();
    let p = runs.first().map_or(0, |r| r.states().ncols());
    let mut betas = vec![Vec::new(); p];
    for (r, run) in runs.iter().enumerate() {
        let eps = run.config().epsilon;
        for (k, row) in run.states().row_iter().enumerate() {
            replicate.push(r as u64);
            iter.push(k as u64);
            t.push(k as f64 * eps);
            for (j, col) in betas.iter_mut().enumerate() {
                col.push(row[j]);
            }
        }
    }
    let mut table = Table::new().int("replicate", replicate).int("iter", iter).real("t_effective", t);
    for (j, col) in betas.into_iter().enumerate() {
        table.push_real(format!("beta_{}", j + 1), col);
    }
    table
}

#[derive(Serialize)]
struct ContourSummary {
    epsilon: f64,
    m: usize,
    k_max: usize,
    least_squares: Vec<f64>,
    loss_at_least_squares: f64,
    univariate_g: f64,
    univariate_theta: f64,
    univariate_k_max: usize,
    univariate_replicates: usize,
}

fn contour1d(config: &Config, em: &mut Emitter) -> Result<(), CliError> {
    let problem = problem(config, em)?;
    if problem.p() != 2 {
        return Err(CliError::Config(format!("contour1d needs p = 2, got {}", problem.p())));
    }
    let eps = epsilon(config, &problem)?;
    let m = config.sgd.m;
    let k_max = config.sgd.k_max.unwrap_or(1000).max(1);
    let run_config = |tag: u64| SgdConfig::new(eps, m, k_max, derive_seed(config.seed, tag));
    let count = config.mc.keep_paths.max(1) as u64;
    let mut sgd = Vec::new();
    let mut sgf = Vec::new();
    let mut constant = Vec::new();
    for r in 0..count {
        sgd.push(sgd_run(&problem, &run_config(100 + r)).op("sgd_run")?);
        sgf.push(euler_sgf_run_with(&problem, &run_config(200 + r), config.mc.root).op("euler_sgf_run")?);
        constant.push(const_cov_run(&problem, &run_config(300 + r)).op("const_cov_run")?);
    }
    em.csv("sgd_trajectories.csv", &trajectories_table(&sgd))?;
    em.csv("sgf_trajectories.csv", &trajectories_table(&sgf))?;
    em.csv("const_trajectories.csv", &trajectories_table(&constant))?;

    let ks: Vec<f64> = (0..=k_max).map(|k| k as f64 * eps).collect();
    let gf = ks
        .iter()
        .map(|&t| closed_form::gradient_flow(&problem, t))
        .collect::<sgflow::Result<Vec<_>>>()
        .op("gradient_flow")?;
    em.csv("gf_path.csv", &coefficient_table(("t", ks), None, &gf))?;

    let ls = closed_form::min_norm(&problem).op("min_norm")?;
    let loss = |b: &DVector<f64>| (problem.y() - problem.x() * b).norm_squared() / (2.0 * problem.n() as f64);
    let mut lo = [ls[0].min(0.0), ls[1].min(0.0)];
    let mut hi = [ls[0].max(0.0), ls[1].max(0.0)];
    for run in sgd.iter().chain(&sgf).chain(&constant) {
        for row in run.states().row_iter() {
            for j in 0..2 {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
    }
    let side = 81;
    let axis = |j: usize| -> Vec<f64> {
        let pad = (0.1 * (hi[j] - lo[j])).max(0.1);
        let (a, b) = (lo[j] - pad, hi[j] + pad);
        (0..side).map(|i| a + (b - a) * i as f64 / (side - 1) as f64).collect()
    };
    let (ax, ay) = (axis(0), axis(1));
    let (mut gx, mut gy, mut gl) = (Vec::new(), Vec::new(), Vec::new());
    for &b1 in &ax {
        for &b2 in &ay {
            gx.push(b1);
            gy.push(b2);
            gl.push(loss(&DVector::from_vec(vec![b1, b2])));
        }
    }
    em.csv("loss_grid.csv", &Table::new().real("beta_1", gx).real("beta_2", gy).real("loss", gl))?;

    let uc = &config.univariate;
    let g = uc.x.iter().map(|v| v * v).sum::<f64>() / uc.x.len().max(1) as f64;
    let spec = UnivariateSpec {
        x: uc.x.clone(),
        epsilon: uc.epsilon,
        m: uc.m,
        beta_init: uc.beta_init,
        k_max: uc.k_max.unwrap_or((20.0 / (g * uc.epsilon)).round() as usize),
        seed: derive_seed(config.seed, 4),
    };
    let uni = univariate_paths(&spec, uc.replicates, config.mc.keep_paths, execution(config)).op("univariate_paths")?;
    let mut table = Table::new()
        .int("iter", (0..=spec.k_max as u64).collect())
        .real("t", (0..=spec.k_max).map(|k| k as f64 * spec.epsilon).collect());
    for (name, summary) in [("sgd", &uni.sgd), ("gbm", &uni.gbm), ("ou", &uni.ou)] {
        for (r, path) in summary.paths.iter().enumerate() {
            table.push_real(format!("{name}_{}", r + 1), path.clone());
        }
    }
    em.csv("univariate_paths.csv", &table)?;
    let limit = spec.epsilon / (2.0 * spec.m as f64);
    em.csv(
        "terminal_variance.csv",
        &Table::new()
            .text("process", vec!["sgd".into(), "gbm".into(), "ou".into()])
            .real("terminal_mean", vec![uni.sgd.terminal_mean, uni.gbm.terminal_mean, uni.ou.terminal_mean])
            .real(
                "terminal_variance",
                vec![uni.sgd.terminal_variance, uni.gbm.terminal_variance, uni.ou.terminal_variance],
            )
            .real("limit_variance", vec![0.0, 0.0, limit]),
    )?;
    em.json(
        "contour1d.json",
        &ContourSummary {
            epsilon: eps,
            m,
            k_max,
            least_squares: ls.iter().copied().collect(),
            loss_at_least_squares: loss(&ls),
            univariate_g: uni.g,
            univariate_theta: uni.theta,
            univariate_k_max: spec.k_max,
            univariate_replicates: uni.replicates,
        },
    )
}

#[derive(Serialize)]
struct GCurveSummary {
    mu: f64,
    big_l: f64,
    max: f64,
    argmax: f64,
    band: [f64; 2],
}

fn g_curve(config: &Config, em: &mut Emitter) -> Result<(), CliError> {
    let gc = &config.g_curve;
    let grid = PathGrid::log_spaced(gc.t_min, gc.t_max, gc.points).op("g grid")?;
    let g = grid
        .times()
        .iter()
        .map(|&t| g_of_t(t, gc.mu, gc.big_l))
        .collect::<sgflow::Result<Vec<_>>>()
        .op("g_of_t")?;
    let (argmax, max) = grid
        .times()
        .iter()
        .zip(&g)
        .fold((f64::NAN, f64::NEG_INFINITY), |best, (&t, &v)| if v > best.1 { (t, v) } else { best });
    em.csv("g_curve.csv", &Table::new().real("t", grid.times().to_vec()).real("g", g))?;
    em.json(
        "g_curve.json",
        &GCurveSummary {
            mu: gc.mu,
            big_l: gc.big_l,
            max,
            argmax,
            band: [G_ARGMAX / gc.big_l, G_ARGMAX / gc.mu],
        },
    )
}

/// Time after which every gradient-descent mode has converged to within
/// 1e-6 of its limit.
fn sgd_time_cap(problem: &RegressionProblem) -> f64 {
    1e6f64.ln() / (2.0 * problem.spectrum().mu())
}

/// Grid-aligned iteration counts for the exact SGD risk, capped by
/// `sgd.k_max` or the convergence time.
fn sgd_checkpoints(config: &Config, problem: &RegressionProblem, times: &[f64], eps: f64) -> Vec<(usize, f64)> {
    let cap = config
        .sgd
        .k_max
        .unwrap_or((sgd_time_cap(problem) / eps).round() as usize);
    aligned(times, eps).into_iter().filter(|(k, _)| *k <= cap).collect()
}

fn sgd_curve(
    config: &Config,
    problem: &RegressionProblem,
    ks: &[(usize, f64)],
    eps: f64,
) -> Result<Option<RiskCurve>, CliError> {
    let Some(&(k_last, _)) = ks.last() else {
        return Ok(None);
    };
    let sgd_config = SgdConfig::new(eps, config.sgd.m, k_last, derive_seed(config.seed, 5));
    let checkpoints: Vec<usize> = ks.iter().map(|(k, _)| *k).collect();
    let mut curve = sgd_risk_exact(problem, &sgd_config, &checkpoints, EtaAveraging::Analytic, execution(config))
        .op("sgd_risk_exact")?;
    push_alignment(&mut curve, ks, eps)?;
    Ok(Some(curve))
}

#[derive(Serialize)]
struct StoppingReport<'a> {
    epsilon: f64,
    in_sample: bool,
    constants: &'a TheoryConstants,
    curves: Vec<StoppingTimes>,
}

fn risk_curves(config: &Config, em: &mut Emitter) -> Result<(), CliError> {
    let problem = problem(config, em)?;
    let eps = epsilon(config, &problem)?;
    let m = config.sgd.m;
    let grid = grid(config)?;
    let times = grid.times();
    let in_sample = config.in_sample;
    let model = RiskModel::new(&problem);
    let constants = theory::loss_constants(&problem, eps, m, problem.y()).op("loss_constants")?;

    let mut curves = vec![
        theory::ridge_curve(&model, times, in_sample).op("ridge risk")?,
        theory::gf_curve(&model, times, in_sample).op("gradient flow risk")?,
    ];
    let gd_ks = aligned(times, eps);
    let ks: Vec<u64> = gd_ks.iter().map(|(k, _)| *k as u64).collect();
    let mut gd = theory::gd_curve(&model, eps, &ks, in_sample).op("gradient descent risk")?;
    push_alignment(&mut gd, &gd_ks, eps)?;
    curves.push(gd);
    if in_sample {
        log::warn!("exact SGD risk is out-of-sample only; skipping sgd_exact for in-sample curves");
    } else if let Some(sgd) = sgd_curve(config, &problem, &sgd_checkpoints(config, &problem, times, eps), eps)? {
        curves.push(sgd);
    }
    curves.push(theory::bound_curve(&model, &constants, problem.spectrum(), times, in_sample).op("sgf risk bound")?);

    let mut stopping = Vec::with_capacity(curves.len());
    for curve in &curves {
        em.csv(&format!("{}.csv", curve.estimator()), &curve.to_table())?;
        stopping.push(theory::optimal_stopping(curve).op("optimal_stopping")?);
    }
    em.json(
        "stopping_times.json",
        &StoppingReport {
            epsilon: eps,
            in_sample,
            constants: &constants,
            curves: stopping,
        },
    )
}

#[derive(Serialize)]
struct CoeffSummary {
    epsilon: f64,
    eta_draws: usize,
    replicates: usize,
    /// Every point satisfies bound ≥ MC − 3 SE.
    dominated: bool,
    /// bound − MC is nondecreasing in t.
    gap_monotone: bool,
    max_bound_over_mc: f64,
}

fn coeff_error(config: &Config, em: &mut Emitter) -> Result<(), CliError> {
    let problem = problem(config, em)?;
    let eps = epsilon(config, &problem)?;
    let m = config.sgd.m;
    let model = RiskModel::new(&problem);
    let constants = theory::loss_constants(&problem, eps, m, problem.y()).op("loss_constants")?;
    let points: Vec<(usize, f64)> = match &config.mc.checkpoints {
        Some(ks) => ks.iter().filter(|&&k| k > 0).map(|&k| (k, k as f64 * eps)).collect(),
        None => aligned(&subsample(grid(config)?.times(), config.mc.checkpoint_count), eps),
    };
    if points.is_empty() {
        return Err(CliError::Config("coeff_error: no positive iteration counts on the grid".into()));
    }
    let ks: Vec<usize> = points.iter().map(|(k, _)| *k).collect();
    let k_max = *ks.last().expect("non-empty");
    let (draws, replicates) = (config.mc.eta_draws, config.mc.replicates);

    let mut per_draw = vec![Vec::with_capacity(draws); ks.len()];
    for d in 0..draws {
        let drawn = problem.with_response(problem.resample_response(derive_seed(config.seed, 1000 + d as u64)));
        let sgd_config = SgdConfig::new(eps, m, k_max, derive_seed(config.seed, 2000 + d as u64));
        let spec = EnsembleSpec::new(TrajectoryKind::EulerSgf, replicates, ks.clone())
            .with_root(config.mc.root)
            .with_execution(execution(config))
            .antithetic(config.mc.antithetic);
        let ensemble = simulate_ensemble(&drawn, &sgd_config, &spec).op("simulate_ensemble")?;
        for (c, &k) in ks.iter().enumerate() {
            let ridge = closed_form::ridge(&drawn, 1.0 / (k as f64 * eps)).op("ridge")?;
            let total: f64 = ensemble
                .samples(c)
                .row_iter()
                .map(|r| (r.transpose() - &ridge).norm_squared())
                .sum();
            per_draw[c].push(total / replicates as f64);
        }
        log::debug!("coeff_error: eta draw {}/{draws} done", d + 1);
    }
    let mut t = Vec::new();
    let (mut bound, mut mc, mut se) = (Vec::new(), Vec::new(), Vec::new());
    for (c, &k) in ks.iter().enumerate() {
        let tk = k as f64 * eps;
        t.push(tk);
        bound.push(
            theory::coefficient_error_bound(&model, &constants, problem.spectrum(), tk, View::Expected)
                .op("coefficient_error_bound")?,
        );
        let values = &per_draw[c];
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
        mc.push(mean);
        se.push((var / r).sqrt());
    }
    let gaps: Vec<f64> = bound.iter().zip(&mc).map(|(b, e)| b - e).collect();
    let summary = CoeffSummary {
        epsilon: eps,
        eta_draws: draws,
        replicates,
        dominated: gaps.iter().zip(&se).all(|(g, s)| *g >= -3.0 * s),
        gap_monotone: gaps.windows(2).all(|w| w[1] >= w[0]),
        max_bound_over_mc: bound.iter().zip(&mc).map(|(b, e)| b / e).fold(0.0, f64::max),
    };
    em.csv(
        "coeff_error.csv",
        &Table::new()
            .int("k", ks.iter().map(|&k| k as u64).collect())
            .real("t", t.clone())
            .real("lambda", t.iter().map(|x| 1.0 / x).collect())
            .real("t_mismatch", points.iter().map(|(k, tg)| *k as f64 * eps - tg).collect())
            .real("bound", bound)
            .real("mc_error", mc)
            .real("mc_se", se),
    )?;
    em.json("coeff_error.json", &summary)
}

fn verify_moments(config: &Config, em: &mut Emitter) -> Result<(), CliError> {
    let problem = problem(config, em)?;
    let eps = epsilon(config, &problem)?;
    let ks: Vec<usize> = match &config.mc.checkpoints {
        Some(ks) => ks.clone(),
        None => {
            let k_max = config.sgd.k_max.unwrap_or(500).max(1);
            let times = PathGrid::log_spaced(1.0, k_max.max(2) as f64, config.mc.checkpoint_count.max(2))
                .op("checkpoint grid")?;
            aligned(times.times(), 1.0).into_iter().map(|(k, _)| k).collect()
        }
    };
    let k_max = *ks.last().expect("checkpoints are non-empty");
    let sgd_config = SgdConfig::new(eps, config.sgd.m, k_max, derive_seed(config.seed, 6));
    let options = MomentMatchOptions {
        z_threshold: config.mc.z_threshold,
        root: config.mc.root,
        antithetic: config.mc.antithetic,
        execution: execution(config),
    };
    let report = moment_match_report(&problem, &sgd_config, &ks, config.mc.replicates, &options)
        .op("moment_match_report")?;
    if !report.pass {
        log::warn!("moment matching failed at z = {}", report.z_threshold);
    }
    em.json("verify_moments.json", &report)
}

#[derive(Serialize)]
struct RatioReport {
    epsilon: f64,
    /// Max over the grid of the ridge-form bound over ridge risk.
    max_bound_ridge_ratio: f64,
    /// Same with the gradient-flow form of the bound.
    max_bound_ridge_ratio_gf_form: f64,
    /// Max over the grid of exact SGD risk over ridge risk at `λ = 1/(kε)`.
    max_sgd_ridge_ratio: Option<f64>,
    /// SGD risk at its bias/variance balance over ridge risk at its own.
    optimal_risk_ratio: Option<f64>,
    /// Bound at its balance over ridge at its balance.
    bound_optimal_risk_ratio: f64,
    stopping: Vec<StoppingTimes>,
}

fn max_ratio(num: &[f64], den: &[f64]) -> f64 {
    num.iter().zip(den).map(|(a, b)| a / b).fold(0.0, f64::max)
}

fn ratios(config: &Config, em: &mut Emitter) -> Result<(), CliError> {
    let problem = problem(config, em)?;
    let eps = epsilon(config, &problem)?;
    let grid = grid(config)?;
    let times = grid.times();
    let model = RiskModel::new(&problem);
    let constants = theory::loss_constants(&problem, eps, config.sgd.m, problem.y()).op("loss_constants")?;
    let ridge = theory::ridge_curve(&model, times, config.in_sample).op("ridge risk")?;
    let bound = theory::bound_curve(&model, &constants, problem.spectrum(), times, config.in_sample)
        .op("sgf risk bound")?;
    let ridge_stop = theory::optimal_stopping(&ridge).op("optimal_stopping")?;
    let bound_stop = theory::optimal_stopping(&bound).op("optimal_stopping")?;
    let gf_total = bound.extra("gf_total").expect("bound curve carries gf_total");

    let mut stopping = vec![ridge_stop.clone(), bound_stop.clone()];
    let (mut max_sgd, mut optimal) = (None, None);
    if config.in_sample {
        log::warn!("exact SGD risk is out-of-sample only; SGD ratios are omitted");
    } else {
        let ks = sgd_checkpoints(config, &problem, times, eps);
        if let Some(sgd) = sgd_curve(config, &problem, &ks, eps)? {
            let ridge_at = sgd
                .t()
                .iter()
                .map(|&t| model.ridge(1.0 / t).map(|bv| bv.risk()))
                .collect::<sgflow::Result<Vec<_>>>()
                .op("ridge risk")?;
            max_sgd = Some(max_ratio(sgd.risk(), &ridge_at));
            let sgd_stop = theory::optimal_stopping(&sgd).op("optimal_stopping")?;
            optimal = Some(sgd_stop.risk_at_balance / ridge_stop.risk_at_balance);
            stopping.push(sgd_stop);
        }
    }
    em.json(
        "ratios.json",
        &RatioReport {
            epsilon: eps,
            max_bound_ridge_ratio: max_ratio(bound.risk(), ridge.risk()),
            max_bound_ridge_ratio_gf_form: max_ratio(gf_total, ridge.risk()),
            max_sgd_ridge_ratio: max_sgd,
            optimal_risk_ratio: optimal,
            bound_optimal_risk_ratio: bound_stop.risk_at_balance / ridge_stop.risk_at_balance,
            stopping,
        },
    )
}
