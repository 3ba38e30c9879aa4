//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use svc_sdm::data::{CovariateSet, Dataset, DetectionData, SpatialCoordinates};
use svc_sdm::gp::{build_nngp, krige_predict, nngp_log_density, nngp_simulate, SpatialParams};
use svc_sdm::mcmc::run_chain;
use svc_sdm::model::logistic;
use svc_sdm::outputs::{auc, rhat, waic, TrendCategory};
use svc_sdm::sim::{run_experiment, Experiment, Scenario, ScenarioConfig};
use svc_sdm::spec::{
    validate_spec, DetectionTerm, FunctionalForm, McmcConfig, OccupancyModelSpec, OccurrenceTerm,
    PriorSpec, YearEffect,
};

const NNGP_TOL: f64 = 1e-8;
const COV_SE: f64 = 3.0;
const SBC_ALPHA: f64 = 0.01;
const SBC_REPS: usize = 200;
const GRID_TOL: f64 = 0.02;
const COVERAGE_MIN: usize = 8;
const RMSE_RATIO_MAX: f64 = 2.0;
const DELTA_WAIC: f64 = 2.0;
const W1_SD_FRACTION: f64 = 0.25;
const DIAG_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(o: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    let ok = elapsed <= budget;
    outcome(
        o.pass && ok,
        format!("{}; {:.1}s (budget {}s)", o.detail, elapsed.as_secs_f64(), budget.as_secs()),
    )
}

fn dense_log_density(points: &[[f64; 2]], w: &[f64], p: SpatialParams) -> f64 {
    let n = points.len();
    let cov = DMatrix::from_fn(n, n, |a, b| {
        let d = ((points[a][0] - points[b][0]).powi(2) + (points[a][1] - points[b][1]).powi(2)).sqrt();
        p.sigma_sq * (-p.phi * d).exp()
    });
    let chol = cov.cholesky().expect("dense covariance is positive definite");
    let wv = DVector::from_column_slice(w);
    let sol = chol.solve(&wv);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + wv.dot(&sol))
}

fn dense_conditional(points: &[[f64; 2]], w: &[f64], at: [f64; 2], p: SpatialParams) -> (f64, f64) {
    let n = points.len();
    let k = |a: [f64; 2], b: [f64; 2]| {
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        p.sigma_sq * (-p.phi * d).exp()
    };
    let cov = DMatrix::from_fn(n, n, |a, b| k(points[a], points[b]));
    let c = DVector::from_fn(n, |a, _| k(points[a], at));
    let chol = cov.cholesky().expect("dense covariance is positive definite");
    let sol = chol.solve(&c);
    let mean = sol.dot(&DVector::from_column_slice(w));
    (mean, p.sigma_sq - c.dot(&sol))
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_density: f64 = 0.0;
    let mut worst_krige: f64 = 0.0;
    let mut cov_misses = 0;
    let mut cov_checks = 0;
    for _ in 0..20 {
        let j = rng.random_range(5..=50);
        let points: Vec<[f64; 2]> = (0..j).map(|_| [rng.random(), rng.random()]).collect();
        let params = SpatialParams::new(rng.random_range(0.5..2.0), rng.random_range(1.0..10.0)).unwrap();
        let s = build_nngp(&points, j - 1, params).unwrap();
        let w: Vec<f64> = (0..j).map(|_| StandardNormal.sample(&mut rng)).collect();
        let diff = (nngp_log_density(&w, &s).unwrap() - dense_log_density(&points, &w, params)).abs();
        worst_density = worst_density.max(diff);

        let new: Vec<[f64; 2]> = (0..5).map(|_| [rng.random(), rng.random()]).collect();
        let pred = krige_predict(&new, &w, &points, j, params).unwrap();
        for (p, &at) in pred.iter().zip(&new) {
            let (m, v) = dense_conditional(&points, &w, at, params);
            worst_krige = worst_krige.max((p.mean - m).abs()).max((p.var - v).abs());
        }

        let n_draws = 20_000;
        let pairs = [(0, 0), (0, 1), (j - 1, j - 1), (j / 2, j - 1), (1, j / 2)];
        let mut sums = [0.0f64; 5];
        for _ in 0..n_draws {
            let d = nngp_simulate(&s, &mut rng).values;
            for (acc, &(a, b)) in sums.iter_mut().zip(&pairs) {
                *acc += d[a] * d[b];
            }
        }
        for (acc, &(a, b)) in sums.iter().zip(&pairs) {
            let cab = |x: usize, y: usize| {
                let d = ((points[x][0] - points[y][0]).powi(2) + (points[x][1] - points[y][1]).powi(2)).sqrt();
                params.sigma_sq * (-params.phi * d).exp()
            };
            let truth = cab(a, b);
            let se = ((cab(a, a) * cab(b, b) + truth * truth) / n_draws as f64).sqrt();
            cov_checks += 1;
            if (acc / n_draws as f64 - truth).abs() > COV_SE * se {
                cov_misses += 1;
            }
        }
    }
    outcome(
        worst_density <= NNGP_TOL && worst_krige <= NNGP_TOL && cov_misses == 0,
        format!(
            "max |log-density diff| {worst_density:.2e}, max kriging diff {worst_krige:.2e}, \
             covariance entries outside {COV_SE} SE: {cov_misses}/{cov_checks}"
        ),
    )
}

fn intercept_linear_spec() -> OccupancyModelSpec {
    OccupancyModelSpec {
        occurrence: vec![
            OccurrenceTerm::Intercept,
            OccurrenceTerm::Linear {
                covariate: "x".into(),
            },
        ],
        spatial_intercept: false,
        year_effect: YearEffect::None,
        detection: vec![DetectionTerm::Intercept],
        priors: PriorSpec::default(),
    }
}

fn chi_square_uniform(ranks: &[usize], bins: usize, per_bin: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &r in ranks {
        counts[r / per_bin] += 1;
    }
    let expected = ranks.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

fn criterion_2() -> Outcome {
    let (j, k) = (50, 4);
    let draws = 99;
    let config = McmcConfig {
        n_chains: 1,
        n_iterations: 500 + draws * 10,
        n_burn: 500,
        n_thin: 10,
        ..McmcConfig::default()
    };
    let prior = PriorSpec::default();
    let beta_prior = Normal::new(prior.beta.mean, prior.beta.var.sqrt()).unwrap();
    let alpha_prior = Normal::new(prior.alpha.mean, prior.alpha.var.sqrt()).unwrap();
    let mut ranks = [Vec::new(), Vec::new(), Vec::new()];
    for rep in 0..SBC_REPS {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        rng.set_stream(rep as u64);
        let truth = [
            beta_prior.sample(&mut rng),
            beta_prior.sample(&mut rng),
            alpha_prior.sample(&mut rng),
        ];
        let points: Vec<[f64; 2]> = (0..j).map(|_| [rng.random(), rng.random()]).collect();
        let x: Vec<f64> = (0..j).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = logistic(truth[2]);
        let mut y = Vec::with_capacity(j * k);
        for xi in &x {
            let z = rng.random::<f64>() < logistic(truth[0] + truth[1] * xi);
            for _ in 0..k {
                y.push(Some(u8::from(z && rng.random::<f64>() < p)));
            }
        }
        let data = DetectionData::new(SpatialCoordinates::from_points(points).unwrap(), vec![1], k, y).unwrap();
        let mut covariates = CovariateSet::for_data(&data);
        covariates.insert_occurrence_dense("x", &x).unwrap();
        let ds = Dataset { data, covariates };
        let spec = validate_spec(&intercept_linear_spec(), &ds.data, &ds.covariates, 5).unwrap();
        let chain = run_chain(&ds, &spec, &McmcConfig { seed: rep as u64, ..config.clone() }, 0).unwrap();
        for (r, name) in ranks.iter_mut().zip(["beta[(Intercept)]", "beta[x]", "alpha[(Intercept)]"]) {
            let d = chain.param_draws(name).unwrap();
            let idx = ["beta[(Intercept)]", "beta[x]", "alpha[(Intercept)]"]
                .iter()
                .position(|n| *n == name)
                .unwrap();
            r.push(d.iter().filter(|&&v| v < truth[idx]).count());
        }
    }
    let pvals: Vec<f64> = ranks.iter().map(|r| chi_square_uniform(r, 10, 10)).collect();
    outcome(
        pvals.iter().all(|&p| p >= SBC_ALPHA),
        format!(
            "{SBC_REPS} replications, rank chi-square p: beta0 {:.3}, beta1 {:.3}, alpha0 {:.3} (reject below {SBC_ALPHA})",
            pvals[0], pvals[1], pvals[2]
        ),
    )
}

fn grid_median(marginal: &[f64], grid: &[f64]) -> f64 {
    let total: f64 = marginal.iter().sum();
    let mut acc = 0.0;
    for (i, m) in marginal.iter().enumerate() {
        if acc + m >= total / 2.0 {
            // Linear interpolation within the cell.
            let frac = (total / 2.0 - acc) / m;
            let h = grid[1] - grid[0];
            return grid[i] - h / 2.0 + frac * h;
        }
        acc += m;
    }
    grid[grid.len() - 1]
}

fn criterion_3() -> Outcome {
    let (j, k) = (200, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let points: Vec<[f64; 2]> = (0..j).map(|_| [rng.random(), rng.random()]).collect();
    let mut y = Vec::new();
    let mut by_count = vec![0usize; k + 1];
    for _ in 0..j {
        let z = rng.random::<f64>() < 0.6;
        let mut d = 0;
        for _ in 0..k {
            let v = z && rng.random::<f64>() < 0.62;
            d += usize::from(v);
            y.push(Some(u8::from(v)));
        }
        by_count[d] += 1;
    }
    let data = DetectionData::new(SpatialCoordinates::from_points(points).unwrap(), vec![1], k, y).unwrap();
    let covariates = CovariateSet::for_data(&data);
    let ds = Dataset { data, covariates };
    let spec = OccupancyModelSpec {
        occurrence: vec![OccurrenceTerm::Intercept],
        spatial_intercept: false,
        year_effect: YearEffect::None,
        detection: vec![DetectionTerm::Intercept],
        priors: PriorSpec::default(),
    };
    let spec = validate_spec(&spec, &ds.data, &ds.covariates, 5).unwrap();
    let config = McmcConfig::default();
    let mut beta = Vec::new();
    let mut alpha = Vec::new();
    for c in 0..config.n_chains {
        let chain = run_chain(&ds, &spec, &config, c).unwrap();
        beta.extend(chain.param_draws("beta[(Intercept)]").unwrap());
        alpha.extend(chain.param_draws("alpha[(Intercept)]").unwrap());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let psi_mcmc = logistic(median(&mut beta));
    let p_mcmc = logistic(median(&mut alpha));

    // Two-parameter grid over (beta0, alpha0) with the same normal priors.
    let prior = PriorSpec::default();
    let n = 1201;
    let grid: Vec<f64> = (0..n).map(|i| -6.0 + 12.0 * i as f64 / (n - 1) as f64).collect();
    let mut logpost = vec![0.0; n * n];
    for (ib, &b) in grid.iter().enumerate() {
        for (ia, &a) in grid.iter().enumerate() {
            let (psi, p) = (logistic(b), logistic(a));
            let mut l = -(b - prior.beta.mean).powi(2) / (2.0 * prior.beta.var)
                - (a - prior.alpha.mean).powi(2) / (2.0 * prior.alpha.var);
            for (d, &count) in by_count.iter().enumerate() {
                if count > 0 {
                    let mut li = psi * p.powi(d as i32) * (1.0 - p).powi((k - d) as i32);
                    if d == 0 {
                        li += 1.0 - psi;
                    }
                    l += count as f64 * li.ln();
                }
            }
            logpost[ib * n + ia] = l;
        }
    }
    let mx = logpost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mb = vec![0.0; n];
    let mut ma = vec![0.0; n];
    for ib in 0..n {
        for ia in 0..n {
            let w = (logpost[ib * n + ia] - mx).exp();
            mb[ib] += w;
            ma[ia] += w;
        }
    }
    let psi_grid = logistic(grid_median(&mb, &grid));
    let p_grid = logistic(grid_median(&ma, &grid));
    let (dpsi, dp) = ((psi_mcmc - psi_grid).abs(), (p_mcmc - p_grid).abs());
    outcome(
        dpsi <= GRID_TOL && dp <= GRID_TOL,
        format!(
            "median psi {psi_mcmc:.4} vs grid {psi_grid:.4} (|d| {dpsi:.4}), median p {p_mcmc:.4} vs grid {p_grid:.4} (|d| {dp:.4}), tol {GRID_TOL}"
        ),
    )
}

fn experiment() -> (Experiment, Duration) {
    let configs: Vec<ScenarioConfig> = Scenario::ALL
        .iter()
        .map(|&s| ScenarioConfig::desk(s, 2021))
        .collect();
    let mcmc = McmcConfig {
        n_neighbors: 5,
        ..McmcConfig::default()
    };
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let start = Instant::now();
    let exp = run_experiment(&configs, &mcmc, threads).expect("experiment runs");
    (exp, start.elapsed())
}

fn rows(exp: &Experiment, sc: Scenario, model: FunctionalForm) -> Vec<&svc_sdm::sim::ExperimentRow> {
    exp.rows
        .iter()
        .filter(|r| r.scenario == sc && r.model == model)
        .collect()
}

fn mean_waic(exp: &Experiment, sc: Scenario, model: FunctionalForm) -> f64 {
    let r = rows(exp, sc, model);
    r.iter().map(|r| r.waic).sum::<f64>() / r.len() as f64
}

fn criterion_4(exp: &Experiment) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // (a) linear truth: every model covers beta1 and estimates similar surfaces.
    let mut rmse = Vec::new();
    for form in FunctionalForm::ALL {
        let r = rows(exp, Scenario::Linear, form);
        let covered = r.iter().filter(|r| r.beta1_covered).count();
        rmse.push(r.iter().map(|r| r.effect_rmse).sum::<f64>() / r.len() as f64);
        if covered < COVERAGE_MIN {
            pass = false;
        }
        notes.push(format!("{} covers b1 {covered}/{}", form.name(), r.len()));
    }
    let ratio = rmse.iter().copied().fold(0.0, f64::max) / rmse.iter().copied().fold(f64::INFINITY, f64::min);
    if ratio > RMSE_RATIO_MAX {
        pass = false;
    }
    notes.push(format!("linear RMSE max/min {ratio:.2}"));

    // (b) exact simple truth: the matching simple model beats the SVC model.
    for (sc, form) in [
        (Scenario::Quadratic, FunctionalForm::Quadratic),
        (Scenario::Stratum, FunctionalForm::Stratum),
        (Scenario::Interaction, FunctionalForm::Interaction),
    ] {
        let (simple, svc) = (mean_waic(exp, sc, form), mean_waic(exp, sc, FunctionalForm::Svc));
        if simple >= svc {
            pass = false;
        }
        notes.push(format!("{sc}: {} {simple:.2} vs svc {svc:.2}", form.name()));
    }

    // (c) unknown interaction: SVC best on average and by > 2 in most replicates.
    for sc in [Scenario::MissingInteraction, Scenario::Full] {
        let svc_mean = mean_waic(exp, sc, FunctionalForm::Svc);
        let best_other = FunctionalForm::ALL
            .iter()
            .filter(|f| **f != FunctionalForm::Svc)
            .map(|&f| mean_waic(exp, sc, f))
            .fold(f64::INFINITY, f64::min);
        let svc_rows = rows(exp, sc, FunctionalForm::Svc);
        let wins = svc_rows
            .iter()
            .filter(|s| {
                exp.rows
                    .iter()
                    .filter(|o| o.scenario == sc && o.replicate == s.replicate && o.model != FunctionalForm::Svc)
                    .all(|o| o.waic - s.waic > DELTA_WAIC)
            })
            .count();
        if svc_mean >= best_other || wins < COVERAGE_MIN {
            pass = false;
        }
        notes.push(format!(
            "{sc}: svc {svc_mean:.2} vs best other {best_other:.2}, dWAIC>{DELTA_WAIC} in {wins}/{}",
            svc_rows.len()
        ));
    }
    let flagged = exp.rows.iter().filter(|r| r.flagged).count();
    notes.push(format!("R-hat flags {flagged}/{}", exp.rows.len()));
    outcome(pass, notes.join("; "))
}

fn criterion_5(exp: &Experiment) -> Outcome {
    let cfg = ScenarioConfig::desk(Scenario::Linear, 2021);
    let limit = W1_SD_FRACTION * cfg.truth.beta1.abs();
    let sds: Vec<f64> = rows(exp, Scenario::Linear, FunctionalForm::Svc)
        .iter()
        .map(|r| r.w1_median_sd.expect("svc fit has a w1 surface"))
        .collect();
    let worst = sds.iter().copied().fold(0.0, f64::max);
    let mean = sds.iter().sum::<f64>() / sds.len() as f64;
    outcome(
        worst < limit,
        format!(
            "spatial sd of median w1: max {worst:.4}, mean {mean:.4} over {} fits; limit {limit:.4}",
            sds.len()
        ),
    )
}

fn rhat_oracle(chains: &[&[f64]]) -> f64 {
    let mut seqs: Vec<Vec<f64>> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        seqs.push(c[..h].to_vec());
        seqs.push(c[c.len() - h..].to_vec());
    }
    let m = seqs.len() as f64;
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let mut w = 0.0;
    for (s, mu) in seqs.iter().zip(&means) {
        w += s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0);
    }
    w /= m;
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

fn waic_oracle(ll: &[Vec<f64>]) -> f64 {
    let s = ll.len() as f64;
    let mut elpd = 0.0;
    for i in 0..ll[0].len() {
        let col: Vec<f64> = ll.iter().map(|r| r[i]).collect();
        let lppd = (col.iter().map(|v| v.exp()).sum::<f64>() / s).ln();
        let mu = col.iter().sum::<f64>() / s;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (s - 1.0);
        elpd += lppd - var;
    }
    -2.0 * elpd
}

fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;

    let a = [1.0, 2.0, 3.0, 4.0];
    let c1 = [0.3, -1.2, 0.8, 2.2, 0.1, -0.4, 1.7, 0.9];
    let c2 = [1.1, 0.2, -0.7, 0.5, 1.9, -1.3, 0.6, 0.0];
    let c3 = [2.5, 1.4, 3.3, 2.0, 2.9, 1.1, 2.2, 3.0];
    for chains in [vec![&a[..], &a[..]], vec![&c1[..], &c2[..]], vec![&c1[..], &c2[..], &c3[..]]] {
        worst = worst.max((rhat(&chains).unwrap() - rhat_oracle(&chains)).abs());
    }
    ok &= rhat(&[&[5.0; 6], &[5.0; 6]]).unwrap() == 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let n0: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n10: Vec<f64> = (0..500).map(|_| 10.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    ok &= rhat(&[&n0, &n10]).unwrap() > 1.1;

    let lls = [
        vec![vec![-1.0, -2.0], vec![-1.0, -1.0]],
        vec![vec![-0.3, -2.2, -0.9], vec![-0.5, -1.7, -1.4], vec![-0.2, -2.9, -0.8], vec![-0.6, -2.0, -1.1]],
    ];
    for ll in &lls {
        worst = worst.max((waic(ll).unwrap().waic - waic_oracle(ll)).abs());
    }
    let half = waic(&vec![vec![0.5f64.ln()]; 7]).unwrap();
    ok &= half.p_waic == 0.0 && (half.waic - (-2.0 * 0.5f64.ln())).abs() <= DIAG_TOL;

    let auc_cases: Vec<(Vec<f64>, Vec<bool>)> = vec![
        (vec![0.1, 0.4, 0.35, 0.8], vec![false, false, true, true]),
        (vec![0.5, 0.5, 0.5, 0.5], vec![true, false, true, false]),
        (
            vec![0.2, 0.7, 0.7, 0.1, 0.9, 0.3, 0.7, 0.4],
            vec![false, true, false, false, true, true, false, true],
        ),
    ];
    for (s, l) in &auc_cases {
        worst = worst.max((auc(s, l).unwrap() - auc_oracle(s, l)).abs());
    }
    ok &= auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]) == Some(0.75);

    use TrendCategory::*;
    let probes = [0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 0.9];
    let expected = [
        StrongNegative,
        ModerateNegative,
        ModerateNegative,
        NoEffect,
        NoEffect,
        ModeratePositive,
        StrongPositive,
    ];
    let bins_ok = probes
        .iter()
        .zip(expected)
        .all(|(&p, e)| TrendCategory::from_probability(p) == e);
    outcome(
        ok && bins_ok && worst <= DIAG_TOL,
        format!("max oracle diff {worst:.2e} (tol {DIAG_TOL:.0e}), edge cases ok {ok}, trend probes ok {bins_ok}"),
    )
}

fn criterion_7() -> Outcome {
    let p = McmcConfig::long_profile();
    let pass = p.n_chains == 3
        && p.n_iterations == 100_000
        && p.n_burn == 50_000
        && p.n_thin == 50
        && p.draws_per_chain() == 1000
        && p.pooled_draws() == 3000
        && p.validate().is_ok();
    outcome(
        pass,
        format!(
            "{} x {}/{}/{} -> {} per chain, {} pooled",
            p.n_chains,
            p.n_iterations,
            p.n_burn,
            p.n_thin,
            p.draws_per_chain(),
            p.pooled_draws()
        ),
    )
}

fn cli(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_svc-sdm"))
        .args(args)
        .env("SVC_SDM_THREADS", threads)
        .output()
        .expect("binary runs")
}

/// Files of a directory with manifest timestamps removed.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            let mut bytes = std::fs::read(&p).unwrap();
            if name == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                let obj = v.as_object_mut().unwrap();
                obj.remove("started_unix_ms");
                obj.remove("finished_unix_ms");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |s: &str| root.join(s).to_string_lossy().to_string();
    std::fs::write(
        root.join("svc.json"),
        serde_json::to_string(&svc_sdm::sim::model_spec(FunctionalForm::Svc)).unwrap(),
    )
    .unwrap();
    std::fs::write(
        root.join("linear.json"),
        serde_json::to_string(&svc_sdm::sim::model_spec(FunctionalForm::Linear)).unwrap(),
    )
    .unwrap();
    let mut grid = String::from("cell_x,cell_y,x,x_star\n");
    for i in 0..6 {
        for j in 0..6 {
            let (cx, cy) = (i as f64 / 5.0, j as f64 / 5.0);
            grid += &format!("{cx},{cy},{},{}\n", cy * 3.0 - 1.5, cx * 3.0 - 1.5);
        }
    }
    std::fs::write(root.join("grid.csv"), grid).unwrap();

    let mcmc = ["--iterations", "300", "--burn", "150", "--thin", "3", "--chains", "2", "--neighbors", "5", "--seed", "9"];
    let mut failures = Vec::new();
    let mut commands = 0;
    for run in ["a", "b"] {
        // The second run uses a different worker count to show scheduling does not leak into outputs.
        let threads = if run == "a" { "1" } else { "2" };
        let d = |s: &str| p(&format!("{run}_{s}"));
        let steps: Vec<Vec<String>> = vec![
            vec!["simulate", "--scenario", "linear", "--seed", "1", "--replicates", "1", "--out", &d("sim")]
                .into_iter()
                .map(String::from)
                .collect(),
            [
                vec!["fit".to_string(), "--data".into(), format!("{}/data_000.csv", d("sim")), "--spec".into(), p("svc.json"), "--out".into(), d("fit_svc"), "--no-strict".into()],
                mcmc.iter().map(|s| s.to_string()).collect(),
            ]
            .concat(),
            [
                vec!["fit".to_string(), "--data".into(), format!("{}/data_000.csv", d("sim")), "--spec".into(), p("linear.json"), "--out".into(), d("fit_lin"), "--no-strict".into()],
                mcmc.iter().map(|s| s.to_string()).collect(),
            ]
            .concat(),
            vec!["compare", "--fits", &d("fit_svc"), &d("fit_lin"), "--out", &d("compare.csv")]
                .into_iter()
                .map(String::from)
                .collect(),
            vec!["predict", "--fit", &d("fit_svc"), "--grid", &p("grid.csv"), "--out", &d("pred"), "--kriging", "sample", "--seed", "4"]
                .into_iter()
                .map(String::from)
                .collect(),
            vec!["summarize", "--fit", &d("fit_svc"), "--out", &d("summ")]
                .into_iter()
                .map(String::from)
                .collect(),
        ];
        for s in &steps {
            let args: Vec<&str> = s.iter().map(String::as_str).collect();
            let out = cli(&args, threads);
            if run == "a" {
                commands += 1;
            }
            if !out.status.success() {
                failures.push(format!("{} failed: {}", s[0], String::from_utf8_lossy(&out.stderr)));
            }
        }
    }
    for dir in ["sim", "fit_svc", "fit_lin", "pred", "summ"] {
        if snapshot(&root.join(format!("a_{dir}"))) != snapshot(&root.join(format!("b_{dir}"))) {
            failures.push(format!("{dir} differs between runs"));
        }
    }
    // Compare tables embed the fit paths, so strip them before comparing.
    let table = |run: &str| {
        std::fs::read_to_string(root.join(format!("{run}_compare.csv")))
            .unwrap_or_default()
            .replace(&p(&format!("{run}_")), "")
    };
    if table("a") != table("b") || table("a").is_empty() {
        failures.push("compare output differs between runs".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{commands} commands re-run with identical inputs produced byte-identical outputs")
        } else {
            failures.join("; ")
        },
    )
}

fn guarded<F: FnOnce() -> Outcome>(f: F) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn timed<F: FnOnce() -> Outcome>(budget_secs: u64, f: F) -> Outcome {
    let start = Instant::now();
    let o = guarded(f);
    within_budget(o, start.elapsed(), Duration::from_secs(budget_secs))
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |id: u8, name: &'static str, o: Outcome| {
        println!("criterion {id} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    report(1, "NNGP exactness", timed(60, criterion_1));
    report(2, "sampler calibration", timed(30 * 60, criterion_2));
    report(3, "grid-integration oracle", timed(5 * 60, criterion_3));
    report(6, "diagnostics oracles", guarded(criterion_6));
    report(7, "MCMC protocol arithmetic", guarded(criterion_7));
    report(8, "CLI determinism", guarded(criterion_8));
    match catch_unwind(experiment) {
        Ok((exp, elapsed)) => {
            report(
                4,
                "simulation-study direction",
                within_budget(guarded(|| criterion_4(&exp)), elapsed, Duration::from_secs(4 * 3600)),
            );
            report(5, "SVC honesty on linear truth", guarded(|| criterion_5(&exp)));
        }
        Err(_) => {
            report(4, "simulation-study direction", outcome(false, "experiment panicked"));
            report(5, "SVC honesty on linear truth", outcome(false, "experiment panicked"));
        }
    }
    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
