use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svc_sdm::data::{CovariateSet, Dataset, DetectionData, SpatialCoordinates};
use svc_sdm::mcmc::run_chains;
use svc_sdm::outputs::{
    auc, categorize_trend, predict_surfaces, summarize, waic, KrigingMode, PredictionGrid,
    TrendCategory,
};
use svc_sdm::spec::{validate_spec, FunctionalForm, McmcConfig, OccupancyModelSpec};

fn loglik() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 1usize..6).prop_flat_map(|(s, n)| {
        prop::collection::vec(prop::collection::vec(-6.0..-0.01f64, n), s)
    })
}

proptest! {
    #[test]
    fn waic_ignores_unit_order(ll in loglik(), rot in 0usize..5) {
        let mut perm = ll.clone();
        for row in perm.iter_mut() {
            let n = row.len();
            row.rotate_left(rot % n);
        }
        let (a, b) = (waic(&ll).unwrap(), waic(&perm).unwrap());
        prop_assert!((a.waic - b.waic).abs() < 1e-9);
    }

    #[test]
    fn duplicating_every_draw_keeps_lppd(ll in loglik()) {
        let mut doubled = ll.clone();
        doubled.extend(ll.iter().cloned());
        let (a, b) = (waic(&ll).unwrap(), waic(&doubled).unwrap());
        // The lppd term is unchanged; only the n-1 divisor in the variance moves.
        let lppd = |w: svc_sdm::outputs::Waic| w.elpd + w.p_waic;
        prop_assert!((lppd(a) - lppd(b)).abs() < 1e-9);
        let s = ll.len() as f64;
        prop_assert!((b.p_waic - a.p_waic * (s - 1.0) * 2.0 * s / (s * (2.0 * s - 1.0))).abs() < 1e-9);
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms(
        scores in prop::collection::vec(-5.0..5.0f64, 4..30),
        flips in prop::collection::vec(any::<bool>(), 30),
    ) {
        let labels: Vec<bool> = flips[..scores.len()].to_vec();
        let transformed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert_eq!(auc(&scores, &labels), auc(&transformed, &labels));
        if let Some(a) = auc(&scores, &labels) {
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((auc(&negated, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }
}

#[test]
fn trend_bins_partition_the_unit_interval() {
    let mut counts = [0usize; 5];
    for i in 0..=10_000 {
        let p = i as f64 / 10_000.0;
        let c = TrendCategory::from_probability(p);
        let idx = TrendCategory::ALL.iter().position(|&x| x == c).unwrap();
        counts[idx] += 1;
        let expected = if p > 0.8 {
            TrendCategory::StrongPositive
        } else if p > 0.6 {
            TrendCategory::ModeratePositive
        } else if p > 0.4 {
            TrendCategory::NoEffect
        } else if p >= 0.2 {
            TrendCategory::ModerateNegative
        } else {
            TrendCategory::StrongNegative
        };
        assert_eq!(c, expected, "p = {p}");
    }
    assert_eq!(counts.iter().sum::<usize>(), 10_001);
    assert_eq!(categorize_trend(&[1.0, 2.0, -1.0]).unwrap(), TrendCategory::ModeratePositive);
}

fn svc_fit() -> (Dataset, Vec<svc_sdm::mcmc::PosteriorChain>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let j = 30;
    let points: Vec<[f64; 2]> = (0..j).map(|_| [rng.random(), rng.random()]).collect();
    let y = (0..j * 3).map(|_| Some(u8::from(rng.random::<f64>() < 0.35))).collect();
    let data = DetectionData::new(SpatialCoordinates::from_points(points).unwrap(), vec![1], 3, y).unwrap();
    let mut covariates = CovariateSet::for_data(&data);
    let x: Vec<f64> = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
    covariates.insert_occurrence_dense("x", &x).unwrap();
    let ds = Dataset { data, covariates };
    let spec = OccupancyModelSpec::canonical(FunctionalForm::Svc, "x", None, None).unwrap();
    let v = validate_spec(&spec, &ds.data, &ds.covariates, 5).unwrap();
    let cfg = McmcConfig {
        n_chains: 2,
        n_iterations: 200,
        n_burn: 100,
        n_thin: 5,
        n_neighbors: 5,
        ..McmcConfig::default()
    };
    let chains = run_chains(&ds, &v, &cfg, 2).unwrap();
    (ds, chains)
}

#[test]
fn kriged_mean_at_data_sites_equals_the_draws() {
    let (ds, chains) = svc_fit();
    let points = ds.data.coordinates().points().to_vec();
    let x = ds.covariates.occurrence("x").unwrap().iter().map(|v| v.unwrap()).collect();
    let grid = PredictionGrid {
        cells: points,
        covariates: [("x".to_string(), x)].into_iter().collect(),
        strata: Default::default(),
    };
    let surf = predict_surfaces(&chains, &ds, &grid, 0, KrigingMode::Mean).unwrap();
    let w1 = &surf.draws["w1:x"];
    let mut d = 0;
    for chain in &chains {
        let s = chain.surface("w1:x").unwrap();
        for draw in s {
            assert_eq!(&w1[d], draw);
            d += 1;
        }
    }
    let sampled = predict_surfaces(&chains, &ds, &grid, 0, KrigingMode::Sample { seed: 3 }).unwrap();
    assert_eq!(sampled.draws["w1:x"], *w1);
}

#[test]
fn summary_pools_all_chains() {
    let (_, chains) = svc_fit();
    let s = summarize(&chains).unwrap();
    assert_eq!(s.n_chains, 2);
    assert_eq!(s.pooled_draws, 40);
    assert!(s.param("beta[x]").is_some());
    assert!(s.waic.waic.is_finite());
}
