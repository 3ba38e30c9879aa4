use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use svc_sdm::gp::{
    build_nngp, dense_covariance, krige_predict, nngp_log_density, nngp_ordering, NeighborSets,
    SpatialParams,
};

fn dense_logpdf(points: &[[f64; 2]], w: &[f64], p: SpatialParams) -> f64 {
    let n = points.len();
    let cov = DMatrix::from_row_slice(n, n, &dense_covariance(points, p));
    let chol = cov.cholesky().unwrap();
    let wv = DVector::from_column_slice(w);
    let quad = wv.dot(&chol.solve(&wv));
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

fn points_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..25)
        .prop_map(|v| v.into_iter().map(|(a, b)| [a, b]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn full_neighbor_sets_reproduce_dense_density(
        points in points_strategy(),
        sigma_sq in 0.3..3.0f64,
        phi in 1.0..12.0f64,
        seed in 0u64..1000,
    ) {
        let n = points.len();
        let params = SpatialParams::new(sigma_sq, phi).unwrap();
        let w: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 40.0 - 1.2).collect();
        let s = build_nngp(&points, n - 1, params).unwrap();
        let a = nngp_log_density(&w, &s).unwrap();
        let b = dense_logpdf(&points, &w, params);
        prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
    }

    #[test]
    fn neighbors_precede_each_site_in_the_ordering(points in points_strategy(), m in 1usize..8) {
        let sets = NeighborSets::build(&points, m).unwrap();
        for site in 0..points.len() {
            let pos = sets.position(site);
            prop_assert!(sets.neighbors(site).len() == pos.min(m));
            for &nb in sets.neighbors(site) {
                prop_assert!(sets.position(nb) < pos);
            }
        }
    }

    #[test]
    fn kriging_at_observed_sites_returns_observations(points in points_strategy(), m in 1usize..6) {
        let w: Vec<f64> = (0..points.len()).map(|i| i as f64 * 0.1 - 0.5).collect();
        let params = SpatialParams::new(1.0, 3.0).unwrap();
        let pred = krige_predict(&points, &w, &points, m.min(points.len()), params).unwrap();
        for (p, v) in pred.iter().zip(&w) {
            prop_assert_eq!(p.mean, *v);
            prop_assert_eq!(p.var, 0.0);
        }
    }
}

#[test]
fn ordering_sorts_by_coordinate_sum() {
    let pts = [[0.9, 0.9], [0.1, 0.0], [0.5, 0.2], [0.0, 0.3]];
    assert_eq!(nngp_ordering(&pts), vec![1, 3, 2, 0]);
}

#[test]
fn kriging_variance_shrinks_near_data() {
    let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let w = [0.3, -0.2, 0.5, 0.1];
    let params = SpatialParams::new(1.0, 2.0).unwrap();
    let near = krige_predict(&[[0.05, 0.05]], &w, &pts, 4, params).unwrap()[0];
    let far = krige_predict(&[[0.5, 0.5]], &w, &pts, 4, params).unwrap()[0];
    assert!(near.var < far.var);
    assert!(far.var < 1.0);
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(SpatialParams::new(0.0, 1.0).is_err());
    assert!(SpatialParams::new(1.0, -1.0).is_err());
    assert!(SpatialParams::new(f64::NAN, 1.0).is_err());
}
