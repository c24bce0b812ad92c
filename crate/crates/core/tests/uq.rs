use mgp_core::rng::{RngStream, StreamRng};
use mgp_core::uq::{
    coverage, joint_credible_set, joint_credible_set_with, marginal_interval, size_metric, winkler_score, Cutoff,
    MarginalInterval,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal_draws(rng: &mut StreamRng, l: usize, p: usize) -> Vec<Vec<f64>> {
    (0..l).map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

#[test]
fn two_dimensional_radius_is_the_chi_square_quantile() {
    let draws = normal_draws(&mut RngStream::new(1, 0).rng(), 100_000, 2);
    let set = joint_credible_set(&draws, 0.05).unwrap();
    assert!((set.radius_sq - 5.991).abs() < 0.1, "{}", set.radius_sq);
    let chi = joint_credible_set_with(&draws, 0.05, Cutoff::ChiSquared).unwrap();
    assert!((chi.radius_sq - 5.9915).abs() < 1e-3);
}

#[test]
fn size_of_standard_normal_draws_is_the_dimension() {
    let draws = normal_draws(&mut RngStream::new(2, 0).rng(), 100_000, 3);
    let size = size_metric(&draws).unwrap();
    assert!((size - 3.0).abs() < 0.05, "{size}");
}

#[test]
fn calibrated_gaussian_posterior_covers_at_nominal_rate() {
    // posterior N(estimate, I) with estimate ~ N(truth, I): frequentist and
    // credible levels agree
    let mut rng = RngStream::new(3, 0).rng();
    let truth = [0.5, -1.0];
    let sets: Vec<_> = (0..200)
        .map(|_| {
            let estimate: Vec<f64> = truth.iter().map(|t| t + rng.sample::<f64, _>(StandardNormal)).collect();
            let draws: Vec<Vec<f64>> = normal_draws(&mut rng, 10_000, 2)
                .into_iter()
                .map(|d| d.iter().zip(&estimate).map(|(z, e)| z + e).collect())
                .collect();
            joint_credible_set(&draws, 0.05).unwrap()
        })
        .collect();
    let c = coverage(&sets, &truth).unwrap();
    assert!((c - 0.95).abs() <= 0.03, "{c}");
}

#[test]
fn boundary_draw_is_inside() {
    let draws = normal_draws(&mut RngStream::new(4, 0).rng(), 50, 2);
    let set = joint_credible_set(&draws, 0.1).unwrap();
    // the order statistic that sets the radius sits exactly on the boundary
    let on = draws.iter().find(|d| set.mahalanobis_sq(d).unwrap() == set.radius_sq).unwrap();
    assert!(set.contains(on).unwrap());
    assert!(set.contains(&set.center).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_count_inside(seed in any::<u64>(), p in 1usize..5) {
        let draws = normal_draws(&mut RngStream::new(seed, 0).rng(), 100, p);
        let set = joint_credible_set(&draws, 0.05).unwrap();
        let inside = draws.iter().filter(|d| set.contains(d).unwrap()).count();
        prop_assert_eq!(inside, 95);
    }

    #[test]
    fn smaller_alpha_gives_a_larger_set(seed in any::<u64>(), l in 20usize..300) {
        let draws = normal_draws(&mut RngStream::new(seed, 1).rng(), l, 3);
        let wide = joint_credible_set(&draws, 0.01).unwrap();
        let narrow = joint_credible_set(&draws, 0.05).unwrap();
        prop_assert!(wide.radius_sq >= narrow.radius_sq);
    }

    #[test]
    fn membership_survives_affine_maps(
        seed in any::<u64>(),
        scale in prop::collection::vec(0.1f64..10.0, 2),
        shift in prop::collection::vec(-5.0f64..5.0, 2),
        theta in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let draws = normal_draws(&mut RngStream::new(seed, 2).rng(), 80, 2);
        let map = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().map(|(j, x)| scale[j] * x + shift[j]).collect() };
        let mapped: Vec<Vec<f64>> = draws.iter().map(|d| map(d)).collect();
        let a = joint_credible_set(&draws, 0.05).unwrap();
        let b = joint_credible_set(&mapped, 0.05).unwrap();
        let da = a.mahalanobis_sq(&theta).unwrap() - a.radius_sq;
        let db = b.mahalanobis_sq(&map(&theta)).unwrap() - b.radius_sq;
        // skip points within rounding of the boundary
        prop_assume!(da.abs() > 1e-9 * a.radius_sq.max(1.0));
        prop_assert_eq!(da <= 0.0, db <= 0.0);
    }

    #[test]
    fn winkler_is_minimal_on_the_interval(
        lower in -5.0f64..5.0,
        width in 0.0f64..5.0,
        theta in -20.0f64..20.0,
        alpha in 0.01f64..0.5,
    ) {
        let ci = MarginalInterval { lower, upper: lower + width, level: 1.0 - alpha };
        let s = winkler_score(&ci, theta, alpha);
        prop_assert!(s >= width);
        if (lower..=lower + width).contains(&theta) {
            prop_assert_eq!(s, width);
        } else {
            prop_assert!(s > width);
        }
        let eps = 1e-7;
        prop_assert!((winkler_score(&ci, theta + eps, alpha) - s).abs() <= 2.0 / alpha * eps * 1.0001);
    }

    #[test]
    fn marginal_interval_is_ordered(seed in any::<u64>(), alpha in 0.01f64..1.0) {
        let draws = normal_draws(&mut RngStream::new(seed, 3).rng(), 57, 2);
        let ci = marginal_interval(&draws, 1, alpha).unwrap();
        prop_assert!(ci.lower <= ci.upper);
    }
}
