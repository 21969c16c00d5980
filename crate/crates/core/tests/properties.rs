use proptest::prelude::*;

use odpp::grid::{assign_counts, BBox, GridSpec, Point, PointPattern};
use odpp::joint::{flow_from_intensity, Partition};
use odpp::recovery::{bicrps, cond_logdensity, sigma_from_psi, HIGDON_A};
use odpp::rng::stream_rng;
use odpp::validation::{p_thin, rps};

fn grid(nx: usize, ny: usize) -> GridSpec {
    GridSpec::regular(BBox::new(0.0, 4.0, -1.0, 2.0).unwrap(), nx, ny).unwrap()
}

proptest! {
    #[test]
    fn higdon_kernel_is_spd_with_fixed_determinant(px in -6.0..6.0f64, py in -6.0..6.0f64, s in 0.01..10.0f64) {
        let sig = sigma_from_psi(px, py, s, HIGDON_A);
        prop_assert!(sig.is_positive_definite());
        let want = s.powi(4) * HIGDON_A * HIGDON_A / (std::f64::consts::PI.powi(2));
        prop_assert!((sig.det() - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn conditional_density_peaks_at_theft(px in -3.0..3.0f64, py in -3.0..3.0f64, dx in -2.0..2.0f64, dy in -2.0..2.0f64) {
        let sig = sigma_from_psi(px, py, 1.0, HIGDON_A);
        let t = Point::new(1.0, 1.0);
        let at = cond_logdensity(&t, &t, &sig).unwrap();
        let off = cond_logdensity(&Point::new(1.0 + dx, 1.0 + dy), &t, &sig).unwrap();
        prop_assert!(off <= at);
    }

    #[test]
    fn grid_counts_conserve_points(nx in 1..12usize, ny in 1..12usize, seed in 0..1000u64, n in 0..300usize) {
        use rand::Rng;
        let g = grid(nx, ny);
        let mut rng = stream_rng(seed, 0);
        let pts = (0..n).map(|_| Point::new(rng.random_range(0.0..4.0), rng.random_range(-1.0..2.0))).collect();
        let counts = assign_counts(&PointPattern::new(pts, "p").unwrap(), &g).unwrap();
        prop_assert_eq!(counts.iter().sum::<u64>(), n as u64);
        let area: f64 = g.std_areas().iter().sum();
        prop_assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thinning_partitions_the_pattern(seed in 0..1000u64, n in 0..200usize, p in 0.05..0.95f64) {
        let pts = (0..n).map(|i| Point::new(i as f64, 0.0)).collect();
        let split = p_thin(&PointPattern::new(pts, "p").unwrap(), p, &mut stream_rng(seed, 2)).unwrap();
        prop_assert_eq!(split.train.len() + split.test.len(), n);
    }

    #[test]
    fn rps_is_zero_only_for_point_mass_at_observation(obs in 0..30u64, draws in proptest::collection::vec(0..30u64, 1..60)) {
        let score = rps(&draws, obs);
        prop_assert!(score >= 0.0);
        prop_assert_eq!(score == 0.0, draws.iter().all(|&d| d == obs));
        prop_assert!(rps(&vec![obs; draws.len()], obs).abs() < 1e-12);
    }

    #[test]
    fn bicrps_is_nonnegative(xs in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..40), ox in -5.0..5.0f64, oy in -5.0..5.0f64) {
        let samples: Vec<Point> = xs.iter().map(|&(x, y)| Point::new(x, y)).collect();
        prop_assert!(bicrps(&samples, &Point::new(ox, oy)) >= 0.0);
    }

    #[test]
    fn flow_proportions_sum_to_one(k in 1..8usize, seed in 0..500u64, origin in 0..8usize) {
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        let ll: Vec<f64> = (0..k * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let areas = vec![1.0 / k as f64; k];
        let part = Partition { ids: vec!["a".into(), "b".into()], sets: vec![(0..k / 2).collect(), (k / 2..k).collect()] };
        let f = flow_from_intensity(&ll, &areas, &[origin % k], &part).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(f.iter().all(|&v| v >= 0.0));
    }
}
