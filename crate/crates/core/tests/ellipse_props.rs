use dockport::ellipse::{
    axes_to_conic, conic_to_axes, point_distance, ransac_ellipse, ransac_with_sampler, refine_least_squares,
    EllipseAxes, EllipseError, RansacConfig,
};
use nalgebra::Vector2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};

/// Image-domain ellipses: centre on the sensor, axis ratio above the RANSAC
/// sanity floor.
fn ellipse() -> impl Strategy<Value = EllipseAxes> {
    (0.0f64..346.0, 0.0f64..260.0, 3.0f64..200.0, 0.15f64..1.0, 0.0f64..PI)
        .prop_map(|(x, y, a, r, t)| EllipseAxes::new(Vector2::new(x, y), a, a * r, t).unwrap())
}

fn same_ellipse(a: &EllipseAxes, b: &EllipseAxes, tol: f64) -> bool {
    let scale = a.semi_major.max(1.0);
    let mut dt = (a.angle - b.angle).rem_euclid(PI);
    dt = dt.min(PI - dt);
    // the angle is arbitrary for circles
    let round = (a.semi_major - a.semi_minor) / a.semi_major < 1e-6;
    (a.center - b.center).norm() <= tol * scale
        && (a.semi_major - b.semi_major).abs() <= tol * scale
        && (a.semi_minor - b.semi_minor).abs() <= tol * scale
        && (round || dt <= tol * 10.0)
}

/// Iterative closest point on the ellipse: dense scan, then golden-section refinement.
fn geometric_distance(e: &EllipseAxes, p: &Vector2<f64>) -> f64 {
    let d = |t: f64| (e.point_at(t) - p).norm();
    let n = 4096;
    let best = (0..n).map(|i| TAU * i as f64 / n as f64).min_by(|a, b| d(*a).total_cmp(&d(*b))).unwrap();
    let (mut lo, mut hi) = (best - TAU / n as f64, best + TAU / n as f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if d(m1) < d(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    d((lo + hi) / 2.0)
}

/// 60 noisy points on `truth` plus 60 uniform outliers over the sensor.
fn contaminated(rng: &mut ChaCha8Rng) -> (EllipseAxes, Vec<Vector2<f64>>) {
    let noise = rand_distr::Normal::new(0.0, 0.5).unwrap();
    let a = rng.random_range(30.0..90.0);
    let b = a * rng.random_range(0.4..1.0);
    let c = Vector2::new(rng.random_range(100.0..246.0), rng.random_range(100.0..160.0));
    let truth = EllipseAxes::new(c, a, b, rng.random_range(0.0..PI)).unwrap();
    let mut pts: Vec<Vector2<f64>> = (0..60)
        .map(|_| truth.point_at(rng.random_range(0.0..TAU)) + Vector2::new(rng.sample(noise), rng.sample(noise)))
        .collect();
    pts.extend((0..60).map(|_| Vector2::new(rng.random_range(0.0..346.0), rng.random_range(0.0..260.0))));
    (truth, pts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn axes_conic_round_trip(e in ellipse()) {
        let back = conic_to_axes(&axes_to_conic(&e).unwrap()).unwrap();
        prop_assert!(same_ellipse(&e, &back, 1e-9), "{e:?} vs {back:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn sampson_distance_tracks_geometric_distance(e in ellipse(), t in 0.0f64..TAU, off in -5.0f64..5.0) {
        // keep the 5 px band inside the smallest radius of curvature b²/a,
        // where the closest point is unique
        prop_assume!(e.semi_minor * e.semi_minor / e.semi_major >= 10.0);
        let on = e.point_at(t);
        let tangent = e.point_at(t + 1e-6) - e.point_at(t - 1e-6);
        let normal = Vector2::new(-tangent.y, tangent.x).normalize();
        let p = on + normal * off;
        let truth = geometric_distance(&e, &p);
        prop_assume!(truth > 0.05);
        let approx = point_distance(&e, &p);
        prop_assert!((approx - truth).abs() <= 0.1 * truth, "sampson {approx} vs geometric {truth}");
    }

    #[test]
    fn ransac_is_bit_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, pts) = contaminated(&mut rng);
        let cfg = RansacConfig { rng_seed: seed, max_iterations: 200, ..Default::default() };
        prop_assert_eq!(ransac_ellipse(&pts, &cfg).unwrap(), ransac_ellipse(&pts, &cfg).unwrap());
    }

    #[test]
    fn ransac_is_permutation_covariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, pts) = contaminated(&mut rng);
        let n = pts.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // shuffled[j] = pts[perm[j]]; position of original index i in the shuffle
        let shuffled: Vec<Vector2<f64>> = perm.iter().map(|&i| pts[i]).collect();
        let mut where_is = vec![0; n];
        for (j, &i) in perm.iter().enumerate() {
            where_is[i] = j;
        }
        let cfg = RansacConfig { max_iterations: 150, ..Default::default() };
        let draws: Vec<[usize; 5]> = {
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
            (0..cfg.max_iterations)
                .map(|_| {
                    let s = rand::seq::index::sample(&mut r, n, 5);
                    [s.index(0), s.index(1), s.index(2), s.index(3), s.index(4)]
                })
                .collect()
        };
        let mut it = draws.iter();
        let a = ransac_with_sampler(&pts, &cfg, || *it.next().unwrap()).unwrap();
        let mut it = draws.iter();
        let b = ransac_with_sampler(&shuffled, &cfg, || it.next().unwrap().map(|i| where_is[i])).unwrap();
        prop_assert!(same_ellipse(&a.ellipse, &b.ellipse, 1e-9), "{:?} vs {:?}", a.ellipse, b.ellipse);
        let mut mapped: Vec<usize> = b.inliers.iter().map(|&j| perm[j]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, a.inliers.clone());
    }

    #[test]
    fn inliers_are_within_tolerance(seed in 0u64..1000, tol in 0.5f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, pts) = contaminated(&mut rng);
        let cfg = RansacConfig { rng_seed: seed, inlier_tolerance: tol, max_iterations: 200, ..Default::default() };
        let fit = ransac_ellipse(&pts, &cfg).unwrap();
        for &i in &fit.inliers {
            prop_assert!(point_distance(&fit.ellipse, &pts[i]) <= tol);
        }
    }
}

#[test]
fn points_on_two_lines_never_give_an_ellipse() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    // every 5-subset holds three collinear points, so each conic through it is a line pair
    let mut pts: Vec<Vector2<f64>> = (0..5).map(|i| Vector2::new(20.0 + 30.0 * i as f64, 40.0 + 12.0 * i as f64)).collect();
    let (o, d) = (Vector2::new(10.0, 200.0), Vector2::new(1.0, -0.7).normalize());
    pts.extend((0..10).map(|_| o + d * rng.random_range(0.0..250.0)));
    let mut subsets = vec![];
    for a in 0..15 {
        for b in a + 1..15 {
            for c in b + 1..15 {
                for e in c + 1..15 {
                    for f in e + 1..15 {
                        subsets.push([a, b, c, e, f]);
                    }
                }
            }
        }
    }
    assert_eq!(subsets.len(), 3003);
    let cfg = RansacConfig { max_iterations: subsets.len(), ..Default::default() };
    let mut it = subsets.iter();
    assert_eq!(ransac_with_sampler(&pts, &cfg, || *it.next().unwrap()), Err(EllipseError::NotFound));
    assert_eq!(ransac_ellipse(&pts, &RansacConfig::default()), Err(EllipseError::NotFound));
}

#[test]
fn refinement_improves_the_hypothesis() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let trials = 500;
    let mut better_axes = 0;
    for trial in 0..trials {
        let (truth, pts) = contaminated(&mut rng);
        let fit = ransac_ellipse(&pts, &RansacConfig { rng_seed: trial, ..Default::default() }).unwrap();
        let axis_err = |e: &EllipseAxes| {
            ((e.semi_major - truth.semi_major) / truth.semi_major).abs() + ((e.semi_minor - truth.semi_minor) / truth.semi_minor).abs()
        };
        better_axes += (axis_err(&fit.ellipse) < axis_err(&fit.hypothesis)) as usize;

        // least squares never does worse than the hypothesis on its own inlier set
        let inl: Vec<Vector2<f64>> = pts
            .iter()
            .filter(|p| point_distance(&fit.hypothesis, p) <= 2.0)
            .copied()
            .collect();
        let refined = refine_least_squares(&inl).unwrap();
        let hyp = axes_to_conic(&fit.hypothesis).unwrap();
        assert!(refined.algebraic_rms(&inl).unwrap() <= hyp.algebraic_rms(&inl).unwrap() + 1e-12);
    }
    assert!(better_axes * 10 >= trials as usize * 9, "refined axes better in {better_axes}/{trials} trials (>= 90%)");
}
