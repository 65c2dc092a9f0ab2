use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use morphokit::fem::{assemble, FieldState};
use morphokit::geometry::{normalize_direction, resample_equidistant};
use morphokit::infer::{evaluate_metric, Metric, ParamBound, Scale};
use morphokit::mapping::{map_tps, LandmarkSet};
use morphokit::mesh::{deform, quality_report, refine, triangulate};
use morphokit::{Curve, Point2, TriMesh};

fn star(harmonics: &[(f64, f64)], n: usize) -> Curve {
    Curve::from_polar(n, "star", |t| {
        let r = 1.0 + harmonics.iter().enumerate().map(|(k, &(a, p))| a * ((k + 2) as f64 * t + p).cos()).sum::<f64>();
        Point2::new(r * t.cos(), r * t.sin())
    })
    .unwrap()
}

fn harmonics() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..0.1f64, 0.0..2.0 * PI), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resampling_gives_equal_chords_on_the_curve(h in harmonics(), n in 8usize..120) {
        let c = star(&h, 150);
        let r = resample_equidistant(&c, n).unwrap();
        prop_assert_eq!(r.len(), n);
        let chords: Vec<f64> = r.segments().map(|(a, b)| a.dist(b)).collect();
        let mean = chords.iter().sum::<f64>() / n as f64;
        prop_assert!(chords.iter().all(|l| (l - mean).abs() < 1e-6 * mean), "{:?}", chords);
        prop_assert!(r.points().iter().all(|&p| c.distance_to(p) < 1e-9));
    }

    #[test]
    fn direction_normalisation_makes_both_counter_clockwise(h in harmonics(), flip1: bool, flip2: bool) {
        let c = star(&h, 64);
        let a = if flip1 { c.reversed() } else { c.clone() };
        let b = if flip2 { c.reversed() } else { c };
        let (a, b) = normalize_direction(&a, &b);
        prop_assert!(a.signed_area().unwrap() > 0.0);
        prop_assert!(b.signed_area().unwrap() > 0.0);
    }

    #[test]
    fn curve_csv_round_trips(h in harmonics(), n in 3usize..60) {
        let c = star(&h, n);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        c.write_csv(&p).unwrap();
        let back = Curve::read_csv(&p).unwrap();
        prop_assert_eq!(back.points(), c.points());
        prop_assert_eq!(back.is_closed(), c.is_closed());
    }

    #[test]
    fn triangulation_covers_the_polygon(h in harmonics(), size in 0.12..0.4f64) {
        let c = star(&h, 80);
        let m = triangulate(&c, &[], size, &[]).unwrap();
        let area = c.signed_area().unwrap();
        prop_assert!((m.area() - area).abs() < 1e-9 * area);
        prop_assert_eq!(m.euler_characteristic(), 1);
        prop_assert_eq!(quality_report(&m, 1e9).n_inverted, 0);
        for p in c.points() {
            prop_assert!(m.vertices().contains(p));
        }
    }

    #[test]
    fn refinement_keeps_area_and_quadruples(nx in 1usize..8, ny in 1usize..8) {
        let m = TriMesh::rectangle(0.0, 0.0, 2.0, 1.0, nx, ny).unwrap();
        let r = refine(&m);
        prop_assert_eq!(r.triangle_count(), 4 * m.triangle_count());
        prop_assert!((r.area() - 2.0).abs() < 1e-12);
        prop_assert_eq!(r.euler_characteristic(), 1);
    }

    #[test]
    fn stiffness_annihilates_constants_and_mass_sums_to_area(h in harmonics()) {
        let m = triangulate(&star(&h, 48), &[], 0.3, &[]).unwrap();
        let asm = assemble(&m).unwrap();
        prop_assert!(asm.stiffness.row_sums().iter().all(|s| s.abs() < 1e-10));
        prop_assert!((asm.mass.total() - m.area()).abs() < 1e-10 * m.area());
        prop_assert!(asm.stiffness.is_symmetric(1e-12) && asm.mass.is_symmetric(1e-12));
    }

    #[test]
    fn zero_deformation_is_identity(h in harmonics()) {
        let c = star(&h, 40);
        let m = triangulate(&c, &[], 0.3, &[]).unwrap();
        let f = morphokit::mapping::DisplacementField::zero(&c, morphokit::mapping::MappingMethod::Normal).unwrap();
        let d = deform(&m, &f, 1.0).unwrap();
        for (a, b) in m.vertices().iter().zip(d.vertices()) {
            prop_assert!(a.dist(*b) < 1e-12);
        }
    }

    #[test]
    fn tps_interpolates_landmarks(pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -1.0..1.0f64, -1.0..1.0f64), 4..12)) {
        let pairs: Vec<(Point2, Point2)> = pts
            .iter()
            .map(|&(x, y, dx, dy)| (Point2::new(x, y), Point2::new(x + dx, y + dy)))
            .collect();
        let min_gap = pairs
            .iter()
            .enumerate()
            .flat_map(|(i, a)| pairs[i + 1..].iter().map(move |b| a.0.dist(b.0)))
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 0.1);
        let spread = pairs
            .iter()
            .map(|p| (pairs[1].0 - pairs[0].0).cross(p.0 - pairs[0].0).abs())
            .fold(0.0, f64::max);
        prop_assume!(spread > 0.5);
        let sources: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
        let d = map_tps(&LandmarkSet::new(pairs.clone()).unwrap(), &sources).unwrap();
        for ((s, t), v) in pairs.iter().zip(d) {
            prop_assert!((*s + v).dist(*t) < 1e-7);
        }
    }

    #[test]
    fn bounds_map_unit_interval_both_ways(lo in 0.01..10.0f64, span in 0.1..100.0f64, u in 0.0..1.0f64, log: bool) {
        let b = ParamBound::new("p", lo, lo + span, if log { Scale::Log } else { Scale::Linear }).unwrap();
        let x = b.at(u);
        prop_assert!(x >= lo * (1.0 - 1e-12) && x <= (lo + span) * (1.0 + 1e-12));
        prop_assert!((b.unit(x) - u).abs() < 1e-9);
    }

    #[test]
    fn sse_is_a_symmetric_non_negative_distance(seed_a in 0u64..1000, seed_b in 0u64..1000) {
        let m = Arc::new(TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 6, 6).unwrap());
        let a = FieldState::noisy(m.clone(), &[1.0], 0.3, seed_a, 0.0).unwrap();
        let b = FieldState::noisy(m, &[1.0], 0.3, seed_b, 0.0).unwrap();
        let ab = evaluate_metric(&a, &b, &Metric::sse()).unwrap();
        let ba = evaluate_metric(&b, &a, &Metric::sse()).unwrap();
        prop_assert!(ab >= 0.0 && (ab - ba).abs() < 1e-12);
        prop_assert_eq!(evaluate_metric(&a, &a, &Metric::sse()).unwrap(), 0.0);
    }
}
