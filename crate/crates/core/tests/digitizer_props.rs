use kmlead_core::digitizer::{
    adjudicate_tables, match_arms, normalize_label, solve_affine, standardize_curve, transform_trace, AffineMap,
    CalibrationAnchors, CandidateTable, MatchMethod, PixelPoint, SourceTag, FUZZY_LENGTH_GAP,
};
use kmlead_core::model::{RiskArm, RiskTable, StudyId, CURVE_POINTS};
use proptest::prelude::*;

/// Ground-truth pixel-to-data map with rotation, shear and anisotropic scale.
fn arb_truth() -> impl Strategy<Value = AffineMap> {
    (
        0.02..0.5f64,
        -0.3..0.3f64,
        -0.6..0.6f64,
        0.05..0.4f64,
        -50.0..50.0f64,
        -50.0..150.0f64,
    )
        .prop_map(|(sx, shear, rot, sy, c, f)| {
            // t grows to the right, survival grows upwards (pixel v grows downwards)
            AffineMap {
                a: sx,
                b: shear * sx + rot * sx,
                c,
                d: -rot * sy,
                e: -sy,
                f,
            }
        })
        .prop_filter("well conditioned", |m| m.determinant().abs() > 1e-4)
}

fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()))
}

proptest! {
    #[test]
    fn calibration_recovers_any_affine(
        truth in arb_truth(),
        max_months in 6.0..120.0f64,
        pixels in prop::collection::vec((0.0..1200.0f64, 0.0..900.0f64), 100),
    ) {
        let inv = truth.inverse().unwrap();
        let px = |t: f64, s: f64| {
            let (u, v) = inv.apply(PixelPoint::new(t, s));
            PixelPoint::new(u, v)
        };
        let anchors = CalibrationAnchors {
            origin_px: px(0.0, 0.0),
            xmax_px: px(max_months, 0.0),
            ytop_px: px(0.0, 100.0),
            max_months,
        };
        let map = solve_affine(&anchors).unwrap();
        let trace: Vec<PixelPoint> = pixels.iter().map(|&(u, v)| PixelPoint::new(u, v)).collect();
        let got = transform_trace(&trace, &map).unwrap();
        for (p, (t, s)) in trace.iter().zip(got) {
            let (et, es) = truth.apply(*p);
            prop_assert!(close(t, et), "t {t} vs {et}");
            prop_assert!(close(s, es), "s {s} vs {es}");
        }
    }

    #[test]
    fn standardized_curves_are_canonical(
        steps in prop::collection::vec((0.1..3.0f64, 0.0..4.0f64), 5..80),
        start in 60.0..100.0f64,
    ) {
        let mut t = 0.0;
        let mut s = start;
        let mut trace = vec![(0.0, 100.0)];
        for (dt, ds) in steps {
            t += dt;
            s = (s - ds).max(0.0);
            trace.push((t, s));
        }
        let (curve, report) = standardize_curve(StudyId::new("S"), "A", &trace).unwrap();
        prop_assert!(!report.has_errors(), "{report}");
        prop_assert_eq!(curve.points.len(), CURVE_POINTS);
        prop_assert_eq!(curve.points[0].time, 0.0);
        prop_assert!((curve.points[0].survival - 1.0).abs() < 1e-12);
        prop_assert!((curve.points[CURVE_POINTS - 1].time - t).abs() < 1e-9);
        for w in curve.points.windows(2) {
            prop_assert!(w[1].time > w[0].time);
            prop_assert!(w[1].survival <= w[0].survival);
        }
        prop_assert!(curve.points.iter().all(|p| (0.0..=1.0).contains(&p.survival)));
    }

    #[test]
    fn fuzzy_pairs_respect_the_length_gate(a in "[a-z +]{1,30}", b in "[a-z +]{1,30}") {
        let m = match_arms(&[a.clone()], &[b.clone()], None, None).unwrap();
        let (na, nb) = (normalize_label(&a), normalize_label(&b));
        let gap = na.chars().count().abs_diff(nb.chars().count());
        if let Some(p) = m.pairs.first() {
            match p.method {
                MatchMethod::Exact => prop_assert_eq!(&na, &nb),
                MatchMethod::Fuzzy => prop_assert!(gap <= FUZZY_LENGTH_GAP),
                other => prop_assert!(false, "unexpected method {:?}", other),
            }
        }
        if gap > FUZZY_LENGTH_GAP {
            prop_assert!(m.pairs.is_empty());
        }
    }

    #[test]
    fn adjudication_is_idempotent(
        drops in prop::collection::vec(0i64..30, 2..12),
        noise in prop::collection::vec(-3i64..=3, 12),
    ) {
        let mut a = vec![400i64];
        for d in &drops {
            a.push(a.last().unwrap() - d);
        }
        let b: Vec<i64> = a.iter().zip(&noise).map(|(x, e)| (x + e).max(0)).collect();
        let cand = |tag, counts: &[i64]| {
            let grid = (0..counts.len()).map(|j| 3.0 * j as f64).collect();
            CandidateTable::new(tag, RiskTable::new(StudyId::new("S"), grid, vec![RiskArm::new("A", counts.to_vec())]))
        };
        let (merged, log) =
            adjudicate_tables(&cand(SourceTag::PrimaryExtractor, &a), &cand(SourceTag::FallbackExtractor, &b)).unwrap();
        let c = merged.arms[0].counts.clone();
        for (j, v) in c.iter().enumerate() {
            prop_assert!(*v == a[j] || *v == b[j]);
        }
        for d in &log.cells {
            prop_assert_eq!(c[d.index], d.resolved);
        }
        let (again, log2) =
            adjudicate_tables(&cand(SourceTag::PrimaryExtractor, &c), &cand(SourceTag::FallbackExtractor, &c)).unwrap();
        prop_assert_eq!(&again.arms[0].counts, &c);
        prop_assert!(log2.is_empty());
    }
}
