//! Resampling of calibrated traces onto the fixed 500-point grid with the
//! canonical survival-curve constraints enforced or reported.

use crate::error::{Error, Result};
use crate::model::{interpolate, CurvePoint, KMCurve, StudyId, CURVE_POINTS};
use crate::report::{Rule, ValidationReport};
use crate::validate::validate_curve;

/// Largest upward step (survival percent) repaired automatically.
pub const MONOTONE_TOLERANCE_PCT: f64 = 0.5;

/// Standardizes a calibrated trace given as `(months, survival %)` pairs.
///
/// Small defects are repaired with a warning; larger ones are reported as
/// errors and left in place so the user can correct the trace.
pub fn standardize_curve(
    study: StudyId,
    arm_label: &str,
    trace: &[(f64, f64)],
) -> Result<(KMCurve, ValidationReport)> {
    let mut report = ValidationReport::new();
    let loc = format!("{study} / {arm_label}");

    if trace.iter().any(|(t, s)| !t.is_finite() || !s.is_finite()) {
        return Err(Error::Input("trace contains non-finite coordinates".into()));
    }

    let mut pts: Vec<(f64, f64)> = trace.iter().copied().filter(|(t, _)| *t >= 0.0).collect();
    let dropped = trace.len() - pts.len();
    if dropped > 0 {
        report.push(
            Rule::NegativeTimeDropped,
            &loc,
            format!("{dropped} point(s) left of the time origin dropped"),
        );
    }

    // stable sort, then keep the last point of each run of equal times
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let before = pts.len();
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        match knots.last_mut() {
            Some(last) if last.0 == p.0 => *last = p,
            _ => knots.push(p),
        }
    }
    if knots.len() < before {
        report.push(
            Rule::DuplicateTimes,
            &loc,
            format!("{} duplicate time(s) collapsed, later points kept", before - knots.len()),
        );
    }

    let t_max = knots.last().map_or(0.0, |p| p.0);
    if !(t_max > 0.0) {
        return Err(Error::Input("trace must extend past t = 0".into()));
    }
    if knots.len() < 2 {
        return Err(Error::Input("trace needs at least two distinct times".into()));
    }

    for (t, s) in knots.iter_mut() {
        let excess = if *s > 100.0 {
            *s - 100.0
        } else if *s < 0.0 {
            -*s
        } else {
            continue;
        };
        if excess <= MONOTONE_TOLERANCE_PCT {
            report.push(
                Rule::SurvivalClamped,
                format!("{loc} t={t}"),
                format!("survival {s}% clamped into [0, 100]"),
            );
            *s = s.clamp(0.0, 100.0);
        } else {
            report.push(
                Rule::SurvivalRange,
                format!("{loc} t={t}"),
                format!("survival {s}% outside [0, 100]"),
            );
        }
    }

    if knots[0].0 > 0.0 {
        knots.insert(0, (0.0, 100.0));
        report.push(Rule::StartInserted, &loc, "start point (0, 100%) inserted");
    } else if knots[0].1 != 100.0 {
        let gap = 100.0 - knots[0].1;
        if gap.abs() <= MONOTONE_TOLERANCE_PCT {
            report.push(
                Rule::SurvivalClamped,
                format!("{loc} t=0"),
                format!("start survival {}% set to 100%", knots[0].1),
            );
            knots[0].1 = 100.0;
        } else {
            report.push(
                Rule::CurveStart,
                format!("{loc} t=0"),
                format!("trace starts at {}% instead of 100%", knots[0].1),
            );
        }
    }

    let mut running_min = knots[0].1;
    let mut monotone = true;
    for (t, s) in knots.iter_mut().skip(1) {
        if *s > running_min {
            let rise = *s - running_min;
            if rise <= MONOTONE_TOLERANCE_PCT {
                report.push(
                    Rule::MonotonicityClamped,
                    format!("{loc} t={t}"),
                    format!("upward step of {rise:.4} points clamped"),
                );
                *s = running_min;
            } else {
                monotone = false;
                report.push(
                    Rule::Monotonicity,
                    format!("{loc} t={t}"),
                    format!("survival rises by {rise:.4} points; correct the trace"),
                );
            }
        } else {
            running_min = *s;
        }
    }

    let knot_points: Vec<CurvePoint> = knots
        .iter()
        .map(|&(t, s)| CurvePoint::new(t, s / 100.0))
        .collect();
    let last = (CURVE_POINTS - 1) as f64;
    let mut points: Vec<CurvePoint> = (0..CURVE_POINTS)
        .map(|i| {
            let t = if i == CURVE_POINTS - 1 {
                t_max
            } else {
                t_max * i as f64 / last
            };
            CurvePoint::new(t, interpolate(&knot_points, t))
        })
        .collect();
    if monotone {
        // interpolation rounding can leave one-ulp rises at knots
        for i in 1..points.len() {
            points[i].survival = points[i].survival.min(points[i - 1].survival);
        }
    }

    let curve = KMCurve::new(study, arm_label, points);
    if !report.has_errors() {
        report.merge(validate_curve(&curve));
    }
    Ok((curve, report))
}
