//! Structural validation rules. Malformed input is reported, never thrown.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{KMCurve, RiskTable, CURVE_POINTS};
use crate::report::{Rule, ValidationReport};

pub fn validate_risk_table(rt: &RiskTable) -> ValidationReport {
    let mut report = ValidationReport::new();
    let study = rt.study.render();

    if rt.arms.is_empty() || rt.time_grid.is_empty() {
        report.push(
            Rule::EmptyTable,
            &study,
            "risk table needs at least one arm and one grid time",
        );
    }

    if let Some(&first) = rt.time_grid.first() {
        if first != 0.0 {
            report.push(
                Rule::TimeGridOrder,
                format!("{study} grid[0]"),
                format!("time grid must start at 0, found {first}"),
            );
        }
    }
    for (j, w) in rt.time_grid.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[1].is_finite() {
            report.push(
                Rule::TimeGridOrder,
                format!("{study} grid[{}]", j + 1),
                format!("time grid not strictly increasing: {} then {}", w[0], w[1]),
            );
        }
    }

    let mut seen = BTreeSet::new();
    for arm in &rt.arms {
        let loc = format!("{study} / {}", arm.label);
        if !seen.insert(arm.label.as_str()) {
            report.push(Rule::DuplicateArm, &loc, "arm label appears twice in one study");
        }
        if arm.counts.len() != rt.time_grid.len() {
            report.push(
                Rule::RaggedArrays,
                &loc,
                format!(
                    "{} counts for {} grid times",
                    arm.counts.len(),
                    rt.time_grid.len()
                ),
            );
        }
        for (j, &c) in arm.counts.iter().enumerate() {
            if c < 0 {
                report.push(
                    Rule::NegativeCount,
                    format!("{loc} [{j}]"),
                    format!("negative at-risk count {c}"),
                );
            }
        }
        for (j, w) in arm.counts.windows(2).enumerate() {
            if w[1] > w[0] {
                report.push(
                    Rule::NonMonotoneAtRisk,
                    format!("{loc} [{}]", j + 1),
                    format!("at-risk count rises from {} to {}", w[0], w[1]),
                );
            }
        }
    }
    report
}

pub fn validate_curve(c: &KMCurve) -> ValidationReport {
    let mut report = ValidationReport::new();
    let loc = format!("{} / {}", c.study, c.arm_label);

    if c.points.len() != CURVE_POINTS {
        report.push(
            Rule::PointCount,
            &loc,
            format!("expected {CURVE_POINTS} points, found {}", c.points.len()),
        );
    }
    match c.points.first() {
        Some(p) if p.time == 0.0 && p.survival == 1.0 => {}
        Some(p) => report.push(
            Rule::CurveStart,
            &loc,
            format!(
                "curve must start at (0, 100%), starts at ({}, {}%)",
                p.time,
                p.survival * 100.0
            ),
        ),
        None => report.push(Rule::CurveStart, &loc, "curve has no points"),
    }
    for (i, p) in c.points.iter().enumerate() {
        if !p.survival.is_finite() || !(0.0..=1.0).contains(&p.survival) {
            report.push(
                Rule::SurvivalRange,
                format!("{loc} [{i}]"),
                format!("survival {}% outside [0, 100]", p.survival * 100.0),
            );
        }
    }
    for (i, w) in c.points.windows(2).enumerate() {
        if !(w[1].time > w[0].time) || !w[1].time.is_finite() {
            report.push(
                Rule::TimeOrder,
                format!("{loc} [{}]", i + 1),
                format!("time not strictly increasing: {} then {}", w[0].time, w[1].time),
            );
        }
        if w[1].survival > w[0].survival {
            report.push(
                Rule::Monotonicity,
                format!("{loc} [{}]", i + 1),
                format!(
                    "survival rises from {}% to {}% at t = {}",
                    w[0].survival * 100.0,
                    w[1].survival * 100.0,
                    w[1].time
                ),
            );
        }
    }
    report
}

/// Cross-file alignment: every curve has exactly one risk-table arm under the
/// same study-arm key and vice versa, and identifiers are unique.
pub fn validate_bundle(curves: &[KMCurve], tables: &[RiskTable]) -> ValidationReport {
    let mut report = ValidationReport::new();

    let mut table_ids: BTreeMap<String, usize> = BTreeMap::new();
    for t in tables {
        *table_ids.entry(t.study.render()).or_default() += 1;
    }
    for (id, count) in &table_ids {
        if *count > 1 {
            report.push(
                Rule::DuplicateIdentifier,
                id,
                format!("{count} risk tables share the identifier; add a subfigure qualifier"),
            );
        }
    }

    let mut curve_keys: BTreeMap<(String, String), usize> = BTreeMap::new();
    for c in curves {
        *curve_keys
            .entry((c.study.render(), c.arm_label.clone()))
            .or_default() += 1;
    }
    for ((study, arm), count) in &curve_keys {
        if *count > 1 {
            report.push(
                Rule::DuplicateIdentifier,
                format!("{study} / {arm}"),
                format!("{count} curves share the study-arm key"),
            );
        }
    }

    let table_keys: BTreeSet<(String, String)> = tables
        .iter()
        .flat_map(|t| {
            let id = t.study.render();
            t.arms.iter().map(move |a| (id.clone(), a.label.clone()))
        })
        .collect();

    for key in curve_keys.keys() {
        if !table_keys.contains(key) {
            report.push(
                Rule::UnmatchedArm,
                format!("{} / {}", key.0, key.1),
                "curve has no matching risk-table arm",
            );
        }
    }
    for key in &table_keys {
        if !curve_keys.contains_key(key) {
            report.push(
                Rule::UnmatchedArm,
                format!("{} / {}", key.0, key.1),
                "risk-table arm has no matching curve",
            );
        }
    }
    report
}
