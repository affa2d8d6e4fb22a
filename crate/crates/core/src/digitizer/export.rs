//! Final gate before an arm's curve and numbers at risk leave the digitizer.

use serde::{Deserialize, Serialize};

use crate::digitizer::matching::ArmMapping;
use crate::error::{Error, Result};
use crate::io::{render_risk_tables, render_xy};
use crate::model::{KMCurve, RiskArm, RiskTable};
use crate::report::{Rule, ValidationReport};
use crate::validate::{validate_curve, validate_risk_table};

/// A validated curve with its single-arm risk table, relabelled to the
/// curve's arm label so both files share one key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportFragment {
    pub curve: KMCurve,
    pub risk: RiskTable,
    /// Warnings that did not block export.
    pub report: ValidationReport,
}

impl ExportFragment {
    pub fn xy_csv(&self) -> String {
        render_xy(std::slice::from_ref(&self.curve))
    }

    pub fn risk_csv(&self) -> String {
        render_risk_tables(std::slice::from_ref(&self.risk))
    }
}

/// Checks that the curve's last time reaches the risk grid, allowing one grid
/// step of slack for axes drawn past the final follow-up month.
pub fn terminal_month_check(curve: &KMCurve, grid: &[f64], report: &mut ValidationReport) {
    let Some(&last) = grid.last() else {
        return;
    };
    let step = if grid.len() >= 2 {
        last - grid[grid.len() - 2]
    } else {
        0.0
    };
    let end = curve.end_time();
    if end < last - step - 1e-9 {
        report.push(
            Rule::TerminalMonthMismatch,
            format!("{} / {}", curve.study, curve.arm_label),
            format!("curve ends at month {end} but the risk grid runs to month {last}"),
        );
    }
}

pub fn finalize_arm(curve: &KMCurve, mapping: &ArmMapping, rt: &RiskTable) -> Result<ExportFragment> {
    let mut report = validate_curve(curve);
    report.merge(validate_risk_table(rt));
    let loc = format!("{} / {}", curve.study, curve.arm_label);

    if curve.study != rt.study {
        report.push(
            Rule::UnmatchedArm,
            &loc,
            format!("risk table belongs to study {}", rt.study),
        );
    }
    let arm = match mapping.table_label_for(&curve.arm_label) {
        None => {
            report.push(Rule::UnmatchedArm, &loc, "curve has no mapped risk-table arm");
            None
        }
        Some(label) => match rt.arm(label) {
            None => {
                report.push(
                    Rule::UnmatchedArm,
                    &loc,
                    format!("mapped risk-table arm {label:?} is not in the table"),
                );
                None
            }
            Some(arm) => Some(arm),
        },
    };
    terminal_month_check(curve, &rt.time_grid, &mut report);

    if report.has_errors() {
        return Err(Error::ExportBlocked(report));
    }
    let arm = arm.expect("unmatched arm is an error finding");
    let risk = RiskTable::new(
        rt.study.clone(),
        rt.time_grid.clone(),
        vec![RiskArm::new(curve.arm_label.clone(), arm.counts.clone())],
    );
    Ok(ExportFragment {
        curve: curve.clone(),
        risk,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digitizer::matching::match_arms;
    use crate::model::{CurvePoint, StudyId, CURVE_POINTS};

    fn curve(end: f64) -> KMCurve {
        let points = (0..CURVE_POINTS)
            .map(|i| {
                let t = end * i as f64 / (CURVE_POINTS - 1) as f64;
                CurvePoint::new(t, (-0.03 * t).exp())
            })
            .collect();
        KMCurve::new(StudyId::new("S"), "Nivo + Ipi", points)
    }

    fn table(last: f64) -> RiskTable {
        let grid: Vec<f64> = (0..=((last / 6.0) as usize)).map(|j| 6.0 * j as f64).collect();
        let counts = (0..grid.len()).map(|j| 300 - 20 * j as i64).collect();
        RiskTable::new(StudyId::new("S"), grid, vec![RiskArm::new("NIVO+IPI", counts)])
    }

    fn mapping(rt: &RiskTable) -> ArmMapping {
        match_arms(&["Nivo + Ipi".to_string()], &rt.labels(), None, None).unwrap()
    }

    #[test]
    fn valid_pair_gives_two_fragments() {
        let rt = table(48.0);
        let frag = finalize_arm(&curve(50.0), &mapping(&rt), &rt).unwrap();
        assert_eq!(frag.risk.arms[0].label, "Nivo + Ipi");
        assert_eq!(frag.xy_csv().lines().count(), 2 + CURVE_POINTS);
        assert_eq!(frag.risk_csv().lines().count(), 2 + rt.time_grid.len());
    }

    #[test]
    fn terminal_month_mismatch_blocks() {
        let rt = table(72.0);
        match finalize_arm(&curve(40.0), &mapping(&rt), &rt) {
            Err(Error::ExportBlocked(r)) => {
                assert_eq!(r.count(Rule::TerminalMonthMismatch), 1)
            }
            other => panic!("expected blocked export, got {other:?}"),
        }
        // one grid step of slack
        assert!(finalize_arm(&curve(66.0), &mapping(&rt), &rt).is_ok());
    }

    #[test]
    fn unmatched_arm_blocks() {
        let rt = table(48.0);
        let empty = ArmMapping::default();
        match finalize_arm(&curve(50.0), &empty, &rt) {
            Err(Error::ExportBlocked(r)) => assert!(r.contains(Rule::UnmatchedArm)),
            other => panic!("expected blocked export, got {other:?}"),
        }
    }
}
