//! Domain values shared by every stage of the workbench.
//!
//! Times are months. Survival is a probability in `[0, 1]` in memory and a
//! percentage in files.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of points in a standardized survival trace.
pub const CURVE_POINTS: usize = 500;

/// Persistent study identifier. The subfigure qualifier is kept verbatim so
/// that panels of one publication never collide.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StudyId {
    pub trial_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subfigure_qualifier: Option<String>,
}

impl StudyId {
    pub fn new(trial_name: impl Into<String>) -> Self {
        Self {
            trial_name: trial_name.into(),
            subfigure_qualifier: None,
        }
    }

    pub fn with_qualifier(trial_name: impl Into<String>, qualifier: impl Into<String>) -> Self {
        Self {
            trial_name: trial_name.into(),
            subfigure_qualifier: Some(qualifier.into()),
        }
    }

    /// Rendered form used as the `study_id` column: `name` or `name [qualifier]`.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subfigure_qualifier {
            Some(q) => write!(f, "{} [{}]", self.trial_name, q),
            None => f.write_str(&self.trial_name),
        }
    }
}

impl FromStr for StudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Err(Error::Input("empty study identifier".into()));
        }
        if let Some(body) = s.strip_suffix(']') {
            if let Some(idx) = body.rfind(" [") {
                let name = &body[..idx];
                let qualifier = &body[idx + 2..];
                if !name.is_empty() {
                    return Ok(StudyId::with_qualifier(name, qualifier));
                }
            }
        }
        Ok(StudyId::new(s))
    }
}

/// Study + arm label; the key every file format is aligned on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArmKey {
    pub study: StudyId,
    pub arm: String,
}

impl ArmKey {
    pub fn new(study: StudyId, arm: impl Into<String>) -> Self {
        Self {
            study,
            arm: arm.into(),
        }
    }
}

impl fmt::Display for ArmKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.study, self.arm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: f64,
    /// Probability scale.
    pub survival: f64,
}

impl CurvePoint {
    pub fn new(time: f64, survival: f64) -> Self {
        Self { time, survival }
    }
}

/// A standardized survival trace for one arm. Construction does not enforce
/// the curve invariants; [`crate::validate::validate_curve`] reports on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMCurve {
    pub study: StudyId,
    pub arm_label: String,
    pub points: Vec<CurvePoint>,
}

impl KMCurve {
    pub fn new(study: StudyId, arm_label: impl Into<String>, points: Vec<CurvePoint>) -> Self {
        Self {
            study,
            arm_label: arm_label.into(),
            points,
        }
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn key(&self) -> ArmKey {
        ArmKey::new(self.study.clone(), self.arm_label.clone())
    }

    pub fn end_time(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.time)
    }

    /// Piecewise-linear value at `t`, flat beyond the last point.
    pub fn survival_at(&self, t: f64) -> f64 {
        interpolate(&self.points, t)
    }
}

pub(crate) fn interpolate(points: &[CurvePoint], t: f64) -> f64 {
    match points {
        [] => 1.0,
        [first, ..] if t <= first.time => first.survival,
        _ => {
            let idx = points.partition_point(|p| p.time <= t);
            if idx >= points.len() {
                return points[points.len() - 1].survival;
            }
            let (a, b) = (points[idx - 1], points[idx]);
            let w = (t - a.time) / (b.time - a.time);
            a.survival + w * (b.survival - a.survival)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskArm {
    pub label: String,
    pub counts: Vec<i64>,
}

impl RiskArm {
    pub fn new(label: impl Into<String>, counts: Vec<i64>) -> Self {
        Self {
            label: label.into(),
            counts,
        }
    }
}

/// Numbers at risk on a time grid for the arms of one figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub study: StudyId,
    pub time_grid: Vec<f64>,
    pub arms: Vec<RiskArm>,
}

impl RiskTable {
    pub fn new(study: StudyId, time_grid: Vec<f64>, arms: Vec<RiskArm>) -> Self {
        Self {
            study,
            time_grid,
            arms,
        }
    }

    pub fn arm(&self, label: &str) -> Option<&RiskArm> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn labels(&self) -> Vec<String> {
        self.arms.iter().map(|a| a.label.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpdRecord {
    pub time: f64,
    pub event: bool,
}

impl IpdRecord {
    pub fn event(time: f64) -> Self {
        Self { time, event: true }
    }

    pub fn censored(time: f64) -> Self {
        Self { time, event: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedIPD {
    pub study: StudyId,
    pub arm_label: String,
    pub records: Vec<IpdRecord>,
}

impl ReconstructedIPD {
    pub fn new(study: StudyId, arm_label: impl Into<String>, records: Vec<IpdRecord>) -> Self {
        Self {
            study,
            arm_label: arm_label.into(),
            records,
        }
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn key(&self) -> ArmKey {
        ArmKey::new(self.study.clone(), self.arm_label.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateValue {
    ContinuousMeanSd { mean: f64, sd: f64 },
    ContinuousMedianRange { median: f64, min: f64, max: f64 },
    BinaryProportion { proportion: f64 },
}

impl CovariateValue {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CovariateValue::ContinuousMeanSd { .. } => "mean_sd",
            CovariateValue::ContinuousMedianRange { .. } => "median_range",
            CovariateValue::BinaryProportion { .. } => "proportion",
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, CovariateValue::BinaryProportion { .. })
    }

    pub fn check(&self) -> Result<(), String> {
        match *self {
            CovariateValue::ContinuousMeanSd { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || sd < 0.0 {
                    return Err(format!("invalid mean/sd ({mean}, {sd})"));
                }
            }
            CovariateValue::ContinuousMedianRange { median, min, max } => {
                if !(min <= median && median <= max) {
                    return Err(format!("range violates min <= median <= max: ({median}, {min}, {max})"));
                }
            }
            CovariateValue::BinaryProportion { proportion } => {
                if !(0.0..=1.0).contains(&proportion) {
                    return Err(format!("proportion {proportion} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub name: String,
    #[serde(flatten)]
    pub value: CovariateValue,
}

impl CovariateSummary {
    pub fn mean_sd(name: impl Into<String>, mean: f64, sd: f64) -> Self {
        Self {
            name: name.into(),
            value: CovariateValue::ContinuousMeanSd { mean, sd },
        }
    }

    pub fn median_range(name: impl Into<String>, median: f64, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            value: CovariateValue::ContinuousMedianRange { median, min, max },
        }
    }

    pub fn proportion(name: impl Into<String>, proportion: f64) -> Self {
        Self {
            name: name.into(),
            value: CovariateValue::BinaryProportion { proportion },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineProfile {
    pub study: StudyId,
    pub arm_label: String,
    pub n: u32,
    pub covariates: Vec<CovariateSummary>,
}

impl BaselineProfile {
    pub fn covariate(&self, name: &str) -> Option<&CovariateSummary> {
        self.covariates.iter().find(|c| c.name == name)
    }
}
