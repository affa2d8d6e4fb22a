//! Validation findings shared by every checking routine.
//!
//! Each finding carries exactly one [`Rule`]; the rule fixes its severity, so an
//! error-level finding always means the same thing wherever it is raised.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    // risk tables
    NonMonotoneAtRisk,
    RaggedArrays,
    TimeGridOrder,
    NegativeCount,
    DuplicateArm,
    EmptyTable,
    // curves
    CurveStart,
    TimeOrder,
    Monotonicity,
    PointCount,
    SurvivalRange,
    // bundles and export
    UnmatchedArm,
    DuplicateIdentifier,
    TerminalMonthMismatch,
    // adjudication
    UnresolvedConflict,
    // warnings raised while repairing traces
    StartInserted,
    MonotonicityClamped,
    SurvivalClamped,
    NegativeTimeDropped,
    DuplicateTimes,
    // similarity
    UnboundedDifference,
}

impl Rule {
    pub fn severity(self) -> Severity {
        use Rule::*;
        match self {
            StartInserted | MonotonicityClamped | SurvivalClamped | NegativeTimeDropped
            | DuplicateTimes | UnboundedDifference => Severity::Warning,
            _ => Severity::Error,
        }
    }

    pub fn code(self) -> &'static str {
        use Rule::*;
        match self {
            NonMonotoneAtRisk => "non-monotone-at-risk",
            RaggedArrays => "ragged-arrays",
            TimeGridOrder => "time-grid-order",
            NegativeCount => "negative-count",
            DuplicateArm => "duplicate-arm",
            EmptyTable => "empty-table",
            CurveStart => "curve-start",
            TimeOrder => "time-order",
            Monotonicity => "monotonicity",
            PointCount => "point-count",
            SurvivalRange => "survival-range",
            UnmatchedArm => "unmatched-arm",
            DuplicateIdentifier => "duplicate-identifier",
            TerminalMonthMismatch => "terminal-month-mismatch",
            UnresolvedConflict => "unresolved-conflict",
            StartInserted => "start-inserted",
            MonotonicityClamped => "monotonicity-clamped",
            SurvivalClamped => "survival-clamped",
            NegativeTimeDropped => "negative-time-dropped",
            DuplicateTimes => "duplicate-times",
            UnboundedDifference => "unbounded-difference",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: Rule,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rule: Rule, location: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: rule.severity(),
            code: rule,
            location: location.into(),
            message: message.into(),
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
    }

    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    /// Export is blocked iff this returns true.
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn error_count(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .count()
    }

    pub fn warning_count(&self) -> usize {
        self.findings.len() - self.error_count()
    }

    pub fn count(&self, rule: Rule) -> usize {
        self.findings.iter().filter(|f| f.code == rule).count()
    }

    pub fn contains(&self, rule: Rule) -> bool {
        self.count(rule) > 0
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "ok: no findings");
        }
        for finding in &self.findings {
            let sev = match finding.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(
                f,
                "{sev}[{}] {}: {}",
                finding.code, finding.location, finding.message
            )?;
        }
        Ok(())
    }
}
