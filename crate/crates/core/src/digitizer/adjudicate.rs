//! Cell-wise reconciliation of two extracted copies of one risk table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RiskTable, StudyId};
use crate::report::{Rule, ValidationReport};
use crate::validate::validate_risk_table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    PrimaryExtractor,
    FallbackExtractor,
    Manual,
}

/// One extractor's reading of a table. The payload may break table
/// invariants; that is what adjudication is for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTable {
    pub source_tag: SourceTag,
    pub payload: RiskTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl CandidateTable {
    pub fn new(source_tag: SourceTag, payload: RiskTable) -> Self {
        Self {
            source_tag,
            payload,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Isolated difference of at most one; primary kept.
    MinorIsolated,
    /// Difference larger than one; fallback kept.
    LargeDifference,
    /// Part of a run of three or more adjacent differences; fallback kept.
    DiscrepancyRun,
    /// Two adjacent differences of at most one each; fallback kept.
    AdjacentPair,
    /// Primary breaks the at-risk rules at this cell, fallback does not.
    PrimaryViolation,
    /// Fallback breaks the at-risk rules at this cell, primary does not.
    FallbackViolation,
    /// Both break the rules; needs manual entry.
    Unresolved,
}

impl Resolution {
    pub fn favours_fallback(self) -> bool {
        matches!(
            self,
            Resolution::LargeDifference
                | Resolution::DiscrepancyRun
                | Resolution::AdjacentPair
                | Resolution::PrimaryViolation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiff {
    pub arm: String,
    pub index: usize,
    pub time: f64,
    pub primary: i64,
    pub fallback: i64,
    pub resolved: i64,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDiff {
    pub index: usize,
    pub primary: f64,
    pub fallback: f64,
    pub resolved: f64,
}

/// Everything adjudication changed or could not decide, for human review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationLog {
    pub study: StudyId,
    pub cells: Vec<CellDiff>,
    #[serde(default)]
    pub grid: Vec<GridDiff>,
    #[serde(default)]
    pub report: ValidationReport,
}

impl AdjudicationLog {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty() && self.grid.is_empty()
    }

    pub fn unresolved(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.resolution == Resolution::Unresolved)
            .count()
    }
}

fn violates(row: &[i64], j: usize) -> bool {
    row[j] < 0 || (j > 0 && row[j] > row[j - 1])
}

fn grid_violates(grid: &[f64], j: usize) -> bool {
    !grid[j].is_finite() || (j == 0 && grid[0] != 0.0) || (j > 0 && !(grid[j] > grid[j - 1]))
}

fn resolve_row(
    a: &[i64],
    b: &[i64],
) -> Vec<Option<(i64, Resolution)>> {
    let n = a.len();
    let differs: Vec<bool> = (0..n).map(|j| a[j] != b[j]).collect();
    // length of the maximal run of adjacent discrepant cells containing j
    let mut run_len = vec![0usize; n];
    let mut j = 0;
    while j < n {
        if !differs[j] {
            j += 1;
            continue;
        }
        let start = j;
        while j < n && differs[j] {
            j += 1;
        }
        run_len[start..j].fill(j - start);
    }

    (0..n)
        .map(|j| {
            if !differs[j] {
                return None;
            }
            let (va, vb) = (violates(a, j), violates(b, j));
            let res = match (va, vb) {
                (true, true) => Resolution::Unresolved,
                (true, false) => Resolution::PrimaryViolation,
                (false, true) => Resolution::FallbackViolation,
                (false, false) => {
                    if (a[j] - b[j]).abs() > 1 {
                        Resolution::LargeDifference
                    } else if run_len[j] >= 3 {
                        Resolution::DiscrepancyRun
                    } else if run_len[j] == 2 {
                        Resolution::AdjacentPair
                    } else {
                        Resolution::MinorIsolated
                    }
                }
            };
            let value = if res.favours_fallback() { b[j] } else { a[j] };
            Some((value, res))
        })
        .collect()
}

/// Reconciles a primary and a fallback reading of the same table.
///
/// The output keeps the primary's arm order. Unresolved cells keep the
/// primary value and raise an error finding in the log's report, which also
/// carries the validation of the merged table.
pub fn adjudicate_tables(
    a: &CandidateTable,
    b: &CandidateTable,
) -> Result<(RiskTable, AdjudicationLog)> {
    let (pa, pb) = (&a.payload, &b.payload);
    let n = pa.time_grid.len();
    if pb.time_grid.len() != n {
        return Err(Error::Structure(format!(
            "grid lengths differ: {} vs {}",
            n,
            pb.time_grid.len()
        )));
    }
    let mut la = pa.labels();
    let mut lb = pb.labels();
    la.sort();
    lb.sort();
    if la != lb {
        return Err(Error::Structure(format!(
            "arm sets differ: {:?} vs {:?}",
            pa.labels(),
            pb.labels()
        )));
    }
    if la.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Structure("duplicate arm label in candidate table".into()));
    }
    for arm in pa.arms.iter().chain(&pb.arms) {
        if arm.counts.len() != n {
            return Err(Error::Structure(format!(
                "arm {:?} has {} counts for {} grid times",
                arm.label,
                arm.counts.len(),
                n
            )));
        }
    }

    let mut grid = pa.time_grid.clone();
    let mut grid_diffs = Vec::new();
    for j in 0..n {
        let (ga, gb) = (pa.time_grid[j], pb.time_grid[j]);
        if ga != gb {
            let resolved = if grid_violates(&pa.time_grid, j) && !grid_violates(&pb.time_grid, j) {
                gb
            } else {
                ga
            };
            grid[j] = resolved;
            grid_diffs.push(GridDiff {
                index: j,
                primary: ga,
                fallback: gb,
                resolved,
            });
        }
    }

    let mut report = ValidationReport::new();
    let mut cells = Vec::new();
    let mut arms = Vec::with_capacity(pa.arms.len());
    for arm in &pa.arms {
        let other = pb.arm(&arm.label).expect("arm sets checked above");
        let mut counts = arm.counts.clone();
        for (j, r) in resolve_row(&arm.counts, &other.counts).into_iter().enumerate() {
            let Some((value, resolution)) = r else {
                continue;
            };
            counts[j] = value;
            if resolution == Resolution::Unresolved {
                report.push(
                    Rule::UnresolvedConflict,
                    format!("{} / {} [{j}]", pa.study, arm.label),
                    format!(
                        "both readings break the at-risk rules ({} vs {}); enter the value manually",
                        arm.counts[j], other.counts[j]
                    ),
                );
            }
            cells.push(CellDiff {
                arm: arm.label.clone(),
                index: j,
                time: grid[j],
                primary: arm.counts[j],
                fallback: other.counts[j],
                resolved: value,
                resolution,
            });
        }
        arms.push(crate::model::RiskArm::new(arm.label.clone(), counts));
    }

    let table = RiskTable::new(pa.study.clone(), grid, arms);
    report.merge(validate_risk_table(&table));
    Ok((
        table,
        AdjudicationLog {
            study: pa.study.clone(),
            cells,
            grid: grid_diffs,
            report,
        },
    ))
}
