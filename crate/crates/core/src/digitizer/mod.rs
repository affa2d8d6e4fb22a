//! From figure pixels to validated curve and risk-table files.

mod adjudicate;
mod affine;
mod export;
mod matching;
mod standardize;

pub use adjudicate::{
    adjudicate_tables, AdjudicationLog, CandidateTable, CellDiff, GridDiff, Resolution, SourceTag,
};
pub use affine::{solve_affine, transform_trace, AffineMap, CalibrationAnchors, PixelPoint};
pub use export::{finalize_arm, terminal_month_check, ExportFragment};
pub use matching::{
    levenshtein, match_arms, normalize_label, ArmMapping, ArmPair, MatchMethod, FUZZY_LENGTH_GAP,
    FUZZY_SIMILARITY,
};
pub use standardize::{standardize_curve, MONOTONE_TOLERANCE_PCT};

use serde::{Deserialize, Serialize};

/// A traced curve as posted by the tracing UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceUpload {
    pub study_id: String,
    pub arm: String,
    pub pixels: Vec<PixelPoint>,
}
