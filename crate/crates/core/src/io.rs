//! Versioned CSV/JSON file formats and the on-disk workspace.
//!
//! Every CSV file starts with the schema line `# km-lead v1`, followed by a
//! header row. Values use `.` as decimal separator and shortest round-trip
//! float formatting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digitizer::{AdjudicationLog, CalibrationAnchors};
use crate::error::{Error, Result};
use crate::reconstruct::TimeGrid;
use crate::synthesis::PredictiveEnsemble;
use crate::model::{
    BaselineProfile, CovariateSummary, CovariateValue, CurvePoint, IpdRecord, KMCurve,
    ReconstructedIPD, RiskArm, RiskTable, StudyId,
};

pub const SCHEMA_LINE: &str = "# km-lead v1";
pub const SCHEMA_TAG: &str = "km-lead v1";

pub const XY_COLUMNS: [&str; 4] = ["study_id", "arm", "time_months", "survival_pct"];
pub const RISK_COLUMNS: [&str; 4] = ["study_id", "arm", "time_months", "n_risk"];
pub const IPD_COLUMNS: [&str; 4] = ["study_id", "arm", "time_months", "event"];
pub const PREDICTIVE_COLUMNS: [&str; 3] = ["draw", "t", "survival"];
pub const BASELINE_COLUMNS: [&str; 8] = ["study_id", "arm", "n", "covariate", "kind", "v1", "v2", "v3"];

pub const XY_FILE: &str = "xy.csv";
pub const RISK_FILE: &str = "risk_table.csv";
pub const IPD_FILE: &str = "ipd.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const WORKSPACE_FILE: &str = "workspace.json";

/// Calibration anchors recorded for one study (optionally one arm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub study: StudyId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<String>,
    pub anchors: CalibrationAnchors,
}

/// Session container: everything a digitization session produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub schema: String,
    #[serde(default)]
    pub curves: Vec<KMCurve>,
    #[serde(default)]
    pub risk_tables: Vec<RiskTable>,
    #[serde(default)]
    pub ipd: Vec<ReconstructedIPD>,
    #[serde(default)]
    pub baselines: Vec<BaselineProfile>,
    #[serde(default)]
    pub calibrations: Vec<CalibrationRecord>,
    #[serde(default)]
    pub adjudications: Vec<AdjudicationLog>,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            schema: SCHEMA_TAG.to_string(),
            curves: Vec::new(),
            risk_tables: Vec::new(),
            ipd: Vec::new(),
            baselines: Vec::new(),
            calibrations: Vec::new(),
            adjudications: Vec::new(),
        }
    }
}

pub fn write_workspace(ws: &Workspace, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
    write_file(&dir.join(XY_FILE), &render_xy(&ws.curves))?;
    write_file(&dir.join(RISK_FILE), &render_risk_tables(&ws.risk_tables))?;
    write_file(&dir.join(IPD_FILE), &render_ipd(&ws.ipd))?;
    write_file(&dir.join(BASELINE_FILE), &render_baseline(&ws.baselines))?;
    write_file(&dir.join(WORKSPACE_FILE), &workspace_to_json(ws)?)?;
    Ok(())
}

/// Reads `workspace.json` when present; otherwise assembles a workspace from
/// whichever CSV files exist in `dir`.
pub fn read_workspace(dir: &Path) -> Result<Workspace> {
    let json_path = dir.join(WORKSPACE_FILE);
    if json_path.exists() {
        let text = read_file(&json_path)?;
        return workspace_from_json(&text, &json_path.display().to_string());
    }
    let mut ws = Workspace::default();
    let xy = dir.join(XY_FILE);
    if xy.exists() {
        ws.curves = read_xy(&xy)?;
    }
    let rt = dir.join(RISK_FILE);
    if rt.exists() {
        ws.risk_tables = read_risk_tables(&rt)?;
    }
    let ipd = dir.join(IPD_FILE);
    if ipd.exists() {
        ws.ipd = read_ipd(&ipd)?;
    }
    let baseline = dir.join(BASELINE_FILE);
    if baseline.exists() {
        ws.baselines = read_baseline(&baseline)?;
    }
    Ok(ws)
}

pub fn workspace_to_json(ws: &Workspace) -> Result<String> {
    let mut s = serde_json::to_string_pretty(ws)?;
    s.push('\n');
    Ok(s)
}

pub fn workspace_from_json(text: &str, path: &str) -> Result<Workspace> {
    let ws: Workspace = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_string(),
        line: e.line() as u64,
        column: e.column() as u64,
        message: e.to_string(),
    })?;
    if ws.schema != SCHEMA_TAG {
        return Err(Error::Schema {
            path: path.to_string(),
            found: ws.schema,
        });
    }
    Ok(ws)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display(), e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path.display(), e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))
}

// ---------------------------------------------------------------------------
// writing

pub(crate) fn csv_text<I>(columns: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = Vec::new();
    writeln!(out, "{SCHEMA_LINE}").expect("write to vec");
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut out);
        w.write_record(columns).expect("write to vec");
        for row in rows {
            w.write_record(&row).expect("write to vec");
        }
        w.flush().expect("write to vec");
    }
    String::from_utf8(out).expect("csv output is utf-8")
}

pub fn xy_rows(c: &KMCurve) -> impl Iterator<Item = Vec<String>> + '_ {
    let id = c.study.render();
    c.points.iter().map(move |p| {
        vec![
            id.clone(),
            c.arm_label.clone(),
            p.time.to_string(),
            (p.survival * 100.0).to_string(),
        ]
    })
}

pub fn risk_rows(rt: &RiskTable) -> impl Iterator<Item = Vec<String>> + '_ {
    let id = rt.study.render();
    rt.arms.iter().flat_map(move |arm| {
        let id = id.clone();
        arm.counts
            .iter()
            .zip(&rt.time_grid)
            .map(move |(n, t)| vec![id.clone(), arm.label.clone(), t.to_string(), n.to_string()])
    })
}

pub fn render_xy(curves: &[KMCurve]) -> String {
    csv_text(&XY_COLUMNS, curves.iter().flat_map(xy_rows))
}

pub fn render_risk_tables(tables: &[RiskTable]) -> String {
    csv_text(&RISK_COLUMNS, tables.iter().flat_map(risk_rows))
}

pub fn render_ipd(ipd: &[ReconstructedIPD]) -> String {
    csv_text(
        &IPD_COLUMNS,
        ipd.iter().flat_map(|arm| {
            let id = arm.study.render();
            arm.records.iter().map(move |r| {
                vec![
                    id.clone(),
                    arm.arm_label.clone(),
                    r.time.to_string(),
                    if r.event { "1" } else { "0" }.to_string(),
                ]
            })
        }),
    )
}

pub fn render_baseline(profiles: &[BaselineProfile]) -> String {
    csv_text(
        &BASELINE_COLUMNS,
        profiles.iter().flat_map(|p| {
            let id = p.study.render();
            p.covariates.iter().map(move |c| {
                let (v1, v2, v3) = match c.value {
                    CovariateValue::ContinuousMeanSd { mean, sd } => {
                        (mean.to_string(), sd.to_string(), String::new())
                    }
                    CovariateValue::ContinuousMedianRange { median, min, max } => {
                        (median.to_string(), min.to_string(), max.to_string())
                    }
                    CovariateValue::BinaryProportion { proportion } => {
                        (proportion.to_string(), String::new(), String::new())
                    }
                };
                vec![
                    id.clone(),
                    p.arm_label.clone(),
                    p.n.to_string(),
                    c.name.clone(),
                    c.value.kind_name().to_string(),
                    v1,
                    v2,
                    v3,
                ]
            })
        }),
    )
}

// ---------------------------------------------------------------------------
// reading

/// One data row with its 1-based file line.
struct Row {
    line: u64,
    fields: Vec<String>,
}

struct CsvFile<'a> {
    path: &'a str,
    rows: Vec<Row>,
}

impl CsvFile<'_> {
    fn err(&self, line: u64, column: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line,
            column,
            message: message.into(),
        }
    }
}

fn parse_csv<'a>(text: &str, path: &'a str, columns: &[&str]) -> Result<CsvFile<'a>> {
    let (first, body) = match text.split_once('\n') {
        Some((first, body)) => (first.trim_end_matches('\r'), body),
        None => (text.trim_end_matches('\r'), ""),
    };
    if first.trim() != SCHEMA_LINE {
        return Err(Error::Schema {
            path: path.to_string(),
            found: first.to_string(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != columns {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 2,
            column: 1,
            message: format!("expected columns {columns:?}, found {found:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line()) + 1;
        rows.push(Row {
            line,
            fields: rec.iter().map(|f| f.trim().to_string()).collect(),
        });
    }
    Ok(CsvFile { path, rows })
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line()) + 1;
    Error::Parse {
        path: path.to_string(),
        line,
        column: 1,
        message: e.to_string(),
    }
}

fn field_f64(file: &CsvFile, row: &Row, col: usize) -> Result<f64> {
    let raw = &row.fields[col];
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| file.err(row.line, col as u64 + 1, format!("not a finite number: {raw:?}")))
}

fn field_opt_f64(file: &CsvFile, row: &Row, col: usize) -> Result<Option<f64>> {
    if row.fields[col].is_empty() {
        Ok(None)
    } else {
        field_f64(file, row, col).map(Some)
    }
}

fn field_study(file: &CsvFile, row: &Row) -> Result<StudyId> {
    row.fields[0]
        .parse()
        .map_err(|_| file.err(row.line, 1, "empty study_id"))
}

fn field_arm(file: &CsvFile, row: &Row) -> Result<String> {
    let arm = &row.fields[1];
    if arm.is_empty() {
        return Err(file.err(row.line, 2, "empty arm label"));
    }
    Ok(arm.clone())
}

/// Groups rows by (study, arm) preserving first-appearance order.
fn group_by_arm<T>(
    file: &CsvFile,
    mut item: impl FnMut(&Row) -> Result<T>,
) -> Result<Vec<(StudyId, String, Vec<(u64, T)>)>> {
    let mut order: Vec<(StudyId, String, Vec<(u64, T)>)> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for row in &file.rows {
        let study = field_study(file, row)?;
        let arm = field_arm(file, row)?;
        let value = item(row)?;
        let key = (study.render(), arm.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            order.push((study, arm, Vec::new()));
            order.len() - 1
        });
        order[slot].2.push((row.line, value));
    }
    Ok(order)
}

pub fn parse_xy(text: &str, path: &str) -> Result<Vec<KMCurve>> {
    let file = parse_csv(text, path, &XY_COLUMNS)?;
    let groups = group_by_arm(&file, |row| {
        let t = field_f64(&file, row, 2)?;
        if t < 0.0 {
            return Err(file.err(row.line, 3, format!("negative time {t}")));
        }
        let s = field_f64(&file, row, 3)?;
        if !(0.0..=100.0).contains(&s) {
            return Err(file.err(row.line, 4, format!("survival {s} outside [0, 100]")));
        }
        Ok(CurvePoint::new(t, s / 100.0))
    })?;
    Ok(groups
        .into_iter()
        .map(|(study, arm, pts)| KMCurve::new(study, arm, pts.into_iter().map(|(_, p)| p).collect()))
        .collect())
}

pub fn parse_risk_tables(text: &str, path: &str) -> Result<Vec<RiskTable>> {
    let file = parse_csv(text, path, &RISK_COLUMNS)?;
    let groups = group_by_arm(&file, |row| {
        let t = field_f64(&file, row, 2)?;
        let raw = &row.fields[3];
        let n: i64 = raw
            .parse()
            .map_err(|_| file.err(row.line, 4, format!("not an integer count: {raw:?}")))?;
        Ok((t, n))
    })?;

    let mut tables: Vec<RiskTable> = Vec::new();
    // (line, time) per arm, parallel to `tables[i].arms`
    let mut arm_times: Vec<Vec<Vec<(u64, f64)>>> = Vec::new();
    for (study, arm, cells) in groups {
        let idx = match tables.iter().position(|t| t.study.render() == study.render()) {
            Some(i) => i,
            None => {
                tables.push(RiskTable::new(study, Vec::new(), Vec::new()));
                arm_times.push(Vec::new());
                tables.len() - 1
            }
        };
        let times: Vec<(u64, f64)> = cells.iter().map(|(l, (t, _))| (*l, *t)).collect();
        let table = &mut tables[idx];
        table.arms.push(RiskArm::new(arm, cells.iter().map(|(_, (_, n))| *n).collect()));
        if times.len() > table.time_grid.len() {
            table.time_grid = times.iter().map(|(_, t)| *t).collect();
        }
        arm_times[idx].push(times);
    }
    // each arm's times must be a prefix of its study's grid
    for (table, arms) in tables.iter().zip(&arm_times) {
        for (arm, times) in table.arms.iter().zip(arms) {
            for (j, &(line, t)) in times.iter().enumerate() {
                if t != table.time_grid[j] {
                    return Err(file.err(
                        line,
                        3,
                        format!(
                            "arm {:?} time {t} does not match study grid time {}",
                            arm.label, table.time_grid[j]
                        ),
                    ));
                }
            }
        }
    }
    Ok(tables)
}

pub fn parse_ipd(text: &str, path: &str) -> Result<Vec<ReconstructedIPD>> {
    let file = parse_csv(text, path, &IPD_COLUMNS)?;
    let groups = group_by_arm(&file, |row| {
        let t = field_f64(&file, row, 2)?;
        if t <= 0.0 {
            return Err(file.err(row.line, 3, format!("follow-up time must be > 0, found {t}")));
        }
        let event = match row.fields[3].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(file.err(row.line, 4, format!("event must be 0 or 1, found {other:?}"))),
        };
        Ok(IpdRecord { time: t, event })
    })?;
    Ok(groups
        .into_iter()
        .map(|(study, arm, recs)| {
            ReconstructedIPD::new(study, arm, recs.into_iter().map(|(_, r)| r).collect())
        })
        .collect())
}

pub fn parse_baseline(text: &str, path: &str) -> Result<Vec<BaselineProfile>> {
    let file = parse_csv(text, path, &BASELINE_COLUMNS)?;
    let groups = group_by_arm(&file, |row| {
        let raw_n = &row.fields[2];
        let n: u32 = raw_n
            .parse()
            .map_err(|_| file.err(row.line, 3, format!("not a sample size: {raw_n:?}")))?;
        let name = row.fields[3].clone();
        if name.is_empty() {
            return Err(file.err(row.line, 4, "empty covariate name"));
        }
        let v1 = field_opt_f64(&file, row, 5)?;
        let v2 = field_opt_f64(&file, row, 6)?;
        let v3 = field_opt_f64(&file, row, 7)?;
        let missing = |col: u64| file.err(row.line, col, "missing value for covariate kind");
        let value = match row.fields[4].as_str() {
            "mean_sd" => CovariateValue::ContinuousMeanSd {
                mean: v1.ok_or_else(|| missing(6))?,
                sd: v2.ok_or_else(|| missing(7))?,
            },
            "median_range" => CovariateValue::ContinuousMedianRange {
                median: v1.ok_or_else(|| missing(6))?,
                min: v2.ok_or_else(|| missing(7))?,
                max: v3.ok_or_else(|| missing(8))?,
            },
            "proportion" => CovariateValue::BinaryProportion {
                proportion: v1.ok_or_else(|| missing(6))?,
            },
            other => {
                return Err(file.err(row.line, 5, format!("unknown covariate kind {other:?}")));
            }
        };
        value.check().map_err(|m| file.err(row.line, 6, m))?;
        Ok((n, CovariateSummary { name, value }))
    })?;

    let mut profiles = Vec::new();
    for (study, arm, rows) in groups {
        let n = rows[0].1 .0;
        let mut covariates: Vec<CovariateSummary> = Vec::new();
        for (line, (row_n, cov)) in rows {
            if row_n != n {
                return Err(file.err(line, 3, format!("sample size {row_n} differs from {n} earlier in arm")));
            }
            if covariates.iter().any(|c| c.name == cov.name) {
                return Err(file.err(line, 4, format!("duplicate covariate {:?}", cov.name)));
            }
            covariates.push(cov);
        }
        profiles.push(BaselineProfile {
            study,
            arm_label: arm,
            n,
            covariates,
        });
    }
    Ok(profiles)
}

/// Reads `draw,t,survival` rows back into an ensemble; hazards are
/// recovered from consecutive survival ratios.
pub fn parse_predictive(text: &str, path: &str) -> Result<PredictiveEnsemble> {
    let file = parse_csv(text, path, &PREDICTIVE_COLUMNS)?;
    let mut curves: Vec<Vec<f64>> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut current: Option<&str> = None;
    let mut k = 0;
    for row in &file.rows {
        let t = field_f64(&file, row, 1)?;
        let s = field_f64(&file, row, 2)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(file.err(row.line, 3, format!("survival {s} outside [0, 1]")));
        }
        if current != Some(row.fields[0].as_str()) {
            if !curves.is_empty() && k != times.len() {
                return Err(file.err(row.line, 1, "draws have different numbers of time points"));
            }
            current = Some(row.fields[0].as_str());
            curves.push(Vec::with_capacity(times.len()));
            k = 0;
        }
        if curves.len() == 1 {
            times.push(t);
        } else if times.get(k) != Some(&t) {
            return Err(file.err(row.line, 2, format!("time {t} does not match the first draw's grid")));
        }
        curves.last_mut().expect("pushed above").push(s);
        k += 1;
    }
    if curves.is_empty() {
        return Err(file.err(2, 1, "no predictive draws"));
    }
    if k != times.len() {
        return Err(file.err(0, 1, "last draw is incomplete"));
    }
    let grid = TimeGrid::new(times).map_err(|e| file.err(0, 2, e.to_string()))?;
    let hazards = curves
        .iter()
        .map(|c| {
            let mut prev = 1.0;
            c.iter()
                .map(|&s| {
                    let h = if prev > 0.0 { 1.0 - s / prev } else { 0.0 };
                    prev = s;
                    h
                })
                .collect()
        })
        .collect();
    Ok(PredictiveEnsemble { grid, curves, hazards })
}

pub fn read_predictive(path: &Path) -> Result<PredictiveEnsemble> {
    parse_predictive(&read_file(path)?, &path.display().to_string())
}

pub fn read_xy(path: &Path) -> Result<Vec<KMCurve>> {
    parse_xy(&read_file(path)?, &path.display().to_string())
}

pub fn read_risk_tables(path: &Path) -> Result<Vec<RiskTable>> {
    parse_risk_tables(&read_file(path)?, &path.display().to_string())
}

pub fn read_ipd(path: &Path) -> Result<Vec<ReconstructedIPD>> {
    parse_ipd(&read_file(path)?, &path.display().to_string())
}

pub fn read_baseline(path: &Path) -> Result<Vec<BaselineProfile>> {
    parse_baseline(&read_file(path)?, &path.display().to_string())
}
