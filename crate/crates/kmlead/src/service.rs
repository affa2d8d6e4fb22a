//! HTTP service behind the digitization UI.
//!
//! Each study is a session persisted as `<dir>/<id>/session.json`, with
//! figure blobs under `figures/` and exported files next to it. Writes to a
//! study are serialized by its own lock; reads clone an immutable snapshot.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use kmlead_core::digitizer::{
    adjudicate_tables, finalize_arm, match_arms, solve_affine, standardize_curve, transform_trace,
    AdjudicationLog, AffineMap, ArmMapping, CalibrationAnchors, CandidateTable, ExportFragment, PixelPoint,
};
use kmlead_core::io::{
    render_xy, workspace_from_json, write_file, write_workspace, CalibrationRecord, Workspace,
    XY_FILE,
};
use kmlead_core::model::{KMCurve, RiskTable, StudyId};
use kmlead_core::report::ValidationReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

pub const SESSION_FILE: &str = "session.json";
const FIGURE_DIR: &str = "figures";

/// Per-arm progress; each stage requires the one before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Created,
    Uploaded,
    Calibrated,
    Traced,
    Matched,
    Validated,
    Exported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRecord {
    pub sha256: String,
    pub bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmSession {
    pub anchors: Option<CalibrationAnchors>,
    pub trace: Option<Vec<PixelPoint>>,
    pub curve: Option<KMCurve>,
    #[serde(default)]
    pub trace_report: ValidationReport,
    /// Set once a risk table was submitted through this arm.
    #[serde(default)]
    pub wants_table: bool,
    /// User-confirmed risk-table label, if any.
    pub confirmed: Option<String>,
    pub table_label: Option<String>,
    #[serde(default)]
    pub exported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableState {
    pub candidates: Vec<CandidateTable>,
    pub table: RiskTable,
    pub log: Option<AdjudicationLog>,
    pub mapping: ArmMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub id: String,
    pub study: StudyId,
    #[serde(default)]
    pub figures: Vec<FigureRecord>,
    #[serde(default)]
    pub arms: BTreeMap<String, ArmSession>,
    #[serde(default)]
    pub table: Option<TableState>,
}

impl StudySession {
    fn new(id: String, study: StudyId) -> Self {
        Self {
            id,
            study,
            figures: Vec::new(),
            arms: BTreeMap::new(),
            table: None,
        }
    }

    pub fn stage(&self, arm: &str) -> Stage {
        let Some(a) = self.arms.get(arm) else {
            return if self.figures.is_empty() {
                Stage::Created
            } else {
                Stage::Uploaded
            };
        };
        if a.exported {
            Stage::Exported
        } else if a.table_label.is_some() {
            if self.gate(arm).is_ok_and(|r| !r.has_errors()) {
                Stage::Validated
            } else {
                Stage::Matched
            }
        } else if a.curve.is_some() {
            Stage::Traced
        } else if a.anchors.is_some() {
            Stage::Calibrated
        } else if !self.figures.is_empty() {
            Stage::Uploaded
        } else {
            Stage::Created
        }
    }

    /// Export check for a matched arm: the final gate plus anything the
    /// adjudication left unresolved.
    fn gate(&self, arm: &str) -> Result<ValidationReport, ApiError> {
        let (Some(a), Some(ts)) = (self.arms.get(arm), &self.table) else {
            return Err(ApiError::conflict(format!("arm {arm:?} has no matched risk table")));
        };
        let curve = a
            .curve
            .as_ref()
            .ok_or_else(|| ApiError::conflict(format!("arm {arm:?} has no trace")))?;
        let mut report = match finalize_arm(curve, &ts.mapping, &ts.table) {
            Ok(frag) => frag.report,
            Err(kmlead_core::Error::ExportBlocked(r)) => r,
            Err(e) => return Err(ApiError::unprocessable(e.to_string())),
        };
        if let Some(log) = &ts.log {
            report.merge(log.report.clone());
        }
        Ok(report)
    }

    fn fragment(&self, arm: &str) -> Option<ExportFragment> {
        let a = self.arms.get(arm)?;
        let ts = self.table.as_ref()?;
        finalize_arm(a.curve.as_ref()?, &ts.mapping, &ts.table).ok()
    }

    /// Curves and a single risk table of every exported arm.
    fn workspace(&self) -> Workspace {
        let mut ws = Workspace::default();
        let mut table: Option<RiskTable> = None;
        for (label, a) in &self.arms {
            if !a.exported {
                continue;
            }
            let Some(frag) = self.fragment(label) else {
                continue;
            };
            ws.curves.push(frag.curve);
            match &mut table {
                None => table = Some(frag.risk),
                Some(t) => t.arms.extend(frag.risk.arms),
            }
            if let Some(anchors) = a.anchors {
                ws.calibrations.push(CalibrationRecord {
                    study: self.study.clone(),
                    arm: Some(label.clone()),
                    anchors,
                });
            }
        }
        ws.risk_tables.extend(table);
        if let Some(log) = self.table.as_ref().and_then(|t| t.log.clone()) {
            ws.adjudications.push(log);
        }
        ws
    }
}

struct StudyEntry {
    write: Mutex<()>,
    snapshot: RwLock<Arc<StudySession>>,
}

impl StudyEntry {
    fn new(session: StudySession) -> Arc<Self> {
        Arc::new(Self {
            write: Mutex::new(()),
            snapshot: RwLock::new(Arc::new(session)),
        })
    }

    fn snapshot(&self) -> Arc<StudySession> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

#[derive(Clone)]
pub struct AppState {
    dir: PathBuf,
    studies: Arc<RwLock<BTreeMap<String, Arc<StudyEntry>>>>,
}

impl AppState {
    /// Opens `dir`, loading every session found in its subdirectories.
    pub fn open(dir: impl Into<PathBuf>) -> kmlead_core::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let mut studies = BTreeMap::new();
        let entries = std::fs::read_dir(&dir).map_err(|e| io_error(&dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path().join(SESSION_FILE)))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            let session: StudySession = serde_json::from_str(&text)?;
            studies.insert(session.id.clone(), StudyEntry::new(session));
        }
        Ok(Self {
            dir,
            studies: Arc::new(RwLock::new(studies)),
        })
    }

    fn entry(&self, id: &str) -> Result<Arc<StudyEntry>, ApiError> {
        self.studies
            .read()
            .expect("studies lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown study {id:?}")))
    }

    fn study_dir(&self, id: &str) -> PathBuf {
        self.dir.join(id)
    }

    fn persist(&self, session: &StudySession) -> Result<(), ApiError> {
        let mut json = serde_json::to_string_pretty(session).map_err(ApiError::internal)?;
        json.push('\n');
        write_file(&self.study_dir(&session.id).join(SESSION_FILE), &json).map_err(ApiError::internal)
    }

    /// Applies `f` to a copy of the session under the study's write lock.
    /// Nothing is stored unless `f` succeeds and the session changed.
    async fn update<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut StudySession) -> Result<T, ApiError>,
    ) -> Result<(Arc<StudySession>, T), ApiError> {
        let entry = self.entry(id)?;
        let _guard = entry.write.lock().await;
        let old = entry.snapshot();
        let mut next = (*old).clone();
        let out = f(&mut next)?;
        if next == *old {
            return Ok((old, out));
        }
        self.persist(&next)?;
        let next = Arc::new(next);
        *entry.snapshot.write().expect("snapshot lock") = next.clone();
        Ok((next, out))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> kmlead_core::Error {
    kmlead_core::Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    report: Option<ValidationReport>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            report: None,
        }
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }

    fn conflict(m: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, m)
    }

    fn unprocessable(m: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, m)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }

    fn blocked(report: ValidationReport) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: format!("export blocked by {} error finding(s)", report.error_count()),
            report: Some(report),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body {
            error: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            report: Option<ValidationReport>,
        }
        let body = Body {
            error: self.message,
            report: self.report,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/studies", post(create_study).get(list_studies))
        .route("/studies/{id}", get(get_study))
        .route("/studies/{id}/figures", post(upload_figure))
        .route("/studies/{id}/arms/{arm}/anchors", put(put_anchors))
        .route("/studies/{id}/arms/{arm}/trace", put(put_trace))
        .route("/studies/{id}/arms/{arm}/risk_table", put(put_risk_table))
        .route("/studies/{id}/arms/{arm}/validation", get(get_validation))
        .route("/studies/{id}/arms/{arm}/export", post(post_export))
        .route("/studies/{id}/export/xy.csv", get(get_export_xy))
        .with_state(state)
}

/// Lowercase ASCII alphanumerics with single dashes.
pub fn slug(study: &StudyId) -> String {
    let mut out = String::new();
    for ch in study.render().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

#[derive(Debug, Deserialize)]
pub struct CreateStudy {
    pub trial_name: String,
    #[serde(default)]
    pub subfigure_qualifier: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StudyCreated {
    pub id: String,
    pub study: StudyId,
}

async fn create_study(State(app): State<AppState>, Json(req): Json<CreateStudy>) -> ApiResult<Response> {
    if req.trial_name.trim().is_empty() {
        return Err(ApiError::unprocessable("trial_name is empty"));
    }
    let study = match req.subfigure_qualifier.filter(|q| !q.trim().is_empty()) {
        Some(q) => StudyId::with_qualifier(req.trial_name.trim(), q.trim()),
        None => StudyId::new(req.trial_name.trim()),
    };
    let id = slug(&study);
    if id.is_empty() {
        return Err(ApiError::unprocessable("trial_name has no usable characters"));
    }
    let body = StudyCreated {
        id: id.clone(),
        study: study.clone(),
    };
    let mut studies = app.studies.write().expect("studies lock");
    if let Some(existing) = studies.get(&id) {
        if existing.snapshot().study != study {
            return Err(ApiError::conflict(format!("id {id:?} is taken by another study")));
        }
        return Ok((StatusCode::OK, Json(body)).into_response());
    }
    let session = StudySession::new(id.clone(), study);
    app.persist(&session)?;
    studies.insert(id, StudyEntry::new(session));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StudyStatus {
    pub id: String,
    pub study: StudyId,
    pub figures: Vec<FigureRecord>,
    pub arms: BTreeMap<String, Stage>,
}

fn status(s: &StudySession) -> StudyStatus {
    StudyStatus {
        id: s.id.clone(),
        study: s.study.clone(),
        figures: s.figures.clone(),
        arms: s.arms.keys().map(|a| (a.clone(), s.stage(a))).collect(),
    }
}

async fn list_studies(State(app): State<AppState>) -> Json<Vec<StudyStatus>> {
    let entries: Vec<Arc<StudyEntry>> = app.studies.read().expect("studies lock").values().cloned().collect();
    Json(entries.iter().map(|e| status(&e.snapshot())).collect())
}

async fn get_study(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StudyStatus>> {
    Ok(Json(status(&app.entry(&id)?.snapshot())))
}

async fn upload_figure(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<FigureRecord>> {
    if body.is_empty() {
        return Err(ApiError::unprocessable("figure body is empty"));
    }
    let record = FigureRecord {
        sha256: hex::encode(Sha256::digest(&body)),
        bytes: body.len(),
        content_type: headers
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    };
    let blob = app
        .study_dir(&id)
        .join(FIGURE_DIR)
        .join(format!("{}.bin", record.sha256));
    let (_, record) = app
        .update(&id, |s| {
            if let Some(existing) = s.figures.iter().find(|f| f.sha256 == record.sha256) {
                return Ok(existing.clone());
            }
            if let Some(parent) = blob.parent() {
                std::fs::create_dir_all(parent).map_err(ApiError::internal)?;
            }
            std::fs::write(&blob, &body).map_err(ApiError::internal)?;
            s.figures.push(record.clone());
            Ok(record)
        })
        .await?;
    Ok(Json(record))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArmResponse {
    pub arm: String,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<AffineMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
}

/// Re-derives the arm's curve from its stored pixels and anchors.
fn retrace(study: &StudyId, label: &str, arm: &mut ArmSession) -> ApiResult<()> {
    let (Some(anchors), Some(pixels)) = (&arm.anchors, &arm.trace) else {
        arm.curve = None;
        arm.trace_report = ValidationReport::new();
        return Ok(());
    };
    let map = solve_affine(anchors).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let data = transform_trace(pixels, &map).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let (curve, report) =
        standardize_curve(study.clone(), label, &data).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    arm.curve = Some(curve);
    arm.trace_report = report;
    arm.exported = false;
    Ok(())
}

async fn put_anchors(
    State(app): State<AppState>,
    UrlPath((id, arm)): UrlPath<(String, String)>,
    Json(anchors): Json<CalibrationAnchors>,
) -> ApiResult<Json<ArmResponse>> {
    let map = solve_affine(&anchors).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let (s, ()) = app
        .update(&id, |s| {
            if s.figures.is_empty() {
                return Err(ApiError::conflict("upload a figure before calibrating"));
            }
            let study = s.study.clone();
            let a = s.arms.entry(arm.clone()).or_default();
            if a.anchors == Some(anchors) {
                return Ok(());
            }
            a.anchors = Some(anchors);
            retrace(&study, &arm, a)
        })
        .await?;
    Ok(Json(ArmResponse {
        stage: s.stage(&arm),
        arm,
        map: Some(map),
        report: None,
    }))
}

#[derive(Debug, Deserialize)]
pub struct TraceBody {
    pub pixels: Vec<PixelPoint>,
}

async fn put_trace(
    State(app): State<AppState>,
    UrlPath((id, arm)): UrlPath<(String, String)>,
    Json(body): Json<TraceBody>,
) -> ApiResult<Json<ArmResponse>> {
    let (s, ()) = app
        .update(&id, |s| {
            let study = s.study.clone();
            let a = s
                .arms
                .get_mut(&arm)
                .filter(|a| a.anchors.is_some())
                .ok_or_else(|| ApiError::conflict(format!("calibrate arm {arm:?} before tracing")))?;
            if a.trace.as_ref() == Some(&body.pixels) {
                return Ok(());
            }
            a.trace = Some(body.pixels);
            retrace(&study, &arm, a)
        })
        .await?;
    let a = &s.arms[&arm];
    Ok(Json(ArmResponse {
        stage: s.stage(&arm),
        report: Some(a.trace_report.clone()),
        arm,
        map: None,
    }))
}

#[derive(Debug, Deserialize)]
pub struct RiskTableBody {
    /// One table, or a primary and a fallback reading to adjudicate.
    pub candidates: Vec<CandidateTable>,
    /// Confirms which table arm this curve belongs to.
    #[serde(default)]
    pub table_arm: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RiskTableResponse {
    pub arm: String,
    pub stage: Stage,
    pub table: RiskTable,
    pub log: Option<AdjudicationLog>,
    pub mapping: ArmMapping,
}

/// Joint matching of every arm that asked for a table.
fn rematch(s: &mut StudySession) -> ApiResult<()> {
    let Some(ts) = &mut s.table else {
        return Ok(());
    };
    let curves: Vec<String> = s
        .arms
        .iter()
        .filter(|(_, a)| a.wants_table)
        .map(|(l, _)| l.clone())
        .collect();
    let confirmed: Vec<(String, String)> = s
        .arms
        .iter()
        .filter(|(_, a)| a.wants_table)
        .filter_map(|(l, a)| Some((l.clone(), a.confirmed.clone()?)))
        .collect();
    let mapping = match_arms(&curves, &ts.table.labels(), Some(&confirmed), None)
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    for (label, a) in s.arms.iter_mut() {
        let matched = mapping.table_label_for(label).map(str::to_string);
        if matched != a.table_label {
            a.exported = false;
        }
        a.table_label = matched;
    }
    ts.mapping = mapping;
    Ok(())
}

async fn put_risk_table(
    State(app): State<AppState>,
    UrlPath((id, arm)): UrlPath<(String, String)>,
    Json(body): Json<RiskTableBody>,
) -> ApiResult<Json<RiskTableResponse>> {
    let (s, ()) = app
        .update(&id, |s| {
            if !s.arms.get(&arm).is_some_and(|a| a.curve.is_some()) {
                return Err(ApiError::conflict(format!("trace arm {arm:?} before matching a risk table")));
            }
            if let Some(c) = body.candidates.iter().find(|c| c.payload.study != s.study) {
                return Err(ApiError::unprocessable(format!(
                    "candidate table belongs to {}, not {}",
                    c.payload.study, s.study
                )));
            }
            let changed = s.table.as_ref().is_none_or(|t| t.candidates != body.candidates);
            if changed {
                let (table, log) = match body.candidates.as_slice() {
                    [one] => (one.payload.clone(), None),
                    [a, b] => {
                        let (t, log) = adjudicate_tables(a, b).map_err(|e| ApiError::unprocessable(e.to_string()))?;
                        (t, Some(log))
                    }
                    other => {
                        return Err(ApiError::unprocessable(format!(
                            "expected one or two candidate tables, got {}",
                            other.len()
                        )))
                    }
                };
                s.table = Some(TableState {
                    candidates: body.candidates.clone(),
                    table,
                    log,
                    mapping: ArmMapping::default(),
                });
                for a in s.arms.values_mut() {
                    a.exported = false;
                }
            }
            let a = s.arms.get_mut(&arm).expect("checked above");
            a.wants_table = true;
            a.confirmed = body.table_arm.clone();
            rematch(s)
        })
        .await?;
    let ts = s.table.as_ref().expect("stored above");
    Ok(Json(RiskTableResponse {
        stage: s.stage(&arm),
        arm,
        table: ts.table.clone(),
        log: ts.log.clone(),
        mapping: ts.mapping.clone(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidationResponse {
    pub arm: String,
    pub stage: Stage,
    pub exportable: bool,
    pub report: ValidationReport,
}

async fn get_validation(
    State(app): State<AppState>,
    UrlPath((id, arm)): UrlPath<(String, String)>,
) -> ApiResult<Json<ValidationResponse>> {
    let s = app.entry(&id)?.snapshot();
    let a = s
        .arms
        .get(&arm)
        .ok_or_else(|| ApiError::not_found(format!("unknown arm {arm:?}")))?;
    let stage = s.stage(&arm);
    let report = if a.table_label.is_some() {
        s.gate(&arm)?
    } else {
        a.trace_report.clone()
    };
    Ok(Json(ValidationResponse {
        exportable: stage >= Stage::Validated,
        arm,
        stage,
        report,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub arm: String,
    pub stage: Stage,
    pub files: Vec<String>,
    pub report: ValidationReport,
}

async fn post_export(
    State(app): State<AppState>,
    UrlPath((id, arm)): UrlPath<(String, String)>,
) -> ApiResult<Json<ExportResponse>> {
    let dir = app.study_dir(&id);
    let (s, report) = app
        .update(&id, |s| {
            let stage = s.stage(&arm);
            if stage < Stage::Matched {
                return Err(ApiError::conflict(format!(
                    "arm {arm:?} is at stage {stage:?}; export needs a matched risk table"
                )));
            }
            let report = s.gate(&arm)?;
            if report.has_errors() {
                return Err(ApiError::blocked(report));
            }
            s.arms.get_mut(&arm).expect("staged arm exists").exported = true;
            write_workspace(&s.workspace(), &dir).map_err(ApiError::internal)?;
            Ok(report)
        })
        .await?;
    Ok(Json(ExportResponse {
        stage: s.stage(&arm),
        arm,
        files: ["xy.csv", "risk_table.csv", "workspace.json"].map(String::from).to_vec(),
        report,
    }))
}

async fn get_export_xy(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let s = app.entry(&id)?.snapshot();
    let ws = s.workspace();
    if ws.curves.is_empty() {
        return Err(ApiError::conflict("no arm has been exported"));
    }
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{XY_FILE}\"")),
        ],
        render_xy(&ws.curves),
    )
        .into_response())
}

/// Reads back a study's exported workspace, as the CLI would.
pub fn read_export(dir: &Path) -> kmlead_core::Result<Workspace> {
    let path = dir.join(kmlead_core::io::WORKSPACE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    workspace_from_json(&text, &path.display().to_string())
}

pub async fn serve(dir: PathBuf, addr: std::net::SocketAddr) -> kmlead_core::Result<()> {
    let state = AppState::open(dir)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| io_error(Path::new(&addr.to_string()), e))?;
    tracing::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| io_error(Path::new(&addr.to_string()), e))
}
