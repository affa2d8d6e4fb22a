use std::path::Path;
use std::process::Command;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use kmlead::service::{router, AppState, SESSION_FILE};
use kmlead_core::digitizer::{CandidateTable, SourceTag};
use kmlead_core::io::parse_xy;
use kmlead_core::model::{RiskArm, RiskTable, StudyId, CURVE_POINTS};
use kmlead_core::reconstruct::{km_estimator, number_at_risk};
use kmlead_core::simulate::{km_trace, simulate_weibull_arm, ArmSpec};
use kmlead_core::validate::validate_curve;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(app: &Router, method: &str, uri: &str, body: Body, content_type: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", content_type)
        .body(body)
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = body.map_or_else(Body::empty, |v| Body::from(v.to_string()));
    let (status, bytes) = send(app, method, uri, body, "application/json").await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

async fn upload(app: &Router, id: &str, bytes: &[u8]) -> (StatusCode, Value) {
    let (s, b) = send(app, "POST", &format!("/studies/{id}/figures"), Body::from(bytes.to_vec()), "image/png").await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn app(dir: &Path) -> Router {
    router(AppState::open(dir).unwrap())
}

/// Data `(months, %)` to pixels: sheared, slightly rotated axes.
fn to_pixel(t: f64, s: f64) -> [f64; 2] {
    [80.0 + 9.5 * t - 0.08 * s, 430.0 - 3.6 * s + 0.15 * t]
}

fn anchors(max_months: f64) -> Value {
    let o = to_pixel(0.0, 0.0);
    let x = to_pixel(max_months, 0.0);
    let y = to_pixel(0.0, 100.0);
    json!({"origin": o, "xmax": [x[0], x[1], max_months], "ytop": y})
}

struct Figure {
    pixels: Vec<[f64; 2]>,
    records: Vec<kmlead_core::model::IpdRecord>,
    grid: Vec<f64>,
    counts: Vec<i64>,
}

fn synthetic_figure(seed: u64) -> Figure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ArmSpec {
        n: 300,
        shape: 1.1,
        median_months: 14.0,
        censor_fraction: 0.1,
        follow_up: 36.0,
    };
    let records = simulate_weibull_arm(&mut rng, &spec).unwrap();
    let pixels = km_trace(&records).into_iter().map(|(t, s)| to_pixel(t, s)).collect();
    let grid: Vec<f64> = (0..=6).map(|j| 6.0 * j as f64).collect();
    let counts = number_at_risk(&records, &grid);
    Figure {
        pixels,
        records,
        grid,
        counts,
    }
}

fn candidate(tag: SourceTag, study: &str, arms: &[(&str, Vec<i64>)], grid: &[f64]) -> Value {
    let table = RiskTable::new(
        StudyId::new(study),
        grid.to_vec(),
        arms.iter().map(|(l, c)| RiskArm::new(*l, c.clone())).collect(),
    );
    serde_json::to_value(CandidateTable::new(tag, table)).unwrap()
}

async fn create(app: &Router, name: &str) -> String {
    let (s, v) = call(app, "POST", "/studies", Some(json!({"trial_name": name}))).await;
    assert!(s == StatusCode::CREATED || s == StatusCode::OK, "{s} {v}");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn round_trip_exports_a_valid_curve() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let fig = synthetic_figure(3);
    let id = create(&app, "Synthetic Trial").await;
    assert_eq!(id, "synthetic-trial");

    let (s, f) = upload(&app, &id, b"\x89PNG fake figure bytes").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(f["sha256"].as_str().unwrap().len(), 64);

    let arm = "/studies/synthetic-trial/arms/Nivo%20%2B%20Ipi";
    let (s, v) = call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.0))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stage"], "calibrated");
    assert_eq!(v["arm"], "Nivo + Ipi");

    let (s, v) = call(&app, "PUT", &format!("{arm}/trace"), Some(json!({"pixels": fig.pixels}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stage"], "traced");

    let c = candidate(SourceTag::PrimaryExtractor, "Synthetic Trial", &[("NIVO+IPI", fig.counts.clone())], &fig.grid);
    let (s, v) = call(&app, "PUT", &format!("{arm}/risk_table"), Some(json!({"candidates": [c]}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stage"], "validated");
    assert_eq!(v["mapping"]["pairs"][0]["table_label"], "NIVO+IPI");

    let (s, v) = call(&app, "POST", &format!("{arm}/export"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stage"], "exported");

    let (s, csv) = send(&app, "GET", "/studies/synthetic-trial/export/xy.csv", Body::empty(), "text/plain").await;
    assert_eq!(s, StatusCode::OK);
    let curves = parse_xy(&String::from_utf8(csv).unwrap(), "xy.csv").unwrap();
    assert_eq!(curves.len(), 1);
    assert_eq!(curves[0].points.len(), CURVE_POINTS);
    assert!(validate_curve(&curves[0]).is_clean());

    // within one survival percent of the true step function
    let km = km_estimator(&fig.records);
    let sup = curves[0]
        .points
        .iter()
        .map(|p| 100.0 * (p.survival - km.survival_at(p.time)).abs())
        .fold(0.0, f64::max);
    assert!(sup <= 1.0, "sup-norm {sup}");

    // exported files pass the command-line validator
    let out = Command::new(env!("CARGO_BIN_EXE_kmlead"))
        .args(["validate", "--dir"])
        .arg(dir.path().join(&id))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[tokio::test]
async fn stages_cannot_be_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let fig = synthetic_figure(4);
    let id = create(&app, "Order").await;
    let arm = format!("/studies/{id}/arms/A");

    let (s, _) = call(&app, "POST", &format!("{arm}/export"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.0))).await;
    assert_eq!(s, StatusCode::CONFLICT, "anchors before any figure");
    upload(&app, &id, b"fig").await;
    let (s, _) = call(&app, "PUT", &format!("{arm}/trace"), Some(json!({"pixels": fig.pixels}))).await;
    assert_eq!(s, StatusCode::CONFLICT, "trace before anchors");
    call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.0))).await;
    let (s, _) = call(&app, "POST", &format!("{arm}/export"), None).await;
    assert_eq!(s, StatusCode::CONFLICT, "export before tracing");
    let c = candidate(SourceTag::Manual, "Order", &[("A", fig.counts.clone())], &fig.grid);
    let (s, _) = call(&app, "PUT", &format!("{arm}/risk_table"), Some(json!({"candidates": [c]}))).await;
    assert_eq!(s, StatusCode::CONFLICT, "risk table before tracing");

    let (s, _) = call(&app, "GET", "/studies/nope/arms/A/validation", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", &format!("/studies/{id}/arms/B/validation"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/studies/nope/figures", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "empty body is rejected before lookup");
    let (s, _) = upload(&app, "nope", b"x").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", &format!("/studies/{id}/export/xy.csv"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);

    // collinear anchors are a bad payload
    let bad = json!({"origin": [0.0, 0.0], "xmax": [10.0, 10.0, 36.0], "ytop": [20.0, 20.0]});
    let (s, _) = call(&app, "PUT", &format!("{arm}/anchors"), Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn repeated_payloads_and_reads_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let fig = synthetic_figure(5);
    let id = create(&app, "Idem").await;
    assert_eq!(create(&app, "Idem").await, id);
    let (_, f1) = upload(&app, &id, b"same").await;
    let (_, f2) = upload(&app, &id, b"same").await;
    assert_eq!(f1, f2);
    let arm = format!("/studies/{id}/arms/A");
    let a1 = call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.0))).await;
    let a2 = call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.0))).await;
    assert_eq!(a1, a2);
    let t1 = call(&app, "PUT", &format!("{arm}/trace"), Some(json!({"pixels": fig.pixels}))).await;
    let t2 = call(&app, "PUT", &format!("{arm}/trace"), Some(json!({"pixels": fig.pixels}))).await;
    assert_eq!(t1, t2);
    let c = candidate(SourceTag::Manual, "Idem", &[("A", fig.counts.clone())], &fig.grid);
    let r1 = call(&app, "PUT", &format!("{arm}/risk_table"), Some(json!({"candidates": [c.clone()]}))).await;
    let r2 = call(&app, "PUT", &format!("{arm}/risk_table"), Some(json!({"candidates": [c]}))).await;
    assert_eq!(r1, r2);
    let e1 = call(&app, "POST", &format!("{arm}/export"), None).await;
    let e2 = call(&app, "POST", &format!("{arm}/export"), None).await;
    assert_eq!(e1, e2);
    assert_eq!(e1.0, StatusCode::OK);

    let session = dir.path().join(&id).join(SESSION_FILE);
    let before = std::fs::read(&session).unwrap();
    let v1 = call(&app, "GET", &format!("{arm}/validation"), None).await;
    let v2 = call(&app, "GET", &format!("{arm}/validation"), None).await;
    assert_eq!(v1, v2);
    assert_eq!(v1.1["stage"], "exported");
    assert_eq!(std::fs::read(&session).unwrap(), before);

    // recalibrating with different anchors sends the arm back before export
    let (s, v) = call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.5))).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(v["stage"], "exported");
}

#[tokio::test]
async fn single_minor_difference_keeps_primary() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let fig = synthetic_figure(6);
    let id = create(&app, "Fusion").await;
    upload(&app, &id, b"fig").await;
    let arm = format!("/studies/{id}/arms/A");
    call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.0))).await;
    call(&app, "PUT", &format!("{arm}/trace"), Some(json!({"pixels": fig.pixels}))).await;

    let mut fallback = fig.counts.clone();
    fallback[3] += 1;
    let a = candidate(SourceTag::PrimaryExtractor, "Fusion", &[("A", fig.counts.clone())], &fig.grid);
    let b = candidate(SourceTag::FallbackExtractor, "Fusion", &[("A", fallback)], &fig.grid);
    let (s, v) = call(&app, "PUT", &format!("{arm}/risk_table"), Some(json!({"candidates": [a, b]}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let cells = v["log"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0]["index"], 3);
    assert_eq!(cells[0]["resolution"], "minor_isolated");
    assert_eq!(cells[0]["resolved"], fig.counts[3]);
    assert_eq!(v["table"]["arms"][0]["counts"][3], fig.counts[3]);
    assert_eq!(v["stage"], "validated");
}

#[tokio::test]
async fn unresolved_conflict_blocks_export_until_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let fig = synthetic_figure(7);
    let id = create(&app, "Conflict").await;
    upload(&app, &id, b"fig").await;
    let arm = format!("/studies/{id}/arms/A");
    call(&app, "PUT", &format!("{arm}/anchors"), Some(anchors(36.0))).await;
    call(&app, "PUT", &format!("{arm}/trace"), Some(json!({"pixels": fig.pixels}))).await;

    // both readings rise at index 2, so neither can be trusted there
    let mut p = fig.counts.clone();
    let mut f = fig.counts.clone();
    p[2] = p[1] + 5;
    f[2] = f[1] + 7;
    let a = candidate(SourceTag::PrimaryExtractor, "Conflict", &[("A", p)], &fig.grid);
    let b = candidate(SourceTag::FallbackExtractor, "Conflict", &[("A", f)], &fig.grid);
    let (s, v) = call(&app, "PUT", &format!("{arm}/risk_table"), Some(json!({"candidates": [a, b]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["log"]["cells"][0]["resolution"], "unresolved");
    assert_eq!(v["stage"], "matched");

    let (s, v) = call(&app, "POST", &format!("{arm}/export"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert!(v["report"]["findings"].as_array().unwrap().len() >= 1);
    let (_, v) = call(&app, "GET", &format!("{arm}/validation"), None).await;
    assert_eq!(v["exportable"], false);

    let fixed = candidate(SourceTag::Manual, "Conflict", &[("A", fig.counts.clone())], &fig.grid);
    let (s, v) = call(&app, "PUT", &format!("{arm}/risk_table"), Some(json!({"candidates": [fixed]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["stage"], "validated");
    let (s, _) = call(&app, "POST", &format!("{arm}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let fig = synthetic_figure(8);
    {
        let app = app(dir.path());
        let id = create(&app, "Persist").await;
        upload(&app, &id, b"fig").await;
        call(&app, "PUT", "/studies/persist/arms/A/anchors", Some(anchors(36.0))).await;
        call(&app, "PUT", "/studies/persist/arms/A/trace", Some(json!({"pixels": fig.pixels}))).await;
    }
    let app = app(dir.path());
    let (s, v) = call(&app, "GET", "/studies/persist", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["arms"]["A"], "traced");
    let (_, list) = call(&app, "GET", "/studies", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writes_to_one_study_are_not_lost() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, "Busy").await;
    upload(&app, &id, b"fig").await;
    let mut tasks = tokio::task::JoinSet::new();
    for i in 0..16 {
        let app = app.clone();
        let id = id.clone();
        tasks.spawn(async move {
            call(&app, "PUT", &format!("/studies/{id}/arms/arm{i}/anchors"), Some(anchors(36.0))).await.0
        });
    }
    while let Some(s) = tasks.join_next().await {
        assert_eq!(s.unwrap(), StatusCode::OK);
    }
    let (_, v) = call(&app, "GET", &format!("/studies/{id}"), None).await;
    assert_eq!(v["arms"].as_object().unwrap().len(), 16);
}
