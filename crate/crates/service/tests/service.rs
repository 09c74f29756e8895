use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use gxestat_service::{router, ServiceConfig};

fn fixture(name: &str) -> String {
    let path = format!(
        "{}/../../fixtures/synthetic/{name}",
        env!("CARGO_MANIFEST_DIR")
    );
    std::fs::read_to_string(path).unwrap()
}

async fn send(
    app: &Router,
    method: &str,
    uri: &str,
    content_type: &str,
    body: impl Into<Body>,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, content_type)
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = send(app, "POST", uri, "application/json", body.to_string()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn upload(app: &Router, csv: &str) -> String {
    let (s, b) = send(app, "POST", "/datasets", "text/csv", csv.to_string()).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let v: Value = serde_json::from_slice(&b).unwrap();
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn healthz() {
    let app = router(ServiceConfig::default());
    let (s, b) = send(&app, "GET", "/healthz", "application/json", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn upload_reports_summary() {
    let app = router(ServiceConfig::default());
    let (s, v) = post_json(
        &app,
        "/datasets",
        json!({ "csv": fixture("watermelon_layout.csv") }),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["session_id"].as_str().is_some_and(|id| !id.is_empty()));
    assert_eq!(v["summary"]["genotypes"], 10);
    assert_eq!(v["summary"]["environments"], 10);
    assert_eq!(v["summary"]["locations"], 5);
    assert_eq!(v["summary"]["years"], 2);
}

#[tokio::test]
async fn upload_without_year_column_detects_mapping() {
    let app = router(ServiceConfig::default());
    let (s, b) = send(
        &app,
        "POST",
        "/datasets",
        "text/csv",
        fixture("oats_layout.csv"),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["summary"]["genotypes"], 24);
    assert_eq!(v["summary"]["locations"], 6);
}

#[tokio::test]
async fn explicit_mapping_in_query() {
    let app = router(ServiceConfig::default());
    let csv = fixture("oats_layout.csv").replace("MY", "Yield");
    let (s, b) = send(&app, "POST", "/datasets?trait=Yield", "text/csv", csv).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["summary"]["trait_name"], "Yield");
}

#[tokio::test]
async fn parse_error_names_the_row() {
    let app = router(ServiceConfig::default());
    let csv = "YR,LC,RP,CLT,MY\n2009,KN,1,A,1.0\n2009,KN,1,B,abc\n";
    let (s, b) = send(&app, "POST", "/datasets", "text/csv", csv).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["error"], "NonNumericTrait");
    assert_eq!(v["module"], "data");
    assert_eq!(v["line"], 3);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = router(ServiceConfig::default());
    for path in ["significance", "stability", "ammi", "gge"] {
        let (s, v) = post_json(&app, &format!("/sessions/nope/{path}"), json!({})).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        assert_eq!(v["error"], "UnknownSession");
    }
    let (s, _) = send(
        &app,
        "GET",
        "/sessions/nope/bundle",
        "application/json",
        Body::empty(),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn model_errors_are_422_with_module() {
    let app = router(ServiceConfig::default());
    let id = upload(&app, &fixture("oats_layout.csv")).await;
    let (s, v) = post_json(
        &app,
        &format!("/sessions/{id}/significance"),
        json!({ "case": 9 }),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "InvalidCase");
    assert_eq!(v["module"], "mixed");

    let (s, v) = post_json(
        &app,
        &format!("/sessions/{id}/ammi"),
        json!({ "n_components": 99 }),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "TooManyComponents");
    assert_eq!(v["module"], "ammi");

    let (s, v) = post_json(
        &app,
        &format!("/sessions/{id}/ammi"),
        json!({ "alpha": 1.5 }),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "InvalidAlpha");
}

#[tokio::test]
async fn incomplete_table_is_422_for_gge() {
    let app = router(ServiceConfig::default());
    let csv = "LC,RP,CLT,MY\nA,1,G1,1\nA,1,G2,2\nA,1,G3,3\nB,1,G1,2\nB,1,G2,5\n";
    let id = upload(&app, csv).await;
    let (s, v) = post_json(&app, &format!("/sessions/{id}/gge"), json!({})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["module"], "gge");
    assert_eq!(v["error"], "IncompleteTable");
}

#[tokio::test]
async fn bootstrap_size_is_capped() {
    let app = router(ServiceConfig::default());
    let id = upload(&app, &fixture("oats_layout.csv")).await;
    let (s, v) = post_json(
        &app,
        &format!("/sessions/{id}/ammi"),
        json!({ "n_boot": 10_001 }),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "BootstrapLimit");
}

#[tokio::test]
async fn malformed_body_is_400() {
    let app = router(ServiceConfig::default());
    let id = upload(&app, &fixture("oats_layout.csv")).await;
    let (s, _) = send(
        &app,
        "POST",
        &format!("/sessions/{id}/gge"),
        "application/json",
        "{not json",
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_json(
        &app,
        &format!("/sessions/{id}/gge"),
        json!({ "mode": "sideways" }),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let app = router(ServiceConfig::default());
    let csv = fixture("oats_layout.csv");
    let id = upload(&app, &csv).await;
    assert_eq!(upload(&app, &csv).await, id);
    let body = json!({ "alpha": 0.05, "n_boot": 199, "seed": 7 }).to_string();
    let uri = format!("/sessions/{id}/ammi");
    let (s1, a) = send(&app, "POST", &uri, "application/json", body.clone()).await;
    let (s2, b) = send(&app, "POST", &uri, "application/json", body.clone()).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);

    // A fresh service computes the same bytes, so nothing depends on the cache.
    let other = router(ServiceConfig::default());
    let id2 = upload(&other, &csv).await;
    assert_eq!(id2, id);
    let (_, c) = send(&other, "POST", &uri, "application/json", body).await;
    assert_eq!(a, c);

    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["fit"]["selection"]["n_boot"], 199);
    assert!(!v["biplots"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn stability_and_significance_payloads() {
    let app = router(ServiceConfig::default());
    let id = upload(&app, &fixture("oats_layout.csv")).await;
    let (s, v) = post_json(
        &app,
        &format!("/sessions/{id}/significance"),
        json!({ "case": 2 }),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!(!v["rows"].as_array().unwrap().is_empty());
    let (s, v) = post_json(&app, &format!("/sessions/{id}/stability"), json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v.is_object());
}

#[tokio::test]
async fn gge_which_won_where_payload() {
    let app = router(ServiceConfig::default());
    let id = upload(&app, &fixture("watermelon_layout.csv")).await;
    let (s, v) = post_json(
        &app,
        &format!("/sessions/{id}/gge"),
        json!({ "centering": "environment_centered", "mode": "which_won_where" }),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["mode"], "which_won_where");
    assert_eq!(v["overlay"]["kind"], "hull");
    let winners = v["overlay"]["assignment"]["winners"].as_array().unwrap();
    assert_eq!(winners.len(), 5);
    assert_eq!(v["points"].as_array().unwrap().len(), 15);
}

#[tokio::test]
async fn bundle_has_every_section() {
    let app = router(ServiceConfig::default());
    let id = upload(&app, &fixture("oats_layout.csv")).await;
    let (s, b) = send(
        &app,
        "GET",
        &format!("/sessions/{id}/bundle"),
        "application/json",
        Body::empty(),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let bundle =
        gxestat_core::export::AnalysisBundle::from_json(std::str::from_utf8(&b).unwrap()).unwrap();
    assert_eq!(bundle.significance.len(), 1);
    assert!(bundle.stability.is_some() && bundle.ammi.is_some());
    assert_eq!(bundle.gge.unwrap().biplots.len(), 7);
}

#[tokio::test]
async fn cors_preflight_allowed() {
    let app = router(ServiceConfig::default());
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/datasets")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp
        .headers()
        .contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[tokio::test]
async fn expired_sessions_are_dropped() {
    let app = router(ServiceConfig {
        session_ttl: std::time::Duration::from_millis(50),
        ..ServiceConfig::default()
    });
    let id = upload(&app, &fixture("oats_layout.csv")).await;
    tokio::time::sleep(std::time::Duration::from_millis(120)).await;
    let (s, _) = post_json(&app, &format!("/sessions/{id}/stability"), json!({})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
