//! The offline commands and the HTTP API must agree on the same inputs.

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;
use xfr_core::{ExplainabilityTable, OcclusionGrid, Pipeline};

fn pipeline() -> Pipeline {
    let mut p = Pipeline::reference();
    p.grid = OcclusionGrid::new(24, 12).unwrap();
    p.greedy_steps = 5;
    p
}

#[tokio::test]
async fn api_table_equals_cli_csv() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/pair");
    let p = pipeline();
    let t = tempfile::tempdir().unwrap();
    xfr_cli::verify(&p, &fixtures.join("a.png"), &fixtures.join("b.png"), t.path()).unwrap();
    xfr_cli::explain(&p, t.path()).unwrap();
    let csv = std::fs::read_to_string(t.path().join("table.csv")).unwrap();

    let app = xfr_service::router(xfr_service::AppState::new(pipeline(), 60));
    let mut body = Vec::new();
    for (name, file) in [("image_a", "a.png"), ("image_b", "b.png")] {
        body.extend_from_slice(
            format!("--B\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{file}\"\r\n\r\n").as_bytes(),
        );
        body.extend_from_slice(&std::fs::read(fixtures.join(file)).unwrap());
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(b"--B--\r\n");
    let req = Request::post("/v1/verify")
        .header("content-type", "multipart/form-data; boundary=B")
        .body(Body::from(body))
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::CREATED);
    let v: serde_json::Value = serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let api: ExplainabilityTable = serde_json::from_value(v["table"].clone()).unwrap();

    let cli = ExplainabilityTable::from_csv(api.pair_id.clone(), &csv).unwrap();
    assert_eq!(api.pair_id, "a.png|b.png");
    assert_eq!(api, cli);
    assert_eq!(api.to_csv(), csv);
}
