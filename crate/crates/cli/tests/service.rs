use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use trialbench::analysis::{run_analysis, AnalysisRequest};
use trialbench::dataset::{import_csv, parse_rm5_subset, serialize_database, DatabaseSnapshot};
use trialbench_cli::service::{router, AppState, ServiceConfig};

const FIXTURE: &str = include_str!("../../../fixtures/neurocysticercosis.rm5.xml");
const MA: &str = "SYN-NCC-1.1";

fn snapshot() -> DatabaseSnapshot {
    DatabaseSnapshot::new(vec![parse_rm5_subset(FIXTURE).unwrap().review]).unwrap()
}

fn app() -> Router {
    router(AppState::new(snapshot(), None), &ServiceConfig::default())
}

struct Reply {
    status: StatusCode,
    content_type: String,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: &str) -> Reply {
    send(
        app,
        Request::post(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

fn selection() -> Value {
    json!({
        "items": [{"meta_analysis_id": MA, "subgroup_ids": ["children"]}],
        "target_group": "group2",
        "scale": "logrr",
        "overlay": [{"label": "Singh 2022", "dich": {"e1": 1, "n1": 19, "e2": 1, "n2": 20}}]
    })
}

fn classical_request() -> String {
    json!({"selection": selection(), "classical": {"method": "fixed"}}).to_string()
}

fn bayesian_request() -> String {
    json!({
        "selection": selection(),
        "bayesian": {
            "priors": {
                "effect": {"family": "student_t", "location": 0.0, "scale": 0.58, "df": 5.0},
                "heterogeneity": {"family": "inv_gamma", "shape": 1.74, "scale": 0.27}
            }
        }
    })
    .to_string()
}

fn error_of(reply: &Reply) -> Value {
    reply.json()["error"].clone()
}

#[tokio::test]
async fn reviews_filtering() {
    let app = app();
    let r = get(&app, "/api/reviews?mode=keywords&q=albendazole").await;
    assert_eq!(r.status, StatusCode::OK);
    let list = r.json();
    assert_eq!(list[0]["id"], "SYN-NCC");
    assert_eq!(list[0]["title"], "Anthelmintics for people with neurocysticercosis");
    assert_eq!(list[0]["year"], 2021);

    let r = get(&app, "/api/reviews?mode=title&q=zzzz").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json(), json!([]));

    let r = get(&app, "/api/reviews?mode=flavor&q=x").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r)["path"], "mode");
}

#[tokio::test]
async fn meta_analysis_listing() {
    let app = app();
    let r = get(&app, "/api/meta-analyses?review_id=SYN-NCC").await;
    assert_eq!(r.status, StatusCode::OK);
    let list = r.json();
    let seizure = list
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["name"] == "Seizure recurrence")
        .unwrap();
    let names: Vec<&str> = seizure["subgroups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["Adults (16 years old or older)", "Children (under 16 years old)"]);
    assert_eq!(get(&app, "/api/meta-analyses?review_id=SYN-NCC").await.body, r.body);

    assert_eq!(get(&app, "/api/meta-analyses?review_id=").await.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/meta-analyses").await.status, StatusCode::BAD_REQUEST);
    let r = get(&app, "/api/meta-analyses?review_id=CD999").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(error_of(&r)["code"], "not_found");
}

#[tokio::test]
async fn analyze_classical_matches_library() {
    let app = app();
    let r = post(&app, "/api/analyze", &classical_request()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.content_type, "application/json");
    let body = r.json();
    let a = &body["analyses"][0];
    assert_eq!(a["estimates"].as_array().unwrap().len(), 5);
    assert_eq!(a["estimates"][4]["label"], "Singh 2022");
    assert_eq!(a["estimates"][4]["is_new"], true);
    assert!(a["classical"]["pooled"]["y"].is_number());
    assert!(a["classical"]["transformed"]["estimate"].is_number());
    assert_eq!(body["plots"]["forest"], "/api/plots/forest");

    // byte-equal across calls and equal to the direct library result
    let again = post(&app, "/api/analyze", &classical_request()).await;
    assert_eq!(again.body, r.body);
    let req: AnalysisRequest = serde_json::from_str(&classical_request()).unwrap();
    let direct = serde_json::to_vec(&run_analysis(&snapshot(), &req).unwrap()).unwrap();
    assert_eq!(direct, r.body);
}

#[tokio::test]
async fn analyze_bayesian() {
    let app = app();
    let r = post(&app, "/api/analyze", &bayesian_request()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let a = &r.json()["analyses"][0];
    let result = &a["bayesian"]["result"];
    assert!(result["bf10_fixed"].as_f64().unwrap() > 1.0);
    assert_eq!(a["bayesian"]["mu_densities"].as_array().unwrap().len(), 3);
    assert_eq!(a["bayesian"]["transformed"].as_array().unwrap().len(), 3);
    assert_eq!(r.json()["plots"]["density"], "/api/plots/density");
}

#[tokio::test]
async fn analyze_validation_errors() {
    let app = app();
    let mismatch = json!({"selection": selection(), "classical": {"method": "fixed", "scale": "md"}});
    let r = post(&app, "/api/analyze", &mismatch.to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_of(&r)["code"], "scale_mismatch");

    let bad_method = json!({"selection": selection(), "classical": {"method": "bogus"}});
    let r = post(&app, "/api/analyze", &bad_method.to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_of(&r)["path"], "classical.method");

    let mut sel = selection();
    sel["overlay"][0]["dich"]["e1"] = json!(30);
    let r = post(&app, "/api/analyze", &json!({"selection": sel, "classical": {"method": "fixed"}}).to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{}", r.text());

    let empty = json!({"selection": {"items": [], "scale": "logrr"}, "classical": {"method": "fixed"}});
    let r = post(&app, "/api/analyze", &empty.to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_of(&r)["code"], "empty_selection");

    let both = json!({"selection": selection(), "classical": {"method": "fixed"}, "bayesian": {}});
    assert_eq!(post(&app, "/api/analyze", &both.to_string()).await.status, StatusCode::UNPROCESSABLE_ENTITY);

    let bad_prior = json!({"selection": selection(), "bayesian": {"priors": {
        "effect": {"family": "normal", "mean": 0.0, "sd": -1.0},
        "heterogeneity": {"family": "half_normal", "sd": 1.0}}}});
    let r = post(&app, "/api/analyze", &bad_prior.to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{}", r.text());
    assert_eq!(error_of(&r)["path"], "priors.effect.sd");

    let r = post(&app, "/api/analyze", "{not json").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn plots() {
    let app = app();
    let r = post(&app, "/api/plots/forest", &classical_request()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.content_type, "image/svg+xml");
    let svg = r.text();
    assert_eq!(svg.matches("class=\"marker").count(), 5);
    assert_eq!(svg.matches("class=\"marker new-study\"").count(), 1);
    assert_eq!(svg.matches("class=\"pooled-diamond\"").count(), 1);

    let r = post(&app, "/api/plots/funnel", &classical_request()).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.text().matches("<circle").count(), 5);

    let r = post(&app, "/api/plots/density", &bayesian_request()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert!(r.text().contains("class=\"posterior\""));
    let r = post(&app, "/api/plots/density?parameter=tau&model=random_alt", &bayesian_request()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());

    let r = post(&app, "/api/plots/density", &classical_request()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_of(&r)["path"], "bayesian");

    // direct plot specs
    let spec = json!({
        "rows": [{"label": "A 2000", "y": -0.5, "ci_low": -1.0, "ci_high": 0.0, "weight_pct": 100.0}],
        "pooled": {"y": -0.5, "ci_low": -1.0, "ci_high": 0.0, "label": "Fixed"},
        "scale": "logrr"
    });
    let r = post(&app, "/api/plots/forest", &spec.to_string()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let funnel = json!({"estimates": [{"label": "A", "y": 0.1, "se": 0.2}, {"label": "B", "y": -0.1, "se": 0.3}], "scale": "logor"});
    assert_eq!(post(&app, "/api/plots/funnel", &funnel.to_string()).await.status, StatusCode::OK);

    let r = post(&app, "/api/plots/forest", r#"{"rows": 3}"#).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&app, "/api/plots/pie", &classical_request()).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn csv_export() {
    let app = app();
    let uri = format!(
        "/api/export.csv?ma={MA}&subgroup={MA}/children&target=group2&add={}",
        "Singh%202022%3A1%2F19%2C1%2F20"
    );
    let r = get(&app, &uri).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert!(r.content_type.starts_with("text/csv"));
    let text = r.text();
    assert_eq!(text.lines().count(), 6);
    let studies = import_csv(&text).unwrap();
    assert_eq!(studies.len(), 5);
    assert_eq!(studies[4].label, "Singh 2022");

    let r = get(&app, "/api/export.csv").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn reload_swaps_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.jsonl");
    std::fs::write(&path, serialize_database(&DatabaseSnapshot::empty())).unwrap();
    let state = AppState::new(DatabaseSnapshot::empty(), Some(path.clone()));
    let app = router(Arc::clone(&state), &ServiceConfig::default());
    assert_eq!(get(&app, "/api/reviews?mode=title").await.json(), json!([]));

    std::fs::write(&path, serialize_database(&snapshot())).unwrap();
    let r = post(&app, "/api/admin/reload", "").await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["reviews"], 1);
    assert_eq!(get(&app, "/api/reviews?mode=title").await.json()[0]["id"], "SYN-NCC");

    let no_path = router(AppState::new(snapshot(), None), &ServiceConfig::default());
    assert_eq!(post(&no_path, "/api/admin/reload", "").await.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn cors_and_static() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    let config = ServiceConfig {
        static_dir: Some(dir.path().to_path_buf()),
        cors_origins: vec![],
    };
    let app = router(AppState::new(snapshot(), None), &config);
    let res = app
        .clone()
        .oneshot(
            Request::get("/api/health")
                .header(header::ORIGIN, "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(res.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(), "*");
    let r = get(&app, "/index.html").await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.text().contains("<title>ui</title>"));
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let app = app();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { post(&app, "/api/analyze", &bayesian_request()).await.body })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
