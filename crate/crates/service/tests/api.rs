use std::path::Path;
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use uqd_core::delegation::{partition_cases, Override, Placement};
use uqd_core::explain::EmbedMethod;
use uqd_core::kinematics::{synth_generate, SynthConfig};
use uqd_core::metrics::DecisionRecord;
use uqd_core::study::{StudyConfig, StudyContext};
use uqd_core::uq::mcp;
use uqd_service::{router, AppState};

fn context() -> &'static StudyContext {
    static CTX: OnceLock<StudyContext> = OnceLock::new();
    CTX.get_or_init(|| {
        let out = synth_generate(&SynthConfig::default()).unwrap();
        let config = StudyConfig { embed_method: EmbedMethod::Pca, ..StudyConfig::default() };
        StudyContext::build(out.dataset, &out.sequences, config).unwrap()
    })
}

struct Api {
    state: AppState,
}

impl Api {
    fn open(dir: &Path) -> Self {
        Self { state: AppState::with_context(context().clone(), dir).unwrap() }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = router(self.state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    async fn create(&self, group: &str, seed: u64) -> Value {
        let (status, body) = self.post("/v1/sessions", json!({ "group": group, "seed": seed })).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body
    }
}

fn enc(case_id: &str) -> String {
    case_id.replace('/', "%2F")
}

fn ids(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

fn decision(case_id: &str, initial: usize, fin: usize) -> Value {
    json!({
        "case_id": case_id,
        "initial_score": initial,
        "final_score": fin,
        "started_at": "2024-03-01T10:00:00Z",
        "submitted_at": "2024-03-01T10:00:40Z",
    })
}

fn assert_error(status: StatusCode, body: &Value, want: StatusCode, code: &str) {
    assert_eq!(status, want, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].is_string());
    assert!(body.get("detail").is_some());
}

#[tokio::test]
async fn sessions_respect_case_mix_and_counterbalancing() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::open(dir.path());
    let ctx = context();
    let mut orders = Vec::new();
    for _ in 0..4 {
        let s = api.create("explore", 3).await;
        assert_eq!(s["state"], "delegating");
        orders.push(s["condition_order"].clone());
        let mut seen = Vec::new();
        for condition in ["numerical", "distance"] {
            let list = ids(&s["assigned_case_ids"][condition]);
            assert_eq!(list.len(), 14);
            // recount against the truth with a fresh forward pass
            let wrong = list
                .iter()
                .filter(|id| {
                    let i = ctx.study.dataset.index_of(id).unwrap();
                    let case = &ctx.study.dataset.cases[i];
                    let x = case.features(ctx.study.config.component);
                    ctx.study.model.predict(x).unwrap() != case.label(ctx.study.config.component)
                })
                .count();
            assert_eq!(wrong, 4, "{condition}");
            seen.extend(list);
        }
        let n = seen.len();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), n);
    }
    let forward = json!(["numerical", "distance"]);
    assert_eq!(orders.iter().filter(|o| **o == forward).count(), 2);
    assert_eq!(orders.iter().filter(|o| **o != forward).count(), 2);

    let (_, a) = api.get("/v1/sessions/s0001").await;
    let (_, b) = api.get("/v1/sessions/s0002").await;
    assert_eq!(a["assigned_case_ids"], b["assigned_case_ids"]);
}

#[tokio::test]
async fn explore_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::open(dir.path());
    let ctx = context();
    let s = api.create("explore", 11).await;
    let id = s["session_id"].as_str().unwrap().to_string();
    let numerical = ids(&s["assigned_case_ids"]["numerical"]);
    let distance = ids(&s["assigned_case_ids"]["distance"]);

    // deciding before delegation is rejected
    let (st, body) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(&numerical[0], 0, 0)).await;
    assert_error(st, &body, StatusCode::CONFLICT, "invalid_state");

    let (st, stats) = api.get(&format!("/v1/sessions/{id}/delegation/stats?tau=0.6")).await;
    assert_eq!(st, StatusCode::OK);
    let heldout = &ctx.study.heldout;
    let delegated: Vec<_> = heldout.iter().filter(|c| c.confidence_numerical >= 0.6).collect();
    assert_eq!(stats["n_delegated"], delegated.len());
    assert_eq!(stats["n_total"], heldout.len());
    let acc = delegated.iter().filter(|c| c.correct()).count() as f64 / delegated.len() as f64;
    assert!((stats["accuracy_on_delegated"].as_f64().unwrap() - acc).abs() < 1e-12);
    let (st, body) = api.get(&format!("/v1/sessions/{id}/delegation/stats?tau=1.5")).await;
    assert_error(st, &body, StatusCode::BAD_REQUEST, "invalid_request");
    let (st, body) = api.get(&format!("/v1/sessions/{id}/delegation/stats?tau=abc")).await;
    assert_error(st, &body, StatusCode::BAD_REQUEST, "invalid_request");

    let all: Vec<String> = ids(&s["condition_order"])
        .iter()
        .flat_map(|c| ids(&s["assigned_case_ids"][c.as_str()]))
        .collect();
    let flip = Override { case_id: all[3].clone(), placement: Placement::Delegated };
    let (st, plan) = api
        .post(&format!("/v1/sessions/{id}/delegation/confirm"), json!({ "tau": 0.6, "overrides": [&flip] }))
        .await;
    assert_eq!(st, StatusCode::OK, "{plan}");
    let confs: Vec<f64> = all.iter().map(|c| ctx.study.pool_case(c).unwrap().confidence_numerical).collect();
    let want = partition_cases(&all, &confs, 0.6, std::slice::from_ref(&flip)).unwrap();
    assert_eq!(ids(&plan["delegated_ids"]), want.delegated_ids);
    assert_eq!(ids(&plan["review_ids"]), want.review_ids);
    assert_eq!(plan["source"], "user_explored");

    let (st, body) = api.post(&format!("/v1/sessions/{id}/delegation/confirm"), json!({ "tau": 0.5 })).await;
    assert_error(st, &body, StatusCode::CONFLICT, "invalid_state");

    // bundles
    let (st, b) = api.get(&format!("/v1/sessions/{id}/cases/{}/bundle", enc(&numerical[0]))).await;
    assert_eq!(st, StatusCode::OK, "{b}");
    assert_eq!(b["condition"], "numerical");
    assert!(b.get("embedding").is_none());
    assert!(b.get("confidence_distance").is_none());
    let x = ctx.study.dataset.cases[ctx.study.dataset.index_of(&numerical[0]).unwrap()].features(ctx.study.config.component);
    let (class, p) = mcp(&ctx.study.model.predict_proba(x).unwrap()).unwrap();
    assert_eq!(b["ai_score"], class);
    assert!((b["confidence_numerical"].as_f64().unwrap() - p).abs() < 1e-12);

    let (st, b) = api.get(&format!("/v1/sessions/{id}/cases/{}/bundle?k=7", enc(&distance[0]))).await;
    assert_eq!(st, StatusCode::OK, "{b}");
    let emb = &b["embedding"];
    assert_eq!(emb["centroids"].as_array().unwrap().len(), ctx.study.dataset.class_count);
    assert_eq!(emb["neighbors"].as_array().unwrap().len(), 7);
    let tooltip = emb["neighbors"][0]["tooltip"].as_object().unwrap();
    let mut keys: Vec<&str> = tooltip.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["agreement", "model_acc", "status"]);
    for entry in b["radar"].as_array().unwrap() {
        for field in ["name", "shap", "affected", "unaffected"] {
            assert!(entry.get(field).is_some());
        }
    }
    let (st, body) = api.get(&format!("/v1/sessions/{id}/cases/nobody%2Ft0/bundle")).await;
    assert_error(st, &body, StatusCode::NOT_FOUND, "case_not_assigned");

    // decisions
    let (st, ack) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(&numerical[0], 1, 2)).await;
    assert_eq!(st, StatusCode::OK, "{ack}");
    assert_eq!(ack["revision"], 1);
    let (_, ack) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(&numerical[0], 1, 1)).await;
    assert_eq!(ack["revision"], 2);
    assert_eq!(ack["progress"]["decided"], 1);
    let mut wrong_condition = decision(&numerical[1], 0, 0);
    wrong_condition["condition"] = json!("distance");
    let (st, body) = api.post(&format!("/v1/sessions/{id}/decisions"), wrong_condition).await;
    assert_error(st, &body, StatusCode::CONFLICT, "condition_mismatch");
    let (st, body) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(&numerical[1], 9, 0)).await;
    assert_error(st, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_value");

    let (_, ack) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(&flip.case_id, 0, 0)).await;
    assert_eq!(ack["delegated"], true);

    let mut last = Value::Null;
    for c in &all {
        let (st, ack) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(c, 0, 1)).await;
        assert_eq!(st, StatusCode::OK, "{ack}");
        last = ack;
    }
    assert_eq!(last["state"], "done");
    let (st, body) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(&all[0], 0, 1)).await;
    assert_error(st, &body, StatusCode::CONFLICT, "invalid_state");

    let (st, report) = api.get("/v1/reports?group=explore").await;
    assert_eq!(st, StatusCode::OK, "{report}");
    assert_eq!(report["groups"].as_array().unwrap().len(), 2);
    let (st, body) = api.get("/v1/reports?group=no_explore").await;
    assert_error(st, &body, StatusCode::NOT_FOUND, "no_records");
    let (st, body) = api.get("/v1/reports?group=sideways").await;
    assert_error(st, &body, StatusCode::BAD_REQUEST, "invalid_request");
}

#[tokio::test]
async fn no_explore_uses_the_default_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::open(dir.path());
    let s = api.create("no_explore", 2).await;
    let id = s["session_id"].as_str().unwrap();
    assert_eq!(s["default_threshold"], context().study.default_threshold.threshold);
    let (st, plan) = api.post(&format!("/v1/sessions/{id}/delegation/confirm"), json!({ "tau": 0.95 })).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(plan["threshold"], context().study.default_threshold.threshold);
    assert_eq!(plan["source"], "default");
    let (_, s) = api.get(&format!("/v1/sessions/{id}")).await;
    assert_eq!(s["state"], "deciding");
    assert_eq!(s["plan"], plan);
}

#[tokio::test]
async fn restart_reproduces_responses() {
    let dir = tempfile::tempdir().unwrap();
    let uris;
    let before: Vec<(StatusCode, Value)>;
    {
        let api = Api::open(dir.path());
        let a = api.create("explore", 5).await;
        let b = api.create("no_explore", 6).await;
        let a_id = a["session_id"].as_str().unwrap().to_string();
        let b_id = b["session_id"].as_str().unwrap().to_string();
        api.post(&format!("/v1/sessions/{a_id}/delegation/confirm"), json!({ "tau": 0.7 })).await;
        api.post(&format!("/v1/sessions/{b_id}/delegation/confirm"), json!({})).await;
        for (k, c) in ids(&a["assigned_case_ids"]["distance"]).iter().take(5).enumerate() {
            api.post(&format!("/v1/sessions/{a_id}/decisions"), decision(c, k % 3, 1)).await;
        }
        for c in ids(&b["assigned_case_ids"]["numerical"]).iter().take(4) {
            api.post(&format!("/v1/sessions/{b_id}/decisions"), decision(c, 2, 2)).await;
        }
        let first = ids(&a["assigned_case_ids"]["distance"])[0].clone();
        api.post(&format!("/v1/sessions/{a_id}/decisions"), decision(&first, 0, 0)).await;
        uris = vec![
            format!("/v1/sessions/{a_id}"),
            format!("/v1/sessions/{b_id}"),
            format!("/v1/sessions/{a_id}/cases/{}/bundle", enc(&first)),
            "/v1/reports".to_string(),
            "/v1/reports?condition=distance".to_string(),
        ];
        let mut out = Vec::new();
        for u in &uris {
            out.push(api.get(u).await);
        }
        before = out;
    }
    let log = std::fs::read_to_string(dir.path().join("store/decisions.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
    for line in log.lines() {
        serde_json::from_str::<DecisionRecord>(line).unwrap();
    }

    let api = Api::open(dir.path());
    for (u, want) in uris.iter().zip(&before) {
        assert_eq!(&api.get(u).await, want, "{u}");
    }
    // revisions continue after restart
    let a = &before[0].1;
    let first = ids(&a["assigned_case_ids"]["distance"])[0].clone();
    let (_, ack) = api.post(&format!("/v1/sessions/{}/decisions", a["session_id"].as_str().unwrap()), decision(&first, 1, 1)).await;
    assert_eq!(ack["revision"], 3);
    let grown = std::fs::read_to_string(dir.path().join("store/decisions.jsonl")).unwrap();
    assert!(grown.len() > log.len() && grown.starts_with(&log));
}

#[tokio::test]
async fn partial_trailing_line_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let (id, case) = {
        let api = Api::open(dir.path());
        let s = api.create("explore", 1).await;
        let id = s["session_id"].as_str().unwrap().to_string();
        api.post(&format!("/v1/sessions/{id}/delegation/confirm"), json!({ "tau": 0.5 })).await;
        let case = ids(&s["assigned_case_ids"]["numerical"])[0].clone();
        api.post(&format!("/v1/sessions/{id}/decisions"), decision(&case, 0, 0)).await;
        (id, case)
    };
    let path = dir.path().join("store/decisions.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    let intact = text.clone();
    text.push_str("{\"session_id\":\"s0001\",\"case");
    std::fs::write(&path, text).unwrap();

    let api = Api::open(dir.path());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), intact);
    let (_, s) = api.get(&format!("/v1/sessions/{id}")).await;
    assert_eq!(s["progress"]["decided"], 1);
    let (_, ack) = api.post(&format!("/v1/sessions/{id}/decisions"), decision(&case, 1, 1)).await;
    assert_eq!(ack["revision"], 2);
}

#[tokio::test]
async fn errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::open(dir.path());
    let (st, body) = api.get("/v1/sessions/s9999").await;
    assert_error(st, &body, StatusCode::NOT_FOUND, "unknown_session");
    let (st, body) = api.get("/v1/nowhere").await;
    assert_error(st, &body, StatusCode::NOT_FOUND, "not_found");
    let (st, body) = api.post("/v1/sessions", json!({ "group": "everyone" })).await;
    assert_error(st, &body, StatusCode::BAD_REQUEST, "invalid_request");
    let (st, body) = api.call(Method::DELETE, "/v1/sessions", None).await;
    assert_error(st, &body, StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed");
    let s = api.create("explore", 0).await;
    let (st, body) = api.post(&format!("/v1/sessions/{}/delegation/confirm", s["session_id"].as_str().unwrap()), json!({})).await;
    assert_error(st, &body, StatusCode::BAD_REQUEST, "invalid_request");
    let (st, body) = api
        .post(
            &format!("/v1/sessions/{}/delegation/confirm", s["session_id"].as_str().unwrap()),
            json!({ "tau": 0.5, "overrides": [{ "case_id": "ghost/t1", "placement": "review" }] }),
        )
        .await;
    assert_error(st, &body, StatusCode::NOT_FOUND, "case_not_assigned");
    let (st, body) = api.get("/v1/tutorial").await;
    assert_eq!(st, StatusCode::OK);
    assert!(body["sections"].as_array().is_some_and(|s| !s.is_empty()));
}
