//! HTTP service for delegation study sessions.
//!
//! The service owns a [`StudyContext`] built once at startup and an
//! append-only [`Store`]. Routes live under `/v1`; see `API.md` for the
//! payloads.

pub mod error;
pub mod store;

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uqd_core::delegation::{partition_cases, DelegationPlan, DelegationStats, Override, Partition, Placement, PlanSource};
use uqd_core::kinematics::{load_dataset, load_sequences, save_dataset, save_sequences, synth_generate, SynthConfig};
use uqd_core::metrics::{report, Condition, DecisionRecord, Group, MetricsReport, ReportFilter};
use uqd_core::study::{CaseBundle, StudyConfig, StudyContext};

pub use error::{ApiError, ErrorBody};
pub use store::{Session, SessionState, Store, StoreError};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";
pub const SETUP_FILE: &str = "setup.json";
pub const TUTORIAL_FILE: &str = "tutorial.json";

/// Study parameters persisted next to the data so restarts rebuild the same
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub class_count: usize,
    pub study: StudyConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Core(#[from] uqd_core::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, SetupError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|source| SetupError::Json { path: path.to_path_buf(), source }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Load the dataset under `data_dir`, generating the default synthetic one
/// on first start, and build the study context.
pub fn load_context(data_dir: &Path) -> Result<StudyContext, SetupError> {
    std::fs::create_dir_all(data_dir)?;
    let setup_path = data_dir.join(SETUP_FILE);
    let setup = match read_json::<Setup>(&setup_path)? {
        Some(s) => s,
        None => {
            let s = Setup { class_count: SynthConfig::default().class_count, study: StudyConfig::default() };
            std::fs::write(&setup_path, serde_json::to_string_pretty(&s).expect("setup serializes"))?;
            s
        }
    };
    let dataset_path = data_dir.join(DATASET_FILE);
    let sequences_path = data_dir.join(SEQUENCES_FILE);
    if !dataset_path.exists() {
        tracing::info!(dir = %data_dir.display(), "no dataset found, generating the default synthetic set");
        let out = synth_generate(&SynthConfig { class_count: setup.class_count, ..SynthConfig::default() })?;
        save_dataset(&out.dataset, &dataset_path)?;
        save_sequences(&out.sequences, &sequences_path)?;
    }
    let dataset = load_dataset(&dataset_path, setup.class_count)?;
    let sequences = if sequences_path.exists() { load_sequences(&sequences_path)? } else { Vec::new() };
    Ok(StudyContext::build(dataset, &sequences, setup.study)?)
}

fn default_tutorial() -> Value {
    json!({
        "title": "Working with the assessment assistant",
        "sections": [
            {
                "heading": "Choosing what to delegate",
                "body": "Move the threshold slider to see how accurate the model was on held-out cases whose confidence is at or above the threshold. Confirm to hand those cases to the model; you review the rest."
            },
            {
                "heading": "Reviewing a case",
                "body": "Score the motion first, then compare with the model's score and confidence and submit your final score."
            },
            {
                "heading": "Similar cases",
                "body": "In some cases the confidence is shown with a map of similar training cases. Hover a neighbour to see its status, the model's accuracy on that person and how often two annotators agreed."
            }
        ]
    })
}

struct Inner {
    ctx: StudyContext,
    store: RwLock<Store>,
    tutorial: Value,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(ctx: StudyContext, store: Store, tutorial: Value) -> Self {
        Self { inner: Arc::new(Inner { ctx, store: RwLock::new(store), tutorial }) }
    }

    /// Context from `data_dir`, store in `data_dir/store`.
    pub fn open(data_dir: &Path) -> Result<Self, SetupError> {
        let ctx = load_context(data_dir)?;
        Self::with_context(ctx, data_dir)
    }

    pub fn with_context(ctx: StudyContext, data_dir: &Path) -> Result<Self, SetupError> {
        let store = Store::open(data_dir.join("store"))?;
        let tutorial = read_json::<Value>(&data_dir.join(TUTORIAL_FILE))?.unwrap_or_else(default_tutorial);
        Ok(Self::new(ctx, store, tutorial))
    }

    pub fn context(&self) -> &StudyContext {
        &self.inner.ctx
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Store> {
        self.inner.store.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Store> {
        self.inner.store.write().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/delegation/stats", get(delegation_stats))
        .route("/v1/sessions/{id}/delegation/confirm", post(confirm_delegation))
        .route("/v1/sessions/{id}/cases/{cid}/bundle", get(case_bundle))
        .route("/v1/sessions/{id}/decisions", post(post_decision))
        .route("/v1/reports", get(get_report))
        .route("/v1/tutorial", get(tutorial))
        .fallback(|| async { ApiError::not_found("not_found", "no such route") })
        .method_not_allowed_fallback(|| async { ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed") })
        .with_state(state)
}

/// Serve until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize)]
pub struct Progress {
    pub decided: usize,
    pub total: usize,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub session: Session,
    pub default_threshold: f64,
    pub plan: Option<DelegationPlan>,
    pub progress: Progress,
}

fn session_view(state: &AppState, store: &Store, id: &str) -> Result<SessionView, ApiError> {
    let session = find_session(store, id)?.clone();
    let decided = store.decisions_for(id).count();
    Ok(SessionView {
        default_threshold: state.context().study.default_threshold.threshold,
        plan: store.plan(id).cloned(),
        progress: Progress { decided, total: session.case_count() },
        session,
    })
}

fn find_session<'a>(store: &'a Store, id: &str) -> Result<&'a Session, ApiError> {
    store.session(id).ok_or_else(|| ApiError::not_found("unknown_session", format!("no session `{id}`")).detail(json!(id)))
}

fn require_state(session: &Session, want: SessionState) -> Result<(), ApiError> {
    if session.state == want {
        return Ok(());
    }
    Err(ApiError::conflict(
        "invalid_state",
        format!("session {} is {}, this action needs {}", session.session_id, session.state.as_str(), want.as_str()),
    )
    .detail(json!({ "state": session.state, "required": want })))
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    group: Group,
    #[serde(default)]
    seed: Option<u64>,
}

async fn create_session(State(state): State<AppState>, body: Result<Json<CreateSession>, JsonRejection>) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(body) = body?;
    let mut store = state.write();
    let index = store.session_count() as u64;
    let seed = body.seed.unwrap_or(index);
    let assignment = state.context().study.assign_cases(seed, index)?;
    let now = Utc::now();
    let session = Session {
        session_id: format!("s{:04}", index + 1),
        index,
        group: body.group,
        seed,
        condition_order: assignment.condition_order,
        assigned_case_ids: assignment.cases,
        state: SessionState::Created,
        created_at: now,
    };
    let id = session.session_id.clone();
    store.create_session(session).map_err(ApiError::storage)?;
    store.transition(&id, SessionState::Delegating, now).map_err(ApiError::storage)?;
    let view = session_view(&state, &store, &id)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<AppState>, path: Result<UrlPath<String>, PathRejection>) -> ApiResult<SessionView> {
    let UrlPath(id) = path?;
    let store = state.read();
    Ok(Json(session_view(&state, &store, &id)?))
}

#[derive(Debug, Deserialize)]
struct TauQuery {
    tau: f64,
}

#[derive(Debug, Serialize)]
pub struct StatsView {
    pub session_id: String,
    #[serde(flatten)]
    pub stats: DelegationStats,
    /// Split of this session's cases at the same threshold.
    pub preview: Partition,
}

fn check_tau(tau: f64) -> Result<(), ApiError> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("tau {tau} must lie in [0, 1]")).detail(json!({ "tau": tau })))
    }
}

async fn delegation_stats(
    State(state): State<AppState>,
    path: Result<UrlPath<String>, PathRejection>,
    query: Result<Query<TauQuery>, QueryRejection>,
) -> ApiResult<StatsView> {
    let UrlPath(id) = path?;
    let Query(q) = query?;
    check_tau(q.tau)?;
    let store = state.read();
    let session = find_session(&store, &id)?;
    let study = &state.context().study;
    let ids = session.all_case_ids();
    let confidences: Vec<f64> = ids.iter().map(|c| study.pool_case(c).map_or(0.0, |s| s.confidence_numerical)).collect();
    Ok(Json(StatsView { session_id: id, stats: study.heldout_stats(q.tau)?, preview: partition_cases(&ids, &confidences, q.tau, &[])? }))
}

#[derive(Debug, Deserialize)]
struct ConfirmBody {
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    overrides: Vec<Override>,
}

async fn confirm_delegation(
    State(state): State<AppState>,
    path: Result<UrlPath<String>, PathRejection>,
    body: Result<Json<ConfirmBody>, JsonRejection>,
) -> ApiResult<DelegationPlan> {
    let UrlPath(id) = path?;
    let Json(body) = body?;
    let mut store = state.write();
    let session = find_session(&store, &id)?;
    require_state(session, SessionState::Delegating)?;
    let study = &state.context().study;
    let (tau, source) = match session.group {
        Group::NoExplore => (study.default_threshold.threshold, PlanSource::Default),
        Group::Explore => {
            let tau = body.tau.ok_or_else(|| ApiError::bad_request("explore sessions must supply tau"))?;
            check_tau(tau)?;
            (tau, PlanSource::UserExplored)
        }
    };
    if let Some(o) = body.overrides.iter().find(|o| session.condition_of(&o.case_id).is_none()) {
        return Err(ApiError::not_found("case_not_assigned", format!("case {} is not assigned to session {id}", o.case_id))
            .detail(json!(o.case_id)));
    }
    let plan = study.plan(&session.all_case_ids(), tau, source, &body.overrides)?;
    let now = Utc::now();
    store.save_plan(&id, plan.clone(), now).map_err(ApiError::storage)?;
    store.transition(&id, SessionState::Deciding, now).map_err(ApiError::storage)?;
    Ok(Json(plan))
}

#[derive(Debug, Deserialize)]
struct BundleQuery {
    #[serde(default)]
    condition: Option<Condition>,
    #[serde(default)]
    k: Option<usize>,
}

async fn case_bundle(
    State(state): State<AppState>,
    path: Result<UrlPath<(String, String)>, PathRejection>,
    query: Result<Query<BundleQuery>, QueryRejection>,
) -> ApiResult<CaseBundle> {
    let UrlPath((id, cid)) = path?;
    let Query(q) = query?;
    let assigned = {
        let store = state.read();
        let session = find_session(&store, &id)?;
        session.condition_of(&cid).ok_or_else(|| {
            ApiError::not_found("case_not_assigned", format!("case {cid} is not assigned to session {id}")).detail(json!(cid))
        })?
    };
    let ctx = state.context();
    if let Some(k) = q.k {
        let available = ctx.study.train_indices.len();
        if k == 0 || k > available {
            return Err(ApiError::bad_request(format!("k = {k} must lie in 1..={available}")).detail(json!({ "k": k })));
        }
    }
    Ok(Json(ctx.bundle(&cid, q.condition.unwrap_or(assigned), q.k)?))
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    case_id: String,
    #[serde(default)]
    condition: Option<Condition>,
    initial_score: usize,
    final_score: usize,
    started_at: DateTime<Utc>,
    submitted_at: DateTime<Utc>,
}

#[derive(Debug, Serialize)]
pub struct DecisionAck {
    pub session_id: String,
    pub case_id: String,
    pub condition: Condition,
    pub revision: u32,
    pub delegated: bool,
    pub state: SessionState,
    pub progress: Progress,
}

async fn post_decision(
    State(state): State<AppState>,
    path: Result<UrlPath<String>, PathRejection>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> ApiResult<DecisionAck> {
    let UrlPath(id) = path?;
    let Json(body) = body?;
    let mut store = state.write();
    let session = find_session(&store, &id)?.clone();
    require_state(&session, SessionState::Deciding)?;
    let assigned = session.condition_of(&body.case_id).ok_or_else(|| {
        ApiError::not_found("case_not_assigned", format!("case {} is not assigned to session {id}", body.case_id)).detail(json!(body.case_id))
    })?;
    if let Some(c) = body.condition.filter(|c| *c != assigned) {
        return Err(ApiError::conflict("condition_mismatch", format!("case {} belongs to the {} condition", body.case_id, assigned.as_str()))
            .detail(json!({ "assigned": assigned, "given": c })));
    }
    let ctx = state.context();
    let scored = ctx.study.pool_case(&body.case_id).ok_or_else(|| uqd_core::Error::UnknownCase(body.case_id.clone()))?;
    let delegated = store.plan(&id).and_then(|p| p.partition.placement(&body.case_id)) == Some(Placement::Delegated);
    let record = DecisionRecord {
        session_id: id.clone(),
        case_id: body.case_id.clone(),
        condition: assigned,
        group: session.group,
        initial_score: body.initial_score,
        ai_score: scored.predicted,
        final_score: body.final_score,
        truth: scored.truth,
        delegated,
        started_at: body.started_at,
        submitted_at: body.submitted_at,
    };
    record.validate(ctx.study.dataset.class_count)?;
    let revision = store.record_decision(record).map_err(ApiError::storage)?;
    let decided: BTreeSet<&str> = store.decisions_for(&id).map(|d| d.record.case_id.as_str()).collect();
    let (decided, total) = (decided.len(), session.case_count());
    let mut now_state = session.state;
    if decided == total {
        store.transition(&id, SessionState::Done, Utc::now()).map_err(ApiError::storage)?;
        now_state = SessionState::Done;
    }
    Ok(Json(DecisionAck {
        session_id: id,
        case_id: body.case_id,
        condition: assigned,
        revision,
        delegated,
        state: now_state,
        progress: Progress { decided, total },
    }))
}

async fn get_report(State(state): State<AppState>, query: Result<Query<ReportFilter>, QueryRejection>) -> ApiResult<MetricsReport> {
    let Query(filter) = query?;
    let records: Vec<DecisionRecord> = state.read().decisions().iter().map(|d| d.record.clone()).collect();
    Ok(Json(report(&records, filter)?))
}

async fn tutorial(State(state): State<AppState>) -> Json<Value> {
    Json(state.inner.tutorial.clone())
}
