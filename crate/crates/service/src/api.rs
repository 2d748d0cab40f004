//! HTTP routes. Each session sits behind its own async mutex so writes to one
//! session are serialized while different sessions proceed in parallel.
//! Fitting and sensitivity runs execute on the blocking pool and commit their
//! result only if the session has not changed in the meantime.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex as StdMutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use covbal_core::dataset::{ColumnData, ColumnRole, ParseOptions, RoleAssignment, TrimRule};
use covbal_core::estimators::EstimatorConfig;
use covbal_core::{Estimand, Progress};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::error::{ServiceError, ServiceResult};
use crate::report::{build_report, render_markdown};
use crate::session::{EffectRequest, Session, Step};
use crate::store::Store;

const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Idle,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    pub done: usize,
    pub total: usize,
    pub error: Option<String>,
}

#[derive(Default)]
struct JobSlot {
    progress: Option<Arc<Progress>>,
    state: Option<JobState>,
    error: Option<String>,
}

impl JobSlot {
    fn status(&self) -> JobStatus {
        let (done, total) = self.progress.as_ref().map_or((0, 0), |p| (p.done(), p.total()));
        JobStatus { state: self.state.unwrap_or(JobState::Idle), done, total, error: self.error.clone() }
    }
}

#[derive(Clone, Copy)]
enum JobKind {
    Weights,
    Sensitivity,
}

pub struct SessionSlot {
    session: Mutex<Session>,
    weights_job: StdMutex<JobSlot>,
    sensitivity_job: StdMutex<JobSlot>,
}

impl SessionSlot {
    fn new(s: Session) -> Arc<Self> {
        Arc::new(Self {
            session: Mutex::new(s),
            weights_job: StdMutex::default(),
            sensitivity_job: StdMutex::default(),
        })
    }

    fn job(&self, kind: JobKind) -> std::sync::MutexGuard<'_, JobSlot> {
        match kind {
            JobKind::Weights => self.weights_job.lock(),
            JobKind::Sensitivity => self.sensitivity_job.lock(),
        }
        .expect("job lock poisoned")
    }
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<SessionSlot>>>>,
    store: Arc<Store>,
}

impl AppState {
    /// Service state with every session restored from `store`.
    pub fn new(store: Store) -> ServiceResult<Self> {
        let restored = store.load()?;
        let sessions = restored.into_iter().map(|(id, s)| (id, SessionSlot::new(s))).collect();
        Ok(Self { sessions: Arc::new(RwLock::new(sessions)), store: Arc::new(store) })
    }

    async fn slot(&self, id: &str) -> ServiceResult<Arc<SessionSlot>> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Runs `f` on the session under its lock and persists it if `f` succeeds.
    async fn mutate<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> ServiceResult<T>) -> ServiceResult<T> {
        let slot = self.slot(id).await?;
        let mut s = slot.session.lock().await;
        let before = s.revision;
        let out = f(&mut s)?;
        if s.revision != before {
            self.store.append(&s)?;
        }
        Ok(out)
    }

    async fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> ServiceResult<T>) -> ServiceResult<T> {
        let slot = self.slot(id).await?;
        let s = slot.session.lock().await;
        f(&s)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_state))
        .route("/sessions/{id}/roles", put(set_roles))
        .route("/sessions/{id}/estimand", put(set_estimand))
        .route("/sessions/{id}/summary", get(summary))
        .route("/sessions/{id}/overlap", get(overlap))
        .route("/sessions/{id}/trim", post(trim))
        .route("/sessions/{id}/weights", post(start_weights).get(weights))
        .route("/sessions/{id}/weights/status", get(weights_status))
        .route("/sessions/{id}/weights/cancel", post(cancel_weights))
        .route("/sessions/{id}/balance", get(balance))
        .route("/sessions/{id}/method", put(set_method))
        .route("/sessions/{id}/effect", post(effect).get(get_effect))
        .route("/sessions/{id}/sensitivity", post(start_sensitivity).get(sensitivity))
        .route("/sessions/{id}/sensitivity/status", get(sensitivity_status))
        .route("/sessions/{id}/sensitivity/cancel", post(cancel_sensitivity))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/export/weights.csv", get(export_weights))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// JSON body parse with failures reported as field-level 422s.
fn parse<T: DeserializeOwned>(bytes: &[u8]) -> ServiceResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_string() } else { path };
        ServiceError::validation(&field, e.into_inner().to_string())
    })
}

/// As [`parse`], with an empty body meaning the defaults.
fn parse_or_default<T: DeserializeOwned + Default>(bytes: &[u8]) -> ServiceResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(bytes)
    }
}

// -- data ------------------------------------------------------------------

#[derive(Serialize)]
struct ColumnInfo {
    name: String,
    kind: &'static str,
    distinct: usize,
    missing: usize,
}

#[derive(Serialize)]
struct Created {
    id: String,
    n_rows: usize,
    na_rows: usize,
    columns: Vec<ColumnInfo>,
}

fn column_info(s: &Session) -> Vec<ColumnInfo> {
    s.source
        .columns()
        .iter()
        .map(|c| {
            let (kind, distinct, missing) = match &c.data {
                ColumnData::Numeric(v) => {
                    let mut vals: Vec<f64> = v.iter().flatten().copied().collect();
                    vals.sort_by(f64::total_cmp);
                    vals.dedup();
                    ("numeric", vals.len(), v.iter().filter(|x| x.is_none()).count())
                }
                ColumnData::Text(v) => {
                    let vals: std::collections::BTreeSet<&String> = v.iter().flatten().collect();
                    ("text", vals.len(), v.iter().filter(|x| x.is_none()).count())
                }
            };
            ColumnInfo { name: c.name.clone(), kind, distinct, missing }
        })
        .collect()
}

/// Multipart fields: `file` (required CSV), `na_tokens` (comma separated),
/// `delimiter` (single character).
async fn create_session(State(state): State<AppState>, mut form: Multipart) -> ServiceResult<Response> {
    let mut bytes = None;
    let mut options = ParseOptions::default();
    while let Some(field) = form.next_field().await.map_err(|e| ServiceError::validation("file", e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| ServiceError::validation(&name, e.to_string()))?;
        match name.as_str() {
            "file" => bytes = Some(data),
            "na_tokens" => {
                let text = String::from_utf8_lossy(&data);
                options.na_tokens = text.split(',').map(|t| t.trim().to_string()).collect();
            }
            "delimiter" => match data.as_ref() {
                [b] => options.delimiter = *b,
                _ => return Err(ServiceError::validation("delimiter", "must be a single byte")),
            },
            _ => {}
        }
    }
    let bytes = bytes.ok_or_else(|| ServiceError::validation("file", "missing CSV upload"))?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::from_csv(id.clone(), &bytes, &options)?;
    let body = Created { id: id.clone(), n_rows: session.source.n_rows(), na_rows: session.source.na_rows(), columns: column_info(&session) };
    state.store.append(&session)?;
    state.sessions.write().await.insert(id, SessionSlot::new(session));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Serialize)]
struct SessionView {
    id: String,
    revision: u64,
    created_at: u64,
    updated_at: u64,
    completed: BTreeMap<Step, bool>,
    columns: Vec<ColumnInfo>,
    roles: Option<RoleAssignment>,
    estimand: Estimand,
    n_rows: usize,
    chosen_method: Option<String>,
    recommended_method: Option<String>,
}

async fn session_state(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<SessionView>> {
    state
        .read(&id, |s| {
            Ok(Json(SessionView {
                id: s.id.clone(),
                revision: s.revision,
                created_at: s.created_at,
                updated_at: s.updated_at,
                completed: s.completed(),
                columns: column_info(s),
                roles: s.roles.clone(),
                estimand: s.estimand,
                n_rows: s.dataset.as_ref().map_or(s.source.n_rows(), |d| d.n_rows()),
                chosen_method: s.choice.as_ref().map(|c| c.chosen.clone()),
                recommended_method: s.weights.as_ref().and_then(|w| w.recommendation.recommended.clone()),
            }))
        })
        .await
}

#[derive(Deserialize)]
struct RolesBody {
    roles: BTreeMap<String, ColumnRole>,
    treated_level: String,
}

#[derive(Serialize)]
struct Configured {
    n_rows: usize,
    n_treated: usize,
    n_control: usize,
    dropped_na_rows: usize,
}

async fn set_roles(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ServiceResult<Json<Configured>> {
    let body: RolesBody = parse(&body)?;
    state
        .mutate(&id, |s| {
            s.set_roles(RoleAssignment { roles: body.roles, treated_level: body.treated_level })?;
            let d = s.dataset()?;
            let (n_treated, n_control) = d.group_sizes()?;
            Ok(Json(Configured { n_rows: d.n_rows(), n_treated, n_control, dropped_na_rows: d.dropped_na_rows() }))
        })
        .await
}

#[derive(Deserialize)]
struct EstimandBody {
    estimand: String,
}

async fn set_estimand(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ServiceResult<Json<serde_json::Value>> {
    let body: EstimandBody = parse(&body)?;
    let e: Estimand = body
        .estimand
        .parse()
        .map_err(|_| ServiceError::validation("estimand", format!("`{}` is not one of ATE, ATT, ATC", body.estimand)))?;
    state
        .mutate(&id, |s| {
            s.set_estimand(e);
            Ok(Json(serde_json::json!({ "estimand": e })))
        })
        .await
}

async fn summary(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    state
        .read(&id, |s| {
            let (n_treated, n_control) = s.group_sizes()?;
            Ok(Json(serde_json::json!({
                "n_treated": n_treated,
                "n_control": n_control,
                "summaries": s.summary()?,
            }))
            .into_response())
        })
        .await
}

#[derive(Deserialize)]
struct OverlapQuery {
    bins: Option<usize>,
}

async fn overlap(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<OverlapQuery>) -> ServiceResult<Response> {
    let bins = q.bins.unwrap_or(crate::report::OVERLAP_BINS);
    state.read(&id, |s| Ok(Json(s.overlap(bins)?).into_response())).await
}

#[derive(Deserialize)]
struct TrimBody {
    rules: Vec<TrimRule>,
    #[serde(default)]
    dry_run: bool,
}

async fn trim(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ServiceResult<Response> {
    let body: TrimBody = parse(&body)?;
    state.mutate(&id, |s| Ok(Json(s.trim(&body.rules, body.dry_run)?).into_response())).await
}

// -- jobs ------------------------------------------------------------------

/// Claims the job slot, failing if a job of this kind is already running.
fn claim(slot: &SessionSlot, kind: JobKind) -> ServiceResult<Arc<Progress>> {
    let mut job = slot.job(kind);
    if job.state == Some(JobState::Running) {
        return Err(ServiceError::Conflict("a job of this kind is already running".into()));
    }
    let progress = Arc::new(Progress::new());
    *job = JobSlot { progress: Some(progress.clone()), state: Some(JobState::Running), error: None };
    Ok(progress)
}

fn finish(slot: &SessionSlot, kind: JobKind, result: ServiceResult<()>) {
    let mut job = slot.job(kind);
    match result {
        Ok(()) => job.state = Some(JobState::Succeeded),
        Err(ServiceError::Core(covbal_core::Error::Cancelled)) => job.state = Some(JobState::Cancelled),
        Err(e) => {
            job.state = Some(JobState::Failed);
            job.error = Some(e.to_string());
        }
    }
}

async fn start_weights(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Response> {
    let slot = state.slot(&id).await?;
    let job = {
        let s = slot.session.lock().await;
        s.weights_job(parse_or_default(&body)?)?
    };
    let progress = claim(&slot, JobKind::Weights)?;
    let (st, sl) = (state.clone(), slot.clone());
    tokio::spawn(async move {
        let revision = job.revision;
        let p = progress.clone();
        let computed = tokio::task::spawn_blocking(move || job.run(Some(&p)))
            .await
            .unwrap_or_else(|e| Err(ServiceError::Internal(e.to_string())));
        let result = match computed {
            Ok(stage) => {
                let mut s = sl.session.lock().await;
                s.install_weights(revision, stage).and_then(|()| st.store.append(&s))
            }
            Err(e) => Err(e),
        };
        finish(&sl, JobKind::Weights, result);
    });
    let status = slot.job(JobKind::Weights).status();
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn job_status(state: &AppState, id: &str, kind: JobKind) -> ServiceResult<Json<JobStatus>> {
    let slot = state.slot(id).await?;
    let status = slot.job(kind).status();
    Ok(Json(status))
}

async fn cancel_job(state: &AppState, id: &str, kind: JobKind) -> ServiceResult<Json<JobStatus>> {
    let slot = state.slot(id).await?;
    let job = slot.job(kind);
    match (&job.progress, job.state) {
        (Some(p), Some(JobState::Running)) => p.cancel(),
        _ => return Err(ServiceError::Conflict("no running job to cancel".into())),
    }
    Ok(Json(job.status()))
}

async fn weights_status(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<JobStatus>> {
    job_status(&state, &id, JobKind::Weights).await
}

async fn cancel_weights(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<JobStatus>> {
    cancel_job(&state, &id, JobKind::Weights).await
}

async fn sensitivity_status(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<JobStatus>> {
    job_status(&state, &id, JobKind::Sensitivity).await
}

async fn cancel_sensitivity(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<JobStatus>> {
    cancel_job(&state, &id, JobKind::Sensitivity).await
}

#[derive(Serialize)]
struct WeightsView<'a> {
    methods: BTreeMap<&'a String, &'a covbal_core::weights::Provenance>,
    failures: &'a BTreeMap<String, String>,
    config: &'a EstimatorConfig,
}

async fn weights(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    state
        .read(&id, |s| {
            let stage = s.weights_stage()?;
            Ok(Json(WeightsView {
                methods: stage.run.weights.iter().map(|(k, w)| (k, &w.provenance)).collect(),
                failures: &stage.run.failures,
                config: &stage.config,
            })
            .into_response())
        })
        .await
}

async fn balance(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    state
        .read(&id, |s| {
            let stage = s.weights_stage()?;
            Ok(Json(serde_json::json!({
                "table": stage.balance,
                "recommendation": stage.recommendation,
                "choice": s.choice,
            }))
            .into_response())
        })
        .await
}

#[derive(Deserialize, Default)]
struct MethodBody {
    /// Omit or null to take the recommendation.
    #[serde(default)]
    method: Option<String>,
}

async fn set_method(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ServiceResult<Response> {
    let body: MethodBody = parse_or_default(&body)?;
    state.mutate(&id, |s| Ok(Json(s.choose_method(body.method.as_deref())?.clone()).into_response())).await
}

async fn effect(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ServiceResult<Response> {
    let req: EffectRequest = parse_or_default(&body)?;
    state.mutate(&id, |s| Ok(Json(s.estimate_effect(&req)?.clone()).into_response())).await
}

async fn get_effect(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    state.read(&id, |s| Ok(Json(s.effect_stage()?).into_response())).await
}

async fn start_sensitivity(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Response> {
    let slot = state.slot(&id).await?;
    let job = {
        let s = slot.session.lock().await;
        s.sensitivity_job(parse_or_default(&body)?)?
    };
    let progress = claim(&slot, JobKind::Sensitivity)?;
    let (st, sl) = (state.clone(), slot.clone());
    tokio::spawn(async move {
        let revision = job.revision;
        let p = progress.clone();
        let computed = tokio::task::spawn_blocking(move || job.run(Some(&p)))
            .await
            .unwrap_or_else(|e| Err(ServiceError::Internal(e.to_string())));
        let result = match computed {
            Ok(res) => {
                let mut s = sl.session.lock().await;
                s.install_sensitivity(revision, res).and_then(|()| st.store.append(&s))
            }
            Err(e) => Err(e),
        };
        finish(&sl, JobKind::Sensitivity, result);
    });
    let status = slot.job(JobKind::Sensitivity).status();
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn sensitivity(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    state
        .read(&id, |s| {
            let r = s.sensitivity.as_ref().ok_or(ServiceError::Prerequisite { step: Step::Sensitivity })?;
            Ok(Json(serde_json::json!({
                "result": r,
                "infeasible_mask": r.grid.infeasible_mask(),
            }))
            .into_response())
        })
        .await
}

// -- report and export -------------------------------------------------------

fn wants_text(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|a| a.contains("text/markdown") || a.contains("text/plain"))
}

async fn report(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> ServiceResult<Response> {
    let r = state.read(&id, build_report).await?;
    if wants_text(&headers) {
        Ok(([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], render_markdown(&r)).into_response())
    } else {
        Ok(Json(r).into_response())
    }
}

async fn export_weights(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    let csv = state.read(&id, Session::weights_csv).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"weights.csv\""),
        ],
        csv,
    )
        .into_response())
}
