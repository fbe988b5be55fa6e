//! HTTP API for the curation loop and the dashboard.
//!
//! Every handler takes one `Arc` of the current snapshot and answers from
//! it alone, so a response never mixes artifacts of two snapshots. New
//! snapshots are published by swapping that `Arc` after the snapshot
//! directory has been committed.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stressorlens_core::corpus::CleanPost;
use stressorlens_core::topicmodel::{dominant_topic, select_review_samples, top_terms, LdaModel, TopicGroupMap};
use stressorlens_core::trends::{monthly_proportions, Dashboard};

use crate::config::PipelineConfig;
use crate::pipeline::{self, artifacts, FeatureLists, PipelineError};
use crate::snapshot::{Snapshot, SnapshotStore};

pub const PENDING_FEATURES: &str = "pending_features.json";
const TOP_TERMS: usize = 10;

/// Everything the API serves from one published snapshot.
#[derive(Debug)]
pub struct LoadedSnapshot {
    pub snapshot: Snapshot,
    pub posts: HashMap<String, CleanPost>,
    pub lda: Option<LdaModel>,
    pub annotations: Option<HashMap<String, BTreeSet<String>>>,
    pub dashboard: Option<Dashboard>,
    pub features: FeatureLists,
}

impl LoadedSnapshot {
    pub fn load(cfg: &PipelineConfig, snapshot: Snapshot) -> Result<Self, PipelineError> {
        let ws = snapshot.dir.clone();
        let posts = if snapshot.has(artifacts::POSTS) {
            pipeline::read_posts(&ws)?.into_iter().map(|p| (p.id.clone(), p)).collect()
        } else {
            HashMap::new()
        };
        let lda = snapshot.has(artifacts::LDA).then(|| pipeline::load_lda(&ws)).transpose()?;
        let annotations = snapshot
            .has(artifacts::ANNOTATIONS)
            .then(|| pipeline::load_annotations(&ws))
            .transpose()?
            .map(|list| list.into_iter().map(|a| (a.post_id, a.topics)).collect());
        let dashboard = snapshot.has(artifacts::DASHBOARD).then(|| pipeline::load_dashboard(&ws)).transpose()?;
        let features = pipeline::feature_lists(cfg, &ws)?;
        Ok(LoadedSnapshot {
            snapshot,
            posts,
            lda,
            annotations,
            dashboard,
            features,
        })
    }

    pub fn id(&self) -> u64 {
        self.snapshot.id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainJob {
    pub job_id: u64,
    pub state: JobState,
    pub created_at: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    pub parent_snapshot_id: u64,
    pub snapshot_id: Option<u64>,
    pub error: Option<String>,
}

/// Test hook that holds a retrain between computing and publishing.
#[derive(Debug, Default)]
pub struct PublishGate {
    state: Mutex<(bool, bool)>,
    cv: Condvar,
}

impl PublishGate {
    pub fn reached(&self) -> bool {
        self.state.lock().expect("gate lock").0
    }

    pub fn release(&self) {
        self.state.lock().expect("gate lock").1 = true;
        self.cv.notify_all();
    }

    fn arrive(&self) {
        let mut s = self.state.lock().expect("gate lock");
        s.0 = true;
        while !s.1 {
            s = self.cv.wait(s).expect("gate lock");
        }
    }
}

pub struct AppState {
    cfg: PipelineConfig,
    store: SnapshotStore,
    current: RwLock<Arc<LoadedSnapshot>>,
    jobs: Mutex<Vec<RetrainJob>>,
    publish: Mutex<()>,
    gate: Option<Arc<PublishGate>>,
}

pub type SharedState = Arc<AppState>;

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl AppState {
    /// Loads the latest snapshot of `cfg.run_dir`.
    pub fn open(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let store = SnapshotStore::open(&cfg.run_dir)?;
        let latest = store.latest()?.ok_or_else(|| PipelineError::NoSnapshot(cfg.run_dir.clone()))?;
        let loaded = LoadedSnapshot::load(&cfg, store.read(latest)?)?;
        Ok(AppState {
            cfg,
            store,
            current: RwLock::new(Arc::new(loaded)),
            jobs: Mutex::new(Vec::new()),
            publish: Mutex::new(()),
            gate: None,
        })
    }

    pub fn with_gate(mut self, gate: Arc<PublishGate>) -> Self {
        self.gate = Some(gate);
        self
    }

    pub fn current(&self) -> Arc<LoadedSnapshot> {
        self.current.read().expect("snapshot lock").clone()
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    fn pending_path(&self) -> PathBuf {
        self.cfg.run_dir.join(PENDING_FEATURES)
    }

    fn load_pending(&self) -> Result<Option<FeatureLists>, PipelineError> {
        let path = self.pending_path();
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
    }

    fn update_job(&self, job_id: u64, f: impl FnOnce(&mut RetrainJob)) {
        let mut jobs = self.jobs.lock().expect("job lock");
        if let Some(job) = jobs.iter_mut().find(|j| j.job_id == job_id) {
            f(job);
        }
    }

    /// Commits a staged snapshot and makes it current. Caller holds `publish`.
    fn publish_staged(&self, staged: crate::snapshot::StagedSnapshot) -> Result<Arc<LoadedSnapshot>, PipelineError> {
        let hash = pipeline::snapshot_config_hash(&self.cfg, staged.dir())?;
        let snapshot = staged.commit(&hash)?;
        let loaded = Arc::new(LoadedSnapshot::load(&self.cfg, snapshot)?);
        *self.current.write().expect("snapshot lock") = loaded.clone();
        Ok(loaded)
    }

    /// Refits the topic model with the pending feature lists applied and
    /// publishes the result. Blocking; runs on a worker thread.
    pub fn retrain(&self) -> Result<u64, PipelineError> {
        let base = self.current();
        let pending = self.load_pending()?;
        let staged = self.store.begin(Some(&base.snapshot), true, "retrain")?;
        if let Some(lists) = &pending {
            std::fs::write(staged.path(artifacts::FEATURES), serde_json::to_string_pretty(lists)? + "\n")?;
        }
        pipeline::train(&self.cfg, staged.dir())?;
        if let Some(gate) = &self.gate {
            gate.arrive();
        }

        let _guard = self.publish.lock().expect("publish lock");
        // names or groups edited while training apply to the new model too
        let latest = self.current();
        if latest.id() != base.id() {
            if let Some(edited) = &latest.lda {
                let mut model = pipeline::load_lda(staged.dir())?;
                pipeline::carry_curation(edited, &mut model);
                staged.remove(artifacts::LDA)?;
                model.save(&staged.path(artifacts::LDA))?;
            }
        }
        if staged.has(artifacts::ANNOTATIONS) && staged.has(artifacts::LEXICON) {
            pipeline::trends(&self.cfg, staged.dir())?;
        }
        let published = self.publish_staged(staged)?;
        if self.load_pending()? == pending && pending.is_some() {
            std::fs::remove_file(self.pending_path())?;
        }
        Ok(published.id())
    }

    /// Publishes a snapshot whose topic model has been edited by `edit`.
    fn publish_curation(
        &self,
        stage: &str,
        edit: impl FnOnce(&mut LdaModel) -> Result<(), ApiError>,
    ) -> Result<Arc<LoadedSnapshot>, ApiError> {
        let _guard = self.publish.lock().expect("publish lock");
        let base = self.current();
        let mut model = base.lda.clone().ok_or_else(no_model)?;
        edit(&mut model)?;
        let staged = self.store.begin(Some(&base.snapshot), true, stage).map_err(internal)?;
        staged.remove(artifacts::LDA).map_err(internal)?;
        model.save(&staged.path(artifacts::LDA)).map_err(internal)?;
        if staged.has(artifacts::DASHBOARD) {
            pipeline::trends(&self.cfg, staged.dir()).map_err(internal)?;
        }
        self.publish_staged(staged).map_err(internal)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn bad_field(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.to_string()),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(field) = self.field {
            body["field"] = Value::String(field);
        }
        (self.status, Json(body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

fn no_model() -> ApiError {
    ApiError::not_found("current snapshot has no topic model; run `train` first")
}

fn no_dashboard() -> ApiError {
    ApiError::not_found("current snapshot has no trend series; run `trends` first")
}

type ApiResult = Result<Response, ApiError>;

fn ok(value: Value) -> ApiResult {
    Ok(Json(value).into_response())
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let message = e.to_string();
        // serde names the offending field in backticks
        let field = message.split('`').nth(1).unwrap_or("body").to_string();
        ApiError::bad_field(&field, format!("invalid request body: {message}"))
    })
}

fn with_snapshot(mut value: Value, id: u64) -> Value {
    if let Value::Object(map) = &mut value {
        map.insert("snapshot_id".into(), json!(id));
    }
    value
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/snapshot", get(get_snapshot))
        .route("/api/topics", get(get_topics))
        .route("/api/topics/{k}/samples", get(get_samples))
        .route("/api/topics/{k}/name", post(post_topic_name))
        .route("/api/groups", post(post_groups))
        .route("/api/features", get(get_features).post(post_features))
        .route("/api/retrain", post(post_retrain))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/trends", get(get_trends))
        .route("/api/external", get(get_external))
        .route("/api/correlations", get(get_correlations))
        .route("/api/dashboard", get(get_dashboard))
        .route("/api/posts/{id}", get(get_post))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

async fn get_snapshot(State(state): State<SharedState>) -> ApiResult {
    let snap = state.current();
    let m = &snap.snapshot.manifest;
    ok(json!({
        "snapshot_id": m.snapshot_id,
        "timestamp": m.timestamp,
        "config_hash": m.config_hash,
        "parent_snapshot_id": m.parent_snapshot_id,
        "stage": m.stage,
        "artifacts": m.files.keys().collect::<Vec<_>>(),
        "has_topic_model": snap.lda.is_some(),
        "has_trends": snap.dashboard.is_some(),
    }))
}

fn parse_topic(model: &LdaModel, raw: &str) -> Result<usize, ApiError> {
    raw.parse::<usize>()
        .ok()
        .filter(|k| *k < model.n_topics())
        .ok_or_else(|| ApiError::not_found(format!("unknown topic {raw:?}")))
}

async fn get_topics(State(state): State<SharedState>) -> ApiResult {
    let snap = state.current();
    let model = snap.lda.as_ref().ok_or_else(no_model)?;
    let mut dominant = vec![0usize; model.n_topics()];
    for row in model.doc_topic.rows() {
        dominant[dominant_topic(row.as_slice().expect("standard layout"))] += 1;
    }
    let topics: Vec<Value> = (0..model.n_topics())
        .map(|k| {
            let g = model.group_map.assignment[k];
            let terms = top_terms(model, k, TOP_TERMS).expect("topic in range");
            json!({
                "topic": k,
                "name": model.topic_names[k],
                "group_index": g,
                "group": model.group_map.groups[g],
                "documents": dominant[k],
                "top_terms": terms.iter().map(|(t, w)| json!({"term": t, "weight": w})).collect::<Vec<_>>(),
            })
        })
        .collect();
    ok(json!({
        "snapshot_id": snap.id(),
        "groups": model.group_map.groups,
        "topics": topics,
    }))
}

async fn get_samples(
    State(state): State<SharedState>,
    UrlPath(k): UrlPath<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult {
    let snap = state.current();
    let model = snap.lda.as_ref().ok_or_else(no_model)?;
    let topic = parse_topic(model, &k)?;
    let seed = match query.get("seed") {
        Some(s) => s.parse::<u64>().map_err(|_| ApiError::bad_field("seed", format!("seed must be a non-negative integer, got {s:?}")))?,
        None => state.cfg.lda.seed,
    };
    let selection = select_review_samples(model, topic, seed).map_err(internal)?;
    let report = pipeline::attach_texts(topic, seed, selection, &snap.posts);
    ok(with_snapshot(serde_json::to_value(report).map_err(internal)?, snap.id()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NameBody {
    name: Option<String>,
}

async fn post_topic_name(State(state): State<SharedState>, UrlPath(k): UrlPath<String>, body: Bytes) -> ApiResult {
    let body: NameBody = parse_body(&body)?;
    let name = body.name.map(|n| n.trim().to_string()).filter(|n| !n.is_empty());
    let topic = parse_topic(state.current().lda.as_ref().ok_or_else(no_model)?, &k)?;
    let worker = state.clone();
    let stored = name.clone();
    let published = tokio::task::spawn_blocking(move || {
        worker.publish_curation("rename-topic", |model| {
            model.set_topic_name(topic, stored).map_err(|e| ApiError::not_found(e.to_string()))
        })
    })
    .await
    .map_err(internal)??;
    ok(json!({ "snapshot_id": published.id(), "topic": topic, "name": name }))
}

async fn post_groups(State(state): State<SharedState>, body: Bytes) -> ApiResult {
    let map: TopicGroupMap = parse_body(&body)?;
    let k = state.current().lda.as_ref().ok_or_else(no_model)?.n_topics();
    map.validate(k).map_err(|e| {
        let field = if map.groups.is_empty() { "groups" } else { "assignment" };
        ApiError::bad_field(field, e.to_string())
    })?;
    let worker = state.clone();
    let stored = map.clone();
    let published = tokio::task::spawn_blocking(move || {
        worker.publish_curation("regroup-topics", |model| {
            model.set_group_map(stored).map_err(|e| ApiError::bad_field("assignment", e.to_string()))
        })
    })
    .await
    .map_err(internal)??;
    ok(json!({ "snapshot_id": published.id(), "groups": map.groups, "assignment": map.assignment }))
}

async fn get_features(State(state): State<SharedState>) -> ApiResult {
    let snap = state.current();
    let pending = state.load_pending().map_err(internal)?;
    ok(json!({
        "snapshot_id": snap.id(),
        "include": snap.features.include,
        "exclude": snap.features.exclude,
        "pending": pending,
    }))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FeatureEdit {
    #[serde(default)]
    add_include: Vec<String>,
    #[serde(default)]
    add_exclude: Vec<String>,
    #[serde(default)]
    remove: Vec<String>,
}

fn normalize_tokens(field: &str, tokens: &[String]) -> Result<Vec<String>, ApiError> {
    tokens
        .iter()
        .map(|t| {
            let t = t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            if t.is_empty() {
                Err(ApiError::bad_field(field, "tokens must not be blank"))
            } else {
                Ok(t)
            }
        })
        .collect()
}

/// Applies an edit to the token lists. Nothing is retrained here; the
/// lists are stored as pending and used by the next retrain.
pub fn apply_feature_edit(start: &FeatureLists, edit_json: &[u8]) -> Result<FeatureLists, ApiError> {
    let edit: FeatureEdit = parse_body(&Bytes::copy_from_slice(edit_json))?;
    let add_include = normalize_tokens("add_include", &edit.add_include)?;
    let add_exclude = normalize_tokens("add_exclude", &edit.add_exclude)?;
    let remove = normalize_tokens("remove", &edit.remove)?;
    if let Some(t) = add_include.iter().find(|t| add_exclude.contains(t)) {
        return Err(ApiError::bad_field(
            "add_exclude",
            format!("token {t:?} cannot be both included and excluded"),
        ));
    }
    let mut lists = start.clone();
    lists.include.retain(|t| !remove.contains(t));
    lists.exclude.retain(|t| !remove.contains(t));
    for t in add_include {
        if lists.exclude.contains(&t) {
            return Err(ApiError::bad_field("add_include", format!("token {t:?} is already excluded")));
        }
        if !lists.include.contains(&t) {
            lists.include.push(t);
        }
    }
    for t in add_exclude {
        if lists.include.contains(&t) {
            return Err(ApiError::bad_field("add_exclude", format!("token {t:?} is already included")));
        }
        if !lists.exclude.contains(&t) {
            lists.exclude.push(t);
        }
    }
    lists.exclude.sort();
    Ok(lists)
}

async fn post_features(State(state): State<SharedState>, body: Bytes) -> ApiResult {
    let snap = state.current();
    let start = state.load_pending().map_err(internal)?.unwrap_or_else(|| snap.features.clone());
    let lists = apply_feature_edit(&start, &body)?;
    lists
        .apply(&state.cfg.features)
        .validate()
        .map_err(|e| ApiError::bad_field("add_include", e.to_string()))?;
    let text = serde_json::to_string_pretty(&lists).map_err(internal)? + "\n";
    let path = state.pending_path();
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).and_then(|_| std::fs::rename(&tmp, &path)).map_err(internal)?;
    ok(json!({
        "snapshot_id": snap.id(),
        "include": snap.features.include,
        "exclude": snap.features.exclude,
        "pending": lists,
    }))
}

async fn post_retrain(State(state): State<SharedState>) -> ApiResult {
    let job = {
        let mut jobs = state.jobs.lock().expect("job lock");
        if let Some(active) = jobs.iter().find(|j| matches!(j.state, JobState::Queued | JobState::Running)) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("retrain job {} is already {:?}", active.job_id, active.state),
            ));
        }
        let job = RetrainJob {
            job_id: jobs.len() as u64 + 1,
            state: JobState::Queued,
            created_at: now(),
            started_at: None,
            finished_at: None,
            parent_snapshot_id: state.current().id(),
            snapshot_id: None,
            error: None,
        };
        jobs.push(job.clone());
        job
    };
    let worker = state.clone();
    let job_id = job.job_id;
    tokio::task::spawn_blocking(move || {
        worker.update_job(job_id, |j| {
            j.state = JobState::Running;
            j.started_at = Some(now());
        });
        let outcome = worker.retrain();
        worker.update_job(job_id, |j| {
            j.finished_at = Some(now());
            match outcome {
                Ok(id) => {
                    j.state = JobState::Done;
                    j.snapshot_id = Some(id);
                }
                Err(e) => {
                    tracing::warn!(job_id, error = %e, "retrain failed");
                    j.state = JobState::Failed;
                    j.error = Some(e.to_string());
                }
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(serde_json::to_value(job).map_err(internal)?)).into_response())
}

async fn get_job(State(state): State<SharedState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let jobs = state.jobs.lock().expect("job lock");
    let job = id
        .parse::<u64>()
        .ok()
        .and_then(|id| jobs.iter().find(|j| j.job_id == id))
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))?;
    ok(serde_json::to_value(job).map_err(internal)?)
}

async fn get_trends(State(state): State<SharedState>, Query(query): Query<HashMap<String, String>>) -> ApiResult {
    let snap = state.current();
    let dash = snap.dashboard.as_ref().ok_or_else(no_dashboard)?;
    let raw = match query.get("source").map(String::as_str).unwrap_or("lda") {
        "lda" => &dash.lda,
        "lexicon" => &dash.lexicon,
        other => return Err(ApiError::bad_field("source", format!("source must be lda or lexicon, got {other:?}"))),
    };
    let normalize = match query.get("normalize").map(String::as_str).unwrap_or("false") {
        "true" => true,
        "false" => false,
        other => return Err(ApiError::bad_field("normalize", format!("normalize must be true or false, got {other:?}"))),
    };
    let proportions = monthly_proportions(raw);
    let series = if normalize { &proportions.series } else { raw };
    let mut value = serde_json::to_value(series).map_err(internal)?;
    value["empty_months"] = serde_json::to_value(&proportions.empty_months).map_err(internal)?;
    ok(with_snapshot(value, snap.id()))
}

async fn get_external(State(state): State<SharedState>) -> ApiResult {
    let snap = state.current();
    let dash = snap.dashboard.as_ref().ok_or_else(no_dashboard)?;
    ok(with_snapshot(serde_json::to_value(&dash.external).map_err(internal)?, snap.id()))
}

async fn get_correlations(State(state): State<SharedState>) -> ApiResult {
    let snap = state.current();
    let dash = snap.dashboard.as_ref().ok_or_else(no_dashboard)?;
    ok(json!({
        "snapshot_id": snap.id(),
        "on_proportions": dash.correlation_on_proportions,
        "correlations": dash.correlations,
    }))
}

async fn get_dashboard(State(state): State<SharedState>) -> ApiResult {
    let snap = state.current();
    let dash = snap.dashboard.as_ref().ok_or_else(no_dashboard)?;
    ok(serde_json::to_value(dash).map_err(internal)?)
}

async fn get_post(State(state): State<SharedState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let snap = state.current();
    let post = snap.posts.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown post {id:?}")))?;
    let theta = snap.lda.as_ref().and_then(|m| m.doc_index(&id).map(|d| m.theta(d)));
    ok(json!({
        "snapshot_id": snap.id(),
        "id": post.id,
        "text": post.text,
        "timestamp": post.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "month": post.month,
        "flair_group": post.flair_group,
        "flair_source": post.flair_source,
        "lexicon_topics": snap.annotations.as_ref().map(|a| a.get(&id).cloned().unwrap_or_default()),
        "dominant_topic": theta.as_deref().map(dominant_topic),
        "theta": theta,
    }))
}

/// Binds and serves until the process is stopped.
pub async fn serve(cfg: PipelineConfig) -> Result<(), PipelineError> {
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let state = Arc::new(AppState::open(cfg)?);
    tracing::info!(snapshot = state.current().id(), %addr, "serving");
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
