//! JSON-over-HTTP control plane with a server-sent event stream per experiment.
//!
//! Writes to one experiment are serialized through its mutex and run on the
//! blocking pool. Reads come from a snapshot published after every completed
//! command, so a reader never sees a half-applied step.

mod schema;

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use aesim_core::dataset::ScalarizerKind;
use aesim_core::embedding::{interpolated_quantile, Point};
use aesim_core::engine::{
    ExperimentConfig, ExperimentState, InterventionSpec, Source, Specimen, Status, StepReport,
    DEFAULT_INTERVENTION_POINTS,
};
use aesim_core::Error;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, Mutex as AsyncMutex};

pub use schema::{schema_document, SCHEMA_VERSION};

/// Quantiles of the per-step sigma distribution reported by the curve endpoint.
pub const SIGMA_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), field: None }
    }

    fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no experiment with id {id:?}"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::State(_) | Error::BudgetExhausted => StatusCode::CONFLICT,
            Error::NotPositiveDefinite | Error::Untrained | Error::Checkpoint(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "field": self.field }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parse a JSON body; failures are 422 with the offending field when serde names one.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).filter(|_| msg.contains("field `")).map(str::to_owned);
        let err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid request body: {msg}"));
        match field {
            Some(f) => err.with_field(f),
            None => err,
        }
    })
}

/// One completed measurement after the seeds, as streamed to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: usize,
    pub source: Source,
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub z: Point,
    pub value: f64,
    pub mean_sigma: f64,
    pub stagnant: bool,
    pub status: Status,
}

fn step_event(state: &ExperimentState, r: &StepReport) -> StepEvent {
    let rec = state.trace().iter().rev().find(|t| t.index == r.index).expect("reported index is traced");
    StepEvent {
        step: r.step,
        source: r.source,
        index: r.index,
        row: rec.row,
        col: rec.col,
        z: rec.z,
        value: rec.value,
        mean_sigma: r.mean_sigma,
        stagnant: r.stagnant,
        status: state.status(),
    }
}

struct Published {
    snapshot: Value,
    curve: Value,
}

struct Slot {
    id: String,
    created_at: u64,
    state: Arc<AsyncMutex<ExperimentState>>,
    published: RwLock<Arc<Published>>,
    log: Mutex<Vec<StepEvent>>,
    tx: broadcast::Sender<StepEvent>,
}

impl Slot {
    fn current(&self) -> Arc<Published> {
        self.published.read().expect("snapshot lock").clone()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ServiceOptions {
    /// Hide simulator-only ground truth (MAE, scalarizer field).
    pub exam_mode: bool,
}

pub struct AppState {
    base: Arc<Specimen>,
    specimens: Mutex<Vec<(ScalarizerKind, Arc<Specimen>)>>,
    experiments: RwLock<BTreeMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
    options: ServiceOptions,
}

impl AppState {
    pub fn new(specimen: Arc<Specimen>, options: ServiceOptions) -> Self {
        Self {
            specimens: Mutex::new(vec![(specimen.scalarizer(), specimen.clone())]),
            base: specimen,
            experiments: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            options,
        }
    }

    /// The shared specimen re-targeted at `kind`, built on first use.
    fn specimen_for(&self, kind: ScalarizerKind) -> Result<Arc<Specimen>, Error> {
        if let Some((_, s)) = self.specimens.lock().expect("specimen lock").iter().find(|(k, _)| *k == kind) {
            return Ok(s.clone());
        }
        let b = &self.base;
        let s = Arc::new(Specimen::new(
            b.dataset().clone(),
            b.patches().patch_size(),
            Some(b.embedding().clone()),
            kind,
        )?);
        self.specimens.lock().expect("specimen lock").push((kind, s.clone()));
        Ok(s)
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.experiments.read().expect("registry lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    fn publish(&self, slot: &Slot, state: &ExperimentState) {
        let p = Published {
            snapshot: snapshot_json(slot, state, self.options.exam_mode),
            curve: curve_json(state, self.options.exam_mode),
        };
        *slot.published.write().expect("snapshot lock") = Arc::new(p);
    }

    fn emit(&self, slot: &Slot, events: Vec<StepEvent>) {
        let mut log = slot.log.lock().expect("event log lock");
        for ev in events {
            log.push(ev.clone());
            // no subscribers is fine
            let _ = slot.tx.send(ev);
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn snapshot_json(slot: &Slot, s: &ExperimentState, exam_mode: bool) -> Value {
    let pred = s.prediction();
    let n = pred.sigma.len().max(1) as f64;
    let (mut arg, mut max) = (0usize, f64::NEG_INFINITY);
    for (i, &v) in pred.sigma.iter().enumerate() {
        if v > max {
            (arg, max) = (i, v);
        }
    }
    let best = s.trace().iter().max_by(|a, b| a.value.total_cmp(&b.value));
    let trace: Vec<Value> = s
        .trace()
        .iter()
        .map(|r| {
            json!({
                "step": r.step, "index": r.index, "row": r.row, "col": r.col,
                "z": r.z, "value": r.value, "pixel": r.pixel, "source": r.source,
            })
        })
        .collect();
    let last = s.curve().last().expect("curve has the init entry");
    json!({
        "id": slot.id,
        "created_at": slot.created_at,
        "status": s.status(),
        "config": s.config(),
        "exam_mode": exam_mode,
        "n_seed": s.config().n_seed,
        "budget": s.config().budget,
        "measured_count": s.measured_count(),
        "steps_completed": s.steps_completed(),
        "curve_length": s.curve().len(),
        "stagnant": s.is_stagnant(),
        "trace": trace,
        "prediction": {
            "mean_sigma": pred.sigma.iter().sum::<f64>() / n,
            "max_sigma": max,
            "argmax_sigma": arg,
            "mean_min": pred.mean.iter().copied().fold(f64::INFINITY, f64::min),
            "mean_max": pred.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "best_measured": best.map(|r| r.value),
            "best_index": best.map(|r| r.index),
            "mae": if exam_mode { None } else { Some(last.mae) },
        },
        "exclusion_default_radius": s.default_exclusion_radius(),
    })
}

fn curve_json(s: &ExperimentState, exam_mode: bool) -> Value {
    let steps: Vec<Value> = s
        .curve()
        .iter()
        .map(|c| {
            let mut sorted = c.sigma.clone();
            sorted.sort_unstable_by(f64::total_cmp);
            let q: Vec<f64> = SIGMA_QUANTILES.iter().map(|&p| interpolated_quantile(&sorted, p)).collect();
            let mut v = json!({
                "step": c.step,
                "mean_sigma": c.mean_sigma,
                "sigma_of_sigma": c.sigma_of_sigma,
                "quantiles": { "p5": q[0], "p25": q[1], "p50": q[2], "p75": q[3], "p95": q[4] },
            });
            if !exam_mode {
                v["mae"] = json!(c.mae);
            }
            v
        })
        .collect();
    json!({ "exam_mode": exam_mode, "steps": steps })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/experiments", post(create_experiment).get(list_experiments))
        .route("/experiments/{id}", get(get_snapshot))
        .route("/experiments/{id}/steps", post(post_steps))
        .route("/experiments/{id}/interventions", post(post_intervention))
        .route("/experiments/{id}/curve", get(get_curve))
        .route("/experiments/{id}/events", get(get_events))
        .route("/dataset/summary", get(dataset_summary))
        .route("/schema", get(get_schema))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

async fn create_experiment(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let config: ExperimentConfig = if body.iter().all(u8::is_ascii_whitespace) {
        ExperimentConfig::default()
    } else {
        parse_body(&body)?
    };
    let app2 = app.clone();
    let state = blocking(move || {
        let specimen = app2.specimen_for(config.scalarizer)?;
        ExperimentState::init(specimen, config)
    })
    .await??;
    let id = format!("exp-{:06}", app.next_id.fetch_add(1, Ordering::Relaxed));
    let (tx, _) = broadcast::channel(256);
    let placeholder = Arc::new(Published { snapshot: Value::Null, curve: Value::Null });
    let slot = Arc::new(Slot {
        id: id.clone(),
        created_at: now_secs(),
        state: Arc::new(AsyncMutex::new(state)),
        published: RwLock::new(placeholder),
        log: Mutex::new(Vec::new()),
        tx,
    });
    {
        let guard = slot.state.lock().await;
        app.publish(&slot, &guard);
    }
    let snapshot = slot.current().snapshot.clone();
    app.experiments.write().expect("registry lock").insert(id, slot);
    Ok((StatusCode::CREATED, Json(snapshot)).into_response())
}

async fn list_experiments(State(app): State<Arc<AppState>>) -> Json<Value> {
    let slots: Vec<Arc<Slot>> = app.experiments.read().expect("registry lock").values().cloned().collect();
    let list: Vec<Value> = slots
        .iter()
        .map(|s| {
            let p = s.current();
            json!({ "id": s.id, "created_at": s.created_at, "status": p.snapshot["status"], "config": p.snapshot["config"] })
        })
        .collect();
    Json(json!({ "experiments": list }))
}

async fn get_snapshot(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(app.slot(&id)?.current().snapshot.clone()))
}

async fn get_curve(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(app.slot(&id)?.current().curve.clone()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepsRequest {
    #[serde(default = "one")]
    n: usize,
}

fn one() -> usize {
    1
}

async fn post_steps(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let slot = app.slot(&id)?;
    let req: StepsRequest = if body.iter().all(u8::is_ascii_whitespace) { StepsRequest { n: 1 } } else { parse_body(&body)? };
    if req.n == 0 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "n must be at least 1").with_field("n"));
    }
    let guard = slot.state.clone().lock_owned().await;
    match guard.status() {
        Status::Running => {}
        s => return Err(ApiError::new(StatusCode::CONFLICT, format!("experiment is {}", status_name(s)))),
    }
    let remaining = guard.config().budget - guard.measured_count();
    if req.n > remaining {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("{} steps requested but only {remaining} measurements remain in the budget", req.n),
        )
        .with_field("n"));
    }
    let (guard, result) = blocking(move || {
        let mut guard = guard;
        let mut work = guard.clone();
        let mut events = Vec::with_capacity(req.n);
        for _ in 0..req.n {
            match work.step() {
                Ok(r) => events.push(step_event(&work, &r)),
                Err(e) => return (guard, Err(e)),
            }
        }
        *guard = work;
        (guard, Ok(events))
    })
    .await?;
    let events = result?;
    app.publish(&slot, &guard);
    app.emit(&slot, events.clone());
    drop(guard);
    Ok(Json(json!({ "events": events, "snapshot": slot.current().snapshot })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterventionRequest {
    spec: InterventionSpec,
    #[serde(default)]
    n_points: Option<usize>,
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Running => "running",
        Status::BudgetExhausted => "budget_exhausted",
        Status::Paused => "paused",
    }
}

async fn post_intervention(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let slot = app.slot(&id)?;
    let req: InterventionRequest = parse_body(&body)?;
    let n_points = req.n_points.unwrap_or(DEFAULT_INTERVENTION_POINTS);
    if n_points == 0 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "n_points must be at least 1").with_field("n_points"));
    }
    if let InterventionSpec::Prioritizing { region, .. } = &req.spec {
        region.validate().map_err(|e| ApiError::from(e).with_field("spec.region"))?;
    }
    let guard = slot.state.clone().lock_owned().await;
    match guard.status() {
        Status::Running => {}
        s => return Err(ApiError::new(StatusCode::CONFLICT, format!("experiment is {}", status_name(s)))),
    }
    let spec = req.spec;
    let (guard, result) = blocking(move || {
        let mut guard = guard;
        let res = guard
            .apply_intervention(&spec, n_points)
            .map(|reports| reports.iter().map(|r| step_event(&guard, r)).collect::<Vec<_>>())
            .map_err(|e| {
                let field = match (&e, &spec) {
                    (Error::EmptyRegion(_) | Error::NonFinite(_), InterventionSpec::Prioritizing { .. }) => Some("spec.region"),
                    (Error::Config(m), _) if m.contains("radius") => Some("spec.radius"),
                    (Error::Config(m), _) if m.contains("budget") => Some("n_points"),
                    _ => None,
                };
                let err = ApiError::from(e);
                match field {
                    Some(f) => err.with_field(f),
                    None => err,
                }
            });
        (guard, res)
    })
    .await?;
    let events = result?;
    app.publish(&slot, &guard);
    app.emit(&slot, events.clone());
    drop(guard);
    Ok(Json(json!({ "events": events, "snapshot": slot.current().snapshot })))
}

#[derive(Deserialize)]
struct EventsQuery {
    since: Option<usize>,
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

fn sse_event(ev: &StepEvent) -> Result<Event, Infallible> {
    Ok(Event::default()
        .id(ev.step.to_string())
        .event("step")
        .data(serde_json::to_string(ev).expect("event serializes")))
}

/// Event stream with replay: events after `since` (or the `Last-Event-ID`
/// header) are sent from the log first, then live events follow in order.
async fn get_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let slot = app.slot(&id)?;
    let header_since = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|s| s.trim().parse().ok());
    let since = q.since.or(header_since).unwrap_or(0);
    // subscribe before reading the log so nothing falls between the two
    let rx = slot.tx.subscribe();
    let backlog: VecDeque<StepEvent> =
        slot.log.lock().expect("event log lock").iter().filter(|e| e.step > since).cloned().collect();
    let last = backlog.back().map_or(since, |e| e.step);
    let follow = q.follow;
    let stream = stream::unfold((backlog, rx, last, slot), move |(mut pending, mut rx, mut last, slot)| async move {
        loop {
            if let Some(ev) = pending.pop_front() {
                last = ev.step;
                return Some((ev, (pending, rx, last, slot)));
            }
            if !follow {
                return None;
            }
            match rx.recv().await {
                Ok(ev) if ev.step > last => {
                    last = ev.step;
                    return Some((ev, (pending, rx, last, slot)));
                }
                Ok(_) => continue,
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    pending = slot.log.lock().expect("event log lock").iter().filter(|e| e.step > last).cloned().collect();
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
    .map(|ev| sse_event(&ev));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct SummaryQuery {
    #[serde(default)]
    ground_truth: bool,
}

async fn dataset_summary(State(app): State<Arc<AppState>>, Query(q): Query<SummaryQuery>) -> Json<Value> {
    let s = &app.base;
    let img = s.dataset().image();
    let exam = app.options.exam_mode;
    let ground_truth = (q.ground_truth && !exam).then(|| json!({ "scalarizer": s.scalarizer(), "values": s.truth() }));
    let [lo, hi] = s.latent().bbox();
    Json(json!({
        "height": img.height(),
        "width": img.width(),
        "image": img.values(),
        "n_bias": s.dataset().n_bias(),
        "patch_size": s.patches().patch_size(),
        "n_patches": s.len(),
        "locations": s.patches().locations(),
        "latent": s.embedding().coords(),
        "latent_source": s.embedding().source(),
        "latent_bbox": [lo, hi],
        "exclusion_default_radius": s.latent().pairwise_percentile(aesim_core::engine::DEFAULT_EXCLUSION_PERCENTILE),
        "exam_mode": exam,
        "ground_truth_available": !exam,
        "ground_truth": ground_truth,
    }))
}

async fn get_schema() -> Json<Value> {
    Json(schema_document())
}

/// Bind `addr` and serve until the process is stopped.
pub async fn serve(addr: &str, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
