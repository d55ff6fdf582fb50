//! HTTP service. Queries read live index state through the updator's
//! searcher; writes append to the change log and become visible once the
//! updator applies them. The log stays the single source of truth: the
//! service never mutates the index directly.

use std::collections::{BTreeMap, HashSet};
use std::future::IntoFuture;
use std::io::Write as _;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use linr_core::scoring::{Scorer, ScorerSpec};
use linr_core::{normalize_upsert, Algo, IndexConfig, Query, QueryFilter, Searcher};
use linr_ingest::{bootstrap, LogWriter, Updator};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{changelog_path, data_dir, snapshot_path, Resolved};
use crate::{CliError, CliResult};

/// Post-log view of the id set, for capacity admission: after the log is
/// fully applied, an upsert of a new id succeeds exactly when the live
/// count is below capacity, so tracking ids at append time gives an exact
/// admission check no matter how far the updator lags.
struct WriteState {
    log: LogWriter,
    live_ids: HashSet<u64>,
}

struct Ready {
    icfg: IndexConfig,
    scorer: Box<dyn Scorer>,
    searcher: Searcher,
    updator: Updator,
    write: Mutex<WriteState>,
}

/// Empty until bootstrap completes; handlers answer 503 meanwhile.
type Shared = Arc<OnceLock<Ready>>;

pub struct ServeArgs {
    pub bind: String,
    pub threads: Option<usize>,
}

pub fn serve(res: &Resolved, args: &ServeArgs) -> CliResult<()> {
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = args.threads {
        builder.worker_threads(n);
    }
    let rt = builder
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;

    let icfg = res.index.clone();
    let spec = res.scorer.clone();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {}: {e}", args.bind)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Data(format!("cannot read bound address: {e}")))?;
        // Parsed by operators and tests; must land before bootstrap.
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();

        let state: Shared = Arc::new(OnceLock::new());
        let app = router(state.clone());
        let server = tokio::spawn(
            axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).into_future(),
        );

        let ready = tokio::task::spawn_blocking(move || make_ready(icfg, spec))
            .await
            .map_err(|e| CliError::Data(format!("bootstrap task panicked: {e}")))??;
        log::info!(
            "ready: {} live items, applied seq {}",
            ready.searcher.live_count(),
            ready.searcher.applied_seq()
        );
        let _ = state.set(ready);

        match server.await {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(CliError::Data(format!("server error: {e}"))),
            Err(e) => Err(CliError::Data(format!("server task panicked: {e}"))),
        }
    })
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term =
            tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
                .expect("SIGTERM handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = ctrl_c.await;
    }
}

fn make_ready(icfg: IndexConfig, spec: ScorerSpec) -> CliResult<Ready> {
    let dir = data_dir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let log = changelog_path();
    let snap = snapshot_path();
    let base = snap.exists().then_some(snap);
    let boot = bootstrap(base.as_deref(), &log, &icfg)?;
    if boot.poisoned > 0 {
        log::warn!("skipped {} poisoned change-log lines", boot.poisoned);
    }
    if !boot.weights_ref.is_empty() {
        log::info!("snapshot names weights file {:?}; serving with the configured scorer", boot.weights_ref);
    }
    let scorer = spec.build()?;
    let live_ids: HashSet<u64> = boot.index.export_live().iter().map(|r| r.id).collect();
    let writer = LogWriter::open(&log, &icfg)?;
    let updator =
        Updator::spawn(boot.index, &log, Duration::from_millis(2), boot.log_offset, boot.log_lines);
    let searcher = updator.searcher();
    Ok(Ready {
        icfg,
        scorer,
        searcher,
        updator,
        write: Mutex::new(WriteState { log: writer, live_ids }),
    })
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/upsert", post(upsert))
        .route("/delete", post(delete))
        .route("/stats", get(stats))
        .route("/healthz", get(healthz))
        .with_state(state)
}

fn api_error(status: StatusCode, code: &str, message: String) -> Response {
    (status, Json(json!({ "error": { "code": code, "message": message } }))).into_response()
}

fn bad_request(message: String) -> Response {
    api_error(StatusCode::BAD_REQUEST, "bad_request", message)
}

fn not_ready() -> Response {
    api_error(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "index is still bootstrapping".into())
}

/// Malformed bodies (bad JSON, wrong content type, type mismatches) are
/// all 400 with a structured error, not axum's default plain-text codes.
fn require_body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, Response> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(rej) => Err(bad_request(rej.body_text())),
    }
}

fn require_ready(state: &Shared) -> Result<&Ready, Response> {
    state.get().ok_or_else(not_ready)
}

/// Positional clause lists from a name-keyed map; unknown names are a
/// caller error, absent names mean match-all for that clause.
fn positional(
    map: &BTreeMap<String, Vec<u64>>,
    icfg: &IndexConfig,
    what: &str,
) -> Result<Vec<Vec<u64>>, Response> {
    for name in map.keys() {
        if !icfg.clauses.iter().any(|c| &c.name == name) {
            return Err(bad_request(format!("unknown {what} clause {name:?}")));
        }
    }
    Ok(icfg
        .clauses
        .iter()
        .map(|c| map.get(&c.name).cloned().unwrap_or_default())
        .collect())
}

#[derive(Deserialize)]
struct ApiQueryRequest {
    emb: Vec<f32>,
    #[serde(default)]
    features: BTreeMap<String, Vec<f32>>,
    #[serde(default)]
    filter: BTreeMap<String, Vec<u64>>,
    k: usize,
    #[serde(default)]
    algo: Option<String>,
    #[serde(default)]
    keep_fraction: Option<f32>,
}

#[derive(Serialize)]
struct ApiItem {
    id: u64,
    score: f32,
}

#[derive(Serialize)]
struct ApiTimings {
    filter: f64,
    score: f64,
    topk: f64,
    total: f64,
}

#[derive(Serialize)]
struct ApiQueryResponse {
    items: Vec<ApiItem>,
    pass_count: usize,
    timings_ms: ApiTimings,
}

async fn query(
    State(state): State<Shared>,
    payload: Result<Json<ApiQueryRequest>, JsonRejection>,
) -> Response {
    let req = match require_body(payload) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let ready = match require_ready(&state) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let algo = match req.algo.as_deref() {
        None | Some("v2") => Algo::V2,
        Some("v1") => Algo::V1,
        Some("v3") => Algo::V3,
        Some(other) => return bad_request(format!("unknown algo {other:?}; expected v1, v2, or v3")),
    };
    let clauses = match positional(&req.filter, &ready.icfg, "filter") {
        Ok(c) => c,
        Err(resp) => return resp,
    };
    let mut q = Query::new(req.emb, QueryFilter::new(clauses), req.k).with_algo(algo);
    q.features = req.features;
    if let Some(kf) = req.keep_fraction {
        q = q.with_keep_fraction(kf);
    }

    // Scoring is CPU-bound; keep the reactor responsive while it runs.
    let result = tokio::task::block_in_place(|| ready.searcher.query(ready.scorer.as_ref(), &q));
    match result {
        Ok(mut res) => {
            // Engine order breaks score ties by slot; the API contract is id.
            res.hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
            let body = ApiQueryResponse {
                items: res.hits.iter().map(|h| ApiItem { id: h.id, score: h.score }).collect(),
                pass_count: res.pass_count,
                timings_ms: ApiTimings {
                    filter: res.timings.filter_us as f64 / 1000.0,
                    score: res.timings.score_us as f64 / 1000.0,
                    topk: res.timings.topk_us as f64 / 1000.0,
                    total: res.timings.total_us as f64 / 1000.0,
                },
            };
            (StatusCode::OK, Json(body)).into_response()
        }
        Err(e) => bad_request(e.to_string()),
    }
}

#[derive(Deserialize)]
struct UpsertRequest {
    id: u64,
    emb: Vec<f32>,
    #[serde(default)]
    attrs: BTreeMap<String, Vec<u64>>,
}

async fn upsert(
    State(state): State<Shared>,
    payload: Result<Json<UpsertRequest>, JsonRejection>,
) -> Response {
    let req = match require_body(payload) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let ready = match require_ready(&state) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let attrs = match positional(&req.attrs, &ready.icfg, "attr") {
        Ok(a) => a,
        Err(resp) => return resp,
    };
    let normalized = match normalize_upsert(&ready.icfg, &req.emb, &attrs) {
        Ok(n) => n,
        Err(e) => return bad_request(e.to_string()),
    };

    let mut w = ready.write.lock().unwrap();
    if !w.live_ids.contains(&req.id) && w.live_ids.len() >= ready.icfg.capacity {
        return api_error(
            StatusCode::CONFLICT,
            "capacity",
            format!("index is full at {} items", ready.icfg.capacity),
        );
    }
    let seq = match append(&mut w.log, |log| log.append_upsert(req.id, &req.emb, &normalized)) {
        Ok(seq) => seq,
        Err(resp) => return resp,
    };
    w.live_ids.insert(req.id);
    drop(w);
    ready.updator.nudge();
    (StatusCode::OK, Json(json!({ "seq": seq }))).into_response()
}

#[derive(Deserialize)]
struct DeleteRequest {
    id: u64,
}

async fn delete(
    State(state): State<Shared>,
    payload: Result<Json<DeleteRequest>, JsonRejection>,
) -> Response {
    let req = match require_body(payload) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let ready = match require_ready(&state) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let mut w = ready.write.lock().unwrap();
    let seq = match append(&mut w.log, |log| log.append_delete(req.id)) {
        Ok(seq) => seq,
        Err(resp) => return resp,
    };
    w.live_ids.remove(&req.id);
    drop(w);
    ready.updator.nudge();
    (StatusCode::OK, Json(json!({ "seq": seq }))).into_response()
}

/// Appends one record and syncs it to disk before acknowledging.
fn append(
    log: &mut LogWriter,
    op: impl FnOnce(&mut LogWriter) -> linr_ingest::Result<u64>,
) -> Result<u64, Response> {
    let seq = op(log).map_err(|e| {
        api_error(StatusCode::INTERNAL_SERVER_ERROR, "log_append", e.to_string())
    })?;
    log.sync().map_err(|e| {
        api_error(StatusCode::INTERNAL_SERVER_ERROR, "log_sync", e.to_string())
    })?;
    Ok(seq)
}

async fn stats(State(state): State<Shared>) -> Response {
    let ready = match require_ready(&state) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let gauges = ready.updator.gauges();
    let appended_seq = ready.write.lock().unwrap().log.next_seq() - 1;
    let body = json!({
        "live": ready.searcher.live_count(),
        "high_water_mark": ready.searcher.high_water_mark(),
        "applied_seq": gauges.applied_seq,
        "appended_seq": appended_seq,
        "poisoned": gauges.poisoned,
        "capacity": ready.icfg.capacity,
        "dim": ready.icfg.dim,
        "quant_bits": ready.icfg.quant_bits,
        "scorer": ready.scorer.name(),
        "memory_bytes": ready.icfg.estimated_bytes(),
    });
    (StatusCode::OK, Json(body)).into_response()
}

async fn healthz(State(state): State<Shared>) -> Response {
    if state.get().is_some() {
        (StatusCode::OK, Json(json!({ "status": "ok" }))).into_response()
    } else {
        not_ready()
    }
}
