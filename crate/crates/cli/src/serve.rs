//! Read-only HTTP service.
//!
//! `POST /retrieve`, `POST /context` and `GET /healthz`. The listener comes
//! up immediately and every endpoint answers 503 until the graph and
//! indices are loaded.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgcqr::pipeline::{ContextResult, PipelineError, Subgraph};
use kgcqr::retrieval::{RetrievalError, Retriever, RetrieverKind, ScoredDoc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::app;
use crate::config::AppConfig;
use crate::ServeArgs;

pub const DEFAULT_TOP_N: usize = 10;

pub struct ServeState {
    retriever: RwLock<Option<Arc<Retriever>>>,
    mock: bool,
}

impl ServeState {
    /// A state with nothing loaded yet. With `mock`, stage timings are
    /// zeroed so that responses are reproducible.
    pub fn new(mock: bool) -> Arc<Self> {
        Arc::new(Self {
            retriever: RwLock::new(None),
            mock,
        })
    }

    pub fn set_ready(&self, retriever: Retriever) {
        *self.retriever.write().unwrap() = Some(Arc::new(retriever));
    }

    fn get(&self) -> Option<Arc<Retriever>> {
        self.retriever.read().unwrap().clone()
    }
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    query: String,
    #[serde(default = "default_top_n")]
    top_n: usize,
    alpha: Option<f64>,
    retriever: Option<RetrieverKind>,
}

#[derive(Serialize)]
struct RetrieveResponse {
    ranking: Vec<ScoredDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<ContextResult>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRequest {
    query: String,
}

#[derive(Serialize)]
struct ContextResponse {
    context: String,
    subgraph: Subgraph,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn unavailable() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "indices are loading")
}

#[allow(clippy::result_large_err)]
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")))
}

fn failure(e: RetrievalError) -> Response {
    let client_side = matches!(
        &e,
        RetrievalError::Validation(_)
            | RetrievalError::Pipeline(PipelineError::EmptyQuery | PipelineError::InvalidParams(_))
    );
    if client_side {
        error(StatusCode::BAD_REQUEST, e.to_string())
    } else {
        log::error!("request failed: {e}");
        error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

async fn healthz(State(state): State<Arc<ServeState>>) -> Response {
    match state.get() {
        Some(_) => (StatusCode::OK, "ok").into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, "loading").into_response(),
    }
}

async fn retrieve(State(state): State<Arc<ServeState>>, body: Bytes) -> Response {
    let Some(retriever) = state.get() else {
        return unavailable();
    };
    let req: RetrieveRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let mock = state.mock;
    let result = tokio::task::spawn_blocking(move || {
        let kind = req.retriever.unwrap_or(RetrieverKind::Dense);
        retriever.retrieve(kind, "query", &req.query, req.alpha, req.top_n)
    })
    .await;
    match result {
        Ok(Ok(mut out)) => {
            if mock {
                if let Some(ctx) = &mut out.context {
                    ctx.trace.zero_timings();
                }
            }
            Json(RetrieveResponse {
                ranking: out.result.ranking,
                trace: out.context,
            })
            .into_response()
        }
        Ok(Err(e)) => failure(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn context(State(state): State<Arc<ServeState>>, body: Bytes) -> Response {
    let Some(retriever) = state.get() else {
        return unavailable();
    };
    let req: ContextRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let result = tokio::task::spawn_blocking(move || retriever.pipeline().contextualize(&req.query)).await;
    match result {
        Ok(Ok(ctx)) => Json(ContextResponse {
            context: ctx.context_text,
            subgraph: ctx.subgraph,
        })
        .into_response(),
        Ok(Err(e)) => failure(e.into()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/retrieve", post(retrieve))
        .route("/context", post(context))
        .with_state(state)
}

pub fn run(cfg: AppConfig, mock: bool, args: ServeArgs) -> Result<()> {
    let bind = args.bind.unwrap_or_else(|| cfg.server.bind_addr.clone());
    let port = args.port.unwrap_or(cfg.server.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((bind.as_str(), port))
            .await
            .with_context(|| format!("binding {bind}:{port}"))?;
        let addr: SocketAddr = listener.local_addr()?;
        eprintln!("listening on http://{addr}");

        let state = ServeState::new(mock);
        let loading = state.clone();
        tokio::task::spawn_blocking(move || {
            let loaded = app::providers(&cfg, mock).and_then(|p| app::load_retriever(&cfg, &p));
            match loaded {
                Ok(r) => {
                    loading.set_ready(r);
                    eprintln!("ready");
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    std::process::exit(i32::from(crate::exit_code(&e)));
                }
            }
        });

        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server failed")
    })
}
