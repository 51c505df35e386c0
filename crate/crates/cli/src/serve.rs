//! HTTP quoting: `POST /quote` takes an order and returns its quote,
//! `GET /health` lists the loaded model versions.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use promise_core::pipeline::ModelSet;
use promise_core::Error;

use crate::args::ServeArgs;
use crate::commands::parse_order;
use crate::CliResult;

fn failure(status: StatusCode, e: &Error) -> (StatusCode, Json<Value>) {
    (status, Json(json!({ "error": e.kind(), "message": e.to_string() })))
}

async fn quote(State(models): State<Arc<ModelSet>>, body: Bytes) -> (StatusCode, Json<Value>) {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(e) => return failure(StatusCode::BAD_REQUEST, &Error::InvalidInput(e.to_string())),
    };
    let order = match parse_order(text) {
        Ok(o) => o,
        Err(e) => return failure(StatusCode::BAD_REQUEST, &e),
    };
    match models.quote(&order) {
        Ok(q) => (StatusCode::OK, Json(serde_json::to_value(q).unwrap_or(Value::Null))),
        Err(e @ Error::MissingModel(_)) => failure(StatusCode::UNPROCESSABLE_ENTITY, &e),
        Err(e) => failure(StatusCode::BAD_REQUEST, &e),
    }
}

async fn health(State(models): State<Arc<ModelSet>>) -> Json<Value> {
    Json(json!({ "status": "ok", "models": models.versions() }))
}

pub fn router(models: ModelSet) -> Router {
    Router::new().route("/quote", post(quote)).route("/health", get(health)).with_state(Arc::new(models))
}

pub fn run(a: ServeArgs) -> CliResult<()> {
    let models = ModelSet::load(&a.models)?;
    let io = |e: std::io::Error| Error::Io { path: format!("{}:{}", a.host, a.port).into(), source: e };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await.map_err(io)?;
        let addr = listener.local_addr().map_err(io)?;
        println!("listening on http://{addr}");
        axum::serve(listener, router(models)).await.map_err(io)?;
        Ok(())
    })
}
