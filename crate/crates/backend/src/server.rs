//! HTTP front for [`MockModel`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use biasprobe_core::protocol::{
    DenoiseLossRequest, DenoiseLossResponse, EditRequest, EditResponse, ErrorBody, ErrorResponse, GenerateRequest,
    GenerateResponse, HealthResponse, LabelRequest, PATH_DENOISE_LOSS, PATH_EDIT, PATH_GENERATE, PATH_HEALTH,
    PATH_LABEL, PROTOCOL_VERSION,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::mock::{BiasTable, MockModel, MOCK_MODEL_ID};
use crate::BackendError;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    (status, [(axum::http::header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn error(status: StatusCode, code: &str, message: String) -> Response {
    json(status, &ErrorResponse { error: ErrorBody { code: code.into(), message, retry_advice: None } })
}

// Handlers return the error response directly; boxing it buys nothing.
#[allow(clippy::result_large_err)]
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

fn reply<T: Serialize>(result: Result<T, BackendError>) -> Response {
    match result {
        Ok(v) => json(StatusCode::OK, &v),
        Err(BackendError::InvalidRequest(e)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn health() -> Response {
    json(
        StatusCode::OK,
        &HealthResponse {
            status: "ok".into(),
            model_id: MOCK_MODEL_ID.into(),
            protocol_version: PROTOCOL_VERSION.into(),
        },
    )
}

async fn generate(State(m): State<Arc<MockModel>>, body: Bytes) -> Response {
    let req: GenerateRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let out =
        tokio::task::spawn_blocking(move || m.generate_images(&req).map(|images| GenerateResponse { images })).await;
    reply(out.expect("generate task"))
}

async fn edit(State(m): State<Arc<MockModel>>, body: Bytes) -> Response {
    match parse::<EditRequest>(&body) {
        Ok(req) => reply(m.edit_image(&req).map(|image| EditResponse { image })),
        Err(resp) => resp,
    }
}

async fn label(State(m): State<Arc<MockModel>>, body: Bytes) -> Response {
    match parse::<LabelRequest>(&body) {
        Ok(req) => reply(m.label(&req)),
        Err(resp) => resp,
    }
}

async fn denoise_loss(State(m): State<Arc<MockModel>>, body: Bytes) -> Response {
    match parse::<DenoiseLossRequest>(&body) {
        Ok(req) => reply(m.loss(&req).map(|loss| DenoiseLossResponse { loss })),
        Err(resp) => resp,
    }
}

/// Routes for the full protocol, backed by `model`.
pub fn router(model: MockModel) -> Router {
    Router::new()
        .route(PATH_HEALTH, get(health))
        .route(PATH_GENERATE, post(generate))
        .route(PATH_EDIT, post(edit))
        .route(PATH_LABEL, post(label))
        .route(PATH_DENOISE_LOSS, post(denoise_loss))
        .with_state(Arc::new(model))
}

/// A running mock server. Dropping it leaves the server running until the
/// runtime shuts down; call [`MockServer::shutdown`] to stop it early.
pub struct MockServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Serves until the process is killed.
    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

/// Binds `addr` (port 0 picks a free port) and serves the mock protocol.
pub async fn serve_mock(seed: u64, addr: SocketAddr, bias: BiasTable) -> Result<MockServer, ServeError> {
    let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(addr.port()),
        _ => ServeError::Io(e),
    })?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(MockModel::new(seed, bias));
    let task = tokio::spawn(async move {
        let shutdown = async {
            let _ = rx.await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            log::error!("mock server stopped: {e}");
        }
    });
    log::info!("mock backend listening on {addr}");
    Ok(MockServer { addr, stop: Some(tx), task })
}
