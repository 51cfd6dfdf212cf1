use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use biasprobe_backend::{Backend, BackendError, ClientConfig, HttpBackend};
use biasprobe_core::protocol::DenoiseLossRequest;
use biasprobe_core::{ImageRecord, Provenance};

#[derive(Default)]
struct Counters {
    calls: AtomicU32,
    fail_first: u32,
    status: u16,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

async fn loss(State(c): State<Arc<Counters>>) -> (StatusCode, String) {
    let n = c.calls.fetch_add(1, Ordering::SeqCst) + 1;
    let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    c.peak.fetch_max(now, Ordering::SeqCst);
    tokio::time::sleep(Duration::from_millis(20)).await;
    c.in_flight.fetch_sub(1, Ordering::SeqCst);
    if n <= c.fail_first {
        let body = r#"{"error":{"code":"overloaded","message":"try later","retry_advice":"backoff"}}"#;
        return (StatusCode::from_u16(c.status).unwrap(), body.into());
    }
    (StatusCode::OK, r#"{"loss":0.125}"#.into())
}

async fn spawn(counters: Arc<Counters>) -> String {
    let app = Router::new().route("/v1/denoise_loss", post(loss)).with_state(counters);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn config(url: String) -> ClientConfig {
    ClientConfig { initial_backoff: Duration::from_millis(5), ..ClientConfig::new(url) }
}

fn req() -> DenoiseLossRequest {
    let image = ImageRecord::filled(2, 2, [180, 120, 90], Provenance { id: "a".into(), ..Default::default() }).unwrap();
    DenoiseLossRequest { image, prompt: "A portrait of a nurse.".into(), noise_seed: 1, timestep_seed: 2 }
}

#[tokio::test]
async fn recovers_from_transient_server_errors() {
    let c = Arc::new(Counters { fail_first: 2, status: 503, ..Default::default() });
    let client = HttpBackend::new(config(spawn(c.clone()).await)).unwrap();
    assert_eq!(client.denoise_loss(&req()).await.unwrap(), 0.125);
    assert_eq!(c.calls.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn gives_up_after_max_retries() {
    let c = Arc::new(Counters { fail_first: u32::MAX, status: 500, ..Default::default() });
    let client = HttpBackend::new(config(spawn(c.clone()).await)).unwrap();
    let err = client.denoise_loss(&req()).await.unwrap_err();
    assert!(err.is_unavailable(), "{err:?}");
    assert!(matches!(err, BackendError::Unavailable { attempts: 4, .. }));
    assert_eq!(c.calls.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let c = Arc::new(Counters { fail_first: u32::MAX, status: 422, ..Default::default() });
    let client = HttpBackend::new(config(spawn(c.clone()).await)).unwrap();
    let err = client.denoise_loss(&req()).await.unwrap_err();
    assert_eq!(
        err,
        BackendError::Remote {
            code: "overloaded".into(),
            message: "try later".into(),
            retry_advice: Some("backoff".into())
        }
    );
    assert_eq!(c.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let client = HttpBackend::new(ClientConfig { max_retries: 1, ..config(url) }).unwrap();
    let err = client.denoise_loss(&req()).await.unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { attempts: 2, .. }), "{err:?}");
}

#[tokio::test]
async fn in_flight_requests_are_bounded() {
    let c = Arc::new(Counters::default());
    let client = HttpBackend::new(ClientConfig { max_in_flight: 2, ..config(spawn(c.clone()).await) }).unwrap();
    let r = req();
    let calls = (0..12).map(|_| client.denoise_loss(&r));
    for out in futures::future::join_all(calls).await {
        out.unwrap();
    }
    assert_eq!(c.calls.load(Ordering::SeqCst), 12);
    assert!(c.peak.load(Ordering::SeqCst) <= 2);
    assert!(c.peak.load(Ordering::SeqCst) >= 1);
}

#[tokio::test]
async fn negative_loss_is_a_protocol_violation() {
    let app = Router::new().route("/v1/denoise_loss", post(|| async { r#"{"loss":-1.0}"# }));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    let client = HttpBackend::new(config(url)).unwrap();
    assert!(matches!(client.denoise_loss(&req()).await.unwrap_err(), BackendError::Protocol(_)));
}
