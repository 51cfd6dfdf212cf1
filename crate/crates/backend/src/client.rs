use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use biasprobe_core::protocol::{
    DenoiseLossRequest, DenoiseLossResponse, EditRequest, EditResponse, ErrorResponse, GenerateRequest,
    GenerateResponse, HealthResponse, LabelRequest, LabelResponse, PATH_DENOISE_LOSS, PATH_EDIT, PATH_GENERATE,
    PATH_HEALTH, PATH_LABEL,
};
use biasprobe_core::ImageRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;

use crate::{Backend, BackendError};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub endpoint: String,
    /// Upper bound on requests in flight at once.
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ClientConfig {
            endpoint: endpoint.into(),
            max_in_flight: 4,
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
            request_timeout: Duration::from_secs(600),
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

/// Protocol client. Cheap to clone; clones share the in-flight limit.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    http: reqwest::Client,
    config: Arc<ClientConfig>,
    permits: Arc<Semaphore>,
}

impl HttpBackend {
    pub fn new(config: ClientConfig) -> Result<Self, BackendError> {
        let http = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Protocol(format!("http client: {e}")))?;
        let permits = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        Ok(HttpBackend { http, config: Arc::new(config), permits })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    pub async fn health(&self) -> Result<HealthResponse, BackendError> {
        self.call(reqwest::Method::GET, PATH_HEALTH, None).await
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp, BackendError> {
        let body = serde_json::to_vec(req).map_err(|e| BackendError::Protocol(format!("encode request: {e}")))?;
        self.call(reqwest::Method::POST, path, Some(body)).await
    }

    async fn call<Resp: DeserializeOwned>(
        &self,
        method: reqwest::Method,
        path: &str,
        body: Option<Vec<u8>>,
    ) -> Result<Resp, BackendError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let url = self.url(path);
        let mut backoff = self.config.initial_backoff;
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(method.clone(), &url, body.as_ref()).await {
                Ok(bytes) => {
                    return serde_json::from_slice(&bytes)
                        .map_err(|e| BackendError::Protocol(format!("{path}: undecodable response: {e}")));
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("{path}: attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        tokio::time::sleep(backoff).await;
                        backoff *= 2;
                    }
                }
            }
        }
        Err(BackendError::Unavailable { attempts, last })
    }

    async fn attempt(&self, method: reqwest::Method, url: &str, body: Option<&Vec<u8>>) -> Result<Vec<u8>, Attempt> {
        let mut rb = self.http.request(method, url);
        if let Some(b) = body {
            rb = rb.header(reqwest::header::CONTENT_TYPE, "application/json").body(b.clone());
        }
        let resp = rb.send().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_success() {
            return Ok(bytes.to_vec());
        }
        let detail = serde_json::from_slice::<ErrorResponse>(&bytes).ok().map(|r| r.error);
        if status.is_server_error() {
            let msg = match &detail {
                Some(d) => format!("{status}: {}: {}", d.code, d.message),
                None => status.to_string(),
            };
            return Err(Attempt::Retry(msg));
        }
        Err(Attempt::Fatal(match detail {
            Some(d) => BackendError::Remote { code: d.code, message: d.message, retry_advice: d.retry_advice },
            None => BackendError::Remote {
                code: status.as_u16().to_string(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
                retry_advice: None,
            },
        }))
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn generate(&self, req: &GenerateRequest) -> Result<Vec<ImageRecord>, BackendError> {
        req.validate()?;
        let resp: GenerateResponse = self.post(PATH_GENERATE, req).await?;
        req.check_response(&resp.images)?;
        Ok(resp.images)
    }

    async fn edit(&self, req: &EditRequest) -> Result<ImageRecord, BackendError> {
        req.validate()?;
        let resp: EditResponse = self.post(PATH_EDIT, req).await?;
        req.check_response(&resp.image)?;
        Ok(resp.image)
    }

    async fn zero_shot_label(&self, req: &LabelRequest) -> Result<LabelResponse, BackendError> {
        req.validate()?;
        let resp: LabelResponse = self.post(PATH_LABEL, req).await?;
        resp.check(req)?;
        Ok(resp)
    }

    async fn denoise_loss(&self, req: &DenoiseLossRequest) -> Result<f64, BackendError> {
        let resp: DenoiseLossResponse = self.post(PATH_DENOISE_LOSS, req).await?;
        resp.check()?;
        Ok(resp.loss)
    }
}
