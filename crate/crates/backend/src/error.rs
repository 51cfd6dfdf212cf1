use biasprobe_core::protocol::RequestError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Transport failures or server errors persisted through every retry.
    #[error("backend unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    /// The server rejected the request; not retried.
    #[error("backend error {code}: {message}")]
    Remote { code: String, message: String, retry_advice: Option<String> },
    #[error("invalid request: {0}")]
    InvalidRequest(RequestError),
    /// The server answered with something the protocol does not allow.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl From<RequestError> for BackendError {
    fn from(e: RequestError) -> Self {
        match e {
            RequestError::BadResponse(m) => BackendError::Protocol(m),
            other => BackendError::InvalidRequest(other),
        }
    }
}

impl BackendError {
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}
