//! JSON request/response transport shared by the remote scorer and the remote
//! augmenter, and the payload types both protocols exchange.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCORE_PATH: &str = "/score";
pub const AUGMENT_PATH: &str = "/augment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub query_id: String,
    pub prompt_text: String,
    /// Base64 PNG of the profile grid; empty when no grid was rendered.
    pub image_png_b64: String,
    pub candidate_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreResponse {
    pub query_id: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentTask {
    Caption,
    Aspects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentRequest {
    pub image_ref: String,
    pub task: AugmentTask,
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentResponse {
    pub output_text: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {0}")]
    Status(u16),
    #[error("transport: {0}")]
    Other(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, TransportError::Status(s) if *s < 500)
    }
}

/// Posts a JSON body and returns the raw response text.
pub trait JsonTransport: Send + Sync {
    fn post_raw(&self, path: &str, body: &str) -> Result<String, TransportError>;
}

/// Sends `req` and decodes the response, retrying up to `retries` extra times on
/// timeouts, server errors and undecodable payloads.
pub fn call_with_retries<Req, Resp>(
    transport: &dyn JsonTransport,
    path: &str,
    req: &Req,
    retries: u32,
) -> Result<Resp, CallError>
where
    Req: Serialize,
    Resp: DeserializeOwned,
{
    let body = serde_json::to_string(req).map_err(|e| CallError {
        attempts: 0,
        last: TransportError::Other(e.to_string()),
    })?;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let outcome = transport.post_raw(path, &body).and_then(|text| {
            serde_json::from_str::<Resp>(&text).map_err(|e| TransportError::Malformed(e.to_string()))
        });
        match outcome {
            Ok(resp) => return Ok(resp),
            Err(e) if e.is_retryable() && attempts <= retries => {
                log::warn!("{path}: attempt {attempts} failed ({e}); retrying");
            }
            Err(last) => return Err(CallError { attempts, last }),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("gave up after {attempts} attempt(s): {last}")]
pub struct CallError {
    pub attempts: u32,
    pub last: TransportError,
}

/// Blocking HTTP/1.1 transport.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

impl JsonTransport for HttpTransport {
    fn post_raw(&self, path: &str, body: &str) -> Result<String, TransportError> {
        let url = format!("{}{}", self.base_url, path);
        let result = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body)
            .and_then(|mut r| r.body_mut().read_to_string());
        result.map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::StatusCode(s) => TransportError::Status(s),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
            other => TransportError::Other(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted(Mutex<Vec<Result<String, TransportError>>>);

    impl JsonTransport for Scripted {
        fn post_raw(&self, _: &str, _: &str) -> Result<String, TransportError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn ok() -> Result<String, TransportError> {
        Ok(r#"{"output_text":"hi"}"#.into())
    }

    fn req() -> AugmentRequest {
        AugmentRequest {
            image_ref: "a.png".into(),
            task: AugmentTask::Caption,
            prompt_text: "p".into(),
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let t = Scripted(Mutex::new(vec![
            Err(TransportError::Timeout),
            Ok("not json".into()),
            ok(),
        ]));
        let r: AugmentResponse = call_with_retries(&t, AUGMENT_PATH, &req(), 2).unwrap();
        assert_eq!(r.output_text, "hi");
    }

    #[test]
    fn gives_up_after_limit() {
        let t = Scripted(Mutex::new(vec![Err(TransportError::Timeout); 3]));
        let e = call_with_retries::<_, AugmentResponse>(&t, AUGMENT_PATH, &req(), 1).unwrap_err();
        assert_eq!(e.attempts, 2);
        assert_eq!(e.last, TransportError::Timeout);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted(Mutex::new(vec![Err(TransportError::Status(400)), ok()]));
        let e = call_with_retries::<_, AugmentResponse>(&t, AUGMENT_PATH, &req(), 3).unwrap_err();
        assert_eq!(e.attempts, 1);
    }

    #[test]
    fn unknown_fields_are_malformed() {
        let t = Scripted(Mutex::new(vec![Ok(r#"{"output_text":"x","extra":1}"#.into())]));
        let e = call_with_retries::<_, AugmentResponse>(&t, AUGMENT_PATH, &req(), 0).unwrap_err();
        assert!(matches!(e.last, TransportError::Malformed(_)));
    }

    #[test]
    fn task_serializes_lowercase() {
        let s = serde_json::to_string(&req()).unwrap();
        assert_eq!(s, r#"{"image_ref":"a.png","task":"caption","prompt_text":"p"}"#);
    }
}
