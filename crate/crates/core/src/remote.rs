//! Blocking JSON-over-HTTP client shared by the remote embedding and
//! generation providers.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RemoteError {
    /// Timeouts, refused connections and non-200 statuses.
    #[error("{url}: {message}")]
    Retryable { url: String, message: String },
    /// The server answered 200 with a body that does not parse.
    #[error("{url}: malformed response: {message}")]
    Malformed { url: String, message: String },
}

impl RemoteError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RemoteError::Retryable { .. })
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

pub struct JsonClient {
    agent: ureq::Agent,
    url: String,
    in_flight: InFlight,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("url", &self.url).finish_non_exhaustive()
    }
}

impl JsonClient {
    pub fn new(url: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: url.into(),
            in_flight: InFlight {
                used: Mutex::new(0),
                freed: Condvar::new(),
                cap: max_in_flight.max(1),
            },
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, RemoteError> {
        let _permit = self.in_flight.acquire();
        let retryable = |message: String| RemoteError::Retryable {
            url: self.url.clone(),
            message,
        };
        let mut resp = self.agent.post(&self.url).send_json(body).map_err(|e| retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(retryable(format!("HTTP status {status}")));
        }
        resp.body_mut().read_json::<Resp>().map_err(|e| match e {
            ureq::Error::Json(e) => RemoteError::Malformed {
                url: self.url.clone(),
                message: e.to_string(),
            },
            other => retryable(other.to_string()),
        })
    }
}
