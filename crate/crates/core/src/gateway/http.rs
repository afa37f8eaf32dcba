//! Blocking JSON-over-HTTP client with retries and a cap on in-flight
//! requests.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failed_attempt)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("{url} unavailable after {attempts} attempt(s): {last}")]
    Unavailable {
        url: String,
        attempts: u32,
        last: String,
    },
    #[error("{url} rejected the request with status {status}: {body}")]
    Rejected {
        url: String,
        status: u16,
        body: String,
    },
    #[error("malformed response from {url}: {message}")]
    Decode { url: String, message: String },
}

#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Cloning shares the agent and the concurrency budget.
#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
    slots: Arc<Semaphore>,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Default for HttpClient {
    fn default() -> Self {
        HttpClient::new(Duration::from_secs(60), RetryPolicy::default(), 8)
    }
}

impl HttpClient {
    pub fn new(timeout: Duration, retry: RetryPolicy, max_in_flight: usize) -> HttpClient {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient {
            agent,
            retry,
            slots: Arc::new(Semaphore {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            }),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// POSTs `body` as JSON and decodes the JSON reply. Transport
    /// failures and 5xx replies are retried; 4xx replies are not.
    pub fn post_json<B: Serialize, T: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<T, HttpError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay_after(attempt - 1));
            }
            let _permit = self.slots.acquire();
            let mut resp = match self.agent.post(url).send_json(body) {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status >= 500 {
                last = format!("status {status}");
                continue;
            }
            if status >= 400 {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(HttpError::Rejected {
                    url: url.to_string(),
                    status,
                    body,
                });
            }
            return resp
                .body_mut()
                .read_json::<T>()
                .map_err(|e| HttpError::Decode {
                    url: url.to_string(),
                    message: e.to_string(),
                });
        }
        Err(HttpError::Unavailable {
            url: url.to_string(),
            attempts,
            last,
        })
    }
}
