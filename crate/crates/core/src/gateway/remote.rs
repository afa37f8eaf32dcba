use serde::{Deserialize, Serialize};

use super::http::HttpClient;
use super::GatewayError;

/// Environment variable holding the inference endpoint URL.
pub const ENDPOINT_ENV: &str = "PERSONA_LLM_ENDPOINT";

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub model: String,
    pub client: HttpClient,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    beam: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> RemoteBackend {
        RemoteBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            client: HttpClient::default(),
        }
    }

    pub fn from_env(model: impl Into<String>) -> Result<RemoteBackend, GatewayError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| GatewayError::Config(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(RemoteBackend::new(endpoint, model))
    }

    pub fn with_client(mut self, client: HttpClient) -> RemoteBackend {
        self.client = client;
        self
    }

    pub(super) fn complete(
        &self,
        prompt: &str,
        max_tokens: usize,
        beam: usize,
    ) -> Result<String, GatewayError> {
        let req = GenerateRequest {
            model: &self.model,
            prompt,
            max_tokens,
            beam,
        };
        let resp: GenerateResponse = self
            .client
            .post_json(&self.endpoint, &req)
            .map_err(|e| GatewayError::Unavailable(e.to_string()))?;
        Ok(resp.text)
    }
}
