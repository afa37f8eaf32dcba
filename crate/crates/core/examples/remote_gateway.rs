//! Sends one prompt to an HTTP completion endpoint named by
//! `PERSONA_LLM_ENDPOINT`. The endpoint receives
//! `{"model", "prompt", "max_tokens", "beam"}` and answers `{"text"}`.

use anyhow::{Context, Result};
use persona::gateway::{generate, DecodeConfig, ModelHandle, RemoteBackend, ENDPOINT_ENV};

fn main() -> Result<()> {
    let remote = RemoteBackend::from_env("flan-t5-base")
        .with_context(|| format!("set {ENDPOINT_ENV} to a completion endpoint URL"))?;
    let handle = ModelHandle::remote(remote);
    let prompt = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "Generate a subject for the following email: lunch?".into());
    let out = generate(&handle, &prompt, &DecodeConfig::default())?;
    println!(
        "{} ({} tokens, {:.2}s)",
        out.text, out.token_count, out.latency
    );
    Ok(())
}
