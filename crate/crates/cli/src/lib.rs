//! Helpers shared by the command-line entry points.

use std::io;

/// Logs to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .try_init();
}

/// A literal argument, or the contents of a file when it starts with `@`.
pub fn inline_or_file(arg: &str) -> io::Result<String> {
    match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path),
        None => Ok(arg.to_string()),
    }
}

/// Reads a JSON context from an environment variable.
pub fn context_from_env<T: serde::de::DeserializeOwned>(var: &str) -> Result<T, String> {
    let raw = std::env::var(var).map_err(|_| format!("{var} is not set"))?;
    serde_json::from_str(&raw).map_err(|e| format!("{var}: {e}"))
}
