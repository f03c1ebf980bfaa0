//! Command-line pipeline around `transducer-core`: synthetic data, training,
//! text-only adaptation, decoding, scoring and checkpoint averaging.

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

/// Stable error class for the `error[<kind>]` prefix printed by the binary.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<transducer_core::Error>())
        .map_or("usage", |e| e.kind())
}

/// One-line rendering of an error and its causes.
pub fn error_line(err: &anyhow::Error) -> String {
    let parts: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    let mut line = parts.join(": ");
    line.retain(|c| c != '\n');
    format!("error[{}]: {line}", error_kind(err))
}
