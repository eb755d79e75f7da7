//! Versioned JSON report envelope and the error object.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Machine-readable failure with its exit code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self { kind: kind.into(), message: message.into(), exit_code: 1 }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<affdim_core::Error> for CliError {
    fn from(e: affdim_core::Error) -> Self {
        use affdim_core::Error as E;
        let exit_code = match e {
            E::Inconclusive { .. } | E::TruncationNotAchieved { .. } => 2,
            _ => 1,
        };
        Self { kind: e.kind().into(), message: e.to_string(), exit_code }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_digest: Option<&'a str>,
    pub seeds: &'a [u64],
    pub status: &'static str,
    pub warnings: &'a [String],
    pub result: Option<&'a T>,
    pub error: Option<&'a CliError>,
}

/// Pretty JSON plus a trailing newline.
pub fn render<T: Serialize>(env: &Envelope<'_, T>) -> String {
    let mut s = serde_json::to_string_pretty(env).expect("report serialization");
    s.push('\n');
    s
}

pub fn status_for(code: i32) -> &'static str {
    match code {
        0 => "ok",
        2 => "inconclusive",
        _ => "error",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn inconclusive_maps_to_two() {
        let e: CliError = affdim_core::Error::Inconclusive { n: 3, s: 1.0, root: 1.0, stderr: 0.1 }.into();
        assert_eq!((e.kind.as_str(), e.exit_code), ("inconclusive", 2));
        let e: CliError = affdim_core::Error::Input("x".into()).into();
        assert_eq!(e.exit_code, 1);
    }
}
