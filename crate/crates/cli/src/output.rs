use std::fmt;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

/// Exit 2 for bad arguments or inputs, 1 for I/O failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<stainkit::Error> for CliError {
    fn from(e: stainkit::Error) -> Self {
        use stainkit::Error::*;
        match e {
            FileNotFound(_) | Io(_) | Image(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Writes through a temporary sibling file so `path` only ever holds a
/// complete artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Canonical JSON to `out` if given, else stdout.
pub fn emit_json(value: &Value, out: Option<&Path>) -> CliResult {
    let text = stainkit::report::to_canonical_json(value).map_err(|e| CliError::Io(e.to_string()))?;
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn print_json(value: &Value) -> CliResult {
    emit_json(value, None)
}
