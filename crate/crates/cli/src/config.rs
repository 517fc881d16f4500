//! Flat `key=value` configuration files.

use std::path::Path;

use thn::Error;

#[derive(Debug)]
pub enum ConfigError {
    Io(Error),
    Usage(String),
}

/// `(line number, key, value)` for every setting; blank lines and lines
/// starting with `#` are skipped.
pub fn read_config(path: &Path) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::Io(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            ConfigError::Usage(format!("{}:{}: expected key=value, found '{line}'", origin.display(), i + 1))
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
