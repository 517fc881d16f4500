//! Run manifests: every resolved setting of a run as `key=value` lines.

use std::fmt::{Display, Write as _};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use thn::Error;

pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        let mut m = RunManifest { entries: Vec::new() };
        m.set("subcommand", subcommand);
        m.set("version", concat!("thn ", env!("CARGO_PKG_VERSION")));
        m.set("run_seed", seed);
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.set(&format!("input.{name}"), path.display());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.set(&format!("output.{name}"), path.display());
    }

    /// The manifest text; the wall-clock timestamp is the last line so
    /// reruns differ only there.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let _ = writeln!(s, "timestamp={secs}");
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}
