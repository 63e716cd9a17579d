//! Artifact writing. JSON files wrap their payload next to the resolved
//! config and the code version; CSV files carry both as leading `#` lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    result: &'a T,
}

/// Column documentation for one CSV artifact.
#[derive(Debug, Clone, Serialize)]
pub struct CsvSchema {
    pub file: String,
    pub columns: Vec<(String, String)>,
}

pub struct Artifacts<'a> {
    dir: PathBuf,
    config: &'a RunConfig,
    schemas: Vec<CsvSchema>,
    written: Vec<PathBuf>,
}

impl<'a> Artifacts<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self, CliError> {
        let dir = config.out.clone();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir, config, schemas: Vec::new(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<(), CliError> {
        let env = Envelope { tool: "proca-lattice", version: VERSION, config: self.config, result };
        let mut text =
            serde_json::to_string_pretty(&env).map_err(|e| CliError::Numeric(format!("serialising {name}: {e}")))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    /// `columns` are (name, description) pairs; each row must match in length.
    pub fn csv(&mut self, name: &str, columns: &[(&str, &str)], rows: &[Vec<String>]) -> Result<(), CliError> {
        let config = serde_json::to_string(self.config).expect("the config serialises");
        let mut text = format!("# proca-lattice {VERSION}\n# config {config}\n");
        let header: Vec<&str> = columns.iter().map(|c| c.0).collect();
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), columns.len());
            let _ = writeln!(text, "{}", row.join(","));
        }
        self.schemas.push(CsvSchema {
            file: name.to_string(),
            columns: columns.iter().map(|(c, d)| (c.to_string(), d.to_string())).collect(),
        });
        self.put(name, text.as_bytes())
    }

    /// Writes `schema.json` for the CSVs of this run and returns every path.
    pub fn finish(mut self) -> Result<Vec<PathBuf>, CliError> {
        if !self.schemas.is_empty() {
            let schemas = std::mem::take(&mut self.schemas);
            self.json("schema.json", &schemas)?;
        }
        Ok(self.written)
    }
}

/// Shortest round-trip decimal form, so reruns are byte-identical.
pub fn num(v: f64) -> String {
    format!("{v}")
}
