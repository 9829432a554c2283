//! Output directory handling: JSON and CSV writers that record every file
//! they emit so the summary can list them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Name of the summary written last by every command.
pub const SUMMARY: &str = "summary.json";

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    /// Creates `root` and checks that files can be written into it.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        let fail = |e: std::io::Error| CliError::Output(format!("{}: {e}", root.display()));
        fs::create_dir_all(root).map_err(fail)?;
        let probe = root.join(".write-probe");
        fs::write(&probe, b"").map_err(fail)?;
        fs::remove_file(&probe).map_err(fail)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Names of the files written so far, in order.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn record(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.record(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.record(name);
        let fail = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(fail)?;
        for row in rows {
            w.serialize(row).map_err(fail)?;
        }
        w.flush().map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
    }

    /// Writes the summary with the manifest of every emitted file, itself
    /// included.
    pub fn write_summary<T: Serialize>(&mut self, summary: &T) -> Result<(), CliError> {
        self.record(SUMMARY);
        let mut value = serde_json::to_value(summary).map_err(|e| CliError::Output(e.to_string()))?;
        if let serde_json::Value::Object(map) = &mut value {
            map.insert("files".into(), serde_json::to_value(&self.files).expect("strings"));
        }
        self.write_json(SUMMARY, &value)
    }
}
