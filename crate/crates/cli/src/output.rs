//! CSV tables with `#` metadata headers, JSON summaries and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// A table destined for one CSV file.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self { name: name.into(), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Table) {
        self.rows.extend(other.rows);
    }
}

/// Text form of one CSV cell; floats keep round-trip precision and switch
/// to exponent notation when very small or large.
pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! display_cell {
    ($($t:ty),*) => { $(impl Cell for $t { fn cell(&self) -> String { self.to_string() } })* };
}

display_cell!(usize, u64, bool, String, &str);

impl<T: Cell + ?Sized> Cell for &T {
    fn cell(&self) -> String {
        (**self).cell()
    }
}

/// Builds a table row from cell values.
#[macro_export]
macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$($crate::output::Cell::cell(&$v)),*] };
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes every artifact of one run into `dir`.
pub struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn save(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(FileEntry { path: name.to_string(), sha256: hex(&Sha256::digest(bytes)), bytes: bytes.len() });
        Ok(())
    }

    pub fn table(&mut self, table: &Table, header: &[(String, String)]) -> Result<(), CliError> {
        let mut buf = Vec::new();
        for (k, v) in header {
            writeln!(buf, "# {k}: {v}").expect("write to memory");
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&table.columns).map_err(|e| CliError::Csv(e.to_string()))?;
            for r in &table.rows {
                w.write_record(r).map_err(|e| CliError::Csv(e.to_string()))?;
            }
            w.flush().map_err(|e| CliError::Csv(e.to_string()))?;
        }
        self.save(&format!("{}.csv", table.name), &buf)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Csv(e.to_string()))?;
        text.push(b'\n');
        self.save(name, &text)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, mut manifest: serde_json::Value) -> Result<PathBuf, CliError> {
        manifest["files"] = serde_json::to_value(&self.files).expect("file list serializes");
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        text.push(b'\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
