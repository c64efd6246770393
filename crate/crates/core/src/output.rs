//! Locale-independent file output: reals with 17 significant digits,
//! UTF-8, `\n` line endings. Only the run manifest carries a timestamp, so
//! every other file is a pure function of the scenario and seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

/// `x` in scientific notation with 17 significant digits.
pub fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // Rust renders these as NaN / inf / -inf already
        format!("{x}")
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

/// Collects rows in memory and writes them in one go.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<String>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        CsvTable { header: header.iter().map(|h| h.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, fields: Vec<String>) {
        debug_assert_eq!(fields.len(), self.header.len());
        self.rows.push(fields.join(","));
    }

    /// Blank separator line, as gnuplot expects between scan lines of a grid.
    pub fn push_blank(&mut self) {
        self.rows.push(String::new());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.header.join(",");
        text.push('\n');
        for r in &self.rows {
            text.push_str(r);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| io_err(path, e))
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Config(format!("cannot serialize {}: {e}", path.display())))?;
    f.write_all(b"\n").map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Everything needed to rerun a command, plus its wall-clock context.
#[derive(Serialize)]
pub struct Manifest<'a, R: Serialize> {
    pub command: &'a str,
    pub package: &'static str,
    pub version: &'static str,
    pub timestamp_unix: u64,
    pub threads: usize,
    pub config: &'a ScenarioConfig,
    pub outputs: Vec<String>,
    pub results: R,
}

impl<'a, R: Serialize> Manifest<'a, R> {
    pub fn new(command: &'a str, config: &'a ScenarioConfig, outputs: &[PathBuf], results: R) -> Self {
        Manifest {
            command,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            threads: rayon::current_num_threads(),
            config,
            outputs: outputs
                .iter()
                .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
                .collect(),
            results,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_keep_seventeen_digits() {
        assert_eq!(real(0.1), "1.0000000000000001e-1");
        assert_eq!(real(-2.0), "-2.0000000000000000e0");
        assert_eq!(real(0.1).parse::<f64>().unwrap(), 0.1);
        let x = std::f64::consts::PI * 1e-300;
        assert_eq!(real(x).parse::<f64>().unwrap(), x);
        assert_eq!(real(f64::NAN), "NaN");
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["1".into(), real(0.5)]);
        t.push_blank();
        t.write(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n1,5.0000000000000000e-1\n\n");
    }
}
