use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gshs::state_space::Partition;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Fixed-width float formatting shared by every artifact.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Comma-free rendering of a cell centre; empty for discrete modes.
pub fn center_label(partition: &Partition, cell: usize) -> String {
    partition
        .center(cell)
        .z
        .iter()
        .map(|&v| num(v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct Csv {
    path: PathBuf,
    w: BufWriter<File>,
    width: usize,
}

impl Csv {
    pub fn create(dir: &Path, name: &str, comment: &str, header: &[&str]) -> CliResult<Self> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut csv = Self {
            path,
            w: BufWriter::new(file),
            width: header.len(),
        };
        csv.line(&format!("# {comment}"))?;
        csv.line(&header.join(","))?;
        Ok(csv)
    }

    fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.w, "{s}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn row(&mut self, fields: &[String]) -> CliResult<()> {
        debug_assert_eq!(fields.len(), self.width);
        self.line(&fields.join(","))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_comment_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Csv::create(dir.path(), "a.csv", "scenario=x seed=1", &["t", "v"]).unwrap();
        c.row(&[num(0.5), num(-1e-3)]).unwrap();
        c.finish().unwrap();
        let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(
            text,
            "# scenario=x seed=1\nt,v\n5.0000000000000000e-1,-1.0000000000000000e-3\n"
        );
    }
}
