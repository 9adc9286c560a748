//! Self-describing text matrix files.
//!
//! ```text
//! # free-form comment
//! matrix A 2 2
//! 0.9 0.1
//! 0 1.05
//! ```
//!
//! Each block is a `matrix <name> <rows> <cols>` header followed by `rows`
//! lines of `cols` whitespace-separated values (row-major). Values are
//! written with Rust's shortest round-trip float formatting, so reading a
//! file back reproduces the matrices bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixFile {
    entries: Vec<(String, DMatrix<f64>)>,
}

impl MatrixFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: DMatrix<f64>) {
        self.entries.push((name.into(), m));
    }

    pub fn push_row(&mut self, name: impl Into<String>, values: &[f64]) {
        self.push(name, DMatrix::from_row_slice(1, values.len(), values));
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.get(name).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing matrix `{name}`"),
        })
    }

    /// A `1 x k` (or `k x 1`) matrix read back as a vector.
    pub fn require_row(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.require(name)?.iter().cloned().collect())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &DMatrix<f64>)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, m) in &self.entries {
            let _ = writeln!(out, "matrix {} {} {}", name, m.nrows(), m.ncols());
            // Zero-column matrices carry no value lines.
            for r in 0..m.nrows() * usize::from(m.ncols() > 0) {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        while let Some((line, header)) = lines.next() {
            let parts: Vec<&str> = header.split_whitespace().collect();
            let bad = |message: String| Error::Parse { line, message };
            if parts.len() != 4 || parts[0] != "matrix" {
                return Err(bad(format!("expected `matrix <name> <rows> <cols>`, got `{header}`")));
            }
            let rows: usize = parts[2].parse().map_err(|_| bad("bad row count".into()))?;
            let cols: usize = parts[3].parse().map_err(|_| bad("bad column count".into()))?;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * usize::from(cols > 0) {
                let (rl, row) = lines.next().ok_or_else(|| Error::Parse {
                    line,
                    message: format!("matrix `{}` truncated", parts[1]),
                })?;
                let before = values.len();
                for tok in row.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| Error::Parse {
                        line: rl,
                        message: format!("bad number `{tok}`"),
                    })?;
                    values.push(v);
                }
                if values.len() - before != cols {
                    return Err(Error::Parse {
                        line: rl,
                        message: format!("expected {cols} values, got {}", values.len() - before),
                    });
                }
            }
            entries.push((parts[1].to_string(), DMatrix::from_row_slice(rows, cols, &values)));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
