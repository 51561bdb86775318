//! CSV tables with `#` metadata lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub name: String,
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip representation, so bodies are reproducible bit for bit.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| num(v)).collect());
    }

    /// Header row and data rows only.
    pub fn body(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# adiabat {}", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out + &self.body()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, self.render())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_metadata_then_body() {
        let mut t = Table::new("x", &["eps", "err"]);
        t.meta("model", "abc");
        t.push_nums(&[0.1, 1e-12]);
        let s = t.render();
        let lines: Vec<_> = s.lines().collect();
        assert!(lines[0].starts_with("# adiabat"));
        assert_eq!(lines[1], "# model: abc");
        assert_eq!(lines[2], "eps,err");
        assert_eq!(lines[3], "1e-1,1e-12");
        assert_eq!("1e-1".parse::<f64>().unwrap(), 0.1);
    }
}
