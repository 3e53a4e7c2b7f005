//! CSV and JSON emission. Every CSV starts with `# key: value` metadata
//! lines followed by a header row; values carry 15 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde::de::DeserializeOwned;

use crate::error::{IvrError, Result};

/// Metadata written ahead of every table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Metadata(vec![("version".into(), env!("CARGO_PKG_VERSION").into())])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Metadata,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(meta: Metadata, columns: &[&str]) -> Self {
        Table { meta, columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta.0 {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.14e}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Metadata::default();
        let mut lines = text.lines();
        let mut header = None;
        for line in lines.by_ref() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once(": ").unwrap_or((rest, ""));
                meta.0.push((k.to_string(), v.to_string()));
            } else {
                header = Some(line);
                break;
            }
        }
        let header = header.ok_or_else(|| IvrError::InvalidInput("CSV has no header row".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| IvrError::InvalidInput(format!("CSV row {}: {e}", i + 1)))?;
            if row.len() != columns.len() {
                return Err(IvrError::InvalidInput(format!("CSV row {} has {} cells", i + 1, row.len())));
            }
            rows.push(row);
        }
        Ok(Table { meta, columns, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        fs::write(path, self.render()).map_err(|e| IvrError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| IvrError::io(path, e))?)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IvrError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| IvrError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| IvrError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_keeps_fifteen_digits() {
        let mut t = Table::new(Metadata::new().with("energy", 0.097964), &["t_fs", "p"]);
        t.push(vec![0.0, 1.0]);
        t.push(vec![12.5, 0.123_456_789_012_345_67]);
        let back = Table::parse(&t.render()).unwrap();
        assert_eq!(back.meta.get("energy"), Some("0.097964"));
        assert_eq!(back.columns, t.columns);
        let p = back.column("p").unwrap();
        assert!((p[1] - 0.123_456_789_012_345_67).abs() < 5e-16);
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(Table::parse("a,b\n1,2\n3\n").is_err());
        assert!(Table::parse("# only: meta\n").is_err());
    }
}
