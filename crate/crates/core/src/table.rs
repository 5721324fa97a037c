//! CSV tables with a leading `# meta: <json>` provenance line.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! parsed table reproduces the written values bit for bit.

use serde_json::Value;
use thiserror::Error;

const META_PREFIX: &str = "# meta: ";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("missing `# meta:` line")]
    MissingMeta,
    #[error("bad meta json: {0}")]
    Meta(String),
    #[error("missing header row")]
    MissingHeader,
    #[error("line {line}: expected {expected} fields, found {found}")]
    Width { line: usize, expected: usize, found: usize },
    #[error("line {line}, column `{column}`: {msg}")]
    Cell { line: usize, column: String, msg: String },
    #[error("no column named `{0}`")]
    NoColumn(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

impl Table {
    pub fn new<S: Into<String>>(meta: Value, header: impl IntoIterator<Item = S>) -> Self {
        Self {
            meta,
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push_row(row.iter().map(|&x| fmt_num(x)).collect());
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::NoColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TableError> {
        let c = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse::<f64>().map_err(|e| TableError::Cell {
                    line: i + 3,
                    column: name.to_string(),
                    msg: e.to_string(),
                })
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(META_PREFIX);
        out.push_str(&self.meta.to_string());
        out.push('\n');
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix(META_PREFIX))
            .ok_or(TableError::MissingMeta)?;
        let meta: Value = serde_json::from_str(meta).map_err(|e| TableError::Meta(e.to_string()))?;
        let header: Vec<String> = lines
            .next()
            .ok_or(TableError::MissingHeader)?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            if l.is_empty() {
                continue;
            }
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(TableError::Width {
                    line: i + 3,
                    expected: header.len(),
                    found: row.len(),
                });
            }
            rows.push(row);
        }
        Ok(Self { meta, header, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip() {
        let mut t = Table::new(json!({"kind": "demo", "seed": 3}), ["a", "b"]);
        t.push_numbers(&[0.1, -1e-300]);
        t.push_numbers(&[1.0 / 3.0, 2.5e17]);
        let text = t.to_csv();
        assert!(text.starts_with("# meta: {\"kind\":\"demo\",\"seed\":3}\na,b\n"));
        let back = Table::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("a").unwrap()[1].to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn errors() {
        assert_eq!(Table::parse("a,b\n1,2\n"), Err(TableError::MissingMeta));
        assert!(matches!(
            Table::parse("# meta: {}\na,b\n1\n"),
            Err(TableError::Width { line: 3, .. })
        ));
        let t = Table::parse("# meta: {}\na\nx\n").unwrap();
        assert!(matches!(t.column("a"), Err(TableError::Cell { .. })));
        assert!(matches!(t.column("z"), Err(TableError::NoColumn(_))));
    }
}
