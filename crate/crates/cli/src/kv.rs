//! Flat key = value text files: the generator-spec and model-file format.
//! Lines are `key = value`; blank lines and `#` comments are ignored; an
//! optional `[data]` line switches the remainder of the file to raw CSV.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use varbayes::dataset::format_value;
use varbayes::{Result, VbError};

#[derive(Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
    /// Raw CSV text after a `[data]` marker, if present.
    pub data_section: Option<String>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<KvFile> {
        let mut entries = BTreeMap::new();
        let mut data_section = None;
        let mut lines = text.lines().enumerate();
        while let Some((no, line)) = lines.next() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed == "[data]" {
                let rest: Vec<&str> = lines.map(|(_, l)| l).collect();
                data_section = Some(rest.join("\n"));
                break;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                VbError::Parse(format!("line {}: expected `key = value`", no + 1))
            })?;
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(VbError::Parse(format!(
                    "line {}: duplicate key {key:?}",
                    no + 1
                )));
            }
        }
        Ok(KvFile {
            entries,
            data_section,
            consumed: Default::default(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| VbError::Parse(format!("missing key {key:?}")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            VbError::Parse(format!("key {key:?}: cannot parse value {raw:?}"))
        })
    }

    pub fn parse_optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| VbError::Parse(format!("key {key:?}: cannot parse value {raw:?}"))),
        }
    }

    pub fn parse_vector(&self, key: &str) -> Result<DVector<f64>> {
        parse_vector_str(self.require(key)?)
            .map_err(|e| VbError::Parse(format!("key {key:?}: {e}")))
    }

    pub fn parse_matrix(&self, key: &str) -> Result<DMatrix<f64>> {
        parse_matrix_str(self.require(key)?)
            .map_err(|e| VbError::Parse(format!("key {key:?}: {e}")))
    }

    /// Reject keys that no reader asked about; the diagnostic names the key.
    pub fn reject_unknown(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        for key in self.entries.keys() {
            if !consumed.contains(key) {
                return Err(VbError::Parse(format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }
}

pub fn parse_vector_str(raw: &str) -> std::result::Result<DVector<f64>, String> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let mut values = Vec::with_capacity(parts.len());
    for p in parts {
        values.push(
            p.parse::<f64>()
                .map_err(|_| format!("invalid number {p:?}"))?,
        );
    }
    if values.is_empty() {
        return Err("empty vector".into());
    }
    Ok(DVector::from_vec(values))
}

/// Rows separated by `;`, entries by `,`.
pub fn parse_matrix_str(raw: &str) -> std::result::Result<DMatrix<f64>, String> {
    let rows: Vec<&str> = raw.split(';').map(str::trim).collect();
    let mut data = Vec::new();
    let mut width = None;
    for row in &rows {
        let v = parse_vector_str(row)?;
        match width {
            None => width = Some(v.len()),
            Some(w) if w != v.len() => return Err("ragged matrix rows".into()),
            _ => {}
        }
        data.extend(v.iter().copied());
    }
    Ok(DMatrix::from_row_slice(rows.len(), width.unwrap_or(0), &data))
}

pub fn format_vector(v: &DVector<f64>) -> String {
    v.iter()
        .map(|&x| format_value(x))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|r| {
            (0..m.ncols())
                .map(|c| format_value(m[(r, c)]))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect::<Vec<_>>()
        .join("; ")
}
