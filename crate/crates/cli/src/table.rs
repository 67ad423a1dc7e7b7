//! Generic numeric CSV files: `#` key-value comment lines, one header row,
//! dense f64 columns. Used for prediction and replay outputs, which carry
//! different columns than trial recordings.

use std::fmt::Write as _;
use std::path::Path;

use ankle_msk::{Error, Result};

#[derive(Debug)]
pub struct NumericTable {
    pub comments: Vec<(String, String)>,
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Floats go out in shortest round-trip form, so outputs are value-exact on
/// reload and byte-identical across reruns.
pub fn write_table(
    path: impl AsRef<Path>,
    comments: &[(String, String)],
    headers: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    let path = path.as_ref();
    assert_eq!(headers.len(), columns.len());
    let n = columns.first().map_or(0, |c| c.len());
    assert!(columns.iter().all(|c| c.len() == n), "ragged columns");
    let mut out = String::new();
    for (k, v) in comments {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let _ = writeln!(out, "{}", headers.join(","));
    for i in 0..n {
        for (j, col) in columns.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", col[i]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: impl AsRef<Path>) -> Result<NumericTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: String| Error::InvalidInput(format!("{}: {reason}", path.display()));

    let mut comments = Vec::new();
    let mut headers: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut row = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim_start();
            let (k, v) = comment.split_once(':').unwrap_or((comment, ""));
            comments.push((k.trim().to_owned(), v.trim().to_owned()));
            continue;
        }
        if headers.is_empty() {
            headers = line.split(',').map(|h| h.trim().to_owned()).collect();
            columns = vec![Vec::new(); headers.len()];
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != headers.len() {
            return Err(fail(format!(
                "line {}: {} cell(s), header has {}",
                lineno + 1,
                cells.len(),
                headers.len()
            )));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                fail(format!(
                    "row {row} column {}: unparseable value {cell:?}",
                    headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(fail(format!(
                    "row {row} column {}: non-finite value {cell}",
                    headers[j]
                )));
            }
            columns[j].push(v);
        }
        row += 1;
    }
    if headers.is_empty() {
        return Err(fail("no header row".into()));
    }
    if row == 0 {
        return Err(fail("no data rows".into()));
    }
    Ok(NumericTable { comments, headers, columns })
}
