//! Numeric CSV tables and atomic file output.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

/// A header plus rows of finite numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn values(&self, col: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[col]).collect()
    }

    /// Rows restricted to `cols`, flattened row-major.
    pub fn flat(&self, cols: &[usize]) -> Vec<f64> {
        self.rows.iter().flat_map(|r| cols.iter().map(|&c| r[c])).collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut text = String::new();
    file.read_to_string(&mut text).with_context(|| format!("cannot read {}", path.display()))?;
    parse_table(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        bail!("missing header line");
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| anyhow!("row {row}: {e}"))?;
        if record.len() != header.len() {
            bail!("row {row} (line {}): expected {} fields, found {}", row + 1, header.len(), record.len());
        }
        let values = record
            .iter()
            .zip(&header)
            .map(|(field, name)| {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| anyhow!("row {row} (line {}), column {name}: `{field}` is not a number", row + 1))?;
                if !v.is_finite() {
                    bail!("row {row} (line {}), column {name}: non-finite value `{field}`", row + 1);
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok(Table { header, rows })
}

pub fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("{e}"))?)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write to {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Writes to `path`, or to stdout when absent.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_rows() {
        let t = parse_table("a,b\n1,2\n3.5,-1e3\n").unwrap();
        assert_eq!(t.header, ["a", "b"]);
        assert_eq!(t.rows, vec![vec![1.0, 2.0], vec![3.5, -1000.0]]);
        let e = parse_table("a,b\n1,2\n3,NaN\n").unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("non-finite"), "{e}");
        let e = parse_table("a,b\n1,x\n").unwrap_err().to_string();
        assert!(e.contains("row 1") && e.contains("column b"), "{e}");
        assert!(parse_table("a,b\n1,inf\n").is_err());
        assert!(parse_table("a,b\n1\n").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }
}
