//! Deterministic text output helpers.

use std::path::Path;

use crate::error::Result;

/// Shortest round-trip representation in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// CSV text with a header row and numeric columns.
pub fn csv_bytes<S: AsRef<str>>(header: &[S], columns: &[&[f64]]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(AsRef::as_ref))?;
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| fmt_f64(c[i])))?;
    }
    w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))
}

/// Writes a CSV with a header row and numeric columns.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    std::fs::write(path, csv_bytes(header, columns)?)?;
    Ok(())
}

/// Reads a numeric CSV written by [`write_columns`]: header plus columns.
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for rec in r.records() {
        for (c, v) in cols.iter_mut().zip(rec?.iter()) {
            c.push(v.parse().map_err(|e| crate::Error::Config(format!("non-numeric cell {v}: {e}")))?);
        }
    }
    Ok((header, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, 1.0 / 3.0, -1e-300, 1.0616213263214593, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn columns_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_columns(&p, &["a", "b"], &[&[1.0, 2.0], &[0.5, -0.25]]).unwrap();
        let (h, c) = read_columns(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(c, vec![vec![1.0, 2.0], vec![0.5, -0.25]]);
    }
}
