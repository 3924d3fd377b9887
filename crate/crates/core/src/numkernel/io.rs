//! `CKPD-MAT v1` text matrix format.
//!
//! ```text
//! CKPD-MAT v1 <rows> <cols>
//! <cols space-separated floats, 17 significant digits>
//! ...
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const MAT_MAGIC: &str = "CKPD-MAT";
pub const MAT_VERSION: &str = "v1";

/// Formats a float with 17 significant digits, which round-trips every `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix<W: Write>(mut out: W, m: &Matrix) -> Result<()> {
    writeln!(out, "{MAT_MAGIC} {MAT_VERSION} {} {}", m.rows(), m.cols())?;
    let mut line = String::new();
    for i in 0..m.rows() {
        line.clear();
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            line.push_str(&format_f64(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(input: R) -> Result<Matrix> {
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty matrix file".into()))??;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAT_MAGIC) || parts.next() != Some(MAT_VERSION) {
        return Err(Error::Format(format!("bad matrix header `{header}`")));
    }
    let mut dim = |what: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format(format!("missing or invalid {what} in `{header}`")))
    };
    let rows = dim("rows")?;
    let cols = dim("cols")?;
    if parts.next().is_some() {
        return Err(Error::Format(format!("trailing tokens in header `{header}`")));
    }

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if seen_rows == rows {
            return Err(Error::Format(format!("more than {rows} rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Format(format!("bad float `{tok}` in row {seen_rows}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Format(format!(
                "row {seen_rows} has {} values, expected {cols}",
                data.len() - before
            )));
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(Error::Format(format!("expected {rows} rows, found {seen_rows}")));
    }
    Matrix::new(rows, cols, data)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix(&mut buf, m)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    read_matrix(fs::File::open(path)?)
}
