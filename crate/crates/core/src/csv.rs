//! Plain numeric CSV for matrices: one matrix row per line, comma separated,
//! `.` as the decimal separator.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

/// Renders `m` as CSV text. Values use Rust's shortest round-trip formatting.
pub fn matrix_to_string(m: &Array2<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 12);
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(matrix_to_string(m).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Parses CSV text into a matrix. Blank lines are ignored; every other line
/// must have the same number of fields. `first_line` is the 1-based line
/// number of `text` within its file, used in error messages.
pub fn parse_matrix(text: &str, first_line: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = first_line + i;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("not a number: {:?}", field.trim())))?;
            data.push(v);
            count += 1;
        }
        match ncols {
            None => ncols = Some(count),
            Some(n) if n != count => return Err(Error::parse(lineno, format!("expected {n} fields, found {count}"))),
            _ => {}
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| Error::parse(first_line, "no data rows"))?;
    Array2::from_shape_vec((nrows, ncols), data).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, 1)
}
