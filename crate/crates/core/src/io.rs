//! Fixed-precision CSV helpers shared by every report.

use std::fmt::Write as _;

/// 17 significant digits in scientific notation; round-trips every `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Joins already formatted fields and numbers into one CSV line (no trailing newline).
pub fn csv_line<'a>(fields: impl IntoIterator<Item = CsvField<'a>>) -> String {
    let mut line = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        match f {
            CsvField::Text(s) => line.push_str(s),
            CsvField::Int(v) => {
                let _ = write!(line, "{v}");
            }
            CsvField::Float(v) => line.push_str(&format_f64(v)),
        }
    }
    line
}

#[derive(Clone, Copy, Debug)]
pub enum CsvField<'a> {
    Text(&'a str),
    Int(i64),
    Float(f64),
}

impl From<f64> for CsvField<'_> {
    fn from(v: f64) -> Self {
        CsvField::Float(v)
    }
}

impl From<usize> for CsvField<'_> {
    fn from(v: usize) -> Self {
        CsvField::Int(v as i64)
    }
}

impl<'a> From<&'a str> for CsvField<'a> {
    fn from(v: &'a str) -> Self {
        CsvField::Text(v)
    }
}
