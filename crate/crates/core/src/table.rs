//! Plain-text numeric tables: a header line of column names, then one
//! space-separated row per record.

/// Shortest decimal that round-trips, always with a fractional part
/// (`1.0`, `0.25`). No exponent is used for magnitudes in `[1e-5, 1e16)`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("empty table")]
    Empty,
    #[error("header {found:?} does not match {expected:?}")]
    Header { expected: String, found: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    Columns { line: usize, expected: usize, found: usize },
    #[error("line {line}: invalid number {token:?}")]
    Number { line: usize, token: String },
}

/// Parses a table with the given header into rows of floats.
pub fn parse_table(text: &str, header: &str) -> Result<Vec<Vec<f64>>, TableError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(TableError::Empty)?;
    if first != header {
        return Err(TableError::Header {
            expected: header.to_string(),
            found: first.to_string(),
        });
    }
    let width = header.split(' ').count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let tokens: Vec<&str> = line.split(' ').collect();
            if tokens.len() != width {
                return Err(TableError::Columns {
                    line: i + 2,
                    expected: width,
                    found: tokens.len(),
                });
            }
            tokens
                .iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| TableError::Number {
                        line: i + 2,
                        token: t.to_string(),
                    })
                })
                .collect()
        })
        .collect()
}
