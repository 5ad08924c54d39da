//! Matrix Market coordinate files (`.mtx`).
//!
//! Supported: `coordinate` storage with `real`, `integer` or `pattern`
//! fields and `general` or `symmetric` symmetry. Symmetric files are expanded
//! to full storage and pattern entries get the value `1.0`.

use crate::sparse::{CsrMatrix, SparseError};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum MtxError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported Matrix Market format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Sparse(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_err(line: usize, msg: impl Into<String>) -> MtxError {
    MtxError::Parse { line, msg: msg.into() }
}

fn parse_header(line_no: usize, line: &str) -> Result<(Field, Symmetry), MtxError> {
    let tokens: Vec<String> = line.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(parse_err(line_no, "expected `%%MatrixMarket matrix coordinate <field> <symmetry>`"));
    }
    if tokens[1] != "matrix" {
        return Err(MtxError::UnsupportedFormat(format!("object `{}`", tokens[1])));
    }
    if tokens[2] != "coordinate" {
        return Err(MtxError::UnsupportedFormat(format!("storage `{}`", tokens[2])));
    }
    let field = match tokens[3].as_str() {
        "real" | "double" | "integer" => Field::Real,
        "pattern" => Field::Pattern,
        other => return Err(MtxError::UnsupportedFormat(format!("field `{other}`"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(MtxError::UnsupportedFormat(format!("symmetry `{other}`"))),
    };
    Ok((field, symmetry))
}

fn parse_index(line_no: usize, tok: Option<&str>, bound: usize, what: &str) -> Result<usize, MtxError> {
    let tok = tok.ok_or_else(|| parse_err(line_no, format!("missing {what} index")))?;
    let one_based: usize = tok
        .parse()
        .map_err(|_| parse_err(line_no, format!("bad {what} index `{tok}`")))?;
    if one_based == 0 || one_based > bound {
        return Err(parse_err(line_no, format!("{what} index {one_based} outside 1..={bound}")));
    }
    Ok(one_based - 1)
}

/// Reads a coordinate Matrix Market stream into canonical CSR.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<CsrMatrix, MtxError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (first_no, first) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(parse_err(1, "empty file")),
    };
    let (field, symmetry) = parse_header(first_no, &first)?;

    let mut size: Option<(usize, usize, usize)> = None;
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut seen = 0usize;
    let mut last_line = first_no;

    for (line_no, line) in lines {
        let line = line?;
        last_line = line_no;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut tok = trimmed.split_whitespace();
        let Some((n_rows, n_cols, nnz)) = size else {
            let mut dim = |what| -> Result<usize, MtxError> {
                let t = tok.next().ok_or_else(|| parse_err(line_no, format!("missing {what}")))?;
                t.parse().map_err(|_| parse_err(line_no, format!("bad {what} `{t}`")))
            };
            let dims = (dim("row count")?, dim("column count")?, dim("entry count")?);
            if tok.next().is_some() {
                return Err(parse_err(line_no, "size line has extra tokens"));
            }
            if symmetry == Symmetry::Symmetric && dims.0 != dims.1 {
                return Err(parse_err(line_no, "symmetric matrix must be square"));
            }
            size = Some(dims);
            let cap = if symmetry == Symmetry::Symmetric { 2 * dims.2 } else { dims.2 };
            rows.reserve(cap);
            cols.reserve(cap);
            vals.reserve(cap);
            continue;
        };
        if seen == nnz {
            return Err(parse_err(line_no, format!("more than the declared {nnz} entries")));
        }
        let i = parse_index(line_no, tok.next(), n_rows, "row")?;
        let j = parse_index(line_no, tok.next(), n_cols, "column")?;
        let v = match field {
            Field::Pattern => 1.0,
            Field::Real => {
                let t = tok.next().ok_or_else(|| parse_err(line_no, "missing value"))?;
                t.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad value `{t}`")))?
            }
        };
        if tok.next().is_some() {
            return Err(parse_err(line_no, "entry has extra tokens"));
        }
        rows.push(i);
        cols.push(j);
        vals.push(v);
        if symmetry == Symmetry::Symmetric && i != j {
            rows.push(j);
            cols.push(i);
            vals.push(v);
        }
        seen += 1;
    }

    let (n_rows, n_cols, nnz) = size.ok_or_else(|| parse_err(last_line, "missing size line"))?;
    if seen != nnz {
        return Err(parse_err(last_line, format!("declared {nnz} entries, found {seen}")));
    }
    Ok(CsrMatrix::from_triplets(&rows, &cols, &vals, n_rows, n_cols)?)
}

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix, MtxError> {
    parse_matrix_market(BufReader::new(File::open(path)?))
}

/// Writes `a` as a `real general` coordinate file.
pub fn write_matrix_market<W: Write>(a: &CsrMatrix, mut out: W) -> io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for (r, c, v) in a.to_triplets() {
        writeln!(out, "{} {} {v:e}", r + 1, c + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<CsrMatrix, MtxError> {
        parse_matrix_market(text.as_bytes())
    }

    #[test]
    fn symmetric_pattern_expands() {
        let a = parse("%%MatrixMarket matrix coordinate pattern symmetric\n2 2 1\n2 1\n").unwrap();
        assert_eq!(a.to_triplets(), vec![(0, 1, 1.0), (1, 0, 1.0)]);
    }

    #[test]
    fn empty_body() {
        let a = parse("%%MatrixMarket matrix coordinate real general\n% a comment\n3 3 0\n").unwrap();
        assert_eq!((a.n_rows(), a.n_cols(), a.nnz()), (3, 3, 0));
    }

    #[test]
    fn out_of_range_entry() {
        let err = parse("%%MatrixMarket matrix coordinate real general\n3 3 1\n4 1 1.0\n").unwrap_err();
        assert!(matches!(err, MtxError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn real_general_with_comments_and_duplicates() {
        let text = "%%MatrixMarket matrix coordinate real general\n%\n% more\n2 3 3\n1 3 2.5\n\n2 1 -1e0\n1 3 0.5\n";
        let a = parse(text).unwrap();
        assert_eq!(a.to_triplets(), vec![(0, 2, 3.0), (1, 0, -1.0)]);
    }

    #[test]
    fn symmetric_diagonal_not_doubled() {
        let a = parse("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 4\n2 1 3\n").unwrap();
        assert_eq!(a.to_triplets(), vec![(0, 0, 4.0), (0, 1, 3.0), (1, 0, 3.0)]);
    }

    #[test]
    fn complex_is_unsupported() {
        let err = parse("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n").unwrap_err();
        assert!(matches!(err, MtxError::UnsupportedFormat(_)));
        let err = parse("%%MatrixMarket matrix array real general\n1 1\n1\n").unwrap_err();
        assert!(matches!(err, MtxError::UnsupportedFormat(_)));
    }

    #[test]
    fn malformed_inputs_report_lines() {
        assert!(matches!(parse("hello\n"), Err(MtxError::Parse { line: 1, .. })));
        assert!(matches!(
            parse("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n"),
            Err(MtxError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1\n"),
            Err(MtxError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1\n"),
            Err(MtxError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn writer_round_trips() {
        let a = CsrMatrix::from_triplets(&[0, 1, 1], &[1, 0, 2], &[0.1, -2.5, 1e-300], 2, 3).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&a, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), a);
    }
}
