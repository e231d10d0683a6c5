//! Matrix Market coordinate reader and writer.
//!
//! Reads `real` (or `double`) coordinate files with `general`, `symmetric`
//! or `skew-symmetric` storage; symmetric storage is expanded to general.
//! Indices are 1-based on disk and 0-based in memory. Duplicate entries
//! are summed.

use std::io::{BufRead, Write};

use crate::error::{Result, SaiError};
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

fn parse_err(line: usize, msg: impl Into<String>) -> SaiError {
    SaiError::Parse { line, msg: msg.into() }
}

fn parse_header(line_no: usize, line: &str) -> Result<(bool, Symmetry)> {
    let tokens: Vec<String> = line.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(parse_err(line_no, "expected `%%MatrixMarket matrix <format> <field> <symmetry>`"));
    }
    if tokens[1] != "matrix" {
        return Err(parse_err(line_no, format!("unsupported object `{}`", tokens[1])));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(parse_err(line_no, format!("unknown format `{other}`"))),
    };
    match tokens[3].as_str() {
        "real" | "double" => {}
        "integer" | "complex" | "pattern" => return Err(SaiError::UnsupportedField(tokens[3].clone())),
        other => return Err(parse_err(line_no, format!("unknown field `{other}`"))),
    }
    let sym = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        "hermitian" => return Err(SaiError::UnsupportedField("hermitian".into())),
        other => return Err(parse_err(line_no, format!("unknown symmetry `{other}`"))),
    };
    Ok((coordinate, sym))
}

/// Iterator over non-comment, non-blank lines with 1-based line numbers.
fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|s| (i + 1, s)).map_err(SaiError::from))
        .filter(|r| match r {
            Ok((_, s)) => {
                let t = s.trim_start();
                !t.is_empty() && !t.starts_with('%')
            }
            Err(_) => true,
        })
}

fn parse_usize(line: usize, tok: Option<&str>, what: &str) -> Result<usize> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse::<usize>()
        .map_err(|e| parse_err(line, format!("bad {what}: {e}")))
}

fn parse_f64(line: usize, tok: Option<&str>) -> Result<f64> {
    let v = tok
        .ok_or_else(|| parse_err(line, "missing value"))?
        .parse::<f64>()
        .map_err(|e| parse_err(line, format!("bad value: {e}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, "non-finite value"));
    }
    Ok(v)
}

/// Reads a sparse matrix in Matrix Market coordinate format.
pub fn read_matrix_market<R: BufRead>(mut reader: R) -> Result<CscMatrix> {
    let mut header = String::new();
    if reader.read_line(&mut header)? == 0 {
        return Err(parse_err(1, "empty input"));
    }
    let (coordinate, sym) = parse_header(1, header.trim())?;
    if !coordinate {
        return Err(parse_err(1, "sparse matrices must use the coordinate format"));
    }
    // line numbers from data_lines restart at 1 after the header
    let mut lines = data_lines(reader).map(|r| r.map(|(l, s)| (l + 1, s)));
    let (size_line, size) = lines.next().ok_or_else(|| parse_err(2, "missing size line"))??;
    let mut it = size.split_whitespace();
    let n_rows = parse_usize(size_line, it.next(), "row count")?;
    let n_cols = parse_usize(size_line, it.next(), "column count")?;
    let nnz = parse_usize(size_line, it.next(), "entry count")?;
    if it.next().is_some() {
        return Err(parse_err(size_line, "trailing tokens on size line"));
    }
    if sym != Symmetry::General && n_rows != n_cols {
        return Err(parse_err(size_line, "symmetric storage requires a square matrix"));
    }

    let mut triplets = Vec::with_capacity(if sym == Symmetry::General { nnz } else { 2 * nnz });
    let mut seen = 0usize;
    for r in lines {
        let (line, text) = r?;
        if seen == nnz {
            return Err(parse_err(line, format!("more than the declared {nnz} entries")));
        }
        let mut it = text.split_whitespace();
        let i = parse_usize(line, it.next(), "row index")?;
        let j = parse_usize(line, it.next(), "column index")?;
        let v = parse_f64(line, it.next())?;
        if it.next().is_some() {
            return Err(parse_err(line, "trailing tokens in entry"));
        }
        if i == 0 || i > n_rows || j == 0 || j > n_cols {
            return Err(parse_err(line, format!("entry ({i}, {j}) outside the declared {n_rows}x{n_cols}")));
        }
        let (i, j) = (i - 1, j - 1);
        triplets.push((i, j, v));
        match sym {
            Symmetry::General => {}
            Symmetry::Symmetric if i != j => triplets.push((j, i, v)),
            Symmetry::SkewSymmetric if i != j => triplets.push((j, i, -v)),
            Symmetry::SkewSymmetric => return Err(parse_err(line, "skew-symmetric file stores a diagonal entry")),
            Symmetry::Symmetric => {}
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(size_line, format!("declared {nnz} entries, found {seen}")));
    }
    CscMatrix::from_triplets(n_rows, n_cols, triplets)
}

pub fn read_matrix_market_str(text: &str) -> Result<CscMatrix> {
    read_matrix_market(text.as_bytes())
}

pub fn read_matrix_market_file(path: impl AsRef<std::path::Path>) -> Result<CscMatrix> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| SaiError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_matrix_market(std::io::BufReader::new(f))
}

/// Writes `a` as `real general` coordinate data. Values use the shortest
/// representation that round-trips exactly.
pub fn write_matrix_market<W: Write>(a: &CscMatrix, mut w: W) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn write_matrix_market_file(a: &CscMatrix, path: impl AsRef<std::path::Path>) -> Result<()> {
    let f = std::fs::File::create(path.as_ref())
        .map_err(|e| SaiError::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_matrix_market(a, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a dense vector: either a Matrix Market `array real general` file
/// with one column, or plain whitespace-separated numbers.
pub fn read_vector<R: BufRead>(mut reader: R) -> Result<Vec<f64>> {
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let mut values = Vec::new();
    let mut expected = None;
    let mut skip_size = false;
    if first.trim_start().starts_with("%%") {
        let (coordinate, sym) = parse_header(1, first.trim())?;
        if coordinate || sym != Symmetry::General {
            return Err(parse_err(1, "vectors must use `array real general`"));
        }
        skip_size = true;
    } else {
        push_numbers(1, &first, &mut values)?;
    }
    for r in data_lines(reader) {
        let (line, text) = r?;
        let line = line + 1;
        if skip_size {
            let mut it = text.split_whitespace();
            let rows = parse_usize(line, it.next(), "row count")?;
            let cols = parse_usize(line, it.next(), "column count")?;
            if cols != 1 {
                return Err(parse_err(line, "vector files must have a single column"));
            }
            expected = Some(rows);
            skip_size = false;
            continue;
        }
        push_numbers(line, &text, &mut values)?;
    }
    if let Some(n) = expected {
        if n != values.len() {
            return Err(parse_err(1, format!("declared {n} values, found {}", values.len())));
        }
    }
    Ok(values)
}

fn push_numbers(line: usize, text: &str, out: &mut Vec<f64>) -> Result<()> {
    let t = text.trim_start();
    if t.starts_with('%') || t.starts_with('#') {
        return Ok(());
    }
    for tok in t.split_whitespace() {
        out.push(parse_f64(line, Some(tok))?);
    }
    Ok(())
}

pub fn write_vector<W: Write>(x: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} 1", x.len())?;
    for v in x {
        writeln!(w, "{v:e}")?;
    }
    Ok(())
}
