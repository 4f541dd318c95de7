//! Matrix Market coordinate-format reader and writer.
//!
//! Supports the header kinds the collection actually serves for this
//! workload: `real`/`integer`/`pattern` fields crossed with
//! `general`/`symmetric` storage. Symmetric files are expanded to both
//! triangles at read time so every downstream consumer sees a fully
//! materialized pattern.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::matrix::{CooEntries, CsrMatrix};

#[derive(Error, Debug)]
pub enum MarketError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
}

/// Parses a coordinate-format Matrix Market file into COO entries.
///
/// 1-based indices become 0-based; pattern entries read as 1.0; symmetric
/// storage contributes both `(i, j)` and `(j, i)` for off-diagonal entries.
/// Every malformed line is reported with its line number.
pub fn read_matrix_market(path: &Path) -> Result<CooEntries, MarketError> {
    let display = path.display().to_string();
    let io_err = |source| MarketError::Io {
        path: display.clone(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);

    let mut lines = reader.lines().enumerate();
    let fail = |line: usize, msg: String| MarketError::Parse {
        path: display.clone(),
        line,
        msg,
    };

    // Header: %%MatrixMarket matrix coordinate <field> <symmetry>
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| fail(1, "empty file".into()))
        .and_then(|(i, l)| Ok((i + 1, l.map_err(io_err)?)))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(fail(lineno, "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'".into()));
    }
    if tokens[1] != "matrix" {
        return Err(fail(lineno, format!("unsupported object '{}'", tokens[1])));
    }
    if tokens[2] != "coordinate" {
        return Err(fail(
            lineno,
            format!("unsupported format '{}' (only coordinate)", tokens[2]),
        ));
    }
    let field = match tokens[3].as_str() {
        "real" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(fail(lineno, format!("unsupported field '{other}'"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(fail(lineno, format!("unsupported symmetry '{other}'"))),
    };

    // Size line: first non-comment, non-blank line.
    let (mut m, mut n, mut declared) = (0usize, 0usize, 0usize);
    let mut size_seen = false;
    let mut coo = CooEntries::new(0, 0);
    let mut stored = 0usize;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(io_err)?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = body.split_whitespace().collect();
        if !size_seen {
            if parts.len() != 3 {
                return Err(fail(lineno, "size line must be 'rows cols nonzeros'".into()));
            }
            let parse = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|_| fail(lineno, format!("invalid {what} '{s}'")))
            };
            m = parse(parts[0], "row count")?;
            n = parse(parts[1], "column count")?;
            declared = parse(parts[2], "nonzero count")?;
            coo = CooEntries::new(m, n);
            size_seen = true;
            continue;
        }
        stored += 1;
        if stored > declared {
            return Err(fail(
                lineno,
                format!("more than the declared {declared} entries"),
            ));
        }
        let want = if field == Field::Pattern { 2 } else { 3 };
        if parts.len() != want {
            return Err(fail(lineno, format!("expected {want} fields, got {}", parts.len())));
        }
        let r: usize = parts[0]
            .parse()
            .map_err(|_| fail(lineno, format!("invalid row index '{}'", parts[0])))?;
        let c: usize = parts[1]
            .parse()
            .map_err(|_| fail(lineno, format!("invalid column index '{}'", parts[1])))?;
        if r < 1 || r > m || c < 1 || c > n {
            return Err(fail(
                lineno,
                format!("entry ({r}, {c}) outside declared {m}x{n} bounds"),
            ));
        }
        let v = match field {
            Field::Pattern => 1.0,
            _ => parts[2]
                .parse::<f64>()
                .map_err(|_| fail(lineno, format!("invalid value '{}'", parts[2])))?,
        };
        let (r, c) = (r as u32 - 1, c as u32 - 1);
        coo.push(r, c, v);
        if symmetry == Symmetry::Symmetric && r != c {
            coo.push(c, r, v);
        }
    }
    if !size_seen {
        return Err(fail(0, "missing size line".into()));
    }
    if stored < declared {
        return Err(fail(
            0,
            format!("file declares {declared} entries but holds {stored}"),
        ));
    }
    Ok(coo)
}

/// Writes a matrix as `coordinate real general`, one entry per stored
/// nonzero, 1-based. Values print in shortest-round-trip form, so
/// [`read_matrix_market`] recovers the matrix exactly.
pub fn write_matrix_market(a: &CsrMatrix, path: &Path) -> Result<(), MarketError> {
    let io_err = |source| MarketError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut text = String::new();
    text.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(text, "{} {} {}", a.nrows(), a.ncols(), a.nnz());
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            let _ = writeln!(text, "{} {} {:?}", i + 1, c + 1, v);
        }
    }
    let mut file = File::create(path).map_err(io_err)?;
    file.write_all(text.as_bytes()).map_err(io_err)
}
