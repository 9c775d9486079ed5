//! Matrix Market I/O.
//!
//! Matrices are written in `coordinate real general` form with 1-based
//! indices and 17 significant digits, which round-trips `f64` exactly.
//! `coordinate real symmetric` is accepted on read (lower triangle expanded).
//! Vectors are written as n×1 coordinate files; the dense `array` form is
//! also accepted when reading vectors.

use super::SparseMatrix;
use crate::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
enum MmFormat {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MmSymmetry {
    General,
    Symmetric,
}

struct Header {
    format: MmFormat,
    symmetry: MmSymmetry,
}

fn parse_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<Header> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("%%MatrixMarket") {
        return Err(parse_error(lineno, "missing %%MatrixMarket banner"));
    }
    if parts.next() != Some("matrix") {
        return Err(parse_error(lineno, "object must be 'matrix'"));
    }
    let format = match parts.next() {
        Some("coordinate") => MmFormat::Coordinate,
        Some("array") => MmFormat::Array,
        other => {
            return Err(parse_error(
                lineno,
                format!("unknown format {:?}, expected coordinate or array", other),
            ))
        }
    };
    match parts.next() {
        Some("real") | Some("integer") => {}
        other => {
            return Err(parse_error(
                lineno,
                format!("unsupported field {:?}, expected real", other),
            ))
        }
    }
    let symmetry = match parts.next() {
        Some("general") | None => MmSymmetry::General,
        Some("symmetric") => MmSymmetry::Symmetric,
        other => {
            return Err(parse_error(
                lineno,
                format!("unsupported symmetry {:?}", other),
            ))
        }
    };
    Ok(Header { format, symmetry })
}

struct Body {
    header: Header,
    nrows: usize,
    ncols: usize,
    /// coordinate entries (0-based) or, for array files, column-major values
    entries: Vec<(usize, usize, f64)>,
    array_values: Vec<f64>,
}

fn read_body(path: &Path) -> Result<Body> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut header: Option<Header> = None;
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    let mut array_values = Vec::new();
    let mut last_line = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        let trimmed = line.trim();
        if header.is_none() {
            header = Some(parse_header(trimmed, lineno)?);
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let h = header.as_ref().unwrap();
        if dims.is_none() {
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            match h.format {
                MmFormat::Coordinate => {
                    if parts.len() != 3 {
                        return Err(parse_error(lineno, "size line must be 'rows cols nnz'"));
                    }
                    let m: usize = parts[0]
                        .parse()
                        .map_err(|_| parse_error(lineno, "bad row count"))?;
                    let n: usize = parts[1]
                        .parse()
                        .map_err(|_| parse_error(lineno, "bad column count"))?;
                    let nnz: usize = parts[2]
                        .parse()
                        .map_err(|_| parse_error(lineno, "bad nnz count"))?;
                    dims = Some((m, n, nnz));
                }
                MmFormat::Array => {
                    if parts.len() != 2 {
                        return Err(parse_error(lineno, "size line must be 'rows cols'"));
                    }
                    let m: usize = parts[0]
                        .parse()
                        .map_err(|_| parse_error(lineno, "bad row count"))?;
                    let n: usize = parts[1]
                        .parse()
                        .map_err(|_| parse_error(lineno, "bad column count"))?;
                    dims = Some((m, n, m * n));
                }
            }
            continue;
        }
        let (m, n, _) = dims.unwrap();
        match h.format {
            MmFormat::Coordinate => {
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(parse_error(lineno, "entry must be 'i j value'"));
                }
                let i: usize = parts[0]
                    .parse()
                    .map_err(|_| parse_error(lineno, "bad row index"))?;
                let j: usize = parts[1]
                    .parse()
                    .map_err(|_| parse_error(lineno, "bad column index"))?;
                let v: f64 = parts[2]
                    .parse()
                    .map_err(|_| parse_error(lineno, "bad value"))?;
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(parse_error(
                        lineno,
                        format!("index ({i},{j}) outside 1..={m} x 1..={n}"),
                    ));
                }
                entries.push((i - 1, j - 1, v));
            }
            MmFormat::Array => {
                for part in trimmed.split_whitespace() {
                    let v: f64 = part
                        .parse()
                        .map_err(|_| parse_error(lineno, "bad array value"))?;
                    array_values.push(v);
                }
            }
        }
    }
    let header = header.ok_or_else(|| parse_error(1, "empty file"))?;
    let (nrows, ncols, nnz) = dims.ok_or_else(|| parse_error(2, "missing size line"))?;
    if header.format == MmFormat::Coordinate && entries.len() != nnz {
        return Err(parse_error(
            last_line,
            format!("expected {} entries, found {}", nnz, entries.len()),
        ));
    }
    if header.format == MmFormat::Array && array_values.len() != nrows * ncols {
        return Err(parse_error(
            last_line,
            format!(
                "expected {} array values, found {}",
                nrows * ncols,
                array_values.len()
            ),
        ));
    }
    Ok(Body {
        header,
        nrows,
        ncols,
        entries,
        array_values,
    })
}

/// Reads a sparse matrix from a Matrix Market coordinate file.
/// The dense `array` format is rejected for matrices.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let body = read_body(path.as_ref())?;
    if body.header.format != MmFormat::Coordinate {
        return Err(parse_error(
            1,
            "matrices must use the coordinate format, not array",
        ));
    }
    let mut entries = body.entries;
    if body.header.symmetry == MmSymmetry::Symmetric {
        let mirrored: Vec<(usize, usize, f64)> = entries
            .iter()
            .filter(|&&(i, j, _)| i != j)
            .map(|&(i, j, v)| (j, i, v))
            .collect();
        entries.extend(mirrored);
    }
    Ok(SparseMatrix::from_triplets(body.nrows, body.ncols, entries))
}

/// Writes a sparse matrix in `coordinate real general` form, 1-based,
/// with 17 significant digits.
pub fn write_matrix(path: impl AsRef<Path>, m: &SparseMatrix) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
    }
    Ok(())
}

/// Reads a vector: either an n×1 (or 1×n) coordinate file or an `array` file.
pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let body = read_body(path.as_ref())?;
    match body.header.format {
        MmFormat::Array => {
            if body.ncols != 1 && body.nrows != 1 {
                return Err(parse_error(2, "vector file must be n×1 or 1×n"));
            }
            Ok(body.array_values)
        }
        MmFormat::Coordinate => {
            let (len, transposed) = if body.ncols == 1 {
                (body.nrows, false)
            } else if body.nrows == 1 {
                (body.ncols, true)
            } else {
                return Err(parse_error(2, "vector file must be n×1 or 1×n"));
            };
            let mut v = vec![0.0; len];
            for (i, j, val) in body.entries {
                v[if transposed { j } else { i }] += val;
            }
            Ok(v)
        }
    }
}

/// Writes a vector as an n×1 coordinate file (all entries emitted, including
/// zeros, so dimensions always round-trip).
pub fn write_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} 1 {}", v.len(), v.len())?;
    for (i, x) in v.iter().enumerate() {
        writeln!(w, "{} 1 {:.16e}", i + 1, x)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_preserves_structure_and_bits() {
        let mut rng = StdRng::seed_from_u64(17);
        let mut triplets = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                if rng.gen_bool(0.5) {
                    triplets.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        let m = SparseMatrix::from_triplets(6, 6, triplets);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m, back); // bit-for-bit: 17 significant digits round-trip f64
    }

    #[test]
    fn fixture_with_one_based_triplets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.mtx");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "%%MatrixMarket matrix coordinate real general").unwrap();
        writeln!(f, "% hand-written fixture").unwrap();
        writeln!(f, "2 3 3").unwrap();
        writeln!(f, "1 1 1.5").unwrap();
        writeln!(f, "2 3 -2.0").unwrap();
        writeln!(f, "1 2 0.25").unwrap();
        drop(f);
        let m = read_matrix(&path).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.ncols(), 3);
        assert_eq!(m.get(0, 0), 1.5);
        assert_eq!(m.get(0, 1), 0.25);
        assert_eq!(m.get(1, 2), -2.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn array_header_rejected_for_matrices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mtx");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "%%MatrixMarket matrix array real general").unwrap();
        writeln!(f, "2 2").unwrap();
        for v in ["1.0", "0.0", "0.0", "1.0"] {
            writeln!(f, "{v}").unwrap();
        }
        drop(f);
        match read_matrix(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_storage_expands() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.mtx");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "%%MatrixMarket matrix coordinate real symmetric").unwrap();
        writeln!(f, "2 2 2").unwrap();
        writeln!(f, "1 1 2.0").unwrap();
        writeln!(f, "2 1 -1.0").unwrap();
        drop(f);
        let m = read_matrix(&path).unwrap();
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), -1.0);
    }

    #[test]
    fn vector_round_trip_and_array_read() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![1.0, -0.5, 0.0, 3.25];
        let path = dir.path().join("v.mtx");
        write_vector(&path, &v).unwrap();
        assert_eq!(read_vector(&path).unwrap(), v);

        let apath = dir.path().join("va.mtx");
        let mut f = File::create(&apath).unwrap();
        writeln!(f, "%%MatrixMarket matrix array real general").unwrap();
        writeln!(f, "3 1").unwrap();
        for x in ["0.5", "1.5", "-2.5"] {
            writeln!(f, "{x}").unwrap();
        }
        drop(f);
        assert_eq!(read_vector(&apath).unwrap(), vec![0.5, 1.5, -2.5]);
    }

    #[test]
    fn row_vector_coordinate_form_reads_transposed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rv.mtx");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "%%MatrixMarket matrix coordinate real general").unwrap();
        writeln!(f, "1 3 2").unwrap();
        writeln!(f, "1 1 4.0").unwrap();
        writeln!(f, "1 3 -1.0").unwrap();
        drop(f);
        assert_eq!(read_vector(&path).unwrap(), vec![4.0, 0.0, -1.0]);
    }

    #[test]
    fn out_of_bounds_index_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oob.mtx");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "%%MatrixMarket matrix coordinate real general").unwrap();
        writeln!(f, "2 2 1").unwrap();
        writeln!(f, "3 1 1.0").unwrap();
        drop(f);
        match read_matrix(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
