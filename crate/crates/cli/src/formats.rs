//! On-disk formats: PMF vectors, embedding matrices (CSV or EMB1 binary).
//!
//! EMB1 layout, all little-endian:
//!
//! ```text
//! offset 0   4 bytes  magic "EMB1"
//! offset 4   u32      n (rows)
//! offset 8   u32      d (columns)
//! offset 12  u32      reserved, written as 0
//! offset 16  n*d f64  row-major values
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{CliError, CliResult};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
const EMB1_HEADER: usize = 16;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn parse_f64(field: &str, path: &Path, line: usize) -> CliResult<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Parse(format!("{}:{line}: not a number: {field:?}", path.display())))
}

fn csv_records(text: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(text)
}

/// A PMF vector: one CSV line of floats. Range and sum checks are left to
/// the library so they surface as validation errors.
pub fn read_pmf(path: &Path) -> CliResult<Vec<f64>> {
    let bytes = read(path)?;
    let mut records = csv_records(&bytes).into_records();
    let first = match records.next() {
        Some(r) => r.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?,
        None => return Err(CliError::Parse(format!("{}: empty PMF file", path.display()))),
    };
    if records.next().is_some() {
        return Err(CliError::Parse(format!("{}: expected a single CSV line", path.display())));
    }
    first.iter().map(|f| parse_f64(f, path, 1)).collect()
}

/// Embedding matrix plus labels (present only when `label_col` is set for
/// CSV input). EMB1 is detected by its magic bytes.
pub fn read_embeddings(path: &Path, label_col: bool) -> CliResult<(Array2<f64>, Option<Vec<usize>>)> {
    let bytes = read(path)?;
    if bytes.starts_with(EMB1_MAGIC) {
        return Ok((decode_emb1(&bytes, path)?, None));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in csv_records(&bytes).into_records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let mut fields: Vec<&str> = rec.iter().collect();
        // a header line is allowed before the first data row
        if i == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if label_col {
            let raw = fields
                .pop()
                .ok_or_else(|| CliError::Parse(format!("{}:{}: empty row", path.display(), i + 1)))?;
            let label = raw
                .parse::<usize>()
                .map_err(|_| CliError::Parse(format!("{}:{}: label {raw:?} is not a class id", path.display(), i + 1)))?;
            labels.push(label);
        }
        rows.push(fields.iter().map(|f| parse_f64(f, path, i + 1)).collect::<CliResult<_>>()?);
    }
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || d == 0 {
        return Err(CliError::Parse(format!("{}: no data rows", path.display())));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(CliError::Parse(format!("{}: row {} has {} columns, expected {d}", path.display(), bad + 1, rows[bad].len())));
    }
    let n = rows.len();
    let data = Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("rectangular rows");
    Ok((data, label_col.then_some(labels)))
}

fn decode_emb1(bytes: &[u8], path: &Path) -> CliResult<Array2<f64>> {
    if bytes.len() < EMB1_HEADER {
        return Err(CliError::Parse(format!("{}: truncated EMB1 header", path.display())));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, d) = (word(4), word(8));
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .and_then(|b| b.checked_add(EMB1_HEADER))
        .ok_or_else(|| CliError::Parse(format!("{}: EMB1 size overflow", path.display())))?;
    if bytes.len() != expected {
        return Err(CliError::Parse(format!(
            "{}: EMB1 header says {n}x{d} ({expected} bytes) but file has {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes[EMB1_HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Array2::from_shape_vec((n, d), values).expect("size checked"))
}

pub fn encode_emb1(data: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(EMB1_HEADER + data.len() * 8);
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&(data.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
