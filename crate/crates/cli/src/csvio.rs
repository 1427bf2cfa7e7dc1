//! Dataset CSV: optional `# format_version=N` line, then a header
//! `x1,...,xn,y` and one decimal row per sample.

use std::path::Path;

use splinenet::Tensor;

pub const CSV_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: unsupported format_version {found} (expected {CSV_VERSION})")]
    Version { path: String, found: String },
    #[error("{path}: header must be x1,...,xn,y, got {header:?}")]
    Header { path: String, header: String },
    #[error("{path}: row {row}, column {column:?}: {reason}")]
    Value { path: String, row: usize, column: String, reason: String },
    #[error("{path}: no data rows")]
    Empty { path: String },
}

/// Inputs `n × d` and targets `n × 1`.
pub fn read_dataset(path: &Path) -> Result<(Tensor, Tensor), CsvError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CsvError::Io { path: p.clone(), source })?;
    let mut body = text.as_str();
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.trim().strip_prefix('#') {
            let found = rest.trim().strip_prefix("format_version=").map(str::trim).unwrap_or(rest.trim());
            if found != CSV_VERSION.to_string() {
                return Err(CsvError::Version { path: p, found: found.to_string() });
            }
            body = &text[first.len()..];
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.trim_start_matches(['\r', '\n']).as_bytes());
    let headers = reader.headers().map_err(|source| CsvError::Csv { path: p.clone(), source })?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let d = names.len().saturating_sub(1);
    let expected: Vec<String> = (1..=d).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
    if d == 0 || names != expected {
        return Err(CsvError::Header { path: p, header: names.join(",") });
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|source| CsvError::Csv { path: p.clone(), source })?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| CsvError::Value { path: p.clone(), row: row + 1, column: names[c].to_string(), reason: format!("{field:?} is not a number") })?;
            if !v.is_finite() {
                return Err(CsvError::Value { path: p.clone(), row: row + 1, column: names[c].to_string(), reason: "value is not finite".into() });
            }
            if c < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(CsvError::Empty { path: p });
    }
    let n = ys.len();
    Ok((Tensor::new(n, d, xs).expect("row lengths checked by csv"), Tensor::new(n, 1, ys).unwrap()))
}

pub fn write_dataset(path: &Path, x: &Tensor, y: &Tensor) -> Result<(), CsvError> {
    let p = path.display().to_string();
    let mut out = format!("# format_version={CSV_VERSION}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=x.cols()).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
    w.write_record(&header).map_err(|source| CsvError::Csv { path: p.clone(), source })?;
    for r in 0..x.rows() {
        let rec: Vec<String> = x.row(r).iter().chain(y.row(r)).map(|v| v.to_string()).collect();
        w.write_record(&rec).map_err(|source| CsvError::Csv { path: p.clone(), source })?;
    }
    let bytes = w.into_inner().map_err(|e| CsvError::Io { path: p.clone(), source: e.into_error() })?;
    out.push_str(&String::from_utf8(bytes).expect("ascii output"));
    crate::manifest::write_atomic(path, out.as_bytes()).map_err(|source| CsvError::Io { path: p, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let x = Tensor::new(2, 2, vec![0.1, -0.2, 1.0 / 3.0, 4.0]).unwrap();
        let y = Tensor::new(2, 1, vec![1e-17, -5.5]).unwrap();
        write_dataset(&path, &x, &y).unwrap();
        let (x2, y2) = read_dataset(&path).unwrap();
        assert_eq!((x2, y2), (x, y));

        std::fs::write(&path, "x1,x2,y\n1,2,3\n").unwrap();
        assert!(read_dataset(&path).is_ok());
        std::fs::write(&path, "# format_version=2\nx1,y\n1,2\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(CsvError::Version { .. })));
        std::fs::write(&path, "a,y\n1,2\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(CsvError::Header { .. })));
        std::fs::write(&path, "x1,y\n1,abc\n").unwrap();
        let e = read_dataset(&path).unwrap_err().to_string();
        assert!(e.contains("\"y\""), "{e}");
        std::fs::write(&path, "x1,y\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(CsvError::Empty { .. })));
    }
}
