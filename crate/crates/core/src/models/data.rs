//! Dataset files: logistic CSVs with a `y` label column, count files with one
//! integer per line, and draw matrices.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Clone, Debug)]
pub struct LogisticData {
    /// `[N, V + 1]`, first column all ones.
    pub x: Tensor,
    pub y: Vec<f64>,
    /// Covariate names as read from the header (intercept excluded).
    pub features: Vec<String>,
}

impl LogisticData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `idx` as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> LogisticData {
        let d = self.x.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.x.row(i));
        }
        LogisticData {
            x: Tensor::matrix(idx.len(), d, data).expect("subset shape"),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            features: self.features.clone(),
        }
    }
}

/// Reads a headered CSV; the `y` column holds 0/1 labels and every other column
/// is a covariate. An intercept column is prepended.
pub fn load_logistic_csv(path: impl AsRef<Path>) -> Result<LogisticData> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let label = headers
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Error::Dataset("missing label column `y`".into()))?;
    let features: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let d = features.len() + 1;
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Dataset(format!("row {}: cannot parse {s:?}", line + 2)))?;
            if !v.is_finite() {
                return Err(Error::Dataset(format!(
                    "row {}: non-finite value",
                    line + 2
                )));
            }
            Ok(v)
        };
        let yi = parse(label)?;
        if yi != 0.0 && yi != 1.0 {
            return Err(Error::Dataset(format!(
                "row {}: label must be 0 or 1",
                line + 2
            )));
        }
        y.push(yi);
        data.push(1.0);
        for i in (0..headers.len()).filter(|&i| i != label) {
            data.push(parse(i)?);
        }
    }
    if y.is_empty() {
        return Err(Error::Dataset("no rows".into()));
    }
    Ok(LogisticData {
        x: Tensor::matrix(y.len(), d, data)?,
        y,
        features,
    })
}

/// One non-negative integer per line; blank lines and `#` comments are skipped.
pub fn load_counts(path: impl AsRef<Path>) -> Result<Vec<u64>> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|_| {
            Error::Dataset(format!("line {}: not a non-negative integer: {t:?}", n + 1))
        })?);
    }
    if out.is_empty() {
        return Err(Error::Dataset("no counts".into()));
    }
    Ok(out)
}

/// Writes one draw per row under a header of variable names.
pub fn write_draws_csv(path: impl AsRef<Path>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Shape {
                op: "write_draws_csv",
                expected: vec![header.len()],
                got: vec![r.len()],
            });
        }
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_draws_csv`].
pub fn read_draws_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Dataset(format!("bad number {s:?}")))
                })
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok((header, rows))
}

/// Writes named columns of equal length as CSV.
pub fn write_columns_csv(path: impl AsRef<Path>, columns: &[(&str, &[f64])]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    writeln!(f, "{}", names.join(","))?;
    let n = columns.first().map_or(0, |c| c.1.len());
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| format!("{:e}", c.1[i])).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}
