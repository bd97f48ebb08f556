//! CSV ingestion. The label is the last column; a header row is skipped
//! when any cell of the first row is not a number.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::Dataset;
use crate::linalg::Matrix;

/// Per-column mean and standard deviation of the training features.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get a unit scale.
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = (x.rows() as f64, x.cols());
        let mean: Vec<f64> = (0..d).map(|j| (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let var = (0..x.rows()).map(|i| (x.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &mut Matrix) -> Result<()> {
        crate::error::check_dim(self.mean.len(), x.cols())?;
        for i in 0..x.rows() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedData {
    pub data: Dataset,
    pub standardizer: Option<Standardizer>,
    pub had_header: bool,
    /// Labels were `{0, 1}` and have been mapped to `{-1, +1}`.
    pub labels_mapped: bool,
}

pub fn load_csv(path: impl AsRef<Path>, standardize: bool) -> Result<LoadedData> {
    parse_csv(File::open(path)?, standardize)
}

pub fn parse_csv<R: Read>(reader: R, standardize: bool) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut had_header = false;
    let mut width = None;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, &str>> = rec.iter().map(|c| c.parse::<f64>().map_err(|_| c)).collect();
        if r == 0 && parsed.iter().any(|p| p.is_err()) {
            had_header = true;
            continue;
        }
        let w = *width.get_or_insert(parsed.len());
        if parsed.len() != w {
            return Err(Error::Parse {
                row: r + 1,
                column: parsed.len().min(w) + 1,
                message: format!("expected {w} columns, found {}", parsed.len()),
            });
        }
        let mut row = Vec::with_capacity(w);
        for (c, p) in parsed.into_iter().enumerate() {
            match p {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(v) => {
                    return Err(Error::Parse {
                        row: r + 1,
                        column: c + 1,
                        message: format!("non-finite value {v}"),
                    })
                }
                Err(cell) => {
                    return Err(Error::NonNumericCell {
                        row: r + 1,
                        column: c + 1,
                        value: cell.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }
    let w = width.ok_or_else(|| Error::InvalidData("no data rows".into()))?;
    if w < 2 {
        return Err(Error::InvalidData("need at least one feature column and a label column".into()));
    }
    let d = w - 1;
    let mut x = Matrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let mut y: Vec<f64> = rows.iter().map(|r| r[d]).collect();

    let labels_mapped = y.iter().all(|&v| v == 0.0 || v == 1.0);
    if labels_mapped {
        y.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
    }
    let standardizer = standardize.then(|| Standardizer::fit(&x));
    if let Some(s) = &standardizer {
        s.apply(&mut x)?;
    }
    Ok(LoadedData {
        data: Dataset::new(x, y)?,
        standardizer,
        had_header,
        labels_mapped,
    })
}

/// Writes features then label, floats with 17 significant digits.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..data.d()).map(|j| format!("x{j}")).chain(std::iter::once("y".to_string())).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n() {
        let cells: Vec<String> = data.x.row(i).iter().chain(std::iter::once(&data.y[i])).map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}
