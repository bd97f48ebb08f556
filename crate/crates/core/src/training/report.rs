//! Training-run reports as CSV.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 6] = ["method", "iteration", "wall_time_s", "matvecs", "metric", "nll"];

/// One evaluation point of a training run. `metric` is the test RMSE for
/// regression and the test error rate for classification.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub iteration: usize,
    pub wall_time_s: f64,
    pub matvecs: f64,
    pub metric: f64,
    pub nll: f64,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_report<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.iteration.to_string(),
            float(r.wall_time_s),
            float(r.matvecs),
            float(r.metric),
            float(r.nll),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_report(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_report(records, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(REPORT_HEADER.iter().copied()) {
        return Err(Error::InvalidData("unexpected report header".into()));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                rec[c].parse().map_err(|_| Error::NonNumericCell {
                    row: i + 2,
                    column: c + 1,
                    value: rec[c].to_string(),
                })
            };
            Ok(RunRecord {
                method: rec[0].to_string(),
                iteration: rec[1].parse().map_err(|_| Error::NonNumericCell {
                    row: i + 2,
                    column: 2,
                    value: rec[1].to_string(),
                })?,
                wall_time_s: num(2)?,
                matvecs: num(3)?,
                metric: num(4)?,
                nll: num(5)?,
            })
        })
        .collect()
}

pub fn parse_report(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    read_report(File::open(path)?)
}
