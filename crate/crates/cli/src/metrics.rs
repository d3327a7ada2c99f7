//! `metrics.csv` rows and the learning-curve export built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

pub const HEADER: [&str; 6] = ["epoch", "step", "split", "loss", "accuracy", "wall_ms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_ms: u64,
}

/// Appends rows to `metrics.csv`, flushing after each one so the file is
/// valid CSV whenever it is read.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(HEADER)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record([
            row.epoch.to_string(),
            row.step.to_string(),
            row.split.to_string(),
            row.loss.to_string(),
            row.accuracy.to_string(),
            row.wall_ms.to_string(),
        ])?;
        self.inner.flush()?;
        Ok(())
    }
}

fn field<T: FromStr>(record: &csv::StringRecord, idx: usize, line: u64) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = record.get(idx).ok_or_else(|| CliError::Metrics {
        line,
        message: format!("missing column `{}`", HEADER[idx]),
    })?;
    raw.parse().map_err(|e: T::Err| CliError::Metrics {
        line,
        message: format!("column `{}`: `{raw}`: {e}", HEADER[idx]),
    })
}

pub fn parse_metrics(reader: impl Read) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = Vec::new();
    let mut records = rdr.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(HEADER) => {}
        Some(Ok(h)) => {
            return Err(CliError::Metrics {
                line: 1,
                message: format!("expected header `{}`, got `{}`", HEADER.join(","), h.iter().collect::<Vec<_>>().join(",")),
            })
        }
        Some(Err(e)) => return Err(e.into()),
        None => return Err(CliError::Metrics { line: 1, message: "empty file".into() }),
    }
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != HEADER.len() {
            return Err(CliError::Metrics {
                line,
                message: format!("expected {} columns, found {}", HEADER.len(), record.len()),
            });
        }
        rows.push(MetricsRow {
            epoch: field(&record, 0, line)?,
            step: field(&record, 1, line)?,
            split: field(&record, 2, line)?,
            loss: field(&record, 3, line)?,
            accuracy: field(&record, 4, line)?,
            wall_ms: field(&record, 5, line)?,
        });
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics(File::open(path)?)
}

/// One `(step, value)` series per split and metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub split: Split,
    pub metric: &'static str,
    pub points: Vec<(usize, f64)>,
}

impl Series {
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.split, self.metric)
    }
}

/// Accuracy and loss series for every split present, sorted by step (stably,
/// so rows already in step order keep their order). Repeated steps within a
/// split are rejected.
pub fn curve_series(rows: &[MetricsRow]) -> Result<Vec<Series>> {
    let mut by_split: BTreeMap<Split, Vec<&MetricsRow>> = BTreeMap::new();
    for row in rows {
        by_split.entry(row.split).or_default().push(row);
    }
    let mut out = Vec::new();
    for (split, mut rows) in by_split {
        rows.sort_by_key(|r| r.step);
        if let Some(w) = rows.windows(2).find(|w| w[0].step == w[1].step) {
            return Err(CliError::Metrics {
                line: 0,
                message: format!("step {} appears twice in the {split} split", w[0].step),
            });
        }
        out.push(Series {
            split,
            metric: "accuracy",
            points: rows.iter().map(|r| (r.step, r.accuracy)).collect(),
        });
        out.push(Series {
            split,
            metric: "loss",
            points: rows.iter().map(|r| (r.step, r.loss)).collect(),
        });
    }
    Ok(out)
}

pub fn write_series(series: &Series, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(series.file_name());
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["step", series.metric])?;
    for (step, value) in &series.points {
        w.write_record([step.to_string(), value.to_string()])?;
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "epoch,step,split,loss,accuracy,wall_ms\n\
        1,1,train,2.25,0.125,0\n\
        1,2,train,2.0,0.25,0\n\
        1,2,test,1.9,0.3,0\n";

    #[test]
    fn parses_rows() {
        let rows = parse_metrics(SAMPLE.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].split, Split::Test);
        assert_eq!(rows[1].loss, 2.0);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = SAMPLE.replace("1,2,train,2.0", "1,2,train,two");
        let err = parse_metrics(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("metrics line 3:"), "{err}");
        let err = parse_metrics("epoch,step\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("metrics line 1:"), "{err}");
        let text = format!("{SAMPLE}2,3,train\n");
        let err = parse_metrics(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("metrics line 5:"), "{err}");
    }

    #[test]
    fn series_split_by_metric() {
        let series = curve_series(&parse_metrics(SAMPLE.as_bytes()).unwrap()).unwrap();
        let names: Vec<String> = series.iter().map(Series::file_name).collect();
        assert_eq!(names, ["train_accuracy.csv", "train_loss.csv", "test_accuracy.csv", "test_loss.csv"]);
        assert_eq!(series[0].points, vec![(1, 0.125), (2, 0.25)]);
    }

    #[test]
    fn duplicate_steps_are_rejected() {
        let text = format!("{SAMPLE}1,2,train,1.0,0.5,0\n");
        assert!(curve_series(&parse_metrics(text.as_bytes()).unwrap()).is_err());
    }
}
