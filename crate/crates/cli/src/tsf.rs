//! Multichannel series to per-channel regression tasks.
//!
//! A window starting at `s` uses steps `s..s+d` as features and `s+d..s+d+q` as targets.
//! With `L_split = ⌊split·L⌋`, training windows lie entirely in `[0, L_split)` and test windows
//! have their targets in `[L_split, L)`, with lookback reaching back into the training period.

use std::path::{Path, PathBuf};

use mtl_rmt::nalgebra::DMatrix;

use crate::error::{CliError, CliResult};
use crate::io::{write_manifest, write_task_csv, Manifest, MANIFEST_VERSION};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsfWindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub split: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowCounts {
    pub train: usize,
    pub test: usize,
}

impl TsfWindowSpec {
    pub fn validate(&self, len: usize) -> CliResult<()> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(CliError::input("lookback and horizon must be >= 1"));
        }
        if self.stride == 0 {
            return Err(CliError::input("stride must be >= 1"));
        }
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(CliError::input(format!("split must lie in (0, 1], got {}", self.split)));
        }
        if self.lookback + self.horizon > len {
            return Err(CliError::input(format!(
                "lookback + horizon = {} exceeds the series length {len}",
                self.lookback + self.horizon
            )));
        }
        if self.counts(len).train == 0 {
            return Err(CliError::input(format!(
                "the training segment of {} steps holds no window of {} steps",
                self.split_point(len),
                self.lookback + self.horizon
            )));
        }
        Ok(())
    }

    pub fn split_point(&self, len: usize) -> usize {
        ((self.split * len as f64).floor() as usize).min(len)
    }

    /// `⌊(segment − d − q)/stride⌋ + 1`, or 0 when the segment is too short.
    pub fn windows_in(&self, segment: usize) -> usize {
        let span = self.lookback + self.horizon;
        if segment < span {
            0
        } else {
            (segment - span) / self.stride + 1
        }
    }

    pub fn counts(&self, len: usize) -> WindowCounts {
        let l_split = self.split_point(len);
        let test_start = l_split.saturating_sub(self.lookback);
        WindowCounts { train: self.windows_in(l_split), test: self.windows_in(len - test_start) }
    }
}

/// Windows of one channel over `series[start..end]`: `(n × d features, n × q targets)`.
pub fn windows(series: &[f64], start: usize, end: usize, spec: &TsfWindowSpec) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, q) = (spec.lookback, spec.horizon);
    let n = spec.windows_in(end - start);
    let x = DMatrix::from_fn(n, d, |i, j| series[start + i * spec.stride + j]);
    let y = DMatrix::from_fn(n, q, |i, j| series[start + i * spec.stride + d + j]);
    (x, y)
}

/// Reads a series CSV: a header of channel names, then one row per time step.
pub fn read_series(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CliError::input(format!("{}: row {line}: {e}", path.display())))?;
        for (j, field) in record.iter().enumerate() {
            let x: f64 = field.parse().map_err(|_| {
                CliError::input(format!("{}: row {line}, column {}: cannot parse {field:?}", path.display(), j + 1))
            })?;
            if !x.is_finite() {
                return Err(CliError::input(format!(
                    "{}: row {line}, column {}: non-finite value",
                    path.display(),
                    j + 1
                )));
            }
            values.push(x);
        }
        rows += 1;
    }
    if rows == 0 || names.is_empty() {
        return Err(CliError::input(format!("{}: series file empty", path.display())));
    }
    let channels = names.len();
    Ok((names, DMatrix::from_row_slice(rows, channels, &values)))
}

/// Train and test windows of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTask {
    pub name: String,
    pub train: (DMatrix<f64>, DMatrix<f64>),
    pub test: (DMatrix<f64>, DMatrix<f64>),
}

pub fn prepare(names: &[String], series: &DMatrix<f64>, spec: &TsfWindowSpec) -> CliResult<Vec<ChannelTask>> {
    let len = series.nrows();
    spec.validate(len)?;
    let l_split = spec.split_point(len);
    let test_start = l_split.saturating_sub(spec.lookback);
    Ok(series
        .column_iter()
        .zip(names)
        .map(|(col, name)| {
            let values: Vec<f64> = col.iter().copied().collect();
            ChannelTask {
                name: name.clone(),
                train: windows(&values, 0, l_split, spec),
                test: windows(&values, test_start, len, spec),
            }
        })
        .collect())
}

/// Writes `channel_{c}_train.csv`, `channel_{c}_test.csv` and `manifest.toml` into `dir`.
pub fn write_prepared(dir: &Path, tasks: &[ChannelTask], spec: &TsfWindowSpec) -> CliResult<PathBuf> {
    let mut train_files = Vec::new();
    let mut test_files = Vec::new();
    let with_test = tasks.iter().all(|t| t.test.0.nrows() > 0);
    for (c, task) in tasks.iter().enumerate() {
        let train = PathBuf::from(format!("channel_{c}_train.csv"));
        write_task_csv(&dir.join(&train), &task.train.0, &task.train.1)?;
        train_files.push(train);
        if with_test {
            let test = PathBuf::from(format!("channel_{c}_test.csv"));
            write_task_csv(&dir.join(&test), &task.test.0, &task.test.1)?;
            test_files.push(test);
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        d: spec.lookback,
        q: spec.horizon,
        tasks: train_files,
        center: true,
        holdout: None,
        test_tasks: test_files,
    };
    let path = dir.join("manifest.toml");
    write_manifest(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, q: usize, stride: usize, split: f64) -> TsfWindowSpec {
        TsfWindowSpec { lookback: d, horizon: q, stride, split }
    }

    #[test]
    fn counts_follow_the_window_formula() {
        let s = spec(24, 6, 1, 0.7);
        assert_eq!(s.counts(100), WindowCounts { train: 41, test: 25 });
        let s = spec(5, 2, 3, 0.5);
        // L_split = 10: starts 0 and 3
        assert_eq!(s.counts(20).train, 2);
    }

    #[test]
    fn windows_are_contiguous_and_targets_stay_on_their_side() {
        let names = vec!["a".to_string(), "b".to_string()];
        let series = DMatrix::from_fn(40, 2, |i, c| (i * 10 + c) as f64);
        let s = spec(4, 2, 3, 0.6);
        let tasks = prepare(&names, &series, &s).unwrap();
        let l_split = s.split_point(40) as f64;
        for (c, t) in tasks.iter().enumerate() {
            let (x, y) = &t.train;
            assert_eq!(x[(1, 0)] - x[(0, 0)], 30.0);
            assert_eq!(y[(0, 0)], x[(0, 3)] + 10.0);
            assert!(y.iter().all(|&v| ((v - c as f64) / 10.0) < l_split));
            assert!(t.test.1.iter().all(|&v| ((v - c as f64) / 10.0) >= l_split));
        }
    }

    #[test]
    fn rejects_impossible_specs() {
        assert!(spec(80, 30, 1, 0.7).validate(100).is_err());
        assert!(spec(60, 20, 1, 0.7).validate(100).is_err());
        assert!(spec(4, 2, 0, 0.7).validate(100).is_err());
        assert!(spec(4, 2, 1, 0.0).validate(100).is_err());
    }
}
