//! Files the command line reads and writes.

use std::fs;
use std::path::{Path, PathBuf};

use mtl_rmt::nalgebra::{DMatrix, DVector};
use mtl_rmt::validation::{SweepRecord, SWEEP_CSV_HEADER};
use mtl_rmt::{Hyperparams, MtlSolution, MultiTaskProblem, TaskData};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;
pub const SOLUTION_MAGIC: &str = "mtlrmt-solution";
pub const SOLUTION_VERSION: u32 = 1;

/// Dataset description. Task paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub d: usize,
    pub q: usize,
    pub tasks: Vec<PathBuf>,
    #[serde(default)]
    pub center: bool,
    /// Fraction of each task's rows, taken from the end, held out for testing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<f64>,
    /// Separate test files, one per task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_tasks: Vec<PathBuf>,
}

/// Raw rows of one task file: `n × d` features and `n × q` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRows {
    pub path: PathBuf,
    pub features: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

/// Per-task means subtracted before fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Centering {
    pub feature_means: Vec<DVector<f64>>,
    pub target_means: Vec<DVector<f64>>,
}

/// A manifest resolved into train (and optionally test) problems.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: MultiTaskProblem,
    pub test: Option<MultiTaskProblem>,
    pub centering: Option<Centering>,
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_manifest(path: &Path) -> CliResult<Manifest> {
    let manifest: Manifest =
        toml::from_str(&read_text(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CliError::input(format!(
            "{}: unsupported manifest version {} (expected {MANIFEST_VERSION})",
            path.display(),
            manifest.version
        )));
    }
    if manifest.d == 0 || manifest.q == 0 {
        return Err(CliError::input(format!("{}: d and q must be >= 1", path.display())));
    }
    if manifest.tasks.is_empty() {
        return Err(CliError::input(format!("{}: no tasks listed", path.display())));
    }
    if let Some(h) = manifest.holdout {
        if !(0.0..1.0).contains(&h) {
            return Err(CliError::input(format!("{}: holdout must lie in [0, 1), got {h}", path.display())));
        }
    }
    if !manifest.test_tasks.is_empty() && manifest.test_tasks.len() != manifest.tasks.len() {
        return Err(CliError::input(format!(
            "{}: {} test files for {} tasks",
            path.display(),
            manifest.test_tasks.len(),
            manifest.tasks.len()
        )));
    }
    if manifest.holdout.is_some() && !manifest.test_tasks.is_empty() {
        return Err(CliError::input(format!("{}: holdout and test_tasks are mutually exclusive", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
    Ok(Manifest {
        tasks: manifest.tasks.iter().map(resolve).collect(),
        test_tasks: manifest.test_tasks.iter().map(resolve).collect(),
        ..manifest
    })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> CliResult<()> {
    let text = toml::to_string(manifest).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    write_text(path, &text)
}

/// Reads a task file with a header row and `d` feature columns, then targets.
///
/// `q = None` accepts any number of trailing target columns, including none.
pub fn read_task_csv(path: &Path, d: usize, q: Option<usize>) -> CliResult<TaskRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let width = reader.headers().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?.len();
    if width == 0 {
        return Err(CliError::input(format!("{}: task file empty", path.display())));
    }
    if width < d {
        return Err(CliError::input(format!("{}: header has {width} columns, need at least d = {d}", path.display())));
    }
    if let Some(q) = q {
        if width != d + q {
            return Err(CliError::input(format!(
                "{}: header has {width} columns, expected d + q = {}",
                path.display(),
                d + q
            )));
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| CliError::input(format!("{}: row {line}: {e}", path.display())))?;
        if record.len() != width {
            return Err(CliError::input(format!(
                "{}: row {line}: {} fields, expected {width}",
                path.display(),
                record.len()
            )));
        }
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
    if rows == 0 {
        return Err(CliError::input(format!("{}: task file empty", path.display())));
    }
    let all = DMatrix::from_row_slice(rows, width, &values);
    Ok(TaskRows {
        path: path.to_path_buf(),
        features: all.columns(0, d).into_owned(),
        targets: all.columns(d, width - d).into_owned(),
    })
}

/// Writes a task file: header `x0..x{d-1},y0..y{q-1}`, one sample per row.
pub fn write_task_csv(path: &Path, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> CliResult<()> {
    let mut out = String::new();
    let header: Vec<String> =
        (0..features.ncols()).map(|j| format!("x{j}")).chain((0..targets.ncols()).map(|j| format!("y{j}"))).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..features.nrows() {
        let row: Vec<String> = features.row(i).iter().chain(targets.row(i).iter()).map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

fn check_consistent_q(rows: &[TaskRows], declared: usize) -> CliResult<()> {
    let first = &rows[0];
    for (t, other) in rows.iter().enumerate().skip(1) {
        if other.targets.ncols() != first.targets.ncols() {
            return Err(CliError::input(format!(
                "tasks disagree on q: task 0 ({}) has {} targets, task {t} ({}) has {}",
                first.path.display(),
                first.targets.ncols(),
                other.path.display(),
                other.targets.ncols()
            )));
        }
    }
    if first.targets.ncols() != declared {
        return Err(CliError::input(format!(
            "{}: {} target columns, manifest declares q = {declared}",
            first.path.display(),
            first.targets.ncols()
        )));
    }
    Ok(())
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / m.nrows() as f64))
}

fn subtract_means(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Features of new inputs in the space the model was fitted in.
pub fn center_features(features: &DMatrix<f64>, centering: Option<&Centering>, task: usize) -> DMatrix<f64> {
    match centering {
        Some(c) => subtract_means(features, &c.feature_means[task]),
        None => features.clone(),
    }
}

pub fn center_targets(targets: &DMatrix<f64>, centering: Option<&Centering>, task: usize) -> DMatrix<f64> {
    match centering {
        Some(c) => subtract_means(targets, &c.target_means[task]),
        None => targets.clone(),
    }
}

fn to_problem(rows: &[(DMatrix<f64>, DMatrix<f64>)]) -> CliResult<MultiTaskProblem> {
    Ok(MultiTaskProblem::try_new(rows.iter().map(|(x, y)| TaskData::from_sample_rows(x.clone(), y.clone())).collect())?)
}

/// Reads every task file, splits off the holdout, and centres with training means.
pub fn load_dataset(manifest_path: &Path) -> CliResult<Dataset> {
    let manifest = load_manifest(manifest_path)?;
    let (d, q) = (manifest.d, manifest.q);
    let rows = manifest.tasks.iter().map(|p| read_task_csv(p, d, None)).collect::<CliResult<Vec<_>>>()?;
    check_consistent_q(&rows, q)?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &rows {
        let n = r.features.nrows();
        let held = manifest.holdout.map_or(0, |h| (h * n as f64).floor() as usize);
        if held >= n {
            return Err(CliError::input(format!("{}: holdout leaves no training rows", r.path.display())));
        }
        let keep = n - held;
        train.push((r.features.rows(0, keep).into_owned(), r.targets.rows(0, keep).into_owned()));
        if manifest.holdout.is_some() {
            test.push((r.features.rows(keep, held).into_owned(), r.targets.rows(keep, held).into_owned()));
        }
    }
    if !manifest.test_tasks.is_empty() {
        let test_rows =
            manifest.test_tasks.iter().map(|p| read_task_csv(p, d, Some(q))).collect::<CliResult<Vec<_>>>()?;
        test = test_rows.into_iter().map(|r| (r.features, r.targets)).collect();
    }

    let centering = manifest.center.then(|| Centering {
        feature_means: train.iter().map(|(x, _)| column_means(x)).collect(),
        target_means: train.iter().map(|(_, y)| column_means(y)).collect(),
    });
    let center = |parts: &[(DMatrix<f64>, DMatrix<f64>)]| -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        parts
            .iter()
            .enumerate()
            .map(|(t, (x, y))| (center_features(x, centering.as_ref(), t), center_targets(y, centering.as_ref(), t)))
            .collect()
    };
    let train = to_problem(&center(&train))?;
    // a held-out task with zero rows carries no test information
    let test = if test.is_empty() || test.iter().all(|(x, _)| x.nrows() == 0) {
        None
    } else if test.iter().any(|(x, _)| x.nrows() == 0) {
        return Err(CliError::input("holdout leaves some task without test rows"));
    } else {
        Some(to_problem(&center(&test))?)
    };
    Ok(Dataset { manifest, train, test, centering })
}

/// A fitted model with the preprocessing needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub solution: MtlSolution,
    pub seed: u64,
    pub centering: Option<Centering>,
}

fn push_matrix(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn push_vector(out: &mut String, label: &str, v: &DVector<f64>) {
    let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    out.push_str(label);
    out.push(' ');
    out.push_str(&vals.join(" "));
    out.push('\n');
}

/// Text container: a header of `key value` lines, then row-major blocks.
pub fn format_model(model: &SavedModel) -> String {
    let sol = &model.solution;
    let mut out = format!("{SOLUTION_MAGIC} {SOLUTION_VERSION}\n");
    out.push_str(&format!("tasks {}\nd {}\nq {}\n", sol.num_tasks(), sol.d(), sol.q()));
    out.push_str(&format!("lambda {:?}\n", sol.hyperparams().lambda()));
    let gammas: Vec<String> = sol.hyperparams().gammas().iter().map(|g| format!("{g:?}")).collect();
    out.push_str(&format!("gammas {}\n", gammas.join(" ")));
    out.push_str(&format!("seed {}\n", model.seed));
    out.push_str(&format!("centered {}\n", u8::from(model.centering.is_some())));
    if let Some(c) = &model.centering {
        for t in 0..sol.num_tasks() {
            push_vector(&mut out, &format!("feature_means {t}"), &c.feature_means[t]);
            push_vector(&mut out, &format!("target_means {t}"), &c.target_means[t]);
        }
    }
    out.push_str("W0\n");
    push_matrix(&mut out, sol.w0());
    for t in 0..sol.num_tasks() {
        out.push_str(&format!("V {t}\n"));
        push_matrix(&mut out, &sol.v()[t]);
    }
    for t in 0..sol.num_tasks() {
        out.push_str(&format!("W {t}\n"));
        push_matrix(&mut out, &sol.w()[t]);
    }
    out
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> CliResult<(usize, &'a str)> {
        self.iter
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| CliError::input(format!("{}: unexpected end of file", self.path.display())))
    }

    fn err(&self, line: usize, msg: impl std::fmt::Display) -> CliError {
        CliError::input(format!("{}: line {line}: {msg}", self.path.display()))
    }

    /// A line `key [index] values...`; returns the values.
    fn keyed(&mut self, key: &str, index: Option<usize>) -> CliResult<(usize, Vec<&'a str>)> {
        let (n, line) = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(n, format!("expected {key:?}")));
        }
        if let Some(idx) = index {
            if parts.next() != Some(idx.to_string().as_str()) {
                return Err(self.err(n, format!("expected {key} {idx}")));
            }
        }
        Ok((n, parts.collect()))
    }

    fn floats(&self, n: usize, parts: &[&str], expected: usize) -> CliResult<Vec<f64>> {
        if parts.len() != expected {
            return Err(self.err(n, format!("{} values, expected {expected}", parts.len())));
        }
        parts.iter().map(|s| s.parse::<f64>().map_err(|_| self.err(n, format!("cannot parse {s:?}")))).collect()
    }

    fn usize_value(&mut self, key: &str) -> CliResult<usize> {
        let (n, parts) = self.keyed(key, None)?;
        match parts.as_slice() {
            [v] => v.parse().map_err(|_| self.err(n, format!("cannot parse {v:?}"))),
            _ => Err(self.err(n, "expected one value")),
        }
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> CliResult<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.next()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            data.extend(self.floats(n, &parts, cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}

pub fn parse_model(path: &Path, text: &str) -> CliResult<SavedModel> {
    let mut lines = Lines { path, iter: text.lines().enumerate() };
    let (n, parts) = lines.keyed(SOLUTION_MAGIC, None)?;
    if parts != [SOLUTION_VERSION.to_string().as_str()] {
        return Err(lines.err(n, format!("unsupported container version {parts:?}")));
    }
    let tasks = lines.usize_value("tasks")?;
    let d = lines.usize_value("d")?;
    let q = lines.usize_value("q")?;
    let (n, parts) = lines.keyed("lambda", None)?;
    let lambda = lines.floats(n, &parts, 1)?[0];
    let (n, parts) = lines.keyed("gammas", None)?;
    let gammas = lines.floats(n, &parts, tasks)?;
    let (n, parts) = lines.keyed("seed", None)?;
    let seed = match parts.as_slice() {
        [v] => v.parse().map_err(|_| lines.err(n, "cannot parse seed"))?,
        _ => return Err(lines.err(n, "expected one value")),
    };
    let centered = lines.usize_value("centered")? == 1;
    let centering = if centered {
        let mut c = Centering { feature_means: Vec::new(), target_means: Vec::new() };
        for t in 0..tasks {
            let (n, parts) = lines.keyed("feature_means", Some(t))?;
            c.feature_means.push(DVector::from_vec(lines.floats(n, &parts, d)?));
            let (n, parts) = lines.keyed("target_means", Some(t))?;
            c.target_means.push(DVector::from_vec(lines.floats(n, &parts, q)?));
        }
        Some(c)
    } else {
        None
    };
    lines.keyed("W0", None)?;
    let w0 = lines.matrix(d, q)?;
    let mut v = Vec::with_capacity(tasks);
    for t in 0..tasks {
        lines.keyed("V", Some(t))?;
        v.push(lines.matrix(d, q)?);
    }
    let hp = Hyperparams::new(lambda, gammas)?;
    let solution = MtlSolution::from_weights(w0, v, hp)?;
    for t in 0..tasks {
        let (n, _) = lines.keyed("W", Some(t))?;
        if lines.matrix(d, q)? != solution.w()[t] {
            return Err(lines.err(n, format!("W {t} is not W0 + V {t}")));
        }
    }
    Ok(SavedModel { solution, seed, centering })
}

pub fn load_model(path: &Path) -> CliResult<SavedModel> {
    parse_model(path, &read_text(path)?)
}

/// Sweep rows as CSV with the fixed header.
pub fn format_sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = SWEEP_CSV_HEADER.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_fields().join(","));
        out.push('\n');
    }
    out
}
