//! Datasets, hyperparameters, solutions and the spectrum/noise descriptions used by the theory.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::check_symmetric_psd;

/// Relative tolerance for symmetry and PSD checks.
pub const PSD_TOL: f64 = 1e-12;

/// One task: features `d × n_t` (samples as columns) and responses `n_t × q` (samples as rows).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    features: DMatrix<f64>,
    responses: DMatrix<f64>,
}

impl TaskData {
    /// Wraps the matrices as given. Use [`validate`] or [`MultiTaskProblem::try_new`] to check them.
    pub fn new(features: DMatrix<f64>, responses: DMatrix<f64>) -> Self {
        TaskData { features, responses }
    }

    /// Builds a task from row-major samples: `features` is `n_t × d`, as read from a file.
    pub fn from_sample_rows(features: DMatrix<f64>, responses: DMatrix<f64>) -> Self {
        TaskData::new(features.transpose(), responses)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn d(&self) -> usize {
        self.features.nrows()
    }

    pub fn q(&self) -> usize {
        self.responses.ncols()
    }

    pub fn n(&self) -> usize {
        self.features.ncols()
    }
}

/// `T` tasks sharing the feature dimension `d` and response dimension `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskProblem {
    tasks: Vec<TaskData>,
}

impl MultiTaskProblem {
    /// Wraps the tasks without checking them.
    pub fn new(tasks: Vec<TaskData>) -> Self {
        MultiTaskProblem { tasks }
    }

    /// Wraps the tasks and rejects the problem if [`validate`] reports anything.
    pub fn try_new(tasks: Vec<TaskData>) -> Result<Self> {
        let p = MultiTaskProblem { tasks };
        p.check()?;
        Ok(p)
    }

    pub(crate) fn check(&self) -> Result<()> {
        let violations = validate(self);
        if violations.is_empty() {
            return Ok(());
        }
        let msg = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        if violations.iter().all(|v| v.kind == ViolationKind::DimensionMismatch) {
            Err(Error::DimensionMismatch(msg))
        } else {
            Err(Error::InvalidInput(msg))
        }
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &TaskData {
        &self.tasks[t]
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn d(&self) -> usize {
        self.tasks.first().map_or(0, TaskData::d)
    }

    pub fn q(&self) -> usize {
        self.tasks.first().map_or(0, TaskData::q)
    }

    /// Total sample count `n = Σ_t n_t`.
    pub fn n(&self) -> usize {
        self.tasks.iter().map(TaskData::n).sum()
    }

    pub fn task_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskData::n).collect()
    }

    /// Row offset of each task inside the stacked `n × q` response matrix.
    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.task_sizes())
    }

    /// Responses of all tasks stacked task by task (`n × q`).
    pub fn stacked_responses(&self) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n(), self.q());
        let mut row = 0;
        for task in &self.tasks {
            y.rows_mut(row, task.n()).copy_from(task.responses());
            row += task.n();
        }
        y
    }
}

pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NoTasks,
    EmptyDimension,
    SampleCountMismatch,
    DimensionMismatch,
    NonFinite,
}

/// One broken invariant, with the offending task when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub task: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.task {
            Some(t) => write!(f, "task {t}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Every invariant violation of `problem`; empty when the problem is well formed.
pub fn validate(problem: &MultiTaskProblem) -> Vec<Violation> {
    let mut out = Vec::new();
    let tasks = problem.tasks();
    if tasks.is_empty() {
        out.push(Violation { task: None, kind: ViolationKind::NoTasks, message: "problem has no tasks".into() });
        return out;
    }
    let (d0, q0) = (tasks[0].d(), tasks[0].q());
    for (t, task) in tasks.iter().enumerate() {
        let v = |kind, message: String| Violation { task: Some(t), kind, message };
        if task.d() == 0 || task.q() == 0 || task.n() == 0 {
            out.push(v(
                ViolationKind::EmptyDimension,
                format!("empty task (d={}, q={}, n={})", task.d(), task.q(), task.n()),
            ));
        }
        if task.features.ncols() != task.responses.nrows() {
            out.push(v(
                ViolationKind::SampleCountMismatch,
                format!(
                    "features have {} samples but responses have {}",
                    task.features.ncols(),
                    task.responses.nrows()
                ),
            ));
        }
        if t > 0 && task.d() != d0 {
            out.push(v(
                ViolationKind::DimensionMismatch,
                format!("dimension mismatch: d={} but task 0 has d={d0}", task.d()),
            ));
        }
        if t > 0 && task.q() != q0 {
            out.push(v(
                ViolationKind::DimensionMismatch,
                format!("dimension mismatch: q={} but task 0 has q={q0}", task.q()),
            ));
        }
        if task.features.iter().chain(task.responses.iter()).any(|x| !x.is_finite()) {
            out.push(v(ViolationKind::NonFinite, "non-finite data entry".into()));
        }
    }
    out
}

/// Common regularizer `λ ≥ 0` and task-specific regularizers `γ_t > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    lambda: f64,
    gammas: Vec<f64>,
}

impl Hyperparams {
    pub fn new(lambda: f64, gammas: Vec<f64>) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if gammas.is_empty() {
            return Err(Error::InvalidInput("at least one gamma is required".into()));
        }
        if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidInput(format!("gamma must be finite and > 0, got {g}")));
        }
        Ok(Hyperparams { lambda, gammas })
    }

    /// Same `γ` for all `tasks` tasks.
    pub fn uniform(lambda: f64, gamma: f64, tasks: usize) -> Result<Self> {
        Hyperparams::new(lambda, vec![gamma; tasks])
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Hyperparams::new(lambda, self.gammas.clone())
    }

    pub(crate) fn check_tasks(&self, tasks: usize) -> Result<()> {
        if self.gammas.len() != tasks {
            return Err(Error::DimensionMismatch(format!("{} gammas for {tasks} tasks", self.gammas.len())));
        }
        Ok(())
    }
}

/// Fitted weights: common part `Ŵ_0`, task parts `V̂_t`, their sums `Ŵ_t` and the dual variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlSolution {
    w0: DMatrix<f64>,
    v: Vec<DMatrix<f64>>,
    w: Vec<DMatrix<f64>>,
    alpha: DMatrix<f64>,
    task_sizes: Vec<usize>,
    hyperparams: Hyperparams,
}

impl MtlSolution {
    /// Assembles a solution; `w[t] = w0 + v[t]` is computed here.
    pub fn from_components(
        w0: DMatrix<f64>,
        v: Vec<DMatrix<f64>>,
        alpha: DMatrix<f64>,
        task_sizes: Vec<usize>,
        hyperparams: Hyperparams,
    ) -> Result<Self> {
        if v.len() != task_sizes.len() || v.len() != hyperparams.gammas().len() {
            return Err(Error::DimensionMismatch(format!(
                "{} task weights, {} task sizes, {} gammas",
                v.len(),
                task_sizes.len(),
                hyperparams.gammas().len()
            )));
        }
        if let Some(t) = v.iter().position(|vt| vt.shape() != w0.shape()) {
            return Err(Error::DimensionMismatch(format!(
                "task {t} weights are {:?}, common weights are {:?}",
                v[t].shape(),
                w0.shape()
            )));
        }
        let n: usize = task_sizes.iter().sum();
        if alpha.nrows() != n || alpha.ncols() != w0.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "dual variables are {:?}, expected ({n}, {})",
                alpha.shape(),
                w0.ncols()
            )));
        }
        let w = v.iter().map(|vt| &w0 + vt).collect();
        Ok(MtlSolution { w0, v, w, alpha, task_sizes, hyperparams })
    }

    /// Solution without dual variables, e.g. read back from disk.
    pub fn from_weights(w0: DMatrix<f64>, v: Vec<DMatrix<f64>>, hyperparams: Hyperparams) -> Result<Self> {
        let tasks = v.len();
        let q = w0.ncols();
        MtlSolution::from_components(w0, v, DMatrix::zeros(0, q), vec![0; tasks], hyperparams)
    }

    pub fn w0(&self) -> &DMatrix<f64> {
        &self.w0
    }

    pub fn v(&self) -> &[DMatrix<f64>] {
        &self.v
    }

    pub fn w(&self) -> &[DMatrix<f64>] {
        &self.w
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn task_sizes(&self) -> &[usize] {
        &self.task_sizes
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn num_tasks(&self) -> usize {
        self.v.len()
    }

    pub fn d(&self) -> usize {
        self.w0.nrows()
    }

    pub fn q(&self) -> usize {
        self.w0.ncols()
    }

    /// Dual variables of task `t` (`n_t × q`).
    pub fn alpha_block(&self, t: usize) -> DMatrix<f64> {
        let off = offsets(&self.task_sizes)[t];
        self.alpha.rows(off, self.task_sizes[t]).into_owned()
    }

    /// `[Ŵ_1; …; Ŵ_T]` as a `Td × q` matrix.
    pub fn stacked_w(&self) -> DMatrix<f64> {
        stack(&self.w)
    }
}

/// Vertically stacks `d × q` blocks into `Td × q`.
pub fn stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (d, q) = blocks[0].shape();
    let mut out = DMatrix::zeros(d * blocks.len(), q);
    for (t, b) in blocks.iter().enumerate() {
        out.rows_mut(t * d, d).copy_from(b);
    }
    out
}

/// Splits a `Td × q` stack into `T` blocks of height `d`.
pub fn unstack(stacked: &DMatrix<f64>, tasks: usize) -> Vec<DMatrix<f64>> {
    let d = stacked.nrows() / tasks;
    (0..tasks).map(|t| stacked.rows(t * d, d).into_owned()).collect()
}

/// Output-noise covariance `Σ_N` (`q × q`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    sigma_n: DMatrix<f64>,
    isotropic: Option<f64>,
}

impl NoiseModel {
    pub fn new(sigma_n: DMatrix<f64>) -> Result<Self> {
        check_symmetric_psd(&sigma_n, PSD_TOL).map_err(|e| Error::InvalidInput(format!("noise covariance: {e}")))?;
        Ok(NoiseModel { sigma_n, isotropic: None })
    }

    /// `Σ_N = σ² I_q`.
    pub fn isotropic(q: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidInput(format!("noise variance must be finite and >= 0, got {sigma2}")));
        }
        Ok(NoiseModel { sigma_n: DMatrix::identity(q, q) * sigma2, isotropic: Some(sigma2) })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma_n
    }

    pub fn isotropic_variance(&self) -> Option<f64> {
        self.isotropic
    }

    pub fn trace(&self) -> f64 {
        self.sigma_n.trace()
    }

    pub fn q(&self) -> usize {
        self.sigma_n.nrows()
    }
}

/// Covariance of one task's features.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `s · I_d`.
    Isotropic(f64),
    Dense(DMatrix<f64>),
}

impl Covariance {
    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        match self {
            Covariance::Isotropic(s) => DMatrix::identity(d, d) * *s,
            Covariance::Dense(m) => m.clone(),
        }
    }

    pub fn trace(&self, d: usize) -> f64 {
        match self {
            Covariance::Isotropic(s) => s * d as f64,
            Covariance::Dense(m) => m.trace(),
        }
    }
}

/// Population description fed to the deterministic-equivalent engine.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumModel {
    d: usize,
    task_sizes: Vec<usize>,
    covariances: Vec<Covariance>,
    ground_truth: Option<DMatrix<f64>>,
}

impl SpectrumModel {
    pub fn new(d: usize, task_sizes: Vec<usize>, covariances: Vec<Covariance>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("d must be >= 1".into()));
        }
        if task_sizes.is_empty() || task_sizes.len() != covariances.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} task sizes for {} covariances",
                task_sizes.len(),
                covariances.len()
            )));
        }
        if let Some(t) = task_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidInput(format!("task {t} has no samples")));
        }
        for (t, c) in covariances.iter().enumerate() {
            match c {
                Covariance::Isotropic(s) if !(s.is_finite() && *s >= 0.0) => {
                    return Err(Error::InvalidInput(format!("task {t}: covariance scale {s} is not >= 0")));
                }
                Covariance::Dense(m) => {
                    if m.shape() != (d, d) {
                        return Err(Error::DimensionMismatch(format!(
                            "task {t}: covariance is {:?}, expected ({d}, {d})",
                            m.shape()
                        )));
                    }
                    check_symmetric_psd(m, PSD_TOL)
                        .map_err(|e| Error::InvalidInput(format!("task {t}: covariance {e}")))?;
                }
                _ => {}
            }
        }
        Ok(SpectrumModel { d, task_sizes, covariances, ground_truth: None })
    }

    /// Every task with covariance `I_d`.
    pub fn identity(d: usize, task_sizes: Vec<usize>) -> Result<Self> {
        let cov = vec![Covariance::Isotropic(1.0); task_sizes.len()];
        SpectrumModel::new(d, task_sizes, cov)
    }

    /// Attaches the `Td × q` ground-truth weights used in synthetic mode.
    pub fn with_ground_truth(mut self, w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != self.d * self.num_tasks() {
            return Err(Error::DimensionMismatch(format!(
                "ground truth has {} rows, expected {}",
                w.nrows(),
                self.d * self.num_tasks()
            )));
        }
        self.ground_truth = Some(w);
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_tasks(&self) -> usize {
        self.task_sizes.len()
    }

    pub fn task_sizes(&self) -> &[usize] {
        &self.task_sizes
    }

    pub fn n(&self) -> usize {
        self.task_sizes.iter().sum()
    }

    pub fn covariances(&self) -> &[Covariance] {
        &self.covariances
    }

    pub fn ground_truth(&self) -> Option<&DMatrix<f64>> {
        self.ground_truth.as_ref()
    }

    /// `n_t / (Td)`.
    pub fn ratio(&self, t: usize) -> f64 {
        self.task_sizes[t] as f64 / (self.num_tasks() * self.d) as f64
    }

    /// `c_0 = n / d`.
    pub fn c0(&self) -> f64 {
        self.n() as f64 / self.d as f64
    }

    pub fn is_isotropic(&self) -> bool {
        self.covariances.iter().all(|c| matches!(c, Covariance::Isotropic(_)))
    }

    /// `Σ = Σ_t (n_t/d) Σ^(t)`.
    pub fn aggregate(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.d);
        for (t, c) in self.covariances.iter().enumerate() {
            out += c.to_matrix(self.d) * (self.task_sizes[t] as f64 / self.d as f64);
        }
        out
    }
}
