//! Plug-in estimates of the quantities the asymptotic risk needs but data does not reveal:
//! the noise level, bilinear forms of the true weights, and from them a tuned `λ`.
//!
//! The workhorse is the debiasing map `κ`: for a probe fit `Ŵ`,
//! `E tr(ŴᵀMŴ) ≈ tr(Wᵀκ(M)W) + tr Σ_N [tr(Q̄̃M′) − tr Q̄̃₂(M′)]` with `M′ = A^{1/2}MA^{1/2}`.
//! Inverting `κ` turns observable quadratic forms of `Ŵ` into estimates of those of `W`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{log_grid, task_gram, BlockMatrix};
use crate::model::{Covariance, Hyperparams, MultiTaskProblem, NoiseModel, SpectrumModel};
use crate::rmt::{theoretical_test_risk, RiskReport, RmtConfig, RmtContext, Signal};
use crate::simplified::{lambda_star, LambdaStar, SignalStats};
use crate::solver::{empirical_train_risk, Fitter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KappaVariant {
    /// `κ(M) = M − BM − MBᵀ + A^{-1/2}Q̄̃₂(A^{1/2}MA^{1/2})A^{-1/2}`, `B = A^{-1/2}Q̄̃A^{1/2}`.
    #[default]
    Symmetric,
    /// Adds `−(n/(Td)²)·sym(A^{-1/2}(I_T ⊗ Σ)A^{-1/2}Q̄̃₂(A^{1/2}MA^{1/2}))`.
    CovarianceTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZetaVariant {
    /// `(1/Td)[tr(Ŵᵀκ⁻¹(M)Ŵ) − qσ̂²(tr(Q̄̃M″) − tr Q̄̃₂(M″))]`, `M″ = A^{1/2}κ⁻¹(M)A^{1/2}`.
    #[default]
    NoiseCorrected,
    /// `(1/Td) tr(Ŵᵀκ⁻¹(M)MŴ) − (σ̂²/Td) tr Q̄̃₂(M″)`.
    ProductForm,
}

/// Feature covariance plugged into the theory in data mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceAssumption {
    /// `Σ̂^(t) = (‖X^(t)‖²_F/(n_t d)) I_d`.
    #[default]
    Isotropic,
    /// `Σ̂^(t) = X^(t)X^(t)ᵀ/n_t`.
    SampleCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMethod {
    /// Decoupled limit when every task has clearly more samples than features, moments otherwise.
    #[default]
    Auto,
    /// Train risk at `λ → 0`, `γ → ∞` divided by `tr Q̄₂`.
    DecoupledLimit,
    /// Train risk at the probe fit with its signal part removed through `κ`.
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSolveConfig {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Largest `Td` for which a dense fallback solve over all `(Td)²` entries is attempted.
    pub dense_fallback_cap: usize,
}

impl Default for KappaSolveConfig {
    fn default() -> Self {
        KappaSolveConfig { damping: 0.5, tolerance: 1e-8, max_iterations: 5000, dense_fallback_cap: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationConfig {
    pub probe_lambda: f64,
    pub probe_gamma: f64,
    pub noise_lambda: f64,
    pub noise_gamma: f64,
    pub noise_method: NoiseMethod,
    pub kappa: KappaVariant,
    pub zeta: ZetaVariant,
    pub covariance: CovarianceAssumption,
    pub kappa_solve: KappaSolveConfig,
    pub rmt: RmtConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            probe_lambda: 1.0,
            probe_gamma: 1.0,
            noise_lambda: 1e-10,
            noise_gamma: 1e8,
            noise_method: NoiseMethod::Auto,
            kappa: KappaVariant::Symmetric,
            zeta: ZetaVariant::NoiseCorrected,
            covariance: CovarianceAssumption::Isotropic,
            kappa_solve: KappaSolveConfig::default(),
            rmt: RmtConfig::default(),
        }
    }
}

/// Spectrum model estimated from the training features.
pub fn estimated_spectrum(problem: &MultiTaskProblem, assumption: CovarianceAssumption) -> Result<SpectrumModel> {
    problem.check()?;
    let d = problem.d();
    let covs = problem
        .tasks()
        .iter()
        .map(|task| {
            let n = task.n() as f64;
            match assumption {
                CovarianceAssumption::Isotropic => {
                    Covariance::Isotropic(task.features().norm_squared() / (n * d as f64))
                }
                CovarianceAssumption::SampleCovariance => {
                    let x = task.features();
                    let c = x * x.transpose() / n;
                    Covariance::Dense((&c + c.transpose()) * 0.5)
                }
            }
        })
        .collect();
    SpectrumModel::new(d, problem.task_sizes(), covs)
}

/// `κ(M)`.
pub fn kappa_apply(ctx: &RmtContext, m: &BlockMatrix, variant: KappaVariant) -> Result<BlockMatrix> {
    let a_sqrt = ctx.a_sqrt();
    let a_inv_sqrt = ctx.a_inv_sqrt();
    let b = a_inv_sqrt.mul(ctx.qbar()).mul(&a_sqrt);
    let m_prime = a_sqrt.mul(m).mul(&a_sqrt);
    let s2 = ctx.second_order(&m_prime)?;
    let corrected = a_inv_sqrt.mul(&s2).mul(&a_inv_sqrt);
    let mut out = m.sub(&b.mul(m)).sub(&m.mul(&b.transpose())).add(&corrected);
    if variant == KappaVariant::CovarianceTerm {
        let spectrum = ctx.spectrum();
        let tasks = ctx.num_tasks();
        let agg = spectrum.aggregate();
        let lifted = BlockMatrix::block_diagonal(&vec![agg; tasks]);
        let extra = a_inv_sqrt.mul(&lifted).mul(&a_inv_sqrt).mul(&s2).symmetrize();
        let scale = spectrum.n() as f64 / (ctx.td() * ctx.td());
        out = out.axpby(1.0, &extra, -scale);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaMethod {
    Iterative,
    ExplicitKron,
    ExplicitDense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaSolution {
    pub matrix: BlockMatrix,
    pub iterations: usize,
    /// `‖κ(X) − target‖_F / ‖target‖_F`.
    pub residual: f64,
    pub method: KappaMethod,
}

/// `X` with `κ(X) = target`, by damped Richardson iteration with an explicit fallback.
pub fn kappa_solve(
    ctx: &RmtContext,
    target: &BlockMatrix,
    variant: KappaVariant,
    config: &KappaSolveConfig,
) -> Result<KappaSolution> {
    let norm = target.frobenius_norm();
    if norm == 0.0 {
        return Ok(KappaSolution {
            matrix: target.clone(),
            iterations: 0,
            residual: 0.0,
            method: KappaMethod::Iterative,
        });
    }
    let mut x = target.clone();
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 0..config.max_iterations {
        let r = target.sub(&kappa_apply(ctx, &x, variant)?);
        let res = r.frobenius_norm() / norm;
        if res <= config.tolerance {
            return Ok(KappaSolution { matrix: x, iterations: it, residual: res, method: KappaMethod::Iterative });
        }
        if !res.is_finite() {
            break;
        }
        if res < best * (1.0 - 1e-6) {
            best = res;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 50 {
                break;
            }
        }
        x = x.axpby(1.0, &r, config.damping);
    }
    kappa_solve_explicit(ctx, target, variant, config)
}

/// Direct solve of `κ(X) = target` over the Kronecker family (`T² × T²`) or, for small `Td`, all entries.
pub fn kappa_solve_explicit(
    ctx: &RmtContext,
    target: &BlockMatrix,
    variant: KappaVariant,
    config: &KappaSolveConfig,
) -> Result<KappaSolution> {
    let (tasks, d) = (ctx.num_tasks(), ctx.d());
    let norm = target.frobenius_norm();
    let residual_of = |x: &BlockMatrix| -> Result<f64> {
        Ok(target.sub(&kappa_apply(ctx, x, variant)?).frobenius_norm() / norm.max(f64::MIN_POSITIVE))
    };
    if ctx.is_kron() && target.is_kron() {
        let k = tasks * tasks;
        let mut sys = DMatrix::zeros(k, k);
        for col in 0..k {
            let e = BlockMatrix::selector(tasks, d, col % tasks, col / tasks);
            let img = kappa_apply(ctx, &e, variant)?;
            let coeffs =
                img.kron_coeffs().ok_or_else(|| Error::NumericalBreakdown("kappa left the Kronecker family".into()))?;
            sys.set_column(col, &DVector::from_column_slice(coeffs.as_slice()));
        }
        let rhs = DVector::from_column_slice(target.kron_coeffs().unwrap().as_slice());
        let sol = sys.lu().solve(&rhs).ok_or(Error::KappaInversion { residual: f64::INFINITY })?;
        let x = BlockMatrix::kron(DMatrix::from_column_slice(tasks, tasks, sol.as_slice()), d);
        let residual = residual_of(&x)?;
        return finish(x, residual, KappaMethod::ExplicitKron, config);
    }
    let td = tasks * d;
    if td > config.dense_fallback_cap {
        return Err(Error::KappaInversion { residual: f64::NAN });
    }
    let k = td * td;
    let mut sys = DMatrix::zeros(k, k);
    for col in 0..k {
        let mut e = DMatrix::zeros(td, td);
        e[(col % td, col / td)] = 1.0;
        let img = kappa_apply(ctx, &BlockMatrix::dense(e, tasks, d), variant)?.to_dense();
        sys.set_column(col, &DVector::from_column_slice(img.as_slice()));
    }
    let rhs = DVector::from_column_slice(target.to_dense().as_slice());
    let sol = sys.lu().solve(&rhs).ok_or(Error::KappaInversion { residual: f64::INFINITY })?;
    let x = BlockMatrix::dense(DMatrix::from_column_slice(td, td, sol.as_slice()), tasks, d);
    let residual = residual_of(&x)?;
    finish(x, residual, KappaMethod::ExplicitDense, config)
}

fn finish(x: BlockMatrix, residual: f64, method: KappaMethod, config: &KappaSolveConfig) -> Result<KappaSolution> {
    // a direct solve is accepted up to rounding of the assembled system
    if residual <= config.tolerance.max(1e-8) {
        Ok(KappaSolution { matrix: x, iterations: 0, residual, method })
    } else {
        Err(Error::KappaInversion { residual })
    }
}

/// `tr(Q̄̃M) − tr Q̄̃₂(M)`: the per-unit-noise contribution to `E tr(ŴᵀXŴ)` with `M = A^{1/2}XA^{1/2}`.
fn noise_weight(ctx: &RmtContext, x: &BlockMatrix) -> Result<f64> {
    let a_sqrt = ctx.a_sqrt();
    let m = a_sqrt.mul(x).mul(&a_sqrt);
    Ok(ctx.qbar().trace_product(&m) - ctx.second_order(&m)?.trace())
}

/// `ζ(M) = u − σ̂²·v`, kept in affine form so the noise level can be solved for.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ZetaAffine {
    intercept: f64,
    slope: f64,
}

impl ZetaAffine {
    fn at(&self, sigma2: f64) -> f64 {
        self.intercept - sigma2 * self.slope
    }
}

fn zeta_affine(
    ctx: &RmtContext,
    w_hat: &DMatrix<f64>,
    m: &BlockMatrix,
    q: usize,
    config: &EstimationConfig,
) -> Result<ZetaAffine> {
    let x = kappa_solve(ctx, m, config.kappa, &config.kappa_solve)?.matrix;
    let td = ctx.td();
    Ok(match config.zeta {
        ZetaVariant::NoiseCorrected => {
            ZetaAffine { intercept: x.quadratic_trace(w_hat) / td, slope: q as f64 * noise_weight(ctx, &x)? / td }
        }
        ZetaVariant::ProductForm => {
            let a_sqrt = ctx.a_sqrt();
            let m2 = a_sqrt.mul(&x).mul(&a_sqrt);
            ZetaAffine { intercept: x.mul(m).quadratic_trace(w_hat) / td, slope: ctx.second_order(&m2)?.trace() / td }
        }
    })
}

/// Estimate of `(1/Td) tr(WᵀMW)` from a fit `ŵ` (stacked, `Td × q`) made at the context's hyperparameters.
pub fn zeta(
    ctx: &RmtContext,
    w_hat: &DMatrix<f64>,
    m: &BlockMatrix,
    sigma2_hat: f64,
    config: &EstimationConfig,
) -> Result<f64> {
    let q = w_hat.ncols();
    Ok(zeta_affine(ctx, w_hat, m, q, config)?.at(sigma2_hat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseEstimateMethod {
    DecoupledLimit,
    Moments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    /// Noise variance per output coordinate.
    pub sigma2_hat: f64,
    pub train_risk: f64,
    pub trace_q2: f64,
    pub method: NoiseEstimateMethod,
    pub warnings: Vec<String>,
}

fn undersampled_tasks(problem: &MultiTaskProblem) -> Vec<usize> {
    let d = problem.d() as f64;
    problem.task_sizes().iter().enumerate().filter(|(_, &n)| (n as f64) < 1.05 * d).map(|(t, _)| t).collect()
}

/// Noise variance per output coordinate.
pub fn estimate_noise(problem: &MultiTaskProblem, config: &EstimationConfig) -> Result<NoiseEstimate> {
    problem.check()?;
    let method = match config.noise_method {
        NoiseMethod::DecoupledLimit => NoiseEstimateMethod::DecoupledLimit,
        NoiseMethod::Moments => NoiseEstimateMethod::Moments,
        NoiseMethod::Auto if undersampled_tasks(problem).is_empty() => NoiseEstimateMethod::DecoupledLimit,
        NoiseMethod::Auto => NoiseEstimateMethod::Moments,
    };
    match method {
        NoiseEstimateMethod::DecoupledLimit => noise_decoupled(problem, config),
        NoiseEstimateMethod::Moments => {
            let probe = Probe::fit(problem, config)?;
            noise_moments(problem, &probe, config)
        }
    }
}

fn noise_decoupled(problem: &MultiTaskProblem, config: &EstimationConfig) -> Result<NoiseEstimate> {
    let d = problem.d() as f64;
    let mut warnings = Vec::new();
    for (t, &n) in problem.task_sizes().iter().enumerate() {
        if (n as f64 - d).abs() < 0.05 * d {
            warnings.push(format!("task {t}: n_t = {n} is within 5% of d = {d}; the estimate is unstable"));
        }
    }
    let hp = Hyperparams::uniform(config.noise_lambda, config.noise_gamma, problem.num_tasks())?;
    let sol = Fitter::new(problem)?.fit(&hp)?;
    let train_risk = empirical_train_risk(problem, &sol)?;
    let spectrum = estimated_spectrum(problem, config.covariance)?;
    let ctx = RmtContext::new(spectrum, &hp, config.rmt)?;
    let sample = ctx.sample_second_order();
    warnings.extend(sample.warnings);
    let n = problem.n() as f64;
    if !(sample.trace > 1e-6 * n) {
        return Err(Error::RegimeFailure(format!(
            "tr Q2 = {:e} is not positive: the decoupled fit interpolates (too few samples per task)",
            sample.trace
        )));
    }
    let tn = (problem.num_tasks() * problem.n()) as f64;
    let sigma2_hat = (train_risk * tn / (problem.q() as f64 * sample.trace)).max(0.0);
    Ok(NoiseEstimate {
        sigma2_hat,
        train_risk,
        trace_q2: sample.trace,
        method: NoiseEstimateMethod::DecoupledLimit,
        warnings,
    })
}

// Train risk at the probe is (Td/(Tn))·ζ(H) + qσ² tr Q̄₂/(Tn) with H = A^{-1/2}(Q̄̃ − Q̄̃₂(I))A^{-1/2};
// ζ(H) is affine in σ², so σ² solves a scalar linear equation.
fn noise_moments(problem: &MultiTaskProblem, probe: &Probe, config: &EstimationConfig) -> Result<NoiseEstimate> {
    let ctx = &probe.ctx;
    let ais = ctx.a_inv_sqrt();
    let h = ais.mul(&ctx.qbar().sub(ctx.q2_identity())).mul(&ais);
    let q = problem.q();
    let z = zeta_affine(ctx, &probe.w_hat, &h, q, config)?;
    let sample = ctx.sample_second_order();
    let tn = (problem.num_tasks() * problem.n()) as f64;
    let td = ctx.td();
    let denom = q as f64 * sample.trace - td * z.slope;
    if !(denom > 0.0) {
        return Err(Error::RegimeFailure(format!("moment equation for the noise level is degenerate ({denom:e})")));
    }
    let raw = (probe.train_risk * tn - td * z.intercept) / denom;
    let mut warnings = sample.warnings;
    if raw < 0.0 {
        warnings.push(format!("negative moment estimate {raw:e} of the noise variance clamped to 0"));
    }
    Ok(NoiseEstimate {
        sigma2_hat: raw.max(0.0),
        train_risk: probe.train_risk,
        trace_q2: sample.trace,
        method: NoiseEstimateMethod::Moments,
        warnings,
    })
}

/// The probe fit and its deterministic-equivalent context.
struct Probe {
    hp: Hyperparams,
    ctx: RmtContext,
    w_hat: DMatrix<f64>,
    train_risk: f64,
}

impl Probe {
    fn fit(problem: &MultiTaskProblem, config: &EstimationConfig) -> Result<Self> {
        let hp = Hyperparams::uniform(config.probe_lambda, config.probe_gamma, problem.num_tasks())?;
        let sol = Fitter::new(problem)?.fit(&hp)?;
        let train_risk = empirical_train_risk(problem, &sol)?;
        let spectrum = estimated_spectrum(problem, config.covariance)?;
        let ctx = RmtContext::new(spectrum, &hp, config.rmt)?;
        Ok(Probe { hp, ctx, w_hat: sol.stacked_w(), train_risk })
    }
}

/// A diagonal signal estimate that came out negative and was set to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampEvent {
    pub task: usize,
    pub raw_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedStats {
    pub sigma2_hat: f64,
    /// `(t, v)` estimates `tr(W_tᵀW_v)/(Td)`.
    pub signal_matrix_hat: DMatrix<f64>,
    /// `(S₁₁ + S₂₂ + S₁₂)/(qσ̂²)` for two tasks.
    pub snr_hat: Option<f64>,
    pub clamp_events: Vec<ClampEvent>,
    /// Hyperparameters of the probe fit.
    pub probe: Hyperparams,
    pub noise: NoiseEstimate,
    pub d: usize,
    pub q: usize,
}

impl EstimatedStats {
    /// Estimated `S_{tv} = tr(W_tᵀW_v)` on the raw scale.
    pub fn raw_gram(&self) -> DMatrix<f64> {
        &self.signal_matrix_hat * (self.signal_matrix_hat.nrows() * self.d) as f64
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::isotropic(self.q, self.sigma2_hat)
    }

    /// Two-task signal on the `1/(Td)` scale.
    pub fn signal_stats(&self) -> Option<SignalStats> {
        (self.signal_matrix_hat.nrows() == 2).then(|| SignalStats {
            w1_sq: self.signal_matrix_hat[(0, 0)],
            w2_sq: self.signal_matrix_hat[(1, 1)],
            cross: self.signal_matrix_hat[(0, 1)],
        })
    }
}

/// Noise level, task signal matrix and two-task SNR.
pub fn estimate_signal_and_snr(problem: &MultiTaskProblem, config: &EstimationConfig) -> Result<EstimatedStats> {
    let probe = Probe::fit(problem, config)?;
    estimate_with_probe(problem, &probe, config)
}

fn estimate_with_probe(problem: &MultiTaskProblem, probe: &Probe, config: &EstimationConfig) -> Result<EstimatedStats> {
    let noise = match config.noise_method {
        NoiseMethod::Moments => noise_moments(problem, probe, config)?,
        NoiseMethod::DecoupledLimit => noise_decoupled(problem, config)?,
        NoiseMethod::Auto if undersampled_tasks(problem).is_empty() => noise_decoupled(problem, config)?,
        NoiseMethod::Auto => noise_moments(problem, probe, config)?,
    };
    let (tasks, d, q) = (problem.num_tasks(), problem.d(), problem.q());
    let mut s = DMatrix::zeros(tasks, tasks);
    for t in 0..tasks {
        for v in t..tasks {
            let sel = if t == v {
                BlockMatrix::selector(tasks, d, t, t)
            } else {
                BlockMatrix::selector(tasks, d, t, v).add(&BlockMatrix::selector(tasks, d, v, t))
            };
            let mut z = zeta_affine(&probe.ctx, &probe.w_hat, &sel, q, config)?.at(noise.sigma2_hat);
            if t != v {
                z /= 2.0;
            }
            s[(t, v)] = z;
            s[(v, t)] = z;
        }
    }
    let mut clamp_events = Vec::new();
    for t in 0..tasks {
        if s[(t, t)] < 0.0 {
            clamp_events.push(ClampEvent { task: t, raw_value: s[(t, t)] });
            s[(t, t)] = 0.0;
        }
    }
    let snr_hat = (tasks == 2).then(|| {
        let denom = q as f64 * noise.sigma2_hat;
        let num = s[(0, 0)] + s[(1, 1)] + s[(0, 1)];
        if denom > 0.0 {
            num / denom
        } else if num > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    });
    Ok(EstimatedStats {
        sigma2_hat: noise.sigma2_hat,
        signal_matrix_hat: s,
        snr_hat,
        clamp_events,
        probe: probe.hp.clone(),
        noise,
        d,
        q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMode {
    ClosedForm,
    TheoryGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOptions {
    pub gamma: f64,
    pub grid: Vec<f64>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { gamma: 1.0, grid: log_grid(1e-3, 1e3, 61) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub lambda: f64,
    pub report: RiskReport,
    pub stats: EstimatedStats,
    pub lambda_star: Option<LambdaStar>,
    /// `(λ, predicted test risk)` over the grid in grid mode.
    pub curve: Vec<(f64, f64)>,
}

/// Estimated statistics together with the probe fit they came from.
pub struct PlugIn {
    probe: Probe,
    stats: EstimatedStats,
    config: EstimationConfig,
    n: usize,
}

impl PlugIn {
    pub fn new(problem: &MultiTaskProblem, config: &EstimationConfig) -> Result<Self> {
        let probe = Probe::fit(problem, config)?;
        let stats = estimate_with_probe(problem, &probe, config)?;
        Ok(PlugIn { probe, stats, config: *config, n: problem.n() })
    }

    pub fn stats(&self) -> &EstimatedStats {
        &self.stats
    }

    /// Predicted train and test risk at `hp`.
    pub fn risk(&self, hp: &Hyperparams) -> Result<RiskReport> {
        plug_in_report(self.n, &self.probe, &self.stats, hp, &self.config)
    }
}

fn plug_in_report(
    n: usize,
    probe: &Probe,
    stats: &EstimatedStats,
    hp: &Hyperparams,
    config: &EstimationConfig,
) -> Result<RiskReport> {
    let spectrum = probe.ctx.spectrum().clone();
    let ctx = RmtContext::new(spectrum, hp, config.rmt)?;
    let noise = stats.noise_model()?;
    if ctx.is_kron() {
        return theoretical_test_risk(&ctx, &noise, Signal::Gram(&stats.raw_gram()));
    }
    // anisotropic plug-in: the W-dependent traces are estimated by ζ directly
    let mut report = theoretical_test_risk(&ctx, &noise, Signal::Zero)?;
    let (tasks, td, n) = (ctx.num_tasks() as f64, ctx.td(), n as f64);
    let ais = ctx.a_inv_sqrt();
    let q = stats.q;
    let h_test = ais.mul(&ctx.second_order(&ctx.m_sigma())?).mul(&ais);
    let h_train = ais.mul(&ctx.qbar().sub(ctx.q2_identity())).mul(&ais);
    report.signal_term = zeta_affine(&probe.ctx, &probe.w_hat, &h_test, q, config)?.at(stats.sigma2_hat) / tasks;
    report.train_signal_term =
        td * zeta_affine(&probe.ctx, &probe.w_hat, &h_train, q, config)?.at(stats.sigma2_hat) / (tasks * n);
    report.test_risk = report.signal_term + report.noise_term + report.irreducible_noise;
    report.train_risk = report.train_signal_term + report.train_noise_term;
    Ok(report)
}

/// Data-driven choice of `λ` for a fixed `γ`.
pub fn tune_lambda(
    problem: &MultiTaskProblem,
    mode: TuneMode,
    options: &TuneOptions,
    config: &EstimationConfig,
) -> Result<TuneResult> {
    let plug_in = PlugIn::new(problem, config)?;
    let stats = plug_in.stats.clone();
    let tasks = problem.num_tasks();
    match mode {
        TuneMode::ClosedForm => {
            let signal = stats
                .signal_stats()
                .ok_or_else(|| Error::InvalidInput("the closed-form lambda needs exactly two tasks".into()))?;
            let noise_trace = problem.q() as f64 * stats.sigma2_hat;
            if !(noise_trace > 0.0) {
                return Err(Error::RegimeFailure("estimated noise level is zero".into()));
            }
            let ls = lambda_star(problem.n() as f64, problem.d() as f64, signal, noise_trace, options.gamma)?;
            let hp = Hyperparams::uniform(ls.clamped, options.gamma, tasks)?;
            let report = plug_in.risk(&hp)?;
            Ok(TuneResult { lambda: ls.clamped, report, stats, lambda_star: Some(ls), curve: Vec::new() })
        }
        TuneMode::TheoryGrid => {
            if options.grid.is_empty() {
                return Err(Error::InvalidInput("lambda grid is empty".into()));
            }
            let mut best: Option<RiskReport> = None;
            let mut curve = Vec::with_capacity(options.grid.len());
            for &lambda in &options.grid {
                let hp = Hyperparams::uniform(lambda, options.gamma, tasks)?;
                let report = plug_in.risk(&hp)?;
                curve.push((lambda, report.test_risk));
                if best.as_ref().is_none_or(|b| report.test_risk < b.test_risk) {
                    best = Some(report);
                }
            }
            let report = best.expect("grid is nonempty");
            Ok(TuneResult { lambda: report.lambda, report, stats, lambda_star: None, curve })
        }
    }
}

/// `(1/Td) tr(WᵀMW)` for known weights; the target of [`zeta`].
pub fn bilinear_truth(w: &DMatrix<f64>, m: &BlockMatrix) -> f64 {
    m.quadratic_trace(w) / m.dim() as f64
}

/// `tr(W_tᵀW_v)/(Td)` for known weights; the target of the signal matrix estimate.
pub fn signal_matrix_truth(w: &DMatrix<f64>, tasks: usize) -> DMatrix<f64> {
    let d = w.nrows() / tasks;
    task_gram(w, tasks, d) / (tasks * d) as f64
}
