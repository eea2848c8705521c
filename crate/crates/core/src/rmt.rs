//! Deterministic equivalents of the coresolvent and the asymptotic train/test risks.
//!
//! Everything is expressed on the `Td`-dimensional stacked feature space through
//! `C^(t) = A^{1/2}(E_tt ⊗ Σ^(t))A^{1/2}`. With isotropic covariances every operator stays
//! in the Kronecker family and the whole engine runs on `T × T` matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::BlockMatrix;
use crate::model::{Covariance, Hyperparams, NoiseModel, SpectrumModel};
use crate::solver::CouplingOperator;

/// Assembly of the second-order equivalent `Q̄̃₂(M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SecondOrderVariant {
    /// `Q̄̃MQ̄̃ + (1/Td) Σ_t d_t/(1+δ_t) Q̄̃C^(t)Q̄̃` with `d = (I − Ψ/Td)^{-1} Ψ(M)`.
    #[default]
    Direct,
    /// The alternative weighting through the `T × T` matrix `P` with `(1+δ_t)(1+δ_v)` denominators.
    PairWeighted,
}

/// Diagonal weights `v_t` of the sample-space equivalent `Q̄₂ = I_n − Diag(v_t I_{n_t})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleResolventVariant {
    /// `v_t = δ_t/(1+δ_t) + tr(C^(t) Q̄̃₂(I))/(Td (1+δ_t)²)`.
    #[default]
    Corrected,
    /// `v_t = [tr(C^(t) Q̄̃) + tr(C^(t) Q̄̃₂(I))]/(Td (1+δ_t)²)`.
    Uncorrected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmtConfig {
    pub damping: f64,
    /// Sup-norm tolerance on `δ − F(δ)`, relative to `max(1, |δ_t|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub second_order: SecondOrderVariant,
    pub sample_resolvent: SampleResolventVariant,
}

impl Default for RmtConfig {
    fn default() -> Self {
        RmtConfig {
            damping: 0.5,
            tolerance: 1e-13,
            max_iterations: 10_000,
            second_order: SecondOrderVariant::default(),
            sample_resolvent: SampleResolventVariant::default(),
        }
    }
}

/// Result of the damped fixed-point iteration, with its residual history.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointTrace {
    pub delta: DVector<f64>,
    pub residuals: Vec<f64>,
}

/// `C^(t)` for every task.
pub fn c_blocks(spectrum: &SpectrumModel, coupling: &CouplingOperator) -> Result<Vec<BlockMatrix>> {
    let tasks = spectrum.num_tasks();
    if coupling.num_tasks() != tasks {
        return Err(Error::DimensionMismatch(format!(
            "coupling has {} tasks, spectrum has {tasks}",
            coupling.num_tasks()
        )));
    }
    let d = spectrum.d();
    let gs = coupling.g_sqrt();
    let isotropic = spectrum.is_isotropic();
    Ok(spectrum
        .covariances()
        .iter()
        .enumerate()
        .map(|(t, cov)| {
            let col = gs.column(t);
            let outer = col * col.transpose();
            match (cov, isotropic) {
                (Covariance::Isotropic(s), true) => BlockMatrix::kron(outer * *s, d),
                _ => {
                    let sigma = cov.to_matrix(d);
                    let mut mat = DMatrix::zeros(tasks * d, tasks * d);
                    for a in 0..tasks {
                        for b in 0..tasks {
                            let w = outer[(a, b)];
                            if w != 0.0 {
                                mat.view_mut((a * d, b * d), (d, d)).copy_from(&(&sigma * w));
                            }
                        }
                    }
                    BlockMatrix::dense(mat, tasks, d)
                }
            }
        })
        .collect())
}

fn resolvent_at(c: &[BlockMatrix], ratios: &[f64], delta: &DVector<f64>) -> Result<BlockMatrix> {
    let (tasks, d) = (c[0].tasks(), c[0].block_dim());
    let mut acc = BlockMatrix::identity(tasks, d);
    for (t, ct) in c.iter().enumerate() {
        acc = acc.axpby(1.0, ct, ratios[t] / (1.0 + delta[t]));
    }
    acc.inverse_spd()
}

fn fixed_point_map(c: &[BlockMatrix], ratios: &[f64], delta: &DVector<f64>) -> Result<DVector<f64>> {
    let q = resolvent_at(c, ratios, delta)?;
    let td = q.dim() as f64;
    Ok(DVector::from_iterator(c.len(), c.iter().map(|ct| ct.trace_product(&q) / td)))
}

fn solve_fixed_point(c: &[BlockMatrix], ratios: &[f64], config: &RmtConfig) -> Result<FixedPointTrace> {
    let mut delta = DVector::zeros(c.len());
    let mut residuals = Vec::new();
    for _ in 0..config.max_iterations {
        let f = fixed_point_map(c, ratios, &delta)?;
        let residual = delta.iter().zip(f.iter()).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max);
        residuals.push(residual);
        if !residual.is_finite() {
            return Err(Error::NumericalBreakdown("fixed-point map produced a non-finite value".into()));
        }
        if residual <= config.tolerance {
            return Ok(FixedPointTrace { delta, residuals });
        }
        delta = &delta * (1.0 - config.damping) + f * config.damping;
    }
    Err(Error::FixedPointNonConvergence {
        iterations: config.max_iterations,
        residual: *residuals.last().unwrap_or(&f64::NAN),
    })
}

/// Solves `δ_t = tr(C^(t) Q̄̃(δ))/(Td)` by damped iteration from `δ = 0`.
pub fn solve_delta(spectrum: &SpectrumModel, coupling: &CouplingOperator, config: &RmtConfig) -> Result<DVector<f64>> {
    solve_delta_traced(spectrum, coupling, config).map(|t| t.delta)
}

pub fn solve_delta_traced(
    spectrum: &SpectrumModel,
    coupling: &CouplingOperator,
    config: &RmtConfig,
) -> Result<FixedPointTrace> {
    let c = c_blocks(spectrum, coupling)?;
    let ratios: Vec<f64> = (0..spectrum.num_tasks()).map(|t| spectrum.ratio(t)).collect();
    solve_fixed_point(&c, &ratios, config)
}

/// Fixed point, `Q̄̃`, the `C^(t)` blocks and the `Ψ` system for one spectrum and coupling.
#[derive(Debug, Clone)]
pub struct RmtContext {
    spectrum: SpectrumModel,
    hyperparams: Hyperparams,
    coupling: CouplingOperator,
    config: RmtConfig,
    delta: DVector<f64>,
    qbar: BlockMatrix,
    c_blocks: Vec<BlockMatrix>,
    qcq: Vec<BlockMatrix>,
    trace_cq: Vec<f64>,
    psi_matrix: DMatrix<f64>,
    psi_solver: DMatrix<f64>,
    q2_identity: BlockMatrix,
}

impl RmtContext {
    pub fn new(spectrum: SpectrumModel, hyperparams: &Hyperparams, config: RmtConfig) -> Result<Self> {
        hyperparams.check_tasks(spectrum.num_tasks())?;
        let coupling = CouplingOperator::new(hyperparams)?;
        let c = c_blocks(&spectrum, &coupling)?;
        let tasks = spectrum.num_tasks();
        let ratios: Vec<f64> = (0..tasks).map(|t| spectrum.ratio(t)).collect();
        let delta = solve_fixed_point(&c, &ratios, &config)?.delta;
        let qbar = resolvent_at(&c, &ratios, &delta)?.symmetrize();
        let td = qbar.dim() as f64;
        let trace_cq = c.iter().map(|ct| ct.trace_product(&qbar)).collect();
        let qcq: Vec<BlockMatrix> = c.iter().map(|ct| qbar.mul(ct).mul(&qbar).symmetrize()).collect();

        let mut psi = DMatrix::zeros(tasks, tasks);
        for t in 0..tasks {
            for v in 0..tasks {
                psi[(t, v)] = ratios[t] * c[t].trace_product(&qcq[v]) / ((1.0 + delta[t]) * (1.0 + delta[v]));
            }
        }
        let psi_solver = phase_checked_inverse(&psi, &ratios, td)?;

        let mut ctx = RmtContext {
            spectrum,
            hyperparams: hyperparams.clone(),
            coupling,
            config,
            delta,
            qbar,
            c_blocks: c,
            qcq,
            trace_cq,
            psi_matrix: psi,
            psi_solver,
            q2_identity: BlockMatrix::zeros(tasks, 1),
        };
        let id = BlockMatrix::identity(tasks, ctx.spectrum.d());
        ctx.q2_identity = ctx.second_order(&id)?;
        Ok(ctx)
    }

    pub fn spectrum(&self) -> &SpectrumModel {
        &self.spectrum
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn coupling(&self) -> &CouplingOperator {
        &self.coupling
    }

    pub fn config(&self) -> &RmtConfig {
        &self.config
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    /// `Q̄̃`.
    pub fn qbar(&self) -> &BlockMatrix {
        &self.qbar
    }

    pub fn c_blocks(&self) -> &[BlockMatrix] {
        &self.c_blocks
    }

    /// `Ψ_{tt'} = (n_t/Td) tr(C^(t)Q̄̃C^(t')Q̄̃)/((1+δ_t)(1+δ_t'))`.
    pub fn psi_matrix(&self) -> &DMatrix<f64> {
        &self.psi_matrix
    }

    /// `tr(C^(t) Q̄̃)` per task.
    pub fn trace_cq(&self) -> &[f64] {
        &self.trace_cq
    }

    /// `Q̄̃₂(I)`.
    pub fn q2_identity(&self) -> &BlockMatrix {
        &self.q2_identity
    }

    pub fn num_tasks(&self) -> usize {
        self.spectrum.num_tasks()
    }

    pub fn d(&self) -> usize {
        self.spectrum.d()
    }

    pub fn td(&self) -> f64 {
        (self.num_tasks() * self.d()) as f64
    }

    pub fn is_kron(&self) -> bool {
        self.qbar.is_kron()
    }

    pub fn a(&self) -> BlockMatrix {
        self.coupling.a(self.d())
    }

    pub fn a_sqrt(&self) -> BlockMatrix {
        self.coupling.a_sqrt(self.d())
    }

    pub fn a_inv_sqrt(&self) -> BlockMatrix {
        self.coupling.a_inv_sqrt(self.d())
    }

    /// `M_Σ = Σ_t C^(t)`, the population second moment seen through `A^{1/2}`.
    pub fn m_sigma(&self) -> BlockMatrix {
        let mut acc = BlockMatrix::zeros(self.num_tasks(), self.d());
        for ct in &self.c_blocks {
            acc = acc.add(ct);
        }
        acc
    }

    /// `Q̄̃₂(M)`, the deterministic equivalent of `Q̃MQ̃`.
    pub fn second_order(&self, m: &BlockMatrix) -> Result<BlockMatrix> {
        let tasks = self.num_tasks();
        let td = self.td();
        let qmq = self.qbar.mul(m).mul(&self.qbar);
        let t_cqmq: Vec<f64> = self.c_blocks.iter().map(|ct| ct.trace_product(&qmq)).collect();
        let weights: Vec<f64> = match self.config.second_order {
            SecondOrderVariant::Direct => {
                let psi_m = DVector::from_fn(tasks, |t, _| self.spectrum.ratio(t) * t_cqmq[t] / (1.0 + self.delta[t]));
                let dvec = &self.psi_solver * psi_m;
                (0..tasks).map(|t| dvec[t] / (td * (1.0 + self.delta[t]))).collect()
            }
            SecondOrderVariant::PairWeighted => {
                let p = appendix_p(&self.psi_matrix, &self.spectrum, td)?;
                (0..tasks)
                    .map(|v| {
                        (0..tasks)
                            .map(|t| t_cqmq[t] * p[(t, v)] / ((1.0 + self.delta[t]) * (1.0 + self.delta[v])))
                            .sum::<f64>()
                            / (td * td)
                    })
                    .collect()
            }
        };
        let mut out = qmq;
        for (t, w) in weights.iter().enumerate() {
            out = out.axpby(1.0, &self.qcq[t], *w);
        }
        Ok(out)
    }

    /// Weights `v_t` of `Q̄₂` and the trace `tr Q̄₂ = n − Σ_t n_t v_t`.
    pub fn sample_second_order(&self) -> SampleSecondOrder {
        let td = self.td();
        let mut warnings = Vec::new();
        let v = DVector::from_fn(self.num_tasks(), |t, _| {
            let dt = self.delta[t];
            let tail = self.c_blocks[t].trace_product(&self.q2_identity) / (td * (1.0 + dt).powi(2));
            match self.config.sample_resolvent {
                SampleResolventVariant::Corrected => dt / (1.0 + dt) + tail,
                SampleResolventVariant::Uncorrected => self.trace_cq[t] / (td * (1.0 + dt).powi(2)) + tail,
            }
        });
        for (t, vt) in v.iter().enumerate() {
            if !(-1e-12..=1.0 + 1e-12).contains(vt) {
                warnings.push(format!("task {t}: sample-space weight v = {vt} outside [0, 1]"));
            }
        }
        let sizes = self.spectrum.task_sizes();
        let trace = self.spectrum.n() as f64 - sizes.iter().zip(v.iter()).map(|(&n, vt)| n as f64 * vt).sum::<f64>();
        SampleSecondOrder { v, trace, warnings }
    }
}

// (I − Ψ/Td)^{-1}, refusing singular or non-positive systems.
fn phase_checked_inverse(psi: &DMatrix<f64>, ratios: &[f64], td: f64) -> Result<DMatrix<f64>> {
    let tasks = psi.nrows();
    // Ψ = D_r S with S symmetric, so D_r^{-1/2} Ψ D_r^{1/2} is symmetric with the same spectrum.
    let sym = DMatrix::from_fn(tasks, tasks, |t, v| psi[(t, v)] * (ratios[v] / ratios[t]).sqrt());
    let eig = SymmetricEigen::new((&sym + sym.transpose()) * 0.5);
    let min = eig.eigenvalues.iter().map(|l| 1.0 - l / td).fold(f64::INFINITY, f64::min);
    if !(min > 1e-12) {
        return Err(Error::PhaseBoundary(format!("I - Psi/(Td) has smallest eigenvalue {min:e}")));
    }
    let system = DMatrix::identity(tasks, tasks) - psi / td;
    system.try_inverse().ok_or_else(|| Error::PhaseBoundary("I - Psi/(Td) is singular".into()))
}

// P = (I − (n_t n_v/(Td)²) tr(C_t Q̄̃ C_v Q̄̃)/((1+δ_t)(1+δ_v)))^{-1}
fn appendix_p(psi: &DMatrix<f64>, spectrum: &SpectrumModel, td: f64) -> Result<DMatrix<f64>> {
    let tasks = psi.nrows();
    let sizes = spectrum.task_sizes();
    let system = DMatrix::from_fn(tasks, tasks, |t, v| {
        let id = if t == v { 1.0 } else { 0.0 };
        // psi already carries n_t/Td
        id - psi[(t, v)] * sizes[v] as f64 / td
    });
    system.try_inverse().ok_or_else(|| Error::PhaseBoundary("P system is singular".into()))
}

/// `Q̄₂ = I_n − Diag(v_t I_{n_t})` through its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSecondOrder {
    pub v: DVector<f64>,
    /// `tr Q̄₂`.
    pub trace: f64,
    pub warnings: Vec<String>,
}

pub fn det_eq_resolvent(ctx: &RmtContext) -> &BlockMatrix {
    ctx.qbar()
}

pub fn det_eq_second_order(ctx: &RmtContext, m: &BlockMatrix) -> Result<BlockMatrix> {
    ctx.second_order(m)
}

pub fn det_eq_q2(ctx: &RmtContext) -> SampleSecondOrder {
    ctx.sample_second_order()
}

/// What the risk formulas know about the true weights.
#[derive(Debug, Clone, Copy)]
pub enum Signal<'a> {
    /// Stacked `Td × q` weights.
    Weights(&'a DMatrix<f64>),
    /// Task Gram `S_{tv} = tr(W_tᵀW_v)`; enough when the context is Kronecker-structured.
    Gram(&'a DMatrix<f64>),
    Zero,
}

impl Signal<'_> {
    /// `tr(Wᵀ A^{-1/2} H A^{-1/2} W)`.
    fn quadratic(&self, ctx: &RmtContext, h: &BlockMatrix) -> Result<f64> {
        let ais = ctx.a_inv_sqrt();
        let x = ais.mul(h).mul(&ais);
        match self {
            Signal::Weights(w) => {
                if w.nrows() != x.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "weights have {} rows, expected {}",
                        w.nrows(),
                        x.dim()
                    )));
                }
                Ok(x.quadratic_trace(w))
            }
            Signal::Gram(g) => {
                if g.shape() != (ctx.num_tasks(), ctx.num_tasks()) {
                    return Err(Error::DimensionMismatch("task Gram must be T x T".into()));
                }
                x.quadratic_trace_from_gram(g)
            }
            Signal::Zero => Ok(0.0),
        }
    }
}

/// Asymptotic train and test risk with the test risk split into signal, noise and irreducible parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub train_risk: f64,
    pub test_risk: f64,
    pub signal_term: f64,
    pub noise_term: f64,
    pub irreducible_noise: f64,
    pub train_signal_term: f64,
    pub train_noise_term: f64,
    pub lambda: f64,
    pub gammas: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Full report; `test_risk = signal_term + noise_term + irreducible_noise`.
pub fn theoretical_test_risk(ctx: &RmtContext, noise: &NoiseModel, signal: Signal<'_>) -> Result<RiskReport> {
    let tasks = ctx.num_tasks() as f64;
    let td = ctx.td();
    let n = ctx.spectrum().n() as f64;
    let tr_noise = noise.trace();

    let m_sigma = ctx.m_sigma();
    let q2_m = ctx.second_order(&m_sigma)?;
    let signal_term = signal.quadratic(ctx, &q2_m)? / (tasks * td);
    let noise_term = tr_noise * (m_sigma.trace_product(ctx.qbar()) - q2_m.trace()) / (tasks * td);

    let sample = ctx.sample_second_order();
    let train_signal_term =
        (signal.quadratic(ctx, ctx.qbar())? - signal.quadratic(ctx, ctx.q2_identity())?) / (tasks * n);
    let train_noise_term = tr_noise * sample.trace / (tasks * n);

    Ok(RiskReport {
        train_risk: train_signal_term + train_noise_term,
        test_risk: signal_term + noise_term + tr_noise,
        signal_term,
        noise_term,
        irreducible_noise: tr_noise,
        train_signal_term,
        train_noise_term,
        lambda: ctx.hyperparams().lambda(),
        gammas: ctx.hyperparams().gammas().to_vec(),
        warnings: sample.warnings,
    })
}

pub fn theoretical_train_risk(ctx: &RmtContext, noise: &NoiseModel, signal: Signal<'_>) -> Result<f64> {
    theoretical_test_risk(ctx, noise, signal).map(|r| r.train_risk)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso_ctx(d: usize, sizes: Vec<usize>, lambda: f64, gammas: Vec<f64>) -> RmtContext {
        let spec = SpectrumModel::identity(d, sizes).unwrap();
        RmtContext::new(spec, &Hyperparams::new(lambda, gammas).unwrap(), RmtConfig::default()).unwrap()
    }

    // δ² + (1 + c·a − a)δ − a = 0 for T = 1, Σ = I, a = λ + γ, c = n/d
    fn scalar_delta(c: f64, a: f64) -> f64 {
        let b = 1.0 + c * a - a;
        (-b + (b * b + 4.0 * a).sqrt()) / 2.0
    }

    #[test]
    fn golden_ratio_fixed_point() {
        let ctx = iso_ctx(50, vec![50], 0.0, vec![1.0]);
        assert!((ctx.delta()[0] - 0.6180339887498949).abs() < 1e-10);
        let ctx = iso_ctx(50, vec![100], 0.0, vec![1.0]);
        assert!((ctx.delta()[0] - 0.41421356237309515).abs() < 1e-10);
    }

    #[test]
    fn scalar_reduction_general_a() {
        for &(c, lam, gam) in &[(0.5, 0.3, 2.0), (2.0, 1.0, 1.0), (1.0, 4.0, 0.1)] {
            let d = 40;
            let ctx = iso_ctx(d, vec![(c * d as f64) as usize], lam, vec![gam]);
            let delta = scalar_delta(c, lam + gam);
            assert!((ctx.delta()[0] - delta).abs() < 1e-10);
            let q = 1.0 / (1.0 + c * (lam + gam) / (1.0 + delta));
            assert!((ctx.qbar().kron_coeffs().unwrap()[(0, 0)] - q).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_covariance_is_trivial() {
        let spec = SpectrumModel::new(3, vec![4, 4], vec![Covariance::Isotropic(0.0); 2]).unwrap();
        let hp = Hyperparams::new(1.0, vec![1.0, 1.0]).unwrap();
        let ctx = RmtContext::new(spec, &hp, RmtConfig::default()).unwrap();
        assert_eq!(ctx.delta().amax(), 0.0);
        assert!(ctx.qbar().max_abs_diff(&BlockMatrix::identity(2, 3)) < 1e-15);
        let s = ctx.sample_second_order();
        assert_eq!(s.v.amax(), 0.0);
        assert!((s.trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_decouples() {
        let ctx = iso_ctx(10, vec![8, 12], 0.0, vec![1.0, 2.0]);
        let q = ctx.qbar().kron_coeffs().unwrap();
        assert_eq!(q[(0, 1)], 0.0);
        assert_eq!(ctx.psi_matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn dense_path_matches_kron_path() {
        let sizes = vec![30, 45];
        let hp = Hyperparams::new(0.8, vec![1.0, 0.5]).unwrap();
        let iso =
            SpectrumModel::new(6, sizes.clone(), vec![Covariance::Isotropic(1.3), Covariance::Isotropic(0.7)]).unwrap();
        let dense = SpectrumModel::new(
            6,
            sizes,
            vec![Covariance::Dense(DMatrix::identity(6, 6) * 1.3), Covariance::Dense(DMatrix::identity(6, 6) * 0.7)],
        )
        .unwrap();
        let a = RmtContext::new(iso, &hp, RmtConfig::default()).unwrap();
        let b = RmtContext::new(dense, &hp, RmtConfig::default()).unwrap();
        assert!(a.is_kron() && !b.is_kron());
        assert!((a.delta() - b.delta()).amax() < 1e-10);
        assert!(a.qbar().max_abs_diff(b.qbar()) < 1e-10);
        assert!(a.q2_identity().max_abs_diff(b.q2_identity()) < 1e-10);
    }

    #[test]
    fn sample_trace_dual_route() {
        // tr Q̄₂ = n − Td + tr Q̄̃₂(I) and tr Q̄̃ = Td − n + Σ n_t/(1+δ_t)
        let ctx = iso_ctx(20, vec![15, 35], 0.6, vec![1.0, 2.5]);
        let s = ctx.sample_second_order();
        let (n, td) = (50.0, ctx.td());
        assert!((s.trace - (n - td + ctx.q2_identity().trace())).abs() < 1e-9);
        let resolvent_trace = td - n + 15.0 / (1.0 + ctx.delta()[0]) + 35.0 / (1.0 + ctx.delta()[1]);
        assert!((ctx.qbar().trace() - resolvent_trace).abs() < 1e-9);
    }

    #[test]
    fn second_order_scalar_reduction() {
        // T = 1, Σ = I: Q̄̃₂(I) = q̄²/(1 − c a² q̄²/(1+δ)²) · I
        let (d, n, a) = (30, 45, 1.7);
        let ctx = iso_ctx(d, vec![n], 0.0, vec![a]);
        let c = n as f64 / d as f64;
        let delta = ctx.delta()[0];
        let q = 1.0 / (1.0 + c * a / (1.0 + delta));
        let expect = q * q / (1.0 - c * a * a * q * q / (1.0 + delta).powi(2));
        assert!((ctx.q2_identity().kron_coeffs().unwrap()[(0, 0)] - expect).abs() < 1e-10);
        let v = ctx.sample_second_order().v[0];
        let v_expect = delta / (1.0 + delta) + a * expect / (1.0 + delta).powi(2);
        assert!((v - v_expect).abs() < 1e-10);
    }

    #[test]
    fn second_order_is_linear() {
        let ctx = iso_ctx(8, vec![10, 6], 0.4, vec![1.0, 1.0]);
        let m1 =
            BlockMatrix::dense(DMatrix::from_fn(16, 16, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0), 2, 8).symmetrize();
        let m2 = BlockMatrix::selector(2, 8, 0, 1).symmetrize();
        let lhs = ctx.second_order(&m1.axpby(0.3, &m2, -1.7)).unwrap();
        let rhs = ctx.second_order(&m1).unwrap().axpby(0.3, &ctx.second_order(&m2).unwrap(), -1.7);
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        assert!(ctx.second_order(&BlockMatrix::zeros(2, 8)).unwrap().frobenius_norm() == 0.0);
    }

    #[test]
    fn risk_decomposition_and_zero_signal() {
        let ctx = iso_ctx(20, vec![30, 30], 1.0, vec![1.0, 1.0]);
        let noise = NoiseModel::isotropic(2, 0.25).unwrap();
        let r = theoretical_test_risk(&ctx, &noise, Signal::Zero).unwrap();
        assert_eq!(r.signal_term, 0.0);
        assert!((r.test_risk - (r.signal_term + r.noise_term + r.irreducible_noise)).abs() < 1e-10);
        assert!((r.irreducible_noise - 0.5).abs() < 1e-15);
        assert!(r.train_risk > 0.0 && r.train_risk < noise.trace());
    }

    #[test]
    fn gram_signal_matches_weights() {
        let ctx = iso_ctx(5, vec![7, 9], 0.5, vec![1.0, 2.0]);
        let w = DMatrix::from_fn(10, 2, |i, j| ((i + 3 * j) % 4) as f64 - 1.5);
        let gram = crate::linalg::task_gram(&w, 2, 5);
        let noise = NoiseModel::isotropic(2, 0.1).unwrap();
        let a = theoretical_test_risk(&ctx, &noise, Signal::Weights(&w)).unwrap();
        let b = theoretical_test_risk(&ctx, &noise, Signal::Gram(&gram)).unwrap();
        assert!((a.test_risk - b.test_risk).abs() < 1e-12);
        assert!((a.train_risk - b.train_risk).abs() < 1e-12);
    }
}
