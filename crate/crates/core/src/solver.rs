//! Exact dual solver for the coupled multi-task ridge objective.
//!
//! The `n × n` system `ZᵀAZ/(Td) + I` is assembled from per-task Gram blocks
//! `G_{tv} X^(t)ᵀX^(v)` and factored by Cholesky. `Z` itself is never formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt_pair, BlockMatrix};
use crate::model::{offsets, Hyperparams, MtlSolution, MultiTaskProblem};

/// Largest `n` for which the explicit inverse of the dual system is formed.
pub const DEFAULT_EXPLICIT_CAP: usize = 4096;

/// `G = D_γ + λ11ᵀ` together with its symmetric square root and inverse root.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOperator {
    g: DMatrix<f64>,
    g_sqrt: DMatrix<f64>,
    g_inv_sqrt: DMatrix<f64>,
    lambda: f64,
}

impl CouplingOperator {
    pub fn new(hp: &Hyperparams) -> Result<Self> {
        let t = hp.gammas().len();
        let mut g = DMatrix::from_element(t, t, hp.lambda());
        for (i, gamma) in hp.gammas().iter().enumerate() {
            g[(i, i)] += gamma;
        }
        let (g_sqrt, g_inv_sqrt) = sym_sqrt_pair(&g)?;
        Ok(CouplingOperator { g, g_sqrt, g_inv_sqrt, lambda: hp.lambda() })
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g_sqrt(&self) -> &DMatrix<f64> {
        &self.g_sqrt
    }

    pub fn g_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.g_inv_sqrt
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_tasks(&self) -> usize {
        self.g.nrows()
    }

    /// `A = G ⊗ I_d`.
    pub fn a(&self, d: usize) -> BlockMatrix {
        BlockMatrix::kron(self.g.clone(), d)
    }

    pub fn a_sqrt(&self, d: usize) -> BlockMatrix {
        BlockMatrix::kron(self.g_sqrt.clone(), d)
    }

    pub fn a_inv_sqrt(&self, d: usize) -> BlockMatrix {
        BlockMatrix::kron(self.g_inv_sqrt.clone(), d)
    }
}

/// Factored dual system `ZᵀAZ/(Td) + I_n`; applying it inverts to `Q`.
#[derive(Debug, Clone)]
pub struct DualResolvent {
    system: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl DualResolvent {
    /// The unfactored system matrix `ZᵀAZ/(Td) + I_n`.
    pub fn system(&self) -> &DMatrix<f64> {
        &self.system
    }

    pub fn n(&self) -> usize {
        self.system.nrows()
    }

    /// `Q · rhs`.
    pub fn apply(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(rhs)
    }

    /// Dense `Q`, refused above `cap` samples.
    pub fn explicit(&self, cap: usize) -> Result<DMatrix<f64>> {
        if self.n() > cap {
            return Err(Error::InvalidInput(format!(
                "explicit resolvent requested for n = {} above the cap {cap}",
                self.n()
            )));
        }
        Ok(self.factor.inverse())
    }
}

/// Per-problem cache of the raw Gram blocks `X^(t)ᵀX^(v)`, reused across hyperparameters.
#[derive(Debug, Clone)]
pub struct Fitter<'a> {
    problem: &'a MultiTaskProblem,
    gram: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl<'a> Fitter<'a> {
    pub fn new(problem: &'a MultiTaskProblem) -> Result<Self> {
        problem.check()?;
        let n = problem.n();
        let offsets = problem.offsets();
        let mut gram = DMatrix::zeros(n, n);
        for (t, xt) in problem.tasks().iter().enumerate() {
            for (v, xv) in problem.tasks().iter().enumerate().skip(t) {
                let block = xt.features().transpose() * xv.features();
                gram.view_mut((offsets[t], offsets[v]), (xt.n(), xv.n())).copy_from(&block);
                if v != t {
                    gram.view_mut((offsets[v], offsets[t]), (xv.n(), xt.n())).copy_from(&block.transpose());
                }
            }
        }
        Ok(Fitter { problem, gram, offsets })
    }

    pub fn problem(&self) -> &MultiTaskProblem {
        self.problem
    }

    fn td(&self) -> f64 {
        (self.problem.num_tasks() * self.problem.d()) as f64
    }

    /// `ZᵀAZ/(Td)`: block `(t, v)` is `G_{tv} X^(t)ᵀX^(v) / (Td)`.
    pub fn kernel(&self, coupling: &CouplingOperator) -> DMatrix<f64> {
        let sizes = self.problem.task_sizes();
        let g = coupling.g();
        let td = self.td();
        let mut k = self.gram.clone();
        for t in 0..sizes.len() {
            for v in 0..sizes.len() {
                let scale = g[(t, v)] / td;
                k.view_mut((self.offsets[t], self.offsets[v]), (sizes[t], sizes[v])).scale_mut(scale);
            }
        }
        k
    }

    pub fn resolvent(&self, hp: &Hyperparams) -> Result<DualResolvent> {
        hp.check_tasks(self.problem.num_tasks())?;
        let coupling = CouplingOperator::new(hp)?;
        let mut system = self.kernel(&coupling);
        for i in 0..system.nrows() {
            system[(i, i)] += 1.0;
        }
        let factor = system
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalBreakdown("dual system is not positive definite".into()))?;
        Ok(DualResolvent { system, factor })
    }

    pub fn fit(&self, hp: &Hyperparams) -> Result<MtlSolution> {
        let resolvent = self.resolvent(hp)?;
        let alpha = resolvent.apply(&self.problem.stacked_responses());
        if alpha.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite dual variables".into()));
        }
        let u = scaled_task_images(self.problem, &alpha);
        let mut w0 = DMatrix::zeros(self.problem.d(), self.problem.q());
        for ut in &u {
            w0 += ut * hp.lambda();
        }
        let v = u.iter().zip(hp.gammas()).map(|(ut, g)| ut * *g).collect();
        MtlSolution::from_components(w0, v, alpha, self.problem.task_sizes(), hp.clone())
    }
}

// X^(t) α_t / √(Td) for every task.
fn scaled_task_images(problem: &MultiTaskProblem, alpha: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let td = (problem.num_tasks() * problem.d()) as f64;
    let offs = problem.offsets();
    problem
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| task.features() * alpha.rows(offs[t], task.n()) / td.sqrt())
        .collect()
}

/// Minimizes the coupled objective in closed form.
pub fn solve(problem: &MultiTaskProblem, hp: &Hyperparams) -> Result<MtlSolution> {
    Fitter::new(problem)?.fit(hp)
}

/// `Ŵ_t = Σ_v G_{tv} X^(v)α_v/√(Td)`, the block row of `AZα/√(Td)`.
pub fn weights_via_coupling(
    problem: &MultiTaskProblem,
    alpha: &DMatrix<f64>,
    hp: &Hyperparams,
) -> Result<Vec<DMatrix<f64>>> {
    let coupling = CouplingOperator::new(hp)?;
    let u = scaled_task_images(problem, alpha);
    let g = coupling.g();
    Ok((0..problem.num_tasks())
        .map(|t| {
            let mut acc = DMatrix::zeros(problem.d(), problem.q());
            for (v, uv) in u.iter().enumerate() {
                acc += uv * g[(t, v)];
            }
            acc
        })
        .collect())
}

/// `J(W_0, V)`.
pub fn objective(problem: &MultiTaskProblem, hp: &Hyperparams, w0: &DMatrix<f64>, v: &[DMatrix<f64>]) -> Result<f64> {
    problem.check()?;
    hp.check_tasks(problem.num_tasks())?;
    let (d, q) = (problem.d(), problem.q());
    if w0.shape() != (d, q) || v.len() != problem.num_tasks() || v.iter().any(|vt| vt.shape() != (d, q)) {
        return Err(Error::DimensionMismatch(format!(
            "weights must be {d}x{q} for each of {} tasks",
            problem.num_tasks()
        )));
    }
    let common = if hp.lambda() == 0.0 {
        if w0.iter().any(|&x| x != 0.0) {
            return Err(Error::InfinitePenalty);
        }
        0.0
    } else {
        w0.norm_squared() / (2.0 * hp.lambda())
    };
    let td_sqrt = ((problem.num_tasks() * d) as f64).sqrt();
    let mut j = common;
    for (t, task) in problem.tasks().iter().enumerate() {
        j += v[t].norm_squared() / (2.0 * hp.gammas()[t]);
        let wt = w0 + &v[t];
        let resid = task.responses() - task.features().transpose() * wt / td_sqrt;
        j += 0.5 * resid.norm_squared();
    }
    Ok(j)
}

fn check_task_index(solution: &MtlSolution, t: usize) -> Result<()> {
    if t >= solution.num_tasks() {
        return Err(Error::InvalidInput(format!("task index {t} out of range for {} tasks", solution.num_tasks())));
    }
    Ok(())
}

/// `Ŵ_tᵀx/√(Td)`.
pub fn predict(solution: &MtlSolution, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_task_index(solution, t)?;
    if x.len() != solution.d() {
        return Err(Error::DimensionMismatch(format!("input has length {}, expected {}", x.len(), solution.d())));
    }
    let td = (solution.num_tasks() * solution.d()) as f64;
    Ok(solution.w()[t].tr_mul(x) / td.sqrt())
}

/// Predictions for the columns of `features` (`d × m`), returned as `m × q`.
pub fn predict_batch(solution: &MtlSolution, t: usize, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_task_index(solution, t)?;
    if features.nrows() != solution.d() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have dimension {}, expected {}",
            features.nrows(),
            solution.d()
        )));
    }
    let td = (solution.num_tasks() * solution.d()) as f64;
    Ok(features.tr_mul(&solution.w()[t]) / td.sqrt())
}

fn check_shapes(solution: &MtlSolution, problem: &MultiTaskProblem) -> Result<()> {
    problem.check()?;
    if problem.num_tasks() != solution.num_tasks() || problem.d() != solution.d() || problem.q() != solution.q() {
        return Err(Error::DimensionMismatch(format!(
            "problem has (T, d, q) = ({}, {}, {}), solution has ({}, {}, {})",
            problem.num_tasks(),
            problem.d(),
            problem.q(),
            solution.num_tasks(),
            solution.d(),
            solution.q()
        )));
    }
    Ok(())
}

/// `‖Y − g(X)‖²_F / (Tn)`.
pub fn empirical_train_risk(problem: &MultiTaskProblem, solution: &MtlSolution) -> Result<f64> {
    check_shapes(solution, problem)?;
    let mut sse = 0.0;
    for (t, task) in problem.tasks().iter().enumerate() {
        sse += (task.responses() - predict_batch(solution, t, task.features())?).norm_squared();
    }
    Ok(sse / (problem.num_tasks() * problem.n()) as f64)
}

/// `(1/T) Σ_t (1/m_t) Σ_i ‖y_i − g(x_i)‖²` on held-out data.
pub fn empirical_test_risk(solution: &MtlSolution, test_problem: &MultiTaskProblem) -> Result<f64> {
    check_shapes(solution, test_problem)?;
    let mut acc = 0.0;
    for (t, task) in test_problem.tasks().iter().enumerate() {
        let resid = task.responses() - predict_batch(solution, t, task.features())?;
        acc += resid.norm_squared() / task.n() as f64;
    }
    Ok(acc / test_problem.num_tasks() as f64)
}

/// Per-task `(1/m_t) ‖Y_t − g(X_t)‖²`.
pub fn per_task_mse(solution: &MtlSolution, problem: &MultiTaskProblem) -> Result<Vec<f64>> {
    check_shapes(solution, problem)?;
    problem
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let resid = task.responses() - predict_batch(solution, t, task.features())?;
            Ok(resid.norm_squared() / task.n() as f64)
        })
        .collect()
}

/// Row offsets of the dual variables of each task.
pub fn dual_offsets(solution: &MtlSolution) -> Vec<usize> {
    offsets(solution.task_sizes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskData;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, d: usize, q: usize, sizes: &[usize]) -> MultiTaskProblem {
        let tasks = sizes
            .iter()
            .map(|&n| {
                TaskData::new(
                    DMatrix::from_fn(d, n, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                    DMatrix::from_fn(n, q, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                )
            })
            .collect();
        MultiTaskProblem::new(tasks)
    }

    fn primal_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, a: f64) -> DMatrix<f64> {
        let d = x.nrows();
        let lhs = x * x.transpose() / d as f64 + DMatrix::identity(d, d) / a;
        lhs.cholesky().unwrap().solve(&(x * y)) / (d as f64).sqrt()
    }

    #[test]
    fn single_task_is_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 7, 2, &[11]);
        let hp = Hyperparams::new(0.3, vec![0.9]).unwrap();
        let s = solve(&p, &hp).unwrap();
        let r = primal_ridge(p.task(0).features(), p.task(0).responses(), 1.2);
        assert!((&s.w()[0] - &r).norm() <= 1e-10 * r.norm());
    }

    #[test]
    fn zero_response_gives_zero_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_problem(&mut rng, 4, 1, &[5, 6]);
        p = MultiTaskProblem::new(
            p.tasks().iter().map(|t| TaskData::new(t.features().clone(), DMatrix::zeros(t.n(), 1))).collect(),
        );
        let s = solve(&p, &Hyperparams::uniform(1.0, 1.0, 2).unwrap()).unwrap();
        assert_eq!(s.alpha().amax(), 0.0);
        assert_eq!(s.w0().amax(), 0.0);
        assert!(s.v().iter().all(|v| v.amax() == 0.0));
    }

    #[test]
    fn decoupled_limit_matches_per_task_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_problem(&mut rng, 6, 1, &[10, 10]);
        let hp = Hyperparams::new(1e-8, vec![1e8, 1e8]).unwrap();
        let s = solve(&p, &hp).unwrap();
        // per-task ridge in the same 1/√(Td) scaling: X Xᵀ/(Td) + I/γ
        for t in 0..2 {
            let x = p.task(t).features();
            let td = 12.0;
            let lhs = x * x.transpose() / td + DMatrix::identity(6, 6) / 1e8;
            let w = lhs.cholesky().unwrap().solve(&(x * p.task(t).responses())) / td.sqrt();
            assert!((&s.w()[t] - &w).norm() <= 1e-5 * w.norm());
        }
    }

    #[test]
    fn coupling_route_agrees_with_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 5, 2, &[4, 7, 3]);
        let hp = Hyperparams::new(0.7, vec![0.5, 1.5, 2.0]).unwrap();
        let s = solve(&p, &hp).unwrap();
        let w = weights_via_coupling(&p, s.alpha(), &hp).unwrap();
        for ((wc, wt), vt) in w.iter().zip(s.w()).zip(s.v()) {
            assert!((wc - wt).amax() <= 1e-12 * (1.0 + wt.amax()));
            assert!((wt - s.w0() - vt).amax() <= 1e-12);
        }
        // common part from the dual: λ Σ_t X_t α_t / √(Td)
        let mut w0 = DMatrix::zeros(5, 2);
        for t in 0..3 {
            w0 += p.task(t).features() * s.alpha_block(t) * 0.7 / 15f64.sqrt();
        }
        assert!((w0 - s.w0()).amax() <= 1e-12);
    }

    #[test]
    fn dual_residual_and_resolvent_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 4, 2, &[5, 3]);
        let hp = Hyperparams::new(0.2, vec![1.0, 3.0]).unwrap();
        let f = Fitter::new(&p).unwrap();
        let r = f.resolvent(&hp).unwrap();
        let s = f.fit(&hp).unwrap();
        let y = p.stacked_responses();
        assert!((r.system() * s.alpha() - &y).norm() <= 1e-10 * y.norm());
        let q = r.explicit(DEFAULT_EXPLICIT_CAP).unwrap();
        let eig = SymmetricEigen::new((&q + q.transpose()) * 0.5);
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0 && l <= 1.0 + 1e-12));
        assert!(r.explicit(2).is_err());
    }

    #[test]
    fn kernel_blocks_follow_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_problem(&mut rng, 3, 1, &[2, 4]);
        let hp = Hyperparams::new(0.4, vec![1.0, 2.0]).unwrap();
        let f = Fitter::new(&p).unwrap();
        let k = f.kernel(&CouplingOperator::new(&hp).unwrap());
        let block = k.view((0, 2), (2, 4)).into_owned();
        let expect = p.task(0).features().transpose() * p.task(1).features() * 0.4 / 6.0;
        assert!((block - expect).amax() <= 1e-14);
    }

    #[test]
    fn objective_handles_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_problem(&mut rng, 3, 1, &[4]);
        let hp = Hyperparams::new(0.0, vec![1.0]).unwrap();
        let v = vec![DMatrix::zeros(3, 1)];
        let j = objective(&p, &hp, &DMatrix::zeros(3, 1), &v).unwrap();
        assert!((j - 0.5 * p.task(0).responses().norm_squared()).abs() < 1e-14);
        let err = objective(&p, &hp, &DMatrix::from_element(3, 1, 1.0), &v).unwrap_err();
        assert_eq!(err, Error::InfinitePenalty);
        let s = solve(&p, &hp).unwrap();
        assert_eq!(s.w0().amax(), 0.0);
    }

    #[test]
    fn predict_unit_case() {
        let hp = Hyperparams::uniform(1.0, 1.0, 2).unwrap();
        let mut w0 = DMatrix::zeros(3, 2);
        w0[(0, 0)] = 1.0;
        let s = MtlSolution::from_weights(w0, vec![DMatrix::zeros(3, 2); 2], hp).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let g = predict(&s, 1, &x).unwrap();
        assert!((g[0] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
        assert_eq!(predict(&s, 0, &DVector::zeros(3)).unwrap().amax(), 0.0);
        assert!(predict(&s, 2, &x).is_err());
        assert!(predict(&s, 0, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn empty_test_task_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng, 3, 1, &[4]);
        let s = solve(&p, &Hyperparams::new(1.0, vec![1.0]).unwrap()).unwrap();
        let empty = MultiTaskProblem::new(vec![TaskData::new(DMatrix::zeros(3, 0), DMatrix::zeros(0, 1))]);
        assert!(matches!(empirical_test_risk(&s, &empty), Err(Error::InvalidInput(_))));
    }
}
