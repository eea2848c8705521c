//! Synthetic multi-task data: concentrated feature vectors, α-similar task weights and Gaussian noise.
//!
//! Every draw comes from a ChaCha8 stream keyed by `(seed, purpose, trial, task)`, so outputs do
//! not depend on how trials or tasks are scheduled across threads.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::model::{Covariance, MultiTaskProblem, NoiseModel, SpectrumModel, TaskData};

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureDistribution {
    /// Zero-mean Gaussian with the given covariance.
    Gaussian(Covariance),
    /// Uniform on the sphere of radius `√d`.
    Sphere,
    /// `tanh` applied entrywise to draws from the base distribution, then re-centered per task.
    Tanh(Box<FeatureDistribution>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    /// Stacked `Td × q` weights.
    Explicit(DMatrix<f64>),
    /// Two tasks with `W₂ = αW₁ + √(1−α²)W₁^⊥` column by column.
    TwoTaskAlpha(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub distribution: FeatureDistribution,
    pub seed: u64,
    pub task_sizes: Vec<usize>,
    pub d: usize,
    pub q: usize,
    pub noise: NoiseModel,
    pub weights: WeightSpec,
}

impl GeneratorSpec {
    pub fn num_tasks(&self) -> usize {
        self.task_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.q == 0 || self.task_sizes.is_empty() || self.task_sizes.contains(&0) {
            return Err(Error::InvalidInput("d, q, the task count and every task size must be >= 1".into()));
        }
        if self.noise.q() != self.q {
            return Err(Error::DimensionMismatch(format!("noise is {0}x{0}, q = {1}", self.noise.q(), self.q)));
        }
        match &self.weights {
            WeightSpec::Explicit(w) if w.shape() != (self.num_tasks() * self.d, self.q) => {
                Err(Error::DimensionMismatch(format!(
                    "explicit weights are {:?}, expected ({}, {})",
                    w.shape(),
                    self.num_tasks() * self.d,
                    self.q
                )))
            }
            WeightSpec::TwoTaskAlpha(a) if !(0.0..=1.0).contains(a) => {
                Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {a}")))
            }
            WeightSpec::TwoTaskAlpha(_) if self.num_tasks() != 2 => {
                Err(Error::InvalidInput("the alpha construction needs exactly two tasks".into()))
            }
            _ => check_distribution(&self.distribution, self.d),
        }
    }
}

fn check_distribution(dist: &FeatureDistribution, d: usize) -> Result<()> {
    match dist {
        FeatureDistribution::Gaussian(Covariance::Isotropic(s)) if !(s.is_finite() && *s >= 0.0) => {
            Err(Error::InvalidInput(format!("covariance scale must be >= 0, got {s}")))
        }
        FeatureDistribution::Gaussian(Covariance::Dense(m)) if m.shape() != (d, d) => {
            Err(Error::DimensionMismatch(format!("covariance is {:?}, expected ({d}, {d})", m.shape())))
        }
        FeatureDistribution::Tanh(base) => check_distribution(base, d),
        _ => Ok(()),
    }
}

const PURPOSE_WEIGHTS: u64 = 1;
const PURPOSE_TRAIN: u64 = 2;
const PURPOSE_TEST: u64 = 3;

/// Stream id for one `(purpose, trial, task)` triple. Trials below 2^40 and tasks below 2^20 never collide.
fn stream_id(purpose: u64, trial: u64, task: u64) -> u64 {
    (purpose << 60) | ((trial & ((1 << 40) - 1)) << 20) | (task & ((1 << 20) - 1))
}

pub fn rng_for(seed: u64, purpose: u64, trial: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, trial, task));
    rng
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Two-task weights with per-column cosine similarity `alpha`.
pub fn generate_w(d: usize, q: usize, tasks: usize, alpha: f64, seed: u64) -> Result<DMatrix<f64>> {
    if tasks != 2 {
        return Err(Error::InvalidInput("the alpha construction needs exactly two tasks".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut rng = rng_for(seed, PURPOSE_WEIGHTS, 0, 0);
    let w1 = normal_matrix(&mut rng, d, q);
    let mut w2 = DMatrix::zeros(d, q);
    let beta = (1.0 - alpha * alpha).sqrt();
    for j in 0..q {
        let c1 = w1.column(j);
        let norm1 = c1.norm();
        let mut perp = None;
        for _ in 0..100 {
            let z = normal_matrix(&mut rng, d, 1);
            let r = z.column(0) - c1 * (c1.dot(&z.column(0)) / (norm1 * norm1));
            let rn = r.norm();
            if rn >= 1e-12 && norm1 >= 1e-12 {
                perp = Some(r * (norm1 / rn));
                break;
            }
        }
        let perp = perp.ok_or_else(|| Error::NumericalBreakdown("could not draw an orthogonal direction".into()))?;
        w2.set_column(j, &(c1 * alpha + perp * beta));
    }
    let mut w = DMatrix::zeros(2 * d, q);
    w.rows_mut(0, d).copy_from(&w1);
    w.rows_mut(d, d).copy_from(&w2);
    Ok(w)
}

/// The stacked ground-truth weights of a spec.
pub fn ground_truth_w(spec: &GeneratorSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    match &spec.weights {
        WeightSpec::Explicit(w) => Ok(w.clone()),
        WeightSpec::TwoTaskAlpha(a) => generate_w(spec.d, spec.q, 2, *a, spec.seed),
    }
}

// d × n draws, samples as columns.
fn draw_features(dist: &FeatureDistribution, d: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match dist {
        FeatureDistribution::Gaussian(Covariance::Isotropic(s)) => normal_matrix(rng, d, n) * s.sqrt(),
        FeatureDistribution::Gaussian(Covariance::Dense(m)) => psd_sqrt(m) * normal_matrix(rng, d, n),
        FeatureDistribution::Sphere => {
            let mut x = normal_matrix(rng, d, n);
            let radius = (d as f64).sqrt();
            for mut col in x.column_iter_mut() {
                let norm = col.norm();
                col *= radius / norm;
            }
            x
        }
        FeatureDistribution::Tanh(base) => {
            let mut x = draw_features(base, d, n, rng).map(f64::tanh);
            for mut row in x.row_iter_mut() {
                let mean = row.mean();
                row.add_scalar_mut(-mean);
            }
            x
        }
    }
}

fn draw_task(
    spec: &GeneratorSpec,
    w: &DMatrix<f64>,
    noise_root: &DMatrix<f64>,
    purpose: u64,
    trial: u64,
    t: usize,
    n: usize,
) -> TaskData {
    let mut rng = rng_for(spec.seed, purpose, trial, t as u64);
    let x = draw_features(&spec.distribution, spec.d, n, &mut rng);
    let eps = normal_matrix(&mut rng, n, spec.q) * noise_root;
    let td = (spec.num_tasks() * spec.d) as f64;
    let wt = w.rows(t * spec.d, spec.d);
    let y = x.tr_mul(&wt) / td.sqrt() + eps;
    TaskData::new(x, y)
}

fn draw(spec: &GeneratorSpec, w: &DMatrix<f64>, purpose: u64, trial: u64, sizes: &[usize]) -> Result<MultiTaskProblem> {
    spec.validate()?;
    if w.shape() != (spec.num_tasks() * spec.d, spec.q) {
        return Err(Error::DimensionMismatch(format!("weights are {:?}", w.shape())));
    }
    let noise_root = psd_sqrt(spec.noise.matrix());
    let tasks = sizes.iter().enumerate().map(|(t, &n)| draw_task(spec, w, &noise_root, purpose, trial, t, n)).collect();
    Ok(MultiTaskProblem::new(tasks))
}

/// Training data of one trial for fixed weights.
pub fn draw_trial(spec: &GeneratorSpec, w: &DMatrix<f64>, trial: u64) -> Result<MultiTaskProblem> {
    draw(spec, w, PURPOSE_TRAIN, trial, &spec.task_sizes)
}

/// Independent test data of one trial with `points` samples per task.
pub fn draw_test(spec: &GeneratorSpec, w: &DMatrix<f64>, trial: u64, points: usize) -> Result<MultiTaskProblem> {
    draw(spec, w, PURPOSE_TEST, trial, &vec![points; spec.num_tasks()])
}

/// A generated problem with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub problem: MultiTaskProblem,
    pub w: DMatrix<f64>,
    pub noise: NoiseModel,
}

pub fn generate_problem(spec: &GeneratorSpec) -> Result<Synthetic> {
    let w = ground_truth_w(spec)?;
    let problem = draw_trial(spec, &w, 0)?;
    Ok(Synthetic { problem, w, noise: spec.noise.clone() })
}

/// `E[tanh(σZ)²]` for standard normal `Z`, by composite Simpson quadrature.
pub fn tanh_second_moment(sigma: f64) -> f64 {
    let (lo, hi, m) = (-12.0_f64, 12.0_f64, 4000usize);
    let h = (hi - lo) / m as f64;
    let f = |z: f64| (sigma * z).tanh().powi(2) * (-0.5 * z * z).exp();
    let mut acc = f(lo) + f(hi);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Population covariance of one feature vector.
pub fn feature_covariance(dist: &FeatureDistribution, d: usize) -> Result<Covariance> {
    match dist {
        FeatureDistribution::Gaussian(c) => Ok(c.clone()),
        FeatureDistribution::Sphere => Ok(Covariance::Isotropic(1.0)),
        FeatureDistribution::Tanh(base) => match base.as_ref() {
            FeatureDistribution::Gaussian(Covariance::Isotropic(s)) => {
                Ok(Covariance::Isotropic(tanh_second_moment(s.sqrt())))
            }
            // coordinates of a sphere draw are asymptotically standard normal
            FeatureDistribution::Sphere => Ok(Covariance::Isotropic(tanh_second_moment(1.0))),
            _ => Err(Error::InvalidInput(format!("no closed-form covariance for tanh of {base:?} in dimension {d}"))),
        },
    }
}

/// The spectrum model implied by a spec, with the ground truth attached.
pub fn population_spectrum(spec: &GeneratorSpec) -> Result<SpectrumModel> {
    let cov = feature_covariance(&spec.distribution, spec.d)?;
    let w = ground_truth_w(spec)?;
    SpectrumModel::new(spec.d, spec.task_sizes.clone(), vec![cov; spec.num_tasks()])?.with_ground_truth(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn spec(dist: FeatureDistribution, sigma2: f64, alpha: f64) -> GeneratorSpec {
        GeneratorSpec {
            distribution: dist,
            seed: 42,
            task_sizes: vec![60, 80],
            d: 20,
            q: 2,
            noise: NoiseModel::isotropic(2, sigma2).unwrap(),
            weights: WeightSpec::TwoTaskAlpha(alpha),
        }
    }

    fn cosines(w: &DMatrix<f64>, d: usize) -> Vec<f64> {
        (0..w.ncols())
            .map(|j| {
                let a = w.column(j).rows(0, d).into_owned();
                let b = w.column(j).rows(d, d).into_owned();
                a.dot(&b) / (a.norm() * b.norm())
            })
            .collect()
    }

    #[test]
    fn alpha_one_copies_the_first_task() {
        let w = generate_w(30, 3, 2, 1.0, 7).unwrap();
        assert_eq!(w.rows(0, 30), w.rows(30, 30));
    }

    #[test]
    fn alpha_zero_is_orthogonal() {
        let w = generate_w(30, 3, 2, 0.0, 7).unwrap();
        for j in 0..3 {
            let dot = w.column(j).rows(0, 30).dot(&w.column(j).rows(30, 30));
            assert!(dot.abs() < 1e-10);
        }
    }

    #[test]
    fn alpha_half_sets_cosine() {
        let w = generate_w(30, 3, 2, 0.5, 9).unwrap();
        for c in cosines(&w, 30) {
            assert!((c - 0.5).abs() < 1e-10);
        }
        assert!(generate_w(30, 1, 3, 0.5, 9).is_err());
        assert!(generate_w(30, 1, 2, 1.5, 9).is_err());
    }

    #[test]
    fn noiseless_responses_are_exact() {
        let s = spec(FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)), 0.0, 0.5);
        let g = generate_problem(&s).unwrap();
        let td = 40f64.sqrt();
        for t in 0..2 {
            let task = g.problem.task(t);
            let expect = task.features().tr_mul(&g.w.rows(t * 20, 20)) / td;
            assert_eq!(task.responses(), &expect);
        }
    }

    #[test]
    fn sphere_columns_have_radius_sqrt_d() {
        let s = spec(FeatureDistribution::Sphere, 0.1, 0.5);
        let g = generate_problem(&s).unwrap();
        for task in g.problem.tasks() {
            for col in task.features().column_iter() {
                assert!((col.norm() - 20f64.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_covariance_is_close_to_identity() {
        let mut s = spec(FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)), 0.1, 0.5);
        s.task_sizes = vec![400, 800];
        let g = generate_problem(&s).unwrap();
        for task in g.problem.tasks() {
            let n = task.n() as f64;
            let cov = task.features() * task.features().transpose() / n;
            let dev = SymmetricEigen::new(cov - DMatrix::<f64>::identity(20, 20)).eigenvalues.amax();
            assert!(dev <= 3.0 * (20.0 / n).sqrt());
            let mean = task.features().column_mean();
            assert!(mean.norm() <= 3.0 * (20.0 / n).sqrt());
        }
    }

    #[test]
    fn tanh_path_is_centered_and_finite() {
        let s = spec(
            FeatureDistribution::Tanh(Box::new(FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)))),
            0.1,
            0.5,
        );
        let g = generate_problem(&s).unwrap();
        for task in g.problem.tasks() {
            assert!(task.features().iter().all(|x| x.is_finite() && x.abs() <= 2.0));
            assert!(task.features().column_mean().amax() < 1e-12);
        }
        let cov = feature_covariance(&s.distribution, 20).unwrap();
        // E[tanh(Z)²] for Z ~ N(0, 1)
        assert!(matches!(cov, Covariance::Isotropic(v) if (v - 0.3942944903978).abs() < 1e-9));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)), 0.3, 0.5);
        let a = generate_problem(&s).unwrap();
        let b = generate_problem(&s).unwrap();
        assert_eq!(a, b);
        let t1 = draw_trial(&s, &a.w, 1).unwrap();
        assert_ne!(t1, a.problem);
        assert_eq!(t1, draw_trial(&s, &a.w, 1).unwrap());
    }

    #[test]
    fn streams_do_not_collide() {
        let ids = [
            stream_id(PURPOSE_TRAIN, 0, 1),
            stream_id(PURPOSE_TRAIN, 1, 0),
            stream_id(PURPOSE_TEST, 0, 1),
            stream_id(PURPOSE_WEIGHTS, 0, 0),
        ];
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                assert_ne!(ids[i], ids[j]);
            }
        }
    }
}
