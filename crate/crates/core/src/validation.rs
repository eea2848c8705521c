//! Monte-Carlo sweeps of empirical against asymptotic risk, and regime classification of the
//! simplified risk curve.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::log_grid;
use crate::model::Hyperparams;
use crate::rmt::{theoretical_test_risk, RmtConfig, RmtContext, Signal};
use crate::simplified::{lambda_star, test_risk_simplified, LambdaStar, SignalStats, SimplifiedParams};
use crate::solver::{empirical_test_risk, empirical_train_risk, Fitter};
use crate::synth::{draw_test, draw_trial, ground_truth_w, population_spectrum, GeneratorSpec};

/// Column names of the sweep CSV, in order.
pub const SWEEP_CSV_HEADER: [&str; 11] = [
    "lambda",
    "emp_train",
    "emp_train_se",
    "emp_test",
    "emp_test_se",
    "th_train",
    "th_test",
    "signal",
    "noise",
    "trials",
    "seed",
];

/// One row of a sweep: empirical means with standard errors next to the theory.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub lambda: f64,
    pub gammas: Vec<f64>,
    pub emp_train: f64,
    pub emp_train_se: f64,
    pub emp_test: f64,
    pub emp_test_se: f64,
    pub th_train: f64,
    pub th_test: f64,
    pub signal: f64,
    pub noise: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SweepRecord {
    /// Fields in [`SWEEP_CSV_HEADER`] order, formatted so they parse back to the same values.
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            format!("{:?}", self.lambda),
            format!("{:?}", self.emp_train),
            format!("{:?}", self.emp_train_se),
            format!("{:?}", self.emp_test),
            format!("{:?}", self.emp_test_se),
            format!("{:?}", self.th_train),
            format!("{:?}", self.th_test),
            format!("{:?}", self.signal),
            format!("{:?}", self.noise),
            self.trials.to_string(),
            self.seed.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    pub test_points: usize,
    pub rmt: RmtConfig,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { trials: 30, test_points: 5000, rmt: RmtConfig::default() }
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical and theoretical risks over a hyperparameter grid.
///
/// The weights are fixed by the spec; every trial draws fresh training and test data and is
/// fitted at every grid point. Trials run on the current rayon pool and are reduced in order.
pub fn run_sweep(spec: &GeneratorSpec, grid: &[Hyperparams], options: &SweepOptions) -> Result<Vec<SweepRecord>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("hyperparameter grid is empty".into()));
    }
    if options.trials == 0 || options.test_points == 0 {
        return Err(Error::InvalidInput("trials and test points must be >= 1".into()));
    }
    spec.validate()?;
    let w = ground_truth_w(spec)?;
    let spectrum = population_spectrum(spec)?;

    let theory = grid
        .iter()
        .map(|hp| {
            let ctx = RmtContext::new(spectrum.clone(), hp, options.rmt)?;
            theoretical_test_risk(&ctx, &spec.noise, Signal::Weights(&w))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_trial: Vec<Vec<(f64, f64)>> = (0..options.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let train = draw_trial(spec, &w, trial)?;
            let test = draw_test(spec, &w, trial, options.test_points)?;
            let fitter = Fitter::new(&train)?;
            grid.iter()
                .map(|hp| {
                    let sol = fitter.fit(hp)?;
                    Ok((empirical_train_risk(&train, &sol)?, empirical_test_risk(&sol, &test)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(grid
        .iter()
        .zip(theory)
        .enumerate()
        .map(|(i, (hp, th))| {
            let train: Vec<f64> = per_trial.iter().map(|r| r[i].0).collect();
            let test: Vec<f64> = per_trial.iter().map(|r| r[i].1).collect();
            let (emp_train, emp_train_se) = mean_se(&train);
            let (emp_test, emp_test_se) = mean_se(&test);
            SweepRecord {
                lambda: hp.lambda(),
                gammas: hp.gammas().to_vec(),
                emp_train,
                emp_train_se,
                emp_test,
                emp_test_se,
                th_train: th.train_risk,
                th_test: th.test_risk,
                signal: th.signal_term,
                noise: th.noise_term,
                trials: options.trials,
                seed: spec.seed,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeShape {
    Decreasing,
    Increasing,
    InteriorMinimum,
}

/// Classification of one risk curve over `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeCurve {
    pub c0: f64,
    pub shape: RegimeShape,
    pub argmin_lambda: f64,
    pub lambda_star: LambdaStar,
    /// `|log λ* − log argmin|` in units of the grid's log step; `None` when `λ* ≤ 0`.
    pub steps_from_lambda_star: Option<f64>,
}

/// Points of the default regime grid, log-spaced over `[1e-3, 1e3]`.
pub const REGIME_GRID_POINTS: usize = 201;

/// Shape of a sampled curve: argmin at the left end, at the right end, or inside.
pub fn classify_curve(values: &[f64]) -> RegimeShape {
    let argmin = argmin(values);
    if argmin == 0 {
        RegimeShape::Increasing
    } else if argmin == values.len() - 1 {
        RegimeShape::Decreasing
    } else {
        RegimeShape::InteriorMinimum
    }
}

pub fn argmin(values: &[f64]) -> usize {
    values.iter().enumerate().fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) }).0
}

/// Distance between two positive `λ` values in log-grid steps.
pub fn grid_steps_between(a: f64, b: f64, grid: &[f64]) -> f64 {
    let step = (grid[1] / grid[0]).ln();
    (a.ln() - b.ln()).abs() / step
}

/// Classifies the simplified test-risk curve for each `c0` on the default 201-point grid.
pub fn regime_report(c0_values: &[f64], gamma: f64, signal: SignalStats, noise_trace: f64) -> Result<Vec<RegimeCurve>> {
    let grid = log_grid(1e-3, 1e3, REGIME_GRID_POINTS);
    c0_values
        .iter()
        .map(|&c0| {
            let values = grid
                .iter()
                .map(|&lambda| test_risk_simplified(&SimplifiedParams { c0, lambda, gamma, signal, noise_trace }))
                .collect::<Result<Vec<_>>>()?;
            let i = argmin(&values);
            let ls = lambda_star(c0, 1.0, signal, noise_trace, gamma)?;
            Ok(RegimeCurve {
                c0,
                shape: classify_curve(&values),
                argmin_lambda: grid[i],
                lambda_star: ls,
                steps_from_lambda_star: (ls.raw > 0.0).then(|| grid_steps_between(ls.raw, grid[i], &grid)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Covariance, NoiseModel};
    use crate::synth::{FeatureDistribution, WeightSpec};

    fn spec(sizes: Vec<usize>, d: usize, sigma2: f64) -> GeneratorSpec {
        GeneratorSpec {
            distribution: FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)),
            seed: 11,
            task_sizes: sizes,
            d,
            q: 1,
            noise: NoiseModel::isotropic(1, sigma2).unwrap(),
            weights: WeightSpec::TwoTaskAlpha(0.5),
        }
    }

    #[test]
    fn interpolation_with_no_noise() {
        let s = spec(vec![10, 10], 30, 0.0);
        let grid = vec![Hyperparams::uniform(1e8, 1e8, 2).unwrap()];
        let opts = SweepOptions { trials: 1, test_points: 10, ..Default::default() };
        let r = run_sweep(&s, &grid, &opts).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].emp_train <= 1e-8);
        assert_eq!(r[0].emp_train_se, 0.0);
    }

    #[test]
    fn sweep_is_reproducible_and_theory_is_trial_independent() {
        let s = spec(vec![20, 30], 15, 0.25);
        let grid: Vec<_> = [0.1, 1.0].iter().map(|&l| Hyperparams::uniform(l, 1.0, 2).unwrap()).collect();
        let a = run_sweep(&s, &grid, &SweepOptions { trials: 4, test_points: 50, ..Default::default() }).unwrap();
        let b = run_sweep(&s, &grid, &SweepOptions { trials: 4, test_points: 50, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        let c = run_sweep(&s, &grid, &SweepOptions { trials: 7, test_points: 50, ..Default::default() }).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.th_test, y.th_test);
            assert_eq!(x.th_train, y.th_train);
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single =
            pool.install(|| run_sweep(&s, &grid, &SweepOptions { trials: 4, test_points: 50, ..Default::default() }));
        assert_eq!(single.unwrap(), a);
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(run_sweep(&spec(vec![5, 5], 4, 0.1), &[], &SweepOptions::default()).is_err());
    }

    #[test]
    fn zero_signal_curve_is_monotone() {
        let r = regime_report(&[0.5, 1.5, 2.5], 1.0, SignalStats::zero(), 1.0).unwrap();
        for c in r {
            assert_ne!(c.shape, RegimeShape::InteriorMinimum);
            assert!(c.steps_from_lambda_star.is_none());
        }
    }

    #[test]
    fn classifier_shapes() {
        assert_eq!(classify_curve(&[3.0, 2.0, 1.0]), RegimeShape::Decreasing);
        assert_eq!(classify_curve(&[1.0, 2.0, 3.0]), RegimeShape::Increasing);
        assert_eq!(classify_curve(&[2.0, 1.0, 3.0]), RegimeShape::InteriorMinimum);
    }
}
