use mtl_rmt::estimation::{estimate_noise, EstimationConfig};
use mtl_rmt::model::{Covariance, NoiseModel};
use mtl_rmt::solver::DEFAULT_EXPLICIT_CAP;
use mtl_rmt::synth::{draw_trial, ground_truth_w, population_spectrum, FeatureDistribution, GeneratorSpec, WeightSpec};
use mtl_rmt::validation::{run_sweep, SweepOptions};
use mtl_rmt::{Fitter, Hyperparams, RmtConfig, RmtContext};

fn spec(dist: FeatureDistribution, d: usize, sizes: Vec<usize>, sigma2: f64, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        distribution: dist,
        seed,
        task_sizes: sizes,
        d,
        q: 1,
        noise: NoiseModel::isotropic(1, sigma2).unwrap(),
        weights: WeightSpec::TwoTaskAlpha(0.5),
    }
}

/// Relative errors of `tr Q` and `tr Q²` against their deterministic equivalents, per trial.
fn trace_errors(spec: &GeneratorSpec, hp: &Hyperparams, trials: u64) -> Vec<(f64, f64)> {
    let ctx = RmtContext::new(population_spectrum(spec).unwrap(), hp, RmtConfig::default()).unwrap();
    let sizes = &spec.task_sizes;
    let tr_qbar: f64 = sizes.iter().zip(ctx.delta().iter()).map(|(&n, &d)| n as f64 / (1.0 + d)).sum();
    let tr_q2bar = ctx.sample_second_order().trace;
    let w = ground_truth_w(spec).unwrap();
    (0..trials)
        .map(|trial| {
            let problem = draw_trial(spec, &w, trial).unwrap();
            let q = Fitter::new(&problem).unwrap().resolvent(hp).unwrap().explicit(DEFAULT_EXPLICIT_CAP).unwrap();
            let e1 = (q.trace() / tr_qbar - 1.0).abs();
            let e2 = ((&q * &q).trace() / tr_q2bar - 1.0).abs();
            (e1, e2)
        })
        .collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

#[test]
fn resolvent_traces_match_deterministic_equivalents() {
    let hp = Hyperparams::new(0.8, vec![0.5, 1.5]).unwrap();
    for dist in [
        FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)),
        FeatureDistribution::Sphere,
        FeatureDistribution::Tanh(Box::new(FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)))),
    ] {
        let s = spec(dist.clone(), 150, vec![100, 200], 0.1, 4);
        for (e1, e2) in trace_errors(&s, &hp, 5) {
            assert!(e1 < 0.01, "{dist:?}: tr Q off by {e1}");
            assert!(e2 < 0.02, "{dist:?}: tr Q^2 off by {e2}");
        }
    }
}

#[test]
fn anisotropic_traces_match() {
    let d = 120;
    let cov =
        Covariance::Dense(mtl_rmt::nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5f64.powi((i as i32 - j as i32).abs())));
    let s = spec(FeatureDistribution::Gaussian(cov), d, vec![90, 150], 0.1, 8);
    for (e1, e2) in trace_errors(&s, &Hyperparams::uniform(1.0, 1.0, 2).unwrap(), 4) {
        assert!(e1 < 0.01 && e2 < 0.02, "{e1} {e2}");
    }
}

#[test]
fn trace_error_shrinks_with_dimension() {
    let hp = Hyperparams::uniform(1.0, 1.0, 2).unwrap();
    let dist = FeatureDistribution::Gaussian(Covariance::Isotropic(1.0));
    let small =
        median(trace_errors(&spec(dist.clone(), 40, vec![30, 50], 0.1, 1), &hp, 15).into_iter().map(|e| e.1).collect());
    let large =
        median(trace_errors(&spec(dist, 160, vec![120, 200], 0.1, 1), &hp, 15).into_iter().map(|e| e.1).collect());
    assert!(large < small, "d=160: {large}, d=40: {small}");
}

#[test]
fn sweep_risks_match_theory() {
    let s = spec(FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)), 100, vec![80, 120], 0.25, 3);
    let grid: Vec<_> = [0.05, 0.5, 5.0].iter().map(|&l| Hyperparams::uniform(l, 0.7, 2).unwrap()).collect();
    let rows = run_sweep(&s, &grid, &SweepOptions { trials: 20, test_points: 2000, ..Default::default() }).unwrap();
    for r in rows {
        assert!(
            (r.emp_train / r.th_train - 1.0).abs() < 0.05,
            "train at {}: {} vs {}",
            r.lambda,
            r.emp_train,
            r.th_train
        );
        assert!((r.emp_test / r.th_test - 1.0).abs() < 0.05, "test at {}: {} vs {}", r.lambda, r.emp_test, r.th_test);
    }
}

#[test]
fn noise_estimate_median_is_accurate() {
    let errs: Vec<f64> = (0..15)
        .map(|seed| {
            let s = spec(FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)), 100, vec![150, 150], 0.25, seed);
            let data = mtl_rmt::synth::generate_problem(&s).unwrap();
            let est = estimate_noise(&data.problem, &EstimationConfig::default()).unwrap();
            (est.sigma2_hat / 0.25 - 1.0).abs()
        })
        .collect();
    assert!(median(errs.clone()) < 0.1, "{errs:?}");
}
