//! One function per subcommand. Each writes its report to `out` and files to `--out`.

use std::io::Write;
use std::path::PathBuf;

use mtl_rmt::estimation::{
    estimate_noise, tune_lambda, EstimationConfig, NoiseEstimateMethod, PlugIn, TuneMode, TuneOptions,
};
use mtl_rmt::model::{Covariance, NoiseModel};
use mtl_rmt::nalgebra::DMatrix;
use mtl_rmt::solver::{empirical_test_risk, empirical_train_risk, predict_batch};
use mtl_rmt::synth::{draw_test, generate_problem, FeatureDistribution, GeneratorSpec, WeightSpec};
use mtl_rmt::validation::{run_sweep, SweepOptions, SweepRecord};
use mtl_rmt::{Fitter, Hyperparams, MultiTaskProblem};

use crate::args::{Settings, SyntheticSettings};
use crate::error::{CliError, CliResult};
use crate::io::{
    center_features, format_model, format_sweep_csv, load_dataset, load_manifest, load_model, read_task_csv,
    write_manifest, write_task_csv, write_text, Dataset, Manifest, SavedModel, MANIFEST_VERSION,
};
use crate::tsf::{prepare, read_series, write_prepared, TsfWindowSpec};

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    match out.write_all(text.as_bytes()) {
        // a closed pipe (`| head`) is not an error
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::input(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

/// Writes to `--out` when given, otherwise to `out`.
fn deliver(settings: &Settings, out: &mut dyn Write, text: &str) -> CliResult<()> {
    match &settings.out {
        Some(path) => write_text(path, text),
        None => emit(out, text),
    }
}

pub fn generator_spec(s: &SyntheticSettings, seed: u64) -> CliResult<GeneratorSpec> {
    let gaussian = FeatureDistribution::Gaussian(Covariance::Isotropic(1.0));
    let distribution = match s.distribution.as_str() {
        "gaussian" => gaussian,
        "sphere" => FeatureDistribution::Sphere,
        "tanh" => FeatureDistribution::Tanh(Box::new(gaussian)),
        other => return Err(CliError::input(format!("unknown distribution {other:?} (gaussian | sphere | tanh)"))),
    };
    let spec = GeneratorSpec {
        distribution,
        seed,
        task_sizes: s.task_sizes.clone(),
        d: s.d,
        q: s.q,
        noise: NoiseModel::isotropic(s.q, s.noise_variance)?,
        weights: WeightSpec::TwoTaskAlpha(s.alpha),
    };
    spec.validate()?;
    Ok(spec)
}

fn hyperparams(settings: &Settings, lambda: f64, tasks: usize) -> CliResult<Hyperparams> {
    Ok(Hyperparams::new(lambda, settings.gammas(tasks)?)?)
}

fn fmt_gammas(g: &[f64]) -> String {
    g.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

pub fn cmd_fit(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let data = load_dataset(settings.require_manifest()?)?;
    let hp = hyperparams(settings, settings.require_lambda()?, data.train.num_tasks())?;
    let solution = Fitter::new(&data.train)?.fit(&hp).map_err(CliError::at("fit"))?;
    let model = SavedModel { solution, seed: settings.seed, centering: data.centering };
    let path = settings.out.as_deref().ok_or_else(|| CliError::input("--out is required"))?;
    write_text(path, &format_model(&model))?;
    emit(out, &format!("wrote {}\n", path.display()))
}

/// Predictions as CSV rows `task,row,yhat0,...` in the fitted (centred) target space.
pub fn cmd_predict(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let model_path = settings.model.as_deref().ok_or_else(|| CliError::input("--model is required"))?;
    let model = load_model(model_path)?;
    let sol = &model.solution;
    let inputs: Vec<(usize, PathBuf)> = match (&settings.input, &settings.manifest) {
        (Some(input), _) => vec![(settings.task, input.clone())],
        (None, Some(manifest)) => load_manifest(manifest)?.tasks.into_iter().enumerate().collect(),
        (None, None) => return Err(CliError::input("--input or --manifest is required")),
    };
    let mut text = String::from("task,row");
    for j in 0..sol.q() {
        text.push_str(&format!(",yhat{j}"));
    }
    text.push('\n');
    for (t, path) in inputs {
        if t >= sol.num_tasks() {
            return Err(CliError::input(format!("task {t} out of range for a {}-task model", sol.num_tasks())));
        }
        let rows = read_task_csv(&path, sol.d(), None)?;
        let x = center_features(&rows.features, model.centering.as_ref(), t);
        let yhat = predict_batch(sol, t, &x.transpose()).map_err(CliError::at("predict"))?;
        for i in 0..yhat.nrows() {
            text.push_str(&format!("{t},{i}"));
            for v in yhat.row(i).iter() {
                text.push_str(&format!(",{v:?}"));
            }
            text.push('\n');
        }
    }
    deliver(settings, out, &text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMode {
    Theory,
    Empirical,
    Both,
}

impl RiskMode {
    pub fn parse(s: Option<&str>) -> CliResult<Self> {
        match s.unwrap_or("both") {
            "theory" => Ok(RiskMode::Theory),
            "empirical" => Ok(RiskMode::Empirical),
            "both" => Ok(RiskMode::Both),
            other => Err(CliError::input(format!("unknown risk mode {other:?} (theory | empirical | both)"))),
        }
    }
}

pub const RISK_CSV_HEADER: &str =
    "lambda,gamma,th_train,th_test,signal,noise,emp_train,emp_train_se,emp_test,emp_test_se";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:?}"))
}

struct RiskRow {
    lambda: f64,
    gammas: Vec<f64>,
    theory: Option<(f64, f64, f64, f64)>,
    empirical: Option<(f64, f64, Option<f64>, f64)>,
}

impl RiskRow {
    fn csv(&self) -> String {
        let (tt, te, s, n) = match self.theory {
            Some((a, b, c, d)) => (Some(a), Some(b), Some(c), Some(d)),
            None => (None, None, None, None),
        };
        let (et, ets, ee, ees) = match self.empirical {
            Some((a, b, c, d)) => (Some(a), Some(b), c, c.map(|_| d)),
            None => (None, None, None, None),
        };
        format!(
            "{:?},{},{},{},{},{},{},{},{},{}\n",
            self.lambda,
            fmt_gammas(&self.gammas),
            opt(tt),
            opt(te),
            opt(s),
            opt(n),
            opt(et),
            opt(ets),
            opt(ee),
            opt(ees)
        )
    }
}

/// Theory from ground truth (synthetic) or from estimated statistics (`--manifest`).
pub fn cmd_risk(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let mode = RiskMode::parse(settings.mode.as_deref())?;
    let lambda = settings.require_lambda()?;
    let row = match &settings.manifest {
        Some(path) => {
            let data = load_dataset(path)?;
            let hp = hyperparams(settings, lambda, data.train.num_tasks())?;
            data_risk_row(&data, &hp, mode)?
        }
        None => {
            let spec = generator_spec(&settings.synthetic, settings.seed)?;
            let hp = hyperparams(settings, lambda, spec.num_tasks())?;
            let trials = if mode == RiskMode::Theory { 1 } else { settings.trials };
            let options = SweepOptions { trials, test_points: settings.synthetic.test_points, ..Default::default() };
            let r = if mode == RiskMode::Theory {
                theory_only_record(&spec, &hp)?
            } else {
                run_sweep(&spec, std::slice::from_ref(&hp), &options).map_err(CliError::at("sweep"))?.remove(0)
            };
            RiskRow {
                lambda: r.lambda,
                gammas: r.gammas,
                theory: (mode != RiskMode::Empirical).then_some((r.th_train, r.th_test, r.signal, r.noise)),
                empirical: (mode != RiskMode::Theory).then_some((
                    r.emp_train,
                    r.emp_train_se,
                    Some(r.emp_test),
                    r.emp_test_se,
                )),
            }
        }
    };
    deliver(settings, out, &format!("{RISK_CSV_HEADER}\n{}", row.csv()))
}

fn theory_only_record(spec: &GeneratorSpec, hp: &Hyperparams) -> CliResult<SweepRecord> {
    use mtl_rmt::synth::{ground_truth_w, population_spectrum};
    use mtl_rmt::{theoretical_test_risk, RmtConfig, RmtContext, Signal};
    let w = ground_truth_w(spec)?;
    let ctx = RmtContext::new(population_spectrum(spec)?, hp, RmtConfig::default()).map_err(CliError::at("theory"))?;
    let th = theoretical_test_risk(&ctx, &spec.noise, Signal::Weights(&w)).map_err(CliError::at("theory"))?;
    Ok(SweepRecord {
        lambda: hp.lambda(),
        gammas: hp.gammas().to_vec(),
        emp_train: f64::NAN,
        emp_train_se: f64::NAN,
        emp_test: f64::NAN,
        emp_test_se: f64::NAN,
        th_train: th.train_risk,
        th_test: th.test_risk,
        signal: th.signal_term,
        noise: th.noise_term,
        trials: 0,
        seed: spec.seed,
    })
}

fn data_risk_row(data: &Dataset, hp: &Hyperparams, mode: RiskMode) -> CliResult<RiskRow> {
    let theory = if mode == RiskMode::Empirical {
        None
    } else {
        let plug_in = PlugIn::new(&data.train, &EstimationConfig::default()).map_err(CliError::at("estimation"))?;
        let r = plug_in.risk(hp).map_err(CliError::at("theory"))?;
        Some((r.train_risk, r.test_risk, r.signal_term, r.noise_term))
    };
    let empirical = if mode == RiskMode::Theory {
        None
    } else {
        let (train, test) = empirical_pair(data, hp)?;
        Some((train, 0.0, test, 0.0))
    };
    Ok(RiskRow { lambda: hp.lambda(), gammas: hp.gammas().to_vec(), theory, empirical })
}

fn empirical_pair(data: &Dataset, hp: &Hyperparams) -> CliResult<(f64, Option<f64>)> {
    let sol = Fitter::new(&data.train)?.fit(hp).map_err(CliError::at("fit"))?;
    let train = empirical_train_risk(&data.train, &sol)?;
    let test = data.test.as_ref().map(|t| empirical_test_risk(&sol, t)).transpose()?;
    Ok((train, test))
}

/// Training problem for data-driven commands: the manifest, or one synthetic draw.
fn training_problem(settings: &Settings) -> CliResult<MultiTaskProblem> {
    match &settings.manifest {
        Some(path) => Ok(load_dataset(path)?.train),
        None => {
            let spec = generator_spec(&settings.synthetic, settings.seed)?;
            Ok(generate_problem(&spec)?.problem)
        }
    }
}

fn single_gamma(settings: &Settings, tasks: usize) -> CliResult<f64> {
    let g = settings.gammas(tasks)?;
    if g.iter().any(|&x| x != g[0]) {
        return Err(CliError::input("tuning holds a common gamma; pass a single --gamma value"));
    }
    Ok(g[0])
}

pub fn cmd_tune(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let mode = match settings.mode.as_deref().unwrap_or("grid") {
        "grid" | "theory_grid" => TuneMode::TheoryGrid,
        "closed_form" | "closed-form" => TuneMode::ClosedForm,
        other => return Err(CliError::input(format!("unknown tune mode {other:?} (grid | closed_form)"))),
    };
    let problem = training_problem(settings)?;
    let gamma = single_gamma(settings, problem.num_tasks())?;
    let grid = match &settings.grid {
        Some(_) => settings.lambda_grid()?,
        None => TuneOptions::default().grid,
    };
    let options = TuneOptions { gamma, grid };
    let r = tune_lambda(&problem, mode, &options, &EstimationConfig::default()).map_err(CliError::at("tune"))?;
    let mut text = format!(
        "mode = {:?}\nlambda = {:?}\ngamma = {gamma:?}\npredicted_test_risk = {:?}\npredicted_train_risk = {:?}\nsigma2_hat = {:?}\n",
        if mode == TuneMode::ClosedForm { "closed_form" } else { "grid" },
        r.lambda,
        r.report.test_risk,
        r.report.train_risk,
        r.stats.sigma2_hat
    );
    if let Some(snr) = r.stats.snr_hat {
        text.push_str(&format!("snr_hat = {snr:?}\n"));
    }
    if let Some(ls) = r.lambda_star {
        text.push_str(&format!("lambda_star_raw = {:?}\n", ls.raw));
    }
    for e in &r.stats.clamp_events {
        eprintln!("warning: signal estimate for task {} was {:e}, clamped to 0", e.task, e.raw_value);
    }
    deliver(settings, out, &text)
}

pub fn cmd_sweep(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let grid = settings.lambda_grid()?;
    let records = match &settings.manifest {
        Some(path) => {
            let data = load_dataset(path)?;
            let tasks = data.train.num_tasks();
            let plug_in = PlugIn::new(&data.train, &EstimationConfig::default()).map_err(CliError::at("estimation"))?;
            grid.iter()
                .map(|&lambda| {
                    let hp = hyperparams(settings, lambda, tasks)?;
                    let th = plug_in.risk(&hp).map_err(CliError::at("theory"))?;
                    let (train, test) = empirical_pair(&data, &hp)?;
                    Ok(SweepRecord {
                        lambda,
                        gammas: hp.gammas().to_vec(),
                        emp_train: train,
                        emp_train_se: 0.0,
                        emp_test: test.unwrap_or(f64::NAN),
                        emp_test_se: 0.0,
                        th_train: th.train_risk,
                        th_test: th.test_risk,
                        signal: th.signal_term,
                        noise: th.noise_term,
                        trials: 1,
                        seed: settings.seed,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        None => {
            let spec = generator_spec(&settings.synthetic, settings.seed)?;
            let hps =
                grid.iter().map(|&l| hyperparams(settings, l, spec.num_tasks())).collect::<CliResult<Vec<_>>>()?;
            let options = SweepOptions {
                trials: settings.trials,
                test_points: settings.synthetic.test_points,
                ..Default::default()
            };
            run_sweep(&spec, &hps, &options).map_err(CliError::at("sweep"))?
        }
    };
    deliver(settings, out, &format_sweep_csv(&records))
}

/// Writes `task_{t}.csv`, `test_{t}.csv`, `weights.csv` and `manifest.toml` into `--out`.
pub fn cmd_simulate(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let dir = settings.out.as_deref().ok_or_else(|| CliError::input("--out (a directory) is required"))?;
    let spec = generator_spec(&settings.synthetic, settings.seed)?;
    let synthetic = generate_problem(&spec)?;
    let test = draw_test(&spec, &synthetic.w, 0, settings.synthetic.test_points)?;
    let mut tasks = Vec::new();
    let mut test_tasks = Vec::new();
    for t in 0..spec.num_tasks() {
        let train = PathBuf::from(format!("task_{t}.csv"));
        let task = synthetic.problem.task(t);
        write_task_csv(&dir.join(&train), &task.features().transpose(), task.responses())?;
        tasks.push(train);
        let held = PathBuf::from(format!("test_{t}.csv"));
        let task = test.task(t);
        write_task_csv(&dir.join(&held), &task.features().transpose(), task.responses())?;
        test_tasks.push(held);
    }
    let w = &synthetic.w;
    let names: Vec<String> = (0..w.ncols()).map(|j| format!("w{j}")).collect();
    let mut text = names.join(",") + "\n";
    for i in 0..w.nrows() {
        text.push_str(&w.row(i).iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    write_text(&dir.join("weights.csv"), &text)?;
    let manifest =
        Manifest { version: MANIFEST_VERSION, d: spec.d, q: spec.q, tasks, center: false, holdout: None, test_tasks };
    let path = dir.join("manifest.toml");
    write_manifest(&path, &manifest)?;
    emit(out, &format!("wrote {}\n", path.display()))
}

pub fn cmd_estimate_noise(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let data = load_dataset(settings.require_manifest()?)?;
    let est = estimate_noise(&data.train, &EstimationConfig::default()).map_err(CliError::at("noise estimation"))?;
    for w in &est.warnings {
        eprintln!("warning: {w}");
    }
    let method = match est.method {
        NoiseEstimateMethod::DecoupledLimit => "decoupled_limit",
        NoiseEstimateMethod::Moments => "moments",
    };
    let text = format!(
        "sigma2_hat = {:?}\nmethod = {method:?}\ntrain_risk = {:?}\ntrace_q2 = {:?}\n",
        est.sigma2_hat, est.train_risk, est.trace_q2
    );
    deliver(settings, out, &text)
}

pub fn cmd_tsf_prepare(settings: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let input = settings.input.as_deref().ok_or_else(|| CliError::input("--input (series CSV) is required"))?;
    let dir = settings.out.as_deref().ok_or_else(|| CliError::input("--out (a directory) is required"))?;
    let spec = TsfWindowSpec {
        lookback: settings.lookback.ok_or_else(|| CliError::input("--lookback is required"))?,
        horizon: settings.horizon.ok_or_else(|| CliError::input("--horizon is required"))?,
        stride: settings.stride,
        split: settings.split.unwrap_or(0.7),
    };
    let (names, series) = read_series(input)?;
    let tasks = prepare(&names, &series, &spec)?;
    let manifest = write_prepared(dir, &tasks, &spec)?;
    let counts = spec.counts(series.nrows());
    emit(
        out,
        &format!(
            "tasks = {}\ntrain_windows = {}\ntest_windows = {}\nmanifest = {:?}\n",
            tasks.len(),
            counts.train,
            counts.test,
            manifest.display().to_string()
        ),
    )
}

/// In-process predictions for every task of a dataset, as `predict` would write them.
pub fn predictions_for(model: &SavedModel, data_features: &[DMatrix<f64>]) -> CliResult<Vec<DMatrix<f64>>> {
    data_features
        .iter()
        .enumerate()
        .map(|(t, rows)| {
            let x = center_features(rows, model.centering.as_ref(), t);
            Ok(predict_batch(&model.solution, t, &x.transpose())?)
        })
        .collect()
}
