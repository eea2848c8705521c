use std::path::Path;
use std::process::{Command, Output};

use mtl_rmt::model::{Covariance, NoiseModel};
use mtl_rmt::synth::{FeatureDistribution, GeneratorSpec, WeightSpec};
use mtl_rmt::validation::{run_sweep, SweepOptions};
use mtl_rmt::Hyperparams;
use mtl_rmt_cli::commands::predictions_for;
use mtl_rmt_cli::io::{load_manifest, load_model, read_task_csv};

fn mtlrmt(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mtlrmt"));
    cmd.current_dir(dir).args(args);
    match threads {
        Some(t) => cmd.env("MTLRMT_THREADS", t),
        None => cmd.env_remove("MTLRMT_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mtlrmt(dir, args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path, extra: &str) {
    std::fs::write(dir.join("c.toml"), format!("d = 30\ntask_sizes = [60, 45]\ntest_points = 400\n{extra}")).unwrap();
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn fit_then_predict_reproduces_in_process_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_config(p, "");
    ok(p, &["simulate", "--config", "c.toml", "--out", "data", "--seed", "7"]);
    // centred variant of the same data
    let manifest = std::fs::read_to_string(p.join("data/manifest.toml")).unwrap();
    std::fs::write(p.join("data/centred.toml"), manifest.replace("center = false", "center = true")).unwrap();

    for m in ["data/manifest.toml", "data/centred.toml"] {
        ok(p, &["fit", "--manifest", m, "--lambda", "0.7", "--gamma", "0.5,2", "--seed", "7", "--out", "model.txt"]);
        let text = ok(p, &["predict", "--model", "model.txt", "--manifest", m]);

        let model = load_model(&p.join("model.txt")).unwrap();
        assert_eq!(model.seed, 7);
        assert_eq!(model.centering.is_some(), m.ends_with("centred.toml"));
        let manifest = load_manifest(&p.join(m)).unwrap();
        let features: Vec<_> = manifest.tasks.iter().map(|f| read_task_csv(f, 30, None).unwrap().features).collect();
        let expected = predictions_for(&model, &features).unwrap();

        let rows = csv_rows(&text);
        assert_eq!(rows.len(), 105);
        for r in rows {
            let (t, i): (usize, usize) = (r[0].parse().unwrap(), r[1].parse().unwrap());
            let y: f64 = r[2].parse().unwrap();
            assert_eq!(y.to_bits(), expected[t][(i, 0)].to_bits());
        }
    }
}

#[test]
fn empty_task_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("a.csv"), "").unwrap();
    std::fs::write(p.join("m.toml"), "version = 1\nd = 2\nq = 1\ntasks = [\"a.csv\"]\n").unwrap();
    let out = mtlrmt(p, &["fit", "--manifest", "m.toml", "--lambda", "1", "--out", "x"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("task file empty"));
}

#[test]
fn mismatched_q_names_both_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("first.csv"), "x0,x1,y0\n1,2,3\n4,5,6\n").unwrap();
    std::fs::write(p.join("second.csv"), "x0,x1,y0,y1\n1,2,3,4\n").unwrap();
    std::fs::write(p.join("m.toml"), "version = 1\nd = 2\nq = 1\ntasks = [\"first.csv\", \"second.csv\"]\n").unwrap();
    let out = mtlrmt(p, &["fit", "--manifest", "m.toml", "--lambda", "1", "--out", "x"], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("first.csv") && err.contains("second.csv"), "{err}");
}

#[test]
fn malformed_row_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("a.csv"), "x0,y0\n1,2\n3,oops\n").unwrap();
    std::fs::write(p.join("m.toml"), "version = 1\nd = 1\nq = 1\ntasks = [\"a.csv\"]\n").unwrap();
    let out = mtlrmt(p, &["estimate-noise", "--manifest", "m.toml"], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("a.csv") && err.contains("row 3"), "{err}");
}

#[test]
fn unknown_config_key_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "lamda = 1\n").unwrap();
    let out = mtlrmt(dir.path(), &["risk", "--config", "c.toml", "--lambda", "1"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_with_one_point_and_one_trial_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), "");
    let text = ok(dir.path(), &["sweep", "--config", "c.toml", "--grid", "1:1:1", "--trials", "1"]);
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("lambda,"));
}

#[test]
fn risk_rows_mirror_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), "noise_variance = 0.25\nalpha = 0.5\n");
    let spec = GeneratorSpec {
        distribution: FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)),
        seed: 3,
        task_sizes: vec![60, 45],
        d: 30,
        q: 1,
        noise: NoiseModel::isotropic(1, 0.25).unwrap(),
        weights: WeightSpec::TwoTaskAlpha(0.5),
    };
    let options = SweepOptions { trials: 4, test_points: 400, ..Default::default() };
    for lambda in ["0.1", "1", "10"] {
        let text = ok(dir.path(), &["risk", "--config", "c.toml", "--lambda", lambda, "--trials", "4", "--seed", "3"]);
        let row = &csv_rows(&text)[0];
        let hp = Hyperparams::uniform(lambda.parse().unwrap(), 1.0, 2).unwrap();
        let r = &run_sweep(&spec, &[hp], &options).unwrap()[0];
        let expected =
            [r.th_train, r.th_test, r.signal, r.noise, r.emp_train, r.emp_train_se, r.emp_test, r.emp_test_se];
        for (field, value) in row[2..].iter().zip(expected) {
            assert_eq!(field.parse::<f64>().unwrap().to_bits(), value.to_bits());
        }
    }
}

#[test]
fn risk_modes_fill_their_columns() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), "");
    let cells = |mode: &str| {
        let text = ok(dir.path(), &["risk", "--config", "c.toml", "--lambda", "1", "--trials", "2", "--mode", mode]);
        csv_rows(&text)[0].iter().map(|c| !c.is_empty()).collect::<Vec<_>>()
    };
    assert_eq!(cells("both"), vec![true; 10]);
    assert_eq!(cells("theory"), [vec![true; 6], vec![false; 4]].concat());
    assert_eq!(cells("empirical"), [vec![true; 2], vec![false; 4], vec![true; 4]].concat());
}

#[test]
fn closed_form_tuning_with_aligned_tasks_is_positive() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "alpha = 1.0\n").unwrap();
    let text = ok(dir.path(), &["tune", "--config", "c.toml", "--mode", "closed_form", "--seed", "1"]);
    let lambda: f64 = text.lines().find_map(|l| l.strip_prefix("lambda = ")).unwrap().parse().unwrap();
    assert!(lambda > 0.0, "{text}");
}

#[test]
fn tsf_prepare_counts_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut series = String::from("a,b,c\n");
    for i in 0..100 {
        let x = i as f64;
        series.push_str(&format!("{},{},{}\n", (x / 5.0).sin(), (x / 7.0).cos(), 0.01 * x));
    }
    std::fs::write(p.join("s.csv"), series).unwrap();
    let text = ok(
        p,
        &[
            "tsf-prepare",
            "--input",
            "s.csv",
            "--lookback",
            "24",
            "--horizon",
            "6",
            "--stride",
            "1",
            "--split",
            "0.7",
            "--out",
            "w",
        ],
    );
    assert!(text.contains("tasks = 3\ntrain_windows = 41\ntest_windows = 25\n"), "{text}");
    let manifest = load_manifest(&p.join("w/manifest.toml")).unwrap();
    assert!(manifest.center);
    assert_eq!(manifest.test_tasks.len(), 3);
    assert_eq!(read_task_csv(&manifest.tasks[2], 24, Some(6)).unwrap().features.nrows(), 41);
    ok(p, &["risk", "--manifest", "w/manifest.toml", "--lambda", "1", "--mode", "empirical"]);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_config(p, "");
    let args = ["sweep", "--config", "c.toml", "--grid", "0.1:10:4", "--trials", "6", "--seed", "5"];
    let one = mtlrmt(p, &args, Some("1"));
    let four = mtlrmt(p, &args, Some("4"));
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
    let bad = mtlrmt(p, &args, Some("zero"));
    assert_eq!(bad.status.code(), Some(2));
}
