mod common;

use std::process::Command;

use persona::data::{Dataset, TaskId};
use persona::experiment::{
    compare, emit_report, load_report, profile_size_analysis, render, run_dataset, AdapterSource,
    BackendConfig, EvalReport, ExperimentError, Mode, ReportFormat, RunConfig,
};
use persona::gateway::MockScript;
use persona::lora::{LoraConfig, ToyModelConfig, TrainConfig};
use persona::metrics::{evaluate_task, per_user_value, MetricName};
use persona::store::AdapterStore;
use persona::synthetic::{synthetic_dataset, SyntheticSpec};

fn mock(task: TaskId, mode: Mode, reply: &str) -> RunConfig {
    let mut cfg = RunConfig::new(
        task,
        mode,
        BackendConfig::Mock {
            script: MockScript::constant(reply),
        },
    );
    cfg.decode.deterministic = true;
    cfg
}

fn dataset(task: TaskId, users: usize) -> Dataset {
    synthetic_dataset(&SyntheticSpec::new(task, users, 9))
}

fn check_consistency(report: &EvalReport) {
    let preds: Vec<&str> = report.users.iter().map(|u| u.prediction.as_str()).collect();
    let golds: Vec<&str> = report.users.iter().map(|u| u.gold.as_str()).collect();
    let fresh = evaluate_task(report.task, &preds, &golds).unwrap();
    assert_eq!(fresh.len(), report.aggregates.len());
    for (a, b) in fresh.iter().zip(&report.aggregates) {
        assert_eq!(a.name, b.name);
        assert!((a.value - b.value).abs() <= 1e-12);
    }
    for u in &report.users {
        for (&m, &v) in &u.metrics {
            assert!(
                (per_user_value(report.task, m, &u.prediction, &u.gold).unwrap() - v).abs()
                    <= 1e-12
            );
        }
    }
    // Mean-decomposable metrics equal the mean of per-user values.
    for m in [
        MetricName::Accuracy,
        MetricName::Mae,
        MetricName::Rouge1,
        MetricName::RougeL,
    ] {
        if let Some(agg) = report.aggregate(m) {
            let mean =
                report.users.iter().map(|u| u.metrics[&m]).sum::<f64>() / report.users.len() as f64;
            assert!((agg - mean).abs() <= 1e-12, "{m:?}");
        }
    }
}

#[test]
fn aggregates_agree_with_per_user_rows() {
    for task in TaskId::ALL {
        for mode in [Mode::None, Mode::Rag] {
            let data = dataset(task, 12);
            let report = run_dataset(&mock(task, mode, "comedy"), &data, None).unwrap();
            assert_eq!(report.users.len(), 12);
            assert!(report.errors.is_empty());
            assert_eq!(report.privacy.cross_user_accesses, 0);
            check_consistency(&report);
            if mode == Mode::Rag {
                assert!(report
                    .users
                    .iter()
                    .all(|u| !u.retrieved.is_empty() && u.retrieved.len() <= 4));
            }
        }
    }
}

#[test]
fn failure_threshold_is_ten_percent() {
    let run_with_blanks = |blanks: usize| {
        let mut data = dataset(TaskId::Lamp4, 20);
        for r in data.records.iter_mut().take(blanks) {
            r.input = "   ".into();
        }
        run_dataset(&mock(TaskId::Lamp4, Mode::None, "x"), &data, None)
    };
    let ok = run_with_blanks(2).unwrap();
    assert_eq!((ok.users.len(), ok.errors.len()), (18, 2));
    assert_eq!(ok.errors[0].stage, "generation");
    check_consistency(&ok);
    match run_with_blanks(3) {
        Err(ExperimentError::TooManyFailures {
            failed: 3,
            total: 20,
            ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn config_errors_map_to_exit_code_two() {
    let data = dataset(TaskId::Lamp2, 3);
    let mut cfg = mock(TaskId::Lamp2, Mode::Rag, "x");
    cfg.k = 0;
    let err = run_dataset(&cfg, &data, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = run_dataset(&mock(TaskId::Lamp2, Mode::Peft, "x"), &data, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = run_dataset(&mock(TaskId::Lamp3, Mode::None, "x"), &data, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn reports_roundtrip_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(TaskId::Lamp5, 6);
    let base = run_dataset(&mock(TaskId::Lamp5, Mode::None, "a title"), &data, None).unwrap();
    let mut rag = run_dataset(
        &mock(TaskId::Lamp5, Mode::Rag, "a title for graphs"),
        &data,
        None,
    )
    .unwrap();
    rag.comparison = Some(compare(&rag, &base));

    let json = emit_report(&rag, ReportFormat::Json, dir.path()).unwrap();
    assert_eq!(json.file_name().unwrap(), "lamp5_rag.json");
    assert_eq!(load_report(&json).unwrap(), rag);

    for fmt in [ReportFormat::Csv, ReportFormat::Markdown] {
        let path = emit_report(&rag, fmt, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), render(&rag, fmt));
    }
    let md = render(&rag, ReportFormat::Markdown);
    assert!(md.contains("ROUGE-1") || md.contains("rouge"), "{md}");
    let cmp = rag.comparison.as_ref().unwrap();
    assert_eq!(cmp.baseline_mode, Mode::None);
    for row in &cmp.rows {
        assert!((row.delta - (row.value - row.baseline)).abs() <= 1e-12);
    }
}

#[test]
fn deterministic_runs_serialize_identically() {
    let data = dataset(TaskId::Lamp7, 8);
    let mut a = mock(TaskId::Lamp7, Mode::Rag, "x y");
    a.workers = 3;
    let b = mock(TaskId::Lamp7, Mode::Rag, "x y");
    let ra = run_dataset(&a, &data, None).unwrap();
    let rb = run_dataset(&b, &data, None).unwrap();
    assert_eq!(ra.to_json(), rb.to_json());
}

fn tiny_toy(mode: Mode) -> RunConfig {
    let model = ToyModelConfig {
        max_input_len: 32,
        max_output_len: 6,
        ..ToyModelConfig::sized(256, 16, 2, 1)
    };
    let mut cfg = RunConfig::new(TaskId::Lamp4, mode, BackendConfig::Toy { model, seed: 3 });
    cfg.lora = LoraConfig::with_rank(2);
    cfg.train = TrainConfig {
        epochs: 2,
        batch_size: 4,
        micro_batch: 2,
        ..TrainConfig::default()
    };
    cfg.decode.beam = 2;
    cfg.decode.max_output_tokens = 6;
    cfg.decode.deterministic = true;
    cfg
}

#[test]
fn trained_adapters_are_reused_from_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = AdapterStore::open(dir.path()).unwrap();
    let data = common::marker_dataset(3, 8);
    let first = run_dataset(&tiny_toy(Mode::Peft), &data, Some(&store)).unwrap();
    assert!(first
        .users
        .iter()
        .all(|u| u.adapter == Some(AdapterSource::Trained) && u.training_loss.is_some()));
    assert_eq!(store.len(), 3);

    let second = run_dataset(&tiny_toy(Mode::Peft), &data, Some(&store)).unwrap();
    assert!(second
        .users
        .iter()
        .all(|u| u.adapter == Some(AdapterSource::Store) && u.training_loss.is_none()));
    let preds = |r: &EvalReport| {
        r.users
            .iter()
            .map(|u| u.prediction.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(preds(&first), preds(&second));

    let both = run_dataset(&tiny_toy(Mode::PeftRag), &data, Some(&store)).unwrap();
    assert!(both
        .users
        .iter()
        .all(|u| u.adapter == Some(AdapterSource::Store) && !u.retrieved.is_empty()));

    let mut other_rank = tiny_toy(Mode::Peft);
    other_rank.lora = LoraConfig::with_rank(3);
    let retrained = run_dataset(&other_rank, &data, Some(&store)).unwrap();
    assert!(retrained
        .users
        .iter()
        .all(|u| u.adapter == Some(AdapterSource::Trained)));
    assert_eq!(retrained.privacy.cross_user_accesses, 0);
}

#[test]
fn profile_size_analysis_over_reports() {
    let data = dataset(TaskId::Lamp3, 30);
    let base = run_dataset(&mock(TaskId::Lamp3, Mode::None, "3"), &data, None).unwrap();
    let mut pers = base.clone();
    pers.mode = Mode::Rag;
    for (i, u) in pers.users.iter_mut().enumerate() {
        let m = u.metrics.get_mut(&MetricName::Mae).unwrap();
        // Larger profiles get a lower error, except every fifth user.
        *m += if i % 5 == 0 {
            0.5
        } else if u.profile_size > 5 {
            -0.5
        } else {
            0.25
        };
    }
    let rep = profile_size_analysis(&pers, &base, MetricName::Mae).unwrap();
    assert_eq!(rep.n + rep.excluded_ties, 30);
    assert!(rep.ci_low <= rep.pearson_r && rep.pearson_r <= rep.ci_high);
    assert!((-1.0..=1.0).contains(&rep.pearson_r));

    let mut short = base.clone();
    short.users.pop();
    assert!(profile_size_analysis(&pers, &short, MetricName::Mae).is_err());
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_persona"));
    c.env_remove("PERSONA_LLM_ENDPOINT");
    c
}

fn write_data(dir: &std::path::Path, task: TaskId) -> (std::path::PathBuf, std::path::PathBuf) {
    let (d, g) = (dir.join("data.json"), dir.join("golds.json"));
    dataset(task, 5).write(&d, Some(&g)).unwrap();
    (d, g)
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, golds) = write_data(dir.path(), TaskId::Lamp2);
    let out = dir.path().join("out");
    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"{"*": "comedy"}"#).unwrap();
    let run = |extra: &[&str]| {
        let mut c = cli();
        c.args(["run", "--data"])
            .arg(&data)
            .arg("--golds")
            .arg(&golds)
            .arg("--out")
            .arg(&out);
        c.args(extra);
        c.output().unwrap()
    };

    let ok = run(&[
        "--task",
        "lamp2",
        "--mode",
        "rag",
        "--backend",
        "mock",
        "--mock-script",
        script.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let report = load_report(&out.join("lamp2_rag.json")).unwrap();
    assert_eq!(
        report
            .aggregate(MetricName::Accuracy)
            .map(|v| (0.0..=1.0).contains(&v)),
        Some(true)
    );
    assert!(out.join("lamp2_rag.md").exists());

    assert_eq!(
        run(&["--task", "lamp9", "--backend", "mock"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["--task", "lamp2", "--mode", "peft", "--backend", "mock"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["--task", "lamp2", "--backend", "remote"])
            .status
            .code(),
        Some(2)
    );

    let missing = cli()
        .args([
            "run",
            "--task",
            "lamp2",
            "--backend",
            "mock",
            "--data",
            "/nonexistent/d.json",
            "--golds",
            "/nonexistent/g.json",
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));

    let mut c = cli();
    c.env("PERSONA_LLM_ENDPOINT", "http://127.0.0.1:9/generate");
    c.args(["run", "--task", "lamp2", "--backend", "remote", "--data"])
        .arg(&data)
        .arg("--golds")
        .arg(&golds)
        .arg("--out")
        .arg(&out);
    assert_eq!(c.output().unwrap().status.code(), Some(4));
}

#[test]
fn cli_store_stats_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let empty = cli()
        .args(["store", "stats", "--store"])
        .arg(dir.path().join("s"))
        .args(["--users", "10,1000"])
        .output()
        .unwrap();
    assert_eq!(empty.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&empty.stdout).unwrap();
    assert_eq!(v["user_count"], 0);
    assert_eq!(v["extrapolations"].as_array().unwrap().len(), 2);

    let data = dataset(TaskId::Lamp2, 6);
    let base = run_dataset(&mock(TaskId::Lamp2, Mode::None, "comedy"), &data, None).unwrap();
    let same = run_dataset(&mock(TaskId::Lamp2, Mode::Rag, "comedy"), &data, None).unwrap();
    let (pb, pp) = (
        emit_report(&base, ReportFormat::Json, dir.path()).unwrap(),
        emit_report(&same, ReportFormat::Json, dir.path()).unwrap(),
    );
    let tied = cli()
        .args(["analyze", "--personalized"])
        .arg(&pp)
        .arg("--baseline")
        .arg(&pb)
        .output()
        .unwrap();
    assert_eq!(
        tied.status.code(),
        Some(3),
        "all-tied users leave nothing to correlate"
    );
}
