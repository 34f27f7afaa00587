use qmng::full_models::ModelKind;
use qmng::harness::config::{protocol, CollocationConfig, ParamSpec};
use qmng::harness::pipeline::{self, ErrorReport};
use qmng::harness::{run_experiment, ExperimentConfig, Method};
use qmng::reduced_interp::Strategy;

fn small_wave(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelKind::Wave2d,
        points: Some(32),
        t_end: Some(1.0),
        training_params: Some(ParamSpec::Count(6)),
        test_params: Some(vec![0.3, 0.7]),
        snapshot_stride: Some(20),
        n: vec![5, 10],
        methods: vec![Method::QmngLinear],
        output_dir: dir.to_path_buf(),
        record_timings: false,
        ..Default::default()
    }
}

#[test]
fn config_toml_round_trip() {
    let cfg = ExperimentConfig {
        model: ModelKind::Burgers,
        n: vec![4, 8],
        gamma: 0.5,
        pool: Some(12),
        methods: vec![Method::Qmng, Method::Interp],
        collocation: vec![CollocationConfig {
            m: 64,
            strategy: Strategy::UniformResampled,
        }],
        training_params: Some(ParamSpec::List(vec![0.3, 0.5])),
        ..Default::default()
    };
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);

    let parsed = ExperimentConfig::from_toml_str(
        r#"
        model = "vlasov"
        n = [5, 10]
        methods = ["qmng", "constant-testspace"]
        training_params = 8
        "#,
    )
    .unwrap();
    assert_eq!(parsed.model, ModelKind::Vlasov);
    assert_eq!(parsed.training_params().len(), 8);
    assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
}

#[test]
fn invalid_configs_are_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = ExperimentConfig {
        n: vec![5, 30],
        pool: Some(20),
        output_dir: out.clone(),
        ..Default::default()
    };
    assert!(run_experiment(&cfg).is_err());
    assert!(!out.exists());

    let bad = [
        ExperimentConfig {
            model: ModelKind::Burgers,
            methods: vec![Method::QmngLinear],
            ..Default::default()
        },
        ExperimentConfig {
            methods: vec![Method::Interp],
            ..Default::default()
        },
        ExperimentConfig {
            test_params: Some(vec![1.5]),
            ..Default::default()
        },
        ExperimentConfig {
            gamma: -1.0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn desk_protocol_uses_distinct_midpoints() {
    for kind in [ModelKind::Wave2d, ModelKind::Vlasov, ModelKind::Burgers] {
        let p = protocol(kind, qmng::full_models::Scale::Desk);
        let cfg = ExperimentConfig {
            model: kind,
            ..Default::default()
        };
        let train = cfg.training_params();
        assert_eq!(train.len(), p.training_count);
        assert_eq!(p.test_params.len(), 5);
        for (i, &t) in p.test_params.iter().enumerate() {
            assert!(train.iter().all(|&x| (x - t).abs() > 1e-12));
            assert!(p.test_params[..i].iter().all(|&u| u != t));
        }
        let paper = protocol(kind, qmng::full_models::Scale::Paper);
        assert_eq!(paper.test_params.len(), 5);
    }
}

#[test]
fn end_to_end_smoke_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_wave(a.path())).unwrap();
    let full_dim = small_wave(a.path()).full_model().unwrap().state_dim();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let method_rows: Vec<_> = report.rows.iter().filter(|r| r.method == "qmng-linear").collect();
    assert_eq!(method_rows.len(), 2);
    assert_eq!(report.rows.iter().filter(|r| r.method == "reconstruction").count(), 2);
    for r in &method_rows {
        assert!(r.error_mean.is_finite() && r.error_mean >= 0.0);
        assert_eq!(r.unstable_count, 0);
        assert_eq!(r.m, full_dim);
    }

    run_experiment(&small_wave(b.path())).unwrap();
    let csv_a = std::fs::read(a.path().join("report.csv")).unwrap();
    let csv_b = std::fs::read(b.path().join("report.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let header = String::from_utf8(csv_a).unwrap();
    assert!(header.starts_with(
        "model,n,method,gamma,m,error_mean,error_std,unstable_count,online_seconds,offline_seconds\n"
    ));
    let rows = ErrorReport::read_csv(a.path().join("report.csv")).unwrap();
    assert_eq!(rows, report.rows);

    // stages run separately from disk give the same report
    let cfg = small_wave(a.path());
    let again = pipeline::evaluate_from_disk(&cfg).unwrap();
    assert_eq!(again.rows, report.rows);
}

#[test]
fn staged_pipeline_matches_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        methods: vec![Method::Qmng, Method::ConstantTestspace],
        n: vec![4],
        ..small_wave(dir.path())
    };
    let model = cfg.full_model().unwrap();
    let data = pipeline::generate(&cfg, &model).unwrap();
    pipeline::train(&cfg, &data.train).unwrap();
    let ms = pipeline::load_manifolds(&cfg).unwrap();
    let store = pipeline::precompute(&cfg, &model, &ms).unwrap();
    let loaded = pipeline::load_operators(&cfg, &model).unwrap();
    assert_eq!(store.len(), loaded.len());
    let (runs, failures) = pipeline::simulate(&cfg, &model, &ms, &loaded);
    assert!(failures.is_empty(), "{failures:?}");
    assert_eq!(runs.len(), 2);
    let staged = pipeline::evaluate_from_disk(&cfg).unwrap();

    let other = tempfile::tempdir().unwrap();
    let full = run_experiment(&ExperimentConfig {
        output_dir: other.path().to_path_buf(),
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(staged.rows, full.rows);
    for r in &full.rows {
        assert!(r.error_mean.is_finite());
    }
}

#[test]
fn memory_budget_failure_only_skips_that_manifold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        memory_budget_bytes: 1,
        ..small_wave(dir.path())
    };
    let report = run_experiment(&cfg).unwrap();
    assert!(!report.failures.is_empty());
    assert!(report.rows.iter().all(|r| r.method == "reconstruction"));
    assert_eq!(report.rows.len(), 2);
}
