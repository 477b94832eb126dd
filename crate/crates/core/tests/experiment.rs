use pclf::eval::{DatasetSource, ExperimentConfig, ModelSettings};
use pclf::{report_table, run_experiment, ModelKind, SyntheticSpec, TableFormat, TrainConfig};

fn small(models: Vec<ModelKind>) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(DatasetSource::Synthetic(SyntheticSpec {
        n_users: vec![60, 60],
        n_items: vec![80, 80],
        density: 0.2,
        w1: vec![0.8, 0.8],
        rating_peak: 0.9,
        ..SyntheticSpec::default()
    }));
    config.n_repeats = 1;
    config.given_n = vec![5, 10];
    config.n_train_users = 30;
    config.models = models;
    config.model = ModelSettings {
        user_clusters: 4,
        common_clusters: 3,
        specific_clusters: vec![3],
        w1: vec![0.6],
        train: TrainConfig {
            beta_schedule: vec![0.8, 0.9, 1.0],
            max_iters_per_beta: 30,
            ..TrainConfig::default()
        },
        ..ModelSettings::default()
    };
    config.model.nmf.rank = 4;
    config
}

#[test]
fn same_seed_gives_identical_reports() {
    let config = small(ModelKind::ALL.to_vec());
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        report_table(&a, TableFormat::Csv).unwrap(),
        report_table(&b, TableFormat::Csv).unwrap()
    );
}

#[test]
fn single_model_report_has_one_row_per_setting() {
    let report = run_experiment(&small(vec![ModelKind::Pclf])).unwrap();
    // two domains, two Given-N settings
    assert_eq!(report.summary.len(), 4);
    assert!(report.summary.iter().all(|c| c.model == ModelKind::Pclf));
    let table = report_table(&report, TableFormat::Csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "Dataset,Model,Given5,Given10");
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], "pclf");
        for c in &cells[2..] {
            assert_eq!(c.split('.').nth(1).unwrap().len(), 4, "{c}");
        }
    }
}

#[test]
fn csv_table_round_trips_the_summary() {
    let mut config = small(vec![ModelKind::Pclf, ModelKind::RmgmLike]);
    config.n_repeats = 2;
    let report = run_experiment(&config).unwrap();
    let table = report_table(&report, TableFormat::Csv).unwrap();
    for line in table.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let domain = if cells[0] == "D0" { 0 } else { 1 };
        let model: ModelKind = cells[1].parse().unwrap();
        for (i, g) in [5, 10].into_iter().enumerate() {
            let cell = report.cell(model, domain, g).unwrap();
            assert_eq!(cells[2 + i], format!("{:.4}", cell.mean));
            assert_eq!(cell.n_repeats, 2);
        }
    }
}

#[test]
fn pooled_model_is_no_worse_than_per_domain_mixture_at_given_five() {
    let mut config = small(vec![ModelKind::Pclf, ModelKind::Fmm]);
    config.n_repeats = 3;
    config.resample_subsets = true;
    config.given_n = vec![5];
    let report = run_experiment(&config).unwrap();
    let mean = |m| {
        (0..2)
            .map(|z| report.cell(m, z, 5).unwrap().mean)
            .sum::<f64>()
            / 2.0
    };
    let (p, f) = (mean(ModelKind::Pclf), mean(ModelKind::Fmm));
    assert!(p <= f, "pclf {p} vs fmm {f}");
}

#[test]
fn invalid_config_is_rejected() {
    let mut config = small(vec![ModelKind::Pclf]);
    config.n_repeats = 0;
    assert!(run_experiment(&config).is_err());
    let mut config = small(vec![ModelKind::Pclf]);
    config.n_train_users = 60;
    let err = run_experiment(&config).unwrap_err().to_string();
    assert!(err.contains("no test users"), "{err}");
}
