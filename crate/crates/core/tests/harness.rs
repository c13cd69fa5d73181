use spi::datagen::{make_case, CaseId};
use spi::harness::{
    aggregate_mse, emit_results, mean_and_se, read_results, rejection_rates, render_results, run_ablation,
    run_repetition, ExperimentConfig, MethodId, OutputFormat, ResultRecord,
};

fn small_config(threads: usize) -> ExperimentConfig {
    ExperimentConfig {
        k_values: vec![2, 4],
        repetitions: 3,
        n_total: 1500,
        budget: 0.1,
        methods: vec![
            MethodId::LO,
            MethodId::LOF,
            MethodId::BaseSPI_Single,
            MethodId::BaseSPI_Multi,
            MethodId::SPIp_GL,
            MethodId::SPIpp_L1,
        ],
        seed: 77,
        threads,
        ..ExperimentConfig::default()
    }
}

fn record(method: MethodId, k: usize, rep: usize, mse: Option<f64>, reject: Vec<bool>) -> ResultRecord {
    ResultRecord {
        method,
        case: CaseId::Case1,
        k,
        rep,
        mse,
        converged: mse.is_some(),
        n_labeled: 150 + rep,
        minority_count: 30 + rep,
        reject,
    }
}

#[test]
fn ablation_is_independent_of_worker_count() {
    let serial = run_ablation(&small_config(1)).unwrap();
    let parallel = run_ablation(&small_config(3)).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(
        render_results(&serial, OutputFormat::Csv).unwrap(),
        render_results(&parallel, OutputFormat::Csv).unwrap()
    );

    // ordered by (K, repetition, method) as configured
    let cfg = small_config(1);
    assert_eq!(serial.len(), 2 * 3 * cfg.methods.len());
    for (i, r) in serial.iter().enumerate() {
        let m = cfg.methods.len();
        assert_eq!(r.k, cfg.k_values[i / (3 * m)]);
        assert_eq!(r.rep, (i / m) % 3);
        assert_eq!(r.method, cfg.methods[i % m]);
    }
    let cell = run_repetition(&cfg, 4, 1).unwrap();
    let m = cfg.methods.len();
    assert_eq!(cell, serial[(3 + 1) * m..(3 + 2) * m]);
}

#[test]
fn single_wave_methods_share_the_validation_sample() {
    let records = run_ablation(&small_config(0)).unwrap();
    for chunk in records.chunks(6) {
        let single: Vec<&ResultRecord> = chunk.iter().filter(|r| !r.method.is_multiwave()).collect();
        assert!(single.iter().all(|r| r.converged));
        assert!(single.iter().all(|r| r.n_labeled == single[0].n_labeled));
        assert!(single.iter().all(|r| r.minority_count == single[0].minority_count));
        assert!(single.iter().all(|r| r.reject.len() == 11));
    }
    // the cohort and sample do not depend on K
    let k2: Vec<usize> = records.iter().filter(|r| r.k == 2 && r.method == MethodId::LO).map(|r| r.n_labeled).collect();
    let k4: Vec<usize> = records.iter().filter(|r| r.k == 4 && r.method == MethodId::LO).map(|r| r.n_labeled).collect();
    assert_eq!(k2, k4);
    let lo: Vec<_> = records.iter().filter(|r| r.method == MethodId::LO).map(|r| (r.rep, r.mse)).collect();
    assert_eq!(lo[..3], lo[3..]);
}

#[test]
fn aggregates_from_files_equal_in_memory_aggregates() {
    let records = run_ablation(&small_config(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["r.csv", "r.json"] {
        let path = dir.path().join(name);
        emit_results(&records, OutputFormat::from_path(&path), &path).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back, records);
        assert_eq!(aggregate_mse(&back), aggregate_mse(&records));
        let beta0 = make_case(CaseId::Case1).beta0;
        assert_eq!(rejection_rates(&back, &beta0), rejection_rates(&records, &beta0));
    }
}

#[test]
fn emitted_files_have_stable_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    emit_results(&[], OutputFormat::Csv, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "method,case,k,rep,mse,converged,n_labeled,minority_count\n");
    assert_eq!(read_results(&path).unwrap(), Vec::new());

    let one = vec![record(MethodId::SPIp_L1, 8, 3, Some(0.1 + 0.2), vec![true, false, true])];
    for name in ["one.csv", "one.json"] {
        let path = dir.path().join(name);
        emit_results(&one, OutputFormat::from_path(&path), &path).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back[0].mse.unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back, one);
    }
    let csv = render_results(&one, OutputFormat::Csv).unwrap();
    assert!(csv.starts_with("method,case,k,rep,mse,converged,n_labeled,minority_count,reject_0,reject_1,reject_2\n"));
    assert!(csv.contains("spip-l1,case1,8,3,3.0000000000000004e-1,true,153,33,1,0,1"));
    let json: serde_json::Value = serde_json::from_str(&render_results(&one, OutputFormat::Json).unwrap()).unwrap();
    assert_eq!(json[0]["method"], "spip-l1");
    assert_eq!(json[0]["reject_1"], 0);

    let failed = vec![record(MethodId::LO, 2, 0, None, Vec::new())];
    let path = dir.path().join("failed.json");
    emit_results(&failed, OutputFormat::Json, &path).unwrap();
    assert_eq!(read_results(&path).unwrap(), failed);
}

#[test]
fn aggregation_matches_hand_computation() {
    let vals = [0.12, 0.08, 0.31, 0.05, 0.22, 0.17, 0.09, 0.14, 0.26, 0.11];
    let mut records: Vec<ResultRecord> = vals
        .iter()
        .enumerate()
        .map(|(i, &v)| record(MethodId::SPIp_GL, 6, i, Some(v), Vec::new()))
        .collect();
    records.push(record(MethodId::SPIp_GL, 6, 10, None, Vec::new()));
    let s = aggregate_mse(&records);
    assert_eq!(s.len(), 1);
    // sum = 1.55, mean = 0.155; squared deviations sum to 0.06385
    let mean = 0.155;
    let se = (0.06385f64 / 9.0 / 10.0).sqrt();
    assert!((s[0].mean - mean).abs() < 1e-12);
    assert!((s[0].std_error - se).abs() < 1e-12);
    assert_eq!((s[0].n_converged, s[0].n_failed), (10, 1));

    let (m, e) = mean_and_se(&[0.02; 5]);
    assert_eq!((m, e), (0.02, 0.0));
}

#[test]
fn rejection_rates_split_by_true_support() {
    let beta0 = [-1.0, 0.5, 0.0, -0.3, 0.0];
    let records = vec![
        record(MethodId::LO, 2, 0, Some(0.1), vec![true, true, false, true, true]),
        record(MethodId::LO, 2, 1, Some(0.1), vec![false, false, false, true, false]),
        record(MethodId::LO, 2, 2, None, Vec::new()),
    ];
    let r = rejection_rates(&records, &beta0);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].repetitions, 2);
    assert!((r[0].predictive - 0.75).abs() < 1e-15);
    assert!((r[0].non_predictive - 0.25).abs() < 1e-15);
}

#[test]
fn config_json_and_validation() {
    let cfg = ExperimentConfig::from_json(
        r#"{"case_id": "case2", "k_values": [4, 8], "methods": ["spipp-gl", "spip-gl"], "repetitions": 10}"#,
    )
    .unwrap();
    assert_eq!(cfg.case_id, CaseId::Case2);
    assert_eq!(cfg.k_values, vec![4, 8]);
    assert_eq!(cfg.pilot_ratio, 0.3);
    cfg.validate().unwrap();
    let bad = ExperimentConfig {
        k_values: vec![11],
        ..ExperimentConfig::default()
    };
    assert!(run_ablation(&bad).is_err());
    let bad = ExperimentConfig {
        methods: Vec::new(),
        ..ExperimentConfig::default()
    };
    assert!(bad.validate().is_err());
}
