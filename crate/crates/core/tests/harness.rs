use dualreg::harness::output::{read_sweep_csv, read_trace_file, TRACE_HEADER};
use dualreg::harness::{
    gen_files, gen_problem, local_analysis, ode_comparison, run_experiment, snr_sweep, stream_run, ExperimentConfig,
    ProblemSpec,
};
use dualreg::regularizers::{check_source_condition, model_descriptor};
use dualreg::solvers::solve_noiseless;
use dualreg::{Method, RegKind};

fn config(problem: ProblemSpec, seed: u64, max_iters: usize, dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        seed,
        snr_db: 30.0,
        snr_grid: Vec::new(),
        alpha: 0.05,
        methods: vec![Method::Dgd, Method::Adgd],
        theta: 5.0,
        c: 1.0,
        max_iters,
        record_every: 1,
        output_dir: dir.to_path_buf(),
    }
}

fn l1_small() -> ProblemSpec {
    ProblemSpec::L1 { n: 15, p: 40, sparsity: 2 }
}

#[test]
fn trace_csv_round_trips_a_real_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(l1_small(), 3, 300, dir.path());
    let reports = run_experiment(&cfg).unwrap();
    assert_eq!(reports.len(), 2);
    let problem = cfg.problem().unwrap();
    let solver = cfg.solver_config(&problem).unwrap();
    for method in [Method::Dgd, Method::Adgd] {
        let rows = read_trace_file(&dir.path().join(format!("trace_{method}.csv"))).unwrap();
        let fresh = stream_run(&problem, &solver, method, cfg.c).unwrap();
        assert_eq!(rows, fresh.rows);
        assert_eq!(rows.len(), 301);
        assert_eq!(rows[0].step_diff, None);
        assert!(rows[1..].iter().all(|r| r.step_diff.is_some()));
        let text = std::fs::read_to_string(dir.path().join(format!("trace_{method}.csv"))).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER.join(","));
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("report_{method}.json"))).unwrap())
                .unwrap();
        assert_eq!(report["method"], method.name());
        assert_eq!(report["consistency"]["k_best"], fresh.report.consistency.k_best);
    }
    // the DGD schedule for this noise level
    let k = reports[0].k_schedule.unwrap();
    assert_eq!(k, (1.0 / problem.noise_norm).floor() as usize);
}

#[test]
fn zero_iterations_give_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(l1_small(), 1, 0, dir.path());
    let reports = run_experiment(&cfg).unwrap();
    for (r, method) in reports.iter().zip(["dgd", "adgd"]) {
        assert_eq!(r.consistency.k_best, 0);
        let rows = read_trace_file(&dir.path().join(format!("trace_{method}.csv"))).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].descriptor_size, 0);
        assert!((rows[0].err_rel - 1.0).abs() < 1e-15);
        assert!(!rows[0].consistent);
    }
}

#[test]
fn sparse_recording_keeps_the_last_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(l1_small(), 1, 105, dir.path());
    cfg.record_every = 10;
    cfg.methods = vec![Method::Dgd];
    run_experiment(&cfg).unwrap();
    let ks: Vec<usize> = read_trace_file(&dir.path().join("trace_dgd.csv")).unwrap().iter().map(|r| r.k).collect();
    assert_eq!(ks, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 105]);
}

#[test]
fn noiseless_data_recover_the_model() {
    // without noise the limit is the truth whenever a nondegenerate certificate exists
    let mut found = 0;
    for seed in 0..10 {
        let problem = gen_problem(&l1_small(), seed).unwrap().noiseless();
        assert!(problem.snr_db.is_infinite());
        let cert = check_source_condition(&problem.reg, 0.05, &problem.w_true, &problem.x, 1e-9).unwrap();
        if !cert.nondegenerate {
            continue;
        }
        let (w, _) = solve_noiseless(&problem, &problem.reg, 0.05, 1e-13, 2_000_000).unwrap();
        assert!((&w - &problem.w_true).amax() < 1e-6, "seed {seed}");
        assert_eq!(
            model_descriptor(&problem.reg, &w, 0.0).unwrap(),
            model_descriptor(&problem.reg, &problem.w_true, 0.0).unwrap()
        );
        found += 1;
    }
    assert!(found >= 3, "only {found} instances with a certificate");
}

#[test]
fn single_point_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(l1_small(), 2, 2000, dir.path());
    cfg.snr_grid = vec![35.0];
    let rows = snr_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    let file = read_sweep_csv(std::fs::File::open(dir.path().join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(file, rows);
    assert!((20.0 * (cfg.clean_problem().unwrap().y_clean.norm() / rows[0].delta).log10() - 35.0).abs() < 1e-9);
}

#[test]
fn local_analysis_notes_unsupported_and_missing_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let nuclear = ProblemSpec::Nuclear {
        rows: 5,
        cols: 5,
        rank: 1,
        density: 0.6,
    };
    let (a, _) = local_analysis(&config(nuclear, 1, 50, dir.path())).unwrap();
    assert!(a.rate.is_none() && a.slope_ok.is_none());
    assert!(a.notes.iter().any(|n| n.contains("nuclear")));
    assert!(dir.path().join("local_report.json").exists());

    // the origin has an empty support, so a zero-iteration run has no interval
    let (a, trace) = local_analysis(&config(l1_small(), 1, 0, dir.path())).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(a.consistency.interval, None);
    assert!(a.notes.iter().any(|n| n.contains("no consistency interval")));
}

#[test]
fn local_analysis_on_a_short_interval_reports_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(l1_small(), 3, 3000, dir.path());
    let (a, _) = local_analysis(&cfg).unwrap();
    let (lo, _) = a.consistency.interval.unwrap();
    // stop three iterates into the interval, while the error is still falling
    let mut short = cfg.clone();
    short.max_iters = lo + 2;
    let (b, _) = local_analysis(&short).unwrap();
    assert_eq!(b.consistency.interval, Some((lo, lo + 2)));
    assert!(b.slope_ok.is_none());
    assert!(b.notes.iter().any(|n| n.contains("insufficient data")));
}

#[test]
fn flow_comparison_writes_both_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(l1_small(), 4, 400, dir.path());
    let cmp = ode_comparison(&cfg).unwrap();
    let dgd = read_trace_file(&dir.path().join("trace_dgd.csv")).unwrap();
    let ode = read_trace_file(&dir.path().join("trace_ode.csv")).unwrap();
    assert_eq!(dgd.len(), ode.len());
    assert!(dgd.iter().zip(&ode).all(|(a, b)| a.k == b.k && (a.t - b.t).abs() < 1e-12));
    assert_eq!(cmp.overlap.is_some(), cmp.max_rel_gap.is_some());
}

#[test]
fn generation_writes_the_instance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(ProblemSpec::standard(RegKind::Tv1d), 2, 10, dir.path());
    let path = gen_files(&cfg).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(json["seed"], 2);
    assert!((json["snr_db"].as_f64().unwrap() - 30.0).abs() < 1e-9);
    assert_eq!(json["w_true"].as_array().unwrap().len(), 50);
    assert_eq!(json["x"].as_array().unwrap().len(), 20);
    assert_eq!(json["x"][0].as_array().unwrap().len(), 50);
    assert_eq!(json["reg"]["kind"], "tv1d");
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 10);
}
