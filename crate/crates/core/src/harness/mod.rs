//! Experiment drivers: problem generation, single runs, SNR sweeps, local
//! rate analysis and the discrete/continuous comparison.

pub mod output;
pub mod problem;

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    build_mdgd, error_envelope_check, fit_rate, linearization_residuals, slope_within_rate, ConsistencyReport,
    EnvelopeReport, LocalRateReport,
};
use crate::error::{Error, Result};
use crate::regularizers::{model_descriptor, ModelDescriptor, RegKind, RegularizerSpec};
use crate::solvers::{self, stopping_schedule, IterateRecord, Iterates, Method, SolverConfig, Trace};
use output::{write_json, write_sweep_file, write_trace_file, SweepRow, TraceRow};
pub use problem::{apply_noise, gen_problem, ProblemInstance, ProblemSpec};

/// Steps of size below this are dominated by rounding in the primal map, so
/// one-step linearization residuals are only compared above it.
pub const LINEARIZATION_MIN_STEP: f64 = 1e-3;

fn default_snr() -> f64 {
    40.0
}
fn default_alpha() -> f64 {
    0.01
}
fn default_methods() -> Vec<Method> {
    vec![Method::Dgd]
}
fn default_theta() -> f64 {
    solvers::DEFAULT_THETA
}
fn default_c() -> f64 {
    1.0
}
fn default_every() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// JSON experiment description; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Seeds the operator and ground truth, and the noise of single runs.
    pub seed: u64,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    /// Ascending SNR values for `sweep`.
    #[serde(default)]
    pub snr_grid: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Stopping-schedule constant.
    #[serde(default = "default_c")]
    pub c: f64,
    pub max_iters: usize,
    #[serde(default = "default_every")]
    pub record_every: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// The global-behaviour setting of `kind` at SNR 40 and `alpha = 0.01`.
    pub fn standard(kind: RegKind, method: Method, seed: u64) -> Self {
        Self {
            problem: ProblemSpec::standard(kind),
            seed,
            snr_db: default_snr(),
            snr_grid: Vec::new(),
            alpha: default_alpha(),
            methods: vec![method],
            theta: default_theta(),
            c: default_c(),
            max_iters: default_max_iters(kind, method),
            record_every: 1,
            output_dir: default_out(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::input(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !self.snr_db.is_finite() || self.snr_grid.iter().any(|s| !s.is_finite()) {
            return Err(Error::input("SNR values must be finite"));
        }
        if self.snr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("snr_grid must be strictly ascending"));
        }
        if self.methods.is_empty() {
            return Err(Error::input("at least one method is required"));
        }
        if !(self.theta > 2.0) {
            return Err(Error::input(format!("theta must exceed 2, got {}", self.theta)));
        }
        if !(self.c > 0.0) {
            return Err(Error::input(format!("c must be positive, got {}", self.c)));
        }
        if self.record_every == 0 {
            return Err(Error::input("record_every must be at least 1"));
        }
        Ok(())
    }

    /// Noiseless instance, identical for every SNR.
    pub fn clean_problem(&self) -> Result<ProblemInstance> {
        gen_problem(&self.problem, self.seed)
    }

    /// Instance observed at `snr_db` with noise seeded by `seed`.
    pub fn problem(&self) -> Result<ProblemInstance> {
        self.clean_problem()?.with_noise(self.snr_db, self.seed)
    }

    pub fn solver_config(&self, problem: &ProblemInstance) -> Result<SolverConfig> {
        Ok(SolverConfig::for_problem(problem, self.alpha, self.max_iters)?
            .with_theta(self.theta)
            .with_record_every(self.record_every))
    }
}

/// Iteration budgets that comfortably cover the consistency interval of the
/// default instances.
pub fn default_max_iters(kind: RegKind, method: Method) -> usize {
    match (kind, method) {
        (RegKind::Nuclear, Method::Adgd) => 500,
        (RegKind::Nuclear, _) => 4000,
        (_, Method::Adgd) => 4000,
        _ => 30000,
    }
}

/// Per-iterate descriptor bookkeeping shared by the drivers.
struct Tracker<'a> {
    reg: &'a RegularizerSpec,
    tol: f64,
    truth: ModelDescriptor,
    truth_norm: f64,
    every: usize,
    last: usize,
    rows: Vec<TraceRow>,
    best: Option<(f64, ModelDescriptor)>,
}

impl<'a> Tracker<'a> {
    fn new(problem: &'a ProblemInstance, reg: &'a RegularizerSpec, every: usize, last: usize) -> Result<Self> {
        let tol = reg.default_descriptor_tol();
        Ok(Self {
            truth: model_descriptor(reg, &problem.w_true, tol)?,
            truth_norm: problem.w_true.norm(),
            reg,
            tol,
            every: every.max(1),
            last,
            rows: Vec::new(),
            best: None,
        })
    }

    fn observe(&mut self, rec: &IterateRecord) -> Result<()> {
        if !rec.k.is_multiple_of(self.every) && rec.k != self.last {
            return Ok(());
        }
        let d = model_descriptor(self.reg, &rec.w, self.tol)?;
        let consistent = d == self.truth;
        self.rows.push(TraceRow::new(rec, self.truth_norm, d.size(), consistent));
        if self.best.as_ref().is_none_or(|(e, _)| rec.err_to_truth < *e) {
            self.best = Some((rec.err_to_truth, d));
        }
        Ok(())
    }

    fn consistency(&self) -> Result<ConsistencyReport> {
        let flags: Vec<_> = self.rows.iter().map(|r| (r.k, r.err_to_truth, r.consistent)).collect();
        ConsistencyReport::from_flags(&flags).ok_or_else(|| Error::InsufficientData("empty trace".into()))
    }

    fn best_descriptor(&self) -> Option<&ModelDescriptor> {
        self.best.as_ref().map(|(_, d)| d)
    }
}

/// Summary written next to each trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem_id: String,
    pub method: Method,
    pub snr_db: f64,
    pub delta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
    pub max_iters: usize,
    pub truth_descriptor_size: usize,
    pub descriptor_size_at_best: usize,
    /// Schedule stopping index for this noise level, where one is defined.
    pub k_schedule: Option<usize>,
    pub consistency: ConsistencyReport,
}

/// Outcome of one streamed solver run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub rows: Vec<TraceRow>,
}

/// Runs `method` without keeping iterates, recording CSV rows and the
/// consistency report.
pub fn stream_run(problem: &ProblemInstance, cfg: &SolverConfig, method: Method, c: f64) -> Result<RunOutcome> {
    let reg = &problem.reg;
    let (cfg, last) = match method {
        Method::Ode => {
            // horizon max_iters * gamma with the configured step
            let steps = (cfg.max_iters as f64 * cfg.gamma / cfg.ode_step * (1.0 + 1e-12)).floor() as usize;
            (cfg.with_max_iters(steps), steps)
        }
        _ => (*cfg, cfg.max_iters),
    };
    let mut tracker = Tracker::new(problem, reg, cfg.record_every, last)?;
    for rec in Iterates::new(problem, reg, &cfg, method)? {
        tracker.observe(&rec?)?;
    }
    let consistency = tracker.consistency()?;
    let k_schedule = if problem.noise_norm > 0.0 {
        stopping_schedule(problem.noise_norm, c, method).ok()
    } else {
        None
    };
    let report = RunReport {
        problem_id: problem.id(),
        method,
        snr_db: problem.snr_db,
        delta: problem.noise_norm,
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        theta: cfg.theta,
        max_iters: cfg.max_iters,
        truth_descriptor_size: tracker.truth.size(),
        descriptor_size_at_best: tracker.best_descriptor().map_or(0, ModelDescriptor::size),
        k_schedule,
        consistency,
    };
    Ok(RunOutcome {
        report,
        rows: tracker.rows,
    })
}

fn trace_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.csv"))
}

fn report_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.json"))
}

/// Writes the generated instance as `problem.json`.
pub fn gen_files(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let path = cfg.output_dir.join("problem.json");
    write_json(&path, &problem)?;
    Ok(path)
}

/// One run per configured method: `trace_<method>.csv` and `report_<method>.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let solver = cfg.solver_config(&problem)?;
    let mut reports = Vec::new();
    for &method in &cfg.methods {
        let out = stream_run(&problem, &solver, method, cfg.c)?;
        write_trace_file(&trace_path(&cfg.output_dir, &format!("trace_{method}")), &out.rows)?;
        write_json(&report_path(&cfg.output_dir, &format!("report_{method}")), &out.report)?;
        reports.push(out.report);
    }
    Ok(reports)
}

/// Noise seed of the `index`-th grid point.
pub fn sweep_noise_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

/// DGD with oracle stopping at every SNR of the grid; writes `sweep.csv`.
pub fn snr_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.snr_grid.is_empty() {
        return Err(Error::input("snr_grid must be non-empty for a sweep"));
    }
    let clean = cfg.clean_problem()?;
    let rows = cfg
        .snr_grid
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| {
            let problem = clean.with_noise(snr, sweep_noise_seed(cfg.seed, i))?;
            let solver = cfg.solver_config(&problem)?;
            let out = stream_run(&problem, &solver, Method::Dgd, cfg.c)?;
            Ok(SweepRow {
                snr_db: snr,
                delta: problem.noise_norm,
                k_best: out.report.consistency.k_best,
                descriptor_size: out.report.descriptor_size_at_best,
                consistent: out.report.consistency.consistent_at_best,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_sweep_file(&cfg.output_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// JSON written by [`local_analysis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAnalysis {
    pub problem_id: String,
    pub consistency: ConsistencyReport,
    /// First consistent iterate of the interval.
    pub anchor_k: Option<usize>,
    pub rate: Option<LocalRateReport>,
    pub slope_ok: Option<bool>,
    /// Largest `|Δ_{k+1} - M Δ_k| / |Δ_k|` over steps above
    /// [`LINEARIZATION_MIN_STEP`] inside the interval.
    pub linearization_max_rel: Option<f64>,
    /// Largest `|Δ_{k+1} - M Δ_k|` over the whole interval.
    pub linearization_max_abs: Option<f64>,
    pub envelope: Option<EnvelopeReport>,
    pub notes: Vec<String>,
}

/// Local rate study on a densely recorded DGD trace.
///
/// Returns the analysis and the trace it was computed from; writes
/// `local_trace.csv` and `local_report.json`.
pub fn local_analysis(cfg: &ExperimentConfig) -> Result<(LocalAnalysis, Trace)> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let reg = &problem.reg;
    let solver = cfg.solver_config(&problem)?.with_record_every(1);
    let trace = solvers::dgd_run(&problem, reg, &solver)?;

    let tol = reg.default_descriptor_tol();
    let truth = model_descriptor(reg, &problem.w_true, tol)?;
    let mut tracker = Tracker::new(&problem, reg, 1, solver.max_iters)?;
    for rec in &trace.records {
        tracker.observe(rec)?;
    }
    write_trace_file(&cfg.output_dir.join("local_trace.csv"), &tracker.rows)?;
    let consistency = tracker.consistency()?;

    let mut analysis = LocalAnalysis {
        problem_id: problem.id(),
        consistency: consistency.clone(),
        anchor_k: None,
        rate: None,
        slope_ok: None,
        linearization_max_rel: None,
        linearization_max_abs: None,
        envelope: None,
        notes: Vec::new(),
    };
    let finish = |analysis: LocalAnalysis, trace: Trace| -> Result<(LocalAnalysis, Trace)> {
        write_json(&cfg.output_dir.join("local_report.json"), &analysis)?;
        Ok((analysis, trace))
    };

    if !reg.kind().is_affine() {
        analysis
            .notes
            .push(format!("rate analysis unsupported for the {} regularizer (curved model manifold)", reg.kind()));
        return finish(analysis, trace);
    }
    let Some((lo, hi)) = consistency.interval else {
        analysis.notes.push("no consistency interval; rate analysis skipped".into());
        return finish(analysis, trace);
    };
    let anchor = trace
        .records
        .iter()
        .find(|r| r.k == lo)
        .expect("interval endpoints are recorded iterates");
    analysis.anchor_k = Some(lo);
    let mut rate = build_mdgd(&problem.x, reg, &anchor.w, &truth, cfg.alpha)?;
    match fit_rate(&trace, &mut rate, (lo, hi)) {
        Ok(slope) => analysis.slope_ok = Some(slope_within_rate(slope, rate.rho, 0.05)),
        Err(Error::InsufficientData(msg)) => analysis.notes.push(format!("insufficient data: {msg}")),
        Err(e) => return Err(e),
    }
    let residuals = linearization_residuals(&trace, &rate.m, (lo, hi));
    analysis.linearization_max_rel = residuals
        .iter()
        .filter(|&&(_, _, step)| step >= LINEARIZATION_MIN_STEP)
        .map(|&(_, r, step)| r / step)
        .reduce(f64::max);
    analysis.linearization_max_abs = residuals.iter().map(|&(_, r, _)| r).reduce(f64::max);
    match error_envelope_check(&trace, &rate, consistency.k_best, consistency.d_best, (lo, hi)) {
        Ok(env) => analysis.envelope = Some(env),
        Err(Error::NotApplicable(msg)) => analysis.notes.push(format!("envelope not applicable: {msg}")),
        Err(e) => return Err(e),
    }
    analysis.rate = Some(rate);
    finish(analysis, trace)
}

/// JSON written by [`ode_comparison`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeComparison {
    pub problem_id: String,
    pub dgd: ConsistencyReport,
    pub ode: ConsistencyReport,
    pub overlap: Option<(usize, usize)>,
    /// `sup |w_ode(k h) - w_dgd(k)| / |w_true|` over the overlap.
    pub max_rel_gap: Option<f64>,
}

/// DGD against the RK4 flow with step `gamma`, iterate by iterate; writes
/// `trace_dgd.csv`, `trace_ode.csv` and `ode_report.json`.
pub fn ode_comparison(cfg: &ExperimentConfig) -> Result<OdeComparison> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let reg = &problem.reg;
    let solver = cfg.solver_config(&problem)?;
    let last = solver.max_iters;
    let mut td = Tracker::new(&problem, reg, solver.record_every, last)?;
    let mut to = Tracker::new(&problem, reg, solver.record_every, last)?;
    let mut gaps: Vec<(usize, f64)> = Vec::new();
    let norm = problem.w_true.norm();
    let dgd = Iterates::new(&problem, reg, &solver, Method::Dgd)?;
    let ode = Iterates::new(&problem, reg, &solver, Method::Ode)?;
    for (a, b) in dgd.zip(ode) {
        let (a, b) = (a?, b?);
        td.observe(&a)?;
        to.observe(&b)?;
        gaps.push((a.k, (&a.w - &b.w).norm() / norm));
    }
    write_trace_file(&trace_path(&cfg.output_dir, "trace_dgd"), &td.rows)?;
    write_trace_file(&trace_path(&cfg.output_dir, "trace_ode"), &to.rows)?;
    let (dgd, ode) = (td.consistency()?, to.consistency()?);
    let overlap = match (dgd.interval, ode.interval) {
        (Some((a, b)), Some((c, d))) if a.max(c) <= b.min(d) => Some((a.max(c), b.min(d))),
        _ => None,
    };
    let max_rel_gap = overlap.map(|(lo, hi)| {
        gaps.iter()
            .filter(|(k, _)| (lo..=hi).contains(k))
            .map(|&(_, g)| g)
            .fold(0.0, f64::max)
    });
    let cmp = OdeComparison {
        problem_id: problem.id(),
        dgd,
        ode,
        overlap,
        max_rel_gap,
    };
    write_json(&report_path(&cfg.output_dir, "ode_report"), &cmp)?;
    Ok(cmp)
}

/// Error at the schedule stopping index for one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub delta: f64,
    pub k: usize,
    pub err_to_truth: f64,
}

/// Runs `method` on `clean` observed with noise of norm exactly `delta` for
/// each entry of `deltas`, stopping at the schedule index for `c`.
pub fn schedule_errors(
    clean: &ProblemInstance,
    alpha: f64,
    c: f64,
    method: Method,
    deltas: &[f64],
    noise_seed: u64,
) -> Result<Vec<ScheduleRow>> {
    deltas
        .par_iter()
        .map(|&delta| {
            let snr = 20.0 * (clean.y_clean.norm() / delta).log10();
            let problem = clean.with_noise(snr, noise_seed)?;
            let k = stopping_schedule(problem.noise_norm, c, method)?;
            let cfg = SolverConfig::for_problem(&problem, alpha, k)?;
            let last = Iterates::new(&problem, &problem.reg, &cfg, method)?
                .last()
                .expect("at least the k = 0 iterate")?;
            Ok(ScheduleRow {
                delta: problem.noise_norm,
                k,
                err_to_truth: last.err_to_truth,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData("log-log fit needs two or more paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::input("log-log fit needs positive data"));
    }
    let lx = DVector::from_iterator(xs.len(), xs.iter().map(|v| v.ln()));
    let ly = DVector::from_iterator(ys.len(), ys.iter().map(|v| v.ln()));
    let (mx, my) = (lx.mean(), ly.mean());
    let cx = lx.add_scalar(-mx);
    let cy = ly.add_scalar(-my);
    Ok(cx.dot(&cy) / cx.norm_squared())
}
