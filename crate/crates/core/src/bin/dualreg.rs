use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualreg::harness::{
    default_max_iters, gen_files, local_analysis, ode_comparison, run_experiment, snr_sweep, ExperimentConfig,
    ProblemSpec,
};
use dualreg::{Method, RegKind, Result};

/// Iterative regularization by dual gradient descent.
#[derive(Parser)]
#[command(name = "dualreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generated problem instance as JSON.
    Gen(Common),
    /// Run the configured solvers and write trace CSVs and reports.
    Run(Common),
    /// Oracle-stopped DGD over a grid of SNR values.
    Sweep(Common),
    /// Local linear-rate analysis on a densely recorded DGD run.
    Local(Common),
    /// Compare DGD with the RK4-integrated dual flow.
    Ode(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// Stopping-schedule constant.
    #[arg(long)]
    c: Option<f64>,
    /// Regularizer; without a config this selects its default instance.
    #[arg(long, value_enum)]
    reg: Option<RegKind>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self, local: bool) -> Result<ExperimentConfig> {
        let preset = |kind| if local { ProblemSpec::local(kind) } else { ProblemSpec::standard(kind) };
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => {
                let kind = self.reg.unwrap_or(RegKind::L1);
                let method = self.method.unwrap_or(Method::Dgd);
                let mut cfg = ExperimentConfig::standard(kind, method, self.seed.unwrap_or(0));
                cfg.problem = preset(kind);
                cfg
            }
        };
        if let Some(kind) = self.reg.filter(|&k| k != cfg.problem.kind()) {
            cfg.problem = preset(kind);
        }
        if let Some(method) = self.method {
            cfg.methods = vec![method];
            if self.config.is_none() && self.max_iters.is_none() {
                cfg.max_iters = default_max_iters(cfg.problem.kind(), method);
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(snr) = self.snr {
            cfg.snr_db = snr;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(theta) = self.theta {
            cfg.theta = theta;
        }
        if let Some(c) = self.c {
            cfg.c = c;
        }
        if let Some(max_iters) = self.max_iters {
            cfg.max_iters = max_iters;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => {
            let path = gen_files(&args.config(false)?)?;
            println!("wrote {}", path.display());
        }
        Command::Run(args) => {
            for r in run_experiment(&args.config(false)?)? {
                let c = &r.consistency;
                println!(
                    "{} {}: k_best={} d_best={:.3e} descriptor {}/{} interval={:?}",
                    r.problem_id,
                    r.method,
                    c.k_best,
                    c.d_best,
                    r.descriptor_size_at_best,
                    r.truth_descriptor_size,
                    c.interval
                );
            }
        }
        Command::Sweep(args) => {
            let mut cfg = args.config(false)?;
            if cfg.snr_grid.is_empty() {
                cfg.snr_grid = (10..=60).map(f64::from).collect();
            }
            for row in snr_sweep(&cfg)? {
                println!(
                    "snr={:>5.1} k_best={:>6} size={:>3} consistent={}",
                    row.snr_db, row.k_best, row.descriptor_size, row.consistent
                );
            }
        }
        Command::Local(args) => {
            let (a, _) = local_analysis(&args.config(true)?)?;
            println!("{}", serde_json::to_string(&summary(&a)).expect("plain values serialize"));
        }
        Command::Ode(args) => {
            let mut cfg = args.config(false)?;
            cfg.methods = vec![Method::Dgd, Method::Ode];
            let cmp = ode_comparison(&cfg)?;
            println!(
                "dgd interval={:?} ode interval={:?} overlap={:?} max_rel_gap={:?}",
                cmp.dgd.interval, cmp.ode.interval, cmp.overlap, cmp.max_rel_gap
            );
        }
    }
    Ok(())
}

fn summary(a: &dualreg::harness::LocalAnalysis) -> serde_json::Value {
    serde_json::json!({
        "problem_id": a.problem_id,
        "interval": a.consistency.interval,
        "rho": a.rate.as_ref().map(|r| r.rho),
        "inj_ok": a.rate.as_ref().map(|r| r.inj_ok),
        "fitted_slope": a.rate.as_ref().and_then(|r| r.fitted_slope),
        "slope_ok": a.slope_ok,
        "notes": a.notes,
    })
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
