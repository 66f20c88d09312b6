//! Dual gradient descent, its inertial variant, and the continuous dual flow.
//!
//! All three dynamics act on the dual variable `v` of
//! `min R(w) + alpha/2 |w|^2  s.t.  X w = y` and read the primal iterate off
//! `w = prox_{R/alpha}(-Xᵀv / alpha)`, the gradient of the conjugate of the
//! strongly convexified prior.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::problem::ProblemInstance;
use crate::regularizers::{prox, value, RegularizerSpec};

/// Default inertia for the accelerated scheme.
pub const DEFAULT_THETA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dgd,
    Adgd,
    Ode,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dgd => "dgd",
            Method::Adgd => "adgd",
            Method::Ode => "ode",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
    pub max_iters: usize,
    pub record_every: usize,
    pub ode_step: f64,
}

impl SolverConfig {
    /// `gamma = alpha / |X|^2`, `theta = 5`, dense recording, ODE step `gamma`.
    pub fn for_problem(problem: &ProblemInstance, alpha: f64, max_iters: usize) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::input(format!("alpha must be positive, got {alpha}")));
        }
        let gamma = alpha / (problem.x_norm * problem.x_norm);
        Ok(Self {
            alpha,
            gamma,
            theta: DEFAULT_THETA,
            max_iters,
            record_every: 1,
            ode_step: gamma,
        })
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_ode_step(mut self, step: f64) -> Self {
        self.ode_step = step;
        self
    }

    /// Checks the parameter ranges against an operator of norm `x_norm`.
    pub fn validate(&self, x_norm: f64) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::input(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("gamma", self.gamma)?;
        positive("ode_step", self.ode_step)?;
        let gamma_max = self.alpha / (x_norm * x_norm);
        if self.gamma > gamma_max + 1e-12 {
            return Err(Error::input(format!(
                "step {} exceeds alpha/|X|^2 = {gamma_max}",
                self.gamma
            )));
        }
        if !(self.theta > 2.0) {
            return Err(Error::input(format!("theta must exceed 2, got {}", self.theta)));
        }
        if self.record_every == 0 {
            return Err(Error::input("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// One iterate of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub k: usize,
    /// `k * gamma` for the discrete schemes, `k * ode_step` for the flow.
    pub t: f64,
    #[serde(with = "crate::linops::flat_vector")]
    pub w: DVector<f64>,
    /// `v` for DGD and the flow, `u` for ADGD.
    #[serde(with = "crate::linops::flat_vector")]
    pub v: DVector<f64>,
    /// `-Xᵀv`.
    #[serde(with = "crate::linops::flat_vector")]
    pub z: DVector<f64>,
    pub err_to_truth: f64,
    pub residual: f64,
    /// `|w_k - w_{k-1}|`; absent at `k = 0`.
    pub step_diff: Option<f64>,
    pub dual_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub method: Method,
    pub problem_id: String,
    pub config: SolverConfig,
    /// `|w_true|`, kept for relative errors.
    pub truth_norm: f64,
    pub records: Vec<IterateRecord>,
}

impl Trace {
    /// Record with the smallest error (earliest on ties).
    pub fn best(&self) -> Option<&IterateRecord> {
        self.records
            .iter()
            .reduce(|best, r| if r.err_to_truth < best.err_to_truth { r } else { best })
    }
}

/// `R_α*(z) + <y, v>` where `z = -Xᵀv` and `w = ∇R_α*(z)`.
fn dual_value(reg: &RegularizerSpec, alpha: f64, y: &DVector<f64>, v: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    Ok(z.dot(w) - value(reg, w)? - 0.5 * alpha * w.norm_squared() + y.dot(v))
}

/// Primal map `prox_{R/alpha}(z / alpha)`.
pub fn primal_from_z(reg: &RegularizerSpec, alpha: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
    prox(reg, 1.0 / alpha, &(z / alpha))
}

/// Dual objective `R_α*(-Xᵀv) + <y_δ, v>` with `R_α = R + alpha/2 |.|^2`.
pub fn dual_objective(problem: &ProblemInstance, reg: &RegularizerSpec, alpha: f64, v: &DVector<f64>) -> Result<f64> {
    if v.len() != problem.y_noisy.len() {
        return Err(Error::DimensionMismatch {
            expected: problem.y_noisy.len(),
            got: v.len(),
        });
    }
    let z = -problem.x.apply_transpose(v);
    let w = primal_from_z(reg, alpha, &z)?;
    dual_value(reg, alpha, &problem.y_noisy, v, &z, &w)
}

/// Early-stopping index: `floor(c / delta)` for DGD, `ceil(c delta^{-1/2})` for ADGD.
pub fn stopping_schedule(delta: f64, c: f64, method: Method) -> Result<usize> {
    if !(delta > 0.0) || !(c > 0.0) {
        return Err(Error::input(format!("delta and c must be positive, got {delta}, {c}")));
    }
    match method {
        Method::Dgd => {
            if c < delta {
                return Err(Error::input(format!("DGD schedule needs c >= delta, got c={c}, delta={delta}")));
            }
            Ok((c / delta).floor() as usize)
        }
        Method::Adgd => Ok((c / delta.sqrt()).ceil() as usize),
        Method::Ode => Err(Error::NotApplicable("no discrete stopping schedule for the flow".into())),
    }
}

/// Streaming iterator over every iterate `k = 0..=max_iters` of a run.
pub struct Iterates<'a> {
    problem: &'a ProblemInstance,
    reg: &'a RegularizerSpec,
    cfg: SolverConfig,
    method: Method,
    y: &'a DVector<f64>,
    k: usize,
    v: DVector<f64>,
    u_prev: DVector<f64>,
    w_prev: Option<DVector<f64>>,
    bound: f64,
    done: bool,
}

impl<'a> Iterates<'a> {
    pub fn new(problem: &'a ProblemInstance, reg: &'a RegularizerSpec, cfg: &SolverConfig, method: Method) -> Result<Self> {
        Self::with_observation(problem, reg, cfg, method, &problem.y_noisy)
    }

    /// Runs on an explicit observation (e.g. `problem.y_clean`) instead of `y_noisy`.
    pub fn with_observation(
        problem: &'a ProblemInstance,
        reg: &'a RegularizerSpec,
        cfg: &SolverConfig,
        method: Method,
        y: &'a DVector<f64>,
    ) -> Result<Self> {
        cfg.validate(problem.x_norm)?;
        reg.check_dim(problem.x.cols())?;
        if y.len() != problem.x.rows() {
            return Err(Error::DimensionMismatch {
                expected: problem.x.rows(),
                got: y.len(),
            });
        }
        let n = problem.x.rows();
        Ok(Self {
            problem,
            reg,
            cfg: *cfg,
            method,
            y,
            k: 0,
            v: DVector::zeros(n),
            u_prev: DVector::zeros(n),
            w_prev: None,
            bound: 1e12 * (1.0 + y.norm()),
            done: false,
        })
    }

    fn primal(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let z = -self.problem.x.apply_transpose(v);
        let w = primal_from_z(self.reg, self.cfg.alpha, &z)?;
        Ok((z, w))
    }

    /// Dual flow field `X prox(-Xᵀv/alpha) - y`.
    fn field(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, w) = self.primal(v)?;
        Ok(self.problem.x.apply(&w) - self.y)
    }

    fn step(&mut self) -> Result<IterateRecord> {
        let norm = self.v.norm();
        if !norm.is_finite() || norm > self.bound {
            return Err(Error::Divergence { iteration: self.k, norm });
        }
        let cfg = self.cfg;
        let last = self.k >= cfg.max_iters;
        let (dual, z, w, fit) = match self.method {
            Method::Dgd => {
                let (z, w) = self.primal(&self.v)?;
                let fit = self.problem.x.apply(&w) - self.y;
                let dual = self.v.clone();
                if !last {
                    self.v.axpy(cfg.gamma, &fit, 1.0);
                }
                (dual, z, w, fit)
            }
            Method::Adgd => {
                let (_, r) = self.primal(&self.v)?;
                let u = &self.v + (self.problem.x.apply(&r) - self.y) * cfg.gamma;
                let (z, w) = self.primal(&u)?;
                let fit = self.problem.x.apply(&w) - self.y;
                if !last {
                    let beta = (self.k as f64 - 1.0) / (self.k as f64 + cfg.theta);
                    self.v = &u + (&u - &self.u_prev) * beta;
                }
                self.u_prev = u.clone();
                (u, z, w, fit)
            }
            Method::Ode => {
                let (z, w) = self.primal(&self.v)?;
                let fit = self.problem.x.apply(&w) - self.y;
                let dual = self.v.clone();
                if !last {
                    let h = cfg.ode_step;
                    let k1 = &fit;
                    let k2 = self.field(&(&self.v + k1 * (0.5 * h)))?;
                    let k3 = self.field(&(&self.v + &k2 * (0.5 * h)))?;
                    let k4 = self.field(&(&self.v + &k3 * h))?;
                    self.v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                }
                (dual, z, w, fit)
            }
        };
        let dual_objective = dual_value(self.reg, cfg.alpha, self.y, &dual, &z, &w)?;
        let step_diff = self.w_prev.as_ref().map(|prev| (&w - prev).norm());
        let dt = match self.method {
            Method::Ode => cfg.ode_step,
            _ => cfg.gamma,
        };
        let record = IterateRecord {
            k: self.k,
            t: self.k as f64 * dt,
            err_to_truth: (&w - &self.problem.w_true).norm(),
            residual: fit.norm(),
            step_diff,
            dual_objective,
            v: dual,
            z,
            w: w.clone(),
        };
        self.w_prev = Some(w);
        self.k += 1;
        Ok(record)
    }
}

impl Iterator for Iterates<'_> {
    type Item = Result<IterateRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.k > self.cfg.max_iters {
            return None;
        }
        let out = self.step();
        if out.is_err() {
            self.done = true;
        }
        Some(out)
    }
}

/// Runs `method` and keeps every `record_every`-th iterate plus the last one.
pub fn run(problem: &ProblemInstance, reg: &RegularizerSpec, cfg: &SolverConfig, method: Method) -> Result<Trace> {
    let every = cfg.record_every.max(1);
    let mut records = Vec::with_capacity(cfg.max_iters / every + 2);
    for rec in Iterates::new(problem, reg, cfg, method)? {
        let rec = rec?;
        if rec.k % every == 0 || rec.k == cfg.max_iters {
            records.push(rec);
        }
    }
    Ok(Trace {
        method,
        problem_id: problem.id(),
        config: *cfg,
        truth_norm: problem.w_true.norm(),
        records,
    })
}

pub fn dgd_run(problem: &ProblemInstance, reg: &RegularizerSpec, cfg: &SolverConfig) -> Result<Trace> {
    run(problem, reg, cfg, Method::Dgd)
}

pub fn adgd_run(problem: &ProblemInstance, reg: &RegularizerSpec, cfg: &SolverConfig) -> Result<Trace> {
    run(problem, reg, cfg, Method::Adgd)
}

/// RK4 integration of the dual flow with step `cfg.ode_step` up to time `horizon`.
pub fn ode_run(problem: &ProblemInstance, reg: &RegularizerSpec, cfg: &SolverConfig, horizon: f64) -> Result<Trace> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::input(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / cfg.ode_step * (1.0 + 1e-12)).floor() as usize;
    run(problem, reg, &cfg.with_max_iters(steps), Method::Ode)
}

/// DGD on the clean observation until `|v_{k+1} - v_k| <= tol (1 + |v_k|)`.
///
/// Returns the primal-dual pair at the final dual iterate.
pub fn solve_noiseless(
    problem: &ProblemInstance,
    reg: &RegularizerSpec,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let cfg = SolverConfig::for_problem(problem, alpha, max_iters)?;
    cfg.validate(problem.x_norm)?;
    let x = &problem.x;
    let y = &problem.y_clean;
    let mut v = DVector::zeros(x.rows());
    let mut last = f64::INFINITY;
    for _ in 0..max_iters {
        let w = primal_from_z(reg, alpha, &-x.apply_transpose(&v))?;
        let step = (x.apply(&w) - y) * cfg.gamma;
        let next = &v + &step;
        last = step.norm() / (1.0 + v.norm());
        if !next.norm().is_finite() {
            return Err(Error::NoConvergence {
                iterations: max_iters,
                residual: last,
            });
        }
        v = next;
        if last <= tol {
            let w = primal_from_z(reg, alpha, &-x.apply_transpose(&v))?;
            return Ok((w, v));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::DenseOperator;
    use approx::assert_relative_eq;

    fn scalar_problem() -> ProblemInstance {
        let x = DenseOperator::from_row_slice(1, 1, &[1.0]).unwrap();
        let reg = RegularizerSpec::l1(1).unwrap();
        ProblemInstance::from_parts(x, DVector::from_element(1, 2.0), DVector::from_element(1, 2.0), reg, 0).unwrap()
    }

    #[test]
    fn scalar_dgd_hand_iteration() {
        let p = scalar_problem();
        let cfg = SolverConfig::for_problem(&p, 1.0, 5).unwrap();
        assert_eq!(cfg.gamma, 1.0);
        let tr = dgd_run(&p, &p.reg, &cfg).unwrap();
        let v: Vec<f64> = tr.records.iter().map(|r| r.v[0]).collect();
        let w: Vec<f64> = tr.records.iter().map(|r| r.w[0]).collect();
        assert_eq!(v, vec![0.0, -2.0, -3.0, -3.0, -3.0, -3.0]);
        assert_eq!(w, vec![0.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(tr.records[0].step_diff, None);
        assert_eq!(tr.records[1].step_diff, Some(1.0));
        for r in &tr.records {
            assert_eq!(r.z[0], -r.v[0]);
        }
    }

    #[test]
    fn scalar_dual_objective() {
        let p = scalar_problem();
        assert_eq!(dual_objective(&p, &p.reg, 1.0, &DVector::zeros(1)).unwrap(), 0.0);
        // conjugate of |w| + w^2/2 at 3: sup 3w - |w| - w^2/2 = 2 at w = 2
        assert_relative_eq!(dual_objective(&p, &p.reg, 1.0, &DVector::from_element(1, -3.0)).unwrap(), -4.0);
        // -3 is the minimizer
        for v in [-3.1, -2.9, -2.0, -4.0] {
            assert!(dual_objective(&p, &p.reg, 1.0, &DVector::from_element(1, v)).unwrap() > -4.0);
        }
    }

    #[test]
    fn scalar_noiseless_limit() {
        let p = scalar_problem();
        let (w, v) = solve_noiseless(&p, &p.reg, 1.0, 1e-12, 100).unwrap();
        assert_eq!((w[0], v[0]), (2.0, -3.0));
    }

    #[test]
    fn no_convergence_is_reported() {
        let p = scalar_problem();
        assert!(matches!(
            solve_noiseless(&p, &p.reg, 1.0, 1e-12, 1),
            Err(Error::NoConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn zero_iterations_gives_single_zero_record() {
        let p = scalar_problem();
        let cfg = SolverConfig::for_problem(&p, 1.0, 0).unwrap();
        for m in [Method::Dgd, Method::Adgd, Method::Ode] {
            let tr = run(&p, &p.reg, &cfg, m).unwrap();
            assert_eq!(tr.records.len(), 1);
            assert_eq!(tr.records[0].k, 0);
        }
        let tr = dgd_run(&p, &p.reg, &cfg).unwrap();
        assert_eq!(tr.records[0].w[0], 0.0);
    }

    #[test]
    fn thinning_keeps_last() {
        let p = scalar_problem();
        let cfg = SolverConfig::for_problem(&p, 1.0, 7).unwrap().with_record_every(3);
        let ks: Vec<usize> = dgd_run(&p, &p.reg, &cfg).unwrap().records.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 3, 6, 7]);
    }

    #[test]
    fn adgd_first_steps() {
        let p = scalar_problem();
        let cfg = SolverConfig::for_problem(&p, 1.0, 3).unwrap();
        let tr = adgd_run(&p, &p.reg, &cfg).unwrap();
        // k = 0: r = 0, u0 = -2, v1 = u0 - (u0 - 0)/theta
        assert_eq!(tr.records[0].v[0], -2.0);
        let v1 = -2.0 * (1.0 - 1.0 / 5.0);
        // k = 1: r = prox(-v1) and u1 = v1 + (r - 2); inertia vanishes so v2 = u1
        let r1 = (-v1 - 1.0f64).max(0.0);
        let u1 = v1 + (r1 - 2.0);
        assert_relative_eq!(tr.records[1].v[0], u1, epsilon = 1e-15);
        let r2 = (-u1 - 1.0f64).max(0.0);
        assert_relative_eq!(tr.records[2].v[0], u1 + (r2 - 2.0), epsilon = 1e-15);
    }

    #[test]
    fn zero_observation_stays_at_origin() {
        let x = DenseOperator::from_row_slice(2, 3, &[1.0, 0.5, -1.0, 0.0, 2.0, 1.0]).unwrap();
        let reg = RegularizerSpec::tv1d(3).unwrap();
        let p = ProblemInstance::from_parts(x, DVector::zeros(3), DVector::zeros(2), reg.clone(), 0).unwrap();
        let cfg = SolverConfig::for_problem(&p, 0.5, 20).unwrap();
        for m in [Method::Dgd, Method::Adgd, Method::Ode] {
            for r in run(&p, &reg, &cfg, m).unwrap().records {
                assert!(r.w.iter().chain(r.v.iter()).all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn ode_inactive_region_is_linear() {
        // |Xᵀv| stays below alpha, so w = 0 and v(t) = -y t
        let x = DenseOperator::from_row_slice(1, 1, &[1.0]).unwrap();
        let reg = RegularizerSpec::l1(1).unwrap();
        let p = ProblemInstance::from_parts(x, DVector::from_element(1, 0.1), DVector::from_element(1, 0.1), reg.clone(), 0)
            .unwrap();
        let cfg = SolverConfig::for_problem(&p, 1.0, 0).unwrap().with_ode_step(0.5);
        let tr = ode_run(&p, &reg, &cfg, 5.0).unwrap();
        assert_eq!(tr.records.len(), 11);
        for r in &tr.records {
            assert_relative_eq!(r.v[0], -0.1 * r.t, epsilon = 1e-12);
            assert_eq!(r.w[0], 0.0);
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(stopping_schedule(0.01, 1.0, Method::Dgd).unwrap(), 100);
        assert_eq!(stopping_schedule(0.01, 1.0, Method::Adgd).unwrap(), 10);
        assert_eq!(stopping_schedule(0.3, 0.3, Method::Dgd).unwrap(), 1);
        assert!(stopping_schedule(0.5, 0.1, Method::Dgd).is_err());
        assert!(stopping_schedule(0.0, 1.0, Method::Adgd).is_err());
        assert!(stopping_schedule(0.1, 1.0, Method::Ode).is_err());
    }

    #[test]
    fn config_validation() {
        let p = scalar_problem();
        let cfg = SolverConfig::for_problem(&p, 1.0, 10).unwrap();
        assert!(cfg.validate(1.0).is_ok());
        assert!(cfg.with_gamma(1.5).validate(1.0).is_err());
        assert!(cfg.with_theta(2.0).validate(1.0).is_err());
        assert!(cfg.with_record_every(0).validate(1.0).is_err());
        assert!(SolverConfig::for_problem(&p, -1.0, 10).is_err());
    }

    #[test]
    fn divergence_is_caught() {
        let p = scalar_problem();
        let cfg = SolverConfig {
            alpha: 1.0,
            gamma: 1.0,
            theta: 5.0,
            max_iters: 10,
            record_every: 1,
            ode_step: 1e200,
        };
        let err = run(&p, &p.reg, &cfg, Method::Ode).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 1, .. }), "{err}");
    }
}
