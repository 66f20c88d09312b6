//! Model-consistency detection and local linear-rate diagnostics on traces.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::DenseOperator;
use crate::regularizers::{model_descriptor, riemannian_hessian, tangent_basis, ModelDescriptor, RegularizerSpec};
use crate::solvers::Trace;

/// Relative step size below which double-precision rounding hides the decay.
pub const STAGNATION_FLOOR: f64 = 1e-13;

/// Default restricted-injectivity threshold, relative to `|X|`.
pub const INJ_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Oracle stopping index: smallest recorded `k` with minimal error.
    pub k_best: usize,
    pub d_best: f64,
    /// Maximal run of consistent recorded iterates containing `k_best`.
    pub interval: Option<(usize, usize)>,
    pub consistent_at_best: bool,
}

impl ConsistencyReport {
    /// Builds the report from per-record `(k, err_to_truth, consistent)`
    /// triples sorted by `k`. `None` for an empty slice.
    pub fn from_flags(rows: &[(usize, f64, bool)]) -> Option<Self> {
        let best = (0..rows.len()).reduce(|b, i| if rows[i].1 < rows[b].1 { i } else { b })?;
        let (k_best, d_best, consistent_at_best) = rows[best];
        let interval = consistent_at_best.then(|| {
            let lo = (0..=best).rev().take_while(|&i| rows[i].2).last().unwrap_or(best);
            let hi = (best..rows.len()).take_while(|&i| rows[i].2).last().unwrap_or(best);
            (rows[lo].0, rows[hi].0)
        });
        Some(Self {
            k_best,
            d_best,
            interval,
            consistent_at_best,
        })
    }
}

/// Per-record descriptor equality with `truth`.
pub fn consistency_flags(trace: &Trace, truth: &ModelDescriptor, reg: &RegularizerSpec, tol: f64) -> Result<Vec<bool>> {
    trace
        .records
        .iter()
        .map(|r| Ok(model_descriptor(reg, &r.w, tol)? == *truth))
        .collect()
}

pub fn consistency_report(trace: &Trace, truth: &ModelDescriptor, reg: &RegularizerSpec, tol: f64) -> Result<ConsistencyReport> {
    if truth.kind() != reg.kind() {
        return Err(Error::input(format!(
            "truth descriptor kind {} does not match regularizer {}",
            truth.kind(),
            reg.kind()
        )));
    }
    let flags = consistency_flags(trace, truth, reg, tol)?;
    let rows: Vec<_> = trace
        .records
        .iter()
        .zip(flags)
        .map(|(r, f)| (r.k, r.err_to_truth, f))
        .collect();
    ConsistencyReport::from_flags(&rows).ok_or_else(|| Error::InsufficientData("empty trace".into()))
}

/// Linearized iteration on the model tangent space at an anchor iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRateReport {
    pub p_t: DenseOperator,
    /// `P_T - |X|^{-2} P_T (I + H/alpha)^{-1} X_Tᵀ X_T`.
    pub m: DenseOperator,
    /// Eigenvalues of `m` restricted to `T`, ascending.
    pub eigenvalues_t: Vec<f64>,
    pub rho: f64,
    pub sigma_min_t: f64,
    pub inj_ok: bool,
    pub fitted_slope: Option<f64>,
    pub window: Option<(usize, usize)>,
}

/// Builds the DGD iteration matrix at `w_anchor` on the model of `d`.
pub fn build_mdgd(
    x: &DenseOperator,
    reg: &RegularizerSpec,
    w_anchor: &nalgebra::DVector<f64>,
    d: &ModelDescriptor,
    alpha: f64,
) -> Result<LocalRateReport> {
    if !(alpha > 0.0) {
        return Err(Error::input(format!("alpha must be positive, got {alpha}")));
    }
    if x.cols() != reg.dim() {
        return Err(Error::DimensionMismatch {
            expected: reg.dim(),
            got: x.cols(),
        });
    }
    let h = riemannian_hessian(reg, w_anchor, d)?.into_matrix();
    let actual = model_descriptor(reg, w_anchor, 0.0)?;
    if actual != *d {
        return Err(Error::input("anchor iterate does not lie on the given model"));
    }
    let p = reg.dim();
    let b = tangent_basis(reg, d)?;
    let pt = &b * b.transpose();
    let xn2 = x.spectral_norm().powi(2);

    let xt = x.matrix() * &pt;
    let w_t = DMatrix::identity(p, p) + &h / alpha;
    let w_inv = w_t
        .try_inverse()
        .ok_or_else(|| Error::input("I + H/alpha is not invertible"))?;
    let m = &pt - (&pt * w_inv * xt.transpose() * &xt) / xn2;

    // On T the map is I - A^{-1} G / |X|^2 with A = I + BᵀHB/alpha and
    // G = BᵀXᵀXB; A^{-1/2} G A^{-1/2} is symmetric with the same spectrum.
    let dim_t = b.ncols();
    let xb = x.matrix() * &b;
    let g = xb.transpose() * &xb;
    let a = DMatrix::identity(dim_t, dim_t) + b.transpose() * &h * &b / alpha;
    let a_eig = SymmetricEigen::new(a);
    let a_inv_sqrt = &a_eig.eigenvectors
        * DMatrix::from_diagonal(&a_eig.eigenvalues.map(|e| 1.0 / e.sqrt()))
        * a_eig.eigenvectors.transpose();
    let s = &a_inv_sqrt * g * &a_inv_sqrt;
    let s = (&s + s.transpose()) * 0.5;
    let mut eigenvalues_t: Vec<f64> = s.symmetric_eigenvalues().iter().map(|l| 1.0 - l / xn2).collect();
    eigenvalues_t.sort_by(f64::total_cmp);
    let rho = eigenvalues_t.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));

    let sigma_min_t = if dim_t == 0 {
        f64::INFINITY
    } else if dim_t > x.rows() {
        0.0
    } else {
        SVD::new(xb, false, false).singular_values.min()
    };
    let inj_ok = sigma_min_t > INJ_TOL * xn2.sqrt();

    Ok(LocalRateReport {
        p_t: DenseOperator::new(pt)?,
        m: DenseOperator::new(m)?,
        eigenvalues_t,
        rho,
        sigma_min_t,
        inj_ok,
        fitted_slope: None,
        window: None,
    })
}

/// Least-squares slope of `ln step_diff` against `k` over the recorded
/// iterates in `interval`, ignoring steps below the stagnation floor.
pub fn fit_rate(trace: &Trace, report: &mut LocalRateReport, interval: (usize, usize)) -> Result<f64> {
    let (lo, hi) = interval;
    let inside: Vec<_> = trace.records.iter().filter(|r| r.k >= lo && r.k <= hi).collect();
    if inside.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs at least 4 recorded iterates, interval has {}",
            inside.len()
        )));
    }
    let floor = STAGNATION_FLOOR * (1.0 + trace.truth_norm);
    let pts: Vec<(f64, f64)> = inside
        .iter()
        .filter_map(|r| r.step_diff.filter(|&s| s >= floor).map(|s| (r.k as f64, s.ln())))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "only {} steps above the stagnation floor",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mk = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mk).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mk) * (p.1 - ml)).sum();
    let slope = sxy / sxx;
    report.fitted_slope = Some(slope);
    report.window = Some((pts[0].0 as usize, pts[pts.len() - 1].0 as usize));
    Ok(slope)
}

/// Whether a fitted slope respects the predicted geometric decay `rho^k`.
pub fn slope_within_rate(slope: f64, rho: f64, slack: f64) -> bool {
    slope <= rho.ln() + slack
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// Smallest constant making the envelope hold on the interval.
    pub d: f64,
    /// Record where the envelope with `d` is attained.
    pub tight_at: Option<usize>,
    pub holds: bool,
}

/// Fits `D` in `err_k <= d_best + D rho^{min(k, k_best) - k_lo} (1 - rho^{|k - k_best|}) / (1 - rho)`
/// over the recorded iterates of `interval`.
pub fn error_envelope_check(
    trace: &Trace,
    report: &LocalRateReport,
    k_best: usize,
    d_best: f64,
    interval: (usize, usize),
) -> Result<EnvelopeReport> {
    let rho = report.rho;
    if !(rho < 1.0) {
        return Err(Error::NotApplicable(format!("envelope needs rho < 1, got {rho}")));
    }
    let (lo, hi) = interval;
    if lo > k_best || k_best > hi {
        return Err(Error::input(format!("k_best {k_best} outside interval ({lo}, {hi})")));
    }
    let floor = STAGNATION_FLOOR * (1.0 + trace.truth_norm);
    let mut log_d = f64::NEG_INFINITY;
    let mut tight_at = None;
    for r in trace.records.iter().filter(|r| r.k >= lo && r.k <= hi) {
        let excess = r.err_to_truth - d_best;
        if r.k == k_best || excess <= 0.0 || r.step_diff.is_some_and(|s| s < floor) {
            continue;
        }
        let gap = r.k.abs_diff(k_best) as f64;
        let log_shape = if rho == 0.0 {
            // rho^0 = 1 at k = k_lo, zero afterwards
            if r.k.min(k_best) == lo {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            (r.k.min(k_best) - lo) as f64 * rho.ln() + (-(gap * rho.ln()).exp_m1()).ln() - (1.0 - rho).ln()
        };
        let candidate = excess.ln() - log_shape;
        if candidate > log_d {
            log_d = candidate;
            tight_at = Some(r.k);
        }
    }
    let d = log_d.exp();
    Ok(EnvelopeReport {
        d,
        tight_at,
        holds: d.is_finite(),
    })
}

/// One-step linearization residuals `|Δ_{k+1} - M Δ_k|` with `Δ_k = w_k - w_{k-1}`,
/// at every `k` whose neighbours `k - 1`, `k + 1` are recorded inside `interval`.
/// Returns `(k, residual, |Δ_k|)`.
pub fn linearization_residuals(trace: &Trace, m: &DenseOperator, interval: (usize, usize)) -> Vec<(usize, f64, f64)> {
    let (lo, hi) = interval;
    trace
        .records
        .windows(3)
        .filter(|w| w[0].k >= lo && w[2].k <= hi && w[1].k == w[0].k + 1 && w[2].k == w[1].k + 1)
        .map(|w| {
            let prev = &w[1].w - &w[0].w;
            let next = &w[2].w - &w[1].w;
            let r = (&next - m.apply(&prev)).norm();
            (w[1].k, r, prev.norm())
        })
        .collect()
}
