//! Nondegenerate source-condition certificates.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use super::{model_descriptor, model_subgradient, tangent_projector, ModelDescriptor, RegularizerSpec};
use crate::error::{Error, Result};
use crate::linops::{reshape, DenseOperator};

/// Outcome of [`check_source_condition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// Minimal-norm dual vector solving the on-model equations.
    #[serde(with = "crate::linops::flat_vector")]
    pub certificate_dual: DVector<f64>,
    /// `-Xᵀ certificate_dual`.
    #[serde(with = "crate::linops::flat_vector")]
    pub z: DVector<f64>,
    pub on_model_residual: f64,
    /// `1 -` the largest off-model dual magnitude of `z - alpha w`; positive
    /// means strict interiority.
    pub off_model_margin: f64,
    pub nondegenerate: bool,
}

/// Looks for `v` with `-Xᵀv` in the relative interior of `∂R_α(w_true)`.
///
/// The on-model part `P_T(-Xᵀv) = P_T(alpha w + e)` is solved in the
/// least-squares sense with the smallest `|v|`; the off-model part is then
/// measured in the dual norm of the regularizer restricted to `T⊥`.
pub fn check_source_condition(
    reg: &RegularizerSpec,
    alpha: f64,
    w_true: &DVector<f64>,
    x: &DenseOperator,
    tol_eq: f64,
) -> Result<CertificateReport> {
    if !(alpha > 0.0) {
        return Err(Error::input(format!("alpha must be positive, got {alpha}")));
    }
    reg.check_dim(w_true.len())?;
    if x.cols() != w_true.len() {
        return Err(Error::DimensionMismatch {
            expected: w_true.len(),
            got: x.cols(),
        });
    }
    if w_true.iter().all(|&v| v == 0.0) {
        return Err(Error::input("source condition needs a nonzero ground truth"));
    }

    let d = model_descriptor(reg, w_true, reg.default_descriptor_tol())?;
    let (pt, e) = match reg {
        RegularizerSpec::Nuclear { rows, cols } => nuclear_tangent(w_true, *rows, *cols, d.size()),
        _ => (
            tangent_projector(reg, &d)?.into_matrix(),
            model_subgradient(reg, w_true, &d)?,
        ),
    };

    let target = &pt * (w_true * alpha + &e);
    let a = -(&pt * x.matrix().transpose());
    let svd = SVD::new(a.clone(), true, true);
    let cut = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let v = svd.solve(&target, cut).map_err(Error::input)?;
    let on_model_residual = (&a * &v - &target).norm();

    let z = -x.apply_transpose(&v);
    let g = &z - w_true * alpha;
    let off = off_model_magnitude(reg, &d, &g, &pt);
    let off_model_margin = 1.0 - off;

    Ok(CertificateReport {
        nondegenerate: on_model_residual <= tol_eq && off_model_margin > 0.0,
        certificate_dual: v,
        z,
        on_model_residual,
        off_model_margin,
    })
}

/// Tangent projector `Pu ⊗ I + I ⊗ Pv - Pu ⊗ Pv` of the fixed-rank manifold at
/// `w` (row-major vectorization) and the on-model subgradient `U Vᵀ`.
fn nuclear_tangent(w: &DVector<f64>, rows: usize, cols: usize, rank: usize) -> (DMatrix<f64>, DVector<f64>) {
    let svd = SVD::new(reshape(w, rows, cols), true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // singular values from nalgebra's SVD are not guaranteed sorted
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let ur = DMatrix::from_fn(rows, rank, |i, c| u[(i, order[c])]);
    let vr = DMatrix::from_fn(cols, rank, |j, c| v_t[(order[c], j)]);
    let pu = &ur * ur.transpose();
    let pv = &vr * vr.transpose();
    let pt = pu.kronecker(&DMatrix::identity(cols, cols)) + DMatrix::identity(rows, rows).kronecker(&pv)
        - pu.kronecker(&pv);
    let e = ur * vr.transpose();
    (pt, DVector::from_iterator(rows * cols, e.transpose().iter().copied()))
}

fn off_model_magnitude(reg: &RegularizerSpec, d: &ModelDescriptor, g: &DVector<f64>, pt: &DMatrix<f64>) -> f64 {
    match (reg, d) {
        (RegularizerSpec::L1 { .. }, ModelDescriptor::Support { indices }) => (0..g.len())
            .filter(|i| !indices.contains(i))
            .map(|i| g[i].abs())
            .fold(0.0, f64::max),
        (RegularizerSpec::L12 { groups }, ModelDescriptor::Groups { indices }) => (0..groups.len())
            .filter(|k| !indices.contains(k))
            .map(|k| groups[k].iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max),
        (RegularizerSpec::Tv1d { dim }, ModelDescriptor::Jumps { indices }) => {
            // g = Dᵀq  <=>  q = -cumsum(g) on the p-1 difference positions
            let mut q = 0.0;
            let mut worst: f64 = 0.0;
            for i in 0..dim - 1 {
                q -= g[i];
                if !indices.contains(&i) {
                    worst = worst.max(q.abs());
                }
            }
            worst
        }
        (RegularizerSpec::Nuclear { rows, cols }, _) => {
            let off = g - pt * g;
            reshape(&off, *rows, *cols).singular_values().max()
        }
        _ => unreachable!("descriptor computed from the same regularizer"),
    }
}
