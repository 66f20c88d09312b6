//! Partly smooth low-complexity regularizers.
//!
//! Four priors are supported: the l1 norm, the non-overlapping group l1/l2
//! norm, the 1-d total variation semi-norm and the nuclear norm of a
//! (row-major) vectorized matrix. The first three have affine partial
//! smoothness manifolds `w + T`; the nuclear-norm manifold (fixed rank) is
//! curved, so tangent projectors and Riemannian Hessians are only provided
//! for the affine kinds.

mod certificate;
mod tv;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{reshape, vectorize, DenseOperator};

pub use certificate::{check_source_condition, CertificateReport};
pub use tv::prox_tv1d;

/// Default relative singular-value threshold for nuclear-norm rank decisions.
pub const NUCLEAR_RANK_TOL: f64 = 1e-8;

/// Which prior a [`RegularizerSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    L1,
    L12,
    Tv1d,
    Nuclear,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::L1 => "l1",
            RegKind::L12 => "l12",
            RegKind::Tv1d => "tv1d",
            RegKind::Nuclear => "nuclear",
        }
    }

    /// Affine manifold kinds admit tangent projectors and the local-rate theory.
    pub fn is_affine(self) -> bool {
        !matches!(self, RegKind::Nuclear)
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A regularizer together with its structural parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegularizerSpec {
    L1 { dim: usize },
    /// Disjoint groups covering `0..dim`.
    L12 { groups: Vec<Vec<usize>> },
    Tv1d { dim: usize },
    /// Nuclear norm of the row-major `rows x cols` reshape.
    Nuclear { rows: usize, cols: usize },
}

impl RegularizerSpec {
    pub fn l1(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("l1 dimension must be positive"));
        }
        Ok(Self::L1 { dim })
    }

    pub fn l12(groups: Vec<Vec<usize>>) -> Result<Self> {
        let dim: usize = groups.iter().map(Vec::len).sum();
        if dim == 0 {
            return Err(Error::input("group partition is empty"));
        }
        let mut seen = vec![false; dim];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::input("groups must be non-empty"));
            }
            for &i in g {
                if i >= dim || seen[i] {
                    return Err(Error::input(format!(
                        "groups must partition 0..{dim}; index {i} out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(Self::L12 { groups })
    }

    /// Consecutive groups of `size` coordinates.
    pub fn l12_contiguous(dim: usize, size: usize) -> Result<Self> {
        if size == 0 || dim == 0 || !dim.is_multiple_of(size) {
            return Err(Error::input(format!("group size {size} must divide dimension {dim}")));
        }
        Self::l12((0..dim / size).map(|g| (g * size..(g + 1) * size).collect()).collect())
    }

    pub fn tv1d(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::input(format!("1-d TV needs dimension >= 2, got {dim}")));
        }
        Ok(Self::Tv1d { dim })
    }

    pub fn nuclear(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::input("nuclear-norm shape must be non-empty"));
        }
        Ok(Self::Nuclear { rows, cols })
    }

    pub fn kind(&self) -> RegKind {
        match self {
            Self::L1 { .. } => RegKind::L1,
            Self::L12 { .. } => RegKind::L12,
            Self::Tv1d { .. } => RegKind::Tv1d,
            Self::Nuclear { .. } => RegKind::Nuclear,
        }
    }

    /// Ambient dimension `p` of the vectors this regularizer acts on.
    pub fn dim(&self) -> usize {
        match self {
            Self::L1 { dim } | Self::Tv1d { dim } => *dim,
            Self::L12 { groups } => groups.iter().map(Vec::len).sum(),
            Self::Nuclear { rows, cols } => rows * cols,
        }
    }

    /// Descriptor threshold used when none is given: exact zeros for the
    /// affine kinds, a relative singular-value cut for the nuclear norm.
    pub fn default_descriptor_tol(&self) -> f64 {
        match self {
            Self::Nuclear { .. } => NUCLEAR_RANK_TOL,
            _ => 0.0,
        }
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    fn unsupported(&self, operation: &'static str) -> Error {
        Error::UnsupportedKind {
            operation,
            kind: self.kind().name(),
        }
    }
}

/// Discrete structure of a point: support, active groups, jump set or rank.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelDescriptor {
    Support { indices: BTreeSet<usize> },
    Groups { indices: BTreeSet<usize> },
    /// Positions `i` with `w[i+1] != w[i]`.
    Jumps { indices: BTreeSet<usize> },
    Rank { rank: usize },
}

impl ModelDescriptor {
    pub fn kind(&self) -> RegKind {
        match self {
            Self::Support { .. } => RegKind::L1,
            Self::Groups { .. } => RegKind::L12,
            Self::Jumps { .. } => RegKind::Tv1d,
            Self::Rank { .. } => RegKind::Nuclear,
        }
    }

    /// Support size, number of active groups, number of jumps, or rank.
    pub fn size(&self) -> usize {
        match self {
            Self::Support { indices } | Self::Groups { indices } | Self::Jumps { indices } => indices.len(),
            Self::Rank { rank } => *rank,
        }
    }

    pub fn indices(&self) -> Option<&BTreeSet<usize>> {
        match self {
            Self::Support { indices } | Self::Groups { indices } | Self::Jumps { indices } => Some(indices),
            Self::Rank { .. } => None,
        }
    }
}

fn svd_of(w: &DVector<f64>, rows: usize, cols: usize, vectors: bool) -> SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    SVD::new(reshape(w, rows, cols), vectors, vectors)
}

fn finite_differences(w: &DVector<f64>) -> impl Iterator<Item = f64> + '_ {
    w.as_slice().windows(2).map(|p| p[1] - p[0])
}

/// `R(w)`.
pub fn value(reg: &RegularizerSpec, w: &DVector<f64>) -> Result<f64> {
    reg.check_dim(w.len())?;
    Ok(match reg {
        RegularizerSpec::L1 { .. } => w.iter().map(|v| v.abs()).sum(),
        RegularizerSpec::L12 { groups } => groups.iter().map(|g| group_norm(w, g)).sum(),
        RegularizerSpec::Tv1d { .. } => finite_differences(w).map(f64::abs).sum(),
        RegularizerSpec::Nuclear { rows, cols } => svd_of(w, *rows, *cols, false).singular_values.sum(),
    })
}

fn group_norm(w: &DVector<f64>, group: &[usize]) -> f64 {
    group.iter().map(|&i| w[i] * w[i]).sum::<f64>().sqrt()
}

/// `prox_{tau R}(x) = argmin_u R(u) + |u - x|^2 / (2 tau)`.
pub fn prox(reg: &RegularizerSpec, tau: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::input(format!("prox parameter must be positive, got {tau}")));
    }
    reg.check_dim(x.len())?;
    Ok(match reg {
        RegularizerSpec::L1 { .. } => x.map(|v| soft_threshold(v, tau)),
        RegularizerSpec::L12 { groups } => {
            let mut out = DVector::zeros(x.len());
            for g in groups {
                let norm = group_norm(x, g);
                if norm > tau {
                    let scale = 1.0 - tau / norm;
                    for &i in g {
                        out[i] = scale * x[i];
                    }
                }
            }
            out
        }
        RegularizerSpec::Tv1d { .. } => DVector::from_vec(prox_tv1d(x.as_slice(), tau)),
        RegularizerSpec::Nuclear { rows, cols } => {
            let svd = svd_of(x, *rows, *cols, true);
            let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
            let mut out = DMatrix::zeros(*rows, *cols);
            for (i, &s) in svd.singular_values.iter().enumerate() {
                if s > tau {
                    out += (s - tau) * u.column(i) * v_t.row(i);
                }
            }
            vectorize(&out)
        }
    })
}

#[inline]
fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Discrete structure of `w`. For the nuclear norm `tol` is relative to the
/// largest singular value.
pub fn model_descriptor(reg: &RegularizerSpec, w: &DVector<f64>, tol: f64) -> Result<ModelDescriptor> {
    if !(tol >= 0.0) {
        return Err(Error::input(format!("descriptor tolerance must be >= 0, got {tol}")));
    }
    reg.check_dim(w.len())?;
    Ok(match reg {
        RegularizerSpec::L1 { .. } => ModelDescriptor::Support {
            indices: (0..w.len()).filter(|&i| w[i].abs() > tol).collect(),
        },
        RegularizerSpec::L12 { groups } => ModelDescriptor::Groups {
            indices: (0..groups.len()).filter(|&g| group_norm(w, &groups[g]) > tol).collect(),
        },
        RegularizerSpec::Tv1d { .. } => ModelDescriptor::Jumps {
            indices: finite_differences(w)
                .enumerate()
                .filter(|(_, d)| d.abs() > tol)
                .map(|(i, _)| i)
                .collect(),
        },
        RegularizerSpec::Nuclear { rows, cols } => {
            let sv = svd_of(w, *rows, *cols, false).singular_values;
            let smax = sv.max();
            let rank = if smax > 0.0 {
                sv.iter().filter(|&&s| s > tol * smax).count()
            } else {
                0
            };
            ModelDescriptor::Rank { rank }
        }
    })
}

fn check_descriptor_kind(reg: &RegularizerSpec, d: &ModelDescriptor) -> Result<()> {
    if d.kind() != reg.kind() {
        return Err(Error::input(format!(
            "descriptor kind {} does not match regularizer {}",
            d.kind(),
            reg.kind()
        )));
    }
    if let Some(idx) = d.indices() {
        let bound = match reg {
            RegularizerSpec::L12 { groups } => groups.len(),
            RegularizerSpec::Tv1d { dim } => dim - 1,
            _ => reg.dim(),
        };
        if let Some(&i) = idx.iter().find(|&&i| i >= bound) {
            return Err(Error::input(format!("descriptor index {i} out of bounds ({bound})")));
        }
    }
    Ok(())
}

/// Orthonormal basis (as columns) of the model tangent space `T`.
pub fn tangent_basis(reg: &RegularizerSpec, d: &ModelDescriptor) -> Result<DMatrix<f64>> {
    check_descriptor_kind(reg, d)?;
    let p = reg.dim();
    let coordinate_basis = |coords: Vec<usize>| {
        let mut b = DMatrix::zeros(p, coords.len());
        for (c, &i) in coords.iter().enumerate() {
            b[(i, c)] = 1.0;
        }
        b
    };
    match (reg, d) {
        (RegularizerSpec::L1 { .. }, ModelDescriptor::Support { indices }) => {
            Ok(coordinate_basis(indices.iter().copied().collect()))
        }
        (RegularizerSpec::L12 { groups }, ModelDescriptor::Groups { indices }) => Ok(coordinate_basis(
            indices.iter().flat_map(|&g| groups[g].iter().copied()).collect(),
        )),
        (RegularizerSpec::Tv1d { dim }, ModelDescriptor::Jumps { indices }) => {
            // normalized indicators of the constant runs between jumps
            let runs = constant_runs(*dim, indices);
            let mut b = DMatrix::zeros(*dim, runs.len());
            for (c, &(start, end)) in runs.iter().enumerate() {
                let h = 1.0 / ((end - start) as f64).sqrt();
                for i in start..end {
                    b[(i, c)] = h;
                }
            }
            Ok(b)
        }
        _ => Err(reg.unsupported("tangent_basis")),
    }
}

/// Half-open index ranges of the constant pieces of a signal with jumps after
/// each position in `jumps`.
pub(crate) fn constant_runs(dim: usize, jumps: &BTreeSet<usize>) -> Vec<(usize, usize)> {
    let mut runs = Vec::with_capacity(jumps.len() + 1);
    let mut start = 0;
    for &j in jumps {
        runs.push((start, j + 1));
        start = j + 1;
    }
    runs.push((start, dim));
    runs
}

/// Orthogonal projector onto the model tangent space (affine kinds only).
pub fn tangent_projector(reg: &RegularizerSpec, d: &ModelDescriptor) -> Result<DenseOperator> {
    if !reg.kind().is_affine() {
        return Err(reg.unsupported("tangent_projector"));
    }
    let b = tangent_basis(reg, d)?;
    DenseOperator::new(&b * b.transpose())
}

/// Riemannian Hessian `P_T ∇²R̃(w) P_T` on the affine model manifold of `d`.
///
/// Zero for the polyhedral kinds; for the group norm each active block is
/// `(I - u uᵀ) / |w_g|` with `u = w_g / |w_g|`.
pub fn riemannian_hessian(reg: &RegularizerSpec, w: &DVector<f64>, d: &ModelDescriptor) -> Result<DenseOperator> {
    if !reg.kind().is_affine() {
        return Err(reg.unsupported("riemannian_hessian"));
    }
    check_descriptor_kind(reg, d)?;
    reg.check_dim(w.len())?;
    let p = reg.dim();
    let mut h = DMatrix::zeros(p, p);
    if let (RegularizerSpec::L12 { groups }, ModelDescriptor::Groups { indices }) = (reg, d) {
        for &g in indices {
            let group = &groups[g];
            let norm = group_norm(w, group);
            if norm < 1e-12 {
                return Err(Error::SingularHessian { group: g, norm });
            }
            for (a, &i) in group.iter().enumerate() {
                for &j in &group[a..] {
                    let id = if i == j { 1.0 } else { 0.0 };
                    let entry = (id - w[i] * w[j] / (norm * norm)) / norm;
                    h[(i, j)] = entry;
                    h[(j, i)] = entry;
                }
            }
        }
        // the blocks already live on T; the projection only matters if `w`
        // has mass outside the active groups
        let pt = tangent_projector(reg, d)?.into_matrix();
        h = &pt * h * &pt;
    }
    DenseOperator::new(h)
}

/// The part of a subgradient of `R` at `w` that is fixed on the model:
/// signs on the support, unit group directions, or `P_T Dᵀ s` for the jump
/// signs `s`.
pub(crate) fn model_subgradient(reg: &RegularizerSpec, w: &DVector<f64>, d: &ModelDescriptor) -> Result<DVector<f64>> {
    let p = reg.dim();
    match (reg, d) {
        (RegularizerSpec::L1 { .. }, ModelDescriptor::Support { indices }) => {
            let mut e = DVector::zeros(p);
            for &i in indices {
                e[i] = w[i].signum();
            }
            Ok(e)
        }
        (RegularizerSpec::L12 { groups }, ModelDescriptor::Groups { indices }) => {
            let mut e = DVector::zeros(p);
            for &g in indices {
                let norm = group_norm(w, &groups[g]);
                for &i in &groups[g] {
                    e[i] = w[i] / norm;
                }
            }
            Ok(e)
        }
        (RegularizerSpec::Tv1d { .. }, ModelDescriptor::Jumps { indices }) => {
            // Dᵀ s with s supported on the jumps
            let mut dts = DVector::zeros(p);
            for &i in indices {
                let s = (w[i + 1] - w[i]).signum();
                dts[i] -= s;
                dts[i + 1] += s;
            }
            let b = tangent_basis(reg, d)?;
            Ok(&b * (b.transpose() * dts))
        }
        _ => Err(reg.unsupported("model_subgradient")),
    }
}
