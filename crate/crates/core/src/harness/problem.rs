//! Synthetic inverse problems and noise injection.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{mask_as_diagonal, mask_operator, vectorize, DenseOperator};
use crate::regularizers::{RegKind, RegularizerSpec};

/// `y_noisy = X w_true + noise` together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInstance {
    pub x: DenseOperator,
    /// Cached `|X|`.
    pub x_norm: f64,
    #[serde(with = "crate::linops::flat_vector")]
    pub w_true: DVector<f64>,
    #[serde(with = "crate::linops::flat_vector")]
    pub y_clean: DVector<f64>,
    #[serde(with = "crate::linops::flat_vector")]
    pub y_noisy: DVector<f64>,
    /// Realized `|y_noisy - y_clean|`.
    pub noise_norm: f64,
    /// Realized SNR in dB; infinite without noise.
    pub snr_db: f64,
    pub seed: u64,
    pub reg: RegularizerSpec,
}

impl ProblemInstance {
    /// Assembles an instance, deriving `y_clean`, the noise norm and the SNR.
    pub fn from_parts(
        x: DenseOperator,
        w_true: DVector<f64>,
        y_noisy: DVector<f64>,
        reg: RegularizerSpec,
        seed: u64,
    ) -> Result<Self> {
        reg.check_dim(w_true.len())?;
        if x.cols() != w_true.len() {
            return Err(Error::DimensionMismatch {
                expected: w_true.len(),
                got: x.cols(),
            });
        }
        if y_noisy.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                got: y_noisy.len(),
            });
        }
        if y_noisy.iter().chain(w_true.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("observations and ground truth must be finite"));
        }
        let y_clean = x.apply(&w_true);
        let noise_norm = (&y_noisy - &y_clean).norm();
        Ok(Self {
            x_norm: x.spectral_norm(),
            snr_db: snr_db(y_clean.norm(), noise_norm),
            x,
            w_true,
            y_clean,
            y_noisy,
            noise_norm,
            seed,
            reg,
        })
    }

    /// Same instance observed through fresh noise at `snr_db`.
    pub fn with_noise(&self, snr_db: f64, noise_seed: u64) -> Result<Self> {
        let (y_noisy, delta) = apply_noise(&self.y_clean, snr_db, noise_seed)?;
        Ok(Self {
            y_noisy,
            noise_norm: delta,
            snr_db: snr_db_of(&self.y_clean, delta),
            ..self.clone()
        })
    }

    /// Same instance with exact observations.
    pub fn noiseless(&self) -> Self {
        Self {
            y_noisy: self.y_clean.clone(),
            noise_norm: 0.0,
            snr_db: f64::INFINITY,
            ..self.clone()
        }
    }

    pub fn id(&self) -> String {
        let snr = if self.snr_db.is_finite() {
            format!("{:.1}", self.snr_db)
        } else {
            "inf".into()
        };
        format!(
            "{}-n{}-p{}-seed{}-snr{}",
            self.reg.kind(),
            self.x.rows(),
            self.x.cols(),
            self.seed,
            snr
        )
    }
}

fn snr_db(signal: f64, noise: f64) -> f64 {
    20.0 * (signal / noise).log10()
}

fn snr_db_of(y: &DVector<f64>, delta: f64) -> f64 {
    snr_db(y.norm(), delta)
}

/// Structural parameters of a synthetic problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `s` nonzeros at random positions.
    L1 { n: usize, p: usize, sparsity: usize },
    /// `sparsity / group_size` active groups of consecutive coordinates.
    L12 {
        n: usize,
        p: usize,
        sparsity: usize,
        group_size: usize,
    },
    /// Piecewise constant with one unit jump.
    Tv1d { n: usize, p: usize },
    /// `rows x cols` matrix of the given rank seen through a 0-1 mask.
    Nuclear {
        rows: usize,
        cols: usize,
        rank: usize,
        density: f64,
    },
}

impl ProblemSpec {
    /// Global-behaviour settings: `(100, 500)` with 5 nonzeros (groups of 5),
    /// TV on `(20, 50)`, and a rank-one 20x20 matrix with half its entries seen.
    pub fn standard(kind: RegKind) -> Self {
        match kind {
            RegKind::L1 => Self::L1 {
                n: 100,
                p: 500,
                sparsity: 5,
            },
            RegKind::L12 => Self::L12 {
                n: 100,
                p: 500,
                sparsity: 5,
                group_size: 5,
            },
            RegKind::Tv1d => Self::Tv1d { n: 20, p: 50 },
            RegKind::Nuclear => Self::Nuclear {
                rows: 20,
                cols: 20,
                rank: 1,
                density: 0.5,
            },
        }
    }

    /// Small settings used for the local-rate study: `(20, 100)` with 2
    /// nonzeros (one group of 2 for the group norm).
    pub fn local(kind: RegKind) -> Self {
        match kind {
            RegKind::L1 => Self::L1 {
                n: 20,
                p: 100,
                sparsity: 2,
            },
            RegKind::L12 => Self::L12 {
                n: 20,
                p: 100,
                sparsity: 2,
                group_size: 2,
            },
            other => Self::standard(other),
        }
    }

    pub fn kind(&self) -> RegKind {
        match self {
            Self::L1 { .. } => RegKind::L1,
            Self::L12 { .. } => RegKind::L12,
            Self::Tv1d { .. } => RegKind::Tv1d,
            Self::Nuclear { .. } => RegKind::Nuclear,
        }
    }

    pub fn regularizer(&self) -> Result<RegularizerSpec> {
        match *self {
            Self::L1 { p, .. } => RegularizerSpec::l1(p),
            Self::L12 { p, group_size, .. } => RegularizerSpec::l12_contiguous(p, group_size),
            Self::Tv1d { p, .. } => RegularizerSpec::tv1d(p),
            Self::Nuclear { rows, cols, .. } => RegularizerSpec::nuclear(rows, cols),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::input(msg));
        match *self {
            Self::L1 { n, p, sparsity } => {
                if n == 0 || p == 0 || sparsity == 0 || sparsity > p {
                    return bad(format!("l1 needs n, p > 0 and 0 < sparsity <= p, got ({n}, {p}, {sparsity})"));
                }
            }
            Self::L12 {
                n,
                p,
                sparsity,
                group_size,
            } => {
                if n == 0 || group_size == 0 || !p.is_multiple_of(group_size) || p == 0 {
                    return bad(format!("group size {group_size} must divide p = {p}, n must be positive"));
                }
                if sparsity == 0 || !sparsity.is_multiple_of(group_size) || sparsity > p {
                    return bad(format!(
                        "sparsity {sparsity} must be a positive multiple of the group size {group_size}, at most p"
                    ));
                }
            }
            Self::Tv1d { n, p } => {
                if n == 0 || p < 2 {
                    return bad(format!("tv1d needs n > 0 and p >= 2, got ({n}, {p})"));
                }
            }
            Self::Nuclear {
                rows,
                cols,
                rank,
                density,
            } => {
                if rows == 0 || cols == 0 || rank == 0 || rank > rows.min(cols) {
                    return bad(format!("rank {rank} must lie in 1..=min({rows}, {cols})"));
                }
                if !(density > 0.0 && density <= 1.0) {
                    return bad(format!("mask density must be in (0, 1], got {density}"));
                }
            }
        }
        Ok(())
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // filled row by row so the draw order does not depend on storage layout
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// Draws a noiseless instance (`y_noisy = y_clean`). Deterministic in `seed`.
///
/// For the vector kinds `X` has i.i.d. `N(0, 1/n)` entries; nonzero values of
/// the ground truth are standard normal. The nuclear-norm operator is a 0-1
/// mask acting on the row-major vectorization.
pub fn gen_problem(spec: &ProblemSpec, seed: u64) -> Result<ProblemInstance> {
    spec.validate()?;
    let reg = spec.regularizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, w_true) = match *spec {
        ProblemSpec::L1 { n, p, sparsity } => {
            let x = gaussian_matrix(n, p, 1.0 / (n as f64).sqrt(), &mut rng);
            let mut w = DVector::zeros(p);
            let mut support = index::sample(&mut rng, p, sparsity).into_vec();
            support.sort_unstable();
            for i in support {
                w[i] = rng.sample(StandardNormal);
            }
            (x, w)
        }
        ProblemSpec::L12 {
            n,
            p,
            sparsity,
            group_size,
        } => {
            let x = gaussian_matrix(n, p, 1.0 / (n as f64).sqrt(), &mut rng);
            let mut w = DVector::zeros(p);
            let mut groups = index::sample(&mut rng, p / group_size, sparsity / group_size).into_vec();
            groups.sort_unstable();
            for g in groups {
                for i in g * group_size..(g + 1) * group_size {
                    w[i] = rng.sample(StandardNormal);
                }
            }
            (x, w)
        }
        ProblemSpec::Tv1d { n, p } => {
            let x = gaussian_matrix(n, p, 1.0 / (n as f64).sqrt(), &mut rng);
            // on a 2^-40 grid so that the jump of height one is exact
            let base = (rng.sample::<f64, _>(StandardNormal) * 2f64.powi(40)).round() / 2f64.powi(40);
            let jump = rng.random_range(0..p - 1);
            let height = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let w = DVector::from_fn(p, |i, _| if i > jump { base + height } else { base });
            (x, w)
        }
        ProblemSpec::Nuclear {
            rows,
            cols,
            rank,
            density,
        } => {
            let a = gaussian_matrix(rows, rank, 1.0, &mut rng);
            let b = gaussian_matrix(cols, rank, 1.0, &mut rng);
            let mask = mask_operator(rows, cols, density, rng.next_u64())?;
            (mask_as_diagonal(&mask).into_matrix(), vectorize(&(a * b.transpose())))
        }
    };
    let x = DenseOperator::new(x)?;
    let y = x.apply(&w_true);
    ProblemInstance::from_parts(x, w_true, y, reg, seed)
}

/// Adds a Gaussian draw rescaled to norm `|y_clean| 10^{-snr_db/20}`.
///
/// Returns the noisy vector and the realized noise norm.
pub fn apply_noise(y_clean: &DVector<f64>, snr_db: f64, seed: u64) -> Result<(DVector<f64>, f64)> {
    let signal = y_clean.norm();
    if signal == 0.0 {
        return Err(Error::input("cannot set an SNR for a zero observation"));
    }
    if !snr_db.is_finite() {
        return Err(Error::input(format!("SNR must be finite, got {snr_db}")));
    }
    // separate stream so noise never reuses the draws that built the problem
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let e = DVector::from_fn(y_clean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let delta = signal * 10f64.powf(-snr_db / 20.0);
    let noise = &e * (delta / e.norm());
    Ok((y_clean + &noise, noise.norm()))
}
