//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use dualreg::regularizers::RegularizerSpec;
use dualreg::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_vector(len: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Smooth lifting of `tau R(w) + |w - x|^2 / 2`.
///
/// Every regularizer is written as the minimal value of a quadratic penalty
/// over a product factorization (`w = a*b` coordinatewise, `w_g = s_g a_g`,
/// increments `a_j b_j`, `W = U Vᵀ`), which turns the prox into a smooth
/// problem without spurious minima. No thresholding formula is used.
struct Lifted<'a> {
    reg: &'a RegularizerSpec,
    tau: f64,
    x: &'a DVector<f64>,
}

impl Lifted<'_> {
    fn dims(&self) -> usize {
        let p = self.x.len();
        match self.reg {
            RegularizerSpec::L1 { .. } => 2 * p,
            RegularizerSpec::L12 { groups } => p + groups.len(),
            RegularizerSpec::Tv1d { .. } => 1 + 2 * (p - 1),
            RegularizerSpec::Nuclear { rows, cols } => (rows + cols) * rows.min(cols),
        }
    }

    fn lift(&self, t: &[f64]) -> DVector<f64> {
        let p = self.x.len();
        match self.reg {
            RegularizerSpec::L1 { .. } => DVector::from_fn(p, |i, _| t[i] * t[p + i]),
            RegularizerSpec::L12 { groups } => {
                let mut w = DVector::zeros(p);
                for (g, idx) in groups.iter().enumerate() {
                    for &i in idx {
                        w[i] = t[p + g] * t[i];
                    }
                }
                w
            }
            RegularizerSpec::Tv1d { .. } => {
                let mut w = DVector::from_element(p, t[0]);
                for j in 0..p - 1 {
                    w[j + 1] = w[j] + t[1 + j] * t[p + j];
                }
                w
            }
            RegularizerSpec::Nuclear { rows, cols } => {
                let (u, v) = self.factors(t, *rows, *cols);
                let m = u * v.transpose();
                DVector::from_fn(p, |k, _| m[(k / cols, k % cols)])
            }
        }
    }

    fn factors(&self, t: &[f64], rows: usize, cols: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = rows.min(cols);
        let u = DMatrix::from_row_slice(rows, r, &t[..rows * r]);
        let v = DMatrix::from_row_slice(cols, r, &t[rows * r..]);
        (u, v)
    }

    fn value_grad(&self, t: &[f64]) -> (f64, Vec<f64>) {
        let p = self.x.len();
        let g = self.lift(t) - self.x;
        let penalty = 0.5 * t.iter().map(|v| v * v).sum::<f64>();
        let f = self.tau * penalty + 0.5 * g.norm_squared();
        let mut grad: Vec<f64> = t.iter().map(|v| self.tau * v).collect();
        match self.reg {
            RegularizerSpec::L1 { .. } => {
                for i in 0..p {
                    grad[i] += g[i] * t[p + i];
                    grad[p + i] += g[i] * t[i];
                }
            }
            RegularizerSpec::L12 { groups } => {
                for (k, idx) in groups.iter().enumerate() {
                    for &i in idx {
                        grad[i] += t[p + k] * g[i];
                        grad[p + k] += g[i] * t[i];
                    }
                }
            }
            RegularizerSpec::Tv1d { .. } => {
                // the constant enters through the penalty-free offset
                grad[0] = g.sum();
                let mut tail = 0.0;
                for j in (0..p - 1).rev() {
                    tail += g[j + 1];
                    grad[1 + j] += tail * t[p + j];
                    grad[p + j] += tail * t[1 + j];
                }
            }
            RegularizerSpec::Nuclear { rows, cols } => {
                let (u, v) = self.factors(t, *rows, *cols);
                let gm = DMatrix::from_fn(*rows, *cols, |i, j| g[i * cols + j]);
                let gu = &gm * &v;
                let gv = gm.transpose() * &u;
                let r = u.ncols();
                for i in 0..*rows {
                    for c in 0..r {
                        grad[i * r + c] += gu[(i, c)];
                    }
                }
                for j in 0..*cols {
                    for c in 0..r {
                        grad[rows * r + j * r + c] += gv[(j, c)];
                    }
                }
            }
        }
        let f = match self.reg {
            // the offset is not penalized
            RegularizerSpec::Tv1d { .. } => f - 0.5 * self.tau * t[0] * t[0],
            _ => f,
        };
        (f, grad)
    }
}

/// `argmin_w tau R(w) + |w - x|^2 / 2` by backtracking gradient descent on the
/// lifted problem, started from a seeded random point.
pub fn prox_oracle(reg: &RegularizerSpec, tau: f64, x: &DVector<f64>, seed: u64) -> DVector<f64> {
    let lifted = Lifted { reg, tau, x };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (x.amax() + 1.0).sqrt();
    let mut t: Vec<f64> = (0..lifted.dims()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let (mut f, mut grad) = lifted.value_grad(&t);
    let mut step = 0.1;
    for _ in 0..200_000 {
        let gn2: f64 = grad.iter().map(|g| g * g).sum();
        if gn2.sqrt() < 1e-10 {
            break;
        }
        loop {
            let trial: Vec<f64> = t.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let (ft, gt) = lifted.value_grad(&trial);
            // once the decrease drops below rounding in f, accept any step
            // that keeps f level and shrinks the gradient
            let level = ft <= f + 1e-14 * f.abs().max(1.0);
            let gt2: f64 = gt.iter().map(|g| g * g).sum();
            if ft <= f - 0.5 * step * gn2 || (level && gt2 < gn2) {
                t = trial;
                f = ft;
                grad = gt;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return lifted.lift(&t);
            }
        }
    }
    lifted.lift(&t)
}

/// Exact `argmin |w|_1 + alpha/2 |w|^2` subject to `X w = y` for small `p`,
/// by enumerating every sign pattern in `{-1, 0, 1}^p` and solving the
/// equality-constrained quadratic on each face.
pub fn l1_constrained_oracle(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Option<DVector<f64>> {
    let (n, p) = x.shape();
    let objective = |w: &DVector<f64>| w.abs().sum() + 0.5 * alpha * w.norm_squared();
    let mut best: Option<(f64, DVector<f64>)> = None;
    // smaller faces first, so ties within rounding keep the sparser point
    let mut codes: Vec<usize> = (0..3usize.pow(p as u32)).collect();
    codes.sort_by_key(|&c| (0..p).filter(|&i| (c / 3usize.pow(i as u32)) % 3 != 1).count());
    for code in codes {
        let mut signs = vec![0.0; p];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        let support: Vec<usize> = (0..p).filter(|&i| signs[i] != 0.0).collect();
        let m = support.len();
        let xs = x.select_columns(&support);
        let sigma = DVector::from_iterator(m, support.iter().map(|&i| signs[i]));
        // KKT on the face: alpha w_S + sigma = X_Sᵀ lambda, X_S w_S = y,
        // solved in the least-squares sense and checked for feasibility below
        let mut kkt = DMatrix::zeros(m + n, m + n);
        let mut rhs = DVector::zeros(m + n);
        for k in 0..m {
            kkt[(k, k)] = alpha;
            rhs[k] = -sigma[k];
        }
        kkt.view_mut((0, m), (m, n)).copy_from(&(-xs.transpose()));
        kkt.view_mut((m, 0), (n, m)).copy_from(&xs);
        rhs.rows_mut(m, n).copy_from(y);
        let Ok(sol) = kkt.svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        let ws = sol.rows(0, m).into_owned();
        if ws.iter().zip(sigma.iter()).any(|(w, s)| w * s < -1e-12) {
            continue;
        }
        let mut w = DVector::zeros(p);
        for (k, &i) in support.iter().enumerate() {
            w[i] = ws[k];
        }
        if (x * &w - y).norm() > 1e-9 * (1.0 + y.norm()) {
            continue;
        }
        let val = objective(&w);
        if best.as_ref().is_none_or(|(b, _)| val < *b - 1e-12 * (1.0 + b.abs())) {
            best = Some((val, w));
        }
    }
    best.map(|(_, w)| w)
}

/// Largest singular value by a dense SVD.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Dual norm of `R`, computed directly from its definition for each kind:
/// the subdifferential of `R` at `w` is `{g : dual_norm(g) <= 1, <g, w> = R(w)}`.
pub fn dual_norm(reg: &RegularizerSpec, g: &DVector<f64>) -> f64 {
    match reg {
        RegularizerSpec::L1 { .. } => g.amax(),
        RegularizerSpec::L12 { groups } => groups
            .iter()
            .map(|idx| idx.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max),
        RegularizerSpec::Tv1d { .. } => {
            // g = Dᵀ s needs zero mean; the smallest |s|_inf is then max |cumsum g|
            if g.sum().abs() > 1e-9 * (1.0 + g.amax()) {
                return f64::INFINITY;
            }
            let mut acc = 0.0;
            let mut best: f64 = 0.0;
            for v in g.iter() {
                acc += v;
                best = best.max(acc.abs());
            }
            best
        }
        RegularizerSpec::Nuclear { rows, cols } => {
            spectral_norm(&DMatrix::from_fn(*rows, *cols, |i, j| g[i * cols + j]))
        }
    }
}

/// Orthonormal-row operator from a Gaussian draw.
pub fn orthonormal_rows(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gaussian_matrix(p, n, 1.0, rng);
    a.qr().q().transpose()
}
