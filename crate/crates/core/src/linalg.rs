//! Small dense symmetric positive-definite solves for the per-row ridge
//! systems of ALS. Matrices are k x k, row-major, with k rarely above 32.

use crate::error::{Error, Result};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as a breakdown of the factorization.
const PIVOT_RTOL: f64 = 1e-13;

/// Diagonal jitter added on retry, relative to the largest diagonal entry.
pub const JITTER: f64 = 1e-10;

/// In-place Cholesky factorization `A = L Lᵀ`; on success the lower triangle
/// of `a` holds `L`. Returns false when `A` is not numerically positive
/// definite.
pub fn cholesky_in_place(a: &mut [f64], k: usize) -> bool {
    debug_assert_eq!(a.len(), k * k);
    let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    let tol = PIVOT_RTOL * scale.max(f64::MIN_POSITIVE);
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > tol) {
            return false;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    true
}

/// Solves `L Lᵀ x = b` given the factor from [`cholesky_in_place`].
pub fn cholesky_substitute(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in (i + 1)..k {
            s -= l[p * k + i] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solves the SPD system `A x = b`. If the factorization breaks down, retries
/// once with `JITTER * max|diag|` added to the diagonal.
pub fn solve_spd(a: &[f64], b: &[f64], k: usize) -> Result<Vec<f64>> {
    if a.len() != k * k || b.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "system of size {k} with {} matrix and {} rhs entries",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ridge system".into()));
    }
    let mut l = a.to_vec();
    if !cholesky_in_place(&mut l, k) {
        let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
        let eps = JITTER * if scale > 0.0 { scale } else { 1.0 };
        l.copy_from_slice(a);
        for i in 0..k {
            l[i * k + i] += eps;
        }
        if !cholesky_in_place(&mut l, k) {
            return Err(Error::Singular { size: k });
        }
    }
    let mut x = b.to_vec();
    cholesky_substitute(&l, k, &mut x);
    Ok(x)
}

/// Accumulates the normal equations `(AᵀA + λI) x = Aᵀb` one design row at a
/// time.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    k: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

impl RidgeSystem {
    pub fn new(k: usize) -> Self {
        RidgeSystem {
            k,
            gram: vec![0.0; k * k],
            rhs: vec![0.0; k],
        }
    }

    pub fn add_row(&mut self, row: &[f64], target: f64) {
        let k = self.k;
        debug_assert_eq!(row.len(), k);
        for i in 0..k {
            let ri = row[i];
            self.rhs[i] += ri * target;
            // lower triangle only, mirrored in solve()
            for j in 0..=i {
                self.gram[i * k + j] += ri * row[j];
            }
        }
    }

    pub fn solve(mut self, lambda: f64) -> Result<Vec<f64>> {
        let k = self.k;
        for i in 0..k {
            self.gram[i * k + i] += lambda;
            for j in 0..i {
                self.gram[j * k + i] = self.gram[i * k + j];
            }
        }
        solve_spd(&self.gram, &self.rhs, k)
    }
}

/// Ridge least squares over explicit design rows.
pub fn ridge_solve(rows: &[&[f64]], targets: &[f64], k: usize, lambda: f64) -> Result<Vec<f64>> {
    if rows.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} design rows vs {} targets",
            rows.len(),
            targets.len()
        )));
    }
    let mut sys = RidgeSystem::new(k);
    for (row, &t) in rows.iter().zip(targets) {
        if row.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "design row of length {} for rank {k}",
                row.len()
            )));
        }
        sys.add_row(row, t);
    }
    sys.solve(lambda)
}
