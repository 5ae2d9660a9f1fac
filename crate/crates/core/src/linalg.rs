//! Small dense kernels: Cholesky factorizations, symmetric eigenvalues,
//! normal-equation least squares and the tridiagonal (Thomas) solve.
//!
//! Matrices are row-major `Vec<T>` of size `n * n`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower Cholesky factor of `a + jitter * mean(diag) * I`, escalating the
/// jitter through `jitters` until the factorization succeeds.
/// Returns the factor and the relative jitter that was used.
pub fn cholesky_jittered<T: Real>(a: &[T], n: usize, jitters: &[T]) -> std::result::Result<(Vec<T>, T), T> {
    let mean_diag = if n == 0 {
        T::one()
    } else {
        (0..n).map(|i| a[i * n + i]).sum::<T>() / T::from_usize_lossy(n)
    };
    let scale = if mean_diag > T::zero() { mean_diag } else { T::one() };
    let mut worst = T::zero();
    for &j in jitters {
        match cholesky(a, n, j * scale) {
            Ok(l) => return Ok((l, j)),
            Err(cond) => worst = worst.max(cond),
        }
    }
    Err(worst)
}

/// Plain Cholesky with additive diagonal shift. On failure returns a
/// condition estimate (max diagonal / offending pivot magnitude).
pub fn cholesky<T: Real>(a: &[T], n: usize, shift: T) -> std::result::Result<Vec<T>, T> {
    let mut l = vec![T::zero(); n * n];
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(T::zero(), T::max);
    for j in 0..n {
        let mut d = a[j * n + j] + shift;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > T::zero()) {
            let cond = if d.abs() > T::zero() { max_diag / d.abs() } else { T::infinity() };
            return Err(cond);
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

/// Low-rank pivoted Cholesky of an implicit PSD matrix.
///
/// `entry(i, j)` returns the matrix entry. Stops once the largest remaining
/// diagonal falls below `tol * max(diag)` or all `n` columns are used.
/// Returns `(columns, rank)` where `columns[r][i]` is the factor column `r`
/// evaluated at row `i`, so that `A ~= sum_r c_r c_r^T`. Errors with the
/// most negative remaining pivot if the matrix is indefinite beyond `-tol`.
pub fn pivoted_cholesky<T: Real, F: Fn(usize, usize) -> T>(
    n: usize,
    entry: F,
    tol: T,
) -> std::result::Result<Vec<Vec<T>>, T> {
    let mut diag: Vec<T> = (0..n).map(|i| entry(i, i)).collect();
    let max_diag = diag.iter().copied().fold(T::zero(), T::max);
    let mut cols: Vec<Vec<T>> = Vec::new();
    if max_diag <= T::zero() {
        return Ok(cols);
    }
    let stop = tol * max_diag;
    loop {
        let (p, dp) = diag
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        if dp <= stop || cols.len() == n {
            let worst = diag.iter().copied().fold(T::zero(), T::min);
            if worst < -stop.max(T::lit(1e-12) * max_diag) * T::lit(1e4) {
                return Err(worst);
            }
            return Ok(cols);
        }
        let root = dp.sqrt();
        let mut c = vec![T::zero(); n];
        for i in 0..n {
            let mut s = entry(i, p);
            for prev in &cols {
                s -= prev[i] * prev[p];
            }
            c[i] = s / root;
        }
        for i in 0..n {
            diag[i] -= c[i] * c[i];
        }
        diag[p] = T::zero();
        cols.push(c);
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Real>(a: &[T], n: usize) -> Vec<T> {
    let mut m = a.to_vec();
    let tol = T::epsilon() * T::lit(1e-2);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let total: T = m.iter().map(|v| *v * *v).sum();
        if off <= tol * total.max(T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Solves `gram * x = rhs` (for each of `nrhs` right-hand sides stored
/// column-interleaved: `rhs[i * nrhs + r]`) for a symmetric positive
/// semidefinite Gram matrix. The system is equilibrated first; a pivot that
/// drops below `rank_tol` marks the design as rank deficient.
pub fn solve_normal_equations<T: Real>(
    gram: &[T],
    p: usize,
    rhs: &[T],
    nrhs: usize,
    rank_tol: T,
) -> Option<Vec<T>> {
    let scale: Vec<T> = (0..p)
        .map(|i| {
            let d = gram[i * p + i];
            if d > T::zero() {
                T::one() / d.sqrt()
            } else {
                T::zero()
            }
        })
        .collect();
    if scale.iter().any(|s| *s == T::zero()) {
        return None;
    }
    let mut g = vec![T::zero(); p * p];
    for i in 0..p {
        for j in 0..p {
            g[i * p + j] = gram[i * p + j] * scale[i] * scale[j];
        }
    }
    let l = cholesky(&g, p, T::zero()).ok()?;
    if (0..p).any(|i| l[i * p + i] * l[i * p + i] < rank_tol) {
        return None;
    }
    let mut out = vec![T::zero(); p * nrhs];
    for r in 0..nrhs {
        let mut y = vec![T::zero(); p];
        for i in 0..p {
            let mut s = rhs[i * nrhs + r] * scale[i];
            for k in 0..i {
                s -= l[i * p + k] * y[k];
            }
            y[i] = s / l[i * p + i];
        }
        for i in (0..p).rev() {
            let mut s = y[i];
            for k in (i + 1)..p {
                s -= l[k * p + i] * y[k];
            }
            y[i] = s / l[i * p + i];
        }
        for i in 0..p {
            out[i * nrhs + r] = y[i] * scale[i];
        }
    }
    Some(out)
}

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Result<Vec<T>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n || n == 0 {
        return Err(Error::InvalidArgument("tridiagonal bands must share one length".into()));
    }
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let tiny = T::min_positive_value().sqrt();
    let mut denom = diag[0];
    if denom.abs() <= tiny {
        return Err(Error::Conditioning("zero pivot in tridiagonal solve at row 0".into()));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom.abs() <= tiny || !denom.is_finite() {
            return Err(Error::Conditioning(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { T::zero() };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    Ok(x)
}
