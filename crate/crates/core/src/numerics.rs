//! Dense linear-algebra helpers, seeded randomness and the central
//! finite-difference harness used as a gradient oracle throughout the tests.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Default eigenvalue tolerance for negative semi-definiteness checks.
pub const NSD_TOLERANCE: f64 = 1e-9;

/// Absolute symmetry tolerance, scaled by the largest entry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Finite-difference step used by default: `1e-5 * (1 + |x|)`.
pub fn default_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// Central-difference gradient with a fixed step `h`.
pub fn finite_diff_grad<F>(f: F, v: &Vector, h: f64) -> Result<Vector>
where
    F: FnMut(&Vector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
    }
    finite_diff_grad_with(f, v, |_| h)
}

/// Central-difference gradient with the per-coordinate [`default_step`].
pub fn finite_diff_grad_scaled<F>(f: F, v: &Vector) -> Result<Vector>
where
    F: FnMut(&Vector) -> f64,
{
    finite_diff_grad_with(f, v, default_step)
}

fn finite_diff_grad_with<F, S>(mut f: F, v: &Vector, step: S) -> Result<Vector>
where
    F: FnMut(&Vector) -> f64,
    S: Fn(f64) -> f64,
{
    let mut point = v.clone();
    let mut grad = Vector::zeros(v.len());
    for i in 0..v.len() {
        let h = step(v[i]);
        point[i] = v[i] + h;
        let plus = f(&point);
        point[i] = v[i] - h;
        let minus = f(&point);
        point[i] = v[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("function value at coordinate {i} (f+ = {plus}, f- = {minus})")));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1)`: relative for large vectors, absolute near zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let mut diff = 0.0f64;
    let mut scale = 1.0f64;
    for (x, y) in a.iter().zip(b) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    diff / scale
}

pub fn is_symmetric(m: &Matrix) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return false;
            }
        }
    }
    true
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn require_symmetric(m: &Matrix, what: &str) -> Result<()> {
    if !is_symmetric(m) {
        return Err(Error::contract(format!("{what}: expected a symmetric matrix ({}x{})", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn max_eigenvalue(m: &Matrix) -> Result<f64> {
    require_symmetric(m, "max_eigenvalue")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m.clone().symmetric_eigenvalues().max())
}

pub fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    require_symmetric(m, "min_eigenvalue")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m.clone().symmetric_eigenvalues().min())
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_norm(m: &Matrix) -> Result<f64> {
    require_symmetric(m, "symmetric_norm")?;
    Ok(m.clone().symmetric_eigenvalues().amax())
}

/// True iff the largest eigenvalue of the symmetric matrix `m` is `<= tol`.
pub fn is_negative_semidefinite(m: &Matrix, tol: f64) -> Result<bool> {
    Ok(max_eigenvalue(m)? <= tol)
}

/// Solves `M x = b` for symmetric positive definite `M` by Cholesky factorization.
///
/// A non-positive pivot yields [`Error::Singular`] naming the failing index.
pub fn solve_spd(m: &Matrix, b: &Vector) -> Result<Vector> {
    require_symmetric(m, "solve_spd")?;
    let n = m.nrows();
    if b.len() != n {
        return Err(Error::contract(format!("solve_spd: right-hand side has length {}, matrix is {n}x{n}", b.len())));
    }
    let l = cholesky(m)?;
    let x = cholesky_solve(&l, b);
    // one step of iterative refinement
    let residual = b - m * &x;
    Ok(x + cholesky_solve(&l, &residual))
}

fn cholesky_solve(l: &Matrix, b: &Vector) -> Vector {
    let n = l.nrows();
    // forward: L y = b
    let mut y = Vector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    // backward: Lᵀ x = y
    let mut x = Vector::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Lower-triangular Cholesky factor.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > 0.0) {
            return Err(Error::Singular { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// `−a aᵀ`, negative semi-definite by construction.
pub fn neg_gram(a: &Vector) -> Matrix {
    -(a * a.transpose())
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// `n` log-spaced values between `lo` and `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
        }
    }
}
