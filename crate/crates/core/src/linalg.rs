//! Dense matrix kernels: discrete Lyapunov and algebraic Riccati solvers,
//! semidefinite Cholesky, and the small helpers the synthesis steps share.
//!
//! Matrices are plain `nalgebra` dynamic matrices. Symmetric inputs are
//! validated where it matters (covariances, weights) rather than encoded in
//! a separate type.

use nalgebra::{DMatrix, DVector, Schur};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Iteration cap shared by the doubling solvers.
pub const MAX_ITERATIONS: usize = 10_000;

/// Relative change between successive iterates at which doubling stops.
pub const CONVERGENCE_TOL: f64 = 1e-13;

/// Relative residual every returned Lyapunov/Riccati solution must meet.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Schur stable (spectral radius {radius:.6})")]
    NotStable { radius: f64 },
    #[error("iteration did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,
    #[error("matrix is not positive semidefinite (pivot {pivot:.3e})")]
    NotPsd { pivot: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Which of the two discrete Lyapunov forms to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovForm {
    /// `A X Aᵀ + Q = X` (covariance propagation).
    Covariance,
    /// `Aᵀ X A + Q = X` (cost-to-go / terminal weight).
    CostToGo,
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat, LinalgError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(LinalgError::DimensionMismatch("ragged matrix rows".into()));
    }
    let m = Mat::from_fn(nrows, ncols, |i, j| rows[i][j]);
    if !all_finite(&m) {
        return Err(LinalgError::NonFinite);
    }
    Ok(m)
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Replace `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn is_symmetric(m: &Mat, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = 1.0 + m.amax();
    let n = m.nrows();
    (0..n).all(|i| ((i + 1)..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().min()
}

/// `lower ⪯ upper + tol·I` in the semidefinite order.
pub fn psd_leq(lower: &Mat, upper: &Mat, tol: f64) -> bool {
    min_eigenvalue(&(upper - lower)) >= -tol
}

/// Largest eigenvalue magnitude.
///
/// Uses the real Schur form; falls back to Gelfand's formula on repeated
/// squaring if the Schur iteration fails to converge.
pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if let Some(schur) = Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    gelfand_radius(a)
}

fn gelfand_radius(a: &Mat) -> f64 {
    // A^(2^k) = exp(log_norm) * unit, with ‖unit‖ = 1.
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut unit = a / norm;
    let mut log_norm = norm.ln();
    let mut exponent = 1.0;
    for _ in 0..40 {
        let sq = &unit * &unit;
        let sq_norm = sq.norm();
        if sq_norm == 0.0 {
            return 0.0;
        }
        unit = sq / sq_norm;
        log_norm = 2.0 * log_norm + sq_norm.ln();
        exponent *= 2.0;
    }
    (log_norm / exponent).exp()
}

fn relative_change(new: &Mat, old: &Mat) -> f64 {
    (new - old).norm() / (1.0 + new.norm())
}

/// Frobenius norm of the Lyapunov defect for the chosen form.
pub fn lyapunov_residual(acl: &Mat, q: &Mat, x: &Mat, form: LyapunovForm) -> f64 {
    let image = match form {
        LyapunovForm::Covariance => acl * x * acl.transpose(),
        LyapunovForm::CostToGo => acl.transpose() * x * acl,
    };
    (image + q - x).norm()
}

/// Solve the discrete Lyapunov equation by doubling.
///
/// Accumulates `X = Σ Aᵏ Q (Aᵏ)ᵀ` via `X ← X + Aₖ X Aₖᵀ`, `Aₖ ← Aₖ²`, then
/// polishes the result with one residual-correction pass.
pub fn solve_dlyap(acl: &Mat, q: &Mat, form: LyapunovForm) -> Result<Mat, LinalgError> {
    let n = acl.nrows();
    if !acl.is_square() || q.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!(
            "Lyapunov: A is {:?}, Q is {:?}",
            acl.shape(),
            q.shape()
        )));
    }
    if !all_finite(acl) || !all_finite(q) {
        return Err(LinalgError::NonFinite);
    }
    let radius = spectral_radius(acl);
    if radius >= 1.0 {
        return Err(LinalgError::NotStable { radius });
    }
    let base = match form {
        LyapunovForm::Covariance => acl.clone(),
        LyapunovForm::CostToGo => acl.transpose(),
    };
    let mut x = doubling_sum(&base, q)?;
    // Residual correction: X solves the equation up to rounding, so the
    // defect itself is a (tiny) right-hand side for the same operator.
    for _ in 0..2 {
        let image = &base * &x * base.transpose();
        let defect = &image + q - &x;
        if defect.norm() <= 1e-3 * RESIDUAL_TOL * (1.0 + x.norm()) {
            break;
        }
        let correction = doubling_sum(&base, &defect)?;
        x += correction;
        symmetrize(&mut x);
    }
    let res = lyapunov_residual(acl, q, &x, form);
    if res > RESIDUAL_TOL * (1.0 + x.norm()) {
        return Err(LinalgError::NonConvergence { iterations: MAX_ITERATIONS });
    }
    Ok(x)
}

fn doubling_sum(a: &Mat, q: &Mat) -> Result<Mat, LinalgError> {
    let mut x = q.clone();
    symmetrize(&mut x);
    let mut ak = a.clone();
    for _ in 0..MAX_ITERATIONS {
        let increment = &ak * &x * ak.transpose();
        let next_a = &ak * &ak;
        let inc_norm = increment.norm();
        x += increment;
        symmetrize(&mut x);
        ak = next_a;
        if !all_finite(&x) {
            return Err(LinalgError::NonFinite);
        }
        if inc_norm <= CONVERGENCE_TOL * (1.0 + x.norm()) * 1e-3 || ak.norm() < 1e-300 {
            return Ok(x);
        }
    }
    Err(LinalgError::NonConvergence { iterations: MAX_ITERATIONS })
}

/// Solution of the discrete algebraic Riccati equation and its gain.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: Mat,
    /// `K = −(R + BᵀPB)⁻¹BᵀPA`, so that `u = Kx`.
    pub k: Mat,
}

/// Frobenius norm of `AᵀPA − P + Q − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn riccati_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> f64 {
    let at = a.transpose();
    let mut res = &at * p * a - p + q;
    if b.ncols() > 0 {
        let btpa = b.transpose() * p * a;
        let s = r + b.transpose() * p * b;
        if let Some(chol) = s.cholesky() {
            res -= btpa.transpose() * chol.solve(&btpa);
        } else {
            return f64::INFINITY;
        }
    }
    res.norm()
}

fn riccati_gain(a: &Mat, b: &Mat, r: &Mat, p: &Mat) -> Result<Mat, LinalgError> {
    if b.ncols() == 0 {
        return Ok(Mat::zeros(0, a.nrows()));
    }
    let s = r + b.transpose() * p * b;
    let chol = s.cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(-chol.solve(&(b.transpose() * p * a)))
}

/// Solve the DARE with the structure-preserving doubling algorithm, then
/// polish with Newton (Hewer) steps on the closed-loop Lyapunov equation.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<RiccatiSolution, LinalgError> {
    let n = a.nrows();
    let l = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (l, l) {
        return Err(LinalgError::DimensionMismatch(format!(
            "DARE: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if ![a, b, q, r].iter().all(|m| all_finite(m)) {
        return Err(LinalgError::NonFinite);
    }
    if l == 0 {
        let p = solve_dlyap(a, q, LyapunovForm::CostToGo).map_err(|e| match e {
            LinalgError::NotStable { .. } => LinalgError::NotStabilizable,
            other => other,
        })?;
        return Ok(RiccatiSolution { p, k: Mat::zeros(0, n) });
    }
    let r_chol = r.clone().cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    let eye = Mat::identity(n, n);

    let mut ak = a.clone();
    let mut gk = b * r_chol.solve(&b.transpose());
    symmetrize(&mut gk);
    let mut hk = q.clone();
    symmetrize(&mut hk);

    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let m = &eye + &gk * &hk;
        let lu = m.lu();
        let w_a = lu.solve(&ak).ok_or(LinalgError::NotStabilizable)?;
        let w_g = lu.solve(&gk).ok_or(LinalgError::NotStabilizable)?;
        let next_a = &ak * &w_a;
        let mut next_g = &gk + &ak * &w_g * ak.transpose();
        let mut next_h = &hk + ak.transpose() * &hk * &w_a;
        symmetrize(&mut next_g);
        symmetrize(&mut next_h);
        if !all_finite(&next_h) || !all_finite(&next_a) || !all_finite(&next_g) {
            return Err(LinalgError::NotStabilizable);
        }
        let change = relative_change(&next_h, &hk);
        ak = next_a;
        gk = next_g;
        hk = next_h;
        if change <= CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NonConvergence { iterations: MAX_ITERATIONS });
    }

    let mut p = hk;
    let mut k = riccati_gain(a, b, r, &p)?;
    for _ in 0..3 {
        let acl = a + b * &k;
        if spectral_radius(&acl) >= 1.0 {
            return Err(LinalgError::NotStabilizable);
        }
        let res = riccati_residual(a, b, q, r, &p);
        if res <= 1e-3 * RESIDUAL_TOL * (1.0 + p.norm()) {
            break;
        }
        let rhs = q + k.transpose() * r * &k;
        p = solve_dlyap(&acl, &rhs, LyapunovForm::CostToGo)?;
        k = riccati_gain(a, b, r, &p)?;
    }
    let acl = a + b * &k;
    if spectral_radius(&acl) >= 1.0 {
        return Err(LinalgError::NotStabilizable);
    }
    if riccati_residual(a, b, q, r, &p) > RESIDUAL_TOL * (1.0 + p.norm()) {
        return Err(LinalgError::NonConvergence { iterations: MAX_ITERATIONS });
    }
    Ok(RiccatiSolution { p, k })
}

/// Lower-triangular `L` with `L Lᵀ = S` for positive semidefinite `S`.
///
/// Runs a diagonally pivoted outer-product factorization (which stops
/// cleanly at the numerical rank), then restores triangular shape with a QR
/// decomposition of the permuted factor. Rank-deficient inputs yield zero
/// columns.
pub fn chol(s: &Mat) -> Result<Mat, LinalgError> {
    let n = s.nrows();
    if !s.is_square() {
        return Err(LinalgError::DimensionMismatch(format!("chol of {:?}", s.shape())));
    }
    if !all_finite(s) {
        return Err(LinalgError::NonFinite);
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let mut work = s.clone();
    symmetrize(&mut work);
    let trace = work.trace().abs();
    let neg_tol = -1e-10 * trace.max(f64::MIN_POSITIVE);
    let stop_tol = 1e-15 * trace * n as f64;

    // Factor in original coordinates: column k of `f` is the k-th pivot column.
    let mut f = Mat::zeros(n, n);
    let mut done = vec![false; n];
    for k in 0..n {
        let mut best = None;
        for i in (0..n).filter(|&i| !done[i]) {
            let d = work[(i, i)];
            if d < neg_tol {
                return Err(LinalgError::NotPsd { pivot: d });
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((piv, d)) = best else { break };
        if d <= stop_tol {
            break;
        }
        done[piv] = true;
        let root = d.sqrt();
        for i in 0..n {
            f[(i, k)] = if done[i] && i != piv { 0.0 } else { work[(i, piv)] / root };
        }
        f[(piv, k)] = root;
        for i in (0..n).filter(|&i| !done[i]) {
            for j in (0..n).filter(|&j| !done[j]) {
                work[(i, j)] -= f[(i, k)] * f[(j, k)];
            }
        }
    }
    // Any remaining diagonal must be (numerically) nonnegative.
    for i in (0..n).filter(|&i| !done[i]) {
        if work[(i, i)] < neg_tol {
            return Err(LinalgError::NotPsd { pivot: work[(i, i)] });
        }
    }
    // f fᵀ = S; with fᵀ = Q R we get S = Rᵀ R and Rᵀ is lower triangular.
    let qr = f.transpose().qr();
    let mut lower = qr.r().transpose();
    for j in 0..n {
        if lower[(j, j)] < 0.0 {
            for i in 0..n {
                lower[(i, j)] = -lower[(i, j)];
            }
        }
    }
    Ok(lower)
}

/// Rank of `m` from its singular values, relative tolerance `rel_tol·σ_max`.
pub fn numerical_rank(m: &Mat, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// `[B, AB, …, Aⁿ⁻¹B]`.
pub fn controllability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let l = b.ncols();
    let mut out = Mat::zeros(n, n * l);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * l), (n, l)).copy_from(&block);
        block = a * block;
    }
    out
}
