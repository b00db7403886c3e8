//! Dense strictly convex quadratic programs
//!
//! ```text
//! minimize   ½ vᵀHv + gᵀv
//! subject to A v ≤ b,  Aeq v = beq
//! ```
//!
//! Equalities are eliminated with an SVD null-space basis; the reduced problem
//! is solved with the Goldfarb–Idnani dual active-set method, which starts
//! from the unconstrained minimizer and needs no feasible starting point.
//! Infeasibility is reported with a Farkas certificate.

use crate::linalg::{all_finite, Mat, Vector};
use nalgebra::{Cholesky, Dyn, SVD};
use std::fmt;
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Hessian is not positive definite on the equality null space")]
    NotPositiveDefinite,
    #[error("non-finite problem data")]
    NonFinite,
    #[error("malformed QP dump at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

impl QpStatus {
    pub fn label(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::IterLimit => "iter_limit",
        }
    }
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qp {
    pub h: Mat,
    pub g: Vector,
    pub a: Mat,
    pub b: Vector,
    pub aeq: Mat,
    pub beq: Vector,
}

impl Qp {
    pub fn unconstrained(h: Mat, g: Vector) -> Self {
        let n = g.len();
        Qp { h, g, a: Mat::zeros(0, n), b: Vector::zeros(0), aeq: Mat::zeros(0, n), beq: Vector::zeros(0) }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, v: &Vector) -> f64 {
        0.5 * v.dot(&(&self.h * v)) + self.g.dot(v)
    }

    /// Largest violation of `Av ≤ b` and `Aeq v = beq`, zero when feasible.
    pub fn max_violation(&self, v: &Vector) -> f64 {
        let ineq = (&self.a * v - &self.b).iter().fold(0.0f64, |m, &x| m.max(x));
        let eq = (&self.aeq * v - &self.beq).amax();
        ineq.max(eq)
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        PreparedQp::new(&self.h, &self.a, &self.aeq)?.solve(&self.g, &self.b, &self.beq)
    }

    /// Plain-text dump: a header line, the three dimensions, then each array
    /// row by row.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "riskmpc-qp 1")?;
        writeln!(w, "{} {} {}", self.dim(), self.a.nrows(), self.aeq.nrows())?;
        let mut block = |name: &str, m: &Mat| -> io::Result<()> {
            writeln!(w, "{name}")?;
            for i in 0..m.nrows() {
                let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:.17e}")).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        };
        block("H", &self.h)?;
        let row = |x: &Vector| Mat::from_row_slice(usize::from(!x.is_empty()), x.len(), x.as_slice());
        block("g", &row(&self.g))?;
        block("A", &self.a)?;
        block("b", &row(&self.b))?;
        block("Aeq", &self.aeq)?;
        block("beq", &row(&self.beq))?;
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self, QpError> {
        let lines: Vec<String> = r.lines().collect::<Result<_, _>>()?;
        let mut pos = 0usize;
        let err = |line: usize, msg: &str| QpError::Parse { line: line + 1, msg: msg.to_string() };
        let next = |pos: &mut usize| -> Result<(usize, String), QpError> {
            let idx = *pos;
            *pos += 1;
            lines.get(idx).cloned().map(|l| (idx, l)).ok_or_else(|| err(idx, "unexpected end of file"))
        };
        let (i, header) = next(&mut pos)?;
        if header.trim() != "riskmpc-qp 1" {
            return Err(err(i, "missing header"));
        }
        let (i, dims) = next(&mut pos)?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| err(i, "bad dimension")))
            .collect::<Result<_, _>>()?;
        let [nv, m, p] = dims[..] else { return Err(err(i, "expected three dimensions")) };
        let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<Mat, QpError> {
            let (i, tag) = next(&mut pos)?;
            if tag.trim() != name {
                return Err(err(i, &format!("expected block '{name}'")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (i, line) = next(&mut pos)?;
                let vals: Vec<f64> = if cols == 0 {
                    Vec::new()
                } else {
                    line.split_whitespace()
                        .map(|s| s.parse().map_err(|_| err(i, "bad number")))
                        .collect::<Result<_, _>>()?
                };
                if vals.len() != cols {
                    return Err(err(i, &format!("expected {cols} values")));
                }
                data.extend(vals);
            }
            Ok(Mat::from_row_slice(rows, cols, &data))
        };
        let as_vec = |m: Mat| Vector::from_iterator(m.len(), m.iter().copied());
        let h = read_block("H", nv, nv)?;
        let g = as_vec(read_block("g", usize::from(nv > 0), nv)?);
        let a = read_block("A", m, nv)?;
        let b = as_vec(read_block("b", usize::from(m > 0), m)?);
        let aeq = read_block("Aeq", p, nv)?;
        let beq = as_vec(read_block("beq", usize::from(p > 0), p)?);
        Ok(Qp { h, g, a, b, aeq, beq })
    }
}

/// `λ ≥ 0`, `μ` with `Aᵀλ + Aeqᵀμ = 0` and `λᵀb + μᵀbeq < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarkasCertificate {
    pub lambda: Vector,
    pub mu: Vector,
}

impl FarkasCertificate {
    /// `(‖Aᵀλ + Aeqᵀμ‖∞, λᵀb + μᵀbeq, min λ)`.
    pub fn check(&self, a: &Mat, b: &Vector, aeq: &Mat, beq: &Vector) -> (f64, f64, f64) {
        let stat = a.transpose() * &self.lambda + aeq.transpose() * &self.mu;
        let gap = self.lambda.dot(b) + self.mu.dot(beq);
        let min = self.lambda.iter().copied().fold(f64::INFINITY, f64::min);
        (stat.amax(), gap, if self.lambda.is_empty() { 0.0 } else { min })
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub v: Vector,
    pub objective: f64,
    pub status: QpStatus,
    /// Indices of the inequality rows in the final active set.
    pub active: Vec<usize>,
    /// Inequality multipliers (zero off the active set).
    pub lambda: Vector,
    /// Equality multipliers.
    pub mu: Vector,
    pub iterations: usize,
    pub certificate: Option<FarkasCertificate>,
}

/// A QP whose `H`, `A` and `Aeq` are fixed; only `g`, `b` and `beq` vary
/// between solves. Immutable once built, so one instance can serve many
/// threads.
#[derive(Debug, Clone)]
pub struct PreparedQp {
    h: Mat,
    a: Mat,
    aeq: Mat,
    /// Orthonormal null-space basis of `Aeq`.
    z: Mat,
    aeq_pinv: Mat,
    /// Left null space of `Aeq` (inconsistency directions for `beq`).
    aeq_left_null: Mat,
    /// Reduced Hessian inverse `(ZᵀHZ)⁻¹`.
    hr_inv: Mat,
    /// `A Z`
    c: Mat,
    row_norms: Vec<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

const RANK_TOL: f64 = 1e-12;

impl PreparedQp {
    pub fn new(h: &Mat, a: &Mat, aeq: &Mat) -> Result<Self, QpError> {
        let nv = h.nrows();
        if h.ncols() != nv || a.ncols() != nv || aeq.ncols() != nv {
            return Err(QpError::DimensionMismatch(format!(
                "H is {}x{}, A has {} columns, Aeq has {} columns",
                h.nrows(),
                h.ncols(),
                a.ncols(),
                aeq.ncols()
            )));
        }
        if !all_finite(h) || !all_finite(a) || !all_finite(aeq) {
            return Err(QpError::NonFinite);
        }
        let (z, aeq_pinv, aeq_left_null) = null_space(aeq, nv);
        let hr = z.transpose() * h * &z;
        let hr = (&hr + hr.transpose()) * 0.5;
        let hr_inv = if hr.nrows() == 0 {
            hr
        } else {
            Cholesky::<f64, Dyn>::new(hr).ok_or(QpError::NotPositiveDefinite)?.inverse()
        };
        let c = a * &z;
        let row_norms = (0..a.nrows()).map(|i| a.row(i).norm().max(1.0)).collect();
        Ok(PreparedQp {
            h: h.clone(),
            a: a.clone(),
            aeq: aeq.clone(),
            z,
            aeq_pinv,
            aeq_left_null,
            hr_inv,
            c,
            row_norms,
            max_iterations: 200 * (a.nrows() + nv).max(1),
            tolerance: 1e-10,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
    pub fn n_ineq(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_eq(&self) -> usize {
        self.aeq.nrows()
    }
    pub fn h(&self) -> &Mat {
        &self.h
    }
    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn aeq(&self) -> &Mat {
        &self.aeq
    }

    pub fn solve(&self, g: &Vector, b: &Vector, beq: &Vector) -> Result<QpSolution, QpError> {
        let nv = self.dim();
        let (m, p) = (self.n_ineq(), self.n_eq());
        if g.len() != nv || b.len() != m || beq.len() != p {
            return Err(QpError::DimensionMismatch(format!(
                "g/b/beq have lengths {}/{}/{}, expected {nv}/{m}/{p}",
                g.len(),
                b.len(),
                beq.len()
            )));
        }
        if g.iter().chain(b.iter()).chain(beq.iter()).any(|x| !x.is_finite()) {
            return Err(QpError::NonFinite);
        }

        // Inconsistent equalities: the residual of the least-squares solution
        // lies in the left null space of Aeq and certifies infeasibility.
        if self.aeq_left_null.ncols() > 0 {
            let proj = self.aeq_left_null.transpose() * beq;
            if proj.amax() > self.tolerance * (1.0 + beq.amax()) {
                let r = &self.aeq_left_null * proj;
                let cert = FarkasCertificate { lambda: Vector::zeros(m), mu: -r };
                return Ok(self.infeasible(g, cert, 0));
            }
        }

        let vp = &self.aeq_pinv * beq;
        let f = self.z.transpose() * (g + &self.h * &vp);
        let d = b - &self.a * &vp;
        let mut y = -(&self.hr_inv * &f);

        // Most closed-loop problems are solved by the unconstrained minimizer.
        let slack = &self.c * &y - &d;
        if (0..m).all(|i| slack[i] <= self.tolerance * self.row_norms[i] * (1.0 + d[i].abs())) {
            return Ok(self.finish(g, &vp, &y, Vec::new(), Vec::new(), 0));
        }

        let q = y.len();
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut iterations = 0usize;
        loop {
            // Pick the most violated constraint, scaled by its row norm.
            let mut pick = None;
            let mut worst = 0.0;
            for i in 0..m {
                if active.contains(&i) {
                    continue;
                }
                let s = (self.c.row(i) * &y)[0] - d[i];
                let scaled = s / self.row_norms[i];
                if s > self.tolerance * self.row_norms[i] * (1.0 + d[i].abs()) && scaled > worst {
                    worst = scaled;
                    pick = Some(i);
                }
            }
            let Some(pi) = pick else {
                return Ok(self.finish(g, &vp, &y, active, u, iterations));
            };
            // In the dual, constraint `cᵀy ≤ d` is `nᵀy ≥ −d` with `n = −c`.
            let n_plus: Vector = -self.c.row(pi).transpose();
            let mut u_plus = 0.0;
            loop {
                iterations += 1;
                if iterations > self.max_iterations {
                    let mut sol = self.finish(g, &vp, &y, active, u, iterations);
                    sol.status = QpStatus::IterLimit;
                    return Ok(sol);
                }
                let (step, r) = self.directions(&active, &n_plus, q);
                // Dual step limit from active multipliers.
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (j, &rj) in r.iter().enumerate() {
                    if rj > 0.0 {
                        let ratio = u[j] / rj;
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(j);
                        }
                    }
                }
                let zn = step.dot(&n_plus);
                let primal_nonzero = step.amax() > 1e-12 * (1.0 + n_plus.amax()) && zn > 1e-14;
                let t2 = if primal_nonzero { (-d[pi] - n_plus.dot(&y)) / zn } else { f64::INFINITY };
                let t = t1.min(t2);
                if !t.is_finite() {
                    let mut lambda = Vector::zeros(m);
                    lambda[pi] = 1.0;
                    for (j, &i) in active.iter().enumerate() {
                        lambda[i] = (-r[j]).max(0.0);
                    }
                    let mu = self.equality_certificate(&lambda);
                    return Ok(self.infeasible(g, FarkasCertificate { lambda, mu }, iterations));
                }
                if primal_nonzero {
                    y += &step * t;
                }
                for (uj, rj) in u.iter_mut().zip(r.iter()) {
                    *uj -= t * rj;
                }
                u_plus += t;
                if primal_nonzero && t2 <= t1 {
                    active.push(pi);
                    u.push(u_plus);
                    break;
                }
                let j = drop_at.expect("finite dual step has a blocking multiplier");
                active.remove(j);
                u.remove(j);
            }
        }
    }

    /// Primal direction `(I − H⁻¹N(NᵀH⁻¹N)⁻¹Nᵀ)H⁻¹n` and dual direction
    /// `(NᵀH⁻¹N)⁻¹NᵀH⁻¹n` for the active normals `N = −C_active`.
    fn directions(&self, active: &[usize], n_plus: &Vector, q: usize) -> (Vector, Vector) {
        let hn = &self.hr_inv * n_plus;
        let s = active.len();
        if s == 0 {
            return (hn, Vector::zeros(0));
        }
        let mut nmat = Mat::zeros(q, s);
        for (j, &i) in active.iter().enumerate() {
            nmat.set_column(j, &(-self.c.row(i).transpose()));
        }
        let hinv_n = &self.hr_inv * &nmat;
        let gram = nmat.transpose() * &hinv_n;
        let rhs = nmat.transpose() * &hn;
        let r = match Cholesky::<f64, Dyn>::new(gram.clone()) {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs).unwrap_or_else(|| Vector::zeros(s)),
        };
        (hn - hinv_n * &r, r)
    }

    fn equality_certificate(&self, lambda: &Vector) -> Vector {
        // Aᵀλ lies in the row space of Aeq; μ = −(Aeqᵀ)⁺Aᵀλ cancels it.
        if self.n_eq() == 0 {
            return Vector::zeros(0);
        }
        -(self.aeq_pinv.transpose() * (self.a.transpose() * lambda))
    }

    fn infeasible(&self, g: &Vector, cert: FarkasCertificate, iterations: usize) -> QpSolution {
        let v = Vector::zeros(self.dim());
        QpSolution {
            objective: g.dot(&v),
            v,
            status: QpStatus::Infeasible,
            active: Vec::new(),
            lambda: Vector::zeros(self.n_ineq()),
            mu: Vector::zeros(self.n_eq()),
            iterations,
            certificate: Some(cert),
        }
    }

    fn finish(&self, g: &Vector, vp: &Vector, y: &Vector, active: Vec<usize>, u: Vec<f64>, iterations: usize) -> QpSolution {
        let v = vp + &self.z * y;
        let mut lambda = Vector::zeros(self.n_ineq());
        for (&i, &ui) in active.iter().zip(&u) {
            lambda[i] = ui;
        }
        let hv = &self.h * &v;
        let mu = if self.n_eq() == 0 {
            Vector::zeros(0)
        } else {
            let resid = &hv + g + self.a.transpose() * &lambda;
            -(self.aeq_pinv.transpose() * resid)
        };
        QpSolution {
            objective: 0.5 * v.dot(&hv) + g.dot(&v),
            v,
            status: QpStatus::Optimal,
            active,
            lambda,
            mu,
            iterations,
            certificate: None,
        }
    }
}

/// `(Z, Aeq⁺, left null space of Aeq)` from a full SVD.
fn null_space(aeq: &Mat, nv: usize) -> (Mat, Mat, Mat) {
    let p = aeq.nrows();
    if p == 0 {
        return (Mat::identity(nv, nv), Mat::zeros(nv, 0), Mat::zeros(0, 0));
    }
    // Work on the square Gram matrices so both singular subspaces are complete.
    let right = SVD::new(aeq.transpose() * aeq, false, true);
    let vt = right.v_t.expect("requested V");
    let smax = right.singular_values.max().max(0.0);
    let tol = RANK_TOL * smax.max(1.0);
    let null_cols: Vec<usize> = (0..nv).filter(|&i| right.singular_values[i] <= tol).collect();
    let mut z = Mat::zeros(nv, null_cols.len());
    for (j, &i) in null_cols.iter().enumerate() {
        z.set_column(j, &vt.row(i).transpose());
    }
    let left = SVD::new(aeq * aeq.transpose(), true, false);
    let uu = left.u.expect("requested U");
    let lsmax = left.singular_values.max().max(0.0);
    let ltol = RANK_TOL * lsmax.max(1.0);
    let left_cols: Vec<usize> = (0..p).filter(|&i| left.singular_values[i] <= ltol).collect();
    let mut ln = Mat::zeros(p, left_cols.len());
    for (j, &i) in left_cols.iter().enumerate() {
        ln.set_column(j, &uu.column(i));
    }
    let pinv = aeq.clone().pseudo_inverse(1e-12 * aeq.norm().max(1.0)).expect("non-negative eps");
    (z, pinv, ln)
}
