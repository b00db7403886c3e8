//! Moment-based open-loop problem, condensed into a dense QP over the stacked
//! input corrections `v = (v₀, …, v_{N−1})`.
//!
//! Means propagate as `μ(k+1) = (A+BK)μ(k) + Bv_k + μ_W` from `μ(0) = x_j`,
//! the nominal trajectory as `z(k+1) = (A+BK)z(k) + Bv_k + μ_W` from
//! `z(0) = z_j`, and covariances from `Σ_X(0) = 0`. Covariance terms do not
//! depend on `v` and end up in a constant offset.

use crate::linalg::{Mat, Vector};
use crate::model::{stage_cost_moments, CostForm, LinearStochasticSystem, ModelError, QuadCost, RiskConstraints};
use crate::qp::{PreparedQp, Qp, QpError, QpSolution};
use crate::tightening::TighteningSchedule;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Origin of one inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRef {
    /// Tightened `cᵢᵀz(k) ≤ pᵢ − ρ(cᵢᵀE(j+k))`.
    State { row: usize, k: usize },
    /// Tightened `dᵢᵀ(Kz(k) + v_k) ≤ qᵢ − ρ(dᵢᵀKE(j+k))`.
    Input { row: usize, k: usize },
    /// Upper (`sign = 1`) or lower (`sign = −1`) box bound on `v_k[coord]`.
    Box { k: usize, coord: usize, sign: i8 },
}

/// Everything about the open-loop problem that does not change between
/// closed-loop steps.
#[derive(Debug, Clone)]
pub struct OcpLayout {
    sys: LinearStochasticSystem,
    cost: QuadCost,
    constraints: RiskConstraints,
    terminal: Mat,
    horizon: usize,
    form: CostForm,
    /// `μ(k) = phi[k]·x + gamma[k]·v + omega[k]`, `k = 0..=N`.
    phi: Vec<Mat>,
    gamma: Vec<Mat>,
    omega: Vec<Vector>,
    /// Objective `½vᵀHv + (Gx·x + g0)ᵀv + offset(x)`.
    h: Mat,
    gx: Mat,
    g0: Vector,
    off_xx: Mat,
    off_x: Vector,
    off_c: f64,
    /// `A v ≤ bound − backoff − bz·z − bw`.
    a: Mat,
    rows: Vec<RowRef>,
    bound: Vector,
    bz: Mat,
    bw: Vector,
    /// Terminal equality `aeq·v = −beq_z·z − beq_w`.
    aeq: Mat,
    beq_z: Mat,
    beq_w: Vector,
    prepared: PreparedQp,
}

/// Step-dependent data of one open-loop problem.
#[derive(Debug, Clone)]
pub struct OcpData {
    pub g: Vector,
    pub b: Vector,
    pub beq: Vector,
    /// Objective terms independent of `v`.
    pub offset: f64,
}

impl OcpLayout {
    pub fn new(
        sys: &LinearStochasticSystem,
        cost: &QuadCost,
        constraints: &RiskConstraints,
        terminal: &Mat,
        horizon: usize,
        form: CostForm,
    ) -> Result<Self, OcpError> {
        if horizon == 0 {
            return Err(OcpError::ZeroHorizon);
        }
        cost.check_dims(sys)?;
        constraints.check_dims(sys)?;
        let (n, l) = (sys.n(), sys.l());
        if terminal.shape() != (n, n) {
            return Err(OcpError::DimensionMismatch(format!("terminal weight is {:?}, expected {n}x{n}", terminal.shape())));
        }
        let nv = horizon * l;
        let acl = sys.acl();
        let (b, k) = (sys.b(), sys.k());

        let mut phi = vec![Mat::identity(n, n)];
        let mut gamma = vec![Mat::zeros(n, nv)];
        let mut omega = vec![Vector::zeros(n)];
        for step in 0..horizon {
            phi.push(acl * &phi[step]);
            let mut g = acl * &gamma[step];
            g.view_mut((0, step * l), (n, l)).copy_from(b);
            gamma.push(g);
            omega.push(acl * &omega[step] + sys.mu_w());
        }

        // Each stage is a quadratic form in (μ(k), v_k) with weight `m`.
        let weight = cost.closed_loop_weight(k);
        let cross = match form {
            CostForm::AsPrinted => Mat::zeros(l, n),
            CostForm::ExactExpectation => cost.r() * k,
        };
        let mut m = Mat::zeros(n + l, n + l);
        m.view_mut((0, 0), (n, n)).copy_from(&weight);
        m.view_mut((n, 0), (l, n)).copy_from(&cross);
        m.view_mut((0, n), (n, l)).copy_from(&cross.transpose());
        m.view_mut((n, n), (l, l)).copy_from(cost.r());

        let mut hbar = Mat::zeros(nv, nv);
        let mut gx = Mat::zeros(nv, n);
        let mut g0 = Vector::zeros(nv);
        let mut off_xx = Mat::zeros(n, n);
        let mut off_x = Vector::zeros(n);
        let mut off_c = 0.0;
        let mut add = |wt: &Mat, t: &Mat, sx: &Mat, s0: &Vector| {
            let wt_t = wt * t;
            hbar += t.transpose() * &wt_t;
            gx += wt_t.transpose() * sx;
            g0 += wt_t.transpose() * s0;
            let wsx = wt * sx;
            off_xx += sx.transpose() * &wsx;
            off_x += wsx.transpose() * s0;
            off_c += s0.dot(&(wt * s0));
        };
        for step in 0..horizon {
            let mut t = Mat::zeros(n + l, nv);
            t.view_mut((0, 0), (n, nv)).copy_from(&gamma[step]);
            for i in 0..l {
                t[(n + i, step * l + i)] = 1.0;
            }
            let mut sx = Mat::zeros(n + l, n);
            sx.view_mut((0, 0), (n, n)).copy_from(&phi[step]);
            let mut s0 = Vector::zeros(n + l);
            s0.rows_mut(0, n).copy_from(&omega[step]);
            add(&m, &t, &sx, &s0);
        }
        add(terminal, &gamma[horizon], &phi[horizon], &omega[horizon]);

        // Trace terms from Σ_X(0) = 0.
        let mut sigma = Mat::zeros(n, n);
        for _ in 0..horizon {
            off_c += (&weight * &sigma).trace();
            sigma = acl * &sigma * acl.transpose() + sys.sigma_w();
        }
        off_c += (terminal * &sigma).trace();

        let mut h = hbar * 2.0;
        h = (&h + h.transpose()) * 0.5;
        let gx = gx * 2.0;
        let g0 = g0 * 2.0;

        let mut rows = Vec::new();
        let mut a_rows: Vec<Vector> = Vec::new();
        let mut bound = Vec::new();
        let mut bz_rows: Vec<Vector> = Vec::new();
        let mut bw = Vec::new();
        for step in 0..horizon {
            for (i, sc) in constraints.state.iter().enumerate() {
                rows.push(RowRef::State { row: i, k: step });
                a_rows.push(gamma[step].transpose() * &sc.c);
                bound.push(sc.p);
                bz_rows.push(phi[step].transpose() * &sc.c);
                bw.push(sc.c.dot(&omega[step]));
            }
            for (i, ic) in constraints.input.iter().enumerate() {
                rows.push(RowRef::Input { row: i, k: step });
                let kd = k.transpose() * &ic.d;
                let mut a = gamma[step].transpose() * &kd;
                for c in 0..l {
                    a[step * l + c] += ic.d[c];
                }
                a_rows.push(a);
                bound.push(ic.q);
                bz_rows.push(phi[step].transpose() * &kd);
                bw.push(kd.dot(&omega[step]));
            }
            if let Some(vb) = &constraints.input_box {
                for c in 0..l {
                    for (sign, lim) in [(1i8, vb.upper[c]), (-1i8, -vb.lower[c])] {
                        if lim.is_finite() {
                            rows.push(RowRef::Box { k: step, coord: c, sign });
                            let mut a = Vector::zeros(nv);
                            a[step * l + c] = f64::from(sign);
                            a_rows.push(a);
                            bound.push(lim);
                            bz_rows.push(Vector::zeros(n));
                            bw.push(0.0);
                        }
                    }
                }
            }
        }
        let stack = |rs: &[Vector], cols: usize| {
            let mut out = Mat::zeros(rs.len(), cols);
            for (i, r) in rs.iter().enumerate() {
                out.set_row(i, &r.transpose());
            }
            out
        };
        let a = stack(&a_rows, nv);
        let bz = stack(&bz_rows, n);
        let aeq = gamma[horizon].clone();
        let beq_z = phi[horizon].clone();
        let beq_w = omega[horizon].clone();
        let prepared = PreparedQp::new(&h, &a, &aeq)?;
        Ok(OcpLayout {
            sys: sys.clone(),
            cost: cost.clone(),
            constraints: constraints.clone(),
            terminal: terminal.clone(),
            horizon,
            form,
            phi,
            gamma,
            omega,
            h,
            gx,
            g0,
            off_xx,
            off_x,
            off_c,
            a,
            rows,
            bound: Vector::from_vec(bound),
            bz,
            bw: Vector::from_vec(bw),
            aeq,
            beq_z,
            beq_w,
            prepared,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn form(&self) -> CostForm {
        self.form
    }
    pub fn system(&self) -> &LinearStochasticSystem {
        &self.sys
    }
    pub fn cost(&self) -> &QuadCost {
        &self.cost
    }
    pub fn constraints(&self) -> &RiskConstraints {
        &self.constraints
    }
    pub fn terminal(&self) -> &Mat {
        &self.terminal
    }
    pub fn rows(&self) -> &[RowRef] {
        &self.rows
    }
    pub fn prepared(&self) -> &PreparedQp {
        &self.prepared
    }

    fn backoff(&self, idx: usize, schedule: &TighteningSchedule, j: usize) -> f64 {
        match self.rows[idx] {
            RowRef::State { row, k } => schedule.state_backoff(row, j + k),
            RowRef::Input { row, k } => schedule.input_backoff(row, j + k),
            RowRef::Box { .. } => 0.0,
        }
    }

    pub fn data(&self, schedule: &TighteningSchedule, j: usize, x: &Vector, z: &Vector) -> OcpData {
        let g = &self.gx * x + &self.g0;
        let mut b = &self.bound - &self.bz * z - &self.bw;
        for (i, bi) in b.iter_mut().enumerate() {
            *bi -= self.backoff(i, schedule, j);
        }
        let beq = -(&self.beq_z * z + &self.beq_w);
        let offset = x.dot(&(&self.off_xx * x)) + 2.0 * self.off_x.dot(x) + self.off_c;
        OcpData { g, b, beq, offset }
    }

    /// Explicit QP for inspection or export.
    pub fn condense(&self, schedule: &TighteningSchedule, j: usize, x: &Vector, z: &Vector) -> (Qp, f64) {
        let d = self.data(schedule, j, x, z);
        (Qp { h: self.h.clone(), g: d.g, a: self.a.clone(), b: d.b, aeq: self.aeq.clone(), beq: d.beq }, d.offset)
    }

    pub fn solve(&self, schedule: &TighteningSchedule, j: usize, x: &Vector, z: &Vector) -> Result<(QpSolution, f64), OcpError> {
        let d = self.data(schedule, j, x, z);
        let sol = self.prepared.solve(&d.g, &d.b, &d.beq)?;
        Ok((sol, d.offset))
    }

    /// Nominal trajectory `z(0..=N)` under `v`.
    pub fn nominal_trajectory(&self, z: &Vector, v: &Vector) -> Vec<Vector> {
        (0..=self.horizon).map(|k| &self.phi[k] * z + &self.gamma[k] * v + &self.omega[k]).collect()
    }

    /// Largest violation of the tightened constraints and the terminal
    /// equality by `v`, evaluated by forward simulation of `z`.
    pub fn max_violation(&self, schedule: &TighteningSchedule, j: usize, z: &Vector, v: &Vector) -> f64 {
        let l = self.sys.l();
        let traj = self.nominal_trajectory(z, v);
        let mut worst = traj[self.horizon].amax();
        for k in 0..self.horizon {
            let vk = v.rows(k * l, l);
            for (i, sc) in self.constraints.state.iter().enumerate() {
                worst = worst.max(sc.c.dot(&traj[k]) - (sc.p - schedule.state_backoff(i, j + k)));
            }
            let u = self.sys.k() * &traj[k] + vk;
            for (i, ic) in self.constraints.input.iter().enumerate() {
                worst = worst.max(ic.d.dot(&u) - (ic.q - schedule.input_backoff(i, j + k)));
            }
            if let Some(vb) = &self.constraints.input_box {
                for c in 0..l {
                    worst = worst.max(vk[c] - vb.upper[c]).max(vb.lower[c] - vk[c]);
                }
            }
        }
        worst.max(0.0)
    }

    /// Full open-loop cost by forward propagation of means and covariances.
    pub fn evaluate_open_loop_cost(&self, x: &Vector, v: &Vector) -> f64 {
        let (n, l) = (self.sys.n(), self.sys.l());
        let acl = self.sys.acl();
        let mut mu = x.clone();
        let mut sigma = Mat::zeros(n, n);
        let mut total = 0.0;
        for k in 0..self.horizon {
            let vk = v.rows(k * l, l).into_owned();
            total += stage_cost_moments(&self.cost, &mu, &sigma, self.sys.k(), &vk, self.form);
            mu = acl * &mu + self.sys.b() * &vk + self.sys.mu_w();
            sigma = acl * &sigma * acl.transpose() + self.sys.sigma_w();
        }
        total + mu.dot(&(&self.terminal * &mu)) + (&self.terminal * &sigma).trace()
    }
}

/// One instance of the open-loop problem at closed-loop step `step`.
#[derive(Debug, Clone)]
pub struct OpenLoopProblem<'a> {
    pub layout: &'a OcpLayout,
    pub schedule: &'a TighteningSchedule,
    pub step: usize,
    pub x: Vector,
    pub z: Vector,
}

impl OpenLoopProblem<'_> {
    pub fn condense(&self) -> (Qp, f64) {
        self.layout.condense(self.schedule, self.step, &self.x, &self.z)
    }

    pub fn solve(&self) -> Result<(QpSolution, f64), OcpError> {
        self.layout.solve(self.schedule, self.step, &self.x, &self.z)
    }

    pub fn evaluate_cost(&self, v: &Vector) -> f64 {
        self.layout.evaluate_open_loop_cost(&self.x, v)
    }
}
