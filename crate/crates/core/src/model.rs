//! Plant, cost and risk-constraint definitions, and the offline synthesis
//! of every quantity the controller and the performance audits rely on.

use crate::linalg::{
    self, controllability_matrix, is_symmetric, min_eigenvalue, numerical_rank, solve_dare, solve_dlyap,
    spectral_radius, LinalgError, LyapunovForm, Mat, Vector,
};
use crate::risk::RiskSpec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pair (A, B) is not controllable (controllability rank {rank} < {n})")]
    NotControllable { rank: usize, n: usize },
    #[error("tube gain does not stabilize the plant (spectral radius of A+BK = {radius:.6})")]
    GainNotStabilizing { radius: f64 },
    #[error("{0} must be symmetric positive semidefinite")]
    NotPsd(&'static str),
    #[error("{0} must be symmetric positive definite")]
    NotPd(&'static str),
    #[error("input box has lower bound above upper bound in coordinate {0}")]
    InvalidBox(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

/// `X(k+1) = A X(k) + B U(k) + W(k)` with `U = K X + v`.
#[derive(Debug, Clone)]
pub struct LinearStochasticSystem {
    a: Mat,
    b: Mat,
    mu_w: Vector,
    sigma_w: Mat,
    k: Mat,
    acl: Mat,
}

impl LinearStochasticSystem {
    pub fn new(a: Mat, b: Mat, mu_w: Vector, sigma_w: Mat, k: Mat) -> Result<Self, ModelError> {
        let n = a.nrows();
        let l = b.ncols();
        if !a.is_square() || b.nrows() != n || mu_w.len() != n || sigma_w.shape() != (n, n) || k.shape() != (l, n) {
            return Err(ModelError::DimensionMismatch(format!(
                "A {:?}, B {:?}, mu_W {}, Sigma_W {:?}, K {:?}",
                a.shape(),
                b.shape(),
                mu_w.len(),
                sigma_w.shape(),
                k.shape()
            )));
        }
        if ![&a, &b, &sigma_w, &k].iter().all(|m| linalg::all_finite(m)) || mu_w.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite.into());
        }
        let rank = numerical_rank(&controllability_matrix(&a, &b), 1e-10);
        if rank < n {
            return Err(ModelError::NotControllable { rank, n });
        }
        if !is_symmetric(&sigma_w, SYM_TOL) || min_eigenvalue(&sigma_w) < -PSD_TOL * (1.0 + sigma_w.amax()) {
            return Err(ModelError::NotPsd("Sigma_W"));
        }
        let acl = &a + &b * &k;
        let radius = spectral_radius(&acl);
        if radius >= 1.0 {
            return Err(ModelError::GainNotStabilizing { radius });
        }
        Ok(LinearStochasticSystem { a, b, mu_w, sigma_w, k, acl })
    }

    /// Same plant and noise with a different tube gain.
    pub fn with_gain(&self, k: Mat) -> Result<Self, ModelError> {
        LinearStochasticSystem::new(self.a.clone(), self.b.clone(), self.mu_w.clone(), self.sigma_w.clone(), k)
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn mu_w(&self) -> &Vector {
        &self.mu_w
    }
    pub fn sigma_w(&self) -> &Mat {
        &self.sigma_w
    }
    pub fn k(&self) -> &Mat {
        &self.k
    }
    /// `A + BK`.
    pub fn acl(&self) -> &Mat {
        &self.acl
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn l(&self) -> usize {
        self.b.ncols()
    }
    pub fn has_mean_disturbance(&self) -> bool {
        self.mu_w.iter().any(|v| *v != 0.0)
    }
}

/// Stage cost `E[XᵀQX + UᵀRU]`.
#[derive(Debug, Clone)]
pub struct QuadCost {
    q: Mat,
    r: Mat,
}

impl QuadCost {
    pub fn new(q: Mat, r: Mat) -> Result<Self, ModelError> {
        if !q.is_square() || !r.is_square() {
            return Err(ModelError::DimensionMismatch(format!("Q {:?}, R {:?}", q.shape(), r.shape())));
        }
        if !is_symmetric(&q, SYM_TOL) || min_eigenvalue(&q) < -PSD_TOL * (1.0 + q.amax()) {
            return Err(ModelError::NotPsd("Q"));
        }
        if !is_symmetric(&r, SYM_TOL) || (r.nrows() > 0 && min_eigenvalue(&r) <= 0.0) {
            return Err(ModelError::NotPd("R"));
        }
        Ok(QuadCost { q, r })
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }

    /// `Q + KᵀRK`.
    pub fn closed_loop_weight(&self, k: &Mat) -> Mat {
        &self.q + k.transpose() * &self.r * k
    }

    /// Realized stage cost `xᵀQx + uᵀRu`.
    pub fn stage(&self, x: &Vector, u: &Vector) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    pub fn check_dims(&self, sys: &LinearStochasticSystem) -> Result<(), ModelError> {
        if self.q.nrows() != sys.n() || self.r.nrows() != sys.l() {
            return Err(ModelError::DimensionMismatch(format!(
                "Q {:?} / R {:?} against n = {}, l = {}",
                self.q.shape(),
                self.r.shape(),
                sys.n(),
                sys.l()
            )));
        }
        Ok(())
    }
}

/// How the open-loop objective treats the mean of `‖KX + v‖²_R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    /// `μᵀ(Q + KᵀRK)μ + vᵀRv`, without the `2vᵀRKμ` cross term.
    #[default]
    AsPrinted,
    /// Exact expectation, including the cross term.
    ExactExpectation,
}

/// `ρ(cᵀX) ≤ p`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateConstraint {
    pub c: Vector,
    pub p: f64,
}

/// `ρ(dᵀU) ≤ q`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputConstraint {
    pub d: Vector,
    pub q: f64,
}

/// Per-coordinate bounds on the input correction `v`; infinite entries mean
/// unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: Vector,
    pub upper: Vector,
}

impl InputBox {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, ModelError> {
        if lower.len() != upper.len() {
            return Err(ModelError::DimensionMismatch("input box bound lengths differ".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(ModelError::InvalidBox(i));
        }
        Ok(InputBox { lower, upper })
    }

    pub fn contains_origin(&self) -> bool {
        self.lower.iter().all(|&lo| lo <= 0.0) && self.upper.iter().all(|&hi| hi >= 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct RiskConstraints {
    pub state: Vec<StateConstraint>,
    pub input: Vec<InputConstraint>,
    pub risk: RiskSpec,
    pub input_box: Option<InputBox>,
}

impl RiskConstraints {
    pub fn unconstrained(risk: RiskSpec) -> Self {
        RiskConstraints { state: Vec::new(), input: Vec::new(), risk, input_box: None }
    }

    pub fn check_dims(&self, sys: &LinearStochasticSystem) -> Result<(), ModelError> {
        if let Some(i) = self.state.iter().position(|r| r.c.len() != sys.n()) {
            return Err(ModelError::DimensionMismatch(format!("state constraint {i}: c has wrong length")));
        }
        if let Some(i) = self.input.iter().position(|r| r.d.len() != sys.l()) {
            return Err(ModelError::DimensionMismatch(format!("input constraint {i}: d has wrong length")));
        }
        if let Some(b) = &self.input_box {
            if b.lower.len() != sys.l() {
                return Err(ModelError::DimensionMismatch("input box has wrong dimension".into()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty() && self.input.is_empty() && self.input_box.is_none()
    }
}

/// Offline synthesis products.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    /// Terminal weight: `(A+BK)ᵀP(A+BK) − P = −(Q + KᵀRK)` for the tube gain.
    pub p: Mat,
    pub p_star: Mat,
    pub k_star: Mat,
    /// Stationary error covariance under the tube gain.
    pub sigma_e_s: Mat,
    /// Stationary state covariance under `K*`.
    pub sigma_x_s: Mat,
    /// Optimal stationary cost `Tr(P*Σ_W)`.
    pub stationary_cost: f64,
    /// Upper averaged-performance bound `Tr(PΣ_W)`.
    pub upper_cost: f64,
    /// `Tr((P − P*)Σ_W)`.
    pub c_f: f64,
}

/// DARE gain `K*` for the given weights.
pub fn riccati_gain(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat, ModelError> {
    Ok(solve_dare(a, b, q, r)?.k)
}

pub fn synthesize(sys: &LinearStochasticSystem, cost: &QuadCost) -> Result<SynthesisResult, ModelError> {
    cost.check_dims(sys)?;
    let k = sys.k();
    let p = solve_dlyap(sys.acl(), &cost.closed_loop_weight(k), LyapunovForm::CostToGo)?;
    let riccati = solve_dare(sys.a(), sys.b(), cost.q(), cost.r())?;
    let acl_star = sys.a() + sys.b() * &riccati.k;
    let sigma_e_s = solve_dlyap(sys.acl(), sys.sigma_w(), LyapunovForm::Covariance)?;
    let sigma_x_s = solve_dlyap(&acl_star, sys.sigma_w(), LyapunovForm::Covariance)?;
    let stationary_cost = (&riccati.p * sys.sigma_w()).trace();
    let upper_cost = (&p * sys.sigma_w()).trace();
    Ok(SynthesisResult {
        c_f: upper_cost - stationary_cost,
        p,
        p_star: riccati.p,
        k_star: riccati.k,
        sigma_e_s,
        sigma_x_s,
        stationary_cost,
        upper_cost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowCheck {
    pub bound: f64,
    pub backoff: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub state_rows: Vec<RowCheck>,
    pub input_rows: Vec<RowCheck>,
}

impl AdmissibilityReport {
    pub fn all_ok(&self) -> bool {
        self.state_rows.iter().chain(&self.input_rows).all(|r| r.ok)
    }
}

/// Whether the optimal stationary pair `U = K*X`, `X ~ N(0, Σ_X^s)`
/// satisfies every risk constraint.
pub fn check_stationary_admissible(
    constraints: &RiskConstraints,
    synth: &SynthesisResult,
) -> AdmissibilityReport {
    let spec = constraints.risk;
    let sx = &synth.sigma_x_s;
    let ksk = &synth.k_star * sx * synth.k_star.transpose();
    let state_rows = constraints
        .state
        .iter()
        .map(|row| {
            let backoff = spec.gaussian_backoff(row.c.dot(&(sx * &row.c)));
            RowCheck { bound: row.p, backoff, ok: row.p >= backoff }
        })
        .collect();
    let input_rows = constraints
        .input
        .iter()
        .map(|row| {
            let backoff = spec.gaussian_backoff(row.d.dot(&(&ksk * &row.d)));
            RowCheck { bound: row.q, backoff, ok: row.q >= backoff }
        })
        .collect();
    AdmissibilityReport { state_rows, input_rows }
}

/// One summand of the moment-based open-loop cost:
/// `μᵀ(Q+KᵀRK)μ + vᵀRv + Tr((Q+KᵀRK)Σ)`, plus `2vᵀRKμ` in exact mode.
pub fn stage_cost_moments(cost: &QuadCost, mu: &Vector, sigma: &Mat, k: &Mat, v: &Vector, form: CostForm) -> f64 {
    let weight = cost.closed_loop_weight(k);
    let mut value = mu.dot(&(&weight * mu)) + v.dot(&(cost.r() * v)) + (&weight * sigma).trace();
    if form == CostForm::ExactExpectation {
        value += 2.0 * v.dot(&(cost.r() * k * mu));
    }
    value
}
