//! Closed-loop indirect-feedback controller.
//!
//! The open-loop problem is solved from the measured state `x_j`, but the
//! tightened constraints act on the nominal state `z_j`, which is advanced
//! with the optimizer's first correction and never with the measurement:
//! `z_{j+1} = (A+BK)z_j + Bv₀* + μ_W`. The applied input is `u = Kx_j + v₀*`.

use crate::linalg::{psd_leq, Mat, Vector};
use crate::ocp::{OcpError, OcpLayout};
use crate::qp::QpStatus;
use crate::tightening::{TighteningMode, TighteningSchedule};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("initial covariance is not dominated by the stationary error covariance")]
    InitCovTooLarge,
    #[error("initial covariance differs from the one the tightening schedule was built for")]
    ScheduleMismatch,
    #[error("open-loop problem at the initial state is {0}")]
    InitInfeasible(QpStatus),
    #[error("open-loop problem at step {step} is {status}")]
    QpInfeasible { step: usize, status: QpStatus },
    #[error("sample-based stepping needs a monte-carlo or user-bound schedule")]
    NeedsSampledSchedule,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

/// What to do when an open-loop problem is not solved to optimality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InfeasiblePolicy {
    /// Return an error.
    #[default]
    Strict,
    /// Apply `u = Kx` (`v₀ = 0`), log the event and continue.
    Deployment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeasibilityEvent {
    pub step: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub step: usize,
    pub z: Vector,
    pub sigma_e: Mat,
    /// Steps whose open-loop problem was not solved to optimality.
    pub log: Vec<FeasibilityEvent>,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub u: Vector,
    pub v0: Vector,
    /// Nominal state before the update.
    pub z: Vector,
    pub z_next: Vector,
    pub status: QpStatus,
    /// Full open-loop cost including the terms independent of `v`.
    pub objective: f64,
    /// `true` when the fallback `v₀ = 0` was applied.
    pub fallback: bool,
}

/// Shared, read-only part of the controller; per-path state lives in
/// [`ControllerState`].
#[derive(Debug, Clone)]
pub struct IndirectFeedbackSmpc {
    layout: OcpLayout,
    schedule: TighteningSchedule,
    sigma_e0: Mat,
    sigma_e_s: Mat,
    policy: InfeasiblePolicy,
}

impl IndirectFeedbackSmpc {
    /// `sigma_e0` is the initial error covariance the schedule was built for.
    pub fn new(
        layout: OcpLayout,
        schedule: TighteningSchedule,
        sigma_e0: Mat,
        policy: InfeasiblePolicy,
    ) -> Result<Self, ControllerError> {
        schedule
            .check_shape(layout.constraints())
            .map_err(|e| ControllerError::DimensionMismatch(e.to_string()))?;
        let sys = layout.system();
        if sigma_e0.shape() != (sys.n(), sys.n()) {
            return Err(ControllerError::DimensionMismatch("initial covariance".into()));
        }
        let sigma_e_s = crate::linalg::solve_dlyap(sys.acl(), sys.sigma_w(), crate::linalg::LyapunovForm::Covariance)
            .map_err(|e| ControllerError::Ocp(OcpError::Model(e.into())))?;
        Ok(IndirectFeedbackSmpc { layout, schedule, sigma_e0, sigma_e_s, policy })
    }

    pub fn layout(&self) -> &OcpLayout {
        &self.layout
    }
    pub fn schedule(&self) -> &TighteningSchedule {
        &self.schedule
    }
    pub fn policy(&self) -> InfeasiblePolicy {
        self.policy
    }
    pub fn sigma_e_s(&self) -> &Mat {
        &self.sigma_e_s
    }

    pub fn with_policy(mut self, policy: InfeasiblePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Starts a closed loop from measurement `x0` with `z₀ = μ_X0` and
    /// `Σ_E0 = Σ_X0`.
    pub fn init(&self, x0: &Vector, mu_x0: &Vector, sigma_x0: &Mat) -> Result<ControllerState, ControllerError> {
        let n = self.layout.system().n();
        if x0.len() != n || mu_x0.len() != n || sigma_x0.shape() != (n, n) {
            return Err(ControllerError::DimensionMismatch("initial condition".into()));
        }
        if !psd_leq(sigma_x0, &self.sigma_e_s, 1e-9) {
            return Err(ControllerError::InitCovTooLarge);
        }
        if (sigma_x0 - &self.sigma_e0).amax() > 1e-12 * (1.0 + self.sigma_e0.amax()) {
            return Err(ControllerError::ScheduleMismatch);
        }
        let (sol, _) = self.layout.solve(&self.schedule, 0, x0, mu_x0)?;
        if sol.status != QpStatus::Optimal {
            return Err(ControllerError::InitInfeasible(sol.status));
        }
        Ok(ControllerState { step: 0, z: mu_x0.clone(), sigma_e: sigma_x0.clone(), log: Vec::new() })
    }

    /// One closed-loop step with moment-based back-offs.
    pub fn step(&self, state: &mut ControllerState, x: &Vector) -> Result<StepResult, ControllerError> {
        self.advance(state, x)
    }

    /// One closed-loop step with back-offs estimated offline from sampled
    /// error trajectories.
    pub fn step_sample_based(&self, state: &mut ControllerState, x: &Vector) -> Result<StepResult, ControllerError> {
        if self.schedule.mode == TighteningMode::GaussianExact {
            return Err(ControllerError::NeedsSampledSchedule);
        }
        self.advance(state, x)
    }

    fn advance(&self, state: &mut ControllerState, x: &Vector) -> Result<StepResult, ControllerError> {
        let sys = self.layout.system();
        let l = sys.l();
        if x.len() != sys.n() {
            return Err(ControllerError::DimensionMismatch("measurement".into()));
        }
        let (sol, offset) = self.layout.solve(&self.schedule, state.step, x, &state.z)?;
        let (v0, fallback) = if sol.status == QpStatus::Optimal {
            (sol.v.rows(0, l).into_owned(), false)
        } else {
            state.log.push(FeasibilityEvent { step: state.step, status: sol.status });
            match self.policy {
                InfeasiblePolicy::Strict => {
                    return Err(ControllerError::QpInfeasible { step: state.step, status: sol.status })
                }
                InfeasiblePolicy::Deployment => (Vector::zeros(l), true),
            }
        };
        let u = sys.k() * x + &v0;
        let z_next = sys.acl() * &state.z + sys.b() * &v0 + sys.mu_w();
        let z = std::mem::replace(&mut state.z, z_next.clone());
        state.sigma_e = sys.acl() * &state.sigma_e * sys.acl().transpose() + sys.sigma_w();
        state.step += 1;
        Ok(StepResult { u, v0, z, z_next, status: sol.status, objective: sol.objective + offset, fallback })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize, CostForm, LinearStochasticSystem, QuadCost, RiskConstraints, StateConstraint};
    use crate::risk::{RiskKind, RiskSpec};
    use crate::tightening::{gaussian_schedule, ErrorProcess};

    fn dcdc(sigma_w: f64) -> (LinearStochasticSystem, QuadCost) {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
        let b = Mat::from_column_slice(2, 1, &[4.798, 0.115]);
        let cost = QuadCost::new(Mat::from_diagonal(&Vector::from_vec(vec![1.0, 10.0])), Mat::from_element(1, 1, 5.0)).unwrap();
        let k = crate::model::riccati_gain(&a, &b, cost.q(), cost.r()).unwrap();
        let sys = LinearStochasticSystem::new(a, b, Vector::zeros(2), Mat::identity(2, 2) * sigma_w, k).unwrap();
        (sys, cost)
    }

    fn controller(sys: &LinearStochasticSystem, cost: &QuadCost, sigma_e0: Mat) -> IndirectFeedbackSmpc {
        let mut cons = RiskConstraints::unconstrained(RiskSpec::new(RiskKind::Cvar, 0.4).unwrap());
        cons.state.push(StateConstraint { c: Vector::from_vec(vec![1.0, 0.0]), p: 2.0 });
        let synth = synthesize(sys, cost).unwrap();
        let layout = OcpLayout::new(sys, cost, &cons, &synth.p, 10, CostForm::AsPrinted).unwrap();
        let ep = ErrorProcess::new(sys, sigma_e0.clone()).unwrap();
        let sched = gaussian_schedule(&ep, &cons, 60).unwrap();
        IndirectFeedbackSmpc::new(layout, sched, sigma_e0, InfeasiblePolicy::Strict).unwrap()
    }

    #[test]
    fn noiseless_origin_is_held() {
        let (sys, cost) = dcdc(0.0);
        let ctl = controller(&sys, &cost, Mat::zeros(2, 2));
        let zero = Vector::zeros(2);
        let mut st = ctl.init(&zero, &zero, &Mat::zeros(2, 2)).unwrap();
        for _ in 0..5 {
            let r = ctl.step(&mut st, &zero).unwrap();
            assert!(r.v0.amax() < 1e-12 && r.u.amax() < 1e-12);
        }
    }

    #[test]
    fn noiseless_plant_tracks_nominal() {
        let (sys, cost) = dcdc(0.0);
        let ctl = controller(&sys, &cost, Mat::zeros(2, 2));
        let mut x = Vector::from_vec(vec![1.8, 1.5]);
        let mut st = ctl.init(&x, &x, &Mat::zeros(2, 2)).unwrap();
        for _ in 0..20 {
            let r = ctl.step(&mut st, &x).unwrap();
            assert_eq!(r.u, sys.k() * &x + &r.v0);
            x = sys.a() * &x + sys.b() * &r.u;
            assert!((&x - &st.z).amax() < 1e-12);
        }
    }

    #[test]
    fn oversized_initial_covariance_is_rejected() {
        let (sys, cost) = dcdc(0.1);
        let ctl = controller(&sys, &cost, Mat::zeros(2, 2));
        let big = ctl.sigma_e_s() * 2.0;
        let x = Vector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(ctl.init(&x, &x, &big), Err(ControllerError::InitCovTooLarge)));
    }

    #[test]
    fn infeasible_start_is_reported() {
        let (sys, cost) = dcdc(0.1);
        let ctl = controller(&sys, &cost, Mat::zeros(2, 2));
        let x = Vector::from_vec(vec![3.0, 0.0]);
        assert!(matches!(ctl.init(&x, &x, &Mat::zeros(2, 2)), Err(ControllerError::InitInfeasible(QpStatus::Infeasible))));
    }

    #[test]
    fn gaussian_schedule_refuses_sample_stepping() {
        let (sys, cost) = dcdc(0.1);
        let ctl = controller(&sys, &cost, Mat::zeros(2, 2));
        let x = Vector::from_vec(vec![1.8, 1.5]);
        let mut st = ctl.init(&x, &x, &Mat::zeros(2, 2)).unwrap();
        assert!(matches!(ctl.step_sample_based(&mut st, &x), Err(ControllerError::NeedsSampledSchedule)));
    }
}
