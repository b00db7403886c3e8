//! Offline constraint tightening.
//!
//! The error `E = X − z` evolves as `E(k+1) = (A+BK)E(k) + W(k) − E[W(k)]`,
//! independently of the optimized corrections `v`. Its risk back-offs
//! `ρ(cᵢᵀE(k))` and `ρ(dᵢᵀKE(k))` are therefore tabulated once, indexed by
//! absolute closed-loop time, and reused by every open-loop problem.

use crate::linalg::{psd_leq, solve_dlyap, LinalgError, LyapunovForm, Mat, Vector};
use crate::model::{LinearStochasticSystem, RiskConstraints, RowCheck};
use crate::noise::{DisturbanceSampler, GaussianSampler, RngStream};
use crate::risk::RiskError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TighteningError {
    #[error("closed-form back-offs need Gaussian disturbances and a Gaussian initial error")]
    NotGaussian,
    #[error("user bound for {kind} row {row} at step {step} is {value}, below the Gaussian back-off {reference}")]
    UserBoundTooSmall { kind: RowKind, row: usize, step: usize, value: f64, reference: f64 },
    #[error("schedule shape does not match the constraints: {0}")]
    Shape(String),
    #[error("monte-carlo tightening needs at least one path")]
    NoPaths,
    #[error("malformed schedule file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    State,
    Input,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowKind::State => "state",
            RowKind::Input => "input",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TighteningMode {
    GaussianExact,
    MonteCarlo,
    UserBound,
}

impl TighteningMode {
    pub fn label(self) -> &'static str {
        match self {
            TighteningMode::GaussianExact => "gaussian_exact",
            TighteningMode::MonteCarlo => "monte_carlo",
            TighteningMode::UserBound => "user_bound",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian_exact" => Some(TighteningMode::GaussianExact),
            "monte_carlo" => Some(TighteningMode::MonteCarlo),
            "user_bound" => Some(TighteningMode::UserBound),
            _ => None,
        }
    }
}

/// The error process under a fixed tube gain.
#[derive(Debug, Clone)]
pub struct ErrorProcess {
    acl: Mat,
    k: Mat,
    sigma_e0: Mat,
    sigma_w: Mat,
    gaussian: bool,
}

impl ErrorProcess {
    /// Gaussian error process started from `E₀ ~ N(0, Σ_E0)`.
    pub fn new(sys: &LinearStochasticSystem, sigma_e0: Mat) -> Result<Self, TighteningError> {
        if sigma_e0.shape() != (sys.n(), sys.n()) {
            return Err(TighteningError::Shape("Sigma_E0 has the wrong dimension".into()));
        }
        Ok(ErrorProcess {
            acl: sys.acl().clone(),
            k: sys.k().clone(),
            sigma_e0,
            sigma_w: sys.sigma_w().clone(),
            gaussian: true,
        })
    }

    /// Marks the process as non-Gaussian; only sampled or user-supplied
    /// back-offs are then available.
    pub fn non_gaussian(mut self) -> Self {
        self.gaussian = false;
        self
    }

    pub fn is_gaussian(&self) -> bool {
        self.gaussian
    }
    pub fn acl(&self) -> &Mat {
        &self.acl
    }
    pub fn sigma_e0(&self) -> &Mat {
        &self.sigma_e0
    }
    pub fn sigma_w(&self) -> &Mat {
        &self.sigma_w
    }

    /// `Σ_E(0..=steps)` from `Σ_E(k+1) = (A+BK)Σ_E(k)(A+BK)ᵀ + Σ_W`.
    pub fn propagate_cov(&self, steps: usize) -> Vec<Mat> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut sigma = self.sigma_e0.clone();
        out.push(sigma.clone());
        let at = self.acl.transpose();
        for _ in 0..steps {
            sigma = &self.acl * &sigma * &at + &self.sigma_w;
            crate::linalg::symmetrize(&mut sigma);
            out.push(sigma.clone());
        }
        out
    }

    pub fn stationary_cov(&self) -> Result<Mat, LinalgError> {
        solve_dlyap(&self.acl, &self.sigma_w, LyapunovForm::Covariance)
    }

    /// `Σ_E0 ⪯ Σ_E^s`, which makes the stationary back-offs upper bounds for
    /// every time step.
    pub fn initial_dominated(&self) -> Result<bool, LinalgError> {
        let ss = self.stationary_cov()?;
        Ok(psd_leq(&self.sigma_e0, &ss, 1e-9))
    }
}

/// Back-offs per constraint row and absolute time step.
///
/// Queries past the tabulated range return the steady-state bound, which
/// dominates every tabulated value whenever the schedule is valid for the
/// terminal-set construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TighteningSchedule {
    pub mode: TighteningMode,
    /// `state[i][t] = ρ(cᵢᵀE(t))`
    pub state: Vec<Vec<f64>>,
    /// `input[i][t] = ρ(dᵢᵀKE(t))`
    pub input: Vec<Vec<f64>>,
    pub steady_state_state: Vec<f64>,
    pub steady_state_input: Vec<f64>,
}

impl TighteningSchedule {
    /// Number of tabulated time steps.
    pub fn len(&self) -> usize {
        self.state.first().or(self.input.first()).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_backoff(&self, row: usize, t: usize) -> f64 {
        self.state[row].get(t).copied().unwrap_or(self.steady_state_state[row])
    }

    pub fn input_backoff(&self, row: usize, t: usize) -> f64 {
        self.input[row].get(t).copied().unwrap_or(self.steady_state_input[row])
    }

    /// `sup_t ρ(cᵢᵀE(t))` as far as the schedule knows it.
    pub fn state_sup(&self, row: usize) -> f64 {
        self.state[row].iter().copied().fold(self.steady_state_state[row], f64::max)
    }

    pub fn input_sup(&self, row: usize) -> f64 {
        self.input[row].iter().copied().fold(self.steady_state_input[row], f64::max)
    }

    /// Schedule with every back-off equal to zero.
    pub fn zeros(constraints: &RiskConstraints, len: usize, mode: TighteningMode) -> Self {
        TighteningSchedule {
            mode,
            state: vec![vec![0.0; len]; constraints.state.len()],
            input: vec![vec![0.0; len]; constraints.input.len()],
            steady_state_state: vec![0.0; constraints.state.len()],
            steady_state_input: vec![0.0; constraints.input.len()],
        }
    }

    pub fn check_shape(&self, constraints: &RiskConstraints) -> Result<(), TighteningError> {
        let len = self.len();
        if self.state.len() != constraints.state.len() || self.input.len() != constraints.input.len() {
            return Err(TighteningError::Shape(format!(
                "schedule has {}/{} state/input rows, constraints have {}/{}",
                self.state.len(),
                self.input.len(),
                constraints.state.len(),
                constraints.input.len()
            )));
        }
        if self.steady_state_state.len() != self.state.len() || self.steady_state_input.len() != self.input.len() {
            return Err(TighteningError::Shape("steady-state entries do not match the rows".into()));
        }
        if self.state.iter().chain(&self.input).any(|r| r.len() != len) {
            return Err(TighteningError::Shape("rows have different lengths".into()));
        }
        Ok(())
    }

    /// CSV with one line per constraint row and one column per time step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "mode,kind,row,steady_state")?;
        for t in 0..self.len() {
            write!(w, ",k{t}")?;
        }
        writeln!(w)?;
        let rows = self
            .state
            .iter()
            .zip(&self.steady_state_state)
            .map(|(r, s)| (RowKind::State, r, s))
            .enumerate()
            .chain(
                self.input
                    .iter()
                    .zip(&self.steady_state_input)
                    .map(|(r, s)| (RowKind::Input, r, s))
                    .enumerate(),
            );
        for (i, (kind, values, ss)) in rows {
            write!(w, "{},{},{},{}", self.mode.label(), kind, i, fmt_f64(*ss))?;
            for v in values {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, TighteningError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(TighteningError::Parse { line: 1, msg: "empty file".into() })??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[..4] != ["mode", "kind", "row", "steady_state"] {
            return Err(TighteningError::Parse { line: 1, msg: "unexpected header".into() });
        }
        let len = cols.len() - 4;
        let mut sched = TighteningSchedule {
            mode: TighteningMode::UserBound,
            state: Vec::new(),
            input: Vec::new(),
            steady_state_state: Vec::new(),
            steady_state_input: Vec::new(),
        };
        let mut mode = None;
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| TighteningError::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != len + 4 {
                return Err(err(format!("expected {} fields, found {}", len + 4, fields.len())));
            }
            let m = TighteningMode::parse(fields[0]).ok_or_else(|| err(format!("unknown mode '{}'", fields[0])))?;
            if mode.is_some_and(|prev| prev != m) {
                return Err(err("mixed modes".into()));
            }
            mode = Some(m);
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("bad number '{s}': {e}")));
            let row: usize = fields[2].parse().map_err(|e| err(format!("bad row index: {e}")))?;
            let ss = parse(fields[3])?;
            let values = fields[4..].iter().map(|s| parse(s)).collect::<Result<Vec<_>, _>>()?;
            let (rows, sss) = match fields[1] {
                "state" => (&mut sched.state, &mut sched.steady_state_state),
                "input" => (&mut sched.input, &mut sched.steady_state_input),
                other => return Err(err(format!("unknown row kind '{other}'"))),
            };
            if row != rows.len() {
                return Err(err(format!("rows must be listed in order; expected {}", rows.len())));
            }
            rows.push(values);
            sss.push(ss);
        }
        if let Some(m) = mode {
            sched.mode = m;
        }
        Ok(sched)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Exact back-offs `σ·R(α)` from the propagated error covariances.
pub fn gaussian_schedule(
    ep: &ErrorProcess,
    constraints: &RiskConstraints,
    len: usize,
) -> Result<TighteningSchedule, TighteningError> {
    if !ep.is_gaussian() {
        return Err(TighteningError::NotGaussian);
    }
    let spec = constraints.risk;
    let covs = ep.propagate_cov(len.saturating_sub(1));
    let ss = ep.stationary_cov()?;
    let state_backoff = |c: &Vector, s: &Mat| spec.gaussian_backoff(c.dot(&(s * c)));
    let kt = ep.k.transpose();
    let input_backoff = |d: &Vector, s: &Mat| {
        let kd = &kt * d;
        spec.gaussian_backoff(kd.dot(&(s * &kd)))
    };
    let take = |n: usize| covs.iter().take(n);
    Ok(TighteningSchedule {
        mode: TighteningMode::GaussianExact,
        state: constraints.state.iter().map(|r| take(len).map(|s| state_backoff(&r.c, s)).collect()).collect(),
        input: constraints.input.iter().map(|r| take(len).map(|s| input_backoff(&r.d, s)).collect()).collect(),
        steady_state_state: constraints.state.iter().map(|r| state_backoff(&r.c, &ss)).collect(),
        steady_state_input: constraints.input.iter().map(|r| input_backoff(&r.d, &ss)).collect(),
    })
}

/// Sampling parameters for [`monte_carlo_schedule`].
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloOptions {
    pub paths: usize,
    pub seed: u64,
    /// Extra propagation steps past the table used to estimate the
    /// steady-state back-offs; `None` picks enough steps for `‖(A+BK)ᵏ‖`
    /// to fall below 1e-8.
    pub burn_in: Option<usize>,
}

const MC_CHUNK: usize = 4096;

/// Back-offs estimated by simulating `paths` error trajectories.
///
/// Deterministic given the seed: the noise for time step `t` and the
/// `c`-th block of paths comes from stream `(seed, (t+1)·blocks + c)`,
/// independent of how blocks are spread over threads.
pub fn monte_carlo_schedule(
    ep: &ErrorProcess,
    constraints: &RiskConstraints,
    len: usize,
    opts: MonteCarloOptions,
    disturbance: &dyn DisturbanceSampler,
    initial: Option<&dyn DisturbanceSampler>,
) -> Result<TighteningSchedule, TighteningError> {
    if opts.paths == 0 {
        return Err(TighteningError::NoPaths);
    }
    let n = ep.acl.nrows();
    let default_initial;
    let initial: &dyn DisturbanceSampler = match initial {
        Some(s) => s,
        None => {
            default_initial = GaussianSampler::new(&ep.sigma_e0)?;
            &default_initial
        }
    };
    let spec = constraints.risk;
    let blocks = opts.paths.div_ceil(MC_CHUNK);
    let mut errors = vec![0.0f64; opts.paths * n];

    // E₀ draws use streams 0..blocks.
    errors.par_chunks_mut(MC_CHUNK * n).enumerate().for_each(|(c, chunk)| {
        let mut rng = RngStream::new(opts.seed, c as u64);
        for e in chunk.chunks_mut(n) {
            initial.sample_centered(&mut rng, e);
        }
    });

    let kt_d: Vec<Vector> = constraints.input.iter().map(|r| ep.k.transpose() * &r.d).collect();
    let estimate = |errors: &[f64]| -> Result<(Vec<f64>, Vec<f64>), TighteningError> {
        let mut proj = vec![0.0; opts.paths];
        let mut project = |dir: &Vector| -> Result<f64, TighteningError> {
            for (p, e) in proj.iter_mut().zip(errors.chunks(n)) {
                *p = dir.iter().zip(e).map(|(a, b)| a * b).sum();
            }
            Ok(spec.empirical(&proj)?)
        };
        let s = constraints.state.iter().map(|r| project(&r.c)).collect::<Result<Vec<_>, _>>()?;
        let i = kt_d.iter().map(&mut project).collect::<Result<Vec<_>, _>>()?;
        Ok((s, i))
    };

    let burn_in = opts.burn_in.unwrap_or_else(|| default_burn_in(&ep.acl));
    let mut state = vec![Vec::with_capacity(len); constraints.state.len()];
    let mut input = vec![Vec::with_capacity(len); constraints.input.len()];
    let total = len + burn_in;
    let mut last = (Vec::new(), Vec::new());
    for t in 0..=total.max(1) - 1 {
        if t < len {
            let (s, i) = estimate(&errors)?;
            for (row, v) in state.iter_mut().zip(s) {
                row.push(v);
            }
            for (row, v) in input.iter_mut().zip(i) {
                row.push(v);
            }
        }
        if t + 1 == total {
            break;
        }
        advance_errors(&mut errors, &ep.acl, disturbance, opts.seed, (t as u64 + 1) * blocks as u64);
        if t + 2 == total {
            last = estimate(&errors)?;
        }
    }
    if last.0.len() != constraints.state.len() || last.1.len() != constraints.input.len() {
        last = estimate(&errors)?;
    }
    let steady_state_state = state.iter().zip(&last.0).map(|(r, &v)| r.iter().copied().fold(v, f64::max)).collect();
    let steady_state_input = input.iter().zip(&last.1).map(|(r, &v)| r.iter().copied().fold(v, f64::max)).collect();
    Ok(TighteningSchedule { mode: TighteningMode::MonteCarlo, state, input, steady_state_state, steady_state_input })
}

fn advance_errors(errors: &mut [f64], acl: &Mat, disturbance: &dyn DisturbanceSampler, seed: u64, stream_base: u64) {
    let n = acl.nrows();
    errors.par_chunks_mut(MC_CHUNK * n).enumerate().for_each(|(c, chunk)| {
        let mut rng = RngStream::new(seed, stream_base + c as u64);
        let mut w = vec![0.0; n];
        let mut next = vec![0.0; n];
        for e in chunk.chunks_mut(n) {
            disturbance.sample_centered(&mut rng, &mut w);
            for i in 0..n {
                let mut acc = w[i];
                for j in 0..n {
                    acc += acl[(i, j)] * e[j];
                }
                next[i] = acc;
            }
            e.copy_from_slice(&next);
        }
    });
}

fn default_burn_in(acl: &Mat) -> usize {
    let radius = crate::linalg::spectral_radius(acl);
    if radius <= 1e-8 {
        return 1;
    }
    let steps = (1e-8f64.ln() / radius.ln()).ceil();
    (steps as usize).clamp(1, 10_000)
}

/// Schedule from externally supplied upper bounds `c̃(t)`, `d̃(t)`.
///
/// When a Gaussian reference schedule is available, every user entry must
/// dominate the matching reference entry.
pub fn user_bound_schedule(
    constraints: &RiskConstraints,
    mut schedule: TighteningSchedule,
    reference: Option<&TighteningSchedule>,
) -> Result<TighteningSchedule, TighteningError> {
    schedule.mode = TighteningMode::UserBound;
    schedule.check_shape(constraints)?;
    if let Some(reference) = reference {
        let horizon = schedule.len().max(reference.len()) + 1;
        let tol = 1e-9;
        for (i, _) in constraints.state.iter().enumerate() {
            for t in 0..horizon {
                let (value, refv) = (schedule.state_backoff(i, t), reference.state_backoff(i, t));
                if value < refv - tol {
                    return Err(TighteningError::UserBoundTooSmall {
                        kind: RowKind::State,
                        row: i,
                        step: t,
                        value,
                        reference: refv,
                    });
                }
            }
        }
        for (i, _) in constraints.input.iter().enumerate() {
            for t in 0..horizon {
                let (value, refv) = (schedule.input_backoff(i, t), reference.input_backoff(i, t));
                if value < refv - tol {
                    return Err(TighteningError::UserBoundTooSmall {
                        kind: RowKind::Input,
                        row: i,
                        step: t,
                        value,
                        reference: refv,
                    });
                }
            }
        }
    }
    Ok(schedule)
}

/// Outcome of checking the terminal set `Z_f = {0}` with `v_f = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSetReport {
    pub state_rows: Vec<RowCheck>,
    pub input_rows: Vec<RowCheck>,
    /// `0 ∈ V`.
    pub origin_in_box: bool,
    /// `(z, v) = (0, 0)` is an equilibrium of the nominal dynamics (`E[W] = 0`).
    pub origin_invariant: bool,
    /// `Σ_E0 ⪯ Σ_E^s`, so the steady-state back-offs bound every step;
    /// `None` when the schedule was not built from a Gaussian error process.
    pub initial_dominated: Option<bool>,
}

impl TerminalSetReport {
    pub fn valid(&self) -> bool {
        self.state_rows.iter().chain(&self.input_rows).all(|r| r.ok)
            && self.origin_in_box
            && self.origin_invariant
            && self.initial_dominated.unwrap_or(true)
    }
}

pub fn validate_terminal_set(
    constraints: &RiskConstraints,
    schedule: &TighteningSchedule,
    sys: &LinearStochasticSystem,
    ep: Option<&ErrorProcess>,
) -> Result<TerminalSetReport, TighteningError> {
    schedule.check_shape(constraints)?;
    let state_rows = constraints
        .state
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let backoff = schedule.state_sup(i);
            RowCheck { bound: row.p, backoff, ok: row.p >= backoff }
        })
        .collect();
    let input_rows = constraints
        .input
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let backoff = schedule.input_sup(i);
            RowCheck { bound: row.q, backoff, ok: row.q >= backoff }
        })
        .collect();
    let initial_dominated = match ep {
        Some(ep) if schedule.mode == TighteningMode::GaussianExact => Some(ep.initial_dominated()?),
        _ => None,
    };
    Ok(TerminalSetReport {
        state_rows,
        input_rows,
        origin_in_box: constraints.input_box.as_ref().is_none_or(|b| b.contains_origin()),
        origin_invariant: !sys.has_mean_disturbance(),
        initial_dominated,
    })
}
