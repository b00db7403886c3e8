//! Monte-Carlo closed-loop simulation.
//!
//! Every path owns the random stream `(seed, path)`, so two runs with the same
//! seed see the same disturbances regardless of gain, thread count or chunk
//! scheduling. Per-path results are reduced in path order.

use crate::controller::{ControllerError, IndirectFeedbackSmpc, InfeasiblePolicy};
use crate::linalg::{Mat, Vector};
use crate::model::{synthesize, CostForm, LinearStochasticSystem, ModelError, QuadCost, RiskConstraints, SynthesisResult};
use crate::noise::{DisturbanceSampler, GaussianSampler, RngStream};
use crate::ocp::{OcpError, OcpLayout};
use crate::qp::QpStatus;
use crate::risk::{empirical_evar, RiskError, RiskKind, RiskSpec};
use crate::tightening::{
    gaussian_schedule, validate_terminal_set, ErrorProcess, TerminalSetReport, TighteningError, TighteningSchedule,
};
use crate::tightening::fmt_f64;
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("terminal set validation failed: {0:?}")]
    TerminalSet(TerminalSetReport),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `X₀ ~ N(mean, cov)`; a zero covariance gives a deterministic start.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub mean: Vector,
    pub cov: Mat,
}

impl InitialCondition {
    pub fn deterministic(x0: Vector) -> Self {
        let n = x0.len();
        InitialCondition { mean: x0, cov: Mat::zeros(n, n) }
    }
}

/// A scalar functional `cᵀX` whose empirical risk is tracked over time.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub label: String,
    pub c: Vector,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub paths: usize,
    /// Closed-loop length `L`.
    pub steps: usize,
    pub seed: u64,
    pub initial: InitialCondition,
    pub monitors: Vec<Monitor>,
    pub measures: Vec<RiskSpec>,
    /// Risks are reported for `k = 0..=risk_steps` (capped at `steps`).
    pub risk_steps: usize,
    pub bootstrap: usize,
    /// Use back-offs from a sampled schedule.
    pub sample_based: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.paths == 0 || self.steps == 0 {
            return Err(SimError::InvalidConfig("paths and steps must be at least 1".into()));
        }
        if self.initial.cov.shape() != (self.initial.mean.len(), self.initial.mean.len()) {
            return Err(SimError::InvalidConfig("initial covariance shape".into()));
        }
        Ok(())
    }

    /// Monitors for every state-constraint row, labelled `c0`, `c1`, ...
    /// (or `x1` for a single unit row on the first coordinate).
    pub fn monitors_for(constraints: &RiskConstraints) -> Vec<Monitor> {
        constraints
            .state
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let unit = row.c.iter().enumerate().find(|(_, &v)| v == 1.0).map(|(j, _)| j);
                let is_unit = unit.is_some() && row.c.iter().filter(|&&v| v != 0.0).count() == 1;
                let label = match unit {
                    Some(j) if is_unit => format!("x{}", j + 1),
                    _ => format!("c{i}"),
                };
                Monitor { label, c: row.c.clone() }
            })
            .collect()
    }
}

/// Non-optimal open-loop solve or aborted path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEvent {
    pub path: usize,
    pub step: usize,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct RiskTrajectory {
    pub monitor: usize,
    pub label: String,
    pub measure: RiskSpec,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub gain_label: String,
    pub paths: usize,
    pub steps: usize,
    pub risk: Vec<RiskTrajectory>,
    /// Cross-path mean stage cost `ℓ̂(k)`, `k = 0..L`.
    pub stage_mean: Vec<f64>,
    /// `(1/L')Σ_{k<L'} ℓ̂(k)` for `L' = 1..=L`.
    pub running_average: Vec<f64>,
    /// Standard error of the full-length time average across paths.
    pub average_se: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub max_split_error: f64,
    pub nominal_violations: usize,
    pub worst_nominal_excess: f64,
    pub events: Vec<PathEvent>,
    pub aborted_paths: usize,
    pub fallback_steps: usize,
    /// Direction `c` of each monitor.
    pub monitor_dirs: Vec<Vector>,
    /// Bootstrap resamples behind `se`; zero means no standard errors.
    pub bootstrap: usize,
}

/// Pass/fail of every closed-loop audit.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AuditSummary {
    pub splitting_identity: bool,
    pub recursive_feasibility: bool,
    pub nominal_constraints: bool,
    /// Design measure within `p + 3·SE` at every reported step; `None` when
    /// the design measure was not monitored or no bootstrap was run.
    pub risk_constraints: Option<bool>,
    /// `E ≤ VaR ≤ CVaR ≤ EVaR` within three combined standard errors; `None`
    /// unless all four are monitored at a common level with standard errors.
    pub ordering: Option<bool>,
}

impl AuditSummary {
    pub fn all_pass(&self) -> bool {
        self.splitting_identity
            && self.recursive_feasibility
            && self.nominal_constraints
            && self.risk_constraints.unwrap_or(true)
            && self.ordering.unwrap_or(true)
    }
}

pub const SPLIT_TOL: f64 = 1e-9;
pub const NOMINAL_TOL: f64 = 1e-8;

impl MonteCarloReport {
    pub fn final_average(&self) -> f64 {
        *self.running_average.last().unwrap_or(&f64::NAN)
    }

    pub fn trajectory(&self, monitor: usize, kind: RiskKind) -> Option<&RiskTrajectory> {
        self.risk.iter().find(|t| t.monitor == monitor && t.measure.kind() == kind)
    }

    /// Risk and ordering audits need bootstrap standard errors and are
    /// reported as `None` without them.
    pub fn audit(&self, constraints: &RiskConstraints) -> AuditSummary {
        let design = constraints.risk;
        let mut risk_ok = None;
        let assessed = if self.bootstrap > 0 { self.risk.as_slice() } else { &[] };
        for t in assessed.iter().filter(|t| t.measure == design) {
            let Some(row) = constraints.state.iter().find(|r| r.c == self.monitor_c(t.monitor)) else { continue };
            let ok = t.values.iter().zip(&t.se).all(|(v, se)| *v <= row.p + 3.0 * se + 1e-12);
            risk_ok = Some(risk_ok.unwrap_or(true) && ok);
        }
        AuditSummary {
            splitting_identity: self.max_split_error <= SPLIT_TOL,
            recursive_feasibility: self.events.is_empty() && self.aborted_paths == 0,
            nominal_constraints: self.nominal_violations == 0,
            risk_constraints: risk_ok,
            ordering: if self.bootstrap > 0 { self.ordering_holds() } else { None },
        }
    }

    fn monitor_c(&self, monitor: usize) -> Vector {
        self.monitor_dirs.get(monitor).cloned().unwrap_or_else(|| Vector::zeros(0))
    }

    /// Ordering audit over all monitors that carry all four measures.
    pub fn ordering_holds(&self) -> Option<bool> {
        let monitors: Vec<usize> = {
            let mut m: Vec<usize> = self.risk.iter().map(|t| t.monitor).collect();
            m.dedup();
            m
        };
        let mut verdict = None;
        for m in monitors {
            let chain: Option<Vec<&RiskTrajectory>> = RiskKind::ALL.iter().map(|&k| self.trajectory(m, k)).collect();
            let Some(chain) = chain else { continue };
            let mut ok = true;
            for pair in chain.windows(2) {
                for k in 0..pair[0].values.len() {
                    let (lo, hi) = (pair[0].values[k], pair[1].values[k]);
                    let tol = 3.0 * pair[0].se[k].hypot(pair[1].se[k]) + 1e-9 * (1.0 + lo.abs());
                    ok &= lo <= hi + tol;
                }
            }
            verdict = Some(verdict.unwrap_or(true) && ok);
        }
        verdict
    }

    /// `k,measure,value,se`; the measure label carries the monitor name when
    /// more than one functional is tracked.
    pub fn write_risk_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,measure,value,se")?;
        let multi = self.risk.iter().any(|t| t.monitor != 0);
        for t in &self.risk {
            let label = if multi { format!("{}:{}", t.measure.kind().label(), t.label) } else { t.measure.kind().label().to_string() };
            for (k, (v, se)) in t.values.iter().zip(&t.se).enumerate() {
                writeln!(w, "{k},{label},{},{}", fmt_f64(*v), fmt_f64(*se))?;
            }
        }
        Ok(())
    }

    /// `L,running_average,lower_bound,upper_bound,gain_label`
    pub fn write_performance_rows<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, avg) in self.running_average.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                fmt_f64(*avg),
                fmt_f64(self.lower_bound),
                fmt_f64(self.upper_bound),
                self.gain_label
            )?;
        }
        Ok(())
    }

    pub fn write_performance_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{PERFORMANCE_HEADER}")?;
        self.write_performance_rows(w)
    }

    /// `path,step,status` for every step that was not solved to optimality.
    pub fn write_feasibility_rows<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(w, "{},{},{}", e.path, e.step, e.status)?;
        }
        Ok(())
    }

    pub fn write_feasibility_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{FEASIBILITY_HEADER}")?;
        self.write_feasibility_rows(w)
    }
}

pub const PERFORMANCE_HEADER: &str = "L,running_average,lower_bound,upper_bound,gain_label";
pub const FEASIBILITY_HEADER: &str = "path,step,status";

/// `(tr(P*Σ_W), tr(PΣ_W))`, the limits of the averaged closed-loop cost.
pub fn performance_bounds(synth: &SynthesisResult) -> (f64, f64) {
    (synth.stationary_cost, synth.upper_cost)
}

/// Controller parameters shared by every simulated path.
#[derive(Debug, Clone, Copy)]
pub struct DesignOptions {
    pub horizon: usize,
    pub form: CostForm,
    /// Number of tabulated schedule steps; later steps use steady-state values.
    pub schedule_len: usize,
    pub policy: InfeasiblePolicy,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub controller: IndirectFeedbackSmpc,
    pub synthesis: SynthesisResult,
    pub terminal: TerminalSetReport,
}

/// Synthesis, exact Gaussian tightening, terminal validation and controller
/// assembly for one gain.
pub fn design_gaussian(
    sys: &LinearStochasticSystem,
    cost: &QuadCost,
    constraints: &RiskConstraints,
    sigma_e0: &Mat,
    opts: DesignOptions,
) -> Result<Design, SimError> {
    let ep = ErrorProcess::new(sys, sigma_e0.clone())?;
    let schedule = gaussian_schedule(&ep, constraints, opts.schedule_len)?;
    design_with_schedule(sys, cost, constraints, sigma_e0, schedule, Some(&ep), opts)
}

pub fn design_with_schedule(
    sys: &LinearStochasticSystem,
    cost: &QuadCost,
    constraints: &RiskConstraints,
    sigma_e0: &Mat,
    schedule: TighteningSchedule,
    ep: Option<&ErrorProcess>,
    opts: DesignOptions,
) -> Result<Design, SimError> {
    let synthesis = synthesize(sys, cost)?;
    let terminal = validate_terminal_set(constraints, &schedule, sys, ep)?;
    if !terminal.valid() {
        return Err(SimError::TerminalSet(terminal));
    }
    let layout = OcpLayout::new(sys, cost, constraints, &synthesis.p, opts.horizon, opts.form)?;
    let controller = IndirectFeedbackSmpc::new(layout, schedule, sigma_e0.clone(), opts.policy)?;
    Ok(Design { controller, synthesis, terminal })
}

/// Worker pool honouring `RISKMPC_THREADS`.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("RISKMPC_THREADS").ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0) {
        builder = builder.num_threads(n);
    }
    builder.build().expect("thread pool")
}

const CHUNK: usize = 64;

#[derive(Default)]
struct ChunkResult {
    stage_sum: Vec<f64>,
    /// `[monitor][k][path-in-chunk]`
    monitored: Vec<Vec<Vec<f64>>>,
    path_avgs: Vec<f64>,
    max_split: f64,
    nominal_violations: usize,
    worst_nominal_excess: f64,
    events: Vec<PathEvent>,
    aborted: usize,
    fallback: usize,
}

/// Runs `cfg.paths` closed-loop paths of length `cfg.steps`.
pub fn run_paths(
    cfg: &SimConfig,
    design: &Design,
    disturbance: &dyn DisturbanceSampler,
    gain_label: &str,
) -> Result<MonteCarloReport, SimError> {
    cfg.validate()?;
    let ctl = &design.controller;
    let sys = ctl.layout().system();
    let n = sys.n();
    if cfg.initial.mean.len() != n || disturbance.dim() != n || cfg.monitors.iter().any(|m| m.c.len() != n) {
        return Err(SimError::InvalidConfig("dimension mismatch between config and system".into()));
    }
    // Feasibility of the first problem depends only on z₀ = μ_X0, shared by
    // every path.
    ctl.init(&cfg.initial.mean, &cfg.initial.mean, &cfg.initial.cov)?;
    let initial_sampler = GaussianSampler::new(&cfg.initial.cov)?;
    let random_start = cfg.initial.cov.amax() > 0.0;
    let risk_len = cfg.risk_steps.min(cfg.steps) + 1;
    let chunks = cfg.paths.div_ceil(CHUNK);

    let results: Vec<ChunkResult> = thread_pool().install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * CHUNK;
                let end = (start + CHUNK).min(cfg.paths);
                let mut out = ChunkResult {
                    stage_sum: vec![0.0; cfg.steps],
                    monitored: vec![vec![Vec::with_capacity(end - start); risk_len]; cfg.monitors.len()],
                    ..Default::default()
                };
                for path in start..end {
                    simulate_path(cfg, ctl, disturbance, &initial_sampler, random_start, path, risk_len, &mut out);
                }
                out
            })
            .collect()
    });

    let mut stage_sum = vec![0.0; cfg.steps];
    let mut monitored = vec![vec![Vec::with_capacity(cfg.paths); risk_len]; cfg.monitors.len()];
    let mut path_avgs = Vec::with_capacity(cfg.paths);
    let mut report_events = Vec::new();
    let (mut max_split, mut nominal_violations, mut worst_excess, mut aborted, mut fallback) = (0.0f64, 0, 0.0f64, 0, 0);
    for r in results {
        for (s, v) in stage_sum.iter_mut().zip(&r.stage_sum) {
            *s += v;
        }
        for (m, rm) in monitored.iter_mut().zip(r.monitored) {
            for (mk, rk) in m.iter_mut().zip(rm) {
                mk.extend(rk);
            }
        }
        path_avgs.extend(r.path_avgs);
        max_split = max_split.max(r.max_split);
        nominal_violations += r.nominal_violations;
        worst_excess = worst_excess.max(r.worst_nominal_excess);
        report_events.extend(r.events);
        aborted += r.aborted;
        fallback += r.fallback;
    }
    let completed = path_avgs.len().max(1) as f64;
    let stage_mean: Vec<f64> = stage_sum.iter().map(|s| s / completed).collect();
    let mut running_average = Vec::with_capacity(cfg.steps);
    let mut acc = 0.0;
    for (i, s) in stage_mean.iter().enumerate() {
        acc += s;
        running_average.push(acc / (i + 1) as f64);
    }
    let average_se = standard_error(&path_avgs);

    let risk = risk_trajectories(cfg, &monitored)?;
    let (lower_bound, upper_bound) = performance_bounds(&design.synthesis);
    Ok(MonteCarloReport {
        gain_label: gain_label.to_string(),
        paths: cfg.paths,
        steps: cfg.steps,
        risk,
        stage_mean,
        running_average,
        average_se,
        lower_bound,
        upper_bound,
        max_split_error: max_split,
        nominal_violations,
        worst_nominal_excess: worst_excess,
        events: report_events,
        aborted_paths: aborted,
        fallback_steps: fallback,
        monitor_dirs: cfg.monitors.iter().map(|m| m.c.clone()).collect(),
        bootstrap: cfg.bootstrap,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_path(
    cfg: &SimConfig,
    ctl: &IndirectFeedbackSmpc,
    disturbance: &dyn DisturbanceSampler,
    initial_sampler: &GaussianSampler,
    random_start: bool,
    path: usize,
    risk_len: usize,
    out: &mut ChunkResult,
) {
    let layout = ctl.layout();
    let sys = layout.system();
    let cost = layout.cost();
    let constraints = layout.constraints();
    let schedule = ctl.schedule();
    let n = sys.n();
    let mut rng = RngStream::new(cfg.seed, path as u64);

    let mut x = cfg.initial.mean.clone();
    if random_start {
        let mut xi = vec![0.0; n];
        initial_sampler.sample_centered(&mut rng, &mut xi);
        x += Vector::from_vec(xi);
    }
    let mut e = &x - &cfg.initial.mean;
    let record = |out: &mut ChunkResult, k: usize, x: &Vector| {
        if k < risk_len {
            for (i, m) in cfg.monitors.iter().enumerate() {
                out.monitored[i][k].push(m.c.dot(x));
            }
        }
    };
    let mut state = match ctl.init(&x, &cfg.initial.mean, &cfg.initial.cov) {
        Ok(s) => s,
        Err(err) => {
            out.events.push(PathEvent { path, step: 0, status: init_status(&err) });
            out.aborted += 1;
            return;
        }
    };
    record(out, 0, &x);
    let mut w = vec![0.0; n];
    let mut total = 0.0;
    let mut stage_costs = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let step = if cfg.sample_based { ctl.step_sample_based(&mut state, &x) } else { ctl.step(&mut state, &x) };
        let r = match step {
            Ok(r) => r,
            Err(err) => {
                let status = match err {
                    ControllerError::QpInfeasible { status, .. } => status.label().to_string(),
                    other => other.to_string(),
                };
                out.events.push(PathEvent { path, step: k, status });
                out.aborted += 1;
                return;
            }
        };
        if r.status != QpStatus::Optimal {
            out.events.push(PathEvent { path, step: k, status: r.status.label().to_string() });
        }
        if r.fallback {
            out.fallback += 1;
        } else {
            // Tightened constraints on the executed nominal state.
            for (i, row) in constraints.state.iter().enumerate() {
                let excess = row.c.dot(&r.z) - (row.p - schedule.state_backoff(i, k));
                if excess > NOMINAL_TOL {
                    out.nominal_violations += 1;
                    out.worst_nominal_excess = out.worst_nominal_excess.max(excess);
                }
            }
            let u_nom = sys.k() * &r.z + &r.v0;
            for (i, row) in constraints.input.iter().enumerate() {
                let excess = row.d.dot(&u_nom) - (row.q - schedule.input_backoff(i, k));
                if excess > NOMINAL_TOL {
                    out.nominal_violations += 1;
                    out.worst_nominal_excess = out.worst_nominal_excess.max(excess);
                }
            }
        }
        let stage = cost.stage(&x, &r.u);
        stage_costs.push(stage);
        total += stage;

        disturbance.sample_centered(&mut rng, &mut w);
        let wc = Vector::from_column_slice(&w);
        x = sys.a() * &x + sys.b() * &r.u + sys.mu_w() + &wc;
        e = sys.acl() * &e + wc;
        let split = (&x - &state.z - &e).amax();
        out.max_split = out.max_split.max(split);
        record(out, k + 1, &x);
    }
    for (s, c) in out.stage_sum.iter_mut().zip(stage_costs) {
        *s += c;
    }
    out.path_avgs.push(total / cfg.steps as f64);
}

fn init_status(err: &ControllerError) -> String {
    match err {
        ControllerError::InitInfeasible(s) => format!("init_{}", s.label()),
        other => format!("init_error: {other}"),
    }
}

fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn risk_trajectories(cfg: &SimConfig, monitored: &[Vec<Vec<f64>>]) -> Result<Vec<RiskTrajectory>, SimError> {
    let mut out = Vec::new();
    for (mi, mon) in cfg.monitors.iter().enumerate() {
        let per_k: Vec<Vec<(f64, f64)>> = thread_pool().install(|| {
            monitored[mi]
                .par_iter()
                .enumerate()
                .map(|(k, samples)| {
                    if samples.is_empty() {
                        return Ok(vec![(f64::NAN, f64::NAN); cfg.measures.len()]);
                    }
                    let stream = ((mi as u64) << 32) | k as u64;
                    bootstrap(samples, &cfg.measures, cfg.bootstrap, cfg.seed, stream)
                })
                .collect::<Result<Vec<_>, SimError>>()
        })?;
        for (j, &measure) in cfg.measures.iter().enumerate() {
            out.push(RiskTrajectory {
                monitor: mi,
                label: mon.label.clone(),
                measure,
                values: per_k.iter().map(|r| r[j].0).collect(),
                se: per_k.iter().map(|r| r[j].1).collect(),
            });
        }
    }
    Ok(out)
}

/// Empirical risk of each measure with its bootstrap standard error; all
/// measures are evaluated on the same resamples.
pub fn bootstrap(
    samples: &[f64],
    measures: &[RiskSpec],
    resamples: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<(f64, f64)>, SimError> {
    let n = samples.len();
    let mut values = Vec::with_capacity(measures.len());
    let mut hints = Vec::with_capacity(measures.len());
    for m in measures {
        if m.kind() == RiskKind::Evar {
            let e = empirical_evar(samples, m.alpha(), None)?;
            values.push(e.value);
            hints.push(e.z);
        } else {
            values.push(m.empirical(samples)?);
            hints.push(None);
        }
    }
    if resamples < 2 {
        return Ok(values.into_iter().map(|v| (v, 0.0)).collect());
    }
    // Resampling streams live in a separate seed space from the path streams.
    let mut rng = RngStream::new(seed ^ 0xB007_57A9_0000_0000, stream);
    let mut draw = vec![0.0; n];
    let mut sum = vec![0.0; measures.len()];
    let mut sum_sq = vec![0.0; measures.len()];
    for _ in 0..resamples {
        for d in draw.iter_mut() {
            *d = samples[rng.below(n)];
        }
        for (j, m) in measures.iter().enumerate() {
            // Deviations from the full-sample value keep the sums well conditioned.
            let s = if m.kind() == RiskKind::Evar {
                empirical_evar(&draw, m.alpha(), hints[j])?.value
            } else {
                m.empirical(&draw)?
            } - values[j];
            sum[j] += s;
            sum_sq[j] += s * s;
        }
    }
    let b = resamples as f64;
    Ok(values
        .iter()
        .zip(sum.iter().zip(&sum_sq))
        .map(|(&v, (&s, &ss))| (v, ((ss - s * s / b) / (b - 1.0)).max(0.0).sqrt()))
        .collect())
}

/// One report per gain under common random numbers.
pub fn compare_gains(
    cfg: &SimConfig,
    designs: &[(String, Design)],
    disturbance: &dyn DisturbanceSampler,
) -> Result<Vec<MonteCarloReport>, SimError> {
    designs.iter().map(|(label, d)| run_paths(cfg, d, disturbance, label)).collect()
}
