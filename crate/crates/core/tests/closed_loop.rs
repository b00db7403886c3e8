use proptest::prelude::*;
use riskmpc::config::ScenarioConfig;
use riskmpc::controller::{IndirectFeedbackSmpc, InfeasiblePolicy};
use riskmpc::linalg::{Mat, Vector};
use riskmpc::noise::{DisturbanceSampler, GaussianSampler, RngStream};
use riskmpc::qp::QpStatus;
use riskmpc::risk::{RiskKind, RiskSpec};
use riskmpc::sim::{design_gaussian, run_paths, DesignOptions, SimConfig};
use std::sync::OnceLock;

fn dcdc_controller(kind: RiskKind) -> IndirectFeedbackSmpc {
    let mut sc = ScenarioConfig::builtin("dcdc").unwrap().build().unwrap();
    sc.constraints.risk = RiskSpec::new(kind, 0.4).unwrap();
    let opts = DesignOptions {
        horizon: sc.config.horizon,
        form: sc.config.cost.form,
        schedule_len: 80,
        policy: InfeasiblePolicy::Strict,
    };
    design_gaussian(&sc.system, &sc.cost, &sc.constraints, &sc.initial.cov, opts).unwrap().controller
}

fn controllers() -> &'static Vec<IndirectFeedbackSmpc> {
    static C: OnceLock<Vec<IndirectFeedbackSmpc>> = OnceLock::new();
    C.get_or_init(|| RiskKind::ALL.iter().map(|&k| dcdc_controller(k)).collect())
}

fn draw(noise: &GaussianSampler, rng: &mut RngStream) -> Vector {
    let mut w = Vector::zeros(noise.dim());
    noise.sample_centered(rng, w.as_mut_slice());
    w
}

/// Nominal state reached after `steps` closed-loop steps from the DC-DC start
/// under a fixed noise seed.
fn nominal_after(ctl: &IndirectFeedbackSmpc, steps: usize, seed: u64) -> (usize, Vector) {
    let x0 = Vector::from_vec(vec![1.8, 1.5]);
    let sys = ctl.layout().system().clone();
    let noise = GaussianSampler::new(sys.sigma_w()).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let mut st = ctl.init(&x0, &x0, &Mat::zeros(2, 2)).unwrap();
    let mut x = x0;
    for _ in 0..steps {
        let r = ctl.step(&mut st, &x).unwrap();
        x = sys.a() * &x + sys.b() * &r.u + draw(&noise, &mut rng);
    }
    (st.step, st.z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The tail of an optimal input sequence, padded with zero, is feasible
    /// for the next problem whatever the measured state is.
    #[test]
    fn shifted_sequence_stays_feasible(
        which in 0usize..4,
        steps in 0usize..30,
        seed in 0u64..1000,
        x in prop::collection::vec(-20.0f64..20.0, 2),
    ) {
        let ctl = &controllers()[which];
        let layout = ctl.layout();
        let sys = layout.system();
        let (j, z) = nominal_after(ctl, steps, seed);
        let x = Vector::from_vec(x);
        let (sol, _) = layout.solve(ctl.schedule(), j, &x, &z).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let n = layout.horizon();
        let l = sys.l();
        let z_next = sys.acl() * &z + sys.b() * sol.v.rows(0, l) + sys.mu_w();
        let mut shifted = Vector::zeros(n * l);
        shifted.rows_mut(0, (n - 1) * l).copy_from(&sol.v.rows(l, (n - 1) * l));
        prop_assert!(layout.max_violation(ctl.schedule(), j + 1, &z_next, &shifted) <= 1e-9);
        let (next, _) = layout.solve(ctl.schedule(), j + 1, &x, &z_next).unwrap();
        prop_assert_eq!(next.status, QpStatus::Optimal);
    }
}

/// `x(j) − z(j)` must equal the error recursion `E⁺ = (A+BK)E + W` driven
/// by the same draws.
#[test]
fn splitting_identity_on_explicit_paths() {
    let ctl = &controllers()[2];
    let sys = ctl.layout().system().clone();
    let noise = GaussianSampler::new(sys.sigma_w()).unwrap();
    let x0 = Vector::from_vec(vec![1.8, 1.5]);
    let mut worst: f64 = 0.0;
    for path in 0..20 {
        let mut rng = RngStream::new(99, path);
        let mut st = ctl.init(&x0, &x0, &Mat::zeros(2, 2)).unwrap();
        let mut x = x0.clone();
        let mut e = Vector::zeros(2);
        for _ in 0..60 {
            let r = ctl.step(&mut st, &x).unwrap();
            let w = draw(&noise, &mut rng);
            x = sys.a() * &x + sys.b() * &r.u + &w + sys.mu_w();
            e = sys.acl() * &e + &w;
            worst = worst.max((&x - &st.z - &e).amax());
        }
    }
    assert!(worst <= 1e-9, "split error {worst:e}");
}

#[test]
fn harness_reports_splitting_error_and_feasibility() {
    let sc = ScenarioConfig::builtin("dcdc").unwrap().build().unwrap();
    let opts = DesignOptions { horizon: sc.config.horizon, form: sc.config.cost.form, schedule_len: 60, policy: InfeasiblePolicy::Strict };
    let design = design_gaussian(&sc.system, &sc.cost, &sc.constraints, &sc.initial.cov, opts).unwrap();
    let cfg = SimConfig {
        paths: 300,
        steps: 40,
        seed: 5,
        initial: sc.initial.clone(),
        monitors: SimConfig::monitors_for(&sc.constraints),
        measures: vec![sc.constraints.risk],
        risk_steps: 40,
        bootstrap: 0,
        sample_based: false,
    };
    let noise = GaussianSampler::new(sc.system.sigma_w()).unwrap();
    let report = run_paths(&cfg, &design, &noise, "kstar").unwrap();
    assert!(report.max_split_error <= 1e-9);
    assert!(report.events.is_empty());
    assert_eq!(report.nominal_violations, 0);
    assert_eq!(report.stage_mean.len(), 40);
}
