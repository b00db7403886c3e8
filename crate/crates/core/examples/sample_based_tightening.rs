//! Uniform disturbances: back-offs estimated from sampled error paths,
//! compared with the Gaussian formula at the same covariance, then used in
//! a sample-based closed loop.
//!
//! Usage: cargo run --release --example sample_based_tightening [MC_PATHS] [PATHS]

use riskmpc::config::ScenarioConfig;
use riskmpc::controller::InfeasiblePolicy;
use riskmpc::linalg::Mat;
use riskmpc::noise::UniformSampler;
use riskmpc::risk::RiskKind;
use riskmpc::sim::{design_with_schedule, run_paths, DesignOptions, SimConfig};
use riskmpc::tightening::{gaussian_schedule, monte_carlo_schedule, ErrorProcess, MonteCarloOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mc_paths: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200_000);
    let paths: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let steps = 50;

    let h = 0.3f64.sqrt();
    let noise = UniformSampler { half_widths: vec![h, h] };
    let mut cfg = ScenarioConfig::builtin("dcdc")?;
    cfg.system.sigma_w = riskmpc::config::rows_of(&noise.covariance());
    let sc = cfg.build()?;

    let ep = ErrorProcess::new(&sc.system, Mat::zeros(2, 2))?.non_gaussian();
    let len = steps + sc.config.horizon + 1;
    let opts = MonteCarloOptions { paths: mc_paths, seed: 7, burn_in: None };
    let sampled = monte_carlo_schedule(&ep, &sc.constraints, len, opts, &noise, None)?;
    let gauss = gaussian_schedule(&ErrorProcess::new(&sc.system, Mat::zeros(2, 2))?, &sc.constraints, len)?;
    println!("{} back-offs, uniform noise vs Gaussian with equal covariance:", sc.constraints.risk);
    for k in [1, 2, 5, 10, 20, 40] {
        println!("  k={k:>2}: sampled {:.4}  gaussian {:.4}", sampled.state[0][k], gauss.state[0][k]);
    }
    println!("  steady: sampled {:.4}  gaussian {:.4}", sampled.steady_state_state[0], gauss.steady_state_state[0]);

    let design_opts = DesignOptions { horizon: sc.config.horizon, form: sc.config.cost.form, schedule_len: len, policy: InfeasiblePolicy::Strict };
    let design = design_with_schedule(&sc.system, &sc.cost, &sc.constraints, &sc.initial.cov, sampled, Some(&ep), design_opts)?;
    let sim = SimConfig {
        paths,
        steps,
        seed: 11,
        initial: sc.initial.clone(),
        monitors: SimConfig::monitors_for(&sc.constraints),
        measures: vec![sc.constraints.risk],
        risk_steps: steps,
        bootstrap: 100,
        sample_based: true,
    };
    let report = run_paths(&sim, &design, &noise, "kstar")?;
    let t = report.trajectory(0, RiskKind::Cvar).expect("monitored");
    let (k, worst) = t.values.iter().enumerate().fold((0, f64::MIN), |a, (k, &v)| if v > a.1 { (k, v) } else { a });
    println!("closed loop: max CVaR(x1) = {worst:.4} at k = {k} (se {:.4}), bound 2", t.se[k]);
    println!("audits: {:?}", report.audit(&sc.constraints));
    Ok(())
}
