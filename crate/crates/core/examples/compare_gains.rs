//! Averaged closed-loop cost of the Riccati gain against a detuned gain,
//! both under the CVaR constraint and with common random numbers.
//!
//! Usage: cargo run --release --example compare_gains [PATHS] [STEPS]

use riskmpc::config::ScenarioConfig;
use riskmpc::controller::InfeasiblePolicy;
use riskmpc::sim::{compare_gains, design_gaussian, DesignOptions, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let paths: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let sc = ScenarioConfig::builtin("dcdc")?.build()?;
    let opts = DesignOptions {
        horizon: sc.config.horizon,
        form: sc.config.cost.form,
        schedule_len: steps + sc.config.horizon + 1,
        policy: InfeasiblePolicy::Strict,
    };
    let mut designs = Vec::new();
    for label in ["kstar", "ktilde"] {
        let sys = sc.system_with_gain(label)?;
        designs.push((label.to_string(), design_gaussian(&sys, &sc.cost, &sc.constraints, &sc.initial.cov, opts)?));
    }
    let cfg = SimConfig {
        paths,
        steps,
        seed: sc.config.sim.seed,
        initial: sc.initial.clone(),
        monitors: Vec::new(),
        measures: Vec::new(),
        risk_steps: 0,
        bootstrap: 0,
        sample_based: false,
    };
    let noise = sc.sampler()?;
    for r in compare_gains(&cfg, &designs, noise.as_ref())? {
        println!(
            "{:>6}: average {:.4} +- {:.4} after {steps} steps; bounds [{:.4}, {:.4}]",
            r.gain_label,
            r.final_average(),
            r.average_se,
            r.lower_bound,
            r.upper_bound
        );
        for l in [10, 50, 100, steps] {
            println!("        L = {l:>4}: {:.4}", r.running_average[l.min(steps) - 1]);
        }
    }
    Ok(())
}
