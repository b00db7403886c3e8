//! Back-off schedules for the DC-DC state constraint under each risk
//! measure, with the terminal-set check.
//!
//! Usage: cargo run --release --example tightening_schedule [STEPS]

use riskmpc::config::ScenarioConfig;
use riskmpc::risk::{RiskKind, RiskSpec};
use riskmpc::tightening::{gaussian_schedule, validate_terminal_set, ErrorProcess};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(12);
    let sc = ScenarioConfig::builtin("dcdc")?.build()?;
    let ep = ErrorProcess::new(&sc.system, sc.initial.cov.clone())?;
    for kind in RiskKind::ALL {
        let mut cons = sc.constraints.clone();
        cons.risk = RiskSpec::new(kind, sc.constraints.risk.alpha())?;
        let sched = gaussian_schedule(&ep, &cons, steps)?;
        let row: Vec<String> = sched.state[0].iter().map(|b| format!("{b:.3}")).collect();
        let verdict = validate_terminal_set(&cons, &sched, &sc.system, Some(&ep))?;
        println!("{:>8}: {} | steady {:.4} | terminal set {}", cons.risk.to_string(), row.join(" "), sched.steady_state_state[0], if verdict.valid() { "valid" } else { "invalid" });
    }
    Ok(())
}
