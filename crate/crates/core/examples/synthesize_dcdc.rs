//! Offline synthesis for the DC-DC converter: Riccati gain, terminal weight,
//! stationary covariances and the averaged-performance bounds.

use riskmpc::config::ScenarioConfig;
use riskmpc::model::{check_stationary_admissible, synthesize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = ScenarioConfig::builtin("dcdc")?.build()?;
    for label in ["kstar", "ktilde"] {
        let sys = sc.system_with_gain(label)?;
        let s = synthesize(&sys, &sc.cost)?;
        println!("gain {label}: K = {:.6}", sys.k());
        println!("  P = {:.6}", s.p);
        println!("  Sigma_E^s = {:.6}", s.sigma_e_s);
        println!("  tr(P* Sigma_W) = {:.6}, tr(P Sigma_W) = {:.6}, C_f = {:.6}", s.stationary_cost, s.upper_cost, s.c_f.max(0.0));
        let adm = check_stationary_admissible(&sc.constraints, &s);
        for r in &adm.state_rows {
            println!("  stationary {} back-off {:.6} against bound {:.1}: {}", sc.constraints.risk, r.backoff, r.bound, r.ok);
        }
    }
    Ok(())
}
