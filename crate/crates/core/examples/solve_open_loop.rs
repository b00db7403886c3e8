//! The first open-loop problem of the DC-DC loop: condensed QP, optimal
//! input sequence, nominal trajectory against the tightened bound.

use riskmpc::config::ScenarioConfig;
use riskmpc::model::synthesize;
use riskmpc::ocp::{OcpLayout, OpenLoopProblem};
use riskmpc::tightening::{gaussian_schedule, ErrorProcess};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = ScenarioConfig::builtin("dcdc")?.build()?;
    let n = sc.config.horizon;
    let synth = synthesize(&sc.system, &sc.cost)?;
    let ep = ErrorProcess::new(&sc.system, sc.initial.cov.clone())?;
    let schedule = gaussian_schedule(&ep, &sc.constraints, n + 1)?;
    let layout = OcpLayout::new(&sc.system, &sc.cost, &sc.constraints, &synth.p, n, sc.config.cost.form)?;
    let x0 = sc.initial.mean.clone();
    let problem = OpenLoopProblem { layout: &layout, schedule: &schedule, step: 0, x: x0.clone(), z: x0.clone() };

    let (qp, offset) = problem.condense();
    let (sol, _) = problem.solve()?;
    println!("QP: {} variables, {} inequalities, {} equalities", qp.dim(), qp.a.nrows(), qp.aeq.nrows());
    println!("status {} after {} iterations, active rows {:?}", sol.status.label(), sol.iterations, sol.active);
    println!("cost {:.6} (forward simulation {:.6})", sol.objective + offset, problem.evaluate_cost(&sol.v));
    let bound = &sc.constraints.state[0];
    for (k, z) in layout.nominal_trajectory(&x0, &sol.v).iter().enumerate() {
        let limit = bound.p - schedule.state_backoff(0, k);
        let v = if k < n { format!("{:+.5}", sol.v[k]) } else { String::new() };
        println!("k={k:>2}  z1 {:+.5} <= {:.5}  z2 {:+.5}  v {v}", z[0], limit, z[1]);
    }
    Ok(())
}
