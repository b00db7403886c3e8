//! Gaussian risk coefficients `R(α)` and their empirical counterparts on a
//! large standard-normal sample.

use riskmpc::noise::RngStream;
use riskmpc::risk::{RiskKind, RiskSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = RngStream::new(1, 0);
    let samples: Vec<f64> = (0..200_000).map(|_| rng.standard_normal()).collect();
    println!("{:>6} {:>10} {:>10} {:>10}", "alpha", "measure", "R(alpha)", "empirical");
    for alpha in [0.05, 0.1, 0.2, 0.4] {
        for kind in RiskKind::ALL {
            let spec = RiskSpec::new(kind, alpha)?;
            println!("{alpha:>6} {:>10} {:>10.6} {:>10.6}", kind.label(), spec.coefficient(), spec.empirical(&samples)?);
        }
    }
    Ok(())
}
