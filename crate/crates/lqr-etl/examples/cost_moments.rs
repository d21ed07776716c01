//! Exact LQR cost statistics on a random closed loop, computed twice:
//! through Lyapunov equations and through the MGF spectrum. The two routes
//! must agree; this is the same self-check that backs `lqr-etl moments`.
//!
//! Run: cargo run --release --example cost_moments

use lqr_etl::cost::{mgf, mgf_spectrum};
use lqr_etl::rng::{stream, StreamId};
use lqr_etl::scenario::moments_report;
use lqr_etl::system::{random_system, ClosedLoopSystem, CostWeights, RandomSystemSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = RandomSystemSpec::default();
    let mut rng = stream(2024, StreamId::SystemGeneration);
    let sys = random_system(&spec, &mut rng)?;
    let cl = ClosedLoopSystem::design(&sys, &CostWeights::identity(5, 1))?;

    for n_window in [10usize, 60, 200] {
        let report = moments_report(&cl, n_window)?;
        println!("{}", report.table());
        assert!(report.passes(), "cross-formula disagreement");
    }

    // the MGF itself, on a few points of its domain
    let spectrum = mgf_spectrum(&cl, 60)?;
    let sup = spectrum.domain_sup();
    println!("MGF domain: xi < {sup:.6e}");
    for frac in [-1.0, -0.1, 0.1, 0.5, 0.9] {
        let xi = frac * sup;
        println!("  M({xi:+.6e}) = {:.6e}", mgf(&spectrum, xi)?);
    }
    Ok(())
}
