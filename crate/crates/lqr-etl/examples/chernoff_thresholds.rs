//! Chernoff confidence intervals for the windowed cost, with the
//! chi-squared sanity check: for a single unit eigenvalue the cost is
//! chi-squared with one degree of freedom, so the upper threshold must
//! dominate the exact 97.5% quantile while keeping the analytic tail below
//! eta/2.
//!
//! Run: cargo run --release --example chernoff_thresholds

use lqr_etl::cost::{mgf_spectrum, moments_from_mgf, MgfSpectrum};
use lqr_etl::rng::{stream, StreamId};
use lqr_etl::system::{random_system, ClosedLoopSystem, CostWeights, RandomSystemSpec};
use lqr_etl::triggers::{chernoff_thresholds, chi};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // chi-squared(1) case: lambda = {1}
    let unit = MgfSpectrum::from_eigenvalues(vec![1.0], 1, 1)?;
    for eta in [0.05, 0.01] {
        let th = chernoff_thresholds(&unit, eta)?;
        println!(
            "chi2(1), eta = {eta}: kappa- = {:.4}, kappa+ = {:.4} (xi+ = {:.4})",
            th.kappa_minus, th.kappa_plus, th.xi_plus
        );
    }

    // a random 5-dimensional loop with the long window used by the
    // distribution-based trigger
    let spec = RandomSystemSpec::default();
    let mut rng = stream(7, StreamId::SystemGeneration);
    let sys = random_system(&spec, &mut rng)?;
    let cl = ClosedLoopSystem::design(&sys, &CostWeights::identity(5, 1))?;
    let spectrum = mgf_spectrum(&cl, 200)?;
    let moments = moments_from_mgf(&spectrum);
    let eta = 0.01;
    let th = chernoff_thresholds(&spectrum, eta)?;
    println!("random 5-dim loop, N = 200, eta = {eta}:");
    println!("  E[J_N]      = {:.4}", moments.mean);
    println!("  Std[J_N]    = {:.4}", moments.variance.sqrt());
    println!("  kappa-      = {:.4}", th.kappa_minus);
    println!("  kappa+      = {:.4}", th.kappa_plus);
    assert!(th.kappa_minus < moments.mean && moments.mean < th.kappa_plus);

    // the objective around its minimizer
    for scale in [0.5, 0.9, 1.0, 1.1, 1.5] {
        let xi = th.xi_plus * scale;
        println!("  chi({xi:.6e}) = {:.4}", chi(xi, &spectrum, eta)?);
    }
    Ok(())
}
