//! Chirp-excited least-squares identification: drive a noisy plant under
//! stabilizing feedback with a frequency sweep on top, fit (A_o, B) by
//! ordinary least squares, and estimate the noise covariance from the
//! residuals. Also exports the trajectory in the CSV layout accepted by
//! `lqr-etl identify`.
//!
//! Run: cargo run --release --example identify_chirp

use std::fmt::Write as _;

use lqr_etl::config::system_to_toml;
use lqr_etl::identification::{chirp, ols_estimate, ExcitationKind, ExcitationSignal};
use lqr_etl::linalg::lqr_gain;
use lqr_etl::linalg::SpdMatrix;
use lqr_etl::report::write_text;
use lqr_etl::rng::{standard_normal_vector, stream, StreamId};
use lqr_etl::system::{random_system, RandomSystemSpec, Trajectory};
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = RandomSystemSpec::default();
    let mut rng = stream(11, StreamId::SystemGeneration);
    let truth = random_system(&spec, &mut rng)?;
    let gain = lqr_gain(truth.a_open(), truth.b(), &SpdMatrix::identity(5), &SpdMatrix::identity(1))?;

    let signal = ExcitationSignal {
        kind: ExcitationKind::Chirp,
        amplitude: 10.0,
        f_start: 0.01,
        f_end: 0.2,
        duration: 4000,
    };
    let mut noise = stream(12, StreamId::ProcessNoise);
    let mut x = DVector::zeros(5);
    let mut states = vec![x.clone()];
    let mut inputs = Vec::new();
    for k in 0..signal.duration {
        let u = -(&gain * &x) + DVector::from_element(1, chirp(&signal, k)?);
        x = truth.a_open() * &x
            + truth.b() * &u
            + truth.noise_root() * standard_normal_vector(5, &mut noise);
        inputs.push(u);
        states.push(x.clone());
    }
    let traj = Trajectory { states, inputs, seed: 12, start_index: 0 };

    let model = ols_estimate(&traj)?;
    println!("samples            : {}", model.sample_count);
    println!("residual rms       : {:.4e}", model.residual_rms);
    println!("|A_hat - A_o|_F    : {:.4e}", (&model.a_hat - truth.a_open()).norm());
    println!("|B_hat - B|_F      : {:.4e}", (&model.b_hat - truth.b()).norm());
    println!(
        "|V_hat - V|_F      : {:.4e}",
        (model.v_hat.as_matrix() - truth.v().as_matrix()).norm()
    );

    // exports: model TOML (the explicit-system schema) and the trajectory CSV
    let dir = std::path::Path::new("out/identify");
    write_text(
        &dir.join("model.toml"),
        &system_to_toml(&model.a_hat, &model.b_hat, model.v_hat.as_matrix()),
    )?;
    let mut csv = String::from("step,x0,x1,x2,x3,x4,u0\n");
    for (k, state) in traj.states.iter().enumerate() {
        let u = traj.inputs.get(k).map(|u| u[0]).unwrap_or(0.0);
        let _ = writeln!(
            csv,
            "{k},{},{},{},{},{},{u}",
            state[0], state[1], state[2], state[3], state[4]
        );
    }
    write_text(&dir.join("trajectory.csv"), &csv)?;
    println!("outputs written to {}", dir.display());
    Ok(())
}
