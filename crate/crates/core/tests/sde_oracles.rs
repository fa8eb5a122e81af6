//! Distributional checks of the simulator against closed-form moments.

mod common;

use riskbound_core::sde::{
    simulate_paths, Diffusion, Drift, Interaction, ModelSpec, ModelVariant, PolicySpec, TimeGrid,
};

fn ou_spec(theta: f64, x0: f64) -> ModelSpec {
    ModelSpec {
        n_agents: 1,
        drift: Drift::Linear {
            state_coeff: -theta,
            control_coeff: 0.0,
        },
        diffusion: Diffusion::Constant { sigma: 1.0 },
        interaction: Interaction::None,
        variant: ModelVariant::A,
        meanfield_drift: None,
        initial_states: vec![x0],
    }
}

#[test]
fn ou_terminal_variance_reaches_stationarity() {
    // theta = 1, sigma = 1, T = 10: terminal states are draws from (nearly)
    // the stationary law with variance 1/2.
    let spec = ou_spec(1.0, 1.0);
    let grid = TimeGrid::new(10.0, 0.001).unwrap();
    let n_paths = 10_000;
    let terminals = simulate_paths(&spec, &PolicySpec::zero(), &grid, n_paths, 424242, false, |rec| {
        rec.terminal_state(0)
    })
    .unwrap();

    let n = n_paths as f64;
    let mean = terminals.iter().sum::<f64>() / n;
    let var = terminals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = common::ou_stationary_variance(1.0, 1.0);
    // Sample variance of a Gaussian: se ~ var * sqrt(2 / n).
    let se = expected * (2.0 / n).sqrt();
    assert!(
        (var - expected).abs() < 3.0 * se,
        "terminal variance {var} vs {expected} (se {se})"
    );
}

#[test]
fn ou_transient_second_moment_tracks_the_ode() {
    let spec = ou_spec(2.0, 1.5);
    let grid = TimeGrid::new(1.0, 0.001).unwrap();
    let n_paths = 20_000;
    let checkpoints = [200usize, 500, 1000];
    let rows = simulate_paths(&spec, &PolicySpec::zero(), &grid, n_paths, 7, false, |rec| {
        checkpoints.map(|k| rec.state(0, k))
    })
    .unwrap();
    for (j, &k) in checkpoints.iter().enumerate() {
        let t = grid.time(k);
        let m2 = rows.iter().map(|r| r[j] * r[j]).sum::<f64>() / n_paths as f64;
        let expected = common::ou_second_moment(2.0, 1.0, 1.5, t);
        let sd = rows
            .iter()
            .map(|r| (r[j] * r[j] - m2).powi(2))
            .sum::<f64>()
            .sqrt()
            / n_paths as f64;
        assert!(
            (m2 - expected).abs() < 3.0 * sd + 0.01 * expected,
            "t = {t}: m2 {m2} vs {expected}"
        );
    }
}
