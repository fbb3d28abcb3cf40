#![allow(dead_code)]

use ncs_core::model::{
    build_pendulum_network, is_controllable, is_observable, Coupling, GainBounds, PendulumParams, PlantNetwork, Subsystem,
};
use ncs_core::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pendulum() -> PlantNetwork {
    build_pendulum_network(&PendulumParams::three_cart_benchmark()).0
}

pub fn case_bounds(kappa: [f64; 3], mu: [f64; 3]) -> GainBounds {
    GainBounds::uniform(kappa.to_vec(), mu.to_vec(), 30.0, 10.0)
}

pub fn case1() -> GainBounds {
    case_bounds([96.0, 106.0, 211.0], [27.0, 26.0, 28.0])
}

pub fn case2() -> GainBounds {
    case_bounds([135.0, 121.0, 232.0], [27.0, 28.0, 29.0])
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Random network with controllable and observable subsystems of at most
/// `max_states` states, single input and output, and random couplings.
pub fn random_network(seed: u64, max_states: usize, coupling: f64, kmax: f64, iota: f64) -> (PlantNetwork, GainBounds) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=3);
    let mut subsystems = Vec::new();
    while subsystems.len() < n {
        let d = rng.random_range(1..=max_states);
        let a = uniform(&mut rng, d, d, 1.0);
        let b = uniform(&mut rng, d, 1, 1.0);
        let c = uniform(&mut rng, 1, d, 1.0);
        if is_controllable(&a, &b) && is_observable(&a, &c) {
            subsystems.push(Subsystem::new(format!("s{}", subsystems.len() + 1), a, b, c));
        }
    }
    let mut couplings = Vec::new();
    for to in 0..n {
        for from in 0..n {
            if to != from && rng.random_bool(0.6) {
                let h = uniform(&mut rng, subsystems[to].states(), subsystems[from].states(), coupling);
                couplings.push(Coupling { from, to, h });
            }
        }
    }
    let beta = vec![0.1; n];
    let kappa: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..kmax)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..kmax)).collect();
    (PlantNetwork { subsystems, couplings, beta }, GainBounds::uniform(kappa, mu, iota, iota))
}
