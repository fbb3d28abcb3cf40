mod common;

use ncs_core::lmi::SolverOptions;
use ncs_core::model::{PlantNetwork, Subsystem};
use ncs_core::numerics::{rk4_integrate, Matrix, Vector};
use ncs_core::simulate::{simulate_closed_loop, verify_decay, SimulateError};
use ncs_core::sparsify::{relax_and_threshold, SparsifyOptions, Variant};
use ncs_core::synthesis::{check_lemma1, closed_loop_matrices, Certificates, GainSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn random_gains(rng: &mut ChaCha8Rng, net: &PlantNetwork) -> GainSet {
    let mut g = GainSet::zero(net);
    for (i, s) in net.subsystems.iter().enumerate() {
        g.k[i] = Matrix::from_fn(s.inputs(), s.states(), |_, _| rng.random_range(-1.0..1.0));
        g.m[i] = Matrix::from_fn(s.states(), s.outputs(), |_, _| rng.random_range(-1.0..1.0));
    }
    g
}

fn states(net: &PlantNetwork) -> usize {
    net.subsystems.iter().map(Subsystem::states).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_are_linear_in_the_initial_condition(seed in any::<u64>()) {
        let (net, _) = common::random_network(seed, 3, 1.0, 2.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gains(&mut rng, &net);
        let n = states(&net);
        let (x0, e0) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let a = simulate_closed_loop(&net, &g, &x0, &e0, 1.0, 0.01).unwrap();
        let b = simulate_closed_loop(&net, &g, &(&x0 * 2.0), &(&e0 * 2.0), 1.0, 0.01).unwrap();
        for (u, v) in a.x.iter().chain(&a.e).zip(b.x.iter().chain(&b.e)) {
            prop_assert_eq!(u * 2.0, v.clone());
        }
    }

    #[test]
    fn error_evolves_on_its_own(seed in any::<u64>()) {
        let (net, _) = common::random_network(seed, 3, 1.0, 2.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gains(&mut rng, &net);
        let n = states(&net);
        let e0 = random_vec(&mut rng, n);
        let traj = simulate_closed_loop(&net, &g, &random_vec(&mut rng, n), &e0, 1.0, 0.01).unwrap();
        let alone = rk4_integrate(&closed_loop_matrices(&net, &g).a_e, &e0, 0.01, 100).unwrap();
        prop_assert_eq!(traj.e.len(), alone.len());
        for (u, v) in traj.e.iter().zip(&alone) {
            prop_assert!((u - v).norm() <= 1e-12 * (1.0 + v.norm()));
        }

        // a zero error stays zero and leaves the state loop alone
        let x0 = random_vec(&mut rng, n);
        let traj = simulate_closed_loop(&net, &g, &x0, &Vector::zeros(n), 1.0, 0.01).unwrap();
        prop_assert!(traj.e.iter().all(|e| e.iter().all(|v| *v == 0.0)));
        let alone = rk4_integrate(&closed_loop_matrices(&net, &g).a_x, &x0, 0.01, 100).unwrap();
        for (u, v) in traj.x.iter().zip(&alone) {
            prop_assert!((u - v).norm() <= 1e-12 * (1.0 + v.norm()));
        }
    }
}

fn scalar_net(a: &[f64]) -> PlantNetwork {
    let subsystems = a
        .iter()
        .map(|&a| Subsystem::new("s", Matrix::from_element(1, 1, a), Matrix::identity(1, 1), Matrix::identity(1, 1)))
        .collect();
    PlantNetwork { subsystems, couplings: Vec::new(), beta: vec![0.0; a.len()] }
}

#[test]
fn uncontrolled_decay_matches_the_exponential() {
    let net = scalar_net(&[-1.0, -1.0]);
    let x0 = Vector::from_vec(vec![1.0, -2.5]);
    let traj = simulate_closed_loop(&net, &GainSet::zero(&net), &x0, &Vector::zeros(2), 3.0, 0.01).unwrap();
    assert_eq!(traj.len(), 301);
    for (t, x) in traj.times.iter().zip(&traj.x) {
        assert!((x - &x0 * (-t).exp()).norm() <= 1e-9);
    }
    assert_eq!(traj.diverged_at, None);
}

#[test]
fn runaway_growth_is_reported() {
    let net = scalar_net(&[5.0]);
    let x0 = Vector::from_element(1, 1.0);
    let traj = simulate_closed_loop(&net, &GainSet::zero(&net), &x0, &Vector::zeros(1), 10.0, 0.001).unwrap();
    let step = traj.diverged_at.unwrap();
    // e^{5t} passes 1e8 near t = 3.68
    assert!((3600..3700).contains(&step), "{step}");
    assert_eq!(traj.len(), step);
}

#[test]
fn bad_arguments_are_rejected() {
    let net = scalar_net(&[-1.0]);
    let g = GainSet::zero(&net);
    let v = Vector::zeros(1);
    assert!(matches!(simulate_closed_loop(&net, &g, &v, &v, 1.0, 0.0), Err(SimulateError::TimeStep { .. })));
    assert!(matches!(simulate_closed_loop(&net, &g, &v, &v, 1.0, 2.0), Err(SimulateError::TimeStep { .. })));
    assert!(matches!(
        simulate_closed_loop(&net, &g, &Vector::zeros(2), &v, 1.0, 0.1),
        Err(SimulateError::Dimension { got: 2, expected: 1 })
    ));
}

#[test]
fn certified_designs_decay_at_the_certified_rate() {
    let (net, bounds) = (0..10)
        .map(|s| common::random_network(s, 2, 2.0, 30.0, 30.0))
        .find(|(n, b)| relax_and_threshold(n, b, Variant::Binary, &SparsifyOptions::default()).is_ok())
        .unwrap();
    let r = relax_and_threshold(&net, &bounds, Variant::Binary, &SparsifyOptions::default()).unwrap();
    let n = states(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = random_vec(&mut rng, n);

    let traj = simulate_closed_loop(&net, &r.gains, &x0, &Vector::zeros(n), 10.0, 1e-3).unwrap();
    let report = verify_decay(&traj, &r.certificates, net.beta_min());
    assert!(report.pass && report.state_ratio.unwrap() <= 1.0 + 1e-6 && report.error_ratio.is_none());

    let traj = simulate_closed_loop(&net, &r.gains, &x0, &random_vec(&mut rng, n), 10.0, 1e-3).unwrap();
    let report = verify_decay(&traj, &r.certificates, net.beta_min());
    assert!(report.pass && report.error_ratio.unwrap() <= 1.0 + 1e-6 && report.state_ratio.is_none());
}

#[test]
fn decay_audit_flags_a_wrong_certificate() {
    // x' = -x with rate claim 2 fails
    let net = PlantNetwork { beta: vec![2.0], ..scalar_net(&[-1.0]) };
    let certs = Certificates { p: vec![Matrix::identity(1, 1)], p_hat: vec![Matrix::identity(1, 1)], margins: [0.0; 4] };
    let x0 = Vector::from_element(1, 1.0);
    let traj = simulate_closed_loop(&net, &GainSet::zero(&net), &x0, &Vector::zeros(1), 1.0, 0.01).unwrap();
    let report = verify_decay(&traj, &certs, net.beta_min());
    assert!(!report.pass);
    // V ratio per step is e^{-2dt} / e^{-4dt} = e^{2dt}
    assert!((report.state_ratio.unwrap() - (0.02f64).exp()).abs() <= 1e-9);
    assert!(check_lemma1(&net, &GainSet::zero(&net), &SolverOptions::default()).unwrap().certified().is_none());
}

#[test]
fn csv_round_trips_every_sample() {
    let net = scalar_net(&[-0.5, 0.3]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_gains(&mut rng, &net);
    let traj = simulate_closed_loop(&net, &g, &random_vec(&mut rng, 2), &random_vec(&mut rng, 2), 0.5, 0.1).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x_1_1,x_2_1,e_1_1,e_2_1"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), traj.len());
    for (k, row) in rows.iter().enumerate() {
        let expected: Vec<f64> =
            std::iter::once(traj.times[k]).chain(traj.x[k].iter().copied()).chain(traj.e[k].iter().copied()).collect();
        assert_eq!(row, &expected);
    }
}
