mod common;

use ncs_core::decentralized::{
    certify_decentralized, corollary1_bounds, local_closed_loop_abscissae, solve_care, solve_dual_care,
    theorem2_margins, theorem3_bounds, BoundsSource, DecentralizedError, DecentralizedOptions,
};
use ncs_core::lmi::SolverOptions;
use ncs_core::model::{
    assemble_block_matrices, detect_poset, is_controllable, is_observable, Coupling, PlantNetwork, Subsystem,
};
use ncs_core::numerics::{block_diag, sigma_max, spectral_abscissa, sym_eig_extremes, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn controllable_pair(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (Matrix, Matrix) {
    loop {
        let a = random(rng, n, n, 2.0);
        let b = random(rng, n, m, 1.0);
        if is_controllable(&a, &b) {
            return (a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn care_solutions_are_accurate_and_stabilizing(seed in any::<u64>(), n in 1usize..=5, m in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = controllable_pair(&mut rng, n, m);
        let q = Matrix::identity(n, n);
        let sol = solve_care(&a, &b, &q).unwrap();
        let p = &sol.p;
        let g = &b * b.transpose();
        let r = a.transpose() * p + p * &a - p * &g * p + &q;
        let scale = 1.0 + sigma_max(p).powi(2) * sigma_max(&g);
        prop_assert!(sigma_max(&r) <= 1e-9 * scale);
        prop_assert!((p - p.transpose()).amax() <= 1e-12 * (1.0 + p.amax()));
        prop_assert!(spectral_abscissa(&(&a - &g * p)).unwrap() < 0.0);
        prop_assert!(sym_eig_extremes(p).unwrap().0 > 0.0);
    }

    #[test]
    fn dual_solution_satisfies_the_filter_equation(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (at, ct) = controllable_pair(&mut rng, n, 1);
        let (a, c) = (at.transpose(), ct.transpose());
        let qh = Matrix::identity(n, n) * 2.0;
        let z = solve_dual_care(&a, &c, &qh).unwrap().p;
        let r = &z * a.transpose() + &a * &z - &z * c.transpose() * &c * &z + &qh;
        prop_assert!(sigma_max(&r) <= 1e-9 * (1.0 + sigma_max(&z).powi(2) * sigma_max(&(c.transpose() * &c))));
        prop_assert!(spectral_abscissa(&(&a - &z * c.transpose() * &c)).unwrap() < 0.0);
    }
}

/// Square-input subsystems, so `BBᵀ` is nonsingular.
fn fully_actuated(seed: u64, n: usize, beta: f64) -> PlantNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsystems = (0..n)
        .map(|i| {
            let d = rng.random_range(1..=3);
            let b = random(&mut rng, d, d, 1.0) + Matrix::identity(d, d) * 2.0;
            Subsystem::new(format!("s{i}"), random(&mut rng, d, d, 1.0), b, Matrix::identity(d, d))
        })
        .collect();
    PlantNetwork { subsystems, couplings: Vec::new(), beta: vec![beta; n] }
}

#[test]
fn perturbations_below_the_margin_keep_the_riccati_decrease() {
    let mut tested = 0;
    for seed in 0..30 {
        let net = fully_actuated(seed, 2, 0.01);
        let margins = theorem2_margins(&net, None, None).unwrap();
        if margins.controller_vacuous() {
            continue;
        }
        tested += 1;
        let p = block_diag(&margins.p);
        let n = p.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for _ in 0..20 {
            let d = random(&mut rng, n, n, 1.0);
            let d = &d * (rng.random_range(0.0..0.999) * margins.controller_margin / sigma_max(&d));
            let s = d.transpose() * &p + &p * &d + &p * (2.0 * net.beta_max()) - Matrix::identity(n, n);
            assert!(sym_eig_extremes(&((&s + s.transpose()) * 0.5)).unwrap().1 < 0.0, "seed {seed}");
        }
    }
    assert!(tested >= 5, "only {tested} instances with a positive margin");
}

#[test]
fn theorem3_gains_certify_themselves() {
    let mut tested = 0;
    for seed in 0..25 {
        let (net, _) = common::random_network(seed, 2, 1.0, 10.0, 10.0);
        let b = match theorem3_bounds(&net, &DecentralizedOptions::default()) {
            Ok(b) => b,
            Err(DecentralizedError::NotEstablished(_)) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        tested += 1;
        for (i, k) in b.gains.k.iter().enumerate() {
            assert_eq!(sigma_max(k), b.kappa_lower[i]);
        }
        for (i, m) in b.gains.m.iter().enumerate() {
            assert_eq!(sigma_max(m), b.mu_lower[i]);
        }
        assert!(b.gains.l.is_empty() && b.gains.o.is_empty());
        let cert = certify_decentralized(&net, &b, &SolverOptions::default()).unwrap();
        assert!(cert.certified().is_some(), "seed {seed}");
        let (ax, ae) = local_closed_loop_abscissae(&net, &b.gains).unwrap();
        assert!(ax < -net.beta_min() + 1e-8 && ae < -net.beta_min() + 1e-8);
    }
    assert!(tested >= 10, "only {tested} established instances");
}

fn chain(seed: u64, n: usize) -> PlantNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsystems = Vec::new();
    while subsystems.len() < n {
        let d = rng.random_range(1..=3);
        let (a, b, c) = (random(&mut rng, d, d, 1.5), random(&mut rng, d, 1, 1.0), random(&mut rng, 1, d, 1.0));
        if is_controllable(&a, &b) && is_observable(&a, &c) {
            subsystems.push(Subsystem::new(format!("s{}", subsystems.len()), a, b, c));
        }
    }
    let couplings = (1..n)
        .map(|to| {
            let h = random(&mut rng, subsystems[to].states(), subsystems[to - 1].states(), 20.0);
            Coupling { from: to - 1, to, h }
        })
        .collect();
    PlantNetwork { subsystems, couplings, beta: vec![0.3; n] }
}

#[test]
fn acyclic_networks_use_local_gains() {
    for seed in 0..10 {
        let net = chain(seed, 3);
        assert!(detect_poset(&net).is_some());
        let b = corollary1_bounds(&net, &DecentralizedOptions::default()).unwrap();
        assert_eq!(b.source, BoundsSource::Poset);
        for (i, s) in net.subsystems.iter().enumerate() {
            let ax = spectral_abscissa(&(&s.a + &s.b * &b.gains.k[i])).unwrap();
            let ae = spectral_abscissa(&(&s.a + &b.gains.m[i] * &s.c)).unwrap();
            assert!(ax < -net.beta_min() && ae < -net.beta_min(), "seed {seed}, block {i}: {ax} {ae}");
        }
        // the cascade spectrum is the union of the local ones, up to
        // eigenvalue sensitivity of the non-normal block-triangular matrix
        let sys = assemble_block_matrices(&net);
        let ah = &sys.a + &sys.h;
        let ax = spectral_abscissa(&(&ah + &sys.b * block_diag(&b.gains.k))).unwrap();
        let ae = spectral_abscissa(&(&ah + block_diag(&b.gains.m) * &sys.c)).unwrap();
        assert!(ax < -net.beta_min() + 1e-4 && ae < -net.beta_min() + 1e-4, "seed {seed}: {ax} {ae}");
    }
}

#[test]
fn cyclic_networks_are_not_posets() {
    let net = common::pendulum();
    assert_eq!(corollary1_bounds(&net, &DecentralizedOptions::default()).unwrap_err(), DecentralizedError::NotPoset);
}
