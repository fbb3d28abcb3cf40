use ncs_core::lmi::{
    eig_bound_as_lmi, evaluate_constraints, solve_feasibility_with, sv_bound_as_lmi, AffineLmi, MatExpr, SdpProblem,
    SolveStatus, SolverOptions,
};
use ncs_core::numerics::{sigma_max, spectral_abscissa, sym_eig_extremes, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// `P ⪰ I`, `AᵀP + PA ≺ 0`.
fn lyapunov_problem(a: &Matrix) -> SdpProblem {
    let n = a.nrows();
    let mut p = SdpProblem::new();
    let x = p.sym_matrix_var("P", n);
    p.add_constraint(AffineLmi::new("lyap", -x.right_mul(a).plus_transpose(), true).unwrap()).unwrap();
    p.add_constraint(AffineLmi::new("pos", x - MatExpr::identity(n), false).unwrap()).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn strictly_feasible_reports_survive_audit(seed in any::<u64>(), n in 1usize..5, shift in -0.5f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random(&mut rng, n, n);
        let a = &g - Matrix::identity(n, n) * (spectral_abscissa(&g).unwrap() + shift);
        let prob = lyapunov_problem(&a);
        let opts = SolverOptions::default();
        let rep = solve_feasibility_with(&prob, &opts).unwrap();
        let stable = spectral_abscissa(&a).unwrap() < 0.0;
        if rep.status == SolveStatus::StrictlyFeasible {
            prop_assert!(stable);
            let margins = evaluate_constraints(&prob, &rep.x).unwrap();
            for (c, m) in prob.constraints.iter().zip(margins) {
                prop_assert!(m >= c.margin(opts.eps_feas) - 1e-12, "{} margin {m}", c.label);
            }
        }
        if rep.status == SolveStatus::Infeasible {
            prop_assert!(!stable || spectral_abscissa(&a).unwrap() > -1e-6);
        }
        prop_assert!(rep.t_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bound_encodings_agree_with_direct_values(seed in any::<u64>(), r in 1usize..4, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random(&mut rng, r, c);
        let g = random(&mut rng, r, r);
        let s = &g + g.transpose();
        let (lo, _) = sym_eig_extremes(&s).unwrap();
        let sv = sigma_max(&m);
        let mut p = SdpProblem::new();
        let t = p.free_var("t");
        let eig = eig_bound_as_lmi("eig", &MatExpr::constant(s.clone()), &MatExpr::scalar(t)).unwrap();
        let svb = sv_bound_as_lmi("sv", &MatExpr::constant(m.clone()), &MatExpr::scalar(t)).unwrap();
        for probe in [lo - 0.05, lo + 0.05] {
            let ok = sym_eig_extremes(&eig.eval(&[probe])).unwrap().0 >= -1e-12;
            prop_assert_eq!(ok, probe <= lo);
        }
        for probe in [sv * 0.95, sv * 1.05 + 1e-9] {
            let ok = sym_eig_extremes(&svb.eval(&[probe])).unwrap().0 >= -1e-12;
            prop_assert_eq!(ok, probe >= sv);
        }
    }
}

#[test]
fn unstable_plants_are_never_certified() {
    // both modes unstable: the phase-I optimum is attained and certifies infeasibility
    let a = Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
    let rep = solve_feasibility_with(&lyapunov_problem(&a), &SolverOptions::default()).unwrap();
    assert_eq!(rep.status, SolveStatus::Infeasible, "{}", rep.message);
    assert!(rep.t_star > 0.0);
    // one stable mode leaves the phase-I infimum unattained
    let a = Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -1.0]);
    let rep = solve_feasibility_with(&lyapunov_problem(&a), &SolverOptions::default()).unwrap();
    assert_ne!(rep.status, SolveStatus::StrictlyFeasible);
}
