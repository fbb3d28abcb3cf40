//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use ncs_core::decentralized::{solve_care, theorem3_bounds, DecentralizedBounds, DecentralizedOptions};
use ncs_core::lmi::{evaluate_constraints, solve_feasibility_with, SolveStatus, SolverOptions};
use ncs_core::model::{
    candidate_links, is_controllable, CandidateScope, GainBounds, LinkPattern, PlantNetwork, Subsystem,
};
use ncs_core::numerics::{spectral_abscissa, Matrix, Vector};
use ncs_core::simulate::{simulate_closed_loop, verify_decay};
use ncs_core::sparsify::{exhaustive_design, relax_and_threshold, DesignResult, SparsifyError, SparsifyOptions, Variant};
use ncs_core::synthesis::{build_theorem1_program, check_lemma1, GainSet, SynthesisOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failures: usize,
    total: usize,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        self.total += 1;
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id}. {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn fmt_ind(v: &[u8]) -> String {
    format!("({})", v.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","))
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

/// All designs produced during the run, with the bounds they were made for.
struct Designs {
    items: Vec<(String, PlantNetwork, GainBounds, DesignResult)>,
}

fn criterion1(rep: &mut Report, designs: &mut Designs) -> DecentralizedBounds {
    let start = Instant::now();
    let net = common::pendulum();
    let order = candidate_links(&net, CandidateScope::All);
    let opts = SparsifyOptions::default();
    let db = theorem3_bounds(&net, &DecentralizedOptions::default()).expect("decentralization bounds");
    let case3 = GainBounds::uniform(db.kappa_lower.clone(), db.mu_lower.clone(), 30.0, 10.0);
    let cases: [(&str, GainBounds, [u8; 6]); 3] = [
        ("case 1", common::case1(), [1, 1, 0, 0, 1, 1]),
        ("case 2", common::case2(), [0, 0, 0, 0, 1, 1]),
        ("case 3", case3, [0, 0, 0, 0, 0, 0]),
    ];
    let mut all = true;
    let mut parts = Vec::new();
    for (name, bounds, want) in cases {
        let runs: [(&str, Result<DesignResult, SparsifyError>); 3] = [
            ("linear", relax_and_threshold(&net, &bounds, Variant::Linear, &opts)),
            ("binary", relax_and_threshold(&net, &bounds, Variant::Binary, &opts)),
            ("exhaustive", exhaustive_design(&net, &bounds, &opts)),
        ];
        for (method, r) in runs {
            match r {
                Ok(d) => {
                    let got = d.indicators(&order);
                    let ok = got == want;
                    all &= ok;
                    parts.push(format!("{name} {method} {}{}", fmt_ind(&got), if ok { "" } else { " MISMATCH" }));
                    designs.items.push((format!("pendulum {name} {method}"), net.clone(), bounds.clone(), d));
                }
                Err(e) => {
                    all = false;
                    parts.push(format!("{name} {method} error: {e}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let fast = secs <= 300.0;
    rep.line(1, "Table-1 link patterns", all && fast, format!("{}; {secs:.1} s", parts.join("; ")));
    db
}

fn criterion2(rep: &mut Report, db: &DecentralizedBounds) {
    let k_ref = [54.1, 273.2, 152.1];
    let m_ref = [27.2, 29.2, 27.0];
    let ok = db.kappa_lower.iter().zip(k_ref).all(|(x, t)| within(*x, t, 0.10))
        && db.mu_lower.iter().zip(m_ref).all(|(x, t)| within(*x, t, 0.10));
    rep.line(
        2,
        "decentralization bounds",
        ok,
        format!(
            "kappa_lower = ({}), mu_lower = ({})",
            db.kappa_lower.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(", "),
            db.mu_lower.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

fn random_instances(designs: &mut Designs) -> (usize, Vec<(usize, usize)>) {
    let opts = SparsifyOptions::default();
    let mut pairs = Vec::new();
    let mut seed = 0u64;
    while pairs.len() < 20 && seed < 200 {
        let (net, bounds) = common::random_network(seed, 2, 6.0, 50.0, 50.0);
        seed += 1;
        let Ok(h) = relax_and_threshold(&net, &bounds, Variant::Linear, &opts) else { continue };
        let e = exhaustive_design(&net, &bounds, &opts).expect("exhaustive search after a feasible heuristic");
        pairs.push((h.link_count, e.link_count));
        designs.items.push((format!("random seed {} heuristic", seed - 1), net.clone(), bounds.clone(), h));
        designs.items.push((format!("random seed {} exhaustive", seed - 1), net, bounds, e));
    }
    (seed as usize, pairs)
}

fn criterion3(rep: &mut Report, designs: &Designs) {
    let solver = SolverOptions::default();
    let mut bad = Vec::new();
    for (name, net, bounds, d) in &designs.items {
        let certified = matches!(check_lemma1(net, &d.gains, &solver), Ok(o) if o.certified().is_some());
        let limit = -net.beta_min() + 1e-8;
        let cl = ncs_core::synthesis::closed_loop_matrices(net, &d.gains);
        let ax = spectral_abscissa(&cl.a_x).unwrap_or(f64::INFINITY);
        let ae = spectral_abscissa(&cl.a_e).unwrap_or(f64::INFINITY);
        let audit = d.gains.audit(bounds, 1e-6);
        if !certified || ax >= limit || ae >= limit || !audit.is_empty() || !d.gains.consistent_with(&d.pattern) {
            bad.push(format!("{name} (certified {certified}, abscissae {ax:.3e}/{ae:.3e}, audit {audit:?})"));
        }
    }
    rep.line(
        3,
        "certificate validity",
        bad.is_empty(),
        if bad.is_empty() { format!("{} designs certified", designs.items.len()) } else { bad.join("; ") },
    );
}

fn criterion4(rep: &mut Report, pairs: &[(usize, usize)], seeds: usize) {
    let ok = pairs.len() >= 20 && pairs.iter().all(|(h, e)| h >= e);
    let gap = pairs.iter().map(|(h, e)| (*h as f64) - (*e as f64)).sum::<f64>() / pairs.len().max(1) as f64;
    let exact = pairs.iter().filter(|(h, e)| h == e).count();
    rep.line(
        4,
        "oracle sandwich",
        ok,
        format!("{} instances from {seeds} seeds, mean gap {gap:.3} links, {exact} exact", pairs.len()),
    );
}

fn criterion5(rep: &mut Report) {
    let s = |v: f64| Matrix::from_element(1, 1, v);
    let closed = [(0.0, 1.0), (1.0, 1.0 + 2f64.sqrt()), (-1.0, 2f64.sqrt() - 1.0)];
    let mut worst_closed = 0.0f64;
    for (a, p) in closed {
        let sol = solve_care(&s(a), &s(1.0), &s(1.0)).expect("scalar Riccati");
        worst_closed = worst_closed.max((sol.p[(0, 0)] - p).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_res = 0.0f64;
    let mut worst_abs = f64::NEG_INFINITY;
    let mut count = 0;
    while count < 50 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=2);
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let b = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        if !is_controllable(&a, &b) {
            continue;
        }
        count += 1;
        let q = Matrix::identity(n, n);
        let p = solve_care(&a, &b, &q).expect("Riccati").p;
        let r = a.transpose() * &p + &p * &a - &p * &b * b.transpose() * &p + &q;
        worst_res = worst_res.max(r.norm());
        worst_abs = worst_abs.max(spectral_abscissa(&(&a - &b * b.transpose() * &p)).unwrap());
    }
    rep.line(
        5,
        "Riccati correctness",
        worst_closed <= 1e-9 && worst_res <= 1e-9 && worst_abs < 0.0,
        format!("closed-form error {worst_closed:.2e}; 50 random: residual {worst_res:.2e}, max abscissa {worst_abs:.3e}"),
    );
}

fn criterion6(rep: &mut Report, designs: &Designs) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut runs = 0;
    let mut fails = Vec::new();
    let mut worst = 0.0f64;
    for (name, net, _, d) in &designs.items {
        let n: usize = net.subsystems.iter().map(|s| s.states()).sum();
        for _ in 0..10 {
            let x0 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let e0 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            for e in [Vector::zeros(n), e0] {
                let tr = simulate_closed_loop(net, &d.gains, &x0, &e, 10.0, 1e-3).expect("simulation");
                let r = verify_decay(&tr, &d.certificates, net.beta_min());
                runs += 1;
                worst = worst.max(r.state_ratio.or(r.error_ratio).unwrap_or(0.0));
                if !r.pass {
                    fails.push(format!("{name}: {r:?}"));
                }
            }
        }
    }
    rep.line(
        6,
        "decay audit",
        fails.is_empty(),
        if fails.is_empty() { format!("{runs} simulations, worst step ratio {worst:.9}") } else { fails.join("; ") },
    );
}

fn criterion7(rep: &mut Report) {
    let s = |v: f64| Matrix::from_element(1, 1, v);
    let unstable =
        PlantNetwork { subsystems: vec![Subsystem::new("p", s(1.0), s(1.0), s(1.0))], couplings: vec![], beta: vec![0.0] };
    let bounds = GainBounds::uniform(vec![0.0], vec![0.0], 0.0, 0.0);
    let first = match relax_and_threshold(&unstable, &bounds, Variant::Linear, &SparsifyOptions::default()) {
        Err(SparsifyError::NoSolution { history }) => history.iterations.len() == 1,
        _ => false,
    };
    let lemma = match check_lemma1(&unstable, &GainSet::zero(&unstable), &SolverOptions::default()) {
        Ok(o) => o.certified().is_none(),
        Err(_) => false,
    };
    rep.line(
        7,
        "negative controls",
        first && lemma,
        format!("no solution at first iteration: {first}; zero gains rejected: {lemma}"),
    );
}

fn criterion8(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut feasible = 0;
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    let solver = SolverOptions::default();
    for seed in 0..40u64 {
        let (net, bounds) = common::random_network(100 + seed, 2, rng.random_range(0.5..6.0), 30.0, 30.0);
        let pattern = LinkPattern::from_links(
            net.len(),
            candidate_links(&net, CandidateScope::All).into_iter().filter(|_| rng.random_bool(0.5)),
        );
        let prog = build_theorem1_program(&net, &bounds, &pattern, &SynthesisOptions::default())
            .expect("program")
            .problem;
        let rep = solve_feasibility_with(&prog, &solver).expect("solve");
        if rep.status != SolveStatus::StrictlyFeasible {
            continue;
        }
        feasible += 1;
        let lam = evaluate_constraints(&prog, &rep.x).expect("evaluate");
        for (c, l) in prog.constraints.iter().zip(&lam) {
            let slack = l - c.margin(solver.eps_feas);
            worst = worst.min(slack);
            if slack < -1e-12 {
                bad += 1;
            }
        }
    }
    rep.line(
        8,
        "solver soundness",
        bad == 0 && feasible > 0,
        format!("{feasible} strictly feasible reports audited, worst slack over margin {worst:.3e}"),
    );
}

fn main() {
    let mut rep = Report { failures: 0, total: 0 };
    let mut designs = Designs { items: Vec::new() };
    let db = criterion1(&mut rep, &mut designs);
    criterion2(&mut rep, &db);
    let (seeds, pairs) = random_instances(&mut designs);
    criterion3(&mut rep, &designs);
    criterion4(&mut rep, &pairs, seeds);
    criterion5(&mut rep);
    criterion6(&mut rep, &designs);
    criterion7(&mut rep);
    criterion8(&mut rep);
    println!("acceptance: {}/{} criteria passed", rep.total - rep.failures, rep.total);
}
