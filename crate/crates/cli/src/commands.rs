//! Subcommand bodies. Each returns the process exit code; errors bubbling
//! out as `Err` are input errors.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncs_core::decentralized::{
    certify_decentralized, corollary1_bounds, theorem3_bounds, BoundsSource, DecentralizedError, DecentralizedOptions,
};
use ncs_core::lmi::SolverOptions;
use ncs_core::model::{
    assemble_block_matrices, build_pendulum_network, candidate_links, detect_poset, require_valid, CandidateScope,
    GainBounds, Link, PendulumParams, PlantNetwork,
};
use ncs_core::numerics::{block_diag, spectral_abscissa, sym_eig_extremes, Matrix, Vector};
use ncs_core::simulate::{simulate_closed_loop, verify_decay, Trajectory};
use ncs_core::sparsify::{exhaustive_design, relax_and_threshold, DesignResult, SparsifyError, SparsifyOptions, Variant};
use ncs_core::synthesis::{check_lemma1_from, closed_loop_matrices, Certificates, Lemma1Outcome};

use crate::files::{DesignFile, ModelFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NO_SOLUTION: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_NOT_ESTABLISHED: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Linear,
    Binary,
    Exhaustive,
}

impl Method {
    pub fn run(self, net: &PlantNetwork, bounds: &GainBounds, opts: &SparsifyOptions) -> Result<DesignResult, SparsifyError> {
        match self {
            Method::Linear => relax_and_threshold(net, bounds, Variant::Linear, opts),
            Method::Binary => relax_and_threshold(net, bounds, Variant::Binary, opts),
            Method::Exhaustive => exhaustive_design(net, bounds, opts),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::Binary => "binary",
            Method::Exhaustive => "exhaustive",
        }
    }
}

/// Six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn pattern_table(order: &[Link], indicators: &[u8]) -> String {
    let head: Vec<String> = order.iter().map(|l| format!("{:>4}", l.to_string())).collect();
    let row: Vec<String> = indicators.iter().map(|v| format!("{v:>4}")).collect();
    format!("{}\n{}", head.join(" "), row.join(" "))
}

pub fn design(model: &Path, method: Method, out: &Path) -> Result<i32> {
    let m = ModelFile::load(model)?.resolve()?;
    let opts = SparsifyOptions { scope: m.scope, ..SparsifyOptions::default() };
    let result = match method.run(&m.net, &m.bounds, &opts) {
        Ok(r) => r,
        Err(SparsifyError::NoSolution { history }) => {
            eprintln!("no solution: the design program is infeasible with every candidate link present");
            for note in &history.notes {
                eprintln!("  {note}");
            }
            return Ok(EXIT_NO_SOLUTION);
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::write(out, DesignFile::from_result(&result).to_json()).with_context(|| format!("writing {}", out.display()))?;
    let order = candidate_links(&m.net, m.scope);
    println!("method: {}", result.history.method);
    if !order.is_empty() {
        println!("{}", pattern_table(&order, &result.indicators(&order)));
    }
    println!("link count: {}", result.link_count);
    if result.history.decentralized_shortcut {
        println!("decentralized gains suffice within the budgets");
    }
    for w in &result.gains.warnings {
        println!("warning: {w}");
    }
    println!("design written to {}", out.display());
    Ok(EXIT_OK)
}

/// `λ_max` of `AᵀP + PA + 2βP` per certificate; negative when the stored
/// certificate is valid.
fn stored_certificate_margin(net: &PlantNetwork, a: &Matrix, blocks: &[Matrix]) -> Result<(f64, f64)> {
    let sys = assemble_block_matrices(net);
    let p = block_diag(blocks);
    let beta = block_diag(
        &sys.state_dims.iter().zip(&net.beta).map(|(&d, &b)| Matrix::identity(d, d) * b).collect::<Vec<_>>(),
    );
    let pa = &p * a;
    let s = &pa + pa.transpose() + &beta * &p * 2.0;
    let (_, hi) = sym_eig_extremes(&((&s + s.transpose()) * 0.5))?;
    let (lo, _) = sym_eig_extremes(&((&p + p.transpose()) * 0.5))?;
    Ok((hi, lo))
}

pub fn check(model: &Path, design: &Path) -> Result<i32> {
    let m = ModelFile::load(model)?.resolve()?;
    let d = DesignFile::load(design)?;
    let (pattern, gains, stored) = d.resolve(&m.net)?;
    let mut all = true;
    let mut line = |name: &str, ok: bool, detail: String| {
        all &= ok;
        println!("[{}] {name}: {detail}", pass(ok));
    };

    let used = gains.used_links();
    let consistent = gains.consistent_with(&pattern) && d.link_count == pattern.link_count();
    line(
        "pattern",
        consistent,
        format!("{} links in pattern, coupling gains on {:?}", pattern.link_count(), used.iter().map(Link::to_string).collect::<Vec<_>>()),
    );

    let cl = closed_loop_matrices(&m.net, &gains);
    let limit = -m.net.beta_min() + 1e-8;
    let ax = spectral_abscissa(&cl.a_x)?;
    let ae = spectral_abscissa(&cl.a_e)?;
    line(
        "spectral abscissa",
        ax < limit && ae < limit,
        format!("state {} / error {} against {}", sig6(ax), sig6(ae), sig6(limit)),
    );

    let (sx, px) = stored_certificate_margin(&m.net, &cl.a_x, &stored.p)?;
    let (se, pe) = stored_certificate_margin(&m.net, &cl.a_e, &stored.p_hat)?;
    line(
        "stored certificate",
        sx < 0.0 && se < 0.0 && px > 0.0 && pe > 0.0,
        format!("lambda_max of the Lyapunov forms {} / {}, lambda_min of P, P_hat {} / {}", sig6(sx), sig6(se), sig6(px), sig6(pe)),
    );

    let outcome = check_lemma1_from(&m.net, &gains, Some((&stored.p, &stored.p_hat)), &SolverOptions::default())?;
    match outcome {
        Lemma1Outcome::Certified(c) => {
            line("certificate", true, format!("re-solved with margins {} / {}", sig6(c.margins[0]), sig6(c.margins[1])))
        }
        Lemma1Outcome::Infeasible { side, message } | Lemma1Outcome::NotCertified { side, message } => {
            line("certificate", false, format!("{side} side: {message}"))
        }
    }

    let audit = gains.audit(&m.bounds, 1e-6);
    line("gain bounds", audit.is_empty(), if audit.is_empty() { "all gains within budgets".into() } else { audit.join("; ") });

    Ok(if all { EXIT_OK } else { EXIT_INPUT })
}

/// `random` (uniform in [−1, 1]), `zeros`, or a comma-separated list.
pub fn initial_condition(spec: &str, n: usize, rng: &mut ChaCha8Rng) -> Result<Vector> {
    match spec.trim() {
        "random" => Ok(Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))),
        "zeros" => Ok(Vector::zeros(n)),
        list => {
            let values = list
                .split(',')
                .map(|s| s.trim().parse::<f64>().with_context(|| format!("initial condition entry {s:?}")))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != n {
                bail!("initial condition has {} entries, the network has {n} states", values.len());
            }
            Ok(Vector::from_vec(values))
        }
    }
}

pub struct SimulateArgs<'a> {
    pub model: &'a Path,
    pub design: &'a Path,
    pub x0: &'a str,
    pub e0: &'a str,
    pub horizon: f64,
    pub dt: f64,
    pub csv: Option<&'a Path>,
    pub seed: u64,
}

pub fn simulate(args: SimulateArgs) -> Result<i32> {
    let m = ModelFile::load(args.model)?.resolve()?;
    let (_, gains, certs) = DesignFile::load(args.design)?.resolve(&m.net)?;
    let n: usize = m.net.subsystems.iter().map(|s| s.states()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x0 = initial_condition(args.x0, n, &mut rng).context("--x0")?;
    let e0 = initial_condition(args.e0, n, &mut rng).context("--e0")?;
    let traj = simulate_closed_loop(&m.net, &gains, &x0, &e0, args.horizon, args.dt)?;
    if let Some(path) = args.csv {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        traj.write_csv(std::io::BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(step) = traj.diverged_at {
        eprintln!("diverged at step {step} (t = {})", sig6(step as f64 * args.dt));
        return Ok(EXIT_DIVERGED);
    }
    report_decay(&m.net, &certs, &traj);
    Ok(EXIT_OK)
}

fn report_decay(net: &PlantNetwork, certs: &Certificates, traj: &Trajectory) {
    let rep = verify_decay(traj, certs, net.beta_min());
    println!("samples: {}", traj.len());
    match rep.state_ratio {
        Some(r) => println!("state decay ratio (x'Px): {}", sig6(r)),
        None => println!("state decay ratio (x'Px): not audited, estimation error is nonzero"),
    }
    match rep.error_ratio {
        Some(r) => println!("error decay ratio (e'P_hat e): {}", sig6(r)),
        None => println!("error decay ratio (e'P_hat e): not audited, estimation error is zero"),
    }
    println!("decay at rate {} within {:.1e}: {}", sig6(net.beta_min()), rep.tolerance, pass(rep.pass));
}

pub fn decentralize(model: &Path) -> Result<i32> {
    let m = ModelFile::load(model)?.resolve()?;
    require_valid(&m.net)?;
    let opts = DecentralizedOptions::default();
    let result = match detect_poset(&m.net) {
        Some(order) => {
            let order: Vec<String> = order.iter().map(|i| (i + 1).to_string()).collect();
            println!("coupling graph is acyclic (order {}); solving the decoupled program", order.join(" "));
            corollary1_bounds(&m.net, &opts)
        }
        None => theorem3_bounds(&m.net, &opts),
    };
    let bounds = match result {
        Ok(b) => b,
        Err(DecentralizedError::NotEstablished(msg)) => {
            println!("decentralized control not established: {msg}");
            return Ok(EXIT_NOT_ESTABLISHED);
        }
        Err(e) => return Err(e.into()),
    };
    let p = &bounds.premises;
    println!("premises:");
    println!("  B B' nonsingular: {}", p.bbt_nonsingular);
    println!("  C'C nonsingular: {}", p.ctc_nonsingular);
    println!("  coupling norm: {}", sig6(p.h_norm));
    println!("  controller margin: {}", sig6(p.controller_margin));
    println!("  observer margin: {}", sig6(p.observer_margin));
    println!("  controller branch: {}", p.controller_branch());
    println!("  observer branch: {}", p.observer_branch());
    if bounds.source == BoundsSource::Poset {
        println!("bounds from the decoupled program");
    }
    if bounds.capped {
        println!("warning: the certificate caps are active, bounds may be conservative");
    }
    println!("{:>4} {:>14} {:>14} {:>14} {:>14}", "i", "kappa_lower", "mu_lower", "kappa", "mu");
    for i in 0..m.net.len() {
        println!(
            "{:>4} {:>14} {:>14} {:>14} {:>14}",
            i + 1,
            sig6(bounds.kappa_lower[i]),
            sig6(bounds.mu_lower[i]),
            sig6(m.bounds.kappa[i]),
            sig6(m.bounds.mu[i])
        );
    }
    println!("within budgets: {}", bounds.admits(&m.bounds.kappa, &m.bounds.mu));
    let certified = certify_decentralized(&m.net, &bounds, &SolverOptions::default())?.certified().is_some();
    println!("[{}] decentralized gains certified on the coupled network", pass(certified));
    Ok(EXIT_OK)
}

/// Patterns in candidate order `a12, a21, a13, a31, a23, a32`.
pub const TABLE1: [[u8; 6]; 3] = [[1, 1, 0, 0, 1, 1], [0, 0, 0, 0, 1, 1], [0, 0, 0, 0, 0, 0]];

pub fn pendulum_case_bounds(case: usize, net: &PlantNetwork) -> Result<GainBounds> {
    let (kappa, mu) = match case {
        1 => (vec![96.0, 106.0, 211.0], vec![27.0, 26.0, 28.0]),
        2 => (vec![135.0, 121.0, 232.0], vec![27.0, 28.0, 29.0]),
        3 => {
            let b = theorem3_bounds(net, &DecentralizedOptions::default())?;
            (b.kappa_lower, b.mu_lower)
        }
        _ => bail!("case {case} does not exist, choose from 1, 2, 3"),
    };
    Ok(GainBounds::uniform(kappa, mu, 30.0, 10.0))
}

pub fn bench_pendulum(cases: &[usize]) -> Result<i32> {
    let start = Instant::now();
    let (net, _) = build_pendulum_network(&PendulumParams::three_cart_benchmark());
    let order = candidate_links(&net, CandidateScope::All);
    let opts = SparsifyOptions::default();
    let header: Vec<String> = order.iter().map(|l| format!("{:>4}", l.to_string())).collect();
    println!("{:>5} {:>11} {} {:>6}  {}", "case", "method", header.join(" "), "links", "verdict");
    let mut mismatches = Vec::new();
    for &case in cases {
        let bounds = pendulum_case_bounds(case, &net)?;
        let want = TABLE1[case - 1];
        for method in [Method::Linear, Method::Binary, Method::Exhaustive] {
            let column = if method == Method::Exhaustive { "oracle" } else { "heuristic" };
            match method.run(&net, &bounds, &opts) {
                Ok(d) => {
                    let got = d.indicators(&order);
                    let ok = got == want;
                    let cells: Vec<String> = got.iter().map(|v| format!("{v:>4}")).collect();
                    println!(
                        "{case:>5} {:>11} {} {:>6}  {}",
                        method.name(),
                        cells.join(" "),
                        d.link_count,
                        if ok { "match" } else { "MISMATCH" }
                    );
                    if !ok {
                        mismatches.push(format!("case {case} {} ({column}): got {got:?}, expected {want:?}", method.name()));
                    }
                }
                Err(e) => {
                    println!("{case:>5} {:>11} error: {e}", method.name());
                    mismatches.push(format!("case {case} {} ({column}): {e}", method.name()));
                }
            }
        }
    }
    let expected: Vec<String> = cases
        .iter()
        .map(|&c| format!("case {c}: {}", TABLE1[c - 1].iter().map(u8::to_string).collect::<Vec<_>>().join(",")))
        .collect();
    println!("expected: {}", expected.join("; "));
    println!("elapsed: {} s", sig6(start.elapsed().as_secs_f64()));
    if mismatches.is_empty() {
        println!("all patterns match");
        Ok(EXIT_OK)
    } else {
        for m in &mismatches {
            println!("mismatch: {m}");
        }
        Ok(EXIT_MISMATCH)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(54.123456), "54.1235");
        assert_eq!(sig6(-0.5), "-0.500000");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(f64::INFINITY), "inf");
    }

    #[test]
    fn initial_condition_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(initial_condition("zeros", 2, &mut rng).unwrap(), Vector::zeros(2));
        assert_eq!(initial_condition("1, -2.5", 2, &mut rng).unwrap(), Vector::from_vec(vec![1.0, -2.5]));
        assert!(initial_condition("1", 2, &mut rng).is_err());
        let r = initial_condition("random", 3, &mut rng).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1.0));
        let again = initial_condition("random", 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r, again);
    }
}
