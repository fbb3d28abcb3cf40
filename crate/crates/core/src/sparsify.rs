//! Link minimization: relaxation with thresholding (linear and binary
//! variants) and the exhaustive minimum-cardinality oracle.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::decentralized::{theorem3_bounds, DecentralizedBounds, DecentralizedOptions};
use crate::lmi::{evaluate_constraints, solve_min_linear, SolveStatus, SolverOptions};
use crate::model::{candidate_links, require_valid, CandidateScope, GainBounds, Link, LinkPattern, PlantNetwork};
use crate::numerics::{spd_inverse, spectral_abscissa, Matrix};
use crate::synthesis::{
    build_relaxed_program, check_lemma1_from, closed_loop_matrices, recover_gains, solve_theorem1, Certificates,
    GainSet, Lemma1Outcome, SynthesisError, SynthesisOptions, Theorem1Solution,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparsifyError {
    #[error("no solution: the design program is infeasible with every candidate link present")]
    NoSolution { history: Box<History> },
    #[error("{count} candidate links exceed the exhaustive-search limit {limit}; restrict candidates or raise the limit")]
    TooManyLinks { count: usize, limit: usize },
    #[error("final design for pattern {pattern} failed certification: {message}")]
    Uncertified { pattern: String, message: String },
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Linear,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Feasible,
    Infeasible,
    Indeterminate,
}

impl From<SolveStatus> for StepStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::StrictlyFeasible => StepStatus::Feasible,
            SolveStatus::Infeasible => StepStatus::Infeasible,
            _ => StepStatus::Indeterminate,
        }
    }
}

/// Relaxed link indicators `α^(r) ∈ [0, 1]`, ordered by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedAlphas {
    pub values: Vec<(Link, f64)>,
}

impl RelaxedAlphas {
    pub fn get(&self, link: Link) -> Option<f64> {
        self.values.iter().find(|(l, _)| *l == link).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub pattern: String,
    pub link_count: usize,
    pub step2: StepStatus,
    pub relaxed: Option<RelaxedAlphas>,
    pub removed: Option<Link>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCheck {
    pub tau: f64,
    pub pattern: String,
    pub frozen_ok: bool,
    /// Status of the full re-solve, when the frozen check failed.
    pub resolved: Option<StepStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExhaustiveRecord {
    pub pattern: String,
    pub status: StepStatus,
}

/// Audit trail of one design run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub method: String,
    pub candidates: Vec<Link>,
    pub iterations: Vec<IterationRecord>,
    pub threshold_checks: Vec<ThresholdCheck>,
    pub exhaustive: Vec<ExhaustiveRecord>,
    pub tau: Option<f64>,
    pub step2_solves: usize,
    pub eigen_checks: usize,
    pub decentralized_shortcut: bool,
    pub notes: Vec<String>,
}

impl History {
    fn new(method: &str, candidates: Vec<Link>) -> Self {
        History {
            method: method.into(),
            candidates,
            iterations: Vec::new(),
            threshold_checks: Vec::new(),
            exhaustive: Vec::new(),
            tau: None,
            step2_solves: 0,
            eigen_checks: 0,
            decentralized_shortcut: false,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub pattern: LinkPattern,
    pub gains: GainSet,
    pub certificates: Certificates,
    pub link_count: usize,
    pub history: History,
    /// Design-program solution behind the gains (absent for the
    /// decentralized shortcut).
    pub solution: Option<Theorem1Solution>,
    /// Spectral abscissae of `A_x` and `A_e`.
    pub abscissae: (f64, f64),
    pub decentralized: Option<DecentralizedBounds>,
}

impl DesignResult {
    /// Pattern as 0/1 indicators in `order`.
    pub fn indicators(&self, order: &[Link]) -> Vec<u8> {
        self.pattern.indicators(order)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyOptions {
    pub synthesis: SynthesisOptions,
    /// Options for the relaxed link program.
    pub relax: SolverOptions,
    pub scope: CandidateScope,
    /// Relaxed values at or below this count as zero.
    pub zero_tol: f64,
    /// Relaxed values at or above this count as saturated at the ceiling.
    pub ceiling_tol: f64,
    /// Binary variant: re-solve the full program when the frozen check
    /// rejects a threshold.
    pub resolve_thresholds: bool,
    /// Try decentralized gains first when the budgets admit them.
    pub decentralized: Option<DecentralizedOptions>,
    /// Candidate-link limit for exhaustive search.
    pub max_links: usize,
}

impl Default for SparsifyOptions {
    fn default() -> Self {
        SparsifyOptions {
            synthesis: SynthesisOptions::default(),
            relax: SolverOptions { gap_tol: 1e-10, max_newton: 2000, ..SolverOptions::default() },
            scope: CandidateScope::All,
            zero_tol: 1e-9,
            ceiling_tol: 1e-6,
            resolve_thresholds: true,
            decentralized: Some(DecentralizedOptions::default()),
            max_links: 12,
        }
    }
}

fn label(p: &LinkPattern) -> String {
    p.to_string()
}

/// Whether (C1) and (C2) hold with their strictness margins at the frozen
/// matrices with `α` set to the indicator of `pattern`.
pub fn frozen_check(
    net: &PlantNetwork,
    frozen: &Theorem1Solution,
    pattern: &LinkPattern,
    eps: f64,
) -> Result<bool, SynthesisError> {
    let links: Vec<Link> = frozen.y.keys().copied().collect();
    let relaxed = build_relaxed_program(net, frozen, &links)?;
    let x: Vec<f64> = relaxed.alpha.iter().map(|(l, _)| if pattern.contains(*l) { 1.0 } else { 0.0 }).collect();
    let lam = evaluate_constraints(&relaxed.problem, &x)?;
    Ok(relaxed.problem.constraints.iter().zip(&lam).all(|(c, l)| *l >= c.margin(eps)))
}

/// Outcome of the threshold search.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    /// `None` when every relaxed value is zero.
    pub tau: Option<f64>,
    pub pattern: LinkPattern,
    pub checks: usize,
}

/// Binary search for the largest `τ` among the distinct relaxed values such
/// that `1_{α^(r) ≥ τ}` passes `feasible`. The smallest value is assumed
/// feasible (it keeps every link).
pub fn threshold_search(
    subsystems: usize,
    alphas: &RelaxedAlphas,
    zero_tol: f64,
    mut feasible: impl FnMut(&LinkPattern) -> bool,
) -> ThresholdOutcome {
    let snapped: Vec<(Link, f64)> =
        alphas.values.iter().map(|(l, v)| (*l, if *v <= zero_tol { 0.0 } else { *v })).collect();
    if snapped.iter().all(|(_, v)| *v == 0.0) {
        return ThresholdOutcome { tau: None, pattern: LinkPattern::empty(subsystems), checks: 0 };
    }
    let mut taus: Vec<f64> = snapped.iter().map(|(_, v)| *v).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let pattern_at =
        |tau: f64| LinkPattern::from_links(subsystems, snapped.iter().filter(|(_, v)| *v >= tau).map(|(l, _)| *l));
    let (mut lo, mut hi) = (0, taus.len() - 1);
    let mut checks = 0;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        checks += 1;
        if feasible(&pattern_at(taus[mid])) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    ThresholdOutcome { tau: Some(taus[lo]), pattern: pattern_at(taus[lo]), checks }
}

/// Certifies fixed gains: Lyapunov certificate plus closed-loop abscissae
/// below `−min β + 1e-8`.
pub fn certify_gains(
    net: &PlantNetwork,
    gains: &GainSet,
    hint: Option<(&[Matrix], &[Matrix])>,
    opts: &SolverOptions,
) -> Result<(Certificates, (f64, f64)), String> {
    let cl = closed_loop_matrices(net, gains);
    let ax = spectral_abscissa(&cl.a_x).map_err(|e| e.to_string())?;
    let ae = spectral_abscissa(&cl.a_e).map_err(|e| e.to_string())?;
    let limit = -net.beta_min() + 1e-8;
    if ax >= limit || ae >= limit {
        return Err(format!("spectral abscissae ({ax:.4e}, {ae:.4e}) not below {limit:.4e}"));
    }
    match check_lemma1_from(net, gains, hint, opts).map_err(|e| e.to_string())? {
        Lemma1Outcome::Certified(c) => Ok((c, (ax, ae))),
        Lemma1Outcome::Infeasible { side, message } | Lemma1Outcome::NotCertified { side, message } => {
            Err(format!("{side} side: {message}"))
        }
    }
}

fn finish(
    net: &PlantNetwork,
    pattern: LinkPattern,
    solution: Theorem1Solution,
    history: History,
    opts: &SparsifyOptions,
) -> Result<DesignResult, SparsifyError> {
    let gains = recover_gains(&solution, &pattern)?;
    let p: Vec<Matrix> = solution.z.iter().map(spd_inverse).collect::<Result<_, _>>().map_err(SynthesisError::from)?;
    let (certificates, abscissae) = certify_gains(net, &gains, Some((&p, &solution.p_hat)), &opts.synthesis.solver)
        .map_err(|message| SparsifyError::Uncertified { pattern: label(&pattern), message })?;
    Ok(DesignResult {
        link_count: pattern.link_count(),
        pattern,
        gains,
        certificates,
        history,
        solution: Some(solution),
        abscissae,
        decentralized: None,
    })
}

/// Decentralized gains when the decentralization bounds hold and fit the
/// budgets; `None` otherwise.
fn try_decentralized(
    net: &PlantNetwork,
    bounds: &GainBounds,
    history: &mut History,
    opts: &SparsifyOptions,
) -> Option<DesignResult> {
    let dopts = opts.decentralized.as_ref()?;
    let db = match theorem3_bounds(net, dopts) {
        Ok(db) => db,
        Err(e) => {
            history.notes.push(format!("decentralized bounds unavailable: {e}"));
            return None;
        }
    };
    if !db.admits(&bounds.kappa, &bounds.mu) {
        history.notes.push("decentralized bounds exceed the gain budgets".into());
        return None;
    }
    let p: Vec<Matrix> = db.z.iter().map(spd_inverse).collect::<Result<_, _>>().ok()?;
    match certify_gains(net, &db.gains, Some((&p, &db.p_hat)), &opts.synthesis.solver) {
        Ok((certificates, abscissae)) => {
            history.decentralized_shortcut = true;
            Some(DesignResult {
                pattern: LinkPattern::empty(net.len()),
                gains: db.gains.clone(),
                certificates,
                link_count: 0,
                history: history.clone(),
                solution: None,
                abscissae,
                decentralized: Some(db),
            })
        }
        Err(message) => {
            history.notes.push(format!("decentralized gains not certified: {message}"));
            None
        }
    }
}

fn relax(
    net: &PlantNetwork,
    frozen: &Theorem1Solution,
    links: &[Link],
    opts: &SparsifyOptions,
) -> Result<Option<RelaxedAlphas>, SparsifyError> {
    let prog = build_relaxed_program(net, frozen, links)?;
    let x0 = prog.problem.initial_point();
    let rep = solve_min_linear(&prog.problem, &x0, &SolverOptions { eps_feas: opts.synthesis.solver.eps_feas, ..opts.relax.clone() })
        .map_err(SynthesisError::from)?;
    let usable = matches!(rep.status, SolveStatus::StrictlyFeasible | SolveStatus::Indeterminate)
        && rep.margins.len() == prog.problem.constraints.len()
        && prog.problem.constraints.iter().zip(&rep.margins).all(|(c, m)| *m >= c.margin(opts.synthesis.solver.eps_feas) - 1e-12);
    if !usable {
        return Ok(None);
    }
    Ok(Some(RelaxedAlphas { values: prog.alpha.iter().map(|(l, v)| (*l, rep.x[v.0].clamp(0.0, 1.0))).collect() }))
}

/// Runs the relaxation-thresholding heuristic from the all-candidates
/// pattern.
pub fn relax_and_threshold(
    net: &PlantNetwork,
    bounds: &GainBounds,
    variant: Variant,
    opts: &SparsifyOptions,
) -> Result<DesignResult, SparsifyError> {
    require_valid(net).map_err(SynthesisError::from)?;
    let candidates = candidate_links(net, opts.scope);
    let method = match variant {
        Variant::Linear => "relax_threshold_linear",
        Variant::Binary => "relax_threshold_binary",
    };
    let mut history = History::new(method, candidates.clone());
    if let Some(r) = try_decentralized(net, bounds, &mut history, opts) {
        return Ok(r);
    }
    let n = net.len();
    let mut pattern = LinkPattern::from_links(n, candidates.iter().copied());
    let mut last: Option<(LinkPattern, Theorem1Solution)> = None;
    loop {
        let out = solve_theorem1(net, bounds, &pattern, &opts.synthesis)?;
        history.step2_solves += 1;
        let mut record = IterationRecord {
            pattern: label(&pattern),
            link_count: pattern.link_count(),
            step2: out.status().into(),
            relaxed: None,
            removed: None,
            note: None,
        };
        let Some(sol) = out.solution else {
            record.note = Some(out.report.message.clone());
            history.iterations.push(record);
            if last.is_none() {
                return Err(SparsifyError::NoSolution { history: Box::new(history) });
            }
            break;
        };
        last = Some((pattern.clone(), sol.clone()));
        let links: Vec<Link> = pattern.links().collect();
        if links.is_empty() {
            history.iterations.push(record);
            break;
        }
        let Some(alphas) = relax(net, &sol, &links, opts)? else {
            record.note = Some("relaxed program unsolved; keeping current pattern".into());
            history.iterations.push(record);
            break;
        };
        record.relaxed = Some(alphas.clone());
        if variant == Variant::Binary {
            history.iterations.push(record);
            let eps = opts.synthesis.solver.eps_feas;
            let mut solved: BTreeMap<String, Option<Theorem1Solution>> = BTreeMap::new();
            let mut err = None;
            let th = threshold_search(n, &alphas, opts.zero_tol, |p| {
                history.eigen_checks += 1;
                let frozen_ok = frozen_check(net, &sol, p, eps).unwrap_or(false);
                let mut check = ThresholdCheck { tau: 0.0, pattern: label(p), frozen_ok, resolved: None };
                let ok = frozen_ok
                    || opts.resolve_thresholds && {
                        match solve_theorem1(net, bounds, p, &opts.synthesis) {
                            Ok(o) => {
                                history.step2_solves += 1;
                                check.resolved = Some(o.status().into());
                                let ok = o.solution.is_some();
                                solved.insert(label(p), o.solution);
                                ok
                            }
                            Err(e) => {
                                err = Some(e);
                                false
                            }
                        }
                    };
                check.tau = alphas.values.iter().filter(|(l, _)| p.contains(*l)).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
                history.threshold_checks.push(check);
                ok
            });
            if let Some(e) = err {
                return Err(e.into());
            }
            history.tau = th.tau;
            let fin = match solved.remove(&label(&th.pattern)).flatten() {
                Some(s) => Some(s),
                None if th.pattern == pattern => Some(sol.clone()),
                None => {
                    let o = solve_theorem1(net, bounds, &th.pattern, &opts.synthesis)?;
                    history.step2_solves += 1;
                    o.solution
                }
            };
            return match fin {
                Some(s) => finish(net, th.pattern, s, history, opts),
                None => {
                    history.notes.push(format!("threshold pattern {} failed the full solve; keeping all links", th.pattern));
                    finish(net, pattern, sol, history, opts)
                }
            };
        }
        let nonzero: Vec<(Link, f64)> = alphas.values.iter().copied().filter(|(_, v)| *v > opts.zero_tol).collect();
        if nonzero.is_empty() {
            record.note = Some("all relaxed values are zero".into());
            history.iterations.push(record);
            pattern = LinkPattern::empty(n);
            continue;
        }
        // ties resolve to the lexicographically smallest (i, j)
        let (link, v) = nonzero
            .iter()
            .copied()
            .fold(None::<(Link, f64)>, |acc, (l, v)| match acc {
                Some((_, bv)) if bv <= v => acc,
                _ => Some((l, v)),
            })
            .expect("nonempty");
        if v >= 1.0 - opts.ceiling_tol {
            record.note = Some("every relaxed value is at the ceiling".into());
            history.iterations.push(record);
            break;
        }
        pattern.remove(link);
        record.removed = Some(link);
        history.iterations.push(record);
    }
    let (pattern, sol) = last.expect("first iteration feasible");
    finish(net, pattern, sol, history, opts)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + n - k) else { break };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    out
}

/// Minimum-cardinality pattern by enumeration in increasing size; ties go
/// to the lexicographically first set of candidate positions.
pub fn exhaustive_design(
    net: &PlantNetwork,
    bounds: &GainBounds,
    opts: &SparsifyOptions,
) -> Result<DesignResult, SparsifyError> {
    require_valid(net).map_err(SynthesisError::from)?;
    let candidates = candidate_links(net, opts.scope);
    if candidates.len() > opts.max_links {
        return Err(SparsifyError::TooManyLinks { count: candidates.len(), limit: opts.max_links });
    }
    let mut history = History::new("exhaustive", candidates.clone());
    if let Some(r) = try_decentralized(net, bounds, &mut history, opts) {
        return Ok(r);
    }
    // feasibility is monotone in the pattern, so an infeasible full pattern ends the search
    let full = LinkPattern::from_links(net.len(), candidates.iter().copied());
    let out = solve_theorem1(net, bounds, &full, &opts.synthesis)?;
    history.step2_solves += 1;
    history.exhaustive.push(ExhaustiveRecord { pattern: label(&full), status: out.status().into() });
    if out.solution.is_none() {
        return Err(SparsifyError::NoSolution { history: Box::new(history) });
    }
    for k in 0..=candidates.len() {
        for combo in combinations(candidates.len(), k) {
            let pattern = LinkPattern::from_links(net.len(), combo.iter().map(|&c| candidates[c]));
            let out = solve_theorem1(net, bounds, &pattern, &opts.synthesis)?;
            history.step2_solves += 1;
            history.exhaustive.push(ExhaustiveRecord { pattern: label(&pattern), status: out.status().into() });
            if let Some(sol) = out.solution {
                return finish(net, pattern, sol, history, opts);
            }
        }
    }
    Err(SparsifyError::NoSolution { history: Box::new(history) })
}
