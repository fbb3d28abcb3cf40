//! Riccati-based margins, the decentralization test with its gain lower
//! bounds, and the shortcut for acyclic coupling graphs.

use thiserror::Error;

use crate::lmi::{
    eig_bound_as_lmi, solve_feasibility_with, solve_min_linear, AffineLmi, LmiError, MatExpr, SdpProblem, SolveStatus,
    SolverOptions, VarId,
};
use crate::model::{assemble_block_matrices, detect_poset, require_valid, ModelError, PlantNetwork};
use crate::numerics::{
    block_diag, rank, sigma_max, spd_inverse, spd_solve, spectral_abscissa, stable_invariant_subspace, solve_lyapunov,
    sym_eig_extremes, Matrix, NumericsError,
};
use crate::synthesis::{check_lemma1_from, GainSet, Lemma1Outcome, SynthesisError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecentralizedError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),
    #[error("decentralization not established: {0}")]
    NotEstablished(String),
    #[error("coupling graph has a directed cycle")]
    NotPoset,
}

/// Stabilizing solution of `AᵀP + PA − PBBᵀP + Q = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    pub p: Matrix,
    pub q: Matrix,
    /// `‖AᵀP + PA − PBBᵀP + Q‖ / (1 + ‖P‖²‖BBᵀ‖)`.
    pub residual: f64,
}

fn care_residual(a: &Matrix, g: &Matrix, q: &Matrix, p: &Matrix) -> f64 {
    let r = a.transpose() * p + p * a - p * g * p + q;
    sigma_max(&r) / (1.0 + sigma_max(p).powi(2) * sigma_max(g))
}

/// Hamiltonian stable-subspace solve, followed by Newton–Kleinman
/// refinement while it lowers the residual.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix) -> Result<CareSolution, DecentralizedError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) {
        return Err(NumericsError::Dimension("CARE operands".into()).into());
    }
    let g = b * b.transpose();
    let mut ham = Matrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&g));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let basis = stable_invariant_subspace(&ham, n).map_err(|e| DecentralizedError::NoStabilizingSolution(e.to_string()))?;
    let u1 = basis.rows(0, n).into_owned();
    let u2 = basis.rows(n, n).into_owned();
    let u1t_inv = u1
        .transpose()
        .lu()
        .solve(&u2.transpose())
        .ok_or_else(|| DecentralizedError::NoStabilizingSolution("singular stable basis".into()))?;
    // P = U₂ U₁⁻¹  ⇔  Pᵀ = U₁⁻ᵀ U₂ᵀ
    let mut p = u1t_inv.transpose();
    p = (&p + p.transpose()) * 0.5;
    let raw = |p: &Matrix| a.transpose() * p + p * a - p * &g * p + q;
    let mut r = raw(&p);
    let mut best = r.norm();
    for _ in 0..20 {
        if best <= 1e-15 * (1.0 + p.norm()) {
            break;
        }
        // Newton correction: (A − GP)ᵀΔ + Δ(A − GP) + R(P) = 0
        let ak = a - &g * &p;
        let Ok(delta) = solve_lyapunov(&ak, &r) else { break };
        let next = &p + delta;
        let next = (&next + next.transpose()) * 0.5;
        let rn = raw(&next);
        if rn.norm() >= best {
            break;
        }
        best = rn.norm();
        p = next;
        r = rn;
    }
    let res = care_residual(a, &g, q, &p);
    if !(res <= 1e-9) {
        return Err(DecentralizedError::NoStabilizingSolution(format!("residual {res:.3e}")));
    }
    let (lo, _) = sym_eig_extremes(&p)?;
    if lo <= 0.0 {
        return Err(DecentralizedError::NoStabilizingSolution("solution is not positive definite".into()));
    }
    Ok(CareSolution { p, q: q.clone(), residual: res })
}

/// Dual equation `ẐAᵀ + AẐ − ẐCᵀCẐ + Q̂ = 0`, solved by transposition.
pub fn solve_dual_care(a: &Matrix, c: &Matrix, q_hat: &Matrix) -> Result<CareSolution, DecentralizedError> {
    solve_care(&a.transpose(), &c.transpose(), q_hat)
}

/// Riccati-based margins with the gains used in their derivation.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Margins {
    /// `λ_min(Q)/(2λ_max(P)) − β_max`.
    pub controller_margin: f64,
    /// `λ_min(Q̂)/(2λ_max(Ẑ)) − β_max`.
    pub observer_margin: f64,
    pub p: Vec<Matrix>,
    pub z_hat: Vec<Matrix>,
    /// `K_i = −½ B_iᵀ P_i`.
    pub k: Vec<Matrix>,
    /// `M_i = −½ Ẑ_i C_iᵀ`.
    pub m: Vec<Matrix>,
}

impl Theorem2Margins {
    pub fn controller_vacuous(&self) -> bool {
        self.controller_margin <= 0.0
    }

    pub fn observer_vacuous(&self) -> bool {
        self.observer_margin <= 0.0
    }

    /// Whether `‖BL + H‖` and `‖OC + H‖` lie strictly below the margins.
    pub fn certifies(&self, net: &PlantNetwork, coupling: &GainSet) -> (bool, bool) {
        let sys = assemble_block_matrices(net);
        let mut l_only = coupling.clone();
        for k in l_only.k.iter_mut().chain(l_only.m.iter_mut()) {
            k.fill(0.0);
        }
        let bl = &sys.b * l_only.controller_matrix(&sys) + &sys.h;
        let oc = l_only.observer_matrix(&sys) * &sys.c + &sys.h;
        (sigma_max(&bl) < self.controller_margin, sigma_max(&oc) < self.observer_margin)
    }
}

/// Blockwise Riccati solves with `Q_i`, `Q̂_i` (identity when `None`).
pub fn theorem2_margins(
    net: &PlantNetwork,
    q: Option<&[Matrix]>,
    q_hat: Option<&[Matrix]>,
) -> Result<Theorem2Margins, DecentralizedError> {
    require_valid(net)?;
    let eye = |i: usize| Matrix::identity(net.subsystems[i].states(), net.subsystems[i].states());
    let (mut p, mut z_hat, mut k, mut m) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut qmin, mut qhmin, mut pmax, mut zmax) = (f64::INFINITY, f64::INFINITY, 0.0f64, 0.0f64);
    for (i, s) in net.subsystems.iter().enumerate() {
        let qi = q.map_or_else(|| eye(i), |q| q[i].clone());
        let qhi = q_hat.map_or_else(|| eye(i), |q| q[i].clone());
        let cp = solve_care(&s.a, &s.b, &qi)?;
        let cz = solve_dual_care(&s.a, &s.c, &qhi)?;
        qmin = qmin.min(sym_eig_extremes(&qi)?.0);
        qhmin = qhmin.min(sym_eig_extremes(&qhi)?.0);
        pmax = pmax.max(sym_eig_extremes(&cp.p)?.1);
        zmax = zmax.max(sym_eig_extremes(&cz.p)?.1);
        k.push(s.b.transpose() * &cp.p * -0.5);
        m.push(&cz.p * s.c.transpose() * -0.5);
        p.push(cp.p);
        z_hat.push(cz.p);
    }
    let bmax = net.beta_max();
    Ok(Theorem2Margins {
        controller_margin: qmin / (2.0 * pmax) - bmax,
        observer_margin: qhmin / (2.0 * zmax) - bmax,
        p,
        z_hat,
        k,
        m,
    })
}

/// Status of the two disjunctive premises of the decentralization test.
#[derive(Debug, Clone, PartialEq)]
pub struct PremiseReport {
    pub bbt_nonsingular: bool,
    pub ctc_nonsingular: bool,
    /// `‖H‖` (induced 2-norm of the assembled coupling matrix).
    pub h_norm: f64,
    pub controller_margin: f64,
    pub observer_margin: f64,
}

impl PremiseReport {
    pub fn controller_branch(&self) -> bool {
        self.bbt_nonsingular || self.h_norm < self.controller_margin
    }

    pub fn observer_branch(&self) -> bool {
        self.ctc_nonsingular || self.h_norm < self.observer_margin
    }

    pub fn holds(&self) -> bool {
        self.controller_branch() && self.observer_branch()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsSource {
    /// Program solved with the actual coupling.
    Coupled,
    /// Program solved with the coupling removed (acyclic graph).
    Poset,
}

/// Lower gain bounds for decentralized control with the certifying gains.
#[derive(Debug, Clone, PartialEq)]
pub struct DecentralizedBounds {
    pub kappa_lower: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub z: Vec<Matrix>,
    pub p_hat: Vec<Matrix>,
    pub premises: PremiseReport,
    /// Some `λ_min` reached the cap; bounds are reported at the cap.
    pub capped: bool,
    pub gains: GainSet,
    pub source: BoundsSource,
}

impl DecentralizedBounds {
    /// Whether the budgets admit the decentralized gains (relative slack
    /// `1e-9`).
    pub fn admits(&self, kappa: &[f64], mu: &[f64]) -> bool {
        let ok = |b: &f64, lo: &f64| *b >= lo * (1.0 - 1e-9);
        kappa.iter().zip(&self.kappa_lower).all(|(b, lo)| ok(b, lo)) && mu.iter().zip(&self.mu_lower).all(|(b, lo)| ok(b, lo))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecentralizedOptions {
    /// Cap on each `λ_min(Z_i)`, `λ_min(P̂_i)`.
    pub rho: f64,
    pub solver: SolverOptions,
    /// Refuse to report bounds when the premises fail.
    pub require_premises: bool,
    pub q: Option<Vec<Matrix>>,
    pub q_hat: Option<Vec<Matrix>>,
}

impl Default for DecentralizedOptions {
    fn default() -> Self {
        DecentralizedOptions {
            rho: 1e4,
            solver: SolverOptions { gap_tol: 1e-9, max_newton: 8000, ..SolverOptions::default() },
            require_premises: false,
            q: None,
            q_hat: None,
        }
    }
}

fn premise_report(net: &PlantNetwork, opts: &DecentralizedOptions) -> Result<PremiseReport, DecentralizedError> {
    let sys = assemble_block_matrices(net);
    let n = sys.n();
    let margins = theorem2_margins(net, opts.q.as_deref(), opts.q_hat.as_deref());
    let (cm, om) = match &margins {
        Ok(m) => (m.controller_margin, m.observer_margin),
        Err(_) => (f64::NEG_INFINITY, f64::NEG_INFINITY),
    };
    Ok(PremiseReport {
        bbt_nonsingular: rank(&(&sys.b * sys.b.transpose())) == n,
        ctc_nonsingular: rank(&(sys.c.transpose() * &sys.c)) == n,
        h_norm: sigma_max(&sys.h),
        controller_margin: cm,
        observer_margin: om,
    })
}

/// Solves: maximize `Σ λ_min(Z_i) + λ_min(P̂_i)` subject to (D1)–(D4),
/// each `λ_min` capped at `rho`.
fn solve_bounds_program(
    net: &PlantNetwork,
    opts: &DecentralizedOptions,
) -> Result<Option<(Vec<Matrix>, Vec<Matrix>, bool)>, DecentralizedError> {
    let sys = assemble_block_matrices(net);
    let nd = &sys.state_dims;
    let ah = &sys.a + &sys.h;
    let mut beta = Matrix::zeros(sys.n(), sys.n());
    for (i, &b) in net.beta.iter().enumerate() {
        for k in 0..nd[i] {
            beta[(sys.state_offsets[i] + k, sys.state_offsets[i] + k)] = b;
        }
    }
    let mut p = SdpProblem::new();
    let mut zs = Vec::new();
    let mut ps = Vec::new();
    let mut ts: Vec<VarId> = Vec::new();
    for (i, &d) in nd.iter().enumerate() {
        let z = p.sym_matrix_var(&format!("Z{}", i + 1), d);
        p.set_initial(&z, &(Matrix::identity(d, d) * 1e-3));
        let ph = p.sym_matrix_var(&format!("Ph{}", i + 1), d);
        p.set_initial(&ph, &(Matrix::identity(d, d) * 1e-3));
        let tz = p.add_var(format!("tz{}", i + 1), Some(0.0), Some(opts.rho))?;
        let tp = p.add_var(format!("tp{}", i + 1), Some(0.0), Some(opts.rho))?;
        p.set_initial_scalar(tz, 5e-4);
        p.set_initial_scalar(tp, 5e-4);
        p.add_constraint(eig_bound_as_lmi(format!("eigZ:{}", i + 1), &z, &MatExpr::scalar(tz))?)?;
        p.add_constraint(eig_bound_as_lmi(format!("eigPh:{}", i + 1), &ph, &MatExpr::scalar(tp))?)?;
        p.add_constraint(AffineLmi::new(format!("D3:{}", i + 1), z.clone(), true)?)?;
        p.add_constraint(AffineLmi::new(format!("D4:{}", i + 1), ph.clone(), true)?)?;
        let cap = MatExpr::constant(Matrix::identity(d, d) * opts.rho);
        p.add_constraint(AffineLmi::new(format!("capZ:{}", i + 1), cap.clone() - z.clone(), false)?)?;
        p.add_constraint(AffineLmi::new(format!("capPh:{}", i + 1), cap - ph.clone(), false)?)?;
        zs.push(z);
        ps.push(ph);
        ts.extend([tz, tp]);
    }
    let embed = |blocks: &[MatExpr]| {
        let n = sys.n();
        blocks
            .iter()
            .enumerate()
            .fold(MatExpr::zeros(n, n), |acc, (i, b)| acc + b.embed(sys.state_offsets[i], sys.state_offsets[i], n, n))
    };
    let zb = embed(&zs);
    let pb = embed(&ps);
    let d1 = (&ah * &zb).plus_transpose() + (&beta * &zb).scale(2.0) - MatExpr::constant(&sys.b * sys.b.transpose());
    let d2 = (&pb * &ah).plus_transpose() + (&beta * &pb).scale(2.0) - MatExpr::constant(sys.c.transpose() * &sys.c);
    p.add_constraint(AffineLmi::new("D1", -d1, true)?)?;
    p.add_constraint(AffineLmi::new("D2", -d2, true)?)?;

    let feas = solve_feasibility_with(&p, &SolverOptions { center: false, ..opts.solver.clone() })?;
    if !feas.is_feasible() {
        return Ok(None);
    }
    p.set_objective(ts.iter().map(|v| (*v, -1.0)).collect())?;
    let rep = solve_min_linear(&p, &feas.x, &opts.solver)?;
    let x = match rep.status {
        SolveStatus::StrictlyFeasible | SolveStatus::Indeterminate if rep.margins.len() == p.constraints.len() => rep.x,
        _ => feas.x,
    };
    let capped = ts.iter().any(|v| x[v.0] >= opts.rho * (1.0 - 1e-6));
    Ok(Some((zs.iter().map(|e| e.eval(&x)).collect(), ps.iter().map(|e| e.eval(&x)).collect(), capped)))
}

fn bounds_from(
    net: &PlantNetwork,
    z: Vec<Matrix>,
    p_hat: Vec<Matrix>,
    capped: bool,
    premises: PremiseReport,
    source: BoundsSource,
) -> Result<DecentralizedBounds, DecentralizedError> {
    let mut k = Vec::new();
    let mut m = Vec::new();
    for (i, s) in net.subsystems.iter().enumerate() {
        // K_i = −½ B_iᵀ Z_i⁻¹ = −½ (Z_i⁻¹ B_i)ᵀ
        k.push(spd_solve(&z[i], &s.b)?.transpose() * -0.5);
        m.push(spd_solve(&p_hat[i], &s.c.transpose())? * -0.5);
    }
    Ok(DecentralizedBounds {
        kappa_lower: k.iter().map(sigma_max).collect(),
        mu_lower: m.iter().map(sigma_max).collect(),
        z,
        p_hat,
        premises,
        capped,
        gains: GainSet::decentralized(k, m),
        source,
    })
}

/// Decentralization bounds `κ̲_i = ½‖B_iᵀZ_i⁻¹‖`, `μ̲_i = ½‖P̂_i⁻¹C_iᵀ‖`.
///
/// The outcome is decided by strict feasibility of the bounds program; the
/// premise branches are reported and enforced only with `require_premises`.
pub fn theorem3_bounds(net: &PlantNetwork, opts: &DecentralizedOptions) -> Result<DecentralizedBounds, DecentralizedError> {
    require_valid(net)?;
    let premises = premise_report(net, opts)?;
    if opts.require_premises && !premises.holds() {
        return Err(DecentralizedError::NotEstablished(format!(
            "premises fail: BBᵀ nonsingular {}, CᵀC nonsingular {}, ‖H‖ = {:.4} against margins {:.4} / {:.4}",
            premises.bbt_nonsingular, premises.ctc_nonsingular, premises.h_norm, premises.controller_margin, premises.observer_margin
        )));
    }
    match solve_bounds_program(net, opts)? {
        Some((z, p_hat, capped)) => bounds_from(net, z, p_hat, capped, premises, BoundsSource::Coupled),
        None => Err(DecentralizedError::NotEstablished("bounds program is not strictly feasible".into())),
    }
}

/// Bounds for an acyclic coupling graph: the program with `H = 0`.
pub fn corollary1_bounds(net: &PlantNetwork, opts: &DecentralizedOptions) -> Result<DecentralizedBounds, DecentralizedError> {
    require_valid(net)?;
    if detect_poset(net).is_none() {
        return Err(DecentralizedError::NotPoset);
    }
    let premises = premise_report(net, opts)?;
    let local = net.decoupled();
    match solve_bounds_program(&local, opts)? {
        Some((z, p_hat, capped)) => bounds_from(net, z, p_hat, capped, premises, BoundsSource::Poset),
        None => Err(DecentralizedError::NotEstablished("local bounds program is not strictly feasible".into())),
    }
}

/// Certifies the decentralized gains of `bounds` on `net` (no coupling
/// gains), starting the certificate search at `P = Z⁻¹`, `P̂`.
pub fn certify_decentralized(
    net: &PlantNetwork,
    bounds: &DecentralizedBounds,
    opts: &SolverOptions,
) -> Result<Lemma1Outcome, DecentralizedError> {
    let p: Vec<Matrix> = bounds.z.iter().map(spd_inverse).collect::<Result<_, _>>()?;
    Ok(check_lemma1_from(net, &bounds.gains, Some((&p, &bounds.p_hat)), opts)?)
}

/// Spectral abscissae of `A + H + BK` and `A + H + MC` for local gains.
pub fn local_closed_loop_abscissae(net: &PlantNetwork, gains: &GainSet) -> Result<(f64, f64), DecentralizedError> {
    let sys = assemble_block_matrices(net);
    let ah = &sys.a + &sys.h;
    let ax = &ah + &sys.b * block_diag(&gains.k);
    let ae = &ah + block_diag(&gains.m) * &sys.c;
    Ok((spectral_abscissa(&ax)?, spectral_abscissa(&ae)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_pendulum_network, Coupling, PendulumParams, Subsystem};

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_care_closed_forms() {
        // −p² + 2ap + 1 = 0 → p = a + √(a² + 1)
        for (a, want) in [(0.0, 1.0), (1.0, 1.0 + 2f64.sqrt()), (-1.0, 2f64.sqrt() - 1.0)] {
            let sol = solve_care(&s(a), &s(1.0), &s(1.0)).unwrap();
            assert!((sol.p[(0, 0)] - want).abs() < 1e-9, "a={a}: {}", sol.p[(0, 0)]);
        }
    }

    #[test]
    fn care_rejects_axis_eigenvalues() {
        // a = 0, b = 0: Hamiltonian eigenvalues ±1 with q=1 are fine, but
        // a = 0, q = 0 puts them on the axis.
        assert!(solve_care(&s(0.0), &s(1.0), &s(0.0)).is_err());
    }

    fn decoupled_integrators() -> PlantNetwork {
        PlantNetwork {
            subsystems: (0..2).map(|k| Subsystem::new(format!("s{k}"), s(0.0), s(1.0), s(1.0))).collect(),
            couplings: vec![],
            beta: vec![0.0, 0.0],
        }
    }

    #[test]
    fn theorem2_integrators() {
        let net = decoupled_integrators();
        let m = theorem2_margins(&net, None, None).unwrap();
        assert!((m.controller_margin - 0.5).abs() < 1e-12);
        assert!((m.observer_margin - 0.5).abs() < 1e-12);
        let mut coupled = net.clone();
        coupled.couplings.push(Coupling { from: 1, to: 0, h: s(0.4) });
        let zero = GainSet::zero(&coupled);
        assert_eq!(m.certifies(&coupled, &zero), (true, true));
        let mut strong = net.clone();
        strong.beta = vec![0.5, 0.0];
        let m = theorem2_margins(&strong, None, None).unwrap();
        assert!(m.controller_vacuous() && m.controller_margin.abs() < 1e-12);
    }

    #[test]
    fn pendulum_bounds_and_poset() {
        let (net, _) = build_pendulum_network(&PendulumParams::three_cart_benchmark());
        assert_eq!(corollary1_bounds(&net, &DecentralizedOptions::default()), Err(DecentralizedError::NotPoset));
        let b = theorem3_bounds(&net, &DecentralizedOptions::default()).unwrap();
        assert!(!b.premises.holds());
        for (k, g) in b.kappa_lower.iter().zip(&b.gains.k) {
            assert!((sigma_max(g) - k).abs() < 1e-12);
        }
    }
}
