//! Observer-based controller synthesis for a fixed link pattern: the
//! convexified design program, gain recovery, closed-loop assembly and the
//! block-diagonal Lyapunov certificate for fixed gains.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::lmi::{
    eig_bound_as_lmi, solve_feasibility_with, sv_bound_as_lmi, AffineLmi, LmiError, MatExpr, SdpProblem, SolveReport,
    SolveStatus, SolverOptions, VarId,
};
use crate::model::{assemble_block_matrices, BlockSystem, GainBounds, Link, LinkPattern, ModelError, PlantNetwork};
use crate::numerics::{lambda_min_sym_part, sigma_max, spd_solve, sym_eig_extremes, Matrix, NumericsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("dimension mismatch in {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    /// Upper cap `Z_i, P̂_i ⪯ ρI`; the lower normalization is `⪰ I`.
    pub rho: f64,
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { rho: 1e6, solver: SolverOptions { center: true, ..SolverOptions::default() } }
    }
}

/// Decision variables of the design program at a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Solution {
    pub z: Vec<Matrix>,
    pub w: Vec<Matrix>,
    pub y: BTreeMap<Link, Matrix>,
    pub p_hat: Vec<Matrix>,
    pub w_hat: Vec<Matrix>,
    pub y_hat: BTreeMap<Link, Matrix>,
    pub alpha: BTreeMap<Link, f64>,
}

impl Theorem1Solution {
    /// Every matrix variable multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &Vec<Matrix>| v.iter().map(|m| m * c).collect();
        let sm = |v: &BTreeMap<Link, Matrix>| v.iter().map(|(k, m)| (*k, m * c)).collect();
        Theorem1Solution {
            z: s(&self.z),
            w: s(&self.w),
            y: sm(&self.y),
            p_hat: s(&self.p_hat),
            w_hat: s(&self.w_hat),
            y_hat: sm(&self.y_hat),
            alpha: self.alpha.clone(),
        }
    }
}

/// The design program for one link pattern, with handles to its variables.
#[derive(Debug, Clone)]
pub struct Theorem1Program {
    pub problem: SdpProblem,
    pub pattern: LinkPattern,
    z: Vec<MatExpr>,
    w: Vec<MatExpr>,
    y: BTreeMap<Link, MatExpr>,
    p_hat: Vec<MatExpr>,
    w_hat: Vec<MatExpr>,
    y_hat: BTreeMap<Link, MatExpr>,
}

impl Theorem1Program {
    pub fn extract(&self, x: &[f64]) -> Theorem1Solution {
        let ev = |v: &Vec<MatExpr>| v.iter().map(|e| e.eval(x)).collect();
        let evm = |v: &BTreeMap<Link, MatExpr>| v.iter().map(|(k, e)| (*k, e.eval(x))).collect();
        Theorem1Solution {
            z: ev(&self.z),
            w: ev(&self.w),
            y: evm(&self.y),
            p_hat: ev(&self.p_hat),
            w_hat: ev(&self.w_hat),
            y_hat: evm(&self.y_hat),
            alpha: self.pattern.links().map(|l| (l, 1.0)).collect(),
        }
    }

    pub fn constraint_labels(&self) -> Vec<&str> {
        self.problem.constraints.iter().map(|c| c.label.as_str()).collect()
    }
}

fn check_pattern(net: &PlantNetwork, pattern: &LinkPattern) -> Result<(), SynthesisError> {
    if pattern.subsystems() != net.len() {
        return Err(SynthesisError::Dimension(format!(
            "link pattern for {} subsystems, network has {}",
            pattern.subsystems(),
            net.len()
        )));
    }
    Ok(())
}

/// Matrix variable with `rows × cols` entries, or the zero matrix when its
/// budget is zero.
fn budgeted_var(p: &mut SdpProblem, name: &str, rows: usize, cols: usize, budget: f64) -> MatExpr {
    if budget == 0.0 {
        MatExpr::zeros(rows, cols)
    } else {
        p.matrix_var(name, rows, cols)
    }
}

fn block_diag_expr(blocks: &[MatExpr], rows: &[usize], cols: &[usize]) -> MatExpr {
    let (tr, tc) = (rows.iter().sum(), cols.iter().sum());
    let mut out = MatExpr::zeros(tr, tc);
    let (mut r0, mut c0) = (0, 0);
    for (k, b) in blocks.iter().enumerate() {
        out = out + b.embed(r0, c0, tr, tc);
        r0 += rows[k];
        c0 += cols[k];
    }
    out
}

fn beta_diag(net: &PlantNetwork, sys: &BlockSystem) -> Matrix {
    let mut d = Matrix::zeros(sys.n(), sys.n());
    for (i, &b) in net.beta.iter().enumerate() {
        for k in 0..sys.state_dims[i] {
            let o = sys.state_offsets[i] + k;
            d[(o, o)] = b;
        }
    }
    d
}

/// Design program (C1)–(C8) for a fixed binary pattern, normalized by
/// `I ⪯ Z_i, P̂_i ⪯ ρI`. Unbounded budgets omit their constraint; zero
/// budgets pin the corresponding variable to zero.
pub fn build_theorem1_program(
    net: &PlantNetwork,
    bounds: &GainBounds,
    pattern: &LinkPattern,
    opts: &SynthesisOptions,
) -> Result<Theorem1Program, SynthesisError> {
    crate::model::validate_network(net)?;
    bounds.validate(net.len())?;
    check_pattern(net, pattern)?;
    let sys = assemble_block_matrices(net);
    let n = net.len();
    let nd = &sys.state_dims;
    let md = &sys.input_dims;
    let rd = &sys.output_dims;
    let ah = &sys.a + &sys.h;
    let bdiag = beta_diag(net, &sys);
    let mut p = SdpProblem::new();

    let mut z = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut ph = Vec::with_capacity(n);
    let mut wh = Vec::with_capacity(n);
    for i in 0..n {
        let zi = p.sym_matrix_var(&format!("Z{}", i + 1), nd[i]);
        p.set_initial(&zi, &(Matrix::identity(nd[i], nd[i]) * 2.0));
        z.push(zi);
        w.push(budgeted_var(&mut p, &format!("W{}", i + 1), md[i], nd[i], bounds.kappa[i]));
        let pi = p.sym_matrix_var(&format!("Ph{}", i + 1), nd[i]);
        p.set_initial(&pi, &(Matrix::identity(nd[i], nd[i]) * 2.0));
        ph.push(pi);
        wh.push(budgeted_var(&mut p, &format!("Wh{}", i + 1), nd[i], rd[i], bounds.mu[i]));
    }
    let mut y = BTreeMap::new();
    let mut yh = BTreeMap::new();
    for link in pattern.links() {
        let (i, j) = (link.i, link.j);
        y.insert(link, budgeted_var(&mut p, &format!("Y{}{}", i + 1, j + 1), md[i], nd[j], bounds.iota(link)));
        yh.insert(link, budgeted_var(&mut p, &format!("Yh{}{}", i + 1, j + 1), nd[i], rd[j], bounds.omega(link)));
    }

    // Auxiliary λ_min lower bounds, shared by every budget that needs them.
    let finite = |b: f64| b.is_finite() && b > 0.0;
    let mut tz: Vec<Option<VarId>> = vec![None; n];
    let mut tp: Vec<Option<VarId>> = vec![None; n];
    for i in 0..n {
        let needs_z = finite(bounds.kappa[i])
            || pattern.links().any(|l| l.j == i && finite(bounds.iota(l)) && y[&l].variables().next().is_some());
        let needs_p = finite(bounds.mu[i]) || pattern.links().any(|l| l.i == i && finite(bounds.omega(l)));
        if needs_z {
            let v = p.free_var(format!("tz{}", i + 1));
            p.set_initial_scalar(v, 1.0);
            tz[i] = Some(v);
        }
        if needs_p {
            let v = p.free_var(format!("tp{}", i + 1));
            p.set_initial_scalar(v, 1.0);
            tp[i] = Some(v);
        }
    }

    let zb = block_diag_expr(&z, nd, nd);
    let pb = block_diag_expr(&ph, nd, nd);
    let bw = block_diag_expr(&w.iter().enumerate().map(|(i, wi)| wi.left_mul(&net.subsystems[i].b)).collect::<Vec<_>>(), nd, nd);
    let whc = block_diag_expr(&wh.iter().enumerate().map(|(i, wi)| wi.right_mul(&net.subsystems[i].c)).collect::<Vec<_>>(), nd, nd);
    let total = sys.n();
    let mut f = &ah * &zb + bw + &bdiag * &zb;
    let mut fh = &pb * &ah + whc + &pb * &bdiag;
    for link in pattern.links() {
        let (i, j) = (link.i, link.j);
        let (ri, cj) = (sys.state_offsets[i], sys.state_offsets[j]);
        f = f + y[&link].left_mul(&net.subsystems[i].b).embed(ri, cj, total, total);
        fh = fh + yh[&link].right_mul(&net.subsystems[j].c).embed(ri, cj, total, total);
    }
    p.add_constraint(AffineLmi::new("C1", -f.plus_transpose(), true)?)?;
    p.add_constraint(AffineLmi::new("C2", -fh.plus_transpose(), true)?)?;

    for i in 0..n {
        let eye = MatExpr::identity(nd[i]);
        let cap = MatExpr::constant(Matrix::identity(nd[i], nd[i]) * opts.rho);
        p.add_constraint(AffineLmi::new(format!("C3:{}", i + 1), z[i].clone() - eye.clone(), false)?)?;
        p.add_constraint(AffineLmi::new(format!("C3cap:{}", i + 1), cap.clone() - z[i].clone(), false)?)?;
        p.add_constraint(AffineLmi::new(format!("C4:{}", i + 1), ph[i].clone() - eye, false)?)?;
        p.add_constraint(AffineLmi::new(format!("C4cap:{}", i + 1), cap - ph[i].clone(), false)?)?;
    }
    for i in 0..n {
        if let Some(t) = tz[i] {
            p.add_constraint(eig_bound_as_lmi(format!("eigZ:{}", i + 1), &z[i], &MatExpr::scalar(t))?)?;
        }
        if let Some(t) = tp[i] {
            p.add_constraint(eig_bound_as_lmi(format!("eigPh:{}", i + 1), &ph[i], &MatExpr::scalar(t))?)?;
        }
    }
    for i in 0..n {
        if finite(bounds.kappa[i]) {
            let s = MatExpr::scalar(tz[i].expect("tz")).scale(bounds.kappa[i]);
            p.add_constraint(sv_bound_as_lmi(format!("C5:{}", i + 1), &w[i], &s)?)?;
        }
    }
    for link in pattern.links() {
        let b = bounds.iota(link);
        if finite(b) && y[&link].variables().next().is_some() {
            let s = MatExpr::scalar(tz[link.j].expect("tz")).scale(b);
            p.add_constraint(sv_bound_as_lmi(format!("C6:{}{}", link.i + 1, link.j + 1), &y[&link], &s)?)?;
        }
    }
    for i in 0..n {
        if finite(bounds.mu[i]) {
            let s = MatExpr::scalar(tp[i].expect("tp")).scale(bounds.mu[i]);
            p.add_constraint(sv_bound_as_lmi(format!("C7:{}", i + 1), &wh[i], &s)?)?;
        }
    }
    for link in pattern.links() {
        let b = bounds.omega(link);
        if finite(b) && yh[&link].variables().next().is_some() {
            let s = MatExpr::scalar(tp[link.i].expect("tp")).scale(b);
            p.add_constraint(sv_bound_as_lmi(format!("C8:{}{}", link.i + 1, link.j + 1), &yh[&link], &s)?)?;
        }
    }
    Ok(Theorem1Program { problem: p, pattern: pattern.clone(), z, w, y, p_hat: ph, w_hat: wh, y_hat: yh })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Outcome {
    pub report: SolveReport,
    pub solution: Option<Theorem1Solution>,
}

impl Theorem1Outcome {
    pub fn status(&self) -> SolveStatus {
        self.report.status
    }
}

/// Builds and solves the design program; the solution is present only when
/// the solve is certified strictly feasible.
pub fn solve_theorem1(
    net: &PlantNetwork,
    bounds: &GainBounds,
    pattern: &LinkPattern,
    opts: &SynthesisOptions,
) -> Result<Theorem1Outcome, SynthesisError> {
    let prog = build_theorem1_program(net, bounds, pattern, opts)?;
    let report = solve_feasibility_with(&prog.problem, &opts.solver)?;
    let solution = report.is_feasible().then(|| prog.extract(&report.x));
    Ok(Theorem1Outcome { report, solution })
}

/// Relaxed link program with every matrix frozen at `frozen`: variables
/// `α_ij ∈ [0, 1]` for the links in `links`, constraints (C1) and (C2),
/// objective `Σ α_ij`.
#[derive(Debug, Clone)]
pub struct RelaxedProgram {
    pub problem: SdpProblem,
    pub alpha: Vec<(Link, VarId)>,
}

pub fn build_relaxed_program(
    net: &PlantNetwork,
    frozen: &Theorem1Solution,
    links: &[Link],
) -> Result<RelaxedProgram, SynthesisError> {
    let sys = assemble_block_matrices(net);
    let total = sys.n();
    let ah = &sys.a + &sys.h;
    let bdiag = beta_diag(net, &sys);
    let zb = crate::numerics::block_diag(&frozen.z);
    let pb = crate::numerics::block_diag(&frozen.p_hat);
    let bw = crate::numerics::block_diag(
        &frozen.w.iter().enumerate().map(|(i, w)| &net.subsystems[i].b * w).collect::<Vec<_>>(),
    );
    let whc = crate::numerics::block_diag(
        &frozen.w_hat.iter().enumerate().map(|(i, w)| w * &net.subsystems[i].c).collect::<Vec<_>>(),
    );
    let mut f = MatExpr::constant(&ah * &zb + bw + &bdiag * &zb);
    let mut fh = MatExpr::constant(&pb * &ah + whc + &pb * &bdiag);
    let mut p = SdpProblem::new();
    let mut alpha = Vec::new();
    for &link in links {
        let (i, j) = (link.i, link.j);
        let y = frozen.y.get(&link).ok_or_else(|| SynthesisError::Dimension(format!("no frozen Y for {link}")))?;
        let yh = frozen.y_hat.get(&link).ok_or_else(|| SynthesisError::Dimension(format!("no frozen Yh for {link}")))?;
        let v = p.add_var(link.to_string(), Some(0.0), Some(1.0))?;
        p.set_initial_scalar(v, 1.0 - 1e-7);
        let mut by = Matrix::zeros(total, total);
        by.view_mut((sys.state_offsets[i], sys.state_offsets[j]), (sys.state_dims[i], sys.state_dims[j]))
            .copy_from(&(&net.subsystems[i].b * y));
        let mut yc = Matrix::zeros(total, total);
        yc.view_mut((sys.state_offsets[i], sys.state_offsets[j]), (sys.state_dims[i], sys.state_dims[j]))
            .copy_from(&(yh * &net.subsystems[j].c));
        f = f + MatExpr::term(v, by);
        fh = fh + MatExpr::term(v, yc);
        alpha.push((link, v));
    }
    // same margins as (C1), (C2) in the design program, whose constant part is zero
    p.add_constraint(AffineLmi::new("C1", -f.plus_transpose(), true)?.with_absolute_margin())?;
    p.add_constraint(AffineLmi::new("C2", -fh.plus_transpose(), true)?.with_absolute_margin())?;
    p.set_objective(alpha.iter().map(|(_, v)| (*v, 1.0)).collect())?;
    Ok(RelaxedProgram { problem: p, alpha })
}

/// Controller and observer gains of the distributed observer-based law.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k: Vec<Matrix>,
    pub l: BTreeMap<Link, Matrix>,
    pub m: Vec<Matrix>,
    pub o: BTreeMap<Link, Matrix>,
    pub warnings: Vec<String>,
}

impl GainSet {
    /// Local gains only.
    pub fn decentralized(k: Vec<Matrix>, m: Vec<Matrix>) -> Self {
        GainSet { k, l: BTreeMap::new(), m, o: BTreeMap::new(), warnings: Vec::new() }
    }

    pub fn zero(net: &PlantNetwork) -> Self {
        let k = net.subsystems.iter().map(|s| Matrix::zeros(s.inputs(), s.states())).collect();
        let m = net.subsystems.iter().map(|s| Matrix::zeros(s.states(), s.outputs())).collect();
        Self::decentralized(k, m)
    }

    /// Links carrying a nonzero `L_ij` or `O_ij`.
    pub fn used_links(&self) -> Vec<Link> {
        let mut out: Vec<Link> = self
            .l
            .iter()
            .chain(&self.o)
            .filter(|(_, m)| m.iter().any(|v| *v != 0.0))
            .map(|(l, _)| *l)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn consistent_with(&self, pattern: &LinkPattern) -> bool {
        self.used_links().iter().all(|l| pattern.contains(*l))
    }

    /// `K + L` as one `m × n` matrix.
    pub fn controller_matrix(&self, sys: &BlockSystem) -> Matrix {
        let mut out = Matrix::zeros(sys.m(), sys.n());
        for (i, k) in self.k.iter().enumerate() {
            out.view_mut((sys.input_offsets[i], sys.state_offsets[i]), k.shape()).copy_from(k);
        }
        for (link, l) in &self.l {
            out.view_mut((sys.input_offsets[link.i], sys.state_offsets[link.j]), l.shape()).copy_from(l);
        }
        out
    }

    /// `M + O` as one `n × r` matrix.
    pub fn observer_matrix(&self, sys: &BlockSystem) -> Matrix {
        let mut out = Matrix::zeros(sys.n(), sys.r());
        for (i, m) in self.m.iter().enumerate() {
            out.view_mut((sys.state_offsets[i], sys.output_offsets[i]), m.shape()).copy_from(m);
        }
        for (link, o) in &self.o {
            out.view_mut((sys.state_offsets[link.i], sys.output_offsets[link.j]), o.shape()).copy_from(o);
        }
        out
    }

    /// Budget violations (induced 2-norm against each bound, relative
    /// tolerance `rel_tol`).
    pub fn audit(&self, bounds: &GainBounds, rel_tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |what: String, norm: f64, bound: f64| {
            if norm > bound * (1.0 + rel_tol) + 1e-12 {
                out.push(format!("‖{what}‖ = {norm:.6e} exceeds {bound:.6e}"));
            }
        };
        for (i, k) in self.k.iter().enumerate() {
            check(format!("K{}", i + 1), sigma_max(k), bounds.kappa[i]);
        }
        for (i, m) in self.m.iter().enumerate() {
            check(format!("M{}", i + 1), sigma_max(m), bounds.mu[i]);
        }
        for (link, l) in &self.l {
            check(format!("L{}{}", link.i + 1, link.j + 1), sigma_max(l), bounds.iota(*link));
        }
        for (link, o) in &self.o {
            check(format!("O{}{}", link.i + 1, link.j + 1), sigma_max(o), bounds.omega(*link));
        }
        out
    }
}

fn condition_warning(name: &str, m: &Matrix) -> Option<String> {
    let (lo, hi) = sym_eig_extremes(m).ok()?;
    (hi > 1e12 * lo).then(|| format!("{name} is ill-conditioned (cond {:.2e})", hi / lo))
}

/// `K_i = W_i Z_i⁻¹`, `L_ij = α_ij Y_ij Z_j⁻¹`, `M_i = P̂_i⁻¹ Ŵ_i`,
/// `O_ij = α_ij P̂_i⁻¹ Ŷ_ij`; links outside `pattern` get no coupling gain.
pub fn recover_gains(sol: &Theorem1Solution, pattern: &LinkPattern) -> Result<GainSet, SynthesisError> {
    let right_inv = |w: &Matrix, z: &Matrix| -> Result<Matrix, NumericsError> { Ok(spd_solve(z, &w.transpose())?.transpose()) };
    let mut warnings = Vec::new();
    for (i, z) in sol.z.iter().enumerate() {
        warnings.extend(condition_warning(&format!("Z{}", i + 1), z));
    }
    for (i, p) in sol.p_hat.iter().enumerate() {
        warnings.extend(condition_warning(&format!("Ph{}", i + 1), p));
    }
    let k = sol.w.iter().zip(&sol.z).map(|(w, z)| right_inv(w, z)).collect::<Result<Vec<_>, _>>()?;
    let m = sol.w_hat.iter().zip(&sol.p_hat).map(|(w, p)| spd_solve(p, w)).collect::<Result<Vec<_>, _>>()?;
    let mut l = BTreeMap::new();
    let mut o = BTreeMap::new();
    for link in pattern.links() {
        let alpha = sol.alpha.get(&link).copied().unwrap_or(1.0);
        if let Some(y) = sol.y.get(&link) {
            l.insert(link, right_inv(y, &sol.z[link.j])? * alpha);
        }
        if let Some(yh) = sol.y_hat.get(&link) {
            o.insert(link, spd_solve(&sol.p_hat[link.i], yh)? * alpha);
        }
    }
    Ok(GainSet { k, l, m, o, warnings })
}

/// Cascade closed loop `ẋ = A_x x + X e`, `ė = A_e e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_x: Matrix,
    pub a_e: Matrix,
    /// `B(K + L)`.
    pub cross: Matrix,
}

impl ClosedLoop {
    /// `[[A_x, B(K+L)], [0, A_e]]` acting on `(x, e)`.
    pub fn combined(&self) -> Matrix {
        let n = self.a_x.nrows();
        let mut out = Matrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&self.a_x);
        out.view_mut((0, n), (n, n)).copy_from(&self.cross);
        out.view_mut((n, n), (n, n)).copy_from(&self.a_e);
        out
    }
}

pub fn closed_loop_matrices(net: &PlantNetwork, g: &GainSet) -> ClosedLoop {
    let sys = assemble_block_matrices(net);
    let ah = &sys.a + &sys.h;
    let cross = &sys.b * g.controller_matrix(&sys);
    let a_e = &ah + g.observer_matrix(&sys) * &sys.c;
    ClosedLoop { a_x: &ah + &cross, a_e, cross }
}

/// Block-diagonal Lyapunov certificates for fixed gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificates {
    pub p: Vec<Matrix>,
    pub p_hat: Vec<Matrix>,
    /// `λ_min` of `−(S1)`, `−(S2)`, `P`, `P̂`.
    pub margins: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lemma1Outcome {
    Certified(Certificates),
    /// Certificate LMIs proven infeasible (sufficient conditions only).
    Infeasible { side: &'static str, message: String },
    NotCertified { side: &'static str, message: String },
}

impl Lemma1Outcome {
    pub fn certified(&self) -> Option<&Certificates> {
        match self {
            Lemma1Outcome::Certified(c) => Some(c),
            _ => None,
        }
    }
}

/// `−(Aᵀ P + P A + 2β∘P) ≻ 0`, `P = diag(P_i) ⪰ I` in block-diagonal `P`.
fn lyapunov_program(net: &PlantNetwork, sys: &BlockSystem, a: &Matrix, hint: Option<&[Matrix]>) -> Result<(SdpProblem, Vec<MatExpr>), SynthesisError> {
    let mut p = SdpProblem::new();
    let bdiag = beta_diag(net, sys);
    let blocks: Vec<MatExpr> = (0..net.len())
        .map(|i| {
            let e = p.sym_matrix_var(&format!("P{}", i + 1), sys.state_dims[i]);
            let init = match hint {
                Some(h) => h[i].clone(),
                None => Matrix::identity(sys.state_dims[i], sys.state_dims[i]) * 2.0,
            };
            p.set_initial(&e, &init);
            e
        })
        .collect();
    let pb = block_diag_expr(&blocks, &sys.state_dims, &sys.state_dims);
    let lyap = (&pb * a).plus_transpose() + (&bdiag * &pb).scale(2.0);
    p.add_constraint(AffineLmi::new("lyapunov", -lyap, true)?)?;
    for (i, b) in blocks.iter().enumerate() {
        p.add_constraint(AffineLmi::new(format!("pos:{}", i + 1), b.clone() - MatExpr::identity(sys.state_dims[i]), false)?)?;
    }
    Ok((p, blocks))
}

/// Solves (S1)–(S4) in block-diagonal `P`, `P̂` for fixed gains.
pub fn check_lemma1(net: &PlantNetwork, g: &GainSet, opts: &SolverOptions) -> Result<Lemma1Outcome, SynthesisError> {
    check_lemma1_from(net, g, None, opts)
}

/// As [`check_lemma1`], starting from optional guesses for `P` and `P̂`
/// (rescaled so their smallest eigenvalue is 2).
pub fn check_lemma1_from(
    net: &PlantNetwork,
    g: &GainSet,
    hint: Option<(&[Matrix], &[Matrix])>,
    opts: &SolverOptions,
) -> Result<Lemma1Outcome, SynthesisError> {
    let sys = assemble_block_matrices(net);
    let cl = closed_loop_matrices(net, g);
    let normalize = |v: &[Matrix]| -> Vec<Matrix> {
        let lo = v.iter().map(lambda_min_sym_part).fold(f64::INFINITY, f64::min);
        if lo > 0.0 && lo.is_finite() {
            v.iter().map(|m| m * (2.0 / lo)).collect()
        } else {
            v.iter().map(|m| Matrix::identity(m.nrows(), m.ncols()) * 2.0).collect()
        }
    };
    let hints = hint.map(|(a, b)| (normalize(a), normalize(b)));
    let mut found = Vec::new();
    let mut margins = [0.0; 4];
    for (side, a, h) in [
        ("controller", &cl.a_x, hints.as_ref().map(|h| h.0.as_slice())),
        ("observer", &cl.a_e, hints.as_ref().map(|h| h.1.as_slice())),
    ] {
        let (prob, blocks) = lyapunov_program(net, &sys, a, h)?;
        let rep = solve_feasibility_with(&prob, &SolverOptions { center: false, ..opts.clone() })?;
        match rep.status {
            SolveStatus::StrictlyFeasible => {
                let ps: Vec<Matrix> = blocks.iter().map(|b| b.eval(&rep.x)).collect();
                let k = if side == "controller" { 0 } else { 1 };
                margins[k] = rep.margins[0];
                margins[k + 2] = ps.iter().map(lambda_min_sym_part).fold(f64::INFINITY, f64::min);
                found.push(ps);
            }
            SolveStatus::Infeasible => return Ok(Lemma1Outcome::Infeasible { side, message: rep.message }),
            _ => return Ok(Lemma1Outcome::NotCertified { side, message: rep.message }),
        }
    }
    let p_hat = found.pop().expect("observer side");
    let p = found.pop().expect("controller side");
    Ok(Lemma1Outcome::Certified(Certificates { p, p_hat, margins }))
}
