use nalgebra::{Cholesky, DVector};

use crate::numerics::{lambda_min_sym_part, Matrix};

use super::{evaluate_constraints, LmiError, SdpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    StrictlyFeasible,
    Infeasible,
    Indeterminate,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Relative strictness margin for strict constraints.
    pub eps_feas: f64,
    /// Move a feasible point to the analytic center of the strict feasible set.
    pub center: bool,
    /// Relative duality-gap target for linear objectives.
    pub gap_tol: f64,
    /// Newton-step budget per phase.
    pub max_newton: usize,
    /// Newton-step budget for analytic centering.
    pub center_iterations: usize,
    /// Barrier-parameter growth factor.
    pub growth: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps_feas: 1e-6,
            center: false,
            gap_tol: 1e-6,
            max_newton: 600,
            center_iterations: 300,
            growth: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Smallest phase-I slack reached: `max_k (ε_k − λ_min(G_k(x)))`.
    pub t_star: f64,
    /// Running minimum of the phase-I slack after each accepted step.
    pub t_history: Vec<f64>,
    pub iterations: usize,
    pub objective: Option<f64>,
    /// `λ_min(G_k(x))` per constraint.
    pub margins: Vec<f64>,
    pub centered: bool,
    pub message: String,
}

impl SolveReport {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::StrictlyFeasible
    }
}

struct Block {
    g0: Matrix,
    terms: Vec<(usize, Matrix)>,
}

struct Barrier {
    blocks: Vec<Block>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    c: Vec<f64>,
}

enum Centering {
    Converged { decrement: f64 },
    Budget,
    Stalled,
    Stopped,
    Unbounded,
}

const DIVERGENCE: f64 = 1e15;

impl Barrier {
    fn from_problem(p: &SdpProblem, eps: f64, with_slack: bool) -> Barrier {
        let nv = p.vars.len();
        let blocks = p
            .constraints
            .iter()
            .map(|lmi| {
                let d = lmi.dim();
                let g0 = &lmi.g0 - Matrix::identity(d, d) * lmi.margin(eps);
                let mut terms: Vec<(usize, Matrix)> = lmi.coeffs.iter().map(|(v, m)| (v.0, m.clone())).collect();
                if with_slack {
                    terms.push((nv, Matrix::identity(d, d)));
                }
                Block { g0, terms }
            })
            .collect();
        let mut lo: Vec<f64> = p.vars.iter().map(|v| v.lo.unwrap_or(f64::NEG_INFINITY)).collect();
        let mut hi: Vec<f64> = p.vars.iter().map(|v| v.hi.unwrap_or(f64::INFINITY)).collect();
        let mut c = vec![0.0; nv];
        if with_slack {
            lo.push(f64::NEG_INFINITY);
            hi.push(f64::INFINITY);
            c.push(1.0);
        }
        Barrier { blocks, lo, hi, c }
    }

    fn nv(&self) -> usize {
        self.c.len()
    }

    fn nu(&self) -> f64 {
        let boxes = self.lo.iter().filter(|l| l.is_finite()).count() + self.hi.iter().filter(|h| h.is_finite()).count();
        (self.blocks.iter().map(|b| b.g0.nrows()).sum::<usize>() + boxes) as f64
    }

    fn slack(b: &Block, x: &[f64]) -> Matrix {
        let mut s = b.g0.clone();
        for (v, m) in &b.terms {
            s += m * x[*v];
        }
        s
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Barrier value, or `None` outside the domain.
    fn phi(&self, x: &[f64]) -> Option<f64> {
        let mut f = 0.0;
        for (k, &xk) in x.iter().enumerate() {
            if self.lo[k].is_finite() {
                if xk <= self.lo[k] {
                    return None;
                }
                f -= (xk - self.lo[k]).ln();
            }
            if self.hi[k].is_finite() {
                if xk >= self.hi[k] {
                    return None;
                }
                f -= (self.hi[k] - xk).ln();
            }
        }
        for b in &self.blocks {
            let chol = Cholesky::new(Self::slack(b, x))?;
            f -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        f.is_finite().then_some(f)
    }

    fn grad_hess(&self, x: &[f64]) -> Option<(DVector<f64>, Matrix)> {
        let n = self.nv();
        let mut g = DVector::zeros(n);
        let mut h = Matrix::zeros(n, n);
        for (k, &xk) in x.iter().enumerate() {
            if self.lo[k].is_finite() {
                let d = xk - self.lo[k];
                g[k] -= 1.0 / d;
                h[(k, k)] += 1.0 / (d * d);
            }
            if self.hi[k].is_finite() {
                let d = self.hi[k] - xk;
                g[k] += 1.0 / d;
                h[(k, k)] += 1.0 / (d * d);
            }
        }
        for b in &self.blocks {
            let sinv = Cholesky::new(Self::slack(b, x))?.inverse();
            let us: Vec<Matrix> = b.terms.iter().map(|(_, m)| &sinv * m * &sinv).collect();
            for (a, (va, ma)) in b.terms.iter().enumerate() {
                g[*va] -= sinv.component_mul(ma).sum();
                for (bb, (vb, mb)) in b.terms.iter().enumerate().skip(a) {
                    let val = us[a].component_mul(mb).sum();
                    h[(*va, *vb)] += val;
                    if a != bb {
                        h[(*vb, *va)] += val;
                    }
                }
            }
        }
        Some((g, h))
    }

    /// Newton direction for `H d = −g` with Jacobi scaling and a growing
    /// ridge when the scaled Hessian is not numerically definite.
    fn newton_direction(h: &Matrix, g: &DVector<f64>) -> Option<DVector<f64>> {
        let n = g.len();
        let d: DVector<f64> = DVector::from_iterator(n, (0..n).map(|i| {
            let hi = h[(i, i)];
            if hi > 0.0 && hi.is_finite() {
                1.0 / hi.sqrt()
            } else {
                1.0
            }
        }));
        let mut hs = h.clone();
        for i in 0..n {
            for j in 0..n {
                hs[(i, j)] *= d[i] * d[j];
            }
        }
        let rhs = -g.component_mul(&d);
        let mut ridge = 0.0;
        for _ in 0..12 {
            let mut m = hs.clone();
            for i in 0..n {
                m[(i, i)] += ridge;
            }
            if let Some(ch) = Cholesky::new(m) {
                let mut y = ch.solve(&rhs);
                // iterative refinement against the unridged system
                for _ in 0..3 {
                    let r = &rhs - &hs * &y;
                    y += ch.solve(&r);
                }
                if y.iter().all(|v| v.is_finite()) {
                    return Some(y.component_mul(&d));
                }
            }
            ridge = if ridge == 0.0 { 1e-13 } else { ridge * 10.0 };
        }
        None
    }

    /// Damped Newton on `s·cᵀx + φ(x)`; `on_step` may stop early.
    fn center(
        &self,
        x: &mut Vec<f64>,
        s: f64,
        budget: &mut usize,
        mut on_step: impl FnMut(&[f64]) -> bool,
    ) -> Centering {
        loop {
            let Some((mut g, h)) = self.grad_hess(x) else {
                return Centering::Stalled;
            };
            for (gk, ck) in g.iter_mut().zip(&self.c) {
                *gk += s * ck;
            }
            let Some(dx) = Self::newton_direction(&h, &g) else {
                return Centering::Stalled;
            };
            let lambda = (-g.dot(&dx)).max(0.0).sqrt();
            if lambda * lambda <= 2e-10 {
                return Centering::Converged { decrement: lambda };
            }
            if *budget == 0 {
                return Centering::Budget;
            }
            *budget -= 1;
            let mut a = if lambda < 0.25 { 1.0 } else { 1.0 / (1.0 + lambda) };
            let f0 = s * self.linear(x) + self.phi(x).unwrap_or(f64::INFINITY);
            let mut accepted = None;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(dx.iter()).map(|(xi, di)| xi + a * di).collect();
                if let Some(ph) = self.phi(&xn) {
                    // Damped steps decrease a self-concordant function; the
                    // check only guards against rounding in the Hessian.
                    let fnew = s * self.linear(&xn) + ph;
                    if fnew <= f0 + 1e-9 * (1.0 + f0.abs()) {
                        accepted = Some(xn);
                        break;
                    }
                }
                a *= 0.5;
            }
            let Some(xn) = accepted else {
                return if lambda < 1e-3 { Centering::Converged { decrement: lambda } } else { Centering::Stalled };
            };
            *x = xn;
            if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE) {
                return Centering::Unbounded;
            }
            if on_step(x) {
                return Centering::Stopped;
            }
        }
    }
}

/// Pushes a start point strictly inside its box bounds.
fn interior_start(p: &SdpProblem, x: &[f64]) -> Vec<f64> {
    p.vars
        .iter()
        .zip(x)
        .map(|(v, &xi)| {
            let lo_ok = v.lo.is_none_or(|l| xi > l);
            let hi_ok = v.hi.is_none_or(|h| xi < h);
            if lo_ok && hi_ok && xi.is_finite() {
                return xi;
            }
            match (v.lo, v.hi) {
                (Some(l), Some(h)) => 0.5 * (l + h),
                (Some(l), None) => l + 1.0,
                (None, Some(h)) => h - 1.0,
                (None, None) => 0.0,
            }
        })
        .collect()
}

/// `max_k (ε_k − λ_min(G_k(x)))`; negative iff every constraint holds with
/// its margin.
fn phase_one_slack(p: &SdpProblem, eps: f64, x: &[f64]) -> f64 {
    p.constraints
        .iter()
        .map(|c| c.margin(eps) - lambda_min_sym_part(&c.eval(x)))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn strictly_inside_boxes(p: &SdpProblem, x: &[f64]) -> bool {
    p.vars
        .iter()
        .zip(x)
        .all(|(v, &xi)| v.lo.is_none_or(|l| xi > l) && v.hi.is_none_or(|h| xi < h))
}

fn report(p: &SdpProblem, status: SolveStatus, x: Vec<f64>, opts: &SolverOptions) -> SolveReport {
    let margins = evaluate_constraints(p, &x).unwrap_or_default();
    let t_star = phase_one_slack(p, opts.eps_feas, &x);
    SolveReport {
        status,
        objective: p.objective_value(&x),
        x,
        t_star,
        t_history: Vec::new(),
        iterations: 0,
        margins,
        centered: false,
        message: String::new(),
    }
}

/// A posteriori certificate: every margin at least `ε_k − 1e-12`.
fn verified(p: &SdpProblem, eps: f64, x: &[f64]) -> bool {
    strictly_inside_boxes(p, x)
        && p
            .constraints
            .iter()
            .all(|c| lambda_min_sym_part(&c.eval(x)) >= c.margin(eps) - 1e-12)
}

/// Phase-I feasibility with default options and the given margin.
pub fn solve_feasibility(p: &SdpProblem, eps_feas: f64) -> Result<SolveReport, LmiError> {
    solve_feasibility_with(p, &SolverOptions { eps_feas, ..SolverOptions::default() })
}

/// Phase I: minimize `t` subject to `G_k(x) − ε_k I + t I ⪰ 0` along the
/// barrier path, stopping as soon as `t < 0` is reached. Infeasibility is
/// declared only when the duality bound proves `t* > 0`.
pub fn solve_feasibility_with(p: &SdpProblem, opts: &SolverOptions) -> Result<SolveReport, LmiError> {
    let eps = opts.eps_feas;
    let x0 = interior_start(p, &p.initial_point());
    let mut x = x0.clone();
    let mut history = vec![phase_one_slack(p, eps, &x)];
    let mut iterations = 0;

    let mut status = None;
    let mut message = String::new();
    if history[0] >= 0.0 || p.constraints.is_empty() && !strictly_inside_boxes(p, &x) {
        let bar = Barrier::from_problem(p, eps, true);
        let t0 = history[0].max(0.0);
        let mut z = x.clone();
        z.push(t0 + (0.1 * t0).max(1.0));
        let nu = bar.nu();
        let mut s = 1.0 / (1.0 + t0);
        let mut budget = opts.max_newton;
        let mut best = (history[0], x.clone());
        loop {
            let outcome = bar.center(&mut z, s, &mut budget, |z| {
                let t = phase_one_slack(p, eps, &z[..z.len() - 1]);
                if t < best.0 {
                    best = (t, z[..z.len() - 1].to_vec());
                }
                history.push(best.0);
                t < 0.0
            });
            match outcome {
                Centering::Stopped => {
                    status = Some(SolveStatus::StrictlyFeasible);
                    break;
                }
                Centering::Converged { decrement } => {
                    let t = z[z.len() - 1];
                    let lower = t - (nu + nu.sqrt()) / s;
                    if decrement <= 0.1 && lower > 0.0 {
                        status = Some(SolveStatus::Infeasible);
                        message = format!("phase-I lower bound {lower:.3e} > 0");
                        break;
                    }
                    if (nu + nu.sqrt()) / s < 1e-13 * (1.0 + t.abs()) {
                        message = format!("phase-I stagnated at t = {t:.3e}");
                        break;
                    }
                    s *= opts.growth;
                }
                Centering::Budget => {
                    message = "phase-I Newton budget exhausted".into();
                    break;
                }
                Centering::Stalled => {
                    message = "phase-I Newton step stalled".into();
                    break;
                }
                Centering::Unbounded => {
                    message = "phase-I iterates diverged".into();
                    break;
                }
            }
        }
        iterations = opts.max_newton - budget;
        x = best.1;
    } else {
        status = Some(SolveStatus::StrictlyFeasible);
    }

    let mut centered = false;
    let status = match status {
        Some(SolveStatus::StrictlyFeasible) => {
            if opts.center {
                let (xc, ok, its) = center_from(p, eps, &x, opts.center_iterations);
                x = xc;
                centered = ok;
                iterations += its;
            }
            if verified(p, eps, &x) {
                SolveStatus::StrictlyFeasible
            } else {
                message = "a posteriori margin check failed".into();
                SolveStatus::Indeterminate
            }
        }
        Some(other) => other,
        None => SolveStatus::Indeterminate,
    };
    let mut rep = report(p, status, x, opts);
    rep.t_history = history;
    rep.iterations = iterations;
    rep.centered = centered;
    rep.message = message;
    Ok(rep)
}

fn center_from(p: &SdpProblem, eps: f64, x: &[f64], iterations: usize) -> (Vec<f64>, bool, usize) {
    let bar = Barrier::from_problem(p, eps, false);
    let mut z = x.to_vec();
    let mut last = z.clone();
    let mut budget = iterations;
    let outcome = bar.center(&mut z, 0.0, &mut budget, |z| {
        if z.iter().any(|v| v.abs() > 1e12) {
            return true;
        }
        last = z.to_vec();
        false
    });
    let used = iterations - budget;
    match outcome {
        Centering::Converged { .. } => (z, true, used),
        _ => (last, false, used),
    }
}

/// Analytic center of `{x : G_k(x) ⪰ ε_k I, boxes}` starting from a strictly
/// feasible `x`; best effort when the set is unbounded. Returns the point and
/// whether Newton converged.
pub fn analytic_center(p: &SdpProblem, x: &[f64], opts: &SolverOptions) -> (Vec<f64>, bool) {
    let (z, ok, _) = center_from(p, opts.eps_feas, x, opts.center_iterations);
    (z, ok)
}

/// Barrier method for `min cᵀx` from a strictly feasible start (phase I is
/// run first if `x_start` is not strictly feasible).
pub fn solve_min_linear(p: &SdpProblem, x_start: &[f64], opts: &SolverOptions) -> Result<SolveReport, LmiError> {
    if x_start.len() != p.vars.len() {
        return Err(LmiError::PointLength { got: x_start.len(), expected: p.vars.len() });
    }
    let eps = opts.eps_feas;
    let mut x = interior_start(p, x_start);
    let mut iterations = 0;
    if phase_one_slack(p, eps, &x) >= 0.0 {
        let mut q = p.clone();
        for (v, xi) in q.vars.iter_mut().zip(&x) {
            v.init = *xi;
        }
        let pre = solve_feasibility_with(&q, &SolverOptions { center: false, ..opts.clone() })?;
        if !pre.is_feasible() {
            return Ok(pre);
        }
        iterations += pre.iterations;
        x = pre.x;
    }
    let bar = Barrier::from_problem(p, eps, false);
    let nu = bar.nu();
    let mut bar = bar;
    for (v, w) in p.objective.iter().flatten() {
        bar.c[v.0] += w;
    }
    let obj0 = bar.linear(&x);
    let mut s = 1.0 / (1.0 + obj0.abs());
    let mut budget = opts.max_newton;
    let mut status = SolveStatus::Indeterminate;
    let mut message;
    loop {
        let outcome = bar.center(&mut x, s, &mut budget, |z| bar.linear(z) < -1e12 * (1.0 + obj0.abs()));
        match outcome {
            Centering::Converged { .. } => {
                let obj = bar.linear(&x);
                if (nu + nu.sqrt()) / s <= opts.gap_tol * (1.0 + obj.abs()) {
                    status = SolveStatus::StrictlyFeasible;
                    message = format!("gap bound {:.3e}", (nu + nu.sqrt()) / s);
                    break;
                }
                s *= opts.growth;
            }
            Centering::Stopped | Centering::Unbounded => {
                status = SolveStatus::Unbounded;
                message = "objective decreases without bound".into();
                break;
            }
            Centering::Budget => {
                message = "barrier Newton budget exhausted".into();
                break;
            }
            Centering::Stalled => {
                message = "barrier Newton step stalled".into();
                break;
            }
        }
    }
    iterations += opts.max_newton - budget;
    if status == SolveStatus::StrictlyFeasible && !verified(p, eps, &x) {
        status = SolveStatus::Indeterminate;
        message = "a posteriori margin check failed".into();
    }
    let mut rep = report(p, status, x, opts);
    rep.iterations = iterations;
    rep.message = message;
    Ok(rep)
}
