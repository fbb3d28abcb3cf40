//! Affine linear matrix inequalities over scalar decision variables, and a
//! log-det barrier solver for feasibility and linear objectives.

mod expr;
mod solver;

use std::fmt::Write as _;

use thiserror::Error;

use crate::numerics::{lambda_min_sym_part, sigma_max, Matrix};

pub use expr::MatExpr;
pub use solver::{
    analytic_center, solve_feasibility, solve_feasibility_with, solve_min_linear, SolveReport, SolveStatus,
    SolverOptions,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("constraint `{label}` is not symmetric (defect {defect:.3e})")]
    NotSymmetric { label: String, defect: f64 },
    #[error("constraint `{label}` references undeclared variable {var}")]
    UnknownVariable { label: String, var: usize },
    #[error("variable `{name}` has an empty box [{lo}, {hi}]")]
    EmptyBox { name: String, lo: f64, hi: f64 },
    #[error("bound expression must be 1x1, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("objective references undeclared variable {0}")]
    ObjectiveVariable(usize),
    #[error("point has {got} entries, problem has {expected} variables")]
    PointLength { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// Scalar decision variable with optional box bounds and a starting value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVar {
    pub name: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub init: f64,
}

/// `G₀ + Σ x_k G_k ⪰ margin·I`; strict constraints get
/// `margin = eps_feas·(1 + ‖G₀‖)` at solve time (`eps_feas` when the margin
/// is absolute), the others `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    pub label: String,
    pub g0: Matrix,
    pub coeffs: Vec<(VarId, Matrix)>,
    pub strict: bool,
    pub absolute_margin: bool,
}

impl AffineLmi {
    /// Requires `expr` symmetric (relative tolerance `1e-10`); the stored
    /// blocks are symmetrized exactly.
    pub fn new(label: impl Into<String>, expr: MatExpr, strict: bool) -> Result<Self, LmiError> {
        let label = label.into();
        let defect = expr.symmetry_defect();
        let scale = std::iter::once(expr.constant_part().amax())
            .chain(expr.terms().map(|(_, m)| m.amax()))
            .fold(1.0, f64::max);
        if !(defect <= 1e-10 * scale) {
            return Err(LmiError::NotSymmetric { label, defect });
        }
        let (g0, terms) = expr.into_parts();
        let sym = |m: Matrix| (&m + m.transpose()) * 0.5;
        Ok(AffineLmi {
            label,
            g0: sym(g0),
            coeffs: terms
                .into_iter()
                .filter(|(_, m)| m.iter().any(|v| *v != 0.0))
                .map(|(v, m)| (v, sym(m)))
                .collect(),
            strict,
            absolute_margin: false,
        })
    }

    /// Strict margin `eps_feas` regardless of `‖G₀‖`.
    pub fn with_absolute_margin(mut self) -> Self {
        self.absolute_margin = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.g0.nrows()
    }

    pub fn margin(&self, eps_feas: f64) -> f64 {
        if self.strict && self.absolute_margin {
            eps_feas
        } else if self.strict {
            eps_feas * (1.0 + sigma_max(&self.g0))
        } else {
            0.0
        }
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut g = self.g0.clone();
        for (v, m) in &self.coeffs {
            g += m * x[v.0];
        }
        g
    }
}

/// `λ_min(block) ≥ t`, encoded as `block − t·I ⪰ 0`.
pub fn eig_bound_as_lmi(label: impl Into<String>, block: &MatExpr, t: &MatExpr) -> Result<AffineLmi, LmiError> {
    require_scalar(t)?;
    let n = block.rows();
    AffineLmi::new(label, block.clone() - t.scalar_times(&Matrix::identity(n, n)), false)
}

/// `σ_max(block) ≤ s`, encoded as `[[s·I, W], [Wᵀ, s·I]] ⪰ 0`.
pub fn sv_bound_as_lmi(label: impl Into<String>, block: &MatExpr, s: &MatExpr) -> Result<AffineLmi, LmiError> {
    require_scalar(s)?;
    let (r, c) = block.shape();
    let grid = vec![
        vec![s.scalar_times(&Matrix::identity(r, r)), block.clone()],
        vec![block.transpose(), s.scalar_times(&Matrix::identity(c, c))],
    ];
    AffineLmi::new(label, MatExpr::blocks(&grid), false)
}

fn require_scalar(e: &MatExpr) -> Result<(), LmiError> {
    match e.shape() {
        (1, 1) => Ok(()),
        (rows, cols) => Err(LmiError::NotScalar { rows, cols }),
    }
}

/// Variables, constraints and an optional objective `min cᵀx`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    pub vars: Vec<ScalarVar>,
    pub constraints: Vec<AffineLmi>,
    pub objective: Option<Vec<(VarId, f64)>>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable; the start value is the box midpoint, one unit
    /// inside a one-sided box, or `0`.
    pub fn add_var(&mut self, name: impl Into<String>, lo: Option<f64>, hi: Option<f64>) -> Result<VarId, LmiError> {
        let name = name.into();
        if let (Some(l), Some(h)) = (lo, hi) {
            if !(l < h) {
                return Err(LmiError::EmptyBox { name, lo: l, hi: h });
            }
        }
        let init = match (lo, hi) {
            (Some(l), Some(h)) => 0.5 * (l + h),
            (Some(l), None) => l + 1.0,
            (None, Some(h)) => h - 1.0,
            (None, None) => 0.0,
        };
        self.vars.push(ScalarVar { name, lo, hi, init });
        Ok(VarId(self.vars.len() - 1))
    }

    pub fn free_var(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, None, None).expect("unbounded box is never empty")
    }

    /// `rows × cols` matrix of fresh free variables.
    pub fn matrix_var(&mut self, name: &str, rows: usize, cols: usize) -> MatExpr {
        let vars: Vec<VarId> = (0..rows * cols)
            .map(|k| self.free_var(format!("{name}[{},{}]", k / cols, k % cols)))
            .collect();
        MatExpr::from_vars(rows, cols, &vars)
    }

    /// Symmetric `n × n` matrix of fresh free variables.
    pub fn sym_matrix_var(&mut self, name: &str, n: usize) -> MatExpr {
        let mut vars = Vec::with_capacity(n * (n + 1) / 2);
        for r in 0..n {
            for c in r..n {
                vars.push(self.free_var(format!("{name}[{r},{c}]")));
            }
        }
        MatExpr::from_sym_vars(n, &vars)
    }

    /// Starting values so that `expr` evaluates to `value` (every entry of
    /// `expr` must be a distinct single variable with unit coefficient).
    pub fn set_initial(&mut self, expr: &MatExpr, value: &Matrix) {
        for (v, coeff) in expr.terms() {
            if let Some((idx, _)) = coeff.iter().enumerate().find(|(_, c)| **c != 0.0) {
                let (r, c) = (idx % coeff.nrows(), idx / coeff.nrows());
                self.vars[v.0].init = value[(r, c)];
            }
        }
    }

    pub fn set_initial_scalar(&mut self, var: VarId, value: f64) {
        self.vars[var.0].init = value;
    }

    pub fn add_constraint(&mut self, lmi: AffineLmi) -> Result<(), LmiError> {
        if let Some((v, _)) = lmi.coeffs.iter().find(|(v, _)| v.0 >= self.vars.len()) {
            return Err(LmiError::UnknownVariable { label: lmi.label, var: v.0 });
        }
        self.constraints.push(lmi);
        Ok(())
    }

    pub fn set_objective(&mut self, c: Vec<(VarId, f64)>) -> Result<(), LmiError> {
        if let Some((v, _)) = c.iter().find(|(v, _)| v.0 >= self.vars.len()) {
            return Err(LmiError::ObjectiveVariable(v.0));
        }
        self.objective = Some(c);
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn initial_point(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.init).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> Option<f64> {
        self.objective.as_ref().map(|c| c.iter().map(|(v, w)| w * x[v.0]).sum())
    }

    /// Plain-text dump: a header, the objective, box bounds, then one
    /// `constraint` section per LMI listing `var row col value` triplets of
    /// the upper triangles (`var 0` is the constant block).
    pub fn to_sdpa_text(&self, eps_feas: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "* sdp: {} variables, {} blocks", self.vars.len(), self.constraints.len());
        let _ = writeln!(s, "{}", self.vars.len());
        let _ = writeln!(s, "{}", self.constraints.len());
        let dims: Vec<String> = self.constraints.iter().map(|c| c.dim().to_string()).collect();
        let _ = writeln!(s, "{}", dims.join(" "));
        let mut c = vec![0.0; self.vars.len()];
        for (v, w) in self.objective.iter().flatten() {
            c[v.0] += w;
        }
        let c: Vec<String> = c.iter().map(|w| format!("{w:e}")).collect();
        let _ = writeln!(s, "{}", c.join(" "));
        for (k, v) in self.vars.iter().enumerate() {
            if v.lo.is_some() || v.hi.is_some() {
                let fmt = |b: Option<f64>| b.map_or("-".to_string(), |b| format!("{b:e}"));
                let _ = writeln!(s, "box {} {} {} {}", k + 1, fmt(v.lo), fmt(v.hi), v.name);
            }
        }
        for (b, lmi) in self.constraints.iter().enumerate() {
            let _ = writeln!(s, "constraint {} {} margin {:e}", b + 1, lmi.label, lmi.margin(eps_feas));
            let mut emit = |var: usize, m: &Matrix| {
                for r in 0..m.nrows() {
                    for c in r..m.ncols() {
                        if m[(r, c)] != 0.0 {
                            let _ = writeln!(s, "{} {} {} {:e}", var, r + 1, c + 1, m[(r, c)]);
                        }
                    }
                }
            };
            emit(0, &lmi.g0);
            for (v, m) in &lmi.coeffs {
                emit(v.0 + 1, m);
            }
        }
        s
    }
}

/// Exact `λ_min` of every constraint block at `x`.
pub fn evaluate_constraints(p: &SdpProblem, x: &[f64]) -> Result<Vec<f64>, LmiError> {
    if x.len() != p.vars.len() {
        return Err(LmiError::PointLength { got: x.len(), expected: p.vars.len() });
    }
    Ok(p.constraints.iter().map(|c| lambda_min_sym_part(&c.eval(x))).collect())
}
