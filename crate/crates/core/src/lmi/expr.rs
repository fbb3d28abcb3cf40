use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::numerics::Matrix;

use super::VarId;

/// Matrix whose entries are affine in the scalar decision variables:
/// `constant + Σ_k x_k · coeff_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    constant: Matrix,
    terms: BTreeMap<VarId, Matrix>,
}

impl MatExpr {
    pub fn constant(m: Matrix) -> Self {
        MatExpr { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Matrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Matrix::identity(n, n))
    }

    /// `1×1` expression equal to a single variable.
    pub fn scalar(var: VarId) -> Self {
        Self::term(var, Matrix::from_element(1, 1, 1.0))
    }

    /// `x_var · coeff`.
    pub fn term(var: VarId, coeff: Matrix) -> Self {
        let mut terms = BTreeMap::new();
        let (r, c) = coeff.shape();
        terms.insert(var, coeff);
        MatExpr { constant: Matrix::zeros(r, c), terms }
    }

    /// Matrix whose `(r, c)` entry is variable `vars[r * cols + c]`.
    pub fn from_vars(rows: usize, cols: usize, vars: &[VarId]) -> Self {
        assert_eq!(vars.len(), rows * cols, "variable count");
        let mut e = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut coeff = Matrix::zeros(rows, cols);
                coeff[(r, c)] = 1.0;
                e.add_term(vars[r * cols + c], &coeff);
            }
        }
        e
    }

    /// Symmetric matrix built from its upper triangle, row by row
    /// (`n(n+1)/2` variables).
    pub fn from_sym_vars(n: usize, vars: &[VarId]) -> Self {
        assert_eq!(vars.len(), n * (n + 1) / 2, "variable count");
        let mut e = Self::zeros(n, n);
        let mut k = 0;
        for r in 0..n {
            for c in r..n {
                let mut coeff = Matrix::zeros(n, n);
                coeff[(r, c)] = 1.0;
                coeff[(c, r)] = 1.0;
                e.add_term(vars[k], &coeff);
                k += 1;
            }
        }
        e
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &Matrix {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (VarId, &Matrix)> {
        self.terms.iter().map(|(v, m)| (*v, m))
    }

    pub fn variables(&self) -> impl Iterator<Item = VarId> + '_ {
        self.terms.keys().copied()
    }

    fn add_term(&mut self, var: VarId, coeff: &Matrix) {
        match self.terms.get_mut(&var) {
            Some(m) => *m += coeff,
            None => {
                self.terms.insert(var, coeff.clone());
            }
        }
    }

    fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        MatExpr {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(v, m)| (*v, f(m))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(Matrix::transpose)
    }

    /// `self + selfᵀ`.
    pub fn plus_transpose(&self) -> Self {
        self.map(|m| m + m.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `left · self`.
    pub fn left_mul(&self, left: &Matrix) -> Self {
        self.map(|m| left * m)
    }

    /// `self · right`.
    pub fn right_mul(&self, right: &Matrix) -> Self {
        self.map(|m| m * right)
    }

    /// Scalar expression times a constant matrix: `(e₀ + Σ x_k e_k) · m`.
    pub fn scalar_times(&self, m: &Matrix) -> Self {
        assert_eq!(self.shape(), (1, 1), "scalar expression expected");
        MatExpr {
            constant: m * self.constant[(0, 0)],
            terms: self.terms.iter().map(|(v, c)| (*v, m * c[(0, 0)])).collect(),
        }
    }

    /// Places `self` at `(row, col)` inside a zero `rows × cols` expression.
    pub fn embed(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        let (r, c) = self.shape();
        assert!(row + r <= rows && col + c <= cols, "embedding out of range");
        self.map(|m| {
            let mut out = Matrix::zeros(rows, cols);
            out.view_mut((row, col), (r, c)).copy_from(m);
            out
        })
    }

    /// Assembles a block matrix; every row of blocks must agree in height and
    /// every column in width.
    pub fn blocks(grid: &[Vec<MatExpr>]) -> Self {
        let heights: Vec<usize> = grid.iter().map(|row| row[0].rows()).collect();
        let widths: Vec<usize> = grid[0].iter().map(MatExpr::cols).collect();
        let (rows, cols) = (heights.iter().sum(), widths.iter().sum());
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, blk) in row.iter().enumerate() {
                assert_eq!(blk.shape(), (heights[bi], widths[bj]), "block ({bi},{bj}) shape");
                out = out + blk.embed(r0, c0, rows, cols);
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    /// Value at the point `x`.
    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (v, m) in &self.terms {
            out += m * x[v.0];
        }
        out
    }

    /// Largest symmetry defect over the constant and all coefficients.
    pub fn symmetry_defect(&self) -> f64 {
        if self.rows() != self.cols() {
            return f64::INFINITY;
        }
        std::iter::once(&self.constant)
            .chain(self.terms.values())
            .map(|m| (m - m.transpose()).amax())
            .fold(0.0, f64::max)
    }

    pub(crate) fn into_parts(self) -> (Matrix, BTreeMap<VarId, Matrix>) {
        (self.constant, self.terms)
    }
}

impl Add for MatExpr {
    type Output = MatExpr;

    fn add(mut self, rhs: MatExpr) -> MatExpr {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in sum");
        self.constant += &rhs.constant;
        for (v, m) in &rhs.terms {
            self.add_term(*v, m);
        }
        self
    }
}

impl Sub for MatExpr {
    type Output = MatExpr;

    fn sub(self, rhs: MatExpr) -> MatExpr {
        self + (-rhs)
    }
}

impl Neg for MatExpr {
    type Output = MatExpr;

    fn neg(self) -> MatExpr {
        self.scale(-1.0)
    }
}

impl Mul<&MatExpr> for &Matrix {
    type Output = MatExpr;

    fn mul(self, rhs: &MatExpr) -> MatExpr {
        rhs.left_mul(self)
    }
}

impl Mul<&Matrix> for &MatExpr {
    type Output = MatExpr;

    fn mul(self, rhs: &Matrix) -> MatExpr {
        self.right_mul(rhs)
    }
}
