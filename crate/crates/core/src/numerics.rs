//! Dense small-matrix kernels shared by every other module.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; the matrices in this
//! crate are at most a few dozen rows, so the routines favour robustness
//! (full symmetric eigen-decompositions, Schur forms, sign iterations) over
//! raw speed.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative symmetry tolerance applied before symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not symmetric: defect {defect:.3e} exceeds {tolerance:.3e}")]
    NotSymmetric { defect: f64, tolerance: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not positive definite: leading minor {minor} has pivot {pivot:.3e}")]
    NotPositiveDefinite { minor: usize, pivot: f64 },
    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("no hyperbolic splitting: eigenvalue with real part {real_part:.3e} lies on the imaginary axis")]
    NoHyperbolicSplitting { real_part: f64 },
    #[error("expected {expected} stable eigenvalues, found {found}")]
    StableCount { expected: usize, found: usize },
    #[error("integration diverged at step {step}")]
    Divergence { step: usize },
    #[error("matrix is singular")]
    Singular,
}

/// Extremes of a spectrum; each entry is optional depending on the query.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectralSummary {
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub sigma_max: Option<f64>,
}

impl SpectralSummary {
    /// Full summary of a symmetric matrix.
    pub fn of_symmetric(m: &Matrix) -> Result<Self, NumericsError> {
        let (lo, hi) = sym_eig_extremes(m)?;
        Ok(SpectralSummary {
            lambda_min: Some(lo),
            lambda_max: Some(hi),
            sigma_max: Some(lo.abs().max(hi.abs())),
        })
    }
}

fn require_square(m: &Matrix) -> Result<(), NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

/// Checks `m` against the relative symmetry tolerance and returns `(m + mᵀ)/2`.
pub fn symmetrized(m: &Matrix) -> Result<Matrix, NumericsError> {
    require_square(m)?;
    let norm = m.norm();
    let defect = (m - m.transpose()).norm();
    let tolerance = SYMMETRY_TOL * norm.max(f64::MIN_POSITIVE);
    if defect > tolerance && defect > 0.0 {
        return Err(NumericsError::NotSymmetric { defect, tolerance });
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(m: &Matrix) -> Result<(f64, f64), NumericsError> {
    let s = symmetrized(m)?;
    if s.nrows() == 0 {
        return Err(NumericsError::Dimension("empty matrix has no eigenvalues".into()));
    }
    let eig = SymmetricEigen::new(s).eigenvalues;
    Ok((eig.min(), eig.max()))
}

/// Smallest eigenvalue of the symmetric part of `m`, with no symmetry check.
///
/// Used where the caller constructed `m` to be symmetric up to rounding.
pub fn lambda_min_sym_part(m: &Matrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn lambda_max_sym_part(m: &Matrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.max()
}

/// Largest singular value (induced 2-norm). Empty matrices have norm 0.
pub fn sigma_max(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    SVD::new(m.clone(), false, false).singular_values.max()
}

/// Lower Cholesky factor, reporting the first failing leading minor (1-based).
pub fn cholesky_lower(m: &Matrix) -> Result<Matrix, NumericsError> {
    let s = symmetrized(m)?;
    let n = s.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(NumericsError::NotPositiveDefinite { minor: j + 1, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

/// Solves `M X = B` for symmetric positive definite `M`.
pub fn spd_solve(m: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    if b.nrows() != m.nrows() {
        return Err(NumericsError::Dimension(format!(
            "right-hand side has {} rows, matrix is {}x{}",
            b.nrows(),
            m.nrows(),
            m.ncols()
        )));
    }
    let l = cholesky_lower(m)?;
    let y = l
        .solve_lower_triangular(b)
        .ok_or(NumericsError::Singular)?;
    l.transpose()
        .solve_upper_triangular(&y)
        .ok_or(NumericsError::Singular)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix, NumericsError> {
    let inv = spd_solve(m, &Matrix::identity(m.nrows(), m.nrows()))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

const SCHUR_MAX_ITER: usize = 10_000;

/// All eigenvalues of a general square matrix (Hessenberg + shifted QR).
pub fn eigenvalues(m: &Matrix) -> Result<Vec<nalgebra::Complex<f64>>, NumericsError> {
    require_square(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(NumericsError::NoConvergence { iterations: SCHUR_MAX_ITER })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Maximum real part over the spectrum.
pub fn spectral_abscissa(m: &Matrix) -> Result<f64, NumericsError> {
    let eig = eigenvalues(m)?;
    if eig.is_empty() {
        return Err(NumericsError::Dimension("empty matrix has no spectrum".into()));
    }
    Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Matrix sign function by the determinant-scaled Newton iteration.
fn matrix_sign(m: &Matrix) -> Result<Matrix, NumericsError> {
    let n = m.nrows();
    let mut s = m.clone();
    for _ in 0..100 {
        let lu = s.clone().lu();
        let det = lu.determinant();
        if !det.is_finite() || det == 0.0 {
            return Err(NumericsError::Singular);
        }
        let inv = lu.try_inverse().ok_or(NumericsError::Singular)?;
        let c = det.abs().powf(-1.0 / n as f64);
        let c = if c.is_finite() && c > 0.0 { c } else { 1.0 };
        let next = (&s * c + inv / c) * 0.5;
        let change = (&next - &s).norm();
        let scale = next.norm();
        s = next;
        if change <= 1e-14 * scale {
            return Ok(s);
        }
    }
    // Converged to working precision in practice; the last iterate is kept.
    Ok(s)
}

/// Orthonormal basis (n×dim) of the invariant subspace belonging to the
/// eigenvalues with negative real part.
pub fn stable_invariant_subspace(m: &Matrix, dim: usize) -> Result<Matrix, NumericsError> {
    require_square(m)?;
    let n = m.nrows();
    let eig = eigenvalues(m)?;
    let scale = 1.0 + m.norm();
    let axis_tol = 1e-10 * scale;
    if let Some(z) = eig.iter().find(|z| z.re.abs() <= axis_tol) {
        return Err(NumericsError::NoHyperbolicSplitting { real_part: z.re });
    }
    let found = eig.iter().filter(|z| z.re < 0.0).count();
    if found != dim {
        return Err(NumericsError::StableCount { expected: dim, found });
    }
    if dim == 0 {
        return Ok(Matrix::zeros(n, 0));
    }
    let sign = matrix_sign(m)?;
    let projector = (Matrix::identity(n, n) - sign) * 0.5;
    let q = projector.col_piv_qr().q();
    Ok(q.columns(0, dim).into_owned())
}

/// Solves the Lyapunov equation `Aᵀ X + X A + Q = 0` through the Kronecker form.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix, NumericsError> {
    require_square(a)?;
    let n = a.nrows();
    if q.nrows() != n || q.ncols() != n {
        return Err(NumericsError::Dimension("Q must match A".into()));
    }
    let id = Matrix::identity(n, n);
    // vec(AᵀX) = (I ⊗ Aᵀ) vec X, vec(XA) = (Aᵀ ⊗ I) vec X
    let op = id.kronecker(&a.transpose()) + a.transpose().kronecker(&id);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = op.lu().solve(&rhs).ok_or(NumericsError::Singular)?;
    let x = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// One classical RK4 step of `ẋ = M x`.
pub fn rk4_step(field: &Matrix, x: &Vector, dt: f64) -> Vector {
    let k1 = field * x;
    let k2 = field * (x + &k1 * (0.5 * dt));
    let k3 = field * (x + &k2 * (0.5 * dt));
    let k4 = field * (x + &k3 * dt);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Fixed-step RK4 trajectory of `ẋ = M x`, including the initial state.
pub fn rk4_integrate(
    field: &Matrix,
    x0: &Vector,
    dt: f64,
    steps: usize,
) -> Result<Vec<Vector>, NumericsError> {
    require_square(field)?;
    if field.nrows() != x0.len() {
        return Err(NumericsError::Dimension(format!(
            "state has {} entries, field is {}x{}",
            x0.len(),
            field.nrows(),
            field.ncols()
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(NumericsError::Dimension(format!("time step must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    let mut x = x0.clone();
    for step in 1..=steps {
        x = rk4_step(field, &x, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::Divergence { step });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Builds a block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Numerical rank with threshold `max_dim · σ_max · 1e-10`.
pub fn rank(m: &Matrix) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = m.nrows().max(m.ncols()) as f64 * smax * 1e-10;
    sv.iter().filter(|&&s| s > tol).count()
}
