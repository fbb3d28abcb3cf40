//! Time-domain simulation of the closed-loop `(x, e)` cascade and a decay
//! audit against the Lyapunov certificates.

use std::io::{self, Write};

use thiserror::Error;

use crate::model::{assemble_block_matrices, PlantNetwork};
use crate::numerics::{block_diag, rk4_step, Matrix, Vector};
use crate::synthesis::{closed_loop_matrices, Certificates, GainSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("time step {dt} must lie in (0, {horizon}]")]
    TimeStep { dt: f64, horizon: f64 },
    #[error("initial condition has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

/// Uniformly sampled closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub e: Vec<Vector>,
    /// Step at which integration stopped on non-finite or exploding values.
    pub diverged_at: Option<usize>,
    /// State dimension of each subsystem.
    pub state_dims: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Estimates `x̂ = x + e`.
    pub fn estimates(&self) -> Vec<Vector> {
        self.x.iter().zip(&self.e).map(|(x, e)| x + e).collect()
    }

    /// CSV with header `t,x_1_1,…,e_1_1,…` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        for prefix in ["x", "e"] {
            for (i, &d) in self.state_dims.iter().enumerate() {
                for k in 0..d {
                    header.push(format!("{prefix}_{}_{}", i + 1, k + 1));
                }
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for (t, (x, e)) in self.times.iter().zip(self.x.iter().zip(&self.e)) {
            let row: Vec<String> = std::iter::once(*t).chain(x.iter().copied()).chain(e.iter().copied()).map(fmt17).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        if let Some(step) = self.diverged_at {
            writeln!(out, "# diverged at step {step}")?;
        }
        Ok(())
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

const GROWTH_LIMIT: f64 = 1e8;

/// RK4 integration of `d/dt (x, e) = [[A_x, B(K+L)], [0, A_e]] (x, e)` on
/// `[0, horizon]` with step `dt`.
pub fn simulate_closed_loop(
    net: &PlantNetwork,
    gains: &GainSet,
    x0: &Vector,
    e0: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory, SimulateError> {
    if !(dt > 0.0 && dt <= horizon) {
        return Err(SimulateError::TimeStep { dt, horizon });
    }
    let sys = assemble_block_matrices(net);
    let n = sys.n();
    for v in [x0, e0] {
        if v.len() != n {
            return Err(SimulateError::Dimension { got: v.len(), expected: n });
        }
    }
    let m = closed_loop_matrices(net, gains).combined();
    let steps = (horizon / dt).round() as usize;
    let mut z = Vector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(x0);
    z.rows_mut(n, n).copy_from(e0);
    let scale = z.norm().max(f64::MIN_POSITIVE);
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        e: Vec::with_capacity(steps + 1),
        diverged_at: None,
        state_dims: sys.state_dims.clone(),
    };
    for k in 0..=steps {
        traj.times.push(k as f64 * dt);
        traj.x.push(z.rows(0, n).into_owned());
        traj.e.push(z.rows(n, n).into_owned());
        if k == steps {
            break;
        }
        z = rk4_step(&m, &z, dt);
        if z.iter().any(|v| !v.is_finite()) || z.norm() > GROWTH_LIMIT * scale {
            traj.diverged_at = Some(k + 1);
            break;
        }
    }
    Ok(traj)
}

/// Per-step decay audit of `V = xᵀPx` and `W = eᵀP̂e`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// `max_k V(t_{k+1}) / (V(t_k) e^{−2β dt})`; `None` when not audited
    /// (nonzero estimation error).
    pub state_ratio: Option<f64>,
    pub error_ratio: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

fn worst_ratio(values: &[f64], factor: f64) -> Option<f64> {
    let floor = values.first().copied().unwrap_or(0.0) * 1e-280;
    values
        .windows(2)
        .filter(|w| w[0] > floor && w[0] > 0.0)
        .map(|w| w[1] / (w[0] * factor))
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
}

/// Audits exponential decay at rate `beta_min`. The state function is
/// audited only when the estimation error is identically zero, because the
/// error drives the state.
pub fn verify_decay(traj: &Trajectory, certs: &Certificates, beta_min: f64) -> DecayReport {
    verify_decay_with(traj, certs, beta_min, 0.0)
}

/// As [`verify_decay`] with an extra integration-error allowance.
pub fn verify_decay_with(traj: &Trajectory, certs: &Certificates, beta_min: f64, allowance: f64) -> DecayReport {
    let p = block_diag(&certs.p);
    let ph = block_diag(&certs.p_hat);
    let dt = if traj.times.len() > 1 { traj.times[1] - traj.times[0] } else { 0.0 };
    let factor = (-2.0 * beta_min * dt).exp();
    let quad = |m: &Matrix, v: &Vector| v.dot(&(m * v));
    let tolerance = 1e-6 + allowance;
    let error_free = traj.e.iter().all(|e| e.iter().all(|v| *v == 0.0));
    let state_ratio = if error_free { worst_ratio(&traj.x.iter().map(|x| quad(&p, x)).collect::<Vec<_>>(), factor) } else { None };
    let error_ratio = if error_free { None } else { worst_ratio(&traj.e.iter().map(|e| quad(&ph, e)).collect::<Vec<_>>(), factor) };
    let ok = |r: Option<f64>| r.is_none_or(|r| r <= 1.0 + tolerance);
    DecayReport {
        state_ratio,
        error_ratio,
        tolerance,
        pass: traj.diverged_at.is_none() && ok(state_ratio) && ok(error_ratio),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Subsystem;

    fn scalar_net(a: f64) -> PlantNetwork {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        PlantNetwork { subsystems: vec![Subsystem::new("s", s(a), s(1.0), s(1.0))], couplings: vec![], beta: vec![1.0] }
    }

    #[test]
    fn scalar_exponential_and_equality_ratio() {
        let net = scalar_net(-1.0);
        let g = GainSet::zero(&net);
        let tr = simulate_closed_loop(&net, &g, &Vector::from_element(1, 2.0), &Vector::zeros(1), 1.0, 1e-3).unwrap();
        assert!((tr.x.last().unwrap()[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        let certs = Certificates { p: vec![Matrix::identity(1, 1)], p_hat: vec![Matrix::identity(1, 1)], margins: [0.0; 4] };
        let rep = verify_decay(&tr, &certs, 1.0);
        assert!((rep.state_ratio.unwrap() - 1.0).abs() < 1e-9);
        assert!(rep.pass);
    }

    #[test]
    fn csv_header_and_precision() {
        let net = scalar_net(-1.0);
        let tr = simulate_closed_loop(&net, &GainSet::zero(&net), &Vector::from_element(1, 1.0), &Vector::zeros(1), 0.002, 1e-3)
            .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1_1,e_1_1");
        assert_eq!(lines.len(), 4);
        let v: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, tr.x[1][0]);
    }

    #[test]
    fn divergence_truncates() {
        let net = scalar_net(5.0);
        let tr = simulate_closed_loop(&net, &GainSet::zero(&net), &Vector::from_element(1, 1.0), &Vector::zeros(1), 10.0, 1e-2)
            .unwrap();
        assert!(tr.diverged_at.is_some());
        assert!(tr.len() < 1001);
        assert!(simulate_closed_loop(&net, &GainSet::zero(&net), &Vector::zeros(1), &Vector::zeros(1), 1.0, 0.0).is_err());
    }
}
