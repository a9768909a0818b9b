//! Control laws: the known-parameter controller, its certainty-equivalence
//! version with cutting, and a projected RLS baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorError, EstimatorState};
use crate::lp::{dot, Polyhedron};
use crate::plant::PlantState;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("projection did not converge within {sweeps} sweeps")]
    ProjectionNotConverged { sweeps: usize },
    #[error("leading input coefficient is zero")]
    ZeroGain,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// `u_t` solving `b(q⁻¹) u_t = (a(q⁻¹) - 1) y_{t+1}` for `xi = (a, b)`.
pub fn control_optimal(xi: &[f64], n: usize, state: &PlantState) -> f64 {
    let (a, b) = xi.split_at(n);
    let t = state.t();
    let mut num = 0.0;
    for (i, ai) in a.iter().enumerate() {
        num += ai * state.y.get(t - i as i64);
    }
    for (j, bj) in b.iter().enumerate().skip(1) {
        num -= bj * state.u.get(t - j as i64);
    }
    num / b[0]
}

/// Certainty-equivalence input with cutting to
/// `‖G^ξ̂‖ |y_{t+μ-μ̄}^t|`. Returns `(u_t, cut)`.
pub fn control_adaptive(
    est: &mut EstimatorState,
    state: &PlantState,
    mu: usize,
    mu_bar: usize,
) -> Result<(f64, bool), ControlError> {
    let n = est.config().n;
    let u = control_optimal(&est.zeta().xi_hat, n, state);
    let g = est.g_norm()?;
    let t = state.t();
    let bound = g * state.y.window_max(t + mu as i64 - mu_bar as i64, t);
    Ok(cut(u, bound))
}

/// Clamps `u` to `[-bound, bound]`, keeping its sign.
pub fn cut(u: f64, bound: f64) -> (f64, bool) {
    if u.abs() > bound {
        (bound.copysign(u), true)
    } else {
        (u, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    pub xi_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl RlsState {
    pub fn new(xi0: &[f64], p0_scale: f64) -> Self {
        let d = xi0.len();
        RlsState {
            xi_hat: DVector::from_column_slice(xi0),
            p: DMatrix::identity(d, d) * p0_scale,
        }
    }

    pub fn xi(&self) -> Vec<f64> {
        self.xi_hat.iter().copied().collect()
    }
}

/// One RLS step followed by Euclidean projection onto `xi_poly`.
pub fn rls_step(
    rls: &RlsState,
    phi: &[f64],
    y_next: f64,
    xi_poly: &Polyhedron,
) -> Result<RlsState, ControlError> {
    let phi = DVector::from_column_slice(phi);
    let p_phi = &rls.p * &phi;
    let gain = &p_phi / (1.0 + phi.dot(&p_phi));
    let err = y_next - rls.xi_hat.dot(&phi);
    let raw = &rls.xi_hat + &gain * err;
    let d = phi.len();
    let mut p = (DMatrix::identity(d, d) - &gain * phi.transpose()) * &rls.p;
    p = (&p + p.transpose()) * 0.5;
    let projected = project_onto_polytope(raw.as_slice(), xi_poly)?;
    Ok(RlsState {
        xi_hat: DVector::from_vec(projected),
        p,
    })
}

pub const PROJECTION_TOL: f64 = 1e-10;
pub const PROJECTION_SWEEPS: usize = 10_000;
/// Feasibility accepted when the sweep limit is reached.
pub const PROJECTION_FEAS_TOL: f64 = 1e-8;

/// Euclidean projection onto `{z: A z >= c}` by Dykstra's method.
pub fn project_onto_polytope(x: &[f64], poly: &Polyhedron) -> Result<Vec<f64>, ControlError> {
    if poly.contains(x, 0.0) {
        return Ok(x.to_vec());
    }
    let d = x.len();
    let k = poly.num_rows();
    let mut z = x.to_vec();
    let mut corr = vec![vec![0.0; d]; k];
    for _ in 0..PROJECTION_SWEEPS {
        let prev = z.clone();
        // The sweep end point can sit still while corrections unwind, so
        // both must settle.
        let mut corr_change = 0.0;
        for (i, (a, c)) in poly.rows().enumerate() {
            let aa = dot(a, a);
            if aa == 0.0 {
                continue;
            }
            let w: Vec<f64> = z.iter().zip(&corr[i]).map(|(zi, ci)| zi + ci).collect();
            let viol = c - dot(a, &w);
            let s = viol.max(0.0) / aa;
            for j in 0..d {
                z[j] = w[j] + s * a[j];
                let next = w[j] - z[j];
                corr_change += (next - corr[i][j]) * (next - corr[i][j]);
                corr[i][j] = next;
            }
        }
        let moved = z
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if moved < PROJECTION_TOL && corr_change.sqrt() < PROJECTION_TOL {
            return Ok(z);
        }
    }
    if poly.contains(&z, PROJECTION_FEAS_TOL) {
        return Ok(z);
    }
    Err(ControlError::ProjectionNotConverged {
        sweeps: PROJECTION_SWEEPS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerKind {
    /// Known-parameter controller with the true plant coefficients.
    OptimalKnown,
    /// Certainty-equivalence controller driven by the set-membership estimate.
    AdaptiveOptimal,
    /// Certainty-equivalence controller driven by projected RLS.
    RlsBaseline {
        #[serde(default = "default_p0_scale")]
        p0_scale: f64,
    },
}

fn default_p0_scale() -> f64 {
    0.001
}
