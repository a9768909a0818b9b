//! Dead-zone set-membership estimation of ζ = (ξ, δ^w, δ).
//!
//! The feasible set `Z_t ⊂ R^{n+m+2}` starts as `Z_0 = Ξ × {δ^w >= 0} ×
//! {0 <= δ <= δ̄}` and gains one halfspace `ψ·ζ >= ν` whenever the current
//! estimate violates the newest data inequality by more than `ε|ψ|`.
//! The estimate is then re-optimised as the minimiser of
//! `I(ζ) = δ^w / (1 - δ)` over `Z_t`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{dot, lfp_minimize, lp_minimize, norm, Affine, LpError, LpStatus, Polyhedron};
use crate::plant::{sign, PlantParams, PlantState};
use crate::poly::{controller_norm, NormOptions, PolyError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("data contradict the prior set at t = {t}")]
    Falsified { t: i64 },
    #[error("dead-zone schedule undefined: need delta_bar < varkappa < 1, kappa > 1, E > 0")]
    ScheduleUndefined,
    #[error("invalid estimator setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// ζ̂ = (ξ̂, δ̂^w, δ̂).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateVector {
    pub xi_hat: Vec<f64>,
    pub delta_w_hat: f64,
    pub delta_hat: f64,
}

impl EstimateVector {
    pub fn from_slice(z: &[f64]) -> Self {
        let d = z.len();
        EstimateVector {
            xi_hat: z[..d - 2].to_vec(),
            delta_w_hat: z[d - 2],
            delta_hat: z[d - 1],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = self.xi_hat.clone();
        z.push(self.delta_w_hat);
        z.push(self.delta_hat);
        z
    }

    /// `I(ζ) = δ^w / (1 - δ)`.
    pub fn criterion(&self) -> f64 {
        criterion(self.delta_w_hat, self.delta_hat)
    }
}

pub fn criterion(delta_w: f64, delta: f64) -> f64 {
    if delta_w == 0.0 {
        0.0
    } else {
        delta_w / (1.0 - delta)
    }
}

/// `K = (1 + δ^w (2 + G)) / (1 - δ - ε (2 + G))²`.
pub fn accuracy_constant(delta_w: f64, delta: f64, g_norm: f64, eps: f64) -> f64 {
    let den = 1.0 - delta - eps * (2.0 + g_norm);
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 + delta_w * (2.0 + g_norm)) / (den * den)
}

/// `I(ζ^ε)` for `ζ^ε = (ξ, δ^w + ε, δ + ε (2 + G))`.
pub fn inflated_criterion(delta_w: f64, delta: f64, g_norm: f64, eps: f64) -> f64 {
    let den = 1.0 - delta - eps * (2.0 + g_norm);
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (delta_w + eps) / den
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    Fixed {
        eps: f64,
    },
    /// Accuracy `E` while `I(ζ) = 0`, relative accuracy `kappa` after.
    Adaptive {
        e: f64,
        kappa: f64,
        varkappa: f64,
    },
}

/// Relative slack on `I <= I*` when breaking ties.
const FACE_TOL: f64 = 1e-13;

/// Smallest dead zone the schedule may produce.
pub const EPS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub n: usize,
    pub m: usize,
    /// Ξ over `n + m` coefficients.
    pub xi_polytope: Polyhedron,
    pub delta_bar: f64,
    pub eps_mode: EpsMode,
    pub norm_options: NormOptions,
    /// On infeasibility, relax δ̄ toward 1 (at most this many halvings of
    /// the gap) instead of failing.
    pub widen_on_falsified: u32,
}

/// Regressor data for one new measurement `y_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorRecord {
    pub phi: Vec<f64>,
    pub eta: f64,
    /// `(η φ, 1, p_{t+1})`.
    pub psi: Vec<f64>,
    /// `η y_{t+1}`.
    pub nu: f64,
    pub p_next: f64,
}

/// Builds `ψ_{t+1}, ν_{t+1}` for a state at time `t` with `u_t` applied.
pub fn build_regressor(
    state: &PlantState,
    y_next: f64,
    zeta: &EstimateVector,
    n: usize,
    mu_bar: usize,
) -> RegressorRecord {
    let m = zeta.xi_hat.len() - n;
    let phi = state.regressor(n, m);
    let t = state.t();
    let p_next = state.y.window_max(t + 1 - mu_bar as i64, t);
    regressor_from_parts(phi, y_next, p_next, &zeta.xi_hat)
}

pub fn regressor_from_parts(phi: Vec<f64>, y_next: f64, p_next: f64, xi_hat: &[f64]) -> RegressorRecord {
    let eta = sign(y_next - dot(&phi, xi_hat));
    let mut psi: Vec<f64> = phi.iter().map(|x| eta * x).collect();
    psi.push(1.0);
    psi.push(p_next);
    RegressorRecord {
        phi,
        eta,
        psi,
        nu: eta * y_next,
        p_next,
    }
}

/// True iff `ψ·ζ < ν - ε|ψ|`.
pub fn dead_zone_violated(rec: &RegressorRecord, zeta: &EstimateVector, eps: f64) -> bool {
    dot(&rec.psi, &zeta.to_vec()) < rec.nu - eps * norm(&rec.psi)
}

/// One accepted update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    /// Time of the measurement that triggered the update.
    pub t: i64,
    /// Dead zone in force when the violation was detected.
    pub eps: f64,
    pub previous: Vec<f64>,
    pub zeta: Vec<f64>,
    pub criterion: f64,
}

#[derive(Debug, Clone)]
pub struct EstimatorState {
    config: EstimatorConfig,
    z: Polyhedron,
    zeta: EstimateVector,
    eps: f64,
    update_count: usize,
    norm_cache: HashMap<Vec<u64>, f64>,
    delta_bar: f64,
    delta_bar_row: usize,
    history: Vec<UpdateEvent>,
}

impl EstimatorState {
    pub fn new(config: EstimatorConfig, xi0: &[f64]) -> Result<Self, EstimatorError> {
        let nm = config.n + config.m;
        if config.xi_polytope.dim() != nm || xi0.len() != nm {
            return Err(EstimatorError::Invalid(format!(
                "expected {nm} coefficients, polytope has {}, xi0 has {}",
                config.xi_polytope.dim(),
                xi0.len()
            )));
        }
        if !(0.0..1.0).contains(&config.delta_bar) {
            return Err(EstimatorError::Invalid("delta_bar must lie in [0, 1)".into()));
        }
        if !config.xi_polytope.contains(xi0, 1e-9) {
            return Err(EstimatorError::Invalid("xi0 is outside the prior polytope".into()));
        }
        match config.eps_mode {
            EpsMode::Fixed { eps } if !(eps > 0.0) => {
                return Err(EstimatorError::Invalid("fixed eps must be positive".into()))
            }
            EpsMode::Adaptive { e, kappa, varkappa } => {
                if !(e > 0.0 && kappa > 1.0 && varkappa > config.delta_bar && varkappa < 1.0) {
                    return Err(EstimatorError::ScheduleUndefined);
                }
            }
            _ => {}
        }
        let (z, delta_bar_row) = prior_set(&config.xi_polytope, config.delta_bar);
        let zeta = EstimateVector {
            xi_hat: xi0.to_vec(),
            delta_w_hat: 0.0,
            delta_hat: 0.0,
        };
        let mut state = EstimatorState {
            delta_bar: config.delta_bar,
            z,
            zeta,
            eps: match config.eps_mode {
                EpsMode::Fixed { eps } => eps,
                EpsMode::Adaptive { .. } => f64::NAN,
            },
            update_count: 0,
            norm_cache: HashMap::new(),
            delta_bar_row,
            history: Vec::new(),
            config,
        };
        if matches!(state.config.eps_mode, EpsMode::Adaptive { .. }) {
            state.eps = 0.0;
            state.eps = state.adaptive_eps()?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn polyhedron(&self) -> &Polyhedron {
        &self.z
    }

    pub fn zeta(&self) -> &EstimateVector {
        &self.zeta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn delta_bar(&self) -> f64 {
        self.delta_bar
    }

    pub fn history(&self) -> &[UpdateEvent] {
        &self.history
    }

    pub fn criterion(&self) -> f64 {
        self.zeta.criterion()
    }

    /// ‖G^ξ̂‖, memoised on the bit pattern of ξ̂.
    pub fn g_norm_of(&mut self, xi: &[f64]) -> Result<f64, EstimatorError> {
        let key: Vec<u64> = xi.iter().map(|x| x.to_bits()).collect();
        if let Some(&g) = self.norm_cache.get(&key) {
            return Ok(g);
        }
        let g = controller_norm(xi, self.config.n, &self.config.norm_options)?.l1_norm;
        self.norm_cache.insert(key, g);
        Ok(g)
    }

    /// ‖G^ξ̂_t‖ for the current estimate.
    pub fn g_norm(&mut self) -> Result<f64, EstimatorError> {
        let xi = self.zeta.xi_hat.clone();
        self.g_norm_of(&xi)
    }

    /// Regressor for a state at time `t` with `u_t` applied.
    pub fn regressor(&self, state: &PlantState, y_next: f64, mu_bar: usize) -> RegressorRecord {
        build_regressor(state, y_next, &self.zeta, self.config.n, mu_bar)
    }

    /// Applies one measurement: updates when the dead zone is violated.
    /// Returns whether an update happened.
    pub fn observe(&mut self, rec: &RegressorRecord, t: i64) -> Result<bool, EstimatorError> {
        if dead_zone_violated(rec, &self.zeta, self.eps) {
            self.update(rec, t)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// `Z ← Z ∩ {ψ·ζ >= ν}` and `ζ ← argmin_Z I`.
    pub fn update(&mut self, rec: &RegressorRecord, t: i64) -> Result<(), EstimatorError> {
        self.z.push(&rec.psi, rec.nu)?;
        let d = self.z.dim();
        let mut num = vec![0.0; d];
        num[d - 2] = 1.0;
        let mut den = vec![0.0; d];
        den[d - 1] = -1.0;
        let num = Affine::new(num, 0.0);
        let den = Affine::new(den, 1.0);
        let mut widenings = 0;
        let sol = loop {
            let sol = lfp_minimize(&num, &den, &self.z)?;
            match sol.status {
                LpStatus::Optimal => break sol,
                LpStatus::Infeasible | LpStatus::Unbounded => {
                    if widenings >= self.config.widen_on_falsified {
                        return Err(EstimatorError::Falsified { t });
                    }
                    widenings += 1;
                    self.delta_bar = 0.5 * (1.0 + self.delta_bar);
                    self.z.set_rhs(self.delta_bar_row, -self.delta_bar);
                }
            }
        };
        let z = sol.point.expect("optimal solution has a point");
        let z = self.least_delta_on_optimal_face(z)?;
        let previous = self.zeta.to_vec();
        self.zeta = EstimateVector::from_slice(&z);
        self.update_count += 1;
        self.history.push(UpdateEvent {
            t,
            eps: self.eps,
            previous,
            zeta: z,
            criterion: self.zeta.criterion(),
        });
        Ok(())
    }

    /// Among minimisers of `I` (ties are common while `δ^w = 0`), the one
    /// with the smallest `δ`. Falls back to `z` if the face LP fails.
    fn least_delta_on_optimal_face(&self, z: Vec<f64>) -> Result<Vec<f64>, EstimatorError> {
        let d = self.z.dim();
        let i_star = criterion(z[d - 2], z[d - 1]);
        // δ^w + I* δ <= I*, with a little room for the LFP's rounding.
        let mut row = vec![0.0; d];
        row[d - 2] = -1.0;
        row[d - 1] = -i_star;
        let face = self.z.intersect(&row, -i_star * (1.0 + FACE_TOL) - FACE_TOL)?;
        let mut objective = vec![0.0; d];
        objective[d - 1] = 1.0;
        let sol = lp_minimize(&objective, &face)?;
        Ok(match sol.point {
            Some(p) if sol.is_optimal() && p[d - 1] <= z[d - 1] => p,
            _ => z,
        })
    }

    /// Dead zone from the schedule at the current estimate. `K` is taken
    /// at the dead zone currently in force.
    pub fn adaptive_eps(&mut self) -> Result<f64, EstimatorError> {
        let EpsMode::Adaptive { e, kappa, varkappa } = self.config.eps_mode else {
            return Ok(self.eps);
        };
        if varkappa <= self.delta_bar {
            return Err(EstimatorError::ScheduleUndefined);
        }
        let g = self.g_norm()?;
        let (dw, d) = (self.zeta.delta_w_hat, self.zeta.delta_hat);
        let eps = if self.zeta.criterion() == 0.0 {
            (1.0 - d) / (1.0 + e * (2.0 + g)) * e
        } else {
            let k = accuracy_constant(dw, d, g, self.eps);
            let first = (varkappa - self.delta_bar) / (2.0 + g);
            let second = (kappa - 1.0) * self.zeta.criterion() / k;
            first.min(second)
        };
        Ok(eps.max(EPS_FLOOR))
    }

    /// Recomputes ε in adaptive mode; no-op for a fixed dead zone.
    pub fn refresh_eps(&mut self) -> Result<f64, EstimatorError> {
        self.eps = self.adaptive_eps()?;
        Ok(self.eps)
    }
}

/// `Z_0` and the index of its `-δ >= -δ̄` row.
fn prior_set(xi_polytope: &Polyhedron, delta_bar: f64) -> (Polyhedron, usize) {
    let nm = xi_polytope.dim();
    let d = nm + 2;
    let mut z = Polyhedron::new(d);
    let mut row = vec![0.0; d];
    for (a, c) in xi_polytope.rows() {
        row[..nm].copy_from_slice(a);
        z.push(&row, c).unwrap();
    }
    let e = |i: usize, s: f64, c: f64, z: &mut Polyhedron| {
        let mut r = vec![0.0; d];
        r[i] = s;
        z.push(&r, c).unwrap();
    };
    e(nm, 1.0, 0.0, &mut z);
    e(nm + 1, 1.0, 0.0, &mut z);
    e(nm + 1, -1.0, -delta_bar, &mut z);
    let idx = z.num_rows() - 1;
    (z, idx)
}

/// Recorded input/output data and the residual test defining Θ_t.
pub mod diagnostics {
    use super::*;

    /// `â(q⁻¹) y_{k+1} - b̂(q⁻¹) u_k` for `xi_hat = (â, b̂)`.
    pub fn residual(state: &PlantState, a_hat: &[f64], b_hat: &[f64], k: i64) -> f64 {
        let mut r = state.y.get(k + 1);
        for (i, ai) in a_hat.iter().enumerate() {
            r += ai * state.y.get(k - i as i64);
        }
        for (j, bj) in b_hat.iter().enumerate() {
            r -= bj * state.u.get(k - j as i64);
        }
        r
    }

    /// Largest `|residual|` over `k ∈ [from, to]`.
    pub fn max_residual(state: &PlantState, a_hat: &[f64], b_hat: &[f64], from: i64, to: i64) -> f64 {
        (from..=to)
            .map(|k| residual(state, a_hat, b_hat, k).abs())
            .fold(0.0, f64::max)
    }

    /// Whether `θ̂` is unfalsified on `k ∈ [from, to]`:
    /// `|â y_{k+1} - b̂ u_k| <= δ̂^w + δ̂^y p^y_{k+1} + δ̂^u p^u_{k+1}`.
    ///
    /// `state` must hold outputs through `to + 1` and inputs through `to`.
    pub fn membership_diagnostic(theta_hat: &PlantParams, state: &PlantState, from: i64, to: i64) -> bool {
        let mu = theta_hat.mu as i64;
        (from..=to).all(|k| {
            let r = residual(state, &theta_hat.a, &theta_hat.b, k).abs();
            let py = state.y.window_max(k + 1 - mu, k);
            let pu = state.u.window_max(k + 1 - mu, k);
            let bound = theta_hat.delta_w + theta_hat.delta_y * py + theta_hat.delta_u * pu;
            r <= bound * (1.0 + 1e-12) + 1e-12
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Falsification {
    Ok,
    Falsified,
}

/// Assumption check `I(ζ_t) <= J_*`.
pub fn falsification_check(criterion: f64, j_star: f64) -> Falsification {
    if criterion > j_star {
        Falsification::Falsified
    } else {
        Falsification::Ok
    }
}
