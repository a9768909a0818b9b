//! Closed-loop runs: configuration, the per-step loop and run summaries.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{control_adaptive, control_optimal, rls_step, ControlError, ControllerKind, RlsState};
use crate::estimator::{
    accuracy_constant, falsification_check, inflated_criterion, EpsMode, EstimatorConfig,
    EstimatorError, EstimatorState, Falsification, UpdateEvent,
};
use crate::lp::Polyhedron;
use crate::plant::{
    default_worst_case_windows, random_initial_outputs, DisturbanceGenerator, DisturbanceKind,
    DisturbanceSpec, PlantError, PlantParams, PlantState, WorstCaseAux,
};
use crate::poly::{controller_norm, ImpulseNorm, NormOptions, PolyError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("disturbance {v} exceeds its envelope {envelope} at t = {t}")]
    Envelope { t: i64, v: f64, envelope: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// `δ^y + δ^u ‖G^ξ‖ >= 1`: no controller robustly stabilises the plant.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("robustly unstabilizable: delta_y + delta_u * |G| = {gain} >= 1")]
pub struct RobustlyUnstabilizable {
    pub gain: f64,
}

/// `J(θ) = δ^w / (1 - δ^y - δ^u ‖G^ξ‖)`.
pub fn compute_j(params: &PlantParams, norm: &ImpulseNorm) -> Result<f64, RobustlyUnstabilizable> {
    let gain = params.delta_y + params.delta_u * norm.l1_norm;
    if gain >= 1.0 {
        return Err(RobustlyUnstabilizable { gain });
    }
    Ok(params.delta_w / (1.0 - gain))
}

/// Plant coefficients used for the sign of worst-case disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorstCaseReference {
    #[default]
    TruePlant,
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialOutputs {
    Zero,
    /// Uniform on [-1, 1], RNG stream 1 of the run seed.
    #[default]
    Uniform,
    Given {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub plant: PlantParams,
    pub xi_polytope: Polyhedron,
    pub xi0: Vec<f64>,
    pub controller: ControllerKind,
    pub disturbance: DisturbanceKind,
    pub worst_case_reference: WorstCaseReference,
    pub initial_outputs: InitialOutputs,
    pub horizon: usize,
    pub mu_bar: usize,
    pub eps_mode: EpsMode,
    pub delta_bar: f64,
    pub widen_on_falsified: u32,
    pub j_star: Option<f64>,
    pub seed: u64,
    /// Fraction of the horizon, counted from the end, treated as steady state.
    pub steady_fraction: f64,
    pub norm_options: NormOptions,
}

pub const STUDY_A: [f64; 4] = [-4.2222, 6.9290, -5.2469, 1.5432];
pub const STUDY_B: [f64; 3] = [2.0, -3.3333, 1.3889];

pub fn study_plant() -> PlantParams {
    PlantParams {
        a: STUDY_A.to_vec(),
        b: STUDY_B.to_vec(),
        delta_w: 1.0,
        delta_y: 0.2,
        delta_u: 0.02,
        mu: 20,
    }
}

/// Ξ: `|a_i| <= 20`, `|b_j| <= 10`, `b_1 >= 0.1`, `b_1 - b_3 >= 0.01`,
/// `b_1 - b_2 + b_3 >= 0.01`, `b_1 + b_2 + b_3 >= 0.01`.
pub fn study_xi_polytope() -> Polyhedron {
    let mut lo = vec![-20.0; 4];
    lo.extend([-10.0; 3]);
    let mut hi = vec![20.0; 4];
    hi.extend([10.0; 3]);
    let mut p = Polyhedron::boxed(&lo, &hi);
    let rows: [([f64; 3], f64); 4] = [
        ([1.0, 0.0, 0.0], 0.1),
        ([1.0, 0.0, -1.0], 0.01),
        ([1.0, -1.0, 1.0], 0.01),
        ([1.0, 1.0, 1.0], 0.01),
    ];
    for (b, c) in rows {
        let mut r = vec![0.0; 7];
        r[4..].copy_from_slice(&b);
        p.push(&r, c).expect("dimension 7");
    }
    p
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            plant: study_plant(),
            xi_polytope: study_xi_polytope(),
            xi0: vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            controller: ControllerKind::AdaptiveOptimal,
            disturbance: DisturbanceKind::WorstCaseSign {
                base: Box::new(DisturbanceKind::RandomUniform),
                windows: default_worst_case_windows(),
            },
            worst_case_reference: WorstCaseReference::TruePlant,
            initial_outputs: InitialOutputs::Uniform,
            horizon: 2000,
            mu_bar: 40,
            eps_mode: EpsMode::Fixed { eps: 0.001 },
            delta_bar: 0.9,
            widen_on_falsified: 0,
            j_star: None,
            seed: 1,
            steady_fraction: 0.25,
            norm_options: NormOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |s: String| Err(ExperimentError::Config(s));
        self.plant.validate()?;
        let nm = self.plant.n() + self.plant.m();
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.mu_bar < 2 * self.plant.mu {
            return bad(format!("mu_bar = {} is below 2 mu = {}", self.mu_bar, 2 * self.plant.mu));
        }
        if self.xi_polytope.dim() != nm || self.xi0.len() != nm {
            return bad(format!("coefficient polytope and xi0 must have dimension {nm}"));
        }
        if let EpsMode::Fixed { eps } = self.eps_mode {
            if !(eps > 0.0) {
                return bad("eps must be positive".into());
            }
        }
        if let Some(j) = self.j_star {
            if !(j > 0.0) {
                return bad("j_star must be positive".into());
            }
        }
        if !(self.steady_fraction > 0.0 && self.steady_fraction <= 1.0) {
            return bad("steady_fraction must lie in (0, 1]".into());
        }
        if let InitialOutputs::Given { values } = &self.initial_outputs {
            if values.len() != self.plant.n() {
                return bad(format!("expected {} initial outputs", self.plant.n()));
            }
        }
        if let ControllerKind::RlsBaseline { p0_scale } = self.controller {
            if !(p0_scale > 0.0) {
                return bad("p0_scale must be positive".into());
            }
        }
        Ok(())
    }

    fn initial_y(&self) -> Vec<f64> {
        match &self.initial_outputs {
            InitialOutputs::Zero => vec![0.0; self.plant.n()],
            InitialOutputs::Uniform => random_initial_outputs(self.seed, self.plant.n()),
            InitialOutputs::Given { values } => values.clone(),
        }
    }

    /// First output index of the steady-state window.
    pub fn steady_start(&self) -> i64 {
        let len = ((self.horizon as f64) * self.steady_fraction).round() as i64;
        self.horizon as i64 - len.max(1) + 1
    }
}

/// One row per measurement. Row `t` holds `y_t`, the disturbance `v_t`
/// and window `p_t` that produced it, the input `u_{t-1}` applied before
/// it, and the estimator state after processing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: i64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
    pub eta: f64,
    pub update: bool,
    pub cut: bool,
    pub eps: f64,
    pub i_zeta: f64,
    /// New ζ on update rows.
    pub zeta: Option<Vec<f64>>,
    pub worst_case: bool,
    /// `|u_{t-1}| <= ‖G^ξ‖ |y_{t-1+μ-μ̄}^{t-1}|` for the true ξ.
    pub input_bounded: bool,
    /// `|v_t| <= δ^w + (δ^y + δ^u ‖G^ξ‖) p_t`: the true ζ satisfies row t.
    pub truth_consistent: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `None` when the plant is robustly unstabilizable.
    pub j_theta: Option<f64>,
    pub g_norm_true: f64,
    pub i_final: f64,
    pub update_count: usize,
    pub last_update_t: Option<i64>,
    pub cut_count: usize,
    pub max_abs_y: f64,
    pub max_abs_y_steady: f64,
    pub steady_start: i64,
    /// `I(ζ^ε)` at the final estimate and dead zone.
    pub steady_bound: f64,
    /// `I(ζ) + K ε` at the final estimate and dead zone.
    pub steady_bound_k: f64,
    pub g_norm_final: f64,
    pub final_zeta: Vec<f64>,
    pub final_eps: f64,
    pub falsified: bool,
    pub falsified_at: Option<i64>,
    pub unstable_at: Option<i64>,
    /// Largest `t` such that rows `1..=t` are all truth-consistent.
    pub certified_through: i64,
    pub max_abs_y_minus_v: f64,
    pub steps: usize,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub trace: Vec<TraceRecord>,
    pub updates: Vec<UpdateEvent>,
    pub summary: RunSummary,
}

impl RunOutput {
    /// Input/output record rebuilt from the trace, ending at the last
    /// recorded output.
    pub fn plant_state(&self) -> PlantState {
        let mut state = PlantState::new(&self.config.initial_y());
        for r in &self.trace {
            state.push_input(r.u);
            state.commit_output(r.y);
        }
        state
    }

    pub fn exit_code(&self) -> i32 {
        if self.summary.unstable_at.is_some() {
            3
        } else if self.summary.falsified {
            2
        } else {
            0
        }
    }
}

enum Law {
    Optimal,
    Adaptive(Box<EstimatorState>),
    Rls(RlsState),
}

/// Runs one closed loop. Instability and falsification end the run early
/// and are reported in the summary; configuration and numerical failures
/// are errors.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    config.validate()?;
    let start = Instant::now();
    let params = &config.plant;
    let (n, m) = (params.n(), params.m());
    let xi_true = params.xi();
    let true_norm = controller_norm(&xi_true, n, &config.norm_options)?;
    let g_true = true_norm.l1_norm;
    let j_theta = compute_j(params, &true_norm).ok();

    let mut law = match config.controller {
        ControllerKind::OptimalKnown => Law::Optimal,
        ControllerKind::AdaptiveOptimal => Law::Adaptive(Box::new(EstimatorState::new(
            EstimatorConfig {
                n,
                m,
                xi_polytope: config.xi_polytope.clone(),
                delta_bar: config.delta_bar,
                eps_mode: config.eps_mode,
                norm_options: config.norm_options,
                widen_on_falsified: config.widen_on_falsified,
            },
            &config.xi0,
        )?)),
        ControllerKind::RlsBaseline { p0_scale } => Law::Rls(RlsState::new(&config.xi0, p0_scale)),
    };

    let mut dist = DisturbanceGenerator::new(&DisturbanceSpec {
        kind: config.disturbance.clone(),
        seed: config.seed,
    })?;
    let check_envelope = !matches!(innermost_kind(&config.disturbance), DisturbanceKind::CustomSequence { .. });
    let mut state = PlantState::new(&config.initial_y());
    let mut trace = Vec::with_capacity(config.horizon);
    let mut cut_count = 0;
    let mut unstable_at = None;
    let mut falsified_at = None;
    let mut certified_through = 0;
    let mut max_abs_y_minus_v: f64 = 0.0;
    let mu = params.mu;
    let mu_bar = config.mu_bar;

    let eps_of = |law: &Law| match law {
        Law::Adaptive(est) => est.eps(),
        _ => f64::NAN,
    };
    let crit_of = |law: &Law| match law {
        Law::Adaptive(est) => est.criterion(),
        _ => f64::NAN,
    };

    for _ in 0..config.horizon {
        let t = state.t();
        let (u, cut) = match &mut law {
            Law::Optimal => (control_optimal(&xi_true, n, &state), false),
            Law::Adaptive(est) => control_adaptive(est, &state, mu, mu_bar)?,
            Law::Rls(rls) => (control_optimal(&rls.xi(), n, &state), false),
        };
        if !u.is_finite() {
            unstable_at = Some(t);
            break;
        }
        cut_count += cut as usize;
        let input_bounded = u.abs() <= g_true * state.y.window_max(t + mu as i64 - mu_bar as i64, t);
        state.push_input(u);

        let phi = state.regressor(n, m);
        let reference = match (&law, config.worst_case_reference) {
            (_, WorstCaseReference::TruePlant) | (Law::Optimal, _) => xi_true.clone(),
            (Law::Adaptive(est), WorstCaseReference::Estimate) => est.zeta().xi_hat.clone(),
            (Law::Rls(rls), WorstCaseReference::Estimate) => rls.xi(),
        };
        let sample = dist.next(
            &state,
            params,
            Some(WorstCaseAux {
                xi: &reference,
                phi: &phi,
            }),
        )?;
        if check_envelope && sample.v.abs() > sample.envelope {
            return Err(ExperimentError::Envelope {
                t: t + 1,
                v: sample.v,
                envelope: sample.envelope,
            });
        }
        let y = match state.output(params, sample.v) {
            Ok(y) => y,
            Err(PlantError::NonFinite { t }) => {
                unstable_at = Some(t);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let p_next = state.y.window_max(t + 1 - mu_bar as i64, t);
        let truth_consistent = sample.v.abs() <= params.delta_w + (params.delta_y + params.delta_u * g_true) * p_next;

        let mut eta = f64::NAN;
        let mut updated = false;
        let mut zeta_rec = None;
        match &mut law {
            Law::Optimal => {}
            Law::Adaptive(est) => {
                let rec = est.regressor(&state, y, mu_bar);
                eta = rec.eta;
                match est.observe(&rec, t + 1) {
                    Ok(u) => updated = u,
                    Err(EstimatorError::Falsified { t }) => falsified_at = Some(t),
                    Err(e) => return Err(e.into()),
                }
                if updated {
                    est.refresh_eps()?;
                    zeta_rec = Some(est.zeta().to_vec());
                }
                if let (None, Some(j_star)) = (falsified_at, config.j_star) {
                    if falsification_check(est.criterion(), j_star) == Falsification::Falsified {
                        falsified_at = Some(t + 1);
                    }
                }
            }
            Law::Rls(rls) => {
                let next = rls_step(rls, &phi, y, &config.xi_polytope)?;
                *rls = next;
            }
        }
        state.commit_output(y);
        max_abs_y_minus_v = max_abs_y_minus_v.max((y - sample.v).abs());
        if truth_consistent && certified_through == t {
            certified_through = t + 1;
        }
        trace.push(TraceRecord {
            t: t + 1,
            y,
            u,
            v: sample.v,
            p: p_next,
            eta,
            update: updated,
            cut,
            eps: eps_of(&law),
            i_zeta: crit_of(&law),
            zeta: zeta_rec,
            worst_case: sample.worst_case,
            input_bounded,
            truth_consistent,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if falsified_at.is_some() {
            break;
        }
    }

    let steady_start = config.steady_start();
    let max_abs = |from: i64| {
        trace
            .iter()
            .filter(|r| r.t >= from)
            .map(|r| r.y.abs())
            .fold(0.0, f64::max)
    };
    let (updates, final_zeta, final_eps, i_final, g_final, steady_bound, steady_bound_k) = match &mut law {
        Law::Adaptive(est) => {
            let z = est.zeta().clone();
            let g = est.g_norm()?;
            let eps = est.eps();
            let i = z.criterion();
            (
                est.history().to_vec(),
                z.to_vec(),
                eps,
                i,
                g,
                inflated_criterion(z.delta_w_hat, z.delta_hat, g, eps),
                i + accuracy_constant(z.delta_w_hat, z.delta_hat, g, eps) * eps,
            )
        }
        Law::Rls(rls) => {
            let xi = rls.xi();
            let g = controller_norm(&xi, n, &config.norm_options).map_or(f64::NAN, |r| r.l1_norm);
            (Vec::new(), xi, f64::NAN, f64::NAN, g, f64::NAN, f64::NAN)
        }
        Law::Optimal => (Vec::new(), xi_true.clone(), f64::NAN, f64::NAN, g_true, f64::NAN, f64::NAN),
    };
    let summary = RunSummary {
        j_theta,
        g_norm_true: g_true,
        i_final,
        update_count: updates.len(),
        last_update_t: updates.last().map(|u| u.t),
        cut_count,
        max_abs_y: max_abs(i64::MIN),
        max_abs_y_steady: max_abs(steady_start),
        steady_start,
        steady_bound,
        steady_bound_k,
        g_norm_final: g_final,
        final_zeta,
        final_eps,
        falsified: falsified_at.is_some(),
        falsified_at,
        unstable_at,
        certified_through,
        max_abs_y_minus_v,
        steps: trace.len(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        config: config.clone(),
        trace,
        updates,
        summary,
    })
}

fn innermost_kind(kind: &DisturbanceKind) -> &DisturbanceKind {
    match kind {
        DisturbanceKind::WorstCaseSign { base, .. } => innermost_kind(base),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyDisturbance {
    Random,
    DeterministicTrig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyController {
    AdaptiveOptimal,
    RlsBaseline,
}

/// The simulation study preset: worst-case windows on top of `kind`.
pub fn study_config(kind: StudyDisturbance, controller: StudyController, seed: u64) -> ExperimentConfig {
    let base = match kind {
        StudyDisturbance::Random => DisturbanceKind::RandomUniform,
        StudyDisturbance::DeterministicTrig => DisturbanceKind::DeterministicTrig,
    };
    ExperimentConfig {
        controller: match controller {
            StudyController::AdaptiveOptimal => ControllerKind::AdaptiveOptimal,
            StudyController::RlsBaseline => ControllerKind::RlsBaseline { p0_scale: 0.001 },
        },
        disturbance: DisturbanceKind::WorstCaseSign {
            base: Box::new(base),
            windows: default_worst_case_windows(),
        },
        seed,
        ..ExperimentConfig::default()
    }
}

pub fn replicate_study(kind: StudyDisturbance, controller: StudyController, seed: u64) -> Result<RunOutput, ExperimentError> {
    run(&study_config(kind, controller, seed))
}

/// Runs independent configurations in parallel, preserving order.
pub fn run_batch(configs: &[ExperimentConfig]) -> Vec<Result<RunOutput, ExperimentError>> {
    configs.par_iter().map(run).collect()
}
