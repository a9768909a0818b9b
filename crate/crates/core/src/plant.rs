//! The plant `a(q⁻¹) y_{t+1} = b(q⁻¹) u_t + v_{t+1}` and its total
//! disturbance generators.

use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::dot;
use crate::poly::{is_minimum_phase, PolyError, Polynomial};

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("non-finite output at t = {t}")]
    NonFinite { t: i64 },
    #[error("worst-case disturbance needs a coefficient vector and regressor")]
    MissingAux,
    #[error("custom disturbance sequence exhausted at step {0}")]
    SequenceExhausted(usize),
    #[error("invalid plant: {0}")]
    Invalid(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("reading {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// θ: nominal coefficients plus perturbation gains and memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// `(a_1, …, a_n)`.
    pub a: Vec<f64>,
    /// `(b_1, …, b_m)`.
    pub b: Vec<f64>,
    pub delta_w: f64,
    pub delta_y: f64,
    pub delta_u: f64,
    pub mu: usize,
}

impl PlantParams {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// ξ = (a_1, …, a_n, b_1, …, b_m).
    pub fn xi(&self) -> Vec<f64> {
        let mut xi = self.a.clone();
        xi.extend_from_slice(&self.b);
        xi
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if self.b.is_empty() || self.b[0] == 0.0 {
            return Err(PlantError::Invalid("b_1 must be nonzero".into()));
        }
        if !is_minimum_phase(&Polynomial::new(self.b.clone()))? {
            return Err(PlantError::Invalid("b is not minimum phase".into()));
        }
        if self.delta_w < 0.0 || self.delta_y < 0.0 || self.delta_u < 0.0 {
            return Err(PlantError::Invalid("gains must be nonnegative".into()));
        }
        if self.mu == 0 {
            return Err(PlantError::Invalid("memory mu must be positive".into()));
        }
        Ok(())
    }
}

/// A signal indexed by integer time, zero before its first stored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    origin: i64,
    values: Vec<f64>,
}

impl History {
    /// Empty history whose first sample will be at time `origin`.
    pub fn starting_at(origin: i64) -> Self {
        History {
            origin,
            values: Vec::new(),
        }
    }

    pub fn from_values(origin: i64, values: Vec<f64>) -> Self {
        History { origin, values }
    }

    pub fn push(&mut self, x: f64) {
        self.values.push(x);
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// Time index of the newest sample (`origin - 1` when empty).
    pub fn last_index(&self) -> i64 {
        self.origin + self.values.len() as i64 - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sample at time `k`; zero outside the stored range.
    pub fn get(&self, k: i64) -> f64 {
        if k < self.origin {
            return 0.0;
        }
        self.values
            .get((k - self.origin) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// `max_{from <= k <= to} |x_k|`; samples outside the record count as 0.
    pub fn window_max(&self, from: i64, to: i64) -> f64 {
        let lo = from.max(self.origin);
        let hi = to.min(self.last_index());
        if hi < lo {
            return 0.0;
        }
        let (lo, hi) = ((lo - self.origin) as usize, (hi - self.origin) as usize);
        self.values[lo..=hi].iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Input/output record of a run. `t` is the newest output index; once
/// the input at `t` is applied, `u` extends to `t` as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub y: History,
    pub u: History,
    t: i64,
}

impl PlantState {
    /// Starts at `t = 0` with `initial_y = (y_{1-n}, …, y_0)`.
    pub fn new(initial_y: &[f64]) -> Self {
        let origin = 1 - initial_y.len() as i64;
        PlantState {
            y: History::from_values(origin, initial_y.to_vec()),
            u: History::starting_at(0),
            t: 0,
        }
    }

    pub fn t(&self) -> i64 {
        self.t
    }

    /// Whether `u_t` has been applied at the current time.
    pub fn input_pending(&self) -> bool {
        self.u.last_index() == self.t
    }

    pub fn push_input(&mut self, u_t: f64) {
        debug_assert!(!self.input_pending(), "input already applied at t = {}", self.t);
        self.u.push(u_t);
    }

    /// `φ_t = (-y_t, …, -y_{t-n+1}, u_t, …, u_{t-m+1})`.
    pub fn regressor(&self, n: usize, m: usize) -> Vec<f64> {
        let t = self.t;
        let mut phi = Vec::with_capacity(n + m);
        phi.extend((0..n as i64).map(|i| -self.y.get(t - i)));
        phi.extend((0..m as i64).map(|j| self.u.get(t - j)));
        phi
    }

    /// `(p^y_{t+1}, p^u_{t+1}) = (|y_{t+1-μ}^t|, |u_{t+1-μ}^t|)`.
    pub fn perturbation_windows(&self, mu: usize) -> (f64, f64) {
        let t = self.t;
        let from = t + 1 - mu as i64;
        (self.y.window_max(from, t), self.u.window_max(from, t))
    }

    /// `y_{t+1}` for the applied input and disturbance, without advancing.
    pub fn output(&self, params: &PlantParams, v_next: f64) -> Result<f64, PlantError> {
        let phi = self.regressor(params.n(), params.m());
        let y = dot(&params.xi(), &phi) + v_next;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(PlantError::NonFinite { t: self.t + 1 })
        }
    }

    pub fn commit_output(&mut self, y_next: f64) {
        debug_assert!(self.input_pending());
        self.y.push(y_next);
        self.t += 1;
    }

    /// Applies `u_t`, computes `y_{t+1}` and advances one step.
    pub fn step(&mut self, params: &PlantParams, u_t: f64, v_next: f64) -> Result<f64, PlantError> {
        self.push_input(u_t);
        let y = self.output(params, v_next)?;
        self.commit_output(y);
        Ok(y)
    }
}

/// Uniform on `[-1, 1)` from the top 53 bits of one 64-bit draw.
pub fn uniform_pm1<R: RngCore>(rng: &mut R) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    2.0 * unit - 1.0
}

/// Closed interval of disturbance time indices `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }
}

pub fn default_worst_case_windows() -> Vec<Window> {
    vec![
        Window {
            start: 801,
            end: 810,
        },
        Window {
            start: 1201,
            end: 1210,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// w, δ¹, δ² independent uniform on [-1, 1].
    RandomUniform,
    /// w uniform, δ¹_t = cos(5t), δ²_t = sin(5t).
    DeterministicTrig,
    /// Envelope times `sign(ξ·φ_t)` inside `windows`, `base` elsewhere.
    WorstCaseSign {
        base: Box<DisturbanceKind>,
        #[serde(default = "default_worst_case_windows")]
        windows: Vec<Window>,
    },
    /// `v_{k+1}` taken from column `v` of a CSV file, row `k`.
    CustomSequence { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    pub seed: u64,
}

/// Coefficient vector and regressor for the worst-case sign.
#[derive(Debug, Clone, Copy)]
pub struct WorstCaseAux<'a> {
    pub xi: &'a [f64],
    pub phi: &'a [f64],
}

/// `sign` with `sign(0) = +1`.
pub fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// One realised disturbance sample and its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceSample {
    pub v: f64,
    /// `δ^w + δ^y p^y + δ^u p^u`.
    pub envelope: f64,
    pub worst_case: bool,
}

/// Stateful generator; RNG stream 0 of the seed drives `(w, δ¹, δ²)`.
///
/// Three uniforms are drawn every step whatever the kind, so runs that
/// share a seed share the `w` samples.
#[derive(Debug, Clone)]
pub struct DisturbanceGenerator {
    kind: DisturbanceKind,
    rng: ChaCha8Rng,
    sequence: Vec<f64>,
    step: usize,
}

impl DisturbanceGenerator {
    pub fn new(spec: &DisturbanceSpec) -> Result<Self, PlantError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let sequence = match innermost(&spec.kind) {
            DisturbanceKind::CustomSequence { path } => read_sequence(Path::new(path))?,
            _ => Vec::new(),
        };
        Ok(DisturbanceGenerator {
            kind: spec.kind.clone(),
            rng,
            sequence,
            step: 0,
        })
    }

    /// Generator replaying a fixed sequence.
    pub fn from_sequence(sequence: Vec<f64>) -> Self {
        DisturbanceGenerator {
            kind: DisturbanceKind::CustomSequence {
                path: String::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            sequence,
            step: 0,
        }
    }

    /// `v_{t+1}` for a state at time `t` whose input `u_t` is applied.
    pub fn next(
        &mut self,
        state: &PlantState,
        params: &PlantParams,
        aux: Option<WorstCaseAux<'_>>,
    ) -> Result<DisturbanceSample, PlantError> {
        let w = uniform_pm1(&mut self.rng);
        let d1 = uniform_pm1(&mut self.rng);
        let d2 = uniform_pm1(&mut self.rng);
        let step = self.step;
        self.step += 1;
        let t_next = state.t() + 1;
        let (py, pu) = state.perturbation_windows(params.mu);
        let envelope = params.delta_w + params.delta_y * py + params.delta_u * pu;
        let kind = self.kind.clone();
        let mut kind = &kind;
        loop {
            match kind {
                DisturbanceKind::RandomUniform => {
                    let v = params.delta_w * w
                        + params.delta_y * (d1 * py)
                        + params.delta_u * (d2 * pu);
                    return Ok(DisturbanceSample {
                        v,
                        envelope,
                        worst_case: false,
                    });
                }
                DisturbanceKind::DeterministicTrig => {
                    let tf = t_next as f64;
                    let v = params.delta_w * w
                        + params.delta_y * ((5.0 * tf).cos() * py)
                        + params.delta_u * ((5.0 * tf).sin() * pu);
                    return Ok(DisturbanceSample {
                        v,
                        envelope,
                        worst_case: false,
                    });
                }
                DisturbanceKind::WorstCaseSign { base, windows } => {
                    if windows.iter().any(|win| win.contains(t_next)) {
                        let aux = aux.ok_or(PlantError::MissingAux)?;
                        let v = envelope * sign(dot(aux.xi, aux.phi));
                        return Ok(DisturbanceSample {
                            v,
                            envelope,
                            worst_case: true,
                        });
                    }
                    kind = base;
                }
                DisturbanceKind::CustomSequence { .. } => {
                    let v = *self
                        .sequence
                        .get(step)
                        .ok_or(PlantError::SequenceExhausted(step))?;
                    return Ok(DisturbanceSample {
                        v,
                        envelope,
                        worst_case: false,
                    });
                }
            }
        }
    }
}

fn innermost(kind: &DisturbanceKind) -> &DisturbanceKind {
    match kind {
        DisturbanceKind::WorstCaseSign { base, .. } => innermost(base),
        other => other,
    }
}

/// Reads column `v` of a headed CSV file.
pub fn read_sequence(path: &Path) -> Result<Vec<f64>, PlantError> {
    let wrap = |source: csv::Error| PlantError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
    let headers = reader.headers().map_err(wrap)?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "v")
        .ok_or_else(|| PlantError::Invalid(format!("{}: no column named v", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(wrap)?;
        let field = record.get(col).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| PlantError::Invalid(format!("{}: bad value {field:?}", path.display())))?;
        out.push(v);
    }
    Ok(out)
}

/// Initial outputs `(y_{1-n}, …, y_0)` uniform on [-1, 1] from RNG stream 1.
pub fn random_initial_outputs(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..n).map(|_| uniform_pm1(&mut rng)).collect()
}
