//! Polynomials in the delay variable, minimum-phase testing and the ℓ1 norm
//! of the optimal controller's impulse response.
//!
//! Coefficients are stored in ascending powers of λ (the delay variable):
//! `a(λ) = 1 + a_1 λ + … + a_n λ^n` and `b(λ) = b_1 + b_2 λ + … + b_m λ^(m-1)`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{lp_minimize, Polyhedron};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("leading coefficient b_1 is zero")]
    ZeroLeading,
    #[error("a-polynomial must have constant term 1, got {0}")]
    NotMonic(f64),
    #[error("polynomial is not minimum phase")]
    NotMinimumPhase,
    #[error("impulse response tail bound {tail:e} not below tolerance after {len} terms")]
    NonConvergent { len: usize, tail: f64 },
    #[error("polytope is empty")]
    EmptyPolytope,
    #[error("empty coefficient list")]
    Empty,
}

/// A polynomial in λ, ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    /// `1 + a_1 λ + … + a_n λ^n` from the tail `(a_1, …, a_n)`.
    pub fn monic(tail: &[f64]) -> Self {
        let mut coeffs = Vec::with_capacity(tail.len() + 1);
        coeffs.push(1.0);
        coeffs.extend_from_slice(tail);
        Polynomial { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Index of the last stored coefficient (zeros included).
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Polynomial::new(Vec::new());
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }

    /// Coefficients with trailing zeros removed (at least one kept).
    fn trimmed(&self) -> &[f64] {
        let len = self
            .coeffs
            .iter()
            .rposition(|c| *c != 0.0)
            .map_or(1.min(self.coeffs.len()), |i| i + 1);
        &self.coeffs[..len]
    }
}

/// Jury margins below this are treated as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Schur–Cohn reflection test on the monic polynomial
/// `z^d + c_1 z^(d-1) + … + c_d`, given as `(c_1, …, c_d)`.
///
/// Returns `min(1 - |k_i|)` over the reflection coefficients, which is
/// positive iff every root lies strictly inside the unit disk.
pub fn schur_margin(tail: &[f64]) -> f64 {
    let mut c: Vec<f64> = tail.to_vec();
    let mut margin = f64::INFINITY;
    while let Some(&k) = c.last() {
        let m = 1.0 - k.abs();
        margin = margin.min(m);
        if m <= 0.0 || !m.is_finite() {
            return m.min(0.0);
        }
        let d = c.len();
        let scale = 1.0 - k * k;
        let next: Vec<f64> = (0..d - 1)
            .map(|i| (c[i] - k * c[d - 2 - i]) / scale)
            .collect();
        c = next;
    }
    margin
}

/// Reciprocal-root polynomial of `b`, normalised to the monic tail used by
/// [`schur_margin`]: `b(λ)` has all roots outside the unit disk iff
/// `z^d + (b_2/b_1) z^(d-1) + … + b_{d+1}/b_1` is Schur stable.
fn reciprocal_tail(b: &[f64]) -> Vec<f64> {
    b[1..].iter().map(|x| x / b[0]).collect()
}

fn check_leading(b: &Polynomial) -> Result<&[f64], PolyError> {
    let c = b.trimmed();
    match c.first() {
        None => Err(PolyError::Empty),
        Some(&b1) if b1 == 0.0 => Err(PolyError::ZeroLeading),
        Some(_) => Ok(c),
    }
}

/// True iff every root of `b(λ)` has modulus greater than one, with a Jury
/// margin of at least [`STABILITY_MARGIN`].
pub fn is_minimum_phase(b: &Polynomial) -> Result<bool, PolyError> {
    let c = check_leading(b)?;
    if c.len() == 1 {
        return Ok(true);
    }
    Ok(schur_margin(&reciprocal_tail(c)) >= STABILITY_MARGIN)
}

/// Largest modulus among the reciprocal roots `1/λ_i` of `b`, by bisection
/// on the scaled Schur–Cohn test. Zero for constant `b`.
pub fn max_reciprocal_root_modulus(b: &Polynomial) -> Result<f64, PolyError> {
    let c = check_leading(b)?;
    if c.len() == 1 {
        return Ok(0.0);
    }
    let tail = reciprocal_tail(c);
    // All roots of z^d + … lie within radius 1 + max|c_i|.
    let mut hi = 1.0 + tail.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut lo = 0.0;
    let scaled_stable = |rho: f64| {
        let mut pow = 1.0;
        let scaled: Vec<f64> = tail
            .iter()
            .map(|x| {
                pow /= rho;
                x * pow
            })
            .collect();
        schur_margin(&scaled) > 0.0
    };
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.max(1e-300) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if scaled_stable(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Truncated impulse response of the controller transfer function and its
/// ℓ1 norm with a certified bound on the discarded tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseNorm {
    pub coefficients: Vec<f64>,
    pub l1_norm: f64,
    pub tail_bound: f64,
    pub truncation_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormOptions {
    /// Tail tolerance relative to the running ℓ1 norm.
    pub tol: f64,
    pub abs_floor: f64,
    pub max_len: usize,
    /// Inflation applied to the envelope constant fitted on recent terms.
    pub safety_factor: f64,
    pub fit_window: usize,
    /// Added to the decay rate; capped at half the gap to one.
    pub rate_margin: f64,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions {
            tol: 1e-9,
            abs_floor: 1e-12,
            max_len: 100_000,
            safety_factor: 2.0,
            fit_window: 10,
            rate_margin: 1e-2,
        }
    }
}

/// Power series of `(a(λ) - 1) / (λ b(λ))`, i.e. the causal controller
/// `u_t = Σ_k g_k y_{t-k}` with `g_0 = a_1 / b_1`.
///
/// Terms are produced by long division until the fitted geometric tail
/// bound `C ρ^(K+1) / (1 - ρ)` drops below the tolerance.
pub fn controller_impulse_response(
    a: &Polynomial,
    b: &Polynomial,
    opts: &NormOptions,
) -> Result<ImpulseNorm, PolyError> {
    let a0 = a.coeffs().first().copied().ok_or(PolyError::Empty)?;
    if a0 != 1.0 {
        return Err(PolyError::NotMonic(a0));
    }
    if !is_minimum_phase(b)? {
        return Err(PolyError::NotMinimumPhase);
    }
    let num = &a.coeffs()[1..];
    let bc = b.trimmed();
    let b1 = bc[0];

    if num.iter().all(|x| *x == 0.0) {
        return Ok(ImpulseNorm {
            coefficients: vec![0.0; num.len().max(1)],
            l1_norm: 0.0,
            tail_bound: 0.0,
            truncation_length: num.len().max(1),
        });
    }
    if bc.len() == 1 {
        let coefficients: Vec<f64> = num.iter().map(|x| x / b1).collect();
        let l1_norm = coefficients.iter().map(|g| g.abs()).sum();
        return Ok(ImpulseNorm {
            truncation_length: coefficients.len(),
            coefficients,
            l1_norm,
            tail_bound: 0.0,
        });
    }

    let rho = max_reciprocal_root_modulus(b)?;
    let rate = rho + opts.rate_margin.min(0.5 * (1.0 - rho));
    let w = opts.fit_window.max(1);
    let transient = num.len().max(bc.len());
    let mut g: Vec<f64> = Vec::with_capacity(256);
    let mut l1 = 0.0;
    let mut last_tail = f64::INFINITY;
    // Envelope |g_i| / rate^i, tracked relative to the newest index.
    let envelope = |g: &[f64], from: usize, to: usize, k: usize| -> f64 {
        (from..to)
            .map(|i| g[i].abs() * rate.powi((k - i) as i32))
            .fold(0.0, f64::max)
    };
    for k in 0..opts.max_len {
        let mut s = num.get(k).copied().unwrap_or(0.0);
        for j in 1..bc.len().min(k + 1) {
            s -= bc[j] * g[k - j];
        }
        let gk = s / b1;
        g.push(gk);
        l1 += gk.abs();
        let len = k + 1;
        if len < transient + 2 * w {
            continue;
        }
        // Fitted constant C·rate^k over the last window, compared with the
        // window before it so the fit is taken on a decaying envelope.
        let recent = envelope(&g, len - w, len, k);
        let earlier = envelope(&g, len - 2 * w, len - w, k);
        if recent > earlier {
            continue;
        }
        let tail = opts.safety_factor * recent * rate / (1.0 - rate);
        last_tail = tail;
        if tail <= (opts.tol * l1).max(opts.abs_floor) {
            return Ok(ImpulseNorm {
                coefficients: g,
                l1_norm: l1,
                tail_bound: tail,
                truncation_length: len,
            });
        }
    }
    Err(PolyError::NonConvergent {
        len: opts.max_len,
        tail: last_tail,
    })
}

/// ‖G^ξ‖ for a stacked coefficient vector `ξ = (a_1..a_n, b_1..b_m)`.
pub fn controller_norm(xi: &[f64], n: usize, opts: &NormOptions) -> Result<ImpulseNorm, PolyError> {
    let a = Polynomial::monic(&xi[..n]);
    let b = Polynomial::new(xi[n..].to_vec());
    controller_impulse_response(&a, &b, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    /// LP vertices for the ± coordinate directions, then random convex
    /// combinations of those vertices.
    VertexSampling,
    /// LP vertices for random objective directions.
    RandomLpDirections,
}

/// Sampled lower estimate of `sup_{ξ ∈ Ξ} ‖G^ξ‖`. Not a certified bound:
/// the supremum is nonconvex in ξ.
pub fn l1_norm_upper_over_polytope(
    xi_poly: &Polyhedron,
    n: usize,
    method: SamplingMethod,
    samples: usize,
    seed: u64,
) -> Result<f64, PolyError> {
    let dim = xi_poly.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || crate::plant::uniform_pm1(&mut rng);
    let vertex = |dir: &[f64]| -> Result<Option<Vec<f64>>, PolyError> {
        let sol = lp_minimize(dir, xi_poly).map_err(|_| PolyError::EmptyPolytope)?;
        match sol.status {
            crate::lp::LpStatus::Infeasible => Err(PolyError::EmptyPolytope),
            crate::lp::LpStatus::Unbounded => Ok(None),
            crate::lp::LpStatus::Optimal => Ok(sol.point),
        }
    };
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    match method {
        SamplingMethod::VertexSampling => {
            for i in 0..dim {
                for sgn in [1.0, -1.0] {
                    let mut e = vec![0.0; dim];
                    e[i] = sgn;
                    if let Some(v) = vertex(&e)? {
                        candidates.push(v);
                    }
                }
            }
            let base = candidates.clone();
            for _ in 0..samples {
                let weights: Vec<f64> = base.iter().map(|_| 0.5 * (unit() + 1.0)).collect();
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    continue;
                }
                let mut p = vec![0.0; dim];
                for (v, wgt) in base.iter().zip(&weights) {
                    for (pi, vi) in p.iter_mut().zip(v) {
                        *pi += vi * wgt / total;
                    }
                }
                candidates.push(p);
            }
        }
        SamplingMethod::RandomLpDirections => {
            for _ in 0..samples.max(1) {
                let dir: Vec<f64> = (0..dim).map(|_| unit()).collect();
                if let Some(v) = vertex(&dir)? {
                    candidates.push(v);
                }
            }
        }
    }
    let opts = NormOptions::default();
    let mut best: Option<f64> = None;
    for c in &candidates {
        if let Ok(norm) = controller_norm(c, n, &opts) {
            best = Some(best.map_or(norm.l1_norm, |b: f64| b.max(norm.l1_norm)));
        }
    }
    best.ok_or(PolyError::EmptyPolytope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_b_is_minimum_phase() {
        assert!(is_minimum_phase(&Polynomial::new(vec![2.0])).unwrap());
    }

    #[test]
    fn root_outside_and_inside() {
        assert!(is_minimum_phase(&Polynomial::new(vec![1.0, -0.5])).unwrap());
        assert!(!is_minimum_phase(&Polynomial::new(vec![1.0, -2.0])).unwrap());
    }

    #[test]
    fn zero_leading_rejected() {
        assert_eq!(
            is_minimum_phase(&Polynomial::new(vec![0.0, 1.0])),
            Err(PolyError::ZeroLeading)
        );
    }

    #[test]
    fn trailing_zero_coefficients_ignored() {
        assert!(is_minimum_phase(&Polynomial::new(vec![1.0, -0.5, 0.0])).unwrap());
    }

    #[test]
    fn simulation_plant_numerator_is_minimum_phase() {
        let b = Polynomial::new(vec![2.0, -3.3333, 1.3889]);
        assert!(is_minimum_phase(&b).unwrap());
        let rho = max_reciprocal_root_modulus(&b).unwrap();
        assert!((rho - 1.0 / 1.2).abs() < 1e-3, "rho = {rho}");
    }

    #[test]
    fn near_boundary_is_rejected() {
        // Root at λ = 1 + 1e-12.
        let b = Polynomial::new(vec![1.0, -1.0 / (1.0 + 1e-12)]);
        assert!(!is_minimum_phase(&b).unwrap());
    }

    #[test]
    fn division_by_constant() {
        let a = Polynomial::monic(&[-0.5]);
        let b = Polynomial::new(vec![2.0]);
        let g = controller_impulse_response(&a, &b, &NormOptions::default()).unwrap();
        assert_eq!(g.coefficients, vec![-0.25]);
        assert_eq!(g.l1_norm, 0.25);
        assert_eq!(g.tail_bound, 0.0);
    }

    #[test]
    fn zero_numerator() {
        let a = Polynomial::monic(&[0.0, 0.0]);
        let b = Polynomial::new(vec![1.0, -0.3]);
        let g = controller_impulse_response(&a, &b, &NormOptions::default()).unwrap();
        assert_eq!(g.l1_norm, 0.0);
    }

    #[test]
    fn unstable_b_rejected() {
        let a = Polynomial::monic(&[1.0]);
        let b = Polynomial::new(vec![1.0, -2.0]);
        assert_eq!(
            controller_impulse_response(&a, &b, &NormOptions::default()),
            Err(PolyError::NotMinimumPhase)
        );
    }

    #[test]
    fn non_monic_a_rejected() {
        let a = Polynomial::new(vec![2.0, 1.0]);
        let b = Polynomial::new(vec![1.0]);
        assert!(matches!(
            controller_impulse_response(&a, &b, &NormOptions::default()),
            Err(PolyError::NotMonic(_))
        ));
    }

    #[test]
    fn max_len_exhaustion_is_an_error() {
        let a = Polynomial::monic(&[1.0]);
        let b = Polynomial::new(vec![1.0, -0.999]);
        let opts = NormOptions {
            max_len: 50,
            ..NormOptions::default()
        };
        assert!(matches!(
            controller_impulse_response(&a, &b, &opts),
            Err(PolyError::NonConvergent { .. })
        ));
    }

    #[test]
    fn singleton_polytope_norm() {
        let xi = Polyhedron::boxed(&[-0.5, 2.0], &[-0.5, 2.0]);
        for method in [SamplingMethod::VertexSampling, SamplingMethod::RandomLpDirections] {
            let g = l1_norm_upper_over_polytope(&xi, 1, method, 8, 1).unwrap();
            assert!((g - 0.25).abs() < 1e-12, "{method:?}: {g}");
        }
    }

    #[test]
    fn segment_polytope_norm_at_endpoint() {
        // a_1 in [0, 1], b_1 = 1.
        let xi = Polyhedron::boxed(&[0.0, 1.0], &[1.0, 1.0]);
        let g = l1_norm_upper_over_polytope(&xi, 1, SamplingMethod::VertexSampling, 16, 3).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_polytope_rejected() {
        let xi = Polyhedron::boxed(&[1.0, 1.0], &[0.0, 1.0]);
        assert_eq!(
            l1_norm_upper_over_polytope(&xi, 1, SamplingMethod::VertexSampling, 4, 0),
            Err(PolyError::EmptyPolytope)
        );
    }
}
