//! Dense linear and linear-fractional programming over H-polyhedra.
//!
//! Polyhedra are stored as `{ z : A z >= c }` with free variables. The LP
//! is solved through its dual `max c·y, Aᵀy = objective, y >= 0` by a
//! two-phase primal simplex with Bland's smallest-index rule, which rules
//! out cycling on the degenerate vertices that set-membership polytopes
//! produce routinely. The basis is only `dim × dim`, so it is refactorised
//! at every pivot and no error accumulates over long runs. Linear-fractional
//! problems are reduced to a single LP by the Charnes–Cooper change of
//! variables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("simplex exceeded iteration cap of {cap}")]
    IterationLimit { cap: usize },
    #[error("denominator is not positive at the returned point ({value})")]
    DenominatorNotPositive { value: f64 },
    #[error("non-finite coefficient in LP data")]
    NonFinite,
    #[error("simplex basis became singular")]
    SingularBasis,
}

/// `{ z : A z >= c }` in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    dim: usize,
    normals: Vec<f64>,
    rhs: Vec<f64>,
}

impl Polyhedron {
    /// The whole space (no rows).
    pub fn new(dim: usize) -> Self {
        Polyhedron {
            dim,
            normals: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>], rhs: &[f64]) -> Result<Self, LpError> {
        if rows.len() != rhs.len() {
            return Err(LpError::DimensionMismatch {
                expected: rows.len(),
                got: rhs.len(),
            });
        }
        let mut poly = Polyhedron::new(dim);
        for (row, &c) in rows.iter().zip(rhs) {
            poly.push(row, c)?;
        }
        Ok(poly)
    }

    /// Axis-aligned box `lo <= z <= hi`.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Self {
        let dim = lo.len();
        let mut poly = Polyhedron::new(dim);
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            poly.push(&e, lo[i]).unwrap();
            e[i] = -1.0;
            poly.push(&e, -hi[i]).unwrap();
        }
        poly
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rhs(&self, i: usize) -> f64 {
        self.rhs[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.normals
            .chunks(self.dim.max(1))
            .take(self.rhs.len())
            .zip(self.rhs.iter().copied())
    }

    /// Appends the halfspace `normal · z >= offset` in place.
    pub fn push(&mut self, normal: &[f64], offset: f64) -> Result<(), LpError> {
        if normal.len() != self.dim {
            return Err(LpError::DimensionMismatch {
                expected: self.dim,
                got: normal.len(),
            });
        }
        self.normals.extend_from_slice(normal);
        self.rhs.push(offset);
        Ok(())
    }

    /// A new polyhedron with the halfspace `normal · z >= offset` appended.
    /// No redundancy pruning is done.
    pub fn intersect(&self, normal: &[f64], offset: f64) -> Result<Polyhedron, LpError> {
        let mut out = self.clone();
        out.push(normal, offset)?;
        Ok(out)
    }

    /// Replaces the right-hand side of row `i`.
    pub fn set_rhs(&mut self, i: usize, offset: f64) {
        self.rhs[i] = offset;
    }

    /// Largest violation `c_i - A_i z`, each scaled by `1 + |A_i|`.
    /// Non-positive means strictly feasible or on the boundary.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.rows()
            .map(|(a, c)| (c - dot(a, z)) / (1.0 + norm(a)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Membership with the tolerance `A_i z >= c_i - tol (1 + |A_i|)`.
    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        z.len() == self.dim
            && self
                .rows()
                .all(|(a, c)| dot(a, z) >= c - tol * (1.0 + norm(a)))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub iterations: usize,
    /// Multipliers `y >= 0` with `objective = A^T y`, one per row of the
    /// input polyhedron. Only filled for optimal plain LPs.
    pub duals: Option<Vec<f64>>,
}

impl LpSolution {
    fn without_point(status: LpStatus, iterations: usize) -> Self {
        LpSolution {
            status,
            point: None,
            value: None,
            iterations,
            duals: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub pivot_tol: f64,
    pub feas_tol: f64,
    /// Reduced costs above `-opt_tol` count as non-negative.
    pub opt_tol: f64,
    /// Per-phase pivot cap; `None` means `50 * (rows + cols)`.
    pub iteration_cap: Option<usize>,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            pivot_tol: 1e-10,
            feas_tol: 1e-8,
            opt_tol: 1e-10,
            iteration_cap: None,
        }
    }
}

/// `minimize objective · z` subject to `z ∈ poly`.
pub fn lp_minimize(objective: &[f64], poly: &Polyhedron) -> Result<LpSolution, LpError> {
    lp_minimize_with(objective, poly, &SimplexOptions::default())
}

pub fn lp_minimize_with(
    objective: &[f64],
    poly: &Polyhedron,
    opts: &SimplexOptions,
) -> Result<LpSolution, LpError> {
    if objective.len() != poly.dim() {
        return Err(LpError::DimensionMismatch {
            expected: poly.dim(),
            got: objective.len(),
        });
    }
    if objective.iter().any(|x| !x.is_finite())
        || poly.normals.iter().any(|x| !x.is_finite())
        || poly.rhs.iter().any(|x| !x.is_finite())
    {
        return Err(LpError::NonFinite);
    }
    let Some(mut dual) = DualSimplex::build(objective, poly, opts) else {
        return Ok(LpSolution::without_point(LpStatus::Infeasible, 0));
    };
    match dual.solve()? {
        Outcome::Optimal => Ok(dual.solution()),
        Outcome::DualUnbounded => Ok(LpSolution::without_point(LpStatus::Infeasible, dual.iterations)),
        Outcome::DualInfeasible => {
            // Unbounded or infeasible: decide on the zero objective.
            let zero = vec![0.0; poly.dim()];
            let mut probe = DualSimplex::build(&zero, poly, opts).expect("rows already checked");
            let status = match probe.solve()? {
                Outcome::Optimal => LpStatus::Unbounded,
                _ => LpStatus::Infeasible,
            };
            Ok(LpSolution::without_point(status, dual.iterations + probe.iterations))
        }
    }
}

enum Outcome {
    Optimal,
    DualUnbounded,
    DualInfeasible,
}

/// Primal simplex on `max c·y s.t. Aᵀ y = objective, y >= 0`.
///
/// The basis is `dim × dim`, so it is refactorised from the stored data at
/// every pivot. Column `j < k` is constraint row `j` scaled to unit norm;
/// column `k + i` is the artificial `±e_i`.
struct DualSimplex {
    dim: usize,
    cols: Vec<Vec<f64>>,
    c: Vec<f64>,
    /// Original row index and scale of each column.
    origin: Vec<(usize, f64)>,
    original_rows: usize,
    objective: Vec<f64>,
    art_sign: Vec<f64>,
    basis: Vec<usize>,
    opts: SimplexOptions,
    iterations: usize,
    cap: usize,
}

struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DualSimplex {
    /// Returns `None` when a zero row makes the problem trivially infeasible.
    fn build(objective: &[f64], poly: &Polyhedron, opts: &SimplexOptions) -> Option<Self> {
        let dim = poly.dim();
        let mut cols = Vec::new();
        let mut c = Vec::new();
        let mut origin = Vec::new();
        for (i, (row, ci)) in poly.rows().enumerate() {
            let scale = norm(row);
            if scale <= 1e-300 {
                if ci > opts.feas_tol {
                    return None;
                }
                continue;
            }
            cols.push(row.iter().map(|x| x / scale).collect());
            c.push(ci / scale);
            origin.push((i, scale));
        }
        let k = cols.len();
        let art_sign = objective.iter().map(|&o| if o < 0.0 { -1.0 } else { 1.0 }).collect();
        let cap = opts.iteration_cap.unwrap_or(50 * (k + dim)).max(1);
        Some(DualSimplex {
            dim,
            cols,
            c,
            origin,
            original_rows: poly.num_rows(),
            objective: objective.to_vec(),
            art_sign,
            basis: (k..k + dim).collect(),
            opts: *opts,
            iterations: 0,
            cap,
        })
    }

    fn k(&self) -> usize {
        self.cols.len()
    }

    fn is_art(&self, j: usize) -> bool {
        j >= self.k()
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if self.is_art(j) {
            let i = j - self.k();
            let mut e = DVector::zeros(self.dim);
            e[i] = self.art_sign[i];
            e
        } else {
            DVector::from_column_slice(&self.cols[j])
        }
    }

    fn col_dot(&self, j: usize, x: &DVector<f64>) -> f64 {
        if self.is_art(j) {
            let i = j - self.k();
            self.art_sign[i] * x[i]
        } else {
            self.cols[j].iter().zip(x.iter()).map(|(a, b)| a * b).sum()
        }
    }

    fn factor(&self) -> Result<Factored, LpError> {
        let b = DMatrix::from_fn(self.dim, self.dim, |i, k| {
            let j = self.basis[k];
            if self.is_art(j) {
                if i == j - self.k() {
                    self.art_sign[i]
                } else {
                    0.0
                }
            } else {
                self.cols[j][i]
            }
        });
        let lu_t = b.transpose().lu();
        let lu = b.lu();
        if !lu.is_invertible() {
            return Err(LpError::SingularBasis);
        }
        Ok(Factored { lu, lu_t })
    }

    fn solve_b(&self, f: &Factored, rhs: &DVector<f64>) -> Result<DVector<f64>, LpError> {
        f.lu.solve(rhs).ok_or(LpError::SingularBasis)
    }

    fn solve_bt(&self, f: &Factored, rhs: &DVector<f64>) -> Result<DVector<f64>, LpError> {
        f.lu_t.solve(rhs).ok_or(LpError::SingularBasis)
    }

    fn phase_cost(&self, phase_one: bool, j: usize) -> f64 {
        match (phase_one, self.is_art(j)) {
            (true, true) => -1.0,
            (true, false) => 0.0,
            (false, true) => 0.0,
            (false, false) => self.c[j],
        }
    }

    /// Basic values `y_B` and multipliers `x` for the current basis.
    fn state(&self, f: &Factored, phase_one: bool) -> Result<(DVector<f64>, DVector<f64>), LpError> {
        let yb = self.solve_b(f, &DVector::from_column_slice(&self.objective))?;
        let cb = DVector::from_iterator(self.dim, self.basis.iter().map(|&j| self.phase_cost(phase_one, j)));
        let x = self.solve_bt(f, &cb)?;
        Ok((yb, x))
    }

    /// Bland-rule pivots. Returns `false` if the phase is unbounded.
    fn run_phase(&mut self, phase_one: bool) -> Result<bool, LpError> {
        let mut phase_iters = 0;
        let n_cols = if phase_one { self.k() + self.dim } else { self.k() };
        loop {
            let f = self.factor()?;
            let (yb, x) = self.state(&f, phase_one)?;
            let entering = (0..n_cols).find(|&j| {
                !self.basis.contains(&j) && self.phase_cost(phase_one, j) - self.col_dot(j, &x) > self.opts.opt_tol
            });
            let Some(q) = entering else {
                return Ok(true);
            };
            let w = self.solve_b(&f, &self.column(q))?;
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.dim {
                let ratio = if w[i] > self.opts.pivot_tol {
                    yb[i].max(0.0) / w[i]
                } else if !phase_one && self.is_art(self.basis[i]) && w[i] < -self.opts.pivot_tol {
                    // A redundant artificial must stay at zero.
                    0.0
                } else {
                    continue;
                };
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, bratio)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                        if (tie && self.basis[i] < self.basis[bi]) || (!tie && ratio < bratio) {
                            Some((i, ratio))
                        } else {
                            Some((bi, bratio))
                        }
                    }
                };
            }
            let Some((r, _)) = best else {
                return Ok(false);
            };
            self.basis[r] = q;
            self.iterations += 1;
            phase_iters += 1;
            if phase_iters > self.cap {
                return Err(LpError::IterationLimit { cap: self.cap });
            }
        }
    }

    /// Swaps zero-level artificials for real columns where possible.
    fn drive_out_artificials(&mut self) -> Result<(), LpError> {
        for pos in 0..self.dim {
            if !self.is_art(self.basis[pos]) {
                continue;
            }
            let f = self.factor()?;
            let mut e = DVector::zeros(self.dim);
            e[pos] = 1.0;
            let row = self.solve_bt(&f, &e)?;
            let candidate = (0..self.k())
                .filter(|j| !self.basis.contains(j))
                .map(|j| (j, self.col_dot(j, &row).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, mag)) = candidate {
                if mag > self.opts.pivot_tol {
                    self.basis[pos] = j;
                }
            }
        }
        Ok(())
    }

    fn solve(&mut self) -> Result<Outcome, LpError> {
        if self.dim == 0 {
            return Ok(Outcome::Optimal);
        }
        self.run_phase(true)?;
        let f = self.factor()?;
        let (yb, _) = self.state(&f, true)?;
        let infeas: f64 = (0..self.dim)
            .filter(|&i| self.is_art(self.basis[i]))
            .map(|i| yb[i].max(0.0))
            .sum();
        let scale = self.objective.iter().fold(1.0f64, |m, o| m.max(o.abs()));
        if infeas > self.opts.feas_tol * scale {
            return Ok(Outcome::DualInfeasible);
        }
        self.drive_out_artificials()?;
        if self.run_phase(false)? {
            Ok(Outcome::Optimal)
        } else {
            Ok(Outcome::DualUnbounded)
        }
    }

    fn solution(&self) -> LpSolution {
        let mut duals = vec![0.0; self.original_rows];
        if self.dim == 0 {
            return LpSolution {
                status: LpStatus::Optimal,
                point: Some(Vec::new()),
                value: Some(0.0),
                iterations: self.iterations,
                duals: Some(duals),
            };
        }
        let f = self.factor().expect("basis was factorised during the solve");
        let (yb, x) = self.state(&f, false).expect("basis was factorised during the solve");
        for (i, &j) in self.basis.iter().enumerate() {
            if !self.is_art(j) {
                let (orig, scale) = self.origin[j];
                duals[orig] = yb[i].max(0.0) / scale;
            }
        }
        let z: Vec<f64> = x.iter().copied().collect();
        LpSolution {
            status: LpStatus::Optimal,
            value: Some(dot(&self.objective, &z)),
            point: Some(z),
            iterations: self.iterations,
            duals: Some(duals),
        }
    }
}

/// Affine functional `coef · z + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub coef: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn new(coef: Vec<f64>, constant: f64) -> Self {
        Affine { coef, constant }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        dot(&self.coef, z) + self.constant
    }
}

/// Lower bound imposed on the Charnes–Cooper scale variable.
pub const SIGMA_MIN: f64 = 1e-9;

/// `minimize num(z) / den(z)` over `poly`, assuming `den > 0` on `poly`.
///
/// With `s = 1/den(z)` and `r = s z` the problem becomes the LP
/// `min e·r + f s` s.t. `A r >= c s`, `g·r + h s = 1`, `s >= SIGMA_MIN`,
/// and the optimum maps back through `z = r / s`.
pub fn lfp_minimize(num: &Affine, den: &Affine, poly: &Polyhedron) -> Result<LpSolution, LpError> {
    lfp_minimize_with(num, den, poly, &SimplexOptions::default())
}

pub fn lfp_minimize_with(
    num: &Affine,
    den: &Affine,
    poly: &Polyhedron,
    opts: &SimplexOptions,
) -> Result<LpSolution, LpError> {
    let d = poly.dim();
    for f in [num, den] {
        if f.coef.len() != d {
            return Err(LpError::DimensionMismatch {
                expected: d,
                got: f.coef.len(),
            });
        }
    }
    let mut lifted = Polyhedron::new(d + 1);
    let mut row = vec![0.0; d + 1];
    for (a, c) in poly.rows() {
        row[..d].copy_from_slice(a);
        row[d] = -c;
        lifted.push(&row, 0.0)?;
    }
    row[..d].copy_from_slice(&den.coef);
    row[d] = den.constant;
    lifted.push(&row, 1.0)?;
    let neg: Vec<f64> = row.iter().map(|x| -x).collect();
    lifted.push(&neg, -1.0)?;
    let mut s_row = vec![0.0; d + 1];
    s_row[d] = 1.0;
    lifted.push(&s_row, SIGMA_MIN)?;

    let mut objective = num.coef.clone();
    objective.push(num.constant);
    let sol = lp_minimize_with(&objective, &lifted, opts)?;
    if !sol.is_optimal() {
        return Ok(LpSolution {
            duals: None,
            ..sol
        });
    }
    let x = sol.point.expect("optimal LP carries a point");
    let s = x[d];
    let z: Vec<f64> = x[..d].iter().map(|r| r / s).collect();
    let den_val = den.eval(&z);
    if !(den_val > 0.0) {
        return Err(LpError::DenominatorNotPositive { value: den_val });
    }
    let value = num.eval(&z) / den_val;
    Ok(LpSolution {
        status: LpStatus::Optimal,
        point: Some(z),
        value: Some(value),
        iterations: sol.iterations,
        duals: None,
    })
}
