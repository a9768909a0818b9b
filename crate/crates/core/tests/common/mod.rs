#![allow(dead_code)]

use l1adapt::lp::{Affine, Polyhedron};
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.range(lo, hi)).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `[-1, 1]^dim` cut by random halfspaces, at most `max_rows` rows in all.
/// About one in five instances is empty.
pub fn random_polytope(rng: &mut Rng, dim: usize, max_rows: usize) -> Polyhedron {
    let mut p = Polyhedron::boxed(&vec![-1.0; dim], &vec![1.0; dim]);
    let extra = max_rows.saturating_sub(2 * dim);
    let k = if extra == 0 { 0 } else { rng.below(extra + 1) };
    let z0 = rng.vec(dim, -0.8, 0.8);
    for _ in 0..k {
        let a = rng.vec(dim, -1.0, 1.0);
        let slack = rng.range(-0.15, 0.6);
        p.push(&a, dot(&a, &z0) - slack).unwrap();
    }
    p
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Every vertex of a polytope, by solving each `dim`-subset of rows.
pub fn vertices(p: &Polyhedron) -> Vec<Vec<f64>> {
    let d = p.dim();
    let mut out = Vec::new();
    for s in subsets(p.num_rows(), d) {
        let a = DMatrix::from_fn(d, d, |i, j| p.row(s[i])[j]);
        let c = DVector::from_iterator(d, s.iter().map(|&i| p.rhs(i)));
        let lu = a.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(z) = lu.solve(&c) else { continue };
        let z: Vec<f64> = z.iter().copied().collect();
        if p.contains(&z, 1e-9) {
            out.push(z);
        }
    }
    out
}

/// Minimum of `num / den` over the vertices, `None` if there are none.
pub fn lfp_by_vertices(num: &Affine, den: &Affine, p: &Polyhedron) -> Option<f64> {
    vertices(p)
        .iter()
        .map(|z| num.eval(z) / den.eval(z))
        .min_by(|a, b| a.total_cmp(b))
}

/// An affine denominator that stays above 0.1 on `[-1, 1]^dim`.
pub fn positive_den(rng: &mut Rng, dim: usize) -> Affine {
    let g = rng.vec(dim, -1.0, 1.0);
    let h = g.iter().map(|x| x.abs()).sum::<f64>() + rng.range(0.1, 2.0);
    Affine::new(g, h)
}

/// Euclidean projection onto `{A z >= c}` by brute force over active sets:
/// for each subset the KKT system is solved and the best feasible point
/// with nonnegative multipliers is kept.
pub fn project_by_active_sets(x: &[f64], p: &Polyhedron) -> Vec<f64> {
    let d = p.dim();
    if p.contains(x, 0.0) {
        return x.to_vec();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 1..=d.min(p.num_rows()) {
        for s in subsets(p.num_rows(), k) {
            // z = x + A_S^T λ with A_S z = c_S.
            let a = DMatrix::from_fn(k, d, |i, j| p.row(s[i])[j]);
            let gram = &a * a.transpose();
            let c = DVector::from_iterator(k, s.iter().map(|&i| p.rhs(i)));
            let rhs = c - &a * DVector::from_column_slice(x);
            let Some(lambda) = gram.lu().solve(&rhs) else { continue };
            if lambda.iter().any(|l| *l < -1e-12) {
                continue;
            }
            let z = DVector::from_column_slice(x) + a.transpose() * lambda;
            let z: Vec<f64> = z.iter().copied().collect();
            if !p.contains(&z, 1e-10) {
                continue;
            }
            let dist: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().map_or(true, |(bd, _)| dist < *bd) {
                best = Some((dist, z));
            }
        }
    }
    best.expect("nonempty polytope has a projection").1
}
