//! Cardinality-constrained least squares: a convex reference problem
//! small enough for exhaustive oracles.
//!
//! minimize 0.5 * ||A x - b||^2  subject to  ||x||_0 <= alpha
//! (optionally with the nonzeros restricted to quantization levels).
//!
//! The subproblem-1 solve is exact here: the augmented objective is a
//! ridge system solved by Gaussian elimination, so engine behavior can be
//! compared against enumeration over all supports (and sign patterns).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{PruneMask, WeightTensor};

use super::{LayerPenalty, SubproblemSolver};

#[derive(Debug, Clone)]
pub struct ToyLeastSquares {
    /// Row-major (rows x vars) design matrix.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub vars: usize,
    x: WeightTensor,
}

impl ToyLeastSquares {
    pub fn new(a: Vec<f64>, b: Vec<f64>, rows: usize, vars: usize) -> Result<Self> {
        if a.len() != rows * vars || b.len() != rows {
            return Err(Error::Config("design matrix dims mismatch".into()));
        }
        Ok(Self {
            a,
            b,
            rows,
            vars,
            x: WeightTensor::zeros(vec![vars]),
        })
    }

    /// Random instance with a planted sparse solution plus noise.
    pub fn random(rows: usize, vars: usize, planted: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..rows * vars)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut x_true = vec![0.0f64; vars];
        for i in 0..planted.min(vars) {
            x_true[i] = rng.random_range(0.5..1.5) * if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
        }
        let mut b = vec![0.0f64; rows];
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..vars {
                acc += a[r * vars + c] * x_true[c];
            }
            b[r] = acc + noise * rng.random_range(-1.0..1.0);
        }
        let mut toy = Self::new(a, b, rows, vars).unwrap();
        // Start from the unconstrained least-squares solution, playing the
        // role of the pretrained model.
        let x0 = toy.solve_ridge(0.0, None, None, &vec![true; vars]);
        toy.x = WeightTensor::from_vec(x0.iter().map(|&v| v as f32).collect());
        toy
    }

    pub fn x(&self) -> &WeightTensor {
        &self.x
    }

    pub fn set_x(&mut self, x: WeightTensor) {
        self.x = x;
    }

    /// 0.5 * ||A x - b||^2.
    pub fn objective(&self, x: &[f32]) -> f64 {
        let mut total = 0.0f64;
        for r in 0..self.rows {
            let mut acc = -self.b[r];
            for c in 0..self.vars {
                acc += self.a[r * self.vars + c] * x[c] as f64;
            }
            total += acc * acc;
        }
        0.5 * total
    }

    /// Exact minimizer of
    ///   0.5||Ax - b||^2 + (rho/2)||x - zt||^2 + (rho/2)||x - yt||^2
    /// restricted to the free coordinates (others pinned at zero).
    fn solve_ridge(
        &self,
        rho: f64,
        zt: Option<&[f64]>,
        yt: Option<&[f64]>,
        free: &[bool],
    ) -> Vec<f64> {
        let idx: Vec<usize> = (0..self.vars).filter(|&c| free[c]).collect();
        let k = idx.len();
        if k == 0 {
            return vec![0.0; self.vars];
        }
        // Normal equations on the free columns.
        let mut m = vec![0.0f64; k * k];
        let mut rhs = vec![0.0f64; k];
        for (i, &ci) in idx.iter().enumerate() {
            for (j, &cj) in idx.iter().enumerate() {
                let mut acc = 0.0;
                for r in 0..self.rows {
                    acc += self.a[r * self.vars + ci] * self.a[r * self.vars + cj];
                }
                m[i * k + j] = acc;
            }
            let mut acc = 0.0;
            for r in 0..self.rows {
                acc += self.a[r * self.vars + ci] * self.b[r];
            }
            rhs[i] = acc;
        }
        let mut terms = 0usize;
        for t in [zt, yt].into_iter().flatten() {
            terms += 1;
            for (i, &ci) in idx.iter().enumerate() {
                rhs[i] += rho * t[ci];
            }
        }
        for i in 0..k {
            m[i * k + i] += rho * terms as f64;
        }
        let sol = gauss_solve(&mut m, &mut rhs, k);
        let mut x = vec![0.0f64; self.vars];
        for (i, &ci) in idx.iter().enumerate() {
            x[ci] = sol[i];
        }
        x
    }

    /// Exact least squares restricted to a support (the toy analog of
    /// masked retraining).
    pub fn solve_on_support(&self, keep: &[bool]) -> (Vec<f64>, f64) {
        let x = self.solve_ridge(0.0, None, None, keep);
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let obj = self.objective(&xf);
        (x, obj)
    }

    /// Brute-force best-subset oracle: solves every support of size k
    /// exactly and returns the minimum objective.
    pub fn best_subset(&self, k: usize) -> (Vec<bool>, f64) {
        let mut best_obj = f64::INFINITY;
        let mut best_support = vec![false; self.vars];
        let mut support = vec![false; self.vars];
        self.subset_rec(0, k, &mut support, &mut best_obj, &mut best_support);
        (best_support, best_obj)
    }

    fn subset_rec(
        &self,
        start: usize,
        left: usize,
        support: &mut Vec<bool>,
        best_obj: &mut f64,
        best_support: &mut Vec<bool>,
    ) {
        if left == 0 {
            let (_, obj) = self.solve_on_support(support);
            if obj < *best_obj {
                *best_obj = obj;
                *best_support = support.clone();
            }
            return;
        }
        if start + left > self.vars {
            return;
        }
        support[start] = true;
        self.subset_rec(start + 1, left - 1, support, best_obj, best_support);
        support[start] = false;
        self.subset_rec(start + 1, left, support, best_obj, best_support);
    }

    /// Enumeration oracle for the joint problem: each support of size k,
    /// each level-index pattern c in {±1..±(m/2)}^k, with the interval q
    /// optimized in closed form for that pattern.
    pub fn best_subset_quantized(&self, k: usize, m: usize) -> f64 {
        let half = (m / 2) as i64;
        let mut codes: Vec<i64> = Vec::new();
        for c in 1..=half {
            codes.push(c);
            codes.push(-c);
        }
        let mut best = f64::INFINITY;
        let mut support = Vec::new();
        self.quant_rec(0, k, &mut support, &codes, &mut best);
        best
    }

    fn quant_rec(
        &self,
        start: usize,
        left: usize,
        support: &mut Vec<usize>,
        codes: &[i64],
        best: &mut f64,
    ) {
        if left == 0 {
            let mut pattern = vec![0i64; support.len()];
            self.pattern_rec(support, codes, 0, &mut pattern, best);
            return;
        }
        if start + left > self.vars {
            return;
        }
        support.push(start);
        self.quant_rec(start + 1, left - 1, support, codes, best);
        support.pop();
        self.quant_rec(start + 1, left, support, codes, best);
    }

    fn pattern_rec(
        &self,
        support: &[usize],
        codes: &[i64],
        pos: usize,
        pattern: &mut Vec<i64>,
        best: &mut f64,
    ) {
        if pos == support.len() {
            // x = q * pattern on the support; optimal q = (v.b)/(v.v)
            // for v = A_S * pattern, clamped to q > 0.
            let mut v = vec![0.0f64; self.rows];
            for (i, &c) in support.iter().enumerate() {
                for r in 0..self.rows {
                    v[r] += self.a[r * self.vars + c] * pattern[i] as f64;
                }
            }
            let vv: f64 = v.iter().map(|x| x * x).sum();
            if vv <= 0.0 {
                return;
            }
            let vb: f64 = v.iter().zip(&self.b).map(|(x, y)| x * y).sum();
            let q = (vb / vv).max(0.0);
            let mut obj = 0.0f64;
            for r in 0..self.rows {
                let d = q * v[r] - self.b[r];
                obj += d * d;
            }
            let obj = 0.5 * obj;
            if obj < *best {
                *best = obj;
            }
            return;
        }
        for &c in codes {
            pattern[pos] = c;
            self.pattern_rec(support, codes, pos + 1, pattern, best);
        }
    }
}

/// Gaussian elimination with partial pivoting; m is k x k row-major.
fn gauss_solve(m: &mut [f64], rhs: &mut [f64], k: usize) -> Vec<f64> {
    for col in 0..k {
        let mut pivot = col;
        for row in col + 1..k {
            if m[row * k + col].abs() > m[pivot * k + col].abs() {
                pivot = row;
            }
        }
        if pivot != col {
            for j in 0..k {
                m.swap(col * k + j, pivot * k + j);
            }
            rhs.swap(col, pivot);
        }
        let diag = m[col * k + col];
        if diag.abs() < 1e-12 {
            continue; // singular direction; leave coordinate at zero
        }
        for row in col + 1..k {
            let f = m[row * k + col] / diag;
            if f == 0.0 {
                continue;
            }
            for j in col..k {
                m[row * k + j] -= f * m[col * k + j];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0f64; k];
    for col in (0..k).rev() {
        let mut acc = rhs[col];
        for j in col + 1..k {
            acc -= m[col * k + j] * x[j];
        }
        let diag = m[col * k + col];
        x[col] = if diag.abs() < 1e-12 { 0.0 } else { acc / diag };
    }
    x
}

impl SubproblemSolver for ToyLeastSquares {
    fn layer_count(&self) -> usize {
        1
    }

    fn weights(&self, _layer: usize) -> &WeightTensor {
        &self.x
    }

    fn set_weights(&mut self, _layer: usize, w: WeightTensor) -> Result<()> {
        if w.numel() != self.vars {
            return Err(Error::Config("toy weight size mismatch".into()));
        }
        self.x = w;
        Ok(())
    }

    fn solve_subproblem(
        &mut self,
        penalties: &[LayerPenalty<'_>],
        masks: Option<&[PruneMask]>,
    ) -> Result<f64> {
        let pen = &penalties[0];
        let to64 = |t: &WeightTensor, d: &WeightTensor| -> Vec<f64> {
            t.data()
                .iter()
                .zip(d.data())
                .map(|(&z, &u)| (z - u) as f64)
                .collect()
        };
        let zt = pen.sparsity.map(|(z, u)| to64(z, u));
        let yt = pen.discreteness.map(|(y, v)| to64(y, v));
        let free: Vec<bool> = match masks {
            Some(ms) => ms[0].keep().to_vec(),
            None => vec![true; self.vars],
        };
        let x = self.solve_ridge(pen.rho as f64, zt.as_deref(), yt.as_deref(), &free);
        self.x = WeightTensor::from_vec(x.iter().map(|&v| v as f32).collect());
        Ok(self.objective(self.x.data()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_solve_fits_noiseless_system() {
        // b = 3*x0 - 2*x1 exactly.
        let a = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let b = vec![3.0, -2.0, 1.0];
        let toy = ToyLeastSquares::new(a, b, 3, 2).unwrap();
        let (x, obj) = toy.solve_on_support(&[true, true]);
        assert!((x[0] - 3.0).abs() < 1e-9);
        assert!((x[1] + 2.0).abs() < 1e-9);
        assert!(obj < 1e-18);
    }

    #[test]
    fn best_subset_finds_planted_support() {
        let toy = ToyLeastSquares::random(20, 8, 3, 0.0, 42);
        let (support, obj) = toy.best_subset(3);
        // The planted support is the first three coordinates.
        assert_eq!(&support[..3], &[true, true, true]);
        assert!(obj < 1e-12, "noiseless planted support must fit exactly");
    }

    #[test]
    fn quantized_oracle_is_no_better_than_unconstrained_subset() {
        let toy = ToyLeastSquares::random(20, 8, 3, 0.05, 7);
        let (_, obj) = toy.best_subset(3);
        let qobj = toy.best_subset_quantized(3, 2);
        assert!(qobj >= obj - 1e-12);
    }
}

