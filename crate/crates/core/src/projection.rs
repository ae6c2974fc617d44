//! Euclidean projections onto the sparsity and discreteness constraint
//! sets, plus quantization-interval fitting and 1-D k-means centroids.
//!
//! All operations are pure; masked-out entries are exactly zero in every
//! output.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{PruneMask, WeightTensor};

/// Cardinality constraint: at most `alpha` nonzero elements in a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityConstraint {
    pub alpha: usize,
}

/// Equal-distance quantization levels {±q, ±2q, ..., ±(m/2)·q}.
///
/// Zero is not a level: pruned weights are stored through the mask, and
/// all 2^n codes address nonzero levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    /// Level count, even and >= 2 (usually 2^bits).
    pub m: usize,
    /// Interval between adjacent levels, > 0.
    pub q: f32,
}

impl QuantSpec {
    pub fn new(m: usize, q: f32) -> Result<Self> {
        if m < 2 || m % 2 != 0 {
            return Err(Error::Config(format!("level count {} must be even and >= 2", m)));
        }
        if !q.is_finite() || q <= 0.0 {
            return Err(Error::Config(format!("interval {} must be positive", q)));
        }
        Ok(Self { m, q })
    }

    /// All levels in ascending order: -h·q ... -q, q ... h·q with h = m/2.
    pub fn levels(&self) -> Vec<f32> {
        let half = (self.m / 2) as i64;
        let mut out = Vec::with_capacity(self.m);
        for k in (1..=half).rev() {
            out.push(-(k as f32) * self.q);
        }
        for k in 1..=half {
            out.push(k as f32 * self.q);
        }
        out
    }

    /// Nearest level to `w`; exact midpoints round away from zero.
    pub fn nearest_level(&self, w: f32) -> f32 {
        let half = (self.m / 2) as f32;
        // f32::round rounds halfway cases away from zero, which is the
        // documented tie rule.
        let k = (w.abs() / self.q).round().clamp(1.0, half);
        let sign = if w.is_sign_negative() { -1.0 } else { 1.0 };
        sign * k * self.q
    }
}

/// Clustering constraint: at most `m` shared values, with trainable
/// centroids and per-surviving-weight assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub m: usize,
    /// Ascending centroid values, length <= m.
    pub centroids: Vec<f32>,
    /// Cluster id per surviving weight, in flat tensor order.
    pub assignment: Vec<u32>,
}

impl ClusterSpec {
    pub fn new(m: usize, centroids: Vec<f32>) -> Result<Self> {
        if m < 1 {
            return Err(Error::Config("cluster count must be >= 1".into()));
        }
        if centroids.is_empty() || centroids.len() > m {
            return Err(Error::Config(format!(
                "need between 1 and {} centroids, got {}",
                m,
                centroids.len()
            )));
        }
        Ok(Self {
            m,
            centroids,
            assignment: Vec::new(),
        })
    }

    pub fn nearest_centroid(&self, w: f32) -> usize {
        nearest_index(&self.centroids, w)
    }
}

fn nearest_index(centroids: &[f32], w: f32) -> usize {
    let mut best = 0usize;
    let mut best_d = f32::INFINITY;
    for (j, &c) in centroids.iter().enumerate() {
        let d = (w - c).abs();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Keeps the `alpha` elements of largest magnitude and zeroes the rest.
/// Ties at the threshold magnitude keep the lower flat index.
///
/// Among all alpha-sparse tensors this minimizes the Frobenius distance
/// to the input.
pub fn project_sparsity(t: &WeightTensor, alpha: usize) -> Result<(WeightTensor, PruneMask)> {
    let n = t.numel();
    if alpha > n {
        return Err(Error::Config(format!(
            "alpha {} exceeds element count {}",
            alpha, n
        )));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let ma = t.data()[a as usize].abs();
        let mb = t.data()[b as usize].abs();
        mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
    });
    let mut keep = vec![false; n];
    for &i in order.iter().take(alpha) {
        keep[i as usize] = true;
    }
    let mut out = t.clone();
    let mask = PruneMask::new(t.shape().to_vec(), keep)?;
    mask.apply(&mut out);
    Ok((out, mask))
}

/// Maps every surviving element to its nearest quantization level.
/// Masked-out elements stay exactly zero. Idempotent.
pub fn project_quantize(t: &WeightTensor, spec: &QuantSpec, mask: &PruneMask) -> WeightTensor {
    assert_eq!(t.shape(), mask.shape(), "mask shape mismatch");
    let mut out = WeightTensor::zeros(t.shape().to_vec());
    for ((o, &v), &k) in out.data_mut().iter_mut().zip(t.data()).zip(mask.keep()) {
        if k {
            *o = spec.nearest_level(v);
        }
    }
    out
}

/// Fits the interval `q` minimizing the total squared quantization error
/// over the surviving weights:
///
///   SSE(q) = sum over masked-in w of (|w| - k(w,q)·q)^2,
///   k(w,q) = clamp(round(|w|/q), 1, m/2).
///
/// SSE is piecewise quadratic in q with assignment breakpoints at
/// |w|/(k+0.5); the global minimum is found by sweeping the breakpoints
/// in descending q order while updating the quadratic coefficients, so
/// the result is exact up to floating point rather than a search
/// approximation.
pub fn fit_interval(t: &WeightTensor, mask: &PruneMask, m: usize) -> Result<f32> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::Config(format!("level count {} must be even and >= 2", m)));
    }
    let half = (m / 2) as u32;
    let mags: Vec<f64> = t
        .data()
        .iter()
        .zip(mask.keep())
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v.abs() as f64)
        .collect();
    if mags.is_empty() {
        return Err(Error::Degenerate("no surviving weights to fit".into()));
    }
    if mags.iter().all(|&a| a == 0.0) {
        return Err(Error::Degenerate(
            "all surviving weights are zero; no interval fits them".into(),
        ));
    }

    // Breakpoints q = a/(k+0.5), descending in q. Crossing one while q
    // decreases bumps that weight's level index from k to k+1.
    let mut breaks: Vec<(f64, f64, u32)> = Vec::new();
    for &a in &mags {
        if a == 0.0 {
            continue;
        }
        for k in 1..half {
            breaks.push((a / (k as f64 + 0.5), a, k));
        }
    }
    breaks.sort_unstable_by(|x, y| y.0.partial_cmp(&x.0).unwrap());

    // Above the largest breakpoint every weight sits on level 1.
    let mut s1: f64 = mags.iter().sum();
    let mut s2: f64 = mags.len() as f64;
    let const_term: f64 = mags.iter().map(|&a| a * a).sum();

    let sse_at = |q: f64, s1: f64, s2: f64| const_term - 2.0 * q * s1 + q * q * s2;
    let eval_segment = |lo: f64, hi: f64, s1: f64, s2: f64| -> (f64, f64) {
        let q_star = (s1 / s2).clamp(lo, hi);
        (q_star, sse_at(q_star, s1, s2))
    };

    let q_max = 2.0 * mags.iter().cloned().fold(0.0f64, f64::max) + 1.0;
    let mut best_q = 0.0f64;
    let mut best_sse = f64::INFINITY;
    let mut hi = q_max;
    for &(qb, a, k) in &breaks {
        let (q_star, sse) = eval_segment(qb, hi, s1, s2);
        if sse < best_sse {
            best_sse = sse;
            best_q = q_star;
        }
        // Move the weight from level k to k+1.
        s1 += a;
        s2 += 2.0 * k as f64 + 1.0;
        hi = qb;
    }
    // Final segment: everything clamped at m/2, down to q -> 0.
    let (q_star, sse) = eval_segment(f64::MIN_POSITIVE, hi, s1, s2);
    if sse < best_sse {
        best_q = q_star;
    }
    Ok(best_q as f32)
}

/// Total squared error of quantizing the surviving weights with interval
/// q, accumulated in f64 so it matches the fitting sweep's metric.
pub fn quantize_sse(t: &WeightTensor, mask: &PruneMask, m: usize, q: f32) -> f64 {
    let half = (m / 2) as f64;
    let q = q as f64;
    t.data()
        .iter()
        .zip(mask.keep())
        .filter(|(_, &k)| k)
        .map(|(&v, _)| {
            let a = (v as f64).abs();
            let k = (a / q).round().clamp(1.0, half);
            let d = a - k * q;
            d * d
        })
        .sum()
}

/// Result of centroid initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidInit {
    pub centroids: Vec<f32>,
    /// True when fewer distinct surviving values than clusters existed and
    /// the centroid list was padded by repetition.
    pub degenerate: bool,
}

/// K-means++ seeding followed by Lloyd's iterations to an assignment
/// fixed point on the surviving 1-D weight values. Deterministic per seed.
pub fn init_centroids(
    t: &WeightTensor,
    mask: &PruneMask,
    m: usize,
    seed: u64,
) -> Result<CentroidInit> {
    if m < 1 {
        return Err(Error::Config("cluster count must be >= 1".into()));
    }
    let values: Vec<f32> = t
        .data()
        .iter()
        .zip(mask.keep())
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .collect();
    if values.is_empty() {
        return Err(Error::Degenerate("no surviving weights to cluster".into()));
    }

    let mut distinct: Vec<f32> = values.clone();
    distinct.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() <= m {
        let mut centroids = distinct.clone();
        let mut i = 0;
        while centroids.len() < m {
            centroids.push(distinct[i % distinct.len()]);
            i += 1;
        }
        centroids.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        return Ok(CentroidInit {
            centroids,
            degenerate: distinct.len() < m,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_seed(&values, m, &mut rng);
    lloyd_to_fixed_point(&values, &mut centroids, 500);
    centroids.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(CentroidInit {
        centroids,
        degenerate: false,
    })
}

fn kmeans_pp_seed(values: &[f32], m: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut centroids = Vec::with_capacity(m);
    centroids.push(values[rng.random_range(0..values.len())]);
    let mut d2: Vec<f64> = values
        .iter()
        .map(|&v| {
            let d = (v - centroids[0]) as f64;
            d * d
        })
        .collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining distances zero; fall back to a uniform pick.
            values[rng.random_range(0..values.len())]
        } else {
            let mut r = rng.random_range(0.0..total);
            let mut pick = values[values.len() - 1];
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = values[i];
                    break;
                }
                r -= d;
            }
            pick
        };
        centroids.push(next);
        for (i, &v) in values.iter().enumerate() {
            let d = (v - next) as f64;
            d2[i] = d2[i].min(d * d);
        }
    }
    centroids
}

/// Re-seeds empty clusters at the value farthest from their current
/// centroid, stealing only from clusters that keep at least one member so
/// the pass terminates even when distinct values are scarcer than
/// clusters. Returns true when anything moved.
fn reseed_empty_clusters(
    values: &[f32],
    centroids: &mut [f32],
    assignment: &mut [usize],
) -> bool {
    let m = centroids.len();
    let mut counts = vec![0usize; m];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    let mut moved = false;
    for empty in 0..m {
        if counts[empty] > 0 {
            continue;
        }
        let c = centroids[empty];
        let far = values
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignment[*i]] >= 2)
            .max_by(|(_, a), (_, b)| (*a - c).abs().partial_cmp(&(*b - c).abs()).unwrap())
            .map(|(i, _)| i);
        // No donor cluster: fewer occupied positions than clusters, which
        // is harmless (an unused duplicate centroid).
        let Some(far) = far else { continue };
        counts[assignment[far]] -= 1;
        counts[empty] += 1;
        centroids[empty] = values[far];
        assignment[far] = empty;
        moved = true;
    }
    moved
}

/// Runs Lloyd updates until the assignment stops changing. Empty clusters
/// are re-seeded at the value farthest from their current centroid.
fn lloyd_to_fixed_point(values: &[f32], centroids: &mut [f32], max_iter: usize) {
    let m = centroids.len();
    let mut assignment = vec![0usize; values.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, &v) in values.iter().enumerate() {
            let j = nearest_index(centroids, v);
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        let reseeded = reseed_empty_clusters(values, centroids, &mut assignment);
        let mut sums = vec![0.0f64; m];
        let mut counts = vec![0usize; m];
        for (i, &v) in values.iter().enumerate() {
            sums[assignment[i]] += v as f64;
            counts[assignment[i]] += 1;
        }
        for j in 0..m {
            if counts[j] > 0 {
                centroids[j] = (sums[j] / counts[j] as f64) as f32;
            }
        }
        if !changed && !reseeded {
            break;
        }
    }
}

/// Assigns every surviving element to its nearest centroid, replaces it by
/// that cluster's post-assignment mean, and returns the projected tensor
/// together with the updated spec (new centroids and assignments).
pub fn project_cluster(
    t: &WeightTensor,
    spec: &ClusterSpec,
    mask: &PruneMask,
) -> Result<(WeightTensor, ClusterSpec)> {
    assert_eq!(t.shape(), mask.shape(), "mask shape mismatch");
    let values: Vec<f32> = t
        .data()
        .iter()
        .zip(mask.keep())
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .collect();
    if values.is_empty() {
        return Err(Error::Degenerate("no surviving weights to cluster".into()));
    }

    let mut centroids = spec.centroids.clone();
    let mut assignment: Vec<usize> = values
        .iter()
        .map(|&v| nearest_index(&centroids, v))
        .collect();

    // Documented policy: an empty cluster is re-seeded at the weight
    // farthest from its current centroid, never an error.
    reseed_empty_clusters(&values, &mut centroids, &mut assignment);

    let mut sums = vec![0.0f64; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (i, &v) in values.iter().enumerate() {
        sums[assignment[i]] += v as f64;
        counts[assignment[i]] += 1;
    }
    for j in 0..centroids.len() {
        if counts[j] > 0 {
            centroids[j] = (sums[j] / counts[j] as f64) as f32;
        }
    }

    let mut out = WeightTensor::zeros(t.shape().to_vec());
    let mut vi = 0usize;
    for (o, &k) in out.data_mut().iter_mut().zip(mask.keep()) {
        if k {
            *o = centroids[assignment[vi]];
            vi += 1;
        }
    }
    let updated = ClusterSpec {
        m: spec.m,
        centroids,
        assignment: assignment.iter().map(|&a| a as u32).collect(),
    };
    Ok((out, updated))
}

/// Within-cluster SSE of the surviving weights against their nearest
/// centroids.
pub fn cluster_sse(values: &[f32], centroids: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| {
            let c = centroids[nearest_index(centroids, v)];
            let d = (v - c) as f64;
            d * d
        })
        .sum()
}
