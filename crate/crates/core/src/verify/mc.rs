use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moments::MomentVector;
use crate::rng;

/// Samples per independently seeded chunk.
const CHUNK: usize = 4096;

/// Streaming central moments up to the fourth, mergeable across chunks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    /// Pairwise combination of two disjoint sample sets.
    pub fn merge(&mut self, o: &MomentAccumulator) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let (na, nb) = (self.n, o.n);
        let n = na + nb;
        let d = o.mean - self.mean;
        let d2 = d * d;
        let m2 = self.m2 + o.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + o.m3
            + d * d2 * na * nb * (na - nb) / (n * n)
            + 3.0 * d * (na * o.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + o.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * o.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * o.m3 - nb * self.m3) / n;
        *self = MomentAccumulator {
            n,
            mean: self.mean + d * nb / n,
            m2,
            m3,
            m4,
        };
    }

    pub fn estimate(&self) -> McEstimate {
        let n = self.n;
        let variance = if n > 1.0 { self.m2 / (n - 1.0) } else { 0.0 };
        let m4 = self.m4 / n;
        // Var(s²) ≈ (μ₄ − σ⁴(n − 3)/(n − 1)) / n
        let var_of_var = ((m4 - variance * variance * (n - 3.0) / (n - 1.0)) / n).max(0.0);
        McEstimate {
            mean: self.mean,
            variance,
            se_mean: (variance / n).sqrt(),
            se_variance: var_of_var.sqrt(),
            n: n as usize,
        }
    }
}

/// Sample statistics of one output coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub se_mean: f64,
    /// Standard error of `variance` from the fourth central moment.
    pub se_variance: f64,
    pub n: usize,
}

impl McEstimate {
    /// Distance of `(mean, variance)` from the estimate in standard errors.
    /// A zero standard error counts as a mismatch unless the values agree.
    pub fn z_scores(&self, mean: f64, variance: f64) -> (f64, f64) {
        let z = |got: f64, want: f64, se: f64| {
            let diff = (got - want).abs();
            if se > 0.0 {
                diff / se
            } else if diff <= 1e-12 * (1.0 + want.abs()) {
                0.0
            } else {
                f64::INFINITY
            }
        };
        (z(self.mean, mean, self.se_mean), z(self.variance, variance, self.se_variance))
    }
}

/// Pushes `n` independent draws of the diagonal Gaussian `input` through
/// `map` and summarizes every output coordinate.
///
/// Draws come in fixed-size chunks, each from its own stream keyed by
/// `(seed, chunk)`, and chunk summaries are merged in order, so the result
/// does not depend on how many threads run.
pub fn mc_propagate(
    map: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    input: &MomentVector,
    n: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if n < 1000 {
        return Err(Error::usage("Monte Carlo needs at least 1000 samples"));
    }
    let sds: Vec<f64> = input.variances.iter().map(|v| v.sqrt()).collect();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<MomentAccumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, &[0x3c, c as u64]);
            let count = CHUNK.min(n - c * CHUNK);
            let mut acc: Vec<MomentAccumulator> = Vec::new();
            let mut x = vec![0.0; input.len()];
            for _ in 0..count {
                for ((xi, &m), &s) in x.iter_mut().zip(&input.means).zip(&sds) {
                    let z: f64 = StandardNormal.sample(&mut r);
                    *xi = m + s * z;
                }
                let y = map(&x);
                if acc.is_empty() {
                    acc = vec![MomentAccumulator::default(); y.len()];
                }
                acc.iter_mut().zip(&y).for_each(|(a, &v)| a.push(v));
            }
            acc
        })
        .collect();
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total.iter_mut().zip(p).for_each(|(a, b)| a.merge(b));
    }
    Ok(total.iter().map(MomentAccumulator::estimate).collect())
}
