//! Independent oracles for the analytic formulas: sampling, quadrature and
//! finite differences. Nothing here calls back into the code path it checks
//! except through the public forward functions under test.

mod gradcheck;
mod mc;
mod suite;

pub use gradcheck::{check_moment_layer, check_network_gradient, fd_gradient, rel_error, GradCheck};
pub use mc::{mc_propagate, McEstimate, MomentAccumulator};
pub use suite::{run_suite, write_report, Check, GROUPS};

use statrs::function::erf::erfc;

use crate::error::Result;
use crate::moments::GaussianScalar;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact mean and variance of `max(0, x)` for `x ~ N(μ, σ²)`:
/// `E[y] = μΦ(μ/σ) + σφ(μ/σ)`,
/// `E[y²] = (μ² + σ²)Φ(μ/σ) + μσφ(μ/σ)`.
pub fn relu_exact_moments(x: GaussianScalar) -> Result<(f64, f64)> {
    x.check_positive("relu input")?;
    let (mu, sigma) = (x.mu, x.sigma());
    let z = mu / sigma;
    let (cdf, pdf) = (std_normal_cdf(z), std_normal_pdf(z));
    let mean = mu * cdf + sigma * pdf;
    let second = (mu * mu + x.sigma2) * cdf + mu * sigma * pdf;
    Ok((mean, (second - mean * mean).max(0.0)))
}

/// Closed-form `KL(Q ‖ P) = log(σ_p/σ_q) + (σ_q² + (μ_q − μ_p)²)/(2σ_p²) − 1/2`
/// with the expectation under `q`.
pub fn kl_closed_form(q: GaussianScalar, p: GaussianScalar) -> f64 {
    let d = q.mu - p.mu;
    0.5 * (p.sigma2 / q.sigma2).ln() + (q.sigma2 + d * d) / (2.0 * p.sigma2) - 0.5
}

/// `∫ q(x) log(q(x)/p(x)) dx` by composite Simpson over the union of both
/// `μ ± 10σ` ranges. The grid step never exceeds `σ_q / 50` and `points` sets
/// a lower bound on the node count.
pub fn kl_numeric(q: GaussianScalar, p: GaussianScalar, points: usize) -> Result<f64> {
    q.check_positive("q")?;
    p.check_positive("p")?;
    let (sq, sp) = (q.sigma(), p.sigma());
    let lo = (q.mu - 10.0 * sq).min(p.mu - 10.0 * sp);
    let hi = (q.mu + 10.0 * sq).max(p.mu + 10.0 * sp);
    let mut n = points.max(((hi - lo) / (sq / 50.0)).ceil() as usize).max(3);
    if n % 2 == 0 {
        n += 1;
    }
    let h = (hi - lo) / (n - 1) as f64;
    let log_density = |g: GaussianScalar, x: f64| {
        let d = x - g.mu;
        -0.5 * (2.0 * std::f64::consts::PI * g.sigma2).ln() - d * d / (2.0 * g.sigma2)
    };
    let integrand = |x: f64| {
        let lq = log_density(q, x);
        lq.exp() * (lq - log_density(p, x))
    };
    let mut sum = integrand(lo) + integrand(hi);
    for i in 1..n - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(lo + i as f64 * h);
    }
    Ok(sum * h / 3.0)
}
