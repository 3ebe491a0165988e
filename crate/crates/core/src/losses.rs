//! KL-divergence utilities and the uncertainty-aware regression loss.
//!
//! The regression loss compares a predicted boundary `p ~ N(μ_p, σ_p²)` with
//! a ground-truth Gaussian `t ~ N(μ_t, σ_t²)` through the square root of
//! `KL(t ‖ p)`. When the prediction is no wider than the target the loss
//! collapses to the scaled L1 distance `|μ_t − μ_p| / √(2σ_t²)`; that branch
//! is taken explicitly and has no variance gradient.

use crate::error::{Error, Result};
use crate::moments::GaussianScalar;
use crate::network::{DetectionGrad, DetectionResult};

/// Default ground-truth boundary variance.
pub const DEFAULT_SIGMA_T2: f64 = 0.01;

/// Ground-truth start and end boundaries as Gaussians sharing `σ_t²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionTarget {
    pub start: GaussianScalar,
    pub end: GaussianScalar,
}

impl RegressionTarget {
    pub fn new(start: f64, end: f64, sigma_t2: f64) -> Self {
        Self {
            start: GaussianScalar::new(start, sigma_t2),
            end: GaussianScalar::new(end, sigma_t2),
        }
    }
}

/// What a training proposal should be scored against: class 0 is background
/// and carries no regression target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub label: usize,
    pub target: Option<RegressionTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
    pub lambda_reg: f64,
}

impl LossBreakdown {
    pub fn new(classification: f64, regression: f64, lambda_reg: f64) -> Self {
        Self {
            classification,
            regression,
            total: classification + lambda_reg * regression,
            lambda_reg,
        }
    }
}

/// KL divergence between two univariate Gaussians in the printed form
/// `log(σ_q/σ_p) + (σ_p² + (μ_q − μ_p)²)/(2σ_q²) − 1/2`.
///
/// Note the roles: this equals the textbook `KL(P ‖ Q)`, i.e. the expectation
/// is taken under `p`. `verify::kl_numeric(q, p)` integrates under `q`, so it
/// agrees with `kl_gaussian(p, q)`.
pub fn kl_gaussian(q: GaussianScalar, p: GaussianScalar) -> Result<f64> {
    q.check_positive("q")?;
    p.check_positive("p")?;
    let d = q.mu - p.mu;
    let kl = 0.5 * (q.sigma2 / p.sigma2).ln() + (p.sigma2 + d * d) / (2.0 * q.sigma2) - 0.5;
    Ok(kl.max(0.0))
}

/// Inner KL term of the regression loss, `KL(t ‖ p)`, clamped at zero.
fn kl_target_pred(target: GaussianScalar, pred: GaussianScalar) -> f64 {
    let d = target.mu - pred.mu;
    let k = 0.5 * (pred.sigma2 / target.sigma2).ln()
        + (target.sigma2 + d * d) / (2.0 * pred.sigma2)
        - 0.5;
    k.max(0.0)
}

fn check_pair(target: GaussianScalar, pred: GaussianScalar) -> Result<()> {
    target.check_positive("target")?;
    pred.check_positive("prediction")
}

/// Uncertainty-aware regression loss between a ground-truth boundary and a
/// predicted one.
pub fn kl_regression_loss(target: GaussianScalar, pred: GaussianScalar) -> Result<f64> {
    check_pair(target, pred)?;
    if pred.sigma2 > target.sigma2 {
        Ok(kl_target_pred(target, pred).sqrt())
    } else {
        Ok((target.mu - pred.mu).abs() / (2.0 * target.sigma2).sqrt())
    }
}

/// Derivatives of [`kl_regression_loss`] with respect to `(μ_p, σ_p²)`.
pub fn kl_regression_loss_grad(target: GaussianScalar, pred: GaussianScalar) -> Result<(f64, f64)> {
    check_pair(target, pred)?;
    let d = target.mu - pred.mu;
    if pred.sigma2 > target.sigma2 {
        let loss = kl_target_pred(target, pred).sqrt();
        if loss == 0.0 {
            return Ok((0.0, 0.0));
        }
        let dk_dmu = -d / pred.sigma2;
        let dk_dvar =
            0.5 / pred.sigma2 - (target.sigma2 + d * d) / (2.0 * pred.sigma2 * pred.sigma2);
        Ok((dk_dmu / (2.0 * loss), dk_dvar / (2.0 * loss)))
    } else {
        // d|μ_t − μ_p|/dμ_p = −sign(μ_t − μ_p); zero at the kink
        let slope = 1.0 / (2.0 * target.sigma2).sqrt();
        let g = if d > 0.0 {
            -slope
        } else if d < 0.0 {
            slope
        } else {
            0.0
        };
        Ok((g, 0.0))
    }
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    log_softmax(scores).into_iter().map(f64::exp).collect()
}

/// Softmax cross-entropy of `scores` (length `C + 1`) against `label`.
pub fn classification_loss(scores: &[f64], label: usize) -> Result<f64> {
    Ok(classification_loss_grad(scores, label)?.0)
}

/// Loss and gradient with respect to the scores.
pub fn classification_loss_grad(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(Error::usage(format!(
            "label {label} out of range for {} classes",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite classification score"));
    }
    let logp = log_softmax(scores);
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok(((-logp[label]).max(0.0), grad))
}

/// Classification plus weighted regression loss for one proposal.
///
/// Regression uses the ground-truth class's boundaries only; start and end
/// losses are summed. Background proposals contribute classification only.
pub fn combined_loss(det: &DetectionResult, assignment: &Assignment, lambda_reg: f64) -> Result<LossBreakdown> {
    Ok(combined_loss_grad(det, assignment, lambda_reg)?.0)
}

pub fn combined_loss_grad(
    det: &DetectionResult,
    assignment: &Assignment,
    lambda_reg: f64,
) -> Result<(LossBreakdown, DetectionGrad)> {
    let (cls, gscores) = classification_loss_grad(&det.class_scores, assignment.label)?;
    let mut grad = DetectionGrad::zeros(det.class_scores.len());
    grad.class_scores = gscores;

    let mut reg = 0.0;
    match (assignment.label, assignment.target) {
        (0, Some(_)) => return Err(Error::usage("background proposal carries a regression target")),
        (0, None) => {}
        (_, None) => return Err(Error::usage("foreground proposal lacks a regression target")),
        (c, Some(t)) => {
            let b = &det.boundaries[c];
            reg = kl_regression_loss(t.start, b.start)? + kl_regression_loss(t.end, b.end)?;
            let (sm, sv) = kl_regression_loss_grad(t.start, b.start)?;
            let (em, ev) = kl_regression_loss_grad(t.end, b.end)?;
            grad.start_mu[c] = lambda_reg * sm;
            grad.start_var[c] = lambda_reg * sv;
            grad.end_mu[c] = lambda_reg * em;
            grad.end_var[c] = lambda_reg * ev;
        }
    }
    Ok((LossBreakdown::new(cls, reg, lambda_reg), grad))
}
