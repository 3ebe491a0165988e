use super::{check_grad_len, MomentGrad};
use crate::error::Result;
use crate::moments::MomentVector;

#[derive(Debug, Clone)]
pub struct ReluTape {
    means: Vec<f64>,
    with_variances: bool,
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&m| m.max(0.0)).collect()
}

pub fn relu_forward_tape(x: &[f64]) -> (Vec<f64>, ReluTape) {
    let tape = ReluTape {
        means: x.to_vec(),
        with_variances: false,
    };
    (relu_forward(x), tape)
}

/// ReLU on the means; a variance survives only where its mean is
/// non-negative. This is a cheap stand-in for the exact rectified-Gaussian
/// moments (see `verify::relu_exact_moments`), accurate once `μ ≫ σ`.
pub fn relu_forward_moments(x: &MomentVector) -> (MomentVector, ReluTape) {
    let means = relu_forward(&x.means);
    let variances = x
        .means
        .iter()
        .zip(&x.variances)
        .map(|(&m, &v)| if m >= 0.0 { v } else { 0.0 })
        .collect();
    let tape = ReluTape {
        means: x.means.clone(),
        with_variances: true,
    };
    (MomentVector { means, variances }, tape)
}

/// The variance gate is a step in the mean, so it contributes no mean gradient.
pub fn relu_backward(tape: ReluTape, grad_means: &[f64], grad_variances: &[f64]) -> Result<MomentGrad> {
    let n = tape.means.len();
    check_grad_len("relu", "mean", grad_means.len(), n)?;
    let means = tape
        .means
        .iter()
        .zip(grad_means)
        .map(|(&m, &g)| if m > 0.0 { g } else { 0.0 })
        .collect();
    let variances = if tape.with_variances {
        check_grad_len("relu", "variance", grad_variances.len(), n)?;
        tape.means
            .iter()
            .zip(grad_variances)
            .map(|(&m, &g)| if m >= 0.0 { g } else { 0.0 })
            .collect()
    } else {
        check_grad_len("relu", "variance", grad_variances.len(), 0)?;
        Vec::new()
    };
    Ok(MomentGrad { means, variances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(m: f64, v: f64) -> (f64, f64) {
        let (y, _) = relu_forward_moments(&MomentVector::new(vec![m], vec![v]).unwrap());
        (y.means[0], y.variances[0])
    }

    #[test]
    fn gate_examples() {
        assert_eq!(one(5.0, 1.0), (5.0, 1.0));
        assert_eq!(one(-2.0, 1.0), (0.0, 0.0));
        assert_eq!(one(0.0, 3.0), (0.0, 3.0));
    }

    #[test]
    fn dead_units_block_both_streams() {
        let x = MomentVector::new(vec![-1.0, 2.0], vec![4.0, 4.0]).unwrap();
        let (_, tape) = relu_forward_moments(&x);
        let g = relu_backward(tape, &[3.0, 3.0], &[5.0, 5.0]).unwrap();
        assert_eq!(g.means, vec![0.0, 3.0]);
        assert_eq!(g.variances, vec![0.0, 5.0]);
    }

    #[test]
    fn mean_only_tape_rejects_variance_grads() {
        let (_, tape) = relu_forward_tape(&[1.0]);
        assert!(relu_backward(tape, &[1.0], &[1.0]).is_err());
    }
}
