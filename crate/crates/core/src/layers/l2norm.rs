use super::{check_grad_len, MomentGrad};
use crate::error::{Error, Result};
use crate::moments::MomentVector;

#[derive(Debug, Clone)]
pub struct L2NormTape {
    means: Vec<f64>,
    variances: Option<Vec<f64>>,
    norm: f64,
}

fn norm_of(x: &[f64]) -> Result<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        Ok(norm)
    } else {
        Err(Error::domain(format!(
            "cannot L2-normalize a vector with norm {norm}"
        )))
    }
}

/// `x / ‖x‖₂`, with a tape for [`l2norm_backward`].
pub fn l2norm_forward(x: &[f64]) -> Result<(Vec<f64>, L2NormTape)> {
    let norm = norm_of(x)?;
    let out = x.iter().map(|v| v / norm).collect();
    let tape = L2NormTape {
        means: x.to_vec(),
        variances: None,
        norm,
    };
    Ok((out, tape))
}

/// Normalizes the means and divides each variance by the squared norm of
/// the means.
pub fn l2norm_forward_moments(x: &MomentVector) -> Result<(MomentVector, L2NormTape)> {
    let (means, mut tape) = l2norm_forward(&x.means)?;
    let sq = tape.norm * tape.norm;
    let variances = x.variances.iter().map(|v| v / sq).collect();
    tape.variances = Some(x.variances.clone());
    Ok((MomentVector { means, variances }, tape))
}

/// The norm depends on the means only, so the variance outputs feed back
/// into the mean gradient through `∂(1/‖m‖²)/∂m = −2m/‖m‖⁴`.
pub fn l2norm_backward(tape: L2NormTape, grad_means: &[f64], grad_variances: &[f64]) -> Result<MomentGrad> {
    let n = tape.means.len();
    check_grad_len("l2norm", "mean", grad_means.len(), n)?;
    let norm = tape.norm;
    let norm3 = norm * norm * norm;
    let proj: f64 = grad_means.iter().zip(&tape.means).map(|(g, m)| g * m).sum();
    let mut gm: Vec<f64> = grad_means
        .iter()
        .zip(&tape.means)
        .map(|(g, m)| g / norm - m * proj / norm3)
        .collect();

    let gv = match tape.variances {
        None => {
            check_grad_len("l2norm", "variance", grad_variances.len(), 0)?;
            Vec::new()
        }
        Some(vars) => {
            check_grad_len("l2norm", "variance", grad_variances.len(), n)?;
            let sq = norm * norm;
            let vproj: f64 = grad_variances.iter().zip(&vars).map(|(g, v)| g * v).sum();
            let scale = -2.0 * vproj / (sq * sq);
            gm.iter_mut().zip(&tape.means).for_each(|(g, m)| *g += scale * m);
            grad_variances.iter().map(|g| g / sq).collect()
        }
    };
    Ok(MomentGrad {
        means: gm,
        variances: gv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let x = MomentVector::new(vec![3.0, 4.0], vec![1.0, 2.0]).unwrap();
        let (y, _) = l2norm_forward_moments(&x).unwrap();
        assert_eq!(y.means, vec![0.6, 0.8]);
        assert!((y.variances[0] - 0.04).abs() < 1e-16);
        assert!((y.variances[1] - 0.08).abs() < 1e-16);
    }

    #[test]
    fn unit_norm_is_fixed() {
        let x = MomentVector::new(vec![0.6, 0.8], vec![0.5, 0.5]).unwrap();
        let (y, _) = l2norm_forward_moments(&x).unwrap();
        assert!(y.means.iter().zip(&x.means).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(y.variances.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn scalar_case() {
        let x = MomentVector::new(vec![2.5], vec![3.0]).unwrap();
        let (y, _) = l2norm_forward_moments(&x).unwrap();
        assert_eq!(y.means, vec![1.0]);
        assert!((y.variances[0] - 3.0 / 6.25).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_is_domain_error() {
        assert!(matches!(l2norm_forward(&[0.0, 0.0]), Err(Error::Domain(_))));
    }
}
