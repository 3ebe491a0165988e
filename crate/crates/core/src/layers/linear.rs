use super::{check_grad_len, MomentGrad};
use crate::error::{Error, Result};
use crate::moments::{MomentVector, WeightMatrix};

/// Cached input of a linear layer.
#[derive(Debug, Clone)]
pub struct LinearTape {
    rows: usize,
    cols: usize,
    means: Vec<f64>,
    variances: Option<Vec<f64>>,
}

/// Gradients with respect to a layer's weights (row-major) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros(w: &WeightMatrix) -> Self {
        Self {
            weights: vec![0.0; w.values.len()],
            bias: vec![0.0; w.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LinearGrad) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }
}

fn check_input(w: &WeightMatrix, len: usize) -> Result<()> {
    if len == w.rows {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "linear layer expects {} inputs, got {len}",
            w.rows
        )))
    }
}

/// `Wᵀx + b`.
pub fn linear_forward(w: &WeightMatrix, x: &[f64]) -> Result<Vec<f64>> {
    check_input(w, x.len())?;
    let mut out = w.bias.clone();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
    Ok(out)
}

/// Mean-only forward that records what [`linear_backward`] needs.
pub fn linear_forward_tape(w: &WeightMatrix, x: &[f64]) -> Result<(Vec<f64>, LinearTape)> {
    let out = linear_forward(w, x)?;
    let tape = LinearTape {
        rows: w.rows,
        cols: w.cols,
        means: x.to_vec(),
        variances: None,
    };
    Ok((out, tape))
}

/// Diagonal moment propagation: means `Wᵀm + b`, variances `(W∘W)ᵀv`.
pub fn linear_forward_moments(w: &WeightMatrix, x: &MomentVector) -> Result<(MomentVector, LinearTape)> {
    let means = linear_forward(w, &x.means)?;
    let mut variances = vec![0.0; w.cols];
    for (i, &vi) in x.variances.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, &wij) in variances.iter_mut().zip(w.row(i)) {
            *o += wij * wij * vi;
        }
    }
    let tape = LinearTape {
        rows: w.rows,
        cols: w.cols,
        means: x.means.clone(),
        variances: Some(x.variances.clone()),
    };
    Ok((MomentVector { means, variances }, tape))
}

/// Chain rule through [`linear_forward_tape`] or [`linear_forward_moments`].
///
/// `grad_variances` must be empty for a mean-only tape.
pub fn linear_backward(
    w: &WeightMatrix,
    tape: LinearTape,
    grad_means: &[f64],
    grad_variances: &[f64],
) -> Result<(MomentGrad, LinearGrad)> {
    if (tape.rows, tape.cols) != (w.rows, w.cols) {
        return Err(Error::usage(format!(
            "linear backward: tape recorded a {}x{} layer, got {}x{}",
            tape.rows, tape.cols, w.rows, w.cols
        )));
    }
    check_grad_len("linear", "mean", grad_means.len(), w.cols)?;
    let mut gw = vec![0.0; w.values.len()];
    let mut gin_m = vec![0.0; w.rows];
    for i in 0..w.rows {
        let row = w.row(i);
        let xi = tape.means[i];
        let g_row = &mut gw[i * w.cols..(i + 1) * w.cols];
        let mut acc = 0.0;
        for ((gwij, &wij), &g) in g_row.iter_mut().zip(row).zip(grad_means) {
            acc += wij * g;
            *gwij = xi * g;
        }
        gin_m[i] = acc;
    }

    let gin_v = match tape.variances {
        None => {
            check_grad_len("linear", "variance", grad_variances.len(), 0)?;
            Vec::new()
        }
        Some(vars) => {
            check_grad_len("linear", "variance", grad_variances.len(), w.cols)?;
            let mut gin_v = vec![0.0; w.rows];
            for i in 0..w.rows {
                let row = w.row(i);
                let vi = vars[i];
                let g_row = &mut gw[i * w.cols..(i + 1) * w.cols];
                let mut acc = 0.0;
                for ((gwij, &wij), &g) in g_row.iter_mut().zip(row).zip(grad_variances) {
                    acc += wij * wij * g;
                    *gwij += 2.0 * wij * vi * g;
                }
                gin_v[i] = acc;
            }
            gin_v
        }
    };

    Ok((
        MomentGrad {
            means: gin_m,
            variances: gin_v,
        },
        LinearGrad {
            weights: gw,
            bias: grad_means.to_vec(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(m: &[f64], v: &[f64]) -> MomentVector {
        MomentVector::new(m.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_passes_moments() {
        let w = WeightMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2]).unwrap();
        let x = mv(&[0.3, -2.0], &[1.5, 0.25]);
        let (y, _) = linear_forward_moments(&w, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn scalar_affine() {
        let w = WeightMatrix::from_rows(&[vec![2.0]], vec![1.0]).unwrap();
        let (y, _) = linear_forward_moments(&w, &mv(&[3.0], &[4.0])).unwrap();
        assert_eq!((y.means[0], y.variances[0]), (7.0, 16.0));
    }

    #[test]
    fn sum_of_two_inputs() {
        let w = WeightMatrix::from_rows(&[vec![1.0], vec![1.0]], vec![0.0]).unwrap();
        let (y, _) = linear_forward_moments(&w, &mv(&[1.0, 2.0], &[1.0, 1.0])).unwrap();
        assert_eq!((y.means[0], y.variances[0]), (3.0, 2.0));
    }

    #[test]
    fn bias_never_touches_variances() {
        let mut w = WeightMatrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.1]], vec![0.0; 2]).unwrap();
        let x = mv(&[1.0, -1.0], &[0.3, 0.7]);
        let (a, _) = linear_forward_moments(&w, &x).unwrap();
        w.bias = vec![10.0, -3.0];
        let (b, _) = linear_forward_moments(&w, &x).unwrap();
        assert_eq!(a.variances, b.variances);
        assert_ne!(a.means, b.means);
    }

    #[test]
    fn unit_upstream_recovers_weight_row() {
        let w = WeightMatrix::from_rows(&[vec![0.5, -1.0, 3.0], vec![2.0, 0.1, -0.2]], vec![0.0; 3]).unwrap();
        let (_, tape) = linear_forward_moments(&w, &mv(&[1.0, 2.0], &[0.1, 0.1])).unwrap();
        let (g, _) = linear_backward(&w, tape, &[0.0, 1.0, 0.0], &[0.0; 3]).unwrap();
        // input-mean gradient is column j of Wᵀ, i.e. W[., j]
        assert_eq!(g.means, vec![-1.0, 0.1]);
        assert_eq!(g.variances, vec![0.0, 0.0]);
    }

    #[test]
    fn mismatches_are_usage_errors() {
        let w = WeightMatrix::zeros(2, 3);
        assert!(matches!(linear_forward(&w, &[1.0]), Err(Error::Usage(_))));
        let (_, tape) = linear_forward_tape(&w, &[1.0, 1.0]).unwrap();
        assert!(linear_backward(&w, tape.clone(), &[1.0; 2], &[]).is_err());
        assert!(linear_backward(&w, tape.clone(), &[1.0; 3], &[1.0; 3]).is_err());
        let other = WeightMatrix::zeros(3, 3);
        assert!(linear_backward(&other, tape, &[1.0; 3], &[]).is_err());
    }
}
