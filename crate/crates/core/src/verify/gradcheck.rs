use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::layers::MomentGrad;
use crate::losses::combined_loss;
use crate::moments::MomentVector;
use crate::network::{Mode, Network};
use crate::rng;
use crate::train::batch_gradient;

/// Gradients smaller than this are compared on an absolute scale, so a
/// coordinate with zero true gradient passes when both sides are ~0.
const GRAD_SCALE_FLOOR: f64 = 1e-6;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR)
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h` for every coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            if up.is_finite() && down.is_finite() {
                Ok((up - down) / (2.0 * step))
            } else {
                Err(Error::domain(format!("non-finite evaluation at coordinate {i}")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }
}

/// Compares a layer's backward pass with finite differences of the scalar
/// `a·means_out + b·variances_out`, where `a` and `b` are random projections.
/// Both input means and input variances are perturbed.
pub fn check_moment_layer(
    forward: impl Fn(&MomentVector) -> Result<MomentVector>,
    backward: impl FnOnce(&MomentVector, &[f64], &[f64]) -> Result<MomentGrad>,
    x: &MomentVector,
    step: f64,
    seed: u64,
) -> Result<GradCheck> {
    let out = forward(x)?;
    let mut r = rng::stream(seed, &[0x9c]);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut r)).collect() };
    let a = draw(out.len());
    let b = draw(out.len());
    let analytic = backward(x, &a, &b)?;

    let n = x.len();
    let objective = |flat: &[f64]| -> f64 {
        let input = MomentVector {
            means: flat[..n].to_vec(),
            variances: flat[n..].to_vec(),
        };
        match forward(&input) {
            Ok(y) => {
                let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
                dot(&a, &y.means) + dot(&b, &y.variances)
            }
            Err(_) => f64::NAN,
        }
    };
    let mut flat = x.means.clone();
    flat.extend_from_slice(&x.variances);
    let numeric = fd_gradient(objective, &flat, step)?;

    let mut want = analytic.means.clone();
    want.extend_from_slice(&analytic.variances);
    if want.len() != numeric.len() {
        return Err(Error::usage("backward returned the wrong number of input gradients"));
    }
    let max_rel_error = want
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_error(*a, *n))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        checked: want.len(),
        max_rel_error,
    })
}

/// Finite-difference check of the full training loss summed over `examples`
/// on `coords` randomly chosen parameters.
pub fn check_network_gradient(
    net: &Network,
    examples: &[Example],
    lambda_reg: f64,
    coords: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheck> {
    let refs: Vec<&Example> = examples.iter().collect();
    let (_, grads) = batch_gradient(net, &refs, lambda_reg)?;
    let flat_grad: Vec<f64> = grads
        .layers()
        .into_iter()
        .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
        .collect();
    let total = flat_grad.len();
    let picks = sample(&mut rng::stream(seed, &[0xfd]), total, coords.min(total)).into_vec();

    let loss_at = |net: &Network| -> Result<f64> {
        examples.iter().try_fold(0.0, |acc, ex| {
            let (det, _) = net.forward(&ex.feature, Mode::Train)?;
            Ok(acc + combined_loss(&det, &ex.assignment, lambda_reg)?.total)
        })
    };

    let mut probe = net.clone();
    let mut max_rel_error = 0.0f64;
    for &idx in &picks {
        let orig = *param_mut(&mut probe, idx);
        *param_mut(&mut probe, idx) = orig + step;
        let up = loss_at(&probe)?;
        *param_mut(&mut probe, idx) = orig - step;
        let down = loss_at(&probe)?;
        *param_mut(&mut probe, idx) = orig;
        let numeric = (up - down) / (2.0 * step);
        max_rel_error = max_rel_error.max(rel_error(flat_grad[idx], numeric));
    }
    Ok(GradCheck {
        checked: picks.len(),
        max_rel_error,
    })
}

/// Flat index order: each layer's weights (row-major) then its bias.
fn param_mut(net: &mut Network, mut idx: usize) -> &mut f64 {
    for w in net.params.layers_mut() {
        if idx < w.values.len() {
            return &mut w.values[idx];
        }
        idx -= w.values.len();
        if idx < w.bias.len() {
            return &mut w.bias[idx];
        }
        idx -= w.bias.len();
    }
    panic!("parameter index out of range")
}
