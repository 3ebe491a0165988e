//! Moment-propagating layers and their mean-only counterparts.
//!
//! Every layer has a mean-only forward used by the plain network path and a
//! moment forward that carries `(means, variances)` pairs. The moment forward
//! computes its means by calling the mean-only forward, so both paths agree
//! bit for bit whenever they see the same means.
//!
//! Backward passes consume the tape produced by the matching forward call.

mod l2norm;
mod linear;
mod pool;
mod relu;

pub use l2norm::{l2norm_backward, l2norm_forward, l2norm_forward_moments, L2NormTape};
pub use linear::{
    linear_backward, linear_forward, linear_forward_moments, linear_forward_tape, LinearGrad,
    LinearTape,
};
pub use pool::{part_sizes, vap_pool, PooledFeature};
pub use relu::{relu_backward, relu_forward, relu_forward_moments, relu_forward_tape, ReluTape};

/// Gradient of a scalar objective with respect to a layer's input moments.
/// `variances` is empty when the layer ran on means only.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGrad {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

use crate::error::{Error, Result};

fn check_grad_len(layer: &str, stream: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "{layer} backward: {stream} gradient has length {got}, tape expects {want}"
        )))
    }
}
