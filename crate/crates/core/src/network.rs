//! The second-stage network in its four flavours.
//!
//! All variants share the mean path `L2-norm → FC1 → ReLU → FC2`, where FC2
//! emits a `(C + 1) × 3` block of `[class logit, start offset, end offset]`
//! per class (class 0 is background).
//!
//! * `Baseline` uses the mean path alone.
//! * `VanI` feeds `[m/‖m‖, v/‖m‖²]` into a doubled-width FC1.
//! * `VanO` adds a head on the hidden activations that predicts
//!   `log σ²` for every boundary.
//! * `VanP` propagates means and variances through every layer during
//!   training and reads boundary variances off the FC2 variance stream. In
//!   test mode it runs the mean path only.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{
    l2norm_forward, l2norm_forward_moments, linear_backward, linear_forward_moments,
    linear_forward_tape, relu_backward, relu_forward_moments, relu_forward_tape, LinearGrad,
    LinearTape, PooledFeature, ReluTape,
};
use crate::losses::DEFAULT_SIGMA_T2;
use crate::moments::{GaussianScalar, MomentVector, WeightMatrix, VARIANCE_FLOOR};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    VanI,
    VanO,
    VanP,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::VanI, Variant::VanO, Variant::VanP];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::VanI => "van_i",
            Variant::VanO => "van_o",
            Variant::VanP => "van_p",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::usage(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub variant: Variant,
    /// Unit feature dimension.
    pub dim: usize,
    /// Number of pooling parts inside a proposal.
    pub k: usize,
    pub hidden: usize,
    /// Number of action classes, background excluded.
    pub classes: usize,
    pub sigma_t2: f64,
}

impl NetworkConfig {
    /// The full-size architecture: 2048-d units, three parts, 1000 hidden
    /// units and 20 action classes.
    pub fn reference(variant: Variant) -> Self {
        Self {
            variant,
            dim: 2048,
            k: 3,
            hidden: 1000,
            classes: 20,
            sigma_t2: DEFAULT_SIGMA_T2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.k == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::usage("dim, k, hidden and classes must all be at least 1"));
        }
        if !(self.sigma_t2 > 0.0) {
            return Err(Error::usage("sigma_t2 must be positive"));
        }
        Ok(())
    }

    /// Length of the pooled feature, `(k + 2) · D`.
    pub fn pooled_dim(&self) -> usize {
        (self.k + 2) * self.dim
    }

    /// Width of FC1's input.
    pub fn input_dim(&self) -> usize {
        match self.variant {
            Variant::VanI => 2 * self.pooled_dim(),
            _ => self.pooled_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        (self.classes + 1) * 3
    }

    pub fn with_variant(self, variant: Variant) -> Self {
        Self { variant, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub fc1: WeightMatrix,
    pub fc2: WeightMatrix,
    /// `hidden × (C + 1)·2` log-variance head, `VanO` only.
    pub var_head: Option<WeightMatrix>,
}

impl NetworkParams {
    pub fn param_count(&self) -> usize {
        self.fc1.param_count()
            + self.fc2.param_count()
            + self.var_head.as_ref().map_or(0, WeightMatrix::param_count)
    }

    /// Layers in a fixed order: fc1, fc2, then the variance head if any.
    pub fn layers(&self) -> Vec<(&'static str, &WeightMatrix)> {
        let mut out = vec![("fc1", &self.fc1), ("fc2", &self.fc2)];
        if let Some(h) = &self.var_head {
            out.push(("var_head", h));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut WeightMatrix> {
        let mut out = vec![&mut self.fc1, &mut self.fc2];
        if let Some(h) = &mut self.var_head {
            out.push(h);
        }
        out
    }
}

/// Gradients for every parameter, laid out like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub fc1: LinearGrad,
    pub fc2: LinearGrad,
    pub var_head: Option<LinearGrad>,
}

impl ParamGrads {
    pub fn zeros(params: &NetworkParams) -> Self {
        Self {
            fc1: LinearGrad::zeros(&params.fc1),
            fc2: LinearGrad::zeros(&params.fc2),
            var_head: params.var_head.as_ref().map(LinearGrad::zeros),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        self.fc1.add_assign(&other.fc1);
        self.fc2.add_assign(&other.fc2);
        if let (Some(a), Some(b)) = (&mut self.var_head, &other.var_head) {
            a.add_assign(b);
        }
    }

    pub fn layers(&self) -> Vec<&LinearGrad> {
        let mut out = vec![&self.fc1, &self.fc2];
        if let Some(h) = &self.var_head {
            out.push(h);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for g in [&mut self.fc1, &mut self.fc2].into_iter().chain(self.var_head.as_mut()) {
            g.weights.iter_mut().for_each(|v| *v *= s);
            g.bias.iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub start: GaussianScalar,
    pub end: GaussianScalar,
}

/// Network output for one proposal: raw class logits and per-class boundary
/// offsets. Variances are the predicted ones for `VanO`, and for `VanP` in
/// train mode; otherwise they hold the placeholder `σ_t²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub class_scores: Vec<f64>,
    pub boundaries: Vec<Boundary>,
}

/// Gradient of a loss with respect to a [`DetectionResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGrad {
    pub class_scores: Vec<f64>,
    pub start_mu: Vec<f64>,
    pub start_var: Vec<f64>,
    pub end_mu: Vec<f64>,
    pub end_var: Vec<f64>,
}

impl DetectionGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            class_scores: vec![0.0; n],
            start_mu: vec![0.0; n],
            start_var: vec![0.0; n],
            end_mu: vec![0.0; n],
            end_var: vec![0.0; n],
        }
    }
}

#[derive(Debug)]
struct TrainTape {
    fc1: LinearTape,
    relu: ReluTape,
    fc2: LinearTape,
    /// `VanO`: head tape and predicted variances.
    head: Option<(LinearTape, Vec<f64>)>,
    /// `VanP`: raw FC2 output variances before flooring.
    out_variances: Option<Vec<f64>>,
}

/// Record of a forward call. Only train-mode tapes can be differentiated.
#[derive(Debug)]
pub struct NetworkTape {
    mode: Mode,
    variant: Variant,
    inner: Option<TrainTape>,
}

impl NetworkTape {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: NetworkParams,
}

fn uniform_layer<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> WeightMatrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    WeightMatrix {
        rows,
        cols,
        values,
        bias: vec![0.0; cols],
    }
}

impl Network {
    /// Draws weights uniformly in `±1/√fan_in` with zero biases. The `VanO`
    /// head's bias starts at `ln σ_t²` so initial predicted variances sit
    /// near the target variance.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[0x1a17]);
        let fc1 = uniform_layer(config.input_dim(), config.hidden, &mut rng);
        let fc2 = uniform_layer(config.hidden, config.output_dim(), &mut rng);
        let var_head = (config.variant == Variant::VanO).then(|| {
            let mut h = uniform_layer(config.hidden, (config.classes + 1) * 2, &mut rng);
            h.bias.fill(config.sigma_t2.ln());
            h
        });
        Ok(Self {
            config,
            params: NetworkParams { fc1, fc2, var_head },
        })
    }

    pub fn from_parts(config: NetworkConfig, params: NetworkParams) -> Result<Self> {
        config.validate()?;
        let expect = |w: &WeightMatrix, rows, cols, name: &str| {
            if (w.rows, w.cols) == (rows, cols) && w.values.len() == rows * cols && w.bias.len() == cols {
                Ok(())
            } else {
                Err(Error::usage(format!(
                    "{name} is {}x{}, config requires {rows}x{cols}",
                    w.rows, w.cols
                )))
            }
        };
        expect(&params.fc1, config.input_dim(), config.hidden, "fc1")?;
        expect(&params.fc2, config.hidden, config.output_dim(), "fc2")?;
        match (&params.var_head, config.variant) {
            (Some(h), Variant::VanO) => expect(h, config.hidden, (config.classes + 1) * 2, "var_head")?,
            (None, Variant::VanO) => return Err(Error::usage("van_o needs a variance head")),
            (Some(_), _) => return Err(Error::usage("variance head present on a non-van_o network")),
            (None, _) => {}
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    fn check_feature(&self, feature: &PooledFeature) -> Result<()> {
        if feature.len() != self.config.pooled_dim() {
            return Err(Error::usage(format!(
                "pooled feature has length {}, network expects {}",
                feature.len(),
                self.config.pooled_dim()
            )));
        }
        Ok(())
    }

    fn assemble(&self, out_means: &[f64], variance_of: impl Fn(usize, usize) -> f64) -> DetectionResult {
        let n = self.config.classes + 1;
        let class_scores = (0..n).map(|c| out_means[c * 3]).collect();
        let boundaries = (0..n)
            .map(|c| Boundary {
                start: GaussianScalar::new(out_means[c * 3 + 1], variance_of(c, 0)),
                end: GaussianScalar::new(out_means[c * 3 + 2], variance_of(c, 1)),
            })
            .collect();
        DetectionResult {
            class_scores,
            boundaries,
        }
    }

    pub fn forward(&self, feature: &PooledFeature, mode: Mode) -> Result<(DetectionResult, NetworkTape)> {
        self.check_feature(feature)?;
        let variant = self.config.variant;
        let sigma_t2 = self.config.sigma_t2;
        let p = &self.params;

        if variant == Variant::VanP && mode == Mode::Train {
            let (x, _) = l2norm_forward_moments(&feature.moments)?;
            let (h, fc1) = linear_forward_moments(&p.fc1, &x)?;
            let (r, relu) = relu_forward_moments(&h);
            let (o, fc2) = linear_forward_moments(&p.fc2, &r)?;
            let det = self.assemble(&o.means, |c, side| o.variances[c * 3 + 1 + side].max(VARIANCE_FLOOR));
            let tape = TrainTape {
                fc1,
                relu,
                fc2,
                head: None,
                out_variances: Some(o.variances),
            };
            return Ok((
                det,
                NetworkTape {
                    mode,
                    variant,
                    inner: Some(tape),
                },
            ));
        }

        let input = match variant {
            Variant::VanI => {
                let (x, _) = l2norm_forward_moments(&feature.moments)?;
                let mut v = x.means;
                v.extend(x.variances);
                v
            }
            _ => l2norm_forward(&feature.moments.means)?.0,
        };
        let (h, fc1) = linear_forward_tape(&p.fc1, &input)?;
        let (r, relu) = relu_forward_tape(&h);
        let (o, fc2) = linear_forward_tape(&p.fc2, &r)?;

        let head = match &p.var_head {
            Some(w) => {
                let (s, tape) = linear_forward_tape(w, &r)?;
                let vars: Vec<f64> = s.iter().map(|v| v.exp().max(VARIANCE_FLOOR)).collect();
                Some((tape, vars))
            }
            None => None,
        };
        let det = match &head {
            Some((_, vars)) => self.assemble(&o, |c, side| vars[c * 2 + side]),
            None => self.assemble(&o, |_, _| sigma_t2),
        };
        let inner = (mode == Mode::Train).then_some(TrainTape {
            fc1,
            relu,
            fc2,
            head,
            out_variances: None,
        });
        Ok((det, NetworkTape { mode, variant, inner }))
    }

    /// Chain rule from an output gradient back to every parameter.
    pub fn backward(&self, tape: NetworkTape, grad: &DetectionGrad) -> Result<ParamGrads> {
        if tape.variant != self.config.variant {
            return Err(Error::usage(format!(
                "tape from a {} network passed to a {} network",
                tape.variant, self.config.variant
            )));
        }
        let inner = match (tape.mode, tape.inner) {
            (Mode::Train, Some(t)) => t,
            _ => return Err(Error::usage("backward needs a train-mode tape")),
        };
        let n = self.config.classes + 1;
        if grad.class_scores.len() != n {
            return Err(Error::usage("output gradient has the wrong number of classes"));
        }
        let p = &self.params;

        let mut g_out = vec![0.0; n * 3];
        for c in 0..n {
            g_out[c * 3] = grad.class_scores[c];
            g_out[c * 3 + 1] = grad.start_mu[c];
            g_out[c * 3 + 2] = grad.end_mu[c];
        }
        let g_out_var = match &inner.out_variances {
            Some(vars) => {
                let mut gv = vec![0.0; n * 3];
                for c in 0..n {
                    for (side, g) in [(1, grad.start_var[c]), (2, grad.end_var[c])] {
                        // floored outputs do not move with the weights
                        if vars[c * 3 + side] > VARIANCE_FLOOR {
                            gv[c * 3 + side] = g;
                        }
                    }
                }
                gv
            }
            None => Vec::new(),
        };

        let (g_r, fc2) = linear_backward(&p.fc2, inner.fc2, &g_out, &g_out_var)?;
        let mut g_r_means = g_r.means;
        let var_head = match (inner.head, &p.var_head) {
            (Some((tape, vars)), Some(w)) => {
                let mut g_s = vec![0.0; n * 2];
                for c in 0..n {
                    for (side, g) in [(0, grad.start_var[c]), (1, grad.end_var[c])] {
                        let v = vars[c * 2 + side];
                        if v > VARIANCE_FLOOR {
                            g_s[c * 2 + side] = g * v;
                        }
                    }
                }
                let (g_hr, gh) = linear_backward(w, tape, &g_s, &[])?;
                g_r_means.iter_mut().zip(&g_hr.means).for_each(|(a, b)| *a += b);
                Some(gh)
            }
            _ => None,
        };
        let g_h = relu_backward(inner.relu, &g_r_means, &g_r.variances)?;
        let (_, fc1) = linear_backward(&p.fc1, inner.fc1, &g_h.means, &g_h.variances)?;
        Ok(ParamGrads { fc1, fc2, var_head })
    }
}

/// Propagated variances of every FC2 output under `VanP` moment propagation,
/// regardless of the network's own variant. Useful for inspecting what the
/// variance stream would predict.
pub fn propagate_output_moments(params: &NetworkParams, feature: &PooledFeature) -> Result<MomentVector> {
    let (x, _) = l2norm_forward_moments(&feature.moments)?;
    let (h, _) = linear_forward_moments(&params.fc1, &x)?;
    let (r, _) = relu_forward_moments(&h);
    Ok(linear_forward_moments(&params.fc2, &r)?.0)
}
