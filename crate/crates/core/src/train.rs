//! Mini-batch SGD over pooled proposal examples.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::losses::{combined_loss_grad, LossBreakdown};
use crate::network::{Mode, Network, ParamGrads};
use crate::rng;

/// Examples per work unit inside a batch. Fixed so the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::SgdMomentum => "sgd-momentum",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "sgd-momentum" => Ok(Optimizer::SgdMomentum),
            _ => Err(Error::usage(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub iters: usize,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub lambda_reg: f64,
    pub seed: u64,
    /// Cascade steps used when the trained network is evaluated.
    pub cascade: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 128,
            lr: 1e-3,
            iters: 50_000,
            optimizer: Optimizer::SgdMomentum,
            momentum: 0.9,
            lambda_reg: 1.0,
            seed: 0,
            cascade: 2,
        }
    }
}

crate::config::key_value!(TrainConfig {
    batch,
    lr,
    iters,
    optimizer,
    momentum,
    lambda_reg,
    cascade,
});

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::usage("batch must be at least 1"));
        }
        // lr = 0 is allowed: it is the "no update" control run
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::usage("lr must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::usage("momentum must be in [0, 1)"));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::usage("lambda_reg must be non-negative"));
        }
        if self.cascade == 0 {
            return Err(Error::usage("cascade must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Batch-mean losses, one entry per iteration.
    pub curve: Vec<LossBreakdown>,
}

/// Loss and parameter gradient summed over `examples`.
pub fn batch_gradient(net: &Network, examples: &[&Example], lambda_reg: f64) -> Result<(LossBreakdown, ParamGrads)> {
    let partial: Vec<(LossBreakdown, ParamGrads)> = examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = ParamGrads::zeros(&net.params);
            let mut loss = LossBreakdown::new(0.0, 0.0, lambda_reg);
            for ex in chunk {
                let (det, tape) = net.forward(&ex.feature, Mode::Train)?;
                let (l, g) = combined_loss_grad(&det, &ex.assignment, lambda_reg)?;
                grads.add_assign(&net.backward(tape, &g)?);
                loss.classification += l.classification;
                loss.regression += l.regression;
                loss.total += l.total;
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut grads = ParamGrads::zeros(&net.params);
    let mut loss = LossBreakdown::new(0.0, 0.0, lambda_reg);
    for (l, g) in &partial {
        grads.add_assign(g);
        loss.classification += l.classification;
        loss.regression += l.regression;
        loss.total += l.total;
    }
    Ok((loss, grads))
}

/// Mean loss over a set of examples in the given mode, without gradients.
pub fn mean_loss(net: &Network, examples: &[Example], mode: Mode, lambda_reg: f64) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::new(0.0, 0.0, lambda_reg);
    for ex in examples {
        let (det, _) = net.forward(&ex.feature, mode)?;
        let l = crate::losses::combined_loss(&det, &ex.assignment, lambda_reg)?;
        sum.classification += l.classification;
        sum.regression += l.regression;
        sum.total += l.total;
    }
    let n = examples.len().max(1) as f64;
    Ok(LossBreakdown {
        classification: sum.classification / n,
        regression: sum.regression / n,
        total: sum.total / n,
        lambda_reg,
    })
}

/// Trains `net` in place. Batches walk seeded per-epoch permutations of the
/// examples; the gradient is the batch mean.
pub fn train(net: &mut Network, examples: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    let mut velocity = ParamGrads::zeros(&net.params);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut curve = Vec::with_capacity(config.iters);

    for iteration in 0..config.iters {
        let mut batch = Vec::with_capacity(config.batch);
        while batch.len() < config.batch {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng::stream(config.seed, &[0x5ff1e, epoch]));
                epoch += 1;
                cursor = 0;
            }
            batch.push(&examples[order[cursor]]);
            cursor += 1;
        }

        let (loss, mut grads) = batch_gradient(net, &batch, config.lambda_reg)?;
        let n = batch.len() as f64;
        let mean = LossBreakdown {
            classification: loss.classification / n,
            regression: loss.regression / n,
            total: loss.total / n,
            lambda_reg: config.lambda_reg,
        };
        if !mean.total.is_finite() {
            return Err(Error::Divergence {
                iteration,
                detail: format!(
                    "classification {} regression {}",
                    mean.classification, mean.regression
                ),
            });
        }
        curve.push(mean);
        grads.scale(1.0 / n);

        let step: &ParamGrads = match config.optimizer {
            Optimizer::Sgd => &grads,
            Optimizer::SgdMomentum => {
                velocity.scale(config.momentum);
                velocity.add_assign(&grads);
                &velocity
            }
        };
        for (w, g) in net.params.layers_mut().into_iter().zip(step.layers()) {
            w.values.iter_mut().zip(&g.weights).for_each(|(p, d)| *p -= config.lr * d);
            w.bias.iter_mut().zip(&g.bias).for_each(|(p, d)| *p -= config.lr * d);
        }
    }
    Ok(TrainReport { curve })
}
