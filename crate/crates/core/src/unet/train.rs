//! Mini-batch SGD with momentum.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, InputScaling, UNet, UNetModel};
use crate::error::{Error, Result};
use crate::labels::Label;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `(w_bg, w_fg)`; derived from the training masks when absent.
    pub class_weights: Option<(f64, f64)>,
    /// Stop once an epoch's training accuracy reaches this.
    pub stop_accuracy: Option<f64>,
    /// Rescale each batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            epochs: 30,
            batch_size: 4,
            seed: 0,
            class_weights: None,
            stop_accuracy: None,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(Error::InvalidParameter(format!("bad training config {self:?}")));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::InvalidParameter("clip_norm must be positive".into()));
        }
        if let Some((a, b)) = self.class_weights {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::InvalidParameter("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-channel mean and spread over the scored pixels of the originals.
fn fit_scaling(ds: &Dataset) -> InputScaling {
    let c = ds.channels();
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let mut n = 0usize;
    for (x, m) in ds.originals() {
        for ((y, xx), l) in m.indexed_iter() {
            if !matches!(l, Label::Background | Label::Target) {
                continue;
            }
            n += 1;
            for k in 0..c {
                let v = x[[k, y, xx]] as f64;
                sum[k] += v;
                sq[k] += v * v;
            }
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6)).collect();
    InputScaling { mean, std }
}

/// Trains in place of `model` and returns it with the per-epoch log. The
/// sample order of each epoch comes from a seeded shuffle; batch gradients are
/// summed in sample order, so the result does not depend on thread count.
pub fn train(mut model: UNetModel, ds: &Dataset, cfg: &TrainConfig) -> Result<(UNetModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if ds.channels() != model.spec.in_channels {
        return Err(Error::Dimension(format!(
            "dataset has {} channels, network expects {}",
            ds.channels(),
            model.spec.in_channels
        )));
    }
    if model.scaling.is_none() {
        model.scaling = Some(fit_scaling(ds));
    }
    let weights = match cfg.class_weights {
        Some(w) => w,
        None => {
            let masks: Vec<crate::labels::ClassMask> =
                ds.originals().iter().map(|(_, m)| crate::labels::ClassMask::new(m.clone())).collect();
            super::class_weights_from_masks(&masks.iter().collect::<Vec<_>>())?
        }
    };
    let lr = cfg.learning_rate as f32;
    let mu = cfg.momentum as f32;
    let mut velocity = UNet::<f32>::zeros(&model.spec);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}"))));
        let (mut loss_sum, mut correct, mut scored) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let parts: Vec<(f64, UNet<f32>, usize, usize)> = batch
                .par_iter()
                .map(|&i| {
                    let (mut x, labels) = ds.get(i);
                    model.blank_pixels(&mut x, |y, xx| labels[[y, xx]] == Label::Excluded);
                    model.gradient(x.view(), &labels, weights)
                })
                .collect::<Result<_>>()?;
            let mut grad = UNet::<f32>::zeros(&model.spec);
            for (loss, g, c, n) in &parts {
                loss_sum += loss;
                correct += c;
                scored += n;
                grad.add_scaled(g, 1.0 / batch.len() as f32);
            }
            if let Some(max) = cfg.clip_norm {
                let norm = grad.norm();
                if norm > max {
                    grad.add_scaled(&grad.clone(), (max / norm) as f32 - 1.0);
                }
            }
            // v ← μv − lr·g; w ← w + v
            for (v, g) in velocity.convs_mut().into_iter().zip(grad.convs()) {
                v.weight.mapv_inplace(|x| x * mu);
                v.weight.scaled_add(-lr, &g.weight);
                v.bias.mapv_inplace(|x| x * mu);
                v.bias.scaled_add(-lr, &g.bias);
            }
            model.add_scaled(&velocity, 1.0);
        }
        let loss = loss_sum / ds.len() as f64;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        model.epochs += 1;
        let accuracy = if scored == 0 { 0.0 } else { correct as f64 / scored as f64 };
        log::debug!("epoch {epoch}: loss {loss:.5} accuracy {accuracy:.4}");
        log.push(EpochLog { epoch, loss, accuracy });
        if cfg.stop_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
    }
    Ok((model, log))
}

/// `epoch,loss,pixel_accuracy`
pub fn write_log_csv<W: Write>(log: &[EpochLog], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["epoch", "loss", "pixel_accuracy"]).map_err(err)?;
    for e in log {
        wr.write_record([e.epoch.to_string(), format!("{:.6}", e.loss), format!("{:.6}", e.accuracy)]).map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}
