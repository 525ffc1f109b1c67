use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::PolicyNet;
use super::PolicyError;
use crate::codebook::Codebook;
use crate::diffcore::{clip_global_norm, AdamState, MlpParams, Tensor, ValueGraph};

/// Predicts codebook indices from the student's state history alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEncoder {
    pub net: MlpParams,
    pub temperature: f64,
    pub opt: AdamState,
}

impl PriorEncoder {
    /// The output layer starts at zero, so the initial distribution is uniform.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], k: usize, lr: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(k);
        Self {
            net: MlpParams::new(&sizes, true, rng),
            temperature: 1.0,
            opt: AdamState::new(lr),
        }
    }

    pub fn k(&self) -> usize {
        self.net.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn check(&self, obs: &Tensor) -> Result<(), PolicyError> {
        if obs.cols != self.obs_dim() {
            return Err(PolicyError::Dim {
                what: "prior observation",
                expected: self.obs_dim(),
                got: obs.cols,
            });
        }
        Ok(())
    }

    pub fn logits(&self, obs: &Tensor) -> Result<Tensor, PolicyError> {
        self.check(obs)?;
        Ok(self.net.eval(obs)?)
    }

    /// Mean cross-entropy of `targets` under the current logits.
    pub fn loss(&self, obs: &Tensor, targets: &[usize]) -> Result<f64, PolicyError> {
        let logits = self.logits(obs)?;
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            total += prior_loss(logits.row(r), t)?;
        }
        Ok(total / targets.len().max(1) as f64)
    }

    /// One Adam step on the cross-entropy; returns the loss before the step.
    pub fn train_step(&mut self, obs: &Tensor, targets: &[usize], grad_clip: f64) -> Result<f64, PolicyError> {
        self.check(obs)?;
        let k = self.k();
        if targets.is_empty() || targets.len() != obs.rows {
            return Err(PolicyError::EmptyBatch);
        }
        if let Some(&index) = targets.iter().find(|&&t| t >= k) {
            return Err(PolicyError::IndexOutOfRange { index, k });
        }
        let mut g = ValueGraph::new();
        let b = self.net.bind(&mut g);
        let x = g.constant(obs.clone());
        let logits = b.forward(&mut g, x)?;
        let loss = g.cross_entropy(logits, targets.to_vec())?;
        g.backward(loss)?;
        let mut grads = b.grads(&g);
        clip_global_norm(&mut grads, grad_clip);
        let value = g.value(loss).item();
        self.opt.step(self.net.tensors_mut(), &grads)?;
        Ok(value)
    }

    /// Fraction of rows whose arg-max logit is the target.
    pub fn accuracy(&self, obs: &Tensor, targets: &[usize]) -> Result<f64, PolicyError> {
        let logits = self.logits(obs)?;
        let hits = targets
            .iter()
            .enumerate()
            .filter(|(r, &t)| argmax(logits.row(*r)) == t)
            .count();
        Ok(hits as f64 / targets.len().max(1) as f64)
    }

    /// Samples a code for each row, looks it up, and decodes the student's
    /// mean action for it.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Tensor,
        cb: &Codebook,
        decoder: &PolicyNet,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Tensor), PolicyError> {
        let logits = self.logits(obs)?;
        let idx: Vec<usize> = (0..obs.rows)
            .map(|r| sample_index(logits.row(r), self.temperature, rng))
            .collect();
        let zhat = cb.gather(&idx);
        let action = decoder.decode_latent(obs, &zhat)?;
        Ok((idx, action))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `−log softmax(logits)[target]`.
pub fn prior_loss(logits: &[f64], target: usize) -> Result<f64, PolicyError> {
    if target >= logits.len() {
        return Err(PolicyError::IndexOutOfRange {
            index: target,
            k: logits.len(),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[target])
}

/// Draws from `softmax(logits / temp)`; a temperature at or below `1e-8`
/// returns the arg-max.
pub fn sample_index<R: Rng + ?Sized>(logits: &[f64], temp: f64, rng: &mut R) -> usize {
    if temp <= 1e-8 {
        return argmax(logits);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| ((l - m) / temp).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}
