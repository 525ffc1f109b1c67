//! Learned dynamics used to backpropagate tracking losses into the policies.
//!
//! The network sees the state in its own heading frame together with the
//! action and predicts a heading-frame state change. The change is rotated
//! back to the world frame, added to the state, and every rotation block is
//! re-orthonormalized.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    clip_global_norm, hash_tensors, AdamState, BoundMlp, GraphError, HeadingMode, MlpParams,
    NodeId, OptimError, Tensor, ValueGraph, BODY_FEATURES,
};
use crate::motion::{feature_dim, to_heading_features};

/// Position, rotation, velocity and angular-velocity weights.
pub const WM_WEIGHTS: [f64; 4] = [2.0, 1.0, 10.0, 5.0];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WmError {
    #[error("world model is frozen")]
    Frozen,
    #[error("empty batch")]
    EmptyBatch,
    #[error("{what}: expected width {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Column offsets of the 6-D rotation blocks in the state-feature layout.
pub fn rotation_offsets(n_body: usize) -> Vec<usize> {
    (0..n_body).map(|k| k * BODY_FEATURES + 3).collect()
}

/// Per-column weights for `[pos, rot, vel, angvel]`. Joint angles take the
/// rotation weight and joint rates the angular-velocity weight.
pub fn component_weights(n_body: usize, n_joint: usize, w: [f64; 4]) -> Vec<f64> {
    let mut out = Vec::with_capacity(feature_dim(n_body, n_joint));
    for _ in 0..n_body {
        out.extend([w[0]; 3]);
        out.extend([w[1]; 6]);
        out.extend([w[2]; 3]);
        out.extend([w[3]; 3]);
    }
    out.extend(std::iter::repeat(w[1]).take(n_joint));
    out.extend(std::iter::repeat(w[3]).take(n_joint));
    out
}

/// Fixed input standardization and output scaling, fitted once on the
/// first training batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_inv_std: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl Normalizer {
    fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            in_mean: vec![0.0; n_in],
            in_inv_std: vec![1.0; n_in],
            out_std: vec![1.0; n_out],
        }
    }
}

fn mean_std(rows: &[Vec<f64>], floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let d = rows.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for r in rows {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(floor)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub net: MlpParams,
    pub norm: Normalizer,
    pub norm_fitted: bool,
    pub opt: AdamState,
    pub frozen: bool,
    pub n_body: usize,
    pub n_joint: usize,
}

/// A world model bound into a graph.
#[derive(Debug, Clone)]
pub struct BoundWm {
    mlp: BoundMlp,
    shift: NodeId,
    in_scale: Vec<f64>,
    out_scale: Vec<f64>,
    n_body: usize,
    feature_dim: usize,
}

impl WorldModel {
    pub fn new<R: Rng + ?Sized>(n_body: usize, n_joint: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let f = feature_dim(n_body, n_joint);
        let mut sizes = vec![f + n_joint];
        sizes.extend_from_slice(hidden);
        sizes.push(f);
        Self {
            net: MlpParams::new(&sizes, true, rng),
            norm: Normalizer::identity(f + n_joint, f),
            norm_fitted: false,
            opt: AdamState::new(lr),
            frozen: false,
            n_body,
            n_joint,
        }
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.n_body, self.n_joint)
    }

    pub fn action_dim(&self) -> usize {
        self.n_joint
    }

    /// Trainable parameters are added as leaves only while unfrozen.
    pub fn bind(&self, g: &mut ValueGraph) -> BoundWm {
        if self.frozen {
            self.bind_frozen(g)
        } else {
            let mlp = self.net.bind(g);
            self.bound(g, mlp)
        }
    }

    /// Parameters as constants, for using the model inside a policy loss.
    pub fn bind_frozen(&self, g: &mut ValueGraph) -> BoundWm {
        let mlp = self.net.bind_frozen(g);
        self.bound(g, mlp)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.net.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.tensors_mut()
    }

    fn bound(&self, g: &mut ValueGraph, mlp: BoundMlp) -> BoundWm {
        let shift: Vec<f64> = self.norm.in_mean.iter().map(|m| -m).collect();
        BoundWm {
            mlp,
            shift: g.constant(Tensor::row_vector(shift)),
            in_scale: self.norm.in_inv_std.clone(),
            out_scale: self.norm.out_std.clone(),
            n_body: self.n_body,
            feature_dim: self.feature_dim(),
        }
    }

    /// Batched one-step prediction (`B x F` states, `B x N_joint` actions).
    pub fn predict_batch(&self, s: &Tensor, a: &Tensor) -> Result<Tensor, WmError> {
        self.check(s.cols, a.cols)?;
        let mut g = ValueGraph::new();
        let wm = self.bind_frozen(&mut g);
        let si = g.constant(s.clone());
        let ai = g.constant(a.clone());
        let next = wm.predict(&mut g, si, ai)?;
        Ok(g.value(next).clone())
    }

    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>, WmError> {
        let out = self.predict_batch(
            &Tensor::row_vector(s.to_vec()),
            &Tensor::row_vector(a.to_vec()),
        )?;
        Ok(out.data)
    }

    fn check(&self, s_cols: usize, a_cols: usize) -> Result<(), WmError> {
        if s_cols != self.feature_dim() {
            return Err(WmError::Dim {
                what: "state",
                expected: self.feature_dim(),
                got: s_cols,
            });
        }
        if a_cols != self.n_joint {
            return Err(WmError::Dim {
                what: "action",
                expected: self.n_joint,
                got: a_cols,
            });
        }
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn param_hash(&self) -> String {
        let n = &self.norm;
        let extra = [
            Tensor::row_vector(n.in_mean.clone()),
            Tensor::row_vector(n.in_inv_std.clone()),
            Tensor::row_vector(n.out_std.clone()),
        ];
        hash_tensors(self.tensors().into_iter().chain(extra.iter()))
    }

    /// Sets the normalizer from the transitions in `batch`: inputs are the
    /// heading-frame state with the action, outputs the heading-frame change.
    pub fn fit_normalizer(&mut self, batch: &WmBatch) {
        let mut inputs = Vec::new();
        let mut deltas = Vec::new();
        for t in 0..batch.horizon() {
            let (s0, s1, a) = (&batch.states[t], &batch.states[t + 1], &batch.actions[t]);
            for r in 0..s0.rows {
                let (x0, x1) = (s0.row(r), s1.row(r));
                let mut x = to_heading_features(x0, x0, self.n_body);
                let y = to_heading_features(x1, x0, self.n_body);
                deltas.push(y.iter().zip(&x).map(|(b, a)| b - a).collect::<Vec<f64>>());
                x.extend_from_slice(a.row(r));
                inputs.push(x);
            }
        }
        let (in_mean, in_std) = mean_std(&inputs, 1e-2);
        let (_, out_std) = mean_std(&deltas, 1e-3);
        self.norm = Normalizer {
            in_mean,
            in_inv_std: in_std.iter().map(|s| 1.0 / s).collect(),
            out_std,
        };
        self.norm_fitted = true;
    }
}

impl BoundWm {
    /// Next-state features, differentiable in both `s` and `a`.
    pub fn predict(&self, g: &mut ValueGraph, s: NodeId, a: NodeId) -> Result<NodeId, GraphError> {
        let local = g.heading(s, s, HeadingMode::ToHeading, self.n_body)?;
        let x = g.concat(&[local, a])?;
        let x = g.add_bias(x, self.shift)?;
        let x = g.scale_cols(x, self.in_scale.clone())?;
        let delta = self.mlp.forward(g, x)?;
        let delta = g.scale_cols(delta, self.out_scale.clone())?;
        let delta = g.heading(delta, s, HeadingMode::FromHeading, self.n_body)?;
        let next = g.add(s, delta)?;
        g.orthonormalize6(next, rotation_offsets(self.n_body))
    }

    /// Closed-loop rollout: each step consumes the previous prediction.
    pub fn unroll(&self, g: &mut ValueGraph, s0: NodeId, actions: &[NodeId]) -> Result<Vec<NodeId>, GraphError> {
        let mut out = Vec::with_capacity(actions.len());
        let mut s = s0;
        for &a in actions {
            s = self.predict(g, s, a)?;
            out.push(s);
        }
        Ok(out)
    }

    pub fn grads(&self, g: &ValueGraph) -> Vec<Tensor> {
        self.mlp.grads(g)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
}

/// `Σ_t γ^t ‖w ⊙ (target_t − pred_t)‖₁`, averaged over batch rows.
pub fn weighted_l1(
    g: &mut ValueGraph,
    preds: &[NodeId],
    targets: &[NodeId],
    weights: &[f64],
    gamma: f64,
) -> Result<NodeId, GraphError> {
    let rows = g.value(preds[0]).rows as f64;
    let mut total: Option<NodeId> = None;
    let mut discount = 1.0;
    for (&p, &t) in preds.iter().zip(targets) {
        let d = g.sub(t, p)?;
        let d = g.scale_cols(d, weights.to_vec())?;
        let d = g.abs(d)?;
        let s = g.sum(d)?;
        let s = g.scale(s, discount / rows)?;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
        discount *= gamma;
    }
    Ok(total.expect("at least one step"))
}

/// Weighted L1 of one predicted trajectory against the simulated one.
pub fn wm_loss(pred: &[Vec<f64>], sim: &[Vec<f64>], weights: &[f64], gamma: f64) -> Result<f64, WmError> {
    if pred.len() != sim.len() {
        return Err(WmError::LengthMismatch(pred.len(), sim.len()));
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for (p, s) in pred.iter().zip(sim) {
        if p.len() != weights.len() || s.len() != weights.len() {
            return Err(WmError::Dim {
                what: "trajectory frame",
                expected: weights.len(),
                got: p.len().max(s.len()),
            });
        }
        let l1: f64 = p
            .iter()
            .zip(s)
            .zip(weights)
            .map(|((a, b), w)| (w * (b - a)).abs())
            .sum();
        total += discount * l1;
        discount *= gamma;
    }
    Ok(total)
}

/// Batch of recorded transitions: `states[0..=T]` and `actions[0..T]`, each
/// a tensor with one row per clip.
#[derive(Debug, Clone)]
pub struct WmBatch {
    pub states: Vec<Tensor>,
    pub actions: Vec<Tensor>,
}

impl WmBatch {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn rows(&self) -> usize {
        self.states.first().map_or(0, |t| t.rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmTrainParams {
    pub weights: [f64; 4],
    pub gamma: f64,
    pub grad_clip: f64,
}

impl Default for WmTrainParams {
    fn default() -> Self {
        Self {
            weights: WM_WEIGHTS,
            gamma: 1.0,
            grad_clip: 1.0,
        }
    }
}

fn batch_loss(
    wm: &WorldModel,
    g: &mut ValueGraph,
    bound: &BoundWm,
    batch: &WmBatch,
    p: &WmTrainParams,
) -> Result<NodeId, WmError> {
    if batch.horizon() == 0 || batch.rows() == 0 {
        return Err(WmError::EmptyBatch);
    }
    if batch.states.len() != batch.horizon() + 1 {
        return Err(WmError::LengthMismatch(batch.states.len(), batch.horizon() + 1));
    }
    wm.check(batch.states[0].cols, batch.actions[0].cols)?;
    let s0 = g.constant(batch.states[0].clone());
    let actions: Vec<NodeId> = batch.actions.iter().map(|a| g.constant(a.clone())).collect();
    let preds = bound.unroll(g, s0, &actions)?;
    let targets: Vec<NodeId> = batch.states[1..]
        .iter()
        .map(|s| g.constant(s.clone()))
        .collect();
    let weights = component_weights(wm.n_body, wm.n_joint, p.weights);
    Ok(weighted_l1(g, &preds, &targets, &weights, p.gamma)?)
}

/// Loss on `batch` without touching the parameters.
pub fn eval_loss(wm: &WorldModel, batch: &WmBatch, p: &WmTrainParams) -> Result<f64, WmError> {
    let mut g = ValueGraph::new();
    let bound = wm.bind_frozen(&mut g);
    let loss = batch_loss(wm, &mut g, &bound, batch, p)?;
    Ok(g.value(loss).item())
}

/// One Adam step on the closed-loop unrolled loss; returns the loss before
/// the step.
pub fn train_step(wm: &mut WorldModel, batch: &WmBatch, p: &WmTrainParams) -> Result<f64, WmError> {
    if wm.frozen {
        return Err(WmError::Frozen);
    }
    if !wm.norm_fitted && batch.horizon() > 0 && batch.rows() > 0 {
        wm.check(batch.states[0].cols, batch.actions[0].cols)?;
        wm.fit_normalizer(batch);
    }
    let (value, mut grads) = loss_and_grads(wm, batch, p)?;
    clip_global_norm(&mut grads, p.grad_clip);
    wm.opt.step(wm.net.tensors_mut(), &grads)?;
    Ok(value)
}

/// Loss on `batch` and its gradient for every network tensor, in
/// [`WorldModel::tensors`] order. The normalizer is used as is.
pub fn loss_and_grads(wm: &WorldModel, batch: &WmBatch, p: &WmTrainParams) -> Result<(f64, Vec<Tensor>), WmError> {
    let mut g = ValueGraph::new();
    let bound = wm.bind(&mut g);
    let loss = batch_loss(wm, &mut g, &bound, batch, p)?;
    g.backward(loss)?;
    Ok((g.value(loss).item(), bound.grads(&g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{state_features, synth_clip, GaitSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> WorldModel {
        WorldModel::new(7, 6, &[32, 32], 1e-3, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_init_is_identity() {
        let wm = model(0);
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let s = state_features(&clip.frames[7]);
        for a in [[0.0; 6], [0.5, -0.3, 1.0, 0.2, 0.0, -1.0]] {
            let next = wm.predict(&s, &a).unwrap();
            for (x, y) in next.iter().zip(&s) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_blocks_stay_orthonormal() {
        let mut wm = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in wm.tensors_mut() {
            for v in &mut t.data {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let s = state_features(&clip.frames[3]);
        let next = wm.predict(&s, &[0.1; 6]).unwrap();
        for o in rotation_offsets(7) {
            let c = &next[o..o + 6];
            let n1: f64 = c[..3].iter().map(|v| v * v).sum();
            let n2: f64 = c[3..].iter().map(|v| v * v).sum();
            let dot: f64 = (0..3).map(|k| c[k] * c[k + 3]).sum();
            assert!((n1 - 1.0).abs() < 1e-12 && (n2 - 1.0).abs() < 1e-12 && dot.abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let w = component_weights(1, 0, WM_WEIGHTS);
        let a = vec![vec![0.0; 15]];
        assert_eq!(wm_loss(&a, &a, &w, 1.0).unwrap(), 0.0);
        let mut b = a.clone();
        b[0][0] = 0.5;
        assert_eq!(wm_loss(&a, &b, &w, 1.0).unwrap(), 1.0);

        let mut e1 = vec![vec![0.0; 15]; 3];
        e1[0][0] = 0.1;
        e1[1][9] = 0.7;
        e1[2][4] = -0.3;
        let mut e2 = e1.clone();
        e2.rotate_left(1);
        let zero = vec![vec![0.0; 15]; 3];
        let l1 = wm_loss(&e1, &zero, &w, 1.0).unwrap();
        let l2 = wm_loss(&e2, &zero, &w, 1.0).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        assert!(wm_loss(&e1[..2], &zero, &w, 1.0).is_err());
    }

    #[test]
    fn frozen_model_refuses_training() {
        let mut wm = model(3);
        wm.freeze();
        let before = wm.param_hash();
        let batch = WmBatch {
            states: vec![Tensor::zeros(1, 117); 2],
            actions: vec![Tensor::zeros(1, 6)],
        };
        assert_eq!(train_step(&mut wm, &batch, &WmTrainParams::default()), Err(WmError::Frozen));
        assert_eq!(before, wm.param_hash());
    }

    #[test]
    fn dimension_errors() {
        let wm = model(4);
        assert!(matches!(wm.predict(&[0.0; 10], &[0.0; 6]), Err(WmError::Dim { what: "state", .. })));
        assert!(matches!(wm.predict(&[0.0; 117], &[0.0; 2]), Err(WmError::Dim { what: "action", .. })));
    }
}
