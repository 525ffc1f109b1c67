use serde::{Deserialize, Serialize};

use super::net::{BoundPolicy, Noise, PolicyMode, PolicyNet};
use super::PolicyError;
use crate::codebook::Codebook;
use crate::diffcore::{clip_global_norm, HeadingMode, NodeId, Tensor, ValueGraph};
use crate::worldmodel::{component_weights, BoundWm, WorldModel};

/// Weights of the teacher and student objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherWeights {
    /// Position, rotation, velocity and angular-velocity tracking weights.
    pub w_t: [f64; 4],
    /// Commitment.
    pub beta1: f64,
    /// Action smoothness.
    pub beta2: f64,
    /// Action L2.
    pub beta3: f64,
    /// Latent alignment during distillation.
    pub beta4: f64,
    pub gamma: f64,
    /// KL weight of the continuous-latent variant.
    pub kl_weight: f64,
}

impl Default for TeacherWeights {
    fn default() -> Self {
        Self {
            w_t: [0.2, 0.1, 0.5 / 3.0 * 0.1, 0.5 / 3.0 * 0.1],
            beta1: 0.05,
            beta2: 0.01,
            beta3: 0.001,
            beta4: 1.0,
            gamma: 1.0,
            kl_weight: 1e-3,
        }
    }
}

/// Short open-loop segments for the teacher objective. Every tensor has one
/// row per segment.
#[derive(Debug, Clone)]
pub struct TeacherBatch {
    /// Teacher frames preceding `start`, oldest first (`HT` entries).
    pub past_frames: Vec<Tensor>,
    /// World-frame state features at the first step.
    pub start: Tensor,
    /// Reference frames `m_1 ..= m_l`.
    pub refs: Vec<Tensor>,
    /// Per-step draws; an empty list uses mean actions.
    pub noise: Vec<Noise>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherLossParts {
    pub tracking: f64,
    pub commitment: f64,
    pub smooth: f64,
    pub l2: f64,
    pub kl: f64,
}

impl TeacherLossParts {
    pub fn total(&self) -> f64 {
        self.tracking + self.commitment + self.smooth + self.l2 + self.kl
    }
}

#[derive(Debug, Clone)]
pub struct TeacherLossOut {
    pub loss: NodeId,
    pub parts: TeacherLossParts,
    /// Encoder outputs per step (`B x D`).
    pub latents: Vec<Tensor>,
    /// Codebook assignments per step, VQ only.
    pub indices: Vec<Vec<usize>>,
}

fn acc(g: &mut ValueGraph, total: Option<NodeId>, term: NodeId) -> Result<NodeId, PolicyError> {
    Ok(match total {
        Some(t) => g.add(t, term)?,
        None => term,
    })
}

fn sum_sq_scaled(g: &mut ValueGraph, x: NodeId, s: f64) -> Result<NodeId, PolicyError> {
    let sq = g.square(x)?;
    let sum = g.sum(sq)?;
    Ok(g.scale(sum, s)?)
}

/// `½ Σ (μ² + σ² − 1 − log σ²)` per row, averaged over rows, scaled by `w`.
pub fn kl_graph(g: &mut ValueGraph, mu: NodeId, log_std: NodeId, w: f64) -> Result<NodeId, PolicyError> {
    let rows = g.value(mu).rows as f64;
    let mu2 = g.square(mu)?;
    let two = g.scale(log_std, 2.0)?;
    let var = g.exp(two)?;
    let t = g.add(mu2, var)?;
    let t = g.sub(t, two)?;
    let t = g.offset(t, -1.0)?;
    let s = g.sum(t)?;
    Ok(g.scale(s, 0.5 * w / rows)?)
}

/// KL divergence of `N(μ, σ²)` from the standard normal.
pub fn kl_loss(mu: &[f64], log_std: &[f64]) -> Result<f64, PolicyError> {
    if mu.len() != log_std.len() {
        return Err(PolicyError::Dim {
            what: "log-std",
            expected: mu.len(),
            got: log_std.len(),
        });
    }
    if log_std.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFiniteLogStd);
    }
    Ok(0.5
        * mu
            .iter()
            .zip(log_std)
            .map(|(m, l)| m * m + (2.0 * l).exp() - 1.0 - 2.0 * l)
            .sum::<f64>())
}

/// Unrolls the teacher through the world model and builds the tracking and
/// regularization objective, averaged over rows.
pub fn teacher_loss_graph(
    g: &mut ValueGraph,
    wm: &BoundWm,
    pol: &BoundPolicy,
    cb: Option<&Codebook>,
    batch: &TeacherBatch,
    w: &TeacherWeights,
    n_body: usize,
    n_joint: usize,
) -> Result<TeacherLossOut, PolicyError> {
    let l = batch.refs.len();
    let rows = batch.start.rows;
    if l == 0 || rows == 0 {
        return Err(PolicyError::EmptyBatch);
    }
    if pol.mode == PolicyMode::Vq && cb.is_none() {
        return Err(PolicyError::MissingCodebook);
    }
    let f = wm.feature_dim();
    if batch.start.cols != f {
        return Err(PolicyError::Dim {
            what: "start state",
            expected: f,
            got: batch.start.cols,
        });
    }
    let inv = 1.0 / rows as f64;
    let track_w = component_weights(n_body, n_joint, w.w_t);
    let default_noise = Noise::default();

    let mut frames: Vec<NodeId> = batch
        .past_frames
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect();
    let mut s = g.constant(batch.start.clone());
    let mut prev_action: Option<NodeId> = None;
    let mut discount = 1.0;
    let (mut track, mut commit, mut smooth, mut l2, mut kl) = (None, None, None, None, None);
    let mut total: Option<NodeId> = None;
    let mut latents = Vec::with_capacity(l);
    let mut indices = Vec::with_capacity(l);

    for t in 0..l {
        let own = g.heading(s, s, HeadingMode::ToHeading, n_body)?;
        frames.push(own);
        let obs = if frames.len() == 1 { own } else { g.concat(&frames)? };
        let target = g.constant(batch.refs[t].clone());
        let goal = g.heading(target, s, HeadingMode::ToHeading, n_body)?;
        let noise = batch.noise.get(t).unwrap_or(&default_noise);
        let out = pol.step(g, obs, goal, cb, noise)?;
        latents.push(g.value(out.z).clone());

        let next = wm.predict(g, s, out.action)?;
        let d = g.sub(next, target)?;
        let d = g.scale_cols(d, track_w.clone())?;
        let d = g.abs(d)?;
        let d = g.sum(d)?;
        let tr = g.scale(d, discount * inv)?;
        track = Some(acc(g, track, tr)?);
        total = Some(acc(g, total, tr)?);

        if let (Some(zhat), Some(idx)) = (&out.zhat, out.indices) {
            let zq = g.constant(zhat.clone());
            let dz = g.sub(out.z, zq)?;
            let c = sum_sq_scaled(g, dz, w.beta1 * discount * inv)?;
            commit = Some(acc(g, commit, c)?);
            total = Some(acc(g, total, c)?);
            indices.push(idx);
        }
        if let Some(ls) = out.z_log_std {
            let k = kl_graph(g, out.z, ls, w.kl_weight * discount)?;
            kl = Some(acc(g, kl, k)?);
            total = Some(acc(g, total, k)?);
        }
        let a2 = sum_sq_scaled(g, out.action, w.beta3 * discount * inv)?;
        l2 = Some(acc(g, l2, a2)?);
        total = Some(acc(g, total, a2)?);
        if let Some(p) = prev_action {
            let da = g.sub(out.action, p)?;
            let sm = sum_sq_scaled(g, da, w.beta2 * discount * inv)?;
            smooth = Some(acc(g, smooth, sm)?);
            total = Some(acc(g, total, sm)?);
        }
        prev_action = Some(out.action);
        if frames.len() > batch.past_frames.len() {
            frames.remove(0);
        }
        s = next;
        discount *= w.gamma;
    }
    let val = |n: Option<NodeId>, g: &ValueGraph| n.map_or(0.0, |n| g.value(n).item());
    let parts = TeacherLossParts {
        tracking: val(track, g),
        commitment: val(commit, g),
        smooth: val(smooth, g),
        l2: val(l2, g),
        kl: val(kl, g),
    };
    Ok(TeacherLossOut {
        loss: total.expect("at least one step"),
        parts,
        latents,
        indices,
    })
}

/// One Adam step on the teacher objective followed by an EMA codebook update
/// with every latent of the batch. Returns the loss terms before the step.
pub fn train_teacher_step(
    wm: &WorldModel,
    teacher: &mut PolicyNet,
    cb: Option<&mut Codebook>,
    batch: &TeacherBatch,
    w: &TeacherWeights,
    grad_clip: f64,
) -> Result<TeacherLossParts, PolicyError> {
    if teacher.frozen {
        return Err(PolicyError::Frozen);
    }
    if cb.as_ref().is_some_and(|c| c.frozen) {
        return Err(PolicyError::FrozenCodebook);
    }
    let mut g = ValueGraph::new();
    let bwm = wm.bind_frozen(&mut g);
    let pol = teacher.bind(&mut g);
    let out = teacher_loss_graph(
        &mut g,
        &bwm,
        &pol,
        cb.as_deref(),
        batch,
        w,
        wm.n_body,
        wm.n_joint,
    )?;
    g.backward(out.loss)?;
    let mut grads = pol.grads(&g);
    clip_global_norm(&mut grads, grad_clip);
    teacher.opt_step(&grads)?;
    if let Some(cb) = cb {
        if !out.indices.is_empty() {
            let mut zs = Vec::new();
            let mut idx = Vec::new();
            for (z, i) in out.latents.iter().zip(&out.indices) {
                zs.extend((0..z.rows).map(|r| z.row(r).to_vec()));
                idx.extend_from_slice(i);
            }
            cb.ema_update(&zs, &idx)?;
        }
    }
    Ok(out.parts)
}

/// Student inputs paired with the teacher's mean action and latent at the
/// same buffered steps.
#[derive(Debug, Clone)]
pub struct StudentBatch {
    pub obs: Tensor,
    pub goal: Tensor,
    pub teacher_action: Tensor,
    pub teacher_z: Tensor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentLossParts {
    pub action: f64,
    pub align: f64,
}

/// `‖a_S − a_T‖² + β4 ‖z_S − z_T‖²` with mean student actions, averaged over
/// rows. The plain variant has no latent to align.
pub fn student_loss_graph(
    g: &mut ValueGraph,
    pol: &BoundPolicy,
    cb: Option<&Codebook>,
    batch: &StudentBatch,
    beta4: f64,
) -> Result<(NodeId, StudentLossParts), PolicyError> {
    let rows = batch.obs.rows;
    if rows == 0 {
        return Err(PolicyError::EmptyBatch);
    }
    let inv = 1.0 / rows as f64;
    let obs = g.constant(batch.obs.clone());
    let goal = g.constant(batch.goal.clone());
    let out = pol.step(g, obs, goal, cb, &Noise::default())?;
    let at = g.constant(batch.teacher_action.clone());
    let da = g.sub(out.mu, at)?;
    let la = sum_sq_scaled(g, da, inv)?;
    let mut parts = StudentLossParts {
        action: g.value(la).item(),
        align: 0.0,
    };
    if pol.mode == PolicyMode::Mlp {
        return Ok((la, parts));
    }
    let zt = g.constant(batch.teacher_z.clone());
    let dz = g.sub(out.z, zt)?;
    let lz = sum_sq_scaled(g, dz, beta4 * inv)?;
    parts.align = g.value(lz).item();
    Ok((g.add(la, lz)?, parts))
}

pub fn train_student_step(
    student: &mut PolicyNet,
    cb: Option<&Codebook>,
    batch: &StudentBatch,
    beta4: f64,
    grad_clip: f64,
) -> Result<StudentLossParts, PolicyError> {
    if student.frozen {
        return Err(PolicyError::Frozen);
    }
    let mut g = ValueGraph::new();
    let pol = student.bind(&mut g);
    let (loss, parts) = student_loss_graph(&mut g, &pol, cb, batch, beta4)?;
    g.backward(loss)?;
    let mut grads = pol.grads(&g);
    clip_global_norm(&mut grads, grad_clip);
    student.opt_step(&grads)?;
    Ok(parts)
}

/// `Σ_t γ^t [‖aS_t − aT_t‖² + β4 ‖zS_t − zT_t‖²]` over one sequence.
pub fn student_loss(
    a_s: &[Vec<f64>],
    a_t: &[Vec<f64>],
    z_s: &[Vec<f64>],
    z_t: &[Vec<f64>],
    beta4: f64,
    gamma: f64,
) -> f64 {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..a_s.len() {
        total += discount * (sq(&a_s[t], &a_t[t]) + beta4 * sq(&z_s[t], &z_t[t]));
        discount *= gamma;
    }
    total
}
