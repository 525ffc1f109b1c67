use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::codebook::Codebook;
use crate::diffcore::{
    hash_tensors, Activation, AdamState, BoundMlp, MlpParams, NodeId, Tensor, ValueGraph,
};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Latent bottleneck variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Nearest-entry quantization against a shared codebook.
    Vq,
    /// Reparameterized Gaussian latent with a KL penalty.
    Vae,
    /// No bottleneck.
    Mlp,
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyMode::Vq => "vq",
            PolicyMode::Vae => "vae",
            PolicyMode::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub embed: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

/// Encoder–bottleneck–decoder policy shared by teacher and student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub mode: PolicyMode,
    pub dims: PolicyDims,
    pub emb_s: MlpParams,
    pub emb_g: MlpParams,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub mu_head: MlpParams,
    pub log_std_head: MlpParams,
    pub opt: AdamState,
    pub frozen: bool,
}

fn all_elu(mut m: MlpParams) -> MlpParams {
    m.activations.iter_mut().for_each(|a| *a = Activation::Elu);
    m
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(mode: PolicyMode, dims: PolicyDims, lr: f64, rng: &mut R) -> Self {
        let e = dims.embed;
        let enc_out = match mode {
            PolicyMode::Vae => 2 * dims.latent_dim,
            _ => dims.latent_dim,
        };
        let mut enc = vec![2 * e];
        enc.extend_from_slice(&dims.hidden);
        enc.push(enc_out);
        let mut dec = vec![dims.latent_dim + e];
        dec.extend_from_slice(&dims.hidden);
        let trunk = *dec.last().unwrap();
        let emb_s = all_elu(MlpParams::new(&[dims.obs_dim, e], false, rng));
        let emb_g = all_elu(MlpParams::new(&[dims.goal_dim.max(1), e], false, rng));
        let encoder = MlpParams::new(&enc, false, rng);
        let decoder = all_elu(MlpParams::new(&dec, false, rng));
        let mu_head = MlpParams::new(&[trunk, dims.action_dim], true, rng);
        let mut log_std_head = MlpParams::new(&[trunk, dims.action_dim], true, rng);
        log_std_head.layers[0]
            .bias
            .data
            .iter_mut()
            .for_each(|b| *b = dims.init_log_std);
        Self {
            mode,
            dims,
            emb_s,
            emb_g,
            encoder,
            decoder,
            mu_head,
            log_std_head,
            opt: AdamState::new(lr),
            frozen: false,
        }
    }

    fn parts(&self) -> [&MlpParams; 6] {
        [
            &self.emb_s,
            &self.emb_g,
            &self.encoder,
            &self.decoder,
            &self.mu_head,
            &self.log_std_head,
        ]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.parts().into_iter().flat_map(|p| p.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for p in [
            &mut self.emb_s,
            &mut self.emb_g,
            &mut self.encoder,
            &mut self.decoder,
            &mut self.mu_head,
            &mut self.log_std_head,
        ] {
            out.extend(p.tensors_mut());
        }
        out
    }

    /// Applies `grads` (ordered as [`PolicyNet::tensors`]) with Adam.
    pub fn opt_step(&mut self, grads: &[Tensor]) -> Result<(), PolicyError> {
        if self.frozen {
            return Err(PolicyError::Frozen);
        }
        let mut opt = std::mem::take(&mut self.opt);
        let r = opt.step(self.tensors_mut(), grads);
        self.opt = opt;
        Ok(r?)
    }

    pub fn param_hash(&self) -> String {
        hash_tensors(self.tensors())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Trainable leaves for every parameter.
    pub fn bind(&self, g: &mut ValueGraph) -> BoundPolicy {
        self.bind_with(g, true)
    }

    pub fn bind_frozen(&self, g: &mut ValueGraph) -> BoundPolicy {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut ValueGraph, trainable: bool) -> BoundPolicy {
        let b = |m: &MlpParams, g: &mut ValueGraph| {
            if trainable {
                m.bind(g)
            } else {
                m.bind_frozen(g)
            }
        };
        BoundPolicy {
            mode: self.mode,
            latent_dim: self.dims.latent_dim,
            emb_s: b(&self.emb_s, g),
            emb_g: b(&self.emb_g, g),
            encoder: b(&self.encoder, g),
            decoder: b(&self.decoder, g),
            mu: b(&self.mu_head, g),
            log_std: b(&self.log_std_head, g),
        }
    }

    fn check(&self, obs: &Tensor, goal: Option<&Tensor>) -> Result<(), PolicyError> {
        if obs.cols != self.dims.obs_dim {
            return Err(PolicyError::Dim {
                what: "observation",
                expected: self.dims.obs_dim,
                got: obs.cols,
            });
        }
        if let Some(goal) = goal {
            if goal.cols != self.dims.goal_dim || goal.rows != obs.rows {
                return Err(PolicyError::Dim {
                    what: "goal",
                    expected: self.dims.goal_dim,
                    got: goal.cols,
                });
            }
        }
        Ok(())
    }

    /// Acts on a batch of observations outside of any training graph.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Tensor,
        goal: &Tensor,
        cb: Option<&Codebook>,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<ActOut, PolicyError> {
        let noise = match mode {
            ActMode::Mean => Noise::default(),
            ActMode::Sample => Noise::draw(obs.rows, self.dims.latent_dim, self.dims.action_dim, self.mode, rng),
        };
        self.act_with_noise(obs, goal, cb, &noise)
    }

    /// Graph-free forward pass; values match [`BoundPolicy::step`] bit for bit.
    pub fn act_with_noise(
        &self,
        obs: &Tensor,
        goal: &Tensor,
        cb: Option<&Codebook>,
        noise: &Noise,
    ) -> Result<ActOut, PolicyError> {
        self.check(obs, Some(goal))?;
        let hs = self.emb_s.eval(obs)?;
        let hg = self.emb_g.eval(goal)?;
        let enc = self.encoder.eval(&hcat(&hs, &hg))?;
        let d = self.dims.latent_dim;
        let (z, latent, indices) = match self.mode {
            PolicyMode::Vq => {
                let cb = cb.ok_or(PolicyError::MissingCodebook)?;
                let (idx, q) = cb.quantize_batch(&enc)?;
                (enc, q, Some(idx))
            }
            PolicyMode::Vae => {
                let mu_z = cols(&enc, 0, d);
                let latent = match &noise.latent {
                    Some(eps) => reparam(&mu_z, &cols(&enc, d, 2 * d), eps),
                    None => mu_z.clone(),
                };
                (mu_z, latent, None)
            }
            PolicyMode::Mlp => (enc.clone(), enc, None),
        };
        let (mean, log_std) = self.decode_plain(&latent, &hs)?;
        let action = match &noise.action {
            Some(eps) => reparam(&mean, &log_std, eps),
            None => mean.clone(),
        };
        Ok(ActOut {
            z,
            indices,
            mean,
            action,
        })
    }

    fn decode_plain(&self, latent: &Tensor, hs: &Tensor) -> Result<(Tensor, Tensor), PolicyError> {
        let h = self.decoder.eval(&hcat(latent, hs))?;
        let mu = self.mu_head.eval(&h)?;
        let ls = self
            .log_std_head
            .eval(&h)?
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok((mu, ls))
    }

    /// Mean action decoded from explicit latent codes (generative mode).
    pub fn decode_latent(&self, obs: &Tensor, latent: &Tensor) -> Result<Tensor, PolicyError> {
        self.check(obs, None)?;
        if latent.cols != self.dims.latent_dim || latent.rows != obs.rows {
            return Err(PolicyError::Dim {
                what: "latent",
                expected: self.dims.latent_dim,
                got: latent.cols,
            });
        }
        let hs = self.emb_s.eval(obs)?;
        Ok(self.decode_plain(latent, &hs)?.0)
    }
}

fn hcat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, a.cols + b.cols);
    for r in 0..a.rows {
        let row = out.row_mut(r);
        row[..a.cols].copy_from_slice(a.row(r));
        row[a.cols..].copy_from_slice(b.row(r));
    }
    out
}

fn cols(x: &Tensor, start: usize, end: usize) -> Tensor {
    let mut out = Tensor::zeros(x.rows, end - start);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
    }
    out
}

/// `mu + exp(log_std) * eps`.
fn reparam(mu: &Tensor, log_std: &Tensor, eps: &Tensor) -> Tensor {
    let mut out = mu.clone();
    for ((o, l), e) in out.data.iter_mut().zip(&log_std.data).zip(&eps.data) {
        *o += l.exp() * e;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Mean,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOut {
    /// Continuous encoder output (the latent mean for the VAE variant).
    pub z: Tensor,
    /// Codebook indices, present only for the VQ variant.
    pub indices: Option<Vec<usize>>,
    pub mean: Tensor,
    pub action: Tensor,
}

/// Standard-normal draws for the reparameterized samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Noise {
    pub latent: Option<Tensor>,
    pub action: Option<Tensor>,
}

fn normal_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(rows: usize, latent: usize, action: usize, mode: PolicyMode, rng: &mut R) -> Self {
        Self {
            latent: (mode == PolicyMode::Vae).then(|| normal_tensor(rows, latent, rng)),
            action: Some(normal_tensor(rows, action, rng)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundPolicy {
    pub mode: PolicyMode,
    latent_dim: usize,
    emb_s: BoundMlp,
    emb_g: BoundMlp,
    encoder: BoundMlp,
    decoder: BoundMlp,
    mu: BoundMlp,
    log_std: BoundMlp,
}

/// Graph handles of one policy step.
#[derive(Debug, Clone)]
pub struct StepNodes {
    /// Encoder output (latent mean for the VAE variant).
    pub z: NodeId,
    pub indices: Option<Vec<usize>>,
    /// Quantized codes, VQ only.
    pub zhat: Option<Tensor>,
    /// VAE log-std of the latent.
    pub z_log_std: Option<NodeId>,
    pub mu: NodeId,
    pub log_std: NodeId,
    pub action: NodeId,
}

impl BoundPolicy {
    pub fn decode(&self, g: &mut ValueGraph, latent: NodeId, hs: NodeId) -> Result<(NodeId, NodeId), PolicyError> {
        let x = g.concat(&[latent, hs])?;
        let h = self.decoder.forward(g, x)?;
        let mu = self.mu.forward(g, h)?;
        let ls = self.log_std.forward(g, h)?;
        let ls = g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((mu, ls))
    }

    /// Encoder, bottleneck and decoder. Without an action draw in `noise`
    /// the action is the mean.
    pub fn step(
        &self,
        g: &mut ValueGraph,
        obs: NodeId,
        goal: NodeId,
        cb: Option<&Codebook>,
        noise: &Noise,
    ) -> Result<StepNodes, PolicyError> {
        let hs = self.emb_s.forward(g, obs)?;
        let hg = self.emb_g.forward(g, goal)?;
        let x = g.concat(&[hs, hg])?;
        let enc = self.encoder.forward(g, x)?;
        let d = self.latent_dim;
        let (z, latent, indices, zhat, z_log_std) = match self.mode {
            PolicyMode::Vq => {
                let cb = cb.ok_or(PolicyError::MissingCodebook)?;
                let (idx, q) = cb.quantize_batch(g.value(enc))?;
                let st = g.straight_through(enc, q.clone())?;
                (enc, st, Some(idx), Some(q), None)
            }
            PolicyMode::Vae => {
                let mu_z = g.slice_cols(enc, 0, d)?;
                let ls_z = g.slice_cols(enc, d, 2 * d)?;
                let latent = match &noise.latent {
                    Some(eps) => {
                        let sd = g.exp(ls_z)?;
                        let e = g.constant(eps.clone());
                        let n = g.mul(sd, e)?;
                        g.add(mu_z, n)?
                    }
                    None => mu_z,
                };
                (mu_z, latent, None, None, Some(ls_z))
            }
            PolicyMode::Mlp => (enc, enc, None, None, None),
        };
        let (mu, log_std) = self.decode(g, latent, hs)?;
        let action = match &noise.action {
            Some(eps) => {
                let sd = g.exp(log_std)?;
                let e = g.constant(eps.clone());
                let n = g.mul(sd, e)?;
                g.add(mu, n)?
            }
            None => mu,
        };
        Ok(StepNodes {
            z,
            indices,
            zhat,
            z_log_std,
            mu,
            log_std,
            action,
        })
    }

    pub fn grads(&self, g: &ValueGraph) -> Vec<Tensor> {
        [
            &self.emb_s,
            &self.emb_g,
            &self.encoder,
            &self.decoder,
            &self.mu,
            &self.log_std,
        ]
        .into_iter()
        .flat_map(|m| m.grads(g))
        .collect()
    }
}
