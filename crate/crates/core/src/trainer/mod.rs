//! Staged training: replay collection with teacher/student takeover,
//! world-model and teacher updates, distillation, and prior post-training.

mod buffer;
mod rollout;
mod schedule;

pub use buffer::{step_window, PolicyTag, StepRecord, Trajectory, TrajectoryBuffer};
pub use rollout::{run_envs, Policies, RolloutOptions};
pub use schedule::{stage, takeover, takeover_probability, Stage};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{codebook_usage, Codebook, CodebookError};
use crate::config::RunConfig;
use crate::diffcore::Tensor;
use crate::motion::{feature_dim, local_dim, student_goal_dim, to_heading_features, MotionClip};
use crate::policy::{
    train_student_step, train_teacher_step, Noise, PolicyDims, PolicyError, PolicyMode,
    PolicyNet, PriorEncoder, StudentBatch, StudentLossParts, TeacherBatch, TeacherLossParts,
};
use crate::worldmodel::{self, WmBatch, WmError, WorldModel};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no reference clips")]
    NoClips,
    #[error("need windows of {needed} steps, longest stored trajectory has {longest}")]
    InsufficientData { needed: usize, longest: usize },
    #[error("{component} parameters changed while frozen (epoch {epoch})")]
    FrozenDrift { component: &'static str, epoch: usize },
    #[error("prior training needs a frozen teacher and codebook")]
    TeacherNotFrozen,
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    WorldModel(#[from] WmError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
}

/// Parameter hashes of every learned component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentHashes {
    pub world_model: String,
    pub codebook: String,
    pub teacher: String,
    pub student: String,
}

/// One metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub stage: Stage,
    pub p_teacher: f64,
    pub wm_loss: Option<f64>,
    pub teacher: Option<TeacherLossParts>,
    pub student: Option<StudentLossParts>,
    pub prior_loss: Option<f64>,
    /// Fraction of this epoch's new rollouts that did not fall.
    pub rollout_sr: f64,
    pub mean_episode_len: f64,
    pub perplexity: Option<f64>,
    pub hashes: ComponentHashes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorStats {
    pub samples: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
}

/// Every learned component plus the replay buffer and the run's rng.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub world_model: WorldModel,
    pub teacher: PolicyNet,
    pub student: PolicyNet,
    pub codebook: Codebook,
    pub prior: Option<PriorEncoder>,
    pub buffer: TrajectoryBuffer,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    /// Hashes at the moment of freezing, checked every later epoch.
    pub frozen_hashes: Option<ComponentHashes>,
}

pub fn teacher_dims(cfg: &RunConfig, n_body: usize, n_joint: usize) -> PolicyDims {
    let f = feature_dim(n_body, n_joint);
    PolicyDims {
        obs_dim: f * (cfg.teacher_history + 1),
        goal_dim: f,
        action_dim: n_joint,
        latent_dim: cfg.latent_dim,
        embed: cfg.embed,
        hidden: cfg.hidden.clone(),
        init_log_std: cfg.init_log_std,
    }
}

pub fn student_dims(cfg: &RunConfig, n_joint: usize) -> PolicyDims {
    PolicyDims {
        obs_dim: local_dim(n_joint) * (cfg.student_history + 1),
        goal_dim: student_goal_dim(n_joint),
        action_dim: n_joint,
        latent_dim: cfg.latent_dim,
        embed: cfg.embed,
        hidden: cfg.hidden.clone(),
        init_log_std: cfg.init_log_std,
    }
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self, TrainError> {
        cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let sim = cfg.sim();
        let (nb, nj) = (sim.morphology.n_body(), sim.n_joint());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let world_model = WorldModel::new(nb, nj, &cfg.wm_hidden, cfg.lr, &mut rng);
        let teacher = PolicyNet::new(cfg.mode, teacher_dims(&cfg, nb, nj), cfg.lr, &mut rng);
        let student = PolicyNet::new(cfg.mode, student_dims(&cfg, nj), cfg.lr, &mut rng);
        let mut codebook = Codebook::new(cfg.codebook_size, cfg.latent_dim, &mut rng);
        codebook.decay = cfg.codebook_decay;
        Ok(Self {
            buffer: TrajectoryBuffer::new(cfg.buff_len),
            cfg,
            world_model,
            teacher,
            student,
            codebook,
            prior: None,
            epoch: 0,
            rng,
            frozen_hashes: None,
        })
    }

    fn n_body(&self) -> usize {
        self.world_model.n_body
    }

    pub fn hashes(&self) -> ComponentHashes {
        ComponentHashes {
            world_model: self.world_model.param_hash(),
            codebook: self.codebook.param_hash(),
            teacher: self.teacher.param_hash(),
            student: self.student.param_hash(),
        }
    }

    pub fn milestones(&self) -> [usize; 3] {
        self.cfg.milestones()
    }

    pub fn policies(&self) -> Policies<'_> {
        Policies {
            teacher: &self.teacher,
            student: &self.student,
            codebook: &self.codebook,
        }
    }

    /// Evicts the oldest trajectories, then collects until the buffer holds
    /// the refill target. Returns the new trajectories' survival rate and mean length.
    pub fn refill(&mut self, clips: &[MotionClip], p_teacher: f64) -> Result<(f64, f64), TrainError> {
        if self.buffer.len() >= self.cfg.refill_target {
            self.buffer.evict_oldest(self.cfg.evict_count);
        }
        let opts = RolloutOptions::collect(&self.cfg, p_teacher);
        let (mut survived, mut total, mut steps) = (0usize, 0usize, 0usize);
        while self.buffer.len() < self.cfg.refill_target {
            let n = (self.cfg.refill_target - self.buffer.len()).min(self.cfg.num_envs);
            let seeds: Vec<u64> = (0..n).map(|_| self.rng.gen()).collect();
            let trajs = run_envs(self.policies(), clips, &seeds, &opts, &self.cfg)?;
            for t in trajs {
                total += 1;
                steps += t.len();
                survived += usize::from(!t.fell);
                self.buffer.push(t);
            }
        }
        let total = total.max(1) as f64;
        Ok((survived as f64 / total, steps as f64 / total))
    }

    pub fn wm_batch(&mut self, count: usize, length: usize) -> Result<WmBatch, TrainError> {
        let windows = self.buffer.sample_windows(count, length, &mut self.rng)?;
        let states = (0..=length)
            .map(|k| {
                let rows: Vec<Vec<f64>> = windows
                    .iter()
                    .map(|&(i, o)| self.buffer.get(i).state(o + k).to_vec())
                    .collect();
                Tensor::from_rows(&rows)
            })
            .collect();
        let actions = (0..length)
            .map(|k| {
                let rows: Vec<Vec<f64>> = windows
                    .iter()
                    .map(|&(i, o)| self.buffer.get(i).steps[o + k].action.clone())
                    .collect();
                Tensor::from_rows(&rows)
            })
            .collect();
        Ok(WmBatch { states, actions })
    }

    pub fn teacher_batch(&mut self, count: usize, length: usize) -> Result<TeacherBatch, TrainError> {
        let windows = self.buffer.sample_windows(count, length, &mut self.rng)?;
        let nb = self.n_body();
        let ht = self.cfg.teacher_history;
        let f = self.world_model.feature_dim();
        let past_frames = (0..ht)
            .map(|k| {
                let back = ht - k;
                let rows: Vec<Vec<f64>> = windows
                    .iter()
                    .map(|&(i, o)| {
                        if back > o {
                            vec![0.0; f]
                        } else {
                            let s = self.buffer.get(i).state(o - back);
                            to_heading_features(s, s, nb)
                        }
                    })
                    .collect();
                Tensor::from_rows(&rows)
            })
            .collect();
        let start = Tensor::from_rows(
            &windows
                .iter()
                .map(|&(i, o)| self.buffer.get(i).state(o).to_vec())
                .collect::<Vec<_>>(),
        );
        let refs = (0..length)
            .map(|k| {
                let rows: Vec<Vec<f64>> = windows
                    .iter()
                    .map(|&(i, o)| self.buffer.get(i).steps[o + k].next_ref.clone())
                    .collect();
                Tensor::from_rows(&rows)
            })
            .collect();
        let d = &self.teacher.dims;
        let noise = (0..length)
            .map(|_| Noise::draw(count, d.latent_dim, d.action_dim, self.teacher.mode, &mut self.rng))
            .collect();
        Ok(TeacherBatch {
            past_frames,
            start,
            refs,
            noise,
        })
    }

    /// Teacher observation rows for buffered steps.
    fn teacher_inputs(&self, steps: &[(usize, usize)]) -> (Tensor, Tensor) {
        let nb = self.n_body();
        let ht = self.cfg.teacher_history;
        let f = self.world_model.feature_dim();
        let mut obs = Vec::with_capacity(steps.len());
        let mut goal = Vec::with_capacity(steps.len());
        for &(i, t) in steps {
            let tr = self.buffer.get(i);
            let w = step_window(tr, t, ht, |s| to_heading_features(&s.state, &s.state, nb), f);
            obs.push(w);
            goal.push(to_heading_features(&tr.steps[t].next_ref, &tr.steps[t].state, nb));
        }
        (Tensor::from_rows(&obs), Tensor::from_rows(&goal))
    }

    fn student_inputs(&self, steps: &[(usize, usize)]) -> (Tensor, Tensor) {
        let hs = self.cfg.student_history;
        let ldim = local_dim(self.world_model.n_joint);
        let mut obs = Vec::with_capacity(steps.len());
        let mut goal = Vec::with_capacity(steps.len());
        for &(i, t) in steps {
            let tr = self.buffer.get(i);
            obs.push(step_window(tr, t, hs, |s| s.local.clone(), ldim));
            goal.push(tr.steps[t].student_goal.clone());
        }
        (Tensor::from_rows(&obs), Tensor::from_rows(&goal))
    }

    /// Student inputs with the teacher's mean action and latent at the same
    /// steps. `count` windows of `length` steps are flattened into rows.
    pub fn student_batch(&mut self, count: usize, length: usize) -> Result<StudentBatch, TrainError> {
        let windows = self.buffer.sample_windows(count, length, &mut self.rng)?;
        let steps: Vec<(usize, usize)> = windows
            .iter()
            .flat_map(|&(i, o)| (o..o + length).map(move |t| (i, t)))
            .collect();
        self.student_batch_at(&steps)
    }

    pub fn student_batch_at(&self, steps: &[(usize, usize)]) -> Result<StudentBatch, TrainError> {
        let (t_obs, t_goal) = self.teacher_inputs(steps);
        let t = self
            .teacher
            .act_with_noise(&t_obs, &t_goal, Some(&self.codebook), &Noise::default())?;
        let (obs, goal) = self.student_inputs(steps);
        Ok(StudentBatch {
            obs,
            goal,
            teacher_action: t.mean,
            teacher_z: t.z,
        })
    }

    fn freeze_for_distillation(&mut self) {
        if self.frozen_hashes.is_none() {
            self.world_model.freeze();
            self.codebook.freeze();
            self.teacher.freeze();
            self.frozen_hashes = Some(self.hashes());
        }
    }

    fn check_frozen(&self) -> Result<(), TrainError> {
        if let Some(h) = &self.frozen_hashes {
            let now = self.hashes();
            for (component, a, b) in [
                ("world model", &h.world_model, &now.world_model),
                ("codebook", &h.codebook, &now.codebook),
                ("teacher", &h.teacher, &now.teacher),
            ] {
                if a != b {
                    return Err(TrainError::FrozenDrift {
                        component,
                        epoch: self.epoch,
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs the current epoch and advances the counter.
    pub fn train_epoch(&mut self, clips: &[MotionClip]) -> Result<EpochStats, TrainError> {
        let ms = self.milestones();
        let e = self.epoch;
        let st = stage(e, ms);
        if st >= Stage::Distill {
            self.freeze_for_distillation();
        }
        let p = takeover(e, ms, self.cfg.hard_switch);
        let (rollout_sr, mean_len) = self.refill(clips, p)?;

        let mut wm_loss = None;
        let mut teacher = None;
        let mut student = None;
        let mut prior_loss = None;
        let mut used = Vec::new();
        if st < Stage::Distill {
            let params = self.cfg.wm_params();
            let mut acc = 0.0;
            for _ in 0..self.cfg.wm_updates {
                let b = self.wm_batch(self.cfg.bs_world, self.cfg.l_world)?;
                acc += worldmodel::train_step(&mut self.world_model, &b, &params)?;
            }
            wm_loss = Some(acc / self.cfg.wm_updates.max(1) as f64);
            let w = self.cfg.teacher_weights();
            let mut sum = TeacherLossParts::default();
            for _ in 0..self.cfg.teacher_updates {
                let b = self.teacher_batch(self.cfg.bs_teacher, self.cfg.l_teacher)?;
                let cb = (self.cfg.mode == PolicyMode::Vq).then_some(&mut self.codebook);
                let parts = train_teacher_step(&self.world_model, &mut self.teacher, cb, &b, &w, self.cfg.grad_clip)?;
                sum.tracking += parts.tracking;
                sum.commitment += parts.commitment;
                sum.smooth += parts.smooth;
                sum.l2 += parts.l2;
                sum.kl += parts.kl;
            }
            let n = self.cfg.teacher_updates.max(1) as f64;
            teacher = Some(TeacherLossParts {
                tracking: sum.tracking / n,
                commitment: sum.commitment / n,
                smooth: sum.smooth / n,
                l2: sum.l2 / n,
                kl: sum.kl / n,
            });
        }
        if st == Stage::WarmUp || st == Stage::Distill {
            let mut sum = StudentLossParts::default();
            for _ in 0..self.cfg.student_updates {
                let b = self.student_batch(self.cfg.bs_student, self.cfg.l_student)?;
                let cb = (self.cfg.mode == PolicyMode::Vq).then_some(&self.codebook);
                let parts = train_student_step(&mut self.student, cb, &b, self.cfg.beta4, self.cfg.grad_clip)?;
                sum.action += parts.action;
                sum.align += parts.align;
            }
            let n = self.cfg.student_updates.max(1) as f64;
            student = Some(StudentLossParts {
                action: sum.action / n,
                align: sum.align / n,
            });
        }
        if st == Stage::Post && self.cfg.mode == PolicyMode::Vq {
            prior_loss = Some(self.post_train_prior_epoch()?);
        }
        for t in self.buffer.iter() {
            used.extend(t.steps.iter().filter_map(|s| s.index));
        }
        self.check_frozen()?;
        let stats = EpochStats {
            epoch: e,
            stage: st,
            p_teacher: p,
            wm_loss,
            teacher,
            student,
            prior_loss,
            rollout_sr,
            mean_episode_len: mean_len,
            perplexity: codebook_usage(&used, self.codebook.k()).map(|u| u.perplexity),
            hashes: self.hashes(),
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Trains until `self.epoch == end`, writing one JSON line per epoch to `log`.
    pub fn run_until(
        &mut self,
        clips: &[MotionClip],
        end: usize,
        mut log: Option<&mut dyn std::io::Write>,
    ) -> Result<Vec<EpochStats>, TrainError> {
        let mut out = Vec::new();
        while self.epoch < end {
            let s = self.train_epoch(clips)?;
            if let Some(w) = log.as_mut() {
                let line = serde_json::to_string(&s).expect("stats serialize");
                writeln!(w, "{line}").map_err(|e| TrainError::Io(e.to_string()))?;
            }
            out.push(s);
        }
        Ok(out)
    }

    fn ensure_prior(&mut self) -> &mut PriorEncoder {
        if self.prior.is_none() {
            let mut p = PriorEncoder::new(
                self.student.dims.obs_dim,
                &self.cfg.prior_hidden,
                self.codebook.k(),
                self.cfg.lr,
                &mut self.rng,
            );
            p.temperature = self.cfg.prior_temperature;
            self.prior = Some(p);
        }
        self.prior.as_mut().unwrap()
    }

    /// Teacher-labelled prior updates on the replay buffer.
    fn post_train_prior_epoch(&mut self) -> Result<f64, TrainError> {
        let mut acc = 0.0;
        let n = self.cfg.student_updates.max(1);
        for _ in 0..n {
            let windows = self.buffer.sample_windows(self.cfg.prior_batch, 1, &mut self.rng)?;
            let (obs, labels) = self.prior_examples(&windows)?;
            let clip = self.cfg.grad_clip;
            acc += self.ensure_prior().train_step(&obs, &labels, clip)?;
        }
        Ok(acc / n as f64)
    }

    /// Student observations paired with the teacher's codebook index.
    fn prior_examples(&self, steps: &[(usize, usize)]) -> Result<(Tensor, Vec<usize>), TrainError> {
        let (t_obs, t_goal) = self.teacher_inputs(steps);
        let t = self
            .teacher
            .act_with_noise(&t_obs, &t_goal, Some(&self.codebook), &Noise::default())?;
        let (obs, _) = self.student_inputs(steps);
        Ok((obs, t.indices.unwrap_or_default()))
    }

    /// Rolls the frozen teacher on `clips`, labels every step with its code,
    /// and fits the prior encoder by cross-entropy. One trajectory in five is held out.
    pub fn train_prior(&mut self, clips: &[MotionClip]) -> Result<PriorStats, TrainError> {
        if self.cfg.mode != PolicyMode::Vq {
            return Err(TrainError::Config("prior training needs the vq mode".into()));
        }
        if !(self.teacher.frozen && self.codebook.frozen) {
            return Err(TrainError::TeacherNotFrozen);
        }
        let opts = RolloutOptions {
            sample: false,
            ..RolloutOptions::collect(&self.cfg, 1.0)
        };
        let seeds: Vec<u64> = (0..self.cfg.prior_rollouts.max(2)).map(|_| self.rng.gen()).collect();
        let trajs = run_envs(self.policies(), clips, &seeds, &opts, &self.cfg)?;
        let mut data = TrajectoryBuffer::new(trajs.len());
        for t in trajs {
            data.push(t);
        }
        let original = std::mem::replace(&mut self.buffer, data);
        let result = self.fit_prior_on_buffer();
        self.buffer = original;
        result
    }

    fn fit_prior_on_buffer(&mut self) -> Result<PriorStats, TrainError> {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (i, t) in self.buffer.iter().enumerate() {
            let dst = if i % 5 == 4 { &mut held } else { &mut train };
            dst.extend((0..t.len()).map(|s| (i, s)));
        }
        if train.is_empty() {
            return Err(TrainError::InsufficientData { needed: 1, longest: 0 });
        }
        if held.is_empty() {
            held = train.clone();
        }
        let (train_obs, train_y) = self.prior_examples(&train)?;
        let (held_obs, held_y) = self.prior_examples(&held)?;
        let batch = self.cfg.prior_batch.min(train.len());
        let clip = self.cfg.grad_clip;
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..self.cfg.prior_updates.max(1) {
            let rows: Vec<usize> = (0..batch).map(|_| self.rng.gen_range(0..train.len())).collect();
            let obs = Tensor::from_rows(&rows.iter().map(|&r| train_obs.row(r).to_vec()).collect::<Vec<_>>());
            let y: Vec<usize> = rows.iter().map(|&r| train_y[r]).collect();
            last = self.ensure_prior().train_step(&obs, &y, clip)?;
            first.get_or_insert(last);
        }
        let prior = self.prior.as_ref().unwrap();
        Ok(PriorStats {
            samples: train.len(),
            first_loss: first.unwrap_or(last),
            final_loss: prior.loss(&train_obs, &train_y)?,
            train_accuracy: prior.accuracy(&train_obs, &train_y)?,
            heldout_accuracy: prior.accuracy(&held_obs, &held_y)?,
        })
    }
}
