//! Flat JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::motion::{default_corpus, loop_clip, synth_clip_for, MotionClip};
use crate::policy::{PolicyMode, TeacherWeights};
use crate::toysim::{RandomizationRanges, Range, SimConfig};
use crate::worldmodel::WmTrainParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: PolicyMode,
    /// Switch control from teacher to student at once instead of annealing.
    pub hard_switch: bool,

    // environments and episodes
    pub num_envs: usize,
    pub eval_envs: usize,
    pub max_episode_len: usize,
    pub ref_clip_len: usize,
    pub fps: f64,
    pub substeps: usize,
    pub h0: f64,
    pub randomize: bool,

    // domain randomization
    pub friction: [f64; 2],
    pub payload: [f64; 2],
    pub kp_scale: [f64; 2],
    pub kd_scale: [f64; 2],
    pub joint_pos_noise: [f64; 2],
    pub joint_vel_noise: [f64; 2],
    pub ang_vel_noise: [f64; 2],
    pub gravity_noise: [f64; 2],

    // reference motions
    /// Built-in gait names or paths to clip files.
    pub clips: Vec<String>,
    pub clip_loops: usize,

    // replay
    pub buff_len: usize,
    pub refill_target: usize,
    pub evict_count: usize,

    // schedule
    pub epochs: usize,
    /// `[ms1, ms2, ms3]`; derived from `epochs` when absent.
    pub milestones: Option<[usize; 3]>,
    pub wm_updates: usize,
    pub teacher_updates: usize,
    pub student_updates: usize,

    // batches
    pub bs_world: usize,
    pub bs_teacher: usize,
    pub bs_student: usize,
    pub l_world: usize,
    pub l_teacher: usize,
    pub l_student: usize,

    // optimization
    pub lr: f64,
    pub gamma: f64,
    pub grad_clip: f64,
    pub w_world: [f64; 4],
    pub w_teacher: [f64; 4],
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub kl_weight: f64,

    // networks
    pub teacher_history: usize,
    pub student_history: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub codebook_decay: f64,
    pub embed: usize,
    pub hidden: Vec<usize>,
    pub wm_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    pub init_log_std: f64,

    // post-training and generation
    pub prior_rollouts: usize,
    pub prior_updates: usize,
    pub prior_batch: usize,
    pub prior_temperature: f64,
    pub gen_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r = RandomizationRanges::default();
        let w = TeacherWeights::default();
        Self {
            seed: 0,
            mode: PolicyMode::Vq,
            hard_switch: false,
            num_envs: 1024,
            eval_envs: 64,
            max_episode_len: 1500,
            ref_clip_len: 120,
            fps: 30.0,
            substeps: 6,
            h0: 0.2,
            randomize: true,
            friction: [r.friction.lo, r.friction.hi],
            payload: [r.payload.lo, r.payload.hi],
            kp_scale: [r.kp_scale.lo, r.kp_scale.hi],
            kd_scale: [r.kd_scale.lo, r.kd_scale.hi],
            joint_pos_noise: [r.joint_pos_noise.lo, r.joint_pos_noise.hi],
            joint_vel_noise: [r.joint_vel_noise.lo, r.joint_vel_noise.hi],
            ang_vel_noise: [r.ang_vel_noise.lo, r.ang_vel_noise.hi],
            gravity_noise: [r.gravity_noise.lo, r.gravity_noise.hi],
            clips: vec!["walk".into(), "slow_walk".into(), "march".into(), "stand".into()],
            clip_loops: 1,
            buff_len: 256,
            refill_target: 64,
            evict_count: 16,
            epochs: 100,
            milestones: None,
            wm_updates: 8,
            teacher_updates: 8,
            student_updates: 8,
            bs_world: 512,
            bs_teacher: 1024,
            bs_student: 1024,
            l_world: 24,
            l_teacher: 24,
            l_student: 32,
            lr: 2e-4,
            gamma: 1.0,
            grad_clip: 1.0,
            w_world: [2.0, 1.0, 10.0, 5.0],
            w_teacher: w.w_t,
            beta1: w.beta1,
            beta2: w.beta2,
            beta3: w.beta3,
            beta4: w.beta4,
            kl_weight: w.kl_weight,
            teacher_history: 0,
            student_history: 5,
            codebook_size: 64,
            latent_dim: 32,
            codebook_decay: 0.99,
            embed: 128,
            hidden: vec![256, 256],
            wm_hidden: vec![256, 256],
            prior_hidden: vec![256, 256],
            init_log_std: -1.6,
            prior_rollouts: 16,
            prior_updates: 500,
            prior_batch: 256,
            prior_temperature: 1.0,
            gen_steps: 1000,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Explicit milestones, or 40% / 20% / 40% of `epochs`.
    pub fn milestones(&self) -> [usize; 3] {
        self.milestones.unwrap_or_else(|| {
            let e = self.epochs.max(3);
            let ms1 = (e * 2 / 5).max(1);
            let ms2 = (e * 3 / 5).max(ms1 + 1);
            let ms3 = e.max(ms2 + 1);
            [ms1, ms2, ms3]
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("num_envs", self.num_envs),
            ("eval_envs", self.eval_envs),
            ("max_episode_len", self.max_episode_len),
            ("ref_clip_len", self.ref_clip_len),
            ("substeps", self.substeps),
            ("buff_len", self.buff_len),
            ("refill_target", self.refill_target),
            ("bs_world", self.bs_world),
            ("bs_teacher", self.bs_teacher),
            ("bs_student", self.bs_student),
            ("l_world", self.l_world),
            ("l_teacher", self.l_teacher),
            ("l_student", self.l_student),
            ("codebook_size", self.codebook_size),
            ("latent_dim", self.latent_dim),
            ("embed", self.embed),
            ("clip_loops", self.clip_loops),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if self.num_envs > 1024 || self.eval_envs > 1024 {
            return Err(invalid("num_envs", "at most 1024 environments"));
        }
        if self.refill_target > self.buff_len {
            return Err(invalid("refill_target", "cannot exceed buff_len"));
        }
        if self.evict_count > self.refill_target {
            return Err(invalid("evict_count", "cannot exceed refill_target"));
        }
        if self.clips.is_empty() {
            return Err(invalid("clips", "at least one clip required"));
        }
        if let Some([a, b, c]) = self.milestones {
            if !(0 < a && a < b && b < c) {
                return Err(invalid("milestones", "need 0 < ms1 < ms2 < ms3"));
            }
        }
        for (key, v) in [
            ("fps", self.fps),
            ("h0", self.h0),
            ("lr", self.lr),
            ("grad_clip", self.grad_clip),
            ("prior_temperature", self.prior_temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma", "must lie in (0, 1]"));
        }
        if !(self.codebook_decay > 0.0 && self.codebook_decay < 1.0) {
            return Err(invalid("codebook_decay", "must lie in (0, 1)"));
        }
        for (key, w) in [("w_world", self.w_world), ("w_teacher", self.w_teacher)] {
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(invalid(key, "weights must be positive"));
            }
        }
        for (key, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("beta4", self.beta4),
            ("kl_weight", self.kl_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be non-negative"));
            }
        }
        self.ranges()
            .validate()
            .map_err(|e| invalid("randomization", e.to_string()))?;
        Ok(())
    }

    pub fn ranges(&self) -> RandomizationRanges {
        if !self.randomize {
            return RandomizationRanges::none();
        }
        let r = |v: [f64; 2]| Range::new(v[0], v[1]);
        RandomizationRanges {
            friction: r(self.friction),
            payload: r(self.payload),
            kp_scale: r(self.kp_scale),
            kd_scale: r(self.kd_scale),
            joint_pos_noise: r(self.joint_pos_noise),
            joint_vel_noise: r(self.joint_vel_noise),
            ang_vel_noise: r(self.ang_vel_noise),
            gravity_noise: r(self.gravity_noise),
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            fps: self.fps,
            substeps: self.substeps,
            h0: self.h0,
            ..SimConfig::default()
        }
    }

    /// Synthesizes the named gaits from the built-in corpus, each looped
    /// `clip_loops` times.
    pub fn reference_clips(&self) -> Result<Vec<MotionClip>, ConfigError> {
        let corpus = default_corpus();
        let morph = self.sim().morphology;
        self.clips
            .iter()
            .map(|name| {
                let spec = corpus
                    .iter()
                    .find(|g| &g.name == name)
                    .ok_or_else(|| invalid("clips", format!("unknown gait `{name}`")))?;
                let clip = synth_clip_for(spec, &morph).map_err(|e| invalid("clips", e.to_string()))?;
                Ok(loop_clip(&clip, self.clip_loops))
            })
            .collect()
    }

    pub fn teacher_weights(&self) -> TeacherWeights {
        TeacherWeights {
            w_t: self.w_teacher,
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
            beta4: self.beta4,
            gamma: self.gamma,
            kl_weight: self.kl_weight,
        }
    }

    pub fn wm_params(&self) -> WmTrainParams {
        WmTrainParams {
            weights: self.w_world,
            gamma: self.gamma,
            grad_clip: self.grad_clip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"sed": 3}"#).unwrap_err();
        assert!(err.to_string().contains("sed"));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "mode": "vae"}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, PolicyMode::Vae);
        assert_eq!(cfg.bs_world, 512);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_name_their_key() {
        for (json, key) in [
            (r#"{"gamma": 0.0}"#, "gamma"),
            (r#"{"milestones": [5, 5, 9]}"#, "milestones"),
            (r#"{"friction": [1.0, 0.5]}"#, "randomization"),
            (r#"{"clips": []}"#, "clips"),
        ] {
            let err = RunConfig::from_json(json).unwrap_err();
            assert!(err.to_string().contains(key), "{err}");
        }
    }

    #[test]
    fn derived_milestones_split_forty_twenty_forty() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.milestones(), [40, 60, 100]);
        let small = RunConfig {
            epochs: 3,
            ..RunConfig::default()
        };
        let [a, b, c] = small.milestones();
        assert!(0 < a && a < b && b < c);
    }
}
