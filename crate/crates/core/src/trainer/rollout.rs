use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::buffer::{PolicyTag, StepRecord, Trajectory};
use super::TrainError;
use crate::codebook::Codebook;
use crate::config::RunConfig;
use crate::diffcore::Tensor;
use crate::motion::{
    feature_yaw, local_dim, reroot, state_features, student_goal, to_heading_features,
    to_local_obs, MotionClip, ObsHistory, ObsSpace,
};
use crate::policy::{ActOut, Noise, PolicyNet};
use crate::toysim::{apply_obs_noise, check_termination, randomize, step, EnvRandomization, RobotState, SimConfig};

/// Teacher, student and the codebook they share.
#[derive(Debug, Clone, Copy)]
pub struct Policies<'a> {
    pub teacher: &'a PolicyNet,
    pub student: &'a PolicyNet,
    pub codebook: &'a Codebook,
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    /// Per-step probability that the teacher acts.
    pub p_teacher: f64,
    pub max_steps: usize,
    /// Sample teacher actions instead of taking the mean.
    pub sample: bool,
    /// Sample student actions too. Off by default: the student's noise
    /// scale is never trained.
    pub sample_student: bool,
    /// `Some(n)`: random `n`-frame reference segments, re-drawn when used up.
    /// `None`: environment `i` tracks clip `i mod len` from its first frame
    /// and stops at its last.
    pub segment_len: Option<usize>,
    pub teacher_history: usize,
    pub student_history: usize,
}

impl RolloutOptions {
    pub fn collect(cfg: &RunConfig, p_teacher: f64) -> Self {
        Self {
            p_teacher,
            max_steps: cfg.max_episode_len,
            sample: true,
            sample_student: false,
            segment_len: Some(cfg.ref_clip_len + 1),
            teacher_history: cfg.teacher_history,
            student_history: cfg.student_history,
        }
    }

    pub fn evaluate(cfg: &RunConfig, p_teacher: f64) -> Self {
        Self {
            p_teacher,
            max_steps: cfg.max_episode_len,
            sample: false,
            sample_student: false,
            segment_len: None,
            teacher_history: cfg.teacher_history,
            student_history: cfg.student_history,
        }
    }
}

struct Env {
    rng: ChaCha8Rng,
    rand: EnvRandomization,
    state: RobotState,
    features: Vec<f64>,
    clip: usize,
    segment: Vec<RobotState>,
    ref_t: usize,
    hist: ObsHistory,
    steps: Vec<StepRecord>,
    done: bool,
    fell: bool,
    // per-step scratch
    pending: Option<StepRecord>,
    use_teacher: bool,
}

fn draw_segment(
    clips: &[MotionClip],
    rng: &mut ChaCha8Rng,
    len: usize,
) -> (usize, Vec<RobotState>) {
    let c = rng.gen_range(0..clips.len());
    let frames = &clips[c].frames;
    let n = len.min(frames.len());
    let off = rng.gen_range(0..=frames.len() - n);
    (c, frames[off..off + n].to_vec())
}

fn stack(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows)
}

fn stack_noise(parts: Vec<Noise>) -> Noise {
    if parts.is_empty() {
        return Noise::default();
    }
    let join = |ts: Vec<Option<Tensor>>| -> Option<Tensor> {
        let ts: Option<Vec<Tensor>> = ts.into_iter().collect();
        ts.map(|ts| {
            let rows: Vec<Vec<f64>> = ts.iter().map(|t| t.data.clone()).collect();
            Tensor::from_rows(&rows)
        })
    };
    let (lat, act): (Vec<_>, Vec<_>) = parts.into_iter().map(|n| (n.latent, n.action)).unzip();
    Noise {
        latent: join(lat),
        action: join(act),
    }
}

/// Runs one environment per seed in lockstep and returns their trajectories
/// in seed order. Environments draw their randomization, reference segments,
/// policy choices and action noise from their own seeded streams.
pub fn run_envs(
    pol: Policies<'_>,
    clips: &[MotionClip],
    seeds: &[u64],
    opts: &RolloutOptions,
    cfg: &RunConfig,
) -> Result<Vec<Trajectory>, TrainError> {
    if clips.is_empty() {
        return Err(TrainError::NoClips);
    }
    let sim = cfg.sim();
    let ranges = cfg.ranges();
    let n_body = sim.morphology.n_body();
    let n_joint = sim.n_joint();
    let gdim = crate::motion::feature_dim(n_body, n_joint);
    let ldim = local_dim(n_joint);
    let mut envs: Vec<Env> = seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rand = randomize(rng.gen(), &ranges).map_err(|e| TrainError::Config(e.to_string()))?;
            let (clip, segment) = match opts.segment_len {
                Some(n) => draw_segment(clips, &mut rng, n.max(2)),
                None => {
                    let c = i % clips.len();
                    (c, clips[c].frames.clone())
                }
            };
            let state = segment[0].clone();
            Ok(Env {
                rng,
                rand,
                features: state_features(&state),
                state,
                clip,
                segment,
                ref_t: 0,
                hist: ObsHistory::new(opts.teacher_history, opts.student_history, gdim, ldim),
                steps: Vec::new(),
                done: false,
                fell: false,
                pending: None,
                use_teacher: true,
            })
        })
        .collect::<Result<_, TrainError>>()?;

    let tdims = &pol.teacher.dims;
    let sdims = &pol.student.dims;
    for _ in 0..opts.max_steps {
        let active: Vec<usize> = (0..envs.len()).filter(|&i| !envs[i].done).collect();
        if active.is_empty() {
            break;
        }
        let mut t_obs = Vec::with_capacity(active.len());
        let mut t_goal = Vec::with_capacity(active.len());
        let mut s_obs = Vec::with_capacity(active.len());
        let mut s_goal = Vec::with_capacity(active.len());
        let mut t_noise = Vec::with_capacity(active.len());
        let mut s_noise = Vec::with_capacity(active.len());
        for &i in &active {
            let e = &mut envs[i];
            let f = &e.features;
            let own = to_heading_features(f, f, n_body);
            let noisy = apply_obs_noise(&to_local_obs(&e.state), &e.rand, &mut e.rng).to_vec();
            e.hist.push(own, noisy.clone());
            let next = &e.segment[e.ref_t + 1];
            let next_f = state_features(next);
            let sg = student_goal(&e.segment[e.ref_t], next);
            t_obs.push(e.hist.window(ObsSpace::Global, opts.teacher_history));
            t_goal.push(to_heading_features(&next_f, f, n_body));
            s_obs.push(e.hist.window(ObsSpace::Local, opts.student_history));
            s_goal.push(sg.clone());
            e.use_teacher = e.rng.gen::<f64>() < opts.p_teacher;
            if opts.sample {
                t_noise.push(Noise::draw(1, tdims.latent_dim, tdims.action_dim, pol.teacher.mode, &mut e.rng));
            }
            if opts.sample_student {
                s_noise.push(Noise::draw(1, sdims.latent_dim, sdims.action_dim, pol.student.mode, &mut e.rng));
            }
            e.pending = Some(StepRecord {
                state: e.features.clone(),
                local: noisy,
                next_ref: next_f,
                student_goal: sg,
                action: Vec::new(),
                tag: PolicyTag::Teacher,
                index: None,
            });
        }
        let any_teacher = active.iter().any(|&i| envs[i].use_teacher);
        let any_student = active.iter().any(|&i| !envs[i].use_teacher);
        let t_out: Option<ActOut> = if any_teacher {
            Some(pol.teacher.act_with_noise(
                &stack(&t_obs),
                &stack(&t_goal),
                Some(pol.codebook),
                &stack_noise(t_noise),
            )?)
        } else {
            None
        };
        let s_out: Option<ActOut> = if any_student {
            Some(pol.student.act_with_noise(
                &stack(&s_obs),
                &stack(&s_goal),
                Some(pol.codebook),
                &stack_noise(s_noise),
            )?)
        } else {
            None
        };
        for (r, &i) in active.iter().enumerate() {
            let e = &mut envs[i];
            let (out, tag) = if e.use_teacher {
                (t_out.as_ref().unwrap(), PolicyTag::Teacher)
            } else {
                (s_out.as_ref().unwrap(), PolicyTag::Student)
            };
            let rec = e.pending.as_mut().unwrap();
            rec.action = out.action.row(r).to_vec();
            rec.tag = tag;
            rec.index = out.indices.as_ref().map(|v| v[r]);
        }
        envs.par_iter_mut()
            .filter(|e| !e.done)
            .for_each(|e| advance(e, &sim, clips, opts));
    }
    Ok(envs
        .into_iter()
        .map(|e| Trajectory {
            clip: clips[e.clip].name.clone(),
            steps: e.steps,
            final_state: e.features,
            fell: e.fell,
        })
        .collect())
}

fn advance(e: &mut Env, sim: &SimConfig, clips: &[MotionClip], opts: &RolloutOptions) {
    let rec = e.pending.take().expect("pending step");
    match step(&e.state, &rec.action, &e.rand, sim) {
        Ok(next) => {
            e.steps.push(rec);
            e.features = state_features(&next);
            e.state = next;
            if check_termination(&e.state, sim.h0) {
                e.fell = true;
                e.done = true;
                return;
            }
        }
        Err(_) => {
            e.fell = true;
            e.done = true;
            return;
        }
    }
    e.ref_t += 1;
    if e.ref_t + 1 >= e.segment.len() {
        match opts.segment_len {
            Some(n) => {
                let (c, seg) = draw_segment(clips, &mut e.rng, n.max(2));
                let p = e.state.bodies[0].p;
                e.segment = reroot(&seg, [p[0], p[1]], feature_yaw(&e.features));
                e.clip = c;
                e.ref_t = 0;
            }
            None => e.done = true,
        }
    }
    if e.steps.len() >= opts.max_steps {
        e.done = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synth_clip, GaitSpec};
    use crate::policy::{PolicyDims, PolicyMode};

    fn small_cfg() -> RunConfig {
        RunConfig {
            max_episode_len: 40,
            ref_clip_len: 15,
            embed: 8,
            hidden: vec![8],
            latent_dim: 4,
            codebook_size: 4,
            ..RunConfig::default()
        }
    }

    fn nets(cfg: &RunConfig) -> (PolicyNet, PolicyNet, Codebook) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = crate::motion::feature_dim(7, 6);
        let dims = |obs, goal| PolicyDims {
            obs_dim: obs,
            goal_dim: goal,
            action_dim: 6,
            latent_dim: cfg.latent_dim,
            embed: cfg.embed,
            hidden: cfg.hidden.clone(),
            init_log_std: cfg.init_log_std,
        };
        let t = PolicyNet::new(PolicyMode::Vq, dims(f, f), 1e-3, &mut rng);
        let s = PolicyNet::new(PolicyMode::Vq, dims(18 * 6, 22), 1e-3, &mut rng);
        (t, s, Codebook::new(4, 4, &mut rng))
    }

    #[test]
    fn teacher_only_and_seeded() {
        let cfg = small_cfg();
        let (t, s, cb) = nets(&cfg);
        let clips = vec![synth_clip(&GaitSpec::stand()).unwrap()];
        let pol = Policies {
            teacher: &t,
            student: &s,
            codebook: &cb,
        };
        let opts = RolloutOptions::collect(&cfg, 1.0);
        let a = run_envs(pol, &clips, &[3, 4], &opts, &cfg).unwrap();
        let b = run_envs(pol, &clips, &[3, 4], &opts, &cfg).unwrap();
        assert_eq!(a, b);
        for tr in &a {
            assert!(tr.len() <= 40);
            assert!(tr.steps.iter().all(|s| s.tag == PolicyTag::Teacher && s.index.unwrap() < 4));
        }
        // the same seed run alone gives the same trajectory
        let solo = run_envs(pol, &clips, &[4], &opts, &cfg).unwrap();
        assert_eq!(solo[0], a[1]);
    }

    #[test]
    fn segments_are_respliced() {
        let cfg = small_cfg();
        let (t, s, cb) = nets(&cfg);
        let clips = vec![synth_clip(&GaitSpec::stand()).unwrap()];
        let pol = Policies {
            teacher: &t,
            student: &s,
            codebook: &cb,
        };
        let opts = RolloutOptions {
            sample: false,
            ..RolloutOptions::collect(&cfg, 1.0)
        };
        let tr = &run_envs(pol, &clips, &[0], &opts, &cfg).unwrap()[0];
        // standing in place with the mean (zero) action never falls
        assert!(!tr.fell);
        assert_eq!(tr.len(), 40);
        // after re-splicing the reference root still sits under the robot
        let last = tr.steps.last().unwrap();
        assert!((last.next_ref[0] - last.state[0]).abs() < 0.05);
    }
}
