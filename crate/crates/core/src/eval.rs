//! Tracking metrics, batch evaluation, reference replay and goal-free generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::config::RunConfig;
use crate::diffcore::{Tensor, BODY_FEATURES};
use crate::motion::{local_dim, state_features, to_local_obs, MotionClip, ObsHistory, ObsSpace};
use crate::policy::{PolicyNet, PriorEncoder};
use crate::toysim::{apply_obs_noise, check_termination, randomize, step, EnvRandomization};
use crate::trainer::{run_envs, Policies, PolicyTag, RolloutOptions, StepRecord, TrainError, Trajectory};

/// Which network drives the evaluated rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sr: f64,
    /// Mean |q − q_ref| over every (frame, joint) of surviving rollouts (rad).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mjre: Option<f64>,
    /// Mean root velocity error norm over frames of surviving rollouts (m/s).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mve: Option<f64>,
    /// Joint error over every frame of every rollout, fallen or not. Only
    /// a diagnostic; defined even when nothing survives.
    pub mjre_all: f64,
    pub n_envs: usize,
    pub clips: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct ErrSums {
    joint: f64,
    joint_n: usize,
    vel: f64,
    vel_n: usize,
}

fn accumulate(t: &Trajectory, n_body: usize, acc: &mut ErrSums) {
    let q0 = n_body * BODY_FEATURES;
    for (k, rec) in t.steps.iter().enumerate() {
        let s = t.state(k + 1);
        let r = &rec.next_ref;
        let nj = s.len() - q0;
        for j in 0..nj / 2 {
            acc.joint += (s[q0 + j] - r[q0 + j]).abs();
        }
        acc.joint_n += nj / 2;
        let dv: f64 = (9..12).map(|c| (s[c] - r[c]).powi(2)).sum();
        acc.vel += dv.sqrt();
        acc.vel_n += 1;
    }
}

/// Builds the report for a set of tracking rollouts. Each step's outcome
/// state is compared with the reference frame it was steering toward.
pub fn report(trajs: &[Trajectory], n_body: usize, seed: u64) -> EvalReport {
    let mut ok = ErrSums::default();
    let mut all = ErrSums::default();
    let mut successes = 0usize;
    for t in trajs {
        accumulate(t, n_body, &mut all);
        if !t.fell {
            successes += 1;
            accumulate(t, n_body, &mut ok);
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    let mut clips: Vec<String> = trajs.iter().map(|t| t.clip.clone()).collect();
    clips.sort();
    clips.dedup();
    let n = trajs.len().max(1);
    EvalReport {
        sr: successes as f64 / n as f64,
        mjre: if successes > 0 { mean(ok.joint, ok.joint_n) } else { None },
        mve: if successes > 0 { mean(ok.vel, ok.vel_n) } else { None },
        mjre_all: mean(all.joint, all.joint_n).unwrap_or(0.0),
        n_envs: trajs.len(),
        clips,
        seed,
    }
}

/// Per-environment seeds derived from one evaluation seed.
pub fn env_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Tracks the clips with mean actions in `n_envs` randomized environments;
/// environment `i` follows clip `i mod len` from its first frame to its last.
pub fn evaluate(
    pol: Policies<'_>,
    actor: Actor,
    clips: &[MotionClip],
    n_envs: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<(EvalReport, Vec<Trajectory>), TrainError> {
    if n_envs == 0 {
        return Err(TrainError::Config("n_envs must be at least 1".into()));
    }
    let p = match actor {
        Actor::Teacher => 1.0,
        Actor::Student => 0.0,
    };
    let opts = RolloutOptions::evaluate(cfg, p);
    let trajs = run_envs(pol, clips, &env_seeds(seed, n_envs), &opts, cfg)?;
    let nb = cfg.sim().morphology.n_body();
    Ok((report(&trajs, nb, seed), trajs))
}

/// Open-loop replay of a clip's own joint angles as PD targets.
pub fn replay_reference(clip: &MotionClip, rand: &EnvRandomization, cfg: &RunConfig) -> Trajectory {
    let sim = cfg.sim();
    let mut state = clip.frames[0].clone();
    let mut steps = Vec::new();
    let mut fell = false;
    for w in clip.frames.windows(2).take(cfg.max_episode_len) {
        let action = w[1].joint_q.clone();
        let rec = StepRecord {
            state: state_features(&state),
            local: to_local_obs(&state).to_vec(),
            next_ref: state_features(&w[1]),
            student_goal: Vec::new(),
            action: action.clone(),
            tag: PolicyTag::Teacher,
            index: None,
        };
        match step(&state, &action, rand, &sim) {
            Ok(next) => {
                steps.push(rec);
                state = next;
                if check_termination(&state, sim.h0) {
                    fell = true;
                    break;
                }
            }
            Err(_) => {
                fell = true;
                break;
            }
        }
    }
    Trajectory {
        clip: clip.name.clone(),
        steps,
        final_state: state_features(&state),
        fell,
    }
}

/// Goal-free closed-loop rollout driven by the prior encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub trajectory: Trajectory,
    /// Steps completed before a fall, or the full length.
    pub survived: usize,
    pub distinct_codes: usize,
}

/// Starts from the standing pose in one randomized environment, then at each
/// step samples a code from the prior, decodes it with the student decoder
/// and applies the action.
pub fn generate(
    prior: &PriorEncoder,
    codebook: &Codebook,
    student: &PolicyNet,
    steps: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<Generated, TrainError> {
    let sim = cfg.sim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rand = randomize(rng.gen(), &cfg.ranges()).map_err(|e| TrainError::Config(e.to_string()))?;
    let n_joint = sim.n_joint();
    let ldim = local_dim(n_joint);
    let mut hist = ObsHistory::new(0, cfg.student_history, 0, ldim);
    let mut state = sim.standing_state(0.0, 0.0);
    let mut records = Vec::new();
    let mut fell = false;
    for _ in 0..steps {
        let local = apply_obs_noise(&to_local_obs(&state), &rand, &mut rng).to_vec();
        hist.push(Vec::new(), local.clone());
        let obs = Tensor::from_rows(&[hist.window(ObsSpace::Local, cfg.student_history)]);
        let (idx, action) = prior.act(&obs, codebook, student, &mut rng)?;
        let action = action.row(0).to_vec();
        let rec = StepRecord {
            state: state_features(&state),
            local,
            next_ref: Vec::new(),
            student_goal: Vec::new(),
            action: action.clone(),
            tag: PolicyTag::Prior,
            index: Some(idx[0]),
        };
        match step(&state, &action, &rand, &sim) {
            Ok(next) => {
                records.push(rec);
                state = next;
                if check_termination(&state, sim.h0) {
                    fell = true;
                    break;
                }
            }
            Err(_) => {
                fell = true;
                break;
            }
        }
    }
    let mut codes: Vec<usize> = records.iter().filter_map(|r| r.index).collect();
    codes.sort_unstable();
    codes.dedup();
    Ok(Generated {
        survived: records.len(),
        distinct_codes: codes.len(),
        trajectory: Trajectory {
            clip: "generated".into(),
            steps: records,
            final_state: state_features(&state),
            fell,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synth_clip, GaitSpec};

    fn fake(clip: &MotionClip, eps: f64, fell: bool) -> Trajectory {
        let steps: Vec<StepRecord> = clip.frames[..clip.len() - 1]
            .iter()
            .zip(&clip.frames[1..])
            .map(|(a, b)| StepRecord {
                state: state_features(a),
                local: Vec::new(),
                next_ref: state_features(b),
                student_goal: Vec::new(),
                action: Vec::new(),
                tag: PolicyTag::Teacher,
                index: None,
            })
            .collect();
        let mut t = Trajectory {
            clip: clip.name.clone(),
            final_state: state_features(clip.frames.last().unwrap()),
            steps,
            fell,
        };
        // outcome states carry a known joint offset
        let q0 = 7 * BODY_FEATURES;
        for k in 1..t.steps.len() {
            for j in 0..6 {
                t.steps[k].state[q0 + j] += if j % 2 == 0 { eps } else { -eps };
            }
        }
        for j in 0..6 {
            t.final_state[q0 + j] += if j % 2 == 0 { eps } else { -eps };
        }
        t
    }

    #[test]
    fn injected_joint_error_is_recovered() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let r = report(&[fake(&clip, 0.03, false), fake(&clip, 0.5, true)], 7, 0);
        assert_eq!(r.sr, 0.5);
        assert!((r.mjre.unwrap() - 0.03).abs() < 1e-12);
        assert!(r.mve.unwrap() < 1e-12);
        assert!((r.mjre_all - 0.265).abs() < 1e-12);
    }

    #[test]
    fn no_survivors_means_absent_metrics() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let r = report(&[fake(&clip, 0.1, true)], 7, 3);
        assert_eq!(r.sr, 0.0);
        assert!(r.mjre.is_none() && r.mve.is_none());
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("mjre\"") && !json.contains("mve"));
    }

    #[test]
    fn sr_is_exact_fraction() {
        let clip = synth_clip(&GaitSpec::stand()).unwrap();
        let trajs: Vec<Trajectory> = (0..1024).map(|i| fake(&clip, 0.0, i % 2 == 0)).collect();
        assert_eq!(report(&trajs, 7, 0).sr, 0.5);
    }

    #[test]
    fn standing_replay_survives() {
        let clip = synth_clip(&GaitSpec::stand()).unwrap();
        let t = replay_reference(&clip, &EnvRandomization::nominal(), &RunConfig::default());
        assert!(!t.fell);
        assert_eq!(t.len(), clip.len() - 1);
    }
}
