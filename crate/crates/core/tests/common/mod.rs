#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqloco::diffcore::Tensor;
use vqloco::motion::{state_features, synth_clip, GaitSpec};

pub const FD_H: f64 = 1e-5;
/// Denominator floor, so vanishing gradients compare absolutely.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Worst relative error between `analytic` and central differences of
/// `loss`, over up to `per_tensor` random entries of every tensor selected
/// by `pick`.
pub fn fd_check<M: Clone>(
    model: &M,
    access: fn(&mut M) -> Vec<&mut Tensor>,
    pick: &[usize],
    loss: impl Fn(&M) -> f64,
    analytic: &[Tensor],
    per_tensor: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for &ti in pick {
        let n = analytic[ti].data.len();
        let entries: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for k in entries {
            let mut plus = model.clone();
            access(&mut plus)[ti].data[k] += FD_H;
            let mut minus = model.clone();
            access(&mut minus)[ti].data[k] -= FD_H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_H);
            worst = worst.max(rel_err(analytic[ti].data[k], numeric));
        }
    }
    worst
}

/// Adds uniform noise to every tensor so no layer starts at exactly zero.
pub fn jitter(tensors: Vec<&mut Tensor>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in tensors {
        for v in &mut t.data {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
}

/// State-feature rows of a synthetic walk, starting at `offsets`.
pub fn walk_states(offsets: &[usize], k: usize) -> Tensor {
    let clip = synth_clip(&GaitSpec::walk()).unwrap();
    let rows: Vec<Vec<f64>> = offsets.iter().map(|&o| state_features(&clip.frames[o + k])).collect();
    Tensor::from_rows(&rows)
}

pub mod losses {
    use super::*;
    use vqloco::codebook::Codebook;
    use vqloco::diffcore::ValueGraph;
    use vqloco::motion::to_heading_features;
    use vqloco::policy::{
        kl_graph, kl_loss, student_loss_graph, teacher_loss_graph, Noise, PolicyDims, PolicyMode, PolicyNet,
        PriorEncoder, StudentBatch, TeacherBatch, TeacherWeights,
    };
    use vqloco::worldmodel::{eval_loss, loss_and_grads, WmBatch, WmTrainParams, WorldModel};

    const PER_TENSOR: usize = 6;

    fn wm_batch(offsets: &[usize], horizon: usize, rng: &mut ChaCha8Rng) -> WmBatch {
        WmBatch {
            states: (0..=horizon).map(|k| walk_states(offsets, k)).collect(),
            actions: (0..horizon).map(|_| random_tensor(offsets.len(), 6, 0.5, rng)).collect(),
        }
    }

    fn world_model(seed: u64) -> WorldModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wm = WorldModel::new(7, 6, &[16], 1e-3, &mut rng);
        let fit = wm_batch(&[0, 10, 30, 60], 4, &mut rng);
        wm.fit_normalizer(&fit);
        jitter(wm.tensors_mut(), 0.1, seed + 1);
        wm
    }

    /// Closed-loop weighted-L1 world-model loss over `horizon` steps.
    pub fn world_model_error(seed: u64, horizon: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let wm = world_model(seed);
        let batch = wm_batch(&[2, 17, 40], horizon, &mut rng);
        let p = WmTrainParams::default();
        let (_, grads) = loss_and_grads(&wm, &batch, &p).unwrap();
        let pick: Vec<usize> = (0..grads.len()).collect();
        fd_check(
            &wm,
            |m| m.tensors_mut(),
            &pick,
            |m| eval_loss(m, &batch, &p).unwrap(),
            &grads,
            PER_TENSOR,
            seed,
        )
    }

    fn dims(obs: usize, goal: usize) -> PolicyDims {
        PolicyDims {
            obs_dim: obs,
            goal_dim: goal,
            action_dim: 6,
            latent_dim: 4,
            embed: 8,
            hidden: vec![8],
            init_log_std: -1.0,
        }
    }

    fn checked_tensors(pol: &PolicyNet) -> Vec<usize> {
        let n = pol.tensors().len();
        let upstream = pol.emb_s.tensors().len() + pol.emb_g.tensors().len() + pol.encoder.tensors().len();
        match pol.mode {
            PolicyMode::Vq => (upstream..n).collect(),
            _ => (0..n).collect(),
        }
    }

    fn teacher_loss(
        pol: &PolicyNet,
        wm: &WorldModel,
        cb: Option<&Codebook>,
        batch: &TeacherBatch,
        w: &TeacherWeights,
    ) -> (f64, Vec<Tensor>) {
        let mut g = ValueGraph::new();
        let bw = wm.bind_frozen(&mut g);
        let bp = pol.bind(&mut g);
        let out = teacher_loss_graph(&mut g, &bw, &bp, cb, batch, w, 7, 6).unwrap();
        g.backward(out.loss).unwrap();
        (g.value(out.loss).item(), bp.grads(&g))
    }

    /// Teacher objective unrolled `steps` steps through a frozen world model.
    /// In VQ mode only tensors after the bottleneck are checked, since the
    /// straight-through gradient is not the derivative of the forward pass.
    /// For the same reason a VQ unroll longer than one step routes decoder
    /// gradients back through later encoders, so callers keep `steps` at 1.
    pub fn teacher_error(mode: PolicyMode, seed: u64, steps: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 11);
        let wm = world_model(seed);
        let f = 117;
        let mut pol = PolicyNet::new(mode, dims(2 * f, f), 1e-3, &mut rng);
        jitter(pol.tensors_mut(), 0.2, seed + 2);
        let cb = Codebook::new(4, 4, &mut rng);
        let offsets = [1usize, 25, 48];
        let past = walk_states(&offsets, 0);
        let past_rows: Vec<Vec<f64>> = (0..offsets.len())
            .map(|r| to_heading_features(past.row(r), past.row(r), 7))
            .collect();
        let batch = TeacherBatch {
            past_frames: vec![Tensor::from_rows(&past_rows)],
            start: walk_states(&offsets, 1),
            refs: (0..steps).map(|k| walk_states(&offsets, k + 2)).collect(),
            noise: (0..steps)
                .map(|_| Noise::draw(offsets.len(), 4, 6, mode, &mut rng))
                .collect(),
        };
        let w = TeacherWeights {
            kl_weight: 0.1,
            ..TeacherWeights::default()
        };
        let cbr = (mode == PolicyMode::Vq).then_some(&cb);
        let (_, grads) = teacher_loss(&pol, &wm, cbr, &batch, &w);
        let pick = checked_tensors(&pol);
        fd_check(
            &pol,
            |p| p.tensors_mut(),
            &pick,
            |p| teacher_loss(p, &wm, cbr, &batch, &w).0,
            &grads,
            PER_TENSOR,
            seed,
        )
    }

    fn student_loss(pol: &PolicyNet, cb: Option<&Codebook>, batch: &StudentBatch) -> (f64, Vec<Tensor>) {
        let mut g = ValueGraph::new();
        let bp = pol.bind(&mut g);
        let (loss, _) = student_loss_graph(&mut g, &bp, cb, batch, 1.0).unwrap();
        g.backward(loss).unwrap();
        (g.value(loss).item(), bp.grads(&g))
    }

    /// Behaviour cloning plus latent alignment. VQ mode checks the tensors
    /// after the bottleneck only, as for the teacher.
    pub fn student_error(mode: PolicyMode, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 13);
        let mut pol = PolicyNet::new(mode, dims(36, 22), 1e-3, &mut rng);
        jitter(pol.tensors_mut(), 0.2, seed + 3);
        let cb = Codebook::new(4, 4, &mut rng);
        let rows = 5;
        let batch = StudentBatch {
            obs: random_tensor(rows, 36, 1.0, &mut rng),
            goal: random_tensor(rows, 22, 1.0, &mut rng),
            teacher_action: random_tensor(rows, 6, 0.5, &mut rng),
            teacher_z: random_tensor(rows, 4, 0.3, &mut rng),
        };
        let cbr = (mode == PolicyMode::Vq).then_some(&cb);
        let (_, grads) = student_loss(&pol, cbr, &batch);
        let pick = checked_tensors(&pol);
        fd_check(
            &pol,
            |p| p.tensors_mut(),
            &pick,
            |p| student_loss(p, cbr, &batch).0,
            &grads,
            PER_TENSOR,
            seed,
        )
    }

    /// Graph cross-entropy gradients against differences of the plain loss.
    pub fn prior_error(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 17);
        let mut prior = PriorEncoder::new(12, &[8], 5, 1e-3, &mut rng);
        jitter(prior.net.tensors_mut(), 0.3, seed + 4);
        let obs = random_tensor(7, 12, 1.0, &mut rng);
        let targets: Vec<usize> = (0..7).map(|_| rng.gen_range(0..5)).collect();
        let mut g = ValueGraph::new();
        let bound = prior.net.bind(&mut g);
        let x = g.constant(obs.clone());
        let logits = bound.forward(&mut g, x).unwrap();
        let ce = g.cross_entropy(logits, targets.clone()).unwrap();
        g.backward(ce).unwrap();
        let grads = bound.grads(&g);
        let pick: Vec<usize> = (0..grads.len()).collect();
        fd_check(
            &prior,
            |p| p.net.tensors_mut(),
            &pick,
            |p| p.loss(&obs, &targets).unwrap(),
            &grads,
            PER_TENSOR,
            seed,
        )
    }

    /// Graph KL gradients against differences of the plain KL, per row mean.
    pub fn kl_error(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 19);
        let rows = 4;
        let pair = (random_tensor(rows, 5, 1.0, &mut rng), random_tensor(rows, 5, 1.0, &mut rng));
        let mut g = ValueGraph::new();
        let mu = g.param(pair.0.clone());
        let ls = g.param(pair.1.clone());
        let kl = kl_graph(&mut g, mu, ls, 1.0).unwrap();
        g.backward(kl).unwrap();
        let grads = vec![g.grad(mu), g.grad(ls)];
        fd_check(
            &pair,
            |p| vec![&mut p.0, &mut p.1],
            &[0, 1],
            |p| kl_loss(&p.0.data, &p.1.data).unwrap() / rows as f64,
            &grads,
            usize::MAX,
            seed,
        )
    }
}

/// Checks shared by the integration tests and the acceptance report. Each
/// returns a one-line summary, as `Err` when the check fails.
pub mod criteria {
    use super::*;
    use vqloco::codebook::Codebook;
    use vqloco::config::RunConfig;
    use vqloco::policy::TeacherWeights;
    use vqloco::trainer::{run_envs, takeover_probability, PolicyTag, RolloutOptions, Trainer};

    pub type Outcome = Result<String, String>;

    fn verdict(ok: bool, msg: String) -> Outcome {
        if ok {
            Ok(msg)
        } else {
            Err(msg)
        }
    }

    /// Linear scan that keeps the first strictly smaller distance.
    pub fn brute_nearest(entries: &Tensor, z: &[f64]) -> usize {
        let d: Vec<f64> = (0..entries.rows)
            .map(|i| entries.row(i).iter().zip(z).map(|(e, x)| (e - x).powi(2)).sum())
            .collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        d.iter().position(|&v| v == min).unwrap()
    }

    /// Random queries, exact midpoint ties and duplicated entries against a
    /// brute-force scan, then the EMA fixed point.
    pub fn vq_oracle(seed: u64) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, d) = (16, 8);
        let mut entries = random_tensor(k, d, 1.0, &mut rng);
        // integer entries make midpoints exactly representable
        for v in &mut entries.data {
            *v = (*v * 4.0).round();
        }
        let dup = entries.row(3).to_vec();
        entries.row_mut(11).copy_from_slice(&dup);
        let cb = Codebook::from_entries(entries.clone());
        let mut mismatches = 0;
        let mut ties = 0;
        for q in 0..1000 {
            let z: Vec<f64> = match q % 4 {
                0 => {
                    let (i, j) = (rng.gen_range(0..k), rng.gen_range(0..k));
                    entries.row(i).iter().zip(entries.row(j)).map(|(a, b)| (a + b) / 2.0).collect()
                }
                1 => dup.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect(),
                _ => (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect(),
            };
            let expected = brute_nearest(&entries, &z);
            let dists: Vec<f64> = (0..k)
                .map(|i| entries.row(i).iter().zip(&z).map(|(e, x)| (e - x).powi(2)).sum())
                .collect();
            if dists.iter().filter(|&&v| v == dists[expected]).count() > 1 {
                ties += 1;
            }
            let (got, value) = cb.quantize(&z).unwrap();
            if got != expected || value != entries.row(expected) {
                mismatches += 1;
            }
        }

        let mut ema = Codebook::new(4, 3, &mut rng);
        let batch: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let assign: Vec<usize> = (0..12).map(|i| i % 3).collect();
        for _ in 0..2000 {
            ema.ema_update(&batch, &assign).unwrap();
        }
        let mut worst: f64 = 0.0;
        for c in 0..3 {
            let members: Vec<&Vec<f64>> = batch.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(z, _)| z).collect();
            for j in 0..3 {
                let mean = members.iter().map(|z| z[j]).sum::<f64>() / members.len() as f64;
                worst = worst.max((ema.entries.get(c, j) - mean).abs());
            }
        }
        verdict(
            mismatches == 0 && ties >= 100 && worst < 1e-4,
            format!("mismatches={mismatches}/1000 ties={ties} ema_err={worst:.2e} (tol 1e-4)"),
        )
    }

    pub const SCHEDULE_MS: [usize; 3] = [10, 20, 40];

    /// Boundary values of the takeover probability and the teacher share of
    /// steps in actual rollouts at the midpoint.
    pub fn schedule_exactness(seed: u64) -> Outcome {
        let [ms1, ms2, ms3] = SCHEDULE_MS;
        let hand = |e: usize| -> f64 {
            if e < ms2 {
                1.0
            } else if e > ms3 {
                0.0
            } else {
                (ms3 - e) as f64 / (ms3 - ms2) as f64
            }
        };
        let mid = (ms2 + ms3) / 2;
        let boundary = [ms1, ms2 - 1, ms2, mid, ms3, ms3 + 1];
        let exact = boundary.iter().all(|&e| takeover_probability(e, SCHEDULE_MS) == hand(e))
            && takeover_probability(mid, SCHEDULE_MS) == 0.5;

        let cfg = RunConfig {
            clips: vec!["walk".into()],
            max_episode_len: 60,
            embed: 8,
            hidden: vec![8],
            latent_dim: 4,
            codebook_size: 4,
            student_history: 1,
            ..RunConfig::default()
        };
        let clips = cfg.reference_clips().unwrap();
        let tr = Trainer::new(cfg.clone()).unwrap();
        let p = takeover_probability(mid, SCHEDULE_MS);
        let opts = RolloutOptions::collect(&cfg, p);
        let (mut teacher, mut total) = (0usize, 0usize);
        let mut next = seed * 1_000_000;
        while total < 10_000 {
            let seeds: Vec<u64> = (next..next + 64).collect();
            next += 64;
            for t in run_envs(tr.policies(), &clips, &seeds, &opts, &cfg).unwrap() {
                total += t.steps.len();
                teacher += t.steps.iter().filter(|s| s.tag == PolicyTag::Teacher).count();
            }
        }
        let frac = teacher as f64 / total as f64;
        verdict(
            exact && (frac - p).abs() <= 0.02,
            format!("boundaries_exact={exact} P={p} teacher_frac={frac:.4} over {total} steps (tol 0.02)"),
        )
    }

    /// Every randomization range and hyperparameter default against the
    /// published tables.
    pub fn config_fidelity() -> Outcome {
        let c = RunConfig::default();
        let w = TeacherWeights::default();
        let mut bad = Vec::new();
        let mut check = |name: &str, ok: bool| {
            if !ok {
                bad.push(name.to_string());
            }
        };
        check("friction", c.friction == [0.60, 1.00]);
        check("payload", c.payload == [-2.0, 2.0]);
        check("kp_scale", c.kp_scale == [0.90, 1.10]);
        check("kd_scale", c.kd_scale == [0.90, 1.10]);
        check("joint_pos_noise", c.joint_pos_noise == [-0.05, 0.05]);
        check("joint_vel_noise", c.joint_vel_noise == [-0.50, 0.50]);
        check("ang_vel_noise", c.ang_vel_noise == [-0.50, 0.50]);
        check("gravity_noise", c.gravity_noise == [-0.05, 0.05]);
        check("num_envs", c.num_envs == 1024);
        check("max_episode_len", c.max_episode_len == 1500);
        check("ref_clip_len", c.ref_clip_len == 120);
        check("fps", c.fps == 30.0);
        check("substeps", c.substeps == 6);
        check("buff_len", c.buff_len == 256);
        check("h0", c.h0 == 0.2);
        check("bs", (c.bs_world, c.bs_teacher, c.bs_student) == (512, 1024, 1024));
        check("l", (c.l_world, c.l_teacher, c.l_student) == (24, 24, 32));
        check("lr", c.lr == 2e-4);
        check("gamma", c.gamma == 1.0);
        check("w_world", c.w_world == [2.0, 1.0, 10.0, 5.0]);
        let wt = [2.0 * 0.1, 1.0 * 0.1, 0.5 / 3.0 * 0.1, 0.5 / 3.0 * 0.1];
        check(
            "w_teacher",
            c.w_teacher.iter().zip(&wt).all(|(a, b)| (a - b).abs() < 1e-15) && c.w_teacher == w.w_t,
        );
        check(
            "betas",
            [c.beta1, c.beta2, c.beta3, c.beta4] == [0.05, 0.01, 0.001, 1.0]
                && [w.beta1, w.beta2, w.beta3, w.beta4] == [0.05, 0.01, 0.001, 1.0],
        );
        let sim = c.sim();
        check("sim", sim.fps == 30.0 && sim.substeps == 6 && sim.h0 == 0.2);
        verdict(bad.is_empty(), format!("24 keys checked, mismatched: {bad:?}"))
    }
}

/// Two-step trajectory whose clip name carries `id`.
pub fn tagged_trajectory(id: usize) -> vqloco::trainer::Trajectory {
    use vqloco::trainer::{PolicyTag, StepRecord, Trajectory};
    let step = StepRecord {
        state: vec![id as f64],
        local: vec![0.0],
        next_ref: vec![0.0],
        student_goal: vec![0.0],
        action: vec![0.0],
        tag: PolicyTag::Teacher,
        index: None,
    };
    Trajectory {
        clip: id.to_string(),
        steps: vec![step.clone(), step],
        final_state: vec![id as f64],
        fell: false,
    }
}

/// Smallest configuration that passes through every stage in a few seconds.
pub fn tiny_config() -> vqloco::config::RunConfig {
    vqloco::config::RunConfig {
        clips: vec!["walk".into()],
        num_envs: 2,
        eval_envs: 2,
        max_episode_len: 24,
        ref_clip_len: 16,
        buff_len: 8,
        refill_target: 4,
        evict_count: 1,
        epochs: 5,
        milestones: Some([1, 2, 3]),
        wm_updates: 1,
        teacher_updates: 1,
        student_updates: 1,
        bs_world: 4,
        bs_teacher: 4,
        bs_student: 4,
        l_world: 4,
        l_teacher: 4,
        l_student: 4,
        embed: 8,
        hidden: vec![8],
        wm_hidden: vec![16],
        prior_hidden: vec![8],
        latent_dim: 4,
        codebook_size: 4,
        student_history: 1,
        prior_rollouts: 2,
        prior_updates: 5,
        prior_batch: 8,
        gen_steps: 20,
        ..vqloco::config::RunConfig::default()
    }
}

/// Single looped walk clip with eight environments, sized for one CPU.
pub fn desk_config(seed: u64) -> vqloco::config::RunConfig {
    vqloco::config::RunConfig {
        seed,
        clips: vec!["walk".into()],
        clip_loops: 2,
        num_envs: 8,
        eval_envs: 32,
        max_episode_len: 240,
        ref_clip_len: 120,
        buff_len: 64,
        refill_target: 32,
        evict_count: 8,
        epochs: 91,
        milestones: Some([45, 60, 90]),
        wm_updates: 32,
        teacher_updates: 32,
        student_updates: 128,
        bs_world: 64,
        bs_teacher: 128,
        bs_student: 128,
        l_world: 8,
        l_teacher: 16,
        l_student: 8,
        embed: 64,
        hidden: vec![128, 128],
        wm_hidden: vec![256, 256],
        latent_dim: 16,
        codebook_size: 16,
        lr: 1e-3,
        ..vqloco::config::RunConfig::default()
    }
}

pub mod wm_fit {
    use vqloco::config::RunConfig;
    use vqloco::diffcore::Tensor;
    use vqloco::trainer::{Trainer, TrajectoryBuffer};
    use vqloco::worldmodel::{eval_loss, train_step, WmBatch, WmTrainParams};

    fn one_step_batch(buf: &TrajectoryBuffer) -> WmBatch {
        let (mut s0, mut a, mut s1) = (Vec::new(), Vec::new(), Vec::new());
        for t in buf.iter() {
            for k in 0..t.len() {
                s0.push(t.state(k).to_vec());
                a.push(t.steps[k].action.clone());
                s1.push(t.state(k + 1).to_vec());
            }
        }
        WmBatch {
            states: vec![Tensor::from_rows(&s0), Tensor::from_rows(&s1)],
            actions: vec![Tensor::from_rows(&a)],
        }
    }

    /// Held-out one-step loss of a fresh world model before and after
    /// `updates` steps on a fixed buffer of `n` trajectories collected by the
    /// teacher of `source`. Returns (before, after, held-out rows, train
    /// before, train after).
    pub fn convergence(source: &Trainer, n: usize, updates: usize) -> (f64, f64, usize, f64, f64) {
        let cfg = RunConfig {
            buff_len: n,
            refill_target: n,
            ..source.cfg.clone()
        };
        let clips = cfg.reference_clips().unwrap();
        let mut tr = source.clone();
        tr.cfg = cfg.clone();
        tr.world_model = Trainer::new(cfg.clone()).unwrap().world_model;
        tr.buffer = TrajectoryBuffer::new(n);
        tr.refill(&clips, 1.0).unwrap();
        let train = tr.buffer.clone();
        tr.buffer = TrajectoryBuffer::new(n);
        tr.refill(&clips, 1.0).unwrap();
        let held = one_step_batch(&tr.buffer);
        tr.buffer = train;
        let own = one_step_batch(&tr.buffer);
        let p = WmTrainParams {
            weights: [2.0, 1.0, 10.0, 5.0],
            gamma: 1.0,
            grad_clip: cfg.grad_clip,
        };
        let before = eval_loss(&tr.world_model, &held, &p).unwrap();
        let train_before = eval_loss(&tr.world_model, &own, &p).unwrap();
        for _ in 0..updates {
            let b = tr.wm_batch(cfg.bs_world, cfg.l_world).unwrap();
            train_step(&mut tr.world_model, &b, &p).unwrap();
        }
        let after = eval_loss(&tr.world_model, &held, &p).unwrap();
        let train_after = eval_loss(&tr.world_model, &own, &p).unwrap();
        (before, after, held.rows(), train_before, train_after)
    }
}
