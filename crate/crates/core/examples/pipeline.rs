//! The whole staged run at toy size: world model and teacher, distillation
//! into the student, the prior encoder and a goal-free rollout. Saves a
//! checkpoint and the generated trajectory as CSV into a temporary directory.

use vqloco::checkpoint::{export_trajectory_file, load_checkpoint, save_checkpoint};
use vqloco::config::RunConfig;
use vqloco::eval::{evaluate, generate, Actor};
use vqloco::trainer::Trainer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        clips: vec!["walk".into()],
        num_envs: 4,
        eval_envs: 8,
        max_episode_len: 120,
        buff_len: 16,
        refill_target: 8,
        evict_count: 4,
        epochs: 13,
        milestones: Some([4, 8, 12]),
        wm_updates: 8,
        teacher_updates: 8,
        student_updates: 16,
        bs_world: 32,
        bs_teacher: 32,
        bs_student: 32,
        embed: 32,
        hidden: vec![64],
        wm_hidden: vec![64, 64],
        latent_dim: 8,
        codebook_size: 8,
        prior_updates: 50,
        lr: 1e-3,
        ..RunConfig::default()
    };
    let clips = cfg.reference_clips()?;
    let mut tr = Trainer::new(cfg.clone())?;
    for s in tr.run_until(&clips, cfg.epochs, None)? {
        println!("epoch {:>2} {} p_teacher {:.2} rollout SR {:.2}", s.epoch, s.stage, s.p_teacher, s.rollout_sr);
    }
    for actor in [Actor::Teacher, Actor::Student] {
        let (r, _) = evaluate(tr.policies(), actor, &clips, cfg.eval_envs, 99, &cfg)?;
        println!("{actor:?}: SR {:.3} MJRE {:?}", r.sr, r.mjre);
    }

    let dir = std::env::temp_dir().join("vqloco-pipeline");
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join("run.json");
    save_checkpoint(&tr, &ckpt)?;
    let mut tr = load_checkpoint(&ckpt)?.into_trainer();

    let ps = tr.train_prior(&clips)?;
    println!("prior: held-out top-1 {:.3} over {} samples", ps.heldout_accuracy, ps.samples);
    let g = generate(tr.prior.as_ref().unwrap(), &tr.codebook, &tr.student, 200, cfg.seed, &cfg)?;
    println!("generated: survived {} steps with {} codes", g.survived, g.distinct_codes);
    let csv = dir.join("generated.csv");
    export_trajectory_file(&g.trajectory, cfg.sim().morphology.n_body(), cfg.fps, &csv)?;
    println!("wrote {} and {}", ckpt.display(), csv.display());
    Ok(())
}
