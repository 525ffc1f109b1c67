//! Runs pretraining and warm-up on the looped walk clip, logging one JSON line
//! per epoch, then evaluates the teacher. Pass an epoch count to shorten it.

use vqloco::config::RunConfig;
use vqloco::eval::{evaluate, Actor};
use vqloco::trainer::Trainer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        clips: vec!["walk".into()],
        clip_loops: 2,
        num_envs: 8,
        max_episode_len: 240,
        ref_clip_len: 120,
        buff_len: 64,
        refill_target: 32,
        evict_count: 8,
        milestones: Some([45, 60, 90]),
        wm_updates: 32,
        teacher_updates: 32,
        bs_world: 64,
        bs_teacher: 128,
        l_world: 8,
        l_teacher: 16,
        embed: 64,
        hidden: vec![128, 128],
        wm_hidden: vec![256, 256],
        latent_dim: 16,
        codebook_size: 16,
        lr: 1e-3,
        ..RunConfig::default()
    };
    let end = match std::env::args().nth(1) {
        Some(n) => n.parse()?,
        None => cfg.milestones()[1],
    };
    let clips = cfg.reference_clips()?;
    let mut tr = Trainer::new(cfg.clone())?;
    tr.run_until(&clips, end, Some(&mut std::io::stdout()))?;
    let (r, _) = evaluate(tr.policies(), Actor::Teacher, &clips, cfg.eval_envs, 99, &cfg)?;
    println!("teacher after {end} epochs: SR {:.3} MJRE {:?}", r.sr, r.mjre);
    Ok(())
}
