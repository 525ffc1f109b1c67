//! Collects a small buffer with an untrained teacher and fits the world model
//! on it, printing the held-out one-step loss as it goes.

use vqloco::config::RunConfig;
use vqloco::trainer::{Trainer, TrajectoryBuffer};
use vqloco::worldmodel::{eval_loss, train_step, WmTrainParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        clips: vec!["walk".into()],
        num_envs: 4,
        max_episode_len: 120,
        buff_len: 8,
        refill_target: 8,
        evict_count: 4,
        wm_hidden: vec![128, 128],
        lr: 1e-3,
        ..RunConfig::default()
    };
    let clips = cfg.reference_clips()?;
    let mut tr = Trainer::new(cfg.clone())?;
    tr.refill(&clips, 1.0)?;
    let train = tr.buffer.clone();
    tr.buffer = TrajectoryBuffer::new(cfg.buff_len);
    tr.refill(&clips, 1.0)?;
    let held = tr.wm_batch(32, 4)?;
    tr.buffer = train;

    let p = WmTrainParams::default();
    println!("update 0: held-out {:.4}", eval_loss(&tr.world_model, &held, &p)?);
    for u in 1..=200 {
        let b = tr.wm_batch(32, 4)?;
        let loss = train_step(&mut tr.world_model, &b, &p)?;
        if u % 50 == 0 {
            println!("update {u}: train {loss:.4} held-out {:.4}", eval_loss(&tr.world_model, &held, &p)?);
        }
    }
    Ok(())
}
