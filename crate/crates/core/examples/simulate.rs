//! Holds the standing pose with PD targets in a few randomized environments
//! and prints the root height and forward drift.

use vqloco::config::RunConfig;
use vqloco::toysim::{check_termination, randomize, step};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let sim = cfg.sim();
    let hold = vec![0.0; sim.n_joint()];
    for seed in 0..4 {
        let rand = randomize(seed, &cfg.ranges())?;
        let mut state = sim.standing_state(0.0, 0.0);
        let mut fell_at = None;
        for t in 0..150 {
            state = step(&state, &hold, &rand, &sim)?;
            if fell_at.is_none() && check_termination(&state, cfg.h0) {
                fell_at = Some(t);
            }
        }
        let root = state.bodies[0].p;
        println!(
            "env {seed}: friction {:.2} payload {:+.2} -> root x {:+.3} z {:.3} fell {:?}",
            rand.friction, rand.payload, root[0], root[2], fell_at
        );
    }
    Ok(())
}
