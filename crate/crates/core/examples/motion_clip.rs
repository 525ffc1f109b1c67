//! Synthesizes a walk cycle, loops it, round-trips it through JSON and
//! replays its joint angles open loop in the simulator.

use vqloco::config::RunConfig;
use vqloco::eval::replay_reference;
use vqloco::motion::{clip_from_json, clip_to_json, loop_clip, synth_clip, GaitSpec};
use vqloco::toysim::EnvRandomization;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let walk = synth_clip(&GaitSpec::walk())?;
    println!("walk: {} frames, {:.2}s", walk.len(), walk.duration());
    let looped = loop_clip(&walk, 3);
    let first = looped.frames.first().unwrap().bodies[0].p[0];
    let last = looped.frames.last().unwrap().bodies[0].p[0];
    println!("looped x3: {} frames, root advances {:.2} m", looped.len(), last - first);

    let back = clip_from_json(&clip_to_json(&looped)?)?;
    assert_eq!(back.len(), looped.len());

    let cfg = RunConfig::default();
    let replay = replay_reference(&walk, &EnvRandomization::nominal(), &cfg);
    println!("open-loop replay: {} steps, fell {}", replay.len(), replay.fell);
    Ok(())
}
