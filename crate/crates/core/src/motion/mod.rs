//! Reference motions and the observations built from them.

pub mod clip;
pub mod obs;
pub mod rot6d;
pub mod synth;

pub use clip::{
    clip_from_json, clip_to_json, interpolate_state, load_clip, loop_clip, reroot, resample, save_clip,
    ClipError, MotionClip, CLIP_FPS,
};
pub use obs::{
    build_observation, feature_dim, feature_yaw, history_window, local_dim, state_features, student_goal,
    student_goal_dim, teacher_frame, teacher_goal, to_heading_features, to_heading_frame,
    to_local_obs, GlobalObs, LocalObs, ObsHistory, ObsSpace,
};
pub use rot6d::{rot6d_decode, rot6d_encode, DegenerateRotation};
pub use synth::{default_corpus, synth_clip, synth_clip_for, GaitError, GaitSpec};
