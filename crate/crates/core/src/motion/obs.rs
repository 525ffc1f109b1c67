//! Observation spaces.
//!
//! *Global* (privileged) frames express every body in the root heading frame:
//! positions relative to the root's horizontal position and everything rotated
//! by the inverse root yaw. *Local* frames hold only what an IMU and joint
//! encoders provide.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rot6d::{rot6d_encode, unit_quat};
use crate::diffcore::{heading_cos_sin, BODY_FEATURES};
use crate::toysim::RobotState;

/// Length of the world-frame state-feature vector.
pub fn feature_dim(n_body: usize, n_joint: usize) -> usize {
    BODY_FEATURES * n_body + 2 * n_joint
}

/// Length of one local frame.
pub fn local_dim(n_joint: usize) -> usize {
    6 + 2 * n_joint
}

/// Length of the student goal: the reference's local frame, its root
/// displacement and its yaw change.
pub fn student_goal_dim(n_joint: usize) -> usize {
    local_dim(n_joint) + 4
}

/// World-frame features: per body `[p, rot6d, v, w]`, then joint angles and rates.
pub fn state_features(s: &RobotState) -> Vec<f64> {
    let mut out = Vec::with_capacity(feature_dim(s.n_body(), s.n_joint()));
    for b in &s.bodies {
        out.extend_from_slice(&b.p);
        out.extend_from_slice(&rot6d_encode(b.q));
        out.extend_from_slice(&b.v);
        out.extend_from_slice(&b.w);
    }
    out.extend_from_slice(&s.joint_q);
    out.extend_from_slice(&s.joint_dq);
    out
}

/// Root yaw of a state-feature vector (rad).
pub fn feature_yaw(features: &[f64]) -> f64 {
    features[4].atan2(features[3])
}

/// Re-expresses world-frame `x` in the heading frame of `frame` (both in
/// state-feature layout). Columns past the body blocks pass through.
pub fn to_heading_features(x: &[f64], frame: &[f64], n_body: usize) -> Vec<f64> {
    let (c, s) = heading_cos_sin(frame[3], frame[4]);
    let s = -s;
    let mut out = x.to_vec();
    for k in 0..n_body {
        let base = k * BODY_FEATURES;
        out[base] -= frame[0];
        out[base + 1] -= frame[1];
        for t in 0..5 {
            let o = base + 3 * t;
            let (px, py) = (out[o], out[o + 1]);
            out[o] = c * px - s * py;
            out[o + 1] = s * px + c * py;
        }
    }
    out
}

/// Per-body heading-frame state, `(N_body, 3 + 6 + 3 + 3)` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalObs {
    pub n_body: usize,
    pub data: Vec<f64>,
}

impl GlobalObs {
    pub fn body(&self, i: usize) -> &[f64] {
        &self.data[i * BODY_FEATURES..(i + 1) * BODY_FEATURES]
    }
}

pub fn to_heading_frame(state: &RobotState) -> GlobalObs {
    let f = state_features(state);
    let n = state.n_body();
    let mut h = to_heading_features(&f, &f, n);
    h.truncate(n * BODY_FEATURES);
    GlobalObs { n_body: n, data: h }
}

/// Proprioceptive frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalObs {
    /// World `(0, 0, -1)` in the base frame.
    pub projected_gravity: [f64; 3],
    /// Base angular velocity in the base frame.
    pub base_ang_vel: [f64; 3],
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
}

impl LocalObs {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + 2 * self.joint_pos.len());
        v.extend_from_slice(&self.projected_gravity);
        v.extend_from_slice(&self.base_ang_vel);
        v.extend_from_slice(&self.joint_pos);
        v.extend_from_slice(&self.joint_vel);
        v
    }

    pub fn len(&self) -> usize {
        6 + self.joint_pos.len() + self.joint_vel.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn to_local_obs(state: &RobotState) -> LocalObs {
    let base = &state.bodies[0];
    let inv = unit_quat(base.q).inverse();
    let g = inv * Vector3::new(0.0, 0.0, -1.0);
    let w = inv * Vector3::new(base.w[0], base.w[1], base.w[2]);
    LocalObs {
        projected_gravity: [g.x, g.y, g.z],
        base_ang_vel: [w.x, w.y, w.z],
        joint_pos: state.joint_q.clone(),
        joint_vel: state.joint_dq.clone(),
    }
}

/// Teacher state frame: heading-frame features of `state` including joints.
pub fn teacher_frame(state: &RobotState) -> Vec<f64> {
    let f = state_features(state);
    to_heading_features(&f, &f, state.n_body())
}

/// Teacher goal: the reference frame in the robot's current heading frame.
pub fn teacher_goal(robot: &RobotState, reference: &RobotState) -> Vec<f64> {
    to_heading_features(
        &state_features(reference),
        &state_features(robot),
        robot.n_body(),
    )
}

/// Student goal built from the reference alone: the next reference frame's
/// local observation, its root displacement from the current reference frame
/// (in that frame's heading) and the yaw change.
pub fn student_goal(current_ref: &RobotState, next_ref: &RobotState) -> Vec<f64> {
    let mut g = to_local_obs(next_ref).to_vec();
    let cur = state_features(current_ref);
    let nxt = state_features(next_ref);
    let rel = to_heading_features(&nxt[..BODY_FEATURES], &cur, 1);
    g.extend_from_slice(&[rel[0], rel[1], nxt[2] - cur[2]]);
    let mut dyaw = feature_yaw(&nxt) - feature_yaw(&cur);
    dyaw = (dyaw + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    g.push(dyaw);
    g
}

/// Concatenation of frames `t-h ..= t`, oldest first; slots before the start
/// of the episode are zero-filled.
pub fn history_window(frames: &[Vec<f64>], t: usize, h: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((h + 1) * dim);
    for k in 0..=h {
        let back = h - k;
        if back > t {
            out.extend(std::iter::repeat(0.0).take(dim));
        } else {
            out.extend_from_slice(&frames[t - back]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsSpace {
    Global,
    Local,
}

/// Per-environment ring buffers of recent global and local frames.
#[derive(Debug, Clone)]
pub struct ObsHistory {
    pub teacher_history: usize,
    pub student_history: usize,
    global: VecDeque<Vec<f64>>,
    local: VecDeque<Vec<f64>>,
    global_dim: usize,
    local_dim: usize,
}

impl ObsHistory {
    pub fn new(teacher_history: usize, student_history: usize, global_dim: usize, local_dim: usize) -> Self {
        let cap = teacher_history.max(student_history) + 1;
        Self {
            teacher_history,
            student_history,
            global: VecDeque::with_capacity(cap),
            local: VecDeque::with_capacity(cap),
            global_dim,
            local_dim,
        }
    }

    pub fn capacity(&self) -> usize {
        self.teacher_history.max(self.student_history) + 1
    }

    pub fn reset(&mut self) {
        self.global.clear();
        self.local.clear();
    }

    pub fn push(&mut self, global: Vec<f64>, local: Vec<f64>) {
        debug_assert_eq!(global.len(), self.global_dim);
        debug_assert_eq!(local.len(), self.local_dim);
        if self.global.len() == self.capacity() {
            self.global.pop_front();
            self.local.pop_front();
        }
        self.global.push_back(global);
        self.local.push_back(local);
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// Frames `t-h ..= t` of one space, oldest first, zero-padded.
    pub fn window(&self, space: ObsSpace, h: usize) -> Vec<f64> {
        let (buf, dim) = match space {
            ObsSpace::Global => (&self.global, self.global_dim),
            ObsSpace::Local => (&self.local, self.local_dim),
        };
        let mut out = Vec::with_capacity((h + 1) * dim);
        for k in 0..=h {
            let back = h - k;
            if back >= buf.len() {
                out.extend(std::iter::repeat(0.0).take(dim));
            } else {
                out.extend_from_slice(&buf[buf.len() - 1 - back]);
            }
        }
        out
    }
}

/// `o_t = concat(s_{t-H}, …, s_t, g_t)`; the goal is omitted in generative mode.
pub fn build_observation(hist: &ObsHistory, space: ObsSpace, goal: Option<&[f64]>) -> Vec<f64> {
    let h = match space {
        ObsSpace::Global => hist.teacher_history,
        ObsSpace::Local => hist.student_history,
    };
    let mut o = hist.window(space, h);
    if let Some(g) = goal {
        o.extend_from_slice(g);
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rot6d::quat_array;
    use crate::toysim::{pose_state, BodyState, Morphology, SimConfig};
    use nalgebra::UnitQuaternion;

    fn sample_state() -> RobotState {
        let m = Morphology::biped();
        pose_state(
            &m,
            [1.0, 0.5, 0.9],
            0.2,
            &[0.1, 0.3, -0.2, -0.4, 0.6, 0.1],
            [0.4, 0.0, -0.1],
            0.3,
            &[1.0, -1.0, 0.5, 0.2, 0.0, -0.3],
        )
    }

    fn rigid(state: &RobotState, yaw: f64, shift: [f64; 3]) -> RobotState {
        let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        let mut out = state.clone();
        for b in &mut out.bodies {
            let p = r * Vector3::from(b.p);
            b.p = [p.x + shift[0], p.y + shift[1], p.z + shift[2]];
            let v = r * Vector3::from(b.v);
            b.v = [v.x, v.y, v.z];
            let w = r * Vector3::from(b.w);
            b.w = [w.x, w.y, w.z];
            b.q = quat_array(&(r * unit_quat(b.q)));
        }
        out
    }

    #[test]
    fn horizontal_translation_invariance() {
        let s = sample_state();
        let a = to_heading_frame(&s);
        let b = to_heading_frame(&rigid(&s, 0.0, [5.0, -3.0, 0.0]));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn yaw_invariance() {
        let s = sample_state();
        let a = to_heading_frame(&s);
        let b = to_heading_frame(&rigid(&s, std::f64::consts::FRAC_PI_2, [0.0; 3]));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(a.body(0)[0], 0.0);
        assert_eq!(a.body(0)[1], 0.0);
    }

    #[test]
    fn pitch_survives_heading_removal() {
        let pitch = 30f64.to_radians();
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch);
        let mut s = SimConfig::default().standing_state(0.0, 0.0);
        s.bodies[0] = BodyState {
            q: quat_array(&q),
            ..BodyState::at_rest([0.0, 0.0, 1.0])
        };
        let g = to_heading_frame(&s);
        // columns of R_y(30°): (cos, 0, -sin) and (0, 1, 0)
        let (sn, cs) = pitch.sin_cos();
        let expect = [cs, 0.0, -sn, 0.0, 1.0, 0.0];
        for (a, b) in g.body(0)[3..9].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_gravity() {
        let mut s = SimConfig::default().standing_state(0.0, 0.0);
        assert_eq!(to_local_obs(&s).projected_gravity, [0.0, 0.0, -1.0]);
        let roll = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
        s.bodies[0].q = quat_array(&roll);
        let g = to_local_obs(&s).projected_gravity;
        for (a, b) in g.iter().zip([0.0, -1.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(to_local_obs(&s).len(), 18);
    }

    #[test]
    fn observation_lengths() {
        let mut h = ObsHistory::new(0, 5, 117, 18);
        h.push(vec![1.0; 117], vec![2.0; 18]);
        let goal = vec![0.5; 22];
        assert_eq!(build_observation(&h, ObsSpace::Local, Some(&goal)).len(), 6 * 18 + 22);
        assert_eq!(build_observation(&h, ObsSpace::Global, Some(&goal)).len(), 117 + 22);
        assert_eq!(build_observation(&h, ObsSpace::Local, None).len(), 6 * 18);
        let w = h.window(ObsSpace::Local, 5);
        assert!(w[..5 * 18].iter().all(|&v| v == 0.0));
        assert!(w[5 * 18..].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn window_depends_only_on_recent_frames() {
        let frames: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64; 3]).collect();
        let a = history_window(&frames, 7, 2, 3);
        let mut changed = frames.clone();
        for f in changed.iter_mut().take(5) {
            f[0] = -99.0;
        }
        assert_eq!(a, history_window(&changed, 7, 2, 3));
        assert_eq!(a, vec![5.0, 5.0, 5.0, 6.0, 6.0, 6.0, 7.0, 7.0, 7.0]);

        let mut hist = ObsHistory::new(2, 2, 3, 1);
        for f in &frames[..8] {
            hist.push(f.clone(), vec![0.0]);
        }
        assert_eq!(hist.window(ObsSpace::Global, 2), a);
    }
}
