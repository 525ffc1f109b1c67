//! Procedural gait clips for the default walker.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::clip::{MotionClip, CLIP_FPS};
use crate::toysim::{pose_state, Morphology, RobotState};

/// Sinusoidal gait with antiphase legs.
///
/// Joint order per leg is hip, knee, ankle. The hip swings as
/// `-hip_amplitude * sin(phase)`, the knee flexes by up to `knee_amplitude`
/// around mid-swing on top of `knee_offset`, and the ankle keeps the foot
/// parallel to the base. The base height follows the lowest foot contact so
/// that the stance foot touches the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitSpec {
    pub name: String,
    /// Stride frequency (Hz).
    pub frequency: f64,
    pub hip_amplitude: f64,
    pub knee_amplitude: f64,
    pub knee_offset: f64,
    /// Forward base speed (m/s).
    pub speed: f64,
    pub duration: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("gait parameter `{field}` = {value} outside [{lo}, {hi}]")]
pub struct GaitError {
    pub field: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl GaitSpec {
    pub fn walk() -> Self {
        Self {
            name: "walk".into(),
            frequency: 1.0,
            hip_amplitude: 0.25,
            knee_amplitude: 0.5,
            knee_offset: 0.1,
            speed: 0.3,
            duration: 4.0,
            fps: CLIP_FPS,
        }
    }

    pub fn stand() -> Self {
        Self {
            name: "stand".into(),
            hip_amplitude: 0.0,
            knee_amplitude: 0.0,
            knee_offset: 0.0,
            speed: 0.0,
            ..Self::walk()
        }
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        for (field, value, lo, hi) in [
            ("frequency", self.frequency, 0.1, 3.0),
            ("hip_amplitude", self.hip_amplitude, 0.0, 0.8),
            ("knee_amplitude", self.knee_amplitude, 0.0, 1.5),
            ("knee_offset", self.knee_offset, 0.0, 1.0),
            ("speed", self.speed, -2.0, 2.0),
            ("duration", self.duration, 0.1, 600.0),
            ("fps", self.fps, 1.0, 1000.0),
        ] {
            if !(value >= lo && value <= hi) {
                return Err(GaitError { field, value, lo, hi });
            }
        }
        Ok(())
    }

    fn joints(&self, t: f64) -> Vec<f64> {
        let phase = 2.0 * PI * self.frequency * t;
        let mut q = Vec::with_capacity(6);
        for shift in [0.0, PI] {
            let p = phase + shift;
            let hip = -self.hip_amplitude * p.sin();
            let knee = self.knee_offset + self.knee_amplitude * 0.5 * (1.0 + p.cos());
            q.extend_from_slice(&[hip, knee, -(hip + knee)]);
        }
        q
    }

    /// Zero-velocity pose at time `t` with the lowest contact on the ground.
    fn pose(&self, m: &Morphology, t: f64) -> RobotState {
        let q = self.joints(t);
        let zero = vec![0.0; q.len()];
        let probe = pose_state(m, [0.0, 0.0, 0.0], 0.0, &q, [0.0; 3], 0.0, &zero);
        let lowest = lowest_contact(m, &probe);
        pose_state(m, [self.speed * t, 0.0, -lowest], 0.0, &q, [0.0; 3], 0.0, &zero)
    }
}

/// World height of the lowest contact point.
fn lowest_contact(m: &Morphology, s: &RobotState) -> f64 {
    let mut z = f64::INFINITY;
    for (link, b) in m.links.iter().zip(&s.bodies) {
        // pure pitch: the y component of the quaternion is sin(θ/2)
        let theta = 2.0 * b.q[2].atan2(b.q[0]);
        let (sn, cs) = theta.sin_cos();
        for c in &link.contacts {
            z = z.min(b.p[2] - c[0] * sn + c[1] * cs);
        }
    }
    z
}

fn central(a: &[f64], b: &[f64], h: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (y - x) / (2.0 * h)).collect()
}

fn central3(a: [f64; 3], b: [f64; 3], h: f64) -> [f64; 3] {
    [
        (b[0] - a[0]) / (2.0 * h),
        (b[1] - a[1]) / (2.0 * h),
        (b[2] - a[2]) / (2.0 * h),
    ]
}

fn pitch_of(q: [f64; 4]) -> f64 {
    2.0 * q[2].atan2(q[0])
}

/// Samples `spec` for the default biped. Velocities are central differences
/// of the poses one frame before and after each sample.
pub fn synth_clip(spec: &GaitSpec) -> Result<MotionClip, GaitError> {
    synth_clip_for(spec, &Morphology::biped())
}

pub fn synth_clip_for(spec: &GaitSpec, m: &Morphology) -> Result<MotionClip, GaitError> {
    spec.validate()?;
    let h = 1.0 / spec.fps;
    let n = ((spec.duration * spec.fps).round() as usize).max(2);
    let frames = (0..n)
        .map(|k| {
            let t = k as f64 * h;
            let (prev, next) = (spec.pose(m, t - h), spec.pose(m, t + h));
            let mut s = spec.pose(m, t);
            for (i, b) in s.bodies.iter_mut().enumerate() {
                b.v = central3(prev.bodies[i].p, next.bodies[i].p, h);
                let rate = (pitch_of(next.bodies[i].q) - pitch_of(prev.bodies[i].q)) / (2.0 * h);
                b.w = [0.0, rate, 0.0];
            }
            s.joint_dq = central(&prev.joint_q, &next.joint_q, h);
            s
        })
        .collect();
    Ok(MotionClip {
        name: spec.name.clone(),
        fps: spec.fps,
        frames,
    })
}

/// A small set of gaits covering standing, slow and brisk walking.
pub fn default_corpus() -> Vec<GaitSpec> {
    vec![
        GaitSpec::walk(),
        GaitSpec {
            name: "slow_walk".into(),
            hip_amplitude: 0.15,
            knee_amplitude: 0.35,
            speed: 0.25,
            ..GaitSpec::walk()
        },
        GaitSpec {
            name: "march".into(),
            hip_amplitude: 0.2,
            knee_amplitude: 0.6,
            speed: 0.0,
            ..GaitSpec::walk()
        },
        GaitSpec::stand(),
    ]
}
