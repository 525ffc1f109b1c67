use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::rot6d::{quat_array, unit_quat};
use crate::toysim::{BodyState, RobotState, StateError};

pub const CLIP_FPS: f64 = 30.0;

/// A reference motion sampled at [`CLIP_FPS`].
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub name: String,
    pub fps: f64,
    pub frames: Vec<RobotState>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClipError {
    #[error("clip io: {0}")]
    Io(#[from] std::io::Error),
    #[error("clip schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("clip needs at least 2 frames, found {0}")]
    TooShort(usize),
    #[error("clip fps must be positive, found {0}")]
    BadFps(f64),
    #[error("frame {frame}: {detail}")]
    Frame { frame: usize, detail: String },
    #[error("frame {frame}: {source}")]
    State {
        frame: usize,
        #[source]
        source: StateError,
    },
}

impl MotionClip {
    pub fn new(name: impl Into<String>, fps: f64, frames: Vec<RobotState>) -> Result<Self, ClipError> {
        let clip = Self {
            name: name.into(),
            fps,
            frames,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Seconds spanned by the frames.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn validate(&self) -> Result<(), ClipError> {
        if !(self.fps > 0.0) {
            return Err(ClipError::BadFps(self.fps));
        }
        if self.frames.len() < 2 {
            return Err(ClipError::TooShort(self.frames.len()));
        }
        let (nb, nj) = (self.frames[0].n_body(), self.frames[0].n_joint());
        for (i, f) in self.frames.iter().enumerate() {
            f.validate()
                .map_err(|source| ClipError::State { frame: i, source })?;
            if f.n_body() != nb || f.n_joint() != nj {
                return Err(ClipError::Frame {
                    frame: i,
                    detail: "body or joint count differs from frame 0".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipFile {
    name: String,
    fps: f64,
    n_body: usize,
    n_joint: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    foot_links: Vec<usize>,
    frames: Vec<FrameFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    bodies: Vec<BodyState>,
    joints: JointsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointsFile {
    q: Vec<f64>,
    dq: Vec<f64>,
}

pub fn clip_to_json(clip: &MotionClip) -> Result<String, ClipError> {
    let f0 = &clip.frames[0];
    let file = ClipFile {
        name: clip.name.clone(),
        fps: clip.fps,
        n_body: f0.n_body(),
        n_joint: f0.n_joint(),
        foot_links: f0.foot_links.clone(),
        frames: clip
            .frames
            .iter()
            .map(|f| FrameFile {
                bodies: f.bodies.clone(),
                joints: JointsFile {
                    q: f.joint_q.clone(),
                    dq: f.joint_dq.clone(),
                },
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses a clip and resamples it to [`CLIP_FPS`] if needed.
pub fn clip_from_json(text: &str) -> Result<MotionClip, ClipError> {
    let file: ClipFile = serde_json::from_str(text)?;
    let mut frames = Vec::with_capacity(file.frames.len());
    for (i, f) in file.frames.into_iter().enumerate() {
        if f.bodies.len() != file.n_body || f.joints.q.len() != file.n_joint {
            return Err(ClipError::Frame {
                frame: i,
                detail: format!(
                    "expected {} bodies and {} joints, found {} and {}",
                    file.n_body,
                    file.n_joint,
                    f.bodies.len(),
                    f.joints.q.len()
                ),
            });
        }
        frames.push(RobotState {
            bodies: f.bodies,
            joint_q: f.joints.q,
            joint_dq: f.joints.dq,
            foot_links: file.foot_links.clone(),
        });
    }
    let clip = MotionClip::new(file.name, file.fps, frames)?;
    if clip.fps == CLIP_FPS {
        Ok(clip)
    } else {
        Ok(resample(&clip, CLIP_FPS))
    }
}

pub fn save_clip(clip: &MotionClip, path: impl AsRef<Path>) -> Result<(), ClipError> {
    fs::write(path, clip_to_json(clip)?)?;
    Ok(())
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<MotionClip, ClipError> {
    clip_from_json(&fs::read_to_string(path)?)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn lerp_vec(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * t).collect()
}

/// Linear interpolation of two states; orientations by slerp.
pub fn interpolate_state(a: &RobotState, b: &RobotState, t: f64) -> RobotState {
    let bodies = a
        .bodies
        .iter()
        .zip(&b.bodies)
        .map(|(x, y)| {
            let qa = unit_quat(x.q);
            let qb = unit_quat(y.q);
            let q = qa.try_slerp(&qb, t, 1e-12).unwrap_or(qa);
            BodyState {
                p: lerp3(x.p, y.p, t),
                q: quat_array(&q),
                v: lerp3(x.v, y.v, t),
                w: lerp3(x.w, y.w, t),
            }
        })
        .collect();
    RobotState {
        bodies,
        joint_q: lerp_vec(&a.joint_q, &b.joint_q, t),
        joint_dq: lerp_vec(&a.joint_dq, &b.joint_dq, t),
        foot_links: a.foot_links.clone(),
    }
}

/// Resamples to `fps` over the same time span.
pub fn resample(clip: &MotionClip, fps: f64) -> MotionClip {
    let span = (clip.frames.len() - 1) as f64 / clip.fps;
    let n_out = ((span * fps) + 1e-9).floor() as usize + 1;
    let last = clip.frames.len() - 1;
    let frames = (0..n_out)
        .map(|k| {
            let src = k as f64 * clip.fps / fps;
            let i = (src.floor() as usize).min(last - 1);
            interpolate_state(&clip.frames[i], &clip.frames[i + 1], src - i as f64)
        })
        .collect();
    MotionClip {
        name: clip.name.clone(),
        fps,
        frames,
    }
}

/// Repeats a clip `n` times, shifting each repetition horizontally so the
/// root keeps advancing across the seam.
pub fn loop_clip(clip: &MotionClip, n: usize) -> MotionClip {
    let n = n.max(1);
    let len = clip.frames.len();
    let first = clip.frames[0].bodies[0].p;
    let last = clip.frames[len - 1].bodies[0].p;
    // displacement of one period, extrapolated by one frame past the last
    let scale = len as f64 / (len - 1) as f64;
    let step = [(last[0] - first[0]) * scale, (last[1] - first[1]) * scale];
    let mut frames = Vec::with_capacity(len * n);
    for r in 0..n {
        let off = Vector3::new(step[0] * r as f64, step[1] * r as f64, 0.0);
        for f in &clip.frames {
            let mut g = f.clone();
            for b in &mut g.bodies {
                b.p = [b.p[0] + off.x, b.p[1] + off.y, b.p[2]];
            }
            frames.push(g);
        }
    }
    MotionClip {
        name: clip.name.clone(),
        fps: clip.fps,
        frames,
    }
}

/// Rigidly moves `frames` about the vertical axis so the first root lands at
/// horizontal position `xy` facing `yaw`. Heights and joints are unchanged.
pub fn reroot(frames: &[RobotState], xy: [f64; 2], yaw: f64) -> Vec<RobotState> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    let root = first.bodies[0].p;
    let r0 = unit_quat(first.bodies[0].q).to_rotation_matrix();
    let yaw0 = r0[(1, 0)].atan2(r0[(0, 0)]);
    let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw - yaw0);
    let turn = |v: [f64; 3]| {
        let r = rot * Vector3::from(v);
        [r.x, r.y, r.z]
    };
    frames
        .iter()
        .map(|f| {
            let mut g = f.clone();
            for b in &mut g.bodies {
                let rel = turn([b.p[0] - root[0], b.p[1] - root[1], 0.0]);
                b.p = [rel[0] + xy[0], rel[1] + xy[1], b.p[2]];
                b.q = quat_array(&(rot * unit_quat(b.q)));
                b.v = turn(b.v);
                b.w = turn(b.w);
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth::{synth_clip, GaitSpec};

    #[test]
    fn json_round_trip_is_exact() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let back = clip_from_json(&clip_to_json(&clip).unwrap()).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn missing_fps_is_a_schema_error() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&clip_to_json(&clip).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("fps");
        let err = clip_from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ClipError::Schema(_)));
        assert!(err.to_string().contains("fps"));
    }

    #[test]
    fn wrong_joint_count_names_the_frame() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&clip_to_json(&clip).unwrap()).unwrap();
        v["frames"][3]["joints"]["q"].as_array_mut().unwrap().pop();
        let err = clip_from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().starts_with("frame 3"));
    }

    #[test]
    fn sixty_fps_clip_is_resampled() {
        let base = synth_clip(&GaitSpec {
            fps: 60.0,
            ..GaitSpec::walk()
        })
        .unwrap();
        let back = clip_from_json(&clip_to_json(&base).unwrap()).unwrap();
        assert_eq!(back.fps, 30.0);
        assert_eq!(back.len(), (base.len() - 1) / 2 + 1);
        // every output frame lands on an even source frame
        for (k, f) in back.frames.iter().enumerate() {
            assert_eq!(f.joint_q, base.frames[2 * k].joint_q);
        }
        // a half-way sample is the midpoint of its neighbours
        let mid = resample(&base, 120.0);
        let a = &base.frames[10];
        let b = &base.frames[11];
        let m = &mid.frames[21];
        for j in 0..a.joint_q.len() {
            assert!((m.joint_q[j] - 0.5 * (a.joint_q[j] + b.joint_q[j])).abs() < 1e-12);
        }
        let half = unit_quat(a.bodies[2].q).slerp(&unit_quat(b.bodies[2].q), 0.5);
        assert!(unit_quat(m.bodies[2].q).angle_to(&half) < 1e-12);
    }

    #[test]
    fn reroot_moves_first_root_and_keeps_relative_motion() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let moved = reroot(&clip.frames, [5.0, -1.0], 0.0);
        assert!((moved[0].bodies[0].p[0] - 5.0).abs() < 1e-12);
        assert!((moved[0].bodies[0].p[1] + 1.0).abs() < 1e-12);
        for (a, b) in clip.frames.iter().zip(&moved) {
            let da = a.bodies[3].p[0] - clip.frames[0].bodies[0].p[0];
            let db = b.bodies[3].p[0] - 5.0;
            assert!((da - db).abs() < 1e-12);
            assert_eq!(a.bodies[3].p[2], b.bodies[3].p[2]);
            assert_eq!(a.joint_q, b.joint_q);
        }
        let turned = reroot(&clip.frames, [0.0, 0.0], std::f64::consts::FRAC_PI_2);
        // forward velocity now points along +y
        assert!(turned[10].bodies[0].v[0].abs() < 1e-12);
        assert!((turned[10].bodies[0].v[1] - clip.frames[10].bodies[0].v[0]).abs() < 1e-12);
    }

    #[test]
    fn looping() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        assert_eq!(loop_clip(&clip, 1), clip);
        let long = loop_clip(&clip, 3);
        assert_eq!(long.len(), 3 * clip.len());
        let x: Vec<f64> = long.frames.iter().map(|f| f.bodies[0].p[0]).collect();
        let steps: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let intra = steps[..clip.len() - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let seam = steps[clip.len() - 1];
        assert!(seam > 0.0 && seam.abs() < 2.0 * intra);

        let v: Vec<f64> = long.frames.iter().map(|f| f.bodies[0].v[0]).collect();
        let dv: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let intra = dv[..clip.len() - 1].iter().cloned().fold(0.0, f64::max);
        assert!(dv[clip.len() - 1] < 2.0 * intra.max(1e-12));
    }
}
