use serde::{Deserialize, Serialize};

/// Pose and twist of one rigid body in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    /// Frame origin (m).
    pub p: [f64; 3],
    /// Orientation as a unit quaternion `[w, x, y, z]`.
    pub q: [f64; 4],
    /// Linear velocity of the frame origin (m/s).
    pub v: [f64; 3],
    /// Angular velocity (rad/s).
    pub w: [f64; 3],
}

impl BodyState {
    pub fn at_rest(p: [f64; 3]) -> Self {
        Self {
            p,
            q: [1.0, 0.0, 0.0, 0.0],
            v: [0.0; 3],
            w: [0.0; 3],
        }
    }
}

/// Full simulator state. Body 0 is the floating base; joint `j` drives body `j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub bodies: Vec<BodyState>,
    pub joint_q: Vec<f64>,
    pub joint_dq: Vec<f64>,
    /// Indices of bodies that may touch the ground without ending an episode.
    #[serde(default)]
    pub foot_links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("expected {expected} bodies for {joints} joints, found {found}")]
    BodyCount {
        expected: usize,
        joints: usize,
        found: usize,
    },
    #[error("joint velocity length {dq} differs from joint position length {q}")]
    JointLength { q: usize, dq: usize },
    #[error("body {body} quaternion norm {norm} is not unit")]
    QuaternionNorm { body: usize, norm: f64 },
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("foot link {0} out of range")]
    FootIndex(usize),
}

impl RobotState {
    pub fn n_body(&self) -> usize {
        self.bodies.len()
    }

    pub fn n_joint(&self) -> usize {
        self.joint_q.len()
    }

    pub fn validate(&self) -> Result<(), StateError> {
        if self.bodies.len() != self.joint_q.len() + 1 {
            return Err(StateError::BodyCount {
                expected: self.joint_q.len() + 1,
                joints: self.joint_q.len(),
                found: self.bodies.len(),
            });
        }
        if self.joint_dq.len() != self.joint_q.len() {
            return Err(StateError::JointLength {
                q: self.joint_q.len(),
                dq: self.joint_dq.len(),
            });
        }
        for (i, b) in self.bodies.iter().enumerate() {
            let all = b.p.iter().chain(&b.q).chain(&b.v).chain(&b.w);
            if !all.into_iter().all(|v| v.is_finite()) {
                return Err(StateError::NonFinite(format!("body {i}")));
            }
            let norm = b.q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(StateError::QuaternionNorm { body: i, norm });
            }
        }
        if !self
            .joint_q
            .iter()
            .chain(&self.joint_dq)
            .all(|v| v.is_finite())
        {
            return Err(StateError::NonFinite("joints".into()));
        }
        if let Some(&f) = self.foot_links.iter().find(|&&f| f >= self.bodies.len()) {
            return Err(StateError::FootIndex(f));
        }
        Ok(())
    }
}
