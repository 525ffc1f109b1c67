//! Deterministic chain-walker simulator.
//!
//! A floating base with two three-link legs moving in the sagittal (x-z)
//! plane, embedded in 3-D state. Joints are PD-actuated hinges about y; the
//! ground is a penalty spring-damper with Coulomb-clamped tangential
//! friction. Stepping is a pure function of `(state, action, randomization)`.

mod dynamics;
mod morphology;
mod randomization;
mod state;

use serde::{Deserialize, Serialize};

pub use dynamics::{pd_torque, pose_state};
pub use morphology::{LinkSpec, Morphology, MorphologyError};
pub use randomization::{
    apply_obs_noise, randomize, EnvRandomization, InvertedRange, RandomizationRanges, Range,
};
pub use state::{BodyState, RobotState, StateError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Control frequency (Hz).
    pub fps: f64,
    pub substeps: usize,
    /// Magnitude of gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Termination height for non-foot links (m).
    pub h0: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_damping: f64,
    pub contact_enabled: bool,
    pub morphology: Morphology,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            substeps: 6,
            gravity: 9.81,
            h0: 0.2,
            contact_stiffness: 5e3,
            contact_damping: 50.0,
            tangential_damping: 1000.0,
            contact_enabled: true,
            morphology: Morphology::biped(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("action has {got} entries, walker has {expected} joints")]
    ActionLength { expected: usize, got: usize },
    #[error("non-finite action entry at joint {0}")]
    NonFiniteAction(usize),
    #[error("invalid state: {0}")]
    State(#[from] StateError),
    #[error("state has {got} bodies, morphology has {expected}")]
    Morphology { expected: usize, got: usize },
    #[error("invalid simulator config: {0}")]
    Config(String),
}

impl SimConfig {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn substep_dt(&self) -> f64 {
        1.0 / (self.fps * self.substeps as f64)
    }

    pub fn n_joint(&self) -> usize {
        self.morphology.n_joint()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.fps > 0.0) || self.substeps < 1 || !(self.h0 > 0.0) {
            return Err(SimError::Config("fps > 0, substeps >= 1 and h0 > 0 required".into()));
        }
        self.morphology
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))
    }

    /// Default pose standing on flat ground at horizontal position `(x, y)`.
    pub fn standing_state(&self, x: f64, y: f64) -> RobotState {
        let n = self.n_joint();
        pose_state(
            &self.morphology,
            [x, y, self.morphology.standing_height()],
            0.0,
            &vec![0.0; n],
            [0.0; 3],
            0.0,
            &vec![0.0; n],
        )
    }
}

/// Joint targets clamped to the morphology's limits.
pub fn clamp_targets(cfg: &SimConfig, action: &[f64]) -> Vec<f64> {
    action
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let [lo, hi] = cfg.morphology.links[j + 1].limits;
            a.clamp(lo, hi)
        })
        .collect()
}

/// Advances one control step (`cfg.substeps` substeps) toward joint targets `action`.
///
/// Only the base pose/twist and the joint coordinates of `state` are read;
/// the other bodies are recomputed by forward kinematics.
pub fn step(
    state: &RobotState,
    action: &[f64],
    rand: &EnvRandomization,
    cfg: &SimConfig,
) -> Result<RobotState, SimError> {
    let n_joint = cfg.n_joint();
    if action.len() != n_joint {
        return Err(SimError::ActionLength {
            expected: n_joint,
            got: action.len(),
        });
    }
    if let Some(j) = action.iter().position(|a| !a.is_finite()) {
        return Err(SimError::NonFiniteAction(j));
    }
    state.validate()?;
    if state.n_body() != cfg.morphology.n_body() {
        return Err(SimError::Morphology {
            expected: cfg.morphology.n_body(),
            got: state.n_body(),
        });
    }
    let targets = clamp_targets(cfg, action);
    let (mut q, mut qd) = dynamics::generalized_from_state(state);
    for _ in 0..cfg.substeps {
        dynamics::substep(cfg, rand, &targets, &mut q, &mut qd);
    }
    Ok(dynamics::state_from_generalized(
        &cfg.morphology,
        &q,
        &qd,
        state.bodies[0].p[1],
    ))
}

/// True iff some non-foot body is strictly below `h0`.
pub fn check_termination(state: &RobotState, h0: f64) -> bool {
    state
        .bodies
        .iter()
        .enumerate()
        .any(|(i, b)| !state.foot_links.contains(&i) && b.p[2] < h0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_cfg() -> SimConfig {
        SimConfig {
            gravity: 0.0,
            contact_enabled: false,
            ..SimConfig::default()
        }
    }

    #[test]
    fn pd_law() {
        assert_eq!(pd_torque(50.0, 2.0, 1.0, 1.0, 0.5, 0.0, 0.0), 25.0);
        assert_eq!(pd_torque(50.0, 2.0, 1.0, 1.0, 0.0, 0.0, 1.0), -2.0);
    }

    #[test]
    fn equilibrium_without_forces_is_unchanged() {
        let cfg = quiet_cfg();
        let q = [0.2, 0.4, -0.1, -0.3, 0.5, 0.2];
        let s = pose_state(&cfg.morphology, [0.3, 0.0, 1.2], 0.1, &q, [0.0; 3], 0.0, &[0.0; 6]);
        let next = step(&s, &q, &EnvRandomization::nominal(), &cfg).unwrap();
        for (a, b) in s.bodies.iter().zip(&next.bodies) {
            for k in 0..3 {
                assert!((a.p[k] - b.p[k]).abs() < 1e-12);
                assert!((a.v[k] - b.v[k]).abs() < 1e-12);
            }
            for k in 0..4 {
                assert!((a.q[k] - b.q[k]).abs() < 1e-12);
            }
        }
        assert_eq!(next.joint_q, s.joint_q);
    }

    #[test]
    fn free_fall_matches_hand_integrated_euler() {
        let cfg = SimConfig::default();
        let s = pose_state(&cfg.morphology, [0.0, 0.0, 1.0], 0.0, &[0.0; 6], [0.0; 3], 0.0, &[0.0; 6]);
        let next = step(&s, &[0.0; 6], &EnvRandomization::nominal(), &cfg).unwrap();
        // semi-implicit Euler: v_k = -g k dt, z drop = g dt² Σ k
        let dt = 1.0 / 180.0;
        let drop: f64 = (1..=6).map(|k| 9.81 * k as f64 * dt * dt).sum();
        assert!((s.bodies[0].p[2] - next.bodies[0].p[2] - drop).abs() < 1e-12);
        assert!((next.bodies[0].v[2] + 9.81 * 6.0 * dt).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_actions() {
        let cfg = SimConfig::default();
        let s = cfg.standing_state(0.0, 0.0);
        let r = EnvRandomization::nominal();
        assert!(matches!(step(&s, &[0.0; 5], &r, &cfg), Err(SimError::ActionLength { .. })));
        let mut a = [0.0; 6];
        a[2] = f64::NAN;
        assert_eq!(step(&s, &a, &r, &cfg), Err(SimError::NonFiniteAction(2)));
    }

    #[test]
    fn termination_rule() {
        let cfg = SimConfig::default();
        let mut s = cfg.standing_state(0.0, 0.0);
        assert!(!check_termination(&s, 0.2));
        s.bodies[0].p[2] = 0.15;
        assert!(check_termination(&s, 0.2));

        let mut s = cfg.standing_state(0.0, 0.0);
        for &f in &s.foot_links.clone() {
            s.bodies[f].p[2] = 0.0;
        }
        assert!(!check_termination(&s, 0.2));
        for b in &mut s.bodies {
            b.p[2] = 0.2;
        }
        assert!(!check_termination(&s, 0.2));
    }

    #[test]
    fn standing_is_stable_and_shallow() {
        let cfg = SimConfig::default();
        let mut s = cfg.standing_state(0.0, 0.0);
        let r = EnvRandomization::nominal();
        for _ in 0..300 {
            s = step(&s, &[0.0; 6], &r, &cfg).unwrap();
        }
        assert!(!check_termination(&s, cfg.h0));
        let kin_z = s.bodies[0].p[2];
        let penetration = cfg.morphology.standing_height() - kin_z;
        assert!(penetration > 0.0 && penetration < 0.01, "penetration {penetration}");
        assert!(s.bodies[0].v.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn stepping_is_deterministic_and_keeps_unit_quaternions() {
        let cfg = SimConfig::default();
        let r = randomize(4, &RandomizationRanges::default()).unwrap();
        let mut a = cfg.standing_state(0.0, 0.0);
        let mut b = a.clone();
        for t in 0..60 {
            let act: Vec<f64> = (0..6).map(|j| 0.3 * ((t + j) as f64 * 0.2).sin()).collect();
            a = step(&a, &act, &r, &cfg).unwrap();
            b = step(&b, &act, &r, &cfg).unwrap();
            for body in &a.bodies {
                let n: f64 = body.q.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(a, b);
    }
}
