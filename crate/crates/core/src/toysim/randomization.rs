use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::motion::LocalObs;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("randomization range `{term}` is inverted: [{lo}, {hi}]")]
pub struct InvertedRange {
    pub term: &'static str,
    pub lo: f64,
    pub hi: f64,
}

/// Per-term randomization ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRanges {
    pub friction: Range,
    pub payload: Range,
    pub kp_scale: Range,
    pub kd_scale: Range,
    pub joint_pos_noise: Range,
    pub joint_vel_noise: Range,
    pub ang_vel_noise: Range,
    pub gravity_noise: Range,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            friction: Range::new(0.60, 1.00),
            payload: Range::new(-2.00, 2.00),
            kp_scale: Range::new(0.90, 1.10),
            kd_scale: Range::new(0.90, 1.10),
            joint_pos_noise: Range::new(-0.05, 0.05),
            joint_vel_noise: Range::new(-0.50, 0.50),
            ang_vel_noise: Range::new(-0.50, 0.50),
            gravity_noise: Range::new(-0.05, 0.05),
        }
    }
}

impl RandomizationRanges {
    /// Every range collapsed to the nominal value and zero noise.
    pub fn none() -> Self {
        let zero = Range::new(0.0, 0.0);
        let one = Range::new(1.0, 1.0);
        Self {
            friction: one,
            payload: zero,
            kp_scale: one,
            kd_scale: one,
            joint_pos_noise: zero,
            joint_vel_noise: zero,
            ang_vel_noise: zero,
            gravity_noise: zero,
        }
    }

    pub fn validate(&self) -> Result<(), InvertedRange> {
        for (term, r) in [
            ("friction", self.friction),
            ("payload", self.payload),
            ("kp_scale", self.kp_scale),
            ("kd_scale", self.kd_scale),
            ("joint_pos_noise", self.joint_pos_noise),
            ("joint_vel_noise", self.joint_vel_noise),
            ("ang_vel_noise", self.ang_vel_noise),
            ("gravity_noise", self.gravity_noise),
        ] {
            if !(r.lo <= r.hi) {
                return Err(InvertedRange {
                    term,
                    lo: r.lo,
                    hi: r.hi,
                });
            }
        }
        Ok(())
    }
}

/// One environment's physical draw plus the observation-noise ranges it applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRandomization {
    pub friction: f64,
    /// Mass added to the base body (kg); may be negative.
    pub payload: f64,
    pub kp_scale: f64,
    pub kd_scale: f64,
    pub joint_pos_noise: Range,
    pub joint_vel_noise: Range,
    pub ang_vel_noise: Range,
    pub gravity_noise: Range,
}

impl EnvRandomization {
    pub fn nominal() -> Self {
        let zero = Range::new(0.0, 0.0);
        Self {
            friction: 1.0,
            payload: 0.0,
            kp_scale: 1.0,
            kd_scale: 1.0,
            joint_pos_noise: zero,
            joint_vel_noise: zero,
            ang_vel_noise: zero,
            gravity_noise: zero,
        }
    }
}

/// Uniform i.i.d. draws of the physical terms; deterministic in `seed`.
pub fn randomize(seed: u64, ranges: &RandomizationRanges) -> Result<EnvRandomization, InvertedRange> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(EnvRandomization {
        friction: ranges.friction.sample(&mut rng),
        payload: ranges.payload.sample(&mut rng),
        kp_scale: ranges.kp_scale.sample(&mut rng),
        kd_scale: ranges.kd_scale.sample(&mut rng),
        joint_pos_noise: ranges.joint_pos_noise,
        joint_vel_noise: ranges.joint_vel_noise,
        ang_vel_noise: ranges.ang_vel_noise,
        gravity_noise: ranges.gravity_noise,
    })
}

/// Adds independent uniform noise to every observation channel.
pub fn apply_obs_noise<R: Rng + ?Sized>(obs: &LocalObs, rand: &EnvRandomization, rng: &mut R) -> LocalObs {
    let mut out = obs.clone();
    for g in &mut out.projected_gravity {
        *g += rand.gravity_noise.sample(rng);
    }
    for w in &mut out.base_ang_vel {
        *w += rand.ang_vel_noise.sample(rng);
    }
    for q in &mut out.joint_pos {
        *q += rand.joint_pos_noise.sample(rng);
    }
    for dq in &mut out.joint_vel {
        *dq += rand.joint_vel_noise.sample(rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> LocalObs {
        LocalObs {
            projected_gravity: [0.0, 0.0, -1.0],
            base_ang_vel: [0.1, 0.2, 0.3],
            joint_pos: vec![0.5; 6],
            joint_vel: vec![-0.5; 6],
        }
    }

    #[test]
    fn draws_stay_in_table_ranges() {
        let ranges = RandomizationRanges::default();
        for seed in 0..200 {
            let r = randomize(seed, &ranges).unwrap();
            assert!(ranges.friction.contains(r.friction));
            assert!((0.60..=1.00).contains(&r.friction));
            assert!((-2.0..=2.0).contains(&r.payload));
            assert!(ranges.kp_scale.contains(r.kp_scale));
            assert!(ranges.kd_scale.contains(r.kd_scale));
        }
        assert_eq!(randomize(7, &ranges).unwrap(), randomize(7, &ranges).unwrap());
    }

    #[test]
    fn degenerate_range_is_exact() {
        let mut ranges = RandomizationRanges::default();
        ranges.kp_scale = Range::new(1.0, 1.0);
        assert_eq!(randomize(3, &ranges).unwrap().kp_scale, 1.0);
    }

    #[test]
    fn inverted_range_is_an_error() {
        let mut ranges = RandomizationRanges::default();
        ranges.payload = Range::new(1.0, -1.0);
        let err = randomize(0, &ranges).unwrap_err();
        assert_eq!(err.term, "payload");
    }

    #[test]
    fn zero_noise_leaves_obs_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = obs();
        assert_eq!(apply_obs_noise(&o, &EnvRandomization::nominal(), &mut rng), o);
    }

    #[test]
    fn joint_noise_is_bounded_and_reproducible() {
        let r = randomize(0, &RandomizationRanges::default()).unwrap();
        let o = obs();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let n = apply_obs_noise(&o, &r, &mut rng);
            for (a, b) in n.joint_pos.iter().zip(&o.joint_pos) {
                assert!((a - b).abs() <= 0.05 + 1e-15);
            }
            for (a, b) in n.joint_vel.iter().zip(&o.joint_vel) {
                assert!((a - b).abs() <= 0.5 + 1e-15);
            }
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(apply_obs_noise(&o, &r, &mut r1), apply_obs_noise(&o, &r, &mut r2));
    }
}
