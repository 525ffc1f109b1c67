use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Which controller produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    Teacher,
    Student,
    Prior,
}

impl PolicyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::Teacher => "teacher",
            PolicyTag::Student => "student",
            PolicyTag::Prior => "prior",
        }
    }
}

/// One control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// World-frame state features before the action.
    pub state: Vec<f64>,
    /// Local frame as the student saw it (with observation noise).
    pub local: Vec<f64>,
    /// World-frame features of the reference frame the step is heading to.
    pub next_ref: Vec<f64>,
    pub student_goal: Vec<f64>,
    pub action: Vec<f64>,
    pub tag: PolicyTag,
    pub index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub clip: String,
    pub steps: Vec<StepRecord>,
    /// State after the last step.
    pub final_state: Vec<f64>,
    pub fell: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State features at step `t`; `t == len()` gives the final state.
    pub fn state(&self, t: usize) -> &[f64] {
        if t == self.steps.len() {
            &self.final_state
        } else {
            &self.steps[t].state
        }
    }
}

/// Oldest-first ring of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBuffer {
    pub capacity: usize,
    trajs: VecDeque<Trajectory>,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            trajs: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trajs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajs.is_empty()
    }

    pub fn push(&mut self, t: Trajectory) {
        if self.trajs.len() == self.capacity {
            self.trajs.pop_front();
        }
        self.trajs.push_back(t);
    }

    pub fn evict_oldest(&mut self, n: usize) {
        for _ in 0..n.min(self.trajs.len()) {
            self.trajs.pop_front();
        }
    }

    pub fn get(&self, i: usize) -> &Trajectory {
        &self.trajs[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajs.iter()
    }

    pub fn total_steps(&self) -> usize {
        self.trajs.iter().map(Trajectory::len).sum()
    }

    /// `count` windows `(trajectory, offset)` of `length` steps, uniform over
    /// every valid pair.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        count: usize,
        length: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>, TrainError> {
        let spans: Vec<usize> = self
            .trajs
            .iter()
            .map(|t| (t.len() + 1).saturating_sub(length.max(1)))
            .collect();
        let total: usize = spans.iter().sum();
        if total == 0 {
            return Err(TrainError::InsufficientData {
                needed: length,
                longest: self.trajs.iter().map(Trajectory::len).max().unwrap_or(0),
            });
        }
        Ok((0..count)
            .map(|_| {
                let mut u = rng.gen_range(0..total);
                let mut i = 0;
                while u >= spans[i] {
                    u -= spans[i];
                    i += 1;
                }
                (i, u)
            })
            .collect())
    }
}

/// Frames `t-h ..= t` of per-step vectors, oldest first, zero-padded before
/// the start of the trajectory.
pub fn step_window(traj: &Trajectory, t: usize, h: usize, f: impl Fn(&StepRecord) -> Vec<f64>, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((h + 1) * dim);
    for k in (0..=h).rev() {
        if k > t {
            out.extend(std::iter::repeat(0.0).take(dim));
        } else {
            out.extend(f(&traj.steps[t - k]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(n: usize, tag: f64) -> Trajectory {
        Trajectory {
            clip: "c".into(),
            steps: (0..n)
                .map(|t| StepRecord {
                    state: vec![tag, t as f64],
                    local: vec![t as f64],
                    next_ref: vec![],
                    student_goal: vec![],
                    action: vec![],
                    tag: PolicyTag::Teacher,
                    index: None,
                })
                .collect(),
            final_state: vec![tag, n as f64],
            fell: false,
        }
    }

    #[test]
    fn eviction_is_oldest_first() {
        let mut b = TrajectoryBuffer::new(3);
        for i in 0..5 {
            b.push(traj(2, i as f64));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).steps[0].state[0], 2.0);
        b.evict_oldest(2);
        assert_eq!(b.get(0).steps[0].state[0], 4.0);
    }

    #[test]
    fn exact_length_window_starts_at_zero() {
        let mut b = TrajectoryBuffer::new(4);
        b.push(traj(24, 0.0));
        b.push(traj(10, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, off) in b.sample_windows(50, 24, &mut rng).unwrap() {
            assert_eq!((i, off), (0, 0));
        }
        assert!(matches!(
            b.sample_windows(1, 25, &mut rng),
            Err(TrainError::InsufficientData { needed: 25, longest: 24 })
        ));
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = TrajectoryBuffer::new(4);
        for i in 0..4 {
            b.push(traj(30 + i, i as f64));
        }
        let draw = |s| b.sample_windows(20, 8, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(draw(1), draw(1));
    }

    #[test]
    fn windows_are_zero_padded() {
        let t = traj(5, 0.0);
        let w = step_window(&t, 1, 3, |s| s.local.clone(), 1);
        assert_eq!(w, vec![0.0, 0.0, 0.0, 1.0]);
    }
}
