use serde::{Deserialize, Serialize};

/// Training phase, derived from the epoch alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    WarmUp,
    Distill,
    Post,
}

impl Stage {
    pub fn short(self) -> char {
        match self {
            Stage::Pretrain => 'P',
            Stage::WarmUp => 'W',
            Stage::Distill => 'D',
            Stage::Post => 'T',
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::WarmUp => "warm_up",
            Stage::Distill => "distill",
            Stage::Post => "post",
        })
    }
}

/// `[P)` before `ms1`, `[W)` before `ms2`, `[D]` through `ms3`, then post-training.
pub fn stage(epoch: usize, ms: [usize; 3]) -> Stage {
    if epoch < ms[0] {
        Stage::Pretrain
    } else if epoch < ms[1] {
        Stage::WarmUp
    } else if epoch <= ms[2] {
        Stage::Distill
    } else {
        Stage::Post
    }
}

/// Probability that the teacher acts at a given step of an epoch's rollouts.
pub fn takeover_probability(epoch: usize, ms: [usize; 3]) -> f64 {
    let [_, ms2, ms3] = ms;
    if epoch < ms2 {
        1.0
    } else if epoch > ms3 {
        0.0
    } else {
        1.0 - (epoch - ms2) as f64 / (ms3 - ms2) as f64
    }
}

/// As [`takeover_probability`], or a step from 1 to 0 at `ms2` when
/// `hard_switch` is set.
pub fn takeover(epoch: usize, ms: [usize; 3], hard_switch: bool) -> f64 {
    if hard_switch {
        if epoch < ms[1] {
            1.0
        } else {
            0.0
        }
    } else {
        takeover_probability(epoch, ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stage_sequence() {
        let s: String = (0..8).map(|e| stage(e, [2, 4, 6]).short()).collect();
        assert_eq!(s, "PPWWDDDT");
    }

    #[test]
    fn boundaries() {
        let ms = [50, 100, 200];
        assert_eq!(takeover_probability(99, ms), 1.0);
        assert_eq!(takeover_probability(100, ms), 1.0);
        assert_eq!(takeover_probability(150, ms), 0.5);
        assert_eq!(takeover_probability(200, ms), 0.0);
        assert_eq!(takeover_probability(201, ms), 0.0);
        assert_eq!(takeover(100, ms, true), 0.0);
        assert_eq!(takeover(99, ms, true), 1.0);
    }

    proptest! {
        #[test]
        fn non_increasing_and_bounded(a in 1usize..50, b in 1usize..50, c in 1usize..50, e in 0usize..200) {
            let ms = [a, a + b, a + b + c];
            let p0 = takeover_probability(e, ms);
            let p1 = takeover_probability(e + 1, ms);
            prop_assert!((0.0..=1.0).contains(&p0));
            prop_assert!(p1 <= p0);
        }
    }
}
