use serde::{Deserialize, Serialize};

/// `normalized`: R ∈ {0, 1}. Otherwise R = steps on success (a reward of 1
/// at every step).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSpec {
    pub normalized: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { normalized: true }
    }
}

/// Per-step reward: 1 at every step iff the final classification is correct.
pub fn step_reward(p: f64, y: u8) -> f64 {
    f64::from(u8::from(u8::from(p >= 0.5) == y))
}

pub fn compute_reward(p: f64, y: u8, spec: RewardSpec, steps: usize) -> f64 {
    let r = step_reward(p, y);
    if spec.normalized {
        r
    } else {
        r * steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rewards() {
        let norm = RewardSpec { normalized: true };
        let raw = RewardSpec { normalized: false };
        assert_eq!(compute_reward(0.9, 1, norm, 6), 1.0);
        assert_eq!(compute_reward(0.9, 0, norm, 6), 0.0);
        assert_eq!(compute_reward(0.9, 1, raw, 6), 6.0);
        assert_eq!(compute_reward(0.5, 1, norm, 6), 1.0);
        assert_eq!(compute_reward(0.4999, 0, raw, 3), 3.0);
    }
}
