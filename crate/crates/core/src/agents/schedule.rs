use serde::{Deserialize, Serialize};

/// Linear exploration schedule, clamped at `end` after `anneal_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule {
            start: eps,
            end: eps,
            anneal_steps: 1,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_then_clamps() {
        let s = EpsilonSchedule {
            start: 1.0,
            end: 0.1,
            anneal_steps: 100,
        };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.55).abs() < 1e-15);
        assert_eq!(s.value(100), 0.1);
        assert_eq!(s.value(10_000), 0.1);
        for t in 0..200 {
            let e = s.value(t);
            assert!((0.1..=1.0).contains(&e));
        }
    }
}
