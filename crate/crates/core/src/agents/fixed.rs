use crate::error::{Error, Result};
use crate::sim::Phase;

/// Equal fixed-time plan: `half_period` steps of NSG, then as many of EWG.
pub fn fixed_time_action(step_index: u64, half_period: usize) -> Result<Phase> {
    if half_period == 0 {
        return Err(Error::InvalidPeriod(half_period));
    }
    let hp = half_period as u64;
    Ok(if step_index % (2 * hp) < hp {
        Phase::Nsg
    } else {
        Phase::Ewg
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedTimeAgent {
    pub half_period: usize,
}

impl FixedTimeAgent {
    pub fn new(half_period: usize) -> Result<Self> {
        if half_period == 0 {
            return Err(Error::InvalidPeriod(half_period));
        }
        Ok(FixedTimeAgent { half_period })
    }

    pub fn action(&self, step_index: u64) -> Phase {
        fixed_time_action(step_index, self.half_period).expect("period validated at construction")
    }
}
