use std::fmt::Write as _;

/// Outcome of one simulated episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub seed: u64,
    pub total_reward: f64,
    /// Cumulative delay at the end of the episode, in ticks.
    pub cumulative_delay: u64,
    pub vehicles: u64,
    pub mean_queue: f64,
    pub steps: u32,
}

impl EpisodeStats {
    /// Cumulative delay divided by the number of vehicles that entered.
    pub fn delay_per_vehicle(&self) -> f64 {
        if self.vehicles == 0 {
            0.0
        } else {
            self.cumulative_delay as f64 / self.vehicles as f64
        }
    }
}

/// Aggregate over the episodes of one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: u32,
    pub avg_reward: f64,
    /// Mean over episodes of the per-vehicle cumulative delay.
    pub avg_cum_delay: f64,
    pub avg_queue: f64,
    pub std_reward: f64,
    pub std_cum_delay: f64,
    pub std_queue: f64,
    pub episodes: u32,
}

pub const METRICS_HEADER: &str =
    "epoch,avg_reward,avg_cum_delay,avg_queue,std_reward,std_cum_delay,std_queue,episodes";

pub const EPISODE_HEADER: &str =
    "eval_point,episode,seed,total_reward,cum_delay,vehicles,delay_per_vehicle,mean_queue,steps";

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsRecord {
    pub fn aggregate(epoch: u32, episodes: &[EpisodeStats]) -> Self {
        let rewards: Vec<f64> = episodes.iter().map(|e| e.total_reward).collect();
        let delays: Vec<f64> = episodes.iter().map(EpisodeStats::delay_per_vehicle).collect();
        let queues: Vec<f64> = episodes.iter().map(|e| e.mean_queue).collect();
        let (avg_reward, std_reward) = mean_std(&rewards);
        let (avg_cum_delay, std_cum_delay) = mean_std(&delays);
        let (avg_queue, std_queue) = mean_std(&queues);
        MetricsRecord {
            epoch,
            avg_reward,
            avg_cum_delay,
            avg_queue,
            std_reward,
            std_cum_delay,
            std_queue,
            episodes: episodes.len() as u32,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.epoch,
            self.avg_reward,
            self.avg_cum_delay,
            self.avg_queue,
            self.std_reward,
            self.std_cum_delay,
            self.std_queue,
            self.episodes
        )
    }
}

pub fn episode_row(eval_point: usize, index: usize, e: &EpisodeStats) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{},{},{},{},{},{},{:.6},{:.6},{}",
        eval_point,
        index,
        e.seed,
        e.total_reward,
        e.cumulative_delay,
        e.vehicles,
        e.delay_per_vehicle(),
        e.mean_queue,
        e.steps
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(reward: f64, delay: u64, vehicles: u64, queue: f64) -> EpisodeStats {
        EpisodeStats {
            seed: 0,
            total_reward: reward,
            cumulative_delay: delay,
            vehicles,
            mean_queue: queue,
            steps: 10,
        }
    }

    #[test]
    fn single_episode_has_zero_spread() {
        let r = MetricsRecord::aggregate(1, &[ep(-40.0, 40, 8, 1.5)]);
        assert_eq!(r.std_reward, 0.0);
        assert_eq!(r.std_cum_delay, 0.0);
        assert_eq!(r.std_queue, 0.0);
        assert_eq!(r.avg_cum_delay, 5.0);
    }

    #[test]
    fn aggregates_are_plain_means() {
        let r = MetricsRecord::aggregate(3, &[ep(-10.0, 10, 5, 1.0), ep(-30.0, 30, 5, 3.0)]);
        assert_eq!(r.avg_reward, -20.0);
        assert_eq!(r.avg_cum_delay, 4.0);
        assert_eq!(r.avg_queue, 2.0);
        assert_eq!(r.std_reward, 10.0);
        assert_eq!(r.episodes, 2);
        assert_eq!(r.csv_row().split(',').count(), METRICS_HEADER.split(',').count());
    }

    #[test]
    fn no_vehicles_means_no_delay() {
        assert_eq!(ep(0.0, 0, 0, 0.0).delay_per_vehicle(), 0.0);
    }
}
