//! Cellular microsimulation of a single four-approach intersection.
//!
//! Each approach has one incoming lane ending at a stop line and one outgoing
//! lane on the far side of the junction. Vehicles occupy one cell, move at
//! most one cell per tick and drive straight through. Delay is measured in
//! ticks spent stationary and accumulates over every vehicle that has ever
//! entered the network.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signal phase. Switching between phases is instantaneous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// North/South green.
    #[serde(rename = "NSG")]
    Nsg,
    /// East/West green.
    #[serde(rename = "EWG")]
    Ewg,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Nsg, Phase::Ewg];

    pub fn index(self) -> usize {
        match self {
            Phase::Nsg => 0,
            Phase::Ewg => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Phase> {
        match index {
            0 => Some(Phase::Nsg),
            1 => Some(Phase::Ewg),
            _ => None,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Nsg => "NSG",
            Phase::Ewg => "EWG",
        })
    }
}

/// The side of the junction a vehicle arrives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    N,
    S,
    E,
    W,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::N, Approach::S, Approach::E, Approach::W];

    pub fn index(self) -> usize {
        match self {
            Approach::N => 0,
            Approach::S => 1,
            Approach::E => 2,
            Approach::W => 3,
        }
    }

    pub fn is_green(self, phase: Phase) -> bool {
        matches!(
            (self, phase),
            (Approach::N | Approach::S, Phase::Nsg) | (Approach::E | Approach::W, Phase::Ewg)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneKind {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vehicle {
    pub id: u64,
    pub approach: Approach,
    pub spawn_tick: u64,
    pub delay_ticks: u64,
    /// Whether the vehicle stayed in place during the most recent tick.
    pub stationary: bool,
}

/// One directed lane. Cell 0 is the upstream end; the last cell is the stop
/// line for incoming lanes and the exit for outgoing lanes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lane {
    pub approach: Approach,
    pub kind: LaneKind,
    cells: Vec<Option<Vehicle>>,
}

impl Lane {
    fn new(approach: Approach, kind: LaneKind, length: usize) -> Self {
        Lane {
            approach,
            kind,
            cells: vec![None; length],
        }
    }

    pub fn length_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn vehicle_at(&self, cell: usize) -> Option<&Vehicle> {
        self.cells.get(cell).and_then(Option::as_ref)
    }

    /// Occupied cells in upstream-to-downstream order.
    pub fn occupancy(&self) -> impl Iterator<Item = (usize, &Vehicle)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().map(|v| (i, v)))
    }

    pub fn vehicle_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub lane_length_cells: usize,
    pub arrival_probability: f64,
    pub green_duration_ticks: u32,
    pub episode_length_steps: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            lane_length_cells: 30,
            arrival_probability: 0.1,
            green_duration_ticks: 10,
            episode_length_steps: 200,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lane_length_cells < 2 {
            return Err(Error::InvalidConfig(format!(
                "lane_length_cells must be >= 2, got {}",
                self.lane_length_cells
            )));
        }
        if !(0.0..=1.0).contains(&self.arrival_probability) {
            return Err(Error::InvalidConfig(format!(
                "arrival_probability must lie in [0, 1], got {}",
                self.arrival_probability
            )));
        }
        if self.green_duration_ticks < 1 {
            return Err(Error::InvalidConfig(
                "green_duration_ticks must be >= 1".into(),
            ));
        }
        if self.episode_length_steps < 1 {
            return Err(Error::InvalidConfig(
                "episode_length_steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-approach Bernoulli arrivals, drawn every tick for every approach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalModel {
    pub probability_per_approach_per_tick: f64,
}

impl Default for ArrivalModel {
    fn default() -> Self {
        ArrivalModel {
            probability_per_approach_per_tick: 0.1,
        }
    }
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionState {
    pub tick: u64,
    pub phase: Phase,
    /// Total stationary ticks of every vehicle ever spawned.
    pub cumulative_delay: u64,
    pub spawned_total: u64,
    pub departed_total: u64,
    /// Arrivals dropped because the entry cell was occupied.
    pub suppressed_total: u64,
    /// Sum over ticks of the queue length observed after each tick.
    pub queue_tick_sum: u64,
    /// Which approaches received a vehicle on the most recent tick.
    pub last_arrivals: [bool; 4],
    incoming: [Lane; 4],
    outgoing: [Lane; 4],
    arrivals: ArrivalModel,
    next_id: u64,
    rng: ChaCha8Rng,
}

impl IntersectionState {
    pub fn new(seed: u64, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let len = config.lane_length_cells;
        Ok(IntersectionState {
            tick: 0,
            phase: Phase::Nsg,
            cumulative_delay: 0,
            spawned_total: 0,
            departed_total: 0,
            suppressed_total: 0,
            queue_tick_sum: 0,
            last_arrivals: [false; 4],
            incoming: Approach::ALL.map(|a| Lane::new(a, LaneKind::Incoming, len)),
            outgoing: Approach::ALL.map(|a| Lane::new(a, LaneKind::Outgoing, len)),
            arrivals: ArrivalModel {
                probability_per_approach_per_tick: config.arrival_probability,
            },
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn lane_length(&self) -> usize {
        self.incoming[0].length_cells()
    }

    pub fn arrival_model(&self) -> ArrivalModel {
        self.arrivals
    }

    pub fn incoming(&self, approach: Approach) -> &Lane {
        &self.incoming[approach.index()]
    }

    /// Outgoing lane carrying vehicles that arrived from `approach`.
    pub fn outgoing(&self, approach: Approach) -> &Lane {
        &self.outgoing[approach.index()]
    }

    pub fn lane(&self, approach: Approach, kind: LaneKind) -> &Lane {
        match kind {
            LaneKind::Incoming => self.incoming(approach),
            LaneKind::Outgoing => self.outgoing(approach),
        }
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.incoming.iter().chain(self.outgoing.iter())
    }

    pub fn vehicles_on_road(&self) -> u64 {
        self.lanes().map(|l| l.vehicle_count() as u64).sum()
    }

    /// Places a vehicle directly on a lane cell, counted as spawned. Intended
    /// for building scenarios; regular traffic enters through arrivals.
    pub fn place_vehicle(&mut self, approach: Approach, kind: LaneKind, cell: usize) -> Result<u64> {
        let tick = self.tick;
        let id = self.next_id;
        let lane = match kind {
            LaneKind::Incoming => &mut self.incoming[approach.index()],
            LaneKind::Outgoing => &mut self.outgoing[approach.index()],
        };
        match lane.cells.get_mut(cell) {
            None => Err(Error::InvalidConfig(format!(
                "cell {cell} outside lane of length {}",
                lane.length_cells()
            ))),
            Some(Some(_)) => Err(Error::InvalidConfig(format!(
                "cell {cell} of {approach:?} {kind:?} lane is occupied"
            ))),
            Some(slot) => {
                *slot = Some(Vehicle {
                    id,
                    approach,
                    spawn_tick: tick,
                    delay_ticks: 0,
                    stationary: false,
                });
                self.next_id += 1;
                self.spawned_total += 1;
                Ok(id)
            }
        }
    }

    /// Draws one arrival per approach and places vehicles at free entry
    /// cells. A draw is consumed for every approach even when the entry is
    /// blocked, so the arrival stream does not depend on the control policy.
    pub fn spawn_vehicles(&mut self) {
        let p = self.arrivals.probability_per_approach_per_tick;
        for approach in Approach::ALL {
            let u: f64 = self.rng.random();
            let arrived = u < p;
            self.last_arrivals[approach.index()] = false;
            if !arrived {
                continue;
            }
            let lane = &mut self.incoming[approach.index()];
            if lane.cells[0].is_some() {
                self.suppressed_total += 1;
                continue;
            }
            lane.cells[0] = Some(Vehicle {
                id: self.next_id,
                approach,
                spawn_tick: self.tick,
                delay_ticks: 0,
                stationary: false,
            });
            self.next_id += 1;
            self.spawned_total += 1;
            self.last_arrivals[approach.index()] = true;
        }
    }

    /// Advances the simulation by one tick under `active_phase`.
    pub fn advance_tick(&mut self, active_phase: Phase) {
        self.phase = active_phase;
        let len = self.lane_length();

        // Outgoing lanes first so a discharging stop-line vehicle can enter a
        // cell vacated during the same tick.
        for lane in self.outgoing.iter_mut() {
            if lane.cells[len - 1].take().is_some() {
                self.departed_total += 1;
            }
            for cell in (0..len - 1).rev() {
                if lane.cells[cell].is_none() {
                    continue;
                }
                if lane.cells[cell + 1].is_none() {
                    let mut v = lane.cells[cell].take().unwrap();
                    v.stationary = false;
                    lane.cells[cell + 1] = Some(v);
                } else {
                    let v = lane.cells[cell].as_mut().unwrap();
                    v.stationary = true;
                    v.delay_ticks += 1;
                    self.cumulative_delay += 1;
                }
            }
        }

        for (idx, lane) in self.incoming.iter_mut().enumerate() {
            let exit = &mut self.outgoing[idx];
            if let Some(v) = lane.cells[len - 1].as_mut() {
                if v.approach.is_green(active_phase) && exit.cells[0].is_none() {
                    let mut v = lane.cells[len - 1].take().unwrap();
                    v.stationary = false;
                    exit.cells[0] = Some(v);
                } else {
                    v.stationary = true;
                    v.delay_ticks += 1;
                    self.cumulative_delay += 1;
                }
            }
            for cell in (0..len - 1).rev() {
                if lane.cells[cell].is_none() {
                    continue;
                }
                if lane.cells[cell + 1].is_none() {
                    let mut v = lane.cells[cell].take().unwrap();
                    v.stationary = false;
                    lane.cells[cell + 1] = Some(v);
                } else {
                    let v = lane.cells[cell].as_mut().unwrap();
                    v.stationary = true;
                    v.delay_ticks += 1;
                    self.cumulative_delay += 1;
                }
            }
        }

        self.spawn_vehicles();
        self.tick += 1;
        self.queue_tick_sum += self.queue_length() as u64;
    }

    /// Holds `action` for `green_duration_ticks` ticks and returns the reward
    /// `D_prev - D_now`.
    pub fn apply_action(&mut self, action: Phase, green_duration_ticks: u32) -> Result<f64> {
        if green_duration_ticks < 1 {
            return Err(Error::InvalidDuration(green_duration_ticks));
        }
        let before = self.cumulative_delay;
        self.phase = action;
        for _ in 0..green_duration_ticks {
            self.advance_tick(action);
        }
        Ok(before as f64 - self.cumulative_delay as f64)
    }

    /// Stationary vehicles on incoming lanes, split by approach (N, S, E, W).
    pub fn queue_counts(&self) -> [u32; 4] {
        self.incoming
            .each_ref()
            .map(|lane| lane.occupancy().filter(|(_, v)| v.stationary).count() as u32)
    }

    pub fn queue_length(&self) -> u32 {
        self.queue_counts().iter().sum()
    }

    /// Mean queue length over all ticks simulated so far.
    pub fn mean_queue_length(&self) -> f64 {
        if self.tick == 0 {
            0.0
        } else {
            self.queue_tick_sum as f64 / self.tick as f64
        }
    }

    /// Text rendering of lane occupancies, one line per lane. `#` marks a
    /// moving vehicle, `o` a stationary one.
    pub fn debug_grid(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "tick {} phase {} D {} on-road {}",
            self.tick,
            self.phase,
            self.cumulative_delay,
            self.vehicles_on_road()
        );
        for lane in self.lanes() {
            let signal = match lane.kind {
                LaneKind::Incoming if lane.approach.is_green(self.phase) => 'G',
                LaneKind::Incoming => 'R',
                LaneKind::Outgoing => ' ',
            };
            let cells: String = lane
                .cells
                .iter()
                .map(|c| match c {
                    None => '.',
                    Some(v) if v.stationary => 'o',
                    Some(_) => '#',
                })
                .collect();
            let kind = match lane.kind {
                LaneKind::Incoming => "in ",
                LaneKind::Outgoing => "out",
            };
            let _ = writeln!(out, "{:?} {kind} {cells}|{signal}", lane.approach);
        }
        out
    }

    /// Checks the structural invariants. Used by tests and debug assertions.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let on_road = self.vehicles_on_road();
        if self.spawned_total != self.departed_total + on_road {
            return Err(format!(
                "conservation violated: spawned {} != departed {} + on-road {}",
                self.spawned_total, self.departed_total, on_road
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for lane in self.lanes() {
            for (_, v) in lane.occupancy() {
                if !seen.insert(v.id) {
                    return Err(format!("vehicle {} appears twice", v.id));
                }
                if v.approach != lane.approach {
                    return Err(format!("vehicle {} on a foreign lane", v.id));
                }
            }
        }
        let on_road_delay: u64 = self
            .lanes()
            .flat_map(|l| l.occupancy().map(|(_, v)| v.delay_ticks))
            .sum();
        if on_road_delay > self.cumulative_delay {
            return Err("on-road delay exceeds cumulative delay".into());
        }
        Ok(())
    }
}

/// Episode termination: true once the agent has taken the allotted steps.
pub fn is_terminal(episode_length_steps: u32, steps_taken: u32) -> bool {
    steps_taken >= episode_length_steps
}
