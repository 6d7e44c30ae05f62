//! Slot-synchronous slotted-ALOHA simulation.
//!
//! Per slot, in order: idle devices that generate a packet and devices whose
//! back-off expires become ready; ready devices pick a channel and transmit;
//! a transmission succeeds iff its channel is free of background traffic and
//! no other device used it; learners are fed the outcome; failed packets back
//! off (or are dropped after `max_attempts` transmissions).
//!
//! Idle devices draw their next packet time from a geometric distribution,
//! which is the same law as a per-slot Bernoulli(`tx_prob`) trial but only
//! touches the RNG once per packet.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use thiserror::Error;

use crate::model::{AttemptRecord, ConfigError, DeviceState, Phase, ScenarioConfig};
use crate::policy::StrategyState;
use crate::seed;

/// Raw tallies of one replication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicationResult {
    pub horizon: u64,
    /// Transmissions per slot.
    pub attempts: Vec<u32>,
    /// Acknowledged transmissions per slot.
    pub successes: Vec<u32>,
    /// Packets dropped per slot after their last allowed transmission failed.
    pub drops: Vec<u32>,
    pub first_attempt_count: u64,
    pub first_attempt_collisions: u64,
    pub second_attempt_count: u64,
    pub second_attempt_collisions: u64,
    pub generated_packets: u64,
    pub delivered_packets: u64,
    pub dropped_packets: u64,
    /// Packets still in flight when the horizon was reached.
    pub in_flight_packets: u64,
    /// `attempts_per_packet[i]` counts finished packets that used `i + 1` transmissions.
    pub attempts_per_packet: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot merge replications with horizons {0} and {1}")]
pub struct HorizonMismatch(pub u64, pub u64);

impl ReplicationResult {
    pub fn empty(horizon: u64, max_attempts: u32) -> Self {
        let t = horizon as usize;
        ReplicationResult {
            horizon,
            attempts: vec![0; t],
            successes: vec![0; t],
            drops: vec![0; t],
            first_attempt_count: 0,
            first_attempt_collisions: 0,
            second_attempt_count: 0,
            second_attempt_collisions: 0,
            generated_packets: 0,
            delivered_packets: 0,
            dropped_packets: 0,
            in_flight_packets: 0,
            attempts_per_packet: vec![0; max_attempts as usize],
        }
    }

    pub fn total_attempts(&self) -> u64 {
        self.attempts.iter().map(|&a| u64::from(a)).sum()
    }

    pub fn total_successes(&self) -> u64 {
        self.successes.iter().map(|&a| u64::from(a)).sum()
    }

    /// Adds another replication's tallies into this one. Exact, so merging is
    /// associative and commutative.
    pub fn merge(&mut self, other: &ReplicationResult) -> Result<(), HorizonMismatch> {
        if self.horizon != other.horizon {
            return Err(HorizonMismatch(self.horizon, other.horizon));
        }
        let add = |a: &mut Vec<u32>, b: &[u32]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.attempts, &other.attempts);
        add(&mut self.successes, &other.successes);
        add(&mut self.drops, &other.drops);
        self.first_attempt_count += other.first_attempt_count;
        self.first_attempt_collisions += other.first_attempt_collisions;
        self.second_attempt_count += other.second_attempt_count;
        self.second_attempt_collisions += other.second_attempt_collisions;
        self.generated_packets += other.generated_packets;
        self.delivered_packets += other.delivered_packets;
        self.dropped_packets += other.dropped_packets;
        self.in_flight_packets += other.in_flight_packets;
        if self.attempts_per_packet.len() < other.attempts_per_packet.len() {
            self.attempts_per_packet.resize(other.attempts_per_packet.len(), 0);
        }
        for (x, y) in self.attempts_per_packet.iter_mut().zip(&other.attempts_per_packet) {
            *x += y;
        }
        Ok(())
    }
}

/// Success flag of every transmission: the channel must be free of background
/// traffic and used by exactly one transmission.
pub fn resolve_slot(transmissions: &[(usize, usize)], busy: &[bool]) -> Vec<bool> {
    let mut load = vec![0u32; busy.len()];
    for &(_, ch) in transmissions {
        load[ch] += 1;
    }
    transmissions
        .iter()
        .map(|&(_, ch)| !busy[ch] && load[ch] == 1)
        .collect()
}

/// Uniform back-off delay in `0..m`.
pub fn draw_backoff<R: Rng + ?Sized>(rng: &mut R, m: u32) -> u32 {
    assert!(m >= 1, "back-off window must be >= 1");
    rng.random_range(0..m)
}

pub struct World {
    cfg: ScenarioConfig,
    slot: u64,
    devices: Vec<DeviceState>,
    strategies: Vec<StrategyState>,
    device_rngs: Vec<ChaCha8Rng>,
    background_rng: ChaCha8Rng,
    arrivals: Geometric,
    /// Pending `(slot, device)` wake-ups: packet arrivals and back-off expiries.
    wakeups: BinaryHeap<Reverse<(u64, usize)>>,
    tallies: ReplicationResult,
    busy: Vec<bool>,
    load: Vec<u32>,
    log: Vec<AttemptRecord>,
}

impl World {
    pub fn new(cfg: &ScenarioConfig, rep_index: u64) -> Result<Self, ConfigError> {
        let cfg = cfg.clone().validate()?;
        let key = seed::replication_key(cfg.master_seed, rep_index);
        let arrivals = Geometric::new(cfg.tx_prob).map_err(|_| ConfigError::TxProb(cfg.tx_prob))?;
        let n = cfg.n_devices;
        let k = cfg.n_channels;
        let strategies = (0..n)
            .map(|_| {
                StrategyState::new(cfg.strategy, k, cfg.alpha, cfg.delay_threshold)
                    .with_frozen_channel(cfg.freeze_channel)
            })
            .collect();
        let mut device_rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|d| seed::stream_rng(key, seed::device_stream(d)))
            .collect();
        let mut wakeups = BinaryHeap::with_capacity(n);
        for (d, rng) in device_rngs.iter_mut().enumerate() {
            wakeups.push(Reverse((arrivals.sample(rng), d)));
        }
        Ok(World {
            slot: 0,
            devices: vec![DeviceState::idle(); n],
            strategies,
            device_rngs,
            background_rng: seed::stream_rng(key, seed::BACKGROUND_STREAM),
            arrivals,
            wakeups,
            tallies: ReplicationResult::empty(cfg.horizon, cfg.max_attempts),
            busy: vec![false; k],
            load: vec![0; k],
            log: Vec::new(),
            cfg,
        })
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn strategies(&self) -> &[StrategyState] {
        &self.strategies
    }

    pub fn tallies(&self) -> &ReplicationResult {
        &self.tallies
    }

    pub fn is_finished(&self) -> bool {
        self.slot >= self.cfg.horizon
    }

    /// Background occupancy drawn for the last simulated slot.
    pub fn busy(&self) -> &[bool] {
        &self.busy
    }

    fn schedule_next_packet(&mut self, d: usize) {
        let wait = self.arrivals.sample(&mut self.device_rngs[d]);
        let at = self.slot.saturating_add(1).saturating_add(wait);
        self.wakeups.push(Reverse((at, d)));
    }

    /// Simulates one slot and returns the transmissions it contained, in
    /// device order.
    pub fn advance_slot(&mut self) -> &[AttemptRecord] {
        assert!(!self.is_finished(), "advance_slot called past the horizon");
        let s = self.slot;
        let si = s as usize;
        self.log.clear();

        // wake-ups pop in (slot, device) order
        while let Some(&Reverse((at, d))) = self.wakeups.peek() {
            if at != s {
                debug_assert!(at > s);
                break;
            }
            self.wakeups.pop();
            let dev = &mut self.devices[d];
            match dev.phase {
                Phase::Idle => {
                    self.tallies.generated_packets += 1;
                    *dev = DeviceState::fresh_packet();
                }
                Phase::Backoff { resume_at } => {
                    debug_assert_eq!(resume_at, s);
                    dev.phase = Phase::ReadyToTransmit;
                }
                Phase::ReadyToTransmit => unreachable!("device {d} woken while ready"),
            }
            let ch = self.strategies[d]
                .select(&self.devices[d], s, &mut self.device_rngs[d])
                .expect("in-flight packets always record their first channel");
            let dev = &mut self.devices[d];
            dev.current_channel = Some(ch);
            if dev.attempt_index == 0 {
                dev.first_channel = Some(ch);
            }
            self.log.push(AttemptRecord {
                slot: s,
                device: d,
                channel: ch,
                attempt_index: dev.attempt_index,
                success: false,
            });
        }

        for (b, &occ) in self.busy.iter_mut().zip(&self.cfg.occupancy) {
            *b = self.background_rng.random_bool(occ);
        }
        self.load.iter_mut().for_each(|l| *l = 0);
        for rec in &self.log {
            self.load[rec.channel] += 1;
        }

        let m = self.cfg.backoff_window;
        let max_attempts = self.cfg.max_attempts;
        for i in 0..self.log.len() {
            let AttemptRecord { device: d, channel: ch, attempt_index, .. } = self.log[i];
            let success = !self.busy[ch] && self.load[ch] == 1;
            self.log[i].success = success;
            self.strategies[d]
                .observe(&self.devices[d], ch, s, success)
                .expect("channel chosen by the strategy is in range");

            let t = &mut self.tallies;
            t.attempts[si] += 1;
            match attempt_index {
                0 => {
                    t.first_attempt_count += 1;
                    t.first_attempt_collisions += u64::from(!success);
                }
                1 => {
                    t.second_attempt_count += 1;
                    t.second_attempt_collisions += u64::from(!success);
                }
                _ => {}
            }
            if success {
                t.successes[si] += 1;
                t.delivered_packets += 1;
                t.attempts_per_packet[attempt_index as usize] += 1;
                self.devices[d] = DeviceState::idle();
                self.schedule_next_packet(d);
            } else if attempt_index + 1 < max_attempts {
                let delay = draw_backoff(&mut self.device_rngs[d], m);
                let resume_at = s + 1 + u64::from(delay);
                let dev = &mut self.devices[d];
                dev.attempt_index += 1;
                dev.phase = Phase::Backoff { resume_at };
                self.wakeups.push(Reverse((resume_at, d)));
            } else {
                t.drops[si] += 1;
                t.dropped_packets += 1;
                t.attempts_per_packet[attempt_index as usize] += 1;
                self.devices[d] = DeviceState::idle();
                self.schedule_next_packet(d);
            }
        }

        self.slot += 1;
        &self.log
    }

    /// Finishes the run and returns the tallies.
    pub fn into_result(mut self) -> ReplicationResult {
        self.tallies.in_flight_packets = self
            .devices
            .iter()
            .filter(|d| d.phase != Phase::Idle)
            .count() as u64;
        self.tallies
    }

    pub fn run_to_horizon(mut self) -> ReplicationResult {
        while !self.is_finished() {
            self.advance_slot();
        }
        self.into_result()
    }
}

/// Runs one full replication; a pure function of `(cfg, rep_index)`.
pub fn run_replication(cfg: &ScenarioConfig, rep_index: u64) -> Result<ReplicationResult, ConfigError> {
    Ok(World::new(cfg, rep_index)?.run_to_horizon())
}
