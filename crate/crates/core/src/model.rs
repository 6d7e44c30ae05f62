//! Domain types shared by the policy, engine and metrics layers.
//!
//! Channels are 0-based indices `0..n_channels` throughout the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default UCB exploration coefficient.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Default delay threshold (in slots) for [`Strategy::DelayedUcbRetrans`].
pub const DEFAULT_DELAY_THRESHOLD: u64 = 20_000;

/// Channel-selection strategy run by every dynamic device of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform random channel for every transmission.
    NoLearning,
    /// One UCB learner for first transmissions and retransmissions alike.
    OnlyUcb,
    /// UCB for first transmissions, uniform random channel for retransmissions.
    RandomRetrans,
    /// UCB for first transmissions, a second UCB for retransmissions.
    UcbRetrans,
    /// UCB for first transmissions, one retransmission UCB per first-attempt channel.
    KUcbRetrans,
    /// Like `RandomRetrans` up to the delay threshold, like `UcbRetrans` afterwards.
    DelayedUcbRetrans,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::OnlyUcb,
        Strategy::RandomRetrans,
        Strategy::UcbRetrans,
        Strategy::KUcbRetrans,
        Strategy::DelayedUcbRetrans,
        Strategy::NoLearning,
    ];

    /// Figure-legend name used in CSV output.
    pub fn legend(self) -> &'static str {
        match self {
            Strategy::NoLearning => "no UCB",
            Strategy::OnlyUcb => "Only UCB",
            Strategy::RandomRetrans => "Random",
            Strategy::UcbRetrans => "UCB",
            Strategy::KUcbRetrans => "K UCB",
            Strategy::DelayedUcbRetrans => "Delayed UCB",
        }
    }

    /// Identifier used in scenario files, on the command line and in file names.
    pub fn key(self) -> &'static str {
        match self {
            Strategy::NoLearning => "no_learning",
            Strategy::OnlyUcb => "only_ucb",
            Strategy::RandomRetrans => "random_retrans",
            Strategy::UcbRetrans => "ucb_retrans",
            Strategy::KUcbRetrans => "k_ucb_retrans",
            Strategy::DelayedUcbRetrans => "delayed_ucb_retrans",
        }
    }

    pub fn is_learning(self) -> bool {
        self != Strategy::NoLearning
    }

    /// True for the strategies that pair a first-stage UCB with a separate
    /// retransmission mechanism.
    pub fn is_two_stage(self) -> bool {
        matches!(
            self,
            Strategy::RandomRetrans
                | Strategy::UcbRetrans
                | Strategy::KUcbRetrans
                | Strategy::DelayedUcbRetrans
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy `{0}`")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Strategy::ALL
            .into_iter()
            .find(|st| st.key() == s || st.legend().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_devices: usize,
    pub n_channels: usize,
    /// Per-slot packet generation probability of an idle device.
    pub tx_prob: f64,
    /// Maximum number of transmissions of a single packet.
    pub max_attempts: u32,
    /// Back-off delays are drawn uniformly from `0..backoff_window`.
    pub backoff_window: u32,
    /// Per-channel, per-slot probability that background traffic occupies the channel.
    pub occupancy: Vec<f64>,
    pub strategy: Strategy,
    #[serde(default = "default_delay")]
    pub delay_threshold: u64,
    pub horizon: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// `OnlyUcb` keeps the first-attempt channel for all retransmissions of a
    /// packet instead of re-querying its learner.
    #[serde(default)]
    pub freeze_channel: bool,
}

fn default_delay() -> u64 {
    DEFAULT_DELAY_THRESHOLD
}

fn default_replications() -> u32 {
    10
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("n_devices must be >= 1")]
    NoDevices,
    #[error("n_channels must be >= 1")]
    NoChannels,
    #[error("tx_prob must lie in (0, 1], got {0}")]
    TxProb(f64),
    #[error("max_attempts must be >= 1")]
    MaxAttempts,
    #[error("backoff_window must be >= 1")]
    BackoffWindow,
    #[error("occupancy has {got} entries but n_channels is {expected}")]
    OccupancyLength { expected: usize, got: usize },
    #[error("occupancy[{channel}] = {value} is outside [0, 1)")]
    OccupancyValue { channel: usize, value: f64 },
    #[error("horizon must be >= 1")]
    Horizon,
    #[error("delay_threshold {delay} exceeds horizon {horizon}")]
    DelayThreshold { delay: u64, horizon: u64 },
    #[error("replications must be >= 1")]
    Replications,
    #[error("alpha must be a positive finite number, got {0}")]
    Alpha(f64),
}

impl ScenarioConfig {
    /// Checks every invariant and reports the first one violated.
    pub fn validate(self) -> Result<Self, ConfigError> {
        if self.n_devices == 0 {
            return Err(ConfigError::NoDevices);
        }
        if self.n_channels == 0 {
            return Err(ConfigError::NoChannels);
        }
        if !(self.tx_prob > 0.0 && self.tx_prob <= 1.0) {
            return Err(ConfigError::TxProb(self.tx_prob));
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::MaxAttempts);
        }
        if self.backoff_window == 0 {
            return Err(ConfigError::BackoffWindow);
        }
        if self.occupancy.len() != self.n_channels {
            return Err(ConfigError::OccupancyLength {
                expected: self.n_channels,
                got: self.occupancy.len(),
            });
        }
        if let Some((channel, &value)) = self
            .occupancy
            .iter()
            .enumerate()
            .find(|(_, &o)| !(0.0..1.0).contains(&o))
        {
            return Err(ConfigError::OccupancyValue { channel, value });
        }
        if self.horizon == 0 {
            return Err(ConfigError::Horizon);
        }
        if self.delay_threshold > self.horizon {
            return Err(ConfigError::DelayThreshold {
                delay: self.delay_threshold,
                horizon: self.horizon,
            });
        }
        if self.replications == 0 {
            return Err(ConfigError::Replications);
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        Ok(self)
    }

    /// Single-channel, no-background configuration used for collision
    /// probability measurements.
    pub fn single_channel(n_devices: usize, tx_prob: f64, max_attempts: u32, backoff_window: u32, horizon: u64) -> Self {
        ScenarioConfig {
            n_devices,
            n_channels: 1,
            tx_prob,
            max_attempts,
            backoff_window,
            occupancy: vec![0.0],
            strategy: Strategy::NoLearning,
            delay_threshold: 0,
            horizon,
            replications: 1,
            master_seed: 0,
            alpha: DEFAULT_ALPHA,
            freeze_channel: false,
        }
    }
}

/// Markov-chain position of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    /// Waiting out a back-off; the device transmits again in slot `resume_at`.
    Backoff { resume_at: u64 },
    ReadyToTransmit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceState {
    pub phase: Phase,
    /// 0 for a packet's first transmission, `i` for its i-th retransmission.
    pub attempt_index: u32,
    pub current_channel: Option<usize>,
    /// Channel of the in-flight packet's first transmission.
    pub first_channel: Option<usize>,
}

impl Default for DeviceState {
    fn default() -> Self {
        Self::idle()
    }
}

impl DeviceState {
    pub fn idle() -> Self {
        DeviceState {
            phase: Phase::Idle,
            attempt_index: 0,
            current_channel: None,
            first_channel: None,
        }
    }

    /// Device holding a fresh packet, about to make its first transmission.
    pub fn fresh_packet() -> Self {
        DeviceState {
            phase: Phase::ReadyToTransmit,
            ..Self::idle()
        }
    }

    /// Device about to retransmit a packet first sent on `first_channel`.
    pub fn retransmitting(attempt_index: u32, first_channel: usize) -> Self {
        DeviceState {
            phase: Phase::ReadyToTransmit,
            attempt_index,
            current_channel: Some(first_channel),
            first_channel: Some(first_channel),
        }
    }

    /// Slots left before a backing-off device transmits again, seen from `slot`.
    pub fn remaining_backoff(&self, slot: u64) -> Option<u64> {
        match self.phase {
            Phase::Backoff { resume_at } => Some(resume_at.saturating_sub(slot)),
            _ => None,
        }
    }
}

/// One transmission as observed by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptRecord {
    pub slot: u64,
    pub device: usize,
    pub channel: usize,
    pub attempt_index: u32,
    pub success: bool,
}
