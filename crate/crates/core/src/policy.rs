//! UCB learner and the channel-selection strategies built on top of it.
//!
//! A learner's clock is its own update count: the index of channel `k` at the
//! learner's `t`-th decision is
//!
//! ```text
//! U_k(t) = mean_k + sqrt(alpha * ln(t) / pulls_k)      (t = attempts + 1)
//! ```
//!
//! with `U_k = +inf` while channel `k` has never been tried. Ties between
//! maximal indices are broken uniformly at random so that devices starting
//! from identical state do not all pick the same channel.

use rand::Rng;
use thiserror::Error;

use crate::model::{DeviceState, Strategy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("K-UCB retransmission requires the packet's first channel, but none is recorded")]
    MissingFirstChannel,
    #[error("channel {channel} out of range for {n_channels} channels")]
    ChannelOutOfRange { channel: usize, n_channels: usize },
}

/// Single UCB1 learner over `K` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbLearner {
    pulls: Vec<u64>,
    successes: Vec<u64>,
    attempts: u64,
    alpha: f64,
}

impl UcbLearner {
    pub fn new(n_channels: usize, alpha: f64) -> Self {
        assert!(n_channels > 0, "a learner needs at least one channel");
        UcbLearner {
            pulls: vec![0; n_channels],
            successes: vec![0; n_channels],
            attempts: 0,
            alpha,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.pulls.len()
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn successes(&self) -> &[u64] {
        &self.successes
    }

    /// Number of completed updates.
    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Empirical mean reward of `channel`, 0 when it was never played.
    pub fn mean_reward(&self, channel: usize) -> f64 {
        match self.pulls[channel] {
            0 => 0.0,
            n => self.successes[channel] as f64 / n as f64,
        }
    }

    pub fn mean_rewards(&self) -> Vec<f64> {
        (0..self.n_channels()).map(|k| self.mean_reward(k)).collect()
    }

    fn index_with(&self, channel: usize, ln_now: f64) -> f64 {
        match self.pulls[channel] {
            0 => f64::INFINITY,
            n => self.mean_reward(channel) + (self.alpha * ln_now / n as f64).sqrt(),
        }
    }

    fn ln_clock(now: u64) -> f64 {
        (now.max(1) as f64).ln().max(0.0)
    }

    /// UCB index of every channel at learner time `now`.
    pub fn indices(&self, now: u64) -> Vec<f64> {
        let ln_now = Self::ln_clock(now);
        (0..self.n_channels())
            .map(|k| self.index_with(k, ln_now))
            .collect()
    }

    /// Picks the channel with the largest index, ties broken uniformly.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let ln_now = Self::ln_clock(self.attempts + 1);
        let mut best = f64::NEG_INFINITY;
        let mut chosen = 0;
        let mut ties = 0u32;
        for k in 0..self.n_channels() {
            let u = self.index_with(k, ln_now);
            if u > best {
                best = u;
                chosen = k;
                ties = 1;
            } else if u == best {
                // reservoir sampling over the tie set
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    chosen = k;
                }
            }
        }
        chosen
    }

    pub fn update(&mut self, channel: usize, success: bool) {
        self.pulls[channel] += 1;
        self.successes[channel] += u64::from(success);
        self.attempts += 1;
    }
}

/// Second-stage state of a strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum RetransStage {
    /// No retransmission learner (`NoLearning`, `OnlyUcb`, `RandomRetrans`).
    None,
    /// One learner for all retransmissions (`UcbRetrans`, `DelayedUcbRetrans`).
    Single(UcbLearner),
    /// One learner per first-attempt channel (`KUcbRetrans`).
    PerChannel(Vec<UcbLearner>),
}

/// Per-device strategy: a first-stage learner plus the retransmission mechanism
/// required by `kind`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyState {
    kind: Strategy,
    first_stage: UcbLearner,
    retrans: RetransStage,
    delay_threshold: u64,
    freeze_channel: bool,
}

/// Which mechanism handles a given transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Uniform,
    FirstStage,
    Frozen,
    RetransSingle,
    RetransChannel(usize),
}

impl StrategyState {
    pub fn new(kind: Strategy, n_channels: usize, alpha: f64, delay_threshold: u64) -> Self {
        let retrans = match kind {
            Strategy::UcbRetrans | Strategy::DelayedUcbRetrans => {
                RetransStage::Single(UcbLearner::new(n_channels, alpha))
            }
            Strategy::KUcbRetrans => RetransStage::PerChannel(
                (0..n_channels)
                    .map(|_| UcbLearner::new(n_channels, alpha))
                    .collect(),
            ),
            Strategy::NoLearning | Strategy::OnlyUcb | Strategy::RandomRetrans => {
                RetransStage::None
            }
        };
        StrategyState {
            kind,
            first_stage: UcbLearner::new(n_channels, alpha),
            retrans,
            delay_threshold,
            freeze_channel: false,
        }
    }

    /// `OnlyUcb` variant that keeps a packet on its first channel for every
    /// retransmission. Has no effect on other strategies.
    pub fn with_frozen_channel(mut self, freeze: bool) -> Self {
        self.freeze_channel = freeze;
        self
    }

    pub fn kind(&self) -> Strategy {
        self.kind
    }

    pub fn first_stage(&self) -> &UcbLearner {
        &self.first_stage
    }

    pub fn retrans(&self) -> &RetransStage {
        &self.retrans
    }

    pub fn delay_threshold(&self) -> u64 {
        self.delay_threshold
    }

    pub fn n_channels(&self) -> usize {
        self.first_stage.n_channels()
    }

    fn route(&self, dev: &DeviceState, slot: u64) -> Result<Route, PolicyError> {
        let retransmission = dev.attempt_index >= 1;
        let route = match self.kind {
            Strategy::NoLearning => Route::Uniform,
            Strategy::OnlyUcb if retransmission && self.freeze_channel => Route::Frozen,
            Strategy::OnlyUcb => Route::FirstStage,
            _ if !retransmission => Route::FirstStage,
            Strategy::RandomRetrans => Route::Uniform,
            Strategy::UcbRetrans => Route::RetransSingle,
            Strategy::KUcbRetrans => {
                let j = dev.first_channel.ok_or(PolicyError::MissingFirstChannel)?;
                if j >= self.n_channels() {
                    return Err(PolicyError::ChannelOutOfRange {
                        channel: j,
                        n_channels: self.n_channels(),
                    });
                }
                Route::RetransChannel(j)
            }
            Strategy::DelayedUcbRetrans if slot <= self.delay_threshold => Route::Uniform,
            Strategy::DelayedUcbRetrans => Route::RetransSingle,
        };
        Ok(route)
    }

    fn retrans_learner(&self, route: Route) -> &UcbLearner {
        match (&self.retrans, route) {
            (RetransStage::Single(l), Route::RetransSingle) => l,
            (RetransStage::PerChannel(ls), Route::RetransChannel(j)) => &ls[j],
            _ => unreachable!("route {route:?} does not match the strategy's learners"),
        }
    }

    /// Chooses the channel for the transmission `dev` is about to make in `slot`.
    pub fn select<R: Rng + ?Sized>(
        &self,
        dev: &DeviceState,
        slot: u64,
        rng: &mut R,
    ) -> Result<usize, PolicyError> {
        let k = self.n_channels();
        Ok(match self.route(dev, slot)? {
            Route::Uniform => rng.random_range(0..k),
            Route::FirstStage => self.first_stage.select(rng),
            Route::Frozen => match dev.first_channel {
                Some(c) => c,
                None => self.first_stage.select(rng),
            },
            r @ (Route::RetransSingle | Route::RetransChannel(_)) => {
                self.retrans_learner(r).select(rng)
            }
        })
    }

    /// Feeds back the outcome of a transmission `dev` made on `channel` in `slot`.
    /// The learner updated is the one `select` consulted for the same inputs.
    pub fn observe(
        &mut self,
        dev: &DeviceState,
        channel: usize,
        slot: u64,
        success: bool,
    ) -> Result<(), PolicyError> {
        if channel >= self.n_channels() {
            return Err(PolicyError::ChannelOutOfRange {
                channel,
                n_channels: self.n_channels(),
            });
        }
        match self.route(dev, slot)? {
            Route::Uniform => {}
            Route::FirstStage | Route::Frozen => self.first_stage.update(channel, success),
            Route::RetransSingle => match &mut self.retrans {
                RetransStage::Single(l) => l.update(channel, success),
                _ => unreachable!(),
            },
            Route::RetransChannel(j) => match &mut self.retrans {
                RetransStage::PerChannel(ls) => ls[j].update(channel, success),
                _ => unreachable!(),
            },
        }
        Ok(())
    }
}
