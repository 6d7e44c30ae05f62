//! Success-rate curves and collision estimates from replication tallies.

use thiserror::Error;

use crate::engine::ReplicationResult;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("window must be between 1 and the horizon ({horizon}), got {window}")]
    Window { window: u64, horizon: u64 },
    #[error("series have different bucketing and cannot be aggregated")]
    BucketMismatch,
    #[error("no {0} transmissions recorded, cannot estimate its collision probability")]
    InsufficientData(&'static str),
}

/// Rates of one slot bucket of one replication; `None` marks a bucket
/// without any transmission (or finished packet, for `packet_rate`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketRate {
    pub end_slot: u64,
    pub rate: Option<f64>,
    pub packet_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSeries {
    pub window: u64,
    pub buckets: Vec<BucketRate>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn bucket_ranges(horizon: u64, window: u64) -> Result<Vec<(usize, usize)>, MetricsError> {
    if window == 0 || window > horizon {
        return Err(MetricsError::Window { window, horizon });
    }
    let mut out = Vec::with_capacity(horizon.div_ceil(window) as usize);
    let mut start = 0;
    while start < horizon {
        let end = (start + window).min(horizon);
        out.push((start as usize, end as usize));
        start = end;
    }
    Ok(out)
}

fn sum(v: &[u32]) -> u64 {
    v.iter().map(|&x| u64::from(x)).sum()
}

/// Success rate over consecutive buckets of `window` slots; the last bucket
/// may be shorter.
pub fn windowed_rate(res: &ReplicationResult, window: u64) -> Result<RateSeries, MetricsError> {
    let buckets = bucket_ranges(res.horizon, window)?
        .into_iter()
        .map(|(a, b)| {
            let attempts = sum(&res.attempts[a..b]);
            let successes = sum(&res.successes[a..b]);
            let drops = sum(&res.drops[a..b]);
            BucketRate {
                end_slot: b as u64,
                rate: ratio(successes, attempts),
                packet_rate: ratio(successes, successes + drops),
            }
        })
        .collect();
    Ok(RateSeries { window, buckets })
}

/// Success rate accumulated from slot 0 up to the end of each bucket.
pub fn cumulative_rate(res: &ReplicationResult, window: u64) -> Result<RateSeries, MetricsError> {
    let (mut attempts, mut successes, mut drops) = (0, 0, 0);
    let buckets = bucket_ranges(res.horizon, window)?
        .into_iter()
        .map(|(a, b)| {
            attempts += sum(&res.attempts[a..b]);
            successes += sum(&res.successes[a..b]);
            drops += sum(&res.drops[a..b]);
            BucketRate {
                end_slot: b as u64,
                rate: ratio(successes, attempts),
                packet_rate: ratio(successes, successes + drops),
            }
        })
        .collect();
    Ok(RateSeries { window, buckets })
}

/// Success rate over the last `fraction` of the horizon.
pub fn tail_rate(res: &ReplicationResult, fraction: f64) -> Option<f64> {
    let start = ((1.0 - fraction.clamp(0.0, 1.0)) * res.horizon as f64).floor() as usize;
    ratio(sum(&res.successes[start..]), sum(&res.attempts[start..]))
}

/// Packet delivery ratio over the last `fraction` of the horizon.
pub fn tail_packet_rate(res: &ReplicationResult, fraction: f64) -> Option<f64> {
    let start = ((1.0 - fraction.clamp(0.0, 1.0)) * res.horizon as f64).floor() as usize;
    let delivered = sum(&res.successes[start..]);
    ratio(delivered, delivered + sum(&res.drops[start..]))
}

/// Collision frequency at first transmissions and at first retransmissions.
pub fn collision_estimates(res: &ReplicationResult) -> Result<(f64, f64), MetricsError> {
    let pc = ratio(res.first_attempt_collisions, res.first_attempt_count)
        .ok_or(MetricsError::InsufficientData("first-attempt"))?;
    let pc1 = ratio(res.second_attempt_collisions, res.second_attempt_count)
        .ok_or(MetricsError::InsufficientData("first-retransmission"))?;
    Ok((pc, pc1))
}

/// Running count, sum and sum of squares; merging two accumulators is the
/// same as accumulating both sample sets.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    /// Standard error of the mean with the `n - 1` sample variance; 0 for a
    /// single sample.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

impl FromIterator<f64> for MeanAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAccumulator::default();
        iter.into_iter().for_each(|v| acc.push(v));
        acc
    }
}

/// One aggregated point of a success-rate curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub slot_bucket: u64,
    pub mean_rate: f64,
    pub stderr: f64,
    /// Replications with at least one transmission in the bucket.
    pub n_reps: u64,
    pub mean_packet_rate: Option<f64>,
}

/// Per-bucket accumulators, mergeable across subsets of replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesAccumulator {
    ends: Vec<u64>,
    rate: Vec<MeanAccumulator>,
    packet_rate: Vec<MeanAccumulator>,
}

impl SeriesAccumulator {
    pub fn new(template: &RateSeries) -> Self {
        let n = template.buckets.len();
        SeriesAccumulator {
            ends: template.buckets.iter().map(|b| b.end_slot).collect(),
            rate: vec![MeanAccumulator::default(); n],
            packet_rate: vec![MeanAccumulator::default(); n],
        }
    }

    pub fn push(&mut self, series: &RateSeries) -> Result<(), MetricsError> {
        if series.buckets.len() != self.ends.len()
            || series.buckets.iter().zip(&self.ends).any(|(b, &e)| b.end_slot != e)
        {
            return Err(MetricsError::BucketMismatch);
        }
        for (i, b) in series.buckets.iter().enumerate() {
            if let Some(r) = b.rate {
                self.rate[i].push(r);
            }
            if let Some(r) = b.packet_rate {
                self.packet_rate[i].push(r);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SeriesAccumulator) -> Result<(), MetricsError> {
        if self.ends != other.ends {
            return Err(MetricsError::BucketMismatch);
        }
        for (a, b) in self.rate.iter_mut().zip(&other.rate) {
            a.merge(b);
        }
        for (a, b) in self.packet_rate.iter_mut().zip(&other.packet_rate) {
            a.merge(b);
        }
        Ok(())
    }

    /// Buckets no replication transmitted in are left out.
    pub fn points(&self) -> Vec<SeriesPoint> {
        self.ends
            .iter()
            .zip(self.rate.iter().zip(&self.packet_rate))
            .filter_map(|(&end, (r, p))| {
                Some(SeriesPoint {
                    slot_bucket: end,
                    mean_rate: r.mean()?,
                    stderr: r.stderr(),
                    n_reps: r.n,
                    mean_packet_rate: p.mean(),
                })
            })
            .collect()
    }
}

/// Mean and standard error per bucket across replications.
pub fn aggregate(series: &[RateSeries]) -> Result<Vec<SeriesPoint>, MetricsError> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    let mut acc = SeriesAccumulator::new(first);
    for s in series {
        acc.push(s)?;
    }
    Ok(acc.points())
}
