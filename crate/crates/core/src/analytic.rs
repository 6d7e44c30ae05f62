//! Collision probabilities at the first retransmission.
//!
//! With `N` devices each transmitting in a slot with probability `x`, a
//! packet collides on its first transmission with probability
//! `p_c = 1 - (1 - x)^(N-1)`. After such a collision it collides again in its
//! retransmission slot with probability
//!
//! ```text
//! p_c1 = p_ca + (1 - p_ca) * p_c
//! ```
//!
//! where `p_ca` is the probability that one of the devices involved in the
//! first collision picked the same back-off delay. `p_ca` has an exact
//! binomial-sum form ([`p_ca_exact`]) and a closed form ([`p_ca_closed`]) that
//! holds when `x << 1`. Results are clamped to `[0, 1]`; outside the
//! small-`x` regime the closed form can leave that interval.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("{name} = {value} is outside its domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn domain(name: &'static str, value: f64, reason: &'static str) -> AnalyticError {
    AnalyticError::Domain { name, value, reason }
}

fn check_devices(n_devices: u64) -> Result<(), AnalyticError> {
    if n_devices < 2 {
        return Err(domain("N", n_devices as f64, "need at least 2 devices"));
    }
    Ok(())
}

fn check_prob(name: &'static str, v: f64) -> Result<(), AnalyticError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(domain(name, v, "must lie in [0, 1]"));
    }
    Ok(())
}

fn check_pc(p_c: f64) -> Result<(), AnalyticError> {
    check_prob("p_c", p_c)?;
    if p_c == 0.0 {
        return Err(domain("p_c", p_c, "collision-conditional probability is undefined at 0"));
    }
    if p_c == 1.0 {
        return Err(domain("p_c", p_c, "must be < 1"));
    }
    Ok(())
}

fn check_window(m: u32) -> Result<(), AnalyticError> {
    if m == 0 {
        return Err(domain("m", 0.0, "back-off window must be >= 1"));
    }
    Ok(())
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Per-slot transmission probability of one device implied by `p_c`.
pub fn x_from_pc(p_c: f64, n_devices: u64) -> Result<f64, AnalyticError> {
    check_devices(n_devices)?;
    check_prob("p_c", p_c)?;
    if p_c == 1.0 {
        return Err(domain("p_c", p_c, "must be < 1"));
    }
    Ok(-((-p_c).ln_1p() / (n_devices - 1) as f64).exp_m1())
}

/// First-transmission collision probability when every other device
/// transmits with probability `x`.
pub fn pc_from_x(x: f64, n_devices: u64) -> Result<f64, AnalyticError> {
    check_devices(n_devices)?;
    check_prob("x", x)?;
    Ok(-(((n_devices - 1) as f64) * (-x).ln_1p()).exp_m1())
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `t * ln(v)` with the convention `0 * ln 0 = 0`.
fn xlogy(t: f64, v: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * v.ln()
    }
}

/// Probability that exactly `n` of the other `N - 1` devices transmit in the
/// same slot.
pub fn prob_n_collide(n: u64, x: f64, n_devices: u64) -> Result<f64, AnalyticError> {
    check_devices(n_devices)?;
    check_prob("x", x)?;
    let others = n_devices - 1;
    if n > others {
        return Err(domain("n", n as f64, "must be <= N - 1"));
    }
    let ln_p = ln_binomial(others, n) + xlogy(n as f64, x) + xlogy((others - n) as f64, 1.0 - x);
    Ok(clamp01(ln_p.exp()))
}

/// `1 - (1 - 1/m)^n`: at least one of `n` devices draws a given back-off delay.
fn some_same_backoff(n: u64, m: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    -((n as f64) * (-1.0 / m as f64).ln_1p()).exp_m1()
}

/// Probability of colliding with exactly `n` packets in the first slot and
/// meeting at least one of them again after back-off.
pub fn prob_backoff_collision(n: u64, x: f64, n_devices: u64, m: u32) -> Result<f64, AnalyticError> {
    check_window(m)?;
    if n == 0 {
        return Err(domain("n", 0.0, "must be >= 1"));
    }
    Ok(prob_n_collide(n, x, n_devices)? * some_same_backoff(n, m))
}

/// `p_ca` from the full binomial sum over the number of colliding packets.
pub fn p_ca_exact(p_c: f64, n_devices: u64, m: u32) -> Result<f64, AnalyticError> {
    check_pc(p_c)?;
    check_window(m)?;
    let x = x_from_pc(p_c, n_devices)?;
    let others = n_devices - 1;
    // ln C(N-1, n) updated incrementally along the sum
    let ln_x = x.ln();
    let ln_1mx = (-x).ln_1p();
    let mut ln_binom = 0.0;
    let mut sum = 0.0;
    for n in 1..=others {
        ln_binom += (((others - n + 1) as f64) / n as f64).ln();
        let ln_p = ln_binom + n as f64 * ln_x + (others - n) as f64 * ln_1mx;
        sum += ln_p.exp() * some_same_backoff(n, m);
    }
    Ok(clamp01(sum / p_c))
}

/// Closed-form approximation of `p_ca`, valid for `x << 1`.
pub fn p_ca_closed(p_c: f64, n_devices: u64, m: u32) -> Result<f64, AnalyticError> {
    check_pc(p_c)?;
    check_window(m)?;
    let x = x_from_pc(p_c, n_devices)?;
    let stay = 1.0 - 1.0 / m as f64;
    let bracket_pow = (((n_devices - 1) as f64) * (x * stay).ln_1p()).exp();
    let inv = 1.0 / p_c;
    Ok(clamp01(inv - (inv - 1.0) * bracket_pow))
}

/// Approximate collision probability at the first retransmission.
pub fn p_c1_approx(p_c: f64, n_devices: u64, m: u32) -> Result<f64, AnalyticError> {
    let p_ca = p_ca_closed(p_c, n_devices, m)?;
    Ok(clamp01(p_ca + (1.0 - p_ca) * p_c))
}

/// Everything the `analytic` command prints for one `(p_c, N, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticReport {
    pub p_c: f64,
    pub n_devices: u64,
    pub backoff_window: u32,
    pub x: f64,
    pub p_ca_exact: f64,
    pub p_ca_closed: f64,
    pub p_c1_approx: f64,
}

impl AnalyticReport {
    pub fn compute(p_c: f64, n_devices: u64, m: u32) -> Result<Self, AnalyticError> {
        Ok(AnalyticReport {
            p_c,
            n_devices,
            backoff_window: m,
            x: x_from_pc(p_c, n_devices)?,
            p_ca_exact: p_ca_exact(p_c, n_devices, m)?,
            p_ca_closed: p_ca_closed(p_c, n_devices, m)?,
            p_c1_approx: p_c1_approx(p_c, n_devices, m)?,
        })
    }

    pub fn p_ca_difference(&self) -> f64 {
        self.p_ca_closed - self.p_ca_exact
    }

    pub fn gap(&self) -> f64 {
        self.p_c1_approx - self.p_c
    }
}

impl std::fmt::Display for AnalyticReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "p_c          {:.6}", self.p_c)?;
        writeln!(f, "N            {}", self.n_devices)?;
        writeln!(f, "m            {}", self.backoff_window)?;
        writeln!(f, "x            {:.6e}", self.x)?;
        writeln!(f, "p_ca exact   {:.6}", self.p_ca_exact)?;
        writeln!(f, "p_ca closed  {:.6}", self.p_ca_closed)?;
        writeln!(f, "difference   {:+.6e}", self.p_ca_difference())?;
        writeln!(f, "p_c1 approx  {:.6}", self.p_c1_approx)?;
        write!(f, "gap p_c1-p_c {:.6}", self.gap())
    }
}
