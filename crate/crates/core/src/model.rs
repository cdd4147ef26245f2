//! Link physics shared by every analysis path.
//!
//! Powers and energies are both carried in mW (equivalently mJ per unit slot).
//! A slot works as follows: the source may spend its budget on one packet
//! attempt, the receiver spends according to its mode, the channel gain is
//! drawn once, and harvested energy is added at the end of the slot subject to
//! the battery capacity.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// Battery capacity of both nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Finite(f64),
    Unbounded,
}

impl Capacity {
    pub fn is_finite(&self) -> bool {
        matches!(self, Capacity::Finite(_))
    }

    pub fn clamp(&self, level: f64) -> f64 {
        match *self {
            Capacity::Finite(cap) => level.min(cap),
            Capacity::Unbounded => level,
        }
    }
}

/// Physical and protocol parameters of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    /// Spectral efficiency R in bit/s/Hz.
    pub rate: f64,
    /// Noise power z.
    pub noise: f64,
    /// Amplifier slope alpha; the amplifier draws (1 + alpha) * P_tx.
    pub amp_slope: f64,
    /// Source circuit power P_CS, spent whenever the source transmits.
    pub circuit_power: f64,
    /// Receive power P_D (includes the ACK).
    pub rx_power: f64,
    /// Receive plus processing power P_F. Equal to `rx_power` unless
    /// processing is modeled.
    pub processing_total: f64,
    /// Detection fraction xi in [0, 1].
    pub detect_frac: f64,
    /// Receive fraction eta in (0, 1], with P_D = eta * P_F.
    pub rx_frac: f64,
    /// Maximum number of transmission attempts per packet, K >= 1.
    pub retry_limit: u32,
    pub battery_cap: Capacity,
    /// Energy quantum E used by the Markov chain grid.
    pub quantum: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            rate: 2.0,
            noise: 100.0,
            amp_slope: 1.0,
            circuit_power: 100.0,
            rx_power: 700.0,
            processing_total: 700.0,
            detect_frac: 1.0,
            rx_frac: 1.0,
            retry_limit: 4,
            battery_cap: Capacity::Finite(3000.0),
            quantum: 50.0,
        }
    }
}

pub(crate) fn on_grid(value: f64, quantum: f64) -> bool {
    let r = value / quantum;
    (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
}

impl LinkConfig {
    /// c = (2^R - 1)(1 + alpha) z, the constant shared by the threshold
    /// formulas.
    pub fn c_const(&self) -> f64 {
        (self.rate.exp2() - 1.0) * (1.0 + self.amp_slope) * self.noise
    }

    /// Transmit power produced by a per-slot source budget.
    pub fn tx_power(&self, budget: f64) -> Result<f64> {
        tx_power_from_budget(budget, self.amp_slope, self.circuit_power)
    }

    /// Channel outage probability when the source spends `budget`. Budgets
    /// that cannot energize the amplifier give outage 1.
    pub fn outage_at_budget(&self, budget: f64) -> f64 {
        if budget <= self.circuit_power {
            return 1.0;
        }
        let p_tx = (budget - self.circuit_power) / (1.0 + self.amp_slope);
        outage_unchecked(self.rate, self.noise, p_tx)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.rate > 0.0) {
            v.push(format!("rate = {} must be > 0", self.rate));
        }
        if !(self.noise > 0.0) {
            v.push(format!("noise = {} must be > 0", self.noise));
        }
        if !(self.amp_slope >= 0.0) {
            v.push(format!("alpha = {} must be >= 0", self.amp_slope));
        }
        if !(self.circuit_power >= 0.0) {
            v.push(format!("p_cs = {} must be >= 0", self.circuit_power));
        }
        if !(self.rx_power >= 0.0) {
            v.push(format!("p_d = {} must be >= 0", self.rx_power));
        }
        if !(0.0..=1.0).contains(&self.detect_frac) {
            v.push(format!("xi = {} must lie in [0, 1]", self.detect_frac));
        }
        if !(self.rx_frac > 0.0 && self.rx_frac <= 1.0) {
            v.push(format!("eta = {} must lie in (0, 1]", self.rx_frac));
        }
        if self.processing_total < self.rx_power {
            v.push(format!("p_f = {} must be >= p_d = {}", self.processing_total, self.rx_power));
        }
        let implied = self.rx_frac * self.processing_total;
        if (implied - self.rx_power).abs() > 1e-9 * self.rx_power.max(1.0) {
            v.push(format!("p_d = {} must equal eta * p_f = {}", self.rx_power, implied));
        }
        if self.retry_limit < 1 {
            v.push("k must be >= 1".to_string());
        }
        if !(self.quantum > 0.0) {
            v.push(format!("quantum = {} must be > 0", self.quantum));
        }
        if let Capacity::Finite(cap) = self.battery_cap {
            if !(cap > 0.0) {
                v.push(format!("b_max = {cap} must be > 0"));
            }
            if self.quantum > 0.0 {
                for (name, value) in [
                    ("b_max", cap),
                    ("p_cs", self.circuit_power),
                    ("p_d", self.rx_power),
                    ("p_f", self.processing_total),
                ] {
                    if !on_grid(value, self.quantum) {
                        v.push(format!("{name} = {value} is not a multiple of quantum = {}", self.quantum));
                    }
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

/// Harvesting statistics for both nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub mean_src: f64,
    pub mean_dst: f64,
    pub bern_src: f64,
    pub bern_dst: f64,
    pub peak_src: f64,
    pub peak_dst: f64,
    pub correlation: f64,
}

impl Default for EnergyProfile {
    fn default() -> Self {
        EnergyProfile::bernoulli(0.5, 1000.0, 0.5, 1000.0, 0.0)
    }
}

impl EnergyProfile {
    /// Bernoulli arrivals: `peak` with probability `mu`, otherwise nothing.
    pub fn bernoulli(mu_src: f64, peak_src: f64, mu_dst: f64, peak_dst: f64, rho: f64) -> Self {
        EnergyProfile {
            mean_src: mu_src * peak_src,
            mean_dst: mu_dst * peak_dst,
            bern_src: mu_src,
            bern_dst: mu_dst,
            peak_src,
            peak_dst,
            correlation: rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        for (name, mu) in [("mu_s", self.bern_src), ("mu_d", self.bern_dst)] {
            if !(0.0..=1.0).contains(&mu) {
                v.push(format!("{name} = {mu} must lie in [0, 1]"));
            }
        }
        for (name, x) in [
            ("e_s_max", self.peak_src),
            ("e_d_max", self.peak_dst),
            ("lambda_s", self.mean_src),
            ("lambda_d", self.mean_dst),
        ] {
            if !(x >= 0.0) {
                v.push(format!("{name} = {x} must be >= 0"));
            }
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            v.push(format!("rho = {} must lie in [-1, 1]", self.correlation));
        }
        let tol = 1e-9;
        if (self.mean_src - self.bern_src * self.peak_src).abs() > tol * self.mean_src.max(1.0) {
            v.push(format!(
                "lambda_s = {} must equal mu_s * e_s_max = {}",
                self.mean_src,
                self.bern_src * self.peak_src
            ));
        }
        if (self.mean_dst - self.bern_dst * self.peak_dst).abs() > tol * self.mean_dst.max(1.0) {
            v.push(format!(
                "lambda_d = {} must equal mu_d * e_d_max = {}",
                self.mean_dst,
                self.bern_dst * self.peak_dst
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

fn outage_unchecked(rate: f64, noise: f64, p_tx: f64) -> f64 {
    if p_tx <= 0.0 {
        return 1.0;
    }
    let x = (rate.exp2() - 1.0) * noise / p_tx;
    -(-x).exp_m1()
}

/// Probability that a Rayleigh block-fading channel cannot carry rate `rate`
/// at transmit power `p_tx`.
pub fn channel_outage_prob(rate: f64, noise: f64, p_tx: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Domain { name: "rate", value: rate, reason: "must be > 0" });
    }
    if !(noise > 0.0) {
        return Err(Error::Domain { name: "noise", value: noise, reason: "must be > 0" });
    }
    if !(p_tx >= 0.0) {
        return Err(Error::Domain { name: "p_tx", value: p_tx, reason: "must be >= 0" });
    }
    Ok(outage_unchecked(rate, noise, p_tx))
}

/// Smallest channel power gain |h|^2 that supports the rate at `p_tx`.
pub fn gain_threshold(rate: f64, noise: f64, p_tx: f64) -> f64 {
    if p_tx <= 0.0 {
        f64::INFINITY
    } else {
        (rate.exp2() - 1.0) * noise / p_tx
    }
}

/// Draws |h|^2 for one slot: unit-mean exponential (Rayleigh fading).
pub fn sample_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

/// Inverts the source power model: P_tx = (P_S - P_CS) / (1 + alpha).
pub fn tx_power_from_budget(budget: f64, alpha: f64, circuit_power: f64) -> Result<f64> {
    if budget == 0.0 {
        return Ok(0.0);
    }
    if !(budget > circuit_power) {
        return Err(Error::Domain {
            name: "p_s",
            value: budget,
            reason: "a nonzero budget must exceed the circuit power",
        });
    }
    Ok((budget - circuit_power) / (1.0 + alpha))
}

/// One slot of battery evolution: spend, harvest, clamp at capacity.
///
/// The policy guarantees `spend <= level`; violating that is an error here
/// rather than a silent clamp.
pub fn battery_step(level: f64, spend: f64, harvest: f64, cap: Capacity) -> Result<f64> {
    if spend > level {
        return Err(Error::InsufficientEnergy { level, spend });
    }
    Ok(cap.clamp(level - spend + harvest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

/// Retransmission state u: -1 after an ACK, 0 after a dropped packet, k for
/// the k-th retransmission in progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RetxState(i32);

impl RetxState {
    pub const ACKED: RetxState = RetxState(-1);
    pub const DROPPED: RetxState = RetxState(0);

    pub fn new(u: i32, retry_limit: u32) -> Result<Self> {
        if u < -1 || u > retry_limit as i32 - 1 {
            return Err(Error::Domain { name: "u", value: u as f64, reason: "must lie in {-1, ..., K-1}" });
        }
        Ok(RetxState(u))
    }

    pub fn value(self) -> i32 {
        self.0
    }

    /// True when the slot starts a fresh packet.
    pub fn starts_packet(self) -> bool {
        self.0 <= 0
    }

    /// 1-based attempt number of the packet in the current slot.
    pub fn attempt(self) -> u32 {
        if self.0 <= 0 {
            1
        } else {
            self.0 as u32 + 1
        }
    }

    /// Dense index 0..=K, with u = -1 at index 0.
    pub fn index(self) -> usize {
        (self.0 + 1) as usize
    }

    pub fn from_index(i: usize) -> Self {
        RetxState(i as i32 - 1)
    }

    pub fn next(self, outcome: Outcome, retry_limit: u32) -> Self {
        match outcome {
            Outcome::Success => RetxState::ACKED,
            Outcome::Failure => {
                let attempt = self.attempt();
                if attempt >= retry_limit {
                    RetxState::DROPPED
                } else {
                    RetxState(attempt as i32)
                }
            }
        }
    }
}

/// Free-function form of [`RetxState::next`] on raw values.
pub fn next_retx_state(u: i32, outcome: Outcome, retry_limit: u32) -> Result<i32> {
    Ok(RetxState::new(u, retry_limit)?.next(outcome, retry_limit).value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn outage_examples() {
        assert_eq!(channel_outage_prob(2.0, 100.0, 0.0).unwrap(), 1.0);
        let p = channel_outage_prob(2.0, 100.0, 300.0).unwrap();
        assert!((p - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!(channel_outage_prob(2.0, 100.0, 1e12).unwrap() < 1e-9);
    }

    #[test]
    fn outage_rejects_bad_inputs() {
        assert!(channel_outage_prob(2.0, 100.0, -1.0).is_err());
        assert!(channel_outage_prob(0.0, 100.0, 1.0).is_err());
        assert!(channel_outage_prob(2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn tx_power_examples() {
        assert_eq!(tx_power_from_budget(700.0, 1.0, 100.0).unwrap(), 300.0);
        assert_eq!(tx_power_from_budget(0.0, 1.0, 100.0).unwrap(), 0.0);
        assert!(tx_power_from_budget(100.0, 1.0, 100.0).is_err());
        assert!(tx_power_from_budget(50.0, 1.0, 100.0).is_err());
    }

    #[test]
    fn battery_examples() {
        let cap = Capacity::Finite(1000.0);
        assert_eq!(battery_step(1000.0, 700.0, 1000.0, cap).unwrap(), 1000.0);
        assert_eq!(battery_step(1000.0, 700.0, 0.0, cap).unwrap(), 300.0);
        assert!(matches!(battery_step(500.0, 700.0, 0.0, cap), Err(Error::InsufficientEnergy { .. })));
        assert_eq!(battery_step(1000.0, 700.0, 1000.0, Capacity::Unbounded).unwrap(), 1300.0);
    }

    #[test]
    fn retx_examples() {
        assert_eq!(next_retx_state(-1, Outcome::Failure, 4).unwrap(), 1);
        assert_eq!(next_retx_state(3, Outcome::Failure, 4).unwrap(), 0);
        assert_eq!(next_retx_state(2, Outcome::Success, 4).unwrap(), -1);
        assert_eq!(next_retx_state(0, Outcome::Failure, 4).unwrap(), 1);
        // single attempt: any failure drops the packet
        assert_eq!(next_retx_state(-1, Outcome::Failure, 1).unwrap(), 0);
        assert!(next_retx_state(4, Outcome::Failure, 4).is_err());
    }

    #[test]
    fn failure_cycle_visits_every_retry_once() {
        for k in 1..8u32 {
            let mut u = RetxState::ACKED;
            let mut seen = Vec::new();
            loop {
                u = u.next(Outcome::Failure, k);
                if u == RetxState::DROPPED {
                    break;
                }
                seen.push(u.value());
            }
            assert_eq!(seen, (1..k as i32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn default_config_is_valid() {
        LinkConfig::default().validate().unwrap();
        EnergyProfile::default().validate().unwrap();
    }

    #[test]
    fn validation_lists_every_violation() {
        let cfg = LinkConfig { rx_power: 710.0, processing_total: 710.0, detect_frac: 1.5, ..LinkConfig::default() };
        match cfg.validate() {
            Err(Error::Invalid(v)) => {
                assert!(v.iter().any(|s| s.starts_with("xi")));
                assert!(v.iter().any(|s| s.starts_with("p_d = 710")));
                assert!(v.iter().any(|s| s.starts_with("p_f = 710")));
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn sampled_gain_reproduces_outage() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (rate, noise, p_tx) = (2.0, 100.0, 300.0);
        let thr = gain_threshold(rate, noise, p_tx);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sample_gain(&mut rng) < thr).count();
        let p_hat = hits as f64 / n as f64;
        let p = channel_outage_prob(rate, noise, p_tx).unwrap();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p_hat - p).abs() < 3.0 * sigma, "{p_hat} vs {p}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn outage_monotone(rate in 0.1f64..6.0, noise in 1.0f64..500.0,
                               p in 1.0f64..5000.0, dp in 1.0f64..500.0) {
                let a = channel_outage_prob(rate, noise, p).unwrap();
                let b = channel_outage_prob(rate, noise, p + dp).unwrap();
                // strict until the probability saturates at 1 in f64
                prop_assert!(b < a || (a == 1.0 && b <= a));
                let c = channel_outage_prob(rate + 0.1, noise, p).unwrap();
                prop_assert!(c > a || c == 1.0);
                prop_assert!((0.0..=1.0).contains(&a));
            }

            #[test]
            fn battery_stays_in_range(level in 0.0f64..1000.0, frac in 0.0f64..=1.0,
                                      harvest in 0.0f64..3000.0) {
                let cap = Capacity::Finite(1000.0);
                let next = battery_step(level, level * frac, harvest, cap).unwrap();
                prop_assert!((0.0..=1000.0).contains(&next));
            }
        }
    }
}
