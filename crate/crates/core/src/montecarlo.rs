//! Slot-by-slot simulation of the link.
//!
//! Every slot draws the channel gain first and the harvest pair second from a
//! single ChaCha8 stream, so a seed fixes the whole trajectory. Estimates are
//! reported with standard errors that account for correlation between slots
//! through batch means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fsmc::ArrivalPmf;
use crate::model::{battery_step, sample_gain, Capacity, EnergyProfile, LinkConfig, RetxState};
use crate::policy::{LinkController, PolicySpec};

pub type SimRng = ChaCha8Rng;

/// Stationary, ergodic source of per-slot harvest pairs (E_S, E_D).
pub trait ArrivalProcess: Send {
    fn sample(&mut self, rng: &mut SimRng) -> (f64, f64);
    /// Long-run means (lambda_S, lambda_D).
    fn means(&self) -> (f64, f64);
}

/// Draws one outcome of the correlated Bernoulli pair.
pub fn sample_arrival_pair<R: Rng + ?Sized>(pmf: &ArrivalPmf, peaks: (f64, f64), rng: &mut R) -> (f64, f64) {
    let x: f64 = rng.random();
    let [m0, m1, m2, _] = pmf.mu;
    if x < m0 {
        (0.0, 0.0)
    } else if x < m0 + m1 {
        (0.0, peaks.1)
    } else if x < m0 + m1 + m2 {
        (peaks.0, 0.0)
    } else {
        (peaks.0, peaks.1)
    }
}

#[derive(Debug, Clone)]
pub struct BernoulliArrivals {
    pub pmf: ArrivalPmf,
    pub peaks: (f64, f64),
}

impl BernoulliArrivals {
    pub fn from_profile(profile: &EnergyProfile) -> Result<Self> {
        profile.validate()?;
        let pmf = ArrivalPmf::correlated(profile.bern_src, profile.bern_dst, profile.correlation)?;
        Ok(BernoulliArrivals { pmf, peaks: (profile.peak_src, profile.peak_dst) })
    }
}

impl ArrivalProcess for BernoulliArrivals {
    fn sample(&mut self, rng: &mut SimRng) -> (f64, f64) {
        sample_arrival_pair(&self.pmf, self.peaks, rng)
    }

    fn means(&self) -> (f64, f64) {
        let (a, b) = self.pmf.marginals();
        (a * self.peaks.0, b * self.peaks.1)
    }
}

/// Independent exponentially distributed harvests.
#[derive(Debug, Clone)]
pub struct ExponentialArrivals {
    pub mean_src: f64,
    pub mean_dst: f64,
}

impl ArrivalProcess for ExponentialArrivals {
    fn sample(&mut self, rng: &mut SimRng) -> (f64, f64) {
        let a: f64 = rng.sample(Exp1);
        let b: f64 = rng.sample(Exp1);
        (a * self.mean_src, b * self.mean_dst)
    }

    fn means(&self) -> (f64, f64) {
        (self.mean_src, self.mean_dst)
    }
}

/// Per-node two-state Markov (on/off) harvesting. While on, a node harvests
/// its peak every slot. Arrivals are correlated in time but not across nodes.
#[derive(Debug, Clone)]
pub struct MarkovOnOff {
    pub peaks: (f64, f64),
    /// Probability of switching on from off.
    pub p_on: f64,
    /// Probability of switching off from on.
    pub p_off: f64,
    state: (bool, bool),
}

impl MarkovOnOff {
    pub fn new(peaks: (f64, f64), p_on: f64, p_off: f64) -> Result<Self> {
        for (name, p) in [("p_on", p_on), ("p_off", p_off)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Domain { name, value: p, reason: "must lie in (0, 1]" });
            }
        }
        Ok(MarkovOnOff { peaks, p_on, p_off, state: (false, false) })
    }

    fn duty(&self) -> f64 {
        self.p_on / (self.p_on + self.p_off)
    }
}

impl ArrivalProcess for MarkovOnOff {
    fn sample(&mut self, rng: &mut SimRng) -> (f64, f64) {
        let mut step = |on: bool| {
            let x: f64 = rng.random();
            if on {
                x >= self.p_off
            } else {
                x < self.p_on
            }
        };
        self.state = (step(self.state.0), step(self.state.1));
        (if self.state.0 { self.peaks.0 } else { 0.0 }, if self.state.1 { self.peaks.1 } else { 0.0 })
    }

    fn means(&self) -> (f64, f64) {
        (self.duty() * self.peaks.0, self.duty() * self.peaks.1)
    }
}

/// Battery cap used to emulate an unbounded battery, as a multiple of the
/// largest mean harvest.
pub const UNBOUNDED_CAP_FACTOR: f64 = 1e4;
pub const DEFAULT_BURN_IN: u64 = 10_000;
pub const BATCHES: usize = 20;
const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Measured slots, after the burn-in.
    pub n_slots: u64,
    pub burn_in: u64,
    pub init_src: f64,
    pub init_dst: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { n_slots: 1_000_000, burn_in: DEFAULT_BURN_IN, init_src: 0.0, init_dst: 0.0 }
    }
}

impl SimOptions {
    pub fn with_slots(n_slots: u64) -> Self {
        SimOptions { n_slots, ..SimOptions::default() }
    }
}

/// A point estimate with its standard error. Undefined estimates are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn half_width(&self) -> f64 {
        Z95 * self.se
    }

    /// True when `target` lies within `k` standard errors.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

/// Energy bookkeeping for one node over the whole run, burn-in included.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyLedger {
    pub initial: f64,
    pub harvested: f64,
    pub spent: f64,
    pub overflow: f64,
    pub final_level: f64,
}

impl EnergyLedger {
    /// harvested - spent - overflow - (final - initial); zero up to rounding.
    pub fn imbalance(&self) -> f64 {
        self.harvested - self.spent - self.overflow - (self.final_level - self.initial)
    }

    fn record(&mut self, level: f64, spend: f64, harvest: f64, next: f64) {
        self.harvested += harvest;
        self.spent += spend;
        self.overflow += level - spend + harvest - next;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub seed: u64,
    pub n_slots: u64,
    pub burn_in: u64,
    pub n_packets: u64,
    pub n_success: u64,
    pub n_outage: u64,
    pub p_out: Estimate,
    pub tau: Estimate,
    pub psi_s: Estimate,
    pub psi_d: Estimate,
    pub psi_joint: Estimate,
    pub src_energy: EnergyLedger,
    pub dst_energy: EnergyLedger,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Batch {
    slots: f64,
    src_ready: f64,
    dst_ready: f64,
    both_ready: f64,
    finished: f64,
    dropped: f64,
    succeeded: f64,
    attempts: f64,
}

/// Standard error of sum(y) / sum(x) across batches.
fn ratio_se(batches: &[Batch], y: impl Fn(&Batch) -> f64, x: impl Fn(&Batch) -> f64) -> f64 {
    let b = batches.len() as f64;
    let (sy, sx): (f64, f64) = batches.iter().fold((0.0, 0.0), |(a, c), bt| (a + y(bt), c + x(bt)));
    if sx <= 0.0 || b < 2.0 {
        return f64::NAN;
    }
    let r = sy / sx;
    let mean_x = sx / b;
    let ss: f64 = batches.iter().map(|bt| (y(bt) - r * x(bt)).powi(2)).sum();
    (ss / (b * (b - 1.0))).sqrt() / mean_x
}

fn max_se(a: f64, b: f64) -> f64 {
    match (a.is_nan(), b.is_nan()) {
        (true, _) => b,
        (_, true) => a,
        _ => a.max(b),
    }
}

fn proportion(hits: f64, n: f64, batch_se: f64) -> Estimate {
    if n <= 0.0 {
        return Estimate { value: f64::NAN, se: f64::NAN };
    }
    let p = hits / n;
    Estimate { value: p, se: max_se((p * (1.0 - p) / n).sqrt(), batch_se) }
}

/// Simulates with correlated Bernoulli arrivals taken from `profile`.
pub fn simulate(
    cfg: &LinkConfig,
    profile: &EnergyProfile,
    spec: &PolicySpec,
    opts: &SimOptions,
    seed: u64,
) -> Result<SimResult> {
    let mut arrivals = BernoulliArrivals::from_profile(profile)?;
    simulate_with(cfg, spec, &mut arrivals, opts, seed)
}

/// Simulates with an arbitrary arrival process.
///
/// A finite battery uses the grid-rounded receiver costs, so the run follows
/// the same model as the Markov chain.
pub fn simulate_with(
    cfg: &LinkConfig,
    spec: &PolicySpec,
    arrivals: &mut dyn ArrivalProcess,
    opts: &SimOptions,
    seed: u64,
) -> Result<SimResult> {
    if opts.n_slots < 1 {
        return Err(Error::Domain { name: "n_slots", value: 0.0, reason: "must be >= 1" });
    }
    let ctl = LinkController::new(cfg, spec, cfg.battery_cap.is_finite())?;
    let mut notes = ctl.notes.clone();
    let cap = match cfg.battery_cap {
        Capacity::Finite(c) => Capacity::Finite(c),
        Capacity::Unbounded => {
            let (ls, ld) = arrivals.means();
            let c = UNBOUNDED_CAP_FACTOR * ls.max(ld);
            if c > 0.0 && c.is_finite() {
                notes.push(format!("unbounded battery emulated with cap {c}"));
                Capacity::Finite(c)
            } else {
                Capacity::Unbounded
            }
        }
    };
    for (name, level) in [("init_src", opts.init_src), ("init_dst", opts.init_dst)] {
        if !(level >= 0.0) || cap.clamp(level) != level {
            return Err(Error::Domain { name, value: level, reason: "must lie in [0, b_max]" });
        }
    }

    let k = cfg.retry_limit;
    let mut rng = SimRng::seed_from_u64(seed);
    let (mut b_s, mut b_d) = (opts.init_src, opts.init_dst);
    let mut src_energy = EnergyLedger { initial: b_s, ..EnergyLedger::default() };
    let mut dst_energy = EnergyLedger { initial: b_d, ..EnergyLedger::default() };
    let mut u = RetxState::ACKED;

    let batch_len = opts.n_slots.div_ceil(BATCHES as u64).max(1);
    let mut batches = vec![Batch::default(); BATCHES];
    let mut tracking = false;
    let mut attempts = 0u32;
    let mut attempt_sq = 0.0;

    let total = opts.burn_in + opts.n_slots;
    for t in 0..total {
        let gain = sample_gain(&mut rng);
        let (e_s, e_d) = arrivals.sample(&mut rng);
        let measured = t >= opts.burn_in;
        let bi = if measured { ((t - opts.burn_in) / batch_len) as usize } else { 0 };

        if measured {
            let s_ready = ctl.src_ready(b_s, u);
            let d_ready = ctl.dst_ready(b_d);
            let bt = &mut batches[bi];
            bt.slots += 1.0;
            bt.src_ready += s_ready as u8 as f64;
            bt.dst_ready += d_ready as u8 as f64;
            bt.both_ready += (s_ready && d_ready) as u8 as f64;
            if u.starts_packet() {
                tracking = true;
                attempts = 0;
            }
        }

        let channel_ok = gain >= ctl.gain_threshold(u);
        let d = ctl.decide(b_s, b_d, u, channel_ok);
        let n_s = battery_step(b_s, d.src_spend, e_s, cap)?;
        let n_d = battery_step(b_d, d.dst_spend, e_d, cap)?;
        src_energy.record(b_s, d.src_spend, e_s, n_s);
        dst_energy.record(b_d, d.dst_spend, e_d, n_d);
        b_s = n_s;
        b_d = n_d;

        let next = u.next(d.outcome, k);
        if tracking {
            attempts += 1;
            let bt = &mut batches[bi];
            if next == RetxState::ACKED {
                bt.finished += 1.0;
                bt.succeeded += 1.0;
                bt.attempts += attempts as f64;
                attempt_sq += (attempts as f64).powi(2);
                tracking = false;
            } else if next == RetxState::DROPPED {
                bt.finished += 1.0;
                bt.dropped += 1.0;
                tracking = false;
            }
        }
        u = next;
    }
    src_energy.final_level = b_s;
    dst_energy.final_level = b_d;

    let sum = batches.iter().fold(Batch::default(), |a, b| Batch {
        slots: a.slots + b.slots,
        src_ready: a.src_ready + b.src_ready,
        dst_ready: a.dst_ready + b.dst_ready,
        both_ready: a.both_ready + b.both_ready,
        finished: a.finished + b.finished,
        dropped: a.dropped + b.dropped,
        succeeded: a.succeeded + b.succeeded,
        attempts: a.attempts + b.attempts,
    });
    let batches: Vec<Batch> = batches.into_iter().filter(|b| b.slots > 0.0).collect();

    let p_out = proportion(sum.dropped, sum.finished, ratio_se(&batches, |b| b.dropped, |b| b.finished));
    let tau = if sum.succeeded > 0.0 {
        let mean = sum.attempts / sum.succeeded;
        let var = (attempt_sq / sum.succeeded - mean * mean).max(0.0);
        let naive = (var / sum.succeeded).sqrt();
        Estimate { value: mean, se: max_se(naive, ratio_se(&batches, |b| b.attempts, |b| b.succeeded)) }
    } else {
        Estimate { value: f64::NAN, se: f64::NAN }
    };
    let slot_se = |f: fn(&Batch) -> f64| ratio_se(&batches, f, |b| b.slots);
    let psi_s = proportion(sum.src_ready, sum.slots, slot_se(|b| b.src_ready));
    let psi_d = proportion(sum.dst_ready, sum.slots, slot_se(|b| b.dst_ready));
    let psi_joint = proportion(sum.both_ready, sum.slots, slot_se(|b| b.both_ready));

    Ok(SimResult {
        seed,
        n_slots: opts.n_slots,
        burn_in: opts.burn_in,
        n_packets: sum.finished as u64,
        n_success: sum.succeeded as u64,
        n_outage: sum.dropped as u64,
        p_out,
        tau,
        psi_s,
        psi_d,
        psi_joint,
        src_energy,
        dst_energy,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEstimate {
    pub psi_s: Estimate,
    pub psi_d: Estimate,
    pub psi_joint: Estimate,
}

/// Frequencies of {B_S >= threshold}, {B_D >= readiness} and both.
pub fn estimate_psi(
    cfg: &LinkConfig,
    profile: &EnergyProfile,
    spec: &PolicySpec,
    opts: &SimOptions,
    seed: u64,
) -> Result<PsiEstimate> {
    let r = simulate(cfg, profile, spec, opts, seed)?;
    Ok(PsiEstimate { psi_s: r.psi_s, psi_d: r.psi_d, psi_joint: r.psi_joint })
}

/// Runs `replicas` independent simulations with seeds `seed + i`.
pub fn simulate_replicas(
    cfg: &LinkConfig,
    profile: &EnergyProfile,
    spec: &PolicySpec,
    opts: &SimOptions,
    seed: u64,
    replicas: u32,
) -> Result<Vec<SimResult>> {
    (0..replicas as u64).into_par_iter().map(|i| simulate(cfg, profile, spec, opts, seed.wrapping_add(i))).collect()
}

/// Pooled summary of independent replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub replicas: usize,
    pub n_packets: u64,
    pub p_out: Estimate,
    pub tau: Estimate,
    pub psi_s: Estimate,
    pub psi_d: Estimate,
    pub psi_joint: Estimate,
}

fn pool(xs: &[SimResult], f: impl Fn(&SimResult) -> (Estimate, f64)) -> Estimate {
    let mut w_sum = 0.0;
    let mut v_sum = 0.0;
    let mut var_sum = 0.0;
    for r in xs {
        let (e, w) = f(r);
        if w > 0.0 && !e.value.is_nan() {
            w_sum += w;
            v_sum += w * e.value;
            var_sum += (w * e.se).powi(2);
        }
    }
    if w_sum <= 0.0 {
        return Estimate { value: f64::NAN, se: f64::NAN };
    }
    Estimate { value: v_sum / w_sum, se: var_sum.sqrt() / w_sum }
}

/// Weights each replica by the amount of data behind each estimate.
pub fn aggregate(results: &[SimResult]) -> Aggregate {
    Aggregate {
        replicas: results.len(),
        n_packets: results.iter().map(|r| r.n_packets).sum(),
        p_out: pool(results, |r| (r.p_out, r.n_packets as f64)),
        tau: pool(results, |r| (r.tau, r.n_success as f64)),
        psi_s: pool(results, |r| (r.psi_s, r.n_slots as f64)),
        psi_d: pool(results, |r| (r.psi_d, r.n_slots as f64)),
        psi_joint: pool(results, |r| (r.psi_joint, r.n_slots as f64)),
    }
}
