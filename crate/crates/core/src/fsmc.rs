//! Finite-battery analysis over the chain of (source battery, destination
//! battery, retransmission state).
//!
//! Energies are quantized to multiples of the configured quantum, so battery
//! levels are grid indices `0..=B_max/E`. Each state has at most eight
//! successors: four joint arrival outcomes times good/bad channel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{on_grid, EnergyProfile, LinkConfig, RetxState};
use crate::policy::{LinkController, PolicySpec};

/// Joint pmf of the harvested pair: index 0 = (0, 0), 1 = (0, E_D),
/// 2 = (E_S, 0), 3 = (E_S, E_D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalPmf {
    pub mu: [f64; 4],
}

const PMF_TOL: f64 = 1e-12;

impl ArrivalPmf {
    /// Correlated Bernoulli pair with marginals `mu_s`, `mu_d` and
    /// correlation coefficient `rho`.
    pub fn correlated(mu_s: f64, mu_d: f64, rho: f64) -> Result<Self> {
        for (name, mu) in [("mu_s", mu_s), ("mu_d", mu_d)] {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::Domain { name, value: mu, reason: "must lie in [0, 1]" });
            }
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Domain { name: "rho", value: rho, reason: "must lie in [-1, 1]" });
        }
        let both = mu_s * mu_d + rho * (mu_s * (1.0 - mu_s) * mu_d * (1.0 - mu_d)).sqrt();
        let lo = (mu_s + mu_d - 1.0).max(0.0);
        let hi = mu_s.min(mu_d);
        if both < lo - PMF_TOL || both > hi + PMF_TOL {
            return Err(Error::Invalid(vec![format!(
                "rho = {rho} is infeasible for mu_s = {mu_s}, mu_d = {mu_d}: joint arrival probability {both} outside [{lo}, {hi}]"
            )]));
        }
        let mu3 = both.clamp(lo, hi);
        let mu2 = (mu_s - mu3).max(0.0);
        let mu1 = (mu_d - mu3).max(0.0);
        let mu0 = (1.0 - mu1 - mu2 - mu3).max(0.0);
        Ok(ArrivalPmf { mu: [mu0, mu1, mu2, mu3] })
    }

    pub fn marginals(&self) -> (f64, f64) {
        (self.mu[2] + self.mu[3], self.mu[1] + self.mu[3])
    }
}

/// Arrival pmf for the chain, which additionally requires mu_1 = mu_2
/// (equal harvesting probabilities; the means differ through the peaks).
pub fn arrival_pmf(mu_s: f64, mu_d: f64, rho: f64) -> Result<ArrivalPmf> {
    if (mu_s - mu_d).abs() > PMF_TOL {
        return Err(Error::Invalid(vec![format!(
            "mu_s = {mu_s} and mu_d = {mu_d} must be equal (mu_1 = mu_2); set the means through e_s_max / e_d_max"
        )]));
    }
    ArrivalPmf::correlated(mu_s, mu_d, rho)
}

/// Indexing of (b_S, b_D, u) triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    /// Battery levels per node, B_max / E + 1.
    pub levels: usize,
    pub retry_limit: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainState {
    pub b_src: usize,
    pub b_dst: usize,
    pub u: RetxState,
}

impl StateSpace {
    pub fn u_count(&self) -> usize {
        self.retry_limit as usize + 1
    }

    pub fn len(&self) -> usize {
        self.levels * self.levels * self.u_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: ChainState) -> usize {
        (s.b_src * self.levels + s.b_dst) * self.u_count() + s.u.index()
    }

    pub fn state(&self, i: usize) -> ChainState {
        let uc = self.u_count();
        let u = RetxState::from_index(i % uc);
        let rest = i / uc;
        ChainState { b_src: rest / self.levels, b_dst: rest % self.levels, u }
    }
}

/// Sparse row-stochastic matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl TransitionKernel {
    /// Builds a kernel from per-row successor lists. Duplicate targets within
    /// a row are merged.
    pub fn from_rows<I>(rows: I) -> Self
    where
        I: IntoIterator<Item = Vec<(usize, f64)>>,
    {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let start = cols.len();
            for (j, p) in row {
                if p == 0.0 {
                    continue;
                }
                if cols.len() > start && *cols.last().unwrap() == j as u32 {
                    *vals.last_mut().unwrap() += p;
                } else {
                    cols.push(j as u32);
                    vals.push(p);
                }
            }
            row_ptr.push(cols.len());
        }
        TransitionKernel { row_ptr, cols, vals }
    }

    pub fn n_states(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_entries(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&j, &p)| (j as usize, p))
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, p)| p).sum()
    }

    pub fn max_row_len(&self) -> usize {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// out = dist * T.
    fn apply(&self, dist: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for k in a..b {
                out[self.cols[k] as usize] += w * self.vals[k];
            }
        }
    }

    /// L1 norm of dist * T - dist.
    pub fn balance_residual(&self, dist: &[f64]) -> f64 {
        let mut next = vec![0.0; dist.len()];
        self.apply(dist, &mut next);
        next.iter().zip(dist).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Default cap on the number of chain states.
pub const DEFAULT_MAX_STATES: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct Chain {
    pub space: StateSpace,
    pub kernel: TransitionKernel,
    /// Grid roundings applied to receiver costs.
    pub notes: Vec<String>,
}

fn grid_units(name: &str, value: f64, quantum: f64) -> Result<usize> {
    if !on_grid(value, quantum) || value < 0.0 {
        return Err(Error::OffGrid { name: name.to_string(), value, quantum });
    }
    Ok((value / quantum).round() as usize)
}

pub fn build_chain(cfg: &LinkConfig, profile: &EnergyProfile, spec: &PolicySpec) -> Result<Chain> {
    build_chain_capped(cfg, profile, spec, DEFAULT_MAX_STATES)
}

pub fn build_chain_capped(
    cfg: &LinkConfig,
    profile: &EnergyProfile,
    spec: &PolicySpec,
    max_states: usize,
) -> Result<Chain> {
    let cap = match cfg.battery_cap {
        crate::model::Capacity::Finite(c) => c,
        crate::model::Capacity::Unbounded => {
            return Err(Error::Invalid(vec!["the chain needs a finite b_max".to_string()]))
        }
    };
    profile.validate()?;
    let ctl = LinkController::new(cfg, spec, true)?;
    let q = cfg.quantum;
    let top = grid_units("b_max", cap, q)?;
    let peak_s = grid_units("e_s_max", profile.peak_src, q)?;
    let peak_d = grid_units("e_d_max", profile.peak_dst, q)?;
    let pmf = arrival_pmf(profile.bern_src, profile.bern_dst, profile.correlation)?;

    let space = StateSpace { levels: top + 1, retry_limit: cfg.retry_limit };
    if space.len() > max_states {
        return Err(Error::StateSpaceTooLarge { states: space.len(), cap: max_states });
    }

    let arrivals = [(0, 0), (0, peak_d), (peak_s, 0), (peak_s, peak_d)];
    let k = cfg.retry_limit;
    let rows = (0..space.len()).map(|i| {
        let s = space.state(i);
        let p = ctl.outage_prob(s.u);
        let mut row = Vec::with_capacity(8);
        for (channel_ok, pc) in [(true, 1.0 - p), (false, p)] {
            if pc == 0.0 {
                continue;
            }
            let d = ctl.decide(s.b_src as f64 * q, s.b_dst as f64 * q, s.u, channel_ok);
            let spend_s = (d.src_spend / q).round() as usize;
            let spend_d = (d.dst_spend / q).round() as usize;
            let u_next = s.u.next(d.outcome, k);
            for (a, &(es, ed)) in arrivals.iter().enumerate() {
                let pa = pmf.mu[a];
                if pa == 0.0 {
                    continue;
                }
                let next = ChainState {
                    b_src: (s.b_src - spend_s + es).min(top),
                    b_dst: (s.b_dst - spend_d + ed).min(top),
                    u: u_next,
                };
                row.push((space.index(next), pc * pa));
            }
        }
        row
    });
    let kernel = TransitionKernel::from_rows(rows);
    Ok(Chain { space, kernel, notes: ctl.notes })
}

/// The (K+1)-state retransmission chain of a link whose batteries never run
/// dry, with per-attempt channel outage `p`.
pub fn retransmission_kernel(p: f64, retry_limit: u32) -> TransitionKernel {
    let n = retry_limit as usize + 1;
    let rows = (0..n).map(|i| {
        let u = RetxState::from_index(i);
        let ok = RetxState::ACKED.index();
        let fail = u.next(crate::model::Outcome::Failure, retry_limit).index();
        vec![(ok, 1.0 - p), (fail, p)]
    });
    TransitionKernel::from_rows(rows)
}

/// Closed-form stationary distribution of [`retransmission_kernel`], ordered
/// u = -1, 0, 1, ..., K-1.
pub fn infinite_battery_stationary(p: f64, retry_limit: u32) -> Vec<f64> {
    let k = retry_limit as i32;
    // mass of the packet-start states u in {-1, 0}
    let start = if p < 1.0 { (1.0 - p) / (1.0 - p.powi(k)) } else { 1.0 / k as f64 };
    let mut pi = Vec::with_capacity(k as usize + 1);
    pi.push(start * (1.0 - p.powi(k)));
    pi.push(start * p.powi(k));
    for j in 1..k {
        pi.push(start * p.powi(j));
    }
    pi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the L1 change between iterates falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-12, max_iter: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pub pi: Vec<f64>,
    pub iterations: usize,
    /// L1 balance residual of the returned vector.
    pub residual: f64,
    /// Number of states carrying positive mass.
    pub support: usize,
}

/// Power iteration from a point mass on `seed`. Mass stays on the states
/// reachable from the seed, so transient or unreachable battery levels do not
/// need to be pruned first.
///
/// Iterates on the lazy kernel (I + T) / 2, which has the same stationary
/// vectors and is aperiodic even when T is not (deterministic harvests can
/// make battery levels cycle).
pub fn stationary(kernel: &TransitionKernel, seed: usize, opts: SolverOptions) -> Result<StationaryDist> {
    let n = kernel.n_states();
    if seed >= n {
        return Err(Error::Domain { name: "seed_state", value: seed as f64, reason: "out of range" });
    }
    let mut pi = vec![0.0; n];
    pi[seed] = 1.0;
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        kernel.apply(&pi, &mut next);
        let mut total = 0.0;
        for (x, &old) in next.iter_mut().zip(&pi) {
            *x = 0.5 * (*x + old);
            total += *x;
        }
        change = 0.0;
        for (x, old) in next.iter_mut().zip(pi.iter()) {
            *x /= total;
            change += (*x - old).abs();
        }
        std::mem::swap(&mut pi, &mut next);
        // a lazy step moves half as far as a full one
        if 2.0 * change < opts.tol {
            let residual = kernel.balance_residual(&pi);
            let support = pi.iter().filter(|&&x| x > 0.0).count();
            return Ok(StationaryDist { pi, iterations: it, residual, support });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, residual: 2.0 * change })
}

/// Stationary mass of each retransmission state, ordered u = -1, 0, ..., K-1.
pub fn retx_marginal(dist: &StationaryDist, space: &StateSpace) -> Vec<f64> {
    let uc = space.u_count();
    let mut m = vec![0.0; uc];
    for (i, &w) in dist.pi.iter().enumerate() {
        m[i % uc] += w;
    }
    m
}

/// Fraction of finished packets that were dropped.
pub fn outage_from_stationary(dist: &StationaryDist, space: &StateSpace) -> Result<f64> {
    let m = retx_marginal(dist, space);
    let (acked, dropped) = (m[0], m[1]);
    if acked + dropped <= 0.0 {
        return Err(Error::NoCompletedPackets);
    }
    Ok(dropped / (acked + dropped))
}

/// Mean number of attempts of a successfully delivered packet.
pub fn avg_transmissions(dist: &StationaryDist, kernel: &TransitionKernel, space: &StateSpace) -> Result<f64> {
    let uc = space.u_count();
    let acked = RetxState::ACKED.index();
    // stationary flow into u = -1 out of each retransmission state
    let mut flow = vec![0.0; uc];
    for (i, &w) in dist.pi.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let into_acked: f64 = kernel.row(i).filter(|&(j, _)| j % uc == acked).map(|(_, p)| p).sum();
        flow[i % uc] += w * into_acked;
    }
    let pi_acked: f64 = retx_marginal(dist, space)[acked];
    if pi_acked <= 0.0 {
        return Err(Error::NoCompletedPackets);
    }
    let weighted: f64 = (2..uc).map(|idx| RetxState::from_index(idx).value() as f64 * flow[idx]).sum();
    Ok(1.0 + weighted / pi_acked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsmcReport {
    pub p_out: f64,
    pub tau: f64,
    pub states: usize,
    pub support: usize,
    pub iterations: usize,
    pub residual: f64,
    pub notes: Vec<String>,
}

/// Builds and solves the chain, seeded at empty batteries with u = -1.
pub fn evaluate(cfg: &LinkConfig, profile: &EnergyProfile, spec: &PolicySpec) -> Result<FsmcReport> {
    let chain = build_chain(cfg, profile, spec)?;
    let seed = chain.space.index(ChainState { b_src: 0, b_dst: 0, u: RetxState::ACKED });
    let dist = stationary(&chain.kernel, seed, SolverOptions::default())?;
    let p_out = outage_from_stationary(&dist, &chain.space)?;
    let tau = avg_transmissions(&dist, &chain.kernel, &chain.space)?;
    Ok(FsmcReport {
        p_out,
        tau,
        states: chain.space.len(),
        support: dist.support,
        iterations: dist.iterations,
        residual: dist.residual,
        notes: chain.notes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub p_s: f64,
    pub result: std::result::Result<(f64, f64), Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub p_s: f64,
    pub p_tx: f64,
    pub p_out: f64,
    pub tau: f64,
    pub curve: Vec<ScanPoint>,
}

/// One-dimensional threshold search over the source grid
/// {P_CS + E, ..., B_max}. For the linear policy the starting level is
/// searched with the step held fixed. Ties go to the larger threshold.
pub fn search_threshold(cfg: &LinkConfig, profile: &EnergyProfile, spec: &PolicySpec) -> Result<SearchResult> {
    let cap = match cfg.battery_cap {
        crate::model::Capacity::Finite(c) => c,
        crate::model::Capacity::Unbounded => {
            return Err(Error::Invalid(vec!["threshold search needs a finite b_max".to_string()]))
        }
    };
    let q = cfg.quantum;
    let lo = grid_units("p_cs", cfg.circuit_power, q)? + 1;
    let hi = grid_units("b_max", cap, q)?;
    let grid: Vec<f64> = (lo..=hi).map(|i| i as f64 * q).collect();

    let curve: Vec<ScanPoint> = grid
        .par_iter()
        .map(|&p_s| {
            let s = PolicySpec { source: spec.source.with_base_threshold(p_s), ..*spec };
            let result = evaluate(cfg, profile, &s).map(|r| (r.p_out, r.tau));
            ScanPoint { p_s, result }
        })
        .collect();

    let best = best_point(&curve);
    match best {
        Some((p_s, p_out, tau)) => Ok(SearchResult { p_s, p_tx: cfg.tx_power(p_s)?, p_out, tau, curve }),
        None => {
            let why = curve
                .first()
                .and_then(|pt| pt.result.as_ref().err().map(|e| e.to_string()))
                .unwrap_or_else(|| "empty grid".to_string());
            Err(Error::ScanFailed(why))
        }
    }
}

/// Smallest outage among the successful scan points; on a tie the larger
/// threshold wins.
fn best_point(curve: &[ScanPoint]) -> Option<(f64, f64, f64)> {
    curve.iter().filter_map(|pt| pt.result.as_ref().ok().map(|&(p, t)| (pt.p_s, p, t))).reduce(|a, b| {
        if b.1 < a.1 || (b.1 == a.1 && b.0 > a.0) {
            b
        } else {
            a
        }
    })
}
