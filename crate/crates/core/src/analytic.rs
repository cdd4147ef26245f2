//! Closed-form results for unbounded batteries.
//!
//! Long-run availability probabilities of the source and destination, the
//! joint availability under each information-sharing variant, the optimal
//! thresholds, and the retransmission lower bound. Where no closed form
//! exists the functions say so instead of extrapolating.

use crate::error::{Error, Result};
use crate::model::{EnergyProfile, LinkConfig};
use crate::policy::{PolicySpec, ReceiverMode, SourcePolicy};

/// `num / den` with a vanishing denominator read as an unbounded ratio.
fn ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { name, value: x, reason: "must be > 0" })
    }
}

fn check_unit(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain { name, value: x, reason: "must lie in [0, 1]" })
    }
}

/// Transmission probability of the source under a threshold policy.
pub fn psi_source(lambda_s: f64, p_s: f64) -> Result<f64> {
    check_positive("p_s", p_s)?;
    Ok((lambda_s / p_s).min(1.0))
}

/// Receiving probability of an always-on destination.
pub fn psi_dest(lambda_d: f64, p_d: f64) -> Result<f64> {
    check_positive("p_d", p_d)?;
    Ok((lambda_d / p_d).min(1.0))
}

/// Joint availability under the disjoint policy with independent arrivals.
pub fn psi_joint_disjoint(lambda_s: f64, p_s: f64, lambda_d: f64, p_d: f64) -> Result<f64> {
    check_positive("p_s", p_s)?;
    check_positive("p_d", p_d)?;
    let a = lambda_s / p_s;
    let b = lambda_d / p_d;
    Ok(1f64.min(a).min(b).min(a * b))
}

/// Joint availability under the joint policy; independent of the arrival
/// correlation.
pub fn psi_joint_policy(lambda_s: f64, p_s: f64, lambda_d: f64, p_d: f64) -> Result<f64> {
    check_positive("p_s", p_s)?;
    check_positive("p_d", p_d)?;
    Ok(1f64.min(lambda_s / p_s).min(lambda_d / p_d))
}

/// Destination availability with detection cost `xi`.
pub fn psi_dest_detection(lambda_d: f64, p_d: f64, xi: f64, psi_s: f64) -> Result<f64> {
    check_positive("p_d", p_d)?;
    check_unit("xi", xi)?;
    check_unit("psi_s", psi_s)?;
    let load = 1.0 - (1.0 - xi) * (1.0 - psi_s);
    Ok(ratio(lambda_d, load * p_d).min(1.0))
}

/// Destination availability with detection and processing; readiness is
/// measured against `p_f`.
pub fn psi_dest_detection_processing(
    lambda_d: f64,
    p_f: f64,
    xi: f64,
    eta: f64,
    psi_s: f64,
    p_outage: f64,
) -> Result<f64> {
    check_positive("p_f", p_f)?;
    check_unit("xi", xi)?;
    check_unit("psi_s", psi_s)?;
    check_unit("p_outage", p_outage)?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain { name: "eta", value: eta, reason: "must lie in (0, 1]" });
    }
    let load = 1.0 - (1.0 - xi * eta) * (1.0 - psi_s) - (1.0 - eta) * p_outage * psi_s;
    Ok(ratio(lambda_d, load * p_f).min(1.0))
}

/// Variants where the destination knows the source policy and uses its CSI
/// to skip slots in outage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsiVariant {
    /// Disjoint policy, independent arrivals: joint availability.
    Disjoint { lambda_s: f64, p_s: f64, lambda_d: f64, p_d: f64, p_outage: f64 },
    /// Joint policy (full BSI and CSI sharing): joint availability.
    Joint { lambda_s: f64, p_s: f64, lambda_d: f64, p_d: f64, p_outage: f64 },
    /// Disjoint policy with detection and processing: destination
    /// availability.
    DetectionProcessing { lambda_d: f64, p_f: f64, xi: f64, eta: f64, psi_s: f64, p_outage: f64 },
}

pub fn psi_csi_aware(variant: CsiVariant) -> Result<f64> {
    match variant {
        CsiVariant::Disjoint { lambda_s, p_s, lambda_d, p_d, p_outage } => {
            check_positive("p_s", p_s)?;
            check_positive("p_d", p_d)?;
            check_unit("p_outage", p_outage)?;
            let good = 1.0 - p_outage;
            let a = lambda_s / p_s;
            let b = ratio(lambda_d, p_d * good);
            let ab = ratio(lambda_s * lambda_d, p_s * p_d * good);
            Ok(1f64.min(a).min(b).min(ab))
        }
        CsiVariant::Joint { lambda_s, p_s, lambda_d, p_d, p_outage } => {
            check_positive("p_s", p_s)?;
            check_positive("p_d", p_d)?;
            check_unit("p_outage", p_outage)?;
            let good = 1.0 - p_outage;
            Ok(1f64.min(ratio(lambda_s, good * p_s)).min(ratio(lambda_d, good * p_d)))
        }
        CsiVariant::DetectionProcessing { lambda_d, p_f, xi, eta, psi_s, p_outage } => {
            check_positive("p_f", p_f)?;
            check_unit("xi", xi)?;
            check_unit("psi_s", psi_s)?;
            check_unit("p_outage", p_outage)?;
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Domain { name: "eta", value: eta, reason: "must lie in (0, 1]" });
            }
            let load = (1.0 - (1.0 - xi * eta) * (1.0 - psi_s)) * (1.0 - p_outage);
            Ok(ratio(lambda_d, load * p_f).min(1.0))
        }
    }
}

/// c = (2^R - 1)(1 + alpha) z.
pub fn c_const(rate: f64, noise: f64, alpha: f64) -> f64 {
    (rate.exp2() - 1.0) * (1.0 + alpha) * noise
}

/// Budget threshold below which transmitting at a reduced duty cycle beats
/// spending the mean harvest every slot: the larger root of
/// (P - P_CS)^2 = c P.
pub fn b_threshold(rate: f64, noise: f64, alpha: f64, p_cs: f64) -> f64 {
    let c = c_const(rate, noise, alpha);
    0.5 * ((2.0 * p_cs + c) + (c * (4.0 * p_cs + c)).sqrt())
}

pub fn optimal_threshold_disjoint(lambda_s: f64, rate: f64, noise: f64, alpha: f64, p_cs: f64) -> f64 {
    lambda_s.max(b_threshold(rate, noise, alpha, p_cs))
}

pub fn optimal_threshold_joint(
    lambda_s: f64,
    lambda_d: f64,
    p_d: f64,
    rate: f64,
    noise: f64,
    alpha: f64,
    p_cs: f64,
) -> f64 {
    let matched = if lambda_d > 0.0 { lambda_s * p_d / lambda_d } else { f64::INFINITY };
    optimal_threshold_disjoint(lambda_s, rate, noise, alpha, p_cs).max(matched)
}

/// Bisection on a bracket where `f(lo) < 0 < f(hi)`. Stops once the bracket
/// is narrower than `tol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(Error::NotBracketed { lo, hi });
    }
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bracket tolerance of the joint-policy CSI threshold, in mW.
pub const ROOT_TOL: f64 = 1e-6;

/// Optimal joint-policy threshold with full CSI and BSI sharing: the crossing
/// of exp(-c / (P - P_CS)) (increasing) and lambda_s / P (decreasing).
pub fn optimal_threshold_joint_csi(lambda_s: f64, rate: f64, noise: f64, alpha: f64, p_cs: f64) -> Result<f64> {
    check_positive("lambda_s", lambda_s)?;
    let c = c_const(rate, noise, alpha);
    let f = |p: f64| (-c / (p - p_cs)).exp() - lambda_s / p;
    let lo = p_cs + 1e-9 * p_cs.max(1.0);
    let mut hi = p_cs + c.max(lambda_s).max(1.0);
    let mut doublings = 0;
    while f(hi) <= 0.0 {
        hi = p_cs + 2.0 * (hi - p_cs);
        doublings += 1;
        if doublings > 200 {
            return Err(Error::NotBracketed { lo, hi });
        }
    }
    bisect(f, lo, hi, ROOT_TOL)
}

/// Per-slot success probability: channel success at the threshold's transmit
/// power times the joint availability.
pub fn per_slot_success(p_s: f64, psi_joint: f64, rate: f64, noise: f64, alpha: f64, p_cs: f64) -> f64 {
    if p_s <= p_cs || psi_joint <= 0.0 {
        return 0.0;
    }
    let p_tx = (p_s - p_cs) / (1.0 + alpha);
    (-(rate.exp2() - 1.0) * noise / p_tx).exp() * psi_joint
}

/// Outage probability of the non-harvesting counterpart link with K
/// independent attempts.
pub fn fading_outage_lower_bound(phi: f64, retry_limit: u32) -> f64 {
    (1.0 - phi).powi(retry_limit as i32)
}

/// Largest bit arrival rate a backlogged link keeps stable.
pub fn stable_arrival_rate(rate: f64, p_out: f64) -> f64 {
    rate * (1.0 - p_out)
}

/// Starting level for the linear power levels policy, as a fraction of the
/// disjoint optimum.
pub const LINEAR_START_FRACTION: f64 = 0.8;

pub fn linear_start_heuristic(p_star: f64) -> f64 {
    LINEAR_START_FRACTION * p_star
}

/// How a reported joint availability was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiBasis {
    Exact,
    /// Psi_S * Psi_D used where detection couples the two batteries.
    ProductApprox,
    /// No closed form; use the Markov chain or the simulator.
    Unavailable,
}

impl PsiBasis {
    pub fn name(&self) -> &'static str {
        match self {
            PsiBasis::Exact => "exact",
            PsiBasis::ProductApprox => "product-approx",
            PsiBasis::Unavailable => "unavailable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticReport {
    pub psi_s: Option<f64>,
    pub psi_d: Option<f64>,
    pub psi_joint: Option<f64>,
    pub psi_basis: PsiBasis,
    /// Channel outage probability at the policy's base threshold.
    pub p_outage: f64,
    pub phi: Option<f64>,
    pub p_out_lower_bound: Option<f64>,
    pub optimal_p_s: f64,
    pub optimal_basis: &'static str,
    pub b_th: f64,
    pub c_const: f64,
}

/// Evaluates every closed form that applies to `spec` at its base threshold.
pub fn analyze(cfg: &LinkConfig, profile: &EnergyProfile, spec: &PolicySpec) -> Result<AnalyticReport> {
    cfg.validate()?;
    profile.validate()?;
    spec.validate(cfg)?;

    let (ls, ld) = (profile.mean_src, profile.mean_dst);
    let (pd, pf) = (cfg.rx_power, cfg.processing_total);
    let (xi, eta) = (cfg.detect_frac, cfg.rx_frac);
    let independent = profile.correlation == 0.0;
    let ps = spec.source.base_threshold();
    let p = cfg.outage_at_budget(ps);
    let b_th = b_threshold(cfg.rate, cfg.noise, cfg.amp_slope, cfg.circuit_power);

    let source = match spec.source {
        SourcePolicy::Linear { start, step: 0.0 } => SourcePolicy::Disjoint { threshold: start },
        s => s,
    };

    let (psi_s, psi_d, psi_joint, psi_basis) = match source {
        SourcePolicy::Disjoint { .. } => {
            let psi_s = psi_source(ls, ps)?;
            let (psi_d, plain) = match spec.receiver {
                ReceiverMode::AlwaysOn => (psi_dest(ld, pd)?, true),
                ReceiverMode::Detection => (psi_dest_detection(ld, pd, xi, psi_s)?, xi == 1.0),
                ReceiverMode::DetectionProcessing => {
                    (psi_dest_detection_processing(ld, pf, xi, eta, psi_s, p)?, xi == 1.0 && eta == 1.0)
                }
                ReceiverMode::CsiAware => (
                    psi_csi_aware(CsiVariant::DetectionProcessing {
                        lambda_d: ld,
                        p_f: pf,
                        xi,
                        eta,
                        psi_s,
                        p_outage: p,
                    })?,
                    xi == 1.0 && eta == 1.0,
                ),
            };
            let saturated = psi_s >= 1.0 || psi_d >= 1.0;
            let (joint, basis) = if saturated {
                (Some(psi_s * psi_d), PsiBasis::Exact)
            } else if !independent {
                (None, PsiBasis::Unavailable)
            } else if plain {
                (Some(psi_s * psi_d), PsiBasis::Exact)
            } else {
                (Some(psi_s * psi_d), PsiBasis::ProductApprox)
            };
            (Some(psi_s), Some(psi_d), joint, basis)
        }
        SourcePolicy::Joint { .. } => match spec.receiver {
            ReceiverMode::AlwaysOn | ReceiverMode::Detection => {
                (None, None, Some(psi_joint_policy(ls, ps, ld, pd)?), PsiBasis::Exact)
            }
            ReceiverMode::DetectionProcessing if eta == 1.0 => {
                (None, None, Some(psi_joint_policy(ls, ps, ld, pd)?), PsiBasis::Exact)
            }
            ReceiverMode::CsiAware if eta == 1.0 => (
                None,
                None,
                Some(psi_csi_aware(CsiVariant::Joint { lambda_s: ls, p_s: ps, lambda_d: ld, p_d: pd, p_outage: p })?),
                PsiBasis::Exact,
            ),
            _ => (None, None, None, PsiBasis::Unavailable),
        },
        SourcePolicy::Linear { .. } => (None, None, None, PsiBasis::Unavailable),
    };

    let phi = psi_joint.map(|psi| (1.0 - p) * psi);
    let p_out_lower_bound = phi.map(|phi| fading_outage_lower_bound(phi, cfg.retry_limit));

    let disjoint_opt = optimal_threshold_disjoint(ls, cfg.rate, cfg.noise, cfg.amp_slope, cfg.circuit_power);
    let (optimal_p_s, optimal_basis) = match (spec.source, spec.receiver) {
        (SourcePolicy::Disjoint { .. }, _) => (disjoint_opt, "disjoint"),
        (SourcePolicy::Joint { .. }, ReceiverMode::CsiAware) => {
            (optimal_threshold_joint_csi(ls, cfg.rate, cfg.noise, cfg.amp_slope, cfg.circuit_power)?, "joint-csi-root")
        }
        (SourcePolicy::Joint { .. }, _) => {
            (optimal_threshold_joint(ls, ld, pd, cfg.rate, cfg.noise, cfg.amp_slope, cfg.circuit_power), "joint")
        }
        (SourcePolicy::Linear { .. }, _) => (linear_start_heuristic(disjoint_opt), "linear-heuristic"),
    };

    Ok(AnalyticReport {
        psi_s,
        psi_d,
        psi_joint,
        psi_basis,
        p_outage: p,
        phi,
        p_out_lower_bound,
        optimal_p_s,
        optimal_basis,
        b_th,
        c_const: cfg.c_const(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // reference link: R = 2, z = 100, alpha = 1, P_CS = 100.
    const FIG3: (f64, f64, f64, f64) = (2.0, 100.0, 1.0, 100.0);

    #[test]
    fn psi_examples() {
        assert_eq!(psi_source(500.0, 1000.0).unwrap(), 0.5);
        assert_eq!(psi_source(1000.0, 500.0).unwrap(), 1.0);
        assert!(close(psi_source(500.0, 787.3).unwrap(), 0.635_081_925_568, 1e-9));
        assert!(psi_source(500.0, 0.0).is_err());

        assert!(close(psi_dest(500.0, 700.0).unwrap(), 0.714_285_714_286, 1e-9));
        assert_eq!(psi_dest(700.0, 700.0).unwrap(), 1.0);
        assert_eq!(psi_dest(0.0, 700.0).unwrap(), 0.0);
    }

    #[test]
    fn joint_examples() {
        assert!(close(psi_joint_disjoint(500.0, 1000.0, 500.0, 700.0).unwrap(), 0.357_142_857_143, 1e-9));
        assert_eq!(psi_joint_disjoint(1000.0, 500.0, 700.0, 700.0).unwrap(), 1.0);
        assert!(close(psi_joint_disjoint(500.0, 787.3, 700.0, 700.0).unwrap(), 0.635_081_925_568, 1e-9));

        assert_eq!(psi_joint_policy(500.0, 1000.0, 500.0, 700.0).unwrap(), 0.5);
        assert!(close(psi_joint_policy(500.0, 700.0, 500.0, 700.0).unwrap(), 0.714_285_714_286, 1e-9));
        assert!(close(psi_joint_policy(900.0, 700.0, 500.0, 700.0).unwrap(), 0.714_285_714_286, 1e-9));
    }

    #[test]
    fn detection_examples() {
        assert!(close(psi_dest_detection(500.0, 700.0, 1.0, 0.5).unwrap(), 0.714_285_714_286, 1e-9));
        assert!(close(psi_dest_detection(500.0, 700.0, 0.5, 0.5).unwrap(), 0.952_380_952_381, 1e-9));
        assert_eq!(psi_dest_detection(700.0, 700.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(psi_dest_detection(500.0, 700.0, 1.5, 0.5).is_err());
    }

    #[test]
    fn processing_examples() {
        let p = 1.0 - (-1f64).exp();
        // mpmath: 500 / (1400 * 0.46696986029286...) = 0.76480922541526...
        let v = psi_dest_detection_processing(500.0, 1400.0, 0.5, 0.5, 0.5, p).unwrap();
        assert!(close(v, 0.764_809_225_415, 1e-9), "{v}");
        assert_eq!(
            psi_dest_detection_processing(500.0, 700.0, 0.3, 1.0, 0.4, p).unwrap(),
            psi_dest_detection(500.0, 700.0, 0.3, 0.4).unwrap()
        );
        assert!(close(psi_dest_detection_processing(500.0, 700.0, 0.3, 1.0, 1.0, 0.2).unwrap(), 500.0 / 700.0, 1e-15));
        assert!(psi_dest_detection_processing(500.0, 700.0, 0.3, 0.0, 1.0, 0.2).is_err());
    }

    #[test]
    fn csi_examples() {
        let a = psi_csi_aware(CsiVariant::Disjoint {
            lambda_s: 500.0,
            p_s: 1000.0,
            lambda_d: 500.0,
            p_d: 700.0,
            p_outage: 0.0,
        })
        .unwrap();
        assert_eq!(a, psi_joint_disjoint(500.0, 1000.0, 500.0, 700.0).unwrap());
        let b = psi_csi_aware(CsiVariant::Joint {
            lambda_s: 500.0,
            p_s: 700.0,
            lambda_d: 500.0,
            p_d: 700.0,
            p_outage: 0.3,
        })
        .unwrap();
        assert_eq!(b, 1.0);
        let c = psi_csi_aware(CsiVariant::DetectionProcessing {
            lambda_d: 500.0,
            p_f: 700.0,
            xi: 1.0,
            eta: 1.0,
            psi_s: 0.4,
            p_outage: 0.25,
        })
        .unwrap();
        assert!(close(c, 500.0 / (700.0 * 0.75), 1e-15));
        // a channel that is always in outage never costs D anything
        let d = psi_csi_aware(CsiVariant::Disjoint {
            lambda_s: 500.0,
            p_s: 1000.0,
            lambda_d: 500.0,
            p_d: 700.0,
            p_outage: 1.0,
        })
        .unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn threshold_examples() {
        let (r, z, a, pcs) = FIG3;
        assert!(close(b_threshold(r, z, a, pcs), 787.298_334_620_742, 1e-9));
        assert!(close(b_threshold(1.0, z, a, pcs), 373.205_080_756_888, 1e-9));
        // P_CS = 0, c = 600: roots {0, c}
        assert!(close(b_threshold(r, z, a, 0.0), 600.0, 1e-9));

        assert!(close(optimal_threshold_disjoint(500.0, r, z, a, pcs), 787.298_334_620_742, 1e-9));
        assert_eq!(optimal_threshold_disjoint(1000.0, r, z, a, pcs), 1000.0);
        assert!(close(optimal_threshold_joint(500.0, 500.0, 700.0, r, z, a, pcs), 787.298_334_620_742, 1e-9));
        assert_eq!(optimal_threshold_joint(1000.0, 500.0, 700.0, r, z, a, pcs), 1400.0);
        assert!(close(
            optimal_threshold_joint(500.0, 1e12, 700.0, r, z, a, pcs),
            optimal_threshold_disjoint(500.0, r, z, a, pcs),
            1e-9
        ));
    }

    #[test]
    fn joint_csi_root() {
        let (r, z, a, pcs) = FIG3;
        let root = optimal_threshold_joint_csi(500.0, r, z, a, pcs).unwrap();
        // mpmath findroot: 984.96214035520137
        assert!(close(root, 984.962_140_355, 1e-5), "{root}");
        let residual = (-600.0 / (root - pcs)).exp() - 500.0 / root;
        assert!(residual.abs() < 1e-9);
        let tiny = optimal_threshold_joint_csi(1e-6, r, z, a, pcs).unwrap();
        assert!(tiny > pcs && tiny < pcs + 100.0);
        assert!(optimal_threshold_joint_csi(0.0, r, z, a, pcs).is_err());
    }

    #[test]
    fn success_and_bounds() {
        let (r, z, a, pcs) = FIG3;
        assert_eq!(per_slot_success(800.0, 0.0, r, z, a, pcs), 0.0);
        assert_eq!(per_slot_success(100.0, 0.5, r, z, a, pcs), 0.0);
        // mpmath: 0.63508 * exp(-600 / 687.30) = 0.26527572169385
        assert!(close(per_slot_success(787.30, 0.63508, r, z, a, pcs), 0.265_275_721_694, 1e-9));
        // mpmath: (1 - 0.265697)^4 = 0.29073760604123
        assert!(close(fading_outage_lower_bound(0.265697, 4), 0.290_737_606_041, 1e-9));
        assert_eq!(fading_outage_lower_bound(0.0, 7), 1.0);
        assert_eq!(fading_outage_lower_bound(1.0, 3), 0.0);
        assert_eq!(stable_arrival_rate(2.0, 0.25), 1.5);
        assert_eq!(stable_arrival_rate(2.0, 1.0), 0.0);
        assert_eq!(stable_arrival_rate(1.0, 0.5f64.powi(4)), 0.9375);
    }

    #[test]
    fn b_th_solves_its_quadratic() {
        for &(r, z, a, pcs) in &[(2.0, 100.0, 1.0, 100.0), (1.0, 50.0, 0.5, 0.0), (3.5, 20.0, 2.0, 400.0)] {
            let b = b_threshold(r, z, a, pcs);
            let c = c_const(r, z, a);
            let lhs = (b - pcs).powi(2);
            assert!(((lhs - c * b) / (c * b)).abs() < 1e-6);
            assert!(b > pcs);
        }
    }

    #[test]
    fn disjoint_optimum_is_grid_argmax() {
        // oracle: brute-force scan of phi(P_S) = exp(-c/(P_S - P_CS)) * min(1, lambda/P_S)
        let (r, z, a, pcs) = FIG3;
        let c = c_const(r, z, a);
        for &lambda in &[200.0, 500.0, 787.0, 1000.0, 1500.0] {
            let step = 0.05;
            let mut best = (0.0, f64::NEG_INFINITY);
            let mut p = pcs + step;
            while p < 5000.0 {
                let v = (-c / (p - pcs)).exp() * (lambda / p).min(1.0);
                if v > best.1 {
                    best = (p, v);
                }
                p += step;
            }
            let opt = optimal_threshold_disjoint(lambda, r, z, a, pcs);
            assert!((best.0 - opt).abs() <= step, "lambda {lambda}: scan {} vs {opt}", best.0);
        }
    }

    #[test]
    fn joint_csi_root_is_grid_argmax() {
        let (r, z, a, pcs) = FIG3;
        let c = c_const(r, z, a);
        let lambda = 500.0;
        let step = 0.01;
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut p = pcs + step;
        while p < 3000.0 {
            let v = (-c / (p - pcs)).exp().min(lambda / p);
            if v > best.1 {
                best = (p, v);
            }
            p += step;
        }
        let root = optimal_threshold_joint_csi(lambda, r, z, a, pcs).unwrap();
        assert!((best.0 - root).abs() <= step);
    }

    #[test]
    fn analyze_fig3_disjoint() {
        let cfg = LinkConfig { battery_cap: crate::model::Capacity::Unbounded, ..LinkConfig::default() };
        let spec = PolicySpec::new(SourcePolicy::Disjoint { threshold: 800.0 }, ReceiverMode::AlwaysOn);
        let rep = analyze(&cfg, &EnergyProfile::default(), &spec).unwrap();
        assert!(close(rep.b_th, 787.298_334_620_742, 1e-9));
        assert_eq!(rep.c_const, 600.0);
        assert_eq!(rep.psi_basis, PsiBasis::Exact);
        assert!(close(rep.psi_joint.unwrap(), 0.625 * 500.0 / 700.0, 1e-12));
        let phi = rep.phi.unwrap();
        assert!(close(phi, (1.0 - rep.p_outage) * rep.psi_joint.unwrap(), 1e-15));
        assert!(close(rep.p_out_lower_bound.unwrap(), (1.0 - phi).powi(4), 1e-15));
    }

    #[test]
    fn analyze_labels_approximations() {
        let cfg =
            LinkConfig { detect_frac: 0.5, battery_cap: crate::model::Capacity::Unbounded, ..LinkConfig::default() };
        let spec = PolicySpec::new(SourcePolicy::Disjoint { threshold: 1000.0 }, ReceiverMode::Detection);
        let rep = analyze(&cfg, &EnergyProfile::default(), &spec).unwrap();
        assert_eq!(rep.psi_basis, PsiBasis::ProductApprox);

        let corr = EnergyProfile { correlation: 0.5, ..EnergyProfile::default() };
        let spec = PolicySpec::new(SourcePolicy::Disjoint { threshold: 1000.0 }, ReceiverMode::AlwaysOn);
        let rep = analyze(&cfg, &corr, &spec).unwrap();
        assert_eq!(rep.psi_basis, PsiBasis::Unavailable);
        assert!(rep.psi_joint.is_none());

        // correlated but one side saturated: closed form still holds
        let rich = EnergyProfile::bernoulli(0.5, 2000.0, 0.5, 1000.0, 0.5);
        let rep = analyze(&cfg, &rich, &spec).unwrap();
        assert_eq!(rep.psi_basis, PsiBasis::Exact);
        assert!(close(rep.psi_joint.unwrap(), 500.0 / 700.0, 1e-15));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reduction_chain(ld in 1.0f64..2000.0, pf in 100.0f64..2000.0, xi in 0.0f64..=1.0,
                               psi_s in 0.0f64..=1.0, p in 0.0f64..1.0,
                               ls in 1.0f64..2000.0, ps in 101.0f64..3000.0) {
                // processing with eta = 1 is detection
                let a = psi_dest_detection_processing(ld, pf, xi, 1.0, psi_s, p).unwrap();
                let b = psi_dest_detection(ld, pf, xi, psi_s).unwrap();
                prop_assert!((a - b).abs() <= 1e-12);
                // detection with xi = 1 is the always-on receiver
                let c = psi_dest_detection(ld, pf, 1.0, psi_s).unwrap();
                prop_assert!((c - psi_dest(ld, pf).unwrap()).abs() <= 1e-12);
                // policy-aware processing on a perfect channel is plain processing/detection
                let d = psi_csi_aware(CsiVariant::DetectionProcessing {
                    lambda_d: ld, p_f: pf, xi, eta: 1.0, psi_s, p_outage: 0.0 }).unwrap();
                prop_assert!((d - b).abs() <= 1e-12);
                // policy-aware variants on a perfect channel
                let e = psi_csi_aware(CsiVariant::Disjoint {
                    lambda_s: ls, p_s: ps, lambda_d: ld, p_d: pf, p_outage: 0.0 }).unwrap();
                prop_assert!((e - psi_joint_disjoint(ls, ps, ld, pf).unwrap()).abs() <= 1e-12);
                let f = psi_csi_aware(CsiVariant::Joint {
                    lambda_s: ls, p_s: ps, lambda_d: ld, p_d: pf, p_outage: 0.0 }).unwrap();
                prop_assert!((f - psi_joint_policy(ls, ps, ld, pf).unwrap()).abs() <= 1e-12);
                // theorem-1 product form
                let g = psi_source(ls, ps).unwrap() * psi_dest(ld, pf).unwrap();
                prop_assert!((g - psi_joint_disjoint(ls, ps, ld, pf).unwrap()).abs() <= 1e-12);
                let _ = p;
            }

            #[test]
            fn probabilities_in_unit_interval(ld in 0.0f64..5000.0, pf in 1.0f64..3000.0,
                                              xi in 0.0f64..=1.0, eta in 0.01f64..=1.0,
                                              psi_s in 0.0f64..=1.0, p in 0.0f64..=1.0) {
                let v = psi_dest_detection_processing(ld, pf, xi, eta, psi_s, p).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                let w = psi_csi_aware(CsiVariant::DetectionProcessing {
                    lambda_d: ld, p_f: pf, xi, eta, psi_s, p_outage: p }).unwrap();
                prop_assert!((0.0..=1.0).contains(&w));
            }
        }
    }
}
