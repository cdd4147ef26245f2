//! Source power-control policies and receiver behaviors.
//!
//! Every decision here is a pure function of the current battery levels, the
//! retransmission state and (for receivers with CSI) the channel realization.
//! [`LinkController`] bundles one resolved policy so the Markov chain builder
//! and the simulator apply exactly the same slot rules.

use crate::error::{Error, Result};
use crate::model::{gain_threshold, on_grid, LinkConfig, Outcome, RetxState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourcePolicy {
    /// Transmit with budget `threshold` whenever the own battery holds it.
    Disjoint { threshold: f64 },
    /// Transmit only when both batteries clear their thresholds (shared BSI).
    Joint { threshold: f64 },
    /// Per-attempt budget `start + step * max(u, 0)`.
    Linear { start: f64, step: f64 },
}

impl SourcePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SourcePolicy::Disjoint { .. } => "disjoint",
            SourcePolicy::Joint { .. } => "joint",
            SourcePolicy::Linear { .. } => "linear",
        }
    }

    /// Threshold for the first attempt of a packet.
    pub fn base_threshold(&self) -> f64 {
        match *self {
            SourcePolicy::Disjoint { threshold } | SourcePolicy::Joint { threshold } => threshold,
            SourcePolicy::Linear { start, .. } => start,
        }
    }

    /// Same policy family with a different base threshold.
    pub fn with_base_threshold(&self, p: f64) -> SourcePolicy {
        match *self {
            SourcePolicy::Disjoint { .. } => SourcePolicy::Disjoint { threshold: p },
            SourcePolicy::Joint { .. } => SourcePolicy::Joint { threshold: p },
            SourcePolicy::Linear { step, .. } => SourcePolicy::Linear { start: p, step },
        }
    }

    pub fn threshold(&self, u: RetxState) -> f64 {
        match *self {
            SourcePolicy::Disjoint { threshold } | SourcePolicy::Joint { threshold } => threshold,
            SourcePolicy::Linear { start, step } => linear_threshold(start, step, u.value()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverMode {
    /// Receive for the whole slot whenever the battery allows.
    AlwaysOn,
    /// Spend xi * P_D to sense the source, stay on only if it transmits.
    Detection,
    /// Detection plus processing of successfully received data (P_F).
    DetectionProcessing,
    /// The receiver knows the source policy and skips slots whose channel
    /// cannot support the rate. Detection and processing fractions still
    /// apply; with xi = eta = 1 this is plain policy-aware reception.
    CsiAware,
}

impl ReceiverMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReceiverMode::AlwaysOn => "always",
            ReceiverMode::Detection => "detect",
            ReceiverMode::DetectionProcessing => "detect-process",
            ReceiverMode::CsiAware => "csi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySpec {
    pub source: SourcePolicy,
    pub receiver: ReceiverMode,
    pub bsi_shared: bool,
    pub d_knows_policy: bool,
}

impl PolicySpec {
    /// Policy with the information-sharing flags its variants require.
    pub fn new(source: SourcePolicy, receiver: ReceiverMode) -> Self {
        PolicySpec {
            source,
            receiver,
            bsi_shared: matches!(source, SourcePolicy::Joint { .. }),
            d_knows_policy: receiver == ReceiverMode::CsiAware,
        }
    }

    pub fn is_joint(&self) -> bool {
        matches!(self.source, SourcePolicy::Joint { .. })
    }

    pub fn validate(&self, cfg: &LinkConfig) -> Result<()> {
        let mut v = Vec::new();
        match self.source {
            SourcePolicy::Disjoint { threshold } | SourcePolicy::Joint { threshold } => {
                if !(threshold > cfg.circuit_power) {
                    v.push(format!("p_s = {threshold} must exceed p_cs = {}", cfg.circuit_power));
                }
            }
            SourcePolicy::Linear { start, step } => {
                if !(start > cfg.circuit_power) {
                    v.push(format!("p_s = {start} must exceed p_cs = {}", cfg.circuit_power));
                }
                if !(step >= 0.0) {
                    v.push(format!("delta = {step} must be >= 0"));
                }
            }
        }
        if self.is_joint() && !self.bsi_shared {
            v.push("joint policy requires bsi_shared = true".to_string());
        }
        if self.receiver == ReceiverMode::CsiAware && !self.d_knows_policy {
            v.push("csi receiver requires d_knows_policy = true".to_string());
        }
        if cfg.battery_cap.is_finite() && cfg.quantum > 0.0 {
            let (name, base) = ("p_s", self.source.base_threshold());
            if !on_grid(base, cfg.quantum) {
                v.push(format!("{name} = {base} is not a multiple of quantum = {}", cfg.quantum));
            }
            if let SourcePolicy::Linear { step, .. } = self.source {
                if !on_grid(step, cfg.quantum) {
                    v.push(format!("delta = {step} is not a multiple of quantum = {}", cfg.quantum));
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

/// Per-attempt threshold of the linear power levels policy.
pub fn linear_threshold(start: f64, step: f64, u: i32) -> f64 {
    start + step * u.max(0) as f64
}

/// Total source draw for the slot; 0 means silent. `dest_ready` is the shared
/// battery bit and only matters for the joint policy.
pub fn source_action(spec: &PolicySpec, b_src: f64, u: RetxState, dest_ready: bool) -> f64 {
    let thr = spec.source.threshold(u);
    let own = b_src >= thr;
    let go = match spec.source {
        SourcePolicy::Joint { .. } => own && dest_ready,
        _ => own,
    };
    if go {
        thr
    } else {
        0.0
    }
}

/// Receiver energy schedule, in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverCosts {
    /// Battery level needed before the receiver may wake up.
    pub ready: f64,
    /// Spend when the source turns out to be silent.
    pub silent: f64,
    /// Spend when the source transmits but the channel is in outage.
    pub outage: f64,
    /// Spend on a successful reception.
    pub success: f64,
}

impl ReceiverCosts {
    pub fn new(mode: ReceiverMode, cfg: &LinkConfig) -> Self {
        let p_d = cfg.rx_power;
        let p_f = cfg.processing_total;
        let xi = cfg.detect_frac;
        match mode {
            ReceiverMode::AlwaysOn => ReceiverCosts { ready: p_d, silent: p_d, outage: p_d, success: p_d },
            ReceiverMode::Detection => ReceiverCosts { ready: p_d, silent: xi * p_d, outage: p_d, success: p_d },
            ReceiverMode::DetectionProcessing => {
                ReceiverCosts { ready: p_f, silent: xi * p_d, outage: p_d, success: p_f }
            }
            // a CSI-aware receiver never wakes up on a bad channel
            ReceiverMode::CsiAware => ReceiverCosts { ready: p_f, silent: xi * p_d, outage: 0.0, success: p_f },
        }
    }

    /// Rounds every cost up to the next multiple of `quantum`. Returns the
    /// rounded costs and a note for each value that moved.
    pub fn quantized(&self, quantum: f64) -> (Self, Vec<String>) {
        let mut notes = Vec::new();
        let mut up = |name: &str, x: f64| {
            let r = x / quantum;
            if (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0) {
                r.round() * quantum
            } else {
                let q = r.ceil() * quantum;
                notes.push(format!("{name} = {x} rounded up to {q} on the {quantum} grid"));
                q
            }
        };
        let q = ReceiverCosts {
            ready: up("rx_ready", self.ready),
            silent: up("rx_detect", self.silent),
            outage: up("rx_outage", self.outage),
            success: up("rx_success", self.success),
        };
        (q, notes)
    }
}

/// Energy the receiver spends this slot.
pub fn receiver_action(
    mode: ReceiverMode,
    costs: &ReceiverCosts,
    b_dst: f64,
    src_transmitting: bool,
    channel_ok: bool,
) -> f64 {
    if b_dst < costs.ready {
        return 0.0;
    }
    match mode {
        ReceiverMode::AlwaysOn | ReceiverMode::Detection | ReceiverMode::DetectionProcessing => {
            match (src_transmitting, channel_ok) {
                (false, _) => costs.silent,
                (true, false) => costs.outage,
                (true, true) => costs.success,
            }
        }
        ReceiverMode::CsiAware => match (src_transmitting, channel_ok) {
            (_, false) => 0.0,
            (false, true) => costs.silent,
            (true, true) => costs.success,
        },
    }
}

/// What happened in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDecision {
    pub src_spend: f64,
    pub dst_spend: f64,
    pub transmitted: bool,
    pub outcome: Outcome,
}

/// A policy resolved against a link configuration: per-state thresholds,
/// outage probabilities and receiver costs, ready to drive slots.
#[derive(Debug, Clone)]
pub struct LinkController {
    pub spec: PolicySpec,
    pub costs: ReceiverCosts,
    pub retry_limit: u32,
    thresholds: Vec<f64>,
    outage: Vec<f64>,
    gain_thr: Vec<f64>,
    /// Values that were rounded onto the grid.
    pub notes: Vec<String>,
}

impl LinkController {
    /// `grid` rounds receiver costs onto the energy quantum, as the Markov
    /// chain requires.
    pub fn new(cfg: &LinkConfig, spec: &PolicySpec, grid: bool) -> Result<Self> {
        cfg.validate()?;
        spec.validate(cfg)?;
        let exact = ReceiverCosts::new(spec.receiver, cfg);
        let (costs, notes) = if grid { exact.quantized(cfg.quantum) } else { (exact, Vec::new()) };
        let k = cfg.retry_limit;
        let mut thresholds = Vec::with_capacity(k as usize + 1);
        let mut outage = Vec::with_capacity(k as usize + 1);
        let mut gain_thr = Vec::with_capacity(k as usize + 1);
        for i in 0..=k as usize {
            let thr = spec.source.threshold(RetxState::from_index(i));
            let p_tx = cfg.tx_power(thr)?;
            thresholds.push(thr);
            outage.push(cfg.outage_at_budget(thr));
            gain_thr.push(gain_threshold(cfg.rate, cfg.noise, p_tx));
        }
        Ok(LinkController { spec: *spec, costs, retry_limit: k, thresholds, outage, gain_thr, notes })
    }

    pub fn threshold(&self, u: RetxState) -> f64 {
        self.thresholds[u.index()]
    }

    /// Channel outage probability at the nominal transmit power for state u.
    pub fn outage_prob(&self, u: RetxState) -> f64 {
        self.outage[u.index()]
    }

    pub fn gain_threshold(&self, u: RetxState) -> f64 {
        self.gain_thr[u.index()]
    }

    pub fn src_ready(&self, b_src: f64, u: RetxState) -> bool {
        b_src >= self.threshold(u)
    }

    pub fn dst_ready(&self, b_dst: f64) -> bool {
        b_dst >= self.costs.ready
    }

    /// Resolves one slot given the batteries at slot start and whether the
    /// channel realization supports the rate at this state's transmit power.
    pub fn decide(&self, b_src: f64, b_dst: f64, u: RetxState, channel_ok: bool) -> SlotDecision {
        let s_ready = self.src_ready(b_src, u);
        let d_ready = self.dst_ready(b_dst);
        let joint = self.spec.is_joint();
        let csi = self.spec.receiver == ReceiverMode::CsiAware;

        let transmitted = if joint {
            // with shared BSI and policy-aware D, S learns the channel too
            s_ready && d_ready && (!csi || channel_ok)
        } else {
            s_ready
        };
        let src_spend = if transmitted { self.threshold(u) } else { 0.0 };

        let dst_active = if joint { transmitted } else { d_ready };
        let dst_spend = if dst_active {
            receiver_action(self.spec.receiver, &self.costs, b_dst, transmitted, channel_ok)
        } else {
            0.0
        };

        let outcome = if transmitted && d_ready && channel_ok { Outcome::Success } else { Outcome::Failure };
        SlotDecision { src_spend, dst_spend, transmitted, outcome }
    }
}
