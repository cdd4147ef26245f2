//! TOML run configuration.
//!
//! Four flat sections, every key optional:
//!
//! ```toml
//! [link]
//! rate = 2.0
//! b_max = 3000      # or "inf"
//! [energy]
//! mu_s = 0.5
//! e_s_max = 1000
//! [policy]
//! source = "disjoint"
//! receiver = "always"
//! [sim]
//! slots = 1000000
//! ```
//!
//! Key names are unique across sections, so sweeps and overrides address a
//! key by name alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::analytic;
use crate::error::{Error, Result};
use crate::model::{Capacity, EnergyProfile, LinkConfig};
use crate::montecarlo::SimOptions;
use crate::policy::{PolicySpec, ReceiverMode, SourcePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    /// Float or the string "inf".
    Capacity,
    Source,
    Receiver,
}

const KEYS: &[(&str, &str, Kind)] = &[
    ("link", "rate", Kind::Float),
    ("link", "noise", Kind::Float),
    ("link", "alpha", Kind::Float),
    ("link", "p_cs", Kind::Float),
    ("link", "p_d", Kind::Float),
    ("link", "p_f", Kind::Float),
    ("link", "xi", Kind::Float),
    ("link", "eta", Kind::Float),
    ("link", "k", Kind::Int),
    ("link", "b_max", Kind::Capacity),
    ("link", "quantum", Kind::Float),
    ("energy", "mu_s", Kind::Float),
    ("energy", "mu_d", Kind::Float),
    ("energy", "e_s_max", Kind::Float),
    ("energy", "e_d_max", Kind::Float),
    ("energy", "lambda_s", Kind::Float),
    ("energy", "lambda_d", Kind::Float),
    ("energy", "rho", Kind::Float),
    ("policy", "source", Kind::Source),
    ("policy", "receiver", Kind::Receiver),
    ("policy", "p_s", Kind::Float),
    ("policy", "start", Kind::Float),
    ("policy", "delta", Kind::Float),
    ("sim", "slots", Kind::Int),
    ("sim", "burn_in", Kind::Int),
    ("sim", "init_src", Kind::Float),
    ("sim", "init_dst", Kind::Float),
];

fn lookup(key: &str) -> Option<(&'static str, Kind)> {
    KEYS.iter().find(|(_, k, _)| *k == key).map(|&(s, _, kind)| (s, kind))
}

/// Names accepted by `--sweep` and config overrides.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|&(_, k, _)| k)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Text(String),
}

/// Explicitly set keys, before defaults are applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    values: BTreeMap<&'static str, Value>,
}

pub fn parse_source(name: &str) -> Option<&'static str> {
    ["disjoint", "joint", "linear"].into_iter().find(|s| *s == name)
}

pub fn parse_receiver(name: &str) -> Option<ReceiverMode> {
    match name {
        "always" => Some(ReceiverMode::AlwaysOn),
        "detect" => Some(ReceiverMode::Detection),
        "detect-process" => Some(ReceiverMode::DetectionProcessing),
        "csi" => Some(ReceiverMode::CsiAware),
        _ => None,
    }
}

fn check_value(key: &str, kind: Kind, v: &Value) -> std::result::Result<(), String> {
    match (kind, v) {
        (Kind::Float, Value::Num(_)) => Ok(()),
        (Kind::Int, Value::Num(x)) if x.fract() == 0.0 && *x >= 0.0 => Ok(()),
        (Kind::Int, _) => Err(format!("{key} must be a non-negative integer")),
        (Kind::Capacity, Value::Num(_)) => Ok(()),
        (Kind::Capacity, Value::Text(s)) if s == "inf" => Ok(()),
        (Kind::Capacity, _) => Err(format!("{key} must be a number or \"inf\"")),
        (Kind::Source, Value::Text(s)) if parse_source(s).is_some() => Ok(()),
        (Kind::Source, _) => Err(format!("{key} must be one of disjoint, joint, linear")),
        (Kind::Receiver, Value::Text(s)) if parse_receiver(s).is_some() => Ok(()),
        (Kind::Receiver, _) => Err(format!("{key} must be one of always, detect, detect-process, csi")),
        (Kind::Float, _) => Err(format!("{key} must be a number")),
    }
}

impl RawConfig {
    /// Parses TOML text. Every unknown section, unknown key and mistyped
    /// value is reported.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut raw = RawConfig::default();
        let mut problems = Vec::new();
        for (section, body) in &table {
            if !KEYS.iter().any(|(s, _, _)| s == section) {
                problems.push(format!("unknown section [{section}]"));
                continue;
            }
            let Some(body) = body.as_table() else {
                problems.push(format!("[{section}] must be a table"));
                continue;
            };
            for (key, val) in body {
                let Some(&(_, name, kind)) = KEYS.iter().find(|(s, k, _)| s == section && k == key) else {
                    problems.push(format!("unknown key {key} in [{section}]"));
                    continue;
                };
                let v = match val {
                    toml::Value::Integer(i) => Value::Num(*i as f64),
                    toml::Value::Float(f) => Value::Num(*f),
                    toml::Value::String(s) => Value::Text(s.clone()),
                    _ => {
                        problems.push(format!("{key} has an unsupported type"));
                        continue;
                    }
                };
                match check_value(key, kind, &v) {
                    Ok(()) => {
                        raw.values.insert(name, v);
                    }
                    Err(p) => problems.push(p),
                }
            }
        }
        if problems.is_empty() {
            Ok(raw)
        } else {
            Err(Error::Invalid(problems))
        }
    }

    /// Sets one key, as a command-line override or sweep point would.
    pub fn set(&mut self, key: &str, v: Value) -> Result<()> {
        let Some((_, kind)) = lookup(key) else {
            return Err(Error::Invalid(vec![format!("unknown key {key}")]));
        };
        check_value(key, kind, &v).map_err(|p| Error::Invalid(vec![p]))?;
        let name = KEYS.iter().find(|(_, k, _)| *k == key).unwrap().1;
        self.values.insert(name, v);
        Ok(())
    }

    fn num(&self, key: &str) -> Option<f64> {
        match self.values.get(key) {
            Some(Value::Num(x)) => Some(*x),
            _ => None,
        }
    }

    fn text(&self, key: &str) -> Option<&str> {
        match self.values.get(key) {
            Some(Value::Text(s)) => Some(s),
            _ => None,
        }
    }

    /// Applies defaults and validates everything, collecting all violations.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut problems = Vec::new();
        let mut notes = Vec::new();
        let num = |k: &str, d: f64| self.num(k).unwrap_or(d);

        let p_d = num("p_d", 700.0);
        let (p_f, eta) = match (self.num("p_f"), self.num("eta")) {
            (Some(f), Some(e)) => (f, e),
            (Some(f), None) => (f, if f > 0.0 { p_d / f } else { 1.0 }),
            (None, Some(e)) => (if e > 0.0 { p_d / e } else { p_d }, e),
            (None, None) => (p_d, 1.0),
        };
        let battery_cap = match self.values.get("b_max") {
            Some(Value::Text(_)) => Capacity::Unbounded,
            Some(Value::Num(x)) => Capacity::Finite(*x),
            None => Capacity::Finite(3000.0),
        };
        let link = LinkConfig {
            rate: num("rate", 2.0),
            noise: num("noise", 100.0),
            amp_slope: num("alpha", 1.0),
            circuit_power: num("p_cs", 100.0),
            rx_power: p_d,
            processing_total: p_f,
            detect_frac: num("xi", 1.0),
            rx_frac: eta,
            retry_limit: num("k", 4.0) as u32,
            battery_cap,
            quantum: num("quantum", 50.0),
        };
        if let Err(Error::Invalid(v)) = link.validate() {
            problems.extend(v);
        }
        let link_ok = problems.is_empty();

        let energy = resolve_energy(self, &mut problems);

        let source_name = self.text("source").unwrap_or("disjoint");
        let receiver = self.text("receiver").and_then(parse_receiver).unwrap_or(ReceiverMode::AlwaysOn);
        let finite = link.battery_cap.is_finite();
        let snap = |x: f64| {
            if finite && link.quantum > 0.0 {
                let lowest = link.circuit_power + link.quantum;
                ((x / link.quantum).round() * link.quantum).max(lowest)
            } else {
                x
            }
        };
        // closed-form optimum for the default threshold
        let analytic_opt = |spec: PolicySpec| -> Option<f64> {
            let probe =
                PolicySpec { source: spec.source.with_base_threshold(link.circuit_power + link.quantum), ..spec };
            analytic::analyze(&link, &energy, &probe).ok().map(|r| r.optimal_p_s)
        };
        let delta = num("delta", 100.0);
        let mut default_note = |what: &str, exact: f64, used: f64| {
            notes.push(format!("{what} defaulted to {used} (closed form {exact})"));
        };
        let source = match source_name {
            "joint" | "disjoint" => {
                let placeholder = if source_name == "joint" {
                    SourcePolicy::Joint { threshold: 0.0 }
                } else {
                    SourcePolicy::Disjoint { threshold: 0.0 }
                };
                let threshold = match self.num("p_s") {
                    Some(x) => x,
                    None => match analytic_opt(PolicySpec::new(placeholder, receiver)) {
                        Some(opt) => {
                            let used = snap(opt);
                            default_note("p_s", opt, used);
                            used
                        }
                        None => {
                            if link_ok {
                                problems.push("p_s has no default for this configuration; set it explicitly".into());
                            }
                            f64::NAN
                        }
                    },
                };
                placeholder.with_base_threshold(threshold)
            }
            _ => {
                let start = match self.num("start").or(self.num("p_s")) {
                    Some(x) => x,
                    None => {
                        let probe = PolicySpec::new(SourcePolicy::Linear { start: 0.0, step: delta }, receiver);
                        match analytic_opt(probe) {
                            Some(opt) => {
                                let used = snap(opt);
                                default_note("start", opt, used);
                                used
                            }
                            None => {
                                if link_ok {
                                    problems
                                        .push("start has no default for this configuration; set it explicitly".into());
                                }
                                f64::NAN
                            }
                        }
                    }
                };
                SourcePolicy::Linear { start, step: delta }
            }
        };
        let policy = PolicySpec::new(source, receiver);
        if problems.is_empty() {
            if let Err(Error::Invalid(v)) = policy.validate(&link) {
                problems.extend(v);
            }
        }

        let sim = SimOptions {
            n_slots: num("slots", 1_000_000.0) as u64,
            burn_in: num("burn_in", crate::montecarlo::DEFAULT_BURN_IN as f64) as u64,
            init_src: num("init_src", 0.0),
            init_dst: num("init_dst", 0.0),
        };
        if sim.n_slots < 1 {
            problems.push("slots must be >= 1".into());
        }
        for (name, level) in [("init_src", sim.init_src), ("init_dst", sim.init_dst)] {
            if !(level >= 0.0) || link.battery_cap.clamp(level) != level {
                problems.push(format!("{name} = {level} must lie in [0, b_max]"));
            }
        }

        if problems.is_empty() {
            Ok(Resolved { link, energy, policy, sim, notes })
        } else {
            Err(Error::Invalid(problems))
        }
    }
}

fn resolve_energy(raw: &RawConfig, problems: &mut Vec<String>) -> EnergyProfile {
    let mut side = |mu_key: &str, peak_key: &str, mean_key: &str| -> (f64, f64) {
        let mu = raw.num(mu_key);
        let peak = raw.num(peak_key);
        let mean = raw.num(mean_key);
        match (mu, peak, mean) {
            (Some(m), Some(p), Some(l)) => {
                if (m * p - l).abs() > 1e-9 * l.abs().max(1.0) {
                    problems.push(format!("{mean_key} = {l} must equal {mu_key} * {peak_key} = {}", m * p));
                }
                (m, p)
            }
            (None, Some(p), Some(l)) => {
                if p > 0.0 {
                    (l / p, p)
                } else {
                    problems.push(format!("{mean_key} needs {peak_key} > 0"));
                    (0.0, p)
                }
            }
            (m, Some(p), None) => (m.unwrap_or(0.5), p),
            (m, None, Some(l)) => {
                let m = m.unwrap_or(0.5);
                if m > 0.0 {
                    (m, l / m)
                } else {
                    problems.push(format!("{mean_key} needs {mu_key} > 0"));
                    (m, 0.0)
                }
            }
            (m, None, None) => (m.unwrap_or(0.5), 1000.0),
        }
    };
    let (mu_s, peak_s) = side("mu_s", "e_s_max", "lambda_s");
    let (mu_d, peak_d) = side("mu_d", "e_d_max", "lambda_d");
    let profile = EnergyProfile::bernoulli(mu_s, peak_s, mu_d, peak_d, raw.num("rho").unwrap_or(0.0));
    if let Err(Error::Invalid(v)) = profile.validate() {
        problems.extend(v);
    }
    if let Err(e) = crate::fsmc::ArrivalPmf::correlated(mu_s, mu_d, profile.correlation) {
        if (0.0..=1.0).contains(&mu_s) && (0.0..=1.0).contains(&mu_d) && (-1.0..=1.0).contains(&profile.correlation) {
            problems.push(e.to_string());
        }
    }
    profile
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub link: LinkConfig,
    pub energy: EnergyProfile,
    pub policy: PolicySpec,
    pub sim: SimOptions,
    /// Defaults that were derived rather than fixed.
    pub notes: Vec<String>,
}

impl Resolved {
    /// Every resolved key as `key = value` lines, in a fixed order.
    pub fn echo(&self) -> String {
        let l = &self.link;
        let e = &self.energy;
        let mut out = String::new();
        let b_max = match l.battery_cap {
            Capacity::Finite(c) => super::csv::fmt_num(c),
            Capacity::Unbounded => "inf".to_string(),
        };
        let f = super::csv::fmt_num;
        let (p_s_key, p_s) = match self.policy.source {
            SourcePolicy::Linear { start, .. } => ("start", start),
            s => ("p_s", s.base_threshold()),
        };
        let mut rows: Vec<(&str, String)> = vec![
            ("rate", f(l.rate)),
            ("noise", f(l.noise)),
            ("alpha", f(l.amp_slope)),
            ("p_cs", f(l.circuit_power)),
            ("p_d", f(l.rx_power)),
            ("p_f", f(l.processing_total)),
            ("xi", f(l.detect_frac)),
            ("eta", f(l.rx_frac)),
            ("k", l.retry_limit.to_string()),
            ("b_max", b_max),
            ("quantum", f(l.quantum)),
            ("mu_s", f(e.bern_src)),
            ("mu_d", f(e.bern_dst)),
            ("e_s_max", f(e.peak_src)),
            ("e_d_max", f(e.peak_dst)),
            ("lambda_s", f(e.mean_src)),
            ("lambda_d", f(e.mean_dst)),
            ("rho", f(e.correlation)),
            ("source", self.policy.source.name().to_string()),
            ("receiver", self.policy.receiver.name().to_string()),
            (p_s_key, f(p_s)),
        ];
        if let SourcePolicy::Linear { step, .. } = self.policy.source {
            rows.push(("delta", f(step)));
        }
        rows.extend([
            ("slots", self.sim.n_slots.to_string()),
            ("burn_in", self.sim.burn_in.to_string()),
            ("init_src", f(self.sim.init_src)),
            ("init_dst", f(self.sim.init_dst)),
        ]);
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses and resolves a configuration in one step.
pub fn parse_config(text: &str) -> Result<Resolved> {
    RawConfig::parse(text)?.resolve()
}
