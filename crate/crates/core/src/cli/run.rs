use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use super::config::{known_keys, parse_receiver, parse_source, RawConfig, Resolved, Value};
use super::csv::{fmt_num, fmt_opt, fmt_text, Table};
use crate::analytic;
use crate::error::{Error, Result};
use crate::fsmc;
use crate::montecarlo::{aggregate, simulate_replicas, Aggregate, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Fsmc,
    Simulate,
    Search,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Fsmc => "fsmc",
            Command::Simulate => "simulate",
            Command::Search => "search",
            Command::Sweep => "sweep",
        }
    }
}

/// Evaluation paths a sweep can run at each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Closed-form lower bound (1 - phi)^K.
    Bound,
    Fsmc,
    Sim,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bound => "bound",
            Method::Fsmc => "fsmc",
            Method::Sim => "sim",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bound" => Ok(Method::Bound),
            "fsmc" => Ok(Method::Fsmc),
            "sim" => Ok(Method::Sim),
            _ => Err(Error::Invalid(vec![format!("unknown method {s}; expected bound, fsmc or sim")])),
        }
    }
}

/// `key:start:stop:step`, inclusive of `stop`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

const MAX_SWEEP_POINTS: usize = 10_000;

impl SweepAxis {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Invalid(vec![format!("sweep axis {s:?} must look like key:start:stop:step")]);
        let [key, a, b, c] = parts[..] else { return Err(bad()) };
        let num = |x: &str| x.parse::<f64>().map_err(|_| bad());
        let axis = SweepAxis { key: key.to_string(), start: num(a)?, stop: num(b)?, step: num(c)? };
        let mut problems = Vec::new();
        if !known_keys().any(|k| k == key) || matches!(key, "source" | "receiver") {
            problems.push(format!("sweep key {key} is not a numeric config key"));
        }
        if !(axis.step > 0.0) {
            problems.push(format!("sweep step = {} must be > 0", axis.step));
        }
        if !(axis.stop >= axis.start) {
            problems.push(format!("sweep stop = {} must be >= start = {}", axis.stop, axis.start));
        }
        if problems.is_empty() && axis.points().len() > MAX_SWEEP_POINTS {
            problems.push(format!("sweep has more than {MAX_SWEEP_POINTS} points"));
        }
        if problems.is_empty() {
            Ok(axis)
        } else {
            Err(Error::Invalid(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub seed: u64,
    pub replicas: u32,
    pub sweep: Option<SweepAxis>,
    pub policy: Option<String>,
    pub receiver: Option<String>,
    pub methods: Vec<Method>,
}

impl RunSpec {
    pub fn new(command: Command) -> Self {
        RunSpec {
            command,
            config_path: None,
            output_path: None,
            seed: 1,
            replicas: 1,
            sweep: None,
            policy: None,
            receiver: None,
            methods: vec![Method::Fsmc, Method::Sim],
        }
    }
}

/// Loads the configuration and applies command-line policy overrides.
fn load_raw(spec: &RunSpec) -> Result<RawConfig> {
    let text = match &spec.config_path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut raw = RawConfig::parse(&text)?;
    if let Some(p) = &spec.policy {
        if parse_source(p).is_none() {
            return Err(Error::Invalid(vec![format!("--policy {p}: expected disjoint, joint or linear")]));
        }
        raw.set("source", Value::Text(p.clone()))?;
    }
    if let Some(r) = &spec.receiver {
        if parse_receiver(r).is_none() {
            return Err(Error::Invalid(vec![format!(
                "--receiver {r}: expected always, detect, detect-process or csi"
            )]));
        }
        raw.set("receiver", Value::Text(r.clone()))?;
    }
    Ok(raw)
}

fn preamble(table: &mut Table, spec: &RunSpec, cfg: &Resolved) {
    table.comment(format!("ehlink {}", spec.command.name()));
    if matches!(spec.command, Command::Simulate | Command::Sweep) {
        table.comment(format!("seed = {}", spec.seed));
        table.comment(format!("replicas = {}", spec.replicas));
    }
    if let Some(ax) = &spec.sweep {
        table.comment(format!("sweep = {}:{}:{}:{}", ax.key, fmt_num(ax.start), fmt_num(ax.stop), fmt_num(ax.step)));
    }
    table.comment(cfg.echo());
    for n in &cfg.notes {
        table.comment(format!("note: {n}"));
    }
}

/// Executes a run and returns the CSV document.
pub fn run(spec: &RunSpec) -> Result<String> {
    if spec.replicas < 1 {
        return Err(Error::Invalid(vec!["replicas must be >= 1".into()]));
    }
    let raw = load_raw(spec)?;
    match spec.command {
        Command::Sweep => run_sweep(spec, &raw),
        _ if spec.sweep.is_some() => Err(Error::Invalid(vec!["--sweep only applies to the sweep command".into()])),
        Command::Analyze => run_analyze(spec, &raw.resolve()?),
        Command::Fsmc => run_fsmc(spec, &raw.resolve()?),
        Command::Simulate => run_simulate(spec, &raw.resolve()?),
        Command::Search => run_search(spec, &raw.resolve()?),
    }
}

/// Runs and writes the CSV to the output path, or returns it for stdout.
pub fn run_to_output(spec: &RunSpec) -> Result<Option<String>> {
    let csv = run(spec)?;
    match &spec.output_path {
        Some(p) => {
            std::fs::write(p, csv).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            Ok(None)
        }
        None => Ok(Some(csv)),
    }
}

fn run_analyze(spec: &RunSpec, cfg: &Resolved) -> Result<String> {
    let r = analytic::analyze(&cfg.link, &cfg.energy, &cfg.policy)?;
    let mut t = Table::new(vec![
        "source",
        "receiver",
        "p_s",
        "p_tx",
        "p_outage",
        "psi_s",
        "psi_d",
        "psi_joint",
        "psi_basis",
        "phi",
        "p_out_lower_bound",
        "optimal_p_s",
        "optimal_basis",
        "b_th",
        "c_const",
    ]);
    preamble(&mut t, spec, cfg);
    let p_s = cfg.policy.source.base_threshold();
    t.row(vec![
        cfg.policy.source.name().into(),
        cfg.policy.receiver.name().into(),
        fmt_num(p_s),
        fmt_num(cfg.link.tx_power(p_s)?),
        fmt_num(r.p_outage),
        fmt_opt(r.psi_s),
        fmt_opt(r.psi_d),
        fmt_opt(r.psi_joint),
        r.psi_basis.name().into(),
        fmt_opt(r.phi),
        fmt_opt(r.p_out_lower_bound),
        fmt_num(r.optimal_p_s),
        r.optimal_basis.into(),
        fmt_num(r.b_th),
        fmt_num(r.c_const),
    ]);
    Ok(t.render())
}

fn run_fsmc(spec: &RunSpec, cfg: &Resolved) -> Result<String> {
    let r = fsmc::evaluate(&cfg.link, &cfg.energy, &cfg.policy)?;
    let mut t =
        Table::new(vec!["source", "receiver", "p_s", "p_out", "tau", "states", "support", "residual", "iterations"]);
    preamble(&mut t, spec, cfg);
    for n in &r.notes {
        t.comment(format!("note: {n}"));
    }
    t.row(vec![
        cfg.policy.source.name().into(),
        cfg.policy.receiver.name().into(),
        fmt_num(cfg.policy.source.base_threshold()),
        fmt_num(r.p_out),
        fmt_num(r.tau),
        r.states.to_string(),
        r.support.to_string(),
        fmt_num(r.residual),
        r.iterations.to_string(),
    ]);
    Ok(t.render())
}

fn est_cells(e: Estimate) -> [String; 2] {
    [fmt_num(e.value), fmt_num(e.half_width())]
}

fn run_simulate(spec: &RunSpec, cfg: &Resolved) -> Result<String> {
    let results = simulate_replicas(&cfg.link, &cfg.energy, &cfg.policy, &cfg.sim, spec.seed, spec.replicas)?;
    let mut t = Table::new(vec![
        "replica",
        "seed",
        "n_slots",
        "n_packets",
        "p_out",
        "p_out_ci95",
        "tau",
        "tau_ci95",
        "psi_s",
        "psi_s_ci95",
        "psi_d",
        "psi_d_ci95",
        "psi_joint",
        "psi_joint_ci95",
    ]);
    preamble(&mut t, spec, cfg);
    if let Some(r) = results.first() {
        for n in r.notes.iter().filter(|n| !cfg.notes.contains(n)) {
            t.comment(format!("note: {n}"));
        }
    }
    let mut push = |label: String, seed: String, slots: u64, packets: u64, ests: [Estimate; 5]| {
        let mut row = vec![label, seed, slots.to_string(), packets.to_string()];
        for e in ests {
            row.extend(est_cells(e));
        }
        t.row(row);
    };
    for (i, r) in results.iter().enumerate() {
        push(
            i.to_string(),
            r.seed.to_string(),
            r.n_slots,
            r.n_packets,
            [r.p_out, r.tau, r.psi_s, r.psi_d, r.psi_joint],
        );
    }
    let a = aggregate(&results);
    let slots = results.iter().map(|r| r.n_slots).sum();
    push("all".into(), String::new(), slots, a.n_packets, [a.p_out, a.tau, a.psi_s, a.psi_d, a.psi_joint]);
    Ok(t.render())
}

fn run_search(spec: &RunSpec, cfg: &Resolved) -> Result<String> {
    let r = fsmc::search_threshold(&cfg.link, &cfg.energy, &cfg.policy)?;
    let mut t = Table::new(vec!["kind", "p_s", "p_tx", "p_out", "tau", "error"]);
    preamble(&mut t, spec, cfg);
    for pt in &r.curve {
        let p_tx = fmt_num(cfg.link.tx_power(pt.p_s)?);
        let row = match &pt.result {
            Ok((p, tau)) => vec!["scan".into(), fmt_num(pt.p_s), p_tx, fmt_num(*p), fmt_num(*tau), String::new()],
            Err(e) => vec!["scan".into(), fmt_num(pt.p_s), p_tx, String::new(), String::new(), fmt_text(e.kind())],
        };
        t.row(row);
    }
    t.row(vec!["best".into(), fmt_num(r.p_s), fmt_num(r.p_tx), fmt_num(r.p_out), fmt_num(r.tau), String::new()]);
    Ok(t.render())
}

fn sweep_point(spec: &RunSpec, raw: &RawConfig, key: &str, value: f64) -> Result<Vec<Vec<String>>> {
    let mut raw = raw.clone();
    raw.set(key, Value::Num(value))?;
    if key == "p_s" {
        // for the linear policy the swept threshold is its starting level
        raw.set("start", Value::Num(value))?;
    }
    let cfg = raw.resolve()?;
    let p_s = fmt_num(cfg.policy.source.base_threshold());
    let mut rows = Vec::new();
    for m in &spec.methods {
        let head = vec![key.to_string(), fmt_num(value), m.name().to_string(), p_s.clone()];
        let tail: Vec<String> = match m {
            Method::Bound => {
                let r = analytic::analyze(&cfg.link, &cfg.energy, &cfg.policy)?;
                vec![fmt_opt(r.p_out_lower_bound), String::new(), String::new(), String::new(), fmt_opt(r.psi_joint)]
            }
            Method::Fsmc => {
                let r = fsmc::evaluate(&cfg.link, &cfg.energy, &cfg.policy)?;
                vec![fmt_num(r.p_out), String::new(), fmt_num(r.tau), String::new(), String::new()]
            }
            Method::Sim => {
                let reps = simulate_replicas(&cfg.link, &cfg.energy, &cfg.policy, &cfg.sim, spec.seed, spec.replicas)?;
                let a: Aggregate = aggregate(&reps);
                let [p, pw] = est_cells(a.p_out);
                let [tau, tw] = est_cells(a.tau);
                vec![p, pw, tau, tw, fmt_num(a.psi_joint.value)]
            }
        };
        rows.push(head.into_iter().chain(tail).collect());
    }
    Ok(rows)
}

fn run_sweep(spec: &RunSpec, raw: &RawConfig) -> Result<String> {
    let axis =
        spec.sweep.as_ref().ok_or_else(|| Error::Invalid(vec!["sweep needs --sweep key:start:stop:step".into()]))?;
    if spec.methods.is_empty() {
        return Err(Error::Invalid(vec!["sweep needs at least one method".into()]));
    }
    // the base configuration must be valid on its own
    let base = raw.resolve()?;
    let points = axis.points();
    let rows: Vec<Vec<Vec<String>>> =
        points.par_iter().map(|&v| sweep_point(spec, raw, &axis.key, v)).collect::<Result<_>>()?;
    let mut t =
        Table::new(vec!["param", "value", "method", "p_s", "p_out", "p_out_ci95", "tau", "tau_ci95", "psi_joint"]);
    preamble(&mut t, spec, &base);
    for r in rows.into_iter().flatten() {
        t.row(r);
    }
    Ok(t.render())
}
