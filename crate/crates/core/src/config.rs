//! Run configuration: solver constants, schedules, and the plain-text
//! config-file loader.
//!
//! # Config file grammar
//!
//! `key = value` lines, `#` comments, blank lines ignored. Two optional
//! sections declare a topology inline:
//!
//! ```text
//! mode = async-sim
//! rho = 100
//! rho_worker 1 = 50       # per-worker penalty override
//! rho_edge 1 0 = 75       # per-edge penalty override
//! gamma = 0.01
//! delay_bound = 5
//! delay_edge 0 1 = 3      # per-edge staleness cap
//! filter = decay:0.01
//! delta_push = true
//!
//! [blocks]
//! 0 = 4                   # block id = dimension
//! 1 = 4
//!
//! [edges]
//! 0 0                     # worker block
//! 0 1
//! 1 1
//! ```
//!
//! Errors carry the 1-based line number of the offending line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::topology::{build_topology, BlockId, Topology, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sync,
    AsyncSim,
    AsyncThreads,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Sync => "sync",
            Mode::AsyncSim => "async-sim",
            Mode::AsyncThreads => "async-threads",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sync" => Ok(Mode::Sync),
            "async-sim" => Ok(Mode::AsyncSim),
            "async-threads" => Ok(Mode::AsyncThreads),
            other => Err(format!(
                "unknown mode `{other}` (expected sync, async-sim, or async-threads)"
            )),
        }
    }
}

/// Significance filter: a push is suppressed when its change falls at or
/// below the epoch's threshold. `Off` sends everything; `Decay(c)` uses
/// c / t with t counted from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterSchedule {
    Off,
    Constant(f64),
    Decay(f64),
}

impl FilterSchedule {
    /// Threshold for a worker currently at `epoch` (0-based internal
    /// counter; the decaying schedule treats the first epoch as t = 1).
    pub fn threshold(&self, epoch: u64) -> f64 {
        match self {
            FilterSchedule::Off => 0.0,
            FilterSchedule::Constant(c) => *c,
            FilterSchedule::Decay(c) => c / (epoch + 1) as f64,
        }
    }

    /// Largest threshold the schedule ever emits (its value at t = 1).
    pub fn max_threshold(&self) -> f64 {
        match self {
            FilterSchedule::Off => 0.0,
            FilterSchedule::Constant(c) | FilterSchedule::Decay(c) => *c,
        }
    }
}

impl fmt::Display for FilterSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterSchedule::Off => f.write_str("off"),
            FilterSchedule::Constant(c) => write!(f, "const:{c}"),
            FilterSchedule::Decay(c) => write!(f, "decay:{c}"),
        }
    }
}

impl FromStr for FilterSchedule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "off" {
            return Ok(FilterSchedule::Off);
        }
        let parse_c = |v: &str| -> std::result::Result<f64, String> {
            let c: f64 = v
                .parse()
                .map_err(|_| format!("bad filter constant `{v}`"))?;
            if !c.is_finite() || c < 0.0 {
                return Err(format!("filter constant must be finite and >= 0, got {c}"));
            }
            Ok(c)
        };
        if let Some(v) = s.strip_prefix("const:") {
            return Ok(FilterSchedule::Constant(parse_c(v)?));
        }
        if let Some(v) = s.strip_prefix("decay:") {
            return Ok(FilterSchedule::Decay(parse_c(v)?));
        }
        Err(format!(
            "unknown filter `{s}` (expected off, const:<c>, or decay:<c>)"
        ))
    }
}

/// Which block a worker updates each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOrder {
    /// Uniform draw over the worker's neighbor blocks.
    UniformRandom,
    /// Deterministic cycling through the sorted neighbor list.
    Cyclic,
}

impl FromStr for BlockOrder {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(BlockOrder::UniformRandom),
            "cyclic" => Ok(BlockOrder::Cyclic),
            other => Err(format!(
                "unknown block order `{other}` (expected uniform or cyclic)"
            )),
        }
    }
}

/// Distribution of the injected staleness in simulated transports. Draws
/// are always clamped by the per-edge bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayKind {
    /// Uniform over {0, ..., T_ij}.
    Uniform,
    /// Always the given lag (must be within every edge bound).
    Fixed(u64),
    /// Always the edge bound itself: the adversarial worst case.
    AdversarialMax,
}

impl FromStr for DelayKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "uniform" {
            return Ok(DelayKind::Uniform);
        }
        if s == "adversarial" {
            return Ok(DelayKind::AdversarialMax);
        }
        if let Some(v) = s.strip_prefix("fixed:") {
            let tau: u64 = v.parse().map_err(|_| format!("bad fixed delay `{v}`"))?;
            return Ok(DelayKind::Fixed(tau));
        }
        Err(format!(
            "unknown delay distribution `{s}` (expected uniform, fixed:<t>, or adversarial)"
        ))
    }
}

/// Per-worker penalty constants with optional per-edge overrides. Every
/// edge (i, j) resolves to the override if present, else worker i's value,
/// else the global default.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoTable {
    pub default: f64,
    pub per_worker: BTreeMap<WorkerId, f64>,
    pub per_edge: BTreeMap<(WorkerId, BlockId), f64>,
}

impl RhoTable {
    pub fn uniform(rho: f64) -> Self {
        RhoTable {
            default: rho,
            per_worker: BTreeMap::new(),
            per_edge: BTreeMap::new(),
        }
    }

    pub fn worker(&self, i: WorkerId) -> f64 {
        *self.per_worker.get(&i).unwrap_or(&self.default)
    }

    pub fn edge(&self, i: WorkerId, j: BlockId) -> f64 {
        *self.per_edge.get(&(i, j)).unwrap_or_else(|| {
            self.per_worker.get(&i).unwrap_or(&self.default)
        })
    }

    fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.default)
            .chain(self.per_worker.values().copied())
            .chain(self.per_edge.values().copied());
        for r in all {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!(
                    "penalty rho must be finite and positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-edge staleness caps T_ij with a uniform default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayTable {
    pub default: u64,
    pub per_edge: BTreeMap<(WorkerId, BlockId), u64>,
}

impl DelayTable {
    pub fn uniform(bound: u64) -> Self {
        DelayTable {
            default: bound,
            per_edge: BTreeMap::new(),
        }
    }

    pub fn bound(&self, i: WorkerId, j: BlockId) -> u64 {
        *self.per_edge.get(&(i, j)).unwrap_or(&self.default)
    }

    pub fn max_bound(&self) -> u64 {
        self.per_edge
            .values()
            .copied()
            .fold(self.default, u64::max)
    }

    pub fn is_all_zero(&self) -> bool {
        self.default == 0 && self.per_edge.values().all(|&t| t == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub rho: RhoTable,
    /// Proximal damping on the block servers. Keeps the served copy from
    /// jumping arbitrarily far on one push; required positive whenever the
    /// run is asynchronous.
    pub gamma: f64,
    /// L1 weight of the shared regularizer.
    pub lambda: f64,
    /// Box half-width: every consensus coordinate is clamped to [-clip, clip].
    pub clip: f64,
    pub delay: DelayTable,
    pub delay_kind: DelayKind,
    pub filter: FilterSchedule,
    pub delta_push: bool,
    pub block_order: BlockOrder,
    pub seed: u64,
    /// Per-worker epoch budget (sync mode: full sweeps per worker).
    pub max_epochs: u64,
    /// Target stationarity for time-to-accuracy reporting.
    pub tolerance: f64,
    /// Sample objective/stationarity every this many simulated events, in
    /// addition to every commit. Zero disables the diagnostic series
    /// entirely, commit rows included, leaving only the final snapshot;
    /// metric evaluation walks every shard, so this is the knob for runs
    /// where that cost would drown the thing being measured.
    pub metric_every: u64,
    /// Record per-event rows (steps, deliveries) in the trajectory. Metric
    /// rows are always kept. Turning this off bounds memory on long runs.
    pub log_events: bool,
    /// Thread mode only: abort when an observed staleness exceeds this.
    pub staleness_kill: Option<u64>,
    /// Use the prose variant of the server prox constant (mu = sum of rho)
    /// instead of gamma + sum of rho. Kept for comparison runs.
    pub prose_prox_mu: bool,
    /// Evaluate the stationarity map's prox argument in its regrouped form.
    /// Algebraically identical; changes only float association. Kept for
    /// comparison runs.
    pub zhat_regrouped: bool,
    /// Known lower bound on the total loss, used by the step-size condition
    /// reports. Zero is correct for the built-in nonnegative losses.
    pub f_lower: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::AsyncSim,
            rho: RhoTable::uniform(100.0),
            gamma: 0.01,
            lambda: 0.0,
            clip: 1e4,
            delay: DelayTable::uniform(0),
            delay_kind: DelayKind::Uniform,
            filter: FilterSchedule::Off,
            delta_push: false,
            block_order: BlockOrder::UniformRandom,
            seed: 0,
            max_epochs: 1000,
            tolerance: 1e-3,
            metric_every: 100,
            log_events: true,
            staleness_kill: None,
            prose_prox_mu: false,
            zhat_regrouped: false,
            f_lower: 0.0,
        }
    }
}

impl RunConfig {
    /// Checks the cross-field rules that individual setters cannot see:
    /// sync runs may not inject delay, async runs need positive damping,
    /// and a fixed delay draw must fit under every edge bound it will meet.
    pub fn validate(&self) -> Result<()> {
        self.rho.validate()?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        match self.mode {
            Mode::Sync => {
                if !self.delay.is_all_zero() {
                    return Err(Error::Config(
                        "synchronous mode forces delay_bound = 0".into(),
                    ));
                }
            }
            Mode::AsyncSim | Mode::AsyncThreads => {
                if self.gamma == 0.0 {
                    return Err(Error::Config(
                        "gamma = 0 is only allowed in synchronous mode".into(),
                    ));
                }
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be finite and positive, got {}",
                self.tolerance
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if let DelayKind::Fixed(tau) = self.delay_kind {
            let min_bound = self
                .delay
                .per_edge
                .values()
                .copied()
                .fold(self.delay.default, u64::min);
            if tau > min_bound {
                return Err(Error::Config(format!(
                    "fixed delay {tau} exceeds the smallest edge bound {min_bound}"
                )));
            }
        }
        if !self.f_lower.is_finite() {
            return Err(Error::Config("f_lower must be finite".into()));
        }
        Ok(())
    }
}

/// A parsed config file: the run parameters plus the inline topology when
/// both `[blocks]` and `[edges]` sections are present.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub run: RunConfig,
    pub topology: Option<Topology>,
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
    parse_config(&text, &path.display().to_string())
}

/// Parses config text. `origin` labels errors (a path or a synthetic name).
pub fn parse_config(text: &str, origin: &str) -> Result<ConfigFile> {
    #[derive(PartialEq)]
    enum Section {
        Top,
        Blocks,
        Edges,
    }

    let fail = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };

    let mut run = RunConfig::default();
    let mut section = Section::Top;
    let mut block_dims: BTreeMap<usize, usize> = BTreeMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut declared_workers: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| fail(lineno, format!("unterminated section header `{line}`")))?;
            section = match name.trim() {
                "blocks" => Section::Blocks,
                "edges" => Section::Edges,
                other => return Err(fail(lineno, format!("unknown section `[{other}]`"))),
            };
            continue;
        }
        match section {
            Section::Top => {
                let (key, value) = split_kv(line)
                    .ok_or_else(|| fail(lineno, format!("expected `key = value`, got `{line}`")))?;
                apply_key(&mut run, key, value).map_err(|msg| fail(lineno, msg))?;
                if key == "workers" {
                    declared_workers = Some(
                        value
                            .parse()
                            .map_err(|_| fail(lineno, format!("bad worker count `{value}`")))?,
                    );
                }
            }
            Section::Blocks => {
                let (key, value) = split_kv(line).ok_or_else(|| {
                    fail(lineno, format!("expected `block = dimension`, got `{line}`"))
                })?;
                let j: usize = key
                    .parse()
                    .map_err(|_| fail(lineno, format!("bad block id `{key}`")))?;
                let d: usize = value
                    .parse()
                    .map_err(|_| fail(lineno, format!("bad block dimension `{value}`")))?;
                if block_dims.insert(j, d).is_some() {
                    return Err(fail(lineno, format!("block {j} declared twice")));
                }
            }
            Section::Edges => {
                let mut parts = line.split_whitespace();
                let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(fail(lineno, format!("expected `worker block`, got `{line}`")));
                };
                let i: usize = a
                    .parse()
                    .map_err(|_| fail(lineno, format!("bad worker id `{a}`")))?;
                let j: usize = b
                    .parse()
                    .map_err(|_| fail(lineno, format!("bad block id `{b}`")))?;
                edges.push((i, j));
            }
        }
    }

    run.validate()?;

    let topology = if block_dims.is_empty() && edges.is_empty() {
        None
    } else {
        if block_dims.is_empty() {
            return Err(Error::Config(format!(
                "{origin}: [edges] given without [blocks]"
            )));
        }
        if edges.is_empty() {
            return Err(Error::Config(format!(
                "{origin}: [blocks] given without [edges]"
            )));
        }
        // Block ids must be dense 0..M.
        let dims: Vec<usize> = (0..block_dims.len())
            .map(|j| {
                block_dims.get(&j).copied().ok_or_else(|| {
                    Error::Config(format!("{origin}: block ids must be dense; missing block {j}"))
                })
            })
            .collect::<Result<_>>()?;
        let workers = declared_workers
            .unwrap_or_else(|| edges.iter().map(|&(i, _)| i + 1).max().unwrap_or(0));
        Some(build_topology(workers, &edges, &dims)?)
    };

    Ok(ConfigFile { run, topology })
}

fn split_kv(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn apply_key(run: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
        value.parse().map_err(|_| format!("bad {what} `{value}`"))
    }
    fn boolean(value: &str) -> std::result::Result<bool, String> {
        match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(format!("bad boolean `{other}`")),
        }
    }

    // Keys with id arguments: `rho_worker 2`, `rho_edge 2 3`, `delay_edge 2 3`.
    let mut head = key.split_whitespace();
    let base = head.next().unwrap_or("");
    let args: Vec<&str> = head.collect();
    match (base, args.as_slice()) {
        ("mode", []) => run.mode = value.parse()?,
        ("rho", []) => run.rho.default = num(value, "rho")?,
        ("rho_worker", [i]) => {
            let i: usize = num(i, "worker id")?;
            run.rho.per_worker.insert(WorkerId(i), num(value, "rho")?);
        }
        ("rho_edge", [i, j]) => {
            let i: usize = num(i, "worker id")?;
            let j: usize = num(j, "block id")?;
            run.rho
                .per_edge
                .insert((WorkerId(i), BlockId(j)), num(value, "rho")?);
        }
        ("gamma", []) => run.gamma = num(value, "gamma")?,
        ("lambda", []) => run.lambda = num(value, "lambda")?,
        ("clip", []) => {
            run.clip = if value == "inf" {
                f64::INFINITY
            } else {
                num(value, "clip")?
            }
        }
        ("delay_bound", []) => run.delay.default = num(value, "delay bound")?,
        ("delay_edge", [i, j]) => {
            let i: usize = num(i, "worker id")?;
            let j: usize = num(j, "block id")?;
            run.delay
                .per_edge
                .insert((WorkerId(i), BlockId(j)), num(value, "delay bound")?);
        }
        ("delay_dist", []) => run.delay_kind = value.parse()?,
        ("filter", []) => run.filter = value.parse()?,
        ("delta_push", []) => run.delta_push = boolean(value)?,
        ("block_order", []) => run.block_order = value.parse()?,
        ("seed", []) => run.seed = num(value, "seed")?,
        ("max_epochs", []) => run.max_epochs = num(value, "epoch count")?,
        ("tolerance", []) => run.tolerance = num(value, "tolerance")?,
        ("metric_every", []) => run.metric_every = num(value, "metric cadence")?,
        ("log_events", []) => run.log_events = boolean(value)?,
        ("staleness_kill", []) => run.staleness_kill = Some(num(value, "staleness kill")?),
        ("prose_prox_mu", []) => run.prose_prox_mu = boolean(value)?,
        ("zhat_regrouped", []) => run.zhat_regrouped = boolean(value)?,
        ("f_lower", []) => run.f_lower = num(value, "loss lower bound")?,
        ("workers", []) => {
            let _: usize = num(value, "worker count")?;
            // Consumed by the topology assembly in parse_config.
        }
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}
