//! Run trajectory: the ordered event log with interleaved metric samples,
//! and its CSV serialization.
//!
//! One table holds everything. Step, push, and pull rows record what the
//! transport did; commit rows and cadence-sample rows additionally carry the
//! objective and the stationarity metric evaluated at that instant. The CSV
//! starts with a versioned header line so readers can reject foreign files:
//!
//! ```text
//! # badmm-trajectory schema=1
//! event,epoch,worker,block,kind,staleness,objective,stationarity
//! ```
//!
//! Simulated transports write no wall-clock data anywhere in the table, so
//! equal-seed runs produce byte-identical files.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const TRAJECTORY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A worker epoch whose push was transmitted.
    Step,
    /// A worker epoch whose push the significance filter suppressed.
    StepFiltered,
    /// A push delivered to its block server.
    Push,
    /// A pull served to a worker; `staleness` carries the version lag.
    Pull,
    /// A block commit; carries objective and stationarity.
    Commit,
    /// A cadence metric sample; carries objective and stationarity.
    Sample,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Step => "step",
            EventKind::StepFiltered => "step_filtered",
            EventKind::Push => "push",
            EventKind::Pull => "pull",
            EventKind::Commit => "commit",
            EventKind::Sample => "sample",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "step" => Ok(EventKind::Step),
            "step_filtered" => Ok(EventKind::StepFiltered),
            "push" => Ok(EventKind::Push),
            "pull" => Ok(EventKind::Pull),
            "commit" => Ok(EventKind::Commit),
            "sample" => Ok(EventKind::Sample),
            other => Err(format!("unknown event kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    /// Global event index, dense from 0 within a run.
    pub event: u64,
    /// Kind-dependent counter: the worker's epoch for steps, the sender's
    /// epoch for pushes, the commit count for commits, the tick for samples.
    pub epoch: u64,
    pub worker: Option<usize>,
    pub block: Option<usize>,
    pub kind: EventKind,
    pub staleness: Option<u64>,
    pub objective: Option<f64>,
    pub stationarity: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<EventRecord>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory { rows: Vec::new() }
    }

    pub fn push(&mut self, row: EventRecord) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stationarity samples in order, commits and cadence samples alike.
    pub fn p_series(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.stationarity).collect()
    }

    /// Stationarity sampled at commits only, with the event index of each.
    pub fn commit_p_series(&self) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.kind == EventKind::Commit)
            .filter_map(|r| r.stationarity.map(|p| (r.event, p)))
            .collect()
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.objective)
    }

    pub fn last_stationarity(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.stationarity)
    }

    pub fn count_kind(&self, kind: EventKind) -> usize {
        self.rows.iter().filter(|r| r.kind == kind).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let ctx = "writing trajectory";
        writeln!(out, "# badmm-trajectory schema={TRAJECTORY_SCHEMA}")
            .map_err(|e| Error::io(ctx, e))?;
        writeln!(
            out,
            "event,epoch,worker,block,kind,staleness,objective,stationarity"
        )
        .map_err(|e| Error::io(ctx, e))?;
        for r in &self.rows {
            write!(out, "{},{},", r.event, r.epoch).map_err(|e| Error::io(ctx, e))?;
            write_opt(&mut out, r.worker, ctx)?;
            write_opt(&mut out, r.block, ctx)?;
            write!(out, "{},", r.kind).map_err(|e| Error::io(ctx, e))?;
            write_opt(&mut out, r.staleness, ctx)?;
            write_opt(&mut out, r.objective, ctx)?;
            match r.stationarity {
                Some(v) => writeln!(out, "{v}").map_err(|e| Error::io(ctx, e))?,
                None => writeln!(out).map_err(|e| Error::io(ctx, e))?,
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, origin: &str) -> Result<Trajectory> {
        let mut lines = input.lines().enumerate();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(origin, 1, "empty file"))?
            .1
            .map_err(|e| Error::io(format!("reading {origin}"), e))?;
        let schema: u32 = header
            .strip_prefix("# badmm-trajectory schema=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_err(origin, 1, "missing trajectory header"))?;
        if schema != TRAJECTORY_SCHEMA {
            return Err(Error::SchemaMismatch {
                path: origin.to_string(),
                expected: TRAJECTORY_SCHEMA,
                found: schema,
            });
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(format!("reading {origin}"), e))?;
            if lineno == 2 {
                // Column header line.
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 8 {
                return Err(parse_err(
                    origin,
                    lineno,
                    &format!("expected 8 columns, got {}", cols.len()),
                ));
            }
            let field = |k: usize, what: &str| -> Result<u64> {
                cols[k]
                    .parse()
                    .map_err(|_| parse_err(origin, lineno, &format!("bad {what} `{}`", cols[k])))
            };
            let opt_num = |k: usize, what: &str| -> Result<Option<u64>> {
                if cols[k].is_empty() {
                    Ok(None)
                } else {
                    field(k, what).map(Some)
                }
            };
            let opt_float = |k: usize, what: &str| -> Result<Option<f64>> {
                if cols[k].is_empty() {
                    Ok(None)
                } else {
                    cols[k]
                        .parse()
                        .map(Some)
                        .map_err(|_| parse_err(origin, lineno, &format!("bad {what} `{}`", cols[k])))
                }
            };
            rows.push(EventRecord {
                event: field(0, "event index")?,
                epoch: field(1, "epoch")?,
                worker: opt_num(2, "worker")?.map(|v| v as usize),
                block: opt_num(3, "block")?.map(|v| v as usize),
                kind: cols[4]
                    .parse()
                    .map_err(|msg: String| parse_err(origin, lineno, &msg))?,
                staleness: opt_num(5, "staleness")?,
                objective: opt_float(6, "objective")?,
                stationarity: opt_float(7, "stationarity")?,
            });
        }
        Ok(Trajectory { rows })
    }
}

fn write_opt<W: Write, T: fmt::Display>(out: &mut W, v: Option<T>, ctx: &str) -> Result<()> {
    match v {
        Some(v) => write!(out, "{v},").map_err(|e| Error::io(ctx, e)),
        None => write!(out, ",").map_err(|e| Error::io(ctx, e)),
    }
}

fn parse_err(origin: &str, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.to_string(),
    }
}
