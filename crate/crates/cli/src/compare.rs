//! The `compare` subcommand: a textual diff of two experiment summaries.
//!
//! Repetitions are paired in order; for each pair the report lists both
//! values and the difference (b minus a) of the final objective, the final
//! stationarity, and the commits-to-accuracy levels, followed by the
//! message counters that quantify what the significance filter and delta
//! encoding saved. Reads only summary.json, so it works on directories
//! whose bulkier artifacts were deleted.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::process::ExitCode;

use serde::Deserialize;

use badmm_core::{Error, Result};

use crate::summary::SUMMARY_SCHEMA;
use crate::CompareArgs;

#[derive(Deserialize)]
struct SummaryDoc {
    schema: u32,
    mode: String,
    runs: Vec<RunDoc>,
}

#[derive(Deserialize)]
struct RunDoc {
    seed: u64,
    #[serde(default)]
    failed: bool,
    final_objective: Option<f64>,
    final_stationarity: Option<f64>,
    #[serde(default)]
    t_epsilon: Vec<TimeDoc>,
    #[serde(default)]
    worker_steps: u64,
    #[serde(default)]
    filtered_steps: u64,
    #[serde(default)]
    pushes_delivered: u64,
    #[serde(default)]
    pulls_served: u64,
}

#[derive(Deserialize)]
struct TimeDoc {
    epsilon: f64,
    commits: Option<u64>,
}

pub fn run(args: &CompareArgs) -> Result<ExitCode> {
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    print!(
        "{}",
        report(&a, &b, &args.a.display().to_string(), &args.b.display().to_string())
    );
    Ok(ExitCode::SUCCESS)
}

fn load(dir: &Path) -> Result<SummaryDoc> {
    let path = dir.join("summary.json");
    let file =
        File::open(&path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let doc: SummaryDoc = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::json(format!("reading {}", path.display()), e))?;
    if doc.schema != SUMMARY_SCHEMA {
        return Err(Error::SchemaMismatch {
            path: path.display().to_string(),
            expected: SUMMARY_SCHEMA,
            found: doc.schema,
        });
    }
    Ok(doc)
}

fn report(a: &SummaryDoc, b: &SummaryDoc, name_a: &str, name_b: &str) -> String {
    use std::fmt::Write as _;

    let mut out = String::new();
    let _ = writeln!(out, "a: {name_a} (mode {}, {} runs)", a.mode, a.runs.len());
    let _ = writeln!(out, "b: {name_b} (mode {}, {} runs)", b.mode, b.runs.len());
    if a.runs.len() != b.runs.len() {
        let _ = writeln!(out, "note: repetition counts differ; pairing in order");
    }

    for (idx, (ra, rb)) in a.runs.iter().zip(&b.runs).enumerate() {
        let _ = writeln!(out, "pair {idx}: seed {} vs seed {}", ra.seed, rb.seed);
        if ra.failed || rb.failed {
            let _ = writeln!(
                out,
                "  failed: {} vs {} (metrics below describe the saved state)",
                ra.failed, rb.failed
            );
        }
        let _ = writeln!(
            out,
            "  final objective:    {}",
            diff_line(ra.final_objective, rb.final_objective)
        );
        let _ = writeln!(
            out,
            "  final stationarity: {}",
            diff_line(ra.final_stationarity, rb.final_stationarity)
        );
        for ta in &ra.t_epsilon {
            let Some(tb) = rb.t_epsilon.iter().find(|t| t.epsilon == ta.epsilon) else {
                continue;
            };
            let _ = writeln!(
                out,
                "  commits to eps={}: {}",
                ta.epsilon,
                count_line(ta.commits, tb.commits)
            );
        }
        let _ = writeln!(
            out,
            "  worker steps:       {}",
            count_line(Some(ra.worker_steps), Some(rb.worker_steps))
        );
        let _ = writeln!(
            out,
            "  filtered steps:     {}",
            count_line(Some(ra.filtered_steps), Some(rb.filtered_steps))
        );
        let _ = writeln!(
            out,
            "  pushes delivered:   {}",
            count_line(Some(ra.pushes_delivered), Some(rb.pushes_delivered))
        );
        let _ = writeln!(
            out,
            "  pulls served:       {}",
            count_line(Some(ra.pulls_served), Some(rb.pulls_served))
        );
    }
    out
}

fn diff_line(a: Option<f64>, b: Option<f64>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => format!("{a} vs {b} (delta {})", b - a),
        (a, b) => format!("{} vs {}", opt(a), opt(b)),
    }
}

fn count_line(a: Option<u64>, b: Option<u64>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => {
            let delta = b as i128 - a as i128;
            format!("{a} vs {b} (delta {delta})")
        }
        (a, b) => format!("{} vs {}", opt(a), opt(b)),
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "n/a".into(), |v| v.to_string())
}
