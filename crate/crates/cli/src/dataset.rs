//! The `generate` subcommand: synthetic data to disk.
//!
//! Writes `data.libsvm` (plain LIBSVM text, 1-based ascending indices) and
//! `model.json` (the planted model plus the generator parameters). Samples
//! were dealt to shards round-robin, so they are written back in global
//! order; reloading the file with the same worker count rebuilds the exact
//! shards the generator produced.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::process::ExitCode;

use serde::Serialize;

use badmm_core::problems::synthetic::{generate, SyntheticSpec};
use badmm_core::problems::LocalDataset;
use badmm_core::{Error, Result};

use crate::summary::loss_name;
use crate::GenerateArgs;

#[derive(Serialize)]
struct ModelDoc<'a> {
    schema: u32,
    workers: usize,
    blocks: usize,
    block_width: usize,
    samples: usize,
    density: f64,
    noise: f64,
    loss: &'a str,
    seed: u64,
    coordinates: usize,
    /// Planted ground-truth model, one entry per coordinate.
    model: &'a [f64],
}

pub fn run(args: &GenerateArgs) -> Result<ExitCode> {
    let spec = SyntheticSpec {
        workers: args.workers,
        blocks: args.blocks,
        block_width: args.block_width,
        samples: args.samples,
        density: args.density,
        noise: args.noise,
        kind: args.loss,
        seed: args.seed,
    };
    let data = generate(&spec)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("creating {}", args.out.display()), e))?;

    let data_path = args.out.join("data.libsvm");
    let file = File::create(&data_path)
        .map_err(|e| Error::io(format!("creating {}", data_path.display()), e))?;
    let mut out = BufWriter::new(file);
    write_libsvm(&mut out, &data.shards)?;
    out.flush()
        .map_err(|e| Error::io(format!("writing {}", data_path.display()), e))?;

    crate::summary::write_json(
        &args.out.join("model.json"),
        &ModelDoc {
            schema: 1,
            workers: args.workers,
            blocks: args.blocks,
            block_width: args.block_width,
            samples: args.samples,
            density: args.density,
            noise: args.noise,
            loss: loss_name(args.loss),
            seed: args.seed,
            coordinates: data.model.len(),
            model: &data.model,
        },
    )?;

    println!(
        "wrote {} samples over {} coordinates to {}",
        args.samples,
        data.model.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Emits samples in their original global order: sample l was dealt to
/// shard l mod n, position l div n. Values print in shortest round-trip
/// form, so the file carries the exact floats.
fn write_libsvm(out: &mut impl Write, shards: &[LocalDataset]) -> Result<()> {
    let ctx = "writing dataset";
    let n = shards.len();
    let total: usize = shards.iter().map(|s| s.len()).sum();
    for l in 0..total {
        let sample = &shards[l % n].samples()[l / n];
        write!(out, "{}", sample.label).map_err(|e| Error::io(ctx, e))?;
        for (g, v) in sample.features.iter() {
            write!(out, " {}:{}", g + 1, v).map_err(|e| Error::io(ctx, e))?;
        }
        writeln!(out).map_err(|e| Error::io(ctx, e))?;
    }
    Ok(())
}
