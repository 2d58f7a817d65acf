//! LIBSVM text-format ingestion.
//!
//! One sample per line: `label idx:val idx:val ...` with 1-based, strictly
//! ascending indices. Files ending in `.gz` are decompressed on the fly.
//! Samples are dealt round-robin: shard i receives sample lines l with
//! l = i (mod N), counting only nonblank lines.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::block::BlockMap;
use crate::error::{Error, Result};
use crate::problems::{LocalDataset, Sample, SparseVec};

/// How labels are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Binary classification: 0 maps to -1; anything outside {-1, 0, +1}
    /// is rejected.
    Classification,
    /// Regression: any finite label passes through unchanged.
    Regression,
}

/// Shards plus the coordinate layout derived from the file.
#[derive(Debug)]
pub struct LoadedData {
    pub shards: Vec<LocalDataset>,
    pub block_map: BlockMap,
    /// Number of feature coordinates (the largest index seen).
    pub num_features: usize,
    pub num_samples: usize,
}

/// Reads a LIBSVM file, shards it round-robin over `num_shards` workers,
/// and lays out blocks as contiguous ranges of `block_width` coordinates.
pub fn load_libsvm(
    path: &Path,
    num_shards: usize,
    block_width: usize,
    labels: LabelPolicy,
) -> Result<LoadedData> {
    if num_shards == 0 {
        return Err(Error::Config("need at least one shard".into()));
    }
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_libsvm(
        BufReader::new(reader),
        &path.display().to_string(),
        num_shards,
        block_width,
        labels,
    )
}

/// Same as [`load_libsvm`] but over any reader; `origin` labels errors.
pub fn parse_libsvm(
    reader: impl BufRead,
    origin: &str,
    num_shards: usize,
    block_width: usize,
    labels: LabelPolicy,
) -> Result<LoadedData> {
    let fail = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };

    let mut per_shard: Vec<Vec<Sample>> = vec![Vec::new(); num_shards];
    let mut max_index: u32 = 0;
    let mut sample_count = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading {origin}"), e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let raw_label: f64 = label_tok
            .parse()
            .map_err(|_| fail(lineno, format!("bad label `{label_tok}`")))?;
        let label = match labels {
            LabelPolicy::Classification => {
                if raw_label == 0.0 {
                    -1.0
                } else if raw_label == 1.0 || raw_label == -1.0 {
                    raw_label
                } else {
                    return Err(fail(
                        lineno,
                        format!("label {raw_label} not in {{-1, 0, +1}}"),
                    ));
                }
            }
            LabelPolicy::Regression => {
                if !raw_label.is_finite() {
                    return Err(fail(lineno, format!("non-finite label `{label_tok}`")));
                }
                raw_label
            }
        };

        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut prev: Option<u32> = None;
        for tok in tokens {
            let (i_str, v_str) = tok
                .split_once(':')
                .ok_or_else(|| fail(lineno, format!("expected `index:value`, got `{tok}`")))?;
            let one_based: u32 = i_str
                .parse()
                .map_err(|_| fail(lineno, format!("bad feature index `{i_str}`")))?;
            if one_based == 0 {
                return Err(fail(lineno, "feature indices are 1-based; got 0".into()));
            }
            let g = one_based - 1;
            if let Some(p) = prev {
                if g <= p {
                    return Err(fail(
                        lineno,
                        format!("feature indices must be strictly ascending at `{tok}`"),
                    ));
                }
            }
            prev = Some(g);
            let v: f64 = v_str
                .parse()
                .map_err(|_| fail(lineno, format!("bad feature value `{v_str}`")))?;
            if !v.is_finite() {
                return Err(fail(lineno, format!("non-finite feature value `{v_str}`")));
            }
            // Explicit zeros carry no information and would fabricate
            // edges, so they are dropped.
            if v == 0.0 {
                continue;
            }
            max_index = max_index.max(one_based);
            indices.push(g);
            values.push(v);
        }

        per_shard[sample_count % num_shards].push(Sample {
            features: SparseVec::new(indices, values)?,
            label,
        });
        sample_count += 1;
    }

    if sample_count == 0 {
        return Err(Error::Config(format!("{origin}: no samples")));
    }
    if max_index == 0 {
        return Err(Error::Config(format!(
            "{origin}: no nonzero features anywhere"
        )));
    }
    for (i, shard) in per_shard.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::Config(format!(
                "{origin}: shard {i} receives no samples ({sample_count} samples over {num_shards} shards)"
            )));
        }
    }

    let num_features = max_index as usize;
    let block_map = BlockMap::contiguous(num_features, block_width)?;
    let shards = per_shard
        .into_iter()
        .map(LocalDataset::new)
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedData {
        shards,
        block_map,
        num_features,
        num_samples: sample_count,
    })
}
