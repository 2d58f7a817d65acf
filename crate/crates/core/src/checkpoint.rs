//! Server-state checkpoints.
//!
//! A checkpoint is a JSON document (schema 1) holding one record per block:
//! commit count, version, the committed and eager consensus values, the
//! running payload sum, and the per-worker payload cache. Numbers are
//! written in shortest round-trip form, so capture, write, read, restore
//! reproduces the server fleet exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::block::BlockVector;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::problems::Regularizer;
use crate::server::ServerState;
use crate::topology::{BlockId, Topology, WorkerId};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedPayload {
    pub worker: usize,
    pub w: Vec<f64>,
}

/// Persistent fields of one block server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: usize,
    pub version: u64,
    pub commits: u64,
    pub z: Vec<f64>,
    pub z_dirty: Vec<f64>,
    pub s: Vec<f64>,
    /// Latest full payload per neighboring worker, ascending by worker.
    pub w_cache: Vec<CachedPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: u32,
    pub blocks: Vec<BlockRecord>,
}

impl Checkpoint {
    pub fn capture(servers: &[ServerState]) -> Self {
        let blocks = servers
            .iter()
            .map(|srv| BlockRecord {
                block: srv.block().0,
                version: srv.version(),
                commits: srv.commit_count(),
                z: srv.z().values.clone(),
                z_dirty: srv.z_dirty().values.clone(),
                s: srv.s().values.clone(),
                w_cache: srv
                    .w_cache()
                    .iter()
                    .map(|(&i, w)| CachedPayload {
                        worker: i.0,
                        w: w.values.clone(),
                    })
                    .collect(),
            })
            .collect();
        Checkpoint {
            schema: SCHEMA,
            blocks,
        }
    }

    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)
            .map_err(|e| Error::json("writing checkpoint", e))?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("writing checkpoint", e))
    }

    /// Parses and schema-checks a checkpoint; `origin` labels errors.
    pub fn read_json(input: impl Read, origin: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(input)
            .map_err(|e| Error::json(format!("reading checkpoint {origin}"), e))?;
        if ckpt.schema != SCHEMA {
            return Err(Error::SchemaMismatch {
                path: origin.to_string(),
                expected: SCHEMA,
                found: ckpt.schema,
            });
        }
        Ok(ckpt)
    }

    /// Rebuilds the full server fleet, one state per block in block order.
    /// The topology, config, and regularizer must match the run that
    /// produced the checkpoint; dimension and feasibility checks catch
    /// mismatches but cannot prove provenance.
    pub fn restore_servers(
        &self,
        topology: &Topology,
        config: &RunConfig,
        reg: Regularizer,
    ) -> Result<Vec<ServerState>> {
        if self.blocks.len() != topology.num_blocks() {
            return Err(Error::Config(format!(
                "checkpoint covers {} blocks but the topology has {}",
                self.blocks.len(),
                topology.num_blocks()
            )));
        }
        let mut records: Vec<&BlockRecord> = self.blocks.iter().collect();
        records.sort_by_key(|r| r.block);
        if let Some(w) = records.windows(2).find(|w| w[0].block == w[1].block) {
            return Err(Error::Config(format!(
                "checkpoint lists block {} twice",
                w[0].block
            )));
        }
        records
            .iter()
            .enumerate()
            .map(|(expect, rec)| {
                if rec.block != expect {
                    return Err(Error::Config(format!(
                        "checkpoint has no record for block {expect}"
                    )));
                }
                let j = BlockId(rec.block);
                let vec = |values: &Vec<f64>| BlockVector::new(j, values.clone());
                let w_cache: BTreeMap<WorkerId, BlockVector> = rec
                    .w_cache
                    .iter()
                    .map(|c| (WorkerId(c.worker), vec(&c.w)))
                    .collect();
                ServerState::restore(
                    j,
                    topology,
                    config,
                    reg,
                    vec(&rec.z),
                    vec(&rec.z_dirty),
                    vec(&rec.s),
                    w_cache,
                    rec.version,
                    rec.commits,
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::BlockMap;
    use crate::config::{Mode, RhoTable};
    use crate::problems::{LocalDataset, LossKind, ProblemInstance, Sample, SparseVec};
    use crate::transport::run_sync;

    fn fixture() -> (ProblemInstance, RunConfig) {
        let sample = |feats: &[(u32, f64)], label: f64| Sample {
            features: SparseVec::new(
                feats.iter().map(|&(i, _)| i).collect(),
                feats.iter().map(|&(_, v)| v).collect(),
            )
            .unwrap(),
            label,
        };
        let shards = vec![
            LocalDataset::new(vec![
                sample(&[(0, 1.0), (1, -0.5)], 0.6),
                sample(&[(2, 0.8)], -0.2),
            ])
            .unwrap(),
            LocalDataset::new(vec![sample(&[(1, 1.2), (2, 0.4)], 0.1)]).unwrap(),
        ];
        let problem = ProblemInstance::from_shards(
            LossKind::LeastSquares,
            shards,
            BlockMap::from_dims(&[2, 1]),
            Regularizer::new(0.05, 1e4).unwrap(),
        )
        .unwrap();
        let config = RunConfig {
            mode: Mode::Sync,
            rho: RhoTable::uniform(4.0),
            gamma: 0.5,
            max_epochs: 30,
            ..RunConfig::default()
        };
        (problem, config)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (problem, config) = fixture();
        let out = run_sync(&problem, &config).unwrap();
        let ckpt = Checkpoint::capture(&out.servers);

        let mut bytes = Vec::new();
        ckpt.write_json(&mut bytes).unwrap();
        let back = Checkpoint::read_json(bytes.as_slice(), "mem").unwrap();
        assert_eq!(ckpt, back);

        let servers = back
            .restore_servers(&problem.topology, &config, problem.regularizer)
            .unwrap();
        for (live, restored) in out.servers.iter().zip(&servers) {
            assert_eq!(live.z().values, restored.z().values);
            assert_eq!(live.z_dirty().values, restored.z_dirty().values);
            assert_eq!(live.s().values, restored.s().values);
            assert_eq!(live.version(), restored.version());
            assert_eq!(live.commit_count(), restored.commit_count());
            assert_eq!(live.w_cache(), restored.w_cache());
        }
    }

    #[test]
    fn garbage_and_wrong_schema_are_rejected() {
        let err = Checkpoint::read_json(&b"not json"[..], "mem").unwrap_err();
        assert!(err.is_io(), "{err}");

        let doc = r#"{"schema": 2, "blocks": []}"#;
        let err = Checkpoint::read_json(doc.as_bytes(), "mem").unwrap_err();
        assert!(
            matches!(
                err,
                Error::SchemaMismatch {
                    expected: 1,
                    found: 2,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn missing_and_duplicate_blocks_are_rejected() {
        let (problem, config) = fixture();
        let out = run_sync(&problem, &config).unwrap();
        let ckpt = Checkpoint::capture(&out.servers);

        let mut short = ckpt.clone();
        short.blocks.pop();
        let err = short
            .restore_servers(&problem.topology, &config, problem.regularizer)
            .unwrap_err();
        assert!(err.to_string().contains("covers 1 blocks"), "{err}");

        let mut doubled = ckpt.clone();
        doubled.blocks[1] = doubled.blocks[0].clone();
        let err = doubled
            .restore_servers(&problem.topology, &config, problem.regularizer)
            .unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (problem, config) = fixture();
        let out = run_sync(&problem, &config).unwrap();
        let mut ckpt = Checkpoint::capture(&out.servers);
        ckpt.blocks[0].z.push(0.0);
        let err = ckpt
            .restore_servers(&problem.topology, &config, problem.regularizer)
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }), "{err}");
    }
}
