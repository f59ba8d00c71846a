//! Append-only results store: delimited text with a typed header plus a
//! sidecar manifest, diff-able and lossless. Rows are keyed by
//! (experiment, learner, objective, context size, seed); appending an
//! existing key is a no-op, which makes reruns idempotent.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{ErrorKind, PrequentialCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub experiment_id: String,
    pub learner: String,
    pub objective: String,
    pub family: String,
    pub context_size: usize,
    pub seed: u64,
    pub error: f64,
    pub error_kind: String,
    pub timestamp: u64,
    pub code_version: String,
}

impl ResultsRow {
    pub fn key(&self) -> (String, String, String, usize, u64) {
        (
            self.experiment_id.clone(),
            self.learner.clone(),
            self.objective.clone(),
            self.context_size,
            self.seed,
        )
    }
}

pub fn code_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

pub fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    columns: Vec<String>,
    created_at: u64,
}

/// CSV-backed store; the sidecar `<path>.manifest.json` pins the schema.
pub struct ResultsStore {
    path: PathBuf,
}

impl ResultsStore {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut writer = csv::Writer::from_path(path)?;
            writer.write_record([
                "experiment_id",
                "learner",
                "objective",
                "family",
                "context_size",
                "seed",
                "error",
                "error_kind",
                "timestamp",
                "code_version",
            ])?;
            writer.flush()?;
            let manifest = StoreManifest {
                format_version: 1,
                columns: [
                    "experiment_id",
                    "learner",
                    "objective",
                    "family",
                    "context_size",
                    "seed",
                    "error",
                    "error_kind",
                    "timestamp",
                    "code_version",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                created_at: unix_timestamp(),
            };
            std::fs::write(
                Self::manifest_path(path),
                serde_json::to_string_pretty(&manifest)?,
            )?;
        }
        Ok(ResultsStore {
            path: path.to_path_buf(),
        })
    }

    fn manifest_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        path.with_file_name(name)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load(&self) -> Result<Vec<ResultsRow>> {
        let mut reader = csv::Reader::from_path(&self.path)?;
        let mut rows = Vec::new();
        for record in reader.deserialize() {
            rows.push(record?);
        }
        Ok(rows)
    }

    /// Appends rows whose keys are not yet present; returns how many were
    /// actually written.
    pub fn append(&self, rows: &[ResultsRow]) -> Result<usize> {
        let existing: HashSet<_> = self.load()?.iter().map(ResultsRow::key).collect();
        let file = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(file);
        let mut added = 0;
        let mut seen = existing;
        for row in rows {
            if seen.insert(row.key()) {
                writer.serialize(row)?;
                added += 1;
            }
        }
        writer.flush()?;
        Ok(added)
    }

    /// Returns true when every (learner, objective, size, seed) combination
    /// already has a row under the experiment id.
    pub fn is_complete(
        &self,
        experiment_id: &str,
        learner: &str,
        objective: &str,
        sizes: &[usize],
        seeds: &[u64],
    ) -> Result<bool> {
        let existing: HashSet<_> = self.load()?.iter().map(ResultsRow::key).collect();
        Ok(sizes.iter().all(|&c| {
            seeds.iter().all(|&s| {
                existing.contains(&(
                    experiment_id.to_string(),
                    learner.to_string(),
                    objective.to_string(),
                    c,
                    s,
                ))
            })
        }))
    }
}

/// Flattens a per-seed curve into store rows (one row per size per seed).
pub fn curve_to_rows(
    curve: &PrequentialCurve,
    experiment_id: &str,
    objective: &str,
    seeds: &[u64],
) -> Vec<ResultsRow> {
    assert_eq!(curve.per_seed.len(), seeds.len(), "one seed per curve row");
    let now = unix_timestamp();
    let version = code_version();
    let mut rows = Vec::new();
    for (si, &seed) in seeds.iter().enumerate() {
        for (gi, &size) in curve.context_sizes.iter().enumerate() {
            rows.push(ResultsRow {
                experiment_id: experiment_id.to_string(),
                learner: curve.learner.clone(),
                objective: objective.to_string(),
                family: curve.family.clone(),
                context_size: size,
                seed,
                error: curve.per_seed[si][gi],
                error_kind: curve.error_kind.name().to_string(),
                timestamp: now,
                code_version: version.clone(),
            });
        }
    }
    rows
}

/// Regroups rows into per-(learner, objective) curves with seed statistics.
pub fn curves_from_rows(rows: &[ResultsRow]) -> Vec<PrequentialCurve> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, String, String), Vec<&ResultsRow>> =
        BTreeMap::new();
    for row in rows {
        groups
            .entry((
                row.learner.clone(),
                row.objective.clone(),
                row.family.clone(),
                row.error_kind.clone(),
            ))
            .or_default()
            .push(row);
    }
    let mut curves = Vec::new();
    for ((learner, objective, family, kind), group) in groups {
        let mut sizes: Vec<usize> = group.iter().map(|r| r.context_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut per_seed = vec![vec![f64::NAN; sizes.len()]; seeds.len()];
        for row in &group {
            let si = seeds.binary_search(&row.seed).unwrap();
            let gi = sizes.binary_search(&row.context_size).unwrap();
            per_seed[si][gi] = row.error;
        }
        let mut mean_error = Vec::with_capacity(sizes.len());
        let mut stderr = Vec::with_capacity(sizes.len());
        for gi in 0..sizes.len() {
            let col: Vec<f64> = per_seed
                .iter()
                .map(|r| r[gi])
                .filter(|v| v.is_finite())
                .collect();
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n.max(1.0);
            mean_error.push(m);
            stderr.push(if col.len() > 1 {
                (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            });
        }
        let error_kind = if kind == "cross_entropy" {
            ErrorKind::CrossEntropy
        } else {
            ErrorKind::Mse { output_dim: 1 }
        };
        curves.push(PrequentialCurve {
            context_sizes: sizes,
            mean_error,
            stderr,
            per_seed,
            error_kind,
            learner: format!("{learner}:{objective}"),
            family,
        });
    }
    curves
}
