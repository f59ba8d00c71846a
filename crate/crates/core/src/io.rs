//! Versioned on-disk formats.
//!
//! - Meta-datasets: a JSON manifest (family, spec fields, seeds, counts)
//!   next to a flat little-endian `f64` array file holding every point.
//! - HMM families: manifest only (hyper, seed, latent splits); banks are
//!   pure functions of the seed and are rebuilt on load.
//! - Checkpoints: a JSON header line (config, tensor directory, loss trace)
//!   followed by raw little-endian `f32` tensor data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{HmmFamily, HmmHyper};
use crate::learners::{LearnerConfig, ParamSet};
use crate::objectives::TrainedLearner;
use crate::tasks::{DataPoint, Episode, MetaDataset, Output, Split, TaskParams, TaskSpec};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    kind: String,
    spec: TaskSpec,
    split: Split,
    n_episodes: usize,
    n_points: usize,
    x_len: usize,
    y_len: usize,
    y_is_labels: bool,
    episode_seeds: Vec<u64>,
    episode_params: Vec<TaskParams>,
}

fn point_layout(episode: &Episode) -> (usize, usize, bool) {
    let p = &episode.points[0];
    match &p.y {
        Output::Reals(v) => (p.x.len(), v.len(), false),
        Output::Labels(v) => (p.x.len(), v.len(), true),
    }
}

/// Writes `manifest.json` and `data.f64` under `dir`.
pub fn save_meta_dataset(dir: &Path, meta: &MetaDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let first = meta
        .episodes
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty meta-dataset".into()))?;
    let (x_len, y_len, y_is_labels) = point_layout(first);
    let n_points = first.len();
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        kind: "meta_dataset".into(),
        spec: meta.spec.clone(),
        split: meta.split,
        n_episodes: meta.episodes.len(),
        n_points,
        x_len,
        y_len,
        y_is_labels,
        episode_seeds: meta.episodes.iter().map(|e| e.seed).collect(),
        episode_params: meta.episodes.iter().map(|e| e.params.clone()).collect(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let mut data: Vec<u8> =
        Vec::with_capacity(meta.episodes.len() * n_points * (x_len + y_len) * 8);
    for episode in &meta.episodes {
        if episode.len() != n_points {
            return Err(Error::InvalidArgument(
                "episodes must share a point count".into(),
            ));
        }
        for point in &episode.points {
            for &v in &point.x {
                data.extend_from_slice(&v.to_le_bytes());
            }
            match &point.y {
                Output::Reals(vs) => {
                    for &v in vs {
                        data.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Output::Labels(ls) => {
                    for &l in ls {
                        data.extend_from_slice(&(l as f64).to_le_bytes());
                    }
                }
            }
        }
    }
    fs::write(dir.join("data.f64"), data)?;
    Ok(())
}

/// Loads a meta-dataset written by [`save_meta_dataset`].
pub fn load_meta_dataset(dir: &Path) -> Result<MetaDataset> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let data = fs::read(dir.join("data.f64"))?;
    let stride = manifest.x_len + manifest.y_len;
    let expect = manifest.n_episodes * manifest.n_points * stride * 8;
    if data.len() != expect {
        return Err(Error::Config(format!(
            "data file has {} bytes, expected {expect}",
            data.len()
        )));
    }
    let mut values = Vec::with_capacity(data.len() / 8);
    for chunk in data.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut episodes = Vec::with_capacity(manifest.n_episodes);
    let mut offset = 0;
    for ei in 0..manifest.n_episodes {
        let mut points = Vec::with_capacity(manifest.n_points);
        for _ in 0..manifest.n_points {
            let x = values[offset..offset + manifest.x_len].to_vec();
            offset += manifest.x_len;
            let yv = &values[offset..offset + manifest.y_len];
            offset += manifest.y_len;
            let y = if manifest.y_is_labels {
                Output::Labels(yv.iter().map(|&v| v as u32).collect())
            } else {
                Output::Reals(yv.to_vec())
            };
            points.push(DataPoint { x, y });
        }
        episodes.push(Episode {
            points,
            params: manifest.episode_params[ei].clone(),
            spec: manifest.spec.clone(),
            seed: manifest.episode_seeds[ei],
        });
    }
    Ok(MetaDataset {
        episodes,
        spec: manifest.spec,
        split: manifest.split,
    })
}

// ---------------------------------------------------------------------------
// HMM family manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct HmmFamilyManifest {
    format_version: u32,
    kind: String,
    hyper: HmmHyper,
    seed: u64,
    train_latents: Vec<usize>,
    eval_latents: Vec<usize>,
}

/// Persists a family as (hyper, seed, splits); the banks are regenerated
/// deterministically on load.
pub fn save_hmm_family(
    path: &Path,
    family: &HmmFamily,
    train_latents: &[usize],
    eval_latents: &[usize],
) -> Result<()> {
    let manifest = HmmFamilyManifest {
        format_version: DATASET_FORMAT_VERSION,
        kind: "hmm_family".into(),
        hyper: family.hyper.clone(),
        seed: family.seed,
        train_latents: train_latents.to_vec(),
        eval_latents: eval_latents.to_vec(),
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_hmm_family(path: &Path) -> Result<(HmmFamily, Vec<usize>, Vec<usize>)> {
    let manifest: HmmFamilyManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported family format version {}",
            manifest.format_version
        )));
    }
    let family = HmmFamily::new(manifest.hyper, manifest.seed)?;
    Ok((family, manifest.train_latents, manifest.eval_latents))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: LearnerConfig,
    tensors: Vec<TensorEntry>,
    trace: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Writes a checkpoint: one JSON header line, then raw `f32` tensor data.
pub fn save_checkpoint(path: &Path, learner: &TrainedLearner) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: learner.config.clone(),
        tensors: learner
            .params
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.to_string(),
                rows: v.nrows(),
                cols: v.ncols(),
            })
            .collect(),
        trace: learner.trace.clone(),
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    for (_, v) in learner.params.iter() {
        for &x in v.iter() {
            file.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainedLearner> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let mut params = ParamSet::<f32>::new();
    let mut offset = newline + 1;
    for entry in &header.tensors {
        let n = entry.rows * entry.cols;
        let end = offset + n * 4;
        if end > bytes.len() {
            return Err(Error::Checkpoint("truncated tensor data".into()));
        }
        let mut values = Vec::with_capacity(n);
        for chunk in bytes[offset..end].chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        params.insert(
            &entry.name,
            ndarray::Array2::from_shape_vec((entry.rows, entry.cols), values)
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(TrainedLearner {
        config: header.config,
        params,
        trace: header.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{init_params, Arch};
    use crate::tasks::make_meta_dataset;

    #[test]
    fn dataset_roundtrip_regression() {
        let dir = tempfile::tempdir().unwrap();
        let spec = TaskSpec::linear(3, 0.04);
        let meta = make_meta_dataset(&spec, 5, 12, 7, Split::Train);
        save_meta_dataset(dir.path(), &meta).unwrap();
        let loaded = load_meta_dataset(dir.path()).unwrap();
        assert_eq!(meta, loaded);
    }

    #[test]
    fn dataset_roundtrip_labels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = TaskSpec::mastermind(8, 6);
        let meta = make_meta_dataset(&spec, 4, 9, 2, Split::Eval);
        save_meta_dataset(dir.path(), &meta).unwrap();
        let loaded = load_meta_dataset(dir.path()).unwrap();
        assert_eq!(meta, loaded);
    }

    #[test]
    fn dataset_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let spec = TaskSpec::linear(2, 0.0);
        let meta = make_meta_dataset(&spec, 2, 3, 1, Split::Train);
        save_meta_dataset(dir.path(), &meta).unwrap();
        let data = fs::read(dir.path().join("data.f64")).unwrap();
        fs::write(dir.path().join("data.f64"), &data[..data.len() - 8]).unwrap();
        assert!(load_meta_dataset(dir.path()).is_err());
    }

    #[test]
    fn hmm_family_roundtrip_rebuilds_banks() {
        let file = tempfile::NamedTempFile::new().unwrap();
        let family = HmmFamily::new(HmmHyper::default(), 11).unwrap();
        let (train, eval) = family.split_latents(0.1, 11);
        save_hmm_family(file.path(), &family, &train, &eval).unwrap();
        let (loaded, ltrain, leval) = load_hmm_family(file.path()).unwrap();
        assert_eq!(ltrain, train);
        assert_eq!(leval, eval);
        assert_eq!(loaded.cycle_bank, family.cycle_bank);
        assert_eq!(loaded.emission_bank, family.emission_bank);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let file = tempfile::NamedTempFile::new().unwrap();
        let spec = TaskSpec::sinusoid(3, 0.0);
        let cfg = LearnerConfig::desk(Arch::Bottleneck, &spec, 16);
        let learner = TrainedLearner {
            params: init_params(&cfg, 5),
            config: cfg,
            trace: vec![3.0, 2.5, 2.25],
        };
        save_checkpoint(file.path(), &learner).unwrap();
        let loaded = load_checkpoint(file.path()).unwrap();
        assert_eq!(loaded.params, learner.params);
        assert_eq!(loaded.config, learner.config);
        assert_eq!(loaded.trace, learner.trace);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let file = tempfile::NamedTempFile::new().unwrap();
        fs::write(file.path(), b"not a checkpoint").unwrap();
        assert!(load_checkpoint(file.path()).is_err());
    }
}
