//! Experiment orchestration: versioned configs, the generate → train →
//! evaluate → persist pipeline, inferred-function visualization, and figure
//! emission. Every random choice traces back to a listed seed, and reruns
//! of a completed configuration add zero rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::error::{Error, Result};
use crate::eval::{default_context_grid, eval_curve, gap_curve, PrequentialCurve};
use crate::graph::Graph;
use crate::hmm::{HmmFamily, HmmHyper};
use crate::learners::{
    encode_queries, encode_tokens, stage_params, Arch, HeadKind, LearnerConfig, OutputKind,
    ParamSet, Positional,
};
use crate::objectives::{meta_train, ObjectiveSpec, RowPlan, TrainConfig, TrainedLearner};
use crate::plot::{render_svg, PlotOptions, Series};
use crate::store::{curve_to_rows, curves_from_rows, ResultsRow, ResultsStore};
use crate::tasks::{Episode, Family, MetaDataset, Split, TaskSpec};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Model size knobs, kept separate from the task-derived feature map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub d_bottleneck: usize,
    pub head_depth: usize,
    pub head_width: usize,
}

impl ModelShape {
    pub fn desk() -> Self {
        ModelShape {
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 128,
            d_bottleneck: 32,
            head_depth: 3,
            head_width: 64,
        }
    }

    pub fn reference() -> Self {
        ModelShape {
            n_layers: 4,
            n_heads: 4,
            d_model: 256,
            d_ff: 512,
            d_bottleneck: 128,
            head_depth: 5,
            head_width: 256,
        }
    }
}

/// A complete, schema-validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub task: TaskSpec,
    /// Required for the HMM families, ignored otherwise.
    #[serde(default)]
    pub hmm_hyper: Option<HmmHyper>,
    pub n_train_tasks: usize,
    pub n_eval_tasks: usize,
    pub episode_len: usize,
    pub arch: Arch,
    pub model: ModelShape,
    #[serde(default = "default_head_kind")]
    pub head_kind: HeadKind,
    #[serde(default = "default_positional")]
    pub positional: Positional,
    pub objectives: Vec<ObjectiveSpec>,
    pub train: TrainConfig,
    /// Empty list selects the default dense-then-geometric grid.
    #[serde(default)]
    pub context_grid: Vec<usize>,
    #[serde(default = "default_queries_per_size")]
    pub queries_per_size: usize,
    pub seeds: Vec<u64>,
    pub dataset_seed: u64,
    pub output_dir: String,
}

fn default_head_kind() -> HeadKind {
    HeadKind::Mlp
}
fn default_positional() -> Positional {
    Positional::Learned
}
fn default_queries_per_size() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.objectives.is_empty() {
            return Err(Error::Config("at least one objective is required".into()));
        }
        if matches!(self.task.family, Family::Hmm | Family::HmmSupervised)
            && self.hmm_hyper.is_none()
        {
            return Err(Error::Config("HMM experiments need hmm_hyper".into()));
        }
        if let Some(&max) = self.context_grid.last() {
            if max >= self.episode_len {
                return Err(Error::Config(format!(
                    "grid point {max} needs a query beyond the {}-point episodes",
                    self.episode_len
                )));
            }
        }
        self.learner_config().validate()
    }

    /// Order-insensitive content hash of the configuration.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = canonical_json(&value);
        let mut hasher = sha2::Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        hex_prefix(&digest, 12)
    }

    pub fn experiment_id(&self) -> String {
        format!("{}-{}", self.name, self.hash())
    }

    pub fn learner_config(&self) -> LearnerConfig {
        let max_context = self.episode_len;
        let mut cfg = LearnerConfig {
            arch: self.arch,
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            d_model: self.model.d_model,
            d_ff: self.model.d_ff,
            d_bottleneck: self.model.d_bottleneck,
            head_depth: self.model.head_depth,
            head_width: self.model.head_width,
            head_kind: self.head_kind,
            positional: self.positional,
            max_context,
            feature_map: crate::learners::FeatureMap::for_spec(&self.task, max_context),
        };
        if self.head_kind == HeadKind::Polynomial {
            cfg.d_bottleneck = self.task.basis_size;
        }
        cfg
    }

    pub fn grid(&self) -> Vec<usize> {
        if self.context_grid.is_empty() {
            let mut g = default_context_grid(self.episode_len.saturating_sub(1));
            g.insert(0, 0);
            g
        } else {
            self.context_grid.clone()
        }
    }
}

fn hex_prefix(digest: &[u8], chars: usize) -> String {
    digest
        .iter()
        .flat_map(|b| [b >> 4, b & 0xf])
        .take(chars)
        .map(|n| char::from_digit(n as u32, 16).unwrap())
        .collect()
}

/// Canonical rendering: objects with sorted keys, arrays in order.
fn canonical_json(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(map) => {
            let sorted: BTreeMap<&String, &serde_json::Value> = map.iter().collect();
            let inner: Vec<String> = sorted
                .into_iter()
                .map(|(k, val)| format!("{:?}:{}", k, canonical_json(val)))
                .collect();
            format!("{{{}}}", inner.join(","))
        }
        serde_json::Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", inner.join(","))
        }
        other => other.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

/// Generates the train and eval meta-datasets for a configuration.
pub fn generate_data(config: &ExperimentConfig) -> Result<(MetaDataset, MetaDataset)> {
    match config.task.family {
        Family::Hmm | Family::HmmSupervised => {
            let hyper = config
                .hmm_hyper
                .clone()
                .ok_or_else(|| Error::Config("HMM experiments need hmm_hyper".into()))?;
            let family = HmmFamily::new(hyper, config.dataset_seed)?;
            let (train_latents, eval_latents) =
                family.split_latents(0.2, config.dataset_seed);
            let supervised = config.task.family == Family::HmmSupervised;
            let train = family.make_meta_dataset(
                &train_latents,
                config.n_train_tasks,
                config.episode_len,
                config.dataset_seed,
                Split::Train,
                supervised,
            );
            let eval = family.make_meta_dataset(
                &eval_latents,
                config.n_eval_tasks,
                config.episode_len,
                config.dataset_seed,
                Split::Eval,
                supervised,
            );
            Ok((train, eval))
        }
        _ => {
            let train = crate::tasks::make_meta_dataset(
                &config.task,
                config.n_train_tasks,
                config.episode_len,
                config.dataset_seed,
                Split::Train,
            );
            // the eval split reuses the train split's spec so sinusoid
            // frequencies stay shared
            let eval = crate::tasks::make_meta_dataset(
                &train.spec,
                config.n_eval_tasks,
                config.episode_len,
                config.dataset_seed,
                Split::Eval,
            );
            Ok((train, eval))
        }
    }
}

// ---------------------------------------------------------------------------
// Run pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment_id: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment_id: String,
    pub new_rows: usize,
    pub skipped_units: usize,
    pub trained_units: usize,
}

fn checkpoint_path(dir: &Path, objective: &ObjectiveSpec, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint-{}-seed{}.bin", objective.name(), seed))
}

fn trace_path(dir: &Path, objective: &ObjectiveSpec, seed: u64) -> PathBuf {
    dir.join(format!("trace-{}-seed{}.json", objective.name(), seed))
}

/// Trains one (objective, seed) unit, writing a checkpoint and loss trace.
pub fn train_unit(
    config: &ExperimentConfig,
    train_data: &MetaDataset,
    objective: &ObjectiveSpec,
    seed: u64,
) -> Result<TrainedLearner> {
    let cfg = config.learner_config();
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let learner = meta_train(&cfg, train_data, objective, &train_cfg)?;
    let out_dir = Path::new(&config.output_dir);
    std::fs::create_dir_all(out_dir)?;
    crate::io::save_checkpoint(&checkpoint_path(out_dir, objective, seed), &learner)?;
    std::fs::write(
        trace_path(out_dir, objective, seed),
        serde_json::to_string_pretty(&learner.trace)?,
    )?;
    Ok(learner)
}

/// Executes generate → train → evaluate → persist for every (objective,
/// seed) unit not already present in the store. Partial failures leave
/// completed rows intact.
pub fn run(config: &ExperimentConfig, store: &ResultsStore) -> Result<RunSummary> {
    config.validate()?;
    let experiment_id = config.experiment_id();
    let out_dir = Path::new(&config.output_dir);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("run-manifest.json"),
        serde_json::to_string_pretty(&RunManifest {
            experiment_id: experiment_id.clone(),
            config_hash: config.hash(),
            code_version: crate::store::code_version(),
            seeds: config.seeds.clone(),
            config: config.clone(),
        })?,
    )?;

    let grid = config.grid();
    let learner_cfg = config.learner_config();
    let learner_name = format!("{:?}", config.arch).to_lowercase();

    // skip data generation entirely when every unit is already stored
    let all_done = config.objectives.iter().try_fold(true, |acc, obj| {
        store
            .is_complete(&experiment_id, &learner_name, obj.name(), &grid, &config.seeds)
            .map(|done| acc && done)
    })?;
    if all_done {
        return Ok(RunSummary {
            experiment_id,
            new_rows: 0,
            skipped_units: config.objectives.len() * config.seeds.len(),
            trained_units: 0,
        });
    }

    let (train_data, eval_data) = generate_data(config)?;
    let mut new_rows = 0;
    let mut skipped = 0;
    let mut trained = 0;
    for objective in &config.objectives {
        for &seed in &config.seeds {
            if store.is_complete(&experiment_id, &learner_name, objective.name(), &grid, &[seed])? {
                skipped += 1;
                continue;
            }
            let learner = train_unit(config, &train_data, objective, seed)?;
            let mut curve = eval_curve(
                &learner_cfg,
                &learner.params,
                &eval_data.episodes,
                &grid,
                config.queries_per_size,
            )?;
            curve.learner = learner_name.clone();
            new_rows += store.append(&curve_to_rows(
                &curve,
                &experiment_id,
                objective.name(),
                &[seed],
            ))?;
            trained += 1;
        }
    }
    Ok(RunSummary {
        experiment_id,
        new_rows,
        skipped_units: skipped,
        trained_units: trained,
    })
}

// ---------------------------------------------------------------------------
// Inferred-function visualization
// ---------------------------------------------------------------------------

/// The in-context model evaluated on a dense input grid at a fixed context
/// length; for polynomial-head learners the inferred coefficients and the
/// norm of components above the generating degree come along.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferredFunction {
    pub context_len: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub coefficients: Option<Vec<f64>>,
    pub excess_degree_norm: Option<f64>,
}

/// Norm of coefficient entries strictly above the generating degree.
pub fn excess_degree_norm(coeffs: &[f64], gen_degree: usize) -> f64 {
    coeffs
        .iter()
        .skip(gen_degree + 1)
        .map(|c| c * c)
        .sum::<f64>()
        .sqrt()
}

pub fn visualize_inferred_function(
    cfg: &LearnerConfig,
    params: &ParamSet<f32>,
    episode: &Episode,
    context_len: usize,
    grid: &[f64],
) -> Result<InferredFunction> {
    let is_1d_regression = cfg.feature_map.x_dim == 1
        && matches!(cfg.output(), OutputKind::GaussianMean { dim: 1 });
    if !is_1d_regression {
        return Err(Error::InvalidArgument(
            "inferred-function plots need a 1-D regression family".into(),
        ));
    }
    let plan = RowPlan {
        context_sizes: vec![context_len; grid.len()],
        query_points: vec![0; grid.len()], // placeholders; queries overridden
    };
    let fm = &cfg.feature_map;
    let tokens = encode_tokens(episode, fm).mapv(|v| v as f32);
    let xs: Vec<Vec<f64>> = grid.iter().map(|&x| vec![x]).collect();
    let queries = encode_queries(&xs, fm).mapv(|v| v as f32);
    let mut g = Graph::<f32>::new();
    let tp = stage_params(&mut g, params);
    let out = crate::learners::predictions(&mut g, &tp, cfg, &tokens, &plan.context_sizes, &queries)?;
    let values: Vec<f64> = (0..grid.len()).map(|r| g.value(out)[[r, 0]] as f64).collect();

    let (coefficients, excess) = if cfg.head_kind == HeadKind::Polynomial {
        // the bottleneck state at this context length is the coefficient vector
        let mut g = Graph::<f32>::new();
        let tp = stage_params(&mut g, params);
        let states = match cfg.arch {
            Arch::Bottleneck => crate::learners::bottleneck_states(&mut g, &tp, cfg, &tokens)?,
            Arch::Recurrent => crate::learners::recurrent_states(&mut g, &tp, cfg, &tokens)?,
            Arch::DualStream => {
                return Err(Error::InvalidArgument(
                    "polynomial-head visualization needs a state-producing learner".into(),
                ))
            }
        };
        let coeffs: Vec<f64> = g
            .value(states)
            .row(context_len)
            .iter()
            .map(|&v| v as f64)
            .collect();
        let norm = excess_degree_norm(&coeffs, episode.spec.gen_degree);
        (Some(coeffs), Some(norm))
    } else {
        (None, None)
    };
    Ok(InferredFunction {
        context_len,
        grid: grid.to_vec(),
        values,
        coefficients,
        excess_degree_norm: excess,
    })
}

// ---------------------------------------------------------------------------
// Figure emission
// ---------------------------------------------------------------------------

/// Renders one figure per (family, error kind) group of rows; returns the
/// written paths. An empty selection is an explicit error.
pub fn emit_plots(rows: &[ResultsRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "no rows selected; nothing to plot".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let curves = curves_from_rows(rows);
    let mut groups: BTreeMap<(String, String), Vec<&PrequentialCurve>> = BTreeMap::new();
    for curve in &curves {
        groups
            .entry((curve.family.clone(), curve.error_kind.name().to_string()))
            .or_default()
            .push(curve);
    }
    let mut written = Vec::new();
    for ((family, kind), group) in groups {
        let series: Vec<Series> = group
            .iter()
            .map(|c| Series::from_curve(c, &c.learner))
            .collect();
        let opts = PlotOptions {
            title: format!("{family} / {kind}"),
            y_label: kind.clone(),
            ..PlotOptions::default()
        };
        let svg = render_svg(&series, &opts);
        let path = out_dir.join(format!("curve-{family}-{kind}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

/// Renders the difference of two named learner curves as a single band.
pub fn emit_gap_plot(
    rows: &[ResultsRow],
    learner_a: &str,
    learner_b: &str,
    out_dir: &Path,
) -> Result<PathBuf> {
    let curves = curves_from_rows(rows);
    let find = |name: &str| {
        curves
            .iter()
            .find(|c| c.learner == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no curve named {name}")))
    };
    let gap = gap_curve(find(learner_a)?, find(learner_b)?)?;
    std::fs::create_dir_all(out_dir)?;
    let series = [Series::from_curve(&gap, &gap.learner)];
    let opts = PlotOptions {
        title: format!("gap: {learner_a} − {learner_b}"),
        y_label: "error difference".into(),
        ..PlotOptions::default()
    };
    let path = out_dir.join(format!("gap-{learner_a}--{learner_b}.svg"));
    std::fs::write(&path, render_svg(&series, &opts))?;
    Ok(path)
}
