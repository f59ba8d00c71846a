//! Meta-objectives and the meta-training loop.
//!
//! All three objectives share one mechanism: pick a row of (context size,
//! query point) pairs for an episode, run the learner once, and sum the
//! per-row losses. They differ only in which query each context is scored on:
//!
//! - prequential: context `D_{1:t−1}`, query the unseen `(x_t, y_t)`;
//! - train-risk: context `D_{1:t}`, query a point already in the context;
//! - suffix-only: prequential restricted to late positions (the full context
//!   is still observed; only late predictions carry gradient).
//!
//! Cross-entropy losses are in nats; regression losses are plain summed
//! squared error.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Scalar, Var};
use crate::learners::{
    encode_queries, encode_tokens, init_params, predictions, stage_params, LearnerConfig,
    OutputKind, ParamSet, TapedParams,
};
use crate::rng::{derive_seed, seeded, stream, Seeded};
use crate::tasks::{Episode, MetaDataset, Output, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Prequential,
    TrainRisk,
    SuffixOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub loss: LossKind,
    /// Fraction of late positions receiving loss under `SuffixOnly`.
    pub suffix_fraction: f64,
}

impl ObjectiveSpec {
    pub fn prequential(loss: LossKind) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Prequential,
            loss,
            suffix_fraction: 0.5,
        }
    }
    pub fn train_risk(loss: LossKind) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::TrainRisk,
            loss,
            suffix_fraction: 0.5,
        }
    }
    pub fn suffix_only(loss: LossKind, suffix_fraction: f64) -> Self {
        assert!(suffix_fraction > 0.0 && suffix_fraction <= 1.0);
        ObjectiveSpec {
            kind: ObjectiveKind::SuffixOnly,
            loss,
            suffix_fraction,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ObjectiveKind::Prequential => "prequential",
            ObjectiveKind::TrainRisk => "train_risk",
            ObjectiveKind::SuffixOnly => "suffix_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm gradient clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    /// Reference regimen: Adam at 1e-4, batches of 256, 50 epochs.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 256,
            epochs: 50,
            seed: 0,
            grad_clip: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Row plans and targets
// ---------------------------------------------------------------------------

/// Which (context size, query point) pairs an objective scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowPlan {
    pub context_sizes: Vec<usize>,
    /// 0-based index of the episode point supplying the query and target.
    pub query_points: Vec<usize>,
}

/// Builds the row plan for an objective over an episode of `n` points.
/// Train-risk redraws its query indices from `rng` on every call.
pub fn plan_rows(objective: &ObjectiveSpec, n: usize, rng: &mut Seeded) -> Result<RowPlan> {
    match objective.kind {
        ObjectiveKind::Prequential => Ok(RowPlan {
            context_sizes: (0..n).collect(),
            query_points: (0..n).collect(),
        }),
        ObjectiveKind::TrainRisk => {
            if n < 2 {
                return Err(Error::InvalidArgument(
                    "train-risk needs at least 2 points".into(),
                ));
            }
            let context_sizes: Vec<usize> = (1..=n).collect();
            let query_points = context_sizes.iter().map(|&c| rng.gen_range(0..c)).collect();
            Ok(RowPlan {
                context_sizes,
                query_points,
            })
        }
        ObjectiveKind::SuffixOnly => {
            // positions t > ceil(N · (1 − fraction)), 1-based
            let cutoff = ((n as f64) * (1.0 - objective.suffix_fraction)).ceil() as usize;
            let rows: Vec<usize> = (cutoff..n).collect();
            Ok(RowPlan {
                context_sizes: rows.clone(),
                query_points: rows,
            })
        }
    }
}

/// Targets for a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Reals(Array2<f64>),
    Labels(Vec<Vec<u32>>),
}

pub fn episode_targets(episode: &Episode, rows: &[usize]) -> Targets {
    match &episode.points[0].y {
        Output::Reals(v0) => {
            let dim = v0.len();
            let mut t = Array2::zeros((rows.len(), dim));
            for (r, &i) in rows.iter().enumerate() {
                for (j, &v) in episode.points[i].y.reals().iter().enumerate() {
                    t[[r, j]] = v;
                }
            }
            Targets::Reals(t)
        }
        Output::Labels(_) => Targets::Labels(
            rows.iter()
                .map(|&i| episode.points[i].y.labels().to_vec())
                .collect(),
        ),
    }
}

// ---------------------------------------------------------------------------
// Loss assembly
// ---------------------------------------------------------------------------

/// Runs the learner over an episode for the given row plan; returns raw
/// outputs (one row per plan entry) plus the parameter tape handles.
pub fn forward_episode<F: Scalar>(
    g: &mut Graph<F>,
    params: &ParamSet<F>,
    cfg: &LearnerConfig,
    episode: &Episode,
    plan: &RowPlan,
) -> Result<(Var, TapedParams)> {
    let fm = &cfg.feature_map;
    let tokens = encode_tokens(episode, fm).mapv(|v| F::from_f64(v));
    let xs: Vec<Vec<f64>> = plan
        .query_points
        .iter()
        .map(|&i| episode.points[i].x.clone())
        .collect();
    let queries = encode_queries(&xs, fm).mapv(|v| F::from_f64(v));
    let tp = stage_params(g, params);
    let out = predictions(g, &tp, cfg, &tokens, &plan.context_sizes, &queries)?;
    Ok((out, tp))
}

/// Attaches the scalar loss node: summed squared error, or summed
/// cross-entropy in nats.
pub fn attach_loss<F: Scalar>(
    g: &mut Graph<F>,
    outputs: Var,
    targets: &Targets,
    output_kind: &OutputKind,
) -> Var {
    match targets {
        Targets::Reals(t) => {
            let neg = t.mapv(|v| F::from_f64(-v));
            let diff = g.add_const(outputs, &neg);
            let sq = g.mul(diff, diff);
            g.sum_all(sq)
        }
        Targets::Labels(labels) => {
            let OutputKind::CategoricalMulti { classes } = output_kind else {
                panic!("labels with non-categorical output")
            };
            let rows = labels.len();
            let mut offset = 0;
            let mut partials = Vec::with_capacity(classes.len());
            for (k, &n_classes) in classes.iter().enumerate() {
                let block = g.slice_cols(outputs, offset, n_classes);
                let logp = g.log_softmax_rows(block);
                let mut onehot = Array2::<F>::zeros((rows, n_classes));
                for (r, row_labels) in labels.iter().enumerate() {
                    onehot[[r, row_labels[k] as usize]] = F::one();
                }
                let picked = g.mul_const(logp, &onehot);
                partials.push(g.sum_all(picked));
                offset += n_classes;
            }
            let mut total = partials[0];
            for &p in &partials[1..] {
                total = g.add(total, p);
            }
            g.scale(total, -1.0)
        }
    }
}

/// Per-row losses computed from output values (no tape required): summed
/// squared error per row, or cross-entropy in nats per row.
pub fn per_row_losses<F: Scalar>(
    outputs: &Array2<F>,
    targets: &Targets,
    output_kind: &OutputKind,
) -> Vec<f64> {
    match targets {
        Targets::Reals(t) => (0..outputs.nrows())
            .map(|r| {
                (0..t.ncols())
                    .map(|j| (outputs[[r, j]].to_f64() - t[[r, j]]).powi(2))
                    .sum()
            })
            .collect(),
        Targets::Labels(labels) => {
            let OutputKind::CategoricalMulti { classes } = output_kind else {
                panic!("labels with non-categorical output")
            };
            (0..outputs.nrows())
                .map(|r| {
                    let mut nll = 0.0;
                    let mut offset = 0;
                    for (k, &n_classes) in classes.iter().enumerate() {
                        let logits: Vec<f64> = (0..n_classes)
                            .map(|j| outputs[[r, offset + j]].to_f64())
                            .collect();
                        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse =
                            mx + logits.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
                        nll += lse - logits[labels[r][k] as usize];
                        offset += n_classes;
                    }
                    nll
                })
                .collect()
        }
    }
}

fn episode_objective_rows(
    cfg: &LearnerConfig,
    params: &ParamSet<f32>,
    episode: &Episode,
    plan: &RowPlan,
) -> Result<Vec<f64>> {
    let mut g = Graph::<f32>::new();
    let (out, _tp) = forward_episode(&mut g, params, cfg, episode, plan)?;
    let targets = episode_targets(episode, &plan.query_points);
    let rows = per_row_losses(g.value(out), &targets, cfg.output());
    for (i, &l) in rows.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                position: plan.context_sizes[i] + 1,
            });
        }
    }
    Ok(rows)
}

/// Prequential objective: `Σ_{t=1..N} loss(predict(D_{1:t−1}, x_t), y_t)`,
/// with `t = 1` scored from the empty context.
pub fn prequential_loss(
    cfg: &LearnerConfig,
    params: &ParamSet<f32>,
    episode: &Episode,
) -> Result<f64> {
    Ok(prequential_positions(cfg, params, episode)?.iter().sum())
}

/// Per-position prequential losses (position `t` at index `t − 1`).
pub fn prequential_positions(
    cfg: &LearnerConfig,
    params: &ParamSet<f32>,
    episode: &Episode,
) -> Result<Vec<f64>> {
    let plan = plan_rows(
        &ObjectiveSpec::prequential(LossKind::Mse),
        episode.len(),
        &mut seeded(0),
    )?;
    episode_objective_rows(cfg, params, episode, &plan)
}

/// Train-risk objective: each prefix `D_{1:t}` is scored on a query drawn
/// uniformly from the points it already contains.
pub fn train_risk_loss(
    cfg: &LearnerConfig,
    params: &ParamSet<f32>,
    episode: &Episode,
    rng: &mut Seeded,
) -> Result<f64> {
    let plan = plan_rows(&ObjectiveSpec::train_risk(LossKind::Mse), episode.len(), rng)?;
    Ok(episode_objective_rows(cfg, params, episode, &plan)?
        .iter()
        .sum())
}

/// Suffix objective: prequential restricted to positions
/// `t > ceil(N·(1−fraction))`; the full context is still observed.
pub fn suffix_loss(
    cfg: &LearnerConfig,
    params: &ParamSet<f32>,
    episode: &Episode,
    suffix_fraction: f64,
) -> Result<f64> {
    let plan = plan_rows(
        &ObjectiveSpec::suffix_only(LossKind::Mse, suffix_fraction),
        episode.len(),
        &mut seeded(0),
    )?;
    Ok(episode_objective_rows(cfg, params, episode, &plan)?
        .iter()
        .sum())
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adaptive-moment optimizer with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamSet<f32>) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params
                .values()
                .iter()
                .map(|p| Array2::zeros(p.dim()))
                .collect(),
            v: params
                .values()
                .iter()
                .map(|p| Array2::zeros(p.dim()))
                .collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Array2<f32>]) {
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = (1.0 - self.beta1.powi(self.t)) as f32;
        let bc2 = (1.0 - self.beta2.powi(self.t)) as f32;
        let lr = self.lr as f32;
        let eps = self.eps as f32;
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

// ---------------------------------------------------------------------------
// Meta-training
// ---------------------------------------------------------------------------

/// A trained learner with its loss trace.
#[derive(Debug, Clone)]
pub struct TrainedLearner {
    pub config: LearnerConfig,
    pub params: ParamSet<f32>,
    /// Mean per-episode objective per epoch.
    pub trace: Vec<f64>,
}

/// Minimizes the mean objective over episodes with Adam. Batching order,
/// initialization, and train-risk query draws all derive from `train.seed`;
/// identical seeds reproduce bit-identical parameters.
pub fn meta_train(
    cfg: &LearnerConfig,
    meta: &MetaDataset,
    objective: &ObjectiveSpec,
    train: &TrainConfig,
) -> Result<TrainedLearner> {
    assert_eq!(meta.split, Split::Train, "meta_train expects the train split");
    let mut params = init_params(cfg, derive_seed(train.seed, stream::INIT, 0));
    let mut adam = Adam::new(train.learning_rate, &params);
    let mut trace = Vec::with_capacity(train.epochs);
    let n_episodes = meta.episodes.len();

    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..n_episodes).collect();
        let mut order_rng = seeded(derive_seed(train.seed, stream::BATCH_ORDER, epoch as u64));
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut order_rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size) {
            let mut batch_grads: Vec<Array2<f32>> = params
                .values()
                .iter()
                .map(|p| Array2::zeros(p.dim()))
                .collect();
            let mut batch_loss = 0.0;
            for &ei in batch {
                let episode = &meta.episodes[ei];
                let mut qrng = seeded(derive_seed(
                    train.seed,
                    stream::QUERY_DRAW,
                    (epoch * n_episodes + ei) as u64,
                ));
                let plan = plan_rows(objective, episode.len(), &mut qrng)?;
                let mut g = Graph::<f32>::new();
                let (out, tp) = forward_episode(&mut g, &params, cfg, episode, &plan)?;
                let targets = episode_targets(episode, &plan.query_points);
                let loss = attach_loss(&mut g, out, &targets, cfg.output());
                let loss_val = g.scalar(loss).to_f64();
                if !loss_val.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        loss: loss_val,
                    });
                }
                batch_loss += loss_val;
                let grads = g.backward(loss);
                for (i, acc) in batch_grads.iter_mut().enumerate() {
                    if let Some(gr) = grads.wrt(tp.vars()[i]) {
                        *acc += gr;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            for gacc in &mut batch_grads {
                gacc.mapv_inplace(|v| v * scale);
            }
            if let Some(clip) = train.grad_clip {
                let norm: f32 = batch_grads
                    .iter()
                    .map(|g| g.iter().map(|v| v * v).sum::<f32>())
                    .sum::<f32>()
                    .sqrt();
                if norm > clip as f32 {
                    let s = clip as f32 / norm;
                    for gacc in &mut batch_grads {
                        gacc.mapv_inplace(|v| v * s);
                    }
                }
            }
            adam.step(&mut params, &batch_grads);
            epoch_loss += batch_loss;
        }
        trace.push(epoch_loss / n_episodes as f64);
        if !params.all_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
    }
    Ok(TrainedLearner {
        config: cfg.clone(),
        params,
        trace,
    })
}
