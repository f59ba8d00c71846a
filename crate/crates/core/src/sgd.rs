//! Gradient-descent baseline: fit a fresh MLP per context prefix and trace
//! the prequential coding curve by retraining at growing prefix sizes.
//!
//! Weight decay is an explicit L2 penalty added to the loss (applied to
//! weight matrices, not biases), so it interacts with the adaptive optimizer
//! exactly as a loss term.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ErrorKind, PrequentialCurve};
use crate::graph::{Graph, Var};
use crate::learners::{FeatureMap, OutputKind, ParamSet, TapedParams};
use crate::objectives::{per_row_losses, Adam, Targets};
use crate::rng::{derive_seed, seeded, stream};
use crate::tasks::{DataPoint, Episode, Output, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub depth: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    /// L2 penalty λ.
    pub weight_decay: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    /// Reference configuration: 5-layer ReLU MLP, Adam at 1e-4 with batch 64,
    /// early stopping with min delta 0.001 and patience 10.
    fn default() -> Self {
        BaselineConfig {
            depth: 5,
            width: 64,
            learning_rate: 1e-4,
            batch_size: 64,
            max_epochs: 1000,
            early_stop_delta: 0.001,
            early_stop_patience: 10,
            weight_decay: 0.0,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Patience counter: stop after `patience` consecutive epochs without an
/// improvement of at least `delta` over the best loss seen.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub delta: f64,
    pub patience: usize,
    best: f64,
    misses: usize,
}

impl EarlyStopper {
    pub fn new(delta: f64, patience: usize) -> Self {
        EarlyStopper {
            delta,
            patience,
            best: f64::INFINITY,
            misses: 0,
        }
    }

    /// Feeds one epoch's loss; returns true when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best - self.delta {
            self.best = loss;
            self.misses = 0;
        } else {
            self.misses += 1;
        }
        self.misses >= self.patience
    }
}

/// A fitted baseline model.
#[derive(Debug, Clone)]
pub struct FittedMlp {
    pub params: ParamSet<f32>,
    pub epochs_used: usize,
    pub feature_map: FeatureMap,
    pub depth: usize,
    /// Indices of the points the model was fit on (the rest were the
    /// early-stopping validation split).
    pub train_indices: Vec<usize>,
}

fn mlp_init(fm: &FeatureMap, config: &BaselineConfig, seed: u64) -> ParamSet<f32> {
    let mut rng = seeded(seed);
    let mut p = ParamSet::<f32>::new();
    let mut in_dim = fm.x_dim.max(1);
    let out_dim = fm.output.dim();
    for i in 0..config.depth {
        let out = if i + 1 == config.depth {
            out_dim
        } else {
            config.width
        };
        // He-style scaling keeps deep ReLU stacks trainable
        let std = (2.0 / in_dim as f64).sqrt();
        p.insert(
            &format!("l{i}.w"),
            Array2::from_shape_fn((in_dim, out), |_| {
                let u: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                (u * std) as f32
            }),
        );
        p.insert(&format!("l{i}.b"), Array2::zeros((1, out)));
        in_dim = out;
    }
    p
}

fn mlp_forward(
    g: &mut Graph<f32>,
    tp: &TapedParams,
    depth: usize,
    xs: &Array2<f32>,
) -> Var {
    let mut h = g.leaf(xs.clone());
    for i in 0..depth {
        let hw = g.matmul(h, tp.var(&format!("l{i}.w")));
        h = g.add_bias(hw, tp.var(&format!("l{i}.b")));
        if i + 1 < depth {
            h = g.relu(h);
        }
    }
    h
}

fn featurize(points: &[DataPoint], fm: &FeatureMap) -> (Array2<f32>, Targets) {
    let mut xs = Array2::zeros((points.len(), fm.x_dim.max(1)));
    for (i, p) in points.iter().enumerate() {
        for (j, &v) in fm.x_features(&p.x).iter().enumerate() {
            xs[[i, j]] = v as f32;
        }
    }
    let targets = match &points[0].y {
        Output::Reals(v0) => {
            let mut t = Array2::zeros((points.len(), v0.len()));
            for (i, p) in points.iter().enumerate() {
                for (j, &v) in p.y.reals().iter().enumerate() {
                    t[[i, j]] = v;
                }
            }
            Targets::Reals(t)
        }
        Output::Labels(_) => {
            Targets::Labels(points.iter().map(|p| p.y.labels().to_vec()).collect())
        }
    };
    (xs, targets)
}

fn targets_subset(targets: &Targets, idx: &[usize]) -> Targets {
    match targets {
        Targets::Reals(t) => {
            let mut out = Array2::zeros((idx.len(), t.ncols()));
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).assign(&t.row(i));
            }
            Targets::Reals(out)
        }
        Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i].clone()).collect()),
    }
}

fn rows_subset(xs: &Array2<f32>, idx: &[usize]) -> Array2<f32> {
    let mut out = Array2::zeros((idx.len(), xs.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&xs.row(i));
    }
    out
}

/// The regularized objective value `mean loss + λ·‖weights‖²` at the given
/// parameters (weight matrices only; biases are not penalized).
pub fn penalized_loss(
    model: &FittedMlp,
    points: &[DataPoint],
    weight_decay: f64,
) -> Result<f64> {
    let base = mlp_mean_loss(model, points)?;
    Ok(base + weight_decay * weight_norm_sq(&model.params))
}

/// Squared L2 norm of weight matrices (biases excluded).
pub fn weight_norm_sq(params: &ParamSet<f32>) -> f64 {
    params
        .iter()
        .filter(|(name, _)| name.ends_with(".w"))
        .map(|(_, v)| v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>())
        .sum()
}

/// Mean per-point loss of a fitted model on a point set.
pub fn mlp_mean_loss(model: &FittedMlp, points: &[DataPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to evaluate".into()));
    }
    let (xs, targets) = featurize(points, &model.feature_map);
    let mut g = Graph::<f32>::new();
    let tp = crate::learners::stage_params(&mut g, &model.params);
    let out = mlp_forward(&mut g, &tp, model.depth, &xs);
    let rows = per_row_losses(g.value(out), &targets, &model.feature_map.output);
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Raw model outputs for a batch of raw inputs.
pub fn mlp_outputs(model: &FittedMlp, raw_xs: &[Vec<f64>]) -> Array2<f32> {
    let mut xs = Array2::zeros((raw_xs.len(), model.feature_map.x_dim.max(1)));
    for (i, x) in raw_xs.iter().enumerate() {
        for (j, &v) in model.feature_map.x_features(x).iter().enumerate() {
            xs[[i, j]] = v as f32;
        }
    }
    let mut g = Graph::<f32>::new();
    let tp = crate::learners::stage_params(&mut g, &model.params);
    let out = mlp_forward(&mut g, &tp, model.depth, &xs);
    g.value(out).clone()
}

/// Fits a fresh MLP to the points with Adam, early stopping on a held-out
/// validation split (or on training loss when the prefix is too small to
/// split, fewer than 5 points).
pub fn fit_mlp(spec: &TaskSpec, points: &[DataPoint], config: &BaselineConfig) -> Result<FittedMlp> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("fit_mlp needs ≥ 1 point".into()));
    }
    let fm = FeatureMap::for_spec(spec, points.len());
    let mut params = mlp_init(&fm, config, derive_seed(config.seed, stream::INIT, 0));
    let (xs, targets) = featurize(points, &fm);

    // validation split
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut split_rng = seeded(derive_seed(config.seed, stream::SGD_FIT, 1));
    rand::seq::SliceRandom::shuffle(&mut idx[..], &mut split_rng);
    let n_val = if n >= 5 {
        ((n as f64) * config.val_fraction).floor().max(1.0) as usize
    } else {
        0
    };
    let (train_idx, val_idx) = idx.split_at(n - n_val);
    let train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut adam = Adam::new(config.learning_rate, &params);
    let mut stopper = EarlyStopper::new(config.early_stop_delta, config.early_stop_patience);
    let mut epochs_used = 0;
    let lambda = config.weight_decay as f32;

    for epoch in 0..config.max_epochs {
        epochs_used = epoch + 1;
        // minibatch order
        let mut order = train_idx.clone();
        let mut erng = seeded(derive_seed(config.seed, stream::BATCH_ORDER, epoch as u64));
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut erng);

        for chunk in order.chunks(config.batch_size) {
            let bx = rows_subset(&xs, chunk);
            let bt = targets_subset(&targets, chunk);
            let mut g = Graph::<f32>::new();
            let tp = crate::learners::stage_params(&mut g, &params);
            let out = mlp_forward(&mut g, &tp, config.depth, &bx);
            let mut loss = crate::objectives::attach_loss(&mut g, out, &bt, &fm.output);
            loss = g.scale(loss, 1.0 / chunk.len() as f64);
            if lambda > 0.0 {
                // explicit L2 penalty on weight matrices
                let mut penalty: Option<Var> = None;
                for (name, _) in params.iter() {
                    if name.ends_with(".w") {
                        let w = tp.var(name);
                        let sq = g.mul(w, w);
                        let s = g.sum_all(sq);
                        penalty = Some(match penalty {
                            Some(p) => g.add(p, s),
                            None => s,
                        });
                    }
                }
                let p = g.scale(penalty.expect("at least one weight"), lambda as f64);
                loss = g.add(loss, p);
            }
            let loss_val = g.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss_val as f64,
                });
            }
            let grads = g.backward(loss);
            let grad_vec: Vec<Array2<f32>> = tp
                .vars()
                .iter()
                .map(|&v| {
                    grads
                        .wrt(v)
                        .cloned()
                        .unwrap_or_else(|| Array2::zeros((0, 0)))
                })
                .collect();
            adam.step(&mut params, &grad_vec);
        }

        // early-stopping signal: validation loss, or training loss for
        // prefixes too small to split
        let monitor_idx: &[usize] = if val_idx.is_empty() {
            &train_idx
        } else {
            &val_idx
        };
        let mx = rows_subset(&xs, monitor_idx);
        let mt = targets_subset(&targets, monitor_idx);
        let mut g = Graph::<f32>::new();
        let tp = crate::learners::stage_params(&mut g, &params);
        let out = mlp_forward(&mut g, &tp, config.depth, &mx);
        let rows = per_row_losses(g.value(out), &mt, &fm.output);
        let monitor = rows.iter().sum::<f64>() / rows.len() as f64;
        if !monitor.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: monitor,
            });
        }
        if stopper.update(monitor) {
            break;
        }
    }
    Ok(FittedMlp {
        params,
        epochs_used,
        feature_map: fm,
        depth: config.depth,
        train_indices: train_idx,
    })
}

/// Traces the baseline's prequential coding curve: at each prefix size,
/// refit from scratch and score the next unseen points. Episodes and seeds
/// are identical across configurations (e.g. λ settings), so comparisons
/// are paired.
pub fn prequential_curve_sgd(
    episodes: &[Episode],
    size_schedule: &[usize],
    config: &BaselineConfig,
    eval_points_per_size: usize,
) -> Result<PrequentialCurve> {
    if size_schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::GridMismatch(
            "size schedule must be strictly increasing".into(),
        ));
    }
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("no episodes".into()));
    }
    let spec = &episodes[0].spec;
    let mut per_episode: Vec<Vec<f64>> = Vec::new();
    for (ei, episode) in episodes.iter().enumerate() {
        let mut row = Vec::with_capacity(size_schedule.len());
        for (si, &s) in size_schedule.iter().enumerate() {
            let n = episode.len();
            if s + 1 > n {
                return Err(Error::GridMismatch(format!(
                    "prefix {s} needs held-out points but the episode has {n}"
                )));
            }
            let fit_points = &episode.points[..s];
            let eval_end = (s + eval_points_per_size).min(n);
            let eval_points = &episode.points[s..eval_end];
            let fit_cfg = BaselineConfig {
                seed: derive_seed(config.seed, stream::SGD_FIT, (ei * 10_000 + si) as u64),
                ..config.clone()
            };
            let model = fit_mlp(spec, fit_points, &fit_cfg)?;
            row.push(mlp_mean_loss(&model, eval_points)?);
        }
        per_episode.push(row);
    }
    let mut mean_error = Vec::new();
    let mut stderr = Vec::new();
    for si in 0..size_schedule.len() {
        let col: Vec<f64> = per_episode.iter().map(|r| r[si]).collect();
        let n = col.len() as f64;
        let m = col.iter().sum::<f64>() / n;
        let se = if col.len() > 1 {
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        mean_error.push(m);
        stderr.push(se);
    }
    let error_kind = match FeatureMap::for_spec(spec, 1).output {
        OutputKind::GaussianMean { dim } => ErrorKind::Mse { output_dim: dim },
        OutputKind::CategoricalMulti { .. } => ErrorKind::CrossEntropy,
    };
    Ok(PrequentialCurve {
        context_sizes: size_schedule.to_vec(),
        mean_error: mean_error.clone(),
        stderr,
        per_seed: vec![mean_error],
        error_kind,
        learner: "sgd_mlp".into(),
        family: spec.family.as_str().into(),
    })
}
