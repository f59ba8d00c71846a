//! Differentiable in-context learner architectures.
//!
//! Each learner maps a context prefix to a predictive distribution for a
//! query input. The learner's activations given a context act as the
//! implicit in-context model: the same forward pass is both the learning
//! algorithm and the learned predictor.
//!
//! Three architectures share one calling convention:
//!
//! - [`Arch::Bottleneck`] — causal decoder stack whose per-position summary
//!   is projected to a low-dimensional state consumed by an MLP head;
//! - [`Arch::DualStream`] — two masked token streams (context and query)
//!   with no separate head, so a query position can never see its own label;
//! - [`Arch::Recurrent`] — a gated recurrent scan behind the same state
//!   interface.
//!
//! [`predictions`] evaluates a row of queries, each against its own context
//! prefix, in one pass; position `t` depends only on tokens `≤ t`.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Scalar, Var};
use crate::rng::seeded;
use crate::tasks::{chebyshev_basis, Episode, Family, Output, TaskSpec};

pub const MASK_OFF: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Bottleneck,
    DualStream,
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Mlp,
    /// Parameter-free head: the state vector is read as coefficients of the
    /// Chebyshev basis and evaluated at the query point.
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Mean of a unit-variance Gaussian per output dimension.
    GaussianMean { dim: usize },
    /// One softmax per label position.
    CategoricalMulti { classes: Vec<usize> },
}

impl OutputKind {
    pub fn dim(&self) -> usize {
        match self {
            OutputKind::GaussianMean { dim } => *dim,
            OutputKind::CategoricalMulti { classes } => classes.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    Learned,
    /// Distance-indexed attention bias (used for the supervised HMM task).
    Relative,
}

/// Maps raw task data to learner features: digits become one-hots, labels
/// become one-hot blocks, regression values pass through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub family: Family,
    pub x_dim: usize,
    pub y_dim: usize,
    pub output: OutputKind,
    digit_alphabet: usize,
    time_scale: usize,
}

impl FeatureMap {
    pub fn for_spec(spec: &TaskSpec, max_context: usize) -> Self {
        match spec.family {
            Family::Linear | Family::Sinusoid | Family::Chebyshev => FeatureMap {
                family: spec.family,
                x_dim: spec.input_dim.max(1),
                y_dim: 1,
                output: OutputKind::GaussianMean { dim: 1 },
                digit_alphabet: 0,
                time_scale: max_context,
            },
            Family::Mastermind => {
                let classes = spec.label_classes();
                FeatureMap {
                    family: spec.family,
                    x_dim: spec.code_length * spec.alphabet_size,
                    y_dim: classes.iter().sum(),
                    output: OutputKind::CategoricalMulti { classes },
                    digit_alphabet: spec.alphabet_size,
                    time_scale: max_context,
                }
            }
            Family::Hmm => FeatureMap {
                family: spec.family,
                x_dim: 0,
                y_dim: spec.alphabet_size,
                output: OutputKind::CategoricalMulti {
                    classes: vec![spec.alphabet_size],
                },
                digit_alphabet: 0,
                time_scale: max_context,
            },
            Family::HmmSupervised => FeatureMap {
                family: spec.family,
                x_dim: 1,
                y_dim: spec.alphabet_size,
                output: OutputKind::CategoricalMulti {
                    classes: vec![spec.alphabet_size],
                },
                digit_alphabet: 0,
                time_scale: max_context,
            },
        }
    }

    pub fn token_dim(&self) -> usize {
        self.x_dim + self.y_dim
    }

    pub fn x_features(&self, x: &[f64]) -> Vec<f64> {
        match self.family {
            Family::Mastermind => {
                let mut out = vec![0.0; self.x_dim];
                for (pos, &digit) in x.iter().enumerate() {
                    out[pos * self.digit_alphabet + digit as usize] = 1.0;
                }
                out
            }
            Family::Hmm => Vec::new(),
            Family::HmmSupervised => vec![x[0] / self.time_scale.max(1) as f64],
            _ => x.to_vec(),
        }
    }

    pub fn y_features(&self, y: &Output) -> Vec<f64> {
        match y {
            Output::Reals(v) => v.clone(),
            Output::Labels(labels) => {
                let OutputKind::CategoricalMulti { classes } = &self.output else {
                    panic!("label output with non-categorical feature map")
                };
                let mut out = vec![0.0; self.y_dim];
                let mut offset = 0;
                for (k, &label) in labels.iter().enumerate() {
                    out[offset + label as usize] = 1.0;
                    offset += classes[k];
                }
                out
            }
        }
    }
}

/// Architecture and head configuration of a learner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub arch: Arch,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub d_bottleneck: usize,
    pub head_depth: usize,
    pub head_width: usize,
    pub head_kind: HeadKind,
    pub positional: Positional,
    pub max_context: usize,
    pub feature_map: FeatureMap,
}

impl LearnerConfig {
    /// Reference scale: 4 layers, 4 heads, 256 model dims, 512 feed-forward,
    /// 128-dim bottleneck, 5-layer 256-wide head.
    pub fn reference(arch: Arch, spec: &TaskSpec, max_context: usize) -> Self {
        LearnerConfig {
            arch,
            n_layers: 4,
            n_heads: 4,
            d_model: 256,
            d_ff: 512,
            d_bottleneck: 128,
            head_depth: 5,
            head_width: 256,
            head_kind: HeadKind::Mlp,
            positional: Positional::Learned,
            max_context,
            feature_map: FeatureMap::for_spec(spec, max_context),
        }
    }

    /// Small profile that trains in minutes on one CPU core.
    pub fn desk(arch: Arch, spec: &TaskSpec, max_context: usize) -> Self {
        LearnerConfig {
            arch,
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 128,
            d_bottleneck: 32,
            head_depth: 3,
            head_width: 64,
            head_kind: HeadKind::Mlp,
            positional: Positional::Learned,
            max_context,
            feature_map: FeatureMap::for_spec(spec, max_context),
        }
    }

    pub fn with_polynomial_head(mut self, basis_size: usize) -> Self {
        self.head_kind = HeadKind::Polynomial;
        self.d_bottleneck = basis_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(
                "d_model must be divisible by n_heads".into(),
            ));
        }
        if self.d_bottleneck > self.d_model {
            return Err(Error::InvalidArgument(
                "d_bottleneck must not exceed d_model".into(),
            ));
        }
        Ok(())
    }

    pub fn output(&self) -> &OutputKind {
        &self.feature_map.output
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F: Scalar> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Array2<F>) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
    }

    pub fn get(&self, name: &str) -> &Array2<F> {
        &self.values[self.index[name]]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_weights(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter())
    }

    pub fn values(&self) -> &[Array2<F>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<F>] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (name, value) in self.iter() {
            out.insert(name, value.mapv(|x| G::from_f64(x.to_f64())));
        }
        out
    }
}

/// Tape handles for every parameter, aligned with `ParamSet` order.
pub struct TapedParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl TapedParams {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Places every parameter on the tape as a leaf.
pub fn stage_params<F: Scalar>(g: &mut Graph<F>, params: &ParamSet<F>) -> TapedParams {
    let mut vars = Vec::with_capacity(params.len());
    for (_, value) in params.iter() {
        vars.push(g.leaf(value.clone()));
    }
    TapedParams {
        vars,
        index: params.index.clone(),
    }
}

fn normal_init<F: Scalar>(
    rng: &mut crate::rng::Seeded,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| {
        let u: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        F::from_f64(u * std)
    })
}

/// Initializes all weights from a small-variance Normal, biases zero,
/// normalization gains one.
pub fn init_params(config: &LearnerConfig, seed: u64) -> ParamSet<f32> {
    config.validate().expect("valid config");
    let mut rng = seeded(seed);
    let mut p = ParamSet::<f32>::new();
    let d = config.d_model;
    let token_dim = config.feature_map.token_dim();
    let x_dim = config.feature_map.x_dim;
    let out_dim = config.output().dim();
    let std = 0.02;
    let r = &mut rng;

    let ln = |p: &mut ParamSet<f32>, name: &str| {
        p.insert(&format!("{name}.g"), Array2::from_elem((1, d), 1.0));
        p.insert(&format!("{name}.b"), Array2::zeros((1, d)));
    };

    match config.arch {
        Arch::Bottleneck | Arch::Recurrent => {
            p.insert("embed.w", normal_init(r, token_dim.max(1), d, std));
            p.insert("embed.b", Array2::zeros((1, d)));
            if config.arch == Arch::Bottleneck {
                match config.positional {
                    Positional::Learned => {
                        p.insert("pos", normal_init(r, config.max_context + 1, d, std));
                    }
                    Positional::Relative => {
                        p.insert("rel", normal_init(r, 1, config.max_context + 1, std));
                    }
                }
                for l in 0..config.n_layers {
                    ln(&mut p, &format!("l{l}.ln1"));
                    for w in ["wq", "wk", "wv", "wo"] {
                        p.insert(&format!("l{l}.{w}"), normal_init(r, d, d, std));
                    }
                    ln(&mut p, &format!("l{l}.ln2"));
                    p.insert(&format!("l{l}.ff1.w"), normal_init(r, d, config.d_ff, std));
                    p.insert(&format!("l{l}.ff1.b"), Array2::zeros((1, config.d_ff)));
                    p.insert(&format!("l{l}.ff2.w"), normal_init(r, config.d_ff, d, std));
                    p.insert(&format!("l{l}.ff2.b"), Array2::zeros((1, d)));
                }
                ln(&mut p, "lnf");
            } else {
                for l in 0..config.n_layers {
                    for w in ["wz", "uz", "wh", "uh"] {
                        p.insert(&format!("l{l}.{w}"), normal_init(r, d, d, std));
                    }
                    p.insert(&format!("l{l}.bz"), Array2::zeros((1, d)));
                    p.insert(&format!("l{l}.bh"), Array2::zeros((1, d)));
                }
            }
            p.insert("bottleneck.w", normal_init(r, d, config.d_bottleneck, std));
            p.insert("bottleneck.b", Array2::zeros((1, config.d_bottleneck)));
            if config.head_kind == HeadKind::Mlp {
                let mut in_dim = config.d_bottleneck + x_dim;
                for i in 0..config.head_depth {
                    let w = if i + 1 == config.head_depth {
                        out_dim
                    } else {
                        config.head_width
                    };
                    p.insert(&format!("head{i}.w"), normal_init(r, in_dim, w, std));
                    p.insert(&format!("head{i}.b"), Array2::zeros((1, w)));
                    in_dim = w;
                }
            }
        }
        Arch::DualStream => {
            p.insert("embed_d.w", normal_init(r, token_dim.max(1), d, std));
            p.insert("embed_d.b", Array2::zeros((1, d)));
            p.insert("embed_x.w", normal_init(r, x_dim.max(1), d, std));
            p.insert("embed_x.b", Array2::zeros((1, d)));
            p.insert("pos_d", normal_init(r, config.max_context + 1, d, std));
            p.insert("pos_x", normal_init(r, config.max_context + 1, d, std));
            for l in 0..config.n_layers {
                ln(&mut p, &format!("l{l}.lnd"));
                ln(&mut p, &format!("l{l}.lnx"));
                for w in ["wk", "wv", "wq_d", "wq_x", "wo_d", "wo_x"] {
                    p.insert(&format!("l{l}.{w}"), normal_init(r, d, d, std));
                }
                ln(&mut p, &format!("l{l}.lnd2"));
                ln(&mut p, &format!("l{l}.lnx2"));
                for s in ["d", "x"] {
                    p.insert(
                        &format!("l{l}.ff{s}1.w"),
                        normal_init(r, d, config.d_ff, std),
                    );
                    p.insert(&format!("l{l}.ff{s}1.b"), Array2::zeros((1, config.d_ff)));
                    p.insert(
                        &format!("l{l}.ff{s}2.w"),
                        normal_init(r, config.d_ff, d, std),
                    );
                    p.insert(&format!("l{l}.ff{s}2.b"), Array2::zeros((1, d)));
                }
            }
            ln(&mut p, "lnf");
            p.insert("out.w", normal_init(r, d, out_dim, std));
            p.insert("out.b", Array2::zeros((1, out_dim)));
        }
    }
    p
}

// ---------------------------------------------------------------------------
// Token encoding and masks
// ---------------------------------------------------------------------------

/// Featurized token payloads: row 0 is an all-zero sentinel standing for the
/// empty context, row `t` is `[x_t, y_t]`. Shape `(N+1, token_dim)`.
pub fn encode_tokens(episode: &Episode, fm: &FeatureMap) -> Array2<f64> {
    assert!(!episode.is_empty());
    let n = episode.len();
    let mut tokens = Array2::zeros((n + 1, fm.token_dim()));
    for (t, point) in episode.points.iter().enumerate() {
        let xf = fm.x_features(&point.x);
        let yf = fm.y_features(&point.y);
        for (j, &v) in xf.iter().enumerate() {
            tokens[[t + 1, j]] = v;
        }
        for (j, &v) in yf.iter().enumerate() {
            tokens[[t + 1, fm.x_dim + j]] = v;
        }
    }
    tokens
}

/// Featurized query inputs, one row per requested query.
pub fn encode_queries(xs: &[Vec<f64>], fm: &FeatureMap) -> Array2<f64> {
    let mut out = Array2::zeros((xs.len(), fm.x_dim.max(1)));
    for (i, x) in xs.iter().enumerate() {
        for (j, &v) in fm.x_features(x).iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// Self-attention mask over context tokens: position `i` sees `j ≤ i`
/// (lower-triangular including the diagonal). Additive, `MASK_OFF` when
/// blocked.
pub fn context_mask<F: Scalar>(n: usize) -> Array2<F> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if j <= i {
            F::zero()
        } else {
            F::from_f64(MASK_OFF)
        }
    })
}

/// Query-over-context mask: query row `r` with context size `c_r` sees the
/// sentinel and the first `c_r` data tokens only (columns `j ≤ c_r`), never
/// its own label. With `c_r = r` this is strictly lower-triangular in the
/// data-token columns.
pub fn query_mask<F: Scalar>(context_sizes: &[usize], n_tokens: usize) -> Array2<F> {
    Array2::from_shape_fn((context_sizes.len(), n_tokens), |(r, j)| {
        if j <= context_sizes[r] {
            F::zero()
        } else {
            F::from_f64(MASK_OFF)
        }
    })
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

fn linear<F: Scalar>(g: &mut Graph<F>, x: Var, tp: &TapedParams, name: &str) -> Var {
    let h = g.matmul(x, tp.var(&format!("{name}.w")));
    g.add_bias(h, tp.var(&format!("{name}.b")))
}

fn layer_norm<F: Scalar>(g: &mut Graph<F>, x: Var, tp: &TapedParams, name: &str) -> Var {
    g.layer_norm_rows(
        x,
        tp.var(&format!("{name}.g")),
        tp.var(&format!("{name}.b")),
        1e-5,
    )
}

/// Multi-head attention of `q_in` over `kv_in` under an additive mask.
#[allow(clippy::too_many_arguments)]
fn attention<F: Scalar>(
    g: &mut Graph<F>,
    cfg: &LearnerConfig,
    q_in: Var,
    kv_in: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    mask: &Array2<F>,
    rel_bias: Option<Var>,
) -> Var {
    let dh = cfg.d_model / cfg.n_heads;
    let q = g.matmul(q_in, wq);
    let k = g.matmul(kv_in, wk);
    let v = g.matmul(kv_in, wv);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let kt = g.transpose(kh);
        let logits = g.matmul(qh, kt);
        let mut logits = g.scale(logits, scale);
        if let Some(rb) = rel_bias {
            logits = g.add(logits, rb);
        }
        let masked = g.add_const(logits, mask);
        let att = g.softmax_rows(masked);
        heads.push(g.matmul(att, vh));
    }
    let mut cat = heads[0];
    for &h in &heads[1..] {
        cat = g.concat_cols(cat, h);
    }
    g.matmul(cat, wo)
}

fn feed_forward<F: Scalar>(g: &mut Graph<F>, x: Var, tp: &TapedParams, prefix: &str) -> Var {
    let h = linear(g, x, tp, &format!("{prefix}1"));
    let h = g.relu(h);
    linear(g, h, tp, &format!("{prefix}2"))
}

/// Causal decoder stack over the token sequence, projected to the bottleneck
/// dimension. Returns `(N+1, d_bottleneck)` context states; row `i` encodes
/// the first `i` data points (row 0 the empty context).
pub fn bottleneck_states<F: Scalar>(
    g: &mut Graph<F>,
    tp: &TapedParams,
    cfg: &LearnerConfig,
    tokens: &Array2<F>,
) -> Result<Var> {
    let n_tokens = tokens.nrows();
    if n_tokens > cfg.max_context + 1 {
        return Err(Error::ContextOverflow {
            got: n_tokens - 1,
            max: cfg.max_context,
        });
    }
    let x = g.leaf(tokens.clone());
    let mut h = linear(g, x, tp, "embed");
    let rel_bias = match cfg.positional {
        Positional::Learned => {
            let pos = g.slice_rows(tp.var("pos"), 0, n_tokens);
            h = g.add(h, pos);
            None
        }
        Positional::Relative => Some(g.toeplitz_lower(tp.var("rel"), n_tokens)),
    };
    let mask = context_mask::<F>(n_tokens);
    for l in 0..cfg.n_layers {
        let pre = layer_norm(g, h, tp, &format!("l{l}.ln1"));
        let att = attention(
            g,
            cfg,
            pre,
            pre,
            tp.var(&format!("l{l}.wq")),
            tp.var(&format!("l{l}.wk")),
            tp.var(&format!("l{l}.wv")),
            tp.var(&format!("l{l}.wo")),
            &mask,
            rel_bias,
        );
        h = g.add(h, att);
        let pre = layer_norm(g, h, tp, &format!("l{l}.ln2"));
        let ff = feed_forward(g, pre, tp, &format!("l{l}.ff"));
        h = g.add(h, ff);
    }
    let h = layer_norm(g, h, tp, "lnf");
    Ok(linear(g, h, tp, "bottleneck"))
}

/// Gated recurrent scan with the same state interface as
/// [`bottleneck_states`]: row `i` depends only on tokens `≤ i`.
pub fn recurrent_states<F: Scalar>(
    g: &mut Graph<F>,
    tp: &TapedParams,
    cfg: &LearnerConfig,
    tokens: &Array2<F>,
) -> Result<Var> {
    let n_tokens = tokens.nrows();
    let x = g.leaf(tokens.clone());
    let mut layer_in = linear(g, x, tp, "embed");
    let ones = Array2::from_elem((1, cfg.d_model), F::one());
    for l in 0..cfg.n_layers {
        let wz = tp.var(&format!("l{l}.wz"));
        let uz = tp.var(&format!("l{l}.uz"));
        let bz = tp.var(&format!("l{l}.bz"));
        let wh = tp.var(&format!("l{l}.wh"));
        let uh = tp.var(&format!("l{l}.uh"));
        let bh = tp.var(&format!("l{l}.bh"));
        let mut h_prev: Option<Var> = None;
        let mut rows = Vec::with_capacity(n_tokens);
        for t in 0..n_tokens {
            let u = g.slice_rows(layer_in, t, 1);
            let mut zpre = g.matmul(u, wz);
            let mut cpre = g.matmul(u, wh);
            if let Some(hp) = h_prev {
                let zr = g.matmul(hp, uz);
                zpre = g.add(zpre, zr);
                let cr = g.matmul(hp, uh);
                cpre = g.add(cpre, cr);
            }
            let zpre = g.add_bias(zpre, bz);
            let z = g.sigmoid(zpre);
            let cpre = g.add_bias(cpre, bh);
            let cand = g.tanh(cpre);
            let keep = {
                let nz = g.scale(z, -1.0);
                g.add_const(nz, &ones)
            };
            let h = match h_prev {
                Some(hp) => {
                    let a = g.mul(keep, hp);
                    let b = g.mul(z, cand);
                    g.add(a, b)
                }
                None => g.mul(z, cand),
            };
            h_prev = Some(h);
            rows.push(h);
        }
        layer_in = g.stack_rows(&rows);
    }
    Ok(linear(g, layer_in, tp, "bottleneck"))
}

/// Prediction head: the context state concatenated with the query input
/// passes through a ReLU MLP; or through the parameter-free polynomial head,
/// which contracts the state (read as basis coefficients) against the
/// Chebyshev basis at the query point.
pub fn predict_head<F: Scalar>(
    g: &mut Graph<F>,
    tp: &TapedParams,
    cfg: &LearnerConfig,
    states: Var,
    queries: &Array2<F>,
) -> Var {
    match cfg.head_kind {
        HeadKind::Mlp => {
            let q = g.leaf(queries.clone());
            let mut h = if cfg.feature_map.x_dim > 0 {
                g.concat_cols(states, q)
            } else {
                states
            };
            for i in 0..cfg.head_depth {
                h = linear(g, h, tp, &format!("head{i}"));
                if i + 1 < cfg.head_depth {
                    h = g.relu(h);
                }
            }
            h
        }
        HeadKind::Polynomial => {
            let basis = Array2::from_shape_fn((queries.nrows(), cfg.d_bottleneck), |(r, i)| {
                let x = queries[[r, 0]].to_f64();
                F::from_f64(chebyshev_basis(x, cfg.d_bottleneck)[i])
            });
            let weighted = g.mul_const(states, &basis);
            g.sum_cols(weighted)
        }
    }
}

/// Raw model outputs (Gaussian means or pre-softmax logits), one row per
/// query; row `r` is conditioned on exactly the first `context_sizes[r]`
/// data points.
pub fn predictions<F: Scalar>(
    g: &mut Graph<F>,
    tp: &TapedParams,
    cfg: &LearnerConfig,
    tokens: &Array2<F>,
    context_sizes: &[usize],
    queries: &Array2<F>,
) -> Result<Var> {
    assert_eq!(context_sizes.len(), queries.nrows());
    let n_tokens = tokens.nrows();
    for &c in context_sizes {
        if c >= n_tokens {
            return Err(Error::ContextOverflow {
                got: c,
                max: n_tokens - 1,
            });
        }
    }
    match cfg.arch {
        Arch::Bottleneck | Arch::Recurrent => {
            let states = if cfg.arch == Arch::Bottleneck {
                bottleneck_states(g, tp, cfg, tokens)?
            } else {
                recurrent_states(g, tp, cfg, tokens)?
            };
            let selected = g.select_rows(states, context_sizes);
            Ok(predict_head(g, tp, cfg, selected, queries))
        }
        Arch::DualStream => dualstream_predictions(g, tp, cfg, tokens, context_sizes, queries),
    }
}

/// Two-stream forward: the context stream self-attends causally, the query
/// stream attends to context positions strictly before its own label.
pub fn dualstream_predictions<F: Scalar>(
    g: &mut Graph<F>,
    tp: &TapedParams,
    cfg: &LearnerConfig,
    tokens: &Array2<F>,
    context_sizes: &[usize],
    queries: &Array2<F>,
) -> Result<Var> {
    let n_tokens = tokens.nrows();
    if n_tokens > cfg.max_context + 1 {
        return Err(Error::ContextOverflow {
            got: n_tokens - 1,
            max: cfg.max_context,
        });
    }
    if context_sizes.len() != queries.nrows() {
        return Err(Error::InvalidArgument(
            "query rows must match context size list".into(),
        ));
    }
    let dv = g.leaf(tokens.clone());
    let mut d = linear(g, dv, tp, "embed_d");
    let pos_d = g.slice_rows(tp.var("pos_d"), 0, n_tokens);
    d = g.add(d, pos_d);

    let xv = g.leaf(queries.clone());
    let mut x = linear(g, xv, tp, "embed_x");
    let pos_x = g.select_rows(tp.var("pos_x"), context_sizes);
    x = g.add(x, pos_x);

    let mask_d = context_mask::<F>(n_tokens);
    let mask_x = query_mask::<F>(context_sizes, n_tokens);
    for l in 0..cfg.n_layers {
        let dn = layer_norm(g, d, tp, &format!("l{l}.lnd"));
        let xn = layer_norm(g, x, tp, &format!("l{l}.lnx"));
        let att_d = attention(
            g,
            cfg,
            dn,
            dn,
            tp.var(&format!("l{l}.wq_d")),
            tp.var(&format!("l{l}.wk")),
            tp.var(&format!("l{l}.wv")),
            tp.var(&format!("l{l}.wo_d")),
            &mask_d,
            None,
        );
        let att_x = attention(
            g,
            cfg,
            xn,
            dn,
            tp.var(&format!("l{l}.wq_x")),
            tp.var(&format!("l{l}.wk")),
            tp.var(&format!("l{l}.wv")),
            tp.var(&format!("l{l}.wo_x")),
            &mask_x,
            None,
        );
        d = g.add(d, att_d);
        x = g.add(x, att_x);
        let dn2 = layer_norm(g, d, tp, &format!("l{l}.lnd2"));
        let ff_d = feed_forward(g, dn2, tp, &format!("l{l}.ffd"));
        d = g.add(d, ff_d);
        let xn2 = layer_norm(g, x, tp, &format!("l{l}.lnx2"));
        let ff_x = feed_forward(g, xn2, tp, &format!("l{l}.ffx"));
        x = g.add(x, ff_x);
    }
    let x = layer_norm(g, x, tp, "lnf");
    Ok(linear(g, x, tp, "out"))
}

// ---------------------------------------------------------------------------
// Predictive distributions
// ---------------------------------------------------------------------------

/// A normalized predictive distribution for one query.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveDistribution {
    /// Mean of a unit-variance Gaussian.
    GaussianMean(Vec<f64>),
    /// One probability vector per label position.
    Categorical(Vec<Vec<f64>>),
}

/// Converts raw output rows to normalized distributions.
pub fn to_distributions<F: Scalar>(
    outputs: &Array2<F>,
    kind: &OutputKind,
) -> Vec<PredictiveDistribution> {
    (0..outputs.nrows())
        .map(|r| match kind {
            OutputKind::GaussianMean { dim } => PredictiveDistribution::GaussianMean(
                (0..*dim).map(|j| outputs[[r, j]].to_f64()).collect(),
            ),
            OutputKind::CategoricalMulti { classes } => {
                let mut offset = 0;
                let mut per_label = Vec::with_capacity(classes.len());
                for &k in classes {
                    let logits: Vec<f64> =
                        (0..k).map(|j| outputs[[r, offset + j]].to_f64()).collect();
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|&v| (v - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    per_label.push(exps.iter().map(|&e| e / z).collect());
                    offset += k;
                }
                PredictiveDistribution::Categorical(per_label)
            }
        })
        .collect()
}

/// Adds Normal(0, `std`²) noise to every weight. Gradient checks evaluate at
/// such generic points so derivatives are well away from the FD noise floor
/// and from ReLU kinks.
pub fn jitter_params<F: Scalar>(params: &ParamSet<F>, std: f64, seed: u64) -> ParamSet<F> {
    let mut rng = seeded(seed);
    let mut out = params.clone();
    for value in out.values_mut() {
        for v in value.iter_mut() {
            let u: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            *v += F::from_f64(u * std);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compares reverse-mode gradients against central finite differences on a
/// random subsample of weights, in `f64`. Returns the maximum relative error.
pub fn grad_check<B>(
    params: &ParamSet<f64>,
    build: B,
    n_weights: usize,
    eps: f64,
    seed: u64,
) -> Result<f64>
where
    B: Fn(&mut Graph<f64>, &TapedParams) -> Var,
{
    assert!(eps > 0.0);
    let mut g = Graph::<f64>::new();
    let tp = stage_params(&mut g, params);
    let loss = build(&mut g, &tp);
    let loss_val = g.scalar(loss);
    if !loss_val.is_finite() {
        return Err(Error::NonFiniteLoss { position: 0 });
    }
    let grads = g.backward(loss);

    let eval = |p: &ParamSet<f64>| -> f64 {
        let mut g = Graph::<f64>::new();
        let tp = stage_params(&mut g, p);
        let loss = build(&mut g, &tp);
        g.scalar(loss)
    };

    let mut rng = seeded(seed);
    let mut max_rel = 0.0f64;
    let mut perturbed = params.clone();
    for _ in 0..n_weights {
        let pi = rng.gen_range(0..params.len());
        let (rows, cols) = params.values()[pi].dim();
        let i = rng.gen_range(0..rows);
        let j = rng.gen_range(0..cols);
        let orig = perturbed.values()[pi][[i, j]];
        perturbed.values_mut()[pi][[i, j]] = orig + eps;
        let fp = eval(&perturbed);
        perturbed.values_mut()[pi][[i, j]] = orig - eps;
        let fm = eval(&perturbed);
        perturbed.values_mut()[pi][[i, j]] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let ad = grads.wrt(tp.vars()[pi]).map(|m| m[[i, j]]).unwrap_or(0.0);
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_episode, sample_task, TaskParams};

    fn sinusoid_episode(n: usize, seed: u64) -> (TaskSpec, Episode) {
        let spec = TaskSpec {
            shared_freqs: vec![1.3, 2.9, 4.1],
            ..TaskSpec::sinusoid(3, 0.0)
        };
        let mut rng = seeded(seed);
        let params = sample_task(&spec, &mut rng);
        let ep = make_episode(&spec, &params, n, seed);
        (spec, ep)
    }

    fn toy_config(arch: Arch, spec: &TaskSpec) -> LearnerConfig {
        LearnerConfig {
            arch,
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 12,
            d_bottleneck: 4,
            head_depth: 3,
            head_width: 6,
            head_kind: HeadKind::Mlp,
            positional: Positional::Learned,
            max_context: 16,
            feature_map: FeatureMap::for_spec(spec, 16),
        }
    }

    fn prequential_rows(ep: &Episode, fm: &FeatureMap) -> (Vec<usize>, Array2<f64>) {
        let sizes: Vec<usize> = (0..ep.len()).collect();
        let xs: Vec<Vec<f64>> = ep.points.iter().map(|p| p.x.clone()).collect();
        (sizes, encode_queries(&xs, fm))
    }

    fn forward_outputs(
        cfg: &LearnerConfig,
        params: &ParamSet<f32>,
        tokens: &Array2<f64>,
        sizes: &[usize],
        queries: &Array2<f64>,
    ) -> Array2<f32> {
        let mut g = Graph::<f32>::new();
        let tp = stage_params(&mut g, params);
        let out = predictions(
            &mut g,
            &tp,
            cfg,
            &tokens.mapv(|v| v as f32),
            sizes,
            &queries.mapv(|v| v as f32),
        )
        .unwrap();
        g.value(out).clone()
    }

    #[test]
    fn tokens_include_sentinel_and_are_pointwise() {
        let (spec, ep) = sinusoid_episode(6, 3);
        let fm = FeatureMap::for_spec(&spec, 16);
        let tokens = encode_tokens(&ep, &fm);
        assert_eq!(tokens.nrows(), 7);
        assert!(tokens.row(0).iter().all(|&v| v == 0.0));
        // token t is a pure function of (x_t, y_t): rotate the episode and
        // the shared point's payload is unchanged
        let mut ep2 = ep.clone();
        ep2.points.rotate_left(2);
        let tokens2 = encode_tokens(&ep2, &fm);
        assert_eq!(tokens.row(3), tokens2.row(1));
    }

    #[test]
    fn zero_episode_zero_payloads() {
        let (spec, mut ep) = sinusoid_episode(4, 4);
        for p in &mut ep.points {
            p.x = vec![0.0];
            p.y = Output::Reals(vec![0.0]);
        }
        let fm = FeatureMap::for_spec(&spec, 16);
        let tokens = encode_tokens(&ep, &fm);
        assert!(tokens.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_shapes() {
        let md = context_mask::<f64>(5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(md[[i, j]] == 0.0, j <= i);
            }
        }
        let sizes: Vec<usize> = (0..4).collect();
        let mx = query_mask::<f64>(&sizes, 5);
        // in the data-token columns (j ≥ 1) this is strictly lower-triangular:
        // query row r sees data token j ⇔ j ≤ r
        for r in 0..4 {
            for j in 0..5 {
                assert_eq!(mx[[r, j]] == 0.0, j <= r);
            }
        }
    }

    #[test]
    fn causality_under_future_perturbation() {
        for arch in [Arch::Bottleneck, Arch::Recurrent, Arch::DualStream] {
            let (spec, ep) = sinusoid_episode(10, 7);
            let cfg = toy_config(arch, &spec);
            let params = init_params(&cfg, 1);
            let fm = &cfg.feature_map;
            let tokens = encode_tokens(&ep, fm);
            let (sizes, queries) = prequential_rows(&ep, fm);
            let base = forward_outputs(&cfg, &params, &tokens, &sizes, &queries);

            let t = 4;
            let mut perturbed = tokens.clone();
            for row in (t + 1)..perturbed.nrows() {
                for col in 0..perturbed.ncols() {
                    perturbed[[row, col]] += 13.7 * (row as f64 + 1.0);
                }
            }
            // for the query stream, also perturb y_t itself
            if arch == Arch::DualStream {
                for col in fm.x_dim..fm.token_dim() {
                    perturbed[[t, col]] += 5.0;
                }
            }
            let out = forward_outputs(&cfg, &params, &perturbed, &sizes, &queries);
            for r in 0..t {
                assert_eq!(
                    base.row(r),
                    out.row(r),
                    "{arch:?}: prediction at context {r} must be bit-identical"
                );
            }
        }
    }

    #[test]
    fn bottleneck_state_dimension_follows_config() {
        let (spec, ep) = sinusoid_episode(5, 9);
        let cfg = toy_config(Arch::Bottleneck, &spec);
        let params = init_params(&cfg, 2);
        let fm = &cfg.feature_map;
        let tokens = encode_tokens(&ep, fm).mapv(|v| v as f32);
        let mut g = Graph::<f32>::new();
        let tp = stage_params(&mut g, &params);
        let states = bottleneck_states(&mut g, &tp, &cfg, &tokens).unwrap();
        assert_eq!(g.shape(states), (6, 4));
    }

    #[test]
    fn context_overflow_is_an_error() {
        let (spec, ep) = sinusoid_episode(20, 9);
        let cfg = toy_config(Arch::Bottleneck, &spec); // max_context 16
        let params = init_params(&cfg, 2);
        let fm = &cfg.feature_map;
        let tokens = encode_tokens(&ep, fm).mapv(|v| v as f32);
        let mut g = Graph::<f32>::new();
        let tp = stage_params(&mut g, &params);
        assert!(matches!(
            bottleneck_states(&mut g, &tp, &cfg, &tokens),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn categorical_head_outputs_normalize() {
        let spec = TaskSpec::mastermind(8, 6);
        let mut rng = seeded(31);
        let params_task = sample_task(&spec, &mut rng);
        let ep = make_episode(&spec, &params_task, 6, 11);
        let cfg = toy_config(Arch::Bottleneck, &spec);
        let params = init_params(&cfg, 3);
        let fm = &cfg.feature_map;
        let tokens = encode_tokens(&ep, fm);
        let (sizes, queries) = prequential_rows(&ep, fm);
        let out = forward_outputs(&cfg, &params, &tokens, &sizes, &queries);
        let dists = to_distributions(&out, cfg.output());
        for d in &dists {
            let PredictiveDistribution::Categorical(per_label) = d else {
                panic!()
            };
            assert_eq!(per_label.len(), 2);
            for probs in per_label {
                assert_eq!(probs.len(), 9);
                let s: f64 = probs.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert!(probs.iter().all(|&p| p >= 0.0));
            }
        }
        // deterministic given (params, input)
        let out2 = forward_outputs(&cfg, &params, &tokens, &sizes, &queries);
        assert_eq!(out, out2);
    }

    #[test]
    fn reference_config_matches_published_sizes() {
        let spec = TaskSpec::linear(3, 0.04);
        let cfg = LearnerConfig::reference(Arch::Bottleneck, &spec, 1000);
        assert_eq!(
            (cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.d_ff),
            (4, 4, 256, 512)
        );
        assert_eq!(cfg.d_bottleneck, 128);
        assert_eq!((cfg.head_depth, cfg.head_width), (5, 256));
    }

    #[test]
    fn polynomial_head_evaluates_coefficients() {
        let spec = TaskSpec::chebyshev(1, 4, 0.0);
        let cfg = toy_config(Arch::Bottleneck, &spec).with_polynomial_head(4);
        // states are coefficients; check the head against a direct evaluation
        let mut g = Graph::<f64>::new();
        let states = g.leaf(ndarray::array![[0.5, -1.0, 2.0, 0.25]]);
        let queries = ndarray::array![[0.3]];
        let tp = TapedParams {
            vars: vec![],
            index: HashMap::new(),
        };
        let out = predict_head(&mut g, &tp, &cfg, states, &queries);
        let expect = crate::tasks::eval_chebyshev(&[0.5, -1.0, 2.0, 0.25], 0.3, 0.0);
        assert!((g.value(out)[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn dualstream_single_layer_matches_hand_computed_attention() {
        // 1 layer, 1 head, d_model 2: compare the X-stream output against an
        // explicit evaluation with plain matrix ops
        let spec = TaskSpec {
            shared_freqs: vec![2.0],
            ..TaskSpec::sinusoid(1, 0.0)
        };
        let cfg = LearnerConfig {
            arch: Arch::DualStream,
            n_layers: 1,
            n_heads: 1,
            d_model: 2,
            d_ff: 3,
            d_bottleneck: 2,
            head_depth: 1,
            head_width: 2,
            head_kind: HeadKind::Mlp,
            positional: Positional::Learned,
            max_context: 8,
            feature_map: FeatureMap::for_spec(&spec, 8),
        };
        let params = init_params(&cfg, 5).cast::<f64>();
        let mut rng = seeded(6);
        let task = sample_task(&spec, &mut rng);
        let ep = make_episode(&spec, &task, 3, 2);
        let fm = &cfg.feature_map;
        let tokens = encode_tokens(&ep, fm);
        let (sizes, queries) = prequential_rows(&ep, fm);

        let mut g = Graph::<f64>::new();
        let tp = stage_params(&mut g, &params);
        let out = dualstream_predictions(&mut g, &tp, &cfg, &tokens, &sizes, &queries).unwrap();
        let got = g.value(out).clone();

        // hand computation with ndarray primitives only
        let ln = |m: &Array2<f64>, gain: &Array2<f64>, shift: &Array2<f64>| {
            let mut out = m.clone();
            for mut row in out.rows_mut() {
                let mu = row.mean().unwrap();
                let var =
                    row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / row.len() as f64;
                let sd = (var + 1e-5).sqrt();
                row.mapv_inplace(|v| (v - mu) / sd);
            }
            out * gain + shift
        };
        let p = |n: &str| params.get(n).clone();
        let d0 = tokens.dot(&p("embed_d.w"))
            + &p("embed_d.b")
            + &p("pos_d").slice(ndarray::s![0..4, ..]);
        let x0 = queries.dot(&p("embed_x.w"))
            + &p("embed_x.b")
            + &p("pos_x").slice(ndarray::s![0..3, ..]);
        let dn = ln(&d0, &p("l0.lnd.g"), &p("l0.lnd.b"));
        let xn = ln(&x0, &p("l0.lnx.g"), &p("l0.lnx.b"));
        let k = dn.dot(&p("l0.wk"));
        let v = dn.dot(&p("l0.wv"));
        let qx = xn.dot(&p("l0.wq_x"));
        let scale = 1.0 / (2.0f64).sqrt();
        let mut att_x = Array2::<f64>::zeros((3, 2));
        for r in 0..3 {
            // row r attends to D tokens 0..=r
            let mut weights = Vec::new();
            for j in 0..=r {
                weights.push(scale * qx.row(r).dot(&k.row(j)));
            }
            let mx = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = weights.iter().map(|w| (w - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..=r {
                let w = exps[j] / z;
                for c in 0..2 {
                    att_x[[r, c]] += w * v[[j, c]];
                }
            }
        }
        let x1 = x0 + att_x.dot(&p("l0.wo_x"));
        let xn2 = ln(&x1, &p("l0.lnx2.g"), &p("l0.lnx2.b"));
        let ff = xn2.dot(&p("l0.ffx1.w")) + &p("l0.ffx1.b");
        let ff = ff.mapv(|v: f64| v.max(0.0)).dot(&p("l0.ffx2.w")) + &p("l0.ffx2.b");
        let x2 = x1 + ff;
        let xf = ln(&x2, &p("lnf.g"), &p("lnf.b"));
        let expect = xf.dot(&p("out.w")) + &p("out.b");
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn grad_check_linear_model_closed_form() {
        // loss = Σ (x·w − y)²; analytic gradient 2 xᵀ(xw − y)
        let mut rng = seeded(12);
        let x = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 1), |_| rng.gen_range(-1.0..1.0));
        let mut params = ParamSet::<f64>::new();
        params.insert(
            "w",
            Array2::from_shape_fn((3, 1), |_| rng.gen_range(-1.0..1.0)),
        );
        let (xc, yc) = (x.clone(), y.clone());
        let build = move |g: &mut Graph<f64>, tp: &TapedParams| {
            let xl = g.leaf(xc.clone());
            let pred = g.matmul(xl, tp.var("w"));
            let diff = g.add_const(pred, &(-yc.clone()));
            let sq = g.mul(diff, diff);
            g.sum_all(sq)
        };
        let mut g = Graph::<f64>::new();
        let tp = stage_params(&mut g, &params);
        let loss = build(&mut g, &tp);
        let grads = g.backward(loss);
        let ad = grads.wrt(tp.var("w")).unwrap().clone();
        let analytic = x.t().dot(&(x.dot(params.get("w")) - &y)) * 2.0;
        for (a, b) in ad.iter().zip(analytic.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        let err = grad_check(&params, build, 3, 1e-6, 0).unwrap();
        assert!(err < 1e-8, "closed-form model grad err {err}");
    }

    fn episode_loss_builder(
        cfg: LearnerConfig,
        tokens: Array2<f64>,
        sizes: Vec<usize>,
        queries: Array2<f64>,
        targets: Array2<f64>,
    ) -> impl Fn(&mut Graph<f64>, &TapedParams) -> Var {
        move |g, tp| {
            let out = predictions(g, tp, &cfg, &tokens, &sizes, &queries).unwrap();
            let diff = g.add_const(out, &(-targets.clone()));
            let sq = g.mul(diff, diff);
            g.sum_all(sq)
        }
    }

    #[test]
    fn grad_check_architectures() {
        for arch in [Arch::Bottleneck, Arch::DualStream, Arch::Recurrent] {
            let (spec, ep) = sinusoid_episode(6, 8);
            let cfg = toy_config(arch, &spec);
            let params = jitter_params(&init_params(&cfg, 4).cast::<f64>(), 0.3, 21);
            let fm = &cfg.feature_map;
            let tokens = encode_tokens(&ep, fm);
            let (sizes, queries) = prequential_rows(&ep, fm);
            let targets =
                Array2::from_shape_fn((ep.len(), 1), |(r, _)| ep.points[r].y.reals()[0]);
            let build = episode_loss_builder(cfg.clone(), tokens, sizes, queries, targets);
            let err = grad_check(&params, build, 64, 1e-5, 7).unwrap();
            assert!(err <= 1e-4, "{arch:?} grad err {err}");
        }
    }

    #[test]
    fn grad_check_error_shrinks_with_eps() {
        let (spec, ep) = sinusoid_episode(5, 10);
        let cfg = toy_config(Arch::Bottleneck, &spec);
        let params = init_params(&cfg, 9).cast::<f64>();
        let fm = &cfg.feature_map;
        let tokens = encode_tokens(&ep, fm);
        let (sizes, queries) = prequential_rows(&ep, fm);
        let targets = Array2::from_shape_fn((ep.len(), 1), |(r, _)| ep.points[r].y.reals()[0]);
        let build = episode_loss_builder(cfg, tokens, sizes, queries, targets);
        let coarse = grad_check(&params, &build, 16, 1e-3, 3).unwrap();
        let fine = grad_check(&params, &build, 16, 5e-4, 3).unwrap();
        assert!(
            fine <= coarse.max(1e-7) * 1.5,
            "fd error should shrink or sit at the noise floor: {coarse} -> {fine}"
        );
    }

    #[test]
    fn relative_positional_bias_trains_and_stays_causal() {
        // the supervised-HMM configuration: time-index inputs with a
        // distance-indexed attention bias
        let spec = TaskSpec::hmm_supervised(5);
        let mut cfg = toy_config(Arch::Bottleneck, &spec);
        cfg.positional = Positional::Relative;
        let params = init_params(&cfg, 6);
        assert!(params.iter().any(|(n, _)| n == "rel"));

        let points: Vec<crate::tasks::DataPoint> = (0..9)
            .map(|i| crate::tasks::DataPoint {
                x: vec![(i + 1) as f64],
                y: Output::Labels(vec![(i % 5) as u32]),
            })
            .collect();
        let ep = Episode {
            points,
            params: TaskParams::Hmm { latent_index: 0 },
            spec: spec.clone(),
            seed: 0,
        };
        let fm = &cfg.feature_map;
        let tokens = encode_tokens(&ep, fm);
        let (sizes, queries) = prequential_rows(&ep, fm);
        let base = forward_outputs(&cfg, &params, &tokens, &sizes, &queries);

        // causality still holds under the relative bias
        let mut perturbed = tokens.clone();
        for col in 0..perturbed.ncols() {
            perturbed[[6, col]] += 42.0;
        }
        let out = forward_outputs(&cfg, &params, &perturbed, &sizes, &queries);
        for r in 0..5 {
            assert_eq!(base.row(r), out.row(r));
        }

        // and gradients flow through the bias parameter
        let params64 = jitter_params(&init_params(&cfg, 6).cast::<f64>(), 0.3, 9);
        let tokens64 = encode_tokens(&ep, fm);
        let (sizes64, queries64) = prequential_rows(&ep, fm);
        let cfg2 = cfg.clone();
        let onehot = {
            let mut m = Array2::<f64>::zeros((9, 5));
            for (r, p) in ep.points.iter().enumerate() {
                m[[r, p.y.labels()[0] as usize]] = 1.0;
            }
            m
        };
        let build = move |g: &mut Graph<f64>, tp: &TapedParams| {
            let out = predictions(g, tp, &cfg2, &tokens64, &sizes64, &queries64).unwrap();
            let logp = g.log_softmax_rows(out);
            let picked = g.mul_const(logp, &onehot);
            let total = g.sum_all(picked);
            g.scale(total, -1.0)
        };
        let err = grad_check(&params64, build, 64, 1e-5, 2).unwrap();
        assert!(err <= 1e-4, "relative-bias grad err {err}");
    }

    #[test]
    fn recurrent_empty_context_state_fixed() {
        let (spec, ep) = sinusoid_episode(5, 13);
        let cfg = toy_config(Arch::Recurrent, &spec);
        let params = init_params(&cfg, 11);
        let fm = &cfg.feature_map;
        let tokens = encode_tokens(&ep, fm).mapv(|v| v as f32);
        let mut g = Graph::<f32>::new();
        let tp = stage_params(&mut g, &params);
        let states = recurrent_states(&mut g, &tp, &cfg, &tokens).unwrap();
        let row0 = g.value(states).row(0).to_owned();

        // a different episode yields the same empty-context state
        let (_, ep2) = sinusoid_episode(5, 14);
        let tokens2 = encode_tokens(&ep2, fm).mapv(|v| v as f32);
        let mut g2 = Graph::<f32>::new();
        let tp2 = stage_params(&mut g2, &params);
        let states2 = recurrent_states(&mut g2, &tp2, &cfg, &tokens2).unwrap();
        assert_eq!(row0, g2.value(states2).row(0).to_owned());
    }

    #[test]
    fn hmm_feature_map_has_no_query_features() {
        let spec = TaskSpec::hmm(50);
        let fm = FeatureMap::for_spec(&spec, 128);
        assert_eq!(fm.x_dim, 0);
        assert_eq!(fm.y_dim, 50);
        assert_eq!(fm.token_dim(), 50);
    }

    #[test]
    fn mastermind_feature_map_one_hots() {
        let spec = TaskSpec::mastermind(8, 6);
        let fm = FeatureMap::for_spec(&spec, 32);
        assert_eq!(fm.x_dim, 48);
        assert_eq!(fm.y_dim, 18);
        let TaskParams::Mastermind { code } = sample_task(&spec, &mut seeded(1)) else {
            panic!()
        };
        let xf = fm.x_features(&code.iter().map(|&d| d as f64).collect::<Vec<_>>());
        assert_eq!(xf.iter().filter(|&&v| v == 1.0).count(), 8);
    }
}
