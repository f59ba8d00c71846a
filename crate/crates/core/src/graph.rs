//! Reverse-mode automatic differentiation on dense matrices.
//!
//! A [`Graph`] is a single-use tape: forward calls append nodes, `backward`
//! consumes the stored adjoint closures and returns accumulated gradients for
//! every node. All values are `Array2`; row vectors are `(1, c)` and scalars
//! are `(1, 1)`. Training runs in `f32`, gradient checks in `f64` — both via
//! the [`Scalar`] bound.

use ndarray::{Array2, Axis};

/// Element type usable on the tape.
pub trait Scalar:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type GradFn<F> = Box<dyn FnOnce(&Array2<F>) -> Vec<(Var, Array2<F>)> + Send>;

struct Node<F: Scalar> {
    value: Array2<F>,
    grad_fn: Option<GradFn<F>>,
}

/// Single-use computation tape.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Gradients of one scalar node with respect to every tape node.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient w.r.t. `v`, if `v` influenced the differentiated scalar.
    pub fn wrt(&self, v: Var) -> Option<&Array2<F>> {
        self.grads[v.0].as_ref()
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.dim();
        (s.0, s.1)
    }

    fn push(&mut self, value: Array2<F>, grad_fn: Option<GradFn<F>>) -> Var {
        self.nodes.push(Node { value, grad_fn });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node (parameter or input). Gradients accumulate here.
    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(value, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a, g.clone()), (b, g.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(
            v,
            Some(Box::new(move |g| vec![(a, g.clone()), (b, -g.clone())])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = &av * &bv;
        self.push(
            v,
            Some(Box::new(move |g| vec![(a, g * &bv), (b, g * &av)])),
        )
    }

    /// Add a constant matrix (e.g. an attention mask or a negated target).
    pub fn add_const(&mut self, a: Var, m: &Array2<F>) -> Var {
        let v = self.value(a) + m;
        self.push(v, Some(Box::new(move |g| vec![(a, g.clone())])))
    }

    /// Elementwise product with a constant matrix (e.g. a position mask).
    pub fn mul_const(&mut self, a: Var, m: &Array2<F>) -> Var {
        let mc = m.clone();
        let v = self.value(a) * m;
        self.push(v, Some(Box::new(move |g| vec![(a, g * &mc)])))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let kf = F::from_f64(k);
        let v = self.value(a).mapv(|x| x * kf);
        self.push(v, Some(Box::new(move |g| vec![(a, g.mapv(|x| x * kf))])))
    }

    /// Broadcast-add a `(1, c)` row vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a) + self.value(bias);
        self.push(
            v,
            Some(Box::new(move |g| {
                let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(a, g.clone()), (bias, db)]
            })),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.dot(&bv);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a, g.dot(&bv.t())), (b, av.t().dot(g))]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Some(Box::new(move |g| vec![(a, g.t().to_owned())])))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let zero = F::zero();
        let v = self.value(a).mapv(|x| if x > zero { x } else { zero });
        let mask = self.value(a).mapv(|x| if x > zero { F::one() } else { zero });
        self.push(v, Some(Box::new(move |g| vec![(a, g * &mask)])))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let v = self.value(a).mapv(|x| one / (one + (-x).exp()));
        let y = v.clone();
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a, g * &(y.mapv(|s| s * (F::one() - s))))]
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.tanh());
        let y = v.clone();
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a, g * &(y.mapv(|t| F::one() - t * t)))]
            })),
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            row.mapv_inplace(|x| (x - mx).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let y = v.clone();
        self.push(
            v,
            Some(Box::new(move |g| {
                // dx = y ⊙ (g − rowsum(g ⊙ y))
                let gy = g * &y;
                let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(a, &y * &(g - &dot))]
            })),
        )
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - mx).exp()).sum::<F>().ln() + mx;
            row.mapv_inplace(|x| x - lse);
        }
        let soft = v.mapv(|x| x.exp());
        self.push(
            v,
            Some(Box::new(move |g| {
                // dx = g − softmax ⊙ rowsum(g)
                let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(a, g - &(&soft * &gs))]
            })),
        )
    }

    /// Row-wise layer normalization with learnable `(1, c)` gain and shift.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        let cf = F::from_f64(c as f64);
        let epsf = F::from_f64(eps);
        let mut xhat = Array2::<F>::zeros((r, c));
        let mut inv_sigma = Array2::<F>::zeros((r, 1));
        for i in 0..r {
            let row = xv.row(i);
            let mu = row.sum() / cf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / cf;
            let isd = F::one() / (var + epsf).sqrt();
            inv_sigma[[i, 0]] = isd;
            for j in 0..c {
                xhat[[i, j]] = (row[j] - mu) * isd;
            }
        }
        let gv = self.value(gamma).clone();
        let v = &xhat * &gv + self.value(beta);
        let xhat_c = xhat;
        self.push(
            v,
            Some(Box::new(move |g| {
                let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dgamma = (g * &xhat_c).sum_axis(Axis(0)).insert_axis(Axis(0));
                let dxhat = g * &gv;
                let cf2 = F::from_f64(dxhat.ncols() as f64);
                let m1 = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1)) / cf2;
                let m2 = (&dxhat * &xhat_c).sum_axis(Axis(1)).insert_axis(Axis(1)) / cf2;
                let dx = (&dxhat - &m1 - &(&xhat_c * &m2)) * &inv_sigma;
                vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
            })),
        )
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (r, ca) = av.dim();
        let cb = bv.ncols();
        assert_eq!(r, bv.nrows(), "concat_cols: row mismatch");
        let mut v = Array2::<F>::zeros((r, ca + cb));
        v.slice_mut(ndarray::s![.., ..ca]).assign(av);
        v.slice_mut(ndarray::s![.., ca..]).assign(bv);
        self.push(
            v,
            Some(Box::new(move |g| {
                let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                vec![(a, ga), (b, gb)]
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.dim();
        let v = av.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut da = Array2::<F>::zeros((r, c));
                da.slice_mut(ndarray::s![.., start..start + len]).assign(g);
                vec![(a, da)]
            })),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.dim();
        let v = av.slice(ndarray::s![start..start + len, ..]).to_owned();
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut da = Array2::<F>::zeros((r, c));
                da.slice_mut(ndarray::s![start..start + len, ..]).assign(g);
                vec![(a, da)]
            })),
        )
    }

    /// Gather rows by index; duplicates allowed (gradients accumulate).
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = self.value(a);
        let (r, c) = av.dim();
        let idx = indices.to_vec();
        let mut v = Array2::<F>::zeros((idx.len(), c));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&av.row(i));
        }
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut da = Array2::<F>::zeros((r, c));
                for (k, &i) in idx.iter().enumerate() {
                    let mut dst = da.row_mut(i);
                    dst += &g.row(k);
                }
                vec![(a, da)]
            })),
        )
    }

    /// Stacks `(1, c)` rows into an `(n, c)` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty());
        let c = self.shape(rows[0]).1;
        let mut v = Array2::<F>::zeros((rows.len(), c));
        for (i, &r) in rows.iter().enumerate() {
            debug_assert_eq!(self.shape(r), (1, c));
            v.row_mut(i).assign(&self.value(r).row(0));
        }
        let parents = rows.to_vec();
        self.push(
            v,
            Some(Box::new(move |g| {
                parents
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (p, g.row(i).to_owned().insert_axis(Axis(0))))
                    .collect()
            })),
        )
    }

    /// Lower-triangular Toeplitz matrix from a `(1, len)` vector:
    /// `out[i][j] = rel[i − j]` for `j ≤ i`, zero above the diagonal.
    /// Used as a distance-indexed attention bias.
    pub fn toeplitz_lower(&mut self, rel: Var, n: usize) -> Var {
        let rv = self.value(rel);
        assert_eq!(rv.nrows(), 1);
        let len = rv.ncols();
        assert!(n <= len, "toeplitz_lower: need {n} offsets, have {len}");
        let mut v = Array2::<F>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                v[[i, j]] = rv[[0, i - j]];
            }
        }
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut dr = Array2::<F>::zeros((1, len));
                for i in 0..n {
                    for j in 0..=i {
                        dr[[0, i - j]] += g[[i, j]];
                    }
                }
                vec![(rel, dr)]
            })),
        )
    }

    /// Sum of all entries, as a `(1, 1)` scalar node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.value(a).sum();
        let v = Array2::from_elem((1, 1), s);
        self.push(
            v,
            Some(Box::new(move |g| {
                vec![(a, Array2::from_elem((r, c), g[[0, 0]]))]
            })),
        )
    }

    /// Row sums, `(r, 1)`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let c = self.shape(a).1;
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(
            v,
            Some(Box::new(move |g| {
                let mut da = Array2::<F>::zeros((g.nrows(), c));
                for i in 0..g.nrows() {
                    da.row_mut(i).fill(g[[i, 0]]);
                }
                vec![(a, da)]
            })),
        )
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> F {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on non-scalar node");
        val[[0, 0]]
    }

    /// Reverse pass from a `(1, 1)` loss node. Consumes the tape's adjoint
    /// closures; values remain readable afterwards.
    pub fn backward(&mut self, loss: Var) -> Gradients<F> {
        assert_eq!(
            self.nodes[loss.0].value.dim(),
            (1, 1),
            "backward() needs a scalar loss"
        );
        let mut grads: Vec<Option<Array2<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), F::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(f) = self.nodes[i].grad_fn.take() {
                for (parent, contrib) in f(&g) {
                    assert!(parent.0 < i, "tape order violated");
                    match &mut grads[parent.0] {
                        Some(acc) => *acc += &contrib,
                        slot => *slot = Some(contrib),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}
