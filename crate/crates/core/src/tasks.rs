//! Synthetic supervised task families and episode assembly.
//!
//! A task is a data-generating function; an [`Episode`] is an ordered dataset
//! drawn from one task; a [`MetaDataset`] is a collection of episodes from
//! distinct tasks of the same family. Everything is a pure function of
//! `(spec, seed)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::ObservationSequence;
use crate::rng::{self, derive_seed, seeded, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Sinusoid,
    Mastermind,
    Chebyshev,
    Hmm,
    HmmSupervised,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Sinusoid => "sinusoid",
            Family::Mastermind => "mastermind",
            Family::Chebyshev => "chebyshev",
            Family::Hmm => "hmm",
            Family::HmmSupervised => "hmm_supervised",
        }
    }
}

/// Static description of a task family instance. Fields irrelevant to a
/// family keep their defaults and are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    /// Input dimension (regression x, or digit count for Mastermind).
    #[serde(default)]
    pub input_dim: usize,
    /// Observation noise variance σ².
    #[serde(default)]
    pub noise_var: f64,
    /// Number of sinusoid terms L.
    #[serde(default)]
    pub sinusoid_terms: usize,
    /// Frequencies ω shared across every episode of a meta-dataset.
    #[serde(default)]
    pub shared_freqs: Vec<f64>,
    /// Mastermind code length.
    #[serde(default)]
    pub code_length: usize,
    /// Mastermind digit alphabet size, or observation alphabet |X| for HMMs.
    #[serde(default)]
    pub alphabet_size: usize,
    /// Chebyshev generating degree k.
    #[serde(default)]
    pub gen_degree: usize,
    /// Chebyshev basis size (coefficients for C_0..C_{basis_size-1}).
    #[serde(default)]
    pub basis_size: usize,
}

impl TaskSpec {
    pub fn linear(input_dim: usize, noise_var: f64) -> Self {
        TaskSpec {
            family: Family::Linear,
            input_dim,
            noise_var,
            ..Self::empty(Family::Linear)
        }
    }

    pub fn sinusoid(terms: usize, noise_var: f64) -> Self {
        TaskSpec {
            family: Family::Sinusoid,
            input_dim: 1,
            noise_var,
            sinusoid_terms: terms,
            ..Self::empty(Family::Sinusoid)
        }
    }

    pub fn mastermind(code_length: usize, alphabet_size: usize) -> Self {
        TaskSpec {
            family: Family::Mastermind,
            input_dim: code_length,
            code_length,
            alphabet_size,
            ..Self::empty(Family::Mastermind)
        }
    }

    pub fn chebyshev(gen_degree: usize, basis_size: usize, noise_var: f64) -> Self {
        assert!(
            basis_size > gen_degree,
            "basis must cover the generating degree"
        );
        TaskSpec {
            family: Family::Chebyshev,
            input_dim: 1,
            noise_var,
            gen_degree,
            basis_size,
            ..Self::empty(Family::Chebyshev)
        }
    }

    pub fn hmm(n_obs: usize) -> Self {
        TaskSpec {
            family: Family::Hmm,
            alphabet_size: n_obs,
            ..Self::empty(Family::Hmm)
        }
    }

    pub fn hmm_supervised(n_obs: usize) -> Self {
        TaskSpec {
            family: Family::HmmSupervised,
            input_dim: 1,
            alphabet_size: n_obs,
            ..Self::empty(Family::HmmSupervised)
        }
    }

    fn empty(family: Family) -> Self {
        TaskSpec {
            family,
            input_dim: 0,
            noise_var: 0.0,
            sinusoid_terms: 0,
            shared_freqs: Vec::new(),
            code_length: 0,
            alphabet_size: 0,
            gen_degree: 0,
            basis_size: 0,
        }
    }

    /// Class count per output label position (empty for regression).
    pub fn label_classes(&self) -> Vec<usize> {
        match self.family {
            Family::Mastermind => vec![self.code_length + 1, self.code_length + 1],
            Family::Hmm | Family::HmmSupervised => vec![self.alphabet_size],
            _ => Vec::new(),
        }
    }
}

/// Per-task latent parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskParams {
    Linear { w: Vec<f64>, b: f64 },
    Sinusoid { amplitudes: Vec<f64> },
    Mastermind { code: Vec<u8> },
    Chebyshev { coeffs: Vec<f64> },
    Hmm { latent_index: usize },
}

/// One output: regression values or a tuple of class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Output {
    Reals(Vec<f64>),
    Labels(Vec<u32>),
}

impl Output {
    pub fn reals(&self) -> &[f64] {
        match self {
            Output::Reals(v) => v,
            Output::Labels(_) => panic!("expected real output"),
        }
    }
    pub fn labels(&self) -> &[u32] {
        match self {
            Output::Labels(v) => v,
            Output::Reals(_) => panic!("expected label output"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: Output,
}

/// Ordered dataset from a single task; the unit prequential coding runs over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub points: Vec<DataPoint>,
    pub params: TaskParams,
    pub spec: TaskSpec,
    pub seed: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// Episodes from distinct tasks of one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDataset {
    pub episodes: Vec<Episode>,
    pub spec: TaskSpec,
    pub split: Split,
}

// ---------------------------------------------------------------------------
// Task parameter sampling and evaluation
// ---------------------------------------------------------------------------

/// Draws `w` and `b` i.i.d. standard Normal.
pub fn sample_linear_task(spec: &TaskSpec, rng: &mut rng::Seeded) -> TaskParams {
    debug_assert_eq!(spec.family, Family::Linear);
    let w = (0..spec.input_dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let b = StandardNormal.sample(rng);
    TaskParams::Linear { w, b }
}

/// `y = w·x + b + noise`.
pub fn eval_linear(params: &TaskParams, x: &[f64], noise: f64) -> Result<f64> {
    let TaskParams::Linear { w, b } = params else {
        return Err(Error::InvalidArgument("expected linear params".into()));
    };
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
            context: "eval_linear",
        });
    }
    let dot: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
    Ok(dot + b + noise)
}

/// Frequencies ω ~ U(0, 5), fixed once per meta-dataset.
pub fn sample_shared_frequencies(terms: usize, rng: &mut rng::Seeded) -> Vec<f64> {
    (0..terms).map(|_| rng.gen_range(0.0..5.0)).collect()
}

/// Amplitudes α ~ N(0, 1).
pub fn sample_sinusoid_task(spec: &TaskSpec, rng: &mut rng::Seeded) -> TaskParams {
    debug_assert_eq!(spec.family, Family::Sinusoid);
    let amplitudes = (0..spec.sinusoid_terms)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    TaskParams::Sinusoid { amplitudes }
}

/// `y = Σ_l α_l · sin(ω_l · x)`.
pub fn eval_sinusoid(amplitudes: &[f64], freqs: &[f64], x: f64) -> Result<f64> {
    if amplitudes.len() != freqs.len() {
        return Err(Error::DimensionMismatch {
            expected: freqs.len(),
            got: amplitudes.len(),
            context: "eval_sinusoid",
        });
    }
    Ok(amplitudes
        .iter()
        .zip(freqs)
        .map(|(a, w)| a * (w * x).sin())
        .sum())
}

/// Uniformly random digit sequence over `[0, alphabet)`.
pub fn sample_mastermind_code(length: usize, alphabet: usize, rng: &mut rng::Seeded) -> Vec<u8> {
    assert!(length >= 1 && alphabet >= 1);
    (0..length)
        .map(|_| rng.gen_range(0..alphabet) as u8)
        .collect()
}

/// Feedback labels for a guess against a code.
///
/// The first count is exact positional matches. The second is
/// `Σ_digit min(count_code(d), count_guess(d))`: value matches regardless of
/// position, including the positional ones, so `second ≥ first` always.
pub fn mastermind_response(code: &[u8], guess: &[u8]) -> Result<(u8, u8)> {
    if code.len() != guess.len() {
        return Err(Error::DimensionMismatch {
            expected: code.len(),
            got: guess.len(),
            context: "mastermind_response",
        });
    }
    let exact = code
        .iter()
        .zip(guess)
        .filter(|(c, g)| c == g)
        .count() as u8;
    let max_digit = code.iter().chain(guess).copied().max().unwrap_or(0) as usize;
    let mut count_code = vec![0u8; max_digit + 1];
    let mut count_guess = vec![0u8; max_digit + 1];
    for &c in code {
        count_code[c as usize] += 1;
    }
    for &g in guess {
        count_guess[g as usize] += 1;
    }
    let value: u8 = count_code
        .iter()
        .zip(&count_guess)
        .map(|(a, b)| (*a).min(*b))
        .sum();
    Ok((exact, value))
}

/// Coefficients for degree-k tasks: entries `0..=k` are N(0, 1), the rest of
/// the basis is zero.
pub fn sample_chebyshev_task(spec: &TaskSpec, rng: &mut rng::Seeded) -> TaskParams {
    debug_assert_eq!(spec.family, Family::Chebyshev);
    let mut coeffs = vec![0.0; spec.basis_size];
    for c in coeffs.iter_mut().take(spec.gen_degree + 1) {
        *c = StandardNormal.sample(rng);
    }
    TaskParams::Chebyshev { coeffs }
}

/// Values of the Chebyshev basis `C_0(x)..C_{n-1}(x)` via the three-term
/// recurrence `C_{i+1} = 2x·C_i − C_{i−1}`.
pub fn chebyshev_basis(x: f64, n: usize) -> Vec<f64> {
    let mut basis = Vec::with_capacity(n);
    for i in 0..n {
        let v = match i {
            0 => 1.0,
            1 => x,
            _ => 2.0 * x * basis[i - 1] - basis[i - 2],
        };
        basis.push(v);
    }
    basis
}

/// `y = Σ_i α_i · C_i(x) + noise`, with `C_i` the Chebyshev polynomials of
/// the first kind starting at `C_0 = 1`.
pub fn eval_chebyshev(coeffs: &[f64], x: f64, noise: f64) -> f64 {
    let basis = chebyshev_basis(x, coeffs.len());
    coeffs.iter().zip(&basis).map(|(a, c)| a * c).sum::<f64>() + noise
}

/// Samples per-family task parameters.
pub fn sample_task(spec: &TaskSpec, rng: &mut rng::Seeded) -> TaskParams {
    match spec.family {
        Family::Linear => sample_linear_task(spec, rng),
        Family::Sinusoid => sample_sinusoid_task(spec, rng),
        Family::Mastermind => TaskParams::Mastermind {
            code: sample_mastermind_code(spec.code_length, spec.alphabet_size, rng),
        },
        Family::Chebyshev => sample_chebyshev_task(spec, rng),
        Family::Hmm | Family::HmmSupervised => {
            panic!("HMM episodes are assembled by the hmm module")
        }
    }
}

// ---------------------------------------------------------------------------
// Episode and meta-dataset assembly
// ---------------------------------------------------------------------------

/// Draws an ordered episode of `n` points from one task. Inputs follow the
/// family's input distribution (standard Normal per coordinate for linear and
/// sinusoid, U(−1, 1) for Chebyshev, uniform digit guesses for Mastermind);
/// noise is fresh per point.
pub fn make_episode(spec: &TaskSpec, params: &TaskParams, n: usize, seed: u64) -> Episode {
    assert!(n >= 1);
    let mut rng = seeded(derive_seed(seed, stream::EPISODE_POINTS, 0));
    let sigma = spec.noise_var.sqrt();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let point = match spec.family {
            Family::Linear => {
                let x: Vec<f64> = (0..spec.input_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let eps: f64 = StandardNormal.sample(&mut rng);
                let y = eval_linear(params, &x, sigma * eps).expect("dims agree");
                DataPoint {
                    x,
                    y: Output::Reals(vec![y]),
                }
            }
            Family::Sinusoid => {
                let x: f64 = StandardNormal.sample(&mut rng);
                let TaskParams::Sinusoid { amplitudes } = params else {
                    panic!("expected sinusoid params")
                };
                let eps: f64 = StandardNormal.sample(&mut rng);
                let y = eval_sinusoid(amplitudes, &spec.shared_freqs, x).expect("dims agree")
                    + sigma * eps;
                DataPoint {
                    x: vec![x],
                    y: Output::Reals(vec![y]),
                }
            }
            Family::Mastermind => {
                let guess = sample_mastermind_code(spec.code_length, spec.alphabet_size, &mut rng);
                let TaskParams::Mastermind { code } = params else {
                    panic!("expected mastermind params")
                };
                let (exact, value) = mastermind_response(code, &guess).expect("lengths agree");
                DataPoint {
                    x: guess.iter().map(|&d| d as f64).collect(),
                    y: Output::Labels(vec![exact as u32, value as u32]),
                }
            }
            Family::Chebyshev => {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let TaskParams::Chebyshev { coeffs } = params else {
                    panic!("expected chebyshev params")
                };
                let eps: f64 = StandardNormal.sample(&mut rng);
                let y = eval_chebyshev(coeffs, x, sigma * eps);
                DataPoint {
                    x: vec![x],
                    y: Output::Reals(vec![y]),
                }
            }
            Family::Hmm | Family::HmmSupervised => {
                panic!("HMM episodes are assembled by the hmm module")
            }
        };
        points.push(point);
    }
    Episode {
        points,
        params: params.clone(),
        spec: spec.clone(),
        seed,
    }
}

/// Assembles `m` episodes of `n` points with distinct task seeds. Sinusoid
/// frequencies are sampled once and stored in the returned spec.
pub fn make_meta_dataset(
    spec: &TaskSpec,
    m: usize,
    n: usize,
    base_seed: u64,
    split: Split,
) -> MetaDataset {
    assert!(m >= 1);
    let mut spec = spec.clone();
    if spec.family == Family::Sinusoid && spec.shared_freqs.is_empty() {
        let mut frng = seeded(derive_seed(base_seed, stream::SHARED_FREQS, 0));
        spec.shared_freqs = sample_shared_frequencies(spec.sinusoid_terms, &mut frng);
    }
    let task_stream = match split {
        Split::Train => stream::TRAIN_TASKS,
        Split::Eval => stream::EVAL_TASKS,
    };
    let episodes = (0..m)
        .map(|i| {
            let task_seed = derive_seed(base_seed, task_stream, i as u64);
            let mut prng = seeded(derive_seed(task_seed, stream::TASK_PARAMS, 0));
            let params = sample_task(&spec, &mut prng);
            make_episode(&spec, &params, n, task_seed)
        })
        .collect();
    MetaDataset {
        episodes,
        spec,
        split,
    }
}

/// Recasts an observation sequence as a supervised episode with the 1-based
/// time index as input: points `(1, o_1), (2, o_2), ...`.
pub fn hmm_to_supervised(sequence: &ObservationSequence) -> Episode {
    assert!(!sequence.tokens.is_empty());
    let points = sequence
        .tokens
        .iter()
        .enumerate()
        .map(|(i, &tok)| DataPoint {
            x: vec![(i + 1) as f64],
            y: Output::Labels(vec![tok]),
        })
        .collect();
    Episode {
        points,
        params: TaskParams::Hmm {
            latent_index: sequence.latent_index,
        },
        spec: TaskSpec::hmm_supervised(sequence.n_obs),
        seed: sequence.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn linear_task_shapes_and_determinism() {
        let spec = TaskSpec::linear(3, 0.04);
        let mut rng = seeded(9);
        let TaskParams::Linear { w, b } = sample_linear_task(&spec, &mut rng) else {
            panic!()
        };
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|v| v.is_finite()) && b.is_finite());

        let mut r1 = seeded(5);
        let mut r2 = seeded(5);
        assert_eq!(
            sample_linear_task(&spec, &mut r1),
            sample_linear_task(&spec, &mut r2)
        );
    }

    #[test]
    fn linear_task_moments_match_standard_normal() {
        let spec = TaskSpec::linear(3, 0.0);
        let mut rng = seeded(1);
        let mut samples = Vec::with_capacity(40_000);
        for _ in 0..10_000 {
            let TaskParams::Linear { w, b } = sample_linear_task(&spec, &mut rng) else {
                panic!()
            };
            samples.extend(w);
            samples.push(b);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn eval_linear_analytic_cases() {
        let zero = TaskParams::Linear {
            w: vec![0.0, 0.0],
            b: 0.0,
        };
        assert_eq!(eval_linear(&zero, &[3.0, -2.0], 0.0).unwrap(), 0.0);

        let p = TaskParams::Linear {
            w: vec![1.0, 0.0, 0.0],
            b: 2.0,
        };
        assert_eq!(eval_linear(&p, &[3.0, 5.0, 7.0], 0.0).unwrap(), 5.0);

        assert!(eval_linear(&p, &[1.0], 0.0).is_err());
    }

    #[test]
    fn eval_linear_matches_naive_dot_oracle() {
        let mut rng = seeded(3);
        for _ in 0..100 {
            let spec = TaskSpec::linear(7, 0.0);
            let p = sample_linear_task(&spec, &mut rng);
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let TaskParams::Linear { w, b } = &p else { panic!() };
            // independent naive loop
            let mut acc = *b;
            for i in 0..7 {
                acc += w[i] * x[i];
            }
            assert!((eval_linear(&p, &x, 0.0).unwrap() - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_frequencies_range_and_moment() {
        let mut rng = seeded(11);
        let f = sample_shared_frequencies(3, &mut rng);
        assert_eq!(f.len(), 3);
        assert!(f.iter().all(|&w| (0.0..5.0).contains(&w)));

        let mut rng = seeded(12);
        let big = sample_shared_frequencies(100_000, &mut rng);
        let mean = big.iter().sum::<f64>() / big.len() as f64;
        assert!((mean - 2.5).abs() < 0.05, "mean {mean}");

        let mut a = seeded(13);
        let mut b = seeded(13);
        assert_eq!(
            sample_shared_frequencies(5, &mut a),
            sample_shared_frequencies(5, &mut b)
        );
    }

    #[test]
    fn sinusoid_eval_cases_and_oracle() {
        assert_eq!(eval_sinusoid(&[0.0, 0.0], &[1.0, 2.0], 0.7).unwrap(), 0.0);
        assert_eq!(eval_sinusoid(&[1.0], &[2.0], 0.0).unwrap(), 0.0);
        assert!(eval_sinusoid(&[1.0], &[2.0, 3.0], 0.0).is_err());

        let mut rng = seeded(21);
        for _ in 0..100 {
            let alpha: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let freqs: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..5.0)).collect();
            let x = rng.gen_range(-3.0..3.0);
            let mut oracle = 0.0;
            for l in 0..4 {
                oracle += alpha[l] * f64::sin(freqs[l] * x);
            }
            assert!((eval_sinusoid(&alpha, &freqs, x).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn mastermind_worked_demo() {
        let code = [0u8, 5, 2, 1, 3, 4, 2, 4];
        let guess = [0u8, 2, 1, 1, 0, 2, 0, 4];
        assert_eq!(mastermind_response(&code, &guess).unwrap(), (3, 5));
    }

    #[test]
    fn mastermind_identity_and_errors() {
        let code = [0u8, 1, 2, 3, 4, 5, 0, 1];
        assert_eq!(mastermind_response(&code, &code).unwrap(), (8, 8));
        assert!(mastermind_response(&code, &code[..4]).is_err());
    }

    /// Mark-and-sweep oracle: count exact matches, strike them out, then for
    /// each remaining guess digit consume one matching unstruck code digit.
    fn response_oracle(code: &[u8], guess: &[u8]) -> (u8, u8) {
        let mut used = vec![false; code.len()];
        let mut exact = 0u8;
        for i in 0..code.len() {
            if code[i] == guess[i] {
                exact += 1;
                used[i] = true;
            }
        }
        let mut displaced = 0u8;
        for i in 0..guess.len() {
            if code[i] == guess[i] {
                continue;
            }
            for j in 0..code.len() {
                if !used[j] && code[j] != guess[j] && code[j] == guess[i] {
                    used[j] = true;
                    displaced += 1;
                    break;
                }
            }
        }
        (exact, exact + displaced)
    }

    #[test]
    fn mastermind_matches_brute_force_oracle() {
        let mut rng = seeded(33);
        for _ in 0..10_000 {
            let code = sample_mastermind_code(8, 6, &mut rng);
            let guess = sample_mastermind_code(8, 6, &mut rng);
            assert_eq!(
                mastermind_response(&code, &guess).unwrap(),
                response_oracle(&code, &guess)
            );
        }
    }

    #[test]
    fn mastermind_code_sampling() {
        let mut rng = seeded(8);
        let code = sample_mastermind_code(8, 6, &mut rng);
        assert_eq!(code.len(), 8);
        assert!(code.iter().all(|&d| d < 6));
        let ones = sample_mastermind_code(5, 1, &mut rng);
        assert_eq!(ones, vec![0, 0, 0, 0, 0]);
        let mut a = seeded(77);
        let mut b = seeded(77);
        assert_eq!(
            sample_mastermind_code(8, 6, &mut a),
            sample_mastermind_code(8, 6, &mut b)
        );
    }

    proptest! {
        #[test]
        fn mastermind_symmetry_and_bounds(
            code in proptest::collection::vec(0u8..6, 8),
            guess in proptest::collection::vec(0u8..6, 8),
        ) {
            let (f1, s1) = mastermind_response(&code, &guess).unwrap();
            let (f2, s2) = mastermind_response(&guess, &code).unwrap();
            prop_assert_eq!(f1, f2);
            prop_assert_eq!(s1, s2);
            prop_assert!(f1 <= s1);
            prop_assert!(s1 as usize <= code.len());
        }
    }

    #[test]
    fn chebyshev_basis_identities() {
        assert!((eval_chebyshev(&[0.0, 1.0, 0.0, 0.0], 0.37, 0.0) - 0.37).abs() < 1e-15);
        assert!((eval_chebyshev(&[0.0, 0.0, 1.0], 0.5, 0.0) - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn chebyshev_matches_trigonometric_oracle() {
        let mut rng = seeded(55);
        for _ in 0..200 {
            let coeffs: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x = rng.gen_range(-1.0..1.0);
            // C_n(cos θ) = cos(n θ)
            let theta = f64::acos(x);
            let oracle: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(n, a)| a * f64::cos(n as f64 * theta))
                .sum();
            assert!((eval_chebyshev(&coeffs, x, 0.0) - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn episode_shapes_and_determinism() {
        let spec = TaskSpec::linear(3, 0.0);
        let mut rng = seeded(2);
        let params = sample_linear_task(&spec, &mut rng);
        let ep = make_episode(&spec, &params, 1000, 42);
        assert_eq!(ep.len(), 1000);
        assert!(ep.points.iter().all(|p| p.x.len() == 3));
        let ep2 = make_episode(&spec, &params, 1000, 42);
        assert_eq!(ep, ep2);
    }

    #[test]
    fn episode_residual_variance_matches_noise() {
        let spec = TaskSpec::linear(3, 0.04);
        let mut rng = seeded(4);
        let params = sample_linear_task(&spec, &mut rng);
        let ep = make_episode(&spec, &params, 10_000, 7);
        let residuals: Vec<f64> = ep
            .points
            .iter()
            .map(|p| p.y.reals()[0] - eval_linear(&params, &p.x, 0.0).unwrap())
            .collect();
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / residuals.len() as f64;
        assert!(
            (var - 0.04).abs() < 0.2 * 0.04,
            "residual variance {var} not within 20% of 0.04"
        );
    }

    #[test]
    fn meta_dataset_scales_and_disjoint_splits() {
        let spec = TaskSpec::sinusoid(3, 0.0);
        let train = make_meta_dataset(&spec, 200, 16, 99, Split::Train);
        let eval = make_meta_dataset(&spec, 100, 16, 99, Split::Eval);
        assert_eq!(train.episodes.len(), 200);
        assert_eq!(eval.episodes.len(), 100);

        let train_seeds: std::collections::HashSet<u64> =
            train.episodes.iter().map(|e| e.seed).collect();
        assert_eq!(train_seeds.len(), 200, "train task seeds must be distinct");
        assert!(
            eval.episodes.iter().all(|e| !train_seeds.contains(&e.seed)),
            "train/eval task seeds must be disjoint"
        );

        // shared-ω invariant: one frequency vector across the meta-dataset
        assert_eq!(train.spec.shared_freqs.len(), 3);
        for ep in &train.episodes {
            assert_eq!(ep.spec.shared_freqs, train.spec.shared_freqs);
        }
        // and identical for the paired eval split generated from the same seed
        assert_eq!(train.spec.shared_freqs, eval.spec.shared_freqs);
    }

    #[test]
    fn meta_dataset_regeneration_is_identical() {
        let spec = TaskSpec::mastermind(8, 6);
        let a = make_meta_dataset(&spec, 20, 10, 5, Split::Train);
        let b = make_meta_dataset(&spec, 20, 10, 5, Split::Train);
        assert_eq!(a, b);
    }

    #[test]
    fn hmm_to_supervised_definitional() {
        let seq = ObservationSequence {
            tokens: vec![4, 7, 1],
            latent_index: 3,
            n_obs: 50,
            seed: 10,
        };
        let ep = hmm_to_supervised(&seq);
        assert_eq!(ep.len(), 3);
        assert_eq!(ep.points[0].x, vec![1.0]);
        assert_eq!(ep.points[1].x, vec![2.0]);
        assert_eq!(ep.points[2].x, vec![3.0]);
        let back: Vec<u32> = ep.points.iter().map(|p| p.y.labels()[0]).collect();
        assert_eq!(back, seq.tokens);
        assert_eq!(ep.spec.family, Family::HmmSupervised);
    }
}
