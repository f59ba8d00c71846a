//! Structured family of hidden Markov models.
//!
//! Transition matrices are assembled from a bank of pre-generated cycles
//! (base cycles over all states plus families of shorter cycles), manipulated
//! by direction flips and traversal speed-ups selected by a discrete latent.
//! Emission matrices are assembled from banks of sub-matrices over state
//! groups with a circular column shift. Enumerating the latent space yields
//! the full family; sequences are sampled per latent.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, seeded, stream};
use crate::tasks::{DataPoint, Episode, MetaDataset, Output, Split, TaskParams, TaskSpec};

/// Family hyper-parameters: bank sizes and state/observation space sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HmmHyper {
    pub n_base_cycles: usize,
    pub n_base_speeds: usize,
    pub n_cycle_families: usize,
    pub n_group_per_family: usize,
    pub n_family_speeds: usize,
    pub n_emission_groups: usize,
    pub n_emission_per_group: usize,
    pub n_emission_shift: usize,
    pub n_states: usize,
    pub n_obs: usize,
    /// Family cycles span random state subsets within this size range.
    pub family_cycle_len: (usize, usize),
    /// Cycles per family group.
    pub cycles_per_group: usize,
}

impl Default for HmmHyper {
    /// Reference configuration: 512 transition latents × 24 emission latents.
    fn default() -> Self {
        HmmHyper {
            n_base_cycles: 4,
            n_base_speeds: 2,
            n_cycle_families: 3,
            n_group_per_family: 2,
            n_family_speeds: 2,
            n_emission_groups: 3,
            n_emission_per_group: 2,
            n_emission_shift: 3,
            n_states: 20,
            n_obs: 50,
            family_cycle_len: (3, 6),
            cycles_per_group: 2,
        }
    }
}

impl HmmHyper {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.n_base_cycles,
            self.n_base_speeds,
            self.n_cycle_families,
            self.n_group_per_family,
            self.n_family_speeds,
            self.n_emission_groups,
            self.n_emission_per_group,
            self.n_emission_shift,
            self.n_states,
            self.n_obs,
            self.cycles_per_group,
        ];
        if all.iter().any(|&v| v == 0) {
            return Err(Error::InvalidArgument(
                "all HMM hyper-parameters must be ≥ 1".into(),
            ));
        }
        if self.n_states < self.n_emission_groups {
            return Err(Error::InvalidArgument(
                "need at least one state per emission group".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form count of distinct transition latents:
    /// base choice × base direction × base speed × group selection per family
    /// × family direction × family speed.
    pub fn transition_latent_count(&self) -> usize {
        self.n_base_cycles
            * 2
            * self.n_base_speeds
            * self.n_group_per_family.pow(self.n_cycle_families as u32)
            * 2
            * self.n_family_speeds
    }

    /// Closed-form count of distinct emission latents.
    pub fn emission_latent_count(&self) -> usize {
        self.n_emission_per_group.pow(self.n_emission_groups as u32) * self.n_emission_shift
    }
}

/// Discrete latent selecting and manipulating building blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HmmLatent {
    pub base_id: usize,
    pub base_dir: u8,
    /// Speed index; traversal step is `index + 1`.
    pub base_speed: usize,
    pub family_group_ids: Vec<usize>,
    pub family_dir: u8,
    pub family_speed: usize,
    pub emission_ids: Vec<usize>,
    pub emission_shift: usize,
}

/// Pre-generated cycles shared by every HMM in a family instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBank {
    /// Permutation cycles visiting every state exactly once.
    pub base_cycles: Vec<Vec<usize>>,
    /// `[family][group]` → cycles over small state subsets.
    pub family_groups: Vec<Vec<Vec<Vec<usize>>>>,
}

/// Pre-generated sub-emission matrices over a contiguous state partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionBank {
    /// Contiguous, balanced state groups partitioning all states.
    pub state_groups: Vec<Vec<usize>>,
    /// `[group][choice]` → nonnegative matrix of shape `|group| × n_obs`.
    pub sub_matrices: Vec<Vec<Array2<f64>>>,
}

/// A concrete HMM: uniform initial distribution, row-stochastic transition
/// matrix `a` (`a[[i, j]]` = P(z'=j | z=i)) and emission matrix `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    pub pi: Vec<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

/// A sampled token sequence with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub tokens: Vec<u32>,
    pub latent_index: usize,
    pub n_obs: usize,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Cycle manipulations
// ---------------------------------------------------------------------------

/// `k = 1` reverses traversal direction keeping the anchor: `(c₀, c_{n−1}, ..., c₁)`.
pub fn cycle_dir(c: &[usize], k: u8) -> Vec<usize> {
    assert!(!c.is_empty());
    if k == 1 {
        let mut out = Vec::with_capacity(c.len());
        out.push(c[0]);
        out.extend(c[1..].iter().rev());
        out
    } else {
        c.to_vec()
    }
}

/// Traverses the cycle with stride `k`: `(c₀, c_{k mod n}, c_{2k mod n}, ...)`,
/// stopping at the first return to index 0.
pub fn cycle_speed(c: &[usize], k: usize) -> Vec<usize> {
    assert!(k >= 1);
    let n = c.len();
    let mut out = Vec::new();
    let mut idx = 0usize;
    loop {
        out.push(c[idx]);
        idx = (idx + k) % n;
        if idx == 0 {
            break;
        }
    }
    out
}

/// Binary matrix with a 1 at every consecutive pair `(c_k, c_{k+1 mod n})`.
pub fn cycle_transition_matrix(c: &[usize], n_states: usize) -> Result<Array2<f64>> {
    let mut seen = vec![false; n_states];
    for &s in c {
        if s >= n_states {
            return Err(Error::SymbolOutOfRange {
                symbol: s,
                table: n_states,
            });
        }
        if seen[s] {
            return Err(Error::RepeatedCycleState { state: s });
        }
        seen[s] = true;
    }
    let mut m = Array2::zeros((n_states, n_states));
    let n = c.len();
    for k in 0..n {
        m[[c[k], c[(k + 1) % n]]] = 1.0;
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Banks
// ---------------------------------------------------------------------------

/// Base cycles are uniformly random full-state permutations; family cycles
/// are random cycles over random small state subsets.
pub fn build_cycle_bank(hyper: &HmmHyper, rng: &mut rng::Seeded) -> CycleBank {
    let base_cycles = (0..hyper.n_base_cycles)
        .map(|_| {
            let mut perm: Vec<usize> = (0..hyper.n_states).collect();
            perm.shuffle(rng);
            perm
        })
        .collect();
    let (lo, hi) = hyper.family_cycle_len;
    let hi = hi.min(hyper.n_states);
    let lo = lo.min(hi).max(1);
    let family_groups = (0..hyper.n_cycle_families)
        .map(|_| {
            (0..hyper.n_group_per_family)
                .map(|_| {
                    (0..hyper.cycles_per_group)
                        .map(|_| {
                            let len = rng.gen_range(lo..=hi);
                            let mut states: Vec<usize> = (0..hyper.n_states).collect();
                            states.shuffle(rng);
                            states.truncate(len);
                            states
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    CycleBank {
        base_cycles,
        family_groups,
    }
}

/// States split into contiguous near-equal groups; sub-matrix entries U(0, 1).
pub fn build_emission_bank(hyper: &HmmHyper, rng: &mut rng::Seeded) -> EmissionBank {
    let g = hyper.n_emission_groups;
    let base = hyper.n_states / g;
    let extra = hyper.n_states % g;
    let mut state_groups = Vec::with_capacity(g);
    let mut next = 0usize;
    for i in 0..g {
        let size = base + usize::from(i < extra);
        state_groups.push((next..next + size).collect::<Vec<_>>());
        next += size;
    }
    let sub_matrices = state_groups
        .iter()
        .map(|group| {
            (0..hyper.n_emission_per_group)
                .map(|_| {
                    Array2::from_shape_fn((group.len(), hyper.n_obs), |_| rng.gen_range(0.0..1.0))
                })
                .collect()
        })
        .collect();
    EmissionBank {
        state_groups,
        sub_matrices,
    }
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

fn normalize_rows_with_self_loops(mut m: Array2<f64>) -> Array2<f64> {
    for i in 0..m.nrows() {
        let sum: f64 = m.row(i).sum();
        if sum <= 0.0 {
            m[[i, i]] = 1.0;
        } else {
            let mut row = m.row_mut(i);
            row.mapv_inplace(|v| v / sum);
        }
    }
    m
}

/// Builds the transition matrix selected by `latent`: the manipulated base
/// cycle plus every cycle of the selected group in each family, summed, with
/// self-loops on rows the cycles leave empty, then row-normalized.
pub fn assemble_transition(bank: &CycleBank, latent: &HmmLatent, hyper: &HmmHyper) -> Array2<f64> {
    let base = cycle_speed(
        &cycle_dir(&bank.base_cycles[latent.base_id], latent.base_dir),
        latent.base_speed + 1,
    );
    let mut sum = cycle_transition_matrix(&base, hyper.n_states).expect("bank cycles are simple");
    for (family, &group_id) in latent.family_group_ids.iter().enumerate() {
        for cycle in &bank.family_groups[family][group_id] {
            let manipulated = cycle_speed(
                &cycle_dir(cycle, latent.family_dir),
                latent.family_speed + 1,
            );
            sum = sum
                + cycle_transition_matrix(&manipulated, hyper.n_states)
                    .expect("bank cycles are simple");
        }
    }
    normalize_rows_with_self_loops(sum)
}

/// Circularly shifts the observation (column) axis by `k`.
pub fn emission_shift(h: &Array2<f64>, k: usize) -> Array2<f64> {
    let (r, c) = h.dim();
    let mut out = Array2::zeros((r, c));
    for j in 0..c {
        let dst = (j + k) % c;
        for i in 0..r {
            out[[i, dst]] = h[[i, j]];
        }
    }
    out
}

/// Builds the emission matrix: each state group's rows come from its selected
/// sub-matrix under the latent's circular shift, row-normalized.
pub fn assemble_emission(bank: &EmissionBank, latent: &HmmLatent, hyper: &HmmHyper) -> Array2<f64> {
    let mut b = Array2::zeros((hyper.n_states, hyper.n_obs));
    for (gi, group) in bank.state_groups.iter().enumerate() {
        let sub = emission_shift(
            &bank.sub_matrices[gi][latent.emission_ids[gi]],
            latent.emission_shift,
        );
        for (local, &state) in group.iter().enumerate() {
            b.row_mut(state).assign(&sub.row(local));
        }
    }
    normalize_rows_with_self_loops(b)
}

/// Full Cartesian enumeration of the latent space, deterministic order.
pub fn enumerate_latents(hyper: &HmmHyper) -> Vec<HmmLatent> {
    fn mixed_radix(count: usize, radix: usize, digits: usize) -> Vec<usize> {
        let mut out = vec![0; digits];
        let mut rem = count;
        for d in (0..digits).rev() {
            out[d] = rem % radix;
            rem /= radix;
        }
        out
    }
    let n_group_combos = hyper.n_group_per_family.pow(hyper.n_cycle_families as u32);
    let n_emission_combos = hyper.n_emission_per_group.pow(hyper.n_emission_groups as u32);
    let mut out = Vec::with_capacity(
        hyper.transition_latent_count() * hyper.emission_latent_count(),
    );
    for base_id in 0..hyper.n_base_cycles {
        for base_dir in 0..2u8 {
            for base_speed in 0..hyper.n_base_speeds {
                for group_combo in 0..n_group_combos {
                    let family_group_ids = mixed_radix(
                        group_combo,
                        hyper.n_group_per_family,
                        hyper.n_cycle_families,
                    );
                    for family_dir in 0..2u8 {
                        for family_speed in 0..hyper.n_family_speeds {
                            for emission_combo in 0..n_emission_combos {
                                let emission_ids = mixed_radix(
                                    emission_combo,
                                    hyper.n_emission_per_group,
                                    hyper.n_emission_groups,
                                );
                                for shift in 0..hyper.n_emission_shift {
                                    out.push(HmmLatent {
                                        base_id,
                                        base_dir,
                                        base_speed,
                                        family_group_ids: family_group_ids.clone(),
                                        family_dir,
                                        family_speed,
                                        emission_ids: emission_ids.clone(),
                                        emission_shift: shift,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn sample_categorical(probs: ndarray::ArrayView1<f64>, rng: &mut rng::Seeded) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples `z₁ ~ π`, then `x_t ~ B[z_t]`, `z_{t+1} ~ A[z_t]`.
pub fn sample_sequence(hmm: &Hmm, length: usize, rng: &mut rng::Seeded) -> Vec<u32> {
    assert!(length >= 1);
    let mut z = sample_categorical(ndarray::ArrayView1::from(&hmm.pi[..]), rng);
    let mut tokens = Vec::with_capacity(length);
    for _ in 0..length {
        tokens.push(sample_categorical(hmm.b.row(z), rng) as u32);
        z = sample_categorical(hmm.a.row(z), rng);
    }
    tokens
}

// ---------------------------------------------------------------------------
// Family: banks + latent enumeration + dataset assembly
// ---------------------------------------------------------------------------

/// A full family instance: banks fixed by seed, latents enumerated.
#[derive(Debug, Clone)]
pub struct HmmFamily {
    pub hyper: HmmHyper,
    pub cycle_bank: CycleBank,
    pub emission_bank: EmissionBank,
    pub latents: Vec<HmmLatent>,
    pub seed: u64,
}

impl HmmFamily {
    pub fn new(hyper: HmmHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = seeded(derive_seed(seed, stream::HMM_BANK, 0));
        let cycle_bank = build_cycle_bank(&hyper, &mut rng);
        let emission_bank = build_emission_bank(&hyper, &mut rng);
        let latents = enumerate_latents(&hyper);
        Ok(HmmFamily {
            hyper,
            cycle_bank,
            emission_bank,
            latents,
            seed,
        })
    }

    /// The HMM selected by enumeration position.
    pub fn hmm(&self, latent_index: usize) -> Hmm {
        let latent = &self.latents[latent_index];
        let a = assemble_transition(&self.cycle_bank, latent, &self.hyper);
        let b = assemble_emission(&self.emission_bank, latent, &self.hyper);
        let pi = vec![1.0 / self.hyper.n_states as f64; self.hyper.n_states];
        Hmm { pi, a, b }
    }

    /// Disjoint train/eval split of latent indices (shuffled by seed).
    pub fn split_latents(&self, eval_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut indices: Vec<usize> = (0..self.latents.len()).collect();
        let mut rng = seeded(derive_seed(seed, stream::HMM_SPLIT, 0));
        indices.shuffle(&mut rng);
        let n_eval = ((self.latents.len() as f64) * eval_fraction).round() as usize;
        let n_eval = n_eval.clamp(1, self.latents.len().saturating_sub(1).max(1));
        let eval = indices.split_off(indices.len() - n_eval);
        (indices, eval)
    }

    /// Samples one annotated sequence from the indexed latent.
    pub fn sequence(&self, latent_index: usize, length: usize, seed: u64) -> ObservationSequence {
        let hmm = self.hmm(latent_index);
        let mut rng = seeded(derive_seed(seed, stream::HMM_SEQUENCE, 0));
        ObservationSequence {
            tokens: sample_sequence(&hmm, length, &mut rng),
            latent_index,
            n_obs: self.hyper.n_obs,
            seed,
        }
    }

    /// Builds a meta-dataset of `m` trajectories of length `n`, cycling over
    /// the given latent pool. `supervised` recasts sequences as indexed
    /// supervised episodes.
    pub fn make_meta_dataset(
        &self,
        latent_pool: &[usize],
        m: usize,
        n: usize,
        base_seed: u64,
        split: Split,
        supervised: bool,
    ) -> MetaDataset {
        assert!(!latent_pool.is_empty());
        let task_stream = match split {
            Split::Train => stream::TRAIN_TASKS,
            Split::Eval => stream::EVAL_TASKS,
        };
        let spec = if supervised {
            TaskSpec::hmm_supervised(self.hyper.n_obs)
        } else {
            TaskSpec::hmm(self.hyper.n_obs)
        };
        let episodes = (0..m)
            .map(|i| {
                let latent_index = latent_pool[i % latent_pool.len()];
                let seq_seed = derive_seed(base_seed, task_stream, i as u64);
                let seq = self.sequence(latent_index, n, seq_seed);
                if supervised {
                    crate::tasks::hmm_to_supervised(&seq)
                } else {
                    Episode {
                        points: seq
                            .tokens
                            .iter()
                            .map(|&tok| DataPoint {
                                x: Vec::new(),
                                y: Output::Labels(vec![tok]),
                            })
                            .collect(),
                        params: TaskParams::Hmm { latent_index },
                        spec: spec.clone(),
                        seed: seq_seed,
                    }
                }
            })
            .collect();
        MetaDataset {
            episodes,
            spec,
            split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hyper() -> HmmHyper {
        HmmHyper {
            n_base_cycles: 2,
            n_base_speeds: 1,
            n_cycle_families: 2,
            n_group_per_family: 2,
            n_family_speeds: 1,
            n_emission_groups: 2,
            n_emission_per_group: 2,
            n_emission_shift: 2,
            n_states: 6,
            n_obs: 5,
            family_cycle_len: (2, 3),
            cycles_per_group: 2,
        }
    }

    #[test]
    fn base_cycles_are_full_permutations() {
        let hyper = HmmHyper::default();
        let mut rng = seeded(1);
        let bank = build_cycle_bank(&hyper, &mut rng);
        assert_eq!(bank.base_cycles.len(), 4);
        for c in &bank.base_cycles {
            assert_eq!(c.len(), 20);
            let mut sorted = c.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        }
        let mut rng2 = seeded(1);
        assert_eq!(bank, build_cycle_bank(&hyper, &mut rng2));
    }

    #[test]
    fn dir_cases() {
        assert_eq!(cycle_dir(&[0, 1, 2, 3], 1), vec![0, 3, 2, 1]);
        assert_eq!(cycle_dir(&[0, 1, 2, 3], 0), vec![0, 1, 2, 3]);
        let c = vec![5, 2, 9, 1];
        assert_eq!(cycle_dir(&cycle_dir(&c, 1), 1), c);
    }

    #[test]
    fn speed_cases() {
        assert_eq!(cycle_speed(&[0, 1, 2, 3, 4, 5], 2), vec![0, 2, 4]);
        let c = vec![3, 1, 4, 1]; // values arbitrary, indices matter
        assert_eq!(cycle_speed(&c, 1), c);
        // coprime stride keeps the full length as a reordering
        for n in 2..10usize {
            let c: Vec<usize> = (0..n).collect();
            for k in 1..n {
                if num_integer_gcd(k, n) == 1 {
                    let s = cycle_speed(&c, k);
                    assert_eq!(s.len(), n);
                    let mut sorted = s.clone();
                    sorted.sort_unstable();
                    assert_eq!(sorted, c);
                } else {
                    assert_eq!(cycle_speed(&c, k).len(), n / num_integer_gcd(k, n));
                }
            }
        }
    }

    fn num_integer_gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            num_integer_gcd(b, a % b)
        }
    }

    #[test]
    fn transition_matrix_cases() {
        let m = cycle_transition_matrix(&[0, 1], 3).unwrap();
        assert_eq!(m[[0, 1]], 1.0);
        assert_eq!(m[[1, 0]], 1.0);
        assert_eq!(m.sum(), 2.0);

        let m = cycle_transition_matrix(&[2], 3).unwrap();
        assert_eq!(m[[2, 2]], 1.0);
        assert_eq!(m.sum(), 1.0);

        assert!(cycle_transition_matrix(&[0, 1, 0], 3).is_err());

        let mut rng = seeded(3);
        let mut perm: Vec<usize> = (0..12).collect();
        perm.shuffle(&mut rng);
        let m = cycle_transition_matrix(&perm, 12).unwrap();
        for i in 0..12 {
            assert_eq!(m.row(i).sum(), 1.0, "row {i} of a permutation matrix");
            assert_eq!(m.column(i).sum(), 1.0);
        }
    }

    fn assert_row_stochastic(m: &Array2<f64>) {
        for i in 0..m.nrows() {
            let s: f64 = m.row(i).sum();
            assert!((s - 1.0).abs() < 1e-9, "row {i} sums to {s}");
            assert!(m.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn assembled_matrices_are_row_stochastic() {
        let hyper = HmmHyper::default();
        let family = HmmFamily::new(hyper, 7).unwrap();
        for idx in (0..family.latents.len()).step_by(997) {
            let hmm = family.hmm(idx);
            assert_row_stochastic(&hmm.a);
            assert_row_stochastic(&hmm.b);
            assert!(hmm.pi.iter().all(|&p| (p - 1.0 / 20.0).abs() < 1e-12));
        }
    }

    #[test]
    fn base_cycle_alone_gives_permutation_structure() {
        // a hand-built bank with empty-ish families: single-state cycles that
        // only add self-loops outside the base path
        let hyper = HmmHyper {
            n_base_cycles: 1,
            n_cycle_families: 1,
            n_group_per_family: 1,
            ..tiny_hyper()
        };
        let bank = CycleBank {
            base_cycles: vec![vec![0, 1, 2, 3, 4, 5]],
            family_groups: vec![vec![vec![vec![0]]]],
        };
        let latent = HmmLatent {
            base_id: 0,
            base_dir: 0,
            base_speed: 0,
            family_group_ids: vec![0],
            family_dir: 0,
            family_speed: 0,
            emission_ids: vec![0, 0],
            emission_shift: 0,
        };
        let a = assemble_transition(&bank, &latent, &hyper);
        // row 0 splits between the base edge 0→1 and the family self-loop 0→0
        assert_eq!(a[[0, 1]], 0.5);
        assert_eq!(a[[0, 0]], 0.5);
        // all other rows follow the base cycle exactly
        for i in 1..6 {
            assert_eq!(a[[i, (i + 1) % 6]], 1.0);
        }
    }

    #[test]
    fn base_dir_changes_transition_for_non_palindromic_cycle() {
        let hyper = tiny_hyper();
        let mut rng = seeded(9);
        let bank = build_cycle_bank(&hyper, &mut rng);
        let latents = enumerate_latents(&hyper);
        let l0 = latents
            .iter()
            .find(|l| l.base_dir == 0 && l.base_speed == 0)
            .unwrap();
        let mut l1 = l0.clone();
        l1.base_dir = 1;
        let a0 = assemble_transition(&bank, l0, &hyper);
        let a1 = assemble_transition(&bank, &l1, &hyper);
        assert_ne!(a0, a1);
    }

    #[test]
    fn emission_bank_partition_and_shapes() {
        let hyper = HmmHyper::default();
        let mut rng = seeded(2);
        let bank = build_emission_bank(&hyper, &mut rng);
        let sizes: Vec<usize> = bank.state_groups.iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![7, 7, 6]);
        for (gi, group) in bank.state_groups.iter().enumerate() {
            for sub in &bank.sub_matrices[gi] {
                assert_eq!(sub.dim(), (group.len(), 50));
            }
        }
        let mut rng2 = seeded(2);
        assert_eq!(bank, build_emission_bank(&hyper, &mut rng2));
    }

    #[test]
    fn emission_shift_properties() {
        let mut rng = seeded(5);
        let h = Array2::from_shape_fn((4, 7), |_| rng.gen_range(0.0..1.0));
        assert_eq!(emission_shift(&h, 0), h);
        assert_eq!(emission_shift(&h, 7), h);
        for _ in 0..20 {
            let a = rng.gen_range(0..15usize);
            let b = rng.gen_range(0..15usize);
            assert_eq!(
                emission_shift(&emission_shift(&h, a), b),
                emission_shift(&h, (a + b) % 7)
            );
        }
    }

    #[test]
    fn emission_assembly_localized_to_groups() {
        let hyper = tiny_hyper();
        let mut rng = seeded(6);
        let bank = build_emission_bank(&hyper, &mut rng);
        let base = HmmLatent {
            base_id: 0,
            base_dir: 0,
            base_speed: 0,
            family_group_ids: vec![0, 0],
            family_dir: 0,
            family_speed: 0,
            emission_ids: vec![0, 0],
            emission_shift: 1,
        };
        let b0 = assemble_emission(&bank, &base, &hyper);
        assert_row_stochastic(&b0);
        let mut same = base.clone();
        same.emission_ids = vec![0, 0];
        assert_eq!(b0, assemble_emission(&bank, &same, &hyper));

        let mut changed = base.clone();
        changed.emission_ids = vec![0, 1];
        let b1 = assemble_emission(&bank, &changed, &hyper);
        for &state in &bank.state_groups[0] {
            assert_eq!(b0.row(state), b1.row(state), "group 0 rows unchanged");
        }
        let group1_differs = bank.state_groups[1]
            .iter()
            .any(|&s| b0.row(s) != b1.row(s));
        assert!(group1_differs, "group 1 rows must change");
    }

    #[test]
    fn enumeration_counts() {
        let hyper = HmmHyper::default();
        assert_eq!(hyper.transition_latent_count(), 512);
        assert_eq!(hyper.emission_latent_count(), 24);
        let latents = enumerate_latents(&hyper);
        assert_eq!(latents.len(), 512 * 24);

        let ones = HmmHyper {
            n_base_cycles: 1,
            n_base_speeds: 1,
            n_cycle_families: 1,
            n_group_per_family: 1,
            n_family_speeds: 1,
            n_emission_groups: 1,
            n_emission_per_group: 1,
            n_emission_shift: 1,
            n_states: 3,
            n_obs: 3,
            family_cycle_len: (2, 2),
            cycles_per_group: 1,
        };
        // direction flags still contribute a factor of 4
        assert_eq!(enumerate_latents(&ones).len(), 4);
    }

    #[test]
    fn enumeration_matches_closed_form_and_has_no_duplicates() {
        for (h, _) in [(tiny_hyper(), 0)] {
            let latents = enumerate_latents(&h);
            assert_eq!(
                latents.len(),
                h.transition_latent_count() * h.emission_latent_count()
            );
            let mut seen = std::collections::HashSet::new();
            for l in &latents {
                assert!(seen.insert(format!("{l:?}")), "duplicate latent");
            }
        }
    }

    #[test]
    fn sequence_sampling_deterministic_hmm() {
        // one-hot rows: state i emits token i and moves to i+1
        let n = 4;
        let mut a = Array2::zeros((n, n));
        let mut b = Array2::zeros((n, n));
        for i in 0..n {
            a[[i, (i + 1) % n]] = 1.0;
            b[[i, i]] = 1.0;
        }
        let hmm = Hmm {
            pi: vec![0.25; 4],
            a,
            b,
        };
        let mut rng = seeded(11);
        let tokens = sample_sequence(&hmm, 12, &mut rng);
        // fully determined by z₁ = first token
        let z1 = tokens[0] as usize;
        for (t, &tok) in tokens.iter().enumerate() {
            assert_eq!(tok as usize, (z1 + t) % n);
        }
        let mut rng2 = seeded(11);
        assert_eq!(tokens, sample_sequence(&hmm, 12, &mut rng2));
    }

    #[test]
    fn sequence_transition_frequencies_match_matrix() {
        // identity emissions make states observable
        let n = 5;
        let mut rng = seeded(17);
        let mut a = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.05..1.0));
        a = normalize_rows_with_self_loops(a);
        let b = Array2::from_shape_fn((n, n), |(i, j)| f64::from(i == j));
        let hmm = Hmm {
            pi: vec![1.0 / n as f64; n],
            a: a.clone(),
            b,
        };
        let tokens = sample_sequence(&hmm, 100_000, &mut rng);
        let mut counts = Array2::<f64>::zeros((n, n));
        for w in tokens.windows(2) {
            counts[[w[0] as usize, w[1] as usize]] += 1.0;
        }
        for i in 0..n {
            let total: f64 = counts.row(i).sum();
            for j in 0..n {
                let freq = counts[[i, j]] / total;
                assert!(
                    (freq - a[[i, j]]).abs() < 0.02,
                    "empirical {freq} vs {} at ({i},{j})",
                    a[[i, j]]
                );
            }
        }
    }

    #[test]
    fn latent_split_disjoint_and_datasets_deterministic() {
        let family = HmmFamily::new(tiny_hyper(), 23).unwrap();
        let (train, eval) = family.split_latents(0.25, 23);
        assert!(!train.is_empty() && !eval.is_empty());
        let t: std::collections::HashSet<_> = train.iter().collect();
        assert!(eval.iter().all(|i| !t.contains(i)));
        assert_eq!(train.len() + eval.len(), family.latents.len());

        let d1 = family.make_meta_dataset(&train, 8, 20, 1, Split::Train, false);
        let d2 = family.make_meta_dataset(&train, 8, 20, 1, Split::Train, false);
        assert_eq!(d1, d2);
        assert!(d1.episodes.iter().all(|e| e
            .points
            .iter()
            .all(|p| p.y.labels()[0] < family.hyper.n_obs as u32)));
    }
}
