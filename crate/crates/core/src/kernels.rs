//! Step distributions, their Fourier symbols, and transition probabilities of
//! the effective random walk.
//!
//! The walk that carries the mean of a single subpopulation has generator
//! `κ L_a + ρ L_b` with `ρ = Σ (l-1) β_l`. Its transition probability on
//! `Z^d` is
//!
//! ```text
//! p(t, x, y) = (2π)^{-d} ∫_{[-π,π]^d} exp(-t [κ(1 - â(k)) + ρ(1 - b̂(k))]) cos(k·(x-y)) dk
//! ```
//!
//! evaluated here with a midpoint tensor rule of `2^m` nodes per axis. The
//! error of each evaluation is estimated by comparing against the rule with
//! `2^(m-1)` nodes.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::torus::Torus;

/// Tolerance on the total weight of a step distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("step distribution is empty")]
    EmptySupport,
    #[error("displacement {0:?} has dimension {1}, expected {2}")]
    DimensionMismatch(Vec<i64>, usize, usize),
    #[error("weight {weight} for displacement {displacement:?} is not positive")]
    NonPositiveWeight { displacement: Vec<i64>, weight: f64 },
    #[error("zero displacement is not allowed")]
    ZeroDisplacement,
    #[error("displacement {0:?} listed more than once")]
    DuplicateDisplacement(Vec<i64>),
    #[error("weights sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("weight of {displacement:?} differs from weight of its reflection")]
    AsymmetricSupport { displacement: Vec<i64> },
    #[error("support generates a proper sublattice of index {index}")]
    ReducibleSupport { index: u128 },
    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureUnderResolved { estimate: f64, tolerance: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("rates must be nonnegative and finite (jump {0}, spread {1})")]
    InvalidRate(f64, f64),
}

/// One `(displacement, weight)` pair as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub displacement: Vec<i64>,
    pub weight: f64,
}

impl StepEntry {
    pub fn new(displacement: Vec<i64>, weight: f64) -> Self {
        Self {
            displacement,
            weight,
        }
    }
}

/// Symmetric, normalized, irreducible law on nonzero lattice vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDistribution {
    dim: usize,
    entries: Vec<(Vec<i64>, f64)>,
}

impl StepDistribution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Support and probabilities, sorted by displacement.
    pub fn entries(&self) -> &[(Vec<i64>, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Uniform law on the `2d` unit vectors.
    pub fn nearest_neighbour(dim: usize) -> Self {
        let w = 1.0 / (2 * dim) as f64;
        let raw = (0..dim)
            .flat_map(|axis| {
                [1i64, -1].into_iter().map(move |s| {
                    let mut v = vec![0i64; dim];
                    v[axis] = s;
                    StepEntry::new(v, w)
                })
            })
            .collect::<Vec<_>>();
        validate_step_distribution(dim, &raw).expect("nearest-neighbour law is valid")
    }

    pub fn to_entries(&self) -> Vec<StepEntry> {
        self.entries
            .iter()
            .map(|(v, w)| StepEntry::new(v.clone(), *w))
            .collect()
    }
}

/// Checks the invariants of a step law and returns it normalized.
pub fn validate_step_distribution(
    dim: usize,
    raw: &[StepEntry],
) -> Result<StepDistribution, KernelError> {
    if raw.is_empty() {
        return Err(KernelError::EmptySupport);
    }
    let mut entries: Vec<(Vec<i64>, f64)> = Vec::with_capacity(raw.len());
    for e in raw {
        if e.displacement.len() != dim {
            return Err(KernelError::DimensionMismatch(
                e.displacement.clone(),
                e.displacement.len(),
                dim,
            ));
        }
        if !(e.weight > 0.0 && e.weight.is_finite()) {
            return Err(KernelError::NonPositiveWeight {
                displacement: e.displacement.clone(),
                weight: e.weight,
            });
        }
        if e.displacement.iter().all(|&c| c == 0) {
            return Err(KernelError::ZeroDisplacement);
        }
        entries.push((e.displacement.clone(), e.weight));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in entries.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(KernelError::DuplicateDisplacement(pair[0].0.clone()));
        }
    }

    let total: f64 = entries.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(KernelError::NotNormalized(total));
    }
    for (_, w) in entries.iter_mut() {
        *w /= total;
    }

    for (v, w) in &entries {
        let neg: Vec<i64> = v.iter().map(|c| -c).collect();
        let mirror = entries
            .binary_search_by(|probe| probe.0.cmp(&neg))
            .ok()
            .map(|i| entries[i].1);
        match mirror {
            Some(wm) if (wm - w).abs() <= NORMALIZATION_TOLERANCE => {}
            _ => {
                return Err(KernelError::AsymmetricSupport {
                    displacement: v.clone(),
                })
            }
        }
    }

    let support: Vec<Vec<i64>> = entries.iter().map(|(v, _)| v.clone()).collect();
    let index = sublattice_index(&support, dim);
    if index != 1 {
        return Err(KernelError::ReducibleSupport { index });
    }

    Ok(StepDistribution { dim, entries })
}

/// Index of the lattice spanned by `vectors` inside `Z^dim`; `0` when the
/// span has lower rank. Computed by integer row reduction to echelon form.
pub fn sublattice_index(vectors: &[Vec<i64>], dim: usize) -> u128 {
    let mut rows: Vec<Vec<i128>> = vectors
        .iter()
        .map(|v| v.iter().map(|&c| c as i128).collect())
        .collect();
    let mut pivot_row = 0usize;
    let mut index: u128 = 1;
    for col in 0..dim {
        loop {
            // smallest nonzero magnitude in this column among remaining rows
            let best = (pivot_row..rows.len())
                .filter(|&r| rows[r][col] != 0)
                .min_by_key(|&r| rows[r][col].unsigned_abs());
            let Some(best) = best else {
                return 0;
            };
            rows.swap(pivot_row, best);
            let pivot = rows[pivot_row][col];
            let mut clean = true;
            for r in pivot_row + 1..rows.len() {
                let q = rows[r][col].div_euclid(pivot);
                if q != 0 {
                    for c in col..dim {
                        rows[r][c] -= q * rows[pivot_row][c];
                    }
                }
                if rows[r][col] != 0 {
                    clean = false;
                }
            }
            if clean {
                break;
            }
        }
        index *= rows[pivot_row][col].unsigned_abs();
        pivot_row += 1;
    }
    index
}

/// Fourier symbol `Σ_z cos(k·z) p(z)`.
pub fn symbol(dist: &StepDistribution, k: &[f64]) -> f64 {
    dist.entries
        .iter()
        .map(|(z, w)| {
            let phase: f64 = z.iter().zip(k).map(|(&zi, &ki)| zi as f64 * ki).sum();
            w * phase.cos()
        })
        .sum()
}

/// The random walk with generator `κ L_a + ρ L_b`.
#[derive(Debug, Clone)]
pub struct EffectiveWalk {
    jump_rate: f64,
    spread_rate: f64,
    dist_a: StepDistribution,
    dist_b: StepDistribution,
}

impl EffectiveWalk {
    /// Both rates may be zero, in which case the walk never moves.
    pub fn new(
        jump_rate: f64,
        spread_rate: f64,
        dist_a: StepDistribution,
        dist_b: StepDistribution,
    ) -> Result<Self, KernelError> {
        if !(jump_rate >= 0.0 && spread_rate >= 0.0)
            || !jump_rate.is_finite()
            || !spread_rate.is_finite()
        {
            return Err(KernelError::InvalidRate(jump_rate, spread_rate));
        }
        assert_eq!(dist_a.dim(), dist_b.dim(), "step laws must share dimension");
        Ok(Self {
            jump_rate,
            spread_rate,
            dist_a,
            dist_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.dist_a.dim()
    }

    pub fn jump_rate(&self) -> f64 {
        self.jump_rate
    }

    pub fn spread_rate(&self) -> f64 {
        self.spread_rate
    }

    pub fn dist_a(&self) -> &StepDistribution {
        &self.dist_a
    }

    pub fn dist_b(&self) -> &StepDistribution {
        &self.dist_b
    }

    /// Total rate at which the walk moves.
    pub fn total_rate(&self) -> f64 {
        self.jump_rate + self.spread_rate
    }

    /// `κ(1 - â(k)) + ρ(1 - b̂(k))`, always in `[0, 2(κ+ρ)]`.
    pub fn exponent(&self, k: &[f64]) -> f64 {
        self.jump_rate * (1.0 - symbol(&self.dist_a, k))
            + self.spread_rate * (1.0 - symbol(&self.dist_b, k))
    }

    /// Combined single-jump law `(κ a + ρ b)/(κ+ρ)` as a list of
    /// `(displacement, probability)`, or `None` for the frozen walk.
    pub fn jump_law(&self) -> Option<Vec<(Vec<i64>, f64)>> {
        let total = self.total_rate();
        if total == 0.0 {
            return None;
        }
        let mut law: Vec<(Vec<i64>, f64)> = Vec::new();
        let parts = [
            (&self.dist_a, self.jump_rate / total),
            (&self.dist_b, self.spread_rate / total),
        ];
        for (dist, scale) in parts {
            if scale == 0.0 {
                continue;
            }
            for (z, w) in dist.entries() {
                match law.iter_mut().find(|(v, _)| v == z) {
                    Some(slot) => slot.1 += w * scale,
                    None => law.push((z.clone(), w * scale)),
                }
            }
        }
        Some(law)
    }
}

/// Midpoint tensor quadrature over the frequency torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    /// Nodes per axis are `2^level`.
    pub level: u32,
    /// Largest accepted Richardson error estimate.
    pub tolerance: f64,
}

impl Quadrature {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            level: if dim <= 2 { 9 } else { 6 },
            tolerance: 1e-10,
        }
    }
}

/// Frequencies and symbol values on one midpoint grid.
#[derive(Debug, Clone)]
struct FrequencyGrid {
    per_axis: usize,
    dim: usize,
    nodes_1d: Vec<f64>,
    exponent: Vec<f64>,
}

impl FrequencyGrid {
    fn new(walk: &EffectiveWalk, level: u32) -> Self {
        let per_axis = 1usize << level;
        let dim = walk.dim();
        let h = 2.0 * PI / per_axis as f64;
        let nodes_1d: Vec<f64> = (0..per_axis).map(|j| -PI + (j as f64 + 0.5) * h).collect();
        let total = per_axis.pow(dim as u32);
        let mut k = vec![0.0; dim];
        let exponent = (0..total)
            .map(|flat| {
                fill_node(flat, per_axis, &nodes_1d, &mut k);
                walk.exponent(&k)
            })
            .collect();
        Self {
            per_axis,
            dim,
            nodes_1d,
            exponent,
        }
    }

    fn weights(&self, t: f64) -> Vec<f64> {
        let n = self.exponent.len() as f64;
        self.exponent.iter().map(|e| (-t * e).exp() / n).collect()
    }

    /// `Σ_k w(k) cos(k·diff)`. The phase `e^{ik·diff}` factorizes over axes,
    /// so it is expanded from per-axis tables in the same order as the nodes.
    fn integrate(&self, weights: &[f64], diff: &[i64]) -> f64 {
        let mut re = vec![1.0];
        let mut im = vec![0.0];
        for &d in diff.iter().take(self.dim) {
            let (s, c): (Vec<f64>, Vec<f64>) =
                self.nodes_1d.iter().map(|k| (k * d as f64).sin_cos()).unzip();
            let mut next_re = Vec::with_capacity(re.len() * self.per_axis);
            let mut next_im = Vec::with_capacity(re.len() * self.per_axis);
            for (a, b) in re.iter().zip(&im) {
                for (cj, sj) in c.iter().zip(&s) {
                    next_re.push(a * cj - b * sj);
                    next_im.push(a * sj + b * cj);
                }
            }
            re = next_re;
            im = next_im;
        }
        weights.iter().zip(&re).map(|(w, c)| w * c).sum()
    }
}

fn fill_node(mut flat: usize, per_axis: usize, nodes: &[f64], k: &mut [f64]) {
    for slot in k.iter_mut().rev() {
        *slot = nodes[flat % per_axis];
        flat /= per_axis;
    }
}

/// Transition probabilities `p(t, x, y)` of one walk at a fixed time.
#[derive(Debug, Clone)]
pub struct KernelSlice {
    t: f64,
    tolerance: f64,
    fine: Arc<FrequencyGrid>,
    coarse: Arc<FrequencyGrid>,
    fine_w: Vec<f64>,
    coarse_w: Vec<f64>,
}

impl KernelSlice {
    pub fn new(walk: &EffectiveWalk, t: f64, quad: Quadrature) -> Result<Self, KernelError> {
        let evaluator = KernelEvaluator::new(walk, quad);
        evaluator.at(t)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// `p(t, x, y)` as a function of `x - y`.
    pub fn prob(&self, diff: &[i64]) -> Result<f64, KernelError> {
        if self.t == 0.0 {
            return Ok(if diff.iter().all(|&c| c == 0) { 1.0 } else { 0.0 });
        }
        let fine = self.fine.integrate(&self.fine_w, diff);
        let coarse = self.coarse.integrate(&self.coarse_w, diff);
        let estimate = (fine - coarse).abs();
        if estimate > self.tolerance {
            return Err(KernelError::QuadratureUnderResolved {
                estimate,
                tolerance: self.tolerance,
            });
        }
        Ok(fine.clamp(0.0, 1.0))
    }
}

/// Reusable symbol tables for evaluating one walk at many times.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    quad: Quadrature,
    fine: Arc<FrequencyGrid>,
    coarse: Arc<FrequencyGrid>,
}

impl KernelEvaluator {
    pub fn new(walk: &EffectiveWalk, quad: Quadrature) -> Self {
        let level = quad.level.max(1);
        Self {
            quad,
            fine: Arc::new(FrequencyGrid::new(walk, level)),
            coarse: Arc::new(FrequencyGrid::new(walk, level - 1)),
        }
    }

    pub fn at(&self, t: f64) -> Result<KernelSlice, KernelError> {
        if !(t >= 0.0) {
            return Err(KernelError::NegativeTime(t));
        }
        Ok(KernelSlice {
            t,
            tolerance: self.quad.tolerance,
            fine_w: self.fine.weights(t),
            coarse_w: self.coarse.weights(t),
            fine: Arc::clone(&self.fine),
            coarse: Arc::clone(&self.coarse),
        })
    }

    /// `∫_0^T e^{-Δs} p(s, 0, 0) ds`, with the time integral done exactly
    /// for every frequency node. Returns `(value, error estimate)`.
    pub fn discounted_return_integral(&self, discount: f64, horizon: f64) -> (f64, f64) {
        let eval = |grid: &FrequencyGrid| {
            let n = grid.exponent.len() as f64;
            grid.exponent
                .iter()
                .map(|&e| {
                    let rate = discount + e;
                    if rate == 0.0 {
                        horizon
                    } else {
                        -(-rate * horizon).exp_m1() / rate
                    }
                })
                .sum::<f64>()
                / n
        };
        let fine = eval(&self.fine);
        let coarse = eval(&self.coarse);
        (fine, (fine - coarse).abs())
    }
}

/// `p(t, x, y)` on `Z^d` by frequency quadrature.
pub fn transition_probability(
    walk: &EffectiveWalk,
    t: f64,
    x: &[i64],
    y: &[i64],
    quad: Quadrature,
) -> Result<f64, KernelError> {
    let diff: Vec<i64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    KernelSlice::new(walk, t, quad)?.prob(&diff)
}

/// Exact transition probabilities of the walk on a finite torus, from the
/// finite Fourier sum over the `L^d` torus frequencies.
#[derive(Debug, Clone)]
pub struct TorusKernel {
    torus: Torus,
    exponent: Vec<f64>,
    cos_table: Vec<f64>,
}

impl TorusKernel {
    pub fn new(walk: &EffectiveWalk, torus: Torus) -> Self {
        assert_eq!(walk.dim(), torus.dim());
        let side = torus.side();
        let exponent = (0..torus.n_sites())
            .map(|q| {
                let k: Vec<f64> = torus
                    .coords(q)
                    .iter()
                    .map(|&j| 2.0 * PI * j as f64 / side as f64)
                    .collect();
                walk.exponent(&k)
            })
            .collect();
        let cos_table = (0..side)
            .map(|m| (2.0 * PI * m as f64 / side as f64).cos())
            .collect();
        Self {
            torus,
            exponent,
            cos_table,
        }
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    /// Eigenvalue of the generator at torus frequency index `q` (nonpositive).
    pub fn generator_eigenvalue(&self, q: usize) -> f64 {
        -self.exponent[q]
    }

    /// `p_L(t, x, 0)` for every site `x`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.torus.n_sites();
        let side = self.torus.side();
        let weights: Vec<f64> = self.exponent.iter().map(|e| (-t * e).exp()).collect();
        let freq_coords: Vec<Vec<i64>> = (0..n).map(|q| self.torus.coords(q)).collect();
        (0..n)
            .map(|x| {
                let xc = self.torus.coords(x);
                let s: f64 = weights
                    .iter()
                    .zip(&freq_coords)
                    .map(|(w, qc)| {
                        let phase = qc
                            .iter()
                            .zip(&xc)
                            .map(|(&a, &b)| (a * b) as usize)
                            .sum::<usize>()
                            % side;
                        w * self.cos_table[phase]
                    })
                    .sum();
                s / n as f64
            })
            .collect()
    }
}
