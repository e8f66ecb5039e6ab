//! Exact transient law of the full particle configuration on a tiny torus
//! with a per-site occupancy cap.
//!
//! Configurations `c ∈ {0..C}^{L^d}` are numbered in base `C + 1` with site
//! `x` as digit `x`. Any event that would push a site above `C` is removed
//! from the generator rather than redirected, so the chain stays conservative
//! and the mass sitting on capped configurations measures the truncation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Model;
use crate::stats::{self, GoodnessOfFit, Histogram, StatsError};
use crate::torus::Torus;

pub const DEFAULT_STATE_BUDGET: usize = 2_000_000;

/// Largest `Λτ` advanced in one uniformization chunk.
const CHUNK_LOAD: f64 = 20.0;
/// Poisson mass left out of each chunk.
const CHUNK_TAIL: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("state space (C+1)^(L^d) = {states} exceeds budget {budget}")]
    BudgetExceeded { states: f64, budget: usize },
    #[error("cap must be at least 1")]
    InvalidCap,
    #[error("times must be finite, nonnegative and sorted")]
    InvalidTimes,
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

impl From<StatsError> for OracleError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::InsufficientSamples(s) => OracleError::InsufficientSamples(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncatedStateSpace {
    torus: Torus,
    cap: u32,
    n_states: usize,
}

impl TruncatedStateSpace {
    pub fn new(torus: Torus, cap: u32, budget: usize) -> Result<Self, OracleError> {
        if cap == 0 {
            return Err(OracleError::InvalidCap);
        }
        let states = (cap as f64 + 1.0).powi(torus.n_sites() as i32);
        if states > budget as f64 {
            return Err(OracleError::BudgetExceeded { states, budget });
        }
        Ok(Self {
            torus,
            cap,
            n_states: states as usize,
        })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.n_states
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Occupancy of every site in configuration `state`.
    pub fn decode(&self, mut state: usize) -> Vec<u32> {
        let base = self.cap as usize + 1;
        (0..self.torus.n_sites())
            .map(|_| {
                let c = (state % base) as u32;
                state /= base;
                c
            })
            .collect()
    }

    pub fn encode(&self, counts: &[u32]) -> usize {
        let base = self.cap as usize + 1;
        counts
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * base + c as usize)
    }

    fn digit_weight(&self, site: usize) -> usize {
        (self.cap as usize + 1).pow(site as u32)
    }
}

/// Sparse generator: off-diagonal rates row by row, plus the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    space: TruncatedStateSpace,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    diag: Vec<f64>,
}

impl Generator {
    pub fn space(&self) -> TruncatedStateSpace {
        self.space
    }

    /// Off-diagonal `(target, rate)` pairs of one row.
    pub fn row(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[state]..self.row_start[state + 1];
        self.cols[r.clone()].iter().copied().zip(self.rates[r].iter().copied())
    }

    pub fn diagonal(&self, state: usize) -> f64 {
        self.diag[state]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, d| m.max(-d))
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }
}

/// Event rates of the chain. Unlike [`Model`] these need not be subcritical.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRates {
    pub dim: usize,
    pub kappa: f64,
    pub mu: f64,
    pub gamma: f64,
    /// `(l, β_l)` pairs.
    pub splits: Vec<(usize, f64)>,
    pub jump: Vec<(Vec<i64>, f64)>,
    pub offspring: Vec<(Vec<i64>, f64)>,
}

impl OracleRates {
    pub fn from_model(model: &Model) -> Self {
        Self {
            dim: model.dim(),
            kappa: model.kappa(),
            mu: model.mu(),
            gamma: model.gamma(),
            splits: model.splitting_rates().collect(),
            jump: model.dist_a().entries().to_vec(),
            offspring: model.dist_b().entries().to_vec(),
        }
    }
}

/// Every `(l-1)`-tuple of offspring displacements with its probability.
fn offspring_placements(rates: &OracleRates, torus: Torus, l: usize) -> Vec<(Vec<usize>, f64)> {
    let origin = torus.origin();
    let mut out: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..l - 1 {
        out = out
            .into_iter()
            .flat_map(|(sites, p)| {
                rates.offspring.iter().map(move |(v, w)| {
                    let mut s = sites.clone();
                    s.push(torus.shift(origin, v));
                    (s, p * w)
                })
            })
            .collect();
    }
    out
}

/// Assembles the capped generator of `model` on the torus of side `side`.
pub fn build_generator(
    model: &Model,
    side: usize,
    cap: u32,
    budget: usize,
) -> Result<Generator, OracleError> {
    build_generator_with_rates(&OracleRates::from_model(model), side, cap, budget)
}

pub fn build_generator_with_rates(
    rates_in: &OracleRates,
    side: usize,
    cap: u32,
    budget: usize,
) -> Result<Generator, OracleError> {
    let torus = Torus::new(side, rates_in.dim);
    let space = TruncatedStateSpace::new(torus, cap, budget)?;
    let n_sites = torus.n_sites();
    let origin = torus.origin();
    let jumps: Vec<(usize, f64)> = rates_in
        .jump
        .iter()
        .map(|(v, w)| (torus.shift(origin, v), rates_in.kappa * w))
        .collect();
    // offsets relative to the origin; shifted to the parent below
    let splits: Vec<(Vec<usize>, f64)> = rates_in
        .splits
        .iter()
        .flat_map(|&(l, beta)| {
            offspring_placements(rates_in, torus, l)
                .into_iter()
                .map(move |(s, p)| (s, beta * p))
        })
        .collect();
    let offset_coords: Vec<Vec<i64>> = (0..n_sites).map(|z| torus.coords(z)).collect();
    let shift_table: Vec<Vec<usize>> = (0..n_sites)
        .map(|x| offset_coords.iter().map(|c| torus.shift(x, c)).collect())
        .collect();

    let mut row_start = Vec::with_capacity(space.len() + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    let mut diag = Vec::with_capacity(space.len());
    let mut row: BTreeMap<usize, f64> = BTreeMap::new();
    let mut added = vec![0u32; n_sites];
    for state in 0..space.len() {
        row.clear();
        let counts = space.decode(state);
        for x in 0..n_sites {
            let w = space.digit_weight(x);
            if counts[x] < cap && rates_in.gamma > 0.0 {
                *row.entry(state + w).or_default() += rates_in.gamma;
            }
            let n = counts[x] as f64;
            if counts[x] == 0 {
                continue;
            }
            if rates_in.mu > 0.0 {
                *row.entry(state - w).or_default() += rates_in.mu * n;
            }
            for &(off, rate) in &jumps {
                let y = shift_table[x][off];
                if y == x || counts[y] >= cap || rate == 0.0 {
                    continue;
                }
                *row.entry(state - w + space.digit_weight(y)).or_default() += rate * n;
            }
            for (offs, rate) in &splits {
                added.iter_mut().for_each(|a| *a = 0);
                for &off in offs {
                    added[shift_table[x][off]] += 1;
                }
                if *rate == 0.0 || (0..n_sites).any(|y| counts[y] + added[y] > cap) {
                    continue;
                }
                let target = state
                    + (0..n_sites)
                        .map(|y| added[y] as usize * space.digit_weight(y))
                        .sum::<usize>();
                *row.entry(target).or_default() += rate * n;
            }
        }
        row_start.push(cols.len());
        let mut exit = 0.0;
        for (&to, &r) in &row {
            if to != state && r > 0.0 {
                cols.push(to);
                rates.push(r);
                exit += r;
            }
        }
        diag.push(-exit);
    }
    row_start.push(cols.len());
    Ok(Generator {
        space,
        row_start,
        cols,
        rates,
        diag,
    })
}

/// `p(t) = δ_empty · e^{tQ}` at each of the sorted `times`, by uniformization.
pub fn distribution_at(gen: &Generator, times: &[f64]) -> Result<Vec<Vec<f64>>, OracleError> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OracleError::InvalidTimes);
    }
    let n = gen.space.len();
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    let lambda = gen.max_exit_rate() * 1.02;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if lambda > 0.0 {
            while now < t {
                let tau = (t - now).min(CHUNK_LOAD / lambda);
                p = uniformization_chunk(gen, &p, lambda, tau);
                now += tau;
            }
        }
        now = t;
        out.push(p.clone());
    }
    Ok(out)
}

fn uniformization_chunk(gen: &Generator, p: &[f64], lambda: f64, tau: f64) -> Vec<f64> {
    let load = lambda * tau;
    let mut weight = (-load).exp();
    let mut covered = weight;
    let mut term = p.to_vec();
    let mut acc: Vec<f64> = term.iter().map(|v| v * weight).collect();
    let mut next = vec![0.0; p.len()];
    let mut n = 0usize;
    while 1.0 - covered > CHUNK_TAIL && n < 10_000 {
        // term ← term · (I + Q/Λ)
        for (j, slot) in next.iter_mut().enumerate() {
            *slot = term[j] * (1.0 + gen.diag[j] / lambda);
        }
        for (i, &ti) in term.iter().enumerate() {
            if ti == 0.0 {
                continue;
            }
            for (j, r) in gen.row(i) {
                next[j] += ti * r / lambda;
            }
        }
        std::mem::swap(&mut term, &mut next);
        n += 1;
        weight *= load / n as f64;
        covered += weight;
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += weight * t;
        }
    }
    acc
}

/// Law of the occupancy of `site` under the configuration law `p`.
pub fn marginal(space: &TruncatedStateSpace, p: &[f64], site: usize) -> Vec<f64> {
    let mut out = vec![0.0; space.cap() as usize + 1];
    for (state, &mass) in p.iter().enumerate() {
        out[space.decode(state)[site] as usize] += mass;
    }
    out
}

/// Mass on configurations with some site at the cap.
pub fn overflow_mass(space: &TruncatedStateSpace, p: &[f64]) -> f64 {
    p.iter()
        .enumerate()
        .filter(|(state, _)| space.decode(*state).contains(&space.cap()))
        .map(|(_, &m)| m)
        .sum()
}

/// Oracle marginal as `count,probability` CSV.
pub fn marginal_csv(marginal: &[f64]) -> String {
    let mut s = String::from("count,probability\n");
    for (k, p) in marginal.iter().enumerate() {
        s.push_str(&format!("{k},{p:e}\n"));
    }
    s
}

/// Summary of one oracle solve at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMarginal {
    pub t: f64,
    pub probabilities: Vec<f64>,
    pub overflow_mass: f64,
}

/// Chi-square fit of a simulated histogram of `N(t, origin)` against the
/// oracle marginal, pooling bins to an expected count of at least 5.
pub fn compare_to_simulation(
    oracle_marginal: &[f64],
    histogram: &Histogram,
) -> Result<GoodnessOfFit, OracleError> {
    Ok(stats::chi_square_fit(oracle_marginal, histogram, 5.0)?)
}
