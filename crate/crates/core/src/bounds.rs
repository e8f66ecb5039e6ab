//! Constants of the factorial-moment bound
//! `m_k(t,x;0) ≤ k! B^{k-1} D_k e^{-Δt} p(t,x,0)` and checks of it against
//! solved moment tables.
//!
//! `β` and `δ` here are the tail parameters of the model (`β_l ≤ β δ^l`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::MomentTable;
use crate::kernels::{KernelError, KernelEvaluator, Quadrature, TorusKernel};
use crate::model::Model;

/// Relative slack allowed on the bound.
pub const BOUND_SLACK: f64 = 1e-8;
/// Absolute slack per unit of `k! B^{k-1} D_k`: Fourier roundoff in both the
/// table and `p_L` sits at this level.
pub const BOUND_FLOOR: f64 = 1e-12;
/// Margins are only reported where the bound exceeds this.
pub const MARGIN_FLOOR: f64 = 1e-6;
/// Default relative cut-off of the `l`-sum in [`d_sequence`].
pub const D_TRUNCATION: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("bound violated for k={k} at t={t}, site {site}: {value:e} > {bound:e}")]
    BoundViolated {
        k: usize,
        t: f64,
        site: usize,
        value: f64,
        bound: f64,
    },
    #[error("sequence has a zero or negative entry at index {0}")]
    DegenerateSequence(usize),
    #[error("growth estimate needs at least 4 terms, got {0}")]
    TooShort(usize),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("no power-law constant up to {0} dominates the data")]
    NoOperationalConstant(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// `max(1, β ∫_0^T e^{-Δs} p(s,0,0) ds + β e^{-ΔT}/Δ)` with the `Z^d`
/// kernel; the last term bounds the omitted tail since `p ≤ 1`.
pub fn b_constant(model: &Model, horizon: f64) -> Result<f64, BoundsError> {
    let beta = model.params().tail_beta;
    let delta = model.delta();
    let evaluator = KernelEvaluator::new(model.walk(), Quadrature::for_dim(model.dim()));
    let (integral, err) = evaluator.discounted_return_integral(delta, horizon);
    let tol = Quadrature::for_dim(model.dim()).tolerance;
    if err > tol * horizon.max(1.0) {
        return Err(KernelError::QuadratureUnderResolved {
            estimate: err,
            tolerance: tol,
        }
        .into());
    }
    let tail = (-delta * horizon).exp() / delta;
    Ok((beta * (integral + err + tail)).max(1.0))
}

/// Default horizon for [`b_constant`].
pub fn default_b_horizon(model: &Model) -> f64 {
    40.0 / model.delta()
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `D_1..D_K` with the default truncation.
pub fn d_sequence(delta: f64, k_max: usize) -> Result<Vec<f64>, BoundsError> {
    d_sequence_with_threshold(delta, k_max, D_TRUNCATION)
}

/// `D_1..D_K`. The `l`-sum stops once its terms are decreasing and the last
/// one is below `threshold` times the partial sum.
pub fn d_sequence_with_threshold(
    delta: f64,
    k_max: usize,
    threshold: f64,
) -> Result<Vec<f64>, BoundsError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BoundsError::InvalidDelta(delta));
    }
    let mut d = vec![0.0; k_max + 1];
    if k_max == 0 {
        return Ok(Vec::new());
    }
    d[1] = 1.0;
    // powers[i][m] = Σ over compositions of m into i positive parts of Π D_j
    let mut powers: Vec<Vec<f64>> = vec![vec![0.0; k_max + 1]; k_max + 1];
    powers[0][0] = 1.0;
    for k in 2..=k_max {
        // refresh every power up to order k - 1, which is all D_j with j < k use
        for i in 1..=k {
            for m in i..k {
                powers[i][m] = (1..=m - i + 1)
                    .map(|j| d[j] * powers[i - 1][m - j])
                    .sum();
            }
        }
        // parts i >= 2 summing to k only involve D_j with j < k
        for i in 2..=k {
            powers[i][k] = (1..=k - i + 1)
                .map(|j| d[j] * powers[i - 1][k - j])
                .sum();
        }
        // x[i] = coefficient multiplying C(l-1, i)
        let mut x = vec![0.0; k + 1];
        for (i, slot) in x.iter_mut().enumerate().skip(1) {
            let first: f64 = (1..k).map(|n| d[n] * powers[i][k - n]).sum();
            let second = if i >= 2 { powers[i][k] } else { 0.0 };
            *slot = first + second;
        }
        let mut total = 0.0;
        let mut previous = f64::INFINITY;
        let mut l = 2usize;
        loop {
            let term = delta.powi(l as i32)
                * (1..=k.min(l - 1))
                    .map(|i| binomial(l - 1, i) * x[i])
                    .sum::<f64>();
            total += term;
            if (term < previous && term <= threshold * total) || l > 100_000 {
                break;
            }
            previous = term;
            l += 1;
        }
        d[k] = total;
    }
    Ok(d[1..].to_vec())
}

/// `D_1..D_K` by literal enumeration of every `(l, n, i, composition)` term
/// with `l ≤ l_cut`. Slow; used to cross-check [`d_sequence`].
pub fn d_sequence_enumerated(delta: f64, k_max: usize, l_cut: usize) -> Vec<f64> {
    let mut d = vec![0.0, 1.0];
    for k in 2..=k_max {
        let mut total = 0.0;
        for l in 2..=l_cut {
            let dl = delta.powi(l as i32);
            for n in 1..k {
                for i in 1..l {
                    for c in crate::hierarchy::compositions(k - n, i) {
                        total += dl * d[n] * binomial(l - 1, i) * c.iter().map(|&j| d[j]).product::<f64>();
                    }
                }
            }
            for i in 2..l {
                for c in crate::hierarchy::compositions(k, i) {
                    total += dl * binomial(l - 1, i) * c.iter().map(|&j| d[j]).product::<f64>();
                }
            }
        }
        d.push(total);
    }
    d.truncate(k_max + 1);
    d.split_off(1)
}

/// Ratio statistics of a positive sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    /// `max_{k ≥ 2} D_{k+1} / D_k`.
    pub rate: f64,
    /// `D_{k+1} / D_k` for `k = 2..K-1`.
    pub ratios: Vec<f64>,
    /// `(max - min) / max` over the last third of `ratios`.
    pub tail_variation: f64,
    pub converging: bool,
}

/// Largest successive ratio from `k = 2` on; `d[0]` is `D_1`.
pub fn d_growth_rate(d: &[f64]) -> Result<GrowthEstimate, BoundsError> {
    if d.len() < 4 {
        return Err(BoundsError::TooShort(d.len()));
    }
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(BoundsError::DegenerateSequence(i + 1));
    }
    let ratios: Vec<f64> = d.windows(2).skip(1).map(|w| w[1] / w[0]).collect();
    let rate = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail_len = ratios.len().div_ceil(3).max(2).min(ratios.len());
    let tail = &ratios[ratios.len() - tail_len..];
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let tail_variation = (hi - lo) / hi;
    Ok(GrowthEstimate {
        rate,
        ratios,
        tail_variation,
        converging: tail_variation < 0.05,
    })
}

/// `B`, `D_1..D_K` and their growth rate for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub b: f64,
    pub tail_delta: f64,
    pub d: Vec<f64>,
    pub growth: Option<GrowthEstimate>,
    /// `max(B, growth rate)`: the seed for the operational constant.
    pub c_seed: f64,
}

impl BoundCertificate {
    pub fn new(model: &Model, k_max: usize) -> Result<Self, BoundsError> {
        let b = b_constant(model, default_b_horizon(model))?;
        let tail_delta = model.params().tail_delta;
        let d = d_sequence(tail_delta, k_max)?;
        let growth = if d.len() >= 4 {
            Some(d_growth_rate(&d)?)
        } else {
            None
        };
        let c_seed = growth.as_ref().map_or(b, |g| b.max(g.rate));
        Ok(Self {
            b,
            tail_delta,
            d,
            growth,
            c_seed,
        })
    }

    /// `k! B^{k-1} D_k`.
    pub fn prefactor(&self, k: usize) -> f64 {
        let fact: f64 = (1..=k).map(|j| j as f64).product();
        fact * self.b.powi(k as i32 - 1) * self.d[k - 1]
    }
}

/// Worst relative slack of the bound for one order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderMargin {
    pub k: usize,
    /// `min (1 - m_k / bound)` over points with bound above [`MARGIN_FLOOR`].
    pub min_relative_margin: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub orders: Vec<OrderMargin>,
    pub checked: usize,
}

/// Checks `m_k ≤ k! B^{k-1} D_k e^{-Δt} p_L(t,x,0)` at every grid time
/// `t > 0` and site, with `p_L` the exact torus kernel of the table.
pub fn verify_factorial_bound(
    table: &MomentTable,
    cert: &BoundCertificate,
    model: &Model,
) -> Result<MarginReport, BoundsError> {
    let k_max = table.k_max().min(cert.d.len());
    let grid = table.grid();
    let kernel = TorusKernel::new(model.walk(), table.torus());
    let mut orders: Vec<OrderMargin> = (1..=k_max)
        .map(|k| OrderMargin {
            k,
            min_relative_margin: f64::INFINITY,
            points: 0,
        })
        .collect();
    let mut checked = 0;
    for i in 1..grid.len() {
        let t = grid.time(i);
        let decay = (-model.delta() * t).exp();
        let p = kernel.at(t);
        for k in 1..=k_max {
            let pre = cert.prefactor(k) * decay;
            let floor = BOUND_FLOOR * cert.prefactor(k).max(1.0);
            let slot = &mut orders[k - 1];
            for (site, (&value, &pk)) in table.field(k, i).iter().zip(&p).enumerate() {
                let bound = pre * pk.max(0.0);
                checked += 1;
                if value > bound * (1.0 + BOUND_SLACK) + floor {
                    return Err(BoundsError::BoundViolated {
                        k,
                        t,
                        site,
                        value,
                        bound,
                    });
                }
                if bound > MARGIN_FLOOR {
                    slot.points += 1;
                    slot.min_relative_margin = slot.min_relative_margin.min(1.0 - value / bound);
                }
            }
        }
    }
    Ok(MarginReport { orders, checked })
}

/// Smallest `c` on the ladder `c_seed · 1.05^j` with
/// `Σ_x m_k(t,x) ≤ c^k k! e^{-Δt}` on the whole table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalConstant {
    pub c: f64,
    pub seed: f64,
    pub enlargements: usize,
}

pub fn operational_constant(
    table: &MomentTable,
    cert: &BoundCertificate,
    model: &Model,
) -> Result<OperationalConstant, BoundsError> {
    let grid = table.grid();
    let sums: Vec<Vec<f64>> = (1..=table.k_max()).map(|k| table.site_sums(k)).collect();
    let holds = |c: f64| {
        sums.iter().enumerate().all(|(idx, s)| {
            let k = idx + 1;
            let fact: f64 = (1..=k).map(|j| j as f64).product();
            s.iter().enumerate().all(|(i, &v)| {
                let bound = c.powi(k as i32) * fact * (-model.delta() * grid.time(i)).exp();
                v <= bound * (1.0 + BOUND_SLACK)
            })
        })
    };
    let seed = cert.c_seed.max(1.0);
    let mut c = seed;
    for enlargements in 0..2000 {
        if holds(c) {
            return Ok(OperationalConstant {
                c,
                seed,
                enlargements,
            });
        }
        c *= 1.05;
    }
    Err(BoundsError::NoOperationalConstant(c))
}
