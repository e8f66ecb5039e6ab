//! Factorial moments `m_k(t, x; 0)` of a single immigrant's subpopulation on
//! the torus.
//!
//! Order `k` obeys
//!
//! ```text
//! ∂m_k/∂t = (κ L_a + ρ L_b) m_k - Δ m_k + S_k
//! ```
//!
//! where the source `S_k` only involves orders below `k`. With
//! `m̃_j = m_j / j!`, `M_j = m̃_j * b`, and `P_i(n)` the sum over compositions
//! `j_1 + … + j_i = n` (all parts ≥ 1) of `M_{j_1} ⋯ M_{j_i}`:
//!
//! ```text
//! S_k / k! = Σ_l β_l [ Σ_{n=1}^{k-1} m̃_n Σ_{i=1}^{l-1} C(l-1, i) P_i(k-n)
//!                     + Σ_{i=2}^{l-1} C(l-1, i) P_i(k) ]
//! ```
//!
//! The linear part is diagonal in the discrete Fourier basis of the torus and
//! is integrated exactly; the coupled system is advanced with the
//! integrating-factor (Lawson) form of classical RK4. Order `k` never reads
//! orders above `k`, so truncating at a different `K` leaves lower orders
//! bit-identical.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::kernels::{self, KernelError, Quadrature, TorusKernel};
use crate::model::Model;
use crate::torus::Torus;

/// Values below this are reported as a sign error rather than roundoff.
pub const NEGATIVITY_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("time step {step} exceeds the stability limit {limit}")]
    UnstableStep { step: f64, limit: f64 },
    #[error("m_{k}({t}, site {site}) = {value:e} is negative")]
    NonPositiveDetected {
        k: usize,
        t: f64,
        site: usize,
        value: f64,
    },
    #[error("moment order must be at least 1")]
    InvalidOrder,
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Uniform grid `0, h, 2h, …, n h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    step: f64,
    intervals: usize,
}

impl TimeGrid {
    pub fn new(step: f64, intervals: usize) -> Result<Self, HierarchyError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(HierarchyError::InvalidGrid(format!("step {step}")));
        }
        Ok(Self { step, intervals })
    }

    /// Smallest uniform grid reaching `t_max` with step at most `max_step`.
    pub fn covering(t_max: f64, max_step: f64) -> Result<Self, HierarchyError> {
        if !(t_max > 0.0) {
            return Err(HierarchyError::InvalidGrid(format!("horizon {t_max}")));
        }
        let intervals = (t_max / max_step).ceil().max(1.0) as usize;
        Self::new(t_max / intervals as f64, intervals)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.intervals)
    }

    /// The same step, `factor` times as many intervals.
    pub fn extended(&self, factor: usize) -> Self {
        Self {
            step: self.step,
            intervals: self.intervals * factor,
        }
    }

    /// Twice the step over the same horizon (needs an even count).
    pub fn coarsened(&self) -> Option<Self> {
        (self.intervals % 2 == 0).then(|| Self {
            step: 2.0 * self.step,
            intervals: self.intervals / 2,
        })
    }
}

/// All compositions of `total` into `parts` positive integers.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        // leave at least one for each remaining part
        for first in 1..=left.saturating_sub(parts - 1) {
            cur.push(first);
            rec(left - first, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 && total >= parts {
        rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|j| j as f64).product()
}

/// Assembles the sources `S_k` from lower-order fields.
#[derive(Debug, Clone)]
pub struct SourceAssembler {
    torus: Torus,
    /// `(probability, shifted index per site)` for each offspring displacement.
    placement: Vec<(f64, Vec<usize>)>,
    /// `c_i = Σ_l β_l C(l-1, i)` for `i = 0..`.
    weights: Vec<f64>,
    compositions: HashMap<(usize, usize), Vec<Vec<usize>>>,
}

impl SourceAssembler {
    pub fn new(model: &Model, torus: Torus) -> Self {
        let placement = model
            .dist_b()
            .entries()
            .iter()
            .map(|(v, w)| (*w, (0..torus.n_sites()).map(|x| torus.shift(x, v)).collect()))
            .collect();
        let mut weights = vec![0.0; model.l_max()];
        for (l, beta) in model.splitting_rates() {
            for (i, slot) in weights.iter_mut().enumerate().take(l).skip(1) {
                *slot += beta * binomial(l - 1, i);
            }
        }
        Self {
            torus,
            placement,
            weights,
            compositions: HashMap::new(),
        }
    }

    /// `(f * b)(x) = Σ_v b(v) f(x + v)` on the torus.
    pub fn convolve_offspring(&self, field: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; field.len()];
        for (w, shifted) in &self.placement {
            for (o, &src) in out.iter_mut().zip(shifted) {
                *o += w * field[src];
            }
        }
        out
    }

    fn compositions(&mut self, total: usize, parts: usize) -> &[Vec<usize>] {
        self.compositions
            .entry((total, parts))
            .or_insert_with(|| compositions(total, parts))
    }

    /// `S_k` (unnormalized) from `lower = [m_1, …, m_{k-1}]`.
    pub fn source(&mut self, k: usize, lower: &[&[f64]]) -> Vec<f64> {
        let n_sites = self.torus.n_sites();
        let mut out = vec![0.0; n_sites];
        if k < 2 {
            return out;
        }
        assert!(lower.len() >= k - 1, "source of order {k} needs {} lower orders", k - 1);
        let normalized: Vec<Vec<f64>> = (1..k)
            .map(|j| {
                let f = factorial(j);
                lower[j - 1].iter().map(|v| v / f).collect()
            })
            .collect();
        let convolved: Vec<Vec<f64>> = normalized
            .iter()
            .map(|m| self.convolve_offspring(m))
            .collect();
        let weights = self.weights.clone();
        let max_parts = weights.len().saturating_sub(1);

        // Σ_i c_i P_i(total), restricted to i >= min_parts
        let weighted_products = |total: usize, min_parts: usize, this: &mut Self| {
            let mut acc = vec![0.0; n_sites];
            for parts in min_parts..=max_parts.min(total) {
                let c = weights[parts];
                if c == 0.0 {
                    continue;
                }
                for comp in this.compositions(total, parts) {
                    for (x, slot) in acc.iter_mut().enumerate() {
                        *slot += c * comp.iter().map(|&j| convolved[j - 1][x]).product::<f64>();
                    }
                }
            }
            acc
        };

        for n in 1..k {
            let inner = weighted_products(k - n, 1, self);
            for (x, slot) in out.iter_mut().enumerate() {
                *slot += normalized[n - 1][x] * inner[x];
            }
        }
        let second = weighted_products(k, 2, self);
        let scale = factorial(k);
        for (slot, s) in out.iter_mut().zip(&second) {
            *slot = (*slot + s) * scale;
        }
        out
    }
}

/// Applies `exp(h A)` for the translation-invariant operator
/// `A = κ L_a + ρ L_b - Δ` through the discrete Fourier transform.
struct SpectralPropagator {
    torus: Torus,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    eigenvalues: Vec<f64>,
}

impl SpectralPropagator {
    fn new(model: &Model, torus: Torus) -> Self {
        let tk = TorusKernel::new(model.walk(), torus);
        let eigenvalues = (0..torus.n_sites())
            .map(|q| tk.generator_eigenvalue(q) - model.delta())
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            torus,
            forward: planner.plan_fft_forward(torus.side()),
            inverse: planner.plan_fft_inverse(torus.side()),
            eigenvalues,
        }
    }

    fn factors(&self, h: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (h * l).exp()).collect()
    }

    fn transform(&self, data: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let side = self.torus.side();
        let dim = self.torus.dim();
        let mut line = vec![Complex::new(0.0, 0.0); side];
        for axis in 0..dim {
            let stride = side.pow((dim - 1 - axis) as u32);
            let outer = side.pow(axis as u32);
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * side * stride + inner;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    fft.process(&mut line);
                    for (j, v) in line.iter().enumerate() {
                        data[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    fn apply(&self, field: &[f64], factors: &[f64]) -> Vec<f64> {
        let mut data: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        for (d, f) in data.iter_mut().zip(factors) {
            *d *= *f;
        }
        self.transform(&mut data, &self.inverse);
        let n = field.len() as f64;
        data.iter().map(|c| c.re / n).collect()
    }
}

/// Stepper for the coupled system of orders `1..=K`.
pub struct HierarchySolver {
    torus: Torus,
    k_max: usize,
    step: f64,
    time: f64,
    state: Vec<Vec<f64>>,
    propagator: SpectralPropagator,
    half: Vec<f64>,
    full: Vec<f64>,
    sources: SourceAssembler,
}

impl HierarchySolver {
    pub fn new(
        model: &Model,
        torus_side: usize,
        k_max: usize,
        step: f64,
    ) -> Result<Self, HierarchyError> {
        if k_max == 0 {
            return Err(HierarchyError::InvalidOrder);
        }
        let limit = model.max_step();
        if !(step > 0.0) || step > limit * (1.0 + 1e-12) {
            return Err(HierarchyError::UnstableStep { step, limit });
        }
        let torus = Torus::new(torus_side, model.dim());
        let propagator = SpectralPropagator::new(model, torus);
        let mut state = vec![vec![0.0; torus.n_sites()]; k_max];
        state[0][torus.origin()] = 1.0;
        Ok(Self {
            torus,
            k_max,
            step,
            time: 0.0,
            half: propagator.factors(step / 2.0),
            full: propagator.factors(step),
            propagator,
            state,
            sources: SourceAssembler::new(model, torus),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Current fields `m_1 .. m_K`.
    pub fn state(&self) -> &[Vec<f64>] {
        &self.state
    }

    fn all_sources(&mut self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (1..=self.k_max)
            .map(|k| {
                let lower: Vec<&[f64]> = y[..k - 1].iter().map(|v| v.as_slice()).collect();
                self.sources.source(k, &lower)
            })
            .collect()
    }

    fn propagate(&self, field: &[f64], factors: &[f64], zero: bool) -> Vec<f64> {
        if zero {
            vec![0.0; field.len()]
        } else {
            self.propagator.apply(field, factors)
        }
    }

    /// One Lawson-RK4 step of size `h`.
    pub fn advance(&mut self) -> Result<(), HierarchyError> {
        let h = self.step;
        let y = self.state.clone();
        let kk = self.k_max;
        let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, z)| x + s * z).collect()
        };

        let n0 = self.all_sources(&y);
        let y_half: Vec<Vec<f64>> = (0..kk).map(|k| self.propagate(&y[k], &self.half, false)).collect();
        let a: Vec<Vec<f64>> = (0..kk)
            .map(|k| self.propagate(&axpy(&y[k], h / 2.0, &n0[k]), &self.half, false))
            .collect();
        let na = self.all_sources(&a);
        let b: Vec<Vec<f64>> = (0..kk).map(|k| axpy(&y_half[k], h / 2.0, &na[k])).collect();
        let nb = self.all_sources(&b);
        let y_full: Vec<Vec<f64>> = (0..kk)
            .map(|k| self.propagate(&y_half[k], &self.half, false))
            .collect();
        let c: Vec<Vec<f64>> = (0..kk)
            .map(|k| axpy(&y_full[k], h, &self.propagate(&nb[k], &self.half, k == 0)))
            .collect();
        let nc = self.all_sources(&c);

        for k in 0..kk {
            let e_n0 = self.propagate(&n0[k], &self.full, k == 0);
            let mid: Vec<f64> = na[k].iter().zip(&nb[k]).map(|(p, q)| p + q).collect();
            let e_mid = self.propagate(&mid, &self.half, k == 0);
            self.state[k] = (0..y_full[k].len())
                .map(|x| y_full[k][x] + h / 6.0 * (e_n0[x] + 2.0 * e_mid[x] + nc[k][x]))
                .collect();
        }
        self.time += h;

        for (k, field) in self.state.iter().enumerate() {
            if let Some((site, &value)) = field
                .iter()
                .enumerate()
                .find(|(_, &v)| v < NEGATIVITY_TOLERANCE || v.is_nan())
            {
                return Err(HierarchyError::NonPositiveDetected {
                    k: k + 1,
                    t: self.time,
                    site,
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }
}

/// `m_k(t_i, x; 0)` for `k = 1..=K` on a uniform grid over the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    torus: Torus,
    k_max: usize,
    grid: TimeGrid,
    /// `values[k-1][i][x]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl MomentTable {
    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Field `m_k(t_i, ·)`.
    pub fn field(&self, k: usize, i: usize) -> &[f64] {
        &self.values[k - 1][i]
    }

    /// `Σ_x m_k(t_i, x)` for every grid time.
    pub fn site_sums(&self, k: usize) -> Vec<f64> {
        self.values[k - 1].iter().map(|f| f.iter().sum()).collect()
    }

    /// Writes `k,t,x_0..x_{d-1},value` rows for every `every`-th grid time.
    pub fn write_csv<W: Write>(&self, mut out: W, every: usize) -> io::Result<()> {
        let every = every.max(1);
        let coords: Vec<String> = (0..self.torus.dim()).map(|a| format!("x{a}")).collect();
        writeln!(out, "k,t,{},value", coords.join(","))?;
        for k in 1..=self.k_max {
            for i in (0..self.grid.len()).step_by(every) {
                let t = self.grid.time(i);
                for (x, v) in self.field(k, i).iter().enumerate() {
                    let c: Vec<String> = self
                        .torus
                        .centered_coords(x)
                        .iter()
                        .map(|c| c.to_string())
                        .collect();
                    writeln!(out, "{k},{t},{},{v:e}", c.join(","))?;
                }
            }
        }
        Ok(())
    }
}

/// A table that can be pushed to longer horizons on the same step.
pub struct ExtendableTable {
    solver: HierarchySolver,
    table: MomentTable,
}

impl ExtendableTable {
    pub fn new(
        model: &Model,
        torus_side: usize,
        k_max: usize,
        step: f64,
    ) -> Result<Self, HierarchyError> {
        let solver = HierarchySolver::new(model, torus_side, k_max, step)?;
        let values = solver.state().iter().map(|f| vec![f.clone()]).collect();
        let table = MomentTable {
            torus: solver.torus(),
            k_max,
            grid: TimeGrid::new(step, 0)?,
            values,
        };
        Ok(Self { solver, table })
    }

    /// Advances until the grid has `intervals` steps.
    pub fn extend_to(&mut self, intervals: usize) -> Result<(), HierarchyError> {
        while self.table.grid.intervals < intervals {
            self.solver.advance()?;
            for (k, f) in self.solver.state().iter().enumerate() {
                self.table.values[k].push(f.clone());
            }
            self.table.grid.intervals += 1;
        }
        Ok(())
    }

    pub fn table(&self) -> &MomentTable {
        &self.table
    }

    pub fn into_table(self) -> MomentTable {
        self.table
    }
}

/// Integrates orders `1..=k_max` over `grid` on the torus of side `torus_side`.
pub fn solve_hierarchy(
    model: &Model,
    torus_side: usize,
    k_max: usize,
    grid: TimeGrid,
) -> Result<MomentTable, HierarchyError> {
    let mut run = ExtendableTable::new(model, torus_side, k_max, grid.step())?;
    run.extend_to(grid.intervals())?;
    Ok(run.into_table())
}

/// Convenience wrapper around [`SourceAssembler::source`].
pub fn source_term(model: &Model, torus: Torus, k: usize, lower: &[&[f64]]) -> Vec<f64> {
    SourceAssembler::new(model, torus).source(k, lower)
}

/// `e^{-Δt} p(t, x, 0)` on `Z^d`.
pub fn m1_exact(model: &Model, t: f64, x: &[i64], quad: Quadrature) -> Result<f64, KernelError> {
    let origin = vec![0i64; x.len()];
    Ok((-model.delta() * t).exp() * kernels::transition_probability(model.walk(), t, x, &origin, quad)?)
}

/// Quadrature weights on `0..=i` for `∫_0^{t_i}` with uniform step `h`:
/// composite Simpson, closed with the 3/8 rule when `i` is odd.
fn integration_weights(i: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; i + 1];
    match i {
        0 => {}
        1 => {
            w[0] = h / 2.0;
            w[1] = h / 2.0;
        }
        _ => {
            let simpson_end = if i % 2 == 0 { i } else { i - 3 };
            for s in (0..simpson_end).step_by(2) {
                w[s] += h / 3.0;
                w[s + 1] += 4.0 * h / 3.0;
                w[s + 2] += h / 3.0;
            }
            if i % 2 == 1 {
                let b = i - 3;
                for (j, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
                    w[b + j] += 3.0 * h / 8.0 * c;
                }
            }
        }
    }
    w
}

/// Sup-norm gap between the stored `m̃_k = m_k / k!` and its Duhamel
/// representation
/// `∫_0^t e^{-Δ(t-s)} Σ_z p_L(t-s, x-z) S̃_k(s, z) ds`,
/// evaluated by direct quadrature on the table grid with the exact torus
/// kernel. For `k = 1` the representation is `e^{-Δt} p_L(t, x)` itself.
pub fn duhamel_residual(k: usize, table: &MomentTable, model: &Model) -> f64 {
    assert!(k >= 1 && k <= table.k_max(), "order {k} not in table");
    let torus = table.torus();
    let grid = table.grid();
    let n = torus.n_sites();
    let kernel = TorusKernel::new(model.walk(), torus);
    let lags: Vec<Vec<f64>> = (0..grid.len())
        .map(|j| {
            let tau = grid.time(j);
            let decay = (-model.delta() * tau).exp();
            kernel.at(tau).into_iter().map(|p| decay * p).collect()
        })
        .collect();
    let scale = factorial(k);
    let stored = |i: usize| -> Vec<f64> { table.field(k, i).iter().map(|v| v / scale).collect() };

    if k == 1 {
        return (0..grid.len())
            .map(|i| {
                stored(i)
                    .iter()
                    .zip(&lags[i])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
    }

    let mut assembler = SourceAssembler::new(model, torus);
    let sources: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| {
            let lower: Vec<&[f64]> = (1..k).map(|j| table.field(j, i)).collect();
            assembler
                .source(k, &lower)
                .into_iter()
                .map(|s| s / scale)
                .collect()
        })
        .collect();
    let neg_coords: Vec<Vec<i64>> = (0..n)
        .map(|z| torus.coords(z).into_iter().map(|c| -c).collect())
        .collect();
    // diff[x][z] = index of x - z
    let diff: Vec<Vec<usize>> = (0..n)
        .map(|x| neg_coords.iter().map(|nz| torus.shift(x, nz)).collect())
        .collect();

    let mut worst: f64 = 0.0;
    for i in 0..grid.len() {
        let w = integration_weights(i, grid.step());
        let mut route = vec![0.0; n];
        for (j, &wj) in w.iter().enumerate() {
            if wj == 0.0 {
                continue;
            }
            let g = &lags[i - j];
            let s = &sources[j];
            for (x, slot) in route.iter_mut().enumerate() {
                let conv: f64 = diff[x].iter().zip(s).map(|(&xz, sz)| g[xz] * sz).sum();
                *slot += wj * conv;
            }
        }
        let gap = stored(i)
            .iter()
            .zip(&route)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    worst
}
