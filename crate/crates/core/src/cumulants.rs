//! Factorial cumulants of the population `N(t, 0)` at the origin.
//!
//! Immigrants arrive as independent Poisson streams, so the factorial
//! cumulants of `N(t, 0)` are `χ_l = γ ∫_0^t Σ_x m_l(s, x; 0) ds`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::bounds::{self, BoundCertificate, BoundsError, OperationalConstant};
use crate::hierarchy::{ExtendableTable, HierarchyError, MomentTable, TimeGrid};
use crate::model::Model;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CumulantError {
    #[error("table ends at t={horizon} but t={requested} was requested")]
    TableHorizonTooShort { requested: f64, horizon: f64 },
    #[error("order {requested} not available (table has K={available})")]
    OrderUnavailable { requested: usize, available: usize },
    #[error("no convergence to relative tolerance {tol} by horizon {horizon}")]
    NoConvergenceWithinBudget { tol: f64, horizon: f64 },
    #[error("χ_{l} = {value:e} exceeds c^l l! γ/Δ = {bound:e} with c = {c}")]
    BoundViolated {
        l: usize,
        value: f64,
        bound: f64,
        c: f64,
    },
    #[error("argument out of range: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

/// A finite time or the steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeLabel {
    At(f64),
    Infinity,
}

impl Serialize for TimeLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TimeLabel::At(t) => s.serialize_f64(*t),
            TimeLabel::Infinity => s.serialize_str("infinity"),
        }
    }
}

impl<'de> Deserialize<'de> for TimeLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(TimeLabel::At(t)),
            Raw::Str(s) if s == "infinity" => Ok(TimeLabel::Infinity),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"infinity\", got {s:?}"
            ))),
        }
    }
}

/// `m_1..m_L` (with `m_0 = 1` implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorialMomentVector {
    pub values: Vec<f64>,
}

/// `χ_1..χ_L` at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulantVector {
    pub order: usize,
    pub time: TimeLabel,
    pub values: Vec<f64>,
}

/// All `(j_1..j_l)` with `Σ i j_i = l`.
pub fn partitions(l: usize) -> Vec<Vec<usize>> {
    fn rec(part: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if part == 0 {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for j in 0..=left / part {
            cur[part - 1] = j;
            rec(part - 1, left - j * part, cur, out);
        }
        cur[part - 1] = 0;
    }
    let mut out = Vec::new();
    if l > 0 {
        rec(l, l, &mut vec![0; l], &mut out);
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|j| j as f64).product()
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite input")
}

fn exact_factorial(n: usize) -> BigRational {
    BigRational::from_integer((1..=n).map(BigInt::from).product())
}

/// `Π_i (x_i / i!)^{j_i} / j_i!` in exact arithmetic.
fn partition_product(scaled: &[BigRational], js: &[usize]) -> BigRational {
    let mut term = BigRational::one();
    for (i, &j) in js.iter().enumerate() {
        if j > 0 {
            term *= scaled[i].pow(j as i32) / exact_factorial(j);
        }
    }
    term
}

fn scaled_exact(values: &[f64]) -> Vec<BigRational> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| exact(v) / exact_factorial(i + 1))
        .collect()
}

/// `χ_l = l! Σ (-1)^{J-1} (J-1)! / Π j_i! · Π (m_i / i!)^{j_i}`, `J = Σ j_i`.
/// Evaluated exactly in rationals and rounded once: the alternating terms
/// otherwise cancel most of the available digits at high order.
pub fn moments_to_cumulants(m: &[f64]) -> Vec<f64> {
    let scaled = scaled_exact(m);
    (1..=m.len())
        .map(|l| {
            let mut acc = BigRational::zero();
            for js in partitions(l) {
                let total: usize = js.iter().sum();
                let term = exact_factorial(total - 1) * partition_product(&scaled, &js);
                if total % 2 == 1 {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            (acc * exact_factorial(l)).to_f64().unwrap_or(f64::NAN)
        })
        .collect()
}

/// `m_l = l! Σ 1 / Π j_i! · Π (χ_i / i!)^{j_i}`, exact up to the final rounding.
pub fn cumulants_to_moments(chi: &[f64]) -> Vec<f64> {
    let scaled = scaled_exact(chi);
    (1..=chi.len())
        .map(|l| {
            let acc: BigRational = partitions(l)
                .iter()
                .map(|js| partition_product(&scaled, js))
                .sum();
            (acc * exact_factorial(l)).to_f64().unwrap_or(f64::NAN)
        })
        .collect()
}

/// `∫_a^b` of the quintic through the six grid points around interval `i`
/// (fewer on a short grid), by three-point Gauss–Legendre.
fn local_integral(values: &[f64], h: f64, i: usize, a: f64, b: f64) -> f64 {
    let n = values.len();
    let width = n.min(6);
    let start = i.saturating_sub(2).min(n - width);
    let nodes: Vec<f64> = (start..start + width).map(|j| j as f64 * h).collect();
    let interp = |t: f64| -> f64 {
        (0..width)
            .map(|p| {
                let mut w = values[start + p];
                for q in 0..width {
                    if q != p {
                        w *= (t - nodes[q]) / (nodes[p] - nodes[q]);
                    }
                }
                w
            })
            .sum()
    };
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let g = half * 0.6f64.sqrt();
    half * (5.0 * interp(mid - g) + 8.0 * interp(mid) + 5.0 * interp(mid + g)) / 9.0
}

/// `∫_0^{t_i} f` for every grid index `i`, `f` sampled on a uniform grid.
pub fn cumulative_integral(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 0..values.len().saturating_sub(1) {
        acc += local_integral(values, h, i, i as f64 * h, (i + 1) as f64 * h);
        out.push(acc);
    }
    out
}

fn check_order(table: &MomentTable, l: usize) -> Result<(), CumulantError> {
    if l == 0 || l > table.k_max() {
        return Err(CumulantError::OrderUnavailable {
            requested: l,
            available: table.k_max(),
        });
    }
    Ok(())
}

/// `χ_l(N(t_i, 0))` at every grid time of the table.
pub fn chi_series(model: &Model, l: usize, table: &MomentTable) -> Result<Vec<f64>, CumulantError> {
    check_order(table, l)?;
    let sums = table.site_sums(l);
    Ok(cumulative_integral(&sums, table.grid().step())
        .into_iter()
        .map(|v| model.gamma() * v)
        .collect())
}

/// `χ_l(N(t, 0))` for any `t` inside the table's horizon.
pub fn chi_total(model: &Model, l: usize, t: f64, table: &MomentTable) -> Result<f64, CumulantError> {
    check_order(table, l)?;
    let grid = table.grid();
    let horizon = grid.horizon();
    if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
        return Err(CumulantError::TableHorizonTooShort {
            requested: t,
            horizon,
        });
    }
    let t = t.min(horizon);
    let h = grid.step();
    let sums = table.site_sums(l);
    let full = ((t / h).floor() as usize).min(grid.intervals());
    let mut acc = cumulative_integral(&sums[..=full], h)[full];
    if full < grid.intervals() && t > full as f64 * h {
        acc += local_integral(&sums, h, full, full as f64 * h, t);
    }
    Ok(model.gamma() * acc)
}

/// Settings for [`steady_state_cumulants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadyStateOptions {
    pub torus_side: usize,
    /// First horizon, in units of `1/Δ`.
    pub initial_horizon: f64,
    /// Largest horizon tried, in units of `1/Δ`.
    pub max_horizon: f64,
    /// Repeat the final horizon on a torus of twice the side.
    pub compare_double_side: bool,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            torus_side: 32,
            initial_horizon: 8.0,
            max_horizon: 1024.0,
            compare_double_side: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub cumulants: CumulantVector,
    /// Horizon at which the doubling test passed.
    pub horizon: f64,
    /// Values at half that horizon.
    pub previous: Vec<f64>,
    pub constant: OperationalConstant,
    /// `χ_l(L) - χ_l(2L)` at the final horizon, when requested.
    pub side_delta: Option<Vec<f64>>,
}

fn chi_at_end(model: &Model, table: &MomentTable, l_max: usize) -> Result<Vec<f64>, CumulantError> {
    (1..=l_max)
        .map(|l| Ok(*chi_series(model, l, table)?.last().unwrap()))
        .collect()
}

/// Doubles the horizon until every `χ_l`, `l ≤ l_max`, moves by at most
/// `tol` relative, then checks `χ_l ≤ c^l l! γ/Δ` with the operational `c`.
pub fn steady_state_cumulants(
    model: &Model,
    l_max: usize,
    tol: f64,
    options: SteadyStateOptions,
) -> Result<SteadyState, CumulantError> {
    if l_max == 0 || !(tol > 0.0) {
        return Err(CumulantError::InvalidArgument(format!(
            "l_max={l_max}, tol={tol}"
        )));
    }
    let delta = model.delta();
    let first = TimeGrid::covering(options.initial_horizon / delta, model.max_step())?;
    let mut run = ExtendableTable::new(model, options.torus_side, l_max, first.step())?;
    run.extend_to(first.intervals())?;
    let mut intervals = first.intervals();
    let mut previous = chi_at_end(model, run.table(), l_max)?;
    loop {
        let horizon = 2.0 * intervals as f64 * first.step();
        if horizon > options.max_horizon / delta * (1.0 + 1e-12) {
            return Err(CumulantError::NoConvergenceWithinBudget {
                tol,
                horizon: intervals as f64 * first.step(),
            });
        }
        intervals *= 2;
        run.extend_to(intervals)?;
        let current = chi_at_end(model, run.table(), l_max)?;
        let settled = current
            .iter()
            .zip(&previous)
            .all(|(c, p)| (c - p).abs() <= tol * c.abs());
        if settled {
            let table = run.into_table();
            let cert = BoundCertificate::new(model, l_max)?;
            let constant = bounds::operational_constant(&table, &cert, model)?;
            for (idx, &value) in current.iter().enumerate() {
                let l = idx + 1;
                let bound =
                    constant.c.powi(l as i32) * factorial(l) * model.gamma() / delta;
                if value > bound * (1.0 + bounds::BOUND_SLACK) {
                    return Err(CumulantError::BoundViolated {
                        l,
                        value,
                        bound,
                        c: constant.c,
                    });
                }
            }
            let side_delta = if options.compare_double_side {
                let grid = TimeGrid::new(first.step(), intervals)?;
                let wide = crate::hierarchy::solve_hierarchy(
                    model,
                    options.torus_side * 2,
                    l_max,
                    grid,
                )?;
                let other = chi_at_end(model, &wide, l_max)?;
                Some(current.iter().zip(&other).map(|(a, b)| a - b).collect())
            } else {
                None
            };
            return Ok(SteadyState {
                cumulants: CumulantVector {
                    order: l_max,
                    time: TimeLabel::Infinity,
                    values: current,
                },
                horizon: table.grid().horizon(),
                previous,
                constant,
                side_delta,
            });
        }
        previous = current;
    }
}

/// `ψ_z(t)`: generating function of a single particle's total progeny,
/// `ψ' = Σ_l β_l ψ^l - (Σ_l β_l + μ) ψ + μ`, `ψ(0) = z`.
pub fn gw_generating_function(model: &Model, z: f64, t: f64) -> Result<f64, CumulantError> {
    if !(0.0..=1.0).contains(&z) {
        return Err(CumulantError::InvalidArgument(format!("z = {z} not in [0, 1]")));
    }
    if !(t >= 0.0) {
        return Err(CumulantError::InvalidArgument(format!("t = {t} is negative")));
    }
    Ok(gw_integrate(model, z, t))
}

/// RK4 on the generating-function ODE with the hierarchy step policy. Any
/// real `z` is accepted so that derivatives at `z = 1` can be centred.
fn gw_integrate(model: &Model, z: f64, t: f64) -> f64 {
    if t == 0.0 {
        return z;
    }
    let rates: Vec<(usize, f64)> = model.splitting_rates().collect();
    let total = model.branch_total_rate() + model.mu();
    let mu = model.mu();
    let rhs = |psi: f64| -> f64 {
        rates.iter().map(|&(l, b)| b * psi.powi(l as i32)).sum::<f64>() - total * psi + mu
    };
    let steps = (t / model.max_step()).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut psi = z;
    for _ in 0..steps {
        let k1 = rhs(psi);
        let k2 = rhs(psi + 0.5 * h * k1);
        let k3 = rhs(psi + 0.5 * h * k2);
        let k4 = rhs(psi + h * k3);
        psi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    psi
}

/// `∂_z ψ_z(t)` at `z = 1` by a central difference of width `2h`.
pub fn gw_mean(model: &Model, t: f64, h: f64) -> f64 {
    (gw_integrate(model, 1.0 + h, t) - gw_integrate(model, 1.0 - h, t)) / (2.0 * h)
}

/// `∂²_z ψ_z(t)` at `z = 1` by a central second difference.
pub fn gw_second_factorial_moment(model: &Model, t: f64, h: f64) -> f64 {
    (gw_integrate(model, 1.0 + h, t) - 2.0 * gw_integrate(model, 1.0, t)
        + gw_integrate(model, 1.0 - h, t))
        / (h * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_counts() {
        let counts: Vec<usize> = (1..=8).map(|l| partitions(l).len()).collect();
        assert_eq!(counts, vec![1, 2, 3, 5, 7, 11, 15, 22]);
        for l in 1..=6 {
            for p in partitions(l) {
                assert_eq!(p.iter().enumerate().map(|(i, j)| (i + 1) * j).sum::<usize>(), l);
            }
        }
    }

    #[test]
    fn low_order_transforms() {
        let m = [1.5, 4.0, 3.0];
        let c = moments_to_cumulants(&m);
        assert_eq!(c[0], 1.5);
        assert!((c[1] - (4.0 - 2.25)).abs() < 1e-14);
        let back = cumulants_to_moments(&[2.0, 0.5]);
        assert!((back[1] - (0.5 + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn cumulative_integral_exact_on_quintics() {
        let h = 0.25;
        let f: Vec<f64> = (0..9).map(|i| (i as f64 * h).powi(5) - i as f64 * h).collect();
        let cum = cumulative_integral(&f, h);
        for (i, v) in cum.iter().enumerate() {
            let t = i as f64 * h;
            assert!((v - (t.powi(6) / 6.0 - t * t / 2.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn time_label_json() {
        let v = CumulantVector {
            order: 1,
            time: TimeLabel::Infinity,
            values: vec![0.5],
        };
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"{"order":1,"time":"infinity","values":[0.5]}"#);
        let back: CumulantVector = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
        let at: CumulantVector =
            serde_json::from_str(r#"{"order":1,"time":2.5,"values":[0.5]}"#).unwrap();
        assert_eq!(at.time, TimeLabel::At(2.5));
        assert!(serde_json::from_str::<CumulantVector>(r#"{"order":1,"time":"soon","values":[]}"#).is_err());
    }
}
