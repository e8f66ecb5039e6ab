//! Model parameters, validation, and the subcriticality gap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{
    validate_step_distribution, EffectiveWalk, KernelError, StepDistribution, StepEntry,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model is not subcritical: delta = {delta} <= 0")]
    NotSubcritical { delta: f64 },
    #[error("splitting rate beta_{l} = {rate} exceeds tail bound {bound}")]
    TailViolation { l: usize, rate: f64, bound: f64 },
    #[error("invalid step distribution for {which}: {source}")]
    InvalidStepDistribution {
        which: &'static str,
        #[source]
        source: KernelError,
    },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("no splitting: offspring mean is undefined when total splitting rate is zero")]
    DivisionByZeroRate,
}

/// Full parameter set as entered by the user.
///
/// `beta[i]` is the rate of splitting into `i + 2` particles, so the list
/// runs `β_2, β_3, …, β_{L_max}`. Rates beyond `L_max` are exactly zero;
/// `(tail_beta, tail_delta)` certifies `β_l ≤ tail_beta · tail_delta^l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub dim: usize,
    pub kappa: f64,
    pub jump: Vec<StepEntry>,
    pub mu: f64,
    #[serde(default)]
    pub beta: Vec<f64>,
    pub offspring: Vec<StepEntry>,
    pub gamma: f64,
    pub tail_beta: f64,
    pub tail_delta: f64,
}

impl ModelParams {
    /// Nearest-neighbour jumps and offspring placement in dimension `dim`.
    pub fn nearest_neighbour(
        dim: usize,
        kappa: f64,
        mu: f64,
        beta: Vec<f64>,
        gamma: f64,
        tail_beta: f64,
        tail_delta: f64,
    ) -> Self {
        let nn = StepDistribution::nearest_neighbour(dim).to_entries();
        Self {
            dim,
            kappa,
            jump: nn.clone(),
            mu,
            beta,
            offspring: nn,
            gamma,
            tail_beta,
            tail_delta,
        }
    }
}

/// `μ - Σ_{l≥2} (l-1) β_l`.
pub fn compute_delta(params: &ModelParams) -> f64 {
    params.mu - spread_rate_of(&params.beta)
}

fn spread_rate_of(beta: &[f64]) -> f64 {
    beta.iter()
        .enumerate()
        .map(|(i, b)| (i + 1) as f64 * b)
        .sum()
}

fn check_rate(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be finite and nonnegative",
        })
    }
}

/// A parameter set that passed every check, with derived quantities.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    dist_a: StepDistribution,
    dist_b: StepDistribution,
    delta: f64,
    walk: EffectiveWalk,
}

/// Checks every model invariant and assembles the effective walk.
pub fn validate(params: &ModelParams) -> Result<Model, ModelError> {
    if params.dim == 0 {
        return Err(ModelError::InvalidParameter {
            name: "dim",
            value: 0.0,
            reason: "must be positive",
        });
    }
    check_rate("kappa", params.kappa)?;
    check_rate("gamma", params.gamma)?;
    if !(params.mu > 0.0 && params.mu.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "mu",
            value: params.mu,
            reason: "must be positive",
        });
    }
    for &b in &params.beta {
        check_rate("beta", b)?;
    }
    if !(params.tail_beta > 0.0 && params.tail_beta.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "tail_beta",
            value: params.tail_beta,
            reason: "must be positive",
        });
    }
    if !(params.tail_delta > 0.0 && params.tail_delta < 1.0) {
        return Err(ModelError::InvalidParameter {
            name: "tail_delta",
            value: params.tail_delta,
            reason: "must lie in (0, 1)",
        });
    }

    let dist_a = validate_step_distribution(params.dim, &params.jump).map_err(|source| {
        ModelError::InvalidStepDistribution {
            which: "jump",
            source,
        }
    })?;
    let dist_b = validate_step_distribution(params.dim, &params.offspring).map_err(|source| {
        ModelError::InvalidStepDistribution {
            which: "offspring",
            source,
        }
    })?;

    let delta = compute_delta(params);
    if !(delta > 0.0) {
        return Err(ModelError::NotSubcritical { delta });
    }

    for (i, &rate) in params.beta.iter().enumerate() {
        let l = i + 2;
        let bound = params.tail_beta * params.tail_delta.powi(l as i32);
        if rate > bound {
            return Err(ModelError::TailViolation { l, rate, bound });
        }
    }

    let walk = EffectiveWalk::new(
        params.kappa,
        spread_rate_of(&params.beta),
        dist_a.clone(),
        dist_b.clone(),
    )
    .expect("rates were checked above");

    let model = Model {
        params: params.clone(),
        dist_a,
        dist_b,
        delta,
        walk,
    };
    debug_assert!(model.branch_total_rate() < model.mu());
    Ok(model)
}

impl Model {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn kappa(&self) -> f64 {
        self.params.kappa
    }

    pub fn mu(&self) -> f64 {
        self.params.mu
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }

    /// `β_l`, zero outside the listed range.
    pub fn beta(&self, l: usize) -> f64 {
        if l < 2 {
            return 0.0;
        }
        self.params.beta.get(l - 2).copied().unwrap_or(0.0)
    }

    /// `(l, β_l)` for every listed `l` with `β_l > 0`.
    pub fn splitting_rates(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.params
            .beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b > 0.0)
            .map(|(i, &b)| (i + 2, b))
    }

    /// Largest offspring count with a listed rate (1 when nothing splits).
    pub fn l_max(&self) -> usize {
        self.params.beta.len() + 1
    }

    pub fn dist_a(&self) -> &StepDistribution {
        &self.dist_a
    }

    pub fn dist_b(&self) -> &StepDistribution {
        &self.dist_b
    }

    /// Subcriticality gap `Δ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn walk(&self) -> &EffectiveWalk {
        &self.walk
    }

    /// `Σ_{l≥2} β_l`.
    pub fn branch_total_rate(&self) -> f64 {
        self.params.beta.iter().sum()
    }

    /// `Σ_{l≥2} (l-1) β_l`.
    pub fn spread_rate(&self) -> f64 {
        self.walk.spread_rate()
    }

    /// Mean number of extra particles per splitting event.
    pub fn offspring_mean(&self) -> Result<f64, ModelError> {
        let total = self.branch_total_rate();
        if total == 0.0 {
            return Err(ModelError::DivisionByZeroRate);
        }
        Ok(self.spread_rate() / total)
    }

    /// Per-particle event rate `κ + μ + Σ β_l`.
    pub fn particle_event_rate(&self) -> f64 {
        self.params.kappa + self.params.mu + self.branch_total_rate()
    }

    /// Largest time step accepted by the RK4 integrators:
    /// `0.1 / (κ + μ + L_max Σ β_l)`.
    pub fn max_step(&self) -> f64 {
        0.1 / (self.params.kappa
            + self.params.mu
            + self.l_max() as f64 * self.branch_total_rate())
    }

    /// `β δ^{L_max+1} / (1 - δ)`: what the tail certificate would allow
    /// beyond the listed rates.
    pub fn certified_tail_mass(&self) -> f64 {
        let d = self.params.tail_delta;
        self.params.tail_beta * d.powi(self.l_max() as i32 + 1) / (1.0 - d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mu: f64, beta: Vec<f64>, tail_beta: f64, tail_delta: f64) -> ModelParams {
        ModelParams::nearest_neighbour(1, 1.0, mu, beta, 0.1, tail_beta, tail_delta)
    }

    #[test]
    fn delta_examples() {
        assert_eq!(compute_delta(&params(1.0, vec![], 1.0, 0.5)), 1.0);
        assert!((compute_delta(&params(1.0, vec![0.3], 1.0, 0.5)) - 0.7).abs() < 1e-15);
        assert!((compute_delta(&params(1.0, vec![0.2, 0.2], 1.0, 0.5)) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn critical_boundary_rejected() {
        let err = validate(&params(0.5, vec![0.5], 10.0, 0.9)).unwrap_err();
        assert_eq!(err, ModelError::NotSubcritical { delta: 0.0 });
    }

    #[test]
    fn tail_certificate() {
        assert!(validate(&params(1.0, vec![0.3], 1.0, 0.6)).is_ok());
        let err = validate(&params(1.0, vec![0.5], 1.0, 0.6)).unwrap_err();
        match err {
            ModelError::TailViolation { l, rate, bound } => {
                assert_eq!(l, 2);
                assert_eq!(rate, 0.5);
                assert!((bound - 0.36).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_step_law_is_reported() {
        let mut p = params(1.0, vec![0.3], 1.0, 0.6);
        p.offspring = vec![StepEntry::new(vec![2], 0.5), StepEntry::new(vec![-2], 0.5)];
        assert!(matches!(
            validate(&p),
            Err(ModelError::InvalidStepDistribution {
                which: "offspring",
                ..
            })
        ));
    }

    #[test]
    fn rates_and_offspring_mean() {
        let m = validate(&params(1.0, vec![0.3], 1.0, 0.6)).unwrap();
        assert!((m.branch_total_rate() - 0.3).abs() < 1e-15);
        assert!((m.offspring_mean().unwrap() - 1.0).abs() < 1e-15);

        let m = validate(&params(1.0, vec![0.2, 0.1], 1.0, 0.6)).unwrap();
        assert!((m.branch_total_rate() - 0.3).abs() < 1e-15);
        assert!((m.spread_rate() - 0.4).abs() < 1e-15);

        let m = validate(&params(1.0, vec![], 1.0, 0.6)).unwrap();
        assert_eq!(m.branch_total_rate(), 0.0);
        assert_eq!(m.offspring_mean(), Err(ModelError::DivisionByZeroRate));
    }

    #[test]
    fn validate_is_idempotent() {
        let m = validate(&params(1.0, vec![0.2, 0.1], 1.0, 0.6)).unwrap();
        let again = validate(m.params()).unwrap();
        assert_eq!(again.delta(), m.delta());
        assert_eq!(again.delta(), compute_delta(m.params()));
        assert!(m.branch_total_rate() < m.mu());
    }

    #[test]
    fn bad_scalars_rejected() {
        assert!(validate(&params(0.0, vec![], 1.0, 0.5)).is_err());
        assert!(validate(&params(1.0, vec![-0.1], 1.0, 0.5)).is_err());
        assert!(validate(&params(1.0, vec![], 1.0, 1.0)).is_err());
        assert!(validate(&params(1.0, vec![], 0.0, 0.5)).is_err());
    }

    #[test]
    fn params_json_roundtrip_rejects_unknown_keys() {
        let p = params(1.0, vec![0.3], 1.0, 0.6);
        let s = serde_json::to_string(&p).unwrap();
        let back: ModelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = s.replacen("\"beta\"", "\"betta\"", 1);
        assert!(serde_json::from_str::<ModelParams>(&bad).is_err());
    }
}
