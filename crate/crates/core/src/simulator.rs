//! Exact event-driven simulation of the particle field on a torus.
//!
//! One aggregated exponential clock drives all events (direct method):
//! immigration at each site with rate `γ`, and for every particle a jump
//! (`κ`), a death (`μ`), or a split into `l` particles (`β_l`). The
//! occupancy is stored sparsely; particles are also kept in a flat list so
//! that a uniformly chosen particle costs O(1).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::StepDistribution;
use crate::model::Model;
use crate::stats::{self, Estimate, Histogram};
use crate::torus::Torus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no event can occur: the field is empty and gamma = 0")]
    DeadlockNoEvents,
    #[error("projected event count {projected:.3e} exceeds budget {budget:.3e}")]
    HorizonTooLarge { projected: f64, budget: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Sparse occupancy of `Z_L^d` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleField {
    torus: Torus,
    occupancy: BTreeMap<usize, u32>,
    particles: Vec<usize>,
    time: f64,
}

impl ParticleField {
    pub fn empty(torus: Torus) -> Self {
        Self {
            torus,
            occupancy: BTreeMap::new(),
            particles: Vec::new(),
            time: 0.0,
        }
    }

    pub fn with_particles(torus: Torus, sites: &[usize]) -> Self {
        let mut f = Self::empty(torus);
        for &s in sites {
            f.add(s);
        }
        f
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn total_particles(&self) -> u64 {
        self.particles.len() as u64
    }

    pub fn count(&self, site: usize) -> u32 {
        self.occupancy.get(&site).copied().unwrap_or(0)
    }

    /// Nonzero counts keyed by flat site index.
    pub fn occupancy(&self) -> &BTreeMap<usize, u32> {
        &self.occupancy
    }

    /// Total equals the sum of counts and no stored count is zero.
    pub fn invariants_hold(&self) -> bool {
        let sum: u64 = self.occupancy.values().map(|&c| c as u64).sum();
        sum == self.total_particles() && self.occupancy.values().all(|&c| c > 0)
    }

    fn add(&mut self, site: usize) {
        *self.occupancy.entry(site).or_insert(0) += 1;
        self.particles.push(site);
    }

    fn remove_particle(&mut self, particle: usize) -> usize {
        let site = self.particles.swap_remove(particle);
        match self.occupancy.get_mut(&site) {
            Some(c) if *c > 1 => *c -= 1,
            _ => {
                self.occupancy.remove(&site);
            }
        }
        site
    }

    fn move_particle(&mut self, particle: usize, to: usize) {
        let from = self.particles[particle];
        if from == to {
            return;
        }
        match self.occupancy.get_mut(&from) {
            Some(c) if *c > 1 => *c -= 1,
            _ => {
                self.occupancy.remove(&from);
            }
        }
        *self.occupancy.entry(to).or_insert(0) += 1;
        self.particles[particle] = to;
    }
}

/// What happened in one step.
#[derive(Debug, Clone, PartialEq)]
pub enum EventTag {
    Immigration { site: usize },
    Jump { from: usize, to: usize },
    Death { site: usize },
    Split { site: usize, offspring: Vec<usize> },
}

impl EventTag {
    /// Change in the number of particles caused by the event.
    pub fn population_change(&self) -> i64 {
        match self {
            EventTag::Immigration { .. } => 1,
            EventTag::Jump { .. } => 0,
            EventTag::Death { .. } => -1,
            EventTag::Split { offspring, .. } => offspring.len() as i64,
        }
    }
}

/// Cumulative table over a finite law, sampled by binary search.
#[derive(Debug, Clone)]
struct CumulativeTable<T> {
    items: Vec<T>,
    cum: Vec<f64>,
}

impl<T> CumulativeTable<T> {
    fn new(pairs: impl IntoIterator<Item = (T, f64)>) -> Self {
        let mut items = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for (item, w) in pairs {
            acc += w;
            items.push(item);
            cum.push(acc);
        }
        Self { items, cum }
    }

    fn total(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> &T {
        let u = rng.random::<f64>() * self.total();
        let i = self.cum.partition_point(|&c| c <= u).min(self.items.len() - 1);
        &self.items[i]
    }
}

fn displacement_table(dist: &StepDistribution) -> CumulativeTable<Vec<i64>> {
    CumulativeTable::new(dist.entries().iter().map(|(v, w)| (v.clone(), *w)))
}

/// Transition mechanics of one model on one torus.
#[derive(Debug, Clone)]
pub struct Dynamics<'m> {
    model: &'m Model,
    torus: Torus,
    jumps: CumulativeTable<Vec<i64>>,
    placements: CumulativeTable<Vec<i64>>,
    split_sizes: CumulativeTable<usize>,
}

impl<'m> Dynamics<'m> {
    pub fn new(model: &'m Model, torus: Torus) -> Self {
        assert_eq!(model.dim(), torus.dim(), "torus dimension must match model");
        Self {
            model,
            torus,
            jumps: displacement_table(model.dist_a()),
            placements: displacement_table(model.dist_b()),
            split_sizes: CumulativeTable::new(model.splitting_rates()),
        }
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    /// `n (κ + μ + Σ β_l) + L^d γ`.
    pub fn total_event_rate(&self, field: &ParticleField) -> f64 {
        total_event_rate(field, self.model)
    }

    /// Draws the waiting time to the next event and advances the clock.
    fn wait<R: Rng>(&self, field: &ParticleField, rng: &mut R) -> Result<f64, SimError> {
        let rate = self.total_event_rate(field);
        if rate <= 0.0 {
            return Err(SimError::DeadlockNoEvents);
        }
        let e: f64 = rng.sample(Exp1);
        Ok(e / rate)
    }

    /// Chooses and applies one event (time is not touched).
    fn fire<R: Rng>(&self, field: &mut ParticleField, rng: &mut R) -> EventTag {
        let immigration = self.torus.n_sites() as f64 * self.model.gamma();
        let per_particle = self.model.particle_event_rate();
        let n = field.particles.len();
        let u = rng.random::<f64>() * (immigration + n as f64 * per_particle);
        if u < immigration || n == 0 {
            let site = rng.random_range(0..self.torus.n_sites());
            field.add(site);
            return EventTag::Immigration { site };
        }
        let particle = rng.random_range(0..n);
        let site = field.particles[particle];
        let v = rng.random::<f64>() * per_particle;
        let kappa = self.model.kappa();
        if v < kappa {
            let to = self.torus.shift(site, self.jumps.sample(rng));
            field.move_particle(particle, to);
            EventTag::Jump { from: site, to }
        } else if v < kappa + self.model.mu() || self.split_sizes.items.is_empty() {
            field.remove_particle(particle);
            EventTag::Death { site }
        } else {
            let l = *self.split_sizes.sample(rng);
            let offspring: Vec<usize> = (1..l)
                .map(|_| self.torus.shift(site, self.placements.sample(rng)))
                .collect();
            for &o in &offspring {
                field.add(o);
            }
            EventTag::Split { site, offspring }
        }
    }

    /// One Gillespie step: returns the elapsed time and the event.
    pub fn step<R: Rng>(
        &self,
        field: &mut ParticleField,
        rng: &mut R,
    ) -> Result<(f64, EventTag), SimError> {
        let dt = self.wait(field, rng)?;
        field.time += dt;
        let tag = self.fire(field, rng);
        Ok((dt, tag))
    }
}

/// `n (κ + μ + Σ β_l) + L^d γ`.
pub fn total_event_rate(field: &ParticleField, model: &Model) -> f64 {
    field.total_particles() as f64 * model.particle_event_rate()
        + field.torus().n_sites() as f64 * model.gamma()
}

fn default_event_budget() -> f64 {
    1e8
}

/// Run parameters for one trajectory (or an ensemble of them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub torus_side: usize,
    pub t_max: f64,
    pub record_times: Vec<f64>,
    /// Observed sites; empty means the origin only.
    #[serde(default)]
    pub observe_sites: Vec<Vec<i64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replicate_index: u64,
    /// Particles present at time zero (default: none).
    #[serde(default)]
    pub initial_particles: Vec<Vec<i64>>,
    /// Upper limit on the expected number of events per trajectory.
    #[serde(default = "default_event_budget")]
    pub event_budget: f64,
}

impl SimConfig {
    pub fn new(torus_side: usize, record_times: Vec<f64>, seed: u64) -> Self {
        let t_max = record_times.iter().copied().fold(0.0, f64::max);
        Self {
            torus_side,
            t_max,
            record_times,
            observe_sites: Vec::new(),
            seed,
            replicate_index: 0,
            initial_particles: Vec::new(),
            event_budget: default_event_budget(),
        }
    }

    pub fn torus(&self, dim: usize) -> Torus {
        Torus::new(self.torus_side, dim)
    }

    pub fn observed(&self, dim: usize) -> Vec<Vec<i64>> {
        if self.observe_sites.is_empty() {
            vec![vec![0; dim]]
        } else {
            self.observe_sites.clone()
        }
    }

    pub fn check(&self, dim: usize) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.torus_side == 0 {
            return bad("torus_side must be positive".into());
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max = {} must be finite and nonnegative", self.t_max));
        }
        if self.record_times.windows(2).any(|w| w[1] < w[0]) {
            return bad("record_times must be sorted".into());
        }
        if self
            .record_times
            .iter()
            .any(|&t| !(0.0..=self.t_max).contains(&t))
        {
            return bad("record_times must lie in [0, t_max]".into());
        }
        for s in self.observe_sites.iter().chain(&self.initial_particles) {
            if s.len() != dim {
                return bad(format!("site {s:?} does not have dimension {dim}"));
            }
        }
        Ok(())
    }
}

/// Observation at one record time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    /// Counts at the observed sites, in config order.
    pub counts: Vec<u32>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub replicate_index: u64,
    pub records: Vec<Record>,
    pub events: u64,
}

/// Random stream for replicate `replicate` of base seed `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Simulates one trajectory from the config's initial particles.
pub fn simulate(model: &Model, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.check(model.dim())?;
    let torus = cfg.torus(model.dim());
    let initial: Vec<usize> = cfg.initial_particles.iter().map(|s| torus.index(s)).collect();

    let n0 = initial.len() as f64;
    let sites = torus.n_sites() as f64;
    let mean_population = n0 + sites * model.gamma() / model.delta();
    let projected =
        cfg.t_max * (sites * model.gamma() + mean_population * model.particle_event_rate());
    if projected > cfg.event_budget {
        return Err(SimError::HorizonTooLarge {
            projected,
            budget: cfg.event_budget,
        });
    }

    let dynamics = Dynamics::new(model, torus);
    let observed: Vec<usize> = cfg
        .observed(model.dim())
        .iter()
        .map(|s| torus.index(s))
        .collect();
    let mut rng = replicate_rng(cfg.seed, cfg.replicate_index);
    let mut field = ParticleField::with_particles(torus, &initial);
    let mut records = Vec::with_capacity(cfg.record_times.len());
    let mut events = 0u64;

    let snapshot = |field: &ParticleField, t: f64| Record {
        t,
        counts: observed.iter().map(|&s| field.count(s)).collect(),
        total: field.total_particles(),
    };

    let mut pending = cfg.record_times.iter().copied().peekable();
    while pending.peek().is_some() {
        let dt = match dynamics.wait(&field, &mut rng) {
            Ok(dt) => dt,
            // absorbing: nothing will ever change again
            Err(SimError::DeadlockNoEvents) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let t_event = field.time + dt;
        while let Some(&t) = pending.peek() {
            if t < t_event {
                records.push(snapshot(&field, t));
                pending.next();
            } else {
                break;
            }
        }
        if pending.peek().is_none() {
            break;
        }
        field.time = t_event;
        dynamics.fire(&mut field, &mut rng);
        events += 1;
    }

    Ok(Trajectory {
        replicate_index: cfg.replicate_index,
        records,
        events,
    })
}

/// Runs `replicates` independent trajectories; replicate `r` uses stream
/// `r` of `cfg.seed`. Output order is replicate order regardless of how the
/// work was scheduled.
pub fn run_replicates(
    model: &Model,
    cfg: &SimConfig,
    replicates: u64,
) -> Result<Vec<Trajectory>, SimError> {
    cfg.check(model.dim())?;
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.replicate_index = r;
            simulate(model, &c)
        })
        .collect()
}

/// Ensemble summary for one observed site at one record time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteStats {
    pub site: Vec<i64>,
    pub histogram: Histogram,
    pub mean: f64,
    pub variance: f64,
    /// `m̂_1 .. m̂_4`.
    pub factorial_moments: Vec<Estimate>,
    /// Factorial cumulants `χ̂_1, χ̂_2`.
    pub cumulants: Vec<Estimate>,
}

impl SiteStats {
    pub fn from_samples(site: Vec<i64>, samples: &[u64]) -> Self {
        let (c1, c2) = stats::factorial_cumulants_2(samples);
        Self {
            site,
            histogram: Histogram::from_samples(samples.iter().copied()),
            mean: c1.value,
            variance: stats::sample_variance(samples),
            factorial_moments: (1..=4).map(|k| stats::factorial_moment(samples, k)).collect(),
            cumulants: vec![c1, c2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub t: f64,
    pub sites: Vec<SiteStats>,
    pub total_population: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub replicates: u64,
    pub seed: u64,
    pub times: Vec<TimeStats>,
}

impl EnsembleStats {
    pub fn from_trajectories(cfg: &SimConfig, dim: usize, trajectories: &[Trajectory]) -> Self {
        let sites = cfg.observed(dim);
        let times = cfg
            .record_times
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                let site_stats = sites
                    .iter()
                    .enumerate()
                    .map(|(si, site)| {
                        let samples: Vec<u64> = trajectories
                            .iter()
                            .map(|tr| tr.records[ti].counts[si] as u64)
                            .collect();
                        SiteStats::from_samples(site.clone(), &samples)
                    })
                    .collect();
                let totals: Vec<u64> = trajectories.iter().map(|tr| tr.records[ti].total).collect();
                TimeStats {
                    t,
                    sites: site_stats,
                    total_population: stats::factorial_moment(&totals, 1),
                }
            })
            .collect();
        Self {
            replicates: trajectories.len() as u64,
            seed: cfg.seed,
            times,
        }
    }

    /// Stats of the first observed site at record index `ti`.
    pub fn primary(&self, ti: usize) -> &SiteStats {
        &self.times[ti].sites[0]
    }
}

/// Ensemble statistics over `replicates ≥ 2` independent trajectories.
pub fn run_ensemble(
    model: &Model,
    cfg: &SimConfig,
    replicates: u64,
) -> Result<EnsembleStats, SimError> {
    if replicates < 2 {
        return Err(SimError::InvalidConfig(format!(
            "an ensemble needs at least 2 replicates, got {replicates}"
        )));
    }
    let trajectories = run_replicates(model, cfg, replicates)?;
    Ok(EnsembleStats::from_trajectories(cfg, model.dim(), &trajectories))
}

/// Total-variation distance between two empirical laws.
pub fn empirical_distribution_distance(a: &Histogram, b: &Histogram) -> f64 {
    stats::total_variation(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, ModelParams};

    fn model(kappa: f64, mu: f64, beta: Vec<f64>, gamma: f64) -> Model {
        validate(&ModelParams::nearest_neighbour(
            1, kappa, mu, beta, gamma, 1.0, 0.9,
        ))
        .unwrap()
    }

    #[test]
    fn event_rate_examples() {
        let t = Torus::new(10, 1);
        let m = model(1.0, 1.0, vec![0.3], 0.0);
        assert_eq!(total_event_rate(&ParticleField::empty(t), &m), 0.0);
        let m = model(1.0, 1.0, vec![0.3], 0.1);
        assert!((total_event_rate(&ParticleField::empty(t), &m) - 1.0).abs() < 1e-12);
        let m = model(1.0, 1.0, vec![0.3], 0.0);
        let f = ParticleField::with_particles(t, &[0, 0, 3]);
        assert!((total_event_rate(&f, &m) - 6.9).abs() < 1e-12);
    }

    #[test]
    fn empty_field_without_immigration_deadlocks() {
        let m = model(1.0, 1.0, vec![0.3], 0.0);
        let d = Dynamics::new(&m, Torus::new(8, 1));
        let mut f = ParticleField::empty(Torus::new(8, 1));
        let mut rng = replicate_rng(1, 0);
        assert_eq!(d.step(&mut f, &mut rng), Err(SimError::DeadlockNoEvents));
    }

    #[test]
    fn pure_death_empties_the_field() {
        let m = model(0.0, 1.0, vec![], 0.0);
        let t = Torus::new(8, 1);
        let d = Dynamics::new(&m, t);
        let mut f = ParticleField::with_particles(t, &[3]);
        let mut rng = replicate_rng(7, 0);
        let (dt, tag) = d.step(&mut f, &mut rng).unwrap();
        assert!(dt > 0.0);
        assert_eq!(tag, EventTag::Death { site: 3 });
        assert_eq!(f.total_particles(), 0);
        assert!(f.occupancy().is_empty());
    }

    #[test]
    fn accounting_and_invariants_over_many_events() {
        let m = validate(&ModelParams::nearest_neighbour(
            2,
            1.0,
            1.0,
            vec![0.1, 0.1, 0.05],
            0.2,
            1.0,
            0.9,
        ))
        .unwrap();
        let t = Torus::new(6, 2);
        let d = Dynamics::new(&m, t);
        let mut f = ParticleField::empty(t);
        let mut rng = replicate_rng(11, 3);
        for _ in 0..20_000 {
            let before = f.total_particles() as i64;
            let (_, tag) = d.step(&mut f, &mut rng).unwrap();
            assert_eq!(f.total_particles() as i64 - before, tag.population_change());
            if let EventTag::Split { offspring, .. } = &tag {
                assert!((1..=3).contains(&offspring.len()));
            }
        }
        assert!(f.invariants_hold());
    }

    #[test]
    fn no_immigration_records_zeros() {
        let m = model(1.0, 1.0, vec![0.3], 0.0);
        let cfg = SimConfig::new(8, vec![0.0, 1.0, 5.0], 3);
        let tr = simulate(&m, &cfg).unwrap();
        assert_eq!(tr.records.len(), 3);
        assert!(tr.records.iter().all(|r| r.total == 0 && r.counts == vec![0]));
        assert_eq!(tr.events, 0);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let m = model(1.0, 1.0, vec![0.3], 0.2);
        let mut cfg = SimConfig::new(8, vec![0.5, 1.0, 4.0], 99);
        cfg.replicate_index = 5;
        assert_eq!(simulate(&m, &cfg).unwrap(), simulate(&m, &cfg).unwrap());
        let mut other = cfg.clone();
        other.replicate_index = 6;
        assert_ne!(simulate(&m, &cfg).unwrap(), simulate(&m, &other).unwrap());
    }

    #[test]
    fn ensembles_are_reproducible_and_point_mass_without_immigration() {
        let m = model(1.0, 1.0, vec![0.3], 0.0);
        let cfg = SimConfig::new(8, vec![1.0, 2.0], 4);
        let a = run_ensemble(&m, &cfg, 2).unwrap();
        for ts in &a.times {
            assert_eq!(ts.sites[0].histogram.counts(), &[2]);
        }
        let m = model(1.0, 1.0, vec![0.3], 0.3);
        let a = run_ensemble(&m, &cfg, 50).unwrap();
        let b = run_ensemble(&m, &cfg, 50).unwrap();
        assert_eq!(a, b);
        assert!(run_ensemble(&m, &cfg, 1).is_err());
    }

    #[test]
    fn horizon_budget_is_enforced() {
        let m = model(1.0, 1.0, vec![0.3], 1.0);
        let mut cfg = SimConfig::new(64, vec![100.0], 1);
        cfg.event_budget = 1e3;
        assert!(matches!(
            simulate(&m, &cfg),
            Err(SimError::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn config_checks() {
        let mut cfg = SimConfig::new(8, vec![2.0, 1.0], 1);
        cfg.t_max = 2.0;
        assert!(cfg.check(1).is_err());
        let mut cfg = SimConfig::new(8, vec![1.0], 1);
        cfg.observe_sites = vec![vec![0, 0]];
        assert!(cfg.check(1).is_err());
    }
}
