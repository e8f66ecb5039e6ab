use bifield::kernels::StepEntry;
use bifield::simulator::{
    empirical_distribution_distance, replicate_rng, run_ensemble, run_replicates, simulate,
    total_event_rate, Dynamics, EventTag, ParticleField, SimConfig, SimError,
};
use bifield::stats::{chi_square_fit, Histogram};
use bifield::{validate, Model, ModelParams, Torus};
use proptest::prelude::*;

fn model(kappa: f64, mu: f64, beta: Vec<f64>, gamma: f64) -> Model {
    validate(&ModelParams::nearest_neighbour(1, kappa, mu, beta, gamma, 1.0, 0.6)).unwrap()
}

#[test]
fn event_rate_examples() {
    let torus = Torus::new(10, 1);
    assert_eq!(total_event_rate(&ParticleField::empty(torus), &model(1.0, 1.0, vec![], 0.0)), 0.0);
    let r = total_event_rate(&ParticleField::empty(torus), &model(1.0, 1.0, vec![], 0.1));
    assert!((r - 1.0).abs() < 1e-15);
    let field = ParticleField::with_particles(torus, &[0, 0, 3]);
    let r = total_event_rate(&field, &model(1.0, 1.0, vec![0.3], 0.0));
    assert!((r - 6.9).abs() < 1e-12);
}

#[test]
fn deadlock_and_pure_death() {
    let dead = model(1.0, 1.0, vec![], 0.0);
    let torus = Torus::new(8, 1);
    let mut rng = replicate_rng(1, 0);
    let dynamics = Dynamics::new(&dead, torus);
    let mut field = ParticleField::empty(torus);
    assert_eq!(dynamics.step(&mut field, &mut rng).unwrap_err(), SimError::DeadlockNoEvents);

    let frozen = model(0.0, 1.0, vec![], 0.0);
    let dynamics = Dynamics::new(&frozen, torus);
    let mut field = ParticleField::with_particles(torus, &[4]);
    let (_, tag) = dynamics.step(&mut field, &mut rng).unwrap();
    assert_eq!(tag, EventTag::Death { site: 4 });
    assert_eq!(field.total_particles(), 0);
}

#[test]
fn split_placement_follows_offspring_law() {
    let mut p = ModelParams::nearest_neighbour(1, 0.0, 1.0, vec![0.3], 0.0, 1.0, 0.6);
    p.offspring = vec![
        StepEntry::new(vec![-2], 0.2),
        StepEntry::new(vec![-1], 0.3),
        StepEntry::new(vec![1], 0.3),
        StepEntry::new(vec![2], 0.2),
    ];
    let m = validate(&p).unwrap();
    let torus = Torus::new(16, 1);
    let dynamics = Dynamics::new(&m, torus);
    let mut rng = replicate_rng(7, 0);
    let mut bins = [0u64; 4];
    let mut splits = 0;
    while splits < 100_000 {
        let mut field = ParticleField::with_particles(torus, &[0]);
        if let (_, EventTag::Split { site, offspring }) = dynamics.step(&mut field, &mut rng).unwrap() {
            assert_eq!(site, 0);
            assert_eq!(offspring.len(), 1);
            assert_eq!(field.count(0), 1, "parent stays");
            assert_eq!(field.total_particles(), 2);
            let v = torus.centered_coords(offspring[0])[0];
            bins[match v {
                -2 => 0,
                -1 => 1,
                1 => 2,
                2 => 3,
                _ => panic!("displacement {v}"),
            }] += 1;
            splits += 1;
        }
    }
    let fit = chi_square_fit(&[0.2, 0.3, 0.3, 0.2], &Histogram::from_counts(bins.to_vec()), 5.0).unwrap();
    assert!(fit.p_value > 0.01, "p = {}", fit.p_value);
}

#[test]
fn no_immigration_means_zero_counts() {
    let m = model(1.0, 1.0, vec![0.3], 0.0);
    let tr = simulate(&m, &SimConfig::new(8, vec![0.0, 1.0, 5.0], 3)).unwrap();
    assert!(tr.records.iter().all(|r| r.total == 0 && r.counts == vec![0]));
}

#[test]
fn single_particle_mean_decays_at_the_gap() {
    let m = model(1.0, 1.0, vec![0.2, 0.1], 0.0);
    let times = vec![0.5, 1.0, 2.0, 4.0];
    let mut cfg = SimConfig::new(16, times.clone(), 11);
    cfg.initial_particles = vec![vec![0]];
    let runs = run_replicates(&m, &cfg, 20_000).unwrap();
    for (ti, t) in times.iter().enumerate() {
        let totals: Vec<f64> = runs.iter().map(|r| r.records[ti].total as f64).collect();
        let n = totals.len() as f64;
        let mean = totals.iter().sum::<f64>() / n;
        let var = totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = (mean - (-m.delta() * t).exp()) / (var / n).sqrt();
        assert!(z.abs() < 3.0, "t={t}: z={z}");
    }
}

#[test]
fn pure_immigration_death_is_poisson() {
    let m = model(1.0, 1.0, vec![], 0.4);
    let ens = run_ensemble(&m, &SimConfig::new(16, vec![10.0], 5), 10_000).unwrap();
    let s = ens.primary(0);
    let [c1, c2] = [s.cumulants[0], s.cumulants[1]];
    let lambda = 0.4 * (1.0 - (-10.0f64).exp());
    assert!(((c1.value - lambda) / c1.se).abs() < 3.0);
    assert!((c2.value / c2.se).abs() < 3.0);
}

#[test]
fn reproducible_and_independent_of_thread_count() {
    let m = model(1.0, 1.0, vec![0.3], 0.2);
    let cfg = SimConfig::new(8, vec![1.0, 2.0], 42);
    let a = serde_json::to_string(&run_ensemble(&m, &cfg, 50).unwrap()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| serde_json::to_string(&run_ensemble(&m, &cfg, 50).unwrap()).unwrap());
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 43;
    let c = serde_json::to_string(&run_ensemble(&m, &other, 50).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn distance_examples() {
    let h = |c: &[u64]| Histogram::from_counts(c.to_vec());
    assert_eq!(empirical_distribution_distance(&h(&[3, 1]), &h(&[3, 1])), 0.0);
    assert_eq!(empirical_distribution_distance(&h(&[5]), &h(&[0, 5])), 1.0);
    assert!((empirical_distribution_distance(&h(&[2, 2]), &h(&[1, 3])) - 0.25).abs() < 1e-15);
}

#[test]
fn ensemble_needs_two_replicates() {
    let m = model(1.0, 1.0, vec![], 0.1);
    assert!(run_ensemble(&m, &SimConfig::new(4, vec![1.0], 0), 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn population_accounting(
        kappa in 0.0f64..2.0,
        b2 in 0.0f64..0.3,
        b3 in 0.0f64..0.2,
        gamma in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let m = model(kappa, 1.0, vec![b2, b3], gamma);
        let torus = Torus::new(6, 1);
        let dynamics = Dynamics::new(&m, torus);
        let mut rng = replicate_rng(seed, 0);
        let mut field = ParticleField::with_particles(torus, &[0, 1, 1]);
        for _ in 0..300 {
            let before = field.total_particles() as i64;
            let t0 = field.time();
            match dynamics.step(&mut field, &mut rng) {
                Ok((dt, tag)) => {
                    prop_assert!(dt > 0.0);
                    prop_assert!((field.time() - t0 - dt).abs() <= 1e-12 * field.time().max(1.0));
                    prop_assert_eq!(field.total_particles() as i64 - before, tag.population_change());
                    if let EventTag::Split { offspring, .. } = &tag {
                        prop_assert!((1..=2).contains(&offspring.len()));
                    }
                    prop_assert!(field.invariants_hold());
                    prop_assert!(field.occupancy().values().all(|&c| c > 0));
                }
                Err(SimError::DeadlockNoEvents) => {
                    prop_assert_eq!(field.total_particles(), 0);
                    prop_assert_eq!(gamma, 0.0);
                    break;
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
