use bifield::cumulants::{
    chi_series, chi_total, cumulants_to_moments, gw_generating_function, gw_mean,
    gw_second_factorial_moment, moments_to_cumulants, steady_state_cumulants, CumulantError,
    SteadyStateOptions, TimeLabel,
};
use bifield::hierarchy::{solve_hierarchy, TimeGrid};
use bifield::{validate, Model, ModelParams};
use proptest::prelude::*;

fn binary() -> Model {
    validate(&ModelParams::nearest_neighbour(1, 1.0, 1.0, vec![0.3], 0.1, 1.0, 0.6)).unwrap()
}

fn mixed() -> Model {
    validate(&ModelParams::nearest_neighbour(1, 1.0, 1.0, vec![0.2, 0.1], 0.1, 1.0, 0.6)).unwrap()
}

/// Factorial cumulants from the logarithm of `1 + Σ a_n w^n`, `a_n = m_n/n!`,
/// via `g_n = a_n - (1/n) Σ_{k<n} k g_k a_{n-k}` and `χ_n = n! g_n`.
fn series_log(m: &[f64]) -> Vec<f64> {
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    let a: Vec<f64> = (0..=m.len())
        .map(|n| if n == 0 { 1.0 } else { m[n - 1] / fact(n) })
        .collect();
    let mut g = vec![0.0; m.len() + 1];
    for n in 1..=m.len() {
        let s: f64 = (1..n).map(|k| k as f64 * g[k] * a[n - k]).sum();
        g[n] = a[n] - s / n as f64;
    }
    (1..=m.len()).map(|n| g[n] * fact(n)).collect()
}

#[test]
fn transform_matches_series_logarithm() {
    let m = [0.7, 1.9, 2.2, 5.1, 3.3, 20.0, 1.0, 99.0];
    let got = moments_to_cumulants(&m);
    let want = series_log(&m);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-11 * w.abs().max(1.0), "{g} vs {w}");
    }
}

#[test]
fn poisson_vectors() {
    let lambda: f64 = 1.7;
    let m: Vec<f64> = (1..=8).map(|k| lambda.powi(k)).collect();
    let chi = moments_to_cumulants(&m);
    assert!((chi[0] - lambda).abs() < 1e-14);
    // λ^k is itself rounded, so the cumulants vanish only to that accuracy.
    for (c, mk) in chi[1..].iter().zip(&m[1..]) {
        assert!(c.abs() <= 1e-12 * mk.max(1.0), "{c}");
    }
    let mut c = vec![0.0; 8];
    c[0] = lambda;
    for (a, b) in cumulants_to_moments(&c).iter().zip(&m) {
        assert!((a - b).abs() < 1e-12 * b);
    }
}

/// First-order sensitivity of `m_l` to relative perturbations of every `χ_i`:
/// `Σ_i C(l, i) |m_{l-i}| |χ_i|` (with `m_0 = 1`).
fn round_trip_condition(m: &[f64], chi: &[f64], l: usize) -> f64 {
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |a, j| a * (n - j) as f64 / (j + 1) as f64);
    (1..=l)
        .map(|i| {
            let lower = if i == l { 1.0 } else { m[l - i - 1].abs() };
            choose(l, i) * lower * chi[i - 1].abs()
        })
        .sum()
}

#[test]
fn round_trip_on_unit_cube() {
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..100 {
        let len = 1 + (next() * 8.0) as usize;
        let m: Vec<f64> = (0..len).map(|_| next()).collect();
        let back = cumulants_to_moments(&moments_to_cumulants(&m));
        for (a, b) in back.iter().zip(&m) {
            assert!((a - b).abs() <= 1e-12, "{m:?}");
        }
    }
}

proptest! {
    #[test]
    fn round_trip_within_conditioning(m in prop::collection::vec(0.0f64..3.0, 1..=8)) {
        let chi = moments_to_cumulants(&m);
        let back = cumulants_to_moments(&chi);
        for l in 1..=m.len() {
            let tol = 1e-12 * m[l - 1].abs().max(1.0)
                + 4.0 * f64::EPSILON * round_trip_condition(&m, &chi, l);
            prop_assert!((back[l - 1] - m[l - 1]).abs() <= tol);
        }
    }
}

#[test]
fn first_cumulant_closed_form() {
    for m in [binary(), mixed()] {
        let grid = TimeGrid::covering(10.0, m.max_step()).unwrap();
        let table = solve_hierarchy(&m, 32, 1, grid).unwrap();
        let d = m.delta();
        for t in [0.0, 0.3, 1.0, 2.77, 5.0, 10.0] {
            let got = chi_total(&m, 1, t, &table).unwrap();
            let want = m.gamma() * (1.0 - (-d * t).exp()) / d;
            assert!((got - want).abs() < 1e-6, "t={t}: {got} vs {want}");
        }
        assert!(matches!(
            chi_total(&m, 1, 11.0, &table),
            Err(CumulantError::TableHorizonTooShort { .. })
        ));
    }
}

#[test]
fn cumulant_series_nondecreasing() {
    let m = mixed();
    let grid = TimeGrid::covering(8.0, m.max_step()).unwrap();
    let table = solve_hierarchy(&m, 16, 4, grid).unwrap();
    for l in 1..=4 {
        let s = chi_series(&m, l, &table).unwrap();
        assert_eq!(s[0], 0.0);
        for w in s.windows(2) {
            assert!(w[1] >= w[0], "l={l}");
        }
    }
}

#[test]
fn steady_state_first_cumulant() {
    let m = binary();
    let s = steady_state_cumulants(&m, 4, 1e-8, SteadyStateOptions::default()).unwrap();
    assert_eq!(s.cumulants.time, TimeLabel::Infinity);
    let want = m.gamma() / m.delta();
    assert!((s.cumulants.values[0] - want).abs() <= 1e-8 * want, "{}", s.cumulants.values[0]);
    for (p, c) in s.previous.iter().zip(&s.cumulants.values) {
        assert!(p <= c);
    }
    let deltas = s.side_delta.unwrap();
    assert!(deltas[0].abs() < 1e-10);
}

#[test]
fn steady_state_without_branching_is_poisson() {
    let m = validate(&ModelParams::nearest_neighbour(1, 1.0, 2.0, vec![], 0.3, 1.0, 0.6)).unwrap();
    let opts = SteadyStateOptions {
        compare_double_side: false,
        ..Default::default()
    };
    let s = steady_state_cumulants(&m, 3, 1e-8, opts).unwrap();
    assert!((s.cumulants.values[0] - 0.15).abs() < 1e-9);
    assert_eq!(&s.cumulants.values[1..], &[0.0, 0.0]);
}

#[test]
fn steady_state_budget() {
    let m = binary();
    let opts = SteadyStateOptions {
        max_horizon: 12.0,
        compare_double_side: false,
        ..Default::default()
    };
    assert!(matches!(
        steady_state_cumulants(&m, 2, 1e-8, opts),
        Err(CumulantError::NoConvergenceWithinBudget { .. })
    ));
}

#[test]
fn galton_watson_mean_and_extinction() {
    for m in [binary(), mixed()] {
        for t in [0.0, 0.5, 2.0, 7.0] {
            assert_eq!(gw_generating_function(&m, 1.0, t).unwrap(), 1.0);
            let mean = gw_mean(&m, t, 1e-4);
            assert!((mean - (-m.delta() * t).exp()).abs() < 1e-6, "t={t}");
        }
        let mut last = 0.0;
        for i in 0..=60 {
            let v = gw_generating_function(&m, 0.0, i as f64 * 0.5).unwrap();
            assert!(v >= last && v <= 1.0);
            last = v;
        }
        assert!(1.0 - last < 1e-6);
    }
    assert!(gw_generating_function(&binary(), 1.2, 1.0).is_err());
}

#[test]
fn galton_watson_second_moment_on_single_site() {
    // With one site the local count is the whole progeny.
    for m in [binary(), mixed()] {
        let grid = TimeGrid::covering(4.0, m.max_step()).unwrap();
        let table = solve_hierarchy(&m, 1, 2, grid).unwrap();
        for i in (0..grid.len()).step_by(13) {
            let t = grid.time(i);
            let gw = gw_second_factorial_moment(&m, t, 1e-3);
            assert!((table.field(2, i)[0] - gw).abs() < 1e-5, "t={t}");
        }
    }
}

#[test]
fn spatial_second_moment_below_progeny_moment() {
    let m = binary();
    let grid = TimeGrid::covering(4.0, m.max_step()).unwrap();
    let table = solve_hierarchy(&m, 16, 2, grid).unwrap();
    let sums = table.site_sums(2);
    for (i, s) in sums.iter().enumerate() {
        assert!(*s <= gw_second_factorial_moment(&m, grid.time(i), 1e-3) + 1e-6);
    }
}
