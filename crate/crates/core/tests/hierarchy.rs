use bifield::hierarchy::{
    duhamel_residual, m1_exact, solve_hierarchy, source_term, HierarchyError, HierarchySolver,
    TimeGrid,
};
use bifield::kernels::{Quadrature, StepEntry};
use bifield::{validate, Model, ModelParams, Torus};
use proptest::prelude::*;

fn nn_model(beta: Vec<f64>, kappa: f64, mu: f64) -> Model {
    validate(&ModelParams::nearest_neighbour(1, kappa, mu, beta, 0.1, 1.0, 0.6)).unwrap()
}

/// Source of order `k` read off the backward equation's nonlinearity: expand
/// `u = 1 + Σ_j m_j w^j / j!` and `U = u * b` per site as truncated power
/// series in `w = z - 1`, take `k!` times the `w^k` coefficient of
/// `Σ_l β_l u U^{l-1}` with `m_k` set to zero.
fn series_source(model: &Model, torus: Torus, k: usize, lower: &[Vec<f64>]) -> Vec<f64> {
    let n = torus.n_sites();
    let fact = |j: usize| (1..=j).map(|v| v as f64).product::<f64>();
    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; k + 1];
        for i in 0..=k {
            for j in 0..=k - i {
                c[i + j] += a[i] * b[j];
            }
        }
        c
    };
    (0..n)
        .map(|x| {
            let mut u = vec![0.0; k + 1];
            let mut big_u = vec![0.0; k + 1];
            u[0] = 1.0;
            big_u[0] = 1.0;
            for j in 1..k {
                u[j] = lower[j - 1][x] / fact(j);
                big_u[j] = model
                    .dist_b()
                    .entries()
                    .iter()
                    .map(|(v, w)| w * lower[j - 1][torus.shift(x, v)])
                    .sum::<f64>()
                    / fact(j);
            }
            let mut total = 0.0;
            for (l, beta) in model.splitting_rates() {
                let mut prod = u.clone();
                for _ in 0..l - 1 {
                    prod = mul(&prod, &big_u);
                }
                total += beta * prod[k];
            }
            total * fact(k)
        })
        .collect()
}

fn random_fields(seed: u64, count: usize, n: usize) -> Vec<Vec<f64>> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect()
        })
        .collect()
}

#[test]
fn second_order_source_binary_splitting() {
    let m = nn_model(vec![0.3], 1.0, 1.0);
    let torus = Torus::new(8, 1);
    let m1 = &random_fields(1, 1, 8)[0];
    let s = source_term(&m, torus, 2, &[m1]);
    for x in 0..8 {
        let conv = 0.5 * (m1[(x + 1) % 8] + m1[(x + 7) % 8]);
        let expect = 2.0 * 0.3 * m1[x] * conv;
        assert!((s[x] - expect).abs() < 1e-14, "x={x}");
    }
}

#[test]
fn second_order_source_ternary_splitting() {
    let m = nn_model(vec![0.0, 0.2], 1.0, 1.0);
    let torus = Torus::new(8, 1);
    let m1 = &random_fields(2, 1, 8)[0];
    let s = source_term(&m, torus, 2, &[m1]);
    for x in 0..8 {
        let big = 0.5 * (m1[(x + 1) % 8] + m1[(x + 7) % 8]);
        let expect = 2.0 * 0.2 * (2.0 * m1[x] * big + big * big);
        assert!((s[x] - expect).abs() < 1e-14, "x={x}");
    }
}

#[test]
fn sources_match_series_expansion() {
    let params = ModelParams {
        jump: vec![
            StepEntry::new(vec![1, 0], 0.25),
            StepEntry::new(vec![-1, 0], 0.25),
            StepEntry::new(vec![0, 1], 0.25),
            StepEntry::new(vec![0, -1], 0.25),
        ],
        offspring: vec![
            StepEntry::new(vec![1, 0], 0.2),
            StepEntry::new(vec![-1, 0], 0.2),
            StepEntry::new(vec![0, 1], 0.3),
            StepEntry::new(vec![0, -1], 0.3),
        ],
        ..ModelParams::nearest_neighbour(2, 1.0, 3.0, vec![0.2, 0.1, 0.05, 0.02], 0.1, 1.0, 0.6)
    };
    let m = validate(&params).unwrap();
    let torus = Torus::new(5, 2);
    for k in 2..=6 {
        let lower = random_fields(10 + k as u64, k - 1, torus.n_sites());
        let refs: Vec<&[f64]> = lower.iter().map(|v| v.as_slice()).collect();
        let got = source_term(&m, torus, k, &refs);
        let want = series_source(&m, torus, k, &lower);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "k={k}: {g} vs {w}");
        }
    }
}

#[test]
fn pure_death_has_no_higher_moments() {
    let m = nn_model(vec![], 1.0, 1.0);
    let grid = TimeGrid::covering(2.0, m.max_step()).unwrap();
    let t = solve_hierarchy(&m, 16, 3, grid).unwrap();
    for i in 0..grid.len() {
        assert!(t.field(2, i).iter().all(|&v| v == 0.0));
        assert!(t.field(3, i).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn frozen_single_site_matches_closed_form() {
    // No motion: m_1 = e^{-Δt} at the origin, and m_2 solves
    // m_2' = -Δ m_2 + 2β m_1^2 when b only lands on the origin (L = 1).
    let m = validate(&ModelParams::nearest_neighbour(1, 0.0, 1.0, vec![0.3], 0.1, 1.0, 0.6)).unwrap();
    let d = m.delta();
    let grid = TimeGrid::covering(4.0, m.max_step()).unwrap();
    let t = solve_hierarchy(&m, 1, 2, grid).unwrap();
    for i in 0..grid.len() {
        let s = grid.time(i);
        let m2 = 2.0 * 0.3 * (-d * s).exp() * (1.0 - (-d * s).exp()) / d;
        assert!((t.field(2, i)[0] - m2).abs() < 1e-9, "t={s}");
    }
}

#[test]
fn first_moment_matches_infinite_lattice_kernel_before_wraparound() {
    let m = nn_model(vec![0.3], 1.0, 1.0);
    let grid = TimeGrid::covering(1.0, m.max_step()).unwrap();
    let t = solve_hierarchy(&m, 32, 1, grid).unwrap();
    let last = grid.intervals();
    let torus = t.torus();
    for x in -3i64..=3 {
        let exact = m1_exact(&m, grid.time(last), &[x], Quadrature::for_dim(1)).unwrap();
        let got = t.field(1, last)[torus.index(&[x])];
        assert!((got - exact).abs() < 1e-10, "x={x}: {got} vs {exact}");
    }
}

#[test]
fn lower_orders_do_not_depend_on_truncation() {
    let m = nn_model(vec![0.2, 0.1], 1.0, 1.0);
    let grid = TimeGrid::covering(1.0, m.max_step()).unwrap();
    let small = solve_hierarchy(&m, 8, 2, grid).unwrap();
    let large = solve_hierarchy(&m, 8, 5, grid).unwrap();
    for k in 1..=2 {
        for i in 0..grid.len() {
            assert_eq!(small.field(k, i), large.field(k, i));
        }
    }
}

#[test]
fn duhamel_residual_shrinks_with_step() {
    let m = nn_model(vec![0.3], 1.0, 1.0);
    let fine = TimeGrid::covering(2.0, m.max_step() / 2.0).unwrap();
    let fine = TimeGrid::new(fine.step(), fine.intervals() + fine.intervals() % 2).unwrap();
    let coarse = fine.coarsened().unwrap();
    let tf = solve_hierarchy(&m, 16, 3, fine).unwrap();
    let tc = solve_hierarchy(&m, 16, 3, coarse).unwrap();
    for k in 1..=3 {
        let rf = duhamel_residual(k, &tf, &m);
        let rc = duhamel_residual(k, &tc, &m);
        assert!(rf < 1e-6, "k={k} residual {rf}");
        assert!(rf <= rc + 1e-15, "k={k}: {rf} vs {rc}");
    }
}

#[test]
fn oversized_step_rejected() {
    let m = nn_model(vec![0.3], 1.0, 1.0);
    let grid = TimeGrid::new(m.max_step() * 1.5, 3).unwrap();
    assert!(matches!(
        solve_hierarchy(&m, 8, 2, grid),
        Err(HierarchyError::UnstableStep { .. })
    ));
}

#[test]
fn solver_continues_where_table_stops() {
    let m = nn_model(vec![0.3], 1.0, 1.0);
    let grid = TimeGrid::covering(0.5, m.max_step()).unwrap();
    let table = solve_hierarchy(&m, 8, 2, grid).unwrap();
    let mut solver = HierarchySolver::new(&m, 8, 2, grid.step()).unwrap();
    for _ in 0..grid.intervals() {
        solver.advance().unwrap();
    }
    assert_eq!(solver.state()[1], table.field(2, grid.intervals()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn moments_are_nonnegative_and_symmetric(
        kappa in 0.0f64..2.0,
        mu in 0.5f64..2.0,
        b2 in 0.0f64..0.2,
        b3 in 0.0f64..0.1,
        side in 3usize..10,
    ) {
        let m = nn_model(vec![b2, b3], kappa, mu);
        let grid = TimeGrid::covering(1.0, m.max_step()).unwrap();
        let t = solve_hierarchy(&m, side, 3, grid).unwrap();
        let torus = t.torus();
        for k in 1..=3 {
            let f = t.field(k, grid.intervals());
            for x in 0..torus.n_sites() {
                prop_assert!(f[x] >= -1e-12);
                let mirrored = torus.negate(x);
                prop_assert!((f[x] - f[mirrored]).abs() <= 1e-12 * f[x].abs().max(1e-3));
            }
        }
    }
}
