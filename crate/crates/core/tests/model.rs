use bifield::model::compute_delta;
use bifield::{validate, ModelError, ModelParams};
use proptest::prelude::*;

fn params(mu: f64, beta: Vec<f64>, tail_beta: f64, tail_delta: f64) -> ModelParams {
    ModelParams::nearest_neighbour(1, 1.0, mu, beta, 0.1, tail_beta, tail_delta)
}

#[test]
fn gap_examples() {
    assert_eq!(compute_delta(&params(1.0, vec![], 1.0, 0.6)), 1.0);
    assert!((compute_delta(&params(1.0, vec![0.3], 1.0, 0.6)) - 0.7).abs() < 1e-15);
    assert!((compute_delta(&params(1.0, vec![0.2, 0.2], 1.0, 0.6)) - 0.4).abs() < 1e-15);
}

#[test]
fn validation_examples() {
    assert!(matches!(
        validate(&params(0.5, vec![0.5], 1.0, 0.9)),
        Err(ModelError::NotSubcritical { .. })
    ));
    assert!(validate(&params(1.0, vec![0.3], 1.0, 0.6)).is_ok());
    assert!(matches!(
        validate(&params(1.0, vec![0.5], 1.0, 0.6)),
        Err(ModelError::TailViolation { l: 2, .. })
    ));
    let mut bad = params(1.0, vec![0.3], 1.0, 0.6);
    bad.offspring[0].weight = 0.7;
    bad.offspring[1].weight = 0.3;
    assert!(matches!(validate(&bad), Err(ModelError::InvalidStepDistribution { .. })));
}

#[test]
fn rate_summaries() {
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
fn config_json_is_strict() {
    let json = serde_json::to_string(&params(1.0, vec![0.3], 1.0, 0.6)).unwrap();
    let back: ModelParams = serde_json::from_str(&json).unwrap();
    assert_eq!(back, params(1.0, vec![0.3], 1.0, 0.6));
    let typo = json.replacen("\"beta\"", "\"betta\"", 1);
    let e = serde_json::from_str::<ModelParams>(&typo).unwrap_err().to_string();
    assert!(e.contains("betta"), "{e}");
}

proptest! {
    #[test]
    fn validation_is_idempotent_and_consistent(
        mu in 0.1f64..3.0,
        b2 in 0.0f64..0.4,
        b3 in 0.0f64..0.2,
        b4 in 0.0f64..0.1,
    ) {
        let p = params(mu, vec![b2, b3, b4], 2.0, 0.8);
        match validate(&p) {
            Ok(m) => {
                prop_assert_eq!(m.delta(), compute_delta(&p));
                prop_assert!(m.delta() > 0.0);
                prop_assert!(m.branch_total_rate() < m.mu());
                let again = validate(m.params()).unwrap();
                prop_assert_eq!(again.delta(), m.delta());
                prop_assert_eq!(again.params(), m.params());
            }
            Err(ModelError::NotSubcritical { delta }) => prop_assert!(delta <= 0.0),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}
