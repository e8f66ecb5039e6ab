//! Sample statistics for integer-valued observations: histograms, factorial
//! moment estimators, total variation, and chi-square goodness of fit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Counts of observed values `0, 1, 2, …`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
}

impl Histogram {
    pub fn from_samples<I: IntoIterator<Item = u64>>(samples: I) -> Self {
        let mut h = Self::default();
        for s in samples {
            h.push(s);
        }
        h
    }

    pub fn from_counts(mut counts: Vec<u64>) -> Self {
        while counts.last() == Some(&0) {
            counts.pop();
        }
        Self { counts }
    }

    pub fn push(&mut self, value: u64) {
        let v = value as usize;
        if v >= self.counts.len() {
            self.counts.resize(v + 1, 0);
        }
        self.counts[v] += 1;
    }

    /// `counts()[v]` is the number of samples equal to `v`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, value: usize) -> u64 {
        self.counts.get(value).copied().unwrap_or(0)
    }

    /// Empirical probability of each value.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Half the `L1` distance between two empirical laws; in `[0, 1]`.
pub fn total_variation(a: &Histogram, b: &Histogram) -> f64 {
    let pa = a.probabilities();
    let pb = b.probabilities();
    let len = pa.len().max(pb.len());
    0.5 * (0..len)
        .map(|i| {
            let x = pa.get(i).copied().unwrap_or(0.0);
            let y = pb.get(i).copied().unwrap_or(0.0);
            (x - y).abs()
        })
        .sum::<f64>()
}

/// Falling factorial `x (x-1) … (x-k+1)`.
pub fn falling_factorial(x: u64, k: usize) -> f64 {
    (0..k as u64).map(|j| x as f64 - j as f64).product()
}

fn mean_and_se(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: mean,
        se: (var / n).sqrt(),
    }
}

/// Sample mean of `X(X-1)…(X-k+1)` with its standard error.
pub fn factorial_moment(samples: &[u64], k: usize) -> Estimate {
    let values: Vec<f64> = samples.iter().map(|&x| falling_factorial(x, k)).collect();
    mean_and_se(&values)
}

/// Unbiased sample variance.
pub fn sample_variance(samples: &[u64]) -> f64 {
    let values: Vec<f64> = samples.iter().map(|&x| x as f64).collect();
    let e = mean_and_se(&values);
    e.se * e.se * values.len() as f64
}

/// First two factorial cumulants: `χ₁ = m₁` and `χ₂ = m₂ - m₁²`. The
/// standard error of `χ₂` uses its influence function
/// `X(X-1) - 2 m₁ X`.
pub fn factorial_cumulants_2(samples: &[u64]) -> (Estimate, Estimate) {
    let m1 = factorial_moment(samples, 1);
    let m2 = factorial_moment(samples, 2);
    let influence: Vec<f64> = samples
        .iter()
        .map(|&x| falling_factorial(x, 2) - 2.0 * m1.value * x as f64)
        .collect();
    let se2 = mean_and_se(&influence).se;
    (
        m1,
        Estimate {
            value: m2.value - m1.value * m1.value,
            se: se2,
        },
    )
}

/// Outcome of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// `(first value in bin, observed, expected)`; the last bin is open-ended.
    pub bins: Vec<(usize, u64, f64)>,
}

/// Chi-square test of `observed` against the law `expected` on `0, 1, …`.
/// Adjacent values are pooled left to right until each bin expects at least
/// `min_expected` samples; leftover mass and any observations beyond the
/// support of `expected` go to the last bin.
pub fn chi_square_fit(
    expected: &[f64],
    observed: &Histogram,
    min_expected: f64,
) -> Result<GoodnessOfFit, StatsError> {
    let n = observed.total();
    if n == 0 {
        return Err(StatsError::InsufficientSamples("no observations".into()));
    }
    let nf = n as f64;
    let len = expected.len().max(observed.counts().len());
    let mut bins: Vec<(usize, u64, f64)> = Vec::new();
    let mut open: Option<(usize, u64, f64)> = None;
    for v in 0..len {
        let e = expected.get(v).copied().unwrap_or(0.0).max(0.0) * nf;
        let o = observed.count(v);
        let cur = open.get_or_insert((v, 0, 0.0));
        cur.1 += o;
        cur.2 += e;
        if cur.2 >= min_expected {
            bins.push(open.take().unwrap());
        }
    }
    let tail_mass = (1.0 - expected.iter().map(|p| p.max(0.0)).sum::<f64>()).max(0.0) * nf;
    if let Some((start, o, e)) = open {
        match bins.last_mut() {
            Some(last) => {
                last.1 += o;
                last.2 += e + tail_mass;
            }
            None => bins.push((start, o, e + tail_mass)),
        }
    } else if let Some(last) = bins.last_mut() {
        last.2 += tail_mass;
    }
    if bins.len() < 2 {
        return Err(StatsError::InsufficientSamples(format!(
            "only {} bin(s) with expected count >= {min_expected} from {n} samples",
            bins.len()
        )));
    }
    let statistic: f64 = bins
        .iter()
        .map(|&(_, o, e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(GoodnessOfFit {
        statistic,
        dof,
        p_value: dist.sf(statistic),
        bins,
    })
}

/// Poisson probabilities `P(X = 0..len)`.
pub fn poisson_pmf(lambda: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut p = (-lambda).exp();
    for k in 0..len {
        out.push(p);
        p *= lambda / (k + 1) as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_moments_of_small_sample() {
        let s = [0u64, 1, 2];
        assert!((factorial_moment(&s, 1).value - 1.0).abs() < 1e-15);
        assert!((factorial_moment(&s, 2).value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(factorial_moment(&s, 3).value, 0.0);
    }

    #[test]
    fn total_variation_examples() {
        let a = Histogram::from_counts(vec![2, 2]);
        assert_eq!(total_variation(&a, &a), 0.0);
        let z = Histogram::from_counts(vec![5]);
        let o = Histogram::from_counts(vec![0, 5]);
        assert_eq!(total_variation(&z, &o), 1.0);
        let b = Histogram::from_counts(vec![1, 3]);
        assert!((total_variation(&a, &b) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn histogram_trims_trailing_zeros() {
        let h = Histogram::from_counts(vec![1, 0, 0]);
        assert_eq!(h.counts(), &[1]);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn chi_square_exact_fit_has_unit_p_value() {
        let h = Histogram::from_counts(vec![500, 300, 200]);
        let fit = chi_square_fit(&[0.5, 0.3, 0.2], &h, 5.0).unwrap();
        assert!(fit.statistic.abs() < 1e-12);
        assert!((fit.p_value - 1.0).abs() < 1e-12);
        assert_eq!(fit.dof, 2);
    }

    #[test]
    fn chi_square_pools_sparse_tail() {
        let expected = poisson_pmf(0.5, 12);
        let h = Histogram::from_counts(vec![61, 30, 8, 1]);
        let fit = chi_square_fit(&expected, &h, 5.0).unwrap();
        let total_e: f64 = fit.bins.iter().map(|b| b.2).sum();
        assert!((total_e - 100.0).abs() < 1e-9);
        assert!(fit.bins.iter().all(|b| b.2 >= 5.0));
        assert_eq!(fit.bins.iter().map(|b| b.1).sum::<u64>(), 100);
    }

    #[test]
    fn chi_square_needs_two_bins() {
        let h = Histogram::from_counts(vec![3]);
        assert!(chi_square_fit(&[0.9, 0.1], &h, 5.0).is_err());
    }

    #[test]
    fn chi2_of_constant_sample_is_minus_square_mean() {
        let s = [2u64; 10];
        let (c1, c2) = factorial_cumulants_2(&s);
        assert_eq!(c1.value, 2.0);
        assert!((c2.value - (2.0 - 4.0)).abs() < 1e-15);
        assert_eq!(c2.se, 0.0);
    }
}
