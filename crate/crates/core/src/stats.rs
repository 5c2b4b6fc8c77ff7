//! Welch / one-sample t-tests and the Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    /// Zero standard error: `p` is 1 for equal means and 0 otherwise.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `None` for an empty sample.
pub fn summarize(xs: &[f64]) -> Option<Summary> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Summary {
        count: xs.len(),
        mean: mean(xs),
        std_dev: if xs.len() > 1 {
            variance(xs).sqrt()
        } else {
            0.0
        },
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

fn check_sample(xs: &[f64], name: &str) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "{name} has {} value(s); at least 2 are required",
            xs.len()
        )));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSample(format!(
            "{name} contains non-finite values"
        )));
    }
    Ok(())
}

fn two_sided_t(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn degenerate_t(diff: f64, df: f64) -> TTestResult {
    if diff == 0.0 {
        TTestResult {
            t: 0.0,
            df,
            p: 1.0,
            degenerate: true,
        }
    } else {
        TTestResult {
            t: diff.signum() * f64::INFINITY,
            df,
            p: 0.0,
            degenerate: true,
        }
    }
}

/// Two-sample t-test without the equal-variance assumption.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    check_sample(a, "first sample")?;
    check_sample(b, "second sample")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se2 = va + vb;
    let diff = mean(a) - mean(b);
    if se2 == 0.0 {
        return Ok(degenerate_t(diff, na + nb - 2.0));
    }
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let t = diff / se2.sqrt();
    Ok(TTestResult {
        t,
        df,
        p: two_sided_t(t, df),
        degenerate: false,
    })
}

/// One-sample t-test of the mean of `a` against `mu0`.
pub fn one_sample_t_test(a: &[f64], mu0: f64) -> Result<TTestResult> {
    check_sample(a, "sample")?;
    let n = a.len() as f64;
    let se = (variance(a) / n).sqrt();
    let diff = mean(a) - mu0;
    let df = n - 1.0;
    if se == 0.0 {
        return Ok(degenerate_t(diff, df));
    }
    let t = diff / se;
    Ok(TTestResult {
        t,
        df,
        p: two_sided_t(t, df),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    /// Rank-sum statistic of the first sample: `R_a - n_a(n_a+1)/2`, i.e.
    /// the number of pairs with `a > b` plus half the ties.
    pub u_a: f64,
    /// `n_a * n_b - u_a`: pairs with `a < b` plus half the ties.
    pub u_b: f64,
    pub z: f64,
    /// Two-sided, normal approximation with tie and continuity correction.
    pub p: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// Midranks (1-based) of `values`, plus the tie term `sum(t^3 - t)`.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    (ranks, tie_term)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitneyResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateSample(
            "both samples must be non-empty".into(),
        ));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSample(
            "samples contain non-finite values".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let u_a = rank_sum_a - na * (na + 1.0) / 2.0;
    let u_b = na * nb - u_a;
    let n = na + nb;
    let mu = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var.is_nan() || var <= 0.0 {
        return Ok(MannWhitneyResult {
            u_a,
            u_b,
            z: 0.0,
            p: 1.0,
            degenerate: true,
        });
    }
    let sd = var.sqrt();
    let dev = u_a - mu;
    let z = (dev - 0.5 * dev.signum()) / sd;
    let normal = Normal::standard();
    let p = (2.0 * normal.sf((dev.abs() - 0.5) / sd)).min(1.0);
    Ok(MannWhitneyResult {
        u_a,
        u_b,
        z,
        p,
        degenerate: false,
    })
}
