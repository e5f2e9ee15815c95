//! Two-sample Kolmogorov–Smirnov distance and empirical Laplace transforms.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic p-value of the Kolmogorov distribution at the effective sample size.
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Standard deviation of the Kolmogorov limit law, `sqrt(pi^2/12 - (pi/2) ln(2)^2)`.
const KOLMOGOROV_SD: f64 = 0.260_332_871_462_412_7;

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(invalid("samples", "NaN in sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q((ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d),
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Standard error of a two-sample KS distance at these sample sizes, from
/// the spread of the Kolmogorov limit law.
pub fn ks_standard_error(n_a: usize, n_b: usize) -> f64 {
    let ne = (n_a * n_b) as f64 / (n_a + n_b) as f64;
    KOLMOGOROV_SD / ne.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub q: f64,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean of `exp(-q x)` with its jackknife standard error.
pub fn empirical_laplace(samples: &[f64], q: f64) -> Result<LaplaceEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(q >= 0.0) {
        return Err(invalid("q", format!("{q} must be non-negative")));
    }
    let v: Vec<f64> = samples.iter().map(|x| (-q * x).exp()).collect();
    let n = v.len();
    let nf = n as f64;
    let mean = v.iter().sum::<f64>() / nf;
    let se = if n < 2 {
        0.0
    } else {
        // leave-one-out means are (n mean - v_i) / (n - 1)
        let loo = |x: f64| (nf * mean - x) / (nf - 1.0);
        let ss: f64 = v.iter().map(|&x| (loo(x) - mean).powi(2)).sum();
        ((nf - 1.0) / nf * ss).sqrt()
    };
    Ok(LaplaceEstimate { q, mean, se, n })
}

/// Empirical quantile (nearest rank) of an unsorted sample.
pub fn quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[k - 1])
}

pub fn mean_and_se(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::EmptySample);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
