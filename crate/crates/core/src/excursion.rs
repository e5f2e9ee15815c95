//! Constructions used as independent oracles: the fragmentation read off a
//! Brownian excursion, and the subordinated stable representation of the
//! pure stable immigration process.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{invalid, Result};
use crate::partitions::MassPartition;
use crate::rng::exp1;
use crate::subordinators::{lepage_jumps, stable_path};

/// Values of an excursion of length `length` at the grid points `k length / n`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExcursionGrid {
    length: f64,
    values: Vec<f64>,
}

impl ExcursionGrid {
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of grid steps.
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn cell(&self) -> f64 {
        self.length / self.n() as f64
    }

    /// Lengths of the runs above `level`, unsorted.
    fn runs_above(&self, level: f64, mut visit: impl FnMut(usize)) {
        let mut run = 0usize;
        for &v in &self.values {
            if v > level {
                run += 1;
            } else if run > 0 {
                visit(run);
                run = 0;
            }
        }
        if run > 0 {
            visit(run);
        }
    }

    /// Largest component of `{2e > t}`, without building the partition.
    pub fn largest_component(&self, t: f64) -> f64 {
        let mut best = 0;
        self.runs_above(0.5 * t, |r| best = best.max(r));
        best as f64 * self.cell()
    }
}

/// Excursion of length `m` from a Brownian bridge on `n` steps by rotating
/// at its minimum, then scaling by `sqrt(m)`.
pub fn brownian_excursion(m: f64, n: usize, rng: &mut dyn RngCore) -> Result<ExcursionGrid> {
    let mut e = ExcursionGrid {
        length: m,
        values: Vec::new(),
    };
    brownian_excursion_into(m, n, rng, &mut e)?;
    Ok(e)
}

/// As [`brownian_excursion`], reusing the storage of `out`.
pub fn brownian_excursion_into(m: f64, n: usize, rng: &mut dyn RngCore, out: &mut ExcursionGrid) -> Result<()> {
    if n < 2 {
        return Err(invalid("n", format!("{n} grid steps, need at least 2")));
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(invalid("m", format!("{m} must be positive and finite")));
    }
    let v = &mut out.values;
    v.clear();
    v.reserve(n + 1);
    let step = (m / n as f64).sqrt();
    let mut w = 0.0;
    v.push(0.0);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        w += step * z;
        v.push(w);
    }
    let end = w;
    let (mut argmin, mut min) = (0, 0.0);
    for (k, x) in v.iter_mut().enumerate().take(n) {
        *x -= end * k as f64 / n as f64;
        if *x < min {
            min = *x;
            argmin = k;
        }
    }
    v[..n].rotate_left(argmin);
    for x in &mut v[..n] {
        *x = (*x - min).max(0.0);
    }
    v[0] = 0.0;
    v[n] = 0.0;
    out.length = m;
    Ok(())
}

/// Lengths of the connected runs of `{2e > t}`, ranked; the rest is dust.
pub fn excursion_fragmentation_marginal(e: &ExcursionGrid, t: f64) -> Result<MassPartition> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("{t} must be non-negative")));
    }
    let cell = e.cell();
    let mut runs = Vec::new();
    e.runs_above(0.5 * t, |r| runs.push(r as f64 * cell));
    runs.sort_by(|a, b| b.total_cmp(a));
    let kept: f64 = runs.iter().sum();
    Ok(MassPartition::from_sorted_unchecked(runs, (e.length - kept).max(0.0)))
}

/// State of the subordinated representation at one probe time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatedProbe {
    pub t: f64,
    pub clock: f64,
    pub total: f64,
    pub largest: Vec<f64>,
}

/// Samples `T(ϱ(t))` and the `k` largest jumps of `T` before `ϱ(t)` at each
/// sorted probe, where `ϱ` is `(beta-1)`-stable with Laplace exponent
/// `beta q^{beta-1}` and `T` is an independent `1/beta`-stable subordinator
/// with exponent `q^{1/beta}`.
///
/// `clock_floor` truncates the jumps of `ϱ`; increments of `T` over a clock
/// interval of length `r` keep jumps above `rel_floor r^beta` (the same
/// relative accuracy at every scale).
pub fn subordinated_stable_representation(
    beta: f64,
    probes: &[f64],
    k: usize,
    clock_floor: f64,
    rel_floor: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<SubordinatedProbe>> {
    if !(beta > 1.0 && beta < 2.0) {
        return Err(invalid("beta", format!("{beta} is outside (1, 2)")));
    }
    if !(rel_floor > 0.0) {
        return Err(invalid("rel_floor", "must be positive"));
    }
    if probes.windows(2).any(|w| !(w[0] <= w[1])) || probes.first().is_some_and(|&t| !(t >= 0.0)) {
        return Err(invalid("probes", "probe times must be non-negative and sorted"));
    }
    let horizon = probes.last().copied().unwrap_or(0.0);
    let clock = stable_path(beta - 1.0, beta / gamma_fn(2.0 - beta), horizon, clock_floor, rng)?;
    let (g, c) = (1.0 / beta, 1.0 / gamma_fn(1.0 - 1.0 / beta));
    let mut prev = 0.0;
    let mut total = 0.0;
    let mut top: Vec<f64> = Vec::new();
    probes
        .iter()
        .map(|&t| {
            let now = clock.evaluate(t)?;
            let r = now - prev;
            if r > 0.0 {
                let first = exp1(rng);
                let j = lepage_jumps(g, c, r, first, rel_floor * r.powf(beta), k.max(1), rng);
                total += j.total();
                top.extend(j.top);
                top.sort_by(|a, b| b.total_cmp(a));
                top.truncate(k);
            }
            prev = now;
            Ok(SubordinatedProbe {
                t,
                clock: now,
                total,
                largest: top.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::{empirical_laplace, ks_two_sample};
    use std::f64::consts::PI;

    // P(max > x) for the normalized excursion, from the two theta-function
    // forms of its law (one converges fast for large x, the other for small x)
    fn max_tail_direct(x: f64) -> f64 {
        (1..50)
            .map(|k| {
                let k2x2 = (k * k) as f64 * x * x;
                2.0 * (4.0 * k2x2 - 1.0) * (-2.0 * k2x2).exp()
            })
            .sum()
    }

    fn max_tail_dual(x: f64) -> f64 {
        let s: f64 = (1..50)
            .map(|k| {
                let k2 = (k * k) as f64;
                k2 * (-PI * PI * k2 / (2.0 * x * x)).exp()
            })
            .sum();
        1.0 - 2f64.sqrt() * PI.powf(2.5) / x.powi(3) * s
    }

    #[test]
    fn theta_forms_agree() {
        for x in [0.5, 0.8, 1.0, 1.5] {
            assert!((max_tail_direct(x) - max_tail_dual(x)).abs() < 1e-10, "{x}");
        }
        assert!((max_tail_direct(1.0) - 0.822_07).abs() < 1e-4);
    }

    #[test]
    fn endpoints_and_sign() {
        let e = brownian_excursion(2.0, 1000, &mut seeded(1)).unwrap();
        assert_eq!(e.n(), 1000);
        assert_eq!(e.values()[0], 0.0);
        assert_eq!(e.values()[1000], 0.0);
        assert!(e.values().iter().all(|&v| v >= 0.0));
        assert!(brownian_excursion(1.0, 1, &mut seeded(1)).is_err());
    }

    #[test]
    fn max_law() {
        // grid monitoring misses about 0.5826 sqrt(m/n) at an extremum of
        // Brownian motion; the maximum and the bridge minimum are both monitored
        let n = 1 << 12;
        let shift = 2.0 * 0.582_597_157_939_010_6 / (n as f64).sqrt();
        let draws = 100_000;
        let mut rng = seeded(2);
        let mut e = brownian_excursion(1.0, n, &mut rng).unwrap();
        let mut hits = 0usize;
        for _ in 0..draws {
            brownian_excursion_into(1.0, n, &mut rng, &mut e).unwrap();
            if e.max() + shift > 1.0 {
                hits += 1;
            }
        }
        let p = max_tail_direct(1.0);
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        let got = hits as f64 / draws as f64;
        assert!((got - p).abs() < 3.0 * se, "{got} vs {p}");
    }

    #[test]
    fn brownian_scaling() {
        let mut rng = seeded(3);
        let a: Vec<f64> = (0..10_000).map(|_| brownian_excursion(4.0, 512, &mut rng).unwrap().max()).collect();
        let b: Vec<f64> = (0..10_000)
            .map(|_| 2.0 * brownian_excursion(1.0, 512, &mut rng).unwrap().max())
            .collect();
        assert!(ks_two_sample(&a, &b).unwrap().statistic <= 0.02);
    }

    #[test]
    fn fragmentation_examples() {
        let e = brownian_excursion(1.0, 4096, &mut seeded(4)).unwrap();
        let p0 = excursion_fragmentation_marginal(&e, 0.0).unwrap();
        assert!(p0.len() <= 2 || p0.nth_largest(1) > 0.99);
        assert!((p0.total() - 1.0).abs() < 1e-12);
        let top = excursion_fragmentation_marginal(&e, 2.0 * e.max() + 0.1).unwrap();
        assert!(top.is_empty());
        assert_eq!(top.dust(), 1.0);
        assert!(excursion_fragmentation_marginal(&e, -1.0).is_err());
        let p = excursion_fragmentation_marginal(&e, 0.5).unwrap();
        assert_eq!(p.nth_largest(1), e.largest_component(0.5));
        assert!((p.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn components_are_nested() {
        let e = brownian_excursion(1.0, 4096, &mut seeded(5)).unwrap();
        let (lo, hi) = (0.3, 0.6);
        // every grid point above the higher level sits in a run above the
        // lower one, and each higher run lies within one lower run
        let above = |t: f64| e.values().iter().map(|&v| 2.0 * v > t).collect::<Vec<_>>();
        let (a, b) = (above(lo), above(hi));
        assert!(a.iter().zip(&b).all(|(x, y)| *x || !*y));
        let coarse = excursion_fragmentation_marginal(&e, lo).unwrap();
        let fine = excursion_fragmentation_marginal(&e, hi).unwrap();
        assert!(fine.nth_largest(1) <= coarse.nth_largest(1));
        assert!(fine.macroscopic() <= coarse.macroscopic());
    }

    #[test]
    fn subordinated_zero_and_monotone() {
        let mut rng = seeded(6);
        let out = subordinated_stable_representation(1.5, &[0.0, 0.5, 1.0], 3, 1e-6, 1e-4, &mut rng).unwrap();
        assert_eq!(out[0].total, 0.0);
        assert!(out[0].largest.is_empty());
        assert!(out.windows(2).all(|w| w[0].total <= w[1].total && w[0].clock <= w[1].clock));
        assert!(out.iter().all(|p| p.largest.len() <= 3));
        assert!(subordinated_stable_representation(2.0, &[1.0], 1, 1e-6, 1e-4, &mut rng).is_err());
    }

    #[test]
    fn stable_increment_laplace() {
        // T(r) for the 1/beta-stable subordinator has transform exp(-r q^{1/beta})
        let (beta, r) = (1.5f64, 0.7f64);
        let c = 1.0 / gamma_fn(1.0 - 1.0 / beta);
        let mut rng = seeded(7);
        let vals: Vec<f64> = (0..20_000)
            .map(|_| {
                let first = exp1(&mut rng);
                lepage_jumps(1.0 / beta, c, r, first, 1e-6 * r.powf(beta), 1, &mut rng).total()
            })
            .collect();
        for q in [0.5f64, 1.0, 2.0] {
            let e = empirical_laplace(&vals, q).unwrap();
            let target = (-r * q.powf(1.0 / beta)).exp();
            assert!((e.mean - target).abs() < 3.0 * e.se, "{q}: {e:?} vs {target}");
        }
    }
}
