//! The Brownian dislocation measure, with density
//! `(2π x³ (1-x)³)^{-1/2}` for the larger fragment `x` on `[1/2, 1)`,
//! and the matching single-mass immigration measure with density `(2π x³)^{-1/2}`.

use std::f64::consts::PI;

use rand::RngCore;

use super::{check_delta, check_epsilon, DislocationMeasure, Fractions, ImmigrationMeasure};
use crate::error::{invalid, Result};
use crate::partitions::MassPartition;
use crate::quadrature::integrate;
use crate::rng::open01;

#[derive(Debug, Clone, Copy, Default)]
pub struct BrownianDislocation;

impl DislocationMeasure for BrownianDislocation {
    fn label(&self) -> String {
        "brownian".into()
    }

    fn rate(&self, epsilon: f64) -> Result<f64> {
        check_epsilon(epsilon)?;
        // y = 1 - x = e^u removes the endpoint singularity at x -> 1
        let c = (2.0 * PI).sqrt().recip();
        let f = |u: f64| {
            let y = u.exp();
            c * (-0.5 * u).exp() * (1.0 - y).powf(-1.5)
        };
        Ok(integrate(f, epsilon.ln(), 0.5f64.ln()).value)
    }

    fn sample_into(&self, epsilon: f64, rng: &mut dyn RngCore, out: &mut Fractions) -> Result<()> {
        check_epsilon(epsilon)?;
        if epsilon == 0.5 {
            return Err(invalid("epsilon", "the truncated Brownian measure is null at 1/2"));
        }
        // proposal for the smaller fragment y: density ∝ y^{-3/2} on (eps, 1/2];
        // acceptance (2(1-y))^{-3/2} is at least 2^{-3/2}
        let a = epsilon.sqrt().recip();
        let b = std::f64::consts::SQRT_2;
        let y = loop {
            let y = (a - open01(rng) * (a - b)).powi(-2);
            let accept = (2.0 * (1.0 - y)).powf(-1.5);
            if open01(rng) <= accept {
                break y.clamp(f64::MIN_POSITIVE, 0.5);
            }
        };
        out.parts.clear();
        out.parts.push(1.0 - y);
        out.parts.push(y);
        out.aggregate = 0.0;
        Ok(())
    }

    fn is_binary(&self) -> bool {
        true
    }

    fn is_conservative(&self) -> bool {
        true
    }

    fn small_dislocation_mass(&self, epsilon: f64) -> Result<f64> {
        check_epsilon(epsilon)?;
        // ∫_0^eps y · (2π y³(1-y)³)^{-1/2} dy with y = v²
        let c = 2.0 / (2.0 * PI).sqrt();
        Ok(integrate(|v| c * (1.0 - v * v).powf(-1.5), 0.0, epsilon.sqrt()).value)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BrownianImmigration;

impl ImmigrationMeasure for BrownianImmigration {
    fn label(&self) -> String {
        "brownian".into()
    }

    fn atom_rate(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        Ok((2.0 / (PI * delta)).sqrt())
    }

    fn sample_atom(&self, delta: f64, rng: &mut dyn RngCore) -> Result<MassPartition> {
        check_delta(delta)?;
        let u = open01(rng);
        // P(x > y) = sqrt(delta / y); u = 1 has x = delta exactly, nudge above
        let x = (delta / (u * u)).max(delta * (1.0 + f64::EPSILON));
        Ok(MassPartition::from_sorted_unchecked(vec![x], 0.0))
    }

    fn gamma(&self) -> Option<f64> {
        Some(0.5)
    }

    fn truncated_mass(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        Ok((2.0 * delta / PI).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::phi_nu;
    use crate::rng::seeded;

    // closed form of the truncated rate, independent of the quadrature path
    fn rate_oracle(eps: f64) -> f64 {
        2.0 * (1.0 - 2.0 * eps) / ((2.0 * PI).sqrt() * (eps * (1.0 - eps)).sqrt())
    }

    #[test]
    fn rate_matches_closed_form() {
        let nu = BrownianDislocation;
        assert_eq!(nu.rate(0.5).unwrap(), 0.0);
        let r = nu.rate(0.25).unwrap();
        assert!((r - 0.921_317_731_923_561_3).abs() < 1e-9, "{r}");
        for eps in [1e-9, 1e-6, 1e-3, 0.1, 0.49] {
            let (a, b) = (nu.rate(eps).unwrap(), rate_oracle(eps));
            assert!((a / b - 1.0).abs() < 1e-8, "{eps}: {a} vs {b}");
        }
        assert!(nu.rate(0.0).is_err());
        assert!(nu.rate(0.6).is_err());
    }

    #[test]
    fn small_eps_asymptotic() {
        let eps = 1e-6;
        let v = BrownianDislocation.rate(eps).unwrap() * (PI * eps / 2.0).sqrt();
        assert!((v - 1.0).abs() < 0.01);
    }

    #[test]
    fn phi_examples() {
        let p = phi_nu(&BrownianDislocation, 4.0).unwrap();
        assert!((p - 1.0 / 0.921_317_731_923_561_3).abs() < 1e-8);
        let m = 1e6;
        let p = phi_nu(&BrownianDislocation, m).unwrap();
        assert!((p / (PI / (2.0 * m)).sqrt() - 1.0).abs() < 0.01);
    }

    #[test]
    fn small_dislocation_mass_closed_form() {
        for eps in [1e-8f64, 1e-4, 0.3] {
            let exact = 2.0 / (2.0 * PI).sqrt() * (eps / (1.0 - eps)).sqrt();
            let v = BrownianDislocation.small_dislocation_mass(eps).unwrap();
            assert!((v / exact - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn samples_respect_support_and_law() {
        let nu = BrownianDislocation;
        let mut rng = seeded(11);
        let eps = 0.01;
        let n = 200_000;
        let mut below = 0usize;
        let mut f = Fractions::default();
        for _ in 0..n {
            nu.sample_into(eps, &mut rng, &mut f).unwrap();
            let (x, y) = (f.parts[0], f.parts[1]);
            assert!(x >= 0.5 && x < 1.0 - eps);
            assert!((x + y - 1.0).abs() < 1e-12);
            if x < 0.75 {
                below += 1;
            }
        }
        // P(s1 < 3/4) = rate(1/4) / rate(eps)
        let p = rate_oracle(0.25) / rate_oracle(eps);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((below as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn immigration_rate_and_support() {
        let im = BrownianImmigration;
        assert!((im.atom_rate(0.01).unwrap() - 7.978_845_608).abs() < 1e-8);
        // Lévy tail C δ^{-γ} with C = sqrt(2/π), γ = 1/2
        for d in [1e-4, 0.3, 7.0] {
            let c = (2.0 / PI).sqrt();
            assert!((im.atom_rate(d).unwrap() - c * d.powf(-0.5)).abs() < 1e-12);
        }
        assert!(im.atom_rate(0.0).is_err());
        let mut rng = seeded(2);
        for _ in 0..10_000 {
            let a = im.sample_atom(0.01, &mut rng).unwrap();
            assert_eq!(a.len(), 1);
            assert!(a.total() > 0.01);
        }
    }

    #[test]
    fn immigration_truncated_mean() {
        // E[min(x, 1)] for the conditional law P(x > y) = sqrt(δ / y):
        // ∫_0^1 P(x > y) dy = δ + ∫_δ^1 sqrt(δ/y) dy = δ + 2 sqrt(δ)(1 - sqrt(δ))
        let delta = 0.01f64;
        let exact = delta + 2.0 * delta.sqrt() * (1.0 - delta.sqrt());
        let oracle = delta + integrate(|y| (delta / y).sqrt(), delta, 1.0).value;
        assert!((exact - oracle).abs() < 1e-9);
        let mut rng = seeded(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| BrownianImmigration.sample_atom(delta, &mut rng).unwrap().total().min(1.0))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - exact).abs() < 3.0 * (var / n as f64).sqrt());
    }
}
