use std::sync::Arc;

use rand::RngCore;

use super::{check_delta, check_epsilon, DislocationMeasure, Fractions, ImmigrationMeasure};
use crate::error::{invalid, Error, Result};
use crate::partitions::{MassPartition, FRACTION_SUM_TOLERANCE};
use crate::rng::open01;

/// A point mass `total · δ_s` at a fixed fraction sequence.
#[derive(Debug, Clone)]
pub struct FiniteDislocation {
    fractions: Vec<f64>,
    total: f64,
}

impl FiniteDislocation {
    pub fn new(mut fractions: Vec<f64>, total: f64) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("rate", format!("{total} must be positive and finite")));
        }
        if fractions.iter().any(|&f| !(f >= 0.0)) {
            return Err(invalid("fractions", "must be non-negative"));
        }
        fractions.sort_by(|a, b| b.total_cmp(a));
        fractions.retain(|&f| f > 0.0);
        let sum: f64 = fractions.iter().sum();
        if sum > 1.0 + FRACTION_SUM_TOLERANCE {
            return Err(Error::FractionsExceedOne(sum));
        }
        if fractions.first().is_none_or(|&f| f >= 1.0) {
            return Err(invalid("fractions", "largest fraction must be below 1"));
        }
        Ok(Self { fractions, total })
    }
}

impl DislocationMeasure for FiniteDislocation {
    fn label(&self) -> String {
        format!("finite{:?}x{}", self.fractions, self.total)
    }

    fn rate(&self, epsilon: f64) -> Result<f64> {
        check_epsilon(epsilon)?;
        Ok(if self.fractions[0] < 1.0 - epsilon { self.total } else { 0.0 })
    }

    fn sample_into(&self, epsilon: f64, _rng: &mut dyn RngCore, out: &mut Fractions) -> Result<()> {
        if self.rate(epsilon)? == 0.0 {
            return Err(invalid("epsilon", "the truncated measure is null"));
        }
        out.parts.clear();
        out.parts.extend_from_slice(&self.fractions);
        out.aggregate = 0.0;
        Ok(())
    }

    fn is_binary(&self) -> bool {
        self.fractions.len() <= 2
    }

    fn is_conservative(&self) -> bool {
        (self.fractions.iter().sum::<f64>() - 1.0).abs() <= FRACTION_SUM_TOLERANCE
    }

    fn small_dislocation_mass(&self, epsilon: f64) -> Result<f64> {
        Ok(if self.rate(epsilon)? == 0.0 {
            self.total * (1.0 - self.fractions[0])
        } else {
            0.0
        })
    }
}

/// Binary conservative measure with `rate(eps) = eps^{-gamma}` exactly on
/// `(0, 1/2)`: the smaller fragment `y` has density `gamma y^{-1-gamma}` on
/// `(0, 1/2)` plus an atom of mass `2^gamma` at `y = 1/2`.
#[derive(Debug, Clone, Copy)]
pub struct PowerLawDislocation {
    gamma: f64,
}

impl PowerLawDislocation {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 1.0 {
            Ok(Self { gamma })
        } else {
            Err(invalid("gamma", format!("{gamma} is outside (0, 1)")))
        }
    }
}

impl DislocationMeasure for PowerLawDislocation {
    fn label(&self) -> String {
        format!("power:gamma={}", self.gamma)
    }

    fn rate(&self, epsilon: f64) -> Result<f64> {
        check_epsilon(epsilon)?;
        Ok(if epsilon < 0.5 { epsilon.powf(-self.gamma) } else { 0.0 })
    }

    fn sample_into(&self, epsilon: f64, rng: &mut dyn RngCore, out: &mut Fractions) -> Result<()> {
        if self.rate(epsilon)? == 0.0 {
            return Err(invalid("epsilon", "the truncated measure is null"));
        }
        let y = (epsilon * open01(rng).powf(-1.0 / self.gamma)).min(0.5);
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
        let g = self.gamma;
        let e = epsilon.min(0.5);
        Ok(g * e.powf(1.0 - g) / (1.0 - g))
    }
}

/// The zero measure: fragments never split.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDislocation;

impl DislocationMeasure for NoDislocation {
    fn label(&self) -> String {
        "zero".into()
    }

    fn rate(&self, epsilon: f64) -> Result<f64> {
        check_epsilon(epsilon)?;
        Ok(0.0)
    }

    fn sample_into(&self, _epsilon: f64, _rng: &mut dyn RngCore, _out: &mut Fractions) -> Result<()> {
        Err(invalid("epsilon", "the zero measure cannot be sampled"))
    }

    fn is_binary(&self) -> bool {
        true
    }

    fn is_conservative(&self) -> bool {
        true
    }

    fn small_dislocation_mass(&self, epsilon: f64) -> Result<f64> {
        check_epsilon(epsilon)?;
        Ok(0.0)
    }
}

/// `factor · nu`.
#[derive(Debug, Clone)]
pub struct ScaledDislocation {
    inner: Arc<dyn DislocationMeasure>,
    factor: f64,
}

impl ScaledDislocation {
    pub fn new(inner: Arc<dyn DislocationMeasure>, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(invalid("scale", format!("{factor} must be non-negative and finite")));
        }
        Ok(Self { inner, factor })
    }
}

impl DislocationMeasure for ScaledDislocation {
    fn label(&self) -> String {
        format!("{}*{}", self.factor, self.inner.label())
    }

    fn rate(&self, epsilon: f64) -> Result<f64> {
        Ok(self.factor * self.inner.rate(epsilon)?)
    }

    fn sample_into(&self, epsilon: f64, rng: &mut dyn RngCore, out: &mut Fractions) -> Result<()> {
        if self.factor == 0.0 {
            return Err(invalid("epsilon", "the zero measure cannot be sampled"));
        }
        self.inner.sample_into(epsilon, rng, out)
    }

    fn is_binary(&self) -> bool {
        self.inner.is_binary()
    }

    fn is_conservative(&self) -> bool {
        self.inner.is_conservative()
    }

    fn small_dislocation_mass(&self, epsilon: f64) -> Result<f64> {
        Ok(self.factor * self.inner.small_dislocation_mass(epsilon)?)
    }
}

/// The null immigration measure, rejected by the experiments.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoImmigration;

impl ImmigrationMeasure for NoImmigration {
    fn label(&self) -> String {
        "zero".into()
    }

    fn atom_rate(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        Ok(0.0)
    }

    fn sample_atom(&self, _delta: f64, _rng: &mut dyn RngCore) -> Result<MassPartition> {
        Err(Error::TrivialImmigration)
    }

    fn gamma(&self) -> Option<f64> {
        None
    }

    fn truncated_mass(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        Ok(0.0)
    }

    fn is_trivial(&self) -> bool {
        true
    }
}

/// `factor · I`.
#[derive(Debug, Clone)]
pub struct ScaledImmigration {
    inner: Arc<dyn ImmigrationMeasure>,
    factor: f64,
}

impl ScaledImmigration {
    pub fn new(inner: Arc<dyn ImmigrationMeasure>, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(invalid("scale", format!("{factor} must be non-negative and finite")));
        }
        Ok(Self { inner, factor })
    }
}

impl ImmigrationMeasure for ScaledImmigration {
    fn label(&self) -> String {
        format!("{}*{}", self.factor, self.inner.label())
    }

    fn atom_rate(&self, delta: f64) -> Result<f64> {
        Ok(self.factor * self.inner.atom_rate(delta)?)
    }

    fn sample_atom(&self, delta: f64, rng: &mut dyn RngCore) -> Result<MassPartition> {
        if self.factor == 0.0 {
            return Err(Error::TrivialImmigration);
        }
        self.inner.sample_atom(delta, rng)
    }

    fn gamma(&self) -> Option<f64> {
        self.inner.gamma()
    }

    fn truncated_mass(&self, delta: f64) -> Result<f64> {
        Ok(self.factor * self.inner.truncated_mass(delta)?)
    }

    fn is_trivial(&self) -> bool {
        self.factor == 0.0 || self.inner.is_trivial()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn power_law_rate_and_samples() {
        let nu = PowerLawDislocation::new(0.7).unwrap();
        assert!((nu.rate(1e-3).unwrap() - 1e-3f64.powf(-0.7)).abs() < 1e-9);
        let mut rng = seeded(4);
        let eps = 1e-3;
        let n = 100_000;
        let mut big = 0;
        for _ in 0..n {
            let s = nu.sample(eps, &mut rng).unwrap();
            assert!(s.s1() < 1.0 - eps && s.s1() >= 0.5);
            assert!((s.sum() - 1.0).abs() < 1e-12);
            if s.parts[1] > 0.1 {
                big += 1;
            }
        }
        // P(y > 0.1) = rate(0.1) / rate(eps)
        let p = (0.1f64 / eps).powf(-0.7);
        assert!((big as f64 / n as f64 - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn finite_validation() {
        assert!(FiniteDislocation::new(vec![0.7, 0.7], 1.0).is_err());
        assert!(FiniteDislocation::new(vec![1.0], 1.0).is_err());
        assert!(FiniteDislocation::new(vec![0.5, 0.5], 0.0).is_err());
        let nu = FiniteDislocation::new(vec![0.25, 0.5, 0.25], 2.0).unwrap();
        assert!(!nu.is_binary());
        assert!(nu.is_conservative());
        assert_eq!(nu.rate(0.4).unwrap(), 2.0);
    }

    #[test]
    fn scaled_measures() {
        let nu = ScaledDislocation::new(Arc::new(PowerLawDislocation::new(0.5).unwrap()), 3.0).unwrap();
        assert!((nu.rate(0.01).unwrap() - 30.0).abs() < 1e-12);
        let im = ScaledImmigration::new(Arc::new(NoImmigration), 2.0).unwrap();
        assert!(im.is_trivial());
    }
}
