//! Dislocation measures, immigration measures and the quantities derived from
//! them (truncated rates, `phi`, rescaled samples).
//!
//! A dislocation measure is only ever used through its truncation to
//! `{s1 < 1 - eps}`, which has finite total mass `rate(eps)` for every
//! `eps > 0`. Samplers return the normalized law of that truncation.

mod brownian;
mod simple;
mod stable;

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::partitions::MassPartition;

pub use brownian::{BrownianDislocation, BrownianImmigration};
pub use simple::{
    FiniteDislocation, NoDislocation, NoImmigration, PowerLawDislocation, ScaledDislocation,
    ScaledImmigration,
};
pub use stable::{
    stable_dislocation_constant, stable_immigration_constant, StableDislocation, StableImmigration,
    StablePool, StablePoolConfig,
};

/// One dislocation: decreasing fractions plus an aggregate of compensated
/// small pieces that is not a fragment of its own.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fractions {
    pub parts: Vec<f64>,
    pub aggregate: f64,
}

impl Fractions {
    pub fn s1(&self) -> f64 {
        self.parts.first().copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.parts.iter().sum::<f64>() + self.aggregate
    }
}

pub trait DislocationMeasure: Send + Sync + fmt::Debug {
    fn label(&self) -> String;

    /// `nu(s1 < 1 - eps)` for `eps` in `(0, 1/2]`.
    fn rate(&self, epsilon: f64) -> Result<f64>;

    /// Draws from the normalized restriction of the measure to `{s1 < 1 - eps}`.
    fn sample_into(&self, epsilon: f64, rng: &mut dyn RngCore, out: &mut Fractions) -> Result<()>;

    fn sample(&self, epsilon: f64, rng: &mut dyn RngCore) -> Result<Fractions> {
        let mut out = Fractions::default();
        self.sample_into(epsilon, rng, &mut out)?;
        Ok(out)
    }

    fn is_binary(&self) -> bool;

    fn is_conservative(&self) -> bool;

    /// `∫_{s1 >= 1-eps} (1 - s1) nu(ds)`: the mass-loss rate ignored by the truncation.
    fn small_dislocation_mass(&self, epsilon: f64) -> Result<f64>;
}

pub trait ImmigrationMeasure: Send + Sync + fmt::Debug {
    fn label(&self) -> String;

    /// Intensity of atoms whose total mass exceeds `delta`.
    fn atom_rate(&self, delta: f64) -> Result<f64>;

    /// An atom conditioned on total mass above `delta`.
    fn sample_atom(&self, delta: f64, rng: &mut dyn RngCore) -> Result<MassPartition>;

    /// Self-similarity index, if the measure has one.
    fn gamma(&self) -> Option<f64>;

    /// `∫_{total <= delta} total I(du)`, the immigrant mass per unit time
    /// discarded by the truncation.
    fn truncated_mass(&self, delta: f64) -> Result<f64>;

    fn is_trivial(&self) -> bool {
        false
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon <= 0.5 {
        Ok(())
    } else {
        Err(invalid("epsilon", format!("{epsilon} is outside (0, 1/2]")))
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(invalid("delta", format!("{delta} must be positive and finite")))
    }
}

/// Splitting rate as a function of mass.
#[derive(Clone)]
pub enum RateFunction {
    Power { alpha: f64 },
    General {
        label: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl RateFunction {
    pub fn power(alpha: f64) -> Self {
        RateFunction::Power { alpha }
    }

    pub fn constant() -> Self {
        RateFunction::Power { alpha: 0.0 }
    }

    pub fn general(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RateFunction::General {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    #[inline]
    pub fn evaluate(&self, s: f64) -> f64 {
        match self {
            RateFunction::Power { alpha } if *alpha == 0.0 => 1.0,
            RateFunction::Power { alpha } => s.powf(*alpha),
            RateFunction::General { f, .. } => f(s),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            RateFunction::Power { alpha } => Some(*alpha),
            RateFunction::General { .. } => None,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.alpha() == Some(0.0)
    }

    pub fn label(&self) -> String {
        match self {
            RateFunction::Power { alpha } => format!("s^{alpha}"),
            RateFunction::General { label, .. } => label.clone(),
        }
    }
}

impl fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RateFunction({})", self.label())
    }
}

/// `1 / nu(s1 < 1 - 1/m)`.
pub fn phi_nu(nu: &dyn DislocationMeasure, m: f64) -> Result<f64> {
    if !(m >= 2.0) || !m.is_finite() {
        return Err(invalid("m", format!("{m} must be finite and at least 2")));
    }
    let r = nu.rate(1.0 / m)?;
    if r > 0.0 {
        Ok(1.0 / r)
    } else {
        Err(Error::PhiUndefined(m))
    }
}

/// Solves `phi_nu(m) = target` by bisection in `log m`; `phi_nu` is non-increasing.
pub fn phi_inverse(nu: &dyn DislocationMeasure, target: f64) -> Result<f64> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(invalid("target", format!("{target} must be positive and finite")));
    }
    // undefined phi (null rate) counts as +inf
    let phi = |m: f64| phi_nu(nu, m).unwrap_or(f64::INFINITY);
    let mut lo = 2.0f64;
    if phi(lo) <= target {
        return Err(Error::Bracket(format!(
            "phi(2) = {} is already below the target {target}",
            phi(lo)
        )));
    }
    let mut hi = 4.0f64;
    while phi(hi) > target {
        lo = hi;
        hi *= hi;
        if !hi.is_finite() || hi > 1e300 {
            return Err(Error::Bracket(format!("phi stays above {target} up to m = 1e300")));
        }
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if phi(mid.exp()) > target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    Ok(b.exp())
}

/// Least-squares slope of `log phi_nu(m)` against `log m`.
pub fn estimate_regular_variation_index(nu: &dyn DislocationMeasure, m_grid: &[f64]) -> Result<f64> {
    if m_grid.len() < 4 {
        return Err(invalid("m_grid", "needs at least 4 points"));
    }
    let (lo, hi) = m_grid
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &m| (l.min(m), h.max(m)));
    if hi / lo < 1e3 {
        return Err(invalid("m_grid", "must span at least three decades"));
    }
    let points = m_grid
        .iter()
        .map(|&m| Ok((m.ln(), phi_nu(nu, m)?.ln())))
        .collect::<Result<Vec<_>>>()?;
    Ok(least_squares_slope(&points))
}

pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// A draw of `(m s2, m s3, ...)` under `nu` restricted to `{s1 < 1 - 1/m}`.
/// The aggregate of compensated pieces goes to dust.
pub fn rescaled_sample(nu: &dyn DislocationMeasure, m: f64, rng: &mut dyn RngCore) -> Result<MassPartition> {
    phi_nu(nu, m)?;
    let s = nu.sample(1.0 / m, rng)?;
    let rest: Vec<f64> = s.parts.iter().skip(1).map(|x| x * m).filter(|&x| x > 0.0).collect();
    Ok(MassPartition::from_sorted_unchecked(rest, s.aggregate * m))
}

/// Piecewise-linear interpolation of `rate` against `log eps`, used by the
/// engine when the effective truncation depends on the fragment mass.
#[derive(Debug, Clone)]
pub struct RateTable {
    ln_lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl RateTable {
    pub fn build(nu: &dyn DislocationMeasure, eps_min: f64, points_per_decade: usize) -> Result<Self> {
        check_epsilon(eps_min)?;
        let ln_lo = eps_min.ln();
        let ln_hi = 0.5f64.ln();
        let n = (((ln_hi - ln_lo) / std::f64::consts::LN_10) * points_per_decade as f64).ceil() as usize + 2;
        let step = (ln_hi - ln_lo) / (n - 1) as f64;
        let values = (0..n)
            .map(|i| {
                let eps = if i == n - 1 { 0.5 } else { (ln_lo + step * i as f64).exp() };
                nu.rate(eps.clamp(eps_min, 0.5))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ln_lo, step, values })
    }

    /// Rate at `eps`, clamped into the tabulated range.
    #[inline]
    pub fn rate(&self, epsilon: f64) -> f64 {
        let x = (epsilon.ln() - self.ln_lo) / self.step;
        if x <= 0.0 {
            return self.values[0];
        }
        let i = x as usize;
        if i + 1 >= self.values.len() {
            return self.values[self.values.len() - 1];
        }
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Parsed measure identifier `kind[:arg,key=value,...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureId {
    pub kind: String,
    pub flags: Vec<String>,
    pub params: Vec<(String, f64)>,
}

impl MeasureId {
    pub fn parse(id: &str) -> Result<Self> {
        let (kind, rest) = match id.split_once(':') {
            Some((k, r)) => (k.trim(), r),
            None => (id.trim(), ""),
        };
        if kind.is_empty() {
            return Err(invalid("measure", format!("empty identifier in `{id}`")));
        }
        let mut flags = Vec::new();
        let mut params = Vec::new();
        for tok in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.split_once('=') {
                Some((k, v)) => {
                    let v: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| invalid("measure", format!("`{v}` is not a number in `{id}`")))?;
                    params.push((k.trim().to_string(), v));
                }
                None => flags.push(tok.to_string()),
            }
        }
        Ok(Self {
            kind: kind.to_string(),
            flags,
            params,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|p| p.1)
    }

    fn check_keys(&self, allowed: &[&str], allowed_flags: &[&str]) -> Result<()> {
        if let Some((k, _)) = self.params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(invalid("measure", format!("unknown parameter `{k}` for `{}`", self.kind)));
        }
        if let Some(f) = self.flags.iter().find(|f| !allowed_flags.contains(&f.as_str())) {
            return Err(invalid("measure", format!("unknown option `{f}` for `{}`", self.kind)));
        }
        Ok(())
    }
}

/// Resolves a dislocation identifier: `brownian`, `stable:beta=1.5[,pool=..,floor=..]`,
/// `finite:binary-half[,rate=..]`, `power:gamma=0.7`, `zero`; any of them
/// accepts `scale=` to multiply the measure.
pub fn parse_dislocation(id: &str, seed: u64) -> Result<Arc<dyn DislocationMeasure>> {
    let p = MeasureId::parse(id)?;
    let base: Arc<dyn DislocationMeasure> = match p.kind.as_str() {
        "brownian" => {
            p.check_keys(&["scale"], &[])?;
            Arc::new(BrownianDislocation)
        }
        "stable" => {
            p.check_keys(&["beta", "pool", "floor", "scale"], &[])?;
            let beta = p.get("beta").ok_or_else(|| invalid("measure", "stable needs beta="))?;
            let mut cfg = StablePoolConfig::new(beta, seed);
            if let Some(n) = p.get("pool") {
                cfg.size = n as usize;
            }
            if let Some(f) = p.get("floor") {
                cfg.jump_floor = f;
            }
            Arc::new(StableDislocation::new(Arc::new(StablePool::build(cfg)?))?)
        }
        "finite" => {
            p.check_keys(&["rate", "scale"], &["binary-half"])?;
            if p.flags.iter().all(|f| f != "binary-half") {
                return Err(invalid("measure", "finite measures available: finite:binary-half"));
            }
            Arc::new(FiniteDislocation::new(vec![0.5, 0.5], p.get("rate").unwrap_or(1.0))?)
        }
        "power" => {
            p.check_keys(&["gamma", "scale"], &[])?;
            let g = p.get("gamma").ok_or_else(|| invalid("measure", "power needs gamma="))?;
            Arc::new(PowerLawDislocation::new(g)?)
        }
        "zero" => {
            p.check_keys(&[], &[])?;
            Arc::new(NoDislocation)
        }
        other => return Err(invalid("measure", format!("unknown dislocation measure `{other}`"))),
    };
    match p.get("scale") {
        Some(c) => Ok(Arc::new(ScaledDislocation::new(base, c)?)),
        None => Ok(base),
    }
}

/// Resolves an immigration identifier: `brownian`, `stable:beta=1.5[,pool=..,floor=..]`,
/// `zero`; `scale=` multiplies the intensity.
pub fn parse_immigration(id: &str, seed: u64) -> Result<Arc<dyn ImmigrationMeasure>> {
    let p = MeasureId::parse(id)?;
    let base: Arc<dyn ImmigrationMeasure> = match p.kind.as_str() {
        "brownian" => {
            p.check_keys(&["scale"], &[])?;
            Arc::new(BrownianImmigration)
        }
        "stable" => {
            p.check_keys(&["beta", "pool", "floor", "scale"], &[])?;
            let beta = p.get("beta").ok_or_else(|| invalid("measure", "stable needs beta="))?;
            let mut cfg = StablePoolConfig::new(beta, seed);
            if let Some(n) = p.get("pool") {
                cfg.size = n as usize;
            }
            if let Some(f) = p.get("floor") {
                cfg.jump_floor = f;
            }
            Arc::new(StableImmigration::new(Arc::new(StablePool::build(cfg)?))?)
        }
        "zero" => {
            p.check_keys(&[], &[])?;
            Arc::new(NoImmigration)
        }
        other => return Err(invalid("measure", format!("unknown immigration measure `{other}`"))),
    };
    match p.get("scale") {
        Some(c) => Ok(Arc::new(ScaledImmigration::new(base, c)?)),
        None => Ok(base),
    }
}
