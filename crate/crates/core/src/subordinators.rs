//! Subordinator paths: compound-Poisson paths with a compensating drift,
//! stable subordinators, the tagged-fragment subordinator `xi`, and the time
//! change that turns `xi` into the mass of the tagged fragment.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{check_epsilon, DislocationMeasure, Fractions, RateFunction};
use crate::rng::{exp1, open01};

/// Non-decreasing path `drift * t + Σ_{t_i <= t} size_i` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    horizon: f64,
    drift: f64,
    jumps: Vec<(f64, f64)>,
}

impl JumpPath {
    pub fn new(horizon: f64, drift: f64, jumps: Vec<(f64, f64)>) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(invalid("horizon", format!("{horizon} must be finite and non-negative")));
        }
        if !(drift >= 0.0) || !drift.is_finite() {
            return Err(invalid("drift", format!("{drift} must be finite and non-negative")));
        }
        let mut last = f64::NEG_INFINITY;
        for &(t, s) in &jumps {
            if !(t > last) || t < 0.0 || t > horizon {
                return Err(invalid("jumps", format!("jump time {t} out of order or outside [0, {horizon}]")));
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(invalid("jumps", format!("jump size {s} must be positive and finite")));
            }
            last = t;
        }
        Ok(Self { horizon, drift, jumps })
    }

    pub fn zero(horizon: f64) -> Self {
        Self {
            horizon,
            drift: 0.0,
            jumps: Vec::new(),
        }
    }

    /// Builds a path from unsorted jumps, merging jumps that share a time.
    pub fn from_unsorted(horizon: f64, drift: f64, mut jumps: Vec<(f64, f64)>) -> Result<Self> {
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(jumps.len());
        for (t, s) in jumps {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += s,
                _ => merged.push((t, s)),
            }
        }
        Self::new(horizon, drift, merged)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn jumps(&self) -> &[(f64, f64)] {
        &self.jumps
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, horizon: self.horizon })
        }
    }

    /// Number of jumps at times `<= t`.
    fn count_upto(&self, t: f64) -> usize {
        self.jumps.partition_point(|j| j.0 <= t)
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let k = self.count_upto(t);
        Ok(self.drift * t + self.jumps[..k].iter().map(|j| j.1).sum::<f64>())
    }

    /// `(time, value)` after each jump, starting at `(0, 0)` and ending at the horizon.
    pub fn cumulative_points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 2);
        out.push((0.0, 0.0));
        let mut acc = 0.0;
        for &(t, s) in &self.jumps {
            acc += s;
            out.push((t, acc + self.drift * t));
        }
        out.push((self.horizon, acc + self.drift * self.horizon));
        out
    }

    /// Appends jumps after the current horizon and moves the horizon to `horizon`.
    pub fn extend(&mut self, horizon: f64, jumps: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
        if !(horizon >= self.horizon) {
            return Err(invalid("horizon", "extension must not shrink the path"));
        }
        let old = self.horizon;
        let mut last = self.jumps.last().map_or(f64::NEG_INFINITY, |j| j.0);
        for (t, s) in jumps {
            if !(t > old && t > last && t <= horizon && s > 0.0) {
                return Err(invalid("jumps", format!("extension jump ({t}, {s}) is invalid")));
            }
            self.jumps.push((t, s));
            last = t;
        }
        self.horizon = horizon;
        Ok(())
    }
}

fn check_stable(gamma: f64, c: f64, floor: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", format!("{gamma} is outside (0, 1)")));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(invalid("C", format!("{c} must be positive and finite")));
    }
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(invalid("jump_floor", format!("{floor} must be positive and finite")));
    }
    Ok(())
}

/// Drift replacing the jumps below `floor` of a subordinator with Lévy
/// density `C gamma x^{-1-gamma}`: their mean `C gamma / (1-gamma) floor^{1-gamma}`.
pub fn stable_compensator(gamma: f64, c: f64, floor: f64) -> f64 {
    c * gamma / (1.0 - gamma) * floor.powf(1.0 - gamma)
}

/// Stable subordinator with Lévy density `C gamma x^{-1-gamma}` (Laplace
/// exponent `C Γ(1-gamma) q^gamma`): jumps above `floor` are a Poisson
/// process of rate `C floor^{-gamma}` with Pareto sizes, smaller jumps are
/// replaced by their mean as a drift.
pub fn stable_path<R: RngCore + ?Sized>(gamma: f64, c: f64, horizon: f64, floor: f64, rng: &mut R) -> Result<JumpPath> {
    check_stable(gamma, c, floor)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon", format!("{horizon} must be finite and non-negative")));
    }
    let mean = c * floor.powf(-gamma) * horizon;
    let n = poisson(mean, rng)?;
    let jumps = (0..n)
        .map(|_| (rng.random::<f64>() * horizon, floor * open01(rng).powf(-1.0 / gamma)))
        .collect();
    JumpPath::from_unsorted(horizon, stable_compensator(gamma, c, floor), jumps)
}

pub(crate) fn poisson<R: RngCore + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| invalid("poisson mean", format!("{mean}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Ranked jumps of a stable subordinator over a time interval, with the
/// jumps beyond the kept ones summed and the sub-floor jumps compensated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedJumps {
    pub top: Vec<f64>,
    pub tail: f64,
    pub compensator: f64,
}

impl RankedJumps {
    pub fn total(&self) -> f64 {
        self.top.iter().sum::<f64>() + self.tail + self.compensator
    }

    pub fn largest(&self) -> f64 {
        self.top.first().copied().unwrap_or(0.0)
    }
}

/// LePage series for the subordinator with Lévy tail `C y^{-gamma}` over a
/// period `duration`: the k-th largest jump is `(C duration / Γ_k)^{1/gamma}`
/// with `Γ_k` the arrival times of a unit Poisson process, whose first arrival
/// is given as `first_arrival` (an `Exp(1)` draw for the exact law).
pub fn lepage_jumps<R: RngCore + ?Sized>(
    gamma: f64,
    c: f64,
    duration: f64,
    first_arrival: f64,
    floor: f64,
    keep: usize,
    rng: &mut R,
) -> RankedJumps {
    let scale = c * duration;
    let last = scale * floor.powf(-gamma);
    let inv = 1.0 / gamma;
    let mut out = RankedJumps {
        top: Vec::new(),
        tail: 0.0,
        compensator: duration * stable_compensator(gamma, c, floor),
    };
    let mut arrival = first_arrival;
    while arrival <= last {
        let jump = (scale / arrival).powf(inv);
        if out.top.len() < keep {
            out.top.push(jump);
        } else {
            out.tail += jump;
        }
        arrival += exp1(rng);
    }
    out
}

/// Tagged-fragment subordinator: Poisson events at rate `rate(eps)`, each a
/// jump `-log s1` of an independent truncated dislocation.
pub fn xi_path<R: RngCore>(nu: &dyn DislocationMeasure, epsilon: f64, horizon: f64, rng: &mut R) -> Result<JumpPath> {
    let mut path = JumpPath::zero(0.0);
    extend_xi(&mut path, nu, epsilon, horizon, rng)?;
    Ok(path)
}

/// Continues a `xi` path up to `horizon`; exact by memorylessness.
pub fn extend_xi<R: RngCore>(
    path: &mut JumpPath,
    nu: &dyn DislocationMeasure,
    epsilon: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<()> {
    check_epsilon(epsilon)?;
    if path.drift != 0.0 {
        return Err(invalid("xi", "a tagged-fragment path has no drift"));
    }
    let rate = nu.rate(epsilon)?;
    let mut jumps = Vec::new();
    if rate > 0.0 {
        let mut f = Fractions::default();
        let mut t = path.horizon;
        loop {
            t += exp1(rng) / rate;
            if t > horizon {
                break;
            }
            nu.sample_into(epsilon, rng, &mut f)?;
            jumps.push((t, -f.s1().ln()));
        }
    }
    path.extend(horizon, jumps)
}

/// `inf{u : ∫_0^u dr / tau(m e^{-xi(r)}) > t}`, computed exactly since the
/// integrand is piecewise constant.
///
/// Returns `+inf` when the integrand has vanished on the last known stretch
/// (the clock has stopped), and [`Error::HorizonExhausted`] when the path ends
/// before the integral reaches `t`; the caller should then extend the path.
pub fn rho_time_change(xi: &JumpPath, tau: &RateFunction, m: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("{t} must be non-negative")));
    }
    if xi.drift != 0.0 {
        return Err(invalid("xi", "time change needs a pure-jump path"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    let mut level = 0.0f64;
    let mut prev = 0.0;
    let mut g = 0.0;
    let segments = xi.jumps.iter().map(|j| (j.0, j.1)).chain(std::iter::once((xi.horizon, 0.0)));
    for (tj, sj) in segments {
        g = 1.0 / tau.evaluate(m * (-level).exp());
        let seg = (tj - prev) * g;
        if g > 0.0 && acc + seg >= t {
            return Ok(prev + (t - acc) / g);
        }
        acc += seg;
        level += sj;
        prev = tj;
    }
    if g == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Err(Error::HorizonExhausted {
            horizon: xi.horizon,
            target: t,
        })
    }
}

/// `∫_0^u dr / tau(m e^{-xi(r)})`, the forward map inverted by [`rho_time_change`].
pub fn time_change_integral(xi: &JumpPath, tau: &RateFunction, m: f64, u: f64) -> Result<f64> {
    xi.check_time(u)?;
    let mut acc = 0.0;
    let mut level = 0.0f64;
    let mut prev = 0.0;
    for &(tj, sj) in &xi.jumps {
        if tj > u {
            break;
        }
        acc += (tj - prev) / tau.evaluate(m * (-level).exp());
        level += sj;
        prev = tj;
    }
    Ok(acc + (u - prev) / tau.evaluate(m * (-level).exp()))
}

/// Mass of the tagged fragment, `m exp(-xi(rho(t)))`.
pub fn lambda_process(xi: &JumpPath, tau: &RateFunction, m: f64, t: f64) -> Result<f64> {
    let r = rho_time_change(xi, tau, m, t)?;
    if !r.is_finite() {
        return Err(invalid("t", "the time change is infinite at this time"));
    }
    Ok(m * (-xi.evaluate(r)?).exp())
}

/// Time change with on-demand extension of `xi` in blocks of growing length.
pub fn rho_extending<R: RngCore>(
    xi: &mut JumpPath,
    nu: &dyn DislocationMeasure,
    epsilon: f64,
    tau: &RateFunction,
    m: f64,
    t: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut block = xi.horizon.max(1.0);
    for _ in 0..64 {
        match rho_time_change(xi, tau, m, t) {
            Err(Error::HorizonExhausted { .. }) => {
                extend_xi(xi, nu, epsilon, xi.horizon + block, rng)?;
                block *= 2.0;
            }
            other => return other,
        }
    }
    Err(Error::HorizonExhausted {
        horizon: xi.horizon,
        target: t,
    })
}

/// The `k` largest jumps at times `<= t`, descending, padded with zeros.
pub fn largest_jumps(path: &JumpPath, t: f64, k: usize) -> Result<Vec<f64>> {
    path.check_time(t)?;
    let mut sizes: Vec<f64> = path.jumps[..path.count_upto(t)].iter().map(|j| j.1).collect();
    sizes.sort_by(|a, b| b.total_cmp(a));
    sizes.resize(k, 0.0);
    Ok(sizes)
}
