//! Monte Carlo experiments comparing finite-mass fragmentations against
//! their large-mass and small-time limits, reported as KS distances,
//! Laplace transforms and pass/fail verdicts.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::engine::{Diagnostics, Engine, Truncation};
use crate::error::{invalid, Error, Result};
use crate::excursion::{brownian_excursion_into, subordinated_stable_representation, ExcursionGrid};
use crate::immigration::{fi_marginals, sample_immigration, sigma_path};
use crate::measures::{
    estimate_regular_variation_index, phi_inverse, phi_nu, BrownianDislocation, DislocationMeasure,
    ImmigrationMeasure, RateFunction, StableImmigration, StablePool, StablePoolConfig,
};
use crate::partitions::{l1_distance, MassPartition};
use crate::rng::{exp1, replica_rng, SimRng};
use crate::stats::{empirical_laplace, ks_standard_error, ks_two_sample, quantile, LaplaceEstimate};
use crate::subordinators::{lambda_process, lepage_jumps, stable_path, time_change_integral, xi_path, JumpPath};

pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const LAPLACE_QS: [f64; 3] = [0.5, 1.0, 2.0];

const TAG_SIM: u64 = 0x4558_5053_494d_0000;
const TAG_REF: u64 = 0x4558_5052_4546_0000;
const TAG_CHECK: u64 = 0x4558_5043_484b_0000;

/// Truncation parameters shared by every cell of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Approximation {
    /// Relative dislocation truncation `epsilon(m) = min(1/2, m^-epsilon_power)`.
    pub epsilon_power: f64,
    /// Chips lighter than this, on the limit scale, are not simulated.
    pub chip_floor: f64,
    pub mass_floor: f64,
    /// Immigrant atoms of total mass below this are not simulated.
    pub delta_atom: f64,
    /// Jump floor for stable subordinator samplers.
    pub jump_floor: f64,
}

impl Default for Approximation {
    fn default() -> Self {
        Self {
            epsilon_power: 2.0,
            chip_floor: 1e-4,
            mass_floor: 1e-3,
            delta_atom: 1e-4,
            jump_floor: 1e-6,
        }
    }
}

impl Approximation {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon_power", self.epsilon_power),
            ("mass_floor", self.mass_floor),
            ("delta_atom", self.delta_atom),
            ("jump_floor", self.jump_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("{v} must be positive and finite")));
            }
        }
        if !(self.chip_floor >= 0.0) || !self.chip_floor.is_finite() {
            return Err(invalid("chip_floor", format!("{} must be finite and non-negative", self.chip_floor)));
        }
        Ok(())
    }

    fn truncation(&self, m: f64, scale: f64) -> Truncation {
        Truncation::new(m.powf(-self.epsilon_power).min(0.5), self.mass_floor / scale)
            .with_chip_floor(self.chip_floor / scale)
    }

    /// Truncation for the limit objects, whose fragments start at immigrant
    /// masses: the chip floor governs up to masses of order `1e3`.
    fn limit_truncation(&self) -> Truncation {
        let floor = self.chip_floor.max(self.mass_floor);
        Truncation::new((floor * 1e-3).min(0.5), self.mass_floor).with_chip_floor(self.chip_floor)
    }
}

/// Multiplier applied to probe times in a cell of mass `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeScale {
    Identity,
    /// `phi_nu(m) / tau(m)`.
    PhiOverTau,
    /// `m^exponent`.
    Power { exponent: f64 },
}

impl TimeScale {
    pub fn factor(&self, tau: &RateFunction, nu: &dyn DislocationMeasure, m: f64) -> Result<f64> {
        Ok(match *self {
            TimeScale::Identity => 1.0,
            TimeScale::PhiOverTau => phi_nu(nu, m)? / tau.evaluate(m),
            TimeScale::Power { exponent } => m.powf(exponent),
        })
    }
}

/// Regime of the rescaled large-mass limit: (i) immigration survives, (ii)
/// the immigrants have all turned to dust and only the lost mass remains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "i")]
    Immigration,
    #[serde(rename = "ii")]
    LossOfMass,
}

/// Process parameters of an experiment.
#[derive(Clone)]
pub struct Setup {
    pub tau: RateFunction,
    pub nu: Arc<dyn DislocationMeasure>,
    pub immigration: Arc<dyn ImmigrationMeasure>,
    pub approximation: Approximation,
    /// Replicas per grid cell.
    pub n: usize,
    /// Replicas of the limit object.
    pub n_reference: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Setup {
    pub fn new(
        tau: RateFunction,
        nu: Arc<dyn DislocationMeasure>,
        immigration: Arc<dyn ImmigrationMeasure>,
        n: usize,
        seed: u64,
    ) -> Self {
        Self {
            tau,
            nu,
            immigration,
            approximation: Approximation::default(),
            n,
            n_reference: n,
            seed,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n_reference < 2 {
            return Err(invalid("n", "experiments need at least two replicas"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(invalid("threshold", format!("{} is outside (0, 1]", self.threshold)));
        }
        if self.immigration.is_trivial() {
            return Err(Error::TrivialImmigration);
        }
        self.approximation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Grid value (initial mass, or time compression for small-time runs).
    pub param: f64,
    pub mass: f64,
    pub time_factor: f64,
    pub truncation: Truncation,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplacePair {
    pub q: f64,
    pub sim_mean: f64,
    pub sim_se: f64,
    pub ref_mean: f64,
    pub ref_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub series: String,
    pub param: f64,
    pub t: f64,
    pub ks: f64,
    pub ks_se: f64,
    pub p_value: f64,
    pub n_sim: usize,
    pub n_ref: usize,
    pub laplace: Vec<LaplacePair>,
    /// Whether verdicts are drawn from this series.
    pub scored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRecord {
    pub series: String,
    pub param: f64,
    pub t: f64,
    pub p: f64,
    pub value: f64,
}

/// A scalar estimate against a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub pass: bool,
    pub detail: String,
}

/// Raw samples behind one comparison, kept out of the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub series: String,
    pub side: String,
    pub param: f64,
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub tau: String,
    pub dislocation: String,
    pub immigration: String,
    pub approximation: Approximation,
    pub n: usize,
    pub n_reference: usize,
    pub seed: u64,
    pub threshold: f64,
    pub grid: Vec<f64>,
    pub probes: Vec<f64>,
    pub cells: Vec<Cell>,
    pub comparisons: Vec<Comparison>,
    pub quantiles: Vec<QuantileRecord>,
    pub checks: Vec<Check>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub raw: Vec<RawSample>,
}

impl ConvergenceReport {
    fn new(experiment: &str, setup: Option<&Setup>, grid: &[f64], probes: &[f64]) -> Self {
        let (tau, dislocation, immigration, approximation, n, n_reference, seed, threshold) = match setup {
            Some(s) => (
                s.tau.label(),
                s.nu.label(),
                s.immigration.label(),
                s.approximation,
                s.n,
                s.n_reference,
                s.seed,
                s.threshold,
            ),
            None => (
                String::new(),
                String::new(),
                String::new(),
                Approximation::default(),
                0,
                0,
                0,
                DEFAULT_THRESHOLD,
            ),
        };
        Self {
            experiment: experiment.into(),
            tau,
            dislocation,
            immigration,
            approximation,
            n,
            n_reference,
            seed,
            threshold,
            grid: grid.to_vec(),
            probes: probes.to_vec(),
            cells: Vec::new(),
            comparisons: Vec::new(),
            quantiles: Vec::new(),
            checks: Vec::new(),
            verdicts: Vec::new(),
            warnings: Vec::new(),
            raw: Vec::new(),
        }
    }

    /// True when every verdict passes.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    fn compare(&mut self, series: &str, param: f64, t: f64, sim: Vec<f64>, reference: &[f64], scored: bool) -> Result<()> {
        let ks = ks_two_sample(&sim, reference)?;
        let laplace = LAPLACE_QS
            .iter()
            .map(|&q| {
                let (a, b) = (empirical_laplace(&sim, q)?, empirical_laplace(reference, q)?);
                Ok(LaplacePair {
                    q,
                    sim_mean: a.mean,
                    sim_se: a.se,
                    ref_mean: b.mean,
                    ref_se: b.se,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.comparisons.push(Comparison {
            series: series.into(),
            param,
            t,
            ks: ks.statistic,
            ks_se: ks_standard_error(ks.n_a, ks.n_b),
            p_value: ks.p_value,
            n_sim: ks.n_a,
            n_ref: ks.n_b,
            laplace,
            scored,
        });
        self.raw.push(RawSample {
            series: series.into(),
            side: "simulated".into(),
            param,
            t,
            values: sim,
        });
        Ok(())
    }

    fn keep_reference(&mut self, series: &str, param: f64, t: f64, values: &[f64]) {
        self.raw.push(RawSample {
            series: series.into(),
            side: "reference".into(),
            param,
            t,
            values: values.to_vec(),
        });
    }

    /// Final-cell threshold and trend verdicts for every scored series.
    fn judge(&mut self) {
        let mut keys: Vec<(String, f64)> = Vec::new();
        for c in self.comparisons.iter().filter(|c| c.scored) {
            if !keys.iter().any(|k| k.0 == c.series && k.1 == c.t) {
                keys.push((c.series.clone(), c.t));
            }
        }
        for (series, t) in keys {
            let cells: Vec<&Comparison> = self
                .comparisons
                .iter()
                .filter(|c| c.series == series && c.t == t)
                .collect();
            let last = cells[cells.len() - 1];
            self.verdicts.push(Verdict {
                criterion: format!("{series} at t={t}: final KS <= {}", self.threshold),
                pass: last.ks <= self.threshold,
                detail: format!("KS {:.4} (se {:.4}) at {}", last.ks, last.ks_se, last.param),
            });
            if cells.len() > 1 {
                let bad: Vec<String> = cells
                    .windows(2)
                    .filter(|w| w[1].ks - w[0].ks > 2.0 * w[0].ks_se.hypot(w[1].ks_se))
                    .map(|w| format!("{:.4} -> {:.4} between {} and {}", w[0].ks, w[1].ks, w[0].param, w[1].param))
                    .collect();
                let trend: Vec<String> = cells.iter().map(|c| format!("{:.4}", c.ks)).collect();
                self.verdicts.push(Verdict {
                    criterion: format!("{series} at t={t}: KS non-increasing"),
                    pass: bad.is_empty(),
                    detail: if bad.is_empty() {
                        format!("KS {}", trend.join(", "))
                    } else {
                        bad.join("; ")
                    },
                });
            }
        }
    }

    fn warn_diagnostics(&mut self) {
        for c in &self.cells {
            if c.diagnostics.arity_truncations > 0 {
                self.warnings.push(format!(
                    "cell {}: {} dislocations had more than {} children",
                    c.param, c.diagnostics.arity_truncations, c.truncation.max_children
                ));
            }
            if c.diagnostics.max_dust_jump_ratio > 1.0 {
                self.warnings.push(format!(
                    "cell {}: a dust jump exceeded mass_floor times arity (ratio {})",
                    c.param, c.diagnostics.max_dust_jump_ratio
                ));
            }
        }
    }
}

fn check_grid(name: &'static str, grid: &[f64], probes: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(invalid(name, "grid values must be positive and finite"));
    }
    if probes.is_empty() || probes.windows(2).any(|w| !(w[0] < w[1])) || !(probes[0] > 0.0) {
        return Err(invalid("probes", "probe times must be positive and strictly increasing"));
    }
    Ok(())
}

/// Runs `f` on `n` replicas with independent streams, in parallel, keeping order.
fn replicate<T: Send>(n: usize, seed: u64, tag: u64, f: impl Fn(&mut SimRng) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| f(&mut replica_rng(seed, tag, i)))
        .collect()
}

fn column<T>(rows: &[Vec<T>], k: usize, f: impl Fn(&T) -> f64) -> Vec<f64> {
    rows.iter().map(|r| f(&r[k])).collect()
}

struct FragSample {
    deficit: f64,
    second: f64,
    lost: f64,
}

/// Engine replicas from mass `m` at the given times; `unit` rescales masses
/// back to the limit scale.
fn engine_cell(
    setup: &Setup,
    engine: &Engine,
    m: f64,
    unit: f64,
    times: &[f64],
    tag: u64,
) -> Result<(Vec<Vec<FragSample>>, Diagnostics)> {
    let rows = replicate(setup.n, setup.seed, tag, |rng| {
        let run = engine.marginals(m, times, rng)?;
        let rows = run
            .probes
            .iter()
            .map(|(_, p)| FragSample {
                deficit: unit * (m - p.nth_largest(1)),
                second: unit * p.nth_largest(2),
                lost: unit * (m - p.macroscopic()),
            })
            .collect();
        Ok((rows, run.diagnostics))
    })?;
    let mut diag = Diagnostics::default();
    let samples = rows
        .into_iter()
        .map(|(r, d)| {
            diag.absorb(&d);
            r
        })
        .collect();
    Ok((samples, diag))
}

struct FiSample {
    sigma: f64,
    largest: f64,
    lost: f64,
}

/// Reference replicas of `(sigma_I, FI)` at the given times.
fn fi_reference(setup: &Setup, engine: &Engine, times: &[f64], tag: u64) -> Result<Vec<Vec<FiSample>>> {
    replicate(setup.n_reference, setup.seed, tag, |rng| {
        let (snaps, _) = fi_marginals(engine, setup.immigration.as_ref(), setup.approximation.delta_atom, times, rng)?;
        Ok(snaps
            .into_iter()
            .map(|s| FiSample {
                sigma: s.sigma,
                largest: s.partition.nth_largest(1),
                lost: s.sigma - s.partition.macroscopic(),
            })
            .collect())
    })
}

/// Reference replicas of `(sigma_I, largest immigrant)` at the given times.
fn immigration_reference(setup: &Setup, times: &[f64], tag: u64) -> Result<Vec<Vec<(f64, f64)>>> {
    let horizon = times[times.len() - 1];
    replicate(setup.n_reference, setup.seed, tag, |rng| {
        let real = sample_immigration(setup.immigration.as_ref(), horizon, setup.approximation.delta_atom, rng)?;
        let sigma = sigma_path(&real)?;
        times
            .iter()
            .map(|&t| {
                let big = real.atoms()[..real.atoms().partition_point(|a| a.0 <= t)]
                    .iter()
                    .map(|a| a.1.nth_largest(1))
                    .fold(0.0, f64::max);
                Ok((sigma.evaluate(t)?, big))
            })
            .collect()
    })
}

/// Large-mass limit at fixed times: `m - F1` against the immigrant mass
/// `sigma_I` and `F2` against the largest fragment of the fragmentation
/// with immigration.
pub fn theorem1(setup: &Setup, m_grid: &[f64], probes: &[f64]) -> Result<ConvergenceReport> {
    setup.validate()?;
    check_grid("m_grid", m_grid, probes)?;
    let mut report = ConvergenceReport::new("theorem1", Some(setup), m_grid, probes);
    let approx = setup.approximation;
    let ref_engine = Engine::new(setup.tau.clone(), setup.nu.clone(), approx.limit_truncation())?;
    let reference = fi_reference(setup, &ref_engine, probes, TAG_REF)?;
    for (k, &t) in probes.iter().enumerate() {
        report.keep_reference("m-F1 vs sigma", 0.0, t, &column(&reference, k, |r| r.sigma));
        report.keep_reference("F2 vs FI1", 0.0, t, &column(&reference, k, |r| r.largest));
    }
    for (cell, &m) in m_grid.iter().enumerate() {
        let trunc = approx.truncation(m, 1.0);
        let engine = Engine::new(setup.tau.clone(), setup.nu.clone(), trunc)?;
        let (rows, diagnostics) = engine_cell(setup, &engine, m, 1.0, probes, TAG_SIM + cell as u64)?;
        for (k, &t) in probes.iter().enumerate() {
            let sigma = column(&reference, k, |r| r.sigma);
            let fi1 = column(&reference, k, |r| r.largest);
            report.compare("m-F1 vs sigma", m, t, column(&rows, k, |r| r.deficit), &sigma, true)?;
            report.compare("F2 vs FI1", m, t, column(&rows, k, |r| r.second), &fi1, true)?;
        }
        report.cells.push(Cell {
            param: m,
            mass: m,
            time_factor: 1.0,
            truncation: trunc,
            diagnostics,
        });
    }
    report.judge();
    report.warn_diagnostics();
    Ok(report)
}

/// Large-mass limit with times rescaled by `scale(m)`. In regime (i) the
/// pair `(m - F1, F2)` is compared with `(sigma_I, largest immigrant)`; in
/// regime (ii) `F2` must vanish, judged by its 99th percentile decreasing
/// across the grid.
pub fn theorem2(
    setup: &Setup,
    regime: Regime,
    scale: TimeScale,
    m_grid: &[f64],
    probes: &[f64],
) -> Result<ConvergenceReport> {
    setup.validate()?;
    check_grid("m_grid", m_grid, probes)?;
    let mut report = ConvergenceReport::new("theorem2", Some(setup), m_grid, probes);
    let reference = immigration_reference(setup, probes, TAG_REF)?;
    for (k, &t) in probes.iter().enumerate() {
        report.keep_reference("m-F1 vs sigma", 0.0, t, &column(&reference, k, |r| r.0));
    }
    for (cell, &m) in m_grid.iter().enumerate() {
        let factor = scale.factor(&setup.tau, setup.nu.as_ref(), m)?;
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(invalid("time_scale", format!("factor {factor} at m = {m}")));
        }
        let times: Vec<f64> = probes.iter().map(|t| t * factor).collect();
        let trunc = setup.approximation.truncation(m, 1.0);
        let engine = Engine::new(setup.tau.clone(), setup.nu.clone(), trunc)?;
        let (rows, diagnostics) = engine_cell(setup, &engine, m, 1.0, &times, TAG_SIM + cell as u64)?;
        for (k, &t) in probes.iter().enumerate() {
            let sigma = column(&reference, k, |r| r.0);
            report.compare("m-F1 vs sigma", m, t, column(&rows, k, |r| r.deficit), &sigma, true)?;
            let second = column(&rows, k, |r| r.second);
            match regime {
                Regime::Immigration => {
                    let big = column(&reference, k, |r| r.1);
                    report.compare("F2 vs largest immigrant", m, t, second, &big, true)?;
                }
                Regime::LossOfMass => {
                    report.quantiles.push(QuantileRecord {
                        series: "F2".into(),
                        param: m,
                        t,
                        p: 0.99,
                        value: quantile(&second, 0.99)?,
                    });
                }
            }
        }
        report.cells.push(Cell {
            param: m,
            mass: m,
            time_factor: factor,
            truncation: trunc,
            diagnostics,
        });
    }
    if regime == Regime::Immigration {
        for (k, &t) in probes.iter().enumerate() {
            report.keep_reference("F2 vs largest immigrant", 0.0, t, &column(&reference, k, |r| r.1));
        }
        report.judge();
    } else {
        // only the lost-mass marginal is claimed in this regime
        report.judge();
        for &t in probes {
            let qs: Vec<f64> = report.quantiles.iter().filter(|q| q.t == t).map(|q| q.value).collect();
            let detail = qs.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", ");
            if qs.len() > 1 {
                report.verdicts.push(Verdict {
                    criterion: format!("F2 99th percentile at t={t} decreasing"),
                    pass: qs.windows(2).all(|w| w[1] < w[0]),
                    detail,
                });
            }
        }
    }
    report.warn_diagnostics();
    Ok(report)
}

/// Small-time limit from unit mass: at compression `eps`, with
/// `M = phi_nu^{-1}(eps)`, the pair `(M (1 - F1(eps t)), M F2(eps t))` is
/// compared against `(sigma_I, FI)` at time `(phi_nu / tau)(M) t`. The
/// rescaled lost mass `M (1 - total(eps t))` is reported against
/// `sigma_I - total(FI)` without a verdict.
pub fn small_time(setup: &Setup, eps_grid: &[f64], probes: &[f64]) -> Result<ConvergenceReport> {
    setup.validate()?;
    check_grid("eps_grid", eps_grid, probes)?;
    let alpha = setup
        .tau
        .alpha()
        .ok_or_else(|| invalid("tau", "the small-time limit needs a power rate function"))?;
    let mut report = ConvergenceReport::new("small_time", Some(setup), eps_grid, probes);
    let approx = setup.approximation;
    let ref_engine = Engine::new(setup.tau.clone(), setup.nu.clone(), approx.limit_truncation())?;
    for (cell, &eps) in eps_grid.iter().enumerate() {
        let big = phi_inverse(setup.nu.as_ref(), eps)?;
        // eps = phi(M), so (phi / tau)(M) = eps M^{-alpha}
        let ell = eps * big.powf(-alpha);
        let ref_times: Vec<f64> = probes.iter().map(|t| t * ell).collect();
        let reference = fi_reference(setup, &ref_engine, &ref_times, TAG_REF + cell as u64)?;
        let times: Vec<f64> = probes.iter().map(|t| t * eps).collect();
        let trunc = approx.truncation(big, big);
        let engine = Engine::new(setup.tau.clone(), setup.nu.clone(), trunc)?;
        let (rows, diagnostics) = engine_cell(setup, &engine, 1.0, big, &times, TAG_SIM + cell as u64)?;
        for (k, &t) in probes.iter().enumerate() {
            let sigma = column(&reference, k, |r| r.sigma);
            report.compare("M(1-F1) vs sigma", eps, t, column(&rows, k, |r| r.deficit), &sigma, true)?;
            let fi1 = column(&reference, k, |r| r.largest);
            report.compare("M F2 vs FI1", eps, t, column(&rows, k, |r| r.second), &fi1, true)?;
            let lost = column(&reference, k, |r| r.lost);
            report.compare("M(1-mass) vs sigma-FI mass", eps, t, column(&rows, k, |r| r.lost), &lost, false)?;
            report.keep_reference("M(1-F1) vs sigma", eps, t, &sigma);
            report.keep_reference("M F2 vs FI1", eps, t, &fi1);
            report.keep_reference("M(1-mass) vs sigma-FI mass", eps, t, &lost);
        }
        report.cells.push(Cell {
            param: eps,
            mass: big,
            time_factor: ell,
            truncation: trunc,
            diagnostics,
        });
    }
    report.judge();
    report.warn_diagnostics();
    Ok(report)
}

fn laplace_check(name: &str, est: LaplaceEstimate, target: f64) -> Check {
    Check {
        name: name.into(),
        estimate: est.mean,
        se: est.se,
        target,
        tolerance: "3 se".into(),
        pass: (est.mean - target).abs() <= 3.0 * est.se,
    }
}

fn interval_check(name: &str, estimate: f64, target: f64, lo: f64, hi: f64) -> Check {
    Check {
        name: name.into(),
        estimate,
        se: 0.0,
        target,
        tolerance: format!("[{lo}, {hi}]"),
        pass: estimate >= lo && estimate <= hi,
    }
}

fn verdicts_from_checks(report: &mut ConvergenceReport) {
    report.verdicts = report
        .checks
        .iter()
        .map(|c| Verdict {
            criterion: c.name.clone(),
            pass: c.pass,
            detail: format!("{:.6} vs {:.6} ({})", c.estimate, c.target, c.tolerance),
        })
        .collect();
}

/// Laplace transform of the 1/2-stable subordinator at time 1 with Lévy
/// density `C x^{-3/2} / 2`, `C = sqrt(2/pi)`, against `exp(-sqrt(2 q))`.
pub fn stable_laplace_checks(n: usize, jump_floor: f64, seed: u64) -> Result<Vec<Check>> {
    let c = (2.0 / PI).sqrt();
    let vals = replicate(n, seed, TAG_CHECK, |rng| stable_path(0.5, c, 1.0, jump_floor, rng)?.evaluate(1.0))?;
    LAPLACE_QS
        .iter()
        .map(|&q| {
            let target = (-SQRT_2 * q.sqrt()).exp();
            Ok(laplace_check(&format!("stable(1/2) Laplace at q={q}"), empirical_laplace(&vals, q)?, target))
        })
        .collect()
}

/// `phi_nu(m) sqrt(2m/pi)` for the Brownian measure, which tends to 1.
pub fn brownian_phi_check(m: f64) -> Result<Check> {
    let v = phi_nu(&BrownianDislocation, m)? * (2.0 * m / PI).sqrt();
    Ok(interval_check(&format!("Brownian phi asymptotics at m={m:e}"), v, 1.0, 0.99, 1.01))
}

/// Regular-variation index of `phi_nu` for the Brownian measure on `10^2..10^8`.
pub fn brownian_index_check() -> Result<Check> {
    let grid: Vec<f64> = (0..=12).map(|k| 10f64.powf(2.0 + 0.5 * k as f64)).collect();
    let v = estimate_regular_variation_index(&BrownianDislocation, &grid)?;
    Ok(interval_check("Brownian regular-variation index", v, -0.5, -0.52, -0.48))
}

/// `E[exp(-T(1))]` for the `1/beta`-stable subordinator with exponent `q^{1/beta}`.
pub fn stable_beta_check(beta: f64, n: usize, jump_floor: f64, seed: u64) -> Result<Check> {
    if !(beta > 1.0 && beta < 2.0) {
        return Err(invalid("beta", format!("{beta} is outside (1, 2)")));
    }
    let (g, c) = (1.0 / beta, 1.0 / gamma_fn(1.0 - 1.0 / beta));
    let vals = replicate(n, seed, TAG_CHECK + 1, |rng| {
        let first = exp1(rng);
        Ok(lepage_jumps(g, c, 1.0, first, jump_floor, 1, rng).total())
    })?;
    Ok(laplace_check(
        &format!("stable(1/{beta}) Laplace at q=1"),
        empirical_laplace(&vals, 1.0)?,
        (-1.0f64).exp(),
    ))
}

fn random_partition(rng: &mut dyn RngCore, max_len: usize) -> MassPartition {
    let len = rng.random_range(0..=max_len);
    let v: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 10.0).collect();
    MassPartition::decreasing_rearrangement(v).expect("non-negative values")
}

fn random_dislocation(rng: &mut dyn RngCore) -> Arc<dyn DislocationMeasure> {
    if rng.random::<bool>() {
        Arc::new(BrownianDislocation)
    } else {
        let k = rng.random_range(2..6);
        let f: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
        let s: f64 = f.iter().sum();
        Arc::new(
            crate::measures::FiniteDislocation::new(f.iter().map(|x| x / s).collect(), 1.0 + rng.random::<f64>())
                .expect("valid fractions"),
        )
    }
}

fn invariant_check(name: &str, failures: usize, cases: usize, worst: f64, bound: f64) -> Check {
    Check {
        name: name.into(),
        estimate: worst,
        se: 0.0,
        target: bound,
        tolerance: format!("{failures} of {cases} cases failed"),
        pass: failures == 0,
    }
}

/// Property checks over `cases` random configurations each.
pub fn invariant_suite(cases: usize, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let tag = TAG_CHECK + 0x100;

    // mass conservation at every event
    let rel: Vec<f64> = replicate(cases, seed, tag, |rng| {
        let nu = random_dislocation(rng);
        let alpha = rng.random_range(-1.0..1.0);
        let m = 10f64.powf(rng.random_range(-1.0..2.0));
        let trunc = Truncation::new(0.05, m * 1e-2);
        let engine = Engine::new(RateFunction::power(alpha), nu, trunc)?;
        let path = engine.simulate(m, 1.0, rng)?;
        Ok(path
            .events()
            .iter()
            .map(|(_, p)| (p.total() - m).abs() / m)
            .fold(0.0, f64::max))
    })?;
    let worst = rel.iter().copied().fold(0.0, f64::max);
    checks.push(invariant_check(
        "mass conservation at every event",
        rel.iter().filter(|&&r| r > 1e-9).count(),
        cases,
        worst,
        1e-9,
    ));

    // decreasing rearrangement is an l1 contraction
    let gaps: Vec<f64> = replicate(cases, seed, tag + 1, |rng| {
        let len = rng.random_range(0..20);
        let a: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let raw: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let sorted = l1_distance(
            &MassPartition::decreasing_rearrangement(a)?,
            &MassPartition::decreasing_rearrangement(b)?,
        );
        Ok(sorted - raw)
    })?;
    checks.push(invariant_check(
        "decreasing rearrangement contraction",
        gaps.iter().filter(|&&g| g > 1e-12).count(),
        cases,
        gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        0.0,
    ));

    // time change is the exact inverse of its integral; Lambda is monotone from m
    let res: Vec<(f64, bool)> = replicate(cases, seed, tag + 2, |rng| {
        let alpha = rng.random_range(-1.5..1.5);
        let m = 10f64.powf(rng.random_range(-1.0..2.0));
        let tau = RateFunction::power(alpha);
        let xi = xi_path(&BrownianDislocation, 0.01, 5.0, rng)?;
        let end = time_change_integral(&xi, &tau, m, xi.horizon())?;
        let mut worst = 0.0f64;
        let mut prev = m;
        let mut monotone = lambda_process(&xi, &tau, m, 0.0)? == m;
        for _ in 0..20 {
            let t = rng.random::<f64>() * end;
            let u = crate::subordinators::rho_time_change(&xi, &tau, m, t)?;
            worst = worst.max((time_change_integral(&xi, &tau, m, u)? - t).abs() / t.max(1.0));
        }
        let mut ts: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * end).collect();
        ts.sort_by(f64::total_cmp);
        for t in ts {
            let l = lambda_process(&xi, &tau, m, t)?;
            monotone &= l <= prev;
            prev = l;
        }
        Ok((worst, monotone))
    })?;
    let worst = res.iter().map(|r| r.0).fold(0.0, f64::max);
    checks.push(invariant_check(
        "time change exact inverse",
        res.iter().filter(|r| r.0 > 1e-10).count(),
        cases,
        worst,
        1e-10,
    ));
    checks.push(invariant_check(
        "tagged mass monotone from m",
        res.iter().filter(|r| !r.1).count(),
        cases,
        0.0,
        0.0,
    ));

    // dust jumps bounded by mass_floor times arity, and shrinking with the floor
    let floors = [1e-3, 1e-4, 1e-5];
    let jumps: Vec<(bool, [f64; 3])> = replicate(cases, seed, tag + 3, |rng| {
        let nu = random_dislocation(rng);
        let alpha = rng.random_range(0.0..0.5);
        let path_seed = rng.next_u64();
        let mut ok = true;
        let mut maxima = [0.0; 3];
        for (k, &floor) in floors.iter().enumerate() {
            let engine = Engine::new(RateFunction::power(alpha), nu.clone(), Truncation::new(0.05, floor))?;
            let d = engine.marginals(1.0, &[0.5], &mut replica_rng(path_seed, 0, 0))?.diagnostics;
            ok &= d.max_dust_jump_ratio <= 1.0 + 1e-12;
            maxima[k] = d.max_dust_jump;
        }
        Ok((ok, maxima))
    })?;
    checks.push(invariant_check(
        "dust jump <= mass_floor * arity",
        jumps.iter().filter(|j| !j.0).count(),
        cases,
        0.0,
        1.0,
    ));
    let maxima: Vec<f64> = (0..3)
        .map(|k| jumps.iter().map(|j| j.1[k]).fold(0.0, f64::max))
        .collect();
    checks.push(Check {
        name: "max dust jump shrinks with mass_floor".into(),
        estimate: maxima[2],
        se: 0.0,
        target: maxima[0],
        tolerance: format!("maxima {:.3e}, {:.3e}, {:.3e}", maxima[0], maxima[1], maxima[2]),
        pass: maxima[1] < maxima[0] && maxima[2] < maxima[1],
    });

    // erosion: identity at c = 0, exact exp(-c t) factor otherwise
    let errs: Vec<f64> = replicate(cases, seed, tag + 4, |rng| {
        let nu = random_dislocation(rng);
        let engine = Engine::new(RateFunction::constant(), nu, Truncation::new(0.1, 1e-2))?;
        let p = engine.simulate(1.0, 2.0, rng)?;
        let mut err = if p.apply_erosion(0.0)? == p { 0.0 } else { f64::INFINITY };
        let c = rng.random_range(0.0..3.0);
        let e = p.apply_erosion(c)?;
        for _ in 0..5 {
            let t = rng.random::<f64>() * 2.0;
            let (a, b) = (e.marginal(t)?, p.marginal(t)?);
            let f = (-c * t).exp();
            for (x, y) in a.masses().iter().zip(b.masses()) {
                err = err.max((x - f * y).abs());
            }
            err = err.max((a.total() - b.total()).abs());
        }
        Ok(err)
    })?;
    checks.push(invariant_check(
        "erosion identity and exp(-ct) factor",
        errs.iter().filter(|&&e| e > 1e-12).count(),
        cases,
        errs.iter().copied().fold(0.0, f64::max),
        1e-12,
    ));

    let parts: Vec<bool> = replicate(cases, seed, tag + 5, |rng| {
        let p = random_partition(rng, 30);
        Ok(p.masses().windows(2).all(|w| w[0] >= w[1]))
    })?;
    checks.push(invariant_check(
        "partitions stay ranked",
        parts.iter().filter(|ok| !**ok).count(),
        cases,
        0.0,
        0.0,
    ));
    Ok(checks)
}

/// Sampler checks: stable Laplace transforms, Brownian `phi` asymptotics and
/// index, and the invariant suite.
pub fn validate_samplers(n: usize, cases: usize, jump_floor: f64, seed: u64) -> Result<ConvergenceReport> {
    if n < 2 || cases == 0 {
        return Err(invalid("n", "needs at least two replicas and one case"));
    }
    let mut report = ConvergenceReport::new("validate_samplers", None, &[], &[]);
    report.n = n;
    report.seed = seed;
    report.approximation.jump_floor = jump_floor;
    report.checks.extend(stable_laplace_checks(n, jump_floor, seed)?);
    report.checks.push(brownian_phi_check(1e6)?);
    report.checks.push(brownian_index_check()?);
    report.checks.push(stable_beta_check(1.5, n, jump_floor, seed)?);
    report.checks.extend(invariant_suite(cases, seed)?);
    verdicts_from_checks(&mut report);
    Ok(report)
}

/// Largest fragment at time `t` from unit mass: read off Brownian excursions
/// on a grid of `grid_n` steps, and simulated by the engine with
/// `tau(s) = s^{-1/2}` and the Brownian dislocation measure.
pub fn cross_validate_brownian(
    n: usize,
    grid_n: usize,
    t: f64,
    approx: Approximation,
    seed: u64,
) -> Result<ConvergenceReport> {
    approx.validate()?;
    if n < 2 || !(t > 0.0) {
        return Err(invalid("n", "needs at least two replicas and a positive time"));
    }
    let mut report = ConvergenceReport::new("cross_validate_brownian", None, &[1.0], &[t]);
    report.tau = RateFunction::power(-0.5).label();
    report.dislocation = BrownianDislocation.label();
    report.approximation = approx;
    report.n = n;
    report.n_reference = n;
    report.seed = seed;
    let excursion: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map_init(
            || ExcursionGrid::default(),
            |grid, i| {
                brownian_excursion_into(1.0, grid_n, &mut replica_rng(seed, TAG_REF, i), grid)?;
                Ok(grid.largest_component(t))
            },
        )
        .collect::<Result<_>>()?;
    // no relative truncation: only the chip floor limits the splits
    let trunc = Truncation::new(1e-12, approx.mass_floor).with_chip_floor(approx.chip_floor);
    let engine = Engine::new(RateFunction::power(-0.5), Arc::new(BrownianDislocation), trunc)?;
    let mut diagnostics = Diagnostics::default();
    let runs = replicate(n, seed, TAG_SIM, |rng| engine.marginals(1.0, &[t], rng))?;
    let sim: Vec<f64> = runs
        .iter()
        .map(|r| {
            diagnostics.absorb(&r.diagnostics);
            r.probes[0].1.nth_largest(1)
        })
        .collect();
    report.keep_reference("F1 engine vs excursion", 1.0, t, &excursion);
    report.compare("F1 engine vs excursion", 1.0, t, sim, &excursion, true)?;
    report.cells.push(Cell {
        param: 1.0,
        mass: 1.0,
        time_factor: 1.0,
        truncation: trunc,
        diagnostics,
    });
    report.judge();
    report.warn_diagnostics();
    Ok(report)
}

/// Largest immigrant at time `t` under the stable immigration measure,
/// against the largest jump of the stable subordinator `T` before the
/// independent clock `ϱ(t)`.
pub fn stable_immigration(
    pool: StablePoolConfig,
    n: usize,
    t: f64,
    approx: Approximation,
    seed: u64,
) -> Result<ConvergenceReport> {
    approx.validate()?;
    if n < 2 || !(t > 0.0) {
        return Err(invalid("n", "needs at least two replicas and a positive time"));
    }
    let beta = pool.beta;
    let im = StableImmigration::new(Arc::new(StablePool::build(pool)?))?;
    let mut report = ConvergenceReport::new("stable_immigration", None, &[beta], &[t]);
    report.immigration = im.label();
    report.approximation = approx;
    report.n = n;
    report.n_reference = n;
    report.seed = seed;
    let sim = replicate(n, seed, TAG_SIM, |rng| {
        let real = sample_immigration(&im, t, approx.delta_atom, rng)?;
        Ok(real.atoms().iter().map(|a| a.1.nth_largest(1)).fold(0.0, f64::max))
    })?;
    let reference = replicate(n, seed, TAG_REF, |rng| {
        let probe = subordinated_stable_representation(beta, &[t], 1, approx.jump_floor, approx.jump_floor, rng)?;
        Ok(probe[0].largest.first().copied().unwrap_or(0.0))
    })?;
    report.keep_reference("largest immigrant vs subordinated", beta, t, &reference);
    report.compare("largest immigrant vs subordinated", beta, t, sim, &reference, true)?;
    report.judge();
    Ok(report)
}

/// Cumulative points of a path, for plotting.
pub fn path_table(path: &JumpPath) -> Vec<(f64, f64)> {
    path.cumulative_points()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{BrownianImmigration, NoImmigration};

    fn brownian_setup(alpha: f64, n: usize, seed: u64) -> Setup {
        Setup::new(
            RateFunction::power(alpha),
            Arc::new(BrownianDislocation),
            Arc::new(BrownianImmigration),
            n,
            seed,
        )
    }

    #[test]
    fn rejects_trivial_immigration() {
        let mut s = brownian_setup(-0.5, 10, 1);
        s.immigration = Arc::new(NoImmigration);
        assert_eq!(theorem1(&s, &[100.0], &[1.0]).unwrap_err(), Error::TrivialImmigration);
    }

    #[test]
    fn single_cell_has_no_trend_verdict() {
        let s = brownian_setup(-0.5, 200, 2);
        let r = theorem1(&s, &[100.0], &[1.0]).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.verdicts.len(), 2);
        assert!(r.verdicts.iter().all(|v| !v.criterion.contains("non-increasing")));
        assert!(r.comparisons.iter().all(|c| c.ks >= 0.0 && c.ks <= 1.0 && c.ks_se > 0.0));
        for c in &r.comparisons {
            assert_eq!((c.n_sim, c.n_ref), (200, 200));
            assert!(c.laplace.iter().all(|l| l.sim_mean > 0.0 && l.sim_mean <= 1.0));
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let s = brownian_setup(-0.5, 100, 3);
        let a = serde_json::to_string(&theorem1(&s, &[10.0, 100.0], &[0.5, 1.0]).unwrap()).unwrap();
        let b = serde_json::to_string(&theorem1(&s, &[10.0, 100.0], &[0.5, 1.0]).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trend_verdict_flags_increase() {
        let mut r = ConvergenceReport::new("x", None, &[], &[]);
        for (p, ks) in [(1.0, 0.2), (2.0, 0.1), (3.0, 0.3)] {
            r.comparisons.push(Comparison {
                series: "s".into(),
                param: p,
                t: 1.0,
                ks,
                ks_se: 0.01,
                p_value: 0.0,
                n_sim: 100,
                n_ref: 100,
                laplace: vec![],
                scored: true,
            });
        }
        r.judge();
        assert!(!r.passed());
        assert_eq!(r.verdicts.len(), 2);
        assert!(!r.verdicts[1].pass);
    }

    #[test]
    fn time_scales() {
        let tau = RateFunction::power(0.5);
        let nu = BrownianDislocation;
        assert_eq!(TimeScale::Identity.factor(&tau, &nu, 7.0).unwrap(), 1.0);
        assert_eq!(TimeScale::Power { exponent: -1.0 }.factor(&tau, &nu, 4.0).unwrap(), 0.25);
        let f = TimeScale::PhiOverTau.factor(&tau, &nu, 1e6).unwrap();
        assert!((f * 1e6 / (PI / 2.0).sqrt() - 1.0).abs() < 0.01);
    }

    #[test]
    fn loss_of_mass_regime_runs() {
        let mut s = brownian_setup(-1.0, 100, 4);
        s.approximation.mass_floor = 0.02;
        s.approximation.chip_floor = 0.01;
        let r = theorem2(&s, Regime::LossOfMass, TimeScale::PhiOverTau, &[10.0, 100.0], &[1.0]).unwrap();
        assert_eq!(r.quantiles.len(), 2);
        assert!(r.verdicts.iter().any(|v| v.criterion.contains("99th")));
    }

    #[test]
    fn small_time_inverse_consistency() {
        for m in [10.0, 1e3, 1e5] {
            let eps = phi_nu(&BrownianDislocation, m).unwrap();
            let back = phi_inverse(&BrownianDislocation, eps).unwrap();
            assert!((back / m - 1.0).abs() <= 1e-6);
        }
        let s = brownian_setup(-0.5, 100, 5);
        let r = small_time(&s, &[0.05], &[1.0]).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.comparisons.len(), 3);
        assert!(r.verdicts.iter().all(|v| !v.criterion.contains("non-increasing")));
    }

    #[test]
    fn invariant_suite_passes_small() {
        let checks = invariant_suite(50, 6).unwrap();
        for c in &checks {
            assert!(c.pass, "{c:?}");
        }
    }
}
