//! Experiment configuration: a flat JSON object whose `experiment` field
//! selects which of the other fields are required.

use std::path::PathBuf;

use fragsim::experiments::{Approximation, Regime, Setup, TimeScale, DEFAULT_THRESHOLD};
use fragsim::measures::{parse_dislocation, parse_immigration, RateFunction, StablePoolConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Theorem1,
    Theorem2,
    SmallTime,
    ValidateSamplers,
    CrossValidateBrownian,
    StableImmigration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Exponent of the rate function `tau(s) = s^alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dislocation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub immigration: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_reference: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub approximation: Approximation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_scale: Option<TimeScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cases: Option<i64>,
}

/// A validated configuration with every measure resolved.
pub enum Plan {
    Theorem1 {
        setup: Setup,
        m_grid: Vec<f64>,
        probes: Vec<f64>,
    },
    Theorem2 {
        setup: Setup,
        regime: Regime,
        scale: TimeScale,
        m_grid: Vec<f64>,
        probes: Vec<f64>,
    },
    SmallTime {
        setup: Setup,
        eps_grid: Vec<f64>,
        probes: Vec<f64>,
    },
    ValidateSamplers {
        n: usize,
        cases: usize,
        jump_floor: f64,
        seed: u64,
    },
    CrossValidateBrownian {
        n: usize,
        grid_n: usize,
        t: f64,
        approx: Approximation,
        seed: u64,
    },
    StableImmigration {
        pool: StablePoolConfig,
        n: usize,
        t: f64,
        approx: Approximation,
        seed: u64,
    },
}

fn field_error(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("field `{field}`: {reason}"))
}

fn required<T: Clone>(field: &str, v: &Option<T>) -> Result<T, CliError> {
    v.clone().ok_or_else(|| field_error(field, "required for this experiment"))
}

fn count(field: &str, v: Option<i64>, default: Option<i64>, min: i64) -> Result<usize, CliError> {
    let v = v.or(default).ok_or_else(|| field_error(field, "required for this experiment"))?;
    if v < min {
        return Err(field_error(field, format!("{v} is below the minimum of {min}")));
    }
    Ok(v as usize)
}

fn grid(field: &str, v: &Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
    let g = required(field, v)?;
    if g.is_empty() {
        return Err(field_error(field, "must not be empty"));
    }
    if let Some(x) = g.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(field_error(field, format!("{x} is not positive and finite")));
    }
    if g.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(field_error(field, "must be strictly increasing"));
    }
    Ok(g)
}

fn positive(field: &str, v: Option<f64>, default: Option<f64>) -> Result<f64, CliError> {
    let v = v.or(default).ok_or_else(|| field_error(field, "required for this experiment"))?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(field_error(field, format!("{v} is not positive and finite")));
    }
    Ok(v)
}

impl ExperimentConfig {
    /// Parses JSON; syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Normalized serialization, the input of the config hash.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    fn setup(&self) -> Result<Setup, CliError> {
        let alpha = required("alpha", &self.alpha)?;
        if !alpha.is_finite() {
            return Err(field_error("alpha", "must be finite"));
        }
        let nu = parse_dislocation(&required("dislocation", &self.dislocation)?, self.seed)
            .map_err(|e| field_error("dislocation", e))?;
        let im = parse_immigration(&required("immigration", &self.immigration)?, self.seed)
            .map_err(|e| field_error("immigration", e))?;
        if im.is_trivial() {
            return Err(field_error("immigration", "the immigration measure must not be zero"));
        }
        let n = count("n", self.n, None, 2)?;
        let mut setup = Setup::new(RateFunction::power(alpha), nu, im, n, self.seed);
        setup.n_reference = count("n_reference", self.n_reference, Some(n as i64), 2)?;
        setup.threshold = positive("threshold", self.threshold, Some(DEFAULT_THRESHOLD))?;
        if setup.threshold > 1.0 {
            return Err(field_error("threshold", "must not exceed 1"));
        }
        setup.approximation = self.approximation;
        Ok(setup)
    }

    pub fn plan(&self) -> Result<Plan, CliError> {
        self.approximation
            .validate()
            .map_err(|e| field_error("approximation", e))?;
        Ok(match self.experiment {
            Kind::Theorem1 => Plan::Theorem1 {
                setup: self.setup()?,
                m_grid: grid("m_grid", &self.m_grid)?,
                probes: grid("probes", &self.probes)?,
            },
            Kind::Theorem2 => Plan::Theorem2 {
                setup: self.setup()?,
                regime: required("regime", &self.regime)?,
                scale: self.time_scale.unwrap_or(TimeScale::PhiOverTau),
                m_grid: grid("m_grid", &self.m_grid)?,
                probes: grid("probes", &self.probes)?,
            },
            Kind::SmallTime => Plan::SmallTime {
                setup: self.setup()?,
                eps_grid: {
                    // the limit is approached as eps decreases; either order is accepted
                    let mut g = self.eps_grid.clone();
                    if let Some(g) = g.as_mut() {
                        g.sort_by(f64::total_cmp);
                    }
                    let mut g = grid("eps_grid", &g)?;
                    if g.iter().any(|&e| e > 0.5) {
                        return Err(field_error("eps_grid", "values must not exceed 1/2"));
                    }
                    g.reverse();
                    g
                },
                probes: grid("probes", &self.probes)?,
            },
            Kind::ValidateSamplers => Plan::ValidateSamplers {
                n: count("n", self.n, None, 2)?,
                cases: count("cases", self.cases, Some(1000), 1)?,
                jump_floor: self.approximation.jump_floor,
                seed: self.seed,
            },
            Kind::CrossValidateBrownian => Plan::CrossValidateBrownian {
                n: count("n", self.n, None, 2)?,
                grid_n: count("grid_n", self.grid_n, Some(1 << 20), 2)?,
                t: positive("t", self.t, Some(0.5))?,
                approx: self.approximation,
                seed: self.seed,
            },
            Kind::StableImmigration => {
                let beta = positive("beta", self.beta, Some(1.5))?;
                if !(beta > 1.0 && beta < 2.0) {
                    return Err(field_error("beta", format!("{beta} is outside (1, 2)")));
                }
                let mut pool = StablePoolConfig::new(beta, self.seed);
                pool.size = count("pool_size", self.pool_size, Some(pool.size as i64), 1000)?;
                pool.jump_floor = self.approximation.jump_floor;
                Plan::StableImmigration {
                    pool,
                    n: count("n", self.n, None, 2)?,
                    t: positive("t", self.t, Some(1.0))?,
                    approx: self.approximation,
                    seed: self.seed,
                }
            }
        })
    }
}
