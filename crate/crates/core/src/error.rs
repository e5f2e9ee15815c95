use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("negative mass {0} in partition input")]
    NegativeMass(f64),

    #[error("index {index} out of range for a partition with {len} masses")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("fractions sum to {0}, which exceeds 1")]
    FractionsExceedOne(f64),

    #[error("phi undefined at m = {0}: truncated dislocation rate is zero")]
    PhiUndefined(f64),

    #[error("rate overflow: splitting rate is not finite at mass {mass}")]
    RateOverflow { mass: f64 },

    #[error("event budget of {0} splits exhausted; raise the mass floor or the truncation")]
    EventBudget(u64),

    #[error("time {t} outside of [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("path horizon {horizon} exhausted before the time change reached {target}")]
    HorizonExhausted { horizon: f64, target: f64 },

    #[error("erosion can only be applied to a homogeneous path (tau = 1); {0}")]
    NotHomogeneous(String),

    #[error("empty sample")]
    EmptySample,

    #[error("root bracket failure: {0}")]
    Bracket(String),

    #[error("the immigration measure puts no mass on non-trivial partitions")]
    TrivialImmigration,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
