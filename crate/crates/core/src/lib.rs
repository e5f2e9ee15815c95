//! Simulation and convergence testing for self-similar fragmentation
//! processes, fragmentations with immigration and their large-mass limits.

pub mod engine;
pub mod error;
pub mod excursion;
pub mod experiments;
pub mod immigration;
pub mod measures;
pub mod partitions;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod subordinators;

pub use error::{Error, Result};
pub use partitions::MassPartition;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/partitions.md")]
    mod partitions {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/immigration.md")]
    mod immigration {}
    #[doc = include_str!("../../../book/src/excursions.md")]
    mod excursions {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
