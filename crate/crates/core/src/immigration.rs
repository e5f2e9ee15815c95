//! Poisson immigration of partitions, the immigrant-mass subordinator, and
//! fragmentation with immigration (each immigrant fragments independently
//! from its arrival time).

use std::sync::OnceLock;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::engine::{Diagnostics, Engine, FragPath};
use crate::error::{invalid, Error, Result};
use crate::measures::{check_delta, ImmigrationMeasure};
use crate::partitions::MassPartition;
use crate::rng::replica_rng;
use crate::subordinators::{poisson, JumpPath};

const TAG_ATOMS: u64 = 0x494d_4d49_0000_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmigrationRealization {
    horizon: f64,
    delta_atom: f64,
    atoms: Vec<(f64, MassPartition)>,
}

impl ImmigrationRealization {
    pub fn new(horizon: f64, delta_atom: f64, atoms: Vec<(f64, MassPartition)>) -> Result<Self> {
        if atoms.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(invalid("atoms", "arrival times must be strictly increasing"));
        }
        if let Some((r, a)) = atoms.iter().find(|(r, a)| !(*r >= 0.0 && *r <= horizon) || !(a.total() > delta_atom)) {
            return Err(invalid("atoms", format!("atom at {r} with mass {} violates the truncation", a.total())));
        }
        Ok(Self {
            horizon,
            delta_atom,
            atoms,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn delta_atom(&self) -> f64 {
        self.delta_atom
    }

    pub fn atoms(&self) -> &[(f64, MassPartition)] {
        &self.atoms
    }

    fn arrived_by(&self, t: f64) -> &[(f64, MassPartition)] {
        &self.atoms[..self.atoms.partition_point(|a| a.0 <= t)]
    }
}

/// Atoms of total mass above `delta_atom` arriving on `[0, horizon]`.
pub fn sample_immigration(
    im: &dyn ImmigrationMeasure,
    horizon: f64,
    delta_atom: f64,
    rng: &mut dyn RngCore,
) -> Result<ImmigrationRealization> {
    check_delta(delta_atom)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon", format!("{horizon} must be finite and non-negative")));
    }
    let n = poisson(horizon * im.atom_rate(delta_atom)?, rng)?;
    let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let atoms = times
        .into_iter()
        .map(|r| Ok((r, im.sample_atom(delta_atom, rng)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImmigrationRealization {
        horizon,
        delta_atom,
        atoms,
    })
}

/// Cumulative immigrant mass: one jump of the atom's total at each arrival.
pub fn sigma_path(real: &ImmigrationRealization) -> Result<JumpPath> {
    JumpPath::from_unsorted(real.horizon, 0.0, real.atoms.iter().map(|(r, a)| (*r, a.total())).collect())
}

/// All immigrant masses arrived by `t`, without fragmentation.
pub fn pure_immigration_marginal(real: &ImmigrationRealization, t: f64) -> Result<MassPartition> {
    if !(t >= 0.0 && t <= real.horizon) {
        return Err(Error::TimeOutOfRange { t, horizon: real.horizon });
    }
    Ok(MassPartition::merge(real.arrived_by(t).iter().map(|a| &a.1)))
}

/// Fragmentation with immigration. Each immigrant mass runs its own engine
/// path, simulated on first use with an RNG stream keyed by the atom index.
#[derive(Debug)]
pub struct FiProcess {
    engine: Engine,
    realization: ImmigrationRealization,
    seed: u64,
    paths: Vec<OnceLock<Result<Vec<Option<FragPath>>>>>,
}

impl FiProcess {
    pub fn new(engine: Engine, realization: ImmigrationRealization, seed: u64) -> Self {
        let paths = (0..realization.atoms.len()).map(|_| OnceLock::new()).collect();
        Self {
            engine,
            realization,
            seed,
            paths,
        }
    }

    pub fn realization(&self) -> &ImmigrationRealization {
        &self.realization
    }

    fn atom_paths(&self, i: usize) -> Result<&Vec<Option<FragPath>>> {
        self.paths[i]
            .get_or_init(|| {
                let (r, atom) = &self.realization.atoms[i];
                let span = self.realization.horizon - r;
                atom.masses()
                    .iter()
                    .enumerate()
                    .map(|(j, &u)| {
                        if u <= self.engine.truncation().mass_floor || span <= 0.0 {
                            return Ok(None);
                        }
                        let mut rng = replica_rng(self.seed, TAG_ATOMS + i as u64, j as u64);
                        self.engine.simulate(u, span, &mut rng).map(Some)
                    })
                    .collect()
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Partition at time `t`; its total plus dust equals the immigrant mass `sigma(t)`.
    pub fn marginal(&self, t: f64) -> Result<MassPartition> {
        let real = &self.realization;
        if !(t >= 0.0 && t <= real.horizon) {
            return Err(Error::TimeOutOfRange { t, horizon: real.horizon });
        }
        let mut parts = Vec::new();
        let floor = self.engine.truncation().mass_floor;
        for (i, (r, atom)) in real.arrived_by(t).iter().enumerate() {
            let paths = self.atom_paths(i)?;
            let mut dust = atom.dust();
            let mut kept = Vec::new();
            for (&u, path) in atom.masses().iter().zip(paths) {
                match path {
                    Some(p) => parts.push(p.marginal(t - r)?),
                    None if u <= floor => dust += u,
                    None => kept.push(u),
                }
            }
            parts.push(MassPartition::from_sorted_unchecked(kept, dust));
        }
        Ok(MassPartition::merge(parts.iter()))
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        sigma_path(&self.realization)?.evaluate(t)
    }
}

/// Samples a realization and wraps it with the given engine.
pub fn simulate_fi(
    engine: Engine,
    im: &dyn ImmigrationMeasure,
    horizon: f64,
    delta_atom: f64,
    seed: u64,
) -> Result<FiProcess> {
    if im.is_trivial() {
        return Err(Error::TrivialImmigration);
    }
    let real = sample_immigration(im, horizon, delta_atom, &mut replica_rng(seed, TAG_ATOMS - 1, 0))?;
    Ok(FiProcess::new(engine, real, seed))
}

/// FI state at one probe time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiSnapshot {
    pub t: f64,
    pub partition: MassPartition,
    pub sigma: f64,
}

/// FI marginals at sorted probe times, simulating each immigrant only up to
/// the last probe and recording nothing in between.
pub fn fi_marginals(
    engine: &Engine,
    im: &dyn ImmigrationMeasure,
    delta_atom: f64,
    probes: &[f64],
    rng: &mut dyn RngCore,
) -> Result<(Vec<FiSnapshot>, Diagnostics)> {
    if im.is_trivial() {
        return Err(Error::TrivialImmigration);
    }
    if probes.windows(2).any(|w| !(w[0] <= w[1])) || probes.first().is_some_and(|&t| !(t >= 0.0)) {
        return Err(invalid("probes", "probe times must be non-negative and sorted"));
    }
    let horizon = probes.last().copied().unwrap_or(0.0);
    let real = sample_immigration(im, horizon, delta_atom, rng)?;
    let floor = engine.truncation().mass_floor;
    let mut per_probe: Vec<Vec<MassPartition>> = vec![Vec::new(); probes.len()];
    let mut diag = Diagnostics::default();
    for (r, atom) in &real.atoms {
        let first = probes.partition_point(|&t| t < *r);
        if first == probes.len() {
            continue;
        }
        let rel: Vec<f64> = probes[first..].iter().map(|t| t - r).collect();
        let mut dust = atom.dust();
        let mut kept = Vec::new();
        for &u in atom.masses() {
            if u <= floor {
                dust += u;
            } else if rel[rel.len() - 1] == 0.0 {
                kept.push(u);
            } else {
                let run = engine.marginals(u, &rel, rng)?;
                diag.absorb(&run.diagnostics);
                for (k, (_, p)) in run.probes.into_iter().enumerate() {
                    per_probe[first + k].push(p);
                }
            }
        }
        let rest = MassPartition::from_sorted_unchecked(kept, dust);
        for slot in &mut per_probe[first..] {
            slot.push(rest.clone());
        }
    }
    let sigma = sigma_path(&real)?;
    let snaps = probes
        .iter()
        .zip(per_probe)
        .map(|(&t, parts)| {
            Ok(FiSnapshot {
                t,
                partition: MassPartition::merge(parts.iter()),
                sigma: sigma.evaluate(t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((snaps, diag))
}
