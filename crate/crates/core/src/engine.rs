//! Event-driven simulation of `(tau, nu)`-fragmentations.
//!
//! Every fragment carries an exponential clock of rate
//! `tau(s) * rate(eps_eff(s))`; the earliest clock fires, the fragment is
//! replaced by its children and the children get fresh clocks. The infinite
//! measure is truncated to `{s1 < 1 - eps_eff(s)}` with
//! `eps_eff(s) = min(1/2, max(eps, chip_floor / s))`, so a fragment of mass
//! `s` never resolves pieces smaller than `chip_floor`. Children below
//! `mass_floor` become dust.
//!
//! A fragment keeps its storage slot when it splits: the slot passes to the
//! largest child. Slot 0 therefore follows the tagged largest-child lineage
//! of the initial fragment until that lineage falls below the mass floor.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{check_epsilon, DislocationMeasure, Fractions, RateFunction, RateTable};
use crate::partitions::MassPartition;
use crate::rng::{exp1, seeded};
use crate::subordinators::JumpPath;

pub const DEFAULT_MAX_CHILDREN: usize = 1 << 10;
pub const DEFAULT_EVENT_BUDGET: u64 = 200_000_000;
const TABLE_POINTS_PER_DECADE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Relative dislocation truncation: splits with `s1 >= 1 - epsilon` are ignored.
    pub epsilon: f64,
    /// Absolute chip size below which splits are ignored (0 disables).
    pub chip_floor: f64,
    /// Fragments lighter than this become dust.
    pub mass_floor: f64,
    pub max_children: usize,
    pub event_budget: u64,
}

impl Truncation {
    pub fn new(epsilon: f64, mass_floor: f64) -> Self {
        Self {
            epsilon,
            chip_floor: 0.0,
            mass_floor,
            max_children: DEFAULT_MAX_CHILDREN,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }

    pub fn with_chip_floor(mut self, chip_floor: f64) -> Self {
        self.chip_floor = chip_floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if !(self.chip_floor >= 0.0) || !self.chip_floor.is_finite() {
            return Err(invalid("chip_floor", format!("{} must be finite and non-negative", self.chip_floor)));
        }
        if !(self.mass_floor >= 0.0) || !self.mass_floor.is_finite() {
            return Err(invalid("mass_floor", format!("{} must be finite and non-negative", self.mass_floor)));
        }
        if self.max_children == 0 {
            return Err(invalid("max_children", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub events: u64,
    /// Dislocations that had more children than `max_children`.
    pub arity_truncations: u64,
    pub max_dust_jump: f64,
    /// Largest `dust increment / (mass_floor * arity)` over events.
    pub max_dust_jump_ratio: f64,
    /// Mass moved to dust through the aggregate of compensated small pieces.
    pub aggregate_dust: f64,
}

impl Diagnostics {
    pub fn absorb(&mut self, other: &Diagnostics) {
        self.events += other.events;
        self.arity_truncations += other.arity_truncations;
        self.max_dust_jump = self.max_dust_jump.max(other.max_dust_jump);
        self.max_dust_jump_ratio = self.max_dust_jump_ratio.max(other.max_dust_jump_ratio);
        self.aggregate_dust += other.aggregate_dust;
    }
}

/// A simulated path: the partition after every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragPath {
    initial_mass: f64,
    horizon: f64,
    truncation: Truncation,
    seed: Option<u64>,
    homogeneous: bool,
    erosion: f64,
    events: Vec<(f64, MassPartition)>,
    /// `(time, s1, mass before)` at each split of the tagged lineage.
    tagged: Vec<(f64, f64, f64)>,
    diagnostics: Diagnostics,
}

impl FragPath {
    pub fn initial_mass(&self) -> f64 {
        self.initial_mass
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn truncation(&self) -> &Truncation {
        &self.truncation
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn events(&self) -> &[(f64, MassPartition)] {
        &self.events
    }

    /// Partition at time `t`: the snapshot of the last event at or before `t`.
    pub fn marginal(&self, t: f64) -> Result<MassPartition> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        let k = self.events.partition_point(|e| e.0 <= t);
        let (te, p) = &self.events[k - 1];
        Ok(if self.erosion > 0.0 {
            p.eroded((-self.erosion * (t - te)).exp())
        } else {
            p.clone()
        })
    }

    pub fn dust_mass(&self, t: f64) -> Result<f64> {
        Ok(self.marginal(t)?.dust())
    }

    /// Largest fragment after each event, starting with `(0, m)`.
    pub fn largest_fragment_series(&self) -> Vec<(f64, f64)> {
        self.events.iter().map(|(t, p)| (*t, p.nth_largest(1))).collect()
    }

    /// Multiplies masses at time `t` by `e^{-c t}`, moving the deficit to dust.
    pub fn apply_erosion(&self, c: f64) -> Result<FragPath> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(invalid("c", format!("{c} must be finite and non-negative")));
        }
        if !self.homogeneous {
            return Err(Error::NotHomogeneous(
                "the path was simulated with a mass-dependent rate, so erosion does not factor out".into(),
            ));
        }
        let mut out = self.clone();
        if c == 0.0 {
            return Ok(out);
        }
        for (t, p) in out.events.iter_mut() {
            *p = p.eroded((-c * *t).exp());
        }
        out.erosion += c;
        Ok(out)
    }

    /// Mass of the tagged largest-child lineage at time `t` (0 once it has
    /// fallen below the mass floor).
    pub fn tagged_mass(&self, t: f64) -> f64 {
        let k = self.tagged.partition_point(|e| e.0 <= t);
        match self.tagged[..k].last() {
            None => self.initial_mass,
            Some(&(_, s1, before)) => {
                let after = before * s1;
                if after < self.truncation.mass_floor {
                    0.0
                } else {
                    after
                }
            }
        }
    }

    /// The tagged lineage as a subordinator `xi` in its intrinsic clock
    /// `u = ∫ tau(Λ(r)) dr`, so that `Λ = m exp(-xi ∘ rho)`.
    pub fn tagged_xi(&self, tau: &RateFunction) -> Result<JumpPath> {
        let mut u = 0.0;
        let mut prev = 0.0;
        let mut mass = self.initial_mass;
        let mut jumps = Vec::with_capacity(self.tagged.len());
        for &(t, s1, before) in &self.tagged {
            u += (t - prev) * tau.evaluate(mass);
            jumps.push((u, -s1.ln()));
            prev = t;
            mass = before * s1;
            if mass < self.truncation.mass_floor {
                return JumpPath::new(u, 0.0, jumps);
            }
        }
        u += (self.horizon - prev) * tau.evaluate(mass);
        JumpPath::new(u, 0.0, jumps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub probes: Vec<(f64, MassPartition)>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Clock {
    time: f64,
    slot: usize,
}

impl Eq for Clock {}

impl Ord for Clock {
    // min-heap on time, ties broken by slot for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Clock {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct State {
    masses: Vec<f64>,
    free: Vec<usize>,
    dust: f64,
    heap: BinaryHeap<Clock>,
}

impl State {
    fn snapshot(&self) -> MassPartition {
        let mut v: Vec<f64> = self.masses.iter().copied().filter(|&x| x > 0.0).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        MassPartition::from_sorted_unchecked(v, self.dust)
    }

    fn place(&mut self, mass: f64) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.masses[i] = mass;
                i
            }
            None => {
                self.masses.push(mass);
                self.masses.len() - 1
            }
        }
    }
}

enum Recorder<'a> {
    Path {
        events: &'a mut Vec<(f64, MassPartition)>,
        tagged: &'a mut Vec<(f64, f64, f64)>,
    },
    Probes {
        times: &'a [f64],
        out: &'a mut Vec<(f64, MassPartition)>,
    },
}

/// A `(tau, nu)` fragmentation with fixed truncation, reusable across runs.
#[derive(Debug, Clone)]
pub struct Engine {
    tau: RateFunction,
    nu: Arc<dyn DislocationMeasure>,
    truncation: Truncation,
    base_rate: f64,
    table: Option<RateTable>,
}

impl Engine {
    pub fn new(tau: RateFunction, nu: Arc<dyn DislocationMeasure>, truncation: Truncation) -> Result<Self> {
        truncation.validate()?;
        let base_rate = nu.rate(truncation.epsilon)?;
        let table = if truncation.chip_floor > 0.0 && truncation.epsilon < 0.5 {
            Some(RateTable::build(nu.as_ref(), truncation.epsilon, TABLE_POINTS_PER_DECADE)?)
        } else {
            None
        };
        Ok(Self {
            tau,
            nu,
            truncation,
            base_rate,
            table,
        })
    }

    pub fn tau(&self) -> &RateFunction {
        &self.tau
    }

    pub fn nu(&self) -> &Arc<dyn DislocationMeasure> {
        &self.nu
    }

    pub fn truncation(&self) -> &Truncation {
        &self.truncation
    }

    #[inline]
    fn effective_epsilon(&self, s: f64) -> f64 {
        (self.truncation.chip_floor / s).max(self.truncation.epsilon).min(0.5)
    }

    #[inline]
    fn split_rate(&self, s: f64) -> Result<f64> {
        let r = match &self.table {
            Some(t) => t.rate(self.effective_epsilon(s)),
            None => self.base_rate,
        };
        if r == 0.0 {
            return Ok(0.0);
        }
        let rate = self.tau.evaluate(s) * r;
        if rate.is_finite() && rate >= 0.0 {
            Ok(rate)
        } else {
            Err(Error::RateOverflow { mass: s })
        }
    }

    /// Upper bound on the mass per unit time ignored by the truncation, at
    /// the initial mass and at the mass floor.
    pub fn truncation_drift_bound(&self, m: f64) -> Result<f64> {
        let mut bound = 0.0f64;
        for s in [m, self.truncation.mass_floor.max(self.truncation.chip_floor)] {
            if s > 0.0 {
                let lost = self.nu.small_dislocation_mass(self.effective_epsilon(s))?;
                bound = bound.max(self.tau.evaluate(s) * s * lost);
            }
        }
        Ok(bound)
    }

    fn check_start(&self, m: f64, horizon: f64) -> Result<()> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(invalid("m", format!("{m} must be positive and finite")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("horizon", format!("{horizon} must be positive and finite")));
        }
        if !(self.truncation.mass_floor < m) {
            return Err(invalid("mass_floor", format!("{} is not below m = {m}", self.truncation.mass_floor)));
        }
        Ok(())
    }

    /// Full path on `[0, horizon]`, recording the partition after every event.
    pub fn simulate(&self, m: f64, horizon: f64, rng: &mut dyn RngCore) -> Result<FragPath> {
        self.check_start(m, horizon)?;
        let mut events = vec![(0.0, MassPartition::single(m)?)];
        let mut tagged = Vec::new();
        let diagnostics = self.run(
            m,
            horizon,
            rng,
            Recorder::Path {
                events: &mut events,
                tagged: &mut tagged,
            },
        )?;
        Ok(FragPath {
            initial_mass: m,
            horizon,
            truncation: self.truncation,
            seed: None,
            homogeneous: self.tau.is_homogeneous(),
            erosion: 0.0,
            events,
            tagged,
            diagnostics,
        })
    }

    pub fn simulate_seeded(&self, m: f64, horizon: f64, seed: u64) -> Result<FragPath> {
        let mut p = self.simulate(m, horizon, &mut seeded(seed))?;
        p.seed = Some(seed);
        Ok(p)
    }

    /// Partitions at the (non-decreasing) probe times only.
    pub fn marginals(&self, m: f64, probes: &[f64], rng: &mut dyn RngCore) -> Result<ProbeRun> {
        if probes.is_empty() {
            return Ok(ProbeRun {
                probes: Vec::new(),
                diagnostics: Diagnostics::default(),
            });
        }
        if probes.windows(2).any(|w| !(w[0] <= w[1])) || !(probes[0] >= 0.0) {
            return Err(invalid("probes", "probe times must be non-negative and sorted"));
        }
        let horizon = probes[probes.len() - 1];
        if horizon == 0.0 {
            let p = MassPartition::single(m)?;
            return Ok(ProbeRun {
                probes: probes.iter().map(|&t| (t, p.clone())).collect(),
                diagnostics: Diagnostics::default(),
            });
        }
        self.check_start(m, horizon)?;
        let mut out = Vec::with_capacity(probes.len());
        let diagnostics = self.run(m, horizon, rng, Recorder::Probes { times: probes, out: &mut out })?;
        Ok(ProbeRun { probes: out, diagnostics })
    }

    fn run(&self, m: f64, horizon: f64, rng: &mut dyn RngCore, mut rec: Recorder<'_>) -> Result<Diagnostics> {
        let floor = self.truncation.mass_floor;
        let mut diag = Diagnostics::default();
        let mut st = State {
            masses: vec![m],
            free: Vec::new(),
            dust: 0.0,
            heap: BinaryHeap::new(),
        };
        let r = self.split_rate(m)?;
        if r > 0.0 {
            st.heap.push(Clock {
                time: exp1(rng) / r,
                slot: 0,
            });
        }
        let mut tagged_alive = true;
        let mut next_probe = 0usize;
        let mut frac = Fractions::default();
        loop {
            let next = st.heap.peek().map_or(f64::INFINITY, |c| c.time);
            if let Recorder::Probes { times, out } = &mut rec {
                while next_probe < times.len() && times[next_probe] < next {
                    out.push((times[next_probe], st.snapshot()));
                    next_probe += 1;
                }
            }
            if next > horizon {
                break;
            }
            let Clock { time, slot } = st.heap.pop().expect("peeked clock");
            diag.events += 1;
            if diag.events > self.truncation.event_budget {
                return Err(Error::EventBudget(self.truncation.event_budget));
            }
            let s = st.masses[slot];
            self.nu.sample_into(self.effective_epsilon(s), rng, &mut frac)?;
            if frac.parts.len() > self.truncation.max_children {
                diag.arity_truncations += 1;
            }
            let arity = frac.parts.len() + usize::from(frac.aggregate > 0.0);
            diag.aggregate_dust += frac.aggregate * s;
            if let Recorder::Path { tagged, .. } = &mut rec {
                if slot == 0 && tagged_alive {
                    tagged.push((time, frac.s1(), s));
                }
            }
            let mut kept = 0.0;
            let mut slot_reused = false;
            for (j, &f) in frac.parts.iter().take(self.truncation.max_children).enumerate() {
                let child = f * s;
                if !(child >= floor) || child == 0.0 {
                    break;
                }
                kept += child;
                let i = if j == 0 {
                    st.masses[slot] = child;
                    slot_reused = true;
                    slot
                } else {
                    st.place(child)
                };
                let r = self.split_rate(child)?;
                if r > 0.0 {
                    st.heap.push(Clock {
                        time: time + exp1(rng) / r,
                        slot: i,
                    });
                }
            }
            if !slot_reused {
                st.masses[slot] = 0.0;
                st.free.push(slot);
                if slot == 0 {
                    tagged_alive = false;
                }
            }
            let inc = (s - kept).max(0.0);
            st.dust += inc;
            diag.max_dust_jump = diag.max_dust_jump.max(inc);
            if floor > 0.0 && arity > 0 {
                diag.max_dust_jump_ratio = diag.max_dust_jump_ratio.max(inc / (floor * arity as f64));
            }
            if let Recorder::Path { events, .. } = &mut rec {
                events.push((time, st.snapshot()));
            }
        }
        Ok(diag)
    }
}

/// One path on `[0, horizon]` with relative truncation `epsilon` and mass floor.
pub fn simulate(
    tau: &RateFunction,
    nu: Arc<dyn DislocationMeasure>,
    m: f64,
    horizon: f64,
    epsilon: f64,
    mass_floor: f64,
    rng: &mut dyn RngCore,
) -> Result<FragPath> {
    Engine::new(tau.clone(), nu, Truncation::new(epsilon, mass_floor))?.simulate(m, horizon, rng)
}
