//! Finite elements of the space of decreasing summable sequences.
//!
//! A [`MassPartition`] stores the macroscopic masses in non-increasing order
//! together with an explicit dust accumulator, so that mass conservation can
//! be asserted event by event.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor below which a newly created mass is sent to dust, in units
/// of the initial mass.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-9;

/// Absolute tolerance on `sum(fractions) <= 1`.
pub const FRACTION_SUM_TOLERANCE: f64 = 1e-9;

/// Decreasing list of positive masses plus the mass lost to dust.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MassPartition {
    masses: Vec<f64>,
    dust: f64,
}

fn sort_desc(v: &mut [f64]) {
    v.sort_unstable_by(|a, b| b.total_cmp(a));
}

impl MassPartition {
    /// The dust state: no macroscopic mass, no dust.
    pub fn zero() -> Self {
        Self::default()
    }

    /// A single particle of mass `m`.
    pub fn single(m: f64) -> Result<Self> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::NegativeMass(m));
        }
        let masses = if m > 0.0 { vec![m] } else { Vec::new() };
        Ok(Self { masses, dust: 0.0 })
    }

    /// Builds a partition from arbitrary non-negative values and a dust amount.
    pub fn new(values: Vec<f64>, dust: f64) -> Result<Self> {
        if !(dust.is_finite() && dust >= 0.0) {
            return Err(Error::NegativeMass(dust));
        }
        let mut p = Self::decreasing_rearrangement(values)?;
        p.dust = dust;
        Ok(p)
    }

    /// Sorts `values` in non-increasing order and drops zeros. Dust is zero.
    pub fn decreasing_rearrangement(mut values: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NegativeMass(bad));
        }
        values.retain(|&v| v > 0.0);
        sort_desc(&mut values);
        Ok(Self {
            masses: values,
            dust: 0.0,
        })
    }

    /// Like [`decreasing_rearrangement`](Self::decreasing_rearrangement), but
    /// values strictly below `floor` are moved to dust.
    pub fn with_floor(values: Vec<f64>, floor: f64) -> Result<Self> {
        let mut p = Self::decreasing_rearrangement(values)?;
        p.apply_floor(floor);
        Ok(p)
    }

    /// Builds a partition from masses that are already positive and sorted.
    /// Only checked in debug builds.
    pub(crate) fn from_sorted_unchecked(masses: Vec<f64>, dust: f64) -> Self {
        debug_assert!(masses.windows(2).all(|w| w[0] >= w[1]));
        debug_assert!(masses.last().is_none_or(|&m| m > 0.0));
        Self { masses, dust }
    }

    fn apply_floor(&mut self, floor: f64) {
        let cut = self.masses.partition_point(|&m| m >= floor);
        let lost: f64 = self.masses[cut..].iter().sum();
        self.masses.truncate(cut);
        self.dust += lost;
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn dust(&self) -> f64 {
        self.dust
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// `k`-th largest mass, 1-based as in `F_1, F_2, ...`; zero when absent.
    pub fn nth_largest(&self, k: usize) -> f64 {
        assert!(k >= 1, "masses are indexed from 1");
        self.masses.get(k - 1).copied().unwrap_or(0.0)
    }

    /// Sum of the macroscopic masses.
    pub fn macroscopic(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Macroscopic mass plus dust.
    pub fn total(&self) -> f64 {
        self.macroscopic() + self.dust
    }

    /// Multiplies every mass by `c >= 0`, moving `(1 - c)` of the macroscopic
    /// mass to dust when `c < 1`.
    pub fn eroded(&self, c: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&c));
        let macroscopic = self.macroscopic();
        let masses: Vec<f64> = self.masses.iter().map(|m| m * c).filter(|&m| m > 0.0).collect();
        Self {
            masses,
            dust: self.dust + macroscopic * (1.0 - c),
        }
    }

    /// Multiplies masses and dust by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            masses: self.masses.iter().map(|m| m * c).collect(),
            dust: self.dust * c,
        }
    }

    /// Decreasing rearrangement of the union of several partitions; dusts add.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a MassPartition>) -> Self {
        let mut masses = Vec::new();
        let mut dust = 0.0;
        for p in parts {
            masses.extend_from_slice(&p.masses);
            dust += p.dust;
        }
        sort_desc(&mut masses);
        Self { masses, dust }
    }

    /// Replaces the mass at `index` by `m * f_j` for each fraction; the
    /// deficit `m * (1 - sum f)` goes to dust.
    pub fn split_at(&self, index: usize, fractions: &[f64]) -> Result<Self> {
        self.split_at_with_floor(index, fractions, 0.0)
    }

    /// [`split_at`](Self::split_at) with children below `floor` sent to dust.
    pub fn split_at_with_floor(&self, index: usize, fractions: &[f64], floor: f64) -> Result<Self> {
        let parent = *self.masses.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.masses.len(),
        })?;
        if let Some(&bad) = fractions.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
            return Err(Error::NegativeMass(bad));
        }
        let sum: f64 = fractions.iter().sum();
        if sum > 1.0 + FRACTION_SUM_TOLERANCE {
            return Err(Error::FractionsExceedOne(sum));
        }

        let mut masses = Vec::with_capacity(self.masses.len() + fractions.len());
        masses.extend_from_slice(&self.masses[..index]);
        masses.extend_from_slice(&self.masses[index + 1..]);
        let mut dust = self.dust + parent * (1.0 - sum).max(0.0);
        for &f in fractions {
            let child = parent * f;
            if child <= 0.0 {
                continue;
            }
            if child < floor {
                dust += child;
            } else {
                masses.push(child);
            }
        }
        sort_desc(&mut masses);
        Ok(Self { masses, dust })
    }
}

/// `sum_i |a_i - b_i|` over the masses, shorter list padded with zeros.
/// Dust does not enter the distance.
pub fn l1_distance(a: &MassPartition, b: &MassPartition) -> f64 {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    long.masses
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - short.masses.get(i).copied().unwrap_or(0.0)).abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> MassPartition {
        MassPartition::decreasing_rearrangement(v.to_vec()).unwrap()
    }

    #[test]
    fn rearrangement_sorts_and_drops_zeros() {
        assert_eq!(p(&[0.2, 0.5, 0.3]).masses(), &[0.5, 0.3, 0.2]);
        assert_eq!(p(&[]), MassPartition::zero());
        assert_eq!(p(&[0.5, 0.0, 0.5]).masses(), &[0.5, 0.5]);
        assert!(matches!(
            MassPartition::decreasing_rearrangement(vec![0.1, -0.2]),
            Err(Error::NegativeMass(_))
        ));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(l1_distance(&p(&[1.0]), &p(&[1.0])), 0.0);
        assert_abs_diff_eq!(l1_distance(&p(&[0.5, 0.5]), &p(&[1.0])), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l1_distance(&MassPartition::zero(), &p(&[0.3, 0.2])), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn split_examples() {
        let s = p(&[1.0]).split_at(0, &[0.5, 0.5]).unwrap();
        assert_eq!(s.masses(), &[0.5, 0.5]);
        assert_eq!(s.dust(), 0.0);

        let s = p(&[1.0]).split_at(0, &[1.0]).unwrap();
        assert_eq!(s.masses(), &[1.0]);

        let s = p(&[2.0, 1.0]).split_at(0, &[0.25, 0.25]).unwrap();
        assert_eq!(s.masses(), &[1.0, 0.5, 0.5]);
        assert_abs_diff_eq!(s.dust(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            p(&[1.0]).split_at(3, &[0.5]),
            Err(Error::IndexOutOfRange { index: 3, len: 1 })
        ));
        assert!(matches!(
            p(&[1.0]).split_at(0, &[0.6, 0.6]),
            Err(Error::FractionsExceedOne(_))
        ));
        // within the summation tolerance
        assert!(p(&[1.0]).split_at(0, &[0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn floor_moves_small_children_to_dust() {
        let s = p(&[1.0]).split_at_with_floor(0, &[0.999, 0.001], 0.01).unwrap();
        assert_eq!(s.masses(), &[0.999]);
        assert_abs_diff_eq!(s.dust(), 0.001, epsilon = 1e-15);
        let w = MassPartition::with_floor(vec![1.0, 1e-12, 0.5], 1e-9).unwrap();
        assert_eq!(w.masses(), &[1.0, 0.5]);
        assert_abs_diff_eq!(w.dust(), 1e-12, epsilon = 1e-24);
    }

    #[test]
    fn erosion_keeps_total() {
        let a = MassPartition::new(vec![0.6, 0.3], 0.1).unwrap();
        let e = a.eroded(0.5);
        assert_eq!(e.masses(), &[0.3, 0.15]);
        assert_abs_diff_eq!(e.total(), 1.0, epsilon = 1e-15);
    }

    fn small_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 0..12)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn conservative_split_preserves_total(v in prop::collection::vec(0.01f64..10.0, 1..10),
                                              raw in prop::collection::vec(0.001f64..1.0, 1..8),
                                              idx in 0usize..10) {
            let part = p(&v);
            let idx = idx % part.len();
            let s: f64 = raw.iter().sum();
            let fr: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let out = part.split_at(idx, &fr).unwrap();
            prop_assert!((out.total() - part.total()).abs() <= 1e-12 * part.total());
            prop_assert!(out.masses().windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn rearrangement_is_a_contraction(v in small_vec(), eta in prop::collection::vec(-0.05f64..0.05, 12)) {
            let w: Vec<f64> = v.iter().zip(&eta).map(|(a, e)| (a + e).max(0.0)).collect();
            let pert: f64 = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(l1_distance(&p(&v), &p(&w)) <= pert + 1e-12);
        }

        #[test]
        fn distance_is_a_metric(a in small_vec(), b in small_vec(), c in small_vec()) {
            let (a, b, c) = (p(&a), p(&b), p(&c));
            prop_assert_eq!(l1_distance(&a, &a), 0.0);
            prop_assert!((l1_distance(&a, &b) - l1_distance(&b, &a)).abs() < 1e-15);
            prop_assert!(l1_distance(&a, &c) <= l1_distance(&a, &b) + l1_distance(&b, &c) + 1e-12);
        }
    }
}
