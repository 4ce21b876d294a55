use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The narrower band selection: three intervals with the largest regression
/// coefficients (nm, inclusive).
pub const SELECTION_1_NM: &[(f64, f64)] = &[(1220.0, 1295.0), (1370.0, 1410.0), (1420.0, 1480.0)];

/// The wider band selection: the narrow set plus the two low-relevance
/// intervals (nm, inclusive).
pub const SELECTION_2_NM: &[(f64, f64)] =
    &[(980.0, 1070.0), (1220.0, 1295.0), (1330.0, 1350.0), (1370.0, 1410.0), (1420.0, 1480.0)];

/// Sorted, duplicate-free set of band indices, optionally annotated with the
/// nm intervals it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    intervals: Vec<(f64, f64)>,
}

impl BandSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::EmptyBandSet);
        }
        Ok(Self { indices, intervals: Vec::new() })
    }

    pub fn all(bands: usize) -> Self {
        Self { indices: (0..bands).collect(), intervals: Vec::new() }
    }

    /// Bands whose wavelength lies in any of the inclusive `intervals`.
    pub fn from_intervals(wavelengths: &[f64], intervals: &[(f64, f64)]) -> Result<Self> {
        const EPS: f64 = 1e-9;
        let indices: Vec<usize> = wavelengths
            .iter()
            .enumerate()
            .filter(|(_, w)| intervals.iter().any(|(lo, hi)| **w >= lo - EPS && **w <= hi + EPS))
            .map(|(i, _)| i)
            .collect();
        let mut set = Self::new(indices)?;
        set.intervals = intervals.to_vec();
        Ok(set)
    }

    pub fn selection_1(wavelengths: &[f64]) -> Result<Self> {
        Self::from_intervals(wavelengths, SELECTION_1_NM)
    }

    pub fn selection_2(wavelengths: &[f64]) -> Result<Self> {
        Self::from_intervals(wavelengths, SELECTION_2_NM)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Declared intervals, if the set was built from them.
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Contiguous runs of indices expressed as inclusive nm intervals.
    pub fn runs_nm(&self, wavelengths: &[f64]) -> Vec<(f64, f64)> {
        let mut runs = Vec::new();
        let mut iter = self.indices.iter().copied().filter(|i| *i < wavelengths.len());
        let Some(first) = iter.next() else { return runs };
        let (mut start, mut prev) = (first, first);
        for i in iter {
            if i != prev + 1 {
                runs.push((wavelengths[start], wavelengths[prev]));
                start = i;
            }
            prev = i;
        }
        runs.push((wavelengths[start], wavelengths[prev]));
        runs
    }

    /// Intersection, keeping no interval annotation.
    pub fn intersect(&self, other: &BandSet) -> Option<BandSet> {
        let idx: Vec<usize> = self.indices.iter().copied().filter(|i| other.contains(*i)).collect();
        BandSet::new(idx).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::standard_wavelengths;

    /// Counts indices of `idx = (λ − 980) / 5` per inclusive interval.
    fn interval_count(intervals: &[(f64, f64)]) -> usize {
        intervals.iter().map(|(lo, hi)| ((hi - lo) / 5.0) as usize + 1).sum()
    }

    #[test]
    fn selection_sizes() {
        let wl = standard_wavelengths();
        let s1 = BandSet::selection_1(&wl).unwrap();
        let s2 = BandSet::selection_2(&wl).unwrap();
        assert_eq!(interval_count(SELECTION_1_NM), 38);
        assert_eq!(s1.len(), 38);
        assert_eq!(s2.len(), 62);
        assert_eq!(s2.len(), interval_count(SELECTION_2_NM));
        for i in s1.indices() {
            assert!(s2.contains(*i));
        }
        // idx = (λ − 980) / 5
        assert_eq!(s1.indices()[0], (1220 - 980) / 5);
        assert_eq!(*s1.indices().last().unwrap(), (1480 - 980) / 5);
    }

    #[test]
    fn runs_reconstruct_intervals() {
        let wl = standard_wavelengths();
        let s2 = BandSet::selection_2(&wl).unwrap();
        let runs = s2.runs_nm(&wl);
        assert_eq!(runs, vec![(980.0, 1070.0), (1220.0, 1295.0), (1330.0, 1350.0), (1370.0, 1410.0), (1420.0, 1480.0)]);
    }

    #[test]
    fn dedups_and_sorts() {
        let s = BandSet::new(vec![5, 1, 5, 3]).unwrap();
        assert_eq!(s.indices(), &[1, 3, 5]);
    }
}
