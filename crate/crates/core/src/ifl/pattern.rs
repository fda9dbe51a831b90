use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{IflError, Result};
use crate::panel::CoefficientMatrix;

/// Break times per component. Times are zero-based, so a break at `t`
/// (`1 ≤ t < T`) means `β_{t,j} ≠ β_{t−1,j}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BreakPattern {
    n_obs: usize,
    breaks: Vec<BTreeSet<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Break {
    pub component: usize,
    pub time: usize,
}

impl BreakPattern {
    /// No breaks: one segment per component.
    pub fn empty(n_obs: usize, n_features: usize) -> Self {
        Self {
            n_obs,
            breaks: vec![BTreeSet::new(); n_features],
        }
    }

    /// Every time step starts a new segment.
    pub fn every_time(n_obs: usize, n_features: usize) -> Self {
        Self {
            n_obs,
            breaks: vec![(1..n_obs).collect(); n_features],
        }
    }

    pub fn from_breaks(n_obs: usize, breaks: Vec<Vec<usize>>) -> Result<Self> {
        let mut out = Self::empty(n_obs, breaks.len());
        for (j, times) in breaks.into_iter().enumerate() {
            for t in times {
                out.insert(j, t)?;
            }
        }
        Ok(out)
    }

    /// Inverse of [`BreakPattern::start_indicator`].
    pub fn from_starts(n_obs: usize, n_features: usize, starts: &[bool]) -> Result<Self> {
        if starts.len() != n_obs * n_features {
            return Err(IflError::shape(n_obs * n_features, starts.len()));
        }
        let mut out = Self::empty(n_obs, n_features);
        for j in 0..n_features {
            let block = &starts[j * n_obs..(j + 1) * n_obs];
            if !block[0] {
                return Err(IflError::MalformedPattern(format!(
                    "component {j} has no segment start at its first position"
                )));
            }
            out.breaks[j] = (1..n_obs).filter(|&t| block[t]).collect();
        }
        Ok(out)
    }

    /// Breaks wherever consecutive coefficients differ exactly.
    pub fn from_coefficients(b: &CoefficientMatrix) -> Self {
        let breaks = (0..b.n_features())
            .map(|j| {
                let path = b.component(j);
                (1..b.n_obs()).filter(|&t| path[t] != path[t - 1]).collect()
            })
            .collect();
        Self {
            n_obs: b.n_obs(),
            breaks,
        }
    }

    pub fn insert(&mut self, component: usize, time: usize) -> Result<()> {
        if component >= self.breaks.len() {
            return Err(IflError::MalformedPattern(format!(
                "component {component} out of range"
            )));
        }
        if time == 0 || time >= self.n_obs {
            return Err(IflError::MalformedPattern(format!(
                "break time {time} outside 1..{}",
                self.n_obs
            )));
        }
        self.breaks[component].insert(time);
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_features(&self) -> usize {
        self.breaks.len()
    }

    pub fn component(&self, j: usize) -> &BTreeSet<usize> {
        &self.breaks[j]
    }

    pub fn is_break(&self, component: usize, time: usize) -> bool {
        self.breaks[component].contains(&time)
    }

    pub fn total_breaks(&self) -> usize {
        self.breaks.iter().map(BTreeSet::len).sum()
    }

    pub fn list(&self) -> Vec<Break> {
        self.breaks
            .iter()
            .enumerate()
            .flat_map(|(component, times)| times.iter().map(move |&time| Break { component, time }))
            .collect()
    }

    /// Segment-start indicator `s` over the stacked positions `j*T + t`:
    /// true at every block start and at every break.
    pub fn start_indicator(&self) -> Vec<bool> {
        let n = self.n_obs;
        let mut s = vec![false; n * self.breaks.len()];
        for (j, times) in self.breaks.iter().enumerate() {
            s[j * n] = true;
            for &t in times {
                s[j * n + t] = true;
            }
        }
        s
    }

    /// Segments of component `j` as half-open time ranges.
    pub fn segments(&self, j: usize) -> Vec<std::ops::Range<usize>> {
        let mut starts: Vec<usize> = std::iter::once(0)
            .chain(self.breaks[j].iter().copied())
            .collect();
        starts.push(self.n_obs);
        starts.windows(2).map(|w| w[0]..w[1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_indicator_forces_block_starts() {
        let pattern = BreakPattern::from_breaks(3, vec![vec![1], vec![]]).unwrap();
        assert_eq!(
            pattern.start_indicator(),
            vec![true, true, false, true, false, false]
        );
        let s = pattern.start_indicator();
        assert_eq!(
            s.iter().filter(|v| **v).count(),
            pattern.n_features() + pattern.total_breaks()
        );
        assert_eq!(BreakPattern::from_starts(3, 2, &s).unwrap(), pattern);
    }

    #[test]
    fn rejects_out_of_range_breaks() {
        assert!(BreakPattern::from_breaks(3, vec![vec![0]]).is_err());
        assert!(BreakPattern::from_breaks(3, vec![vec![3]]).is_err());
        assert!(BreakPattern::from_starts(2, 1, &[false, true]).is_err());
    }

    #[test]
    fn coefficient_breaks_and_segments() {
        let b = CoefficientMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 2.0],
            vec![3.0, 2.0],
            vec![3.0, 2.0],
        ])
        .unwrap();
        let pattern = BreakPattern::from_coefficients(&b);
        assert_eq!(
            pattern.list(),
            vec![
                Break {
                    component: 0,
                    time: 2
                },
                Break {
                    component: 1,
                    time: 1
                }
            ]
        );
        assert_eq!(pattern.segments(0), vec![0..2, 2..4]);
        assert_eq!(
            BreakPattern::every_time(3, 1).segments(0),
            vec![0..1, 1..2, 2..3]
        );
    }
}
