//! Model reduction: collapse runs of equal coefficients into one segment
//! variable each, through `b = M · b_reduced`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pattern::BreakPattern;
use crate::error::{IflError, Result};
use crate::operator::{SparseColumns, StackedDesign};

/// A 0/1 matrix with exactly one 1 per row, stored as the column index of each row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    n_cols: usize,
    column_of: Vec<usize>,
}

impl SelectionMatrix {
    pub fn n_rows(&self) -> usize {
        self.column_of.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Column holding the 1 of row `i`.
    pub fn column_of(&self, i: usize) -> usize {
        self.column_of[i]
    }

    /// `M γ`.
    pub fn apply(&self, gamma: &[f64]) -> Vec<f64> {
        assert_eq!(gamma.len(), self.n_cols);
        self.column_of.iter().map(|&c| gamma[c]).collect()
    }

    /// `Mᵀ v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_rows());
        let mut out = vec![0.0; self.n_cols];
        for (&c, x) in self.column_of.iter().zip(v) {
            out[c] += x;
        }
        out
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_cols];
        for &c in &self.column_of {
            out[c] += 1;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols);
        for (i, &c) in self.column_of.iter().enumerate() {
            m[(i, c)] = 1.0;
        }
        m
    }

    /// `X M` for the stacked design `X`: column `k` carries `x_{t,j}` on
    /// every row `t` whose position maps to `k`.
    pub fn compose(&self, design: &StackedDesign<'_>) -> SparseColumns {
        let n = design.panel().n_obs();
        assert_eq!(self.n_rows(), n * design.panel().n_features());
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.n_cols];
        for (i, &c) in self.column_of.iter().enumerate() {
            members[c].push(i);
        }
        let mut out = SparseColumns::new(n);
        let mut acc = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        for rows in &members {
            for &i in rows {
                let (t, v) = design.entry(i);
                if acc[t] == 0.0 {
                    touched.push(t);
                }
                acc[t] += v;
            }
            touched.sort_unstable();
            touched.dedup();
            out.push_column(
                touched
                    .iter()
                    .filter(|&&t| acc[t] != 0.0)
                    .map(|&t| (t, acc[t])),
            );
            for &t in &touched {
                acc[t] = 0.0;
            }
            touched.clear();
        }
        out
    }
}

/// Running segment index at each segment start, zero elsewhere.
///
/// Positions are the stacked `j*T + t`; the k-th start (in position order)
/// receives `k` (one-based). Only lag 1 is supported.
pub fn build_gamma_d(pattern: &BreakPattern, lag: usize) -> Result<Vec<usize>> {
    if lag != 1 {
        return Err(IflError::Unsupported(format!(
            "segment bookkeeping at lag {lag}"
        )));
    }
    let mut count = 0;
    Ok(pattern
        .start_indicator()
        .into_iter()
        .map(|start| {
            if start {
                count += 1;
                count
            } else {
                0
            }
        })
        .collect())
}

/// Selection matrix from `gamma_d`: each row maps to the segment index of
/// the nearest start at or before it within the same component block.
pub fn build_m(
    gamma_d: &[usize],
    beta_in: &[usize],
    beta_out: &[usize],
    lag: usize,
) -> Result<SelectionMatrix> {
    if lag != 1 {
        return Err(IflError::Unsupported(format!(
            "segment bookkeeping at lag {lag}"
        )));
    }
    if beta_in.len() != beta_out.len() {
        return Err(IflError::shape(beta_in.len(), beta_out.len()));
    }
    let n_in: usize = beta_in.iter().sum();
    let n_out: usize = beta_out.iter().sum();
    if gamma_d.len() != n_in {
        return Err(IflError::shape(
            format!("gamma_d of length {n_in}"),
            gamma_d.len(),
        ));
    }
    let mut column_of = Vec::with_capacity(n_in);
    let mut expected = 1;
    let mut offset = 0;
    for (j, (&k_in, &k_out)) in beta_in.iter().zip(beta_out).enumerate() {
        let block = &gamma_d[offset..offset + k_in];
        if block.first().is_none_or(|&g| g == 0) {
            return Err(IflError::MalformedPattern(format!(
                "component {j} has no segment start at its first position"
            )));
        }
        let mut starts = 0;
        let mut current = 0;
        for &g in block {
            if g != 0 {
                if g != expected {
                    return Err(IflError::MalformedPattern(format!(
                        "segment index {g} where {expected} was expected"
                    )));
                }
                expected += 1;
                starts += 1;
                current = g;
            }
            column_of.push(current - 1);
        }
        if starts != k_out {
            return Err(IflError::MalformedPattern(format!(
                "component {j} has {starts} segments, beta_out says {k_out}"
            )));
        }
        offset += k_in;
    }
    debug_assert_eq!(expected - 1, n_out);
    Ok(SelectionMatrix {
        n_cols: n_out,
        column_of,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionMap {
    pub beta_in: Vec<usize>,
    pub beta_out: Vec<usize>,
    pub gamma_d: Vec<usize>,
    pub m: SelectionMatrix,
}

/// One column of `M`: component `j` held constant over `times`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub component: usize,
    pub times: std::ops::Range<usize>,
}

impl ReductionMap {
    pub fn n_in(&self) -> usize {
        self.beta_in.iter().sum()
    }

    pub fn n_out(&self) -> usize {
        self.beta_out.iter().sum()
    }

    /// Segments in column order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::with_capacity(self.n_out());
        let mut offset = 0;
        for (component, &k) in self.beta_in.iter().enumerate() {
            for t in 0..k {
                let c = self.m.column_of(offset + t);
                if c == out.len() {
                    out.push(Segment {
                        component,
                        times: t..t + 1,
                    });
                } else {
                    out[c].times.end = t + 1;
                }
            }
            offset += k;
        }
        out
    }
}

/// Step 2: the reduction map implied by a break pattern.
pub fn mop(pattern: &BreakPattern) -> ReductionMap {
    let n = pattern.n_obs();
    let p = pattern.n_features();
    let beta_in = vec![n; p];
    let beta_out: Vec<usize> = (0..p).map(|j| 1 + pattern.component(j).len()).collect();
    let gamma_d = build_gamma_d(pattern, 1).expect("lag 1");
    let m = build_m(&gamma_d, &beta_in, &beta_out, 1).expect("gamma_d built from a valid pattern");
    ReductionMap {
        beta_in,
        beta_out,
        gamma_d,
        m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{stack_design, LinearOperator};
    use crate::panel::RegressionPanel;

    fn rows_of(m: &SelectionMatrix) -> Vec<usize> {
        (0..m.n_rows()).map(|i| m.column_of(i)).collect()
    }

    #[test]
    fn gamma_d_examples() {
        let p = BreakPattern::from_breaks(3, vec![vec![1], vec![]]).unwrap();
        assert_eq!(build_gamma_d(&p, 1).unwrap(), vec![1, 2, 0, 3, 0, 0]);
        let p = BreakPattern::empty(2, 3);
        assert_eq!(build_gamma_d(&p, 1).unwrap(), vec![1, 0, 2, 0, 3, 0]);
        let p = BreakPattern::every_time(3, 2);
        assert_eq!(build_gamma_d(&p, 1).unwrap(), (1..=6).collect::<Vec<_>>());
        assert!(build_gamma_d(&p, 2).is_err());
    }

    #[test]
    fn m_examples() {
        let m = build_m(&[1, 2, 0, 3, 0, 0], &[3, 3], &[2, 1], 1).unwrap();
        assert_eq!(rows_of(&m), vec![0, 1, 1, 2, 2, 2]);
        assert_eq!(m.n_cols(), 3);
        let ident = build_m(&[1, 2, 3, 4], &[2, 2], &[2, 2], 1).unwrap();
        assert_eq!(ident.to_dense(), DMatrix::identity(4, 4));
    }

    #[test]
    fn m_rejects_malformed_gamma_d() {
        assert!(matches!(
            build_m(&[1, 0, 0, 2], &[2, 2], &[1, 1], 1),
            Err(IflError::MalformedPattern(_))
        ));
        assert!(build_m(&[1, 0, 3, 0], &[2, 2], &[1, 1], 1).is_err());
        assert!(build_m(&[1, 2, 3, 0], &[2, 2], &[1, 1], 1).is_err());
        assert!(build_m(&[1, 0, 2], &[2, 2], &[1, 1], 1).is_err());
    }

    #[test]
    fn mop_examples() {
        let map = mop(&BreakPattern::empty(3, 2));
        assert_eq!(map.beta_out, vec![1, 1]);
        let expected =
            DMatrix::from_row_slice(6, 2, &[1., 0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 1.]);
        assert_eq!(map.m.to_dense(), expected);

        let map = mop(&BreakPattern::from_breaks(4, vec![vec![2], vec![]]).unwrap());
        assert_eq!(map.beta_out, vec![2, 1]);

        let map = mop(&BreakPattern::every_time(3, 2));
        assert_eq!(map.beta_out, vec![3, 3]);
        assert_eq!(map.m.to_dense(), DMatrix::identity(6, 6));
    }

    #[test]
    fn segments_follow_columns() {
        let map = mop(&BreakPattern::from_breaks(4, vec![vec![2], vec![1, 3]]).unwrap());
        let segs = map.segments();
        assert_eq!(segs.len(), 5);
        assert_eq!(
            segs[0],
            Segment {
                component: 0,
                times: 0..2
            }
        );
        assert_eq!(
            segs[1],
            Segment {
                component: 0,
                times: 2..4
            }
        );
        assert_eq!(
            segs[4],
            Segment {
                component: 1,
                times: 3..4
            }
        );
    }

    #[test]
    fn compose_matches_dense_product() {
        let panel = RegressionPanel::from_rows(
            vec![0.0; 4],
            &[
                vec![1.0, 2.0],
                vec![3.0, -1.0],
                vec![0.5, 4.0],
                vec![2.0, 1.0],
            ],
        )
        .unwrap();
        let design = stack_design(&panel);
        let map = mop(&BreakPattern::from_breaks(4, vec![vec![2], vec![1, 3]]).unwrap());
        let h = map.m.compose(&design);
        let dense = design.materialize() * map.m.to_dense();
        assert!((h.to_dense() - dense).abs().max() < 1e-15);
        assert_eq!(h.column(0).1, &[1.0, 3.0]);
    }

    #[test]
    fn full_break_pattern_composes_to_stacked_design() {
        let panel = RegressionPanel::from_rows(
            vec![0.0; 3],
            &[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 4.0]],
        )
        .unwrap();
        let design = stack_design(&panel);
        let map = mop(&BreakPattern::every_time(3, 2));
        assert_eq!(map.n_out(), 6);
        assert_eq!(map.m.compose(&design).to_dense(), design.materialize());
    }
}
