//! Linear operators shared by every estimator: the stacked time-varying
//! design, block lag-difference operators, and their composition.
//!
//! None of these materialize dense matrices unless asked to. Solvers consume
//! the compressed-column form produced by [`LinearOperator::to_columns`].

use nalgebra::DMatrix;

use crate::error::{IflError, Result};
use crate::panel::RegressionPanel;

pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `A v`. Panics if `v.len() != ncols()`.
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// `Aᵀ r`. Panics if `r.len() != nrows()`.
    fn apply_transpose(&self, r: &[f64]) -> Vec<f64>;

    fn to_columns(&self) -> SparseColumns;

    fn materialize(&self) -> DMatrix<f64> {
        self.to_columns().to_dense()
    }

    /// `A Aᵀ`, an `nrows × nrows` matrix.
    fn outer_gram(&self) -> DMatrix<f64> {
        self.to_columns().outer_gram()
    }
}

/// Compressed sparse column storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseColumns {
    n_rows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseColumns {
    pub fn new(n_rows: usize) -> Self {
        Self {
            n_rows,
            col_ptr: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a column given as `(row, value)` entries with strictly increasing rows.
    pub fn push_column<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        for (row, value) in entries {
            debug_assert!(row < self.n_rows);
            self.row_idx.push(row as u32);
            self.values.push(value);
        }
        self.col_ptr.push(self.row_idx.len());
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = Self::new(m.nrows());
        for c in 0..m.ncols() {
            out.push_column((0..m.nrows()).filter_map(|r| {
                let v = m[(r, c)];
                (v != 0.0).then_some((r, v))
            }));
        }
        out
    }

    pub fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, c: usize) -> (&[u32], &[f64]) {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.row_idx[range.clone()], &self.values[range])
    }

    pub fn column_norm_sq(&self, c: usize) -> f64 {
        self.column(c).1.iter().map(|v| v * v).sum()
    }

    #[inline]
    pub fn dot_column(&self, c: usize, r: &[f64]) -> f64 {
        let (rows, vals) = self.column(c);
        rows.iter()
            .zip(vals)
            .map(|(&i, &v)| v * r[i as usize])
            .sum()
    }

    /// `r += alpha * column(c)`.
    #[inline]
    pub fn axpy_column(&self, c: usize, alpha: f64, r: &mut [f64]) {
        let (rows, vals) = self.column(c);
        for (&i, &v) in rows.iter().zip(vals) {
            r[i as usize] += alpha * v;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols());
        for c in 0..self.n_cols() {
            let (rows, vals) = self.column(c);
            for (&i, &v) in rows.iter().zip(vals) {
                m[(i as usize, c)] += v;
            }
        }
        m
    }
}

impl LinearOperator for SparseColumns {
    fn nrows(&self) -> usize {
        self.n_rows
    }

    fn ncols(&self) -> usize {
        self.n_cols()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_cols());
        let mut out = vec![0.0; self.n_rows];
        for (c, &vc) in v.iter().enumerate() {
            if vc != 0.0 {
                self.axpy_column(c, vc, &mut out);
            }
        }
        out
    }

    fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.n_rows);
        (0..self.n_cols()).map(|c| self.dot_column(c, r)).collect()
    }

    fn to_columns(&self) -> SparseColumns {
        self.clone()
    }

    fn outer_gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_rows, self.n_rows);
        for c in 0..self.n_cols() {
            let (rows, vals) = self.column(c);
            for (a, (&ra, &va)) in rows.iter().zip(vals).enumerate() {
                for (&rb, &vb) in rows[a..].iter().zip(&vals[a..]) {
                    let w = va * vb;
                    g[(ra as usize, rb as usize)] += w;
                    if ra != rb {
                        g[(rb as usize, ra as usize)] += w;
                    }
                }
            }
        }
        g
    }
}

/// The `T × Tp` design `[diag(x_1) | … | diag(x_p)]`: column `j*T + t`
/// carries `x_{t,j}` at row `t` and nothing else.
#[derive(Clone, Copy, Debug)]
pub struct StackedDesign<'a> {
    panel: &'a RegressionPanel,
}

pub fn stack_design(panel: &RegressionPanel) -> StackedDesign<'_> {
    StackedDesign { panel }
}

impl<'a> StackedDesign<'a> {
    pub fn panel(&self) -> &'a RegressionPanel {
        self.panel
    }

    /// Row and value of the single entry of column `c`.
    pub fn entry(&self, c: usize) -> (usize, f64) {
        let n = self.panel.n_obs();
        let (j, t) = (c / n, c % n);
        (t, self.panel.x(t, j))
    }
}

impl LinearOperator for StackedDesign<'_> {
    fn nrows(&self) -> usize {
        self.panel.n_obs()
    }

    fn ncols(&self) -> usize {
        self.panel.n_obs() * self.panel.n_features()
    }

    fn apply(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.ncols());
        let n = self.panel.n_obs();
        let mut out = vec![0.0; n];
        for j in 0..self.panel.n_features() {
            let col = self.panel.column(j);
            let block = &b[j * n..(j + 1) * n];
            for t in 0..n {
                out[t] += col[t] * block[t];
            }
        }
        out
    }

    fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.nrows());
        (0..self.panel.n_features())
            .flat_map(|j| self.panel.column(j).iter().zip(r).map(|(x, r)| x * r))
            .collect()
    }

    fn to_columns(&self) -> SparseColumns {
        let mut out = SparseColumns::new(self.nrows());
        for c in 0..self.ncols() {
            let (row, v) = self.entry(c);
            out.push_column((v != 0.0).then_some((row, v)));
        }
        out
    }

    fn outer_gram(&self) -> DMatrix<f64> {
        let n = self.nrows();
        DMatrix::from_fn(n, n, |t, u| {
            if t == u {
                self.panel.row(t).iter().map(|v| v * v).sum()
            } else {
                0.0
            }
        })
    }
}

/// Block-diagonal lag-difference operator; each block is
/// `L_d^(k) = I_k - S_d` with `S_d` the down-shift by `d` rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffOperator {
    lag: usize,
    block_sizes: Vec<usize>,
    offsets: Vec<usize>,
}

pub fn build_diff_operator(lag: usize, block_sizes: &[usize]) -> Result<DiffOperator> {
    if lag == 0 {
        return Err(IflError::InvalidArgument("lag must be at least 1".into()));
    }
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(IflError::InvalidArgument(
            "block sizes must be non-empty and positive".into(),
        ));
    }
    let mut offsets = Vec::with_capacity(block_sizes.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &k in block_sizes {
        acc += k;
        offsets.push(acc);
    }
    Ok(DiffOperator {
        lag,
        block_sizes: block_sizes.to_vec(),
        offsets,
    })
}

impl DiffOperator {
    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn n_total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn blocks(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_total());
        let mut out = v.to_vec();
        for block in self.blocks() {
            for i in (block.start + self.lag)..block.end {
                out[i] -= v[i - self.lag];
            }
        }
        out
    }

    /// Per-block cumulative sum; only defined for lag 1.
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.lag != 1 {
            return Err(IflError::Unsupported(format!(
                "inverse of the lag-{} difference operator",
                self.lag
            )));
        }
        assert_eq!(v.len(), self.n_total());
        let mut out = v.to_vec();
        for block in self.blocks() {
            for i in block.start + 1..block.end {
                out[i] += out[i - 1];
            }
        }
        Ok(out)
    }

    /// `L⁻ᵀ v`, the per-block reverse cumulative sum; only defined for lag 1.
    pub fn apply_inverse_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.lag != 1 {
            return Err(IflError::Unsupported(format!(
                "inverse of the lag-{} difference operator",
                self.lag
            )));
        }
        assert_eq!(v.len(), self.n_total());
        let mut out = v.to_vec();
        for block in self.blocks() {
            for i in (block.start..block.end - 1).rev() {
                out[i] += out[i + 1];
            }
        }
        Ok(out)
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let n = self.n_total();
        let mut m = DMatrix::identity(n, n);
        for block in self.blocks() {
            for i in (block.start + self.lag)..block.end {
                m[(i, i - self.lag)] = -1.0;
            }
        }
        m
    }
}

/// `X L₁⁻¹`: the stacked design acting on levels-plus-differences `θ`.
///
/// Column `c` is the sum of stacked-design columns `c..end_of_block(c)`, so
/// a nonzero `θ_c` shifts every coefficient from position `c` onwards.
#[derive(Clone, Debug)]
pub struct TransformedDesign<'a> {
    design: StackedDesign<'a>,
    diff: DiffOperator,
}

pub fn transformed_design<'a>(
    design: StackedDesign<'a>,
    diff: DiffOperator,
) -> Result<TransformedDesign<'a>> {
    if diff.n_total() != design.ncols() {
        return Err(IflError::shape(
            format!("block sizes summing to {}", design.ncols()),
            diff.n_total(),
        ));
    }
    if diff.lag() != 1 {
        return Err(IflError::Unsupported(
            "transformed design requires lag 1".into(),
        ));
    }
    Ok(TransformedDesign { design, diff })
}

impl TransformedDesign<'_> {
    pub fn diff(&self) -> &DiffOperator {
        &self.diff
    }

    pub fn design(&self) -> &StackedDesign<'_> {
        &self.design
    }
}

impl LinearOperator for TransformedDesign<'_> {
    fn nrows(&self) -> usize {
        self.design.nrows()
    }

    fn ncols(&self) -> usize {
        self.design.ncols()
    }

    fn apply(&self, theta: &[f64]) -> Vec<f64> {
        let b = self
            .diff
            .apply_inverse(theta)
            .expect("lag checked at construction");
        self.design.apply(&b)
    }

    fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        let xr = self.design.apply_transpose(r);
        self.diff
            .apply_inverse_transpose(&xr)
            .expect("lag checked at construction")
    }

    fn to_columns(&self) -> SparseColumns {
        let mut out = SparseColumns::new(self.nrows());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for block in self.diff.blocks() {
            for c in block.clone() {
                scratch.clear();
                scratch.extend((c..block.end).map(|i| self.design.entry(i)));
                scratch.sort_by_key(|&(row, _)| row);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(scratch.len());
                for &(row, v) in &scratch {
                    match merged.last_mut() {
                        Some((r, acc)) if *r == row => *acc += v,
                        _ => merged.push((row, v)),
                    }
                }
                out.push_column(merged.into_iter().filter(|&(_, v)| v != 0.0));
            }
        }
        out
    }

    /// `X L⁻¹ L⁻ᵀ Xᵀ`, using `(L⁻¹L⁻ᵀ)[a,b] = min(a,b) - start + 1` within a block.
    fn outer_gram(&self) -> DMatrix<f64> {
        let n = self.nrows();
        let mut g = DMatrix::zeros(n, n);
        for block in self.diff.blocks() {
            for a in block.clone() {
                let (ra, va) = self.design.entry(a);
                if va == 0.0 {
                    continue;
                }
                let depth = (a - block.start + 1) as f64;
                for b in a..block.end {
                    let (rb, vb) = self.design.entry(b);
                    let w = depth * va * vb;
                    g[(ra, rb)] += w;
                    if a != b {
                        g[(rb, ra)] += w;
                    }
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_panel(rng: &mut ChaCha8Rng, t: usize, p: usize) -> RegressionPanel {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                (0..p)
                    .map(|_| {
                        rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
                    })
                    .collect()
            })
            .collect();
        let y = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        RegressionPanel::from_rows(y, &rows).unwrap()
    }

    fn dense_mul(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        (m * nalgebra::DVector::from_column_slice(v))
            .iter()
            .copied()
            .collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn small_panel() -> RegressionPanel {
        RegressionPanel::from_rows(vec![0.0, 0.0], &[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap()
    }

    #[test]
    fn stacked_design_layout() {
        let panel = small_panel();
        let design = stack_design(&panel);
        let m = design.materialize();
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 3.0, 0.0, 0.0, 2.0, 0.0, 4.0]);
        assert_eq!(m, expected);
        assert_eq!(design.apply(&[1.0, 1.0, 1.0, 1.0]), vec![4.0, 6.0]);
    }

    #[test]
    fn stacked_design_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let panel = random_panel(&mut rng, 5, 3);
        let design = stack_design(&panel);
        let dense = design.materialize();
        let v: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert!(max_diff(&design.apply(&v), &dense_mul(&dense, &v)) < 1e-12);
        let r: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dense_t = dense.transpose();
        assert!(max_diff(&design.apply_transpose(&r), &dense_mul(&dense_t, &r)) < 1e-12);
    }

    #[test]
    fn diff_operator_examples() {
        let op = build_diff_operator(1, &[3]).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        assert_eq!(op.materialize(), expected);
        assert_eq!(
            op.apply_inverse(&[2.0, 0.0, 3.0]).unwrap(),
            vec![2.0, 2.0, 5.0]
        );

        let op = build_diff_operator(1, &[2, 2]).unwrap();
        assert_eq!(
            op.apply_inverse(&[1.0, 1.0, 4.0, -1.0]).unwrap(),
            vec![1.0, 2.0, 4.0, 3.0]
        );
    }

    #[test]
    fn higher_lag_has_no_inverse() {
        let op = build_diff_operator(2, &[4]).unwrap();
        assert!(matches!(
            op.apply_inverse(&[0.0; 4]),
            Err(IflError::Unsupported(_))
        ));
        assert_eq!(op.apply(&[1.0, 2.0, 4.0, 8.0]), vec![1.0, 2.0, 3.0, 6.0]);
        let m = op.materialize();
        assert_eq!(m[(2, 0)], -1.0);
        assert_eq!(m[(3, 1)], -1.0);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn diff_operator_rejects_bad_arguments() {
        assert!(build_diff_operator(0, &[3]).is_err());
        assert!(build_diff_operator(1, &[3, 0]).is_err());
        assert!(build_diff_operator(1, &[]).is_err());
    }

    #[test]
    fn transformed_design_examples() {
        let panel = small_panel();
        let op = build_diff_operator(1, &[2, 2]).unwrap();
        let h = transformed_design(stack_design(&panel), op).unwrap();
        // leading impulse of component 2 reproduces x_{·,2}
        assert_eq!(h.apply(&[0.0, 0.0, 1.0, 0.0]), panel.column(1).to_vec());

        let panel =
            RegressionPanel::from_rows(vec![0.0; 3], &[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let h = transformed_design(stack_design(&panel), build_diff_operator(1, &[3]).unwrap())
            .unwrap();
        assert_eq!(h.apply(&[1.0, 0.0, 2.0]), vec![1.0, 1.0, 3.0]);
    }

    #[test]
    fn transformed_design_rejects_mismatch() {
        let panel = small_panel();
        let op = build_diff_operator(1, &[3]).unwrap();
        assert!(matches!(
            transformed_design(stack_design(&panel), op),
            Err(IflError::Shape { .. })
        ));
        let op = build_diff_operator(2, &[2, 2]).unwrap();
        assert!(transformed_design(stack_design(&panel), op).is_err());
    }

    #[test]
    fn transformed_columns_and_grams_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let panel = random_panel(&mut rng, 6, 3);
        let h = transformed_design(
            stack_design(&panel),
            build_diff_operator(1, &[6, 6, 6]).unwrap(),
        )
        .unwrap();
        let dense = stack_design(&panel).materialize()
            * build_diff_operator(1, &[6, 6, 6])
                .unwrap()
                .materialize()
                .try_inverse()
                .unwrap();
        assert!((h.materialize() - &dense).abs().max() < 1e-12);
        let gram = &dense * dense.transpose();
        assert!((h.outer_gram() - &gram).abs().max() < 1e-10);
        assert!((h.to_columns().outer_gram() - &gram).abs().max() < 1e-10);
        let r: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(max_diff(&h.apply_transpose(&r), &dense_mul(&dense.transpose(), &r)) < 1e-12);
    }

    #[test]
    fn transformed_design_with_blocks_spanning_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let panel = random_panel(&mut rng, 3, 2);
        let op = build_diff_operator(1, &[4, 2]).unwrap();
        let dense = stack_design(&panel).materialize() * op.materialize().try_inverse().unwrap();
        let h = transformed_design(stack_design(&panel), op).unwrap();
        assert!((h.materialize() - &dense).abs().max() < 1e-12);
        assert!((h.outer_gram() - &dense * dense.transpose()).abs().max() < 1e-10);
    }

    proptest! {
        #[test]
        fn stacked_design_has_one_entry_per_column(t in 2usize..=8, p in 1usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let panel = random_panel(&mut rng, t, p);
            let m = stack_design(&panel).materialize();
            prop_assert_eq!(m.iter().filter(|v| **v != 0.0).count(), t * p);
            for c in 0..t * p {
                let nz: Vec<usize> = (0..t).filter(|&r| m[(r, c)] != 0.0).collect();
                prop_assert_eq!(nz, vec![c % t]);
                prop_assert_eq!(m[(c % t, c)], panel.x(c % t, c / t));
            }
        }

        #[test]
        fn difference_then_cumsum_is_identity(sizes in proptest::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let op = build_diff_operator(1, &sizes).unwrap();
            let v: Vec<f64> = (0..op.n_total()).map(|_| rng.random_range(-5.0..5.0)).collect();
            prop_assert!(max_diff(&op.apply(&op.apply_inverse(&v).unwrap()), &v) < 1e-12);
            prop_assert!(max_diff(&op.apply_inverse(&op.apply(&v)).unwrap(), &v) < 1e-12);
        }

        #[test]
        fn transformed_design_equals_stacked_of_cumsum(t in 2usize..=8, p in 1usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let panel = random_panel(&mut rng, t, p);
            let op = build_diff_operator(1, &vec![t; p]).unwrap();
            let h = transformed_design(stack_design(&panel), op.clone()).unwrap();
            let b: Vec<f64> = (0..t * p).map(|_| rng.random_range(-3.0..3.0)).collect();
            let theta = op.apply(&b);
            prop_assert!(max_diff(&h.apply(&theta), &stack_design(&panel).apply(&b)) < 1e-12);
            let cols = h.to_columns();
            prop_assert!(max_diff(&cols.apply(&theta), &h.apply(&theta)) < 1e-12);
        }
    }
}
