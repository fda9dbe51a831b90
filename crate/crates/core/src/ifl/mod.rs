//! The iterative fused LASSO.
//!
//! 1. **Break detection.** Reparameterize each coefficient path as a level
//!    plus lag-1 differences, `θ = L₁ b`, and fit an adaptive LASSO on the
//!    design `X L₁⁻¹`. Nonzero differences are structural breaks.
//! 2. **Mop.** Collapse each run between breaks into a single segment
//!    variable through the selection matrix `M` (`b = M γ`).
//! 3. **Selection.** Fit an adaptive LASSO on the reduced design `X M`; zero
//!    segments drop out of the model.
//!
//! Segments that step 3 sets to identical values (typically both zero) are
//! merged afterwards, so the reported break set is exactly the set of times
//! at which the estimated coefficients change.

mod pattern;
mod reduction;

pub use pattern::{Break, BreakPattern};
pub use reduction::{build_gamma_d, build_m, mop, ReductionMap, Segment, SelectionMatrix};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{IflError, Result};
use crate::operator::{build_diff_operator, stack_design, transformed_design, LinearOperator};
use crate::panel::{CoefficientMatrix, RegressionPanel};
use crate::solver::{
    adaptive_weights, fit_weighted, ridge_init, scaled_ridge_alpha, SolverOptions,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IflConfig {
    pub solver: SolverOptions,
    /// `|θ̂| > break_threshold` declares a break.
    pub break_threshold: f64,
    pub max_outer: usize,
    pub penalize_levels_in_step1: bool,
}

impl Default for IflConfig {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            break_threshold: 1e-8,
            max_outer: 1,
            penalize_levels_in_step1: false,
        }
    }
}

impl IflConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.break_threshold > 0.0) {
            return Err(IflError::InvalidArgument(format!(
                "break_threshold must be positive, got {}",
                self.break_threshold
            )));
        }
        if self.max_outer == 0 {
            return Err(IflError::InvalidArgument(
                "max_outer must be at least 1".into(),
            ));
        }
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iter == 0 || !(s.weight_floor > 0.0) || !(s.nu > 0.0) {
            return Err(IflError::InvalidArgument(
                "solver tol, max_iter, weight_floor and nu must be positive".into(),
            ));
        }
        if !(s.ridge_scale > 0.0 && s.ridge_scale.is_finite()) || !(s.max_df_fraction > 0.0) {
            return Err(IflError::InvalidArgument(
                "solver ridge_scale and max_df_fraction must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Output of step 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakDetection {
    pub theta_hat: Vec<f64>,
    pub pattern: BreakPattern,
    pub lambda: f64,
    pub converged: bool,
    pub rss_floored: bool,
}

/// Output of step 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub gamma_hat: Vec<f64>,
    pub b_hat: CoefficientMatrix,
    pub lambda: f64,
    pub converged: bool,
    pub rss_floored: bool,
    /// More segment variables than observations.
    pub rank_deficient: bool,
}

/// A nonzero segment of the final estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportSegment {
    pub component: usize,
    pub start: usize,
    pub end: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub step1_converged: bool,
    pub step3_converged: bool,
    pub rss_floored: bool,
    pub rank_deficient: bool,
    pub outer_iterations: usize,
    pub step1_breaks: usize,
    #[serde(skip)]
    pub timings: Timings,
}

/// Wall-clock seconds per stage, summed over outer passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub detect: f64,
    pub mop: f64,
    pub select: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IflFit {
    pub b_hat: CoefficientMatrix,
    pub breaks: BreakPattern,
    pub map: ReductionMap,
    pub gamma_hat: Vec<f64>,
    pub support: Vec<SupportSegment>,
    pub lambda_break: f64,
    pub lambda_select: f64,
    pub outer_iterations: usize,
    pub diagnostics: Diagnostics,
}

impl IflFit {
    /// Components with a nonzero coefficient at time `t`.
    pub fn support_at(&self, t: usize) -> Vec<usize> {
        (0..self.b_hat.n_features())
            .filter(|&j| self.b_hat.get(t, j) != 0.0)
            .collect()
    }

    pub fn n_segments(&self) -> usize {
        self.gamma_hat.len()
    }
}

/// Step 1 with the default adaptive weights from a ridge pilot on `X L₁⁻¹`.
pub fn detect_breaks(panel: &RegressionPanel, config: &IflConfig) -> Result<BreakDetection> {
    detect_breaks_with(panel, config, None)
}

/// Step 1 with optional caller-supplied penalty weights on `θ`.
pub fn detect_breaks_with(
    panel: &RegressionPanel,
    config: &IflConfig,
    weights: Option<Vec<f64>>,
) -> Result<BreakDetection> {
    config.validate()?;
    let (n, p) = (panel.n_obs(), panel.n_features());
    let h = transformed_design(stack_design(panel), build_diff_operator(1, &vec![n; p])?)?;
    let columns = h.to_columns();
    let weights = match weights {
        Some(w) => w,
        None => {
            let alpha = scaled_ridge_alpha(&columns, config.solver.ridge_scale);
            let pilot = ridge_init(&h, panel.y(), alpha)?;
            adaptive_weights(&pilot, config.solver.nu, config.solver.weight_floor)
        }
    };
    let levels: Vec<usize> = if config.penalize_levels_in_step1 {
        Vec::new()
    } else {
        (0..p).map(|j| j * n).collect()
    };
    let path = fit_weighted(&columns, panel.y(), weights, &levels, &config.solver)?;
    let theta_hat = path.chosen_coef().to_vec();
    let mut pattern = BreakPattern::empty(n, p);
    for j in 0..p {
        for t in 1..n {
            if theta_hat[j * n + t].abs() > config.break_threshold {
                pattern.insert(j, t)?;
            }
        }
    }
    Ok(BreakDetection {
        lambda: path.chosen_lambda(),
        converged: path.converged[path.chosen],
        rss_floored: path.rss_floored,
        theta_hat,
        pattern,
    })
}

/// Step 3: adaptive LASSO on the reduced design `X M`.
pub fn select_variables(
    panel: &RegressionPanel,
    map: &ReductionMap,
    config: &IflConfig,
) -> Result<Selection> {
    config.validate()?;
    let (n, p) = (panel.n_obs(), panel.n_features());
    if map.beta_in != vec![n; p] {
        return Err(IflError::shape(
            format!("reduction map over {p} components of length {n}"),
            format!("{:?}", map.beta_in),
        ));
    }
    let h = map.m.compose(&stack_design(panel));
    let alpha = scaled_ridge_alpha(&h, config.solver.ridge_scale);
    let pilot = ridge_init(&h, panel.y(), alpha)?;
    let weights = adaptive_weights(&pilot, config.solver.nu, config.solver.weight_floor);
    let path = fit_weighted(&h, panel.y(), weights, &[], &config.solver)?;
    let gamma_hat = path.chosen_coef().to_vec();
    let b_hat = CoefficientMatrix::from_vec(n, p, map.m.apply(&gamma_hat))?;
    Ok(Selection {
        lambda: path.chosen_lambda(),
        converged: path.converged[path.chosen],
        rss_floored: path.rss_floored,
        rank_deficient: h.ncols() > n,
        gamma_hat,
        b_hat,
    })
}

/// Merges adjacent segments with identical estimates; returns the final
/// pattern, map and reduced coefficients, with `M γ̂` reproducing `b_hat`.
fn consolidate(b_hat: &CoefficientMatrix) -> (BreakPattern, ReductionMap, Vec<f64>) {
    let pattern = BreakPattern::from_coefficients(b_hat);
    let map = mop(&pattern);
    let gamma_hat = map
        .segments()
        .iter()
        .map(|s| b_hat.get(s.times.start, s.component))
        .collect();
    (pattern, map, gamma_hat)
}

fn support_of(map: &ReductionMap, gamma_hat: &[f64]) -> Vec<SupportSegment> {
    map.segments()
        .into_iter()
        .zip(gamma_hat)
        .filter(|(_, g)| **g != 0.0)
        .map(|(s, &value)| SupportSegment {
            component: s.component,
            start: s.times.start,
            end: s.times.end,
            value,
        })
        .collect()
}

/// Step-1 weights rebuilt from a piecewise-constant estimate: levels and
/// lag-1 differences of `b_hat`, floored and raised to `-ν`.
fn refined_weights(b_hat: &CoefficientMatrix, config: &IflConfig) -> Vec<f64> {
    let theta = build_diff_operator(1, &vec![b_hat.n_obs(); b_hat.n_features()])
        .expect("positive sizes")
        .apply(b_hat.as_vec());
    adaptive_weights(&theta, config.solver.nu, config.solver.weight_floor)
}

/// Runs break detection, mop and selection, optionally repeating with
/// step-1 weights taken from the previous estimate until the break set and
/// support stop changing.
pub fn fit_ifl(panel: &RegressionPanel, config: &IflConfig) -> Result<IflFit> {
    config.validate()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut weights = None;
    let mut best: Option<IflFit> = None;
    for pass in 1..=config.max_outer {
        let t0 = Instant::now();
        let detection = detect_breaks_with(panel, config, weights.take())?;
        let t1 = Instant::now();
        let map = mop(&detection.pattern);
        let t2 = Instant::now();
        let selection = select_variables(panel, &map, config)?;
        let t3 = Instant::now();
        timings.detect += (t1 - t0).as_secs_f64();
        timings.mop += (t2 - t1).as_secs_f64();
        timings.select += (t3 - t2).as_secs_f64();

        let (breaks, map, gamma_hat) = consolidate(&selection.b_hat);
        let support = support_of(&map, &gamma_hat);
        let unchanged = best.as_ref().is_some_and(|prev| {
            prev.breaks == breaks
                && prev
                    .support
                    .iter()
                    .map(|s| (s.component, s.start, s.end))
                    .eq(support.iter().map(|s| (s.component, s.start, s.end)))
        });
        let diagnostics = Diagnostics {
            converged: detection.converged && selection.converged,
            step1_converged: detection.converged,
            step3_converged: selection.converged,
            rss_floored: detection.rss_floored || selection.rss_floored,
            rank_deficient: selection.rank_deficient,
            outer_iterations: pass,
            step1_breaks: detection.pattern.total_breaks(),
            timings,
        };
        weights = Some(refined_weights(&selection.b_hat, config));
        best = Some(IflFit {
            b_hat: selection.b_hat,
            breaks,
            map,
            gamma_hat,
            support,
            lambda_break: detection.lambda,
            lambda_select: selection.lambda,
            outer_iterations: pass,
            diagnostics,
        });
        if unchanged {
            break;
        }
    }
    let mut fit = best.expect("max_outer >= 1");
    fit.diagnostics.timings.total = start.elapsed().as_secs_f64();
    Ok(fit)
}
