//! Monte Carlo engine: regime-wise piecewise-constant scenarios, the oracle
//! estimator, per-replication scoring and order-invariant aggregation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{fit_genlasso_default, GenLassoConfig};
use crate::error::{IflError, Result};
use crate::ifl::{fit_ifl, BreakPattern, IflConfig};
use crate::panel::{CoefficientMatrix, RegressionPanel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub p: usize,
    pub q: usize,
    pub n_regimes: usize,
    pub n_per_regime: usize,
    pub noise_sd: f64,
    pub coef_low: f64,
    pub coef_high: f64,
    pub base_seed: u64,
}

impl ScenarioSpec {
    /// Default DGP: four regimes, coefficients ±U[1, 2], noise sd 0.5.
    pub fn new(n_per_regime: usize, p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            n_regimes: 4,
            n_per_regime,
            noise_sd: 0.5,
            coef_low: 1.0,
            coef_high: 2.0,
            base_seed: 0,
        }
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn with_seed(mut self, base_seed: u64) -> Self {
        self.base_seed = base_seed;
        self
    }

    pub fn n_obs(&self) -> usize {
        self.n_regimes * self.n_per_regime
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(IflError::InvalidArgument(msg));
        if self.p == 0 || self.q > self.p {
            return fail(format!(
                "need 1 <= p and q <= p, got p = {}, q = {}",
                self.p, self.q
            ));
        }
        if self.n_regimes == 0 || self.n_per_regime < 2 {
            return fail(format!(
                "need at least one regime of two observations, got R = {}, n/R = {}",
                self.n_regimes, self.n_per_regime
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return fail(format!(
                "noise_sd must be finite and nonnegative, got {}",
                self.noise_sd
            ));
        }
        if !(0.0 <= self.coef_low && self.coef_low <= self.coef_high && self.coef_high.is_finite())
        {
            return fail(format!(
                "coefficient range [{}, {}] is not a valid magnitude interval",
                self.coef_low, self.coef_high
            ));
        }
        Ok(())
    }

    /// Scenarios n/R ∈ {30, 50} × p ∈ {20, 30, 40} × q ∈ {2, 5, 10}.
    pub fn standard_grid(base_seed: u64) -> Vec<Self> {
        let mut out = Vec::with_capacity(18);
        for n_per_regime in [30, 50] {
            for q in [2, 5, 10] {
                for p in [20, 30, 40] {
                    out.push(Self::new(n_per_regime, p, q).with_seed(base_seed));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    pub panel: RegressionPanel,
    pub true_b: CoefficientMatrix,
    pub true_breaks: BreakPattern,
    /// Sorted relevant components, one set per regime.
    pub true_support: Vec<Vec<usize>>,
    pub n_per_regime: usize,
}

impl GeneratedInstance {
    pub fn regime_times(&self, r: usize) -> std::ops::Range<usize> {
        r * self.n_per_regime..(r + 1) * self.n_per_regime
    }

    pub fn n_regimes(&self) -> usize {
        self.true_support.len()
    }
}

/// Stream `replication` of the ChaCha generator keyed by `base_seed`.
pub fn replication_rng(base_seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replication);
    rng
}

pub fn generate_instance(spec: &ScenarioSpec, replication: usize) -> Result<GeneratedInstance> {
    spec.validate()?;
    let mut rng = replication_rng(spec.base_seed, replication as u64);
    let (n, p) = (spec.n_obs(), spec.p);

    let mut x = vec![0.0; n * p];
    for t in 0..n {
        for j in 0..p {
            x[j * n + t] = StandardNormal.sample(&mut rng);
        }
    }

    let mut true_b = CoefficientMatrix::zeros(n, p);
    let mut true_support = Vec::with_capacity(spec.n_regimes);
    for r in 0..spec.n_regimes {
        let mut chosen = sample(&mut rng, p, spec.q).into_vec();
        chosen.sort_unstable();
        for &j in &chosen {
            let magnitude = if spec.coef_high > spec.coef_low {
                rng.random_range(spec.coef_low..=spec.coef_high)
            } else {
                spec.coef_low
            };
            let value = if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            };
            for t in r * spec.n_per_regime..(r + 1) * spec.n_per_regime {
                true_b.set(t, j, value);
            }
        }
        true_support.push(chosen);
    }

    let noise =
        Normal::new(0.0, spec.noise_sd).map_err(|e| IflError::InvalidArgument(e.to_string()))?;
    let mut y = vec![0.0; n];
    for (t, yt) in y.iter_mut().enumerate() {
        let signal: f64 = (0..p).map(|j| x[j * n + t] * true_b.get(t, j)).sum();
        let e = if spec.noise_sd > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        *yt = signal + e;
    }

    let true_breaks = BreakPattern::from_coefficients(&true_b);
    Ok(GeneratedInstance {
        panel: RegressionPanel::from_columns(y, x, p)?,
        true_b,
        true_breaks,
        true_support,
        n_per_regime: spec.n_per_regime,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub b_hat: CoefficientMatrix,
    /// Some regime design was singular and solved in minimum norm.
    pub rank_deficient: bool,
}

/// Per-regime OLS on the true support.
pub fn oracle_fit(instance: &GeneratedInstance) -> OracleFit {
    let panel = &instance.panel;
    let mut b_hat = CoefficientMatrix::zeros(panel.n_obs(), panel.n_features());
    let mut rank_deficient = false;
    for (r, support) in instance.true_support.iter().enumerate() {
        if support.is_empty() {
            continue;
        }
        let times = instance.regime_times(r);
        let a = DMatrix::from_fn(times.len(), support.len(), |i, k| {
            panel.x(times.start + i, support[k])
        });
        let y = DVector::from_iterator(times.len(), times.clone().map(|t| panel.y()[t]));
        let svd = a.svd(true, true);
        let max_sv = svd.singular_values.max();
        let eps = max_sv * f64::EPSILON * times.len().max(support.len()) as f64;
        if svd.rank(eps) < support.len() {
            rank_deficient = true;
        }
        let coef = svd.solve(&y, eps).expect("both factors computed");
        for (k, &j) in support.iter().enumerate() {
            for t in times.clone() {
                b_hat.set(t, j, coef[k]);
            }
        }
    }
    OracleFit {
        b_hat,
        rank_deficient,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean of `|β̂ − β|` over all cells.
    pub bias: f64,
    pub signed_bias: f64,
    pub mse: f64,
    pub break_precision: f64,
    pub break_recall: f64,
    pub exact_breaks: bool,
    pub support_precision: f64,
    pub support_recall: f64,
}

fn ratio(hits: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// Breaks are read off the estimate (exact changes); support is scored over
/// (regime, component) pairs, a component counting as selected in a regime
/// when it is nonzero anywhere in it.
pub fn score(estimate: &CoefficientMatrix, instance: &GeneratedInstance) -> Result<Metrics> {
    let truth = &instance.true_b;
    if estimate.n_obs() != truth.n_obs() || estimate.n_features() != truth.n_features() {
        return Err(IflError::shape(
            format!("{} × {}", truth.n_obs(), truth.n_features()),
            format!("{} × {}", estimate.n_obs(), estimate.n_features()),
        ));
    }
    let cells = truth.as_vec().len() as f64;
    let (mut abs, mut signed, mut sq) = (0.0, 0.0, 0.0);
    for (e, b) in estimate.as_vec().iter().zip(truth.as_vec()) {
        let d = e - b;
        abs += d.abs();
        signed += d;
        sq += d * d;
    }

    let declared: BTreeSet<_> = BreakPattern::from_coefficients(estimate)
        .list()
        .into_iter()
        .collect();
    let actual: BTreeSet<_> = instance.true_breaks.list().into_iter().collect();
    let hits = declared.intersection(&actual).count();

    let (mut selected, mut relevant, mut both) = (0, 0, 0);
    for (r, support) in instance.true_support.iter().enumerate() {
        let times = instance.regime_times(r);
        for j in 0..truth.n_features() {
            let chosen = times.clone().any(|t| estimate.get(t, j) != 0.0);
            let true_j = support.binary_search(&j).is_ok();
            selected += chosen as usize;
            relevant += true_j as usize;
            both += (chosen && true_j) as usize;
        }
    }

    Ok(Metrics {
        bias: abs / cells,
        signed_bias: signed / cells,
        mse: sq / cells,
        break_precision: ratio(hits, declared.len()),
        break_recall: ratio(hits, actual.len()),
        exact_breaks: declared == actual,
        support_precision: ratio(both, selected),
        support_recall: ratio(both, relevant),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ifl,
    Genlasso,
    Oracle,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Ifl, Estimator::Genlasso, Estimator::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ifl => "ifl",
            Estimator::Genlasso => "genlasso",
            Estimator::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = IflError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ifl" => Ok(Estimator::Ifl),
            "genlasso" => Ok(Estimator::Genlasso),
            "oracle" => Ok(Estimator::Oracle),
            other => Err(IflError::InvalidArgument(format!(
                "unknown estimator '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub ifl: IflConfig,
    pub genlasso: GenLassoConfig,
}

/// Outcome of one estimator on one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: usize,
    pub replication: usize,
    pub estimator: Estimator,
    pub metrics: Option<Metrics>,
    pub converged: bool,
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: usize,
    pub estimator: Estimator,
    pub n_success: usize,
    pub n_failed: usize,
    pub n_nonconverged: usize,
    pub bias: f64,
    pub signed_bias: f64,
    pub mse: f64,
    pub break_precision: f64,
    pub break_recall: f64,
    pub exact_break_rate: f64,
    pub support_precision: f64,
    pub support_recall: f64,
    pub mean_wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenarios: Vec<ScenarioSpec>,
    pub n_reps: usize,
    pub estimators: Vec<Estimator>,
    pub records: Vec<ReplicationRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Mean IFL wall time over mean genLASSO wall time, per scenario.
    pub runtime_ratio: Vec<Option<f64>>,
}

fn aggregate(scenario: usize, estimator: Estimator, records: &[&ReplicationRecord]) -> Aggregate {
    let ok: Vec<&Metrics> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let mean = |f: &dyn Fn(&Metrics) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
        }
    };
    let timed: Vec<f64> = records
        .iter()
        .filter(|r| r.metrics.is_some())
        .map(|r| r.wall_time)
        .collect();
    Aggregate {
        scenario,
        estimator,
        n_success: ok.len(),
        n_failed: records.len() - ok.len(),
        n_nonconverged: records
            .iter()
            .filter(|r| r.metrics.is_some() && !r.converged)
            .count(),
        bias: mean(&|m| m.bias),
        signed_bias: mean(&|m| m.signed_bias),
        mse: mean(&|m| m.mse),
        break_precision: mean(&|m| m.break_precision),
        break_recall: mean(&|m| m.break_recall),
        exact_break_rate: mean(&|m| m.exact_breaks as u8 as f64),
        support_precision: mean(&|m| m.support_precision),
        support_recall: mean(&|m| m.support_recall),
        mean_wall_time: if timed.is_empty() {
            f64::NAN
        } else {
            timed.iter().sum::<f64>() / timed.len() as f64
        },
    }
}

impl MonteCarloReport {
    /// Rebuilds aggregates and runtime ratios from the stored records.
    pub fn recompute(&mut self) {
        let mut aggregates = Vec::with_capacity(self.scenarios.len() * self.estimators.len());
        let mut ratios = Vec::with_capacity(self.scenarios.len());
        for s in 0..self.scenarios.len() {
            for &e in &self.estimators {
                let mut rs: Vec<&ReplicationRecord> = self
                    .records
                    .iter()
                    .filter(|r| r.scenario == s && r.estimator == e)
                    .collect();
                rs.sort_by_key(|r| r.replication);
                aggregates.push(aggregate(s, e, &rs));
            }
            let time_of = |e: Estimator| {
                aggregates
                    .iter()
                    .find(|a: &&Aggregate| a.scenario == s && a.estimator == e && a.n_success > 0)
                    .map(|a| a.mean_wall_time)
            };
            ratios.push(
                match (time_of(Estimator::Ifl), time_of(Estimator::Genlasso)) {
                    (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                    _ => None,
                },
            );
        }
        self.aggregates = aggregates;
        self.runtime_ratio = ratios;
    }

    pub fn aggregate(&self, scenario: usize, estimator: Estimator) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.scenario == scenario && a.estimator == estimator)
    }

    pub fn n_failed(&self) -> usize {
        self.records.iter().filter(|r| r.metrics.is_none()).count()
    }

    pub fn success_fraction(&self) -> f64 {
        ratio(self.records.len() - self.n_failed(), self.records.len())
    }

    /// Hash of everything except wall times, which differ between runs.
    pub fn fingerprint(&self) -> u64 {
        let mut copy = self.clone();
        for r in &mut copy.records {
            r.wall_time = 0.0;
        }
        copy.recompute();
        for a in &mut copy.aggregates {
            a.mean_wall_time = 0.0;
        }
        copy.runtime_ratio.clear();
        let json = serde_json::to_string(&copy).expect("report serializes");
        let mut h = std::collections::hash_map::DefaultHasher::new();
        json.hash(&mut h);
        h.finish()
    }

    /// One row per scenario: its shape, then bias and MSE per estimator.
    pub fn tables_csv(&self) -> String {
        let mut out = String::from("n_per_regime,p,q");
        for e in &self.estimators {
            let _ = write!(out, ",{0}_bias,{0}_mse", e.name());
        }
        out.push('\n');
        for (s, spec) in self.scenarios.iter().enumerate() {
            let _ = write!(out, "{},{},{}", spec.n_per_regime, spec.p, spec.q);
            for &e in &self.estimators {
                let a = self
                    .aggregate(s, e)
                    .expect("aggregate per scenario and estimator");
                let _ = write!(out, ",{:.6},{:.6}", a.bias, a.mse);
            }
            out.push('\n');
        }
        out
    }

    /// Per-replication biases for histogram plots.
    pub fn bias_hist_csv(&self) -> String {
        let mut out = String::from("scenario,n_per_regime,p,q,replication,estimator,bias,mse\n");
        let mut rows: Vec<&ReplicationRecord> = self
            .records
            .iter()
            .filter(|r| r.metrics.is_some())
            .collect();
        rows.sort_by_key(|r| (r.scenario, r.estimator, r.replication));
        for r in rows {
            let spec = &self.scenarios[r.scenario];
            let m = r.metrics.as_ref().expect("filtered");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.scenario + 1,
                spec.n_per_regime,
                spec.p,
                spec.q,
                r.replication + 1,
                r.estimator.name(),
                m.bias,
                m.mse
            );
        }
        out
    }

    /// Writes `report.json`, `tables.csv` and `bias_hist.csv` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("tables.csv"), self.tables_csv())?;
        std::fs::write(dir.join("bias_hist.csv"), self.bias_hist_csv())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Fits one estimator and scores it, returning `(metrics, converged)`.
pub fn run_estimator(
    estimator: Estimator,
    instance: &GeneratedInstance,
    config: &EstimatorConfig,
) -> Result<(Metrics, bool)> {
    let (estimate, converged) = match estimator {
        Estimator::Ifl => {
            let fit = fit_ifl(&instance.panel, &config.ifl)?;
            (fit.b_hat, fit.diagnostics.converged)
        }
        Estimator::Genlasso => {
            let path = fit_genlasso_default(&instance.panel, &config.genlasso)?;
            let converged = path.converged[path.chosen];
            (
                path.chosen_b(instance.panel.n_obs(), instance.panel.n_features()),
                converged,
            )
        }
        Estimator::Oracle => (oracle_fit(instance).b_hat, true),
    };
    Ok((score(&estimate, instance)?, converged))
}

fn run_replication(
    scenario: usize,
    spec: &ScenarioSpec,
    replication: usize,
    estimators: &[Estimator],
    config: &EstimatorConfig,
) -> Vec<ReplicationRecord> {
    let failed = |estimator, error: String| ReplicationRecord {
        scenario,
        replication,
        estimator,
        metrics: None,
        converged: false,
        wall_time: 0.0,
        error: Some(error),
    };
    let instance = match generate_instance(spec, replication) {
        Ok(i) => i,
        Err(e) => {
            return estimators
                .iter()
                .map(|&est| failed(est, e.to_string()))
                .collect()
        }
    };
    estimators
        .iter()
        .map(|&estimator| {
            let start = Instant::now();
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                run_estimator(estimator, &instance, config)
            }));
            let wall_time = start.elapsed().as_secs_f64();
            match outcome {
                Ok(Ok((metrics, converged))) => ReplicationRecord {
                    scenario,
                    replication,
                    estimator,
                    metrics: Some(metrics),
                    converged,
                    wall_time,
                    error: None,
                },
                Ok(Err(e)) => failed(estimator, e.to_string()),
                Err(payload) => failed(estimator, panic_message(payload)),
            }
        })
        .collect()
}

/// Every (scenario, replication) pair runs as an independent job on the
/// current rayon pool; records come back in job order regardless of
/// scheduling, so the report is identical for any thread count.
pub fn run_monte_carlo(
    specs: &[ScenarioSpec],
    n_reps: usize,
    estimators: &[Estimator],
    config: &EstimatorConfig,
) -> Result<MonteCarloReport> {
    if n_reps == 0 {
        return Err(IflError::InvalidArgument(
            "n_reps must be at least 1".into(),
        ));
    }
    if estimators.is_empty() {
        return Err(IflError::InvalidArgument("no estimators requested".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    config.ifl.validate()?;
    let mut estimators = estimators.to_vec();
    estimators.sort_unstable();
    estimators.dedup();

    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..n_reps).map(move |r| (s, r)))
        .collect();
    let records: Vec<ReplicationRecord> = jobs
        .par_iter()
        .map(|&(s, r)| run_replication(s, &specs[s], r, &estimators, config))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut report = MonteCarloReport {
        scenarios: specs.to_vec(),
        n_reps,
        estimators,
        records,
        aggregates: Vec::new(),
        runtime_ratio: Vec::new(),
    };
    report.recompute();
    Ok(report)
}
