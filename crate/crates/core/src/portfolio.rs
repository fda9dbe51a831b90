//! Share-holdings estimation for a fund from asset and fund prices.
//!
//! With `N_{i,t}` shares held over the period ending at `t`, the fund value
//! is `Q_t = Σ_i N_{i,t} P_{i,t}`, so the gross fund return satisfies
//!
//! ```text
//! Q_t / Q_{t−1} = Σ_i N_{i,t} · P_{i,t} / Q_{t−1}
//! ```
//!
//! which is a dynamic regression whose coefficients are the share counts.
//! Rebalancing shows up as structural breaks.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{IflError, Result};
use crate::ifl::{fit_ifl, IflConfig, IflFit};
use crate::panel::{CoefficientMatrix, RegressionPanel};

/// Asset prices and fund value on `T + 1` dates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    dates: Vec<NaiveDate>,
    prices: Vec<Vec<f64>>,
    fund_value: Vec<f64>,
}

impl PriceTable {
    /// `prices[s][i]` is asset `i` on `dates[s]`.
    pub fn new(dates: Vec<NaiveDate>, prices: Vec<Vec<f64>>, fund_value: Vec<f64>) -> Result<Self> {
        let rows = dates.len();
        if rows < 3 {
            return Err(IflError::InvalidData(format!(
                "a price table needs at least 3 dates, got {rows}"
            )));
        }
        if prices.len() != rows || fund_value.len() != rows {
            return Err(IflError::shape(
                format!("{rows} price rows and fund values"),
                format!("{} and {}", prices.len(), fund_value.len()),
            ));
        }
        let k = prices[0].len();
        if k == 0 {
            return Err(IflError::InvalidData("no asset columns".into()));
        }
        if let Some(w) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(IflError::InvalidData(format!(
                "dates must be strictly increasing: {} then {}",
                dates[w],
                dates[w + 1]
            )));
        }
        for (s, row) in prices.iter().enumerate() {
            if row.len() != k {
                return Err(IflError::shape(
                    format!("{k} assets"),
                    format!("{} on {}", row.len(), dates[s]),
                ));
            }
            if let Some(i) = row.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(IflError::InvalidData(format!(
                    "price of asset {} on {} must be positive, got {}",
                    i + 1,
                    dates[s],
                    row[i]
                )));
            }
        }
        if let Some(s) = fund_value.iter().position(|q| !(q.is_finite() && *q > 0.0)) {
            return Err(IflError::InvalidData(format!(
                "fund value on {} must be positive, got {}",
                dates[s], fund_value[s]
            )));
        }
        Ok(Self {
            dates,
            prices,
            fund_value,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn fund_value(&self) -> &[f64] {
        &self.fund_value
    }

    pub fn n_assets(&self) -> usize {
        self.prices[0].len()
    }

    /// Number of return periods, one less than the number of dates.
    pub fn n_periods(&self) -> usize {
        self.dates.len() - 1
    }

    /// Date closing return period `t` (zero-based).
    pub fn period_date(&self, t: usize) -> NaiveDate {
        self.dates[t + 1]
    }
}

/// `y_t = Q_t / Q_{t−1}` and `x_{t,i} = P_{i,t} / Q_{t−1}` for each period.
pub fn returns_panel(table: &PriceTable) -> Result<RegressionPanel> {
    let q = &table.fund_value;
    let rows: Vec<Vec<f64>> = (1..q.len())
        .map(|s| table.prices[s].iter().map(|p| p / q[s - 1]).collect())
        .collect();
    let y: Vec<f64> = (1..q.len()).map(|s| q[s] / q[s - 1]).collect();
    RegressionPanel::from_rows(y, &rows)
}

/// A detected change of holdings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rebalancing {
    pub date: NaiveDate,
    /// Zero-based return period at which the new holdings apply.
    pub period: usize,
    /// Zero-based assets whose share count changes.
    pub assets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldingsEstimate {
    pub fit: IflFit,
    /// Estimated shares, `T × K`; identical to the fit's `b_hat`.
    pub n_hat: CoefficientMatrix,
    pub rebalancing: Vec<Rebalancing>,
    /// Dates closing each return period.
    pub dates: Vec<NaiveDate>,
}

pub fn estimate_holdings(table: &PriceTable, config: &IflConfig) -> Result<HoldingsEstimate> {
    let panel = returns_panel(table)?;
    let fit = fit_ifl(&panel, config)?;
    let mut by_period: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for b in fit.breaks.list() {
        by_period.entry(b.time).or_default().push(b.component);
    }
    let rebalancing = by_period
        .into_iter()
        .map(|(period, assets)| Rebalancing {
            date: table.period_date(period),
            period,
            assets,
        })
        .collect();
    Ok(HoldingsEstimate {
        n_hat: fit.b_hat.clone(),
        fit,
        rebalancing,
        dates: table.dates[1..].to_vec(),
    })
}

/// Knobs for [`synth_portfolio`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Mean log return per period.
    pub drift: f64,
    /// Standard deviation of the log return per period.
    pub volatility: f64,
    /// Standard deviation of additive noise on the gross fund return.
    pub observation_noise: f64,
    pub initial_price_low: f64,
    pub initial_price_high: f64,
    pub initial_value: f64,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            drift: 2e-4,
            volatility: 0.02,
            observation_noise: 0.0,
            initial_price_low: 10.0,
            initial_price_high: 100.0,
            initial_value: 1000.0,
            start_date: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
        }
    }
}

/// A generated table with the holdings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPortfolio {
    pub table: PriceTable,
    /// True shares per return period, `T × K`.
    pub holdings: CoefficientMatrix,
    /// Periods at which a new regime starts.
    pub break_times: Vec<usize>,
    /// Cash held in each regime, at zero return.
    pub cash: Vec<f64>,
}

impl SynthPortfolio {
    pub fn break_dates(&self) -> Vec<NaiveDate> {
        self.break_times
            .iter()
            .map(|&t| self.table.period_date(t))
            .collect()
    }
}

/// The next `n` weekdays starting at `start` (inclusive if it is one).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Simulates `K` geometric random walks over `T` periods and a fund that,
/// at the start of each regime, puts value fraction `regime_weights[r][i]`
/// into asset `i` at the prevailing prices and keeps the rest in cash.
///
/// Regime `r + 1` starts at period `break_times[r]`; its shares are bought
/// with the fund value at the previous close.
pub fn synth_portfolio(
    n_assets: usize,
    n_periods: usize,
    regime_weights: &[Vec<f64>],
    break_times: &[usize],
    seed: u64,
    config: &SynthConfig,
) -> Result<SynthPortfolio> {
    if n_assets == 0 || n_periods < 2 {
        return Err(IflError::InvalidArgument(format!(
            "need at least one asset and two periods, got {n_assets} and {n_periods}"
        )));
    }
    if regime_weights.len() != break_times.len() + 1 {
        return Err(IflError::InvalidArgument(format!(
            "{} break times need {} weight vectors, got {}",
            break_times.len(),
            break_times.len() + 1,
            regime_weights.len()
        )));
    }
    for w in regime_weights {
        if w.len() > n_assets
            || w.iter().any(|v| !(*v >= 0.0))
            || w.iter().sum::<f64>() > 1.0 + 1e-12
        {
            return Err(IflError::InvalidArgument(format!(
                "weights must be nonnegative, at most {n_assets} long and sum to at most 1: {w:?}"
            )));
        }
    }
    if break_times.iter().any(|&b| b == 0 || b >= n_periods)
        || break_times.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(IflError::InvalidArgument(format!(
            "break times must be strictly increasing within 1..{n_periods}: {break_times:?}"
        )));
    }
    if !(config.volatility >= 0.0 && config.observation_noise >= 0.0 && config.initial_value > 0.0)
        || !(config.initial_price_low > 0.0
            && config.initial_price_low <= config.initial_price_high)
    {
        return Err(IflError::InvalidArgument(
            "invalid synthetic price configuration".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Uniform::new_inclusive(config.initial_price_low, config.initial_price_high)
        .map_err(|e| IflError::InvalidArgument(e.to_string()))?;
    let mut prices = vec![(0..n_assets)
        .map(|_| start.sample(&mut rng))
        .collect::<Vec<f64>>()];
    let step_mean = config.drift - 0.5 * config.volatility * config.volatility;
    for s in 1..=n_periods {
        let row = prices[s - 1]
            .iter()
            .map(|p| {
                let z: f64 = StandardNormal.sample(&mut rng);
                p * (step_mean + config.volatility * z).exp()
            })
            .collect();
        prices.push(row);
    }

    let mut holdings = CoefficientMatrix::zeros(n_periods, n_assets);
    let mut fund = vec![config.initial_value];
    let mut cash = Vec::with_capacity(regime_weights.len());
    let mut shares = vec![0.0; n_assets];
    // Index of the regime in force; `break_times[regime]` starts the next one.
    let mut regime = 0;
    let mut current_cash = 0.0;
    for t in 0..n_periods {
        let starts_regime = t == 0 || break_times.get(regime) == Some(&t);
        if starts_regime {
            if t != 0 {
                regime += 1;
            }
            let w = &regime_weights[regime];
            let value = fund[t];
            shares = (0..n_assets)
                .map(|i| w.get(i).map_or(0.0, |wi| wi * value / prices[t][i]))
                .collect();
            current_cash = value * (1.0 - w.iter().sum::<f64>());
            cash.push(current_cash);
        }
        for (i, &n) in shares.iter().enumerate() {
            holdings.set(t, i, n);
        }
        let held: f64 = shares.iter().zip(&prices[t + 1]).map(|(n, p)| n * p).sum();
        let mut q = held + current_cash;
        if config.observation_noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            q += config.observation_noise * z * fund[t];
        }
        if !(q > 0.0) {
            return Err(IflError::InvalidData(format!(
                "fund value fell to {q} at period {t}"
            )));
        }
        fund.push(q);
    }

    let dates = business_days(config.start_date, n_periods + 1);
    Ok(SynthPortfolio {
        table: PriceTable::new(dates, prices, fund)?,
        holdings,
        break_times: break_times.to_vec(),
        cash,
    })
}

/// [`synth_portfolio`] with default knobs, returning only the table.
pub fn synth_price_table(
    n_assets: usize,
    n_periods: usize,
    regime_weights: &[Vec<f64>],
    break_times: &[usize],
    seed: u64,
) -> Result<PriceTable> {
    synth_portfolio(
        n_assets,
        n_periods,
        regime_weights,
        break_times,
        seed,
        &SynthConfig::default(),
    )
    .map(|s| s.table)
}

/// Twenty assets; the fund holds (25%, 25%, 50%) of the first three, then
/// switches to (75%, 0%, 25%) after `per_regime` periods.
pub fn reference_shape(
    per_regime: usize,
    seed: u64,
    config: &SynthConfig,
) -> Result<SynthPortfolio> {
    let weights = vec![vec![0.25, 0.25, 0.50], vec![0.75, 0.0, 0.25]];
    synth_portfolio(20, 2 * per_regime, &weights, &[per_regime], seed, config)
}

/// Observations per regime in the default reference-shaped instance.
pub const REFERENCE_PERIODS_PER_REGIME: usize = 758;
