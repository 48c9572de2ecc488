//! Rolling backtests on a return series and the portfolio performance measures.
//!
//! The series is cut into consecutive estimation windows. The weights chosen
//! at the end of window `i` are held over window `i + 1`; the last weights are
//! held over whatever remains of the series after the final window.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::stats::{PooledMoments, ReturnsBlock, SampleFit, WeightVector};
use crate::strategy::{PeriodFits, Strategy, StrategyRunner};

pub use crate::strategy::one_period_shrinkage;

pub const REPORT_FORMAT: &str = "gmv-shrink-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RebalanceSchedule {
    windows: Vec<usize>,
}

impl RebalanceSchedule {
    pub fn new(windows: Vec<usize>) -> Result<Self> {
        if windows.is_empty() || windows.contains(&0) {
            return Err(Error::Config("windows must be non-empty and positive".into()));
        }
        Ok(Self { windows })
    }

    /// `periods` windows of `n` observations each.
    pub fn uniform(n: usize, periods: usize) -> Result<Self> {
        Self::new(vec![n; periods])
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    pub fn periods(&self) -> usize {
        self.windows.len()
    }

    pub fn total(&self) -> usize {
        self.windows.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accounting {
    /// Each day's return is `wᵀy_t` with the recorded weights.
    #[default]
    Fixed,
    /// Holdings drift with prices between rebalances.
    Drift,
}

impl Accounting {
    pub fn name(self) -> &'static str {
        match self {
            Accounting::Fixed => "fixed",
            Accounting::Drift => "drift",
        }
    }
}

impl std::str::FromStr for Accounting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Accounting::Fixed),
            "drift" => Ok(Accounting::Drift),
            _ => Err(Error::Config(format!("unknown accounting mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    Strategy(Strategy),
    /// Precomputed weights, one vector per period.
    External(&'a [WeightVector]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub mean_abs_weight: f64,
    pub max_weight: f64,
    pub min_weight: f64,
    pub sum_negative: f64,
    pub frac_negative: f64,
}

/// Averages over periods (and assets where applicable) of the weight history.
pub fn performance_measures(history: &[WeightVector]) -> Result<WeightStats> {
    let Some(first) = history.first() else {
        return Err(Error::Config("empty weight history".into()));
    };
    let p = first.len();
    let t = history.len() as f64;
    let mut stats = WeightStats {
        mean_abs_weight: 0.0,
        max_weight: 0.0,
        min_weight: 0.0,
        sum_negative: 0.0,
        frac_negative: 0.0,
    };
    let mut negatives = 0usize;
    for w in history {
        if w.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: w.len(),
            });
        }
        let s = w.as_slice();
        stats.mean_abs_weight += s.iter().map(|x| x.abs()).sum::<f64>();
        stats.max_weight += s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        stats.min_weight += s.iter().copied().fold(f64::INFINITY, f64::min);
        stats.sum_negative += s.iter().filter(|&&x| x < 0.0).sum::<f64>();
        negatives += s.iter().filter(|&&x| x < 0.0).count();
    }
    let tp = t * p as f64;
    stats.mean_abs_weight /= tp;
    stats.max_weight /= t;
    stats.min_weight /= t;
    stats.sum_negative /= t;
    stats.frac_negative = negatives as f64 / tp;
    Ok(stats)
}

/// `(1/T) Σ ‖w_i − w_{i−1}‖₁` with `w_0 = initial`.
pub fn turnover(history: &[WeightVector], initial: &WeightVector) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::Config("empty weight history".into()));
    }
    let mut prev = initial;
    let mut total = 0.0;
    for w in history {
        if w.len() != prev.len() {
            return Err(Error::DimensionMismatch {
                expected: prev.len(),
                found: w.len(),
            });
        }
        total += w.l1_distance(prev);
        prev = w;
    }
    Ok(total / history.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wealth {
    /// Starts at 1; ends early at the first non-positive value on ruin.
    pub path: Vec<f64>,
    pub worst_daily_change: f64,
    pub ruined: bool,
}

pub fn wealth_and_drawdown(returns: &[f64]) -> Result<Wealth> {
    let mut path = Vec::with_capacity(returns.len() + 1);
    path.push(1.0);
    let mut worst = 0.0f64;
    let mut ruined = false;
    let mut wealth = 1.0;
    for (t, &r) in returns.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::NonFinite { row: 0, col: t });
        }
        let next = wealth * (1.0 + r);
        worst = worst.min(next - wealth);
        path.push(next);
        wealth = next;
        if next <= 0.0 {
            ruined = true;
            break;
        }
    }
    if returns.is_empty() {
        worst = 0.0;
    }
    Ok(Wealth {
        path,
        worst_daily_change: worst,
        ruined,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfReport {
    pub strategy: String,
    pub accounting: Accounting,
    pub asset_count: usize,
    pub periods: usize,
    pub weights: WeightStats,
    pub turnover: f64,
    pub mean_return: f64,
    pub variance: f64,
    pub volatility: f64,
    pub sharpe: f64,
    /// False when volatility is zero; `sharpe` is then reported as 0.
    pub sharpe_defined: bool,
    pub wealth: Wealth,
}

impl PerfReport {
    /// Versioned `key=value` document, one entry per line. `extra` entries
    /// are written first, after the format header.
    pub fn to_kv(&self, extra: &[(String, String)]) -> String {
        let fields = [
            ("strategy", self.strategy.clone()),
            ("accounting", self.accounting.name().to_string()),
            ("assets", self.asset_count.to_string()),
            ("periods", self.periods.to_string()),
            ("mean_abs_weight", self.weights.mean_abs_weight.to_string()),
            ("max_weight", self.weights.max_weight.to_string()),
            ("min_weight", self.weights.min_weight.to_string()),
            ("sum_negative", self.weights.sum_negative.to_string()),
            ("frac_negative", self.weights.frac_negative.to_string()),
            ("turnover", self.turnover.to_string()),
            ("mean_return", self.mean_return.to_string()),
            ("variance", self.variance.to_string()),
            ("volatility", self.volatility.to_string()),
            ("sharpe", self.sharpe.to_string()),
            ("sharpe_defined", self.sharpe_defined.to_string()),
            ("days", (self.wealth.path.len() - 1).to_string()),
            ("final_wealth", self.wealth.path.last().copied().unwrap_or(1.0).to_string()),
            ("worst_daily_change", self.wealth.worst_daily_change.to_string()),
            ("ruined", self.wealth.ruined.to_string()),
        ];
        let mut s = String::new();
        let _ = writeln!(s, "format={REPORT_FORMAT}");
        let _ = writeln!(s, "version={REPORT_VERSION}");
        // Report fields win over caller-supplied keys of the same name.
        for (k, v) in extra.iter().filter(|(k, _)| !fields.iter().any(|(f, _)| f == k)) {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in &fields {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Writes `day,wealth` rows, day 0 being the start.
    pub fn write_wealth_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["day", "wealth"]).map_err(io)?;
        for (t, v) in self.wealth.path.iter().enumerate() {
            w.write_record([t.to_string(), v.to_string()]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    /// Weights chosen at the end of each window.
    pub weights: Vec<WeightVector>,
    /// Daily portfolio returns over the holding span.
    pub daily_returns: Vec<f64>,
    pub report: PerfReport,
}

fn check_series(series: &ReturnsBlock, schedule: &RebalanceSchedule, target: &WeightVector) -> Result<()> {
    if target.len() != series.asset_count() {
        return Err(Error::DimensionMismatch {
            expected: series.asset_count(),
            found: target.len(),
        });
    }
    if series.obs_count() < schedule.total() {
        return Err(Error::InsufficientSample {
            p: series.asset_count(),
            n: series.obs_count(),
        });
    }
    Ok(())
}

/// Weights chosen by `strategy` at the end of every scheduled window.
pub fn strategy_weights(
    series: &ReturnsBlock,
    strategy: Strategy,
    schedule: &RebalanceSchedule,
    target: &WeightVector,
) -> Result<Vec<WeightVector>> {
    check_series(series, schedule, target)?;
    let p = series.asset_count();
    let mut runner = StrategyRunner::new(strategy, target)?;
    let mut pooled = PooledMoments::new(p);
    let mut history = Vec::with_capacity(schedule.periods());
    let mut start = 0;
    for &n in schedule.windows() {
        let block = series.window(start, n)?;
        start += n;
        let block_fit = strategy.uses_block().then(|| {
            if n <= p + 1 {
                Err(Error::InsufficientSample { p, n })
            } else {
                SampleFit::from_block(&block)
            }
        });
        let pooled_fit = if strategy.uses_pooled() {
            pooled.push_block(&block)?;
            Some(if pooled.count() <= p + 1 {
                Err(Error::InsufficientSample { p, n: pooled.count() })
            } else {
                pooled.fit()
            })
        } else {
            None
        };
        let fits = PeriodFits {
            block: block_fit.as_ref(),
            pooled: pooled_fit.as_ref(),
        };
        history.push(runner.step(&fits)?.clone());
    }
    Ok(history)
}

fn holding_returns(series: &ReturnsBlock, schedule: &RebalanceSchedule, history: &[WeightVector], accounting: Accounting) -> Vec<f64> {
    let y = series.values();
    let total = series.obs_count();
    let mut ends: Vec<usize> = schedule
        .windows()
        .iter()
        .scan(0, |acc, &n| {
            *acc += n;
            Some(*acc)
        })
        .collect();
    ends.push(total);
    let mut out = Vec::with_capacity(total.saturating_sub(ends[0]));
    for (i, w) in history.iter().enumerate() {
        let (from, to) = (ends[i], ends[i + 1].max(ends[i]));
        let w = w.as_vector();
        match accounting {
            Accounting::Fixed => {
                for t in from..to {
                    out.push(w.dot(&y.column(t)));
                }
            }
            Accounting::Drift => {
                let mut h = w.clone();
                for t in from..to {
                    let value: f64 = h.sum();
                    let gain = h.dot(&y.column(t));
                    out.push(if value > 0.0 { gain / value } else { -1.0 });
                    for j in 0..h.len() {
                        h[j] *= 1.0 + y[(j, t)];
                    }
                }
            }
        }
    }
    out
}

pub fn run_backtest(
    series: &ReturnsBlock,
    source: WeightSource<'_>,
    schedule: &RebalanceSchedule,
    target: &WeightVector,
    accounting: Accounting,
) -> Result<BacktestResult> {
    check_series(series, schedule, target)?;
    let (weights, label) = match source {
        WeightSource::Strategy(s) => (strategy_weights(series, s, schedule, target)?, s.to_string()),
        WeightSource::External(ws) => {
            if ws.len() != schedule.periods() {
                return Err(Error::Config(format!(
                    "external weights have {} periods, schedule has {}",
                    ws.len(),
                    schedule.periods()
                )));
            }
            if let Some(w) = ws.iter().find(|w| w.len() != series.asset_count()) {
                return Err(Error::DimensionMismatch {
                    expected: series.asset_count(),
                    found: w.len(),
                });
            }
            (ws.to_vec(), "external".to_string())
        }
    };
    let daily = holding_returns(series, schedule, &weights, accounting);
    let (mean_return, variance) = moments(&daily);
    let volatility = variance.sqrt();
    let sharpe_defined = volatility > 0.0;
    let report = PerfReport {
        strategy: label,
        accounting,
        asset_count: series.asset_count(),
        periods: schedule.periods(),
        weights: performance_measures(&weights)?,
        turnover: turnover(&weights, target)?,
        mean_return,
        variance,
        volatility,
        sharpe: if sharpe_defined { mean_return / volatility } else { 0.0 },
        sharpe_defined,
        wealth: wealth_and_drawdown(&daily)?,
    };
    Ok(BacktestResult {
        weights,
        daily_returns: daily,
        report,
    })
}

/// Mean and unbiased variance; zero variance for fewer than two values.
fn moments(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
