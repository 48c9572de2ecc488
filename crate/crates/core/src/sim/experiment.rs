use std::io::Write;

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::sim::{build_population_with, Generator, GeneratorOptions, Scenario};
use crate::stats::{sample_moments, LossEvaluator, PooledMoments, SampleFit, WeightVector};
use crate::strategy::{PeriodFits, Strategy, StrategyRunner};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub p: usize,
    /// Observations per block.
    pub n: usize,
    /// Number of rebalancing periods `T`.
    pub periods: usize,
    pub reps: usize,
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    pub generator: GeneratorOptions,
    /// Evaluate every scenario against `Σ` instead of the return covariance.
    pub literal_eval_cov: bool,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, p: usize, n: usize, periods: usize, reps: usize, seed: u64) -> Self {
        Self {
            scenario,
            p,
            n,
            periods,
            reps,
            seed,
            strategies: Strategy::ALL.to_vec(),
            generator: GeneratorOptions::default(),
            literal_eval_cov: false,
        }
    }

    pub fn with_strategies(self, strategies: &[Strategy]) -> Self {
        let mut s = strategies.to_vec();
        s.sort();
        s.dedup();
        Self { strategies: s, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.periods == 0 {
            return Err(Error::Config("reps and periods must be positive".into()));
        }
        if self.p < 5 {
            return Err(Error::Config(format!("p = {} must be at least 5", self.p)));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        let estimating = self.strategies.iter().any(|&s| s != Strategy::Target);
        if estimating && self.n <= self.p + 1 {
            return Err(Error::Config(format!(
                "n = {} must exceed p + 1 = {}",
                self.n,
                self.p + 1
            )));
        }
        Ok(())
    }

    pub fn concentration(&self) -> f64 {
        self.p as f64 / self.n as f64
    }
}

/// Losses of one replication: `losses[s][i]` for strategy `s` after period
/// `i + 1`, or `None` if the strategy failed numerically in this replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepLosses {
    pub losses: Vec<Option<Vec<f64>>>,
}

/// Runs replication `rep` of the experiment.
pub fn run_replication(config: &ScenarioConfig, rep: usize) -> Result<RepLosses> {
    let mut rng = stream_rng(config.seed, rep as u64);
    let p = config.p;
    let pop = build_population_with(p, &mut rng)?;
    let eval = LossEvaluator::new(&pop.eval_cov(config.scenario, config.literal_eval_cov)?)?;
    let mut generator = Generator::new(&pop, config.scenario, config.generator, &mut rng)?;
    let target = WeightVector::equal(p);

    let need_block = config.strategies.iter().any(|s| s.uses_block());
    let need_pooled = config.strategies.iter().any(|s| s.uses_pooled());
    let mut runners: Vec<Option<StrategyRunner>> = config
        .strategies
        .iter()
        .map(|&s| StrategyRunner::new(s, &target).ok())
        .collect();
    let mut losses: Vec<Vec<f64>> = vec![Vec::with_capacity(config.periods); runners.len()];
    let mut pooled = PooledMoments::new(p);

    for _ in 0..config.periods {
        let block = generator.next_block(config.n, &mut rng)?;
        let (block_fit, pooled_fit) = if need_block || need_pooled {
            let m = sample_moments(&block)?;
            let pooled_fit = if need_pooled {
                pooled.push_moments(block.obs_count(), &m.mean, &m.cov)?;
                Some(pooled.fit())
            } else {
                None
            };
            (need_block.then(|| SampleFit::from_moments(m.mean, m.cov)), pooled_fit)
        } else {
            (None, None)
        };
        let fits = PeriodFits {
            block: block_fit.as_ref(),
            pooled: pooled_fit.as_ref(),
        };
        for (slot, out) in runners.iter_mut().zip(losses.iter_mut()) {
            let Some(runner) = slot else { continue };
            match runner.step(&fits).and_then(|w| eval.loss(w)) {
                Ok(l) => out.push(l.value()),
                Err(e) if e.is_numerical() || matches!(e, Error::InsufficientSample { .. }) => *slot = None,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(RepLosses {
        losses: runners
            .iter()
            .zip(losses)
            .map(|(r, l)| r.as_ref().map(|_| l))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub scenario: Scenario,
    pub strategy: Strategy,
    pub period: usize,
    pub c: f64,
    pub mean_loss: f64,
    pub stderr: f64,
    pub failed_reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub rows: Vec<LossRow>,
}

impl LossTable {
    pub const HEADER: [&'static str; 7] = [
        "scenario",
        "strategy",
        "period",
        "c",
        "mean_loss",
        "stderr",
        "failed_reps",
    ];

    pub fn get(&self, strategy: Strategy, period: usize) -> Option<&LossRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.period == period)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(Self::HEADER).map_err(to_io)?;
        for r in &self.rows {
            w.write_record([
                r.scenario.name().to_string(),
                r.strategy.to_string(),
                r.period.to_string(),
                r.c.to_string(),
                r.mean_loss.to_string(),
                r.stderr.to_string(),
                r.failed_reps.to_string(),
            ])
            .map_err(to_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every replication and averages losses per strategy and period, in
/// replication order.
pub fn run_experiment(config: &ScenarioConfig, exec: Execution) -> Result<LossTable> {
    config.validate()?;
    let reps = exec
        .map_indexed(config.reps, |rep| run_replication(config, rep))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(config.strategies.len() * config.periods);
    for (s_idx, &strategy) in config.strategies.iter().enumerate() {
        let ok: Vec<&Vec<f64>> = reps.iter().filter_map(|r| r.losses[s_idx].as_ref()).collect();
        let failed_reps = reps.len() - ok.len();
        for period in 0..config.periods {
            let xs: Vec<f64> = ok.iter().map(|l| l[period]).collect();
            let (mean_loss, stderr) = mean_and_stderr(&xs);
            rows.push(LossRow {
                scenario: config.scenario,
                strategy,
                period: period + 1,
                c: config.concentration(),
                mean_loss,
                stderr,
                failed_reps,
            });
        }
    }
    Ok(LossTable { rows })
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
