//! Strategy catalogue and a uniform period-by-period driver.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nonoverlap::{psi_hat, NonOverlapMode, NonOverlapState, Target};
use crate::overlap::OverlapState;
use crate::stats::{ReturnsBlock, SampleFit, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Non-overlapping windows, target loss estimated once.
    NonOverlapFixed,
    /// Extending windows, target loss estimated once.
    OverlapFixed,
    /// Non-overlapping windows, target loss re-estimated from all data.
    NonOverlapReplay,
    /// Extending windows, target loss re-estimated from all data.
    OverlapReplay,
    /// Sample GMV portfolio of the newest block.
    Sample,
    /// The target portfolio, never updated.
    Target,
    /// Single-period shrinkage of each block toward the target.
    OnePeriod,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::NonOverlapFixed,
        Strategy::OverlapFixed,
        Strategy::NonOverlapReplay,
        Strategy::OverlapReplay,
        Strategy::Sample,
        Strategy::Target,
        Strategy::OnePeriod,
    ];

    pub fn number(self) -> u8 {
        match self {
            Strategy::NonOverlapFixed => 1,
            Strategy::OverlapFixed => 2,
            Strategy::NonOverlapReplay => 3,
            Strategy::OverlapReplay => 4,
            Strategy::Sample => 5,
            Strategy::Target => 6,
            Strategy::OnePeriod => 7,
        }
    }

    pub fn from_number(k: u8) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|s| s.number() == k)
            .ok_or_else(|| Error::Config(format!("unknown strategy {k} (expected 1-7)")))
    }

    /// Whether the strategy needs a fit of all data seen so far.
    pub fn uses_pooled(self) -> bool {
        matches!(
            self,
            Strategy::OverlapFixed | Strategy::OverlapReplay | Strategy::NonOverlapReplay
        )
    }

    /// Whether the strategy fits the newest block on its own.
    pub fn uses_block(self) -> bool {
        !matches!(
            self,
            Strategy::Target | Strategy::OverlapFixed | Strategy::OverlapReplay
        )
    }

    /// Parses a comma-separated list such as `1,5,6,7`; sorted and deduplicated.
    pub fn parse_list(s: &str) -> Result<Vec<Strategy>> {
        let mut out = s
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<Result<Vec<Strategy>>>()?;
        if out.is_empty() {
            return Err(Error::Config("empty strategy list".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k: u8 = s
            .parse()
            .map_err(|_| Error::Config(format!("invalid strategy '{s}'")))?;
        Strategy::from_number(k)
    }
}

/// Single-period shrinkage of the sample GMV portfolio toward `b`.
pub fn one_period_shrinkage(block: &ReturnsBlock, b: &WeightVector) -> Result<WeightVector> {
    let (p, n) = (block.asset_count(), block.obs_count());
    if n <= p + 1 {
        return Err(Error::InsufficientSample { p, n });
    }
    one_period_from_fit(&SampleFit::from_block(block)?, b)
}

pub(crate) fn one_period_from_fit(fit: &SampleFit, b: &WeightVector) -> Result<WeightVector> {
    let estimate = fit.target_loss(b)?;
    let psi = psi_hat(fit.obs_count(), fit.asset_count(), estimate.loss)?;
    Ok(WeightVector::blend(psi, &fit.gmv, b))
}

/// Fits available for one rebalancing period. Either may be absent or failed
/// when no requested strategy needs it.
pub struct PeriodFits<'a> {
    /// Fit of the newest block alone.
    pub block: Option<&'a Result<SampleFit>>,
    /// Fit of all observations up to and including the newest block.
    pub pooled: Option<&'a Result<SampleFit>>,
}

fn need<'a>(fit: Option<&'a Result<SampleFit>>, what: &str) -> Result<&'a SampleFit> {
    match fit {
        Some(Ok(f)) => Ok(f),
        Some(Err(e)) => Err(e.clone()),
        None => Err(Error::Config(format!("{what} fit not provided"))),
    }
}

#[derive(Debug, Clone)]
enum Engine {
    NonOverlap(NonOverlapState),
    Overlap(OverlapState),
    Static(WeightVector),
}

/// Runs one strategy period by period from shared fits.
#[derive(Debug, Clone)]
pub struct StrategyRunner {
    strategy: Strategy,
    target: WeightVector,
    engine: Engine,
}

impl StrategyRunner {
    pub fn new(strategy: Strategy, target: &WeightVector) -> Result<Self> {
        let t = Target::Fixed(target.clone());
        let engine = match strategy {
            Strategy::NonOverlapFixed => Engine::NonOverlap(NonOverlapState::new(&t, NonOverlapMode::FixedR0)?),
            Strategy::NonOverlapReplay => Engine::NonOverlap(NonOverlapState::new(&t, NonOverlapMode::ReplayR0)?),
            Strategy::OverlapFixed => Engine::Overlap(OverlapState::new(&t, NonOverlapMode::FixedR0)?),
            Strategy::OverlapReplay => Engine::Overlap(OverlapState::new(&t, NonOverlapMode::ReplayR0)?),
            Strategy::Sample | Strategy::Target | Strategy::OnePeriod => Engine::Static(target.clone()),
        };
        Ok(Self {
            strategy,
            target: target.clone(),
            engine,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn weights(&self) -> &WeightVector {
        match &self.engine {
            Engine::NonOverlap(s) => s.weights(),
            Engine::Overlap(s) => s.weights(),
            Engine::Static(w) => w,
        }
    }

    pub fn step(&mut self, fits: &PeriodFits<'_>) -> Result<&WeightVector> {
        match &mut self.engine {
            Engine::NonOverlap(s) => {
                let block = need(fits.block, "block")?;
                match (s.mode(), fits.pooled) {
                    (NonOverlapMode::ReplayR0, Some(_)) => {
                        s.step_fitted_pooled(block, need(fits.pooled, "pooled")?)?;
                    }
                    _ => {
                        s.step_fitted(block)?;
                    }
                }
            }
            Engine::Overlap(s) => {
                s.step_pooled(need(fits.pooled, "pooled")?)?;
            }
            Engine::Static(w) => match self.strategy {
                Strategy::Sample => *w = need(fits.block, "block")?.gmv.clone(),
                Strategy::OnePeriod => *w = one_period_from_fit(need(fits.block, "block")?, &self.target)?,
                _ => {}
            },
        }
        Ok(self.weights())
    }

    pub fn nonoverlap_state(&self) -> Option<&NonOverlapState> {
        match &self.engine {
            Engine::NonOverlap(s) => Some(s),
            _ => None,
        }
    }

    pub fn overlap_state(&self) -> Option<&OverlapState> {
        match &self.engine {
            Engine::Overlap(s) => Some(s),
            _ => None,
        }
    }
}
