use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::sim::PopulationModel;
use crate::stats::ReturnsBlock;

/// Steps discarded before the first GARCH observation.
pub const GARCH_BURN_IN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Multivariate t(5) innovations.
    T5,
    /// One Gaussian market factor plus Gaussian idiosyncratic noise.
    Capm,
    /// Constant-correlation GARCH(1,1).
    CccGarch,
    /// Diagonal VAR(1).
    Varma,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::T5 => "t5",
            Scenario::Capm => "capm",
            Scenario::CccGarch => "ccc-garch",
            Scenario::Varma => "varma",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t5" => Ok(Scenario::T5),
            "capm" => Ok(Scenario::Capm),
            "ccc-garch" | "garch" => Ok(Scenario::CccGarch),
            "varma" | "var" => Ok(Scenario::Varma),
            _ => Err(Error::Config(format!("unknown scenario '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GeneratorOptions {
    /// Use raw t(5) draws (variance 5/3) instead of unit-variance draws.
    pub raw_t5: bool,
}

#[derive(Debug, Clone)]
enum State {
    Iid,
    Garch { h: DVector<f64>, dev: DVector<f64> },
    Varma { y: DVector<f64> },
}

/// Stateful return generator; dependent scenarios carry their state from one
/// block to the next.
#[derive(Debug, Clone)]
pub struct Generator<'a> {
    pop: &'a PopulationModel,
    scenario: Scenario,
    options: GeneratorOptions,
    state: State,
}

fn normal_matrix<R: Rng + ?Sized>(p: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(rng))
}

impl<'a> Generator<'a> {
    pub fn new<R: Rng + ?Sized>(
        pop: &'a PopulationModel,
        scenario: Scenario,
        options: GeneratorOptions,
        rng: &mut R,
    ) -> Result<Self> {
        pop.check()?;
        let p = pop.asset_count();
        let state = match scenario {
            Scenario::T5 | Scenario::Capm => State::Iid,
            Scenario::CccGarch => {
                let h = DVector::from_fn(p, |j, _| pop.sigma.values()[(j, j)]);
                let mut g = Self {
                    pop,
                    scenario,
                    options,
                    state: State::Garch {
                        h,
                        dev: DVector::zeros(p),
                    },
                };
                g.garch_block(GARCH_BURN_IN, rng);
                return Ok(g);
            }
            Scenario::Varma => {
                let cov = pop.varma_covariance()?;
                let l = cov.factor()?.lower();
                let z: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
                State::Varma {
                    y: pop.varma_mean() + l * z,
                }
            }
        };
        Ok(Self {
            pop,
            scenario,
            options,
            state,
        })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    /// Draws the next `n` observations as a `p × n` block.
    pub fn next_block<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<ReturnsBlock> {
        let p = self.pop.asset_count();
        let values = match self.scenario {
            Scenario::T5 => {
                let t = StudentT::new(5.0).expect("valid degrees of freedom");
                let scale = if self.options.raw_t5 { 1.0 } else { (3.0f64 / 5.0).sqrt() };
                let x = DMatrix::from_fn(p, n, |_, _| t.sample(rng) * scale);
                self.add_mean(&self.pop.sigma_half * x)
            }
            Scenario::Capm => {
                let x = normal_matrix(p, n, rng);
                let z = DMatrix::from_fn(1, n, |_, _| StandardNormal.sample(rng));
                self.add_mean(&self.pop.sigma_half * x + &self.pop.beta * z)
            }
            Scenario::CccGarch => self.garch_block(n, rng),
            Scenario::Varma => {
                let eps = &self.pop.sigma_half * normal_matrix(p, n, rng);
                let State::Varma { y } = &mut self.state else {
                    unreachable!("state matches scenario")
                };
                let mut out = DMatrix::zeros(p, n);
                for t in 0..n {
                    let next = &self.pop.mu + self.pop.gamma.component_mul(y) + eps.column(t);
                    out.set_column(t, &next);
                    *y = next;
                }
                out
            }
        };
        ReturnsBlock::new(values)
    }

    fn add_mean(&self, mut m: DMatrix<f64>) -> DMatrix<f64> {
        for mut col in m.column_iter_mut() {
            col += &self.pop.mu;
        }
        m
    }

    fn garch_block<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.pop.asset_count();
        let g = &self.pop.garch;
        let shocks = &g.corr_chol * normal_matrix(p, n, rng);
        let State::Garch { h, dev } = &mut self.state else {
            unreachable!("state matches scenario")
        };
        let mut out = DMatrix::zeros(p, n);
        for t in 0..n {
            for j in 0..p {
                h[j] = g.alpha0[j] + g.alpha1[j] * dev[j] * dev[j] + g.beta1[j] * h[j];
                dev[j] = h[j].sqrt() * shocks[(j, t)];
                out[(j, t)] = self.pop.mu[j] + dev[j];
            }
        }
        out
    }
}

/// Draws one block from a freshly initialized generator.
pub fn generate<R: Rng + ?Sized>(
    pop: &PopulationModel,
    scenario: Scenario,
    n: usize,
    rng: &mut R,
) -> Result<ReturnsBlock> {
    Generator::new(pop, scenario, GeneratorOptions::default(), rng)?.next_block(n, rng)
}
