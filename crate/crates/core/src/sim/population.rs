use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::rmt::haar_orthogonal;
use crate::sim::Scenario;
use crate::stats::CovarianceMatrix;

/// Per-asset CCC-GARCH(1,1) coefficients and the Cholesky factor of the
/// constant correlation matrix.
#[derive(Debug, Clone)]
pub struct GarchParams {
    pub alpha0: DVector<f64>,
    pub alpha1: DVector<f64>,
    pub beta1: DVector<f64>,
    pub corr_chol: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PopulationModel {
    pub mu: DVector<f64>,
    pub sigma: CovarianceMatrix,
    /// Symmetric square root `QΛ^{1/2}Qᵀ`.
    pub sigma_half: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// CAPM loadings.
    pub beta: DVector<f64>,
    pub garch: GarchParams,
    /// Diagonal of the VAR(1) coefficient matrix.
    pub gamma: DVector<f64>,
}

/// `⌊0.2p⌋` eigenvalues of 0.2, `⌊0.4p⌋` of 4, the rest 1; in ascending order.
pub fn spectrum(p: usize) -> Vec<f64> {
    let low = p / 5;
    let high = 2 * p / 5;
    let mut out = vec![0.2; low];
    out.extend(std::iter::repeat_n(1.0, p - low - high));
    out.extend(std::iter::repeat_n(4.0, high));
    out
}

pub fn build_population(p: usize, seed: u64) -> Result<PopulationModel> {
    build_population_with(p, &mut stream_rng(seed, 0))
}

pub fn build_population_with<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<PopulationModel> {
    if p < 5 {
        return Err(Error::out_of_range("p", p as f64, "p >= 5"));
    }
    let eigenvalues = spectrum(p);
    let q = haar_orthogonal(p, rng);
    let scale = |f: fn(f64) -> f64| {
        let d = DVector::from_iterator(p, eigenvalues.iter().map(|&l| f(l)));
        let mut m = q.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= d[j];
        }
        let mut out = &m * q.transpose();
        crate::stats::symmetrize(&mut out);
        out
    };
    let sigma = CovarianceMatrix::new(scale(|l| l))?;
    let sigma_half = scale(f64::sqrt);

    let mu = DVector::from_fn(p, |_, _| Uniform::new(-0.2, 0.2).expect("valid range").sample(rng));
    let beta = DVector::from_fn(p, |_, _| Uniform::new(-1.0, 1.0).expect("valid range").sample(rng));
    let alpha1 = DVector::from_fn(p, |_, _| Uniform::new(0.0, 0.1).expect("valid range").sample(rng));
    let beta1 = DVector::from_fn(p, |_, _| Uniform::new(0.6, 0.7).expect("valid range").sample(rng));
    let gamma = DVector::from_fn(p, |_, _| Uniform::new(-0.9, 0.9).expect("valid range").sample(rng));

    let s = sigma.values();
    let alpha0 = DVector::from_fn(p, |j, _| s[(j, j)] * (1.0 - alpha1[j] - beta1[j]));
    let corr = DMatrix::from_fn(p, p, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt());
    let corr_chol = nalgebra::Cholesky::new(corr)
        .ok_or(Error::Singular { p, n: None })?
        .l();

    Ok(PopulationModel {
        mu,
        sigma,
        sigma_half,
        eigenvalues,
        beta,
        garch: GarchParams {
            alpha0,
            alpha1,
            beta1,
            corr_chol,
        },
        gamma,
    })
}

impl PopulationModel {
    pub fn asset_count(&self) -> usize {
        self.mu.len()
    }

    /// Stationary covariance of the VAR(1) process, `Σ_kl / (1 − γ_kγ_l)`.
    pub fn varma_covariance(&self) -> Result<CovarianceMatrix> {
        let s = self.sigma.values();
        let g = &self.gamma;
        CovarianceMatrix::new(DMatrix::from_fn(s.nrows(), s.ncols(), |k, l| {
            s[(k, l)] / (1.0 - g[k] * g[l])
        }))
    }

    /// Stationary mean of the VAR(1) process, `(I − Γ)⁻¹μ`.
    pub fn varma_mean(&self) -> DVector<f64> {
        self.mu.component_div(&self.gamma.map(|g| 1.0 - g))
    }

    /// Covariance used to evaluate out-of-sample losses. With `literal`, `Σ`
    /// is used for every scenario.
    pub fn eval_cov(&self, scenario: Scenario, literal: bool) -> Result<CovarianceMatrix> {
        if literal {
            return Ok(self.sigma.clone());
        }
        match scenario {
            Scenario::T5 | Scenario::CccGarch => Ok(self.sigma.clone()),
            Scenario::Capm => CovarianceMatrix::new(self.sigma.values() + &self.beta * self.beta.transpose()),
            Scenario::Varma => self.varma_covariance(),
        }
    }

    pub fn check(&self) -> Result<()> {
        for j in 0..self.asset_count() {
            let persistence = self.garch.alpha1[j] + self.garch.beta1[j];
            if persistence >= 1.0 {
                return Err(Error::out_of_range("garch persistence", persistence, "< 1"));
            }
            if self.gamma[j].abs() >= 1.0 {
                return Err(Error::out_of_range("var coefficient", self.gamma[j], "|gamma| < 1"));
            }
        }
        Ok(())
    }
}
