//! Sample moments, GMV weights and relative-loss functionals shared by every strategy.

use nalgebra::{Cholesky, DMatrix, DMatrixView, DVector, Dyn};

use crate::error::{Error, Result};

/// Absolute tolerance on the full-investment constraint.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;
/// Relative tolerance on covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative pivot size below which a Cholesky factor is treated as singular.
const PIVOT_TOL: f64 = 1e-12;

/// Column-block size below which sums are accumulated directly.
const PAIRWISE_LEAF: usize = 64;

/// A p×n matrix of simple returns; each column is one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsBlock {
    values: DMatrix<f64>,
}

impl ReturnsBlock {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if values.ncols() == 0 {
            return Err(Error::TooFewObservations {
                needed: 1,
                found: 0,
            });
        }
        for (col, column) in values.column_iter().enumerate() {
            if let Some(row) = column.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
        }
        Ok(Self { values })
    }

    /// Builds a block from observation vectors (one `Vec` per period).
    pub fn from_observations(observations: &[Vec<f64>]) -> Result<Self> {
        let n = observations.len();
        let p = observations.first().map_or(0, Vec::len);
        if let Some(bad) = observations.iter().find(|o| o.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(p, n, |i, t| observations[t][i]))
    }

    pub fn asset_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn obs_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Observations `start..start + len` as a new block.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.obs_count() {
            return Err(Error::TooFewObservations {
                needed: start + len,
                found: self.obs_count(),
            });
        }
        Self::new(self.values.columns(start, len).into_owned())
    }

    /// Concatenates blocks along the time axis.
    pub fn concat(blocks: &[&ReturnsBlock]) -> Result<Self> {
        let p = blocks.first().map_or(0, |b| b.asset_count());
        let n: usize = blocks.iter().map(|b| b.obs_count()).sum();
        let mut values = DMatrix::zeros(p, n);
        let mut at = 0;
        for b in blocks {
            if b.asset_count() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: b.asset_count(),
                });
            }
            values.columns_mut(at, b.obs_count()).copy_from(&b.values);
            at += b.obs_count();
        }
        Self::new(values)
    }
}

/// Symmetric p×p covariance, optionally tagged with the sample size it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    values: DMatrix<f64>,
    obs: Option<usize>,
}

impl CovarianceMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch {
                expected: values.nrows(),
                found: values.ncols(),
            });
        }
        let scale = values.amax();
        let p = values.nrows();
        for i in 0..p {
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Degenerate(format!(
                        "covariance not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { values, obs: None })
    }

    /// Symmetrizes `values` exactly and records the originating sample size.
    pub(crate) fn from_sample(mut values: DMatrix<f64>, obs: usize) -> Self {
        symmetrize(&mut values);
        Self {
            values,
            obs: Some(obs),
        }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            values: DMatrix::identity(p, p),
            obs: None,
        }
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn obs_count(&self) -> Option<usize> {
        self.obs
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: &self.values * factor,
            obs: self.obs,
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        Cholesky::new(self.values.clone()).is_some()
    }

    pub fn factor(&self) -> Result<SpdFactor> {
        SpdFactor::new(self)
    }

    fn singular(&self) -> Error {
        Error::Singular {
            p: self.dim(),
            n: self.obs,
        }
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factor of a positive-definite covariance with 1ᵀΣ⁻¹1 cached.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    precision_ones: DVector<f64>,
    ones_precision: f64,
}

impl SpdFactor {
    pub fn new(cov: &CovarianceMatrix) -> Result<Self> {
        let chol = Cholesky::new(cov.values.clone()).ok_or_else(|| cov.singular())?;
        let p = cov.dim();
        let max_diag = (0..p).map(|i| cov.values[(i, i)]).fold(0.0, f64::max);
        let min_pivot = (0..p).map(|i| chol.l_dirty()[(i, i)].powi(2)).fold(f64::INFINITY, f64::min);
        if min_pivot.is_nan() || min_pivot <= PIVOT_TOL * p as f64 * max_diag {
            return Err(cov.singular());
        }
        let precision_ones = chol.solve(&DVector::from_element(cov.dim(), 1.0));
        let ones_precision = precision_ones.sum();
        if !(ones_precision > 0.0 && ones_precision.is_finite()) {
            return Err(cov.singular());
        }
        Ok(Self {
            chol,
            precision_ones,
            ones_precision,
        })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// 1ᵀΣ⁻¹1, the reciprocal of the GMV variance.
    pub fn ones_precision(&self) -> f64 {
        self.ones_precision
    }

    pub fn gmv_weights(&self) -> WeightVector {
        WeightVector(&self.precision_ones / self.ones_precision)
    }

    /// Lower-triangular factor L with Σ = L Lᵀ.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Portfolio weights satisfying wᵀ1 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        let sum = weights.sum();
        if !sum.is_finite() || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::NotFullyInvested { sum });
        }
        Ok(Self(weights))
    }

    pub fn from_slice(weights: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(weights))
    }

    pub fn equal(p: usize) -> Self {
        Self(DVector::from_element(p, 1.0 / p as f64))
    }

    /// `intensity · sample + (1 − intensity) · holding`.
    pub fn blend(intensity: f64, sample: &WeightVector, holding: &WeightVector) -> Self {
        Self(&sample.0 * intensity + &holding.0 * (1.0 - intensity))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn l1_distance(&self, other: &WeightVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Excess variance over the GMV variance, as a fraction of the GMV variance.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct RelativeLoss(f64);

impl RelativeLoss {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < -1.0 {
            return Err(Error::out_of_range("relative loss", value, ">= -1"));
        }
        Ok(Self(value))
    }

    pub const ZERO: RelativeLoss = RelativeLoss(0.0);

    pub(crate) fn clamped(value: f64) -> Self {
        Self(value.max(0.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A consistent estimate of a relative loss, clamped below at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimate {
    pub raw: f64,
    pub loss: RelativeLoss,
}

impl LossEstimate {
    pub(crate) fn from_raw(raw: f64) -> Self {
        Self {
            raw,
            loss: RelativeLoss::clamped(raw),
        }
    }

    pub fn clamped(&self) -> bool {
        self.raw < 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub mean: DVector<f64>,
    pub cov: CovarianceMatrix,
}

fn pairwise_row_sums(m: DMatrixView<'_, f64>) -> DVector<f64> {
    let n = m.ncols();
    if n <= PAIRWISE_LEAF {
        let mut acc = DVector::zeros(m.nrows());
        for col in m.column_iter() {
            acc += col;
        }
        return acc;
    }
    let half = n / 2;
    pairwise_row_sums(m.columns(0, half)) + pairwise_row_sums(m.columns(half, n - half))
}

fn pairwise_scatter(d: DMatrixView<'_, f64>) -> DMatrix<f64> {
    let n = d.ncols();
    if n <= PAIRWISE_LEAF {
        return d * d.transpose();
    }
    let half = n / 2;
    pairwise_scatter(d.columns(0, half)) + pairwise_scatter(d.columns(half, n - half))
}

/// Column mean and unbiased (n − 1) sample covariance.
pub fn sample_moments(block: &ReturnsBlock) -> Result<SampleMoments> {
    let n = block.obs_count();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, found: n });
    }
    let (mean, scatter) = centered_scatter(block);
    Ok(SampleMoments {
        mean,
        cov: CovarianceMatrix::from_sample(scatter / (n as f64 - 1.0), n),
    })
}

fn centered_scatter(block: &ReturnsBlock) -> (DVector<f64>, DMatrix<f64>) {
    let y = block.values();
    let n = y.ncols();
    let mean = pairwise_row_sums(y.as_view()) / n as f64;
    let mut dev = y.clone();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
    }
    let scatter = pairwise_scatter(dev.as_view());
    (mean, scatter)
}

pub fn gmv_weights(cov: &CovarianceMatrix) -> Result<WeightVector> {
    Ok(cov.factor()?.gmv_weights())
}

pub fn portfolio_variance(w: &WeightVector, cov: &CovarianceMatrix) -> Result<f64> {
    if w.len() != cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            found: w.len(),
        });
    }
    Ok(quad_form(w.as_vector(), cov.values()))
}

pub(crate) fn quad_form(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    x.dot(&(m * x))
}

pub(crate) fn bilinear(x: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(m * y))
}

/// 1ᵀΣ⁻¹1 · wᵀΣw − 1.
pub fn relative_loss(w: &WeightVector, eval_cov: &CovarianceMatrix) -> Result<RelativeLoss> {
    LossEvaluator::new(eval_cov)?.loss(w)
}

/// Evaluates relative losses against one covariance, factoring it once.
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    cov: CovarianceMatrix,
    factor: SpdFactor,
}

impl LossEvaluator {
    pub fn new(eval_cov: &CovarianceMatrix) -> Result<Self> {
        Ok(Self {
            factor: eval_cov.factor()?,
            cov: eval_cov.clone(),
        })
    }

    pub fn gmv_variance(&self) -> f64 {
        1.0 / self.factor.ones_precision()
    }

    pub fn gmv_weights(&self) -> WeightVector {
        self.factor.gmv_weights()
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.cov
    }

    pub fn loss(&self, w: &WeightVector) -> Result<RelativeLoss> {
        let v = portfolio_variance(w, &self.cov)?;
        RelativeLoss::new(self.factor.ones_precision() * v - 1.0)
    }
}

/// A fitted sample: moments, Cholesky factor and sample GMV weights.
#[derive(Debug, Clone)]
pub struct SampleFit {
    pub mean: DVector<f64>,
    pub cov: CovarianceMatrix,
    pub factor: SpdFactor,
    pub gmv: WeightVector,
}

impl SampleFit {
    pub fn from_block(block: &ReturnsBlock) -> Result<Self> {
        let SampleMoments { mean, cov } = sample_moments(block)?;
        Self::from_moments(mean, cov)
    }

    pub fn from_moments(mean: DVector<f64>, cov: CovarianceMatrix) -> Result<Self> {
        let factor = cov.factor()?;
        let gmv = factor.gmv_weights();
        Ok(Self {
            mean,
            cov,
            factor,
            gmv,
        })
    }

    pub fn asset_count(&self) -> usize {
        self.cov.dim()
    }

    pub fn obs_count(&self) -> usize {
        self.cov.obs_count().unwrap_or(0)
    }

    /// (1 − p/n) · 1ᵀS⁻¹1 · bᵀSb − 1, clamped below at 0.
    pub fn target_loss(&self, b: &WeightVector) -> Result<LossEstimate> {
        let (p, n) = (self.asset_count(), self.obs_count());
        if n <= p + 1 {
            return Err(Error::InsufficientSample { p, n });
        }
        if b.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: b.len(),
            });
        }
        let c = p as f64 / n as f64;
        let raw =
            (1.0 - c) * self.factor.ones_precision() * quad_form(b.as_vector(), self.cov.values())
                - 1.0;
        Ok(LossEstimate::from_raw(raw))
    }
}

/// Consistent estimate of the relative loss of target `b` from one sample.
pub fn estimate_target_loss(block: &ReturnsBlock, b: &WeightVector) -> Result<LossEstimate> {
    let (p, n) = (block.asset_count(), block.obs_count());
    if n <= p + 1 {
        return Err(Error::InsufficientSample { p, n });
    }
    SampleFit::from_block(block)?.target_loss(b)
}

/// Intensity minimizing the true variance of `ψ·sample + (1−ψ)·holding` under `sigma`.
pub fn loss_minimizing_intensity(
    holding: &WeightVector,
    sample: &WeightVector,
    sigma: &CovarianceMatrix,
) -> Result<f64> {
    if holding.len() != sigma.dim() || sample.len() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            found: holding.len().min(sample.len()),
        });
    }
    let diff = holding.as_vector() - sample.as_vector();
    let denom = quad_form(&diff, sigma.values());
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "holding and sample portfolios coincide".into(),
        ));
    }
    Ok(bilinear(holding.as_vector(), sigma.values(), &diff) / denom)
}

/// Count, mean and centered scatter of all observations seen so far.
///
/// Blocks are merged with the pairwise (Chan) update, which equals the
/// moments of the concatenated data without retaining any raw returns.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMoments {
    count: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl PooledMoments {
    pub fn new(p: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(p),
            scatter: DMatrix::zeros(p, p),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn asset_count(&self) -> usize {
        self.mean.len()
    }

    pub fn push_block(&mut self, block: &ReturnsBlock) -> Result<()> {
        let (mean, scatter) = centered_scatter(block);
        self.merge(block.obs_count(), &mean, &scatter)
    }

    /// Merges moments of a block of `n` observations with the given unbiased covariance.
    pub fn push_moments(&mut self, n: usize, mean: &DVector<f64>, cov: &CovarianceMatrix) -> Result<()> {
        let scatter = cov.values() * (n as f64 - 1.0);
        self.merge(n, mean, &scatter)
    }

    fn merge(&mut self, n: usize, mean: &DVector<f64>, scatter: &DMatrix<f64>) -> Result<()> {
        if mean.len() != self.asset_count() {
            return Err(Error::DimensionMismatch {
                expected: self.asset_count(),
                found: mean.len(),
            });
        }
        if n == 0 {
            return Ok(());
        }
        if self.count == 0 {
            self.count = n;
            self.mean = mean.clone();
            self.scatter = scatter.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, n as f64);
        let total = na + nb;
        let delta = mean - &self.mean;
        self.scatter += scatter;
        self.scatter
            .ger(na * nb / total, &delta, &delta, 1.0);
        self.mean += &delta * (nb / total);
        self.count += n;
        Ok(())
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> Result<CovarianceMatrix> {
        if self.count < 2 {
            return Err(Error::TooFewObservations {
                needed: 2,
                found: self.count,
            });
        }
        Ok(CovarianceMatrix::from_sample(
            &self.scatter / (self.count as f64 - 1.0),
            self.count,
        ))
    }

    pub fn fit(&self) -> Result<SampleFit> {
        SampleFit::from_moments(self.mean.clone(), self.covariance()?)
    }
}
