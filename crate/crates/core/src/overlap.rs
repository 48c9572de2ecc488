//! Dynamic shrinkage with overlapping (extending) estimation windows.
//!
//! At period `i` the sample GMV portfolio is built from all `N_i` observations
//! seen so far. Because consecutive sample portfolios share data, the holding
//! portfolio is tracked as a convex combination of the target and every past
//! sample portfolio (`betas`), and the cross-dependence enters through the
//! mixing term `K_i = β_0 + Σ_j β_j D_{j,i}`.

use crate::error::{Error, Result};
use crate::nonoverlap::{Diagnostics, NonOverlapMode, Target};
use crate::stats::{LossEstimate, PooledMoments, RelativeLoss, ReturnsBlock, SampleFit, WeightVector};

/// Tolerance for the beta normalization check.
pub const BETA_SUM_TOL: f64 = 1e-12;

fn check_concentration(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::out_of_range("concentration", c, "0 < c < 1"))
    }
}

/// Deterministic equivalent of the cross term between the sample GMV
/// portfolios of windows with concentrations `c_j` (earlier) and `c_i`.
pub fn cross_term_d(c_j: f64, c_i: f64) -> Result<f64> {
    check_concentration(c_j)?;
    check_concentration(c_i)?;
    if c_i > c_j {
        return Err(Error::out_of_range("c_i", c_i, "c_i <= c_j"));
    }
    let ratio = c_j / c_i;
    let root = ((1.0 - ratio).powi(2) + 4.0 * (1.0 - c_i) * ratio).sqrt();
    Ok(1.0 - 2.0 * (1.0 - c_j) / ((1.0 - c_j) + (1.0 - c_i) * ratio + root))
}

/// `K = β_0 + Σ_{j≥1} β_j D_j`. `d_values` is aligned with `betas`; its first
/// entry is ignored.
pub fn mixing_k(betas: &[f64], d_values: &[f64]) -> Result<f64> {
    if betas.len() != d_values.len() || betas.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: betas.len(),
            found: d_values.len(),
        });
    }
    Ok(betas[0]
        + betas[1..]
            .iter()
            .zip(&d_values[1..])
            .map(|(b, d)| b * d)
            .sum::<f64>())
}

/// `((R+1) − K) / ((R+1) + (1−C)⁻¹ − 2K)`, clamped to `[0, 1]`.
pub fn overlap_intensity(r_prev: RelativeLoss, k: f64, c: f64) -> Result<f64> {
    check_concentration(c)?;
    let r = r_prev.value();
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::out_of_range("relative loss", r, "finite and >= 0"));
    }
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::out_of_range("mixing term", k, "0 < K <= 1"));
    }
    let denom = (r + 1.0) + 1.0 / (1.0 - c) - 2.0 * k;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::Degenerate(format!("intensity denominator {denom}")));
    }
    Ok(((r + 1.0 - k) / denom).clamp(0.0, 1.0))
}

/// `Ψ²C/(1−C) + (1−Ψ)²R + 2Ψ(1−Ψ)(K−1)`, clamped below at 0.
pub fn advance_overlap_loss(psi: f64, c: f64, r_prev: RelativeLoss, k: f64) -> Result<RelativeLoss> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::out_of_range("intensity", psi, "0 <= psi <= 1"));
    }
    check_concentration(c)?;
    let r = r_prev.value();
    Ok(RelativeLoss::clamped(
        psi * psi * c / (1.0 - c) + (1.0 - psi).powi(2) * r + 2.0 * psi * (1.0 - psi) * (k - 1.0),
    ))
}

/// Scales the existing coefficients by `1 − Ψ` and appends `Ψ`.
pub fn update_betas(betas: &[f64], psi: f64) -> Vec<f64> {
    let mut out: Vec<f64> = betas.iter().map(|b| b * (1.0 - psi)).collect();
    out.push(psi);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRecord {
    pub pooled_count: usize,
    pub mixing: f64,
    pub intensity: f64,
    pub loss: RelativeLoss,
    pub sample_weights: WeightVector,
}

/// Output of one pass of the recursion over a concentration schedule.
struct Schedule {
    r: f64,
    betas: Vec<f64>,
}

struct Step {
    k: f64,
    k_clamped: bool,
    psi: f64,
    r_next: RelativeLoss,
}

/// One step at concentration `c` for a holding described by `betas` over the
/// target and the sample portfolios at the given earlier concentrations.
fn recursion_step(earlier: &[f64], betas: &[f64], c: f64, r_prev: f64) -> Result<Step> {
    let mut d_values = Vec::with_capacity(betas.len());
    d_values.push(1.0);
    for &c_j in earlier {
        d_values.push(cross_term_d(c_j, c)?);
    }
    let raw_k = mixing_k(betas, &d_values)?;
    let k_clamped = raw_k > 1.0 || raw_k <= 0.0;
    let k = if k_clamped { raw_k.clamp(f64::MIN_POSITIVE, 1.0) } else { raw_k };
    let r_prev = RelativeLoss::clamped(r_prev);
    let psi = overlap_intensity(r_prev, k, c)?;
    let r_next = advance_overlap_loss(psi, c, r_prev, k)?;
    Ok(Step { k, k_clamped, psi, r_next })
}

#[derive(Debug, Clone)]
pub struct OverlapState {
    mode: NonOverlapMode,
    asset_count: usize,
    target: WeightVector,
    r0: Option<LossEstimate>,
    r_hat: RelativeLoss,
    concentrations: Vec<f64>,
    betas: Vec<f64>,
    weights: WeightVector,
    history: Vec<OverlapRecord>,
    pooled: PooledMoments,
    diagnostics: Diagnostics,
}

impl OverlapState {
    /// Period-0 state holding the target portfolio. The mode selects how the
    /// target's relative loss is obtained, exactly as in the non-overlapping case.
    pub fn new(target: &Target, mode: NonOverlapMode) -> Result<Self> {
        let (weights, r0) = match (target, mode) {
            (Target::Fixed(b), NonOverlapMode::FixedR0 | NonOverlapMode::ReplayR0) => {
                (b.clone(), None)
            }
            (Target::PriorSample(prior), NonOverlapMode::PriorSampleTarget) => {
                let (p, n0) = (prior.asset_count(), prior.obs_count());
                if n0 <= p + 1 {
                    return Err(Error::InsufficientSample { p, n: n0 });
                }
                let fit = SampleFit::from_block(prior)?;
                (fit.gmv, Some(LossEstimate::from_raw(p as f64 / (n0 - p) as f64)))
            }
            _ => {
                return Err(Error::Config(format!(
                    "mode {mode:?} is incompatible with the given target"
                )))
            }
        };
        let p = weights.len();
        Ok(Self {
            mode,
            asset_count: p,
            target: weights.clone(),
            r_hat: r0.map_or(RelativeLoss::ZERO, |e| e.loss),
            r0,
            concentrations: Vec::new(),
            betas: vec![1.0],
            weights,
            history: Vec::new(),
            pooled: PooledMoments::new(p),
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn init(target: &Target, first_block: &ReturnsBlock, mode: NonOverlapMode) -> Result<Self> {
        let mut state = Self::new(target, mode)?;
        state.step(first_block)?;
        Ok(state)
    }

    /// Adds a block to the internal pooled moments and advances one period.
    pub fn step(&mut self, block: &ReturnsBlock) -> Result<&WeightVector> {
        if block.asset_count() != self.asset_count {
            return Err(Error::DimensionMismatch {
                expected: self.asset_count,
                found: block.asset_count(),
            });
        }
        let mut pooled = self.pooled.clone();
        pooled.push_block(block)?;
        let (p, total) = (self.asset_count, pooled.count());
        if total <= p + 1 {
            return Err(Error::InsufficientSample { p, n: total });
        }
        let fit = pooled.fit()?;
        self.step_pooled(&fit)?;
        self.pooled = pooled;
        Ok(&self.weights)
    }

    /// Advances one period given a fit of every observation up to now. Lets
    /// several states share one pooled fit; the internal pooled moments are
    /// left untouched.
    pub fn step_pooled(&mut self, pooled_fit: &SampleFit) -> Result<&WeightVector> {
        let (p, total) = (pooled_fit.asset_count(), pooled_fit.obs_count());
        if p != self.asset_count {
            return Err(Error::DimensionMismatch {
                expected: self.asset_count,
                found: p,
            });
        }
        if total <= p + 1 {
            return Err(Error::InsufficientSample { p, n: total });
        }
        if let Some(last) = self.history.last() {
            if total <= last.pooled_count {
                return Err(Error::Config(format!(
                    "pooled count must grow: {total} after {}",
                    last.pooled_count
                )));
            }
        }
        let c = p as f64 / total as f64;

        let (r_prev, betas) = match self.mode {
            NonOverlapMode::FixedR0 | NonOverlapMode::PriorSampleTarget => {
                if self.r0.is_none() {
                    self.set_r0(pooled_fit.target_loss(&self.target)?);
                    self.r_hat = self.r0.expect("just set").loss;
                }
                (self.r_hat.value(), self.betas.clone())
            }
            NonOverlapMode::ReplayR0 => {
                let estimate = pooled_fit.target_loss(&self.target)?;
                self.set_r0(estimate);
                let s = self.replay_schedule(estimate.loss.value())?;
                (s.r, s.betas)
            }
        };

        let (k, psi, r_next) = self.advance(&betas, c, r_prev)?;
        self.concentrations.push(c);
        self.betas = update_betas(&self.betas, psi);
        self.weights = WeightVector::blend(psi, &pooled_fit.gmv, &self.weights);
        self.r_hat = r_next;
        self.history.push(OverlapRecord {
            pooled_count: total,
            mixing: k,
            intensity: psi,
            loss: r_next,
            sample_weights: pooled_fit.gmv.clone(),
        });
        Ok(&self.weights)
    }

    fn advance(&mut self, betas: &[f64], c: f64, r_prev: f64) -> Result<(f64, f64, RelativeLoss)> {
        let step = recursion_step(&self.concentrations, betas, c, r_prev)?;
        if step.k_clamped {
            self.diagnostics.intensity_clamps += 1;
        }
        Ok((step.k, step.psi, step.r_next))
    }

    /// Runs the recursion over the stored concentrations from `r0`.
    fn replay_schedule(&mut self, r0: f64) -> Result<Schedule> {
        let mut r = r0;
        let mut betas = vec![1.0];
        for idx in 0..self.concentrations.len() {
            let step = recursion_step(&self.concentrations[..idx], &betas, self.concentrations[idx], r)?;
            r = step.r_next.value();
            betas = update_betas(&betas, step.psi);
        }
        Ok(Schedule { r, betas })
    }

    fn set_r0(&mut self, estimate: LossEstimate) {
        if estimate.clamped() {
            self.diagnostics.loss_clamps += 1;
        }
        self.r0 = Some(estimate);
    }

    /// Recomputes the holding weights from the target and stored history.
    pub fn replay_weights(&self) -> WeightVector {
        self.history.iter().fold(self.target.clone(), |w, rec| {
            WeightVector::blend(rec.intensity, &rec.sample_weights, &w)
        })
    }

    /// Holding weights rebuilt from the beta coefficients.
    pub fn weights_from_betas(&self) -> Result<WeightVector> {
        let mut v = self.target.as_vector() * self.betas[0];
        for (beta, rec) in self.betas[1..].iter().zip(&self.history) {
            v += rec.sample_weights.as_vector() * *beta;
        }
        WeightVector::new(v)
    }

    pub fn mode(&self) -> NonOverlapMode {
        self.mode
    }

    pub fn period(&self) -> usize {
        self.history.len()
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn target(&self) -> &WeightVector {
        &self.target
    }

    pub fn r_hat(&self) -> RelativeLoss {
        self.r_hat
    }

    pub fn r0(&self) -> Option<LossEstimate> {
        self.r0
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    pub fn history(&self) -> &[OverlapRecord] {
        &self.history
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }
}
