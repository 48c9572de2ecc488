//! Dynamic shrinkage with non-overlapping estimation windows.
//!
//! At period `i` the sample GMV portfolio of the newest block alone is
//! shrunk toward the holding portfolio. With `c_i = p/n_i` the optimal
//! intensity and the relative loss of the result evolve as
//!
//! ```text
//! ψ_i = (1 − c_i) r_{i−1} / ((1 − c_i) r_{i−1} + c_i)
//! r_i = ψ_i² c_i / (1 − c_i) + (1 − ψ_i)² r_{i−1}
//! ```
//!
//! so the only unknown is the relative loss `r_0` of the initial target.

use crate::error::{Error, Result};
use crate::stats::{LossEstimate, PooledMoments, RelativeLoss, ReturnsBlock, SampleFit, WeightVector};

fn check_concentration(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::out_of_range("concentration", c, "0 < c < 1"))
    }
}

fn check_loss(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::out_of_range("relative loss", r, "finite and >= 0"))
    }
}

/// Asymptotic optimal intensity `(1−c)r / ((1−c)r + c)`.
pub fn psi_star(c: f64, r_prev: RelativeLoss) -> Result<f64> {
    check_concentration(c)?;
    let r = r_prev.value();
    check_loss(r)?;
    let num = (1.0 - c) * r;
    Ok(num / (num + c))
}

/// Bona fide intensity `(n−p)r / ((n−p)r + p)`.
pub fn psi_hat(n: usize, p: usize, r_prev: RelativeLoss) -> Result<f64> {
    if n <= p {
        return Err(Error::InsufficientSample { p, n });
    }
    let r = r_prev.value();
    check_loss(r)?;
    let num = (n - p) as f64 * r;
    Ok(num / (num + p as f64))
}

/// Relative loss after blending with intensity `psi`: `ψ²c/(1−c) + (1−ψ)²r`.
pub fn advance_r(psi: f64, c: f64, r_prev: RelativeLoss) -> Result<RelativeLoss> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::out_of_range("intensity", psi, "0 <= psi <= 1"));
    }
    check_concentration(c)?;
    check_loss(r_prev.value())?;
    Ok(RelativeLoss::clamped(
        psi * psi * c / (1.0 - c) + (1.0 - psi) * (1.0 - psi) * r_prev.value(),
    ))
}

/// Plug-in loss update with `c/(1−c)` replaced by `p/(n−p)`.
fn advance_r_hat(psi: f64, n: usize, p: usize, r_prev: f64) -> f64 {
    let noise = p as f64 / (n - p) as f64;
    (psi * psi * noise + (1.0 - psi) * (1.0 - psi) * r_prev).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonOverlapMode {
    /// `r_0` estimated once from the first block.
    FixedR0,
    /// `r_0` re-estimated from all data seen so far at every period, with the
    /// loss recursion replayed from the first period.
    ReplayR0,
    /// Target is the sample GMV portfolio of a prior block; `r_0 = p/(n_0 − p)`.
    PriorSampleTarget,
}

/// Initial shrinkage target.
#[derive(Debug, Clone)]
pub enum Target {
    Fixed(WeightVector),
    /// Returns observed before the first estimation window.
    PriorSample(ReturnsBlock),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub obs_count: usize,
    pub intensity: f64,
    pub loss: RelativeLoss,
    pub sample_weights: WeightVector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Times a raw loss estimate was negative and clamped to zero.
    pub loss_clamps: usize,
    /// Times an intensity fell outside `[0, 1]` and was clamped.
    pub intensity_clamps: usize,
}

#[derive(Debug, Clone)]
pub struct NonOverlapState {
    mode: NonOverlapMode,
    asset_count: usize,
    target: WeightVector,
    r0: Option<LossEstimate>,
    r_hat: RelativeLoss,
    weights: WeightVector,
    history: Vec<PeriodRecord>,
    pooled: Option<PooledMoments>,
    diagnostics: Diagnostics,
}

impl NonOverlapState {
    /// Period-0 state holding the target portfolio.
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
                let r0 = p as f64 / (n0 - p) as f64;
                (fit.gmv, Some(LossEstimate::from_raw(r0)))
            }
            _ => {
                return Err(Error::Config(format!(
                    "mode {mode:?} is incompatible with the given target"
                )))
            }
        };
        let pooled = (mode == NonOverlapMode::ReplayR0).then(|| PooledMoments::new(weights.len()));
        Ok(Self {
            mode,
            asset_count: weights.len(),
            r_hat: r0.map_or(RelativeLoss::ZERO, |e| e.loss),
            target: weights.clone(),
            weights,
            r0,
            history: Vec::new(),
            pooled,
            diagnostics: Diagnostics::default(),
        })
    }

    /// Creates the state and performs the first shrinkage step.
    pub fn init(target: &Target, first_block: &ReturnsBlock, mode: NonOverlapMode) -> Result<Self> {
        let mut state = Self::new(target, mode)?;
        state.step(first_block)?;
        Ok(state)
    }

    pub fn step(&mut self, block: &ReturnsBlock) -> Result<&WeightVector> {
        self.check_block(block.asset_count(), block.obs_count())?;
        let fit = SampleFit::from_block(block)?;
        self.step_fitted(&fit)
    }

    fn check_block(&self, p: usize, n: usize) -> Result<()> {
        if p != self.asset_count {
            return Err(Error::DimensionMismatch {
                expected: self.asset_count,
                found: p,
            });
        }
        if n <= p + 1 {
            return Err(Error::InsufficientSample { p, n });
        }
        Ok(())
    }

    /// Advances one period using a precomputed fit of the new block.
    pub fn step_fitted(&mut self, fit: &SampleFit) -> Result<&WeightVector> {
        self.advance(fit, None)
    }

    /// Like [`Self::step_fitted`], with the replay re-estimate taken from
    /// `pooled_fit`, a fit of every observation up to and including this
    /// block. Lets several states share one pooled fit.
    pub fn step_fitted_pooled(&mut self, fit: &SampleFit, pooled_fit: &SampleFit) -> Result<&WeightVector> {
        self.advance(fit, Some(pooled_fit))
    }

    fn advance(&mut self, fit: &SampleFit, pooled_fit: Option<&SampleFit>) -> Result<&WeightVector> {
        let (p, n) = (fit.asset_count(), fit.obs_count());
        self.check_block(p, n)?;

        let (intensity, r_prev) = match self.mode {
            NonOverlapMode::FixedR0 | NonOverlapMode::PriorSampleTarget => {
                if self.r0.is_none() {
                    self.set_r0(fit.target_loss(&self.target)?);
                    self.r_hat = self.r0.expect("just set").loss;
                }
                (self.intensity(n, self.r_hat)?, self.r_hat.value())
            }
            NonOverlapMode::ReplayR0 => {
                let mut pooled = self.pooled.clone().expect("replay mode keeps pooled moments");
                pooled.push_moments(n, &fit.mean, &fit.cov)?;
                let estimate = match pooled_fit {
                    Some(shared) => {
                        if shared.obs_count() != pooled.count() {
                            return Err(Error::DimensionMismatch {
                                expected: pooled.count(),
                                found: shared.obs_count(),
                            });
                        }
                        shared.target_loss(&self.target)?
                    }
                    None => pooled.fit()?.target_loss(&self.target)?,
                };
                self.pooled = Some(pooled);
                self.set_r0(estimate);
                let mut r = estimate.loss.value();
                let counts: Vec<usize> = self.history.iter().map(|rec| rec.obs_count).collect();
                for n_j in counts {
                    let psi = self.intensity(n_j, RelativeLoss::clamped(r))?;
                    r = advance_r_hat(psi, n_j, p, r);
                }
                (self.intensity(n, RelativeLoss::clamped(r))?, r)
            }
        };

        let r_next = advance_r_hat(intensity, n, p, r_prev);
        self.weights = WeightVector::blend(intensity, &fit.gmv, &self.weights);
        self.r_hat = RelativeLoss::clamped(r_next);
        self.history.push(PeriodRecord {
            obs_count: n,
            intensity,
            loss: self.r_hat,
            sample_weights: fit.gmv.clone(),
        });
        Ok(&self.weights)
    }

    fn set_r0(&mut self, estimate: LossEstimate) {
        if estimate.clamped() {
            self.diagnostics.loss_clamps += 1;
        }
        self.r0 = Some(estimate);
    }

    fn intensity(&mut self, n: usize, r: RelativeLoss) -> Result<f64> {
        let psi = psi_hat(n, self.asset_count, r)?;
        if !(0.0..=1.0).contains(&psi) {
            self.diagnostics.intensity_clamps += 1;
        }
        Ok(psi.clamp(0.0, 1.0))
    }

    /// Recomputes the holding weights from the target and the stored
    /// per-period intensities and sample portfolios.
    pub fn replay_weights(&self) -> WeightVector {
        self.history.iter().fold(self.target.clone(), |w, rec| {
            WeightVector::blend(rec.intensity, &rec.sample_weights, &w)
        })
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

    /// Current estimate of the relative loss of the holding portfolio.
    pub fn r_hat(&self) -> RelativeLoss {
        self.r_hat
    }

    /// Latest estimate of the target's relative loss.
    pub fn r0(&self) -> Option<LossEstimate> {
        self.r0
    }

    pub fn history(&self) -> &[PeriodRecord] {
        &self.history
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn loss(r: f64) -> RelativeLoss {
        RelativeLoss::new(r).unwrap()
    }

    fn normal_block(p: usize, n: usize, rng: &mut ChaCha8Rng) -> ReturnsBlock {
        ReturnsBlock::new(DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(rng))).unwrap()
    }

    #[test]
    fn psi_star_examples() {
        assert_eq!(psi_star(0.3, loss(0.0)).unwrap(), 0.0);
        assert_relative_eq!(psi_star(0.5, loss(1.0)).unwrap(), 0.5);
        assert!(psi_star(1e-9, loss(1.0)).unwrap() > 1.0 - 1e-8);
        assert!(psi_star(1.0, loss(1.0)).is_err());
        assert!(psi_star(0.0, loss(1.0)).is_err());
    }

    #[test]
    fn psi_hat_examples() {
        assert_relative_eq!(psi_hat(250, 125, loss(1.0)).unwrap(), 0.5);
        assert_relative_eq!(psi_hat(250, 200, loss(4.0)).unwrap(), 0.5);
        assert_eq!(psi_hat(300, 10, loss(0.0)).unwrap(), 0.0);
        assert_eq!(
            psi_hat(100, 100, loss(1.0)).unwrap_err(),
            Error::InsufficientSample { p: 100, n: 100 }
        );
    }

    #[test]
    fn advance_r_examples() {
        assert_relative_eq!(advance_r(0.0, 0.4, loss(0.7)).unwrap().value(), 0.7);
        assert_relative_eq!(advance_r(1.0, 0.4, loss(0.7)).unwrap().value(), 0.4 / 0.6);
        let psi = psi_star(0.5, loss(1.0)).unwrap();
        let r = advance_r(psi, 0.5, loss(1.0)).unwrap().value();
        // harmonic form r·κ/(r+κ) with κ = 1
        assert_relative_eq!(r, 0.5, epsilon = 1e-15);
        assert!(advance_r(1.2, 0.5, loss(1.0)).is_err());
    }

    #[test]
    fn harmonic_schedule_at_half_concentration() {
        // Independent scalar iteration: 1/r_i = 1/r_0 + i(1−c)/c.
        let (c, mut r) = (0.5, 1.0);
        let expected_r = [0.5, 1.0 / 3.0, 0.25, 0.2];
        let expected_psi = [0.5, 1.0 / 3.0, 0.25, 0.2];
        for i in 0..4 {
            let psi = psi_star(c, loss(r)).unwrap();
            // psi_star applies to r_{i-1}: 1/2, 1/3, 1/4, 1/5
            assert_relative_eq!(psi, expected_psi[i], epsilon = 1e-15);
            r = advance_r(psi, c, loss(r)).unwrap().value();
            assert_relative_eq!(r, expected_r[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn prior_sample_initial_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior = normal_block(100, 200, &mut rng);
        let s = NonOverlapState::new(&Target::PriorSample(prior), NonOverlapMode::PriorSampleTarget)
            .unwrap();
        assert_eq!(s.r0().unwrap().loss.value(), 1.0);
        let prior = normal_block(200, 250, &mut rng);
        let s = NonOverlapState::new(&Target::PriorSample(prior), NonOverlapMode::PriorSampleTarget)
            .unwrap();
        assert_eq!(s.r0().unwrap().loss.value(), 4.0);
    }

    #[test]
    fn pipeline_follows_harmonic_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = 10;
        let prior = normal_block(p, 2 * p, &mut rng);
        let mut s = NonOverlapState::new(&Target::PriorSample(prior), NonOverlapMode::PriorSampleTarget)
            .unwrap();
        for i in 1..=20 {
            s.step(&normal_block(p, 2 * p, &mut rng)).unwrap();
            let rec = s.history().last().unwrap();
            assert!((1.0 / rec.loss.value() - (1.0 + i as f64)).abs() < 1e-12);
            assert!((rec.intensity - 1.0 / (1.0 + i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn in_sample_gmv_target_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let first = normal_block(8, 30, &mut rng);
        let b = SampleFit::from_block(&first).unwrap().gmv;
        let s = NonOverlapState::init(&Target::Fixed(b.clone()), &first, NonOverlapMode::FixedR0)
            .unwrap();
        assert_eq!(s.r0().unwrap().loss.value(), 0.0);
        assert!(s.r0().unwrap().clamped());
        assert_eq!(s.history()[0].intensity, 0.0);
        assert_eq!(s.weights(), &b);
        assert_eq!(s.diagnostics().loss_clamps, 1);
    }

    #[test]
    fn zero_periods_hold_target() {
        let b = WeightVector::equal(5);
        let s = NonOverlapState::new(&Target::Fixed(b.clone()), NonOverlapMode::FixedR0).unwrap();
        assert_eq!(s.weights(), &b);
        assert_eq!(s.period(), 0);
    }

    #[test]
    fn rejects_mismatched_and_short_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = WeightVector::equal(6);
        let mut s = NonOverlapState::new(&Target::Fixed(b), NonOverlapMode::FixedR0).unwrap();
        assert_eq!(
            s.step(&normal_block(6, 7, &mut rng)).unwrap_err(),
            Error::InsufficientSample { p: 6, n: 7 }
        );
        assert_eq!(
            s.step(&normal_block(5, 40, &mut rng)).unwrap_err(),
            Error::DimensionMismatch { expected: 6, found: 5 }
        );
        assert!(NonOverlapState::new(&Target::Fixed(WeightVector::equal(3)), NonOverlapMode::PriorSampleTarget).is_err());
    }

    #[test]
    fn optimal_target_keeps_weights_near_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = WeightVector::equal(10);
        let mut s = NonOverlapState::new(&Target::Fixed(b.clone()), NonOverlapMode::FixedR0).unwrap();
        for _ in 0..4 {
            s.step(&normal_block(10, 400, &mut rng)).unwrap();
        }
        for rec in s.history() {
            assert!(rec.intensity < 0.2, "intensity {}", rec.intensity);
        }
        assert!(s.weights().l1_distance(&b) < 0.3);
    }

    #[test]
    fn replay_mode_reproduces_weights_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 12;
        let b = WeightVector::from_slice(
            &(0..p).map(|i| if i == 0 { 1.0 - 0.05 * (p - 1) as f64 } else { 0.05 }).collect::<Vec<_>>(),
        )
        .unwrap();
        let sigma_half = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 + i as f64 * 0.3 } else { 0.0 });
        let mut s = NonOverlapState::new(&Target::Fixed(b), NonOverlapMode::ReplayR0).unwrap();
        for _ in 0..5 {
            let x = normal_block(p, 40, &mut rng);
            s.step(&ReturnsBlock::new(&sigma_half * x.values()).unwrap()).unwrap();
        }
        assert_eq!(&s.replay_weights(), s.weights());
        for rec in s.history() {
            assert!((0.0..=1.0).contains(&rec.intensity));
            assert!(rec.loss.value() >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn reciprocal_identity(c in 0.05f64..0.95, r0 in 0.01f64..10.0) {
            let kappa = c / (1.0 - c);
            let mut r = r0;
            for _ in 0..20 {
                let psi = psi_star(c, loss(r)).unwrap();
                let next = advance_r(psi, c, loss(r)).unwrap().value();
                prop_assert!(next < r.min(kappa));
                let lhs = 1.0 / next;
                let rhs = 1.0 / r + (1.0 - c) / c;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
                r = next;
            }
        }

        #[test]
        fn blend_stays_on_segment(seed in 0u64..500, psi in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fit = SampleFit::from_block(&normal_block(5, 20, &mut rng)).unwrap();
            let holding = WeightVector::equal(5);
            let w = WeightVector::blend(psi, &fit.gmv, &holding);
            prop_assert!((w.as_vector().sum() - 1.0).abs() < 1e-12);
            let seg = fit.gmv.l1_distance(&holding);
            prop_assert!((w.l1_distance(&holding) - psi * seg).abs() < 1e-12);
            prop_assert!((w.l1_distance(&fit.gmv) - (1.0 - psi) * seg).abs() < 1e-12);
        }
    }
}
