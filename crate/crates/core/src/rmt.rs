//! Deterministic equivalents of resolvent quadratic forms, with Monte Carlo
//! harnesses that check them.
//!
//! For a `p × n` matrix `X` of iid standardized entries,
//! `Ṽ_n = X Xᵀ/(n−1)` and `V_n` is the same with the rows centered.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::overlap::cross_term_d;

/// `((1−c)⁻¹, (1−c)⁻³)`, the limits of `ξᵀV⁻¹θ` and `ξᵀV⁻²θ` for unit `ξ = θ`.
pub fn lemma1_limits(c: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::out_of_range("concentration", c, "0 <= c < 1"));
    }
    let inv = 1.0 / (1.0 - c);
    Ok((inv, inv.powi(3)))
}

/// Limit of `ξᵀṼ_n⁻¹Ṽ_{n+m}⁻¹θ / ξᵀθ` with its two auxiliary ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossResolventConstant {
    pub d: f64,
    pub a: f64,
    pub b: f64,
}

pub fn cross_resolvent_d(n: usize, m: usize, p: usize) -> Result<CrossResolventConstant> {
    if p <= 2 || p >= n {
        return Err(Error::out_of_range("p", p as f64, "2 < p < n"));
    }
    if m < 1 {
        return Err(Error::out_of_range("m", m as f64, "m >= 1"));
    }
    let (n, m, p) = (n as f64, m as f64, p as f64);
    let b = (n + m - 1.0) / (n - 1.0);
    let a = (n + m - p) / (n + m) * b;
    let c = p / n;
    let root = ((1.0 - c - a).powi(2) + 4.0 * a).sqrt();
    let d = b / a * (1.0 / (1.0 - c) - 2.0 / (1.0 - c + a + root));
    Ok(CrossResolventConstant { d, a, b })
}

/// Compares `(1−C_i)(1−C_j)·d_{N_j,N_i}` with `D(C_j, C_i)`; returns both sides.
pub fn bridge(p: usize, n_j: usize, n_i: usize) -> Result<(f64, f64)> {
    if n_i <= n_j {
        return Err(Error::out_of_range("n_i", n_i as f64, "n_i > n_j"));
    }
    let constant = cross_resolvent_d(n_j, n_i - n_j, p)?;
    let c_j = p as f64 / n_j as f64;
    let c_i = p as f64 / n_i as f64;
    Ok(((1.0 - c_i) * (1.0 - c_j) * constant.d, cross_term_d(c_j, c_i)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tail {
    #[default]
    Normal,
    /// Student t with 9 degrees of freedom, scaled to unit variance.
    T9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GramSpec {
    pub p: usize,
    pub n: usize,
    /// Extension size for the cross-resolvent forms.
    pub m: usize,
    pub tail: Tail,
}

impl GramSpec {
    pub fn new(p: usize, n: usize, m: usize) -> Result<Self> {
        if p == 0 || p >= n {
            return Err(Error::out_of_range("p", p as f64, "0 < p < n"));
        }
        if m < 1 {
            return Err(Error::out_of_range("m", m as f64, "m >= 1"));
        }
        Ok(Self {
            p,
            n,
            m,
            tail: Tail::Normal,
        })
    }

    pub fn with_tail(self, tail: Tail) -> Self {
        Self { tail, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadraticFormKind {
    /// `ξᵀV_n⁻¹θ`
    Lemma1Inv,
    /// `ξᵀV_n⁻²θ`
    Lemma1InvSq,
    /// `ξᵀṼ_n⁻¹Ṽ_{n+m}⁻¹θ`
    Lemma2Cross,
    /// `ξᵀV_n⁻¹V_{n+m}⁻¹θ`
    Lemma3Cross,
}

impl QuadraticFormKind {
    pub fn name(self) -> &'static str {
        match self {
            QuadraticFormKind::Lemma1Inv => "lemma1_inv",
            QuadraticFormKind::Lemma1InvSq => "lemma1_invsq",
            QuadraticFormKind::Lemma2Cross => "lemma2_cross",
            QuadraticFormKind::Lemma3Cross => "lemma3_cross",
        }
    }

    /// Closed-form limit for unit `ξ = θ`.
    pub fn target(self, spec: &GramSpec) -> Result<f64> {
        let c = spec.p as f64 / spec.n as f64;
        match self {
            QuadraticFormKind::Lemma1Inv => Ok(lemma1_limits(c)?.0),
            QuadraticFormKind::Lemma1InvSq => Ok(lemma1_limits(c)?.1),
            QuadraticFormKind::Lemma2Cross | QuadraticFormKind::Lemma3Cross => {
                Ok(cross_resolvent_d(spec.n, spec.m, spec.p)?.d)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub reps: usize,
}

impl McEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let reps = xs.len();
        let mean = xs.iter().sum::<f64>() / reps as f64;
        let stderr = if reps > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            (var / reps as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, reps }
    }
}

/// Uniformly distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Seeded unit vector shared by every replication of a run.
fn probe_vector(p: usize, seed: u64) -> DVector<f64> {
    let q = haar_orthogonal(p, &mut stream_rng(seed, u64::MAX));
    q.column(0).into_owned()
}

fn draw_matrix<R: Rng + ?Sized>(p: usize, n: usize, tail: Tail, rng: &mut R) -> DMatrix<f64> {
    match tail {
        Tail::Normal => DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(rng)),
        Tail::T9 => {
            let t = StudentT::new(9.0).expect("valid degrees of freedom");
            let scale = (7.0f64 / 9.0).sqrt();
            DMatrix::from_fn(p, n, |_, _| t.sample(rng) * scale)
        }
    }
}

fn gram(x: &DMatrix<f64>, cols: usize, centered: bool) -> DMatrix<f64> {
    let block = x.columns(0, cols);
    let mut g = if centered {
        let mean = block.column_mean();
        let mut dev = block.into_owned();
        for mut col in dev.column_iter_mut() {
            col -= &mean;
        }
        &dev * dev.transpose()
    } else {
        block * block.transpose()
    };
    g /= cols as f64 - 1.0;
    g
}

fn chol(m: DMatrix<f64>, p: usize) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or(Error::Singular { p, n: None })
}

fn one_replication(spec: &GramSpec, kind: QuadraticFormKind, xi: &DVector<f64>, seed: u64, rep: usize) -> Result<f64> {
    let mut rng = stream_rng(seed, rep as u64);
    let p = spec.p;
    match kind {
        QuadraticFormKind::Lemma1Inv | QuadraticFormKind::Lemma1InvSq => {
            let x = draw_matrix(p, spec.n, spec.tail, &mut rng);
            let v = chol(gram(&x, spec.n, true), p)?;
            let u = v.solve(xi);
            Ok(if kind == QuadraticFormKind::Lemma1Inv {
                xi.dot(&u)
            } else {
                u.dot(&u)
            })
        }
        QuadraticFormKind::Lemma2Cross | QuadraticFormKind::Lemma3Cross => {
            let centered = kind == QuadraticFormKind::Lemma3Cross;
            let total = spec.n + spec.m;
            let x = draw_matrix(p, total, spec.tail, &mut rng);
            let v_n = chol(gram(&x, spec.n, centered), p)?;
            let v_nm = chol(gram(&x, total, centered), p)?;
            // V_n⁻¹ is symmetric, so ξᵀV_n⁻¹V_{n+m}⁻¹θ = (V_n⁻¹ξ)ᵀ(V_{n+m}⁻¹θ).
            Ok(v_n.solve(xi).dot(&v_nm.solve(xi)))
        }
    }
}

/// Monte Carlo mean of the quadratic form with `ξ = θ` a seeded unit vector.
/// Replication `k` draws from its own stream, so any execution policy gives
/// the same result.
pub fn mc_quadratic_form(
    spec: &GramSpec,
    kind: QuadraticFormKind,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<McEstimate> {
    if reps == 0 {
        return Err(Error::out_of_range("reps", 0.0, "reps >= 1"));
    }
    if spec.p == 0 || spec.p >= spec.n {
        return Err(Error::out_of_range("p", spec.p as f64, "0 < p < n"));
    }
    let xi = probe_vector(spec.p, seed);
    let samples = exec
        .map_indexed(reps, |rep| one_replication(spec, kind, &xi, seed, rep))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_samples(&samples))
}
