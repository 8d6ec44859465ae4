//! Rank-one precoders from a relaxed `(Q, Z)`: eigen-extraction, or Gaussian
//! randomization with constraint-restoring scale factors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, c, CMat, LinalgError};
use crate::sysmodel::{
    constraint_residuals, total_power, BeamformingPair, ChannelSet, ConstraintResiduals,
    LiftedPair, ModelError, ScaleForms, SystemConfig,
};

/// Residual down to which a candidate counts as feasible.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundingConfig {
    /// Number of Gaussian candidates K.
    pub k_samples: usize,
    /// `λ₂/λ₁` at or below which a matrix counts as rank one.
    pub rank_tol: f64,
    pub seed: u64,
}

impl Default for RoundingConfig {
    fn default() -> Self {
        Self {
            k_samples: 100,
            rank_tol: 1e-6,
            seed: 0,
        }
    }
}

impl RoundingConfig {
    pub fn validate(&self) -> Result<(), RoundingError> {
        if self.k_samples == 0 {
            return Err(RoundingError::Config("k_samples must be >= 1".into()));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(RoundingError::Config(format!(
                "rank_tol must lie in (0, 1), got {}",
                self.rank_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoundingError {
    #[error("invalid rounding configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSource {
    Eigen,
    Randomized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSolution {
    pub pair: BeamformingPair,
    pub total_power: f64,
    pub feasible: bool,
    pub alpha: f64,
    pub beta: f64,
    pub source: CandidateSource,
    /// Position in the candidate pool; the eigen candidate is 0.
    pub index: usize,
    pub residuals: ConstraintResiduals,
    /// Pool members that ended feasible, scaled or not.
    pub n_feasible: usize,
    pub n_unsalvageable: usize,
}

/// `√λ₁ u₁` when `λ₂/λ₁ ≤ tol`.
pub fn rank_one_extract(x: &CMat, tol: f64) -> Result<Option<CMat>, LinalgError> {
    let (values, vectors) = linalg::hermitian_eig(x)?;
    let Some(&l1) = values.first() else {
        return Ok(None);
    };
    if l1 <= 0.0 {
        return Ok(None);
    }
    let l2 = values.get(1).copied().unwrap_or(0.0).max(0.0);
    if l2 / l1 > tol {
        return Ok(None);
    }
    Ok(Some(vectors.columns(0, 1).into_owned() * c(l1.sqrt(), 0.0)))
}

/// Leading scaled eigenvector, whatever the rank.
fn principal(x: &CMat) -> Result<CMat, LinalgError> {
    let (values, vectors) = linalg::hermitian_eig(x)?;
    let l1 = values.first().copied().unwrap_or(0.0).max(0.0);
    Ok(vectors.columns(0, 1).into_owned() * c(l1.sqrt(), 0.0))
}

fn complex_normal(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(n, 1, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re * s, im * s)
    })
}

/// K draws `q̃ ~ CN(0, Q)`, `w̃ ~ CN(0, Z)`.
pub fn gaussian_candidates(
    q_opt: &CMat,
    z_opt: &CMat,
    rc: &RoundingConfig,
) -> Result<Vec<(CMat, CMat)>, RoundingError> {
    rc.validate()?;
    let fq = linalg::psd_factor(q_opt)?;
    let fz = linalg::psd_factor(z_opt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
    Ok((0..rc.k_samples)
        .map(|_| {
            let q = &fq * complex_normal(&mut rng, q_opt.nrows());
            let w = &fz * complex_normal(&mut rng, z_opt.nrows());
            (q, w)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledCandidate {
    pub alpha: f64,
    pub beta: f64,
    /// `β q̃`.
    pub q: CMat,
    /// `α w̃`.
    pub w: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unsalvageable {
    /// No positive `α` reaches Bob's floor.
    Bob,
    /// No positive `β` meets the eavesdropper cap.
    Eavesdropper,
}

fn forms(q: &CMat, w: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> ScaleForms {
    ScaleForms::of(
        &LiftedPair {
            q_big: q * q.adjoint(),
            z_big: w * w.adjoint(),
        },
        ch,
        cfg,
    )
}

/// `α` forces Bob's constraint to equality at `Q = q̃q̃^H`; `β` then forces
/// the eavesdropper constraint to equality at `Z = α²w̃w̃^H`, with the
/// `Q`-dependent terms taken at `β² q̃q̃^H`.
pub fn scale_candidate(
    q: &CMat,
    w: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<ScaledCandidate, Unsalvageable> {
    let f = forms(q, w, ch, cfg);
    let a = f.s - f.n;
    if !(a > 0.0) {
        return Err(Unsalvageable::Bob);
    }
    let alpha2 = f.r / a;
    // All Z-linear terms scale by α².
    let num = alpha2 * f.e + f.off;
    let den = alpha2 * f.l;
    let beta = if den > 0.0 && num > 0.0 {
        (num / den).sqrt()
    } else if den <= 0.0 && num >= 0.0 {
        // No load on the eavesdropper: any β works, and β = 1 keeps Bob's equality.
        1.0
    } else {
        return Err(Unsalvageable::Eavesdropper);
    };
    let alpha = alpha2.sqrt();
    Ok(ScaledCandidate {
        alpha,
        beta,
        q: q * c(beta, 0.0),
        w: w * c(alpha, 0.0),
    })
}

/// Scale factors putting both constraints at equality simultaneously.
pub fn joint_scale(
    q: &CMat,
    w: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Option<ScaledCandidate> {
    let f = forms(q, w, ch, cfg);
    if !(f.l > 0.0 && f.s > 0.0) {
        return None;
    }
    // x(y S − N) = R and x(E − y L) + off = 0 with x = α², y = β².
    let ratio = f.s / f.l;
    let x = (f.r - f.off * ratio) / (f.e * ratio - f.n);
    if !(x.is_finite() && x > 0.0) {
        return None;
    }
    let y = (f.e + f.off / x) / f.l;
    if !(y.is_finite() && y > 0.0) {
        return None;
    }
    let (alpha, beta) = (x.sqrt(), y.sqrt());
    Some(ScaledCandidate {
        alpha,
        beta,
        q: q * c(beta, 0.0),
        w: w * c(alpha, 0.0),
    })
}

/// Cheapest feasible `(α, β)`; Bob tight, the eavesdropper cap possibly slack.
pub fn optimal_scale(
    q: &CMat,
    w: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Option<ScaledCandidate> {
    let (y, x) = forms(q, w, ch, cfg).optimal_scales()?;
    let (alpha, beta) = (x.sqrt(), y.sqrt());
    Some(ScaledCandidate {
        alpha,
        beta,
        q: q * c(beta, 0.0),
        w: w * c(alpha, 0.0),
    })
}

struct Evaluated {
    pair: BeamformingPair,
    power: f64,
    residuals: ConstraintResiduals,
    alpha: f64,
    beta: f64,
}

impl Evaluated {
    fn feasible(&self) -> bool {
        self.residuals.min() >= -FEAS_TOL
    }
}

fn evaluate(
    q: &CMat,
    w: &CMat,
    alpha: f64,
    beta: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Option<Evaluated> {
    let pair = BeamformingPair::from_vectors(q.clone(), w, cfg.n_relay);
    let lp: LiftedPair = pair.lift();
    let residuals = constraint_residuals(&lp, ch, cfg);
    let power = total_power(&pair, ch, cfg).ok()?;
    if !power.is_finite() || !residuals.min().is_finite() {
        return None;
    }
    Some(Evaluated {
        pair,
        power,
        residuals,
        alpha,
        beta,
    })
}

/// Best version of one candidate: as drawn when already feasible, otherwise
/// the cheapest feasible of its sequential, joint and optimal rescalings.
fn settle(q: &CMat, w: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> (Option<Evaluated>, bool) {
    let raw = evaluate(q, w, 1.0, 1.0, ch, cfg);
    if let Some(e) = &raw {
        if e.feasible() {
            return (raw, false);
        }
    }
    let seq = scale_candidate(q, w, ch, cfg);
    let unsalvageable = seq.is_err();
    let mut options: Vec<Evaluated> = Vec::new();
    if let Ok(s) = seq {
        options.extend(evaluate(&s.q, &s.w, s.alpha, s.beta, ch, cfg));
    }
    if let Some(s) = joint_scale(q, w, ch, cfg) {
        options.extend(evaluate(&s.q, &s.w, s.alpha, s.beta, ch, cfg));
    }
    if let Some(s) = optimal_scale(q, w, ch, cfg) {
        options.extend(evaluate(&s.q, &s.w, s.alpha, s.beta, ch, cfg));
    }
    let best_feasible = options
        .into_iter()
        .filter(Evaluated::feasible)
        .min_by(|a, b| a.power.total_cmp(&b.power));
    match best_feasible {
        Some(e) => (Some(e), false),
        None => (raw, unsalvageable),
    }
}

/// Picks the cheapest feasible precoder among the eigen candidate and K
/// Gaussian draws. Rank-one inputs return the eigen pair directly when it is
/// feasible.
pub fn randomize_select(
    q_opt: &CMat,
    z_opt: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    rc: &RoundingConfig,
) -> Result<PrecoderSolution, RoundingError> {
    rc.validate()?;
    cfg.validate()?;
    ch.check(cfg)?;

    let q_eig = principal(q_opt)?;
    let w_eig = principal(z_opt)?;
    let rank_one = rank_one_extract(q_opt, rc.rank_tol)?.is_some()
        && rank_one_extract(z_opt, rc.rank_tol)?.is_some();
    if rank_one {
        if let Some(e) = evaluate(&q_eig, &w_eig, 1.0, 1.0, ch, cfg).filter(Evaluated::feasible) {
            return Ok(finish(e, CandidateSource::Eigen, 0, 1, 0));
        }
    }

    let mut pool = vec![(q_eig, w_eig)];
    pool.extend(gaussian_candidates(q_opt, z_opt, rc)?);

    let mut best: Option<(usize, Evaluated)> = None;
    let mut fallback: Option<(usize, Evaluated)> = None;
    let (mut n_feasible, mut n_unsalvageable) = (0, 0);
    for (i, (q, w)) in pool.iter().enumerate() {
        let (e, unsalvageable) = settle(q, w, ch, cfg);
        n_unsalvageable += unsalvageable as usize;
        let Some(e) = e else { continue };
        if e.feasible() {
            n_feasible += 1;
            if best.as_ref().map_or(true, |(_, b)| e.power < b.power) {
                best = Some((i, e));
            }
        } else if fallback
            .as_ref()
            .map_or(true, |(_, b)| e.residuals.min() > b.residuals.min())
        {
            fallback = Some((i, e));
        }
    }
    let (i, e) = best
        .or(fallback)
        .ok_or_else(|| RoundingError::Config("no candidate produced a finite evaluation".into()))?;
    let source = if i == 0 {
        CandidateSource::Eigen
    } else {
        CandidateSource::Randomized
    };
    Ok(finish(e, source, i, n_feasible, n_unsalvageable))
}

fn finish(
    e: Evaluated,
    source: CandidateSource,
    index: usize,
    n_feasible: usize,
    n_unsalvageable: usize,
) -> PrecoderSolution {
    PrecoderSolution {
        feasible: e.feasible(),
        pair: e.pair,
        total_power: e.power,
        alpha: e.alpha,
        beta: e.beta,
        source,
        index,
        residuals: e.residuals,
        n_feasible,
        n_unsalvageable,
    }
}
