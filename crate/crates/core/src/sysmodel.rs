//! Two-hop relay wiretap model: configuration, channel draws, and the power,
//! SNR and worst-case bound formulas in both direct `(q, W)` and lifted
//! `(Q, Z)` form.
//!
//! The relay vector is `w = vec(W)` (column-major) and `Z = w w^H`. Under that
//! convention the quadratic forms used throughout are
//!
//! * `‖W x‖² = w^H ((x x^H)ᵀ ⊗ I_M) w`
//! * `|g W x|² = w^H ((x x^H)ᵀ ⊗ g^H g) w`
//! * `‖g W‖² = w^H (I_M ⊗ g^H g) w`
//!
//! and the first-order error terms go through `T_f` with `F = W`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, ball_lin_extreme, build_tf, c, identity, kron, trace_re, CMat, PermutationMatrix, Sense,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid system configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("worst-case error direction needs eps > 0")]
    ZeroRadius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Source antennas N.
    pub n_src: usize,
    /// Relay antennas M.
    pub n_relay: usize,
    pub sigma2_r: f64,
    pub sigma2_b: f64,
    pub sigma2_e: f64,
    /// Bob SNR floor (linear).
    pub r_b: f64,
    /// Eavesdropper SNR cap (linear).
    pub r_e: f64,
    /// Radius of the relay→eavesdropper channel error ball.
    pub eps: f64,
    /// Carry the `r_e σ_e²` constant of the worst-case eavesdropper constraint.
    /// Off by default, which reproduces the constraint in its printed form.
    pub eve_constraint_includes_sigma_e: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_src: 3,
            n_relay: 3,
            sigma2_r: 1.0,
            sigma2_b: 1.0,
            sigma2_e: 1.0,
            r_b: db_to_linear(6.0),
            r_e: 1.0,
            eps: 0.01,
            eve_constraint_includes_sigma_e: false,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.n_src == 0 || self.n_relay == 0 {
            return bad("antenna counts must be >= 1");
        }
        for (name, v) in [
            ("sigma2_r", self.sigma2_r),
            ("sigma2_b", self.sigma2_b),
            ("sigma2_e", self.sigma2_e),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.r_b.is_finite() && self.r_b > 0.0) {
            return bad("r_b must be positive");
        }
        if !(self.r_e.is_finite() && self.r_e > 0.0) {
            return bad("r_e must be positive");
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return bad("eps must be nonnegative");
        }
        Ok(())
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            eps,
            ..self.clone()
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Source→relay, M×N.
    pub h: CMat,
    /// Relay→Bob, 1×M.
    pub g_b: CMat,
    /// Estimated relay→eavesdropper, 1×M.
    pub g_e_hat: CMat,
}

impl ChannelSet {
    pub fn check(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        let (m, n) = (cfg.n_relay, cfg.n_src);
        if self.h.shape() != (m, n) || self.g_b.shape() != (1, m) || self.g_e_hat.shape() != (1, m)
        {
            return Err(ModelError::Dimension(format!(
                "channels H {:?}, g_b {:?}, g_e {:?} do not match M={m}, N={n}",
                self.h.shape(),
                self.g_b.shape(),
                self.g_e_hat.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingPair {
    /// Source beamformer, N×1.
    pub q: CMat,
    /// Relay precoder, M×M.
    pub w_mat: CMat,
}

impl BeamformingPair {
    pub fn w(&self) -> CMat {
        linalg::vec(&self.w_mat)
    }

    pub fn from_vectors(q: CMat, w: &CMat, m: usize) -> Self {
        Self {
            q,
            w_mat: linalg::unvec(w, m, m),
        }
    }

    pub fn lift(&self) -> LiftedPair {
        let w = self.w();
        LiftedPair {
            q_big: &self.q * self.q.adjoint(),
            z_big: &w * w.adjoint(),
        }
    }

    fn check(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        let m = cfg.n_relay;
        if self.q.shape() != (cfg.n_src, 1) || self.w_mat.shape() != (m, m) {
            return Err(ModelError::Dimension(format!(
                "q {:?} / W {:?} vs N={}, M={m}",
                self.q.shape(),
                self.w_mat.shape(),
                cfg.n_src
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPair {
    /// N×N.
    pub q_big: CMat,
    /// M²×M².
    pub z_big: CMat,
}

impl LiftedPair {
    fn check(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        let (n, m2) = (cfg.n_src, cfg.n_relay * cfg.n_relay);
        if self.q_big.shape() != (n, n) || self.z_big.shape() != (m2, m2) {
            return Err(ModelError::Dimension(format!(
                "Q {:?} / Z {:?} vs N={n}, M²={m2}",
                self.q_big.shape(),
                self.z_big.shape()
            )));
        }
        Ok(())
    }
}

/// Either parametrization of a design; the power and SNR formulas accept both.
#[derive(Debug, Clone, Copy)]
pub enum Design<'a> {
    Direct(&'a BeamformingPair),
    Lifted(&'a LiftedPair),
}

impl<'a> From<&'a BeamformingPair> for Design<'a> {
    fn from(p: &'a BeamformingPair) -> Self {
        Design::Direct(p)
    }
}

impl<'a> From<&'a LiftedPair> for Design<'a> {
    fn from(p: &'a LiftedPair) -> Self {
        Design::Lifted(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EveError {
    /// Δg_e, 1×M.
    pub delta: CMat,
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        c(
            s * rng.sample::<f64, _>(StandardNormal),
            s * rng.sample::<f64, _>(StandardNormal),
        )
    })
}

/// i.i.d. CN(0, 1) channel entries.
pub fn sample_channels<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ChannelSet {
    let (m, n) = (cfg.n_relay, cfg.n_src);
    let h = complex_normal(rng, m, n);
    let g_b = complex_normal(rng, 1, m);
    let g_e_hat = complex_normal(rng, 1, m);
    ChannelSet { h, g_b, g_e_hat }
}

/// Uniform draw from the complex ball `‖Δ‖ ≤ eps` in C^M.
pub fn sample_eve_error<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> EveError {
    let m = cfg.n_relay;
    if cfg.eps == 0.0 {
        return EveError {
            delta: CMat::zeros(1, m),
        };
    }
    let dir = loop {
        let d = complex_normal(rng, 1, m);
        let norm = d.norm();
        if norm > 0.0 {
            break d / c(norm, 0.0);
        }
    };
    let u: f64 = rng.gen();
    let radius = cfg.eps * u.powf(1.0 / (2 * m) as f64);
    EveError {
        delta: dir * c(radius, 0.0),
    }
}

fn hqh(q_big: &CMat, ch: &ChannelSet) -> CMat {
    &ch.h * q_big * ch.h.adjoint()
}

fn gram(g: &CMat) -> CMat {
    g.adjoint() * g
}

/// `(HQH^H + σ_r² I)ᵀ ⊗ I_M`, so relay power is `Tr(Z · kernel)`.
pub fn relay_power_kernel(q_big: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> CMat {
    let m = cfg.n_relay;
    let x = hqh(q_big, ch) + identity(m) * c(cfg.sigma2_r, 0.0);
    kron(&x.transpose(), &identity(m))
}

/// `(HQH^H)ᵀ ⊗ g^H g` for a relay→receiver channel `g`.
pub fn signal_kernel(q_big: &CMat, ch: &ChannelSet, g: &CMat) -> CMat {
    kron(&hqh(q_big, ch).transpose(), &gram(g))
}

/// `σ_r² (I_M ⊗ g^H g)`.
pub fn noise_kernel(cfg: &SystemConfig, g: &CMat) -> CMat {
    kron(&identity(cfg.n_relay), &gram(g)) * c(cfg.sigma2_r, 0.0)
}

pub fn source_power(lp: &LiftedPair) -> f64 {
    trace_re(&lp.q_big)
}

pub fn relay_power<'a>(
    d: impl Into<Design<'a>>,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    ch.check(cfg)?;
    match d.into() {
        Design::Direct(p) => {
            p.check(cfg)?;
            let forwarded = &p.w_mat * &ch.h * &p.q;
            Ok(forwarded.norm_squared() + cfg.sigma2_r * p.w_mat.norm_squared())
        }
        Design::Lifted(lp) => {
            lp.check(cfg)?;
            Ok(trace_re(
                &(&lp.z_big * relay_power_kernel(&lp.q_big, ch, cfg)),
            ))
        }
    }
}

pub fn total_power<'a>(
    d: impl Into<Design<'a>>,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    let d = d.into();
    let src = match d {
        Design::Direct(p) => p.q.norm_squared(),
        Design::Lifted(lp) => source_power(lp),
    };
    Ok(src + relay_power(d, ch, cfg)?)
}

/// Numerator and denominator of Bob's SNR.
pub fn snr_bob_parts<'a>(
    d: impl Into<Design<'a>>,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<(f64, f64), ModelError> {
    ch.check(cfg)?;
    match d.into() {
        Design::Direct(p) => {
            p.check(cfg)?;
            let gw = &ch.g_b * &p.w_mat;
            let num = (&gw * &ch.h * &p.q)[0].norm_sqr();
            Ok((num, cfg.sigma2_r * gw.norm_squared() + cfg.sigma2_b))
        }
        Design::Lifted(lp) => {
            lp.check(cfg)?;
            let num = trace_re(&(&lp.z_big * signal_kernel(&lp.q_big, ch, &ch.g_b)));
            let den = trace_re(&(&lp.z_big * noise_kernel(cfg, &ch.g_b))) + cfg.sigma2_b;
            Ok((num, den))
        }
    }
}

pub fn snr_bob<'a>(
    d: impl Into<Design<'a>>,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    let (num, den) = snr_bob_parts(d, ch, cfg)?;
    Ok(num / den)
}

/// Eavesdropper SNR at the true channel `ḡ_e + Δ`, always in direct form.
pub fn snr_eve_exact(
    pair: &BeamformingPair,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    err: &EveError,
) -> f64 {
    let (num, den) = eve_exact_parts(pair, ch, cfg, err);
    num / den
}

pub fn eve_exact_parts(
    pair: &BeamformingPair,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    err: &EveError,
) -> (f64, f64) {
    let g_e = &ch.g_e_hat + &err.delta;
    let gw = &g_e * &pair.w_mat;
    let num = (&gw * &ch.h * &pair.q)[0].norm_sqr();
    (num, cfg.sigma2_r * gw.norm_squared() + cfg.sigma2_e)
}

/// Evaluates `(vec(X)ᵀ ⊗ (ḡ* ⊗ I_M)) · T_f · vec(Z)`, the linear extension of
/// `W X W^H ḡ^H` to lifted `Z`.
#[derive(Debug, Clone)]
pub struct EveLinearMap {
    m: usize,
    tf: PermutationMatrix,
    /// `ḡ* ⊗ I_M`, M×M².
    g_kron: CMat,
}

impl EveLinearMap {
    pub fn new(g_e_hat: &CMat) -> Self {
        let m = g_e_hat.ncols();
        Self {
            m,
            tf: build_tf(m, m),
            g_kron: kron(&linalg::conj(g_e_hat), &identity(m)),
        }
    }

    /// `(a ⊗ B) vec(T) = vec(B T aᵀ)` with `a = vec(X)ᵀ`, so the product is
    /// `(ḡ* ⊗ I) · unvec(T_f vec Z) · vec(X)`.
    pub fn apply(&self, x: &CMat, z: &CMat) -> CMat {
        let m2 = self.m * self.m;
        let t = self.tf.apply(&linalg::vec(z));
        let t = linalg::unvec(&t, m2, m2);
        &self.g_kron * t * linalg::vec(x)
    }

    /// The same product built literally with dense Kronecker factors.
    pub fn apply_dense(&self, x: &CMat, z: &CMat) -> CMat {
        let op = kron(&linalg::vec(x).transpose(), &self.g_kron);
        op * self.tf.apply(&linalg::vec(z))
    }
}

/// `u(Q, Z)`: numerator error coefficient, `W HQH^H W^H ḡ^H` on rank-one points.
pub fn eve_u(map: &EveLinearMap, q_big: &CMat, z_big: &CMat, ch: &ChannelSet) -> CMat {
    map.apply(&hqh(q_big, ch), z_big)
}

/// `v(Z)`: denominator error coefficient, `W W^H ḡ^H` on rank-one points.
pub fn eve_v(map: &EveLinearMap, z_big: &CMat) -> CMat {
    map.apply(&identity(map.m), z_big)
}

/// Worst-case (first-order) upper bound on the eavesdropper SNR numerator.
pub fn eve_num_ub(lp: &LiftedPair, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    let map = EveLinearMap::new(&ch.g_e_hat);
    let nominal = trace_re(&(&lp.z_big * signal_kernel(&lp.q_big, ch, &ch.g_e_hat)));
    nominal + 2.0 * cfg.eps * eve_u(&map, &lp.q_big, &lp.z_big, ch).norm()
}

/// Lower bound on the eavesdropper SNR denominator over the error ball.
///
/// The linear error term of `σ_r² g_e W W^H g_e^H` carries `σ_r²`, so the
/// norm penalty is `2 ε σ_r² ‖v(Z)‖`.
pub fn eve_den_lb(lp: &LiftedPair, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    let map = EveLinearMap::new(&ch.g_e_hat);
    let nominal = trace_re(&(&lp.z_big * noise_kernel(cfg, &ch.g_e_hat)));
    nominal - 2.0 * cfg.eps * cfg.sigma2_r * eve_v(&map, &lp.z_big).norm() + cfg.sigma2_e
}

/// `A(Q) = (HQH^H)ᵀ ⊗ G_b − r_b σ_r² (I ⊗ G_b)`; Bob's floor reads `Tr(ZA) ≥ r_b σ_b²`.
pub fn matrix_a(q_big: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> CMat {
    signal_kernel(q_big, ch, &ch.g_b) - noise_kernel(cfg, &ch.g_b) * c(cfg.r_b, 0.0)
}

/// `B(Q) = r_e σ_r² (I ⊗ Ḡ_e) − (HQH^H)ᵀ ⊗ Ḡ_e`.
pub fn matrix_b(q_big: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> CMat {
    noise_kernel(cfg, &ch.g_e_hat) * c(cfg.r_e, 0.0) - signal_kernel(q_big, ch, &ch.g_e_hat)
}

/// Constant added to `Tr(ZB)` in the eavesdropper constraint.
pub fn eve_constraint_offset(cfg: &SystemConfig) -> f64 {
    if cfg.eve_constraint_includes_sigma_e {
        cfg.r_e * cfg.sigma2_e
    } else {
        0.0
    }
}

/// Residuals of the two relaxed constraints at a lifted point; both must be
/// `≥ 0` for feasibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintResiduals {
    /// `Tr(ZA) − r_b σ_b²`.
    pub bob: f64,
    /// `Tr(ZB) + offset − 2ε‖u‖ − 2 r_e ε σ_r² ‖v‖`.
    pub eve: f64,
}

impl ConstraintResiduals {
    pub fn min(&self) -> f64 {
        self.bob.min(self.eve)
    }
}

pub fn constraint_residuals(
    lp: &LiftedPair,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> ConstraintResiduals {
    let map = EveLinearMap::new(&ch.g_e_hat);
    let bob = trace_re(&(&lp.z_big * matrix_a(&lp.q_big, ch, cfg))) - cfg.r_b * cfg.sigma2_b;
    let u = eve_u(&map, &lp.q_big, &lp.z_big, ch).norm();
    let v = eve_v(&map, &lp.z_big).norm();
    let eve = trace_re(&(&lp.z_big * matrix_b(&lp.q_big, ch, cfg))) + eve_constraint_offset(cfg)
        - 2.0 * cfg.eps * u
        - 2.0 * cfg.r_e * cfg.eps * cfg.sigma2_r * v;
    ConstraintResiduals { bob, eve }
}

/// Scalar ingredients of the scaled pair `(yQ, xZ)`.
///
/// Total power is `yT + x(yP_s + P_n)`, Bob's constraint `x(yS − N) ≥ R`,
/// the eavesdropper's `x(E − yL) + off ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleForms {
    /// `Tr Q`.
    pub t: f64,
    /// `Tr(Z (HQH^H)ᵀ ⊗ I)`.
    pub p_s: f64,
    /// `σ_r² Tr Z`.
    pub p_n: f64,
    /// `Tr(Z (HQH^H)ᵀ ⊗ G_b)`.
    pub s: f64,
    /// `r_b σ_r² Tr(Z (I ⊗ G_b))`.
    pub n: f64,
    /// `r_b σ_b²`.
    pub r: f64,
    /// `r_e σ_r² Tr(Z (I ⊗ Ḡ_e)) − 2 r_e ε σ_r² ‖v‖`.
    pub e: f64,
    /// `Tr(Z (HQH^H)ᵀ ⊗ Ḡ_e) + 2ε‖u‖`.
    pub l: f64,
    pub off: f64,
}

impl ScaleForms {
    pub fn of(lp: &LiftedPair, ch: &ChannelSet, cfg: &SystemConfig) -> Self {
        let z = &lp.z_big;
        let tr = |k: &CMat| trace_re(&(z * k));
        let map = EveLinearMap::new(&ch.g_e_hat);
        let p_n = cfg.sigma2_r * trace_re(z);
        Self {
            t: trace_re(&lp.q_big),
            p_s: tr(&relay_power_kernel(&lp.q_big, ch, cfg)) - p_n,
            p_n,
            s: tr(&signal_kernel(&lp.q_big, ch, &ch.g_b)),
            n: cfg.r_b * tr(&noise_kernel(cfg, &ch.g_b)),
            r: cfg.r_b * cfg.sigma2_b,
            e: cfg.r_e * tr(&noise_kernel(cfg, &ch.g_e_hat))
                - 2.0 * cfg.r_e * cfg.eps * cfg.sigma2_r * eve_v(&map, z).norm(),
            l: tr(&signal_kernel(&lp.q_big, ch, &ch.g_e_hat))
                + 2.0 * cfg.eps * eve_u(&map, &lp.q_big, z, ch).norm(),
            off: eve_constraint_offset(cfg),
        }
    }

    pub fn power(&self, y: f64, x: f64) -> f64 {
        y * self.t + x * (y * self.p_s + self.p_n)
    }

    /// Power-minimizing feasible `(y, x)`, if any.
    ///
    /// Bob is tight at the optimum, so `x = R/(yS − N)` and the power becomes
    /// convex in `y` with stationary point `(N + √(R(P_s N + S P_n)/T))/S`,
    /// clamped to the interval where the eavesdropper constraint holds.
    pub fn optimal_scales(&self) -> Option<(f64, f64)> {
        let ScaleForms {
            t,
            p_s,
            p_n,
            s,
            n,
            r,
            e,
            l,
            off,
        } = *self;
        if !(t > 0.0 && s > 0.0) {
            return None;
        }
        let curvature = r * (p_s * n + s * p_n) / t;
        if !(curvature > 0.0) {
            return None;
        }
        let mut y = (n + curvature.sqrt()) / s;
        // R(E − yL) + off(yS − N) ≥ 0  ⇔  y·a ≥ b
        let (a, b) = (off * s - r * l, off * n - r * e);
        if a > 0.0 {
            y = y.max(b / a);
        } else if a < 0.0 {
            y = y.min(b / a);
        } else if b > 0.0 {
            return None;
        }
        if !(y.is_finite() && y * s > n) {
            return None;
        }
        let x = r / (y * s - n);
        (x.is_finite() && x > 0.0).then_some((y, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundTarget {
    Numerator,
    Denominator,
}

/// The error on the boundary of the ε-ball that maximizes the numerator's
/// linear term or minimizes the denominator's.
pub fn worst_delta(
    pair: &BeamformingPair,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    target: BoundTarget,
) -> Result<EveError, ModelError> {
    if cfg.eps <= 0.0 {
        return Err(ModelError::ZeroRadius);
    }
    ch.check(cfg)?;
    pair.check(cfg)?;
    let gh = ch.g_e_hat.adjoint();
    // Linear term is 2 Re(Δ y) = 2 Re(x^H y) with x = Δ^H.
    let (y, sense) = match target {
        BoundTarget::Numerator => {
            let x = &ch.h * &pair.q;
            (
                &pair.w_mat * &x * x.adjoint() * pair.w_mat.adjoint() * gh,
                Sense::Max,
            )
        }
        BoundTarget::Denominator => (&pair.w_mat * pair.w_mat.adjoint() * gh, Sense::Min),
    };
    let (_, x) = ball_lin_extreme(&y, cfg.eps, sense);
    Ok(EveError { delta: x.adjoint() })
}

/// Largest eigenvalue of `W HQH^H W^H` for rank-one `Q = qq^H`, the scale of
/// the quadratic error term the numerator bound drops.
pub fn dropped_quadratic_scale(pair: &BeamformingPair, ch: &ChannelSet) -> f64 {
    let x = &pair.w_mat * &ch.h * &pair.q;
    x.norm_squared()
}
