//! Alternating minimization over the relaxed `(Q, Z)` problem.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c, hermitian_eig, identity, CMat};
use crate::subproblem::{
    build_q_subproblem, build_z_subproblem, build_z_subproblem_on_face, eve_null_face, polish_q,
    polish_z, recover_hermitian, recover_on_face, solve, SolveStatus, SolverSettings,
    SubproblemError, Q_BLOCK, Z_BLOCK,
};
use crate::sysmodel::{
    constraint_residuals, total_power, ChannelSet, LiftedPair, ModelError, ScaleForms, SystemConfig,
};

/// Objective values at or below this count as converged outright.
const XI_FLOOR: f64 = 1e-12;
/// Constraint residual down to which a previous iterate is still accepted
/// when a half-step cannot be solved.
pub const HOLD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AltConfig {
    /// Sentinel objective before the first iteration.
    pub xi0: f64,
    /// Relative change at which the loop stops.
    pub tol: f64,
    pub n_max: usize,
    /// Total source power of the isotropic starting point.
    pub p_s: f64,
    /// After each pair of half-steps, also minimize jointly over the scales
    /// `(Q, Z) → (yQ, xZ)`, for the iterate and for its principal rank-one part.
    pub rebalance: bool,
}

impl Default for AltConfig {
    fn default() -> Self {
        Self {
            xi0: 1e3,
            tol: 1e-3,
            n_max: 30,
            p_s: 10.0,
            rebalance: true,
        }
    }
}

impl AltConfig {
    pub fn validate(&self) -> Result<(), AltError> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(AltError::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.n_max == 0 {
            return Err(AltError::Config("n_max must be >= 1".into()));
        }
        if !(self.p_s.is_finite() && self.p_s > 0.0) {
            return Err(AltError::Config(format!(
                "p_s must be positive, got {}",
                self.p_s
            )));
        }
        if !self.xi0.is_finite() {
            return Err(AltError::Config("xi0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AltError {
    #[error("invalid alternating configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AltStatus {
    Converged,
    IterationCapped,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSolution {
    pub q_big: CMat,
    pub z_big: CMat,
    /// `ξ⁽¹⁾, ξ⁽²⁾, …`
    pub xi_trace: Vec<f64>,
    pub iterations: usize,
    pub status: AltStatus,
    /// Restarts of the first step from a scaled-up starting point.
    pub init_retries: usize,
    /// Half-steps where the solver gave up but the previous iterate was
    /// still feasible and was kept.
    pub held_steps: usize,
    /// Iterations whose joint rescaling lowered the objective.
    pub rebalanced_steps: usize,
    /// Reason for an infeasible or failed exit.
    pub detail: Option<String>,
}

impl LiftedSolution {
    pub fn lifted(&self) -> LiftedPair {
        LiftedPair {
            q_big: self.q_big.clone(),
            z_big: self.z_big.clone(),
        }
    }

    /// Final objective, `NaN` when no iteration completed.
    pub fn xi(&self) -> f64 {
        self.xi_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn is_solved(&self) -> bool {
        matches!(
            self.status,
            AltStatus::Converged | AltStatus::IterationCapped
        )
    }
}

enum Step {
    Ok(CMat),
    Infeasible(String),
    Failed(String),
}

fn classify(res: Result<CMat, SubproblemError>, status: SolveStatus, what: &str) -> Step {
    match (res, status) {
        (Ok(x), _) => Step::Ok(x),
        (Err(_), SolveStatus::Infeasible) => {
            Step::Infeasible(format!("{what} subproblem infeasible"))
        }
        (Err(e), _) => Step::Failed(format!("{what} subproblem: {e}")),
    }
}

fn verified(
    step: Step,
    q: &CMat,
    z: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    what: &str,
) -> Step {
    let Step::Ok(_) = step else { return step };
    let r = worst_residual(q, z, ch, cfg);
    if r >= -HOLD_TOL {
        step
    } else {
        Step::Failed(format!(
            "{what} subproblem point violates a constraint by {:.3e}",
            -r
        ))
    }
}

fn z_step(q: &CMat, ch: &ChannelSet, cfg: &SystemConfig, s: &SolverSettings) -> Step {
    let m2 = cfg.n_relay * cfg.n_relay;
    let full = match build_z_subproblem(q, ch, cfg) {
        Ok(p) => {
            let out = solve(&p, s);
            let z = recover_hermitian(&out, Z_BLOCK, m2).map(|z| polish_z(q, &z, ch, cfg));
            match classify(z, out.status, "Z") {
                Step::Ok(z) => verified(Step::Ok(z.clone()), q, &z, ch, cfg, "Z"),
                other => other,
            }
        }
        Err(e) => Step::Failed(e.to_string()),
    };
    // The eavesdropper-null face, solved separately since the full program
    // often has no interior there.
    let on_face = eve_null_face(ch, cfg).and_then(|face| {
        let p = build_z_subproblem_on_face(q, &face, ch, cfg).ok()?;
        let out = solve(&p, s);
        let z = polish_z(q, &recover_on_face(&out, &face).ok()?, ch, cfg);
        (worst_residual(q, &z, ch, cfg) >= -HOLD_TOL).then_some(z)
    });
    let power = |z: &CMat| {
        total_power(
            &LiftedPair {
                q_big: q.clone(),
                z_big: z.clone(),
            },
            ch,
            cfg,
        )
        .unwrap_or(f64::INFINITY)
    };
    match (full, on_face) {
        (Step::Ok(a), Some(b)) => Step::Ok(if power(&b) < power(&a) { b } else { a }),
        (_, Some(b)) => Step::Ok(b),
        (full, None) => full,
    }
}

fn q_step(z: &CMat, ch: &ChannelSet, cfg: &SystemConfig, s: &SolverSettings) -> Step {
    let p = match build_q_subproblem(z, ch, cfg) {
        Ok(p) => p,
        Err(e) => return Step::Failed(e.to_string()),
    };
    let out = solve(&p, s);
    match classify(
        recover_hermitian(&out, Q_BLOCK, cfg.n_src).map(|q| polish_q(&q, z, ch, cfg)),
        out.status,
        "Q",
    ) {
        Step::Ok(q) => verified(Step::Ok(q.clone()), &q, z, ch, cfg, "Q"),
        other => other,
    }
}

/// Keeps the previous iterate when it is feasible and no worse than the new
/// one; exact minimization could never do worse than it.
fn settle(
    new: Step,
    prev: Option<(CMat, f64)>,
    power: impl Fn(&CMat) -> f64,
) -> Result<(CMat, bool), Step> {
    match (new, prev) {
        (Step::Ok(x), Some((p, p_pow))) => {
            if power(&x) <= p_pow {
                Ok((x, false))
            } else {
                Ok((p, true))
            }
        }
        (Step::Ok(x), None) => Ok((x, false)),
        (_, Some((p, _))) => Ok((p, true)),
        (other, None) => Err(other),
    }
}

/// Runs the loop from `Q⁽⁰⁾ = (p_s/N) I`.
pub fn run_alternating(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    ac: &AltConfig,
) -> Result<LiftedSolution, AltError> {
    let q0 = identity(cfg.n_src) * c(ac.p_s / cfg.n_src as f64, 0.0);
    run_alternating_from(ch, cfg, ac, q0)
}

/// Runs the loop from an explicit starting `Q`.
pub fn run_alternating_from(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    ac: &AltConfig,
    q0: CMat,
) -> Result<LiftedSolution, AltError> {
    let m2 = cfg.n_relay * cfg.n_relay;
    run_alternating_warm(
        ch,
        cfg,
        ac,
        LiftedPair {
            q_big: q0,
            z_big: CMat::zeros(m2, m2),
        },
    )
}

/// Runs the loop from a starting pair. A feasible starting `Z` competes with
/// the first Z-step, so the first objective never exceeds the start's power.
pub fn run_alternating_warm(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    ac: &AltConfig,
    start: LiftedPair,
) -> Result<LiftedSolution, AltError> {
    cfg.validate()?;
    ac.validate()?;
    ch.check(cfg)?;
    let settings = SolverSettings::default();
    let power = |q: &CMat, z: &CMat| {
        total_power(
            &LiftedPair {
                q_big: q.clone(),
                z_big: z.clone(),
            },
            ch,
            cfg,
        )
        .unwrap_or(f64::INFINITY)
    };

    let mut sol = LiftedSolution {
        q_big: start.q_big,
        z_big: start.z_big,
        xi_trace: Vec::new(),
        iterations: 0,
        status: AltStatus::IterationCapped,
        init_retries: 0,
        held_steps: 0,
        rebalanced_steps: 0,
        detail: None,
    };
    let mut xi_prev = ac.xi0;

    for n in 1..=ac.n_max {
        let mut z = z_step(&sol.q_big, ch, cfg, &settings);
        if n == 1 && matches!(z, Step::Infeasible(_)) {
            sol.init_retries += 1;
            sol.q_big *= c(10.0, 0.0);
            z = z_step(&sol.q_big, ch, cfg, &settings);
        }
        let prev_z = (still_feasible(&sol.q_big, &sol.z_big, ch, cfg))
            .then(|| (sol.z_big.clone(), power(&sol.q_big, &sol.z_big)));
        let (z, held) = match settle(z, prev_z, |z| power(&sol.q_big, z)) {
            Ok(v) => v,
            Err(step) => return Ok(abort(sol, step)),
        };
        sol.held_steps += held as usize;
        sol.z_big = z;

        let q = q_step(&sol.z_big, ch, cfg, &settings);
        let prev_q = still_feasible(&sol.q_big, &sol.z_big, ch, cfg)
            .then(|| (sol.q_big.clone(), power(&sol.q_big, &sol.z_big)));
        let (q, held) = match settle(q, prev_q, |q| power(q, &sol.z_big)) {
            Ok(v) => v,
            Err(step) => return Ok(abort(sol, step)),
        };
        sol.held_steps += held as usize;
        sol.q_big = q;
        sol.iterations = n;
        if ac.rebalance {
            let current = power(&sol.q_big, &sol.z_big);
            let best = [Some(sol.lifted()), principal_pair(&sol.q_big, &sol.z_big)]
                .into_iter()
                .flatten()
                .filter_map(|lp| {
                    let (y, x) = ScaleForms::of(&lp, ch, cfg).optimal_scales()?;
                    let (q, z) = (lp.q_big * c(y, 0.0), lp.z_big * c(x, 0.0));
                    let p = power(&q, &z);
                    (still_feasible(&q, &z, ch, cfg) && p < current).then_some((p, q, z))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, q, z)) = best {
                sol.q_big = q;
                sol.z_big = z;
                sol.rebalanced_steps += 1;
            }
        }

        let xi = power(&sol.q_big, &sol.z_big);
        if !xi.is_finite() {
            return Ok(finish(
                sol,
                AltStatus::Failed,
                "non-finite objective".into(),
            ));
        }
        sol.xi_trace.push(xi);
        if xi <= XI_FLOOR || (xi - xi_prev).abs() / xi <= ac.tol {
            sol.status = AltStatus::Converged;
            return Ok(sol);
        }
        xi_prev = xi;
    }
    Ok(sol)
}

/// `(λ₁u₁u₁^H, μ₁v₁v₁^H)` of the two lifted blocks.
fn principal_pair(q: &CMat, z: &CMat) -> Option<LiftedPair> {
    let top = |x: &CMat| {
        let (vals, vecs) = hermitian_eig(x).ok()?;
        let u = vecs.columns(0, 1).into_owned();
        Some(&u * u.adjoint() * c(vals[0].max(0.0), 0.0))
    };
    Some(LiftedPair {
        q_big: top(q)?,
        z_big: top(z)?,
    })
}

fn worst_residual(q: &CMat, z: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    let lp = LiftedPair {
        q_big: q.clone(),
        z_big: z.clone(),
    };
    constraint_residuals(&lp, ch, cfg).min()
}

fn still_feasible(q: &CMat, z: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> bool {
    worst_residual(q, z, ch, cfg) >= -HOLD_TOL
}

fn abort(sol: LiftedSolution, step: Step) -> LiftedSolution {
    match step {
        Step::Infeasible(msg) => finish(sol, AltStatus::Infeasible, msg),
        Step::Failed(msg) => finish(sol, AltStatus::Failed, msg),
        Step::Ok(_) => unreachable!("settled steps never abort"),
    }
}

fn finish(mut sol: LiftedSolution, status: AltStatus, detail: String) -> LiftedSolution {
    sol.status = status;
    sol.detail = Some(detail);
    sol
}
