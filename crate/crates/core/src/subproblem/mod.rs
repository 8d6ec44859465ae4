//! The two convex halves of the relaxed joint problem.
//!
//! With `Q` fixed the problem is a conic program in `Z`; with `Z` fixed it is
//! one in `Q`. Both carry the Bob floor `Tr(ZA) ≥ r_b σ_b²` and the worst-case
//! eavesdropper cap `Tr(ZB) ≥ 2ε‖u‖ + 2 r_e ε σ_r² ‖v‖`, plus PSD cones.

pub mod conic;
pub mod solver;

use thiserror::Error;

use crate::linalg::{self, c, identity, kron, trace_re, CMat, LinalgError};
use crate::sysmodel::{
    constraint_residuals, eve_constraint_offset, eve_u, eve_v, matrix_a, matrix_b, noise_kernel,
    relay_power_kernel, signal_kernel, ChannelSet, EveLinearMap, LiftedPair, ModelError,
    SystemConfig,
};
pub use conic::{
    AffineExpr, BlockId, BlockKind, ConicError, ConicProblem, SocConstraint, VarBlock,
};
pub use solver::{solve, BlockValue, SolveOutcome, SolveStatus, SolverSettings, SolverStats};

pub const Z_BLOCK: &str = "Z";
pub const Y_BLOCK: &str = "Y";
pub const Q_BLOCK: &str = "Q";
pub const T_U_BLOCK: &str = "t_u";
pub const T_V_BLOCK: &str = "t_v";

/// Embedding defect repaired silently by [`recover_hermitian`].
pub const STRUCTURE_TOL: f64 = 1e-6;
/// Relative negative-eigenvalue slack accepted on a recovered block.
pub const RECOVER_PSD_TOL: f64 = 1e-6;
/// Coefficients below this fraction of the largest objective coefficient are
/// treated as zero in constraint rows.
pub const PRUNE_REL_TOL: f64 = 1e-12;
/// Largest relative change a feasibility repair may make to an iterate.
pub const REPAIR_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubproblemError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cannot read a solution from a {0:?} outcome")]
    NotOptimal(SolveStatus),
    #[error("block `{0}` missing or not Hermitian")]
    MissingBlock(String),
    #[error("embedded block deviates from Hermitian structure by {0:.3e}")]
    StructuralDefect(f64),
    #[error("recovered block has eigenvalue {0:.3e}")]
    NotPsd(f64),
}

fn require_square(x: &CMat, n: usize, what: &str) -> Result<(), SubproblemError> {
    if x.shape() != (n, n) {
        return Err(SubproblemError::Dimension(format!(
            "{what} is {:?}, expected {n}x{n}",
            x.shape()
        )));
    }
    Ok(())
}

/// Convex program in `Z` at fixed `Q`.
///
/// Blocks: Hermitian `Z` (M²×M²) and, when `eps > 0`, epigraph scalars `t_u`,
/// `t_v` bounding `‖u(Z)‖` and `‖v(Z)‖`. The objective carries `Tr(Q)` as a
/// constant so its value is the full relaxed power.
pub fn build_z_subproblem(
    q_fixed: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<ConicProblem, SubproblemError> {
    cfg.validate()?;
    ch.check(cfg)?;
    require_square(q_fixed, cfg.n_src, "fixed Q")?;
    let m2 = cfg.n_relay * cfg.n_relay;

    let mut p = ConicProblem::new();
    let z = p.add_block(Z_BLOCK, BlockKind::Hermitian(m2))?;
    p.objective = p
        .hermitian_trace(z, &relay_power_kernel(q_fixed, ch, cfg))
        .shifted(trace_re(q_fixed));

    p.add_ge(
        p.hermitian_trace(z, &matrix_a(q_fixed, ch, cfg))
            .shifted(-cfg.r_b * cfg.sigma2_b),
    );

    let eve = p
        .hermitian_trace(z, &matrix_b(q_fixed, ch, cfg))
        .shifted(eve_constraint_offset(cfg));
    if cfg.eps > 0.0 {
        let map = EveLinearMap::new(&ch.g_e_hat);
        let t_u = p.add_block(T_U_BLOCK, BlockKind::Scalar)?;
        let t_v = p.add_block(T_V_BLOCK, BlockKind::Scalar)?;
        let eve = eve
            .plus(&p.scalar(t_u), -2.0 * cfg.eps)
            .plus(&p.scalar(t_v), -2.0 * cfg.r_e * cfg.eps * cfg.sigma2_r);
        p.add_ge(eve);
        let u_rows = p.probe_vector(z, |zz| eve_u(&map, q_fixed, zz, ch));
        let v_rows = p.probe_vector(z, |zz| eve_v(&map, zz));
        p.add_soc(u_rows, p.scalar(t_u));
        p.add_soc(v_rows, p.scalar(t_v));
    } else {
        p.add_ge(eve);
    }
    p.add_psd(z)?;
    prune_rows(&mut p);
    Ok(p)
}

/// Reads `Y` off a face-restricted outcome and maps it back to `Z = P Y P^H`.
pub fn recover_on_face(out: &SolveOutcome, face: &CMat) -> Result<CMat, SubproblemError> {
    let y = recover_hermitian(out, Y_BLOCK, face.ncols())?;
    Ok(face * y * face.adjoint())
}

fn prune_rows(p: &mut ConicProblem) {
    let scale = p.objective.max_coef().max(1.0);
    p.drop_trivial(PRUNE_REL_TOL * scale);
}

/// Basis `P = I_M ⊗ B` of the relay matrices that null the estimated
/// eavesdropper channel, with `B` an orthonormal basis of the null space of
/// `ĝ_e`. `None` when that space is trivial.
pub fn eve_null_face(ch: &ChannelSet, cfg: &SystemConfig) -> Option<CMat> {
    let m = cfg.n_relay;
    let g = &ch.g_e_hat;
    let gn = g.norm();
    let b = if gn == 0.0 {
        identity(m)
    } else {
        if m < 2 {
            return None;
        }
        // eigenvectors of ĝ^H ĝ below the top one span its null space
        let (_, vecs) = linalg::hermitian_eig(&(g.adjoint() * g)).ok()?;
        vecs.columns(1, m - 1).into_owned()
    };
    Some(kron(&identity(m), &b))
}

/// The Z program restricted to `Z = P Y P^H` for a fixed face basis `P`.
///
/// When every feasible `Z` lies on such a face the full program has no
/// strictly feasible point and interior-point solvers stall; on the face the
/// constraints that vanish identically are pruned and the rest is well posed.
pub fn build_z_subproblem_on_face(
    q_fixed: &CMat,
    face: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<ConicProblem, SubproblemError> {
    cfg.validate()?;
    ch.check(cfg)?;
    require_square(q_fixed, cfg.n_src, "fixed Q")?;
    let m2 = cfg.n_relay * cfg.n_relay;
    if face.nrows() != m2 || face.ncols() == 0 || face.ncols() > m2 {
        return Err(SubproblemError::Dimension(format!(
            "face basis is {:?}, expected {m2}xk",
            face.shape()
        )));
    }
    let lift = |y: &CMat| face * y * face.adjoint();

    let mut p = ConicProblem::new();
    let y = p.add_block(Y_BLOCK, BlockKind::Hermitian(face.ncols()))?;
    let restrict = |k: &CMat| face.adjoint() * k * face;
    p.objective = p
        .hermitian_trace(y, &restrict(&relay_power_kernel(q_fixed, ch, cfg)))
        .shifted(trace_re(q_fixed));
    p.add_ge(
        p.hermitian_trace(y, &restrict(&matrix_a(q_fixed, ch, cfg)))
            .shifted(-cfg.r_b * cfg.sigma2_b),
    );

    let eve = p
        .hermitian_trace(y, &restrict(&matrix_b(q_fixed, ch, cfg)))
        .shifted(eve_constraint_offset(cfg));
    let map = EveLinearMap::new(&ch.g_e_hat);
    let tol = PRUNE_REL_TOL * p.objective.max_coef().max(1.0);
    let pruned = |rows: Vec<AffineExpr>| rows.into_iter().map(|e| e.prune(tol)).collect::<Vec<_>>();
    let u_rows = pruned(p.probe_vector(y, |yy| eve_u(&map, q_fixed, &lift(yy), ch)));
    let v_rows = pruned(p.probe_vector(y, |yy| eve_v(&map, &lift(yy))));
    let vanishing = u_rows
        .iter()
        .chain(&v_rows)
        .all(|e| e.is_constant() && e.constant == 0.0);
    if cfg.eps > 0.0 && !vanishing {
        let t_u = p.add_block(T_U_BLOCK, BlockKind::Scalar)?;
        let t_v = p.add_block(T_V_BLOCK, BlockKind::Scalar)?;
        p.add_ge(
            eve.plus(&p.scalar(t_u), -2.0 * cfg.eps)
                .plus(&p.scalar(t_v), -2.0 * cfg.r_e * cfg.eps * cfg.sigma2_r),
        );
        p.add_soc(u_rows, p.scalar(t_u));
        p.add_soc(v_rows, p.scalar(t_v));
        // epigraph scalars are never negative
        p.add_ge(p.scalar(t_u));
        p.add_ge(p.scalar(t_v));
    } else {
        p.add_ge(eve);
    }
    p.add_psd(y)?;
    prune_rows(&mut p);
    Ok(p)
}

/// Convex program in `Q` at fixed `Z`: one Hermitian block `Q` (N×N), an
/// affine Bob row and a single cone row for the eavesdropper cap.
pub fn build_q_subproblem(
    z_fixed: &CMat,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<ConicProblem, SubproblemError> {
    cfg.validate()?;
    ch.check(cfg)?;
    require_square(z_fixed, cfg.n_relay * cfg.n_relay, "fixed Z")?;

    let mut p = ConicProblem::new();
    let q = p.add_block(Q_BLOCK, BlockKind::Hermitian(cfg.n_src))?;
    p.objective = p.probe_scalar(q, |qq| {
        trace_re(qq) + trace_re(&(z_fixed * relay_power_kernel(qq, ch, cfg)))
    });

    p.add_ge(p.probe_scalar(q, |qq| {
        trace_re(&(z_fixed * matrix_a(qq, ch, cfg))) - cfg.r_b * cfg.sigma2_b
    }));

    let map = EveLinearMap::new(&ch.g_e_hat);
    let v_norm = eve_v(&map, z_fixed).norm();
    let surplus = p.probe_scalar(q, |qq| {
        trace_re(&(z_fixed * matrix_b(qq, ch, cfg))) + eve_constraint_offset(cfg)
            - 2.0 * cfg.r_e * cfg.eps * cfg.sigma2_r * v_norm
    });
    if cfg.eps > 0.0 {
        let rows = p
            .probe_vector(q, |qq| eve_u(&map, qq, z_fixed, ch))
            .into_iter()
            .map(|r| r.scaled(2.0 * cfg.eps))
            .collect();
        p.add_soc(rows, surplus);
    } else {
        p.add_ge(surplus);
    }
    p.add_psd(q)?;
    prune_rows(&mut p);
    Ok(p)
}

fn worst_residual(q: &CMat, z: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    constraint_residuals(
        &LiftedPair {
            q_big: q.clone(),
            z_big: z.clone(),
        },
        ch,
        cfg,
    )
    .min()
}

fn keep_best(best: &mut (f64, CMat), cand: CMat, score: f64) {
    if score > best.0 {
        *best = (score, cand);
    }
}

/// Repairs solver-tolerance violations of a recovered `Z` at fixed `Q`.
///
/// Two moves are tried: projecting the relay matrix onto the null space of the
/// estimated eavesdropper channel when `Z` already nearly lies there, and a
/// slight upscaling that restores Bob's floor. The result is returned only
/// when it improves the worst residual.
pub fn polish_z(q: &CMat, z: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> CMat {
    let base = worst_residual(q, z, ch, cfg);
    if base >= 0.0 {
        return z.clone();
    }
    let mut tries = vec![z.clone()];
    let g = &ch.g_e_hat;
    let gn = g.norm_squared();
    if gn > 0.0 {
        let pi = identity(cfg.n_relay) - g.adjoint() * g * c(1.0 / gn, 0.0);
        let p = kron(&identity(cfg.n_relay), &pi);
        let zn = &p * z * &p;
        if (&zn - z).norm() <= REPAIR_TOL * z.norm() {
            tries.push(zn);
        }
    }
    let target = cfg.r_b * cfg.sigma2_b;
    let mut best = (base, z.clone());
    for t in tries {
        let score = worst_residual(q, &t, ch, cfg);
        let a = trace_re(&(&t * matrix_a(q, ch, cfg)));
        if a > 0.0 && a < target && target / a <= 1.0 + REPAIR_TOL {
            let scaled = &t * c(target / a, 0.0);
            let s2 = worst_residual(q, &scaled, ch, cfg);
            keep_best(&mut best, scaled, s2);
        }
        keep_best(&mut best, t, score);
    }
    best.1
}

/// Repairs a recovered `Q` at fixed `Z` by the slight upscaling that restores
/// Bob's floor, when that improves the worst residual.
pub fn polish_q(q: &CMat, z: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> CMat {
    let base = worst_residual(q, z, ch, cfg);
    if base >= 0.0 {
        return q.clone();
    }
    let signal = trace_re(&(z * signal_kernel(q, ch, &ch.g_b)));
    let need = cfg.r_b * (cfg.sigma2_b + trace_re(&(z * noise_kernel(cfg, &ch.g_b))));
    let mut best = (base, q.clone());
    if signal > 0.0 && need > signal && need / signal <= 1.0 + REPAIR_TOL {
        let scaled = q * c(need / signal, 0.0);
        let score = worst_residual(&scaled, z, ch, cfg);
        keep_best(&mut best, scaled, score);
    }
    best.1
}

/// Reads a Hermitian block back out of an optimal or inaccurate outcome,
/// repairing small structural and PSD defects. Points from an inaccurate
/// outcome still need checking against the constraints.
pub fn recover_hermitian(
    out: &SolveOutcome,
    block: &str,
    n: usize,
) -> Result<CMat, SubproblemError> {
    if !matches!(out.status, SolveStatus::Optimal | SolveStatus::Inaccurate) {
        return Err(SubproblemError::NotOptimal(out.status));
    }
    let Some(BlockValue::Hermitian(embedded)) = out.block_value(block) else {
        return Err(SubproblemError::MissingBlock(block.to_string()));
    };
    if embedded.nrows() != 2 * n {
        return Err(SubproblemError::Dimension(format!(
            "block `{block}` embeds {}x{}, expected {n}x{n}",
            embedded.nrows() / 2,
            embedded.nrows() / 2
        )));
    }
    let (h, defect) = linalg::real_unembed(&embedded)?;
    if defect > STRUCTURE_TOL {
        return Err(SubproblemError::StructuralDefect(defect));
    }
    let (values, _) = linalg::hermitian_eig(&h)?;
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if min < -RECOVER_PSD_TOL * max.max(1.0) {
        return Err(SubproblemError::NotPsd(min));
    }
    Ok(linalg::psd_project(&h)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::{rand_hermitian, rand_psd, randn};
    use crate::sysmodel::{
        constraint_residuals, relay_power, sample_channels, BeamformingPair, LiftedPair,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(m: usize, n: usize, eps: f64, seed: u64) -> (SystemConfig, ChannelSet, ChaCha8Rng) {
        let cfg = SystemConfig {
            n_src: n,
            n_relay: m,
            eps,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = sample_channels(&cfg, &mut rng);
        (cfg, ch, rng)
    }

    fn total(q: &CMat, z: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
        let lp = LiftedPair {
            q_big: q.clone(),
            z_big: z.clone(),
        };
        trace_re(q) + relay_power(&lp, ch, cfg).unwrap()
    }

    fn point(p: &ConicProblem, block: &str, value: &CMat) -> Vec<f64> {
        let mut x = vec![0.0; p.n_coords];
        p.assign_hermitian(&mut x, p.find(block).unwrap(), value);
        x
    }

    #[test]
    fn z_problem_shape() {
        let (cfg, ch, mut rng) = setup(2, 2, 0.1, 40);
        let q = rand_psd(&mut rng, 2, 2);
        let p = build_z_subproblem(&q, &ch, &cfg).unwrap();
        assert_eq!(p.psd_blocks.len(), 1);
        assert_eq!(p.blocks[0].kind, BlockKind::Hermitian(4)); // 8x8 real embedding
        assert_eq!(
            p.blocks
                .iter()
                .filter(|b| b.kind == BlockKind::Scalar)
                .count(),
            2
        );
        assert_eq!(p.soc_constraints.len(), 2);
        assert!(p.soc_constraints.iter().all(|s| s.vector.len() == 4));
        assert_eq!(p.affine_ineqs.len(), 2);
    }

    #[test]
    fn zero_radius_drops_cone_rows() {
        let (cfg, ch, mut rng) = setup(2, 2, 0.0, 41);
        let q = rand_psd(&mut rng, 2, 2);
        let p = build_z_subproblem(&q, &ch, &cfg).unwrap();
        assert!(p.soc_constraints.is_empty());
        assert_eq!(p.blocks.len(), 1);
        assert_eq!(p.affine_ineqs.len(), 2);
        // rows read Tr(ZA) − r_b σ_b² and Tr(ZB)
        let zval = rand_psd(&mut rng, 4, 2);
        let x = point(&p, Z_BLOCK, &zval);
        let a = trace_re(&(&zval * matrix_a(&q, &ch, &cfg))) - cfg.r_b * cfg.sigma2_b;
        let b = trace_re(&(&zval * matrix_b(&q, &ch, &cfg)));
        assert!((p.affine_ineqs[0].eval(&x) - a).abs() < 1e-10);
        assert!((p.affine_ineqs[1].eval(&x) - b).abs() < 1e-10);

        let pq = build_q_subproblem(&zval, &ch, &cfg).unwrap();
        assert!(pq.soc_constraints.is_empty());
        assert_eq!(pq.affine_ineqs.len(), 2);
    }

    #[test]
    fn z_objective_matches_total_power() {
        let (cfg, ch, mut rng) = setup(3, 3, 0.05, 42);
        let q = rand_psd(&mut rng, 3, 3);
        let p = build_z_subproblem(&q, &ch, &cfg).unwrap();
        for _ in 0..5 {
            let zval = rand_hermitian(&mut rng, 9);
            let x = point(&p, Z_BLOCK, &zval);
            let expect = total(&q, &zval, &ch, &cfg);
            assert!((p.objective.eval(&x) - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn q_objective_matches_total_power() {
        let (cfg, ch, mut rng) = setup(3, 2, 0.05, 43);
        let zval = rand_psd(&mut rng, 9, 2);
        let p = build_q_subproblem(&zval, &ch, &cfg).unwrap();
        for _ in 0..5 {
            let q = rand_hermitian(&mut rng, 2);
            let x = point(&p, Q_BLOCK, &q);
            let expect = total(&q, &zval, &ch, &cfg);
            assert!((p.objective.eval(&x) - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        }
    }

    /// For the Z problem, fill the epigraph scalars with the tightest values.
    fn z_point(p: &ConicProblem, zval: &CMat, q: &CMat, ch: &ChannelSet) -> Vec<f64> {
        let mut x = point(p, Z_BLOCK, zval);
        if let (Ok(tu), Ok(tv)) = (p.find(T_U_BLOCK), p.find(T_V_BLOCK)) {
            let map = EveLinearMap::new(&ch.g_e_hat);
            x[p.block(tu).offset] = eve_u(&map, q, zval, ch).norm();
            x[p.block(tv).offset] = eve_v(&map, zval).norm();
        }
        x
    }

    #[test]
    fn constraint_fidelity_both_directions() {
        for flag in [false, true] {
            let (base, ch, mut rng) = setup(2, 2, 0.1, 44);
            let cfg = SystemConfig {
                eve_constraint_includes_sigma_e: flag,
                r_b: 1.0,
                r_e: 4.0,
                ..base
            };
            let mut agree = [0usize; 2];
            for _ in 0..100 {
                let scale = 10f64.powf(rng.gen_range(-1.0..1.5));
                let pair = BeamformingPair {
                    q: randn(&mut rng, 2, 1) * linalg::c(scale, 0.0),
                    w_mat: randn(&mut rng, 2, 2) * linalg::c(scale, 0.0),
                };
                let lp = pair.lift();
                let res = constraint_residuals(&lp, &ch, &cfg);
                let feasible = res.min() >= 0.0;

                let pz = build_z_subproblem(&lp.q_big, &ch, &cfg).unwrap();
                let xz = z_point(&pz, &lp.z_big, &lp.q_big, &ch);
                assert_eq!(pz.max_violation(&xz) <= 1e-9, feasible || res.min() > -1e-9);

                let pq = build_q_subproblem(&lp.z_big, &ch, &cfg).unwrap();
                let xq = point(&pq, Q_BLOCK, &lp.q_big);
                assert_eq!(pq.max_violation(&xq) <= 1e-9, feasible || res.min() > -1e-9);
                agree[feasible as usize] += 1;
            }
            assert!(
                agree[0] > 0 && agree[1] > 0,
                "sample never crossed the boundary: {agree:?}"
            );
        }
    }

    #[test]
    fn degenerate_z_makes_q_problem_infeasible() {
        let (cfg, ch, _) = setup(2, 2, 0.1, 45);
        let p = build_q_subproblem(&CMat::zeros(4, 4), &ch, &cfg).unwrap();
        let out = solve(&p, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert!(matches!(
            recover_hermitian(&out, Q_BLOCK, 2),
            Err(SubproblemError::NotOptimal(_))
        ));
    }

    #[test]
    fn z_problem_solves_and_recovers() {
        let (cfg, ch, _) = setup(2, 2, 0.05, 46);
        let q = CMat::identity(2, 2) * linalg::c(5.0, 0.0);
        let p = build_z_subproblem(&q, &ch, &cfg).unwrap();
        let out = solve(&p, &SolverSettings::default());
        assert!(
            matches!(out.status, SolveStatus::Optimal | SolveStatus::Inaccurate),
            "{:?}",
            out.status
        );
        assert!(
            out.stats.max_violation <= solver::VIOLATION_TOL,
            "{:?}",
            out.stats
        );
        let z = polish_z(&q, &recover_hermitian(&out, Z_BLOCK, 4).unwrap(), &ch, &cfg);
        let (vals, _) = linalg::hermitian_eig(&z).unwrap();
        assert!(*vals.last().unwrap() >= -1e-7);
        let res = constraint_residuals(
            &LiftedPair {
                q_big: q.clone(),
                z_big: z.clone(),
            },
            &ch,
            &cfg,
        );
        assert!(res.min() >= -1e-6, "{res:?}");
        let Some(BlockValue::Hermitian(e)) = out.block_value(Z_BLOCK) else {
            panic!()
        };
        assert!((z.trace().re - e.trace() / 2.0).abs() <= 1e-6 * z.trace().re);
        assert!(recover_hermitian(&out, "nope", 4).is_err());
    }

    #[test]
    fn polish_never_worsens_residual() {
        let (cfg, ch, mut rng) = setup(2, 2, 0.05, 49);
        let map = |q: &CMat, z: &CMat| {
            constraint_residuals(
                &LiftedPair {
                    q_big: q.clone(),
                    z_big: z.clone(),
                },
                &ch,
                &cfg,
            )
            .min()
        };
        for _ in 0..50 {
            let q = rand_psd(&mut rng, 2, 2);
            let z = rand_psd(&mut rng, 4, 1);
            assert!(map(&q, &polish_z(&q, &z, &ch, &cfg)) >= map(&q, &z));
            assert!(map(&polish_q(&q, &z, &ch, &cfg), &z) >= map(&q, &z));
        }
        // a relay matrix that leaks slightly toward the eavesdropper estimate
        let g = &ch.g_e_hat;
        let pi = identity(2) - g.adjoint() * g * c(1.0 / g.norm_squared(), 0.0);
        let w = randn(&mut rng, 2, 2);
        let leak = &pi * &w + g.adjoint() * randn(&mut rng, 1, 2) * c(1e-9, 0.0);
        let wv = linalg::vec(&leak);
        let z = &wv * wv.adjoint();
        let q = rand_psd(&mut rng, 2, 1) * c(1e3, 0.0);
        let cfg = SystemConfig { r_b: 1e-3, ..cfg };
        let before = constraint_residuals(
            &LiftedPair {
                q_big: q.clone(),
                z_big: z.clone(),
            },
            &ch,
            &cfg,
        );
        assert!(before.eve < 0.0, "{before:?}");
        let fixed = polish_z(&q, &z, &ch, &cfg);
        let after = constraint_residuals(
            &LiftedPair {
                q_big: q.clone(),
                z_big: fixed,
            },
            &ch,
            &cfg,
        );
        assert!(
            after.eve >= 0.0 && after.min() >= before.min(),
            "{before:?} -> {after:?}"
        );
    }

    #[test]
    fn face_nulls_the_eavesdropper_estimate() {
        let (cfg, ch, mut rng) = setup(3, 3, 0.05, 50);
        let face = eve_null_face(&ch, &cfg).unwrap();
        assert_eq!(face.shape(), (9, 6));
        let y = rand_psd(&mut rng, 6, 6);
        let z = &face * &y * face.adjoint();
        let map = EveLinearMap::new(&ch.g_e_hat);
        let q = rand_psd(&mut rng, 3, 3);
        assert!(eve_u(&map, &q, &z, &ch).norm() <= 1e-10 * z.norm());
        assert!(eve_v(&map, &z).norm() <= 1e-10 * z.norm());
        assert!(trace_re(&(&z * matrix_b(&q, &ch, &cfg))).abs() <= 1e-10 * z.norm());
        // every eavesdropper row collapses and is pruned
        let p = build_z_subproblem_on_face(&q, &face, &ch, &cfg).unwrap();
        assert!(p.soc_constraints.is_empty());
        assert_eq!(p.affine_ineqs.len(), 1);
    }

    #[test]
    fn face_problem_objective_matches_lifted_power() {
        let (cfg, ch, mut rng) = setup(2, 2, 0.05, 51);
        let face = eve_null_face(&ch, &cfg).unwrap();
        let q = rand_psd(&mut rng, 2, 2);
        let p = build_z_subproblem_on_face(&q, &face, &ch, &cfg).unwrap();
        let y = rand_hermitian(&mut rng, face.ncols());
        let x = point(&p, Y_BLOCK, &y);
        let expect = total(&q, &(&face * &y * face.adjoint()), &ch, &cfg);
        assert!((p.objective.eval(&x) - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        let out = solve(&p, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Optimal);
        let z = recover_on_face(&out, &face).unwrap();
        let res = constraint_residuals(
            &LiftedPair {
                q_big: q.clone(),
                z_big: z,
            },
            &ch,
            &cfg,
        );
        assert!(res.min() >= -1e-7, "{res:?}");
    }

    #[test]
    fn recover_round_trips_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let h = rand_psd(&mut rng, 3, 3);
        let mut p = ConicProblem::new();
        let id = p.add_block("X", BlockKind::Hermitian(3)).unwrap();
        let mut x = vec![0.0; p.n_coords];
        p.assign_hermitian(&mut x, id, &h);
        let out = SolveOutcome {
            status: SolveStatus::Optimal,
            objective: 0.0,
            x,
            blocks: p.blocks.clone(),
            stats: Default::default(),
        };
        let back = recover_hermitian(&out, "X", 3).unwrap();
        assert!((back - &h).norm() <= 1e-12 * h.norm());
    }

    #[test]
    fn larger_radius_never_lowers_z_optimum() {
        let (cfg, ch, _) = setup(2, 2, 0.0, 48);
        let q = CMat::identity(2, 2) * linalg::c(5.0, 0.0);
        let mut last = f64::NEG_INFINITY;
        for eps in [0.0, 0.01, 0.05, 0.1] {
            let p = build_z_subproblem(&q, &ch, &cfg.with_eps(eps)).unwrap();
            let out = solve(&p, &SolverSettings::default());
            if out.status != SolveStatus::Optimal {
                break;
            }
            assert!(out.objective >= last - 1e-6);
            last = out.objective;
        }
    }
}
