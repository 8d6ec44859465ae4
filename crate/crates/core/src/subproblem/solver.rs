//! Lowering of [`ConicProblem`] onto Clarabel's standard form
//! `min cᵀx  s.t.  Ax + s = b, s ∈ K`.

use std::panic::{self, AssertUnwindSafe};
use std::sync::Once;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    SupportedConeT::{NonnegativeConeT, PSDTriangleConeT, SecondOrderConeT, ZeroConeT},
};
use nalgebra::DMatrix;
use serde::Serialize;

use super::conic::{herm_im_coord, triu_index, AffineExpr, BlockKind, ConicProblem, VarBlock};

/// Largest raw constraint violation an optimal outcome may carry.
pub const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub max_iter: u32,
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_feas: 1e-10,
            tol_gap: 1e-10,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    /// The solver stopped short of its tolerances; the returned point is
    /// finite but must be verified before use.
    Inaccurate,
    Infeasible,
    NumericalFailure,
    IterationLimit,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverStats {
    pub iterations: u32,
    pub res_primal: f64,
    pub res_dual: f64,
    pub gap_rel: f64,
    /// Largest raw constraint violation of the returned point.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Symmetric(DMatrix<f64>),
    /// The `2n×2n` real embedding of a Hermitian block.
    Hermitian(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub objective: f64,
    /// Flat coordinate vector.
    pub x: Vec<f64>,
    pub blocks: Vec<VarBlock>,
    pub stats: SolverStats,
}

impl SolveOutcome {
    fn failed(p: &ConicProblem, status: SolveStatus) -> Self {
        Self {
            status,
            objective: f64::NAN,
            x: vec![f64::NAN; p.n_coords],
            blocks: p.blocks.clone(),
            stats: SolverStats::default(),
        }
    }

    pub fn block_value(&self, name: &str) -> Option<BlockValue> {
        let b = self.blocks.iter().find(|b| b.name == name)?;
        let coords = &self.x[b.offset..b.offset + b.kind.n_coords()];
        Some(match b.kind {
            BlockKind::Scalar => BlockValue::Scalar(coords[0]),
            BlockKind::Vector(_) => BlockValue::Vector(coords.to_vec()),
            BlockKind::Symmetric(n) => BlockValue::Symmetric(DMatrix::from_fn(n, n, |i, j| {
                coords[triu_index(i.min(j), i.max(j))]
            })),
            BlockKind::Hermitian(n) => {
                let h = super::conic::hermitian_from_coords(coords, n);
                let e =
                    crate::linalg::real_embed(&h).expect("coordinates encode a Hermitian matrix");
                BlockValue::Hermitian(e)
            }
        })
    }
}

/// Rows of `A` and entries of `b` for one cone, accumulated as triplets.
struct Lowering {
    rows: usize,
    ai: Vec<usize>,
    aj: Vec<usize>,
    av: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Lowering {
    /// Slack row `s = e(x)`: `−a·x + s = const`.
    fn push_slack(&mut self, e: &AffineExpr) {
        for &(j, a) in &e.terms {
            self.ai.push(self.rows);
            self.aj.push(j);
            self.av.push(-a);
        }
        self.b.push(e.constant);
        self.rows += 1;
    }

    /// Slack row `s = scale · x[coord]`.
    fn push_coord(&mut self, coord: Option<(usize, f64)>) {
        if let Some((j, a)) = coord {
            self.ai.push(self.rows);
            self.aj.push(j);
            self.av.push(-a);
        }
        self.b.push(0.0);
        self.rows += 1;
    }
}

/// Slack rows for the PSD-triangle cone of a matrix block, in Clarabel's
/// column-wise upper-triangle order with off-diagonals scaled by √2.
fn lower_psd(low: &mut Lowering, block: &VarBlock) {
    let r2 = std::f64::consts::SQRT_2;
    match block.kind {
        BlockKind::Symmetric(n) => {
            for j in 0..n {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { r2 };
                    low.push_coord(Some((block.offset + triu_index(i, j), scale)));
                }
            }
            low.cones.push(PSDTriangleConeT(n));
        }
        BlockKind::Hermitian(n) => {
            for cc in 0..2 * n {
                for rr in 0..=cc {
                    let scale = if rr == cc { 1.0 } else { r2 };
                    let entry = if cc < n {
                        Some((triu_index(rr, cc), 1.0))
                    } else if rr >= n {
                        Some((triu_index(rr - n, cc - n), 1.0))
                    } else {
                        // top-right block holds −Im X[rr, cc − n]
                        herm_im_coord(n, rr, cc - n).map(|(k, sign)| (k, -sign))
                    };
                    low.push_coord(entry.map(|(k, a)| (block.offset + k, a * scale)));
                }
            }
            low.cones.push(PSDTriangleConeT(2 * n));
        }
        _ => unreachable!("validated: PSD constraints only on matrix blocks"),
    }
}

/// Silences panics raised inside the solver crate; all others reach the
/// previous hook.
fn quiet_solver_panics() {
    static INSTALL: Once = Once::new();
    INSTALL.call_once(|| {
        let previous = panic::take_hook();
        panic::set_hook(Box::new(move |info| {
            if !info
                .location()
                .is_some_and(|l| l.file().contains("clarabel"))
            {
                previous(info);
            }
        }));
    });
}

pub fn solve(p: &ConicProblem, settings: &SolverSettings) -> SolveOutcome {
    if p.validate().is_err() {
        return SolveOutcome::failed(p, SolveStatus::NumericalFailure);
    }
    let n = p.n_coords;
    let mut low = Lowering {
        rows: 0,
        ai: vec![],
        aj: vec![],
        av: vec![],
        b: vec![],
        cones: vec![],
    };

    if !p.affine_eqs.is_empty() {
        for e in &p.affine_eqs {
            low.push_slack(e);
        }
        low.cones.push(ZeroConeT(p.affine_eqs.len()));
    }
    if !p.affine_ineqs.is_empty() {
        for e in &p.affine_ineqs {
            low.push_slack(e);
        }
        low.cones.push(NonnegativeConeT(p.affine_ineqs.len()));
    }
    for soc in &p.soc_constraints {
        low.push_slack(&soc.bound);
        for e in &soc.vector {
            low.push_slack(e);
        }
        low.cones.push(SecondOrderConeT(soc.vector.len() + 1));
    }
    for id in &p.psd_blocks {
        lower_psd(&mut low, p.block(*id));
    }

    let mut c = vec![0.0; n];
    for &(j, a) in &p.objective.terms {
        c[j] += a;
    }
    let pmat = CscMatrix::zeros((n, n));
    let amat = CscMatrix::new_from_triplets(low.rows, n, low.ai, low.aj, low.av);

    let built = DefaultSettingsBuilder::default()
        .max_iter(settings.max_iter)
        .tol_feas(settings.tol_feas)
        .tol_gap_abs(settings.tol_gap)
        .tol_gap_rel(settings.tol_gap)
        .verbose(settings.verbose)
        .chordal_decomposition_enable(false)
        .build();
    let Ok(clarabel_settings) = built else {
        return SolveOutcome::failed(p, SolveStatus::NumericalFailure);
    };
    let Ok(mut solver) =
        DefaultSolver::new(&pmat, &c, &amat, &low.b, &low.cones, clarabel_settings)
    else {
        return SolveOutcome::failed(p, SolveStatus::NumericalFailure);
    };
    // Clarabel panics when an eigendecomposition of a diverging PSD iterate
    // fails, typically on infeasible programs.
    quiet_solver_panics();
    if panic::catch_unwind(AssertUnwindSafe(|| solver.solve())).is_err() {
        return SolveOutcome::failed(p, SolveStatus::NumericalFailure);
    }

    let sol = &solver.solution;
    let stats = SolverStats {
        iterations: sol.iterations,
        res_primal: solver.info.res_primal,
        res_dual: solver.info.res_dual,
        gap_rel: solver.info.gap_rel,
        max_violation: if sol.x.iter().all(|v| v.is_finite()) {
            p.max_violation(&sol.x)
        } else {
            f64::INFINITY
        },
    };
    let finite = stats.max_violation.is_finite();
    let status = match sol.status {
        SolverStatus::Solved if stats.max_violation <= VIOLATION_TOL => SolveStatus::Optimal,
        SolverStatus::Solved | SolverStatus::AlmostSolved if finite => SolveStatus::Inaccurate,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime if finite => SolveStatus::Inaccurate,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
        _ => SolveStatus::NumericalFailure,
    };
    SolveOutcome {
        status,
        objective: p.objective.eval(&sol.x),
        x: sol.x.clone(),
        blocks: p.blocks.clone(),
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, CMat};
    use crate::subproblem::conic::BlockKind;

    #[test]
    fn analytic_soc() {
        // min t  s.t. ‖(1, 1)‖ ≤ t
        let mut p = ConicProblem::new();
        let t = p.add_block("t", BlockKind::Scalar).unwrap();
        p.objective = p.scalar(t);
        p.add_soc(
            vec![AffineExpr::constant(1.0), AffineExpr::constant(1.0)],
            p.scalar(t),
        );
        let out = solve(&p, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 2f64.sqrt()).abs() <= 1e-7);
        assert_eq!(
            out.block_value("t")
                .map(|v| matches!(v, BlockValue::Scalar(_))),
            Some(true)
        );
    }

    #[test]
    fn analytic_sdp() {
        // min Tr X  s.t. X ⪰ 0, X₁₁ ≥ 1
        let mut p = ConicProblem::new();
        let x = p.add_block("X", BlockKind::Symmetric(3)).unwrap();
        let off = p.block(x).offset;
        p.objective = AffineExpr {
            terms: (0..3).map(|i| (off + triu_index(i, i), 1.0)).collect(),
            constant: 0.0,
        };
        p.add_ge(AffineExpr::var(off, 1.0).shifted(-1.0));
        p.add_psd(x).unwrap();
        let out = solve(&p, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 1.0).abs() <= 1e-7);
        assert!(out.stats.max_violation <= 1e-7);
    }

    #[test]
    fn hermitian_sdp_with_complex_coupling() {
        // min Tr X  s.t. Re Tr(C X) ≥ 1, X ⪰ 0 with C = v v^H, ‖v‖ = 1:
        // optimum X = v v^H with value 1.
        let mut p = ConicProblem::new();
        let x = p.add_block("X", BlockKind::Hermitian(2)).unwrap();
        let v = CMat::from_column_slice(2, 1, &[c(0.6, 0.0), c(0.0, 0.8)]);
        let cmat = &v * v.adjoint();
        p.objective = p.hermitian_trace(x, &CMat::identity(2, 2));
        p.add_ge(p.hermitian_trace(x, &cmat).shifted(-1.0));
        p.add_psd(x).unwrap();
        let out = solve(&p, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 1.0).abs() <= 1e-7);
        let got = p.hermitian_value(x, &out.x);
        assert!((got - cmat).norm() <= 1e-6);
    }

    #[test]
    fn infeasible_toy() {
        let mut p = ConicProblem::new();
        let x = p.add_block("x", BlockKind::Scalar).unwrap();
        p.objective = p.scalar(x);
        p.add_ge(p.scalar(x).shifted(-1.0));
        p.add_ge(p.scalar(x).scaled(-1.0));
        let out = solve(&p, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn equality_rows_are_honored() {
        // min x + y  s.t. x − y = 1, y ≥ 0
        let mut p = ConicProblem::new();
        let v = p.add_block("v", BlockKind::Vector(2)).unwrap();
        let off = p.block(v).offset;
        p.objective = AffineExpr {
            terms: vec![(off, 1.0), (off + 1, 1.0)],
            constant: 0.0,
        };
        p.add_eq(AffineExpr {
            terms: vec![(off, 1.0), (off + 1, -1.0)],
            constant: -1.0,
        });
        p.add_ge(AffineExpr::var(off + 1, 1.0));
        let out = solve(&p, &SolverSettings::default());
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn solves_are_deterministic() {
        let mut p = ConicProblem::new();
        let x = p.add_block("X", BlockKind::Hermitian(3)).unwrap();
        let cmat = CMat::from_fn(3, 3, |i, j| {
            if i == j {
                c(1.0 + i as f64, 0.0)
            } else {
                c(0.1, 0.0)
            }
        });
        p.objective = p.hermitian_trace(x, &cmat);
        p.add_ge(p.hermitian_trace(x, &CMat::identity(3, 3)).shifted(-2.0));
        p.add_psd(x).unwrap();
        let a = solve(&p, &SolverSettings::default());
        let b = solve(&p, &SolverSettings::default());
        assert_eq!(a.x, b.x);
    }
}
