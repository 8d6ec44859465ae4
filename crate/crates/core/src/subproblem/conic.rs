//! Solver-agnostic description of a real conic program.
//!
//! Variables live in named blocks laid out on one flat coordinate vector.
//! Constraints are affine expressions over those coordinates:
//! `expr = 0`, `expr ≥ 0`, `‖(e₁, …, e_k)‖ ≤ e₀`, and PSD membership of a
//! matrix block. A `Hermitian(n)` block is a complex Hermitian `n×n` matrix
//! parametrized by its `n²` real degrees of freedom; its PSD constraint is
//! imposed on the `2n×2n` real embedding `[[Re X, −Im X], [Im X, Re X]]`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{c, CMat, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("duplicate block name `{0}`")]
    DuplicateBlock(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("block `{name}` has kind {kind:?}, expected {expected}")]
    WrongKind {
        name: String,
        kind: BlockKind,
        expected: &'static str,
    },
    #[error("{0} references coordinate {1} outside the {2} declared coordinates")]
    BadCoordinate(&'static str, usize, usize),
    #[error("{0} has a non-finite coefficient")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Scalar,
    Vector(usize),
    /// Real symmetric `n×n`, upper triangle stored column by column.
    Symmetric(usize),
    /// Complex Hermitian `n×n`: `n(n+1)/2` real parts of the upper triangle,
    /// then `n(n−1)/2` imaginary parts of the strict upper triangle.
    Hermitian(usize),
}

impl BlockKind {
    pub fn n_coords(&self) -> usize {
        match *self {
            BlockKind::Scalar => 1,
            BlockKind::Vector(n) => n,
            BlockKind::Symmetric(n) => n * (n + 1) / 2,
            BlockKind::Hermitian(n) => n * n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub kind: BlockKind,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(pub usize);

/// Index of the upper-triangle entry `(i, j)`, `i ≤ j`, in column order.
pub fn triu_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// Index of the imaginary part of `(i, j)`, `i < j`, within a Hermitian block.
fn herm_im_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    n * (n + 1) / 2 + j * (j - 1) / 2 + i
}

/// `(coordinate, sign)` holding `Im X[i, j]`, or `None` on the diagonal.
pub fn herm_im_coord(n: usize, i: usize, j: usize) -> Option<(usize, f64)> {
    match i.cmp(&j) {
        std::cmp::Ordering::Less => Some((herm_im_index(n, i, j), 1.0)),
        std::cmp::Ordering::Greater => Some((herm_im_index(n, j, i), -1.0)),
        std::cmp::Ordering::Equal => None,
    }
}

pub fn hermitian_to_coords(x: &CMat) -> Vec<f64> {
    let n = x.nrows();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..=j {
            out[triu_index(i, j)] = x[(i, j)].re;
            if i < j {
                out[herm_im_index(n, i, j)] = x[(i, j)].im;
            }
        }
    }
    out
}

pub fn hermitian_from_coords(coords: &[f64], n: usize) -> CMat {
    assert_eq!(coords.len(), n * n);
    let mut x = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let re = coords[triu_index(i, j)];
            let im = if i < j {
                coords[herm_im_index(n, i, j)]
            } else {
                0.0
            };
            x[(i, j)] = c(re, im);
            x[(j, i)] = c(re, -im);
        }
    }
    x
}

/// Real basis of the Hermitian matrices matching the coordinate layout.
pub fn hermitian_basis(n: usize) -> Vec<CMat> {
    (0..n * n)
        .map(|k| {
            let mut e = vec![0.0; n * n];
            e[k] = 1.0;
            hermitian_from_coords(&e, n)
        })
        .collect()
}

/// `Σ terms + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn var(coord: usize, coef: f64) -> Self {
        Self {
            terms: vec![(coord, coef)],
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }

    pub fn plus(mut self, other: &AffineExpr, scale: f64) -> Self {
        self.terms
            .extend(other.terms.iter().map(|&(i, a)| (i, a * scale)));
        self.constant += other.constant * scale;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self.constant *= s;
        self
    }

    pub fn shifted(mut self, by: f64) -> Self {
        self.constant += by;
        self
    }

    /// Merges repeated coordinates and drops exact zeros.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, a) in self.terms {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => merged.push((i, a)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        self.terms = merged;
        self
    }

    /// Zeroes coefficients and the constant when their magnitude is at most `tol`.
    pub fn prune(mut self, tol: f64) -> Self {
        self = self.compact();
        self.terms.retain(|t| t.1.abs() > tol);
        if self.constant.abs() <= tol {
            self.constant = 0.0;
        }
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_coef(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, t| m.max(t.1.abs()))
    }
}

/// `‖vector‖ ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub vector: Vec<AffineExpr>,
    pub bound: AffineExpr,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProblem {
    pub blocks: Vec<VarBlock>,
    pub n_coords: usize,
    /// Minimized.
    pub objective: AffineExpr,
    /// Each row `= 0`.
    pub affine_eqs: Vec<AffineExpr>,
    /// Each row `≥ 0`.
    pub affine_ineqs: Vec<AffineExpr>,
    pub psd_blocks: Vec<BlockId>,
    pub soc_constraints: Vec<SocConstraint>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: &str, kind: BlockKind) -> Result<BlockId, ConicError> {
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(ConicError::DuplicateBlock(name.to_string()));
        }
        self.blocks.push(VarBlock {
            name: name.to_string(),
            kind,
            offset: self.n_coords,
        });
        self.n_coords += kind.n_coords();
        Ok(BlockId(self.blocks.len() - 1))
    }

    pub fn block(&self, id: BlockId) -> &VarBlock {
        &self.blocks[id.0]
    }

    pub fn find(&self, name: &str) -> Result<BlockId, ConicError> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .map(BlockId)
            .ok_or_else(|| ConicError::UnknownBlock(name.to_string()))
    }

    pub fn scalar(&self, id: BlockId) -> AffineExpr {
        let b = self.block(id);
        assert_eq!(
            b.kind,
            BlockKind::Scalar,
            "block {} is not a scalar",
            b.name
        );
        AffineExpr::var(b.offset, 1.0)
    }

    fn hermitian_dim(&self, id: BlockId) -> (usize, usize) {
        let b = self.block(id);
        match b.kind {
            BlockKind::Hermitian(n) => (n, b.offset),
            other => panic!("block {} is {other:?}, not Hermitian", b.name),
        }
    }

    /// `Re Tr(C X)` for a Hermitian block `X` and Hermitian coefficient `C`.
    pub fn hermitian_trace(&self, id: BlockId, coef: &CMat) -> AffineExpr {
        let (n, off) = self.hermitian_dim(id);
        assert_eq!(coef.shape(), (n, n), "trace coefficient has wrong shape");
        let mut terms = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..=j {
                if i == j {
                    terms.push((off + triu_index(i, i), coef[(i, i)].re));
                } else {
                    // C_ji X_ij + C_ij X_ji = 2 Re(C_ji) a − 2 Im(C_ji) b
                    let cji: C64 = 0.5 * (coef[(j, i)] + coef[(i, j)].conj());
                    terms.push((off + triu_index(i, j), 2.0 * cji.re));
                    terms.push((off + herm_im_index(n, i, j), -2.0 * cji.im));
                }
            }
        }
        AffineExpr {
            terms,
            constant: 0.0,
        }
        .compact()
    }

    /// Affine real functional of a Hermitian block, recovered by probing `f`
    /// at zero and at every basis matrix.
    pub fn probe_scalar(&self, id: BlockId, f: impl Fn(&CMat) -> f64) -> AffineExpr {
        let (n, off) = self.hermitian_dim(id);
        let f0 = f(&CMat::zeros(n, n));
        let terms = hermitian_basis(n)
            .iter()
            .enumerate()
            .map(|(k, e)| (off + k, f(e) - f0))
            .collect();
        AffineExpr {
            terms,
            constant: f0,
        }
        .compact()
    }

    /// Real-affine complex-vector map of a Hermitian block, returned as its
    /// real rows `(Re f; Im f)`.
    pub fn probe_vector(&self, id: BlockId, f: impl Fn(&CMat) -> CMat) -> Vec<AffineExpr> {
        let (n, off) = self.hermitian_dim(id);
        let f0 = f(&CMat::zeros(n, n));
        let len = f0.len();
        let mut rows: Vec<AffineExpr> = (0..2 * len)
            .map(|r| AffineExpr::constant(if r < len { f0[r].re } else { f0[r - len].im }))
            .collect();
        for (k, e) in hermitian_basis(n).iter().enumerate() {
            let d = f(e) - &f0;
            for r in 0..len {
                rows[r].terms.push((off + k, d[r].re));
                rows[r + len].terms.push((off + k, d[r].im));
            }
        }
        rows.into_iter().map(AffineExpr::compact).collect()
    }

    pub fn add_eq(&mut self, e: AffineExpr) {
        self.affine_eqs.push(e);
    }

    pub fn add_ge(&mut self, e: AffineExpr) {
        self.affine_ineqs.push(e);
    }

    pub fn add_psd(&mut self, id: BlockId) -> Result<(), ConicError> {
        let b = self.block(id);
        match b.kind {
            BlockKind::Symmetric(_) | BlockKind::Hermitian(_) => {
                self.psd_blocks.push(id);
                Ok(())
            }
            kind => Err(ConicError::WrongKind {
                name: b.name.clone(),
                kind,
                expected: "a matrix block",
            }),
        }
    }

    pub fn add_soc(&mut self, vector: Vec<AffineExpr>, bound: AffineExpr) {
        self.soc_constraints.push(SocConstraint { vector, bound });
    }

    /// Prunes coefficients at most `tol` from every constraint row and drops
    /// rows left constant and satisfied. Constant rows that are violated are
    /// kept so the problem still reads as infeasible.
    pub fn drop_trivial(&mut self, tol: f64) {
        let ineqs = std::mem::take(&mut self.affine_ineqs);
        self.affine_ineqs = ineqs
            .into_iter()
            .map(|e| e.prune(tol))
            .filter(|e| !(e.is_constant() && e.constant >= 0.0))
            .collect();
        let socs = std::mem::take(&mut self.soc_constraints);
        self.soc_constraints = socs
            .into_iter()
            .map(|c| SocConstraint {
                vector: c.vector.into_iter().map(|e| e.prune(tol)).collect(),
                bound: c.bound.prune(tol),
            })
            .filter(|c| {
                let constant =
                    c.bound.is_constant() && c.vector.iter().all(AffineExpr::is_constant);
                let norm = c
                    .vector
                    .iter()
                    .map(|e| e.constant * e.constant)
                    .sum::<f64>()
                    .sqrt();
                !(constant && norm <= c.bound.constant)
            })
            .collect();
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.n_coords;
        let check = |what: &'static str, e: &AffineExpr| -> Result<(), ConicError> {
            for &(i, a) in &e.terms {
                if i >= n {
                    return Err(ConicError::BadCoordinate(what, i, n));
                }
                if !a.is_finite() {
                    return Err(ConicError::NonFinite(what));
                }
            }
            if !e.constant.is_finite() {
                return Err(ConicError::NonFinite(what));
            }
            Ok(())
        };
        check("objective", &self.objective)?;
        self.affine_eqs
            .iter()
            .try_for_each(|e| check("equality row", e))?;
        self.affine_ineqs
            .iter()
            .try_for_each(|e| check("inequality row", e))?;
        for soc in &self.soc_constraints {
            check("cone bound", &soc.bound)?;
            soc.vector.iter().try_for_each(|e| check("cone row", e))?;
        }
        for id in &self.psd_blocks {
            if id.0 >= self.blocks.len() {
                return Err(ConicError::UnknownBlock(format!("#{}", id.0)));
            }
        }
        Ok(())
    }

    /// Real symmetric matrix the PSD cone sees for a matrix block: the block
    /// itself, or the `2n×2n` embedding of a Hermitian block.
    pub fn cone_matrix(&self, id: BlockId, x: &[f64]) -> DMatrix<f64> {
        let b = self.block(id);
        let coords = &x[b.offset..b.offset + b.kind.n_coords()];
        match b.kind {
            BlockKind::Symmetric(n) => {
                DMatrix::from_fn(n, n, |i, j| coords[triu_index(i.min(j), i.max(j))])
            }
            BlockKind::Hermitian(n) => {
                let h = hermitian_from_coords(coords, n);
                crate::linalg::real_embed(&h).expect("coordinates always give a Hermitian matrix")
            }
            kind => panic!("block {} of kind {kind:?} has no cone matrix", b.name),
        }
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for e in &self.affine_eqs {
            worst = worst.max(e.eval(x).abs());
        }
        for e in &self.affine_ineqs {
            worst = worst.max(-e.eval(x));
        }
        for soc in &self.soc_constraints {
            let norm = soc
                .vector
                .iter()
                .map(|e| e.eval(x).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(norm - soc.bound.eval(x));
        }
        for &id in &self.psd_blocks {
            let m = self.cone_matrix(id, x);
            if m.nrows() > 0 {
                worst = worst.max(-m.symmetric_eigenvalues().min());
            }
        }
        worst
    }

    pub fn hermitian_value(&self, id: BlockId, x: &[f64]) -> CMat {
        let (n, off) = self.hermitian_dim(id);
        hermitian_from_coords(&x[off..off + n * n], n)
    }

    /// Coordinate vector with a Hermitian block set to `value` and everything
    /// else zero.
    pub fn assign_hermitian(&self, x: &mut [f64], id: BlockId, value: &CMat) {
        let (n, off) = self.hermitian_dim(id);
        assert_eq!(value.shape(), (n, n));
        x[off..off + n * n].copy_from_slice(&hermitian_to_coords(value));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_rows_are_dropped() {
        let mut p = ConicProblem::new();
        let t = p.add_block("t", BlockKind::Scalar).unwrap();
        p.add_ge(AffineExpr::var(0, 1e-18).shifted(1e-17));
        p.add_ge(AffineExpr::constant(-1.0));
        p.add_ge(p.scalar(t));
        p.add_soc(vec![AffineExpr::var(0, 1e-16)], AffineExpr::constant(0.0));
        p.add_soc(vec![AffineExpr::constant(2.0)], AffineExpr::constant(1.0));
        p.drop_trivial(1e-12);
        assert_eq!(p.affine_ineqs.len(), 2);
        assert_eq!(p.affine_ineqs[0].constant, -1.0);
        assert_eq!(p.soc_constraints.len(), 1);
        assert_eq!(p.soc_constraints[0].bound.constant, 1.0);
    }
    use crate::linalg::testutil::{rand_hermitian, randn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hermitian_coords_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let h = rand_hermitian(&mut rng, 4);
        let back = hermitian_from_coords(&hermitian_to_coords(&h), 4);
        assert!((back - h).norm() < 1e-15);
    }

    #[test]
    fn trace_functional_matches_dense_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut p = ConicProblem::new();
        p.add_block("t", BlockKind::Scalar).unwrap();
        let id = p.add_block("X", BlockKind::Hermitian(3)).unwrap();
        let coef = rand_hermitian(&mut rng, 3);
        let x_val = rand_hermitian(&mut rng, 3);
        let mut x = vec![0.0; p.n_coords];
        p.assign_hermitian(&mut x, id, &x_val);
        let expr = p.hermitian_trace(id, &coef);
        let probed = p.probe_scalar(id, |m| (&coef * m).trace().re);
        let dense = (&coef * &x_val).trace().re;
        assert!((expr.eval(&x) - dense).abs() < 1e-12);
        assert!((probed.eval(&x) - dense).abs() < 1e-12);
    }

    #[test]
    fn probe_vector_recovers_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut p = ConicProblem::new();
        let id = p.add_block("X", BlockKind::Hermitian(2)).unwrap();
        let a = randn(&mut rng, 3, 2);
        let b = randn(&mut rng, 2, 1);
        let f = |m: &CMat| &a * m * &b;
        let rows = p.probe_vector(id, f);
        assert_eq!(rows.len(), 6);
        let x_val = rand_hermitian(&mut rng, 2);
        let mut x = vec![0.0; p.n_coords];
        p.assign_hermitian(&mut x, id, &x_val);
        let expect = f(&x_val);
        for r in 0..3 {
            assert!((rows[r].eval(&x) - expect[r].re).abs() < 1e-12);
            assert!((rows[r + 3].eval(&x) - expect[r].im).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_catches_bad_rows() {
        let mut p = ConicProblem::new();
        let t = p.add_block("t", BlockKind::Scalar).unwrap();
        assert!(p.add_block("t", BlockKind::Scalar).is_err());
        assert!(p.add_psd(t).is_err());
        p.add_ge(AffineExpr::var(3, 1.0));
        assert!(matches!(p.validate(), Err(ConicError::BadCoordinate(..))));
        p.affine_ineqs.clear();
        p.objective = AffineExpr::var(0, f64::NAN);
        assert!(matches!(p.validate(), Err(ConicError::NonFinite(_))));
    }

    #[test]
    fn violation_measures_every_cone() {
        let mut p = ConicProblem::new();
        let t = p.add_block("t", BlockKind::Scalar).unwrap();
        let v = p.add_block("v", BlockKind::Vector(2)).unwrap();
        let s = p.add_block("S", BlockKind::Symmetric(2)).unwrap();
        p.add_psd(s).unwrap();
        let off = p.block(v).offset;
        p.add_soc(
            vec![AffineExpr::var(off, 1.0), AffineExpr::var(off + 1, 1.0)],
            p.scalar(t),
        );
        // t = 1, v = (1, 1), S = diag(1, -0.1)
        let x = vec![1.0, 1.0, 1.0, 1.0, 0.0, -0.1];
        assert!((p.max_violation(&x) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let x = vec![2.0, 1.0, 1.0, 1.0, 0.0, -0.5];
        assert!((p.max_violation(&x) - 0.5).abs() < 1e-12);
    }
}
