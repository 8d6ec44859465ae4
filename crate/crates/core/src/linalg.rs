//! Dense complex linear algebra used by the beamforming model.
//!
//! All matrices are nalgebra `DMatrix<Complex64>` values, stored column-major.
//! `vec` stacks columns, so `vec(A X B) = (Bᵀ ⊗ A) vec(X)` holds with the
//! standard Kronecker product.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMat = DMatrix<Complex64>;

/// Asymmetry (relative to `max(1, ‖A‖)`) tolerated and silently repaired.
pub const HERMITIAN_TOL: f64 = 1e-9;
/// Relative negative-eigenvalue slack accepted by [`psd_factor`].
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (relative defect {defect:.3e})")]
    NotHermitian { defect: f64 },
    #[error(
        "matrix is not positive semidefinite (min eigenvalue {min_eig:.3e}, max {max_eig:.3e})"
    )]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub fn c(re: f64, im: f64) -> C64 {
    Complex64::new(re, im)
}

/// Column-major vectorization, returned as a column vector.
pub fn vec(a: &CMat) -> CMat {
    CMat::from_column_slice(a.nrows() * a.ncols(), 1, a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &CMat, rows: usize, cols: usize) -> CMat {
    assert_eq!(
        v.len(),
        rows * cols,
        "unvec: length {} != {rows}x{cols}",
        v.len()
    );
    CMat::from_column_slice(rows, cols, v.as_slice())
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Real part of the trace.
pub fn trace_re(a: &CMat) -> f64 {
    a.trace().re
}

/// Elementwise conjugate (no transpose).
pub fn conj(a: &CMat) -> CMat {
    a.map(|z| z.conj())
}

/// A 0/1 matrix with exactly one 1 per row and column, stored as a gather map:
/// row `r` holds its 1 in column `gather[r]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMatrix {
    gather: Vec<usize>,
}

impl PermutationMatrix {
    pub fn from_gather(gather: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; gather.len()];
        for &g in &gather {
            if g >= gather.len() || seen[g] {
                return None;
            }
            seen[g] = true;
        }
        Some(Self { gather })
    }

    pub fn dim(&self) -> usize {
        self.gather.len()
    }

    pub fn gather(&self) -> &[usize] {
        &self.gather
    }

    /// `P · v` for a column vector `v`.
    pub fn apply(&self, v: &CMat) -> CMat {
        assert_eq!(v.len(), self.dim(), "permutation applied to wrong length");
        CMat::from_iterator(self.dim(), 1, self.gather.iter().map(|&g| v[g]))
    }

    pub fn to_dense(&self) -> CMat {
        let n = self.dim();
        let mut m = CMat::zeros(n, n);
        for (r, &col) in self.gather.iter().enumerate() {
            m[(r, col)] = c(1.0, 0.0);
        }
        m
    }
}

/// The 0/1 matrix `T` with `vec(F* ⊗ F) = T · vec(f f^H)` for `F ∈ C^{p×q}`,
/// `f = vec(F)`.
///
/// Entry `((i1,i2),(j1,j2))` of `F* ⊗ F` is `conj(F[i1,j1]) · F[i2,j2]`, which is
/// entry `(k, l)` of `f f^H` with `k = i2 + j2·p` and `l = i1 + j1·p`.
pub fn build_tf(p: usize, q: usize) -> PermutationMatrix {
    assert!(p >= 1 && q >= 1, "build_tf needs p, q >= 1");
    let pq = p * q;
    let kron_rows = p * p;
    let mut gather = vec![0usize; pq * pq];
    for j1 in 0..q {
        for j2 in 0..q {
            for i1 in 0..p {
                for i2 in 0..p {
                    let row = i1 * p + i2;
                    let col = j1 * q + j2;
                    let target = row + col * kron_rows;
                    let k = i2 + j2 * p;
                    let l = i1 + j1 * p;
                    gather[target] = k + l * pq;
                }
            }
        }
    }
    PermutationMatrix::from_gather(gather).expect("T_f index map is a bijection")
}

/// Sum of the `n×n` blocks of `z` weighted by `y`: `Σ_{k,l} y[l,k] · Z_{kl}`.
///
/// `Tr(z · (y ⊗ x)) = Tr(block_weighted_sum(z, y) · x)`, which exposes the
/// dependence on `x` as a linear functional.
pub fn block_weighted_sum(z: &CMat, y: &CMat) -> Result<CMat, LinalgError> {
    let m = y.nrows();
    if y.ncols() != m || m == 0 || z.nrows() != z.ncols() || z.nrows() % m != 0 {
        return Err(LinalgError::Dimension(format!(
            "z {}x{} is not a block matrix over y {}x{}",
            z.nrows(),
            z.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let n = z.nrows() / m;
    let mut acc = CMat::zeros(n, n);
    for k in 0..m {
        for l in 0..m {
            let w = y[(l, k)];
            if w != C64::new(0.0, 0.0) {
                acc += z.view((k * n, l * n), (n, n)) * w;
            }
        }
    }
    Ok(acc)
}

/// `Tr(z · (y ⊗ x))` for square `y` (m×m), `x` (n×n) and `z` (mn×mn).
pub fn trace_kron(z: &CMat, y: &CMat, x: &CMat) -> Result<C64, LinalgError> {
    let (m, n) = (y.nrows(), x.nrows());
    if y.ncols() != m || x.ncols() != n {
        return Err(LinalgError::Dimension(
            "trace_kron factors must be square".into(),
        ));
    }
    if z.nrows() != m * n || z.ncols() != m * n {
        return Err(LinalgError::Dimension(format!(
            "z is {}x{}, expected {}x{}",
            z.nrows(),
            z.ncols(),
            m * n,
            m * n
        )));
    }
    let p = block_weighted_sum(z, y)?;
    Ok((p * x).trace())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

/// Extreme value of `Re(x^H y)` over the ball `‖x‖ ≤ delta`, with its argument.
pub fn ball_lin_extreme(y: &CMat, delta: f64, sense: Sense) -> (f64, CMat) {
    assert!(delta >= 0.0, "ball radius must be nonnegative");
    let norm = y.norm();
    if norm == 0.0 {
        return (0.0, CMat::zeros(y.nrows(), y.ncols()));
    }
    let scale = delta / norm;
    match sense {
        Sense::Max => (delta * norm, y * c(scale, 0.0)),
        Sense::Min => (-delta * norm, y * c(-scale, 0.0)),
    }
}

fn require_square(a: &CMat) -> Result<usize, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Returns `(A + A^H)/2` if `A` is Hermitian within [`HERMITIAN_TOL`].
pub fn hermitian_part(a: &CMat) -> Result<CMat, LinalgError> {
    require_square(a)?;
    let adj = a.adjoint();
    let defect = (a - &adj).norm() / a.norm().max(1.0);
    if defect > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian { defect });
    }
    Ok((a + adj) * c(0.5, 0.0))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eig(a: &CMat) -> Result<(Vec<f64>, CMat), LinalgError> {
    let h = hermitian_part(a)?;
    let n = h.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// A factor `S` with `S S^H = A` for Hermitian PSD `A`; tiny negative
/// eigenvalues are clamped to zero.
pub fn psd_factor(a: &CMat) -> Result<CMat, LinalgError> {
    let (values, vectors) = hermitian_eig(a)?;
    let Some(&max_eig) = values.first() else {
        return Ok(CMat::zeros(0, 0));
    };
    let min_eig = *values.last().unwrap();
    if min_eig < -PSD_TOL * max_eig.max(1.0) {
        return Err(LinalgError::NotPsd { min_eig, max_eig });
    }
    let mut s = vectors;
    for (j, &lam) in values.iter().enumerate() {
        let root = lam.max(0.0).sqrt();
        s.column_mut(j).scale_mut(root);
    }
    Ok(s)
}

/// Projection of a Hermitian matrix onto the PSD cone.
pub fn psd_project(a: &CMat) -> Result<CMat, LinalgError> {
    let s = psd_factor_unchecked(a)?;
    Ok(&s * s.adjoint())
}

fn psd_factor_unchecked(a: &CMat) -> Result<CMat, LinalgError> {
    let (values, mut vectors) = hermitian_eig(a)?;
    for (j, &lam) in values.iter().enumerate() {
        vectors.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    Ok(vectors)
}

/// `A ↦ [[Re A, −Im A], [Im A, Re A]]`.
pub fn real_embed(a: &CMat) -> Result<DMatrix<f64>, LinalgError> {
    let h = hermitian_part(a)?;
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i + n, j)] = z.im;
            out[(i, j + n)] = -z.im;
        }
    }
    Ok(out)
}

/// Stacks `(Re u; Im u)`.
pub fn real_embed_vec(u: &CMat) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(2 * n, |i, _| if i < n { u[i].re } else { u[i - n].im })
}

/// Inverse of [`real_embed`]: reads the `2n×2n` block structure back into an
/// `n×n` Hermitian matrix by averaging the redundant copies. Returns the
/// matrix and the largest structural defect found.
pub fn real_unembed(e: &DMatrix<f64>) -> Result<(CMat, f64), LinalgError> {
    if e.nrows() != e.ncols() || e.nrows() % 2 != 0 {
        return Err(LinalgError::Dimension(format!(
            "embedded block must be 2n x 2n, got {}x{}",
            e.nrows(),
            e.ncols()
        )));
    }
    let n = e.nrows() / 2;
    let mut defect: f64 = 0.0;
    let mut out = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let re_a = e[(i, j)];
            let re_b = e[(i + n, j + n)];
            let im_a = e[(i + n, j)];
            let im_b = -e[(i, j + n)];
            defect = defect.max((re_a - re_b).abs()).max((im_a - im_b).abs());
            out[(i, j)] = c(0.5 * (re_a + re_b), 0.5 * (im_a + im_b));
        }
    }
    let adj = out.adjoint();
    defect = defect.max((&out - &adj).camax());
    Ok(((out + adj) * c(0.5, 0.0), defect))
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real(rows: usize, cols: usize, data: &[f64]) -> CMat {
        CMat::from_row_iterator(rows, cols, data.iter().map(|&x| c(x, 0.0)))
    }

    #[test]
    fn vec_is_column_major() {
        let a = real(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        let v = vec(&a);
        let got: Vec<f64> = v.iter().map(|z| z.re).collect();
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvec(&v, 2, 2), a);
    }

    #[test]
    fn vec_of_column_vector_is_identity() {
        let v = real(3, 1, &[1.0, -2.0, 5.0]);
        assert_eq!(vec(&v), v);
    }

    #[test]
    fn vec_preserves_frobenius_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(&mut rng, 3, 2);
        assert!(rel_err(vec(&a).norm(), a.norm()) <= 1e-14);
    }

    #[test]
    fn kron_small_cases() {
        assert_eq!(
            kron(&real(1, 1, &[2.0]), &real(1, 1, &[3.0])),
            real(1, 1, &[6.0])
        );
        let x = real(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron(&identity(2), &x);
        let mut expect = CMat::zeros(4, 4);
        expect.view_mut((0, 0), (2, 2)).copy_from(&x);
        expect.view_mut((2, 2), (2, 2)).copy_from(&x);
        assert_eq!(k, expect);
    }

    #[test]
    fn kron_vec_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = randn(&mut rng, 3, 2);
            let x = randn(&mut rng, 2, 4);
            let b = randn(&mut rng, 4, 2);
            let lhs = vec(&(&a * &x * &b));
            let rhs = kron(&b.transpose(), &a) * vec(&x);
            assert!((&lhs - &rhs).norm() <= 1e-12 * lhs.norm());
        }
    }

    /// Brute-force oracle: evaluate vec(F*⊗F) and vec(ff^H) with symbolic
    /// markers and match positions.
    fn tf_oracle(p: usize, q: usize) -> Vec<usize> {
        // Give each entry of F a distinct value so every product is unique.
        let f = CMat::from_fn(p, q, |i, j| c(1.0 + (i + p * j) as f64, 0.0));
        let big = vec(&kron(&conj(&f), &f));
        let fv = vec(&f);
        let outer = vec(&(&fv * fv.adjoint()));
        // products are unique only as unordered pairs; disambiguate with a
        // second, imaginary-tagged F.
        let g = CMat::from_fn(p, q, |i, j| c(1.0, 0.1 * (1 + i + p * j) as f64));
        let big_g = vec(&kron(&conj(&g), &g));
        let gv = vec(&g);
        let outer_g = vec(&(&gv * gv.adjoint()));
        (0..big.len())
            .map(|t| {
                let hits: Vec<usize> = (0..outer.len())
                    .filter(|&s| {
                        (big[t] - outer[s]).norm() < 1e-12 && (big_g[t] - outer_g[s]).norm() < 1e-12
                    })
                    .collect();
                assert_eq!(hits.len(), 1, "ambiguous oracle at {t}");
                hits[0]
            })
            .collect()
    }

    #[test]
    fn tf_scalar_case() {
        let t = build_tf(1, 1);
        assert_eq!(t.to_dense(), real(1, 1, &[1.0]));
    }

    #[test]
    fn tf_matches_exhaustive_oracle() {
        for (p, q) in [(2, 1), (1, 2), (2, 2), (3, 2)] {
            assert_eq!(
                build_tf(p, q).gather(),
                tf_oracle(p, q).as_slice(),
                "p={p} q={q}"
            );
        }
    }

    #[test]
    fn tf_relation_holds_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = build_tf(2, 2);
        for _ in 0..100 {
            let f = randn(&mut rng, 2, 2);
            let fv = vec(&f);
            let lhs = vec(&kron(&conj(&f), &f));
            let rhs = t.apply(&vec(&(&fv * fv.adjoint())));
            assert_eq!(lhs, rhs);
            let dense = t.to_dense() * vec(&(&fv * fv.adjoint()));
            assert_eq!(lhs, dense);
        }
    }

    #[test]
    fn norm_chain_through_tf() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (n1, n2, n3, n4) = (2, 3, 2, 2);
            let x1 = randn(&mut rng, n1, n2);
            let f = randn(&mut rng, n2, n3);
            let x2 = randn(&mut rng, n3, n3);
            let x3 = randn(&mut rng, n2, n4);
            let direct = (&x1 * &f * &x2 * f.adjoint() * &x3).norm();
            let fv = vec(&f);
            let lhs_op = kron(&vec(&x2).transpose(), &kron(&x3.transpose(), &x1));
            let chained = (lhs_op * build_tf(n2, n3).apply(&vec(&(&fv * fv.adjoint())))).norm();
            assert!(rel_err(chained, direct) <= 1e-10);
        }
    }

    #[test]
    fn trace_kron_cases() {
        let t = trace_kron(&identity(6), &identity(2), &identity(3)).unwrap();
        assert_eq!(t, c(6.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = rand_hermitian(&mut rng, 4);
        let y = randn(&mut rng, 2, 2);
        let x = randn(&mut rng, 2, 2);
        let dense = (&z * kron(&y, &x)).trace();
        let fast = trace_kron(&z, &y, &x).unwrap();
        assert!((dense - fast).norm() <= 1e-12 * dense.norm());

        // Identity left factor sums the diagonal blocks.
        let m = 2;
        let mut blocks = CMat::zeros(2, 2);
        for k in 0..m {
            blocks += z.view((2 * k, 2 * k), (2, 2));
        }
        let expect = (blocks * &x).trace();
        let got = trace_kron(&z, &identity(m), &x).unwrap();
        assert!((expect - got).norm() <= 1e-12 * expect.norm());

        assert!(trace_kron(&identity(5), &identity(2), &identity(2)).is_err());
    }

    #[test]
    fn ball_extreme_closed_forms() {
        let zero = CMat::zeros(3, 1);
        let (v, x) = ball_lin_extreme(&zero, 1.0, Sense::Max);
        assert_eq!(v, 0.0);
        assert_eq!(x, zero);

        let e1 = real(3, 1, &[1.0, 0.0, 0.0]);
        let (v, x) = ball_lin_extreme(&e1, 2.0, Sense::Max);
        assert_eq!(v, 2.0);
        assert_eq!(x, real(3, 1, &[2.0, 0.0, 0.0]));
        let (v, x) = ball_lin_extreme(&e1, 2.0, Sense::Min);
        assert_eq!(v, -2.0);
        assert_eq!(x, real(3, 1, &[-2.0, 0.0, 0.0]));
    }

    #[test]
    fn ball_extreme_dominates_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = randn(&mut rng, 4, 1);
        let delta = 0.1;
        let (vmax, xmax) = ball_lin_extreme(&y, delta, Sense::Max);
        let (vmin, xmin) = ball_lin_extreme(&y, delta, Sense::Min);
        assert!(((xmax.adjoint() * &y)[0].re - vmax).abs() <= 1e-12);
        assert!(((xmin.adjoint() * &y)[0].re - vmin).abs() <= 1e-12);
        for _ in 0..10_000 {
            let mut x = randn(&mut rng, 4, 1);
            let r = delta * rng.gen::<f64>() / x.norm();
            x *= c(r, 0.0);
            let val = (x.adjoint() * &y)[0].re;
            assert!(val <= vmax + 1e-15 && val >= vmin - 1e-15);
        }
    }

    #[test]
    fn eig_simple_cases() {
        let (l, _) = hermitian_eig(&identity(3)).unwrap();
        assert_eq!(l, vec![1.0, 1.0, 1.0]);
        let d = real(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (l, u) = hermitian_eig(&d).unwrap();
        assert_eq!(l, vec![3.0, 1.0]);
        assert!((u[(1, 0)].norm() - 1.0).abs() < 1e-14 && (u[(0, 1)].norm() - 1.0).abs() < 1e-14);
        assert!(matches!(
            hermitian_eig(&CMat::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_hermitian(&mut rng, 4);
        let (l, u) = hermitian_eig(&a).unwrap();
        assert!(l.windows(2).all(|w| w[0] >= w[1]));
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            4,
            l.iter().map(|&x| c(x, 0.0)),
        ));
        let rec = &u * d * u.adjoint();
        assert!((rec - &a).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn eig_rejects_asymmetry_but_repairs_noise() {
        let mut a = identity(2);
        a[(0, 1)] = c(1e-12, 0.0);
        assert!(hermitian_eig(&a).is_ok());
        a[(0, 1)] = c(1e-3, 0.0);
        assert!(matches!(
            hermitian_eig(&a),
            Err(LinalgError::NotHermitian { .. })
        ));
    }

    #[test]
    fn psd_factor_cases() {
        let s = psd_factor(&identity(3)).unwrap();
        assert!((&s * s.adjoint() - identity(3)).norm() <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = randn(&mut rng, 4, 1);
        let qq = &q * q.adjoint();
        let s = psd_factor(&qq).unwrap();
        assert!((&s * s.adjoint() - &qq).norm() <= 1e-8 * qq.norm());

        let p = rand_psd(&mut rng, 5, 3);
        let s = psd_factor(&p).unwrap();
        assert!((&s * s.adjoint() - &p).norm() <= 1e-8 * p.norm());

        let neg = real(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(psd_factor(&neg), Err(LinalgError::NotPsd { .. })));
    }

    #[test]
    fn real_embedding_properties() {
        let e = real_embed(&real(1, 1, &[1.0])).unwrap();
        assert_eq!(e, DMatrix::<f64>::identity(2, 2));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_hermitian(&mut rng, 3);
        let b = rand_hermitian(&mut rng, 3);
        let lhs = (real_embed(&a).unwrap() * real_embed(&b).unwrap()).trace();
        let rhs = 2.0 * (&a * &b).trace().re;
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));

        let u = randn(&mut rng, 5, 1);
        assert!(rel_err(real_embed_vec(&u).norm(), u.norm()) <= 1e-14);

        let (back, defect) = real_unembed(&real_embed(&a).unwrap()).unwrap();
        assert_eq!(defect, 0.0);
        assert!((back - &a).norm() <= 1e-12);

        let mut skew = identity(2);
        skew[(0, 1)] = c(0.0, 1.0);
        assert!(real_embed(&skew).is_err());
    }

    #[test]
    fn embedding_preserves_psd_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let a = rand_hermitian(&mut rng, 3) + identity(3) * c(rng.gen_range(-1.0..1.0), 0.0);
            let (l, _) = hermitian_eig(&a).unwrap();
            let e = real_embed(&a).unwrap().symmetric_eigen();
            let emin = e.eigenvalues.min();
            assert!((emin - l[2]).abs() <= 1e-10);
        }
    }
}
