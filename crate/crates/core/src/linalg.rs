//! Dense small-matrix utilities and the Gaussian belief containers.
//!
//! Every covariance produced by the filters is routed through [`symmetrize`]
//! and every inverse goes through a Cholesky or LU factorization with an
//! explicit singularity check. Nothing here regularizes silently.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, LU};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Condition estimate above which a block is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// Relative symmetry tolerance for covariance matrices.
pub const TOL_SYM: f64 = 1e-10;
/// Relative (to the trace) eigenvalue floor for positive semidefiniteness.
pub const TOL_PSD: f64 = 1e-10;

/// Returns `(P + Pᵀ) / 2`.
pub fn symmetrize<T: Scalar>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !p.is_square() {
        return Err(Error::NonSquare {
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    Ok(sym(p.clone()))
}

/// In-place symmetrization for matrices already known to be square.
pub(crate) fn sym<T: Scalar>(mut p: DMatrix<T>) -> DMatrix<T> {
    let n = p.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (p[(i, j)] + p[(j, i)]) * half;
            p[(i, j)] = avg;
            p[(j, i)] = avg;
        }
    }
    p
}

fn cholesky<T: Scalar>(p: &DMatrix<T>, context: &'static str) -> Result<Cholesky<T, nalgebra::Dyn>> {
    if !p.is_square() {
        return Err(Error::NonSquare {
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd { context });
    }
    Cholesky::new(p.clone()).ok_or(Error::NotSpd { context })
}

/// Solves `P·X = B` for symmetric positive definite `P` via Cholesky.
pub fn spd_solve<T: Scalar>(p: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    if b.nrows() != p.nrows() {
        return Err(Error::dims("spd_solve", p.nrows(), b.nrows()));
    }
    let chol = cholesky(p, "spd_solve")?;
    Ok(chol.solve(b))
}

/// Vector right-hand side variant of [`spd_solve`].
pub fn spd_solve_vec<T: Scalar>(p: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    if b.len() != p.nrows() {
        return Err(Error::dims("spd_solve", p.nrows(), b.len()));
    }
    let chol = cholesky(p, "spd_solve")?;
    Ok(chol.solve(b))
}

/// Explicit inverse of an SPD matrix, symmetrized.
pub fn spd_inverse<T: Scalar>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = cholesky(p, "spd_inverse")?;
    Ok(sym(chol.inverse()))
}

/// Returns true when a Cholesky factorization of `p` succeeds.
pub fn is_spd<T: Scalar>(p: &DMatrix<T>) -> bool {
    cholesky(p, "is_spd").is_ok()
}

fn norm1<T: Scalar>(m: &DMatrix<T>) -> T {
    m.column_iter()
        .map(|c| c.iter().fold(T::zero(), |acc, v| acc + v.abs()))
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

/// General inverse through LU, rejecting matrices whose 1-norm condition
/// estimate exceeds [`SINGULAR_CONDITION`].
pub fn checked_inverse<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let inv = LU::new(m.clone())
        .try_inverse()
        .ok_or(Error::SingularBlock { condition: f64::INFINITY })?;
    let condition = (norm1(m) * norm1(&inv)).as_f64();
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularBlock { condition });
    }
    Ok(inv)
}

/// Inverse of the block matrix `[[A, U], [V, D]]` assembled from the Schur
/// complement of `D`:
///
/// ```text
/// Δ = (A − U D⁻¹ V)⁻¹
/// [[Δ, −Δ U D⁻¹], [−D⁻¹ V Δ, D⁻¹ + D⁻¹ V Δ U D⁻¹]]
/// ```
pub fn block_inverse<T: Scalar>(
    a: &DMatrix<T>,
    u: &DMatrix<T>,
    v: &DMatrix<T>,
    d: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let s = a.nrows();
    let b = d.nrows();
    if !a.is_square() || !d.is_square() {
        return Err(Error::NonSquare {
            rows: if a.is_square() { d.nrows() } else { a.nrows() },
            cols: if a.is_square() { d.ncols() } else { a.ncols() },
        });
    }
    if u.shape() != (s, b) {
        return Err(Error::dims("block_inverse U", format!("{s}x{b}"), format!("{}x{}", u.nrows(), u.ncols())));
    }
    if v.shape() != (b, s) {
        return Err(Error::dims("block_inverse V", format!("{b}x{s}"), format!("{}x{}", v.nrows(), v.ncols())));
    }

    let d_inv = checked_inverse(d)?;
    let schur = a - u * &d_inv * v;
    let delta = checked_inverse(&schur)?;
    let u_dinv = u * &d_inv;
    let dinv_v = &d_inv * v;

    let mut out = DMatrix::zeros(s + b, s + b);
    out.view_mut((0, 0), (s, s)).copy_from(&delta);
    out.view_mut((0, s), (s, b)).copy_from(&(-(&delta * &u_dinv)));
    out.view_mut((s, 0), (b, s)).copy_from(&(-(&dinv_v * &delta)));
    out.view_mut((s, s), (b, b))
        .copy_from(&(&d_inv + &dinv_v * &delta * &u_dinv));
    Ok(out)
}

/// Frobenius norm of `a − b` relative to the norm of `b` (absolute when `b`
/// is zero).
pub fn rel_frobenius<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    let diff = (a - b).norm().as_f64();
    let scale = b.norm().as_f64();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Vector variant of [`rel_frobenius`].
pub fn rel_norm<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> f64 {
    let diff = (a - b).norm().as_f64();
    let scale = b.norm().as_f64();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| if v.abs() > acc { v.abs() } else { acc })
}

/// Symmetry check against `tol_sym · max|entry|`.
pub fn is_symmetric<T: Scalar>(m: &DMatrix<T>) -> bool {
    if !m.is_square() {
        return false;
    }
    let tol = T::lit(TOL_SYM) * max_abs(m);
    let n = m.nrows();
    (0..n).all(|i| ((i + 1)..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// PSD check: all eigenvalues ≥ −tol_psd · trace.
pub fn is_psd<T: Scalar>(m: &DMatrix<T>) -> bool {
    if !m.is_square() {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    let eig = SymmetricEigen::new(sym(m.clone()));
    let floor = -T::lit(TOL_PSD) * m.trace().abs();
    eig.eigenvalues.iter().all(|&l| l >= floor)
}

/// Block-diagonal assembly.
pub fn block_diag<T: Scalar>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief<T: Scalar> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Scalar> GaussianBelief<T> {
    /// Validates dimensions, symmetry and positive semidefiniteness. The
    /// stored covariance is symmetrized.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::NonSquare {
                rows: cov.nrows(),
                cols: cov.ncols(),
            });
        }
        if mean.len() != cov.nrows() {
            return Err(Error::dims("GaussianBelief", cov.nrows(), mean.len()));
        }
        if !is_symmetric(&cov) || !is_psd(&cov) {
            return Err(Error::NotSpd { context: "GaussianBelief covariance" });
        }
        Ok(Self::from_parts(mean, cov))
    }

    /// Skips validation but still symmetrizes.
    pub(crate) fn from_parts(mean: DVector<T>, cov: DMatrix<T>) -> Self {
        Self { mean, cov: sym(cov) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Covariance of `[x_t; b]` split into target, cross and bias blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedCov<T: Scalar> {
    pub t: DMatrix<T>,
    pub tb: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Scalar> PartitionedCov<T> {
    pub fn new(t: DMatrix<T>, tb: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        if !t.is_square() || !b.is_square() {
            return Err(Error::NonSquare { rows: t.nrows(), cols: t.ncols() });
        }
        if tb.shape() != (t.nrows(), b.nrows()) {
            return Err(Error::dims(
                "PartitionedCov cross block",
                format!("{}x{}", t.nrows(), b.nrows()),
                format!("{}x{}", tb.nrows(), tb.ncols()),
            ));
        }
        Ok(Self { t: sym(t), tb, b: sym(b) })
    }

    pub fn state_dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn bias_dim(&self) -> usize {
        self.b.nrows()
    }

    /// `[[t, tb], [tbᵀ, b]]`.
    pub fn assemble(&self) -> DMatrix<T> {
        let s = self.state_dim();
        let b = self.bias_dim();
        let mut full = DMatrix::zeros(s + b, s + b);
        full.view_mut((0, 0), (s, s)).copy_from(&self.t);
        full.view_mut((0, s), (s, b)).copy_from(&self.tb);
        full.view_mut((s, 0), (b, s)).copy_from(&self.tb.transpose());
        full.view_mut((s, s), (b, b)).copy_from(&self.b);
        full
    }

    /// Splits a full `(s + b)` covariance at row/column `s`.
    pub fn split(full: &DMatrix<T>, s: usize) -> Result<Self> {
        if !full.is_square() {
            return Err(Error::NonSquare { rows: full.nrows(), cols: full.ncols() });
        }
        if s > full.nrows() {
            return Err(Error::dims("PartitionedCov::split", format!("<= {}", full.nrows()), s));
        }
        let b = full.nrows() - s;
        let full = sym(full.clone());
        Ok(Self {
            t: full.view((0, 0), (s, s)).into_owned(),
            tb: full.view((0, s), (s, b)).into_owned(),
            b: full.view((s, s), (b, b)).into_owned(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Gauss–Jordan elimination with partial pivoting, kept independent of
    /// nalgebra's factorizations.
    fn gauss_jordan_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| m[(i, j)]).collect();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let p = a[col][col];
            for v in a[col].iter_mut() {
                *v /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    let pivot_row = a[col].clone();
                    for (v, pv) in a[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        DMatrix::from_fn(n, n, |i, j| a[i][n + j])
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn split4(m: &DMatrix<f64>, s: usize) -> [DMatrix<f64>; 4] {
        let b = m.nrows() - s;
        [
            m.view((0, 0), (s, s)).into_owned(),
            m.view((0, s), (s, b)).into_owned(),
            m.view((s, 0), (b, s)).into_owned(),
            m.view((s, s), (b, b)).into_owned(),
        ]
    }

    #[test]
    fn block_inverse_identity() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let [a, u, v, d] = split4(&i2, 1);
        assert_eq!(block_inverse(&a, &u, &v, &d).unwrap(), i2);
        // degenerate split with an empty target block
        let [a, u, v, d] = split4(&i2, 0);
        assert_eq!(block_inverse(&a, &u, &v, &d).unwrap(), i2);
    }

    #[test]
    fn block_inverse_two_by_two_adjugate() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        // adjugate / determinant
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let expected = DMatrix::from_row_slice(2, 2, &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]]) / det;
        let [a, u, v, d] = split4(&m, 1);
        let got = block_inverse(&a, &u, &v, &d).unwrap();
        assert!((got - &expected).abs().max() < 1e-15);
        assert!((expected[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn block_inverse_matches_gauss_jordan() {
        let m = random_spd(5, 7);
        let [a, u, v, d] = split4(&m, 3);
        let got = block_inverse(&a, &u, &v, &d).unwrap();
        let oracle = gauss_jordan_inverse(&m);
        assert!(rel_frobenius(&got, &oracle) < 1e-10);
    }

    #[test]
    fn block_inverse_rejects_singular_blocks() {
        let d = DMatrix::<f64>::zeros(1, 1);
        let a = DMatrix::identity(1, 1);
        let u = DMatrix::zeros(1, 1);
        assert!(matches!(block_inverse(&a, &u, &u, &d), Err(Error::SingularBlock { .. })));
        // Schur complement A − U D⁻¹ V = 1 − 1 = 0
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(block_inverse(&one, &one, &one, &one), Err(Error::SingularBlock { .. })));
    }

    #[test]
    fn symmetrize_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(symmetrize(&i3).unwrap(), i3);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(symmetrize(&m).unwrap(), DMatrix::from_element(2, 2, 1.0));
        let s = random_spd(4, 3);
        let s = symmetrize(&s).unwrap();
        assert_eq!(symmetrize(&s).unwrap(), s);
        assert!(matches!(symmetrize(&DMatrix::<f64>::zeros(2, 3)), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn spd_solve_examples() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.5, 4.0, -1.0]);
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(spd_solve(&i2, &b).unwrap(), b);
        let four = DMatrix::from_element(1, 1, 4.0);
        let two = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(spd_solve(&four, &two).unwrap()[(0, 0)], 0.5);

        let p = random_spd(6, 11);
        let rhs = DMatrix::from_fn(6, 2, |i, j| (i as f64) - 2.0 * j as f64);
        let x = spd_solve(&p, &rhs).unwrap();
        let oracle = gauss_jordan_inverse(&p) * &rhs;
        assert!(rel_frobenius(&x, &oracle) < 1e-9);
        assert!((&p * &x - &rhs).norm() <= 1e-9 * rhs.norm());
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_solve(&m, &m), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn belief_validation() {
        let ok = GaussianBelief::new(DVector::zeros(2), DMatrix::<f64>::identity(2, 2));
        assert!(ok.is_ok());
        let bad = GaussianBelief::new(DVector::zeros(3), DMatrix::<f64>::identity(2, 2));
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
        let neg = GaussianBelief::new(DVector::zeros(1), DMatrix::from_element(1, 1, -1.0));
        assert!(neg.is_err());
    }

    #[test]
    fn partitioned_roundtrip() {
        let m = random_spd(5, 2);
        let p = PartitionedCov::split(&m, 3).unwrap();
        assert_eq!(p.assemble(), sym(m));
    }

    #[test]
    fn generic_over_f32() {
        let m = DMatrix::<f32>::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let [a, u, v, d] = [
            m.view((0, 0), (1, 1)).into_owned(),
            m.view((0, 1), (1, 1)).into_owned(),
            m.view((1, 0), (1, 1)).into_owned(),
            m.view((1, 1), (1, 1)).into_owned(),
        ];
        let inv = block_inverse(&a, &u, &v, &d).unwrap();
        assert!((inv[(0, 1)] + 1.0 / 3.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn block_inverse_times_matrix_is_identity(seed in 0u64..500, n in 2usize..7, split in 1usize..6) {
            let s = split.min(n - 1);
            let m = random_spd(n, seed);
            let [a, u, v, d] = split4(&m, s);
            let inv = block_inverse(&a, &u, &v, &d).unwrap();
            let eye = DMatrix::<f64>::identity(n, n);
            prop_assert!(rel_frobenius(&(&inv * &m), &eye) < 1e-10);
        }

        #[test]
        fn symmetrize_is_idempotent(seed in 0u64..500, n in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0));
            let once = symmetrize(&m).unwrap();
            prop_assert_eq!(symmetrize(&once).unwrap(), once);
        }

        #[test]
        fn spd_solve_self_is_identity(seed in 0u64..500, n in 1usize..8) {
            let p = random_spd(n, seed);
            let x = spd_solve(&p, &p).unwrap();
            prop_assert!(rel_frobenius(&x, &DMatrix::identity(n, n)) < 1e-9);
        }
    }
}
