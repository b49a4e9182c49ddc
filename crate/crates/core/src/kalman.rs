//! Kalman predict/update kernels on a [`GaussianBelief`].
//!
//! Both the augmented-state filter and each decoupled branch run through these
//! functions, so the two filters share identical arithmetic for identical
//! inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, GaussianBelief};
use crate::scalar::Scalar;

/// `x ← F x`, `P ← F P Fᵀ + Q`.
pub fn predict<T: Scalar>(belief: &GaussianBelief<T>, f: &DMatrix<T>, q: &DMatrix<T>) -> Result<GaussianBelief<T>> {
    let n = belief.dim();
    if f.shape() != (n, n) {
        return Err(Error::dims("predict F", format!("{n}x{n}"), format!("{}x{}", f.nrows(), f.ncols())));
    }
    if q.shape() != (n, n) {
        return Err(Error::dims("predict Q", format!("{n}x{n}"), format!("{}x{}", q.nrows(), q.ncols())));
    }
    let mean = f * &belief.mean;
    let cov = f * &belief.cov * f.transpose() + q;
    Ok(GaussianBelief::from_parts(mean, cov))
}

fn check_measurement<T: Scalar>(n: usize, innovation_len: usize, h: &DMatrix<T>, r: &DMatrix<T>) -> Result<()> {
    let m = h.nrows();
    if h.ncols() != n {
        return Err(Error::dims("update H columns", n, h.ncols()));
    }
    if innovation_len != m {
        return Err(Error::dims("update measurement length", m, innovation_len));
    }
    if r.shape() != (m, m) {
        return Err(Error::dims("update R", format!("{m}x{m}"), format!("{}x{}", r.nrows(), r.ncols())));
    }
    Ok(())
}

/// Gain-form update driven by an innovation `ν = z − ẑ`:
///
/// `K = P̄ Hᵀ (H P̄ Hᵀ + R)⁻¹`, `x = x̄ + K ν`, `P = (I − K H) P̄`.
pub fn gain_update<T: Scalar>(
    belief: &GaussianBelief<T>,
    innovation: &DVector<T>,
    h: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<GaussianBelief<T>> {
    let n = belief.dim();
    check_measurement(n, innovation.len(), h, r)?;
    let pht = &belief.cov * h.transpose();
    let s = linalg::sym(h * &pht + r);
    // K = P̄ Hᵀ S⁻¹, computed as (S⁻¹ H P̄)ᵀ
    let gain = linalg::spd_solve(&s, &pht.transpose())
        .map_err(|_| Error::SingularInnovation)?
        .transpose();
    let mean = &belief.mean + &gain * innovation;
    let cov = (DMatrix::identity(n, n) - &gain * h) * &belief.cov;
    Ok(GaussianBelief::from_parts(mean, cov))
}

/// Information-form update for a linear measurement `z = H x + w`:
///
/// `P⁻¹ = P̄⁻¹ + Hᵀ R⁻¹ H`, `P⁻¹ x = P̄⁻¹ x̄ + Hᵀ R⁻¹ z`.
pub fn information_update<T: Scalar>(
    belief: &GaussianBelief<T>,
    z: &DVector<T>,
    h: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<GaussianBelief<T>> {
    let n = belief.dim();
    check_measurement(n, z.len(), h, r)?;
    let prior_info = linalg::spd_inverse(&belief.cov).map_err(|_| Error::SingularPrior)?;
    let r_inv_h = linalg::spd_solve(r, h).map_err(|_| Error::SingularInnovation)?;
    let r_inv_z = linalg::spd_solve_vec(r, z).map_err(|_| Error::SingularInnovation)?;
    let post_info = linalg::sym(&prior_info + h.transpose() * &r_inv_h);
    let info_vec = &prior_info * &belief.mean + h.transpose() * r_inv_z;
    let cov = linalg::spd_inverse(&post_info).map_err(|_| Error::SingularPrior)?;
    let mean = linalg::spd_solve_vec(&post_info, &info_vec).map_err(|_| Error::SingularPrior)?;
    Ok(GaussianBelief::from_parts(mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_gain_update() {
        let prior = GaussianBelief::<f64>::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let h = DMatrix::from_element(1, 1, 1.0);
        let r = DMatrix::from_element(1, 1, 1.0);
        let z = DVector::from_element(1, 2.0);
        let post = gain_update(&prior, &(&z - &h * &prior.mean), &h, &r).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15);
        let info = information_update(&prior, &z, &h, &r).unwrap();
        assert!((info.mean[0] - 1.0).abs() < 1e-15);
        assert!((info.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let prior = GaussianBelief::new(DVector::zeros(2), DMatrix::<f64>::identity(2, 2)).unwrap();
        let h = DMatrix::zeros(1, 3);
        let r = DMatrix::identity(1, 1);
        assert!(matches!(
            gain_update(&prior, &DVector::zeros(1), &h, &r),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(predict(&prior, &DMatrix::identity(3, 3), &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn non_spd_innovation_is_reported() {
        let prior = GaussianBelief::new(DVector::zeros(1), DMatrix::<f64>::zeros(1, 1)).unwrap();
        let h = DMatrix::from_element(1, 1, 1.0);
        let r = DMatrix::from_element(1, 1, -1.0);
        assert_eq!(gain_update(&prior, &DVector::zeros(1), &h, &r), Err(Error::SingularInnovation));
    }
}
