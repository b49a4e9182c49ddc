//! Bistatic range / range-rate measurements and their EKF linearization.
//!
//! Kinematic states are laid out `[r; v; a]`, each block `dims` long. Each
//! transmitter contributes two rows, range then velocity, and owns one bias
//! column that enters its range row additively.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Linearized, MeasModel, Observation};
use crate::scalar::Scalar;

/// Closest a target may come to a transmitter or the receiver, in metres.
pub const MIN_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub transmitters: Vec<Vec<f64>>,
    pub receiver: Vec<f64>,
}

impl Geometry {
    pub fn dims(&self) -> usize {
        self.receiver.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.transmitters.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if !(2..=3).contains(&d) {
            return Err(Error::Config(format!("receiver must be 2-D or 3-D, got {d} coordinates")));
        }
        if self.transmitters.is_empty() {
            return Err(Error::Config("at least one transmitter is required".into()));
        }
        if let Some((i, _)) = self.transmitters.iter().enumerate().find(|(_, t)| t.len() != d) {
            return Err(Error::Config(format!("transmitter {i} does not have {d} coordinates")));
        }
        Ok(())
    }

    fn tx<T: Scalar>(&self, i: usize) -> DVector<T> {
        DVector::from_iterator(self.dims(), self.transmitters[i].iter().map(|v| T::lit(*v)))
    }

    fn rx<T: Scalar>(&self) -> DVector<T> {
        DVector::from_iterator(self.dims(), self.receiver.iter().map(|v| T::lit(*v)))
    }
}

/// Unit vector from `s` to `r` and its length.
fn line_of_sight<T: Scalar>(r: &DVector<T>, s: &DVector<T>) -> Result<(DVector<T>, T)> {
    let diff = r - s;
    let d = diff.norm();
    if d < T::lit(MIN_DISTANCE) {
        return Err(Error::DegenerateGeometry { distance: d.as_f64() });
    }
    Ok((diff / d, d))
}

/// `‖r − tx‖ + ‖r − rx‖`.
pub fn bistatic_range<T: Scalar>(r: &DVector<T>, tx: &DVector<T>, rx: &DVector<T>) -> Result<T> {
    let (_, dt) = line_of_sight(r, tx)?;
    let (_, dr) = line_of_sight(r, rx)?;
    Ok(dt + dr)
}

/// Rate of change of the bistatic range, `vᵀ (u_t + u_r)` with `u` the unit
/// vector from each site to the target.
pub fn bistatic_velocity<T: Scalar>(r: &DVector<T>, v: &DVector<T>, tx: &DVector<T>, rx: &DVector<T>) -> Result<T> {
    let (ut, _) = line_of_sight(r, tx)?;
    let (ur, _) = line_of_sight(r, rx)?;
    Ok(v.dot(&(ut + ur)))
}

fn split<T: Scalar>(x: &DVector<T>, dims: usize) -> Result<(DVector<T>, DVector<T>)> {
    if x.len() < 2 * dims {
        return Err(Error::dims("kinematic state", format!(">= {}", 2 * dims), x.len()));
    }
    Ok((x.rows(0, dims).into_owned(), x.rows(dims, dims).into_owned()))
}

/// `h(x)`: `[range_1, vel_1, range_2, vel_2, …]`.
pub fn measurement_function<T: Scalar>(x: &DVector<T>, geom: &Geometry) -> Result<DVector<T>> {
    let (r, v) = split(x, geom.dims())?;
    let rx = geom.rx();
    let mut out = DVector::zeros(2 * geom.n_sensors());
    for i in 0..geom.n_sensors() {
        let tx = geom.tx(i);
        out[2 * i] = bistatic_range(&r, &tx, &rx)?;
        out[2 * i + 1] = bistatic_velocity(&r, &v, &tx, &rx)?;
    }
    Ok(out)
}

/// `∂h/∂x` at `x`, `2·n_sensors × x.len()`.
pub fn measurement_jacobian<T: Scalar>(x: &DVector<T>, geom: &Geometry) -> Result<DMatrix<T>> {
    let d = geom.dims();
    let (r, v) = split(x, d)?;
    let rx = geom.rx();
    let (ur, dr) = line_of_sight(&r, &rx)?;
    let eye = DMatrix::<T>::identity(d, d);
    let proj_r = (&eye - &ur * ur.transpose()) / dr;
    let mut h = DMatrix::zeros(2 * geom.n_sensors(), x.len());
    for i in 0..geom.n_sensors() {
        let (ut, dt) = line_of_sight(&r, &geom.tx(i))?;
        let sum = &ut + &ur;
        h.view_mut((2 * i, 0), (1, d)).copy_from(&sum.transpose());
        let proj_t = (&eye - &ut * ut.transpose()) / dt;
        let dvel_dr = (proj_t + &proj_r) * &v;
        h.view_mut((2 * i + 1, 0), (1, d)).copy_from(&dvel_dr.transpose());
        h.view_mut((2 * i + 1, d), (1, d)).copy_from(&sum.transpose());
    }
    Ok(h)
}

/// Bias matrix: a 1 in each range row at its sensor's column.
pub fn bias_matrix<T: Scalar>(n_sensors: usize) -> DMatrix<T> {
    DMatrix::from_fn(2 * n_sensors, n_sensors, |row, col| {
        if row % 2 == 0 && row / 2 == col {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Measurement noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarNoise {
    pub sigma_range: f64,
    pub sigma_vel: f64,
}

impl RadarNoise {
    pub fn covariance<T: Scalar>(&self, n_sensors: usize) -> DMatrix<T> {
        let (r2, v2) = (self.sigma_range.powi(2), self.sigma_vel.powi(2));
        DMatrix::from_diagonal(&DVector::from_fn(2 * n_sensors, |i, _| T::lit(if i % 2 == 0 { r2 } else { v2 })))
    }
}

/// EKF model at `x_pred` plus the predicted measurement `h(x_pred) + H_b b`.
pub fn ekf_meas_model<T: Scalar>(
    x_pred: &DVector<T>,
    b: &DVector<T>,
    geom: &Geometry,
    noise: RadarNoise,
) -> Result<(MeasModel<T>, DVector<T>)> {
    let n = geom.n_sensors();
    if b.len() != n {
        return Err(Error::dims("ekf_meas_model bias", n, b.len()));
    }
    let h_b = bias_matrix(n);
    let predicted = measurement_function(x_pred, geom)? + &h_b * b;
    let model = MeasModel::new(measurement_jacobian(x_pred, geom)?, h_b, noise.covariance(n))?;
    Ok((model, predicted))
}

/// One scan of one target, linearized on demand about the filter's
/// prediction.
#[derive(Debug, Clone, Copy)]
pub struct RadarObservation<'a, T: Scalar> {
    pub z: &'a DVector<T>,
    pub geom: &'a Geometry,
    pub noise: RadarNoise,
}

impl<T: Scalar> Observation<T> for RadarObservation<'_, T> {
    fn linearize(&self, x_t: &DVector<T>, b: &DVector<T>) -> Result<Linearized<T>> {
        let (model, predicted) = ekf_meas_model(x_t, b, self.geom, self.noise)?;
        if self.z.len() != model.meas_dim() {
            return Err(Error::dims("RadarObservation z", model.meas_dim(), self.z.len()));
        }
        Ok(Linearized {
            z: self.z.clone(),
            predicted,
            model,
            x_lin: x_t.clone(),
            b_lin: b.clone(),
        })
    }
}
