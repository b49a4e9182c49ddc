//! Per-target dynamic and measurement models and their augmented assembly.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag};
use crate::scalar::Scalar;

/// Identifier of a tracked target. Ordering fixes the fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetId(pub u32);

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `x(k+1) = F x(k) + v`, `v ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel<T: Scalar> {
    pub id: TargetId,
    pub f: DMatrix<T>,
    pub q: DMatrix<T>,
}

impl<T: Scalar> TargetModel<T> {
    pub fn new(id: TargetId, f: DMatrix<T>, q: DMatrix<T>) -> Result<Self> {
        if !f.is_square() {
            return Err(Error::NonSquare { rows: f.nrows(), cols: f.ncols() });
        }
        if q.shape() != f.shape() {
            return Err(Error::dims("TargetModel Q", f.nrows(), q.nrows()));
        }
        if !linalg::is_symmetric(&q) || !linalg::is_psd(&q) {
            return Err(Error::NotSpd { context: "process noise Q" });
        }
        Ok(Self { id, f, q: linalg::sym(q) })
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn with_id(mut self, id: TargetId) -> Self {
        self.id = id;
        self
    }
}

/// `z = H_t x_t + H_b b + w`, `w ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasModel<T: Scalar> {
    pub h_t: DMatrix<T>,
    pub h_b: DMatrix<T>,
    pub r: DMatrix<T>,
}

impl<T: Scalar> MeasModel<T> {
    pub fn new(h_t: DMatrix<T>, h_b: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        let m = h_t.nrows();
        if h_b.nrows() != m {
            return Err(Error::dims("MeasModel H_b rows", m, h_b.nrows()));
        }
        if r.shape() != (m, m) {
            return Err(Error::dims("MeasModel R", format!("{m}x{m}"), format!("{}x{}", r.nrows(), r.ncols())));
        }
        if !linalg::is_spd(&r) {
            return Err(Error::NotSpd { context: "measurement noise R" });
        }
        Ok(Self { h_t, h_b, r: linalg::sym(r) })
    }

    pub fn meas_dim(&self) -> usize {
        self.h_t.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h_t.ncols()
    }

    pub fn bias_dim(&self) -> usize {
        self.h_b.ncols()
    }

    /// `H_n = [H_t, H_b]` acting on the branch state `[x_t; b]`.
    pub fn branch_matrix(&self) -> DMatrix<T> {
        let (m, s, b) = (self.meas_dim(), self.state_dim(), self.bias_dim());
        let mut h = DMatrix::zeros(m, s + b);
        h.view_mut((0, 0), (m, s)).copy_from(&self.h_t);
        h.view_mut((0, s), (m, b)).copy_from(&self.h_b);
        h
    }
}

/// Constant additive bias vector (simulation ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel<T: Scalar> {
    pub true_bias: DVector<T>,
}

impl<T: Scalar> BiasModel<T> {
    pub fn dim(&self) -> usize {
        self.true_bias.len()
    }
}

/// `F = blkdiag(F_1, …, F_N, I_B)`, `Q = blkdiag(Q_1, …, Q_N, O_B)`.
pub fn augment_dynamics<T: Scalar>(models: &[TargetModel<T>], bias_dim: usize) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if models.is_empty() {
        return Err(Error::EmptyInput);
    }
    let eye = DMatrix::identity(bias_dim, bias_dim);
    let zero = DMatrix::zeros(bias_dim, bias_dim);
    let mut fs: Vec<&DMatrix<T>> = models.iter().map(|m| &m.f).collect();
    fs.push(&eye);
    let mut qs: Vec<&DMatrix<T>> = models.iter().map(|m| &m.q).collect();
    qs.push(&zero);
    Ok((block_diag(&fs), block_diag(&qs)))
}

/// Stacked measurement matrix with target blocks on the diagonal and the
/// bias blocks in the last block column; `R = blkdiag(R_1, …, R_N)`.
pub fn augment_measurement<T: Scalar>(models: &[MeasModel<T>]) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let first = models.first().ok_or(Error::EmptyInput)?;
    let b = first.bias_dim();
    if let Some(bad) = models.iter().find(|m| m.bias_dim() != b) {
        return Err(Error::dims("augment_measurement bias dim", b, bad.bias_dim()));
    }
    let rows: usize = models.iter().map(|m| m.meas_dim()).sum();
    let state: usize = models.iter().map(|m| m.state_dim()).sum();
    let mut h = DMatrix::zeros(rows, state + b);
    let (mut r0, mut c0) = (0, 0);
    for m in models {
        h.view_mut((r0, c0), m.h_t.shape()).copy_from(&m.h_t);
        h.view_mut((r0, state), m.h_b.shape()).copy_from(&m.h_b);
        r0 += m.meas_dim();
        c0 += m.state_dim();
    }
    let rs: Vec<&DMatrix<T>> = models.iter().map(|m| &m.r).collect();
    Ok((h, block_diag(&rs)))
}

/// A measurement linearized about `(x_lin, b_lin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized<T: Scalar> {
    pub z: DVector<T>,
    /// `h(x_lin) + H_b b_lin`.
    pub predicted: DVector<T>,
    pub model: MeasModel<T>,
    pub x_lin: DVector<T>,
    pub b_lin: DVector<T>,
}

impl<T: Scalar> Linearized<T> {
    /// `z − ẑ` at the linearization point.
    pub fn innovation(&self) -> DVector<T> {
        &self.z - &self.predicted
    }

    /// First-order innovation for an estimate `(x, b)` that differs from the
    /// linearization point.
    pub fn innovation_about(&self, x: &DVector<T>, b: &DVector<T>) -> DVector<T> {
        self.innovation() - &self.model.h_t * (x - &self.x_lin) - &self.model.h_b * (b - &self.b_lin)
    }
}

/// Anything that can produce a linear measurement model for a target given
/// its predicted state and the predicted bias.
pub trait Observation<T: Scalar> {
    fn linearize(&self, x_t: &DVector<T>, b: &DVector<T>) -> Result<Linearized<T>>;
}

/// Measurement from a model that is already linear.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMeasurement<T: Scalar> {
    pub z: DVector<T>,
    pub model: MeasModel<T>,
}

impl<T: Scalar> Observation<T> for LinearMeasurement<T> {
    fn linearize(&self, x_t: &DVector<T>, b: &DVector<T>) -> Result<Linearized<T>> {
        if x_t.len() != self.model.state_dim() {
            return Err(Error::dims("LinearMeasurement state", self.model.state_dim(), x_t.len()));
        }
        if b.len() != self.model.bias_dim() {
            return Err(Error::dims("LinearMeasurement bias", self.model.bias_dim(), b.len()));
        }
        if self.z.len() != self.model.meas_dim() {
            return Err(Error::dims("LinearMeasurement z", self.model.meas_dim(), self.z.len()));
        }
        Ok(Linearized {
            z: self.z.clone(),
            predicted: &self.model.h_t * x_t + &self.model.h_b * b,
            model: self.model.clone(),
            x_lin: x_t.clone(),
            b_lin: b.clone(),
        })
    }
}
