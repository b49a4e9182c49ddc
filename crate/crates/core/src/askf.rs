//! Augmented-state Kalman filter over `[x_1; …; x_N; b]`.
//!
//! This is the reference the decoupled bank is checked against. The gain
//! form is the default execution path; the information form is kept for
//! cross-validation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::decoupled::FilterBank;
use crate::error::{Error, Result};
use crate::kalman;
use crate::linalg::{self, GaussianBelief};
use crate::models::{augment_dynamics, Linearized, TargetId, TargetModel};
use crate::scalar::Scalar;

/// Position of one target's state inside the stacked vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetSlot {
    pub id: TargetId,
    pub offset: usize,
    pub dim: usize,
}

/// Contiguous target slots followed by the bias block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AskfLayout {
    pub targets: Vec<TargetSlot>,
    pub bias_offset: usize,
    pub bias_dim: usize,
}

impl AskfLayout {
    pub fn new(targets: &[(TargetId, usize)], bias_dim: usize) -> Result<Self> {
        let mut slots = Vec::with_capacity(targets.len());
        let mut offset = 0;
        for &(id, dim) in targets {
            if slots.iter().any(|s: &TargetSlot| s.id == id) {
                return Err(Error::DuplicateTarget(id));
            }
            slots.push(TargetSlot { id, offset, dim });
            offset += dim;
        }
        Ok(Self {
            targets: slots,
            bias_offset: offset,
            bias_dim,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.bias_offset + self.bias_dim
    }

    pub fn slot(&self, id: TargetId) -> Result<&TargetSlot> {
        self.targets.iter().find(|s| s.id == id).ok_or(Error::UnknownTarget(id))
    }
}

/// Stacked belief plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AskfState<T: Scalar> {
    pub belief: GaussianBelief<T>,
    pub layout: AskfLayout,
}

/// All covariance sub-blocks of an [`AskfState`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrossBlocks<T: Scalar> {
    /// `targets[m][n]` is the covariance between target `m` and target `n`.
    pub targets: Vec<Vec<DMatrix<T>>>,
    /// Target-to-bias cross covariance, one per target.
    pub target_bias: Vec<DMatrix<T>>,
    pub bias: DMatrix<T>,
}

impl<T: Scalar> CrossBlocks<T> {
    pub fn reassemble(&self, layout: &AskfLayout) -> DMatrix<T> {
        let n = layout.total_dim();
        let (bo, bd) = (layout.bias_offset, layout.bias_dim);
        let mut p = DMatrix::zeros(n, n);
        for (m, sm) in layout.targets.iter().enumerate() {
            for (k, sk) in layout.targets.iter().enumerate() {
                p.view_mut((sm.offset, sk.offset), (sm.dim, sk.dim)).copy_from(&self.targets[m][k]);
            }
            p.view_mut((sm.offset, bo), (sm.dim, bd)).copy_from(&self.target_bias[m]);
            p.view_mut((bo, sm.offset), (bd, sm.dim)).copy_from(&self.target_bias[m].transpose());
        }
        p.view_mut((bo, bo), (bd, bd)).copy_from(&self.bias);
        p
    }
}

impl<T: Scalar> AskfState<T> {
    pub fn new(belief: GaussianBelief<T>, layout: AskfLayout) -> Result<Self> {
        if belief.dim() != layout.total_dim() {
            return Err(Error::dims("AskfState", layout.total_dim(), belief.dim()));
        }
        Ok(Self { belief, layout })
    }

    /// Builds the stacked prior that matches a decoupled bank. Cross-target
    /// blocks are `P_tb[m] P_b⁻¹ P_tb[n]ᵀ`, the structure under which the
    /// two filters coincide.
    pub fn from_bank(bank: &FilterBank<T>) -> Result<Self> {
        let dims: Vec<(TargetId, usize)> = bank.branches.iter().map(|(id, br)| (*id, br.x_t.len())).collect();
        let bias_dim = bank.fused.b_f.len();
        let layout = AskfLayout::new(&dims, bias_dim)?;
        let pb_inv = linalg::spd_inverse(&bank.fused.p_fb).map_err(|_| Error::SingularBranchBias)?;
        let n = layout.total_dim();
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        let (bo, bd) = (layout.bias_offset, bias_dim);
        let branches: Vec<_> = bank.branches.values().collect();
        for (slot, br) in layout.targets.iter().zip(&branches) {
            mean.rows_mut(slot.offset, slot.dim).copy_from(&br.x_t);
            cov.view_mut((slot.offset, bo), (slot.dim, bd)).copy_from(&br.cov.tb);
            cov.view_mut((bo, slot.offset), (bd, slot.dim)).copy_from(&br.cov.tb.transpose());
            for (other, br2) in layout.targets.iter().zip(&branches) {
                let block = if other.id == slot.id {
                    br.cov.t.clone()
                } else {
                    &br.cov.tb * &pb_inv * br2.cov.tb.transpose()
                };
                cov.view_mut((slot.offset, other.offset), (slot.dim, other.dim)).copy_from(&block);
            }
        }
        mean.rows_mut(bo, bd).copy_from(&bank.fused.b_f);
        cov.view_mut((bo, bo), (bd, bd)).copy_from(&bank.fused.p_fb);
        Self::new(GaussianBelief::from_parts(mean, cov), layout)
    }

    pub fn target_mean(&self, id: TargetId) -> Result<DVector<T>> {
        let s = self.layout.slot(id)?;
        Ok(self.belief.mean.rows(s.offset, s.dim).into_owned())
    }

    pub fn target_cov(&self, id: TargetId) -> Result<DMatrix<T>> {
        let s = self.layout.slot(id)?;
        Ok(self.belief.cov.view((s.offset, s.offset), (s.dim, s.dim)).into_owned())
    }

    pub fn target_bias_cov(&self, id: TargetId) -> Result<DMatrix<T>> {
        let s = self.layout.slot(id)?;
        Ok(self
            .belief
            .cov
            .view((s.offset, self.layout.bias_offset), (s.dim, self.layout.bias_dim))
            .into_owned())
    }

    pub fn bias_mean(&self) -> DVector<T> {
        self.belief.mean.rows(self.layout.bias_offset, self.layout.bias_dim).into_owned()
    }

    pub fn bias_cov(&self) -> DMatrix<T> {
        let (o, d) = (self.layout.bias_offset, self.layout.bias_dim);
        self.belief.cov.view((o, o), (d, d)).into_owned()
    }

    /// Predicts with per-target models, assembling `F` and `Q` in layout
    /// order.
    pub fn predict_targets(&self, dynamics: &BTreeMap<TargetId, TargetModel<T>>) -> Result<Self> {
        if self.layout.targets.is_empty() {
            return Ok(self.clone());
        }
        let models = self
            .layout
            .targets
            .iter()
            .map(|s| dynamics.get(&s.id).cloned().ok_or(Error::MissingModel(s.id)))
            .collect::<Result<Vec<_>>>()?;
        let (f, q) = augment_dynamics(&models, self.layout.bias_dim)?;
        askf_predict(self, &f, &q)
    }

    /// Gain-form update from linearized per-target measurements. Each
    /// target's innovation is evaluated about this filter's own predicted
    /// estimate, so linearizations computed elsewhere can be reused.
    pub fn update_targets(&self, measurements: &BTreeMap<TargetId, Linearized<T>>) -> Result<Self> {
        if measurements.is_empty() {
            return Ok(self.clone());
        }
        let n = self.layout.total_dim();
        let rows: usize = measurements.values().map(|l| l.model.meas_dim()).sum();
        let (bo, bd) = (self.layout.bias_offset, self.layout.bias_dim);
        let b = self.bias_mean();
        let mut h = DMatrix::zeros(rows, n);
        let mut r = DMatrix::zeros(rows, rows);
        let mut innovation = DVector::zeros(rows);
        let mut row = 0;
        for (id, lin) in measurements {
            let slot = self.layout.slot(*id)?;
            let m = lin.model.meas_dim();
            if lin.model.state_dim() != slot.dim || lin.model.bias_dim() != bd {
                return Err(Error::dims("AskfState::update_targets", slot.dim, lin.model.state_dim()).for_target(*id));
            }
            h.view_mut((row, slot.offset), (m, slot.dim)).copy_from(&lin.model.h_t);
            h.view_mut((row, bo), (m, bd)).copy_from(&lin.model.h_b);
            r.view_mut((row, row), (m, m)).copy_from(&lin.model.r);
            let x = self.belief.mean.rows(slot.offset, slot.dim).into_owned();
            innovation.rows_mut(row, m).copy_from(&lin.innovation_about(&x, &b));
            row += m;
        }
        let belief = kalman::gain_update(&self.belief, &innovation, &h, &r)?;
        Ok(Self {
            belief,
            layout: self.layout.clone(),
        })
    }

    /// CSV row: time, mean entries, covariance diagonal.
    pub fn csv_row(&self, time: f64) -> Vec<String> {
        std::iter::once(format!("{time}"))
            .chain(self.belief.mean.iter().map(|v| format!("{v}")))
            .chain(self.belief.cov.diagonal().iter().map(|v| format!("{v}")))
            .collect()
    }
}

/// `x̄ = F x`, `P̄ = F P Fᵀ + Q`.
pub fn askf_predict<T: Scalar>(state: &AskfState<T>, f: &DMatrix<T>, q: &DMatrix<T>) -> Result<AskfState<T>> {
    Ok(AskfState {
        belief: kalman::predict(&state.belief, f, q)?,
        layout: state.layout.clone(),
    })
}

/// Gain-form update for the linear stacked measurement `z = H x + w`.
pub fn askf_update_gain<T: Scalar>(
    state: &AskfState<T>,
    z: &DVector<T>,
    h: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<AskfState<T>> {
    if h.ncols() != state.belief.dim() {
        return Err(Error::dims("askf_update_gain H", state.belief.dim(), h.ncols()));
    }
    if z.len() != h.nrows() {
        return Err(Error::dims("askf_update_gain z", h.nrows(), z.len()));
    }
    let innovation = z - h * &state.belief.mean;
    Ok(AskfState {
        belief: kalman::gain_update(&state.belief, &innovation, h, r)?,
        layout: state.layout.clone(),
    })
}

/// Information-form update for the linear stacked measurement.
pub fn askf_update_info<T: Scalar>(
    state: &AskfState<T>,
    z: &DVector<T>,
    h: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<AskfState<T>> {
    Ok(AskfState {
        belief: kalman::information_update(&state.belief, z, h, r)?,
        layout: state.layout.clone(),
    })
}

pub fn extract_cross_blocks<T: Scalar>(state: &AskfState<T>) -> CrossBlocks<T> {
    let p = &state.belief.cov;
    let (bo, bd) = (state.layout.bias_offset, state.layout.bias_dim);
    let targets = state
        .layout
        .targets
        .iter()
        .map(|m| {
            state
                .layout
                .targets
                .iter()
                .map(|n| p.view((m.offset, n.offset), (m.dim, n.dim)).into_owned())
                .collect()
        })
        .collect();
    let target_bias = state
        .layout
        .targets
        .iter()
        .map(|m| p.view((m.offset, bo), (m.dim, bd)).into_owned())
        .collect();
    CrossBlocks {
        targets,
        target_bias,
        bias: p.view((bo, bo), (bd, bd)).into_owned(),
    }
}

/// Largest relative violation of `P_t[m][n] = P_tb[m] P_b⁻¹ P_tb[n]ᵀ` over
/// all target pairs `m ≠ n`, measured as
/// `‖lhs − rhs‖ / (‖lhs‖ + 1e-12 / 1e-8)` so that a value ≤ 1e-8 means the
/// mixed tolerance `1e-8·‖lhs‖ + 1e-12` holds.
pub fn lemma_residual<T: Scalar>(state: &AskfState<T>) -> Result<f64> {
    let blocks = extract_cross_blocks(state);
    let pb_inv = linalg::spd_inverse(&blocks.bias).map_err(|_| Error::SingularBranchBias)?;
    let mut worst: f64 = 0.0;
    let n = blocks.targets.len();
    for m in 0..n {
        for k in 0..n {
            if m == k {
                continue;
            }
            let lhs = &blocks.targets[m][k];
            let rhs = &blocks.target_bias[m] * &pb_inv * blocks.target_bias[k].transpose();
            let err = (lhs - rhs).norm().as_f64();
            worst = worst.max(err / (lhs.norm().as_f64() + 1e-4));
        }
    }
    Ok(worst)
}

/// Largest target-to-target off-diagonal block of `P⁻¹`, relative to
/// `‖P⁻¹‖`.
pub fn cross_information<T: Scalar>(state: &AskfState<T>) -> Result<f64> {
    let info = linalg::spd_inverse(&state.belief.cov).map_err(|_| Error::SingularPrior)?;
    let scale = info.norm().as_f64();
    let mut worst: f64 = 0.0;
    for m in &state.layout.targets {
        for n in &state.layout.targets {
            if m.id != n.id {
                let block = info.view((m.offset, n.offset), (m.dim, n.dim));
                worst = worst.max(block.norm().as_f64() / scale);
            }
        }
    }
    Ok(worst)
}
