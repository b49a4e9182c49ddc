//! Exactly decoupled Kalman filter.
//!
//! Each target runs a branch filter over `[x_t; b]`. After the branch
//! updates, the bias information gained by every branch is fused into one
//! global bias estimate, which is then fed back into each branch through its
//! target/bias cross covariance.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman;
use crate::linalg::{self, GaussianBelief, PartitionedCov};
use crate::models::{Linearized, MeasModel, Observation, TargetId, TargetModel};
use crate::scalar::Scalar;

/// Belief of one branch over `[x_t; b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchBelief<T: Scalar> {
    pub target_id: TargetId,
    pub x_t: DVector<T>,
    pub b: DVector<T>,
    pub cov: PartitionedCov<T>,
}

impl<T: Scalar> BranchBelief<T> {
    pub fn new(target_id: TargetId, x_t: DVector<T>, b: DVector<T>, cov: PartitionedCov<T>) -> Result<Self> {
        if x_t.len() != cov.state_dim() {
            return Err(Error::dims("BranchBelief target mean", cov.state_dim(), x_t.len()));
        }
        if b.len() != cov.bias_dim() {
            return Err(Error::dims("BranchBelief bias mean", cov.bias_dim(), b.len()));
        }
        if !linalg::is_spd(&cov.b) {
            return Err(Error::NotSpd { context: "BranchBelief bias covariance" });
        }
        if !linalg::is_psd(&cov.assemble()) {
            return Err(Error::NotSpd { context: "BranchBelief covariance" });
        }
        Ok(Self { target_id, x_t, b, cov })
    }

    pub fn state_dim(&self) -> usize {
        self.x_t.len()
    }

    pub fn bias_dim(&self) -> usize {
        self.b.len()
    }

    /// The branch as a single Gaussian over `[x_t; b]`.
    pub fn belief(&self) -> GaussianBelief<T> {
        let s = self.state_dim();
        let mut mean = DVector::zeros(s + self.bias_dim());
        mean.rows_mut(0, s).copy_from(&self.x_t);
        mean.rows_mut(s, self.bias_dim()).copy_from(&self.b);
        GaussianBelief::from_parts(mean, self.cov.assemble())
    }

    fn from_belief(target_id: TargetId, belief: &GaussianBelief<T>, s: usize) -> Result<Self> {
        let b = belief.dim() - s;
        Ok(Self {
            target_id,
            x_t: belief.mean.rows(0, s).into_owned(),
            b: belief.mean.rows(s, b).into_owned(),
            cov: PartitionedCov::split(&belief.cov, s)?,
        })
    }
}

/// Global bias estimate shared by all branches.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedBias<T: Scalar> {
    pub b_f: DVector<T>,
    pub p_fb: DMatrix<T>,
}

impl<T: Scalar> FusedBias<T> {
    pub fn new(b_f: DVector<T>, p_fb: DMatrix<T>) -> Result<Self> {
        if p_fb.shape() != (b_f.len(), b_f.len()) {
            return Err(Error::dims("FusedBias covariance", b_f.len(), p_fb.nrows()));
        }
        if !linalg::is_spd(&p_fb) {
            return Err(Error::NotSpd { context: "FusedBias covariance" });
        }
        Ok(Self { b_f, p_fb: linalg::sym(p_fb) })
    }

    pub fn dim(&self) -> usize {
        self.b_f.len()
    }
}

/// A set of branches plus the fused bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T: Scalar> {
    pub branches: BTreeMap<TargetId, BranchBelief<T>>,
    pub fused: FusedBias<T>,
    pub step_index: usize,
}

impl<T: Scalar> FilterBank<T> {
    pub fn new(fused: FusedBias<T>) -> Self {
        Self {
            branches: BTreeMap::new(),
            fused,
            step_index: 0,
        }
    }

    /// Builds a bank whose fused bias is taken from the first branch.
    pub fn from_branches(branches: Vec<BranchBelief<T>>) -> Result<Self> {
        let first = branches.first().ok_or(Error::EmptyInput)?;
        let fused = FusedBias::new(first.b.clone(), first.cov.b.clone())?;
        branches.into_iter().try_fold(Self::new(fused), |bank, br| add_branch(&bank, br))
    }
}

/// Whether the target/bias cross covariance is carried between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Exact decoupled filter.
    Tracked,
    /// Cross covariance forced to zero after each update (baseline).
    Ignored,
}

/// `x_t ← F x_t`, `P_t ← F P_t Fᵀ + Q`, `P_tb ← F P_tb`; bias untouched.
pub fn branch_predict<T: Scalar>(br: &BranchBelief<T>, model: &TargetModel<T>) -> Result<BranchBelief<T>> {
    let s = br.state_dim();
    if model.state_dim() != s {
        return Err(Error::dims("branch_predict", s, model.state_dim()));
    }
    let f = &model.f;
    Ok(BranchBelief {
        target_id: br.target_id,
        x_t: f * &br.x_t,
        b: br.b.clone(),
        cov: PartitionedCov {
            t: linalg::sym(f * &br.cov.t * f.transpose() + &model.q),
            tb: f * &br.cov.tb,
            b: br.cov.b.clone(),
        },
    })
}

/// Gain-form update with `H_n = [H_t, H_b]`.
pub fn branch_update<T: Scalar>(br: &BranchBelief<T>, lin: &Linearized<T>) -> Result<BranchBelief<T>> {
    check_meas(br, &lin.model)?;
    let innovation = lin.innovation_about(&br.x_t, &br.b);
    let post = kalman::gain_update(&br.belief(), &innovation, &lin.model.branch_matrix(), &lin.model.r)?;
    BranchBelief::from_belief(br.target_id, &post, br.state_dim())
}

/// Information-form update for a linear measurement `z = H_t x_t + H_b b + w`.
pub fn branch_update_info<T: Scalar>(br: &BranchBelief<T>, z: &DVector<T>, model: &MeasModel<T>) -> Result<BranchBelief<T>> {
    check_meas(br, model)?;
    let post = kalman::information_update(&br.belief(), z, &model.branch_matrix(), &model.r)?;
    BranchBelief::from_belief(br.target_id, &post, br.state_dim())
}

fn check_meas<T: Scalar>(br: &BranchBelief<T>, model: &MeasModel<T>) -> Result<()> {
    if model.state_dim() != br.state_dim() {
        return Err(Error::dims("branch_update H_t", br.state_dim(), model.state_dim()));
    }
    if model.bias_dim() != br.bias_dim() {
        return Err(Error::dims("branch_update H_b", br.bias_dim(), model.bias_dim()));
    }
    Ok(())
}

/// Fuses per-branch bias information:
///
/// `P_fb⁻¹ = P̄_fb⁻¹ + Σ (P_b⁻¹ − P̄_b⁻¹)`,
/// `P_fb⁻¹ b_f = P̄_fb⁻¹ b̄_f + Σ (P_b⁻¹ b − P̄_b⁻¹ b̄)`.
///
/// `pre` and `post` hold `(b, P_b)` of each branch before and after its
/// update, in the same order.
pub fn fuse_bias<T: Scalar>(
    prev: &FusedBias<T>,
    pre: &[(DVector<T>, DMatrix<T>)],
    post: &[(DVector<T>, DMatrix<T>)],
) -> Result<FusedBias<T>> {
    if pre.len() != post.len() {
        return Err(Error::dims("fuse_bias branch count", pre.len(), post.len()));
    }
    let d = prev.dim();
    let prior_info = linalg::spd_inverse(&prev.p_fb)?;
    let mut info = prior_info.clone();
    let mut info_vec = &prior_info * &prev.b_f;
    for ((b_pre, p_pre), (b_post, p_post)) in pre.iter().zip(post) {
        if b_pre.len() != d || b_post.len() != d {
            return Err(Error::dims("fuse_bias bias length", d, b_pre.len().max(b_post.len())));
        }
        let pre_info = linalg::spd_inverse(p_pre)?;
        let post_info = linalg::spd_inverse(p_post)?;
        info_vec += &post_info * b_post - &pre_info * b_pre;
        info += post_info - pre_info;
    }
    let info = linalg::sym(info);
    let p_fb = linalg::spd_inverse(&info).map_err(|_| Error::LostPositivity)?;
    let b_f = linalg::spd_solve_vec(&info, &info_vec).map_err(|_| Error::LostPositivity)?;
    Ok(FusedBias { b_f, p_fb })
}

/// Conditions a branch on the fused bias:
///
/// `x_ft = x_t + P_tb P_b⁻¹ (b_f − b)`,
/// `P_ft = P_t − P_tb P_b⁻¹ (P_b − P_fb) P_b⁻¹ P_tbᵀ`,
/// `P_ftb = P_tb P_b⁻¹ P_fb`.
pub fn feedback_update<T: Scalar>(br: &BranchBelief<T>, fused: &FusedBias<T>) -> Result<BranchBelief<T>> {
    if fused.dim() != br.bias_dim() {
        return Err(Error::dims("feedback_update", br.bias_dim(), fused.dim()));
    }
    // A = P_tb P_b⁻¹, obtained as (P_b⁻¹ P_tbᵀ)ᵀ
    let a = linalg::spd_solve(&br.cov.b, &br.cov.tb.transpose())
        .map_err(|_| Error::SingularBranchBias)?
        .transpose();
    let x_t = &br.x_t + &a * (&fused.b_f - &br.b);
    let t = linalg::sym(&br.cov.t - &a * (&br.cov.b - &fused.p_fb) * a.transpose());
    let tb = &a * &fused.p_fb;
    Ok(BranchBelief {
        target_id: br.target_id,
        x_t,
        b: fused.b_f.clone(),
        cov: PartitionedCov {
            t,
            tb,
            b: fused.p_fb.clone(),
        },
    })
}

/// One predict/update/fuse/feedback cycle. Targets without a measurement
/// are predicted only and contribute nothing to the fusion.
pub fn bank_step<T: Scalar, O: Observation<T>>(
    bank: &FilterBank<T>,
    measurements: &BTreeMap<TargetId, O>,
    dynamics: &BTreeMap<TargetId, TargetModel<T>>,
) -> Result<FilterBank<T>> {
    step_with(bank, measurements, dynamics, Coupling::Tracked).map(|(b, _)| b)
}

/// [`bank_step`] that also returns the linearization used per target.
pub fn bank_step_traced<T: Scalar, O: Observation<T>>(
    bank: &FilterBank<T>,
    measurements: &BTreeMap<TargetId, O>,
    dynamics: &BTreeMap<TargetId, TargetModel<T>>,
) -> Result<(FilterBank<T>, BTreeMap<TargetId, Linearized<T>>)> {
    step_with(bank, measurements, dynamics, Coupling::Tracked)
}

pub(crate) fn step_with<T: Scalar, O: Observation<T>>(
    bank: &FilterBank<T>,
    measurements: &BTreeMap<TargetId, O>,
    dynamics: &BTreeMap<TargetId, TargetModel<T>>,
    coupling: Coupling,
) -> Result<(FilterBank<T>, BTreeMap<TargetId, Linearized<T>>)> {
    if let Some(id) = measurements.keys().find(|id| !bank.branches.contains_key(id)) {
        return Err(Error::UnknownTarget(*id));
    }
    let mut updated = BTreeMap::new();
    let mut lins = BTreeMap::new();
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for (id, br) in &bank.branches {
        let model = dynamics.get(id).ok_or(Error::MissingModel(*id))?;
        let predicted = branch_predict(br, model).map_err(|e| e.for_target(*id))?;
        let next = match measurements.get(id) {
            Some(obs) => {
                let lin = obs.linearize(&predicted.x_t, &predicted.b).map_err(|e| e.for_target(*id))?;
                let mut next = branch_update(&predicted, &lin).map_err(|e| e.for_target(*id))?;
                if coupling == Coupling::Ignored {
                    next.cov.tb.fill(T::zero());
                }
                pre.push((predicted.b.clone(), predicted.cov.b.clone()));
                post.push((next.b.clone(), next.cov.b.clone()));
                lins.insert(*id, lin);
                next
            }
            None => predicted,
        };
        updated.insert(*id, next);
    }
    let fused = fuse_bias(&bank.fused, &pre, &post)?;
    let mut branches = BTreeMap::new();
    for (id, br) in updated {
        let mut fed = feedback_update(&br, &fused).map_err(|e| e.for_target(id))?;
        if coupling == Coupling::Ignored {
            fed.cov.tb.fill(T::zero());
        }
        branches.insert(id, fed);
    }
    Ok((
        FilterBank {
            branches,
            fused,
            step_index: bank.step_index + 1,
        },
        lins,
    ))
}

const BIAS_PRIOR_TOL: f64 = 1e-9;

/// Registers a new branch. Its bias belief must match the fused bias.
pub fn add_branch<T: Scalar>(bank: &FilterBank<T>, init: BranchBelief<T>) -> Result<FilterBank<T>> {
    if bank.branches.contains_key(&init.target_id) {
        return Err(Error::DuplicateTarget(init.target_id));
    }
    if init.bias_dim() != bank.fused.dim() {
        return Err(Error::dims("add_branch bias", bank.fused.dim(), init.bias_dim()));
    }
    let mean_dev = (&init.b - &bank.fused.b_f).amax().as_f64();
    let cov_dev = (&init.cov.b - &bank.fused.p_fb).amax().as_f64();
    let scale = 1.0 + bank.fused.p_fb.amax().as_f64().sqrt();
    let deviation = mean_dev.max(cov_dev / scale / scale) / scale;
    if deviation > BIAS_PRIOR_TOL {
        return Err(Error::InconsistentBiasPrior { deviation });
    }
    let mut next = bank.clone();
    let mut init = init;
    init.b = bank.fused.b_f.clone();
    init.cov.b = bank.fused.p_fb.clone();
    next.branches.insert(init.target_id, init);
    Ok(next)
}

/// Drops a branch; the fused bias keeps the information it contributed.
pub fn remove_branch<T: Scalar>(bank: &FilterBank<T>, id: TargetId) -> Result<FilterBank<T>> {
    let mut next = bank.clone();
    next.branches.remove(&id).ok_or(Error::UnknownTarget(id))?;
    Ok(next)
}
