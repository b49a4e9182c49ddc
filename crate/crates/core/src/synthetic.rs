//! Random linear-Gaussian multitarget systems and the decoupled-vs-augmented
//! equivalence harness built on them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::askf::{self, AskfState};
use crate::decoupled::{bank_step_traced, BranchBelief, FilterBank, FusedBias};
use crate::error::Result;
use crate::linalg::{self, PartitionedCov};
use crate::models::{LinearMeasurement, MeasModel, TargetId, TargetModel};

/// `n` targets, state dim `s`, bias dim `b`, measurement dim `m` per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemShape {
    pub n: usize,
    pub s: usize,
    pub b: usize,
    pub m: usize,
}

/// A random system together with a bank initialized on it.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub shape: SystemShape,
    pub bank: FilterBank<f64>,
    pub dynamics: BTreeMap<TargetId, TargetModel<f64>>,
    pub meas: BTreeMap<TargetId, MeasModel<f64>>,
}

impl LinearSystem {
    /// Draws one measurement per target. The values only need to be shared
    /// by the filters under comparison, so they are standard normal.
    pub fn measure(&self, rng: &mut impl Rng) -> BTreeMap<TargetId, LinearMeasurement<f64>> {
        self.meas
            .iter()
            .map(|(id, model)| {
                let z = gaussian_vec(rng, model.meas_dim());
                (*id, LinearMeasurement { z, model: model.clone() })
            })
            .collect()
    }
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn gaussian_mat(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `A Aᵀ / n + 0.1 I` for a Gaussian `A`.
pub fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = gaussian_mat(rng, n, n);
    linalg::sym(&a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1)
}

/// Transition with spectral norm at most 1.
fn random_transition(rng: &mut impl Rng, s: usize) -> DMatrix<f64> {
    let f = DMatrix::identity(s, s) + gaussian_mat(rng, s, s) * 0.2;
    let norm = f.clone().svd(false, false).singular_values.max();
    if norm > 1.0 {
        f / norm
    } else {
        f
    }
}

/// A branch whose bias belief equals `fused` and whose target block is
/// `C + P_tb P_b⁻¹ P_tbᵀ`, the structure under which decoupling is exact.
pub fn consistent_branch(rng: &mut impl Rng, id: TargetId, s: usize, fused: &FusedBias<f64>) -> BranchBelief<f64> {
    let b = fused.dim();
    let tb = gaussian_mat(rng, s, b);
    let pb_inv = linalg::spd_inverse(&fused.p_fb).expect("fused covariance is SPD");
    let t = random_spd(rng, s) + &tb * pb_inv * tb.transpose();
    let cov = PartitionedCov::new(t, tb, fused.p_fb.clone()).expect("square blocks");
    BranchBelief::new(id, gaussian_vec(rng, s), fused.b_f.clone(), cov).expect("consistent construction")
}

pub fn random_system(rng: &mut impl Rng, shape: SystemShape) -> LinearSystem {
    let SystemShape { n, s, b, m } = shape;
    let fused = FusedBias::new(gaussian_vec(rng, b), random_spd(rng, b) * 4.0).expect("SPD");
    let mut bank = FilterBank::new(fused);
    let mut dynamics = BTreeMap::new();
    let mut meas = BTreeMap::new();
    for i in 0..n {
        let id = TargetId(i as u32);
        let br = consistent_branch(rng, id, s, &bank.fused);
        bank.branches.insert(id, br);
        let f = random_transition(rng, s);
        let q = random_spd(rng, s) * 0.1;
        dynamics.insert(id, TargetModel::new(id, f, q).expect("valid model"));
        let model = MeasModel::new(gaussian_mat(rng, m, s), gaussian_mat(rng, m, b), random_spd(rng, m)).expect("SPD R");
        meas.insert(id, model);
    }
    LinearSystem {
        shape,
        bank,
        dynamics,
        meas,
    }
}

/// Worst-case discrepancies observed over one equivalence run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EquivalenceReport {
    /// Max relative deviation over target means, `P_ft`, `P_ftb`, `b_f`,
    /// `P_fb`.
    pub max_deviation: f64,
    /// Max of [`askf::lemma_residual`] on the augmented posterior.
    pub lemma_residual: f64,
    /// Max relative cross-target block of the predicted information matrix.
    pub cross_information: f64,
}

impl EquivalenceReport {
    fn absorb(&mut self, other: EquivalenceReport) {
        self.max_deviation = self.max_deviation.max(other.max_deviation);
        self.lemma_residual = self.lemma_residual.max(other.lemma_residual);
        self.cross_information = self.cross_information.max(other.cross_information);
    }
}

/// Deviation between a bank and the corresponding augmented state.
pub fn bank_deviation(bank: &FilterBank<f64>, state: &AskfState<f64>) -> Result<f64> {
    let mut worst = linalg::rel_norm(&bank.fused.b_f, &state.bias_mean())
        .max(linalg::rel_frobenius(&bank.fused.p_fb, &state.bias_cov()));
    for (id, br) in &bank.branches {
        worst = worst
            .max(linalg::rel_norm(&br.x_t, &state.target_mean(*id)?))
            .max(linalg::rel_frobenius(&br.cov.t, &state.target_cov(*id)?))
            .max(linalg::rel_frobenius(&br.cov.tb, &state.target_bias_cov(*id)?));
    }
    Ok(worst)
}

/// Runs both filters on `sys` for `steps` steps. With `tb_scale` other than
/// 1, every branch's initial `P_tb` is scaled while the augmented prior keeps
/// the original cross-target blocks, so the initial condition no longer
/// holds.
pub fn run_equivalence(sys: &LinearSystem, rng: &mut impl Rng, steps: usize, tb_scale: f64) -> Result<EquivalenceReport> {
    let mut state = AskfState::from_bank(&sys.bank)?;
    let mut bank = sys.bank.clone();
    if tb_scale != 1.0 {
        for br in bank.branches.values_mut() {
            br.cov.tb *= tb_scale;
        }
        let mut blocks = askf::extract_cross_blocks(&state);
        for tb in &mut blocks.target_bias {
            *tb *= tb_scale;
        }
        state.belief.cov = blocks.reassemble(&state.layout);
    }
    let mut report = EquivalenceReport {
        max_deviation: bank_deviation(&bank, &state)?,
        ..Default::default()
    };
    for _ in 0..steps {
        let meas = sys.measure(rng);
        let (next, lins) = bank_step_traced(&bank, &meas, &sys.dynamics)?;
        let predicted = state.predict_targets(&sys.dynamics)?;
        state = predicted.update_targets(&lins)?;
        bank = next;
        report.absorb(EquivalenceReport {
            max_deviation: bank_deviation(&bank, &state)?,
            lemma_residual: if sys.shape.n > 1 { askf::lemma_residual(&state)? } else { 0.0 },
            cross_information: askf::cross_information(&predicted)?,
        });
    }
    Ok(report)
}

/// Shape drawn from N ∈ {1..4}, S ∈ {2,4,6}, B ∈ {1,3,5}, M ∈ {2,4}.
pub fn random_shape(rng: &mut impl Rng) -> SystemShape {
    SystemShape {
        n: rng.random_range(1..=4),
        s: [2, 4, 6][rng.random_range(0..3)],
        b: [1, 3, 5][rng.random_range(0..3)],
        m: [2, 4][rng.random_range(0..2)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_prior_satisfies_lemma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let shape = random_shape(&mut rng);
            let sys = random_system(&mut rng, SystemShape { n: shape.n.max(2), ..shape });
            let state = AskfState::from_bank(&sys.bank).unwrap();
            assert!(askf::lemma_residual(&state).unwrap() < 1e-10);
            assert!(linalg::is_spd(&state.belief.cov));
        }
    }

    #[test]
    fn equivalence_holds_and_control_breaks_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = random_system(&mut rng, SystemShape { n: 3, s: 4, b: 3, m: 2 });
        let exact = run_equivalence(&sys, &mut ChaCha8Rng::seed_from_u64(9), 50, 1.0).unwrap();
        assert!(exact.max_deviation < 1e-8, "{exact:?}");
        assert!(exact.lemma_residual < 1e-8, "{exact:?}");
        assert!(exact.cross_information < 1e-8, "{exact:?}");
        let broken = run_equivalence(&sys, &mut ChaCha8Rng::seed_from_u64(9), 50, 0.9).unwrap();
        assert!(broken.max_deviation > 1e-4, "{broken:?}");
    }

    #[test]
    fn perturbed_prior_stays_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = random_system(&mut rng, SystemShape { n: 4, s: 6, b: 5, m: 2 });
        let state = AskfState::from_bank(&sys.bank).unwrap();
        let mut blocks = askf::extract_cross_blocks(&state);
        for tb in &mut blocks.target_bias {
            *tb *= 0.9;
        }
        assert!(linalg::is_spd(&blocks.reassemble(&state.layout)));
    }
}
