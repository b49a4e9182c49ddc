//! Approximately decoupled baseline.
//!
//! Runs the same branch/fusion/feedback pipeline as the exact filter but
//! forgets the target/bias cross covariance after every update, so the fused
//! bias never corrects the target estimates and the reported target
//! covariance ignores the bias uncertainty.

use std::collections::BTreeMap;

use crate::decoupled::{step_with, Coupling, FilterBank};
use crate::error::Result;
use crate::models::{Linearized, Observation, TargetId, TargetModel};
use crate::scalar::Scalar;

pub fn approx_bank_step<T: Scalar, O: Observation<T>>(
    bank: &FilterBank<T>,
    measurements: &BTreeMap<TargetId, O>,
    dynamics: &BTreeMap<TargetId, TargetModel<T>>,
) -> Result<FilterBank<T>> {
    step_with(bank, measurements, dynamics, Coupling::Ignored).map(|(b, _)| b)
}

pub fn approx_bank_step_traced<T: Scalar, O: Observation<T>>(
    bank: &FilterBank<T>,
    measurements: &BTreeMap<TargetId, O>,
    dynamics: &BTreeMap<TargetId, TargetModel<T>>,
) -> Result<(FilterBank<T>, BTreeMap<TargetId, Linearized<T>>)> {
    step_with(bank, measurements, dynamics, Coupling::Ignored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoupled::bank_step;
    use crate::synthetic::{random_system, SystemShape};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_exact_without_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sys = random_system(&mut rng, SystemShape { n: 2, s: 3, b: 2, m: 2 });
        for br in sys.bank.branches.values_mut() {
            br.cov.tb.fill(0.0);
        }
        for model in sys.meas.values_mut() {
            model.h_b = DMatrix::zeros(2, 2);
        }
        let (mut exact, mut approx) = (sys.bank.clone(), sys.bank.clone());
        for _ in 0..20 {
            let meas = sys.measure(&mut rng);
            exact = bank_step(&exact, &meas, &sys.dynamics).unwrap();
            approx = approx_bank_step(&approx, &meas, &sys.dynamics).unwrap();
            assert_eq!(exact, approx);
        }
    }

    #[test]
    fn cross_covariance_is_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = random_system(&mut rng, SystemShape { n: 3, s: 2, b: 3, m: 2 });
        let mut bank = sys.bank.clone();
        for _ in 0..10 {
            bank = approx_bank_step(&bank, &sys.measure(&mut rng), &sys.dynamics).unwrap();
            for br in bank.branches.values() {
                assert!(br.cov.tb.iter().all(|v| *v == 0.0));
                assert_eq!(br.b, bank.fused.b_f);
            }
        }
    }

    #[test]
    fn understates_target_error() {
        // Simulate the random system for real and check the approx filter's
        // target NEES against the upper chi-square bound.
        use crate::metrics::nees_bounds;
        use crate::models::LinearMeasurement;
        use rand_distr::{Distribution, StandardNormal};

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = random_system(&mut rng, SystemShape { n: 2, s: 2, b: 3, m: 2 });
        let runs = 100;
        let steps = 50;
        let mut nees = vec![0.0; steps];
        for _ in 0..runs {
            let draw = |rng: &mut ChaCha8Rng, cov: &DMatrix<f64>| {
                let l = cov.clone().cholesky().unwrap().l();
                let w = nalgebra::DVector::from_fn(cov.nrows(), |_, _| StandardNormal.sample(rng));
                l * w
            };
            let bias = &sys.bank.fused.b_f + draw(&mut rng, &sys.bank.fused.p_fb);
            let mut truth: BTreeMap<_, _> = sys
                .bank
                .branches
                .iter()
                .map(|(id, br)| {
                    // true state correlated with the bias exactly as the prior says
                    let pb_inv = crate::linalg::spd_inverse(&br.cov.b).unwrap();
                    let gain = &br.cov.tb * pb_inv;
                    let cond = &br.cov.t - &gain * br.cov.tb.transpose();
                    let x = &br.x_t + &gain * (&bias - &br.b) + draw(&mut rng, &crate::linalg::sym(cond));
                    (*id, x)
                })
                .collect();
            let mut bank = sys.bank.clone();
            for k in 0..steps {
                let mut meas = BTreeMap::new();
                for (id, x) in truth.iter_mut() {
                    let model = &sys.dynamics[id];
                    *x = &model.f * &*x + draw(&mut rng, &model.q);
                    let mm = &sys.meas[id];
                    let z = &mm.h_t * &*x + &mm.h_b * &bias + draw(&mut rng, &mm.r);
                    meas.insert(*id, LinearMeasurement { z, model: mm.clone() });
                }
                bank = approx_bank_step(&bank, &meas, &sys.dynamics).unwrap();
                let br = &bank.branches[&TargetId(0)];
                let e = &br.x_t - &truth[&TargetId(0)];
                nees[k] += (e.transpose() * crate::linalg::spd_solve_vec(&br.cov.t, &e).unwrap())[0] / runs as f64;
            }
        }
        let (_, high) = nees_bounds(runs, 2, 0.95);
        let above = nees.iter().filter(|v| **v > high).count();
        assert!(above * 2 >= steps, "only {above} of {steps} steps above {high}");
    }
}
