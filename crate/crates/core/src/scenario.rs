//! Multistatic tracking scenario: configuration, truth simulation,
//! first-scan initialization and Monte-Carlo batches.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::approx_bank_step_traced;
use crate::askf::AskfState;
use crate::decoupled::{bank_step_traced, BranchBelief, FilterBank};
use crate::error::{Error, Result};
use crate::linalg::{self, PartitionedCov};
use crate::models::{Linearized, Observation, TargetId, TargetModel};
use crate::radar::{self, Geometry, RadarNoise, RadarObservation};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicModel {
    #[default]
    Dwpa,
}

/// Initial kinematic state of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetInit {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    #[serde(default)]
    pub acceleration: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: Geometry,
    pub targets: Vec<TargetInit>,
    #[serde(default = "defaults::duration")]
    pub duration_s: f64,
    #[serde(default = "defaults::dt")]
    pub dt_s: f64,
    #[serde(default = "defaults::sigma_range")]
    pub sigma_range: f64,
    #[serde(default = "defaults::sigma_vel")]
    pub sigma_vel: f64,
    #[serde(default = "defaults::sigma_bias")]
    pub sigma_bias: f64,
    /// Acceleration increment standard deviation, m/s².
    #[serde(default = "defaults::sigma_a")]
    pub sigma_a: f64,
    /// Prior standard deviation of the initial acceleration, m/s².
    #[serde(default = "defaults::sigma_accel_prior")]
    pub sigma_accel_prior: f64,
    #[serde(default = "defaults::n_monte_carlo")]
    pub n_monte_carlo: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dynamic_model: DynamicModel,
}

mod defaults {
    pub fn duration() -> f64 {
        100.0
    }
    pub fn dt() -> f64 {
        1.0
    }
    pub fn sigma_range() -> f64 {
        30.0
    }
    pub fn sigma_vel() -> f64 {
        1.5
    }
    pub fn sigma_bias() -> f64 {
        300.0
    }
    pub fn sigma_a() -> f64 {
        0.5
    }
    pub fn sigma_accel_prior() -> f64 {
        1.0
    }
    pub fn n_monte_carlo() -> usize {
        100
    }
}

fn polar(range_km: f64, bearing_deg: f64) -> Vec<f64> {
    let t = bearing_deg.to_radians();
    vec![range_km * 1e3 * t.cos(), range_km * 1e3 * t.sin()]
}

impl Default for ScenarioConfig {
    /// Receiver at the origin, five transmitters 30–60 km out on distinct
    /// bearings, three targets 55–130 km out moving at 100–200 m/s.
    fn default() -> Self {
        Self {
            geometry: Geometry {
                transmitters: vec![
                    polar(30.0, 20.0),
                    polar(45.0, 95.0),
                    polar(60.0, 160.0),
                    polar(50.0, 235.0),
                    polar(40.0, 310.0),
                ],
                receiver: vec![0.0, 0.0],
            },
            targets: vec![
                TargetInit {
                    position: vec![-60e3, 80e3],
                    velocity: vec![150.0, 0.0],
                    acceleration: None,
                },
                TargetInit {
                    position: vec![-20e3, 128e3],
                    velocity: vec![100.0, -100.0],
                    acceleration: None,
                },
                TargetInit {
                    position: vec![48e3, 32e3],
                    velocity: vec![-110.0, 160.0],
                    acceleration: None,
                },
            ],
            duration_s: defaults::duration(),
            dt_s: defaults::dt(),
            sigma_range: defaults::sigma_range(),
            sigma_vel: defaults::sigma_vel(),
            sigma_bias: defaults::sigma_bias(),
            sigma_a: defaults::sigma_a(),
            sigma_accel_prior: defaults::sigma_accel_prior(),
            n_monte_carlo: defaults::n_monte_carlo(),
            seed: 0,
            dynamic_model: DynamicModel::Dwpa,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_steps(&self) -> usize {
        (self.duration_s / self.dt_s).round() as usize
    }

    pub fn dims(&self) -> usize {
        self.geometry.dims()
    }

    pub fn noise(&self) -> RadarNoise {
        RadarNoise {
            sigma_range: self.sigma_range,
            sigma_vel: self.sigma_vel,
        }
    }

    /// Checks structure and that noise levels are non-negative. Filtering
    /// additionally needs [`Self::validate_for_filtering`].
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let d = self.dims();
        for (i, t) in self.targets.iter().enumerate() {
            let acc_ok = t.acceleration.as_ref().is_none_or(|a| a.len() == d);
            if t.position.len() != d || t.velocity.len() != d || !acc_ok {
                return Err(Error::Config(format!("target {i} does not have {d}-D kinematics")));
            }
        }
        if !(self.dt_s > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s and dt_s must be positive".into()));
        }
        let steps = self.duration_s / self.dt_s;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!("duration_s / dt_s = {steps} is not an integer")));
        }
        let sigmas = [
            ("sigma_range", self.sigma_range),
            ("sigma_vel", self.sigma_vel),
            ("sigma_bias", self.sigma_bias),
            ("sigma_a", self.sigma_a),
            ("sigma_accel_prior", self.sigma_accel_prior),
        ];
        if let Some((name, v)) = sigmas.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
        }
        Ok(())
    }

    /// Filters need strictly positive noise to keep every covariance SPD.
    pub fn validate_for_filtering(&self) -> Result<()> {
        self.validate()?;
        let sigmas = [
            ("sigma_range", self.sigma_range),
            ("sigma_vel", self.sigma_vel),
            ("sigma_bias", self.sigma_bias),
            ("sigma_accel_prior", self.sigma_accel_prior),
        ];
        if let Some((name, _)) = sigmas.iter().find(|(_, v)| *v <= 0.0) {
            return Err(Error::Config(format!("{name} must be positive for filtering")));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target is required".into()));
        }
        Ok(())
    }

    fn initial_state(&self, t: &TargetInit) -> DVector<f64> {
        let d = self.dims();
        let zeros = vec![0.0; d];
        let acc = t.acceleration.as_ref().unwrap_or(&zeros);
        DVector::from_iterator(3 * d, t.position.iter().chain(&t.velocity).chain(acc).copied())
    }
}

/// Discrete Wiener-process-acceleration model over `dims` axes, state
/// `[r; v; a]`.
pub fn dwpa_model<T: Scalar>(id: TargetId, dt: f64, sigma_a: f64, dims: usize) -> TargetModel<T> {
    let f = DMatrix::from_row_slice(3, 3, &[1.0, dt, dt * dt / 2.0, 0.0, 1.0, dt, 0.0, 0.0, 1.0]);
    let g = DVector::from_column_slice(&[dt * dt / 2.0, dt, 1.0]);
    let q = &g * g.transpose() * sigma_a.powi(2);
    let eye = DMatrix::<f64>::identity(dims, dims);
    let cast = |m: DMatrix<f64>| m.map(T::lit);
    TargetModel::new(id, cast(f.kronecker(&eye)), cast(q.kronecker(&eye))).expect("DWPA model is well-formed")
}

/// Truth for one Monte-Carlo run, indexed `[step][target]` with step 0 the
/// first scan.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub states: Vec<Vec<DVector<f64>>>,
    pub measurements: Vec<Vec<DVector<f64>>>,
    pub bias: DVector<f64>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Simulates trajectories, one bias draw and the biased noisy scans.
pub fn simulate_truth(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<TruthRecord> {
    let d = cfg.dims();
    let n_s = cfg.geometry.n_sensors();
    let model = dwpa_model::<f64>(TargetId(0), cfg.dt_s, 0.0, d);
    let dt = cfg.dt_s;
    let g = [dt * dt / 2.0, dt, 1.0];
    let bias = DVector::from_fn(n_s, |_, _| cfg.sigma_bias * normal(rng));
    let h_b = radar::bias_matrix::<f64>(n_s);
    let sigmas = DVector::from_fn(2 * n_s, |i, _| if i % 2 == 0 { cfg.sigma_range } else { cfg.sigma_vel });
    let mut x: Vec<DVector<f64>> = cfg.targets.iter().map(|t| cfg.initial_state(t)).collect();
    let mut states = Vec::with_capacity(cfg.n_steps() + 1);
    let mut measurements = Vec::with_capacity(cfg.n_steps() + 1);
    for k in 0..=cfg.n_steps() {
        if k > 0 {
            for xi in &mut x {
                let mut next = &model.f * &*xi;
                for axis in 0..d {
                    let w = cfg.sigma_a * normal(rng);
                    for (block, gb) in g.iter().enumerate() {
                        next[block * d + axis] += gb * w;
                    }
                }
                *xi = next;
            }
        }
        let scans = x
            .iter()
            .map(|xi| {
                let noise = sigmas.map(|s| s * normal(rng));
                Ok(radar::measurement_function(xi, &cfg.geometry)? + &h_b * &bias + noise)
            })
            .collect::<Result<Vec<_>>>()?;
        states.push(x.clone());
        measurements.push(scans);
    }
    Ok(TruthRecord {
        states,
        measurements,
        bias,
    })
}

const GN_MAX_ITER: usize = 50;
const GN_TOL: f64 = 1e-8;
/// Relative step size below which a non-shrinking step is round-off rather
/// than divergence.
const GN_FLOOR: f64 = 1e-10;

/// Weighted Gauss–Newton on `z ≈ h(y)` with diagonal weights `w`, solving
/// each whitened linear step by SVD.
fn gauss_newton(
    mut y: DVector<f64>,
    z: &DVector<f64>,
    w: &DVector<f64>,
    eval: impl Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
) -> Result<DVector<f64>> {
    let sqrt_w = w.map(f64::sqrt);
    let mut last_step = f64::INFINITY;
    for iter in 1..=GN_MAX_ITER {
        let (h, jac) = eval(&y)?;
        let a = DMatrix::from_fn(jac.nrows(), jac.ncols(), |i, j| jac[(i, j)] * sqrt_w[i]);
        let rhs = (z - h).component_mul(&sqrt_w);
        let step = a
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|_| Error::GaussNewtonDiverged { iterations: iter })?;
        y += &step;
        let norm = step.norm();
        if norm < GN_TOL {
            return Ok(y);
        }
        if !(norm < last_step) {
            if norm < GN_FLOOR * (1.0 + y.norm()) {
                return Ok(y);
            }
            return Err(Error::GaussNewtonDiverged { iterations: iter });
        }
        last_step = norm;
    }
    Err(Error::GaussNewtonDiverged { iterations: GN_MAX_ITER })
}

fn sites(geom: &Geometry) -> impl Iterator<Item = &Vec<f64>> {
    geom.transmitters.iter().chain(std::iter::once(&geom.receiver))
}

/// Position from the range rows of a scan.
fn solve_position(z: &DVector<f64>, geom: &Geometry) -> Result<DVector<f64>> {
    let d = geom.dims();
    let n = geom.n_sensors();
    let ranges = DVector::from_fn(n, |i, _| z[2 * i]);
    let ones = DVector::from_element(n, 1.0);
    let eval = |r: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut x = DVector::zeros(2 * d);
        x.rows_mut(0, d).copy_from(r);
        let h = radar::measurement_function(&x, geom)?;
        let jac = radar::measurement_jacobian(&x, geom)?;
        Ok((
            DVector::from_fn(n, |i, _| h[2 * i]),
            DMatrix::from_fn(n, d, |i, j| jac[(2 * i, j)]),
        ))
    };
    let count = (n + 1) as f64;
    let centroid = DVector::from_fn(d, |k, _| sites(geom).map(|s| s[k]).sum::<f64>() / count);
    if let Ok(r) = gauss_newton(centroid, &ranges, &ones, eval) {
        return Ok(r);
    }
    // coarse lattice over the surveillance region
    let lo: Vec<f64> = (0..d).map(|k| sites(geom).map(|s| s[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|k| sites(geom).map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let cells = 20usize;
    let mut seeds = Vec::new();
    for idx in 0..cells.pow(d as u32) {
        let p = DVector::from_fn(d, |k, _| {
            let c = (idx / cells.pow(k as u32)) % cells;
            lo[k] + (hi[k] - lo[k]) * (c as f64 + 0.5) / cells as f64
        });
        if let Ok((h, _)) = eval(&p) {
            seeds.push(((&ranges - h).norm_squared(), p));
        }
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut last = Error::GaussNewtonDiverged { iterations: 0 };
    for (_, seed) in seeds.into_iter().take(5) {
        match gauss_newton(seed, &ranges, &ones, eval) {
            Ok(r) => return Ok(r),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Builds a branch from the first scan with bias prior `N(0, σ_b² I)`.
///
/// Position comes from the ranges, velocity from a linear solve on the
/// bistatic velocities, and both are then refined jointly with the
/// composite noise `R̃ = R + H_b P_b H_bᵀ`. With the gain
/// `G = (Hᵀ R̃⁻¹ H)⁻¹ Hᵀ R̃⁻¹`, the estimate error is `G (w + H_b b)` and the
/// bias error is `−b`, so the branch gets `P_t = G R̃ Gᵀ` and
/// `P_tb = −G H_b P_b` on position/velocity.
pub fn initialize_branch_from_first_scan(
    id: TargetId,
    z0: &DVector<f64>,
    geom: &Geometry,
    cfg: &ScenarioConfig,
) -> Result<BranchBelief<f64>> {
    let d = geom.dims();
    let n = geom.n_sensors();
    if z0.len() != 2 * n {
        return Err(Error::dims("first scan", 2 * n, z0.len()));
    }
    let r0 = solve_position(z0, geom)?;
    let mut x = DVector::zeros(2 * d);
    x.rows_mut(0, d).copy_from(&r0);
    let jac = radar::measurement_jacobian(&x, geom)?;
    let a = DMatrix::from_fn(n, d, |i, j| jac[(2 * i + 1, d + j)]);
    let zv = DVector::from_fn(n, |i, _| z0[2 * i + 1]);
    let v0 = linalg::spd_solve_vec(&(a.transpose() * &a), &(a.transpose() * zv))
        .map_err(|_| Error::GaussNewtonDiverged { iterations: 0 })?;
    x.rows_mut(d, d).copy_from(&v0);

    let h_b = radar::bias_matrix::<f64>(n);
    let p_b = DMatrix::identity(n, n) * cfg.sigma_bias.powi(2);
    let r = cfg.noise().covariance::<f64>(n);
    let r_tilde = &r + &h_b * &p_b * h_b.transpose();
    let weights = r_tilde.diagonal().map(|v| 1.0 / v);
    let eval = |y: &DVector<f64>| Ok((radar::measurement_function(y, geom)?, radar::measurement_jacobian(y, geom)?));
    let y = gauss_newton(x, z0, &weights, eval)?;

    let h = radar::measurement_jacobian(&y, geom)?;
    let rt_inv_h = linalg::spd_solve(&r_tilde, &h)?;
    let info = linalg::sym(h.transpose() * &rt_inv_h);
    let gain = linalg::spd_solve(&info, &rt_inv_h.transpose())?;
    let p_rv = linalg::sym(&gain * &r_tilde * gain.transpose());
    let p_rv_b = -(&gain * &h_b * &p_b);

    let s = 3 * d;
    let mut x_t = DVector::zeros(s);
    x_t.rows_mut(0, 2 * d).copy_from(&y);
    let mut p_t = DMatrix::identity(s, s) * cfg.sigma_accel_prior.powi(2);
    p_t.view_mut((0, 0), (2 * d, 2 * d)).copy_from(&p_rv);
    let mut p_tb = DMatrix::zeros(s, n);
    p_tb.view_mut((0, 0), (2 * d, n)).copy_from(&p_rv_b);
    BranchBelief::new(id, x_t, DVector::zeros(n), PartitionedCov::new(p_t, p_tb, p_b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Askf,
    Decoupled,
    Approx,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Askf, FilterKind::Decoupled, FilterKind::Approx];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Askf => "askf",
            FilterKind::Decoupled => "decoupled",
            FilterKind::Approx => "approx",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Where the augmented filter evaluates its measurement Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearizationMode {
    /// Every filter linearizes about its own prediction.
    #[default]
    Independent,
    /// The augmented filter reuses the decoupled branches' linearizations.
    Shared,
}

/// One filter's estimate of one target at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub run: usize,
    pub step: usize,
    pub filter: FilterKind,
    pub target: TargetId,
    pub x: DVector<f64>,
    pub p_t: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub p_b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub truth: TruthRecord,
    pub estimates: Vec<EstimateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOutput {
    pub filters: Vec<FilterKind>,
    pub runs: Vec<RunOutput>,
}

/// RNG of run `run`: the seed selects the generator and the run index the
/// stream, so runs are independent of scheduling.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

fn push_bank(out: &mut Vec<EstimateRecord>, run: usize, step: usize, filter: FilterKind, bank: &FilterBank<f64>) {
    for (id, br) in &bank.branches {
        out.push(EstimateRecord {
            run,
            step,
            filter,
            target: *id,
            x: br.x_t.clone(),
            p_t: br.cov.t.clone(),
            bias: bank.fused.b_f.clone(),
            p_b: bank.fused.p_fb.clone(),
        });
    }
}

fn push_askf(out: &mut Vec<EstimateRecord>, run: usize, step: usize, state: &AskfState<f64>) -> Result<()> {
    for slot in &state.layout.targets {
        out.push(EstimateRecord {
            run,
            step,
            filter: FilterKind::Askf,
            target: slot.id,
            x: state.target_mean(slot.id)?,
            p_t: state.target_cov(slot.id)?,
            bias: state.bias_mean(),
            p_b: state.bias_cov(),
        });
    }
    Ok(())
}

/// Simulates and filters one run.
pub fn run_single(cfg: &ScenarioConfig, filters: &[FilterKind], mode: LinearizationMode, run: usize) -> Result<RunOutput> {
    let mut rng = run_rng(cfg.seed, run);
    let truth = simulate_truth(cfg, &mut rng)?;
    let d = cfg.dims();
    let ids: Vec<TargetId> = (0..cfg.targets.len()).map(|i| TargetId(i as u32)).collect();
    let dynamics: BTreeMap<TargetId, TargetModel<f64>> =
        ids.iter().map(|id| (*id, dwpa_model(*id, cfg.dt_s, cfg.sigma_a, d))).collect();
    let branches = ids
        .iter()
        .zip(&truth.measurements[0])
        .map(|(id, z)| initialize_branch_from_first_scan(*id, z, &cfg.geometry, cfg).map_err(|e| e.for_target(*id)))
        .collect::<Result<Vec<_>>>()?;
    let bank0 = FilterBank::from_branches(branches)?;

    let want = |f: FilterKind| filters.contains(&f);
    let need_decoupled = want(FilterKind::Decoupled) || (want(FilterKind::Askf) && mode == LinearizationMode::Shared);
    let mut decoupled = need_decoupled.then(|| bank0.clone());
    let mut approx = want(FilterKind::Approx).then(|| bank0.clone());
    let mut askf = if want(FilterKind::Askf) { Some(AskfState::from_bank(&bank0)?) } else { None };

    let mut estimates = Vec::new();
    let record = |out: &mut Vec<EstimateRecord>,
                  step: usize,
                  dec: &Option<FilterBank<f64>>,
                  apx: &Option<FilterBank<f64>>,
                  ask: &Option<AskfState<f64>>|
     -> Result<()> {
        if let Some(a) = ask {
            push_askf(out, run, step, a)?;
        }
        if let (true, Some(b)) = (want(FilterKind::Decoupled), dec) {
            push_bank(out, run, step, FilterKind::Decoupled, b);
        }
        if let Some(b) = apx {
            push_bank(out, run, step, FilterKind::Approx, b);
        }
        Ok(())
    };
    record(&mut estimates, 0, &decoupled, &approx, &askf)?;

    let noise = cfg.noise();
    for k in 1..=cfg.n_steps() {
        let obs: BTreeMap<TargetId, RadarObservation<'_, f64>> = ids
            .iter()
            .zip(&truth.measurements[k])
            .map(|(id, z)| (*id, RadarObservation { z, geom: &cfg.geometry, noise }))
            .collect();
        let mut shared = None;
        if let Some(bank) = &decoupled {
            let (next, lins) = bank_step_traced(bank, &obs, &dynamics)?;
            decoupled = Some(next);
            shared = Some(lins);
        }
        if let Some(bank) = &approx {
            approx = Some(approx_bank_step_traced(bank, &obs, &dynamics)?.0);
        }
        if let Some(state) = &askf {
            let predicted = state.predict_targets(&dynamics)?;
            let lins: BTreeMap<TargetId, Linearized<f64>> = match (mode, shared) {
                (LinearizationMode::Shared, Some(lins)) => lins,
                _ => {
                    let b = predicted.bias_mean();
                    obs.iter()
                        .map(|(id, o)| Ok((*id, o.linearize(&predicted.target_mean(*id)?, &b).map_err(|e| e.for_target(*id))?)))
                        .collect::<Result<_>>()?
                }
            };
            askf = Some(predicted.update_targets(&lins)?);
        }
        record(&mut estimates, k, &decoupled, &approx, &askf)?;
    }
    Ok(RunOutput { truth, estimates })
}

/// Runs `cfg.n_monte_carlo` independent runs in parallel. Results are in run
/// order and do not depend on the thread count.
pub fn run_monte_carlo(cfg: &ScenarioConfig, filters: &[FilterKind], mode: LinearizationMode) -> Result<MonteCarloOutput> {
    cfg.validate_for_filtering()?;
    let mut filters = filters.to_vec();
    filters.sort();
    filters.dedup();
    let runs = (0..cfg.n_monte_carlo)
        .into_par_iter()
        .map(|run| run_single(cfg, &filters, mode, run).map_err(|e| e.for_run(run)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloOutput { filters, runs })
}
