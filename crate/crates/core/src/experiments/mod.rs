//! Monte Carlo harness for the three case studies: estimator accuracy and
//! timing, Doppler-mismatch SNR loss, and the subcarrier sweep.

mod trial;

use std::time::Duration;

use rayon::prelude::*;

pub use trial::{estimator_rng, TimingReference, Trial, TrialOptions, VelocityDraw};

use crate::channel::CsiMode;
use crate::error::{ConfigError, Result};
use crate::geometry::{Vec3, Velocity3};
use crate::rng::trial_seed;
use crate::scene::ScenarioConfig;
use crate::sensing::{
    calibrate_threshold, glrt_detect, noise_variance, numerical_rank, realized_snr, sensing_snr, DetectionOutcome, DetectorSetup, ThresholdMode,
};
use crate::velocity::{estimate, per_component_error, relative_component_error, EstimatorConfig, Method, SearchBox, VelocityEstimate};
use crate::waveform::OfdmGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmParams {
    pub nc: usize,
    pub ns: usize,
    pub delta_f: f64,
    pub fc: f64,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self { nc: 12, ns: 14, delta_f: 30e3, fc: 3e9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdKind {
    #[default]
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub p_fa: f64,
    pub threshold: ThresholdKind,
    pub mc_trials: usize,
    pub method: Method,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { p_fa: 0.05, threshold: ThresholdKind::Analytic, mc_trials: 20_000, method: Method::PsoRi }
    }
}

/// Everything a case runner needs besides the seed and trial count.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub ofdm: OfdmParams,
    pub estimator: EstimatorConfig,
    pub detector: DetectorConfig,
    pub csi: CsiMode,
    pub coherent_sensing_stream: bool,
    /// Multiplies the physical noise variance.
    pub noise_scale: f64,
    /// Evaluate each estimator on one thread so timings are comparable.
    pub timed_single_thread: bool,
    pub case2_nu_max: Vec<f64>,
    pub case3_nc: Vec<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            ofdm: OfdmParams::default(),
            estimator: EstimatorConfig::default(),
            detector: DetectorConfig::default(),
            csi: CsiMode::Mmse,
            coherent_sensing_stream: true,
            noise_scale: 1.0,
            timed_single_thread: true,
            case2_nu_max: vec![50.0, 100.0, 150.0],
            case3_nc: vec![1, 6, 12, 24],
        }
    }
}

impl SimConfig {
    pub fn grid(&self) -> Result<OfdmGrid, ConfigError> {
        self.grid_with(self.ofdm.nc, self.scenario.nu_max)
    }

    pub fn grid_with(&self, nc: usize, nu_max: f64) -> Result<OfdmGrid, ConfigError> {
        OfdmGrid::new(nc, self.ofdm.ns, self.ofdm.delta_f, self.ofdm.fc, nu_max)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.grid()?;
        for &nu in &self.case2_nu_max {
            if !(nu >= 0.0) {
                return Err(ConfigError::for_key("case2.nu_max", "speeds must be non-negative"));
            }
            self.grid_with(self.ofdm.nc, nu)?;
        }
        for &nc in &self.case3_nc {
            self.grid_with(nc, self.scenario.nu_max)?;
        }
        if !(self.noise_scale > 0.0) {
            return Err(ConfigError::for_key("sim.noise_scale", "must be positive"));
        }
        if !(self.detector.p_fa > 0.0 && self.detector.p_fa < 1.0) {
            return Err(ConfigError::for_key("detector.p_fa", "must lie in (0, 1)"));
        }
        let e = &self.estimator;
        if e.grid_points < 2 || e.coarse_points < 2 || e.swarm_size < 2 || e.iterations < 1 || e.grad_max_iters < 1 {
            return Err(ConfigError::for_key("estimator", "point counts must be at least 2 and iteration counts at least 1"));
        }
        Ok(())
    }
}

/// Sorted samples with ordinates `k/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl CdfSeries {
    /// Smallest sample whose ordinate reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.values.len();
        let k = (p * n as f64).ceil() as usize;
        self.values[k.clamp(1, n) - 1]
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Result<CdfSeries, ConfigError> {
    if samples.is_empty() {
        return Err(ConfigError::new("empirical CDF of an empty sample"));
    }
    let mut values = samples.to_vec();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let probs = (1..=values.len()).map(|k| k as f64 / n).collect();
    Ok(CdfSeries { values, probs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub estimate: VelocityEstimate,
    /// `|v̂_c − v_c| / ‖v‖`, absent for a stationary truth.
    pub speed_normalized: Option<[f64; 3]>,
    /// `|v̂_c − v_c| / |v_c|`.
    pub per_component: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub velocity: Velocity3,
    pub results: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub method: Method,
    pub mean_time: Duration,
    pub normalized_time: f64,
    pub mean_evaluations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case1Result {
    pub trials: Vec<TrialRecord>,
    pub timing: Vec<TimingRecord>,
}

impl Case1Result {
    /// Speed-normalized errors of one method on one axis (0 = x).
    pub fn errors(&self, method: Method, axis: usize) -> Vec<f64> {
        self.trials
            .iter()
            .flat_map(|t| t.results.iter().filter(|r| r.method == method).filter_map(|r| r.speed_normalized.map(|e| e[axis])))
            .collect()
    }

    pub fn cdf(&self, method: Method, axis: usize) -> Result<CdfSeries, ConfigError> {
        empirical_cdf(&self.errors(method, axis))
    }

    pub fn timing_of(&self, method: Method) -> Option<&TimingRecord> {
        self.timing.iter().find(|t| t.method == method)
    }
}

fn timed_estimator(cfg: &SimConfig) -> EstimatorConfig {
    EstimatorConfig { parallel: cfg.estimator.parallel && !cfg.timed_single_thread, ..cfg.estimator.clone() }
}

/// Runs `f` over trial indices on the current rayon pool, merged by index.
fn per_trial<T: Send>(n_trials: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n_trials).into_par_iter().map(f).collect()
}

/// All five estimators on identical H1 data per trial.
pub fn run_case1(cfg: &SimConfig, n_trials: usize, seed: u64) -> Result<Case1Result> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let est_cfg = timed_estimator(cfg);
    let bounds = SearchBox::new(cfg.scenario.nu_max);
    let trials = per_trial(n_trials, |i| {
        let ts = trial_seed(seed, i as u64);
        let trial = Trial::build(cfg, &grid, ts, &TrialOptions::detection(cfg.scenario.nu_max))?;
        let objective = trial.objective()?;
        let results = Method::ALL
            .iter()
            .enumerate()
            .map(|(slot, &method)| {
                let mut rng = estimator_rng(ts, slot as u64);
                let estimate = estimate(method, &objective, &bounds, &est_cfg, &mut rng);
                MethodResult {
                    method,
                    speed_normalized: relative_component_error(estimate.velocity, trial.velocity),
                    per_component: per_component_error(estimate.velocity, trial.velocity),
                    estimate,
                }
            })
            .collect();
        Ok(TrialRecord { trial: i, seed: ts, velocity: trial.velocity, results })
    })?;
    let mean = |m: Method| -> (f64, f64) {
        let rs: Vec<&MethodResult> = trials.iter().flat_map(|t| t.results.iter().filter(move |r| r.method == m)).collect();
        let n = rs.len().max(1) as f64;
        (rs.iter().map(|r| r.estimate.wall_time.as_secs_f64()).sum::<f64>() / n, rs.iter().map(|r| r.estimate.evaluations as f64).sum::<f64>() / n)
    };
    let grid_time = mean(Method::Grid).0;
    let timing = Method::ALL
        .iter()
        .map(|&m| {
            let (t, evals) = mean(m);
            TimingRecord {
                method: m,
                mean_time: Duration::from_secs_f64(t),
                normalized_time: if m == Method::Grid { 1.0 } else { t / grid_time },
                mean_evaluations: evals,
            }
        })
        .collect();
    Ok(Case1Result { trials, timing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Case2Scenario {
    /// Stationary target, detector at `v = 0`.
    Stationary,
    /// Moving target, detector at the PSO-RI estimate.
    Estimated,
    /// Moving target, detector forced to `v = 0`.
    ZeroAssumed,
}

impl Case2Scenario {
    pub const ALL: [Case2Scenario; 3] = [Case2Scenario::Stationary, Case2Scenario::Estimated, Case2Scenario::ZeroAssumed];

    pub fn name(self) -> &'static str {
        match self {
            Case2Scenario::Stationary => "stationary",
            Case2Scenario::Estimated => "pso_ri",
            Case2Scenario::ZeroAssumed => "zero_velocity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case2Row {
    pub trial: usize,
    pub scenario: Case2Scenario,
    pub nu_max: f64,
    pub gamma_db: f64,
}

pub fn case2_gammas(rows: &[Case2Row], scenario: Case2Scenario, nu_max: f64) -> Vec<f64> {
    rows.iter().filter(|r| r.scenario == scenario && r.nu_max == nu_max).map(|r| r.gamma_db).collect()
}

/// Realized SNR of the stationary, estimated-velocity and zero-velocity
/// detectors for every speed bound in `nu_max_list`.
pub fn run_case2(cfg: &SimConfig, n_trials: usize, seed: u64, nu_max_list: &[f64]) -> Result<Vec<Case2Row>> {
    cfg.validate()?;
    let est_cfg = timed_estimator(cfg);
    let mut rows = Vec::new();
    for &nu in nu_max_list {
        let grid = cfg.grid_with(cfg.ofdm.nc, nu)?;
        let bounds = SearchBox::new(nu);
        let per = per_trial(n_trials, |i| {
            let ts = trial_seed(seed, i as u64);
            let still = Trial::build(cfg, &grid, ts, &TrialOptions { velocity: VelocityDraw::Fixed(Vec3::ZERO), observe: false, ..TrialOptions::detection(nu) })?;
            let rcs = still.rcs_per_rap();
            let stationary = sensing_snr(&still.model.stacks(Vec3::ZERO), &rcs, still.noise_var)?;

            let moving = Trial::build(cfg, &grid, ts, &TrialOptions::detection(nu))?;
            let rcs = moving.rcs_per_rap();
            let objective = moving.objective()?;
            let est = estimate(Method::PsoRi, &objective, &bounds, &est_cfg, &mut estimator_rng(ts, 0));
            let truth = moving.model.stacks(moving.velocity);
            let estimated = realized_snr(&truth, &moving.model.stacks(est.velocity), &rcs, moving.noise_var)?;
            let zero = realized_snr(&truth, &moving.model.stacks(Vec3::ZERO), &rcs, moving.noise_var)?;
            Ok([stationary, estimated, zero]
                .into_iter()
                .zip(Case2Scenario::ALL)
                .map(|(snr, scenario)| Case2Row { trial: i, scenario, nu_max: nu, gamma_db: snr.gamma_db() })
                .collect::<Vec<_>>())
        })?;
        rows.extend(per.into_iter().flatten());
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case3Row {
    pub trial: usize,
    pub nc: usize,
    pub gamma_db: f64,
}

pub fn case3_gammas(rows: &[Case3Row], nc: usize) -> Vec<f64> {
    rows.iter().filter(|r| r.nc == nc).map(|r| r.gamma_db).collect()
}

/// Sensing SNR at the true velocity for every subcarrier count, with the
/// per-subcarrier power held fixed.
pub fn run_case3(cfg: &SimConfig, n_trials: usize, seed: u64, nc_list: &[usize]) -> Result<Vec<Case3Row>> {
    cfg.validate()?;
    let grids = nc_list.iter().map(|&nc| cfg.grid_with(nc, cfg.scenario.nu_max)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (grid, &nc) in grids.iter().zip(nc_list) {
        let per = per_trial(n_trials, |i| {
            let ts = trial_seed(seed, i as u64);
            let opts = TrialOptions { observe: false, ..TrialOptions::detection(cfg.scenario.nu_max) };
            let t = Trial::build(cfg, grid, ts, &opts)?;
            let snr = sensing_snr(&t.model.stacks(t.velocity), &t.rcs_per_rap(), t.noise_var)?;
            Ok(Case3Row { trial: i, nc, gamma_db: snr.gamma_db() })
        })?;
        rows.extend(per);
    }
    Ok(rows)
}

impl SimConfig {
    /// Per-sample noise variance of the configured scenario.
    pub fn noise_var(&self) -> f64 {
        noise_variance(self.scenario.noise_psd_dbm_hz, self.scenario.noise_figure_db, self.ofdm.delta_f) * self.noise_scale
    }

    /// Projection rank of one region when every response stack has full
    /// column rank: one column per tAP for each inspecting rAP.
    pub fn nominal_rank(&self) -> usize {
        self.scenario.n_tx * self.scenario.rx_per_region
    }

    /// `δ'` for the configured false-alarm target.
    pub fn threshold(&self, total_rank: usize, seed: u64) -> Result<f64, ConfigError> {
        let mode = match self.detector.threshold {
            ThresholdKind::Analytic => ThresholdMode::Analytic,
            ThresholdKind::MonteCarlo => ThresholdMode::MonteCarlo { trials: self.detector.mc_trials, seed },
        };
        calibrate_threshold(total_rank, self.noise_var(), self.detector.p_fa, mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectReport {
    pub seed: u64,
    pub present: bool,
    pub velocity: Velocity3,
    pub total_rank: usize,
    pub outcome: DetectionOutcome,
}

/// One seeded end-to-end detection in the target's region.
pub fn run_detect(cfg: &SimConfig, seed: u64, present: bool) -> Result<DetectReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let ts = trial_seed(seed, 0);
    let trial = Trial::build(cfg, &grid, ts, &TrialOptions { present, ..TrialOptions::detection(cfg.scenario.nu_max) })?;
    let total_rank = trial.model.stacks(Vec3::ZERO).iter().map(|s| numerical_rank(&s.matrix)).sum();
    let setup = DetectorSetup {
        method: cfg.detector.method,
        bounds: SearchBox::new(cfg.scenario.nu_max),
        estimator: &cfg.estimator,
        threshold: cfg.threshold(total_rank, seed)?,
    };
    let outcome = glrt_detect(&trial.model, &trial.observations, &setup, &mut estimator_rng(ts, 0))?;
    Ok(DetectReport { seed: ts, present, velocity: trial.velocity, total_rank, outcome })
}
