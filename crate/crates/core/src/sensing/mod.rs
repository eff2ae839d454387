//! rAP observation synthesis, the spatial-Doppler response model, the GLRT
//! statistic with its ML RCS estimate, threshold calibration and the
//! sensing-SNR metrics.

mod linalg;
mod objective;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Gamma};

pub use linalg::{column_basis, least_squares, numerical_rank, projection_energy, COND_LIMIT, RANK_EPS};
pub use objective::GlrtObjective;

use crate::channel::{DirectChannel, SensingChannelFactors};
use crate::error::{ConfigError, Error, Result};
use crate::geometry::{doppler_direction, steering_towards, ArraySpec, PhysicalConstants, Position3, Vec3, Velocity3};
use crate::rng::{complex_normal, substream, SimRng};
use crate::scene::{bistatic_gain, RcsCovariance};
use crate::velocity::{estimate, EstimatorConfig, Method, SearchBox};
use crate::waveform::{Frame, OfdmGrid};

type C = Complex64;

/// Per-subcarrier noise variance `N_0 Δf 10^{F/10}` in watts.
pub fn noise_variance(noise_psd_dbm_hz: f64, noise_figure_db: f64, delta_f: f64) -> f64 {
    let n0 = 10f64.powf((noise_psd_dbm_hz - 30.0) / 10.0);
    n0 * delta_f * 10f64.powf(noise_figure_db / 10.0)
}

/// Stacked residual `ÿ` of one rAP, antenna fastest, then subcarrier, then symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    pub data: DVector<C>,
    pub noise_var: f64,
}

/// All links into one rAP, indexed by tAP in the same order as the frames.
pub struct RapLinks<'a> {
    pub frames: &'a [Frame],
    pub sensing: &'a [SensingChannelFactors],
    pub direct: &'a [DirectChannel],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationOptions {
    /// Target presence `a(p_i)`.
    pub present: bool,
    pub noise_var: f64,
    /// Receiver timing reference in seconds; the residual on subcarrier `n`
    /// is de-rotated by `exp(j2π n τ_ref / T)`.
    pub timing_reference: f64,
}

fn timing_phase(n: usize, timing_reference: f64, grid: &OfdmGrid) -> C {
    C::from_polar(1.0, 2.0 * PI * n as f64 * timing_reference / grid.symbol_time())
}

/// Raw rAP signal with echoes, direct links and noise, followed by
/// cancellation of the known direct-link term.
pub fn synthesize_observation(links: &RapLinks<'_>, grid: &OfdmGrid, opts: &ObservationOptions, rng: &mut SimRng) -> Result<ObservationStack> {
    let n_tx = links.frames.len();
    if links.sensing.len() != n_tx || links.direct.len() != n_tx {
        return Err(ConfigError::new("links must cover every tAP").into());
    }
    let na = links.sensing.first().map(|s| s.a_rx.len()).or(links.frames.first().map(|f| f.n_antennas)).unwrap_or(0);
    let direct: Vec<Vec<DMatrix<C>>> = links.direct.iter().map(|g| (0..grid.nc).map(|n| g.matrix(n)).collect()).collect();
    let mut data = DVector::zeros(na * grid.samples());
    let mut echo = vec![C::new(0.0, 0.0); na];
    let mut leak = DVector::<C>::zeros(na);
    for np in 0..grid.ns {
        for n in 0..grid.nc {
            echo.iter_mut().for_each(|e| *e = C::new(0.0, 0.0));
            leak.fill(C::new(0.0, 0.0));
            for t in 0..n_tx {
                let s = links.frames[t].at(n, np);
                if opts.present {
                    links.sensing[t].apply_add(n, np, grid, s, &mut echo);
                }
                leak += &direct[t][n] * DVector::from_column_slice(s);
            }
            let rot = timing_phase(n, opts.timing_reference, grid);
            let base = na * (n + grid.nc * np);
            for a in 0..na {
                let raw = echo[a] + leak[a] + complex_normal(rng, opts.noise_var);
                data[base + a] = (raw - leak[a]) * rot;
            }
        }
    }
    Ok(ObservationStack { data, noise_var: opts.noise_var })
}

/// `D̈_{i,m}(v)` together with the velocity it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerResponseStack {
    pub matrix: DMatrix<C>,
    pub velocity: Velocity3,
}

/// Velocity-independent part of the response for one inspected cell:
/// per rAP, columns `√β A s_{m'}(n,n') ρ(n)` and the Doppler directions.
#[derive(Debug, Clone)]
pub struct ResponseModel {
    grid: OfdmGrid,
    n_antennas: usize,
    base: Vec<DMatrix<C>>,
    dirs: Vec<Vec<Vec3>>,
}

/// Geometry and transmit data the response is built from.
pub struct ResponseInputs<'a> {
    pub cell: Position3,
    pub raps: &'a [Position3],
    pub taps: &'a [Position3],
    /// One frame per tAP.
    pub frames: &'a [Frame],
    pub n_antennas: usize,
    pub array: &'a ArraySpec,
    pub consts: &'a PhysicalConstants,
    pub timing_reference: f64,
}

impl ResponseModel {
    pub fn new(inputs: &ResponseInputs<'_>, grid: &OfdmGrid) -> Result<Self> {
        let na = inputs.n_antennas;
        if inputs.frames.len() != inputs.taps.len() {
            return Err(ConfigError::new("one frame per tAP is required").into());
        }
        if inputs.taps.is_empty() {
            return Err(ConfigError::new("the response needs at least one tAP").into());
        }
        let rows = na * grid.samples();
        let lambda = inputs.consts.wavelength();
        let mut base = Vec::with_capacity(inputs.raps.len());
        let mut dirs = Vec::with_capacity(inputs.raps.len());
        for &rap in inputs.raps {
            let a_rx = steering_towards(rap, inputs.cell, na, inputs.array)?;
            let mut b = DMatrix::zeros(rows, inputs.taps.len());
            let mut d = Vec::with_capacity(inputs.taps.len());
            for (col, (&tap, frame)) in inputs.taps.iter().zip(inputs.frames).enumerate() {
                let a_tx = steering_towards(tap, inputs.cell, na, inputs.array)?;
                let amp = bistatic_gain(inputs.cell, tap, rap, lambda)?.sqrt();
                let tau = crate::geometry::bistatic_delay(inputs.cell, tap, rap, inputs.consts) - inputs.timing_reference;
                for np in 0..grid.ns {
                    for n in 0..grid.nc {
                        let s = frame.at(n, np);
                        let proj: C = a_tx.iter().zip(s).map(|(a, x)| a.conj() * x).sum();
                        let rho = C::from_polar(1.0, -2.0 * PI * n as f64 * tau / grid.symbol_time());
                        let coef = proj * rho * amp;
                        let start = na * (n + grid.nc * np);
                        for (k, ar) in a_rx.iter().enumerate() {
                            b[(start + k, col)] = ar * coef;
                        }
                    }
                }
                d.push(doppler_direction(inputs.cell, tap, rap, inputs.consts)?);
            }
            base.push(b);
            dirs.push(d);
        }
        Ok(Self { grid: *grid, n_antennas: na, base, dirs })
    }

    pub fn grid(&self) -> &OfdmGrid {
        &self.grid
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_raps(&self) -> usize {
        self.base.len()
    }

    pub fn n_taps(&self) -> usize {
        self.base.first().map_or(0, |b| b.ncols())
    }

    /// Doppler-free columns for rAP `j`.
    pub fn base(&self, j: usize) -> &DMatrix<C> {
        &self.base[j]
    }

    /// `(fc/c)(û_tx + û_rx)` per tAP for rAP `j`.
    pub fn doppler_directions(&self, j: usize) -> &[Vec3] {
        &self.dirs[j]
    }

    /// Dense `D̈_j(v)`.
    pub fn stack(&self, j: usize, v: Velocity3) -> DopplerResponseStack {
        let b = &self.base[j];
        let block = self.n_antennas * self.grid.nc;
        let ts = self.grid.total_symbol_time();
        let mut m = b.clone();
        for (col, dir) in self.dirs[j].iter().enumerate() {
            let fd = dir.dot(v);
            for np in 0..self.grid.ns {
                let xi = C::from_polar(1.0, 2.0 * PI * np as f64 * fd * ts);
                for r in np * block..(np + 1) * block {
                    m[(r, col)] *= xi;
                }
            }
        }
        DopplerResponseStack { matrix: m, velocity: v }
    }

    pub fn stacks(&self, v: Velocity3) -> Vec<DopplerResponseStack> {
        (0..self.n_raps()).map(|j| self.stack(j, v)).collect()
    }

    pub fn objective<'a>(&'a self, observations: &'a [ObservationStack]) -> Result<GlrtObjective<'a>> {
        GlrtObjective::new(self, observations)
    }
}

/// `α̂ = D̈† ÿ`.
pub fn ml_rcs_estimate(stack: &DopplerResponseStack, obs: &ObservationStack) -> Result<DVector<C>> {
    check_rows(stack, obs)?;
    least_squares(&stack.matrix, &obs.data)
}

fn check_rows(stack: &DopplerResponseStack, obs: &ObservationStack) -> Result<()> {
    if stack.matrix.nrows() != obs.data.len() {
        return Err(ConfigError::new("observation length does not match the response rows").into());
    }
    Ok(())
}

/// `Σ_m ‖D̈_m D̈_m† ÿ_m‖²`.
pub fn glrt_statistic(observations: &[ObservationStack], stacks: &[DopplerResponseStack]) -> Result<f64> {
    if observations.len() != stacks.len() {
        return Err(ConfigError::new("observations and response stacks must be aligned per rAP").into());
    }
    let mut total = 0.0;
    for (obs, stack) in observations.iter().zip(stacks) {
        check_rows(stack, obs)?;
        total += projection_energy(&stack.matrix, &obs.data);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Quantile of `Gamma(r_tot, σ²)`.
    Analytic,
    /// Empirical quantile of simulated H0 projection energies.
    MonteCarlo { trials: usize, seed: u64 },
}

fn check_pfa(p_fa: f64) -> Result<(), ConfigError> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(ConfigError::for_key("detector.p_fa", format!("false-alarm probability {p_fa} not in (0, 1)")));
    }
    Ok(())
}

/// Value exceeded by a fraction `p_fa` of `samples` (upper empirical quantile).
pub fn empirical_threshold(samples: &mut [f64], p_fa: f64) -> Result<f64, ConfigError> {
    check_pfa(p_fa)?;
    if samples.is_empty() {
        return Err(ConfigError::new("no samples to calibrate from"));
    }
    samples.sort_by(f64::total_cmp);
    let k = ((1.0 - p_fa) * samples.len() as f64).ceil() as usize;
    Ok(samples[k.clamp(1, samples.len()) - 1])
}

/// Threshold `δ'` on the statistic for a target false-alarm probability. Under
/// H0 a fixed-velocity statistic is the energy of white noise projected onto
/// `r_tot` dimensions, which is `Gamma(r_tot, σ²)`.
pub fn calibrate_threshold(total_rank: usize, noise_var: f64, p_fa: f64, mode: ThresholdMode) -> Result<f64, ConfigError> {
    check_pfa(p_fa)?;
    if total_rank == 0 || !(noise_var > 0.0) {
        return Err(ConfigError::new("threshold needs a positive rank and noise variance"));
    }
    match mode {
        ThresholdMode::Analytic => {
            // The quantile search loses its bracket at physical noise levels
            // (rates near 1e15), so invert the unit-scale law and rescale.
            let g = Gamma::new(total_rank as f64, 1.0).map_err(|e| ConfigError::new(e.to_string()))?;
            Ok(noise_var * g.inverse_cdf(1.0 - p_fa))
        }
        ThresholdMode::MonteCarlo { trials, seed } => {
            let mut rng = substream(seed, 0);
            let mut samples: Vec<f64> =
                (0..trials).map(|_| (0..total_rank).map(|_| complex_normal(&mut rng, noise_var).norm_sqr()).sum()).collect();
            empirical_threshold(&mut samples, p_fa)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    H0,
    H1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Hypothesis,
    pub alpha_hat: Vec<DVector<C>>,
    pub velocity: Velocity3,
    pub evaluations: usize,
    /// The search returned a non-finite result and `v = 0` was used instead.
    pub estimator_failed: bool,
}

pub struct DetectorSetup<'a> {
    pub method: Method,
    pub bounds: SearchBox,
    pub estimator: &'a EstimatorConfig,
    pub threshold: f64,
}

/// Velocity-aware GLRT: maximize the statistic over the search box, compare
/// with `δ'`, and return the ML RCS estimates at the maximizer.
pub fn glrt_detect(model: &ResponseModel, observations: &[ObservationStack], setup: &DetectorSetup<'_>, rng: &mut SimRng) -> Result<DetectionOutcome> {
    let objective = model.objective(observations)?;
    let est = estimate(setup.method, &objective, &setup.bounds, setup.estimator, rng);
    let failed = !est.statistic.is_finite() || !est.velocity.is_finite();
    let velocity = if failed { Vec3::ZERO } else { est.velocity };
    let stacks = model.stacks(velocity);
    let statistic = glrt_statistic(observations, &stacks)?;
    let alpha_hat = stacks.iter().zip(observations).map(|(s, y)| ml_rcs_estimate(s, y)).collect::<Result<Vec<_>>>()?;
    let decision = if statistic > setup.threshold { Hypothesis::H1 } else { Hypothesis::H0 };
    Ok(DetectionOutcome {
        statistic,
        threshold: setup.threshold,
        decision,
        alpha_hat,
        velocity,
        evaluations: est.evaluations,
        estimator_failed: failed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrReport {
    pub gamma: f64,
    pub ranks: Vec<usize>,
}

impl SnrReport {
    pub fn gamma_db(&self) -> f64 {
        10.0 * self.gamma.log10()
    }
}

/// `tr(R Xᴴ X)` for real symmetric `R`.
fn weighted_trace(x: &DMatrix<C>, r: &RcsCovariance) -> Result<f64> {
    if r.dim() != x.ncols() {
        return Err(ConfigError::new("RCS covariance dimension does not match the tAP count").into());
    }
    let g = x.adjoint() * x;
    let mut t = 0.0;
    for a in 0..r.dim() {
        for b in 0..r.dim() {
            t += r.matrix[(a, b)] * g[(b, a)].re;
        }
    }
    Ok(t.max(0.0))
}

fn snr_ratio(signal: f64, ranks: Vec<usize>, noise_var: f64) -> Result<SnrReport> {
    let total: usize = ranks.iter().sum();
    if total == 0 {
        return Err(Error::RankDeficient("all response stacks have zero rank".into()));
    }
    Ok(SnrReport { gamma: signal / (noise_var * total as f64), ranks })
}

/// `γ = Σ_m tr(D̈_m R_m D̈_mᴴ) / (σ² Σ_m r_m)`.
pub fn sensing_snr(stacks: &[DopplerResponseStack], rcs: &[RcsCovariance], noise_var: f64) -> Result<SnrReport> {
    if stacks.len() != rcs.len() {
        return Err(ConfigError::new("one RCS covariance per rAP is required").into());
    }
    let mut signal = 0.0;
    let mut ranks = Vec::with_capacity(stacks.len());
    for (s, r) in stacks.iter().zip(rcs) {
        signal += weighted_trace(&s.matrix, r)?;
        ranks.push(numerical_rank(&s.matrix));
    }
    snr_ratio(signal, ranks, noise_var)
}

/// Target energy captured by a detector whose projector is built at the
/// assumed velocity while the echo follows the true one.
pub fn realized_snr(
    true_stacks: &[DopplerResponseStack],
    assumed_stacks: &[DopplerResponseStack],
    rcs: &[RcsCovariance],
    noise_var: f64,
) -> Result<SnrReport> {
    if true_stacks.len() != assumed_stacks.len() || true_stacks.len() != rcs.len() {
        return Err(ConfigError::new("stacks and covariances must be aligned per rAP").into());
    }
    let mut signal = 0.0;
    let mut ranks = Vec::with_capacity(true_stacks.len());
    for ((t, a), r) in true_stacks.iter().zip(assumed_stacks).zip(rcs) {
        let u = column_basis(&a.matrix);
        ranks.push(u.ncols());
        signal += weighted_trace(&(u.adjoint() * &t.matrix), r)?;
    }
    snr_ratio(signal, ranks, noise_var)
}

/// Draws the RCS vector `α ~ CN(0, R)` across tAPs.
pub fn draw_rcs(rcs: &RcsCovariance, rng: &mut SimRng) -> Vec<C> {
    let l = rcs.factor();
    let w: Vec<C> = (0..rcs.dim()).map(|_| complex_normal(rng, 1.0)).collect();
    (0..rcs.dim()).map(|a| (0..rcs.dim()).map(|b| w[b] * l[(a, b)]).sum()).collect()
}

/// Uniform draw on the unit sphere.
pub fn random_direction(rng: &mut SimRng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}
