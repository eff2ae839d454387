//! One Monte Carlo trial: scene, association, transmit frames, channels and
//! the rAP observations for the region containing the target.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{direct_ap_channel, estimate_channel, perfect_estimate, pilot_snr, ue_ap_channel, CsiMode, SensingChannelFactors};
use crate::error::Result;
use crate::geometry::{PhysicalConstants, Position3, Vec3, Velocity3};
use crate::rng::{substream, SimRng};
use crate::scene::{build_association, deploy_scene, large_scale_fading, rcs_covariance, AssociationMap, LsfTable, RcsCovariance, Scene};
use crate::sensing::{
    draw_rcs, noise_variance, random_direction, synthesize_observation, GlrtObjective, ObservationOptions, ObservationStack, RapLinks,
    ResponseInputs, ResponseModel,
};
use crate::waveform::{allocate_power_uniform, mrt_precoder, sensing_beamformer, transmit_frame, CommStream, Frame, OfdmGrid, SensingStream, SymbolStream};

use super::SimConfig;

/// Independent random streams within one trial.
mod stream {
    pub const SCENE: u64 = 0;
    pub const VELOCITY: u64 = 1;
    pub const CELLS: u64 = 2;
    pub const UPLINK: u64 = 3;
    pub const SYMBOLS: u64 = 4;
    pub const RCS: u64 = 5;
    pub const DIRECT: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const ESTIMATOR: u64 = 8;
}

/// Substream for estimator randomness, `slot` separating methods.
pub fn estimator_rng(trial_seed: u64, slot: u64) -> SimRng {
    substream(trial_seed, stream::ESTIMATOR + slot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityDraw {
    /// Speed uniform in `[0, ν_max]`, direction uniform on the sphere.
    Random { nu_max: f64 },
    Fixed(Velocity3),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimingReference {
    Zero,
    /// Monostatic round trip from the inspected cell to the region's first rAP.
    PerCell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptions {
    pub velocity: VelocityDraw,
    pub present: bool,
    pub timing: TimingReference,
    /// Build the rAP observations (not needed for SNR-only studies).
    pub observe: bool,
}

impl TrialOptions {
    pub fn detection(nu_max: f64) -> Self {
        Self { velocity: VelocityDraw::Random { nu_max }, present: true, timing: TimingReference::Zero, observe: true }
    }
}

pub struct Trial {
    pub seed: u64,
    pub scene: Scene,
    pub lsf: LsfTable,
    pub association: AssociationMap,
    pub grid: OfdmGrid,
    pub consts: PhysicalConstants,
    /// Region holding the target; the one being inspected.
    pub region: usize,
    pub cell: Position3,
    pub velocity: Velocity3,
    pub present: bool,
    pub taps: Vec<usize>,
    pub raps: Vec<usize>,
    pub frames: Vec<Frame>,
    /// RCS covariance across `taps`, identical for every rAP.
    pub rcs: RcsCovariance,
    pub noise_var: f64,
    pub timing_reference: f64,
    pub model: ResponseModel,
    pub observations: Vec<ObservationStack>,
}

fn random_cell(rng: &mut SimRng, scene: &Scene, region: usize, cfg: &SimConfig) -> Position3 {
    let r = &scene.regions.regions[region];
    let cells = r.cell_centers(cfg.scenario.cells_per_axis);
    let (x, y) = cells[rng.random_range(0..cells.len())];
    let (lo, hi) = (cfg.scenario.target_height_min, cfg.scenario.target_height_max);
    let z = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Vec3::new(x, y, z)
}

impl Trial {
    pub fn build(cfg: &SimConfig, grid: &OfdmGrid, seed: u64, opts: &TrialOptions) -> Result<Self> {
        let sc = &cfg.scenario;
        let scene = deploy_scene(sc, &mut substream(seed, stream::SCENE))?;
        let lsf = large_scale_fading(&scene)?;
        let association = build_association(&scene, &lsf, sc);
        let consts = PhysicalConstants::new(grid.fc);
        let region = scene.regions.region_of(scene.target.position);

        let velocity = match opts.velocity {
            VelocityDraw::Fixed(v) => v,
            VelocityDraw::Random { nu_max } => {
                let mut rng = substream(seed, stream::VELOCITY);
                let speed = if nu_max > 0.0 { rng.random_range(0.0..=nu_max) } else { 0.0 };
                random_direction(&mut rng) * speed
            }
        };

        // One inspected cell per region: the true one where the target is
        // present, random cells elsewhere.
        let mut cell_rng = substream(seed, stream::CELLS);
        let cells: Vec<Position3> = (0..scene.regions.regions.len())
            .map(|i| if i == region && opts.present { scene.target.position } else { random_cell(&mut cell_rng, &scene, i, cfg) })
            .collect();
        let cell = cells[region];

        let noise_var = noise_variance(sc.noise_psd_dbm_hz, sc.noise_figure_db, grid.delta_f) * cfg.noise_scale;
        let taps = scene.tap_ids();
        let raps = association.region_raps[region].clone();
        let frames = build_frames(cfg, grid, seed, &scene, &lsf, &association, &cells, noise_var)?;

        let tap_pos: Vec<Position3> = taps.iter().map(|&m| scene.aps[m].position).collect();
        let rap_pos: Vec<Position3> = raps.iter().map(|&m| scene.aps[m].position).collect();
        let rcs = rcs_covariance(cell, &tap_pos, sc.rcs_variance(), sc.rcs_corr_len)?;
        let timing_reference = match opts.timing {
            TimingReference::Zero => 0.0,
            TimingReference::PerCell => 2.0 * cell.distance(rap_pos[0]) / consts.c,
        };
        let inputs = ResponseInputs {
            cell,
            raps: &rap_pos,
            taps: &tap_pos,
            frames: &frames,
            n_antennas: sc.n_antennas,
            array: &sc.array,
            consts: &consts,
            timing_reference,
        };
        let model = ResponseModel::new(&inputs, grid)?;

        let mut observations = Vec::new();
        if opts.observe {
            let mut rcs_rng = substream(seed, stream::RCS);
            let mut direct_rng = substream(seed, stream::DIRECT);
            let mut noise_rng = substream(seed, stream::NOISE);
            let obs_opts = ObservationOptions { present: opts.present, noise_var, timing_reference };
            for &m in &raps {
                let rp = scene.aps[m].position;
                let alpha = draw_rcs(&rcs, &mut rcs_rng);
                let mut sensing = Vec::with_capacity(taps.len());
                let mut direct = Vec::with_capacity(taps.len());
                for (j, &t) in taps.iter().enumerate() {
                    let tp = scene.aps[t].position;
                    let beta = lsf.sensing(&scene, cell, m, t, consts.wavelength())?;
                    sensing.push(SensingChannelFactors::new(cell, velocity, rp, tp, alpha[j], beta, sc.n_antennas, &sc.array, &consts)?);
                    direct.push(direct_ap_channel(rp, tp, lsf.ap_ap[m][t], lsf.ap_ap_k[m][t], sc.n_antennas, &sc.array, grid, &mut direct_rng)?);
                }
                let links = RapLinks { frames: &frames, sensing: &sensing, direct: &direct };
                observations.push(synthesize_observation(&links, grid, &obs_opts, &mut noise_rng)?);
            }
        }

        Ok(Self {
            seed,
            scene,
            lsf,
            association,
            grid: *grid,
            consts,
            region,
            cell,
            velocity,
            present: opts.present,
            taps,
            raps,
            frames,
            rcs,
            noise_var,
            timing_reference,
            model,
            observations,
        })
    }

    pub fn objective(&self) -> Result<GlrtObjective<'_>> {
        self.model.objective(&self.observations)
    }

    /// The shared RCS covariance, once per inspecting rAP.
    pub fn rcs_per_rap(&self) -> Vec<RcsCovariance> {
        vec![self.rcs.clone(); self.raps.len()]
    }
}

/// Transmit frames of every tAP: MRT-precoded UE streams plus steering beams
/// toward the inspected cells of the regions it serves.
#[allow(clippy::too_many_arguments)]
fn build_frames(
    cfg: &SimConfig,
    grid: &OfdmGrid,
    seed: u64,
    scene: &Scene,
    lsf: &LsfTable,
    assoc: &AssociationMap,
    cells: &[Position3],
    noise_var: f64,
) -> Result<Vec<Frame>> {
    let sc = &cfg.scenario;
    let mut sym_rng = substream(seed, stream::SYMBOLS);
    let ue_symbols: Vec<SymbolStream> = (0..scene.ues.len()).map(|_| SymbolStream::qpsk(grid, &mut sym_rng)).collect();
    let shared_sensing = SymbolStream::qpsk(grid, &mut sym_rng);
    let mut up_rng = substream(seed, stream::UPLINK);
    let pilot_len = scene.ues.len().max(1);
    let mut frames = Vec::new();
    for m in scene.tap_ids() {
        let ap = &scene.aps[m];
        let ues = &assoc.tap_ues[m];
        let regions = &assoc.tap_regions[m];
        let mut precoders = Vec::with_capacity(ues.len());
        for &k in ues {
            let beta = lsf.ue_ap[k][m];
            let h = ue_ap_channel(scene.ues[k].position, ap.position, beta, lsf.ue_ap_k[k][m], sc.n_antennas, &sc.array, grid, &mut up_rng)?;
            let est = match cfg.csi {
                CsiMode::Perfect => perfect_estimate(&h),
                CsiMode::Mmse => estimate_channel(&h, pilot_snr(pilot_len, sc.ap_power_w, beta, noise_var), &mut up_rng),
            };
            precoders.push(mrt_precoder(&est)?);
        }
        let beams: Vec<Vec<Complex64>> =
            regions.iter().map(|&i| sensing_beamformer(ap.position, cells[i], sc.n_antennas, &sc.array)).collect::<Result<_>>()?;
        let own_sensing = if cfg.coherent_sensing_stream { None } else { Some(SymbolStream::qpsk(grid, &mut sym_rng)) };
        let x0 = own_sensing.as_ref().unwrap_or(&shared_sensing);
        let comm: Vec<CommStream<'_>> =
            ues.iter().zip(&precoders).map(|(&k, w)| CommStream { precoder: w, symbols: &ue_symbols[k] }).collect();
        let sensing: Vec<SensingStream<'_>> = beams.iter().map(|b| SensingStream { beam: b, symbols: x0 }).collect();
        let alloc = allocate_power_uniform(comm.len(), sensing.len(), sc.ap_power_w);
        frames.push(transmit_frame(sc.n_antennas, &comm, &sensing, &alloc, grid)?);
    }
    Ok(frames)
}
