//! OFDM grid, QPSK streams, MRT and steering precoders, uniform power
//! allocation, and per-tAP frame assembly.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelEstimate;
use crate::error::{ConfigError, Error, Result};
use crate::geometry::{steering_towards, ArraySpec, Position3, SPEED_OF_LIGHT};
use crate::rng::SimRng;

/// Maximum occupied bandwidth.
pub const MAX_BANDWIDTH_HZ: f64 = 20e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmGrid {
    pub nc: usize,
    pub ns: usize,
    pub delta_f: f64,
    pub fc: f64,
}

impl OfdmGrid {
    /// Validates the grid for targets up to `nu_max` m/s: the peak
    /// (monostatic) Doppler `2 ν_max fc / c` may not exceed the subcarrier spacing.
    pub fn new(nc: usize, ns: usize, delta_f: f64, fc: f64, nu_max: f64) -> Result<Self, ConfigError> {
        if nc == 0 {
            return Err(ConfigError::for_key("ofdm.nc", "must be at least 1"));
        }
        if ns == 0 {
            return Err(ConfigError::for_key("ofdm.ns", "must be at least 1"));
        }
        if !(delta_f > 0.0) || !delta_f.is_finite() {
            return Err(ConfigError::for_key("ofdm.delta_f", "must be positive"));
        }
        if !(fc > 0.0) || !fc.is_finite() {
            return Err(ConfigError::for_key("ofdm.fc", "must be positive"));
        }
        let grid = Self { nc, ns, delta_f, fc };
        if grid.bandwidth() > MAX_BANDWIDTH_HZ {
            return Err(ConfigError::for_key(
                "ofdm.nc",
                format!("bandwidth {} Hz exceeds the {} Hz budget", grid.bandwidth(), MAX_BANDWIDTH_HZ),
            ));
        }
        let f_max = grid.max_doppler(nu_max);
        if f_max > delta_f {
            return Err(ConfigError::for_key(
                "ofdm.delta_f",
                format!("peak Doppler {f_max:.1} Hz exceeds subcarrier spacing {delta_f} Hz"),
            ));
        }
        Ok(grid)
    }

    pub fn max_doppler(&self, nu_max: f64) -> f64 {
        2.0 * nu_max * self.fc / SPEED_OF_LIGHT
    }

    pub fn bandwidth(&self) -> f64 {
        self.nc as f64 * self.delta_f
    }

    /// Useful symbol time T = 1/Δf.
    pub fn symbol_time(&self) -> f64 {
        1.0 / self.delta_f
    }

    /// Normal cyclic prefix, T/14.
    pub fn cp_time(&self) -> f64 {
        self.symbol_time() / 14.0
    }

    /// T_s = T + T_CP.
    pub fn total_symbol_time(&self) -> f64 {
        self.symbol_time() + self.cp_time()
    }

    pub fn samples(&self) -> usize {
        self.nc * self.ns
    }
}

/// Unit-modulus symbols `x(n, n')`, stored subcarrier-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub nc: usize,
    pub ns: usize,
    pub symbols: Vec<Complex64>,
}

impl SymbolStream {
    pub fn qpsk(grid: &OfdmGrid, rng: &mut SimRng) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let symbols = (0..grid.samples())
            .map(|_| {
                let re = if rng.random::<bool>() { s } else { -s };
                let im = if rng.random::<bool>() { s } else { -s };
                Complex64::new(re, im)
            })
            .collect();
        Self { nc: grid.nc, ns: grid.ns, symbols }
    }

    #[inline]
    pub fn at(&self, n: usize, np: usize) -> Complex64 {
        self.symbols[n + self.nc * np]
    }
}

/// MRT precoder `w = ĥ* / sqrt(E‖ĥ‖²)` for every subcarrier of the estimate.
pub fn mrt_precoder(est: &ChannelEstimate) -> Result<Vec<Vec<Complex64>>> {
    if !(est.normalization > 0.0) {
        return Err(ConfigError::new("MRT precoder needs a positive estimate normalization").into());
    }
    let scale = 1.0 / est.normalization.sqrt();
    Ok(est.per_subcarrier.iter().map(|h| h.iter().map(|z| z.conj() * scale).collect()).collect())
}

/// Steering beamformer of tAP at `ap` toward cell `cell`.
pub fn sensing_beamformer(ap: Position3, cell: Position3, n_antennas: usize, array: &ArraySpec) -> Result<Vec<Complex64>> {
    steering_towards(ap, cell, n_antennas, array)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// μ per served UE, in the order of `K_m`.
    pub comm: Vec<f64>,
    /// η per served region, in the order of `S_m`.
    pub sensing: Vec<f64>,
}

impl PowerAllocation {
    pub fn total(&self) -> f64 {
        self.comm.iter().sum::<f64>() + self.sensing.iter().sum::<f64>()
    }
}

pub fn allocate_power_uniform(n_ues: usize, n_regions: usize, power: f64) -> PowerAllocation {
    let streams = n_ues + n_regions;
    let share = if streams == 0 { 0.0 } else { power / streams as f64 };
    PowerAllocation { comm: vec![share; n_ues], sensing: vec![share; n_regions] }
}

/// Signal of one tAP over a whole frame, rows ordered antenna-fastest, then
/// subcarrier, then symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub n_antennas: usize,
    pub nc: usize,
    pub ns: usize,
    pub data: Vec<Complex64>,
}

impl Frame {
    pub fn zeros(n_antennas: usize, grid: &OfdmGrid) -> Self {
        Self { n_antennas, nc: grid.nc, ns: grid.ns, data: vec![Complex64::new(0.0, 0.0); n_antennas * grid.samples()] }
    }

    /// `s(n, n')` as an `N_a` slice.
    #[inline]
    pub fn at(&self, n: usize, np: usize) -> &[Complex64] {
        let start = self.n_antennas * (n + self.nc * np);
        &self.data[start..start + self.n_antennas]
    }

    fn at_mut(&mut self, n: usize, np: usize) -> &mut [Complex64] {
        let start = self.n_antennas * (n + self.nc * np);
        &mut self.data[start..start + self.n_antennas]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// A communication stream: per-subcarrier precoder and its data symbols.
pub struct CommStream<'a> {
    pub precoder: &'a [Vec<Complex64>],
    pub symbols: &'a SymbolStream,
}

/// A sensing stream: steering beamformer toward one cell and its symbols.
pub struct SensingStream<'a> {
    pub beam: &'a [Complex64],
    pub symbols: &'a SymbolStream,
}

/// `s(n,n') = Σ_k √μ_k w_k(n) x_k(n,n') + Σ_i √η_i w_0(p_i) x_0(n,n')`.
pub fn transmit_frame(
    n_antennas: usize,
    comm: &[CommStream<'_>],
    sensing: &[SensingStream<'_>],
    alloc: &PowerAllocation,
    grid: &OfdmGrid,
) -> Result<Frame> {
    if comm.len() != alloc.comm.len() || sensing.len() != alloc.sensing.len() {
        return Err(ConfigError::new("power allocation does not match the stream count").into());
    }
    let bad_symbols = |s: &SymbolStream| s.nc != grid.nc || s.ns != grid.ns;
    for c in comm {
        if bad_symbols(c.symbols) || c.precoder.len() != grid.nc || c.precoder.iter().any(|w| w.len() != n_antennas) {
            return Err(Error::Config(ConfigError::new("communication stream dimensions do not match the grid")));
        }
    }
    for s in sensing {
        if bad_symbols(s.symbols) || s.beam.len() != n_antennas {
            return Err(Error::Config(ConfigError::new("sensing stream dimensions do not match the grid")));
        }
    }
    let mut frame = Frame::zeros(n_antennas, grid);
    for np in 0..grid.ns {
        for n in 0..grid.nc {
            let out = frame.at_mut(n, np);
            for (c, &mu) in comm.iter().zip(&alloc.comm) {
                let x = c.symbols.at(n, np) * mu.sqrt();
                for (o, w) in out.iter_mut().zip(&c.precoder[n]) {
                    *o += w * x;
                }
            }
            for (s, &eta) in sensing.iter().zip(&alloc.sensing) {
                let x = s.symbols.at(n, np) * eta.sqrt();
                for (o, w) in out.iter_mut().zip(s.beam) {
                    *o += w * x;
                }
            }
        }
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::rng::substream;

    fn grid() -> OfdmGrid {
        OfdmGrid::new(12, 14, 30e3, 3e9, 150.0).unwrap()
    }

    #[test]
    fn default_grid_timing() {
        let g = grid();
        assert_eq!(g.bandwidth(), 360e3);
        assert!((g.symbol_time() - 1.0 / 30e3).abs() < 1e-18);
        assert!((g.cp_time() - 2.380952e-6).abs() < 1e-11);
        assert!((g.max_doppler(150.0) - 3002.0).abs() < 1.0);
    }

    #[test]
    fn doppler_budget_enforced() {
        let err = OfdmGrid::new(12, 14, 1e3, 3e9, 150.0).unwrap_err();
        assert_eq!(err.key.as_deref(), Some("ofdm.delta_f"));
        assert!(OfdmGrid::new(12, 14, 3.01e3, 3e9, 150.0).is_ok());
    }

    #[test]
    fn bandwidth_budget_enforced() {
        assert!(OfdmGrid::new(666, 14, 30e3, 3e9, 150.0).is_ok());
        assert!(OfdmGrid::new(700, 14, 30e3, 3e9, 150.0).is_err());
    }

    #[test]
    fn qpsk_unit_modulus_zero_mean() {
        let g = grid();
        let mut rng = substream(4, 0);
        let trials = 200;
        let mut sum = Complex64::new(0.0, 0.0);
        for _ in 0..trials {
            let s = SymbolStream::qpsk(&g, &mut rng);
            assert!(s.symbols.iter().all(|x| (x.norm() - 1.0).abs() < 1e-15));
            sum += s.symbols.iter().sum::<Complex64>();
        }
        let n = (g.samples() * trials) as f64;
        assert!((sum / n).norm() < 4.0 / n.sqrt());
    }

    #[test]
    fn mrt_scaling() {
        let e1 = vec![Complex64::new(0.0, 2.0), Complex64::new(0.0, 0.0)];
        let est = ChannelEstimate { per_subcarrier: vec![e1], normalization: 4.0 };
        let w = mrt_precoder(&est).unwrap();
        assert_eq!(w[0][0], Complex64::new(0.0, -1.0));
        assert_eq!(w[0][1], Complex64::new(0.0, 0.0));
        let bad = ChannelEstimate { per_subcarrier: vec![], normalization: 0.0 };
        assert!(mrt_precoder(&bad).is_err());
    }

    #[test]
    fn beamformer_above_tap_is_all_ones() {
        let ap = Vec3::new(10.0, 10.0, 10.0);
        let w = sensing_beamformer(ap, Vec3::new(10.0, 10.0, 60.0), 4, &ArraySpec::default()).unwrap();
        assert!(w.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-12));
        assert!(sensing_beamformer(ap, ap, 4, &ArraySpec::default()).is_err());
    }

    #[test]
    fn beamformer_gain_peaks_at_cell() {
        use crate::geometry::{angles_to, steering_vector, AnglePair};
        let ap = Vec3::new(100.0, 50.0, 10.0);
        let cell = Vec3::new(300.0, 200.0, 70.0);
        let spec = ArraySpec::default();
        let w = sensing_beamformer(ap, cell, 4, &spec).unwrap();
        let gain = |a: &[Complex64]| a.iter().zip(&w).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr();
        let target = angles_to(ap, cell).unwrap();
        let g0 = gain(&steering_vector(target, 4, &spec));
        assert!((g0 - 16.0).abs() < 1e-9);
        for k in 0..360 {
            let az = -std::f64::consts::PI + k as f64 * std::f64::consts::TAU / 360.0;
            let g = gain(&steering_vector(AnglePair { azimuth: az, elevation: target.elevation }, 4, &spec));
            assert!(g <= g0 + 1e-9);
        }
    }

    #[test]
    fn uniform_power_split() {
        let a = allocate_power_uniform(2, 2, 2.0);
        assert_eq!(a.comm, vec![0.5, 0.5]);
        assert_eq!(a.sensing, vec![0.5, 0.5]);
        assert_eq!(a.total(), 2.0);
        let b = allocate_power_uniform(0, 1, 2.0);
        assert_eq!(b.sensing, vec![2.0]);
        assert_eq!(allocate_power_uniform(0, 0, 2.0).total(), 0.0);
        let c = allocate_power_uniform(3, 4, 2.0);
        assert!((c.total() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_sensing_stream_constant_energy() {
        let g = grid();
        let mut rng = substream(1, 0);
        let x0 = SymbolStream::qpsk(&g, &mut rng);
        let beam = sensing_beamformer(Vec3::new(0.0, 0.0, 10.0), Vec3::new(120.0, 40.0, 50.0), 4, &ArraySpec::default()).unwrap();
        let alloc = allocate_power_uniform(0, 1, 2.0);
        let f = transmit_frame(4, &[], &[SensingStream { beam: &beam, symbols: &x0 }], &alloc, &g).unwrap();
        for np in 0..g.ns {
            for n in 0..g.nc {
                let e: f64 = f.at(n, np).iter().map(|z| z.norm_sqr()).sum();
                assert!((e - 8.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_allocation_gives_silent_frame() {
        let g = grid();
        let mut rng = substream(1, 0);
        let x0 = SymbolStream::qpsk(&g, &mut rng);
        let beam = vec![Complex64::new(1.0, 0.0); 4];
        let alloc = PowerAllocation { comm: vec![], sensing: vec![0.0] };
        let f = transmit_frame(4, &[], &[SensingStream { beam: &beam, symbols: &x0 }], &alloc, &g).unwrap();
        assert_eq!(f.energy(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let g = grid();
        let mut rng = substream(1, 0);
        let x0 = SymbolStream::qpsk(&g, &mut rng);
        let beam = vec![Complex64::new(1.0, 0.0); 3];
        let alloc = allocate_power_uniform(0, 1, 1.0);
        let r = transmit_frame(4, &[], &[SensingStream { beam: &beam, symbols: &x0 }], &alloc, &g);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
