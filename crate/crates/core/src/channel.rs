//! Target-reflected sensing channel, Rician AP–AP and UE–AP channels, and
//! the scalar-MMSE channel-estimate model that feeds MRT.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::Result;
use crate::geometry::{
    bistatic_delay, bistatic_doppler, steering_towards, ArraySpec, PhysicalConstants, Position3, Velocity3,
};
use crate::rng::{complex_normal, complex_normal_vec, uniform_phase, SimRng};
use crate::waveform::OfdmGrid;

/// Factors of `H(n,n') = α̃ · a_rx a_txᴴ · ρ(n) · ξ(n')` for one tAP→cell→rAP path.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingChannelFactors {
    /// α·√β
    pub gain: Complex64,
    pub a_rx: Vec<Complex64>,
    pub a_tx: Vec<Complex64>,
    /// Delay entering ρ(n), seconds.
    pub delay: f64,
    pub doppler: f64,
}

impl SensingChannelFactors {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cell: Position3,
        velocity: Velocity3,
        rap: Position3,
        tap: Position3,
        alpha: Complex64,
        beta: f64,
        n_antennas: usize,
        array: &ArraySpec,
        consts: &PhysicalConstants,
    ) -> Result<Self> {
        Ok(Self {
            gain: alpha * beta.sqrt(),
            a_rx: steering_towards(rap, cell, n_antennas, array)?,
            a_tx: steering_towards(tap, cell, n_antennas, array)?,
            delay: bistatic_delay(cell, tap, rap, consts),
            doppler: bistatic_doppler(cell, velocity, tap, rap, consts)?,
        })
    }

    /// ρ(n) = exp(−j2π n τ / T).
    pub fn delay_phase(&self, n: usize, grid: &OfdmGrid) -> Complex64 {
        Complex64::from_polar(1.0, -2.0 * PI * n as f64 * self.delay / grid.symbol_time())
    }

    /// ξ(n') = exp(j2π n' f_d T_s).
    pub fn doppler_phase(&self, np: usize, grid: &OfdmGrid) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * np as f64 * self.doppler * grid.total_symbol_time())
    }

    /// The outer product `A = a_rx a_txᴴ`.
    pub fn array_matrix(&self) -> DMatrix<Complex64> {
        let n = self.a_rx.len();
        DMatrix::from_fn(n, self.a_tx.len(), |r, c| self.a_rx[r] * self.a_tx[c].conj())
    }

    pub fn matrix(&self, n: usize, np: usize, grid: &OfdmGrid) -> DMatrix<Complex64> {
        self.array_matrix() * (self.gain * self.delay_phase(n, grid) * self.doppler_phase(np, grid))
    }

    /// Adds `H(n,n') s` into `out`, exploiting the rank-one structure.
    pub fn apply_add(&self, n: usize, np: usize, grid: &OfdmGrid, s: &[Complex64], out: &mut [Complex64]) {
        let proj: Complex64 = self.a_tx.iter().zip(s).map(|(a, x)| a.conj() * x).sum();
        let coef = self.gain * self.delay_phase(n, grid) * self.doppler_phase(np, grid) * proj;
        for (o, a) in out.iter_mut().zip(&self.a_rx) {
            *o += a * coef;
        }
    }
}

/// Direct tAP→rAP channel `G(n) = κ (Ḡ(n) + ℓ(n) V)` on every subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectChannel {
    pub kappa: f64,
    pub k_factor: f64,
    pub los: DMatrix<Complex64>,
    pub nlos: Vec<DMatrix<Complex64>>,
    pub los_phase: Vec<f64>,
}

impl DirectChannel {
    pub fn matrix(&self, n: usize) -> DMatrix<Complex64> {
        let ell = Complex64::from_polar(self.k_factor.sqrt(), self.los_phase[n]);
        (&self.nlos[n] + &self.los * ell) * Complex64::new(self.kappa, 0.0)
    }
}

/// NLoS covariance is the identity; the LoS phase is redrawn per subcarrier.
#[allow(clippy::too_many_arguments)]
pub fn direct_ap_channel(
    rap: Position3,
    tap: Position3,
    beta: f64,
    k_factor: f64,
    n_antennas: usize,
    array: &ArraySpec,
    grid: &OfdmGrid,
    rng: &mut SimRng,
) -> Result<DirectChannel> {
    let a_rx = steering_towards(rap, tap, n_antennas, array)?;
    let a_tx = steering_towards(tap, rap, n_antennas, array)?;
    let los = DMatrix::from_fn(n_antennas, n_antennas, |r, c| a_rx[r] * a_tx[c].conj());
    let mut nlos = Vec::with_capacity(grid.nc);
    let mut los_phase = Vec::with_capacity(grid.nc);
    for _ in 0..grid.nc {
        nlos.push(DMatrix::from_fn(n_antennas, n_antennas, |_, _| complex_normal(rng, 1.0)));
        los_phase.push(uniform_phase(rng));
    }
    Ok(DirectChannel { kappa: (beta / (1.0 + k_factor)).sqrt(), k_factor, los, nlos, los_phase })
}

/// UE→AP channel `h(n) = sqrt(β/(K+1)) (√K e^{jψ(n)} a + h_sc(n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkChannel {
    pub beta: f64,
    pub k_factor: f64,
    pub los_steering: Vec<Complex64>,
    pub per_subcarrier: Vec<Vec<Complex64>>,
}

impl UplinkChannel {
    pub fn n_antennas(&self) -> usize {
        self.los_steering.len()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ue_ap_channel(
    ue: Position3,
    ap: Position3,
    beta: f64,
    k_factor: f64,
    n_antennas: usize,
    array: &ArraySpec,
    grid: &OfdmGrid,
    rng: &mut SimRng,
) -> Result<UplinkChannel> {
    let a = steering_towards(ap, ue, n_antennas, array)?;
    let scale = (beta / (k_factor + 1.0)).sqrt();
    let los_amp = k_factor.sqrt();
    let per_subcarrier = (0..grid.nc)
        .map(|_| {
            let phase = Complex64::from_polar(los_amp, uniform_phase(rng));
            let sc = complex_normal_vec(rng, n_antennas, 1.0);
            a.iter().zip(sc).map(|(ai, s)| (ai * phase + s) * scale).collect()
        })
        .collect();
    Ok(UplinkChannel { beta, k_factor, los_steering: a, per_subcarrier })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsiMode {
    Perfect,
    #[default]
    Mmse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub per_subcarrier: Vec<Vec<Complex64>>,
    /// Analytic E‖ĥ‖².
    pub normalization: f64,
}

/// Scalar-MMSE proxy `ĥ = c (h + e)`, `e ~ CN(0, β/snr · I)`,
/// `c = snr/(1+snr)`, so that `E‖ĥ‖² = c β N_a`.
pub fn estimate_channel(h: &UplinkChannel, pilot_snr: f64, rng: &mut SimRng) -> ChannelEstimate {
    let c = pilot_snr / (1.0 + pilot_snr);
    let err_var = if pilot_snr > 0.0 { h.beta / pilot_snr } else { 0.0 };
    let per_subcarrier = h
        .per_subcarrier
        .iter()
        .map(|hn| hn.iter().map(|&x| (x + complex_normal(rng, err_var)) * c).collect())
        .collect();
    ChannelEstimate { per_subcarrier, normalization: c * h.beta * h.n_antennas() as f64 }
}

/// Genie estimate `ĥ = h` with normalization `β N_a`.
pub fn perfect_estimate(h: &UplinkChannel) -> ChannelEstimate {
    ChannelEstimate { per_subcarrier: h.per_subcarrier.clone(), normalization: h.beta * h.n_antennas() as f64 }
}

/// Pilot SNR `τ_p P β / σ²`.
pub fn pilot_snr(pilot_len: usize, power: f64, beta: f64, noise_var: f64) -> f64 {
    pilot_len as f64 * power * beta / noise_var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::rng::substream;
    use crate::waveform::{allocate_power_uniform, mrt_precoder, transmit_frame, CommStream, SymbolStream};

    fn grid() -> OfdmGrid {
        OfdmGrid::new(12, 14, 30e3, 3e9, 150.0).unwrap()
    }

    fn consts() -> PhysicalConstants {
        PhysicalConstants::new(3e9)
    }

    fn factors(v: Velocity3, alpha: Complex64) -> SensingChannelFactors {
        SensingChannelFactors::new(
            Vec3::new(200.0, 150.0, 60.0),
            v,
            Vec3::new(20.0, 400.0, 10.0),
            Vec3::new(450.0, 30.0, 10.0),
            alpha,
            3e-15,
            4,
            &ArraySpec::default(),
            &consts(),
        )
        .unwrap()
    }

    #[test]
    fn stationary_target_has_unit_doppler_phase() {
        let f = factors(Vec3::ZERO, Complex64::new(1.0, 0.0));
        for np in 0..14 {
            assert_eq!(f.doppler_phase(np, &grid()), Complex64::new(1.0, 0.0));
        }
        assert_eq!(f.delay_phase(0, &grid()), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn sensing_matrix_frobenius_norm() {
        let alpha = Complex64::new(0.3, -2.0);
        let f = factors(Vec3::new(30.0, -80.0, 12.0), alpha);
        let g = grid();
        let expected = (alpha * 3e-15f64.sqrt()).norm() * 4.0;
        for (n, np) in [(0, 0), (5, 3), (11, 13)] {
            let h = f.matrix(n, np, &g);
            assert!((h.norm() - expected).abs() < 1e-12 * expected);
            assert!((f.delay_phase(n, &g).norm() - 1.0).abs() < 1e-15);
            assert!((f.doppler_phase(np, &g).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn apply_matches_dense_product() {
        let f = factors(Vec3::new(30.0, -80.0, 12.0), Complex64::new(0.3, -2.0));
        let g = grid();
        let s: Vec<Complex64> = (0..4).map(|k| Complex64::new(k as f64, 1.0 - k as f64)).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); 4];
        f.apply_add(7, 9, &g, &s, &mut out);
        let dense = f.matrix(7, 9, &g) * nalgebra::DVector::from_vec(s);
        for (a, b) in out.iter().zip(dense.iter()) {
            assert!((a - b).norm() < 1e-20);
        }
    }

    #[test]
    fn doppler_signatures_one_bin_apart_are_orthogonal() {
        let g = grid();
        let ts = g.total_symbol_time();
        let f1 = 700.0;
        let f2 = f1 + 1.0 / (g.ns as f64 * ts);
        let ip: Complex64 = (0..g.ns)
            .map(|np| {
                let a = Complex64::from_polar(1.0, 2.0 * PI * np as f64 * f1 * ts);
                let b = Complex64::from_polar(1.0, 2.0 * PI * np as f64 * f2 * ts);
                a.conj() * b
            })
            .sum();
        assert!(ip.norm() <= 1e-10 * g.ns as f64);
    }

    fn direct(k: f64, seed: u64) -> DirectChannel {
        direct_ap_channel(
            Vec3::new(0.0, 0.0, 10.0),
            Vec3::new(300.0, 100.0, 10.0),
            1e-10,
            k,
            4,
            &ArraySpec::default(),
            &grid(),
            &mut substream(seed, 0),
        )
        .unwrap()
    }

    #[test]
    fn direct_channel_los_limit() {
        let k = 1e12;
        let d = direct(k, 1);
        let g = d.matrix(3) * Complex64::new(1.0 / (d.kappa * k.sqrt()), 0.0);
        let expect = &d.los * Complex64::from_polar(1.0, d.los_phase[3]);
        assert!((g - expect).norm() < 1e-5);
    }

    #[test]
    fn direct_channel_pure_nlos_energy_and_covariance() {
        let mut rng = substream(2, 0);
        let trials = 10_000;
        let g = grid();
        let mut energy = 0.0;
        let mut cov = DMatrix::<Complex64>::zeros(16, 16);
        for _ in 0..trials {
            let d = direct_ap_channel(
                Vec3::new(0.0, 0.0, 10.0),
                Vec3::new(300.0, 100.0, 10.0),
                1e-10,
                0.0,
                4,
                &ArraySpec::default(),
                &OfdmGrid { nc: 1, ..g },
                &mut rng,
            )
            .unwrap();
            energy += d.matrix(0).norm_squared();
            let v = nalgebra::DVector::from_iterator(16, d.nlos[0].iter().copied());
            cov += &v * v.adjoint();
        }
        energy /= trials as f64;
        assert!((energy / (1e-10 * 16.0) - 1.0).abs() < 0.03, "{energy}");
        cov /= Complex64::new(trials as f64, 0.0);
        let err = (&cov - DMatrix::<Complex64>::identity(16, 16)).norm() / 4.0;
        assert!(err < 0.05, "{err}");
    }

    fn uplink(k: f64, beta: f64, rng: &mut SimRng) -> UplinkChannel {
        ue_ap_channel(Vec3::new(50.0, 50.0, 1.65), Vec3::new(250.0, 100.0, 10.0), beta, k, 4, &ArraySpec::default(), &grid(), rng)
            .unwrap()
    }

    #[test]
    fn uplink_pure_scattering_energy() {
        let mut rng = substream(3, 0);
        let beta = 2e-11;
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| uplink(0.0, beta, &mut rng).per_subcarrier[0].iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>()
            / n as f64;
        assert!((mean / (beta * 4.0) - 1.0).abs() < 0.03);
    }

    #[test]
    fn uplink_scales_linearly_with_beta() {
        let h1 = uplink(3.0, 1.0, &mut substream(9, 0));
        let h2 = uplink(3.0, 4.0, &mut substream(9, 0));
        for (a, b) in h1.per_subcarrier.iter().flatten().zip(h2.per_subcarrier.iter().flatten()) {
            assert!((a * 2.0 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn uplink_rician_power_split() {
        let mut rng = substream(4, 0);
        let k = 3.0;
        let n = 10_000;
        let (mut los, mut sc) = (0.0, 0.0);
        for _ in 0..n {
            let h = uplink(k, 1.0, &mut rng);
            // Component along the LoS steering vector carries the LoS term plus
            // a 1/N_a share of the scattering; the orthogonal part is pure NLoS.
            let a = &h.los_steering;
            let hn = &h.per_subcarrier[0];
            let proj: Complex64 = a.iter().zip(hn).map(|(x, y)| x.conj() * y).sum::<Complex64>() / 4.0;
            let total: f64 = hn.iter().map(|z| z.norm_sqr()).sum();
            let along = proj.norm_sqr() * 4.0;
            sc += total - along;
            los += along;
        }
        // E[along] = (K·N_a + 1)/(K+1), E[orth] = (N_a − 1)/(K+1).
        let nlos_total = sc / n as f64 * 4.0 / 3.0;
        let los_total = los / n as f64 - nlos_total / 4.0;
        let ratio = los_total / nlos_total;
        assert!((ratio / k - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn estimate_limits() {
        let mut rng = substream(5, 0);
        let h = uplink(2.0, 1e-11, &mut rng);
        let e = estimate_channel(&h, 1e25, &mut rng);
        for (a, b) in e.per_subcarrier.iter().flatten().zip(h.per_subcarrier.iter().flatten()) {
            assert!((a - b).norm() < 1e-9 * b.norm().max(1e-12));
        }
        let e0 = estimate_channel(&h, 1e-12, &mut rng);
        let nrm: f64 = e0.per_subcarrier.iter().flatten().map(|z| z.norm_sqr()).sum();
        assert!(nrm < 1e-20);
    }

    #[test]
    fn estimate_normalization_matches_monte_carlo() {
        let mut rng = substream(6, 0);
        let beta = 5e-12;
        let snr = 2.0;
        let n = 10_000;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for _ in 0..n {
            let h = uplink(1.5, beta, &mut rng);
            let e = estimate_channel(&h, snr, &mut rng);
            acc += e.per_subcarrier[0].iter().map(|z| z.norm_sqr()).sum::<f64>();
            norm = e.normalization;
        }
        acc /= n as f64;
        assert!((acc / norm - 1.0).abs() < 0.03, "{acc} {norm}");
    }

    #[test]
    fn mrt_precoder_unit_mean_power() {
        let mut rng = substream(7, 0);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let h = uplink(2.0, 1e-11, &mut rng);
            let w = mrt_precoder(&estimate_channel(&h, 5.0, &mut rng)).unwrap();
            acc += w[0].iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        assert!((acc / n as f64 - 1.0).abs() < 0.03);
    }

    #[test]
    fn single_ue_frame_energy() {
        // Perfect CSI, one UE: E‖s‖² = P · E‖w‖² = P.
        let g = grid();
        let mut rng = substream(8, 0);
        let mut acc = 0.0;
        let frames = 200;
        for _ in 0..frames {
            let h = uplink(1.0, 1e-11, &mut rng);
            let w = mrt_precoder(&perfect_estimate(&h)).unwrap();
            let x = SymbolStream::qpsk(&g, &mut rng);
            let alloc = allocate_power_uniform(1, 0, 2.0);
            let f = transmit_frame(4, &[CommStream { precoder: &w, symbols: &x }], &[], &alloc, &g).unwrap();
            acc += f.energy() / g.samples() as f64;
        }
        acc /= frames as f64;
        assert!((acc / 2.0 - 1.0).abs() < 0.05, "{acc}");
    }

    #[test]
    fn alpha_energy_accounting() {
        // E|α̃|² = σ² β for α ~ CN(0, σ²).
        let mut rng = substream(10, 0);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| factors(Vec3::ZERO, complex_normal(&mut rng, 10.0)).gain.norm_sqr())
            .sum::<f64>()
            / n as f64;
        let expected = 10.0 * 3e-15;
        assert!((mean / expected - 1.0).abs() < 0.05);
    }
}
