//! Network deployment, tAP/rAP partitioning, user- and target-centric
//! association, large-scale fading, and the RCS covariance across tAPs.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{ConfigError, Error, Result};
use crate::geometry::{ArraySpec, Position3, Vec3, Velocity3};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApRole {
    Transmit,
    Receive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub area_side: f64,
    pub n_aps: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_ues: usize,
    pub n_regions: usize,
    /// Serving tAPs per UE (M_c).
    pub serving_aps: usize,
    pub n_antennas: usize,
    pub ap_height: f64,
    pub ue_height: f64,
    pub target_height_min: f64,
    pub target_height_max: f64,
    pub nu_max: f64,
    pub rcs_variance_dbsm: f64,
    pub ap_power_w: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// Gaussian angular correlation length of the RCS across tAPs, radians.
    pub rcs_corr_len: f64,
    pub rx_per_region: usize,
    pub tx_per_region: usize,
    /// Radar cells per region along each horizontal axis.
    pub cells_per_axis: usize,
    /// Explicit role list overriding the random balanced split.
    pub ap_roles: Option<Vec<ApRole>>,
    pub array: ArraySpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_side: 500.0,
            n_aps: 16,
            n_tx: 8,
            n_rx: 8,
            n_ues: 8,
            n_regions: 4,
            serving_aps: 4,
            n_antennas: 4,
            ap_height: 10.0,
            ue_height: 1.65,
            target_height_min: 20.0,
            target_height_max: 100.0,
            nu_max: 150.0,
            rcs_variance_dbsm: 10.0,
            ap_power_w: 2.0,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            rcs_corr_len: 0.5,
            rx_per_region: 8,
            tx_per_region: 8,
            cells_per_axis: 4,
            ap_roles: None,
            array: ArraySpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("scene.m", self.n_aps),
            ("scene.m_tx", self.n_tx),
            ("scene.m_rx", self.n_rx),
            ("scene.k", self.n_ues),
            ("scene.s", self.n_regions),
            ("scene.m_c", self.serving_aps),
            ("scene.n_a", self.n_antennas),
            ("scene.rx_per_region", self.rx_per_region),
            ("scene.tx_per_region", self.tx_per_region),
            ("scene.cells_per_axis", self.cells_per_axis),
        ];
        for (key, n) in counts {
            if n == 0 {
                return Err(ConfigError::for_key(key, "must be at least 1"));
            }
        }
        if self.n_tx + self.n_rx != self.n_aps {
            return Err(ConfigError::for_key(
                "scene.m",
                format!("m_tx + m_rx = {} but m = {}", self.n_tx + self.n_rx, self.n_aps),
            ));
        }
        if self.serving_aps > self.n_tx {
            return Err(ConfigError::for_key("scene.m_c", "cannot exceed the number of tAPs"));
        }
        if self.rx_per_region > self.n_rx {
            return Err(ConfigError::for_key("scene.rx_per_region", "cannot exceed the number of rAPs"));
        }
        if self.tx_per_region > self.n_tx {
            return Err(ConfigError::for_key("scene.tx_per_region", "cannot exceed the number of tAPs"));
        }
        if !(self.area_side > 0.0) {
            return Err(ConfigError::for_key("scene.area_side", "must be positive"));
        }
        if !(self.target_height_min <= self.target_height_max) || self.target_height_min < 0.0 {
            return Err(ConfigError::for_key("scene.target_height_min", "invalid target height range"));
        }
        if !(self.nu_max >= 0.0) || !self.nu_max.is_finite() {
            return Err(ConfigError::for_key("scene.nu_max", "must be finite and non-negative"));
        }
        if !(self.rcs_corr_len > 0.0) {
            return Err(ConfigError::for_key("scene.rcs_corr_len", "must be positive"));
        }
        if self.ap_power_w < 0.0 {
            return Err(ConfigError::for_key("scene.power_w", "must be non-negative"));
        }
        if let Some(roles) = &self.ap_roles {
            let tx = roles.iter().filter(|r| **r == ApRole::Transmit).count();
            if roles.len() != self.n_aps || tx != self.n_tx {
                return Err(ConfigError::for_key(
                    "scene.ap_roles",
                    format!("need {} roles with {} transmitters", self.n_aps, self.n_tx),
                ));
            }
        }
        Ok(())
    }

    /// σ_α² in linear units (m²).
    pub fn rcs_variance(&self) -> f64 {
        10f64.powf(self.rcs_variance_dbsm / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApNode {
    pub id: usize,
    pub position: Position3,
    pub role: ApRole,
    pub n_antennas: usize,
    pub array: ArraySpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeNode {
    pub id: usize,
    pub position: Position3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub position: Position3,
    pub velocity: Velocity3,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Region {
    pub fn centroid(&self) -> Vec3 {
        Vec3::new((self.x_range.0 + self.x_range.1) / 2.0, (self.y_range.0 + self.y_range.1) / 2.0, 0.0)
    }

    pub fn contains(&self, p: Position3) -> bool {
        p.x >= self.x_range.0 && p.x <= self.x_range.1 && p.y >= self.y_range.0 && p.y <= self.y_range.1
    }

    /// Horizontal centers of the `n × n` radar-cell lattice.
    pub fn cell_centers(&self, n: usize) -> Vec<(f64, f64)> {
        let wx = (self.x_range.1 - self.x_range.0) / n as f64;
        let wy = (self.y_range.1 - self.y_range.0) / n as f64;
        let mut out = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                out.push((self.x_range.0 + (ix as f64 + 0.5) * wx, self.y_range.0 + (iy as f64 + 0.5) * wy));
            }
        }
        out
    }
}

/// Equal rectangular regions tiling the square area: `rows × cols = S`
/// with `rows` the largest divisor of S not above √S.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    pub regions: Vec<Region>,
}

impl RegionGrid {
    pub fn new(area_side: f64, n_regions: usize) -> Self {
        let mut rows = (n_regions as f64).sqrt().floor() as usize;
        while rows > 1 && !n_regions.is_multiple_of(rows) {
            rows -= 1;
        }
        let rows = rows.max(1);
        let cols = n_regions / rows;
        let w = area_side / cols as f64;
        let h = area_side / rows as f64;
        let mut regions = Vec::with_capacity(n_regions);
        for r in 0..rows {
            for c in 0..cols {
                regions.push(Region {
                    id: regions.len(),
                    x_range: (c as f64 * w, (c + 1) as f64 * w),
                    y_range: (r as f64 * h, (r + 1) as f64 * h),
                });
            }
        }
        Self { regions }
    }

    pub fn region_of(&self, p: Position3) -> usize {
        self.regions.iter().position(|r| r.contains(p)).unwrap_or_else(|| {
            // Outside the area: nearest centroid.
            argmin(self.regions.iter().map(|r| (r.centroid() - Vec3::new(p.x, p.y, 0.0)).norm()))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub aps: Vec<ApNode>,
    pub ues: Vec<UeNode>,
    pub target: TargetState,
    pub regions: RegionGrid,
}

impl Scene {
    pub fn tap_ids(&self) -> Vec<usize> {
        self.aps.iter().filter(|a| a.role == ApRole::Transmit).map(|a| a.id).collect()
    }

    pub fn rap_ids(&self) -> Vec<usize> {
        self.aps.iter().filter(|a| a.role == ApRole::Receive).map(|a| a.id).collect()
    }
}

fn argmin(it: impl Iterator<Item = f64>) -> usize {
    it.enumerate().min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal)).map(|(i, _)| i).unwrap_or(0)
}

/// Draws a point uniformly in the area at height in `[lo, hi]`.
fn uniform_point(rng: &mut SimRng, side: f64, lo: f64, hi: f64) -> Position3 {
    let z = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Vec3::new(rng.random_range(0.0..side), rng.random_range(0.0..side), z)
}

/// Random layout of APs, UEs and one target. The target velocity is left at
/// zero; callers draw it according to their experiment.
pub fn deploy_scene(cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Scene> {
    cfg.validate()?;
    let mut aps: Vec<ApNode> = (0..cfg.n_aps)
        .map(|id| ApNode {
            id,
            position: uniform_point(rng, cfg.area_side, cfg.ap_height, cfg.ap_height),
            role: ApRole::Receive,
            n_antennas: cfg.n_antennas,
            array: cfg.array,
        })
        .collect();
    let ues = (0..cfg.n_ues)
        .map(|id| UeNode { id, position: uniform_point(rng, cfg.area_side, cfg.ue_height, cfg.ue_height) })
        .collect();
    let target = TargetState {
        position: uniform_point(rng, cfg.area_side, cfg.target_height_min, cfg.target_height_max),
        velocity: Vec3::ZERO,
        present: true,
    };
    let roles = partition_aps(cfg, rng)?;
    for (ap, role) in aps.iter_mut().zip(roles) {
        ap.role = role;
    }
    Ok(Scene { aps, ues, target, regions: RegionGrid::new(cfg.area_side, cfg.n_regions) })
}

/// Random balanced split into `n_tx` transmitters and `n_rx` receivers, or
/// the explicit role list when one is configured.
pub fn partition_aps(cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Vec<ApRole>, ConfigError> {
    if cfg.n_tx + cfg.n_rx != cfg.n_aps {
        return Err(ConfigError::for_key("scene.m", "m_tx + m_rx must equal m"));
    }
    if let Some(roles) = &cfg.ap_roles {
        cfg.validate()?;
        return Ok(roles.clone());
    }
    let mut idx: Vec<usize> = (0..cfg.n_aps).collect();
    idx.shuffle(rng);
    let mut roles = vec![ApRole::Receive; cfg.n_aps];
    for &i in &idx[..cfg.n_tx] {
        roles[i] = ApRole::Transmit;
    }
    Ok(roles)
}

/// One-way pathloss in dB: −30.5 − 36.7·log10(d).
pub fn pathloss_db(d: f64) -> f64 {
    -30.5 - 36.7 * d.log10()
}

pub fn one_way_gain(d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::DegenerateGeometry("zero link distance".into()));
    }
    Ok(10f64.powf(pathloss_db(d) / 10.0))
}

/// Rician K-factor (linear) `10^(1.3 − 0.003 d)`.
pub fn rician_k(d: f64) -> f64 {
    10f64.powf(1.3 - 0.003 * d)
}

/// Bistatic radar-equation gain λ²/((4π)³ d_tx² d_rx²), RCS excluded.
pub fn bistatic_gain(target: Position3, tap: Position3, rap: Position3, wavelength: f64) -> Result<f64> {
    let d_tx = tap.distance(target);
    let d_rx = rap.distance(target);
    if !(d_tx > 0.0 && d_rx > 0.0) {
        return Err(Error::DegenerateGeometry("target coincides with an AP".into()));
    }
    let four_pi = 4.0 * std::f64::consts::PI;
    Ok(wavelength * wavelength / (four_pi.powi(3) * d_tx * d_tx * d_rx * d_rx))
}

/// Large-scale fading between all node pairs, indexed by global ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LsfTable {
    /// `ue_ap[k][m]`
    pub ue_ap: Vec<Vec<f64>>,
    pub ue_ap_k: Vec<Vec<f64>>,
    /// `ap_ap[m][m']`; diagonal is unused and set to zero.
    pub ap_ap: Vec<Vec<f64>>,
    pub ap_ap_k: Vec<Vec<f64>>,
}

impl LsfTable {
    /// β_{i,m,m'} for a hypothesized cell at `cell`.
    pub fn sensing(&self, scene: &Scene, cell: Position3, rap: usize, tap: usize, wavelength: f64) -> Result<f64> {
        bistatic_gain(cell, scene.aps[tap].position, scene.aps[rap].position, wavelength)
    }
}

pub fn large_scale_fading(scene: &Scene) -> Result<LsfTable> {
    let m = scene.aps.len();
    let mut ue_ap = Vec::with_capacity(scene.ues.len());
    let mut ue_ap_k = Vec::with_capacity(scene.ues.len());
    for ue in &scene.ues {
        let mut row = Vec::with_capacity(m);
        let mut krow = Vec::with_capacity(m);
        for ap in &scene.aps {
            let d = ue.position.distance(ap.position);
            row.push(one_way_gain(d)?);
            krow.push(rician_k(d));
        }
        ue_ap.push(row);
        ue_ap_k.push(krow);
    }
    let mut ap_ap = vec![vec![0.0; m]; m];
    let mut ap_ap_k = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..m {
            if a != b {
                let d = scene.aps[a].position.distance(scene.aps[b].position);
                ap_ap[a][b] = one_way_gain(d)?;
                ap_ap_k[a][b] = rician_k(d);
            }
        }
    }
    Ok(LsfTable { ue_ap, ue_ap_k, ap_ap, ap_ap_k })
}

/// User- and target-centric association, all sets holding global AP ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationMap {
    /// M_k^tx per UE.
    pub ue_taps: Vec<Vec<usize>>,
    /// K_m per AP id (empty for rAPs).
    pub tap_ues: Vec<Vec<usize>>,
    /// M_p^tx per region.
    pub region_taps: Vec<Vec<usize>>,
    /// M_p^rx per region.
    pub region_raps: Vec<Vec<usize>>,
    /// S_m per AP id (empty for rAPs).
    pub tap_regions: Vec<Vec<usize>>,
}

fn sorted_by_key(ids: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    v
}

/// Each UE is served by its `m_c` strongest tAPs; `K_m` is the inverse map.
pub fn associate_users(n_aps: usize, taps: &[usize], lsf: &LsfTable, m_c: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut ue_taps = Vec::with_capacity(lsf.ue_ap.len());
    let mut tap_ues = vec![Vec::new(); n_aps];
    for (k, row) in lsf.ue_ap.iter().enumerate() {
        let mut best = sorted_by_key(taps, |m| -row[m]);
        best.truncate(m_c);
        best.sort_unstable();
        for &m in &best {
            tap_ues[m].push(k);
        }
        ue_taps.push(best);
    }
    (ue_taps, tap_ues)
}

/// Each region is inspected by the `n_rx` rAPs and `n_tx` tAPs closest to its
/// centroid. Any rAP left uncovered joins its nearest region so the union of
/// the receive sets is the full rAP set.
pub fn associate_regions(
    regions: &RegionGrid,
    aps: &[ApNode],
    n_rx: usize,
    n_tx: usize,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let taps: Vec<usize> = aps.iter().filter(|a| a.role == ApRole::Transmit).map(|a| a.id).collect();
    let raps: Vec<usize> = aps.iter().filter(|a| a.role == ApRole::Receive).map(|a| a.id).collect();
    let horiz = |id: usize, c: Vec3| {
        let p = aps[id].position;
        (p.x - c.x).hypot(p.y - c.y)
    };
    let mut region_taps = Vec::new();
    let mut region_raps = Vec::new();
    for r in &regions.regions {
        let c = r.centroid();
        let mut tx = sorted_by_key(&taps, |id| horiz(id, c));
        tx.truncate(n_tx);
        tx.sort_unstable();
        let mut rx = sorted_by_key(&raps, |id| horiz(id, c));
        rx.truncate(n_rx);
        rx.sort_unstable();
        region_taps.push(tx);
        region_raps.push(rx);
    }
    for &m in &raps {
        if !region_raps.iter().any(|set| set.contains(&m)) {
            let nearest = argmin(regions.regions.iter().map(|r| horiz(m, r.centroid())));
            region_raps[nearest].push(m);
            region_raps[nearest].sort_unstable();
        }
    }
    let mut tap_regions = vec![Vec::new(); aps.len()];
    for (i, set) in region_taps.iter().enumerate() {
        for &m in set {
            tap_regions[m].push(i);
        }
    }
    (region_taps, region_raps, tap_regions)
}

pub fn build_association(scene: &Scene, lsf: &LsfTable, cfg: &ScenarioConfig) -> AssociationMap {
    let taps = scene.tap_ids();
    let (ue_taps, tap_ues) = associate_users(scene.aps.len(), &taps, lsf, cfg.serving_aps);
    let (region_taps, region_raps, tap_regions) =
        associate_regions(&scene.regions, &scene.aps, cfg.rx_per_region, cfg.tx_per_region);
    AssociationMap { ue_taps, tap_ues, region_taps, region_raps, tap_regions }
}

/// Hermitian PSD covariance of the RCS vector across tAPs.
#[derive(Debug, Clone, PartialEq)]
pub struct RcsCovariance {
    pub matrix: DMatrix<f64>,
}

impl RcsCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `L` with `L Lᵀ = R`, from the eigendecomposition (robust to rank loss).
    pub fn factor(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let mut l = eig.eigenvectors.clone();
        for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
            let s = lambda.max(0.0).sqrt();
            l.column_mut(j).scale_mut(s);
        }
        l
    }

    pub fn zero(n: usize) -> Self {
        Self { matrix: DMatrix::zeros(n, n) }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { matrix: &self.matrix * s }
    }
}

/// Gaussian kernel in the angular separation of the target→tAP directions:
/// `R[a,b] = σ² exp(−Δφ²/(2 ℓ²))`.
///
/// The squared-exponential kernel on great-circle distance is not PSD for every
/// point set. When the raw matrix has a negative eigenvalue it is clipped to
/// the PSD cone and rescaled so the diagonal stays exactly σ².
pub fn rcs_covariance(target: Position3, taps: &[Position3], sigma_sq: f64, corr_len: f64) -> Result<RcsCovariance> {
    let dirs: Vec<Vec3> = taps
        .iter()
        .map(|&p| {
            let d = p - target;
            let r = d.norm();
            if r == 0.0 {
                Err(Error::DegenerateGeometry("target coincides with a tAP".into()))
            } else {
                Ok(d * (1.0 / r))
            }
        })
        .collect::<Result<_>>()?;
    let n = dirs.len();
    let mut m = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            return sigma_sq;
        }
        let sep = dirs[a].dot(dirs[b]).clamp(-1.0, 1.0).acos();
        sigma_sq * (-sep * sep / (2.0 * corr_len * corr_len)).exp()
    });
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let v = &eig.eigenvectors;
        let mut psd = v * DMatrix::from_diagonal(&clipped) * v.transpose();
        let d: Vec<f64> = (0..n).map(|i| psd[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
        for a in 0..n {
            for b in 0..n {
                psd[(a, b)] *= sigma_sq / (d[a] * d[b]);
            }
        }
        m = (&psd + psd.transpose()) * 0.5;
        for i in 0..n {
            m[(i, i)] = sigma_sq;
        }
    }
    Ok(RcsCovariance { matrix: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn default_scene(seed: u64) -> Scene {
        deploy_scene(&ScenarioConfig::default(), &mut substream(seed, 0)).unwrap()
    }

    #[test]
    fn deploy_is_deterministic() {
        assert_eq!(default_scene(3), default_scene(3));
        assert_ne!(default_scene(3), default_scene(4));
    }

    #[test]
    fn fixed_heights_and_target_range() {
        for seed in 0..50 {
            let s = default_scene(seed);
            assert!(s.aps.iter().all(|a| a.position.z == 10.0));
            assert!(s.ues.iter().all(|u| u.position.z == 1.65));
            assert!((20.0..=100.0).contains(&s.target.position.z));
            assert!(s.aps.iter().chain([].iter()).all(|a| (0.0..500.0).contains(&a.position.x)));
        }
    }

    #[test]
    fn partition_default_counts() {
        let s = default_scene(9);
        assert_eq!(s.tap_ids().len(), 8);
        assert_eq!(s.rap_ids().len(), 8);
    }

    #[test]
    fn partition_two_aps() {
        let cfg = ScenarioConfig { n_aps: 2, n_tx: 1, n_rx: 1, serving_aps: 1, rx_per_region: 1, tx_per_region: 1, ..Default::default() };
        let roles = partition_aps(&cfg, &mut substream(1, 0)).unwrap();
        assert_eq!(roles.iter().filter(|r| **r == ApRole::Transmit).count(), 1);
        assert_eq!(roles.iter().filter(|r| **r == ApRole::Receive).count(), 1);
        assert_eq!(roles, partition_aps(&cfg, &mut substream(1, 0)).unwrap());
    }

    #[test]
    fn partition_rejects_inconsistent_counts() {
        let cfg = ScenarioConfig { n_tx: 9, ..Default::default() };
        assert!(partition_aps(&cfg, &mut substream(1, 0)).is_err());
    }

    #[test]
    fn explicit_roles_override() {
        let roles: Vec<ApRole> = (0..16).map(|i| if i < 8 { ApRole::Transmit } else { ApRole::Receive }).collect();
        let cfg = ScenarioConfig { ap_roles: Some(roles.clone()), ..Default::default() };
        assert_eq!(partition_aps(&cfg, &mut substream(1, 0)).unwrap(), roles);
    }

    #[test]
    fn pathloss_at_100m() {
        assert!((pathloss_db(100.0) + 103.9).abs() < 1e-12);
    }

    #[test]
    fn bistatic_gain_inverse_square_squared() {
        let t = Vec3::new(0.0, 0.0, 50.0);
        let g1 = bistatic_gain(t, Vec3::new(100.0, 0.0, 50.0), Vec3::new(0.0, 80.0, 50.0), 0.1).unwrap();
        let g2 = bistatic_gain(t, Vec3::new(200.0, 0.0, 50.0), Vec3::new(0.0, 160.0, 50.0), 0.1).unwrap();
        assert!((g1 / g2 - 16.0).abs() < 1e-9);
    }

    #[test]
    fn zero_distance_is_degenerate() {
        assert!(matches!(one_way_gain(0.0), Err(Error::DegenerateGeometry(_))));
        let p = Vec3::new(1.0, 1.0, 1.0);
        assert!(bistatic_gain(p, p, Vec3::ZERO, 0.1).is_err());
    }

    #[test]
    fn lsf_positive_and_monotone() {
        let s = default_scene(2);
        let lsf = large_scale_fading(&s).unwrap();
        for row in lsf.ue_ap.iter().chain(lsf.ap_ap.iter()) {
            for &b in row {
                assert!(b.is_finite() && b >= 0.0);
            }
        }
        let mut last = f64::INFINITY;
        for d in [1.0, 2.0, 10.0, 100.0, 700.0] {
            let b = one_way_gain(d).unwrap();
            assert!(b < last && b > 0.0);
            last = b;
        }
    }

    fn check_association(a: &AssociationMap, s: &Scene, m_c: usize) {
        for (k, set) in a.ue_taps.iter().enumerate() {
            assert_eq!(set.len(), m_c);
            for m in 0..s.aps.len() {
                assert_eq!(set.contains(&m), a.tap_ues[m].contains(&k));
            }
        }
        for (i, set) in a.region_taps.iter().enumerate() {
            for m in 0..s.aps.len() {
                assert_eq!(set.contains(&m), a.tap_regions[m].contains(&i));
            }
        }
        let mut covered: Vec<usize> = a.region_raps.iter().flatten().copied().collect();
        covered.sort_unstable();
        covered.dedup();
        assert_eq!(covered, s.rap_ids());
    }

    #[test]
    fn association_invariants_exhaustive() {
        for seed in 0..30 {
            let s = default_scene(seed);
            let lsf = large_scale_fading(&s).unwrap();
            let cfg = ScenarioConfig::default();
            let a = build_association(&s, &lsf, &cfg);
            check_association(&a, &s, cfg.serving_aps);
            assert!(a.region_taps.iter().all(|t| t.len() == 8));
            let cfg2 = ScenarioConfig { rx_per_region: 2, tx_per_region: 3, ..Default::default() };
            let a2 = build_association(&s, &lsf, &cfg2);
            check_association(&a2, &s, cfg2.serving_aps);
        }
    }

    #[test]
    fn full_serving_set() {
        let s = default_scene(5);
        let lsf = large_scale_fading(&s).unwrap();
        let taps = s.tap_ids();
        let (ue_taps, _) = associate_users(s.aps.len(), &taps, &lsf, taps.len());
        assert!(ue_taps.iter().all(|set| *set == taps));
    }

    #[test]
    fn ue_on_top_of_tap_is_served_by_it() {
        let mut s = default_scene(6);
        let tap = s.tap_ids()[3];
        s.ues[0].position = s.aps[tap].position - Vec3::new(0.0, 0.0, 8.35);
        let lsf = large_scale_fading(&s).unwrap();
        let (ue_taps, _) = associate_users(s.aps.len(), &s.tap_ids(), &lsf, 1);
        assert_eq!(ue_taps[0], vec![tap]);
    }

    #[test]
    fn single_region_gets_all_raps() {
        let s = default_scene(8);
        let grid = RegionGrid::new(500.0, 1);
        let (_, rx, _) = associate_regions(&grid, &s.aps, 8, 8);
        assert_eq!(rx[0], s.rap_ids());
    }

    #[test]
    fn region_grid_quadrants() {
        let g = RegionGrid::new(500.0, 4);
        assert_eq!(g.regions.len(), 4);
        assert_eq!(g.region_of(Vec3::new(10.0, 10.0, 0.0)), 0);
        assert_eq!(g.region_of(Vec3::new(400.0, 400.0, 0.0)), 3);
        assert_eq!(g.regions[0].cell_centers(4).len(), 16);
    }

    #[test]
    fn rcs_covariance_properties() {
        for seed in 0..40 {
            let s = default_scene(seed);
            let taps: Vec<Vec3> = s.tap_ids().iter().map(|&m| s.aps[m].position).collect();
            let r = rcs_covariance(s.target.position, &taps, 10.0, 0.5).unwrap();
            for i in 0..taps.len() {
                assert_eq!(r.matrix[(i, i)], 10.0);
            }
            assert_eq!(r.matrix, r.matrix.transpose());
            let min = SymmetricEigen::new(r.matrix.clone()).eigenvalues.min();
            assert!(min >= -1e-10 * 10.0, "{min}");
        }
    }

    #[test]
    fn colocated_taps_fully_correlated() {
        let p = Vec3::new(100.0, 100.0, 10.0);
        let r = rcs_covariance(Vec3::new(0.0, 0.0, 50.0), &[p, p], 10.0, 0.5).unwrap();
        assert!((r.matrix[(0, 1)] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rcs_factor_reproduces_matrix() {
        let s = default_scene(1);
        let taps: Vec<Vec3> = s.tap_ids().iter().map(|&m| s.aps[m].position).collect();
        let r = rcs_covariance(s.target.position, &taps, 10.0, 0.5).unwrap();
        let l = r.factor();
        assert!((&l * l.transpose() - &r.matrix).norm() < 1e-9);
    }
}
