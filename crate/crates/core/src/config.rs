//! Flat `key = value` run configuration.
//!
//! Every key has a default reproducing the reference scenario, so an empty
//! file is a valid configuration. Unknown keys and unparsable values are
//! rejected with the key name and source line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::channel::CsiMode;
use crate::error::ConfigError;
use crate::experiments::{SimConfig, ThresholdKind};
use crate::geometry::ArrayAxis;
use crate::scene::ApRole;
use crate::velocity::Method;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub seed: u64,
    /// Trial count; `None` selects the per-subcommand default.
    pub trials: Option<usize>,
    pub out_dir: PathBuf,
    /// Worker-thread cap; `None` uses every available core.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { sim: SimConfig::default(), seed: 1, trials: None, out_dir: PathBuf::from("out"), threads: None }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::for_key(key, format!("cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::for_key(key, format!("expected a boolean, got {value:?}"))),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn role_name(r: ApRole) -> &'static str {
    match r {
        ApRole::Transmit => "tx",
        ApRole::Receive => "rx",
    }
}

fn axis_name(a: ArrayAxis) -> &'static str {
    match a {
        ArrayAxis::X => "x",
        ArrayAxis::Y => "y",
        ArrayAxis::Z => "z",
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let s = &mut self.sim;
        let sc = &mut s.scenario;
        let e = &mut s.estimator;
        match key {
            "scene.area_side" => sc.area_side = parse(key, value)?,
            "scene.m" => sc.n_aps = parse(key, value)?,
            "scene.m_tx" => sc.n_tx = parse(key, value)?,
            "scene.m_rx" => sc.n_rx = parse(key, value)?,
            "scene.k" => sc.n_ues = parse(key, value)?,
            "scene.s" => sc.n_regions = parse(key, value)?,
            "scene.m_c" => sc.serving_aps = parse(key, value)?,
            "scene.n_a" => sc.n_antennas = parse(key, value)?,
            "scene.ap_height" => sc.ap_height = parse(key, value)?,
            "scene.ue_height" => sc.ue_height = parse(key, value)?,
            "scene.target_height_min" => sc.target_height_min = parse(key, value)?,
            "scene.target_height_max" => sc.target_height_max = parse(key, value)?,
            "scene.nu_max" => sc.nu_max = parse(key, value)?,
            "scene.rcs_dbsm" => sc.rcs_variance_dbsm = parse(key, value)?,
            "scene.power_w" => sc.ap_power_w = parse(key, value)?,
            "scene.noise_psd_dbm_hz" => sc.noise_psd_dbm_hz = parse(key, value)?,
            "scene.noise_figure_db" => sc.noise_figure_db = parse(key, value)?,
            "scene.rcs_corr_len" => sc.rcs_corr_len = parse(key, value)?,
            "scene.rx_per_region" => sc.rx_per_region = parse(key, value)?,
            "scene.tx_per_region" => sc.tx_per_region = parse(key, value)?,
            "scene.cells_per_axis" => sc.cells_per_axis = parse(key, value)?,
            "scene.ap_roles" => {
                sc.ap_roles = if value == "random" {
                    None
                } else {
                    let roles = value
                        .split(',')
                        .map(|r| match r.trim() {
                            "tx" => Ok(ApRole::Transmit),
                            "rx" => Ok(ApRole::Receive),
                            other => Err(ConfigError::for_key(key, format!("unknown role {other:?}"))),
                        })
                        .collect::<Result<_, _>>()?;
                    Some(roles)
                }
            }
            "scene.array_axis" => {
                sc.array.axis = match value {
                    "x" => ArrayAxis::X,
                    "y" => ArrayAxis::Y,
                    "z" => ArrayAxis::Z,
                    _ => return Err(ConfigError::for_key(key, format!("unknown axis {value:?}"))),
                }
            }
            "scene.array_spacing" => sc.array.spacing = parse(key, value)?,
            "ofdm.nc" => s.ofdm.nc = parse(key, value)?,
            "ofdm.ns" => s.ofdm.ns = parse(key, value)?,
            "ofdm.delta_f" => s.ofdm.delta_f = parse(key, value)?,
            "ofdm.fc" => s.ofdm.fc = parse(key, value)?,
            "estimator.grid_points" => e.grid_points = parse(key, value)?,
            "estimator.coarse_points" => e.coarse_points = parse(key, value)?,
            "estimator.swarm_size" => e.swarm_size = parse(key, value)?,
            "estimator.iterations" => e.iterations = parse(key, value)?,
            "estimator.inertia" => e.inertia = parse(key, value)?,
            "estimator.cognitive" => e.cognitive = parse(key, value)?,
            "estimator.social" => e.social = parse(key, value)?,
            "estimator.grad_max_iters" => e.grad_max_iters = parse(key, value)?,
            "estimator.fd_step" => e.fd_step = parse(key, value)?,
            "estimator.init_step" => e.init_step = parse(key, value)?,
            "estimator.backtrack" => e.backtrack = parse(key, value)?,
            "estimator.tol" => e.tol = parse(key, value)?,
            "estimator.parallel" => e.parallel = parse_bool(key, value)?,
            "detector.p_fa" => s.detector.p_fa = parse(key, value)?,
            "detector.threshold" => {
                s.detector.threshold = match value {
                    "analytic" => ThresholdKind::Analytic,
                    "monte_carlo" => ThresholdKind::MonteCarlo,
                    _ => return Err(ConfigError::for_key(key, format!("expected analytic or monte_carlo, got {value:?}"))),
                }
            }
            "detector.mc_trials" => s.detector.mc_trials = parse(key, value)?,
            "detector.method" => {
                s.detector.method = Method::parse(value).ok_or_else(|| ConfigError::for_key(key, format!("unknown method {value:?}")))?
            }
            "channel.csi" => {
                s.csi = match value {
                    "perfect" => CsiMode::Perfect,
                    "mmse" => CsiMode::Mmse,
                    _ => return Err(ConfigError::for_key(key, format!("expected perfect or mmse, got {value:?}"))),
                }
            }
            "waveform.coherent_sensing_stream" => s.coherent_sensing_stream = parse_bool(key, value)?,
            "sim.noise_scale" => s.noise_scale = parse(key, value)?,
            "sim.timed_single_thread" => s.timed_single_thread = parse_bool(key, value)?,
            "case2.nu_max" => s.case2_nu_max = parse_list(key, value)?,
            "case3.nc" => s.case3_nc = parse_list(key, value)?,
            "run.seed" => self.seed = parse(key, value)?,
            "run.trials" => self.trials = if value == "default" { None } else { Some(parse(key, value)?) },
            "run.out_dir" => self.out_dir = PathBuf::from(value),
            "run.threads" => self.threads = if value == "auto" { None } else { Some(parse(key, value)?) },
            _ => return Err(ConfigError::for_key(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.sim;
        let sc = &s.scenario;
        let e = &s.estimator;
        vec![
            ("scene.area_side", format!("{:?}", sc.area_side)),
            ("scene.m", sc.n_aps.to_string()),
            ("scene.m_tx", sc.n_tx.to_string()),
            ("scene.m_rx", sc.n_rx.to_string()),
            ("scene.k", sc.n_ues.to_string()),
            ("scene.s", sc.n_regions.to_string()),
            ("scene.m_c", sc.serving_aps.to_string()),
            ("scene.n_a", sc.n_antennas.to_string()),
            ("scene.ap_height", format!("{:?}", sc.ap_height)),
            ("scene.ue_height", format!("{:?}", sc.ue_height)),
            ("scene.target_height_min", format!("{:?}", sc.target_height_min)),
            ("scene.target_height_max", format!("{:?}", sc.target_height_max)),
            ("scene.nu_max", format!("{:?}", sc.nu_max)),
            ("scene.rcs_dbsm", format!("{:?}", sc.rcs_variance_dbsm)),
            ("scene.power_w", format!("{:?}", sc.ap_power_w)),
            ("scene.noise_psd_dbm_hz", format!("{:?}", sc.noise_psd_dbm_hz)),
            ("scene.noise_figure_db", format!("{:?}", sc.noise_figure_db)),
            ("scene.rcs_corr_len", format!("{:?}", sc.rcs_corr_len)),
            ("scene.rx_per_region", sc.rx_per_region.to_string()),
            ("scene.tx_per_region", sc.tx_per_region.to_string()),
            ("scene.cells_per_axis", sc.cells_per_axis.to_string()),
            (
                "scene.ap_roles",
                sc.ap_roles.as_ref().map_or("random".into(), |r| r.iter().map(|&x| role_name(x)).collect::<Vec<_>>().join(",")),
            ),
            ("scene.array_axis", axis_name(sc.array.axis).into()),
            ("scene.array_spacing", format!("{:?}", sc.array.spacing)),
            ("ofdm.nc", s.ofdm.nc.to_string()),
            ("ofdm.ns", s.ofdm.ns.to_string()),
            ("ofdm.delta_f", format!("{:?}", s.ofdm.delta_f)),
            ("ofdm.fc", format!("{:?}", s.ofdm.fc)),
            ("estimator.grid_points", e.grid_points.to_string()),
            ("estimator.coarse_points", e.coarse_points.to_string()),
            ("estimator.swarm_size", e.swarm_size.to_string()),
            ("estimator.iterations", e.iterations.to_string()),
            ("estimator.inertia", format!("{:?}", e.inertia)),
            ("estimator.cognitive", format!("{:?}", e.cognitive)),
            ("estimator.social", format!("{:?}", e.social)),
            ("estimator.grad_max_iters", e.grad_max_iters.to_string()),
            ("estimator.fd_step", format!("{:?}", e.fd_step)),
            ("estimator.init_step", format!("{:?}", e.init_step)),
            ("estimator.backtrack", format!("{:?}", e.backtrack)),
            ("estimator.tol", format!("{:?}", e.tol)),
            ("estimator.parallel", e.parallel.to_string()),
            ("detector.p_fa", format!("{:?}", s.detector.p_fa)),
            (
                "detector.threshold",
                match s.detector.threshold {
                    ThresholdKind::Analytic => "analytic",
                    ThresholdKind::MonteCarlo => "monte_carlo",
                }
                .into(),
            ),
            ("detector.mc_trials", s.detector.mc_trials.to_string()),
            ("detector.method", s.detector.method.name().into()),
            (
                "channel.csi",
                match s.csi {
                    CsiMode::Perfect => "perfect",
                    CsiMode::Mmse => "mmse",
                }
                .into(),
            ),
            ("waveform.coherent_sensing_stream", s.coherent_sensing_stream.to_string()),
            ("sim.noise_scale", format!("{:?}", s.noise_scale)),
            ("sim.timed_single_thread", s.timed_single_thread.to_string()),
            ("case2.nu_max", s.case2_nu_max.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")),
            ("case3.nc", join(&s.case3_nc)),
            ("run.seed", self.seed.to_string()),
            ("run.trials", self.trials.map_or("default".into(), |t| t.to_string())),
            ("run.out_dir", self.out_dir.display().to_string()),
            ("run.threads", self.threads.map_or("auto".into(), |t| t.to_string())),
        ]
    }

    /// `key = value` lines for every key.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the canonical form, ignoring keys that do not affect results.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k == "run.out_dir" || k == "run.threads" {
                continue;
            }
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Applies the assignments in `text`, reporting errors with line numbers.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("expected `key = value`, got {line:?}")).at_line(idx + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| e.at_line(idx + 1))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(format!("override {assignment:?} is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        if self.threads == Some(0) {
            return Err(ConfigError::for_key("run.threads", "must be at least 1"));
        }
        Ok(())
    }
}

/// Defaults, then the file (if any), then the overrides; validated.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError::new(format!("cannot read {}: {e}", p.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
