//! CSV output for the case studies.
//!
//! Each file opens with `# seed=` and `# config_hash=` comment lines, then the
//! column header, then one row per record. Lines end in LF.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::experiments::{Case1Result, Case2Row, Case3Row, DetectReport};
use crate::sensing::Hypothesis;

pub const CASE1_TIMING: &str = "case1_timing.csv";
pub const CASE1_ERRORS: &str = "case1_errors.csv";
pub const CASE2_SNR: &str = "case2_snr.csv";
pub const CASE3_SNR: &str = "case3_snr.csv";

/// Provenance written at the top of every file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

fn table(stamp: &Stamp, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("# seed={}\n# config_hash={}\n{header}\n", stamp.seed, stamp.config_hash);
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn case1_timing_csv(stamp: &Stamp, result: &Case1Result) -> String {
    let rows = result.timing.iter().map(|t| format!("{},{},{}", t.method.name(), t.mean_time.as_secs_f64(), t.normalized_time));
    table(stamp, "method,mean_time_s,normalized_time", rows)
}

pub fn case1_errors_csv(stamp: &Stamp, result: &Case1Result) -> String {
    let mut rows = Vec::new();
    for t in &result.trials {
        for r in &t.results {
            let [ex, ey, ez] = r.per_component;
            let [nx, ny, nz] = r.speed_normalized.unwrap_or([f64::NAN; 3]);
            let mut row = String::new();
            let _ = write!(row, "{},{},{ex},{ey},{ez},{nx},{ny},{nz}", t.trial, r.method.name());
            rows.push(row);
        }
    }
    table(stamp, "trial,method,ex,ey,ez,ex_speednorm,ey_speednorm,ez_speednorm", rows)
}

pub fn case2_csv(stamp: &Stamp, rows: &[Case2Row]) -> String {
    let lines = rows.iter().map(|r| format!("{},{},{},{}", r.trial, r.scenario.name(), r.nu_max, r.gamma_db));
    table(stamp, "trial,scenario,nu_max,gamma_db", lines)
}

pub fn case3_csv(stamp: &Stamp, rows: &[Case3Row]) -> String {
    let lines = rows.iter().map(|r| format!("{},{},{}", r.trial, r.nc, r.gamma_db));
    table(stamp, "trial,nc,gamma_db", lines)
}

pub const DETECT_HEADER: &str =
    "seed,present,statistic,threshold,decision,vx_hat,vy_hat,vz_hat,vx,vy,vz,evaluations,estimator_failed";

/// One CSV row (no header, no newline) describing a detection.
pub fn detect_row(r: &DetectReport) -> String {
    let o = &r.outcome;
    let decision = match o.decision {
        Hypothesis::H0 => "H0",
        Hypothesis::H1 => "H1",
    };
    format!(
        "{},{},{},{},{decision},{},{},{},{},{},{},{},{}",
        r.seed, r.present, o.statistic, o.threshold, o.velocity.x, o.velocity.y, o.velocity.z, r.velocity.x, r.velocity.y, r.velocity.z, o.evaluations, o.estimator_failed
    )
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)
}
