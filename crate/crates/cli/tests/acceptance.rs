//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every criterion reports even when an earlier one
//! fails. Set `CFISAC_ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero
//! exit status.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cfisac_core::experiments::{
    case2_gammas, case3_gammas, run_case1, run_case2, run_case3, Case2Scenario, SimConfig, TimingReference, Trial, TrialOptions,
};
use cfisac_core::geometry::{bistatic_doppler, bistatic_doppler_angular, PhysicalConstants};
use cfisac_core::rng::{complex_normal, substream, trial_seed};
use cfisac_core::sensing::{glrt_statistic, ml_rcs_estimate, numerical_rank, DopplerResponseStack, ObservationStack};
use cfisac_core::velocity::{gradient_refine, grid_search, EstimatorConfig, Method, SearchBox};
use cfisac_core::Vec3;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Smallest sample whose empirical CDF reaches `p`.
fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

fn doppler_oracle() -> Verdict {
    let start = Instant::now();
    let consts = PhysicalConstants::new(3e9);
    let mut rng = substream(101, 0);
    let pt = |rng: &mut cfisac_core::rng::SimRng, z: (f64, f64)| Vec3::new(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0), rng.random_range(z.0..=z.1));
    let (mut worst_fd, mut worst_vec) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let target = pt(&mut rng, (20.0, 100.0));
        let tap = pt(&mut rng, (10.0, 10.0));
        let rap = pt(&mut rng, (10.0, 10.0));
        let v = Vec3::new(rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0));
        let closed = bistatic_doppler_angular(target, v, tap, rap, &consts).unwrap();
        let vector = bistatic_doppler(target, v, tap, rap, &consts).unwrap();
        // Closing-positive Doppler is minus the path-length rate over λ.
        let path = |t: f64| {
            let p = target + v * t;
            p.distance(tap) + p.distance(rap)
        };
        let h = 1e-4;
        let fd = -(path(h) - path(-h)) / (2.0 * h) / consts.wavelength();
        // Errors are scaled by the peak Doppler 2ν/λ so near-orthogonal
        // velocities do not divide by zero.
        let scale = 2.0 * v.norm() / consts.wavelength();
        worst_fd = worst_fd.max((closed - fd).abs() / scale);
        worst_vec = worst_vec.max((closed - vector).abs() / scale);
    }
    let t = start.elapsed();
    verdict(
        worst_fd < 1e-6 && worst_vec < 1e-12 && within(t, 5),
        format!("max rel err vs finite difference {worst_fd:.2e}, vs vector form {worst_vec:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

fn glrt_algebra() -> Verdict {
    let start = Instant::now();
    let mut rng = substream(102, 0);
    let (mut stat_err, mut ml_err, mut bound_ok, mut eq_err) = (0.0f64, 0.0f64, true, 0.0f64);
    for _ in 0..100 {
        let d = DMatrix::from_fn(672, 8, |_, _| complex_normal(&mut rng, 1.0));
        let y = DVector::from_fn(672, |_, _| complex_normal(&mut rng, 1.0));
        let stack = DopplerResponseStack { matrix: d.clone(), velocity: Vec3::ZERO };
        let obs = ObservationStack { data: y.clone(), noise_var: 1.0 };
        let s = glrt_statistic(std::slice::from_ref(&obs), std::slice::from_ref(&stack)).unwrap();
        let svd = d.clone().svd(true, true);
        let u = svd.u.as_ref().unwrap();
        stat_err = stat_err.max(rel(s, (u.adjoint() * &y).norm_squared()));
        bound_ok &= s <= y.norm_squared() * (1.0 + 1e-12);
        let a = ml_rcs_estimate(&stack, &obs).unwrap();
        let oracle = svd.solve(&y, 1e-12).unwrap();
        ml_err = ml_err.max((&a - &oracle).norm() / oracle.norm());
        let alpha = DVector::from_fn(8, |_, _| complex_normal(&mut rng, 1.0));
        let inside = ObservationStack { data: &d * alpha, noise_var: 1.0 };
        let s_in = glrt_statistic(std::slice::from_ref(&inside), std::slice::from_ref(&stack)).unwrap();
        eq_err = eq_err.max(rel(s_in, inside.data.norm_squared()));
    }
    let t = start.elapsed();
    verdict(
        stat_err < 1e-8 && ml_err < 1e-8 && bound_ok && eq_err < 1e-8 && within(t, 30),
        format!(
            "statistic vs SVD {stat_err:.2e}, ML vs SVD solve {ml_err:.2e}, bound held {bound_ok}, in-space equality {eq_err:.2e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn false_alarm() -> Verdict {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let grid = cfg.grid().unwrap();
    let n = 20_000usize;
    let opts = TrialOptions { present: false, ..TrialOptions::detection(cfg.scenario.nu_max) };
    let mut alarms = 0usize;
    for i in 0..n {
        let trial = Trial::build(&cfg, &grid, trial_seed(103, i as u64), &opts).unwrap();
        let stacks = trial.model.stacks(trial.velocity);
        let rank: usize = stacks.iter().map(|s| numerical_rank(&s.matrix)).sum();
        let delta = cfg.threshold(rank, 0).unwrap();
        alarms += (glrt_statistic(&trial.observations, &stacks).unwrap() > delta) as usize;
    }
    let rate = alarms as f64 / n as f64;
    let t = start.elapsed();
    verdict(
        (0.046..=0.054).contains(&rate) && within(t, 300),
        format!("empirical P_FA {rate:.4} over {n} H0 trials, {:.1}s", t.as_secs_f64()),
    )
}

fn delay_invariance() -> Verdict {
    let cfg = SimConfig::default();
    let grid = cfg.grid().unwrap();
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let seed = trial_seed(104, i);
        let base = TrialOptions::detection(cfg.scenario.nu_max);
        let a = Trial::build(&cfg, &grid, seed, &base).unwrap();
        let b = Trial::build(&cfg, &grid, seed, &TrialOptions { timing: TimingReference::PerCell, ..base }).unwrap();
        for v in [Vec3::ZERO, a.velocity, Vec3::new(40.0, -90.0, 10.0)] {
            let sa = glrt_statistic(&a.observations, &a.model.stacks(v)).unwrap();
            let sb = glrt_statistic(&b.observations, &b.model.stacks(v)).unwrap();
            worst = worst.max(rel(sb, sa));
        }
    }
    verdict(worst < 1e-8, format!("max relative change {worst:.2e} over 50 trials"))
}

fn case1() -> (Verdict, Verdict) {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let r = run_case1(&cfg, 200, 105).unwrap();
    let t = start.elapsed();
    let p90 = |m: Method, axis: usize| quantile(&r.errors(m, axis), 0.9);
    let ri = [0, 1, 2].map(|a| p90(Method::PsoRi, a));
    let cgi = [0, 1, 2].map(|a| p90(Method::PsoCgi, a));
    let close = ri.iter().zip(&cgi).all(|(a, b)| (a - b).abs() <= 0.05);
    let accuracy = verdict(
        ri[0] <= 0.10 && ri[1] <= 0.10 && ri[2] <= 0.30 && close && within(t, 1800),
        format!(
            "pso_ri p90 x/y/z = {:.3}/{:.3}/{:.3}, pso_cgi = {:.3}/{:.3}/{:.3}, {:.0}s",
            ri[0], ri[1], ri[2], cgi[0], cgi[1], cgi[2], t.as_secs_f64()
        ),
    );
    let norm = |m: Method| r.timing_of(m).unwrap().normalized_time;
    let (g, pso, grad) = (norm(Method::Grid), norm(Method::PsoRi), norm(Method::GradRi));
    let timing = verdict(
        g == 1.0 && pso < 1.0 && grad < 1.0 && pso < 0.2,
        format!("normalized time grid {g}, pso_ri {pso:.3}, grad_ri {grad:.3}, pso_cgi {:.3}, grad_cgi {:.3}", norm(Method::PsoCgi), norm(Method::GradCgi)),
    );
    (accuracy, timing)
}

fn case2() -> Verdict {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let nus = [50.0, 100.0, 150.0];
    let rows = run_case2(&cfg, 300, 106, &nus).unwrap();
    let t = start.elapsed();
    let gaps: Vec<f64> = nus
        .iter()
        .map(|&nu| median(&case2_gammas(&rows, Case2Scenario::Estimated, nu)) - median(&case2_gammas(&rows, Case2Scenario::ZeroAssumed, nu)))
        .collect();
    let monotone = gaps.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        gaps[2] >= 3.0 && monotone && within(t, 1800),
        format!("median gap (pso_ri - zero_velocity) at nu_max 50/100/150 = {:.2}/{:.2}/{:.2} dB, {:.0}s", gaps[0], gaps[1], gaps[2], t.as_secs_f64()),
    )
}

fn case3() -> Verdict {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let ncs = [1, 6, 12, 24];
    let rows = run_case3(&cfg, 300, 107, &ncs).unwrap();
    let t = start.elapsed();
    let med: Vec<f64> = ncs.iter().map(|&nc| median(&case3_gammas(&rows, nc))).collect();
    let monotone = med.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        med[3] - med[0] > 10.0 && monotone && within(t, 1800),
        format!("median gamma at Nc 1/6/12/24 = {:.2}/{:.2}/{:.2}/{:.2} dB, {:.0}s", med[0], med[1], med[2], med[3], t.as_secs_f64()),
    )
}

fn identifiability() -> Verdict {
    let start = Instant::now();
    let cfg = SimConfig { noise_scale: 1e-6, ..SimConfig::default() };
    let grid = cfg.grid().unwrap();
    let bounds = SearchBox::new(cfg.scenario.nu_max);
    let est = EstimatorConfig::default();
    let mut ok = 0;
    for i in 0..50u64 {
        let trial = Trial::build(&cfg, &grid, trial_seed(108, i), &TrialOptions::detection(cfg.scenario.nu_max)).unwrap();
        let obj = trial.objective().unwrap();
        let coarse = grid_search(&obj, &bounds, 41, false);
        let fine = gradient_refine(&obj, &bounds, coarse.velocity, &est);
        ok += (fine.velocity - trial.velocity).to_array().iter().all(|e| e.abs() <= 1.0) as usize;
    }
    let t = start.elapsed();
    verdict(ok >= 48 && within(t, 600), format!("{ok}/50 scenes within 1 m/s per component, {:.0}s", t.as_secs_f64()))
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cfisac")).args(args).output().unwrap()
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let runs: [(&str, &[&str]); 5] = [
        ("case1", &["--trials", "3", "--set", "estimator.grid_points=7"]),
        ("case2", &["--trials", "6"]),
        ("case3", &["--trials", "20"]),
        ("calibrate", &["--set", "detector.threshold=monte_carlo"]),
        ("detect", &[]),
    ];
    let mut differing = Vec::new();
    for (cmd, extra) in runs {
        let mut outputs = Vec::new();
        for threads in ["1", "4"] {
            let out = dir.path().join(format!("{cmd}-{threads}"));
            let mut args = vec![cmd, "--seed", "11", "--threads", threads, "--out-dir", out.to_str().unwrap()];
            args.extend_from_slice(extra);
            let o = cli(&args);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            outputs.push((out, o.stdout));
        }
        if outputs[0].1 != outputs[1].1 {
            differing.push(format!("{cmd} stdout"));
        }
        for name in csv_names(&outputs[0].0) {
            let a = std::fs::read(outputs[0].0.join(&name)).unwrap();
            let b = std::fs::read(outputs[1].0.join(&name)).ok();
            if Some(a) != b {
                differing.push(name);
            }
        }
    }
    if differing.is_empty() {
        verdict(true, "all CSVs and stdout byte-identical across --threads 1/4")
    } else {
        verdict(false, format!("differing outputs: {}", differing.join(", ")))
    }
}

fn csv_names(dir: &Path) -> Vec<String> {
    let Ok(entries) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut names: Vec<String> = entries.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

fn main() {
    let strict = std::env::var("CFISAC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut verdicts: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |n: u32, v: Verdict| {
        println!("criterion {n:>2}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push((n, v));
    };
    report(1, doppler_oracle());
    report(2, glrt_algebra());
    report(3, false_alarm());
    report(4, delay_invariance());
    let (c5, c6) = case1();
    report(5, c5);
    report(6, c6);
    report(7, case2());
    report(8, case3());
    report(9, identifiability());
    report(10, determinism());
    let failed: Vec<u32> = verdicts.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} PASS", verdicts.len() - failed.len(), verdicts.len());
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
