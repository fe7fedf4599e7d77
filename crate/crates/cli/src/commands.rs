use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ftspe::geometry::Vec3;
use ftspe::io::{
    parse_replay_csv, stream_to_replay, write_feature_csv, write_pose_csv, write_replay_csv, write_scenario_log,
    PoseRecord,
};
use ftspe::measurements::{FeaturePointSet, Landmarks};
use ftspe::observer::check_gain_robustness;
use ftspe::sim::{
    generate_truth, metrics, synthesize_stream, Estimator, EstimatorKind, FtsEstimator, MeasurementEpoch, Metrics,
    ScenarioLog, VelocitySource,
};

use crate::config::{parse_estimators, parse_seeds, Preset, RunConfig};
use crate::plot;
use crate::CliError;

/// Error tolerance used for reported settle times.
pub const SETTLE_TOL: f64 = 1e-2;

/// Config sources and command-line overrides, applied in that order.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub config: Option<PathBuf>,
    pub seeds: Option<String>,
    pub out: Option<PathBuf>,
    pub estimators: Option<String>,
    pub plot: Option<bool>,
    /// Value of `FTSPE_SEED`; replaces the config seeds, loses to `--seeds`.
    pub env_seed: Option<String>,
}

pub fn load_config(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read config `{}`: {e}", path.display())))?;
            RunConfig::parse(&text, o.preset, path.parent())
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => match o.preset {
            Some(p) => RunConfig::preset(p),
            None => return Err(CliError::Input("either --preset or --config is required".into())),
        },
    };
    if let Some(s) = &o.env_seed {
        let seed = s
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::Input(format!("FTSPE_SEED `{s}` is not an unsigned integer")))?;
        cfg.run.seeds = vec![seed];
    }
    if let Some(s) = &o.seeds {
        cfg.run.seeds = parse_seeds(s).map_err(|m| CliError::Input(format!("--seeds: {m}")))?;
    }
    if let Some(e) = &o.estimators {
        cfg.run.estimators = parse_estimators(e).map_err(|m| CliError::Input(format!("--estimators: {m}")))?;
    }
    if let Some(out) = &o.out {
        cfg.run.out = out.clone();
    }
    if let Some(p) = o.plot {
        cfg.run.plot = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Printed report plus the process exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: String,
    pub exit: i32,
}

impl Outcome {
    fn ok(report: String) -> Self {
        Self { report, exit: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub metrics: Metrics,
    /// Largest errors over the last third of the horizon.
    pub steady_phi: f64,
    pub steady_chi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub estimators: Vec<EstimatorSummary>,
}

impl SeedResult {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.metrics.kind == kind)
    }
}

pub fn summarize(log: &ScenarioLog) -> SeedResult {
    let t_end = log.truth.last().map_or(0.0, |s| s.t);
    let estimators = log
        .traces
        .iter()
        .map(|tr| {
            let tail = tr.samples.iter().filter(|s| s.t >= 2.0 * t_end / 3.0 - 1e-9);
            let (p, c) = tail.fold((0.0f64, 0.0f64), |(p, c), s| (p.max(s.phi), c.max(s.chi_norm)));
            EstimatorSummary {
                metrics: metrics(tr, SETTLE_TOL),
                steady_phi: p,
                steady_chi: c,
            }
        })
        .collect();
    SeedResult { seed: log.seed, estimators }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot write `{}`: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn opt_time(t: Option<f64>) -> String {
    t.map_or_else(|| "never".into(), |t| format!("{t:.2}"))
}

/// Runs every seed in parallel and writes logs, summaries and plots.
fn run_seeds(cfg: &RunConfig) -> Result<Vec<(ScenarioLog, SeedResult)>, CliError> {
    let scenario = cfg.scenario()?;
    let runs: Vec<_> = cfg.run.seeds.par_iter().map(|&seed| scenario.run(seed)).collect();
    let mut out = Vec::with_capacity(runs.len());
    for (seed, r) in cfg.run.seeds.iter().zip(runs) {
        let log = r.map_err(|e| CliError::Runtime(format!("seed {seed}: {e}")))?;
        let summary = summarize(&log);
        out.push((log, summary));
    }
    let dir = &cfg.run.out;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(&dir.join("config.ini"), &cfg.emit())?;
    for (log, _) in &out {
        write(&dir.join(format!("log-seed{}.csv", log.seed)), &write_scenario_log(log))?;
        if cfg.run.plot {
            plot::plot_log(log, dir, &format!("seed{}", log.seed)).map_err(|e| CliError::Runtime(format!("plot: {e}")))?;
        }
    }
    let results: Vec<&SeedResult> = out.iter().map(|(_, s)| s).collect();
    write(&dir.join("summary.csv"), &summary_csv(&results))?;
    write(&dir.join("timing.csv"), &timing_csv(&results))?;
    Ok(out)
}

fn summary_csv(results: &[&SeedResult]) -> String {
    let mut s = String::from("seed,estimator,rms_phi,rms_chi,settle_phi,settle_chi,steady_max_phi,steady_max_chi\n");
    for r in results {
        for e in &r.estimators {
            let m = &e.metrics;
            let _ = writeln!(
                s,
                "{},{},{:.16e},{:.16e},{},{},{:.16e},{:.16e}",
                r.seed,
                m.kind,
                m.rms_phi,
                m.rms_chi,
                m.settle_phi.map_or("never".into(), |t| format!("{t:.16e}")),
                m.settle_chi.map_or("never".into(), |t| format!("{t:.16e}")),
                e.steady_phi,
                e.steady_chi
            );
        }
    }
    s
}

fn timing_csv(results: &[&SeedResult]) -> String {
    let mut s = String::from("seed,estimator,wall_time_s\n");
    for r in results {
        for e in &r.estimators {
            let _ = writeln!(s, "{},{},{:.6e}", r.seed, e.metrics.kind, e.metrics.wall_time);
        }
    }
    s
}

fn summary_table(results: &[&SeedResult]) -> String {
    let mut s = format!(
        "{:>6}  {:<8} {:>12} {:>12} {:>10} {:>10} {:>14} {:>14} {:>12}\n",
        "seed", "est", "rms_phi", "rms_chi", "settle_phi", "settle_chi", "ss_max_phi", "ss_max_chi", "wall_s"
    );
    for r in results {
        for e in &r.estimators {
            let m = &e.metrics;
            let _ = writeln!(
                s,
                "{:>6}  {:<8} {:>12.4e} {:>12.4e} {:>10} {:>10} {:>14.4e} {:>14.4e} {:>12.4e}",
                r.seed,
                m.kind.label(),
                m.rms_phi,
                m.rms_chi,
                opt_time(m.settle_phi),
                opt_time(m.settle_chi),
                e.steady_phi,
                e.steady_chi,
                m.wall_time
            );
        }
    }
    s
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let runs = run_seeds(cfg)?;
    let results: Vec<&SeedResult> = runs.iter().map(|(_, s)| s).collect();
    let mut report = format!(
        "{} seed(s), errors settle below {SETTLE_TOL:e}; steady-state maxima over the last third of the horizon\n",
        results.len()
    );
    report.push_str(&summary_table(&results));
    let _ = writeln!(report, "outputs in {}", cfg.run.out.display());
    Ok(Outcome::ok(report))
}

/// Per-estimator means of the per-seed metrics.
fn means(results: &[&SeedResult], kind: EstimatorKind, f: impl Fn(&EstimatorSummary) -> f64) -> f64 {
    let xs: Vec<f64> = results.iter().filter_map(|r| r.get(kind)).map(f).collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Seeds on which `kind` has the lowest RMS attitude and position error.
pub fn wins(results: &[&SeedResult], kind: EstimatorKind) -> usize {
    results
        .iter()
        .filter(|r| {
            let Some(me) = r.get(kind) else { return false };
            r.estimators.iter().filter(|e| e.metrics.kind != kind).all(|e| {
                me.metrics.rms_phi < e.metrics.rms_phi && me.metrics.rms_chi < e.metrics.rms_chi
            })
        })
        .count()
}

pub fn compare(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.run.estimators.len() < 2 {
        return Err(CliError::Input("compare needs at least two estimators".into()));
    }
    let runs = run_seeds(cfg)?;
    let results: Vec<&SeedResult> = runs.iter().map(|(_, s)| s).collect();
    let kinds = &cfg.run.estimators;
    let mut t2 = format!("{:<22}", "RMS error");
    let mut t1 = format!("{:<22}", "Simulation time (s)");
    for k in kinds {
        let _ = write!(t2, "{:>12}", k.label());
        let _ = write!(t1, "{:>12}", k.label());
    }
    let mut att = format!("\n{:<22}", "Attitude error (rad)");
    let mut pos = format!("\n{:<22}", "Position error (m)");
    let mut wall = format!("\n{:<22}", "mean over seeds");
    for &k in kinds {
        let _ = write!(att, "{:>12.4}", means(&results, k, |e| e.metrics.rms_phi));
        let _ = write!(pos, "{:>12.4}", means(&results, k, |e| e.metrics.rms_chi));
        let _ = write!(wall, "{:>12.4e}", means(&results, k, |e| e.metrics.wall_time));
    }
    let mut report = String::new();
    let _ = writeln!(report, "{t2}{att}{pos}\n");
    let _ = writeln!(report, "{t1}{wall}\n");
    for &k in kinds {
        let _ = writeln!(report, "{} lowest on both RMS errors: {}/{} seeds", k.label(), wins(&results, k), results.len());
    }
    report.push('\n');
    report.push_str(&summary_table(&results));

    let mut csv = String::from("estimator,mean_rms_phi,mean_rms_chi\n");
    for &k in kinds {
        let _ = writeln!(
            csv,
            "{},{:.16e},{:.16e}",
            k,
            means(&results, k, |e| e.metrics.rms_phi),
            means(&results, k, |e| e.metrics.rms_chi)
        );
    }
    write(&cfg.run.out.join("rms_table.csv"), &csv)?;
    let _ = writeln!(report, "outputs in {}", cfg.run.out.display());
    Ok(Outcome::ok(report))
}

pub fn validate_gains(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let b = cfg
        .bounds
        .ok_or_else(|| CliError::Input("no [bounds] section: noise and error bounds are required".into()))?;
    let check = check_gain_robustness(&cfg.fts.gains, &b);
    let report = format!(
        "{} margin = {:.6e} Lambda = {:.6e} k0 = {:.6e}\n",
        if check.satisfied { "satisfied" } else { "violated" },
        check.margin,
        check.lambda,
        cfg.fts.gains.k0()
    );
    Ok(Outcome {
        report,
        exit: if check.satisfied { 0 } else { 1 },
    })
}

/// Writes the generating truth (relative to the first pose), the replay stream
/// and the landmark set for the first seed.
pub fn export(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let scenario = cfg.scenario()?;
    let seed = cfg.run.seeds[0];
    let truth = generate_truth(&scenario.trajectory).map_err(|e| CliError::Input(e.to_string()))?;
    let stream = synthesize_stream(&truth, &scenario.landmarks, &cfg.noise_spec(seed), scenario.trajectory.dt)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let g0_inv = truth[0].pose.inverse();
    let rel: Vec<PoseRecord> = truth
        .iter()
        .map(|s| PoseRecord {
            t: s.t,
            pose: g0_inv.compose(&s.pose),
            twist: s.twist,
        })
        .collect();
    let dir = &cfg.run.out;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(&dir.join("truth.csv"), &write_pose_csv(&rel))?;
    write(&dir.join("replay.csv"), &write_replay_csv(&stream_to_replay(&stream)))?;
    write(&dir.join("features.csv"), &write_feature_csv(&scenario.landmarks.points))?;
    Ok(Outcome::ok(format!(
        "exported {} epochs (seed {seed}, stream {}) to {}\n",
        truth.len(),
        &stream.digest()[..16],
        dir.display()
    )))
}

/// Runs the FTS observer over a recorded stream. The first frame defines the
/// inertial landmarks; velocities come from the measurement filter.
pub fn replay(file: &Path, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(file).map_err(|e| CliError::Input(format!("cannot read `{}`: {e}", file.display())))?;
    let records = parse_replay_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
    let points = FeaturePointSet::new(records[0].points.clone())
        .map_err(|e| CliError::Input(format!("{}: first frame: {e}", file.display())))?;
    let landmarks = Landmarks::new(points, &cfg.k_diag).map_err(|e| CliError::Input(e.to_string()))?;
    let n = records.len();
    let mean_dt = (records[n - 1].t - records[0].t) / (n - 1) as f64;
    let mut filter = cfg.filter_params();
    filter.dt = mean_dt;
    let mut fts = cfg.settings(&landmarks).fts;
    fts.velocity = VelocitySource::Filtered(filter);
    let epochs: Vec<MeasurementEpoch> = records
        .iter()
        .map(|r| MeasurementEpoch {
            t: r.t,
            frame: r.frame(),
            gyro: r.gyro,
            transvel: Vec3::zeros(),
        })
        .collect();
    let mut est = FtsEstimator::new(landmarks, fts, &cfg.initial_estimate(), &epochs[0])
        .map_err(|e| CliError::Input(e.to_string()))?;
    let record = |est: &FtsEstimator, t: f64| {
        let snap = est.snapshot();
        PoseRecord {
            t,
            pose: snap.pose(),
            twist: snap.twist(),
        }
    };
    let mut out = vec![record(&est, epochs[0].t)];
    for (k, w) in epochs.windows(2).enumerate() {
        est.step(&w[0], &w[1], w[1].t - w[0].t)
            .map_err(|e| CliError::Runtime(format!("estimator `fts` failed at step {k}: {e}")))?;
        out.push(record(&est, w[1].t));
    }
    let dir = &cfg.run.out;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("estimates.csv");
    write(&path, &write_pose_csv(&out))?;
    Ok(Outcome::ok(format!(
        "replayed {n} epochs ({} points, mean dt {mean_dt:.4} s); estimates in {}\n",
        records[0].points.len(),
        path.display()
    )))
}
