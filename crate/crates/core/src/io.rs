//! Text formats: landmark feature files, replay streams, scenario logs and
//! pose trajectories. Floats are written with 17 significant digits so every
//! value round-trips bit-exactly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, RotationMatrix, Twist, Vec3};
use crate::measurements::{FeatureFrame, FeaturePointSet};
use crate::sim::{EstimatorKind, MeasurementStream, ScenarioLog, TruthSample, RNG_ALGORITHM};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f(field: &str, line: usize, name: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{name}: `{}` is not a number", field.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{name}: non-finite value")));
    }
    Ok(v)
}

/// Records with 1-based line numbers; blank lines and `#` comments skipped.
fn records(text: &str) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn expect_header(rec: Option<&(usize, csv::StringRecord)>, expected: &[String]) -> Result<()> {
    let (line, rec) = rec.ok_or_else(|| parse_err(1, "empty file"))?;
    let got: Vec<String> = rec.iter().map(|s| s.to_ascii_lowercase()).collect();
    if got != expected {
        return Err(parse_err(*line, format!("expected header `{}`, got `{}`", expected.join(","), got.join(","))));
    }
    Ok(())
}

fn vec3_at(rec: &csv::StringRecord, start: usize, line: usize, name: &str) -> Result<Vec3> {
    Ok(Vec3::new(
        parse_f(&rec[start], line, name)?,
        parse_f(&rec[start + 1], line, name)?,
        parse_f(&rec[start + 2], line, name)?,
    ))
}

/// Feature file: header `x,y,z`, then one inertial point per row.
pub fn parse_feature_csv(text: &str) -> Result<FeaturePointSet> {
    let recs = records(text)?;
    expect_header(recs.first(), &["x".into(), "y".into(), "z".into()])?;
    let mut points = Vec::with_capacity(recs.len().saturating_sub(1));
    for (line, rec) in &recs[1..] {
        if rec.len() != 3 {
            return Err(parse_err(*line, format!("expected 3 fields, got {}", rec.len())));
        }
        points.push(vec3_at(rec, 0, *line, "point")?);
    }
    FeaturePointSet::new(points)
}

pub fn write_feature_csv(points: &FeaturePointSet) -> String {
    let mut s = String::from("x,y,z\n");
    for p in points.points() {
        let _ = writeln!(s, "{},{},{}", fmt_f(p.x), fmt_f(p.y), fmt_f(p.z));
    }
    s
}

/// One epoch of recorded sensor data: gyro rate and body-frame points.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub t: f64,
    pub gyro: Vec3,
    pub points: Vec<Vec3>,
}

impl ReplayRecord {
    pub fn frame(&self) -> FeatureFrame {
        FeatureFrame::new(self.points.clone(), self.t)
    }
}

fn replay_header(j: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "gx", "gy", "gz"].iter().map(|s| s.to_string()).collect();
    for i in 1..=j {
        for c in ["x", "y", "z"] {
            h.push(format!("p{i}{c}"));
        }
    }
    h
}

/// Replay file: `t,gx,gy,gz,p1x,p1y,p1z,...`, strictly increasing `t`, fixed point count.
pub fn parse_replay_csv(text: &str) -> Result<Vec<ReplayRecord>> {
    let recs = records(text)?;
    let (hline, header) = recs.first().ok_or_else(|| parse_err(1, "empty file"))?;
    if header.len() < 4 || (header.len() - 4) % 3 != 0 {
        return Err(parse_err(*hline, format!("header has {} columns; expected 4 + 3j", header.len())));
    }
    let j = (header.len() - 4) / 3;
    expect_header(recs.first(), &replay_header(j))?;
    if j < 3 {
        return Err(parse_err(*hline, format!("at least 3 points are required, header declares {j}")));
    }
    let mut out: Vec<ReplayRecord> = Vec::with_capacity(recs.len() - 1);
    for (line, rec) in &recs[1..] {
        if rec.len() != header.len() {
            let got = rec.len().saturating_sub(4) as f64 / 3.0;
            return Err(parse_err(
                *line,
                format!("row has {} fields ({got} points), header declares {j} points", rec.len()),
            ));
        }
        let t = parse_f(&rec[0], *line, "t")?;
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(parse_err(*line, format!("timestamp {t} does not increase (previous {})", prev.t)));
            }
        }
        let gyro = vec3_at(rec, 1, *line, "gyro")?;
        let points = (0..j).map(|i| vec3_at(rec, 4 + 3 * i, *line, "point")).collect::<Result<_>>()?;
        out.push(ReplayRecord { t, gyro, points });
    }
    if out.len() < 2 {
        return Err(parse_err(*hline, "replay needs at least two epochs"));
    }
    Ok(out)
}

pub fn write_replay_csv(records: &[ReplayRecord]) -> String {
    let j = records.first().map_or(0, |r| r.points.len());
    let mut s = replay_header(j).join(",");
    s.push('\n');
    for r in records {
        let mut fields = vec![fmt_f(r.t)];
        fields.extend(r.gyro.iter().map(|v| fmt_f(*v)));
        fields.extend(r.points.iter().flat_map(|p| p.iter().map(|v| fmt_f(*v))));
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn stream_to_replay(stream: &MeasurementStream) -> Vec<ReplayRecord> {
    stream
        .epochs
        .iter()
        .map(|e| ReplayRecord {
            t: e.t,
            gyro: e.gyro,
            points: e.frame.body_points.clone(),
        })
        .collect()
}

pub const SCENARIO_LOG_COLUMNS: [&str; 11] = ["t", "estimator", "phi", "chi_norm", "wx", "wy", "wz", "vx", "vy", "vz", "V"];

#[derive(Debug, Clone, PartialEq)]
pub struct LogMeta {
    pub seed: u64,
    pub dt: f64,
    pub gains_digest: String,
    pub stream_digest: String,
    pub rng: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub estimator: EstimatorKind,
    pub phi: f64,
    pub chi_norm: f64,
    pub omega_err: Vec3,
    pub upsilon_err: Vec3,
    /// NaN when the estimator has no Lyapunov function.
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub meta: LogMeta,
    pub rows: Vec<LogRow>,
}

/// Rows ordered by step, then by estimator in run order.
pub fn scenario_log_rows(log: &ScenarioLog) -> Vec<LogRow> {
    let n = log.truth.len();
    let mut rows = Vec::with_capacity(n * log.traces.len());
    for k in 0..n {
        for tr in &log.traces {
            let s = &tr.samples[k];
            rows.push(LogRow {
                t: s.t,
                estimator: tr.kind,
                phi: s.phi,
                chi_norm: s.chi_norm,
                omega_err: s.omega_err,
                upsilon_err: s.upsilon_err,
                v: s.v,
            });
        }
    }
    rows
}

pub fn write_scenario_log(log: &ScenarioLog) -> String {
    let mut s = format!(
        "# seed={} dt={} gains={} stream={} rng={}\n",
        log.seed,
        fmt_f(log.dt),
        log.gains_digest,
        log.stream_digest,
        RNG_ALGORITHM
    );
    s.push_str(&SCENARIO_LOG_COLUMNS.join(","));
    s.push('\n');
    for r in scenario_log_rows(log) {
        let mut fields = vec![fmt_f(r.t), r.estimator.name().to_string(), fmt_f(r.phi), fmt_f(r.chi_norm)];
        fields.extend(r.omega_err.iter().chain(r.upsilon_err.iter()).map(|v| fmt_f(*v)));
        fields.push(if r.v.is_nan() { "NaN".into() } else { fmt_f(r.v) });
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

fn parse_meta(line: &str, lineno: usize) -> Result<LogMeta> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| parse_err(lineno, "missing metadata line"))?;
    let (mut seed, mut dt, mut gains, mut stream, mut rng) = (None, None, None, None, None);
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, format!("metadata token `{tok}` is not key=value")))?;
        match k {
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| parse_err(lineno, format!("bad seed `{v}`")))?),
            "dt" => dt = Some(parse_f(v, lineno, "dt")?),
            "gains" => gains = Some(v.to_string()),
            "stream" => stream = Some(v.to_string()),
            "rng" => rng = Some(v.to_string()),
            other => return Err(parse_err(lineno, format!("unknown metadata key `{other}`"))),
        }
    }
    let missing = |k: &str| parse_err(lineno, format!("metadata key `{k}` missing"));
    let dt = dt.ok_or_else(|| missing("dt"))?;
    if dt <= 0.0 {
        return Err(parse_err(lineno, "dt must be positive"));
    }
    Ok(LogMeta {
        seed: seed.ok_or_else(|| missing("seed"))?,
        dt,
        gains_digest: gains.ok_or_else(|| missing("gains"))?,
        stream_digest: stream.ok_or_else(|| missing("stream"))?,
        rng: rng.ok_or_else(|| missing("rng"))?,
    })
}

pub fn parse_scenario_log(text: &str) -> Result<ParsedLog> {
    let first = text.lines().next().ok_or_else(|| parse_err(1, "empty file"))?;
    let meta = parse_meta(first, 1)?;
    let recs = records(text)?;
    let header: Vec<String> = SCENARIO_LOG_COLUMNS.iter().map(|s| s.to_ascii_lowercase()).collect();
    expect_header(recs.first(), &header)?;
    let mut rows = Vec::with_capacity(recs.len() - 1);
    for (line, rec) in &recs[1..] {
        if rec.len() != SCENARIO_LOG_COLUMNS.len() {
            return Err(parse_err(*line, format!("expected {} fields, got {}", SCENARIO_LOG_COLUMNS.len(), rec.len())));
        }
        let estimator: EstimatorKind = rec[1]
            .parse()
            .map_err(|_| parse_err(*line, format!("unknown estimator `{}`", &rec[1])))?;
        let v = if rec[10].eq_ignore_ascii_case("nan") {
            f64::NAN
        } else {
            parse_f(&rec[10], *line, "V")?
        };
        rows.push(LogRow {
            t: parse_f(&rec[0], *line, "t")?,
            estimator,
            phi: parse_f(&rec[2], *line, "phi")?,
            chi_norm: parse_f(&rec[3], *line, "chi_norm")?,
            omega_err: vec3_at(rec, 4, *line, "omega_err")?,
            upsilon_err: vec3_at(rec, 7, *line, "upsilon_err")?,
            v,
        });
    }
    Ok(ParsedLog { meta, rows })
}

/// Pose and twist at one time, as written by `export` (truth) and `replay` (estimates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub t: f64,
    pub pose: Pose,
    pub twist: Twist,
}

impl From<&TruthSample> for PoseRecord {
    fn from(s: &TruthSample) -> Self {
        Self {
            t: s.t,
            pose: s.pose,
            twist: s.twist,
        }
    }
}

pub const POSE_COLUMNS: [&str; 19] = [
    "t", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "bx", "by", "bz", "wx", "wy", "wz", "nx", "ny", "nz",
];

pub fn write_pose_csv(records: &[PoseRecord]) -> String {
    let mut s = POSE_COLUMNS.join(",");
    s.push('\n');
    for r in records {
        let m = r.pose.rotation.matrix();
        let mut fields = vec![fmt_f(r.t)];
        for i in 0..3 {
            for j in 0..3 {
                fields.push(fmt_f(m[(i, j)]));
            }
        }
        fields.extend(
            r.pose
                .position
                .iter()
                .chain(r.twist.angular.iter())
                .chain(r.twist.linear.iter())
                .map(|v| fmt_f(*v)),
        );
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

/// Rotation blocks must be proper rotations to [`GROUP_TOLERANCE`](crate::geometry::GROUP_TOLERANCE).
pub fn parse_pose_csv(text: &str) -> Result<Vec<PoseRecord>> {
    let recs = records(text)?;
    let header: Vec<String> = POSE_COLUMNS.iter().map(|s| s.to_string()).collect();
    expect_header(recs.first(), &header)?;
    let mut out = Vec::with_capacity(recs.len() - 1);
    for (line, rec) in &recs[1..] {
        if rec.len() != POSE_COLUMNS.len() {
            return Err(parse_err(*line, format!("expected {} fields, got {}", POSE_COLUMNS.len(), rec.len())));
        }
        let vals = (0..POSE_COLUMNS.len())
            .map(|i| parse_f(&rec[i], *line, POSE_COLUMNS[i]))
            .collect::<Result<Vec<f64>>>()?;
        let m = Mat3::from_row_slice(&vals[1..10]);
        let rotation = RotationMatrix::new(m).map_err(|e| parse_err(*line, e.to_string()))?;
        out.push(PoseRecord {
            t: vals[0],
            pose: Pose::new(rotation, Vec3::new(vals[10], vals[11], vals[12])),
            twist: Twist::new(Vec3::new(vals[13], vals[14], vals[15]), Vec3::new(vals[16], vals[17], vals[18])),
        });
    }
    Ok(out)
}
