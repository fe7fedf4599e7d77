//! Run configuration: flat `key = value` text grouped in `[section]`s, plus the
//! built-in presets.
//!
//! Numbers accept decimal, rational (`13/11`) and π-multiple (`0.9pi`) literals;
//! vectors are comma-separated numbers, optionally in brackets. Emission prints
//! every key with shortest round-trip floats, so `parse(emit(c)) == c`.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ftspe::baselines::{DqMekfParams, VpeParams};
use ftspe::geometry::{exp_so3, Mat3, Mat6, Pose, Twist, Vec3};
use ftspe::io::parse_feature_csv;
use ftspe::measurements::{FeaturePointSet, Landmarks, NoiseDistribution, PointNoise};
use ftspe::observer::{ObserverGains, RobustnessBounds};
use ftspe::sim::{
    EstimatorKind, EstimatorSettings, FtsConfig, InitialEstimate, NoiseSpec, Scenario, TrajectorySpec, VelocityProfile,
    VelocitySource,
};
use ftspe::velocity_filter::{FilterParams, DEFAULT_LAMBDA, DEFAULT_R};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper71NoiseFree,
    Paper71Noisy,
    Paper72,
    Paper73Like,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Self::Paper71NoiseFree, Self::Paper71Noisy, Self::Paper72, Self::Paper73Like];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Paper71NoiseFree => "paper-7.1-noisefree",
            Self::Paper71Noisy => "paper-7.1-noisy",
            Self::Paper72 => "paper-7.2",
            Self::Paper73Like => "paper-7.3-like",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
                format!("unknown preset `{}` (expected one of {})", s.trim(), names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Constant,
    Sinusoidal { amp_omega: Vec3, amp_nu: Vec3, frequency: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    /// Rotation vector of `R₀`.
    pub r0: Vec3,
    pub b0: Vec3,
    pub omega0: Vec3,
    pub nu0: Vec3,
    pub profile: Profile,
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub gyro_std_deg: f64,
    pub transvel_std: f64,
    pub point_dist: NoiseDistribution,
    pub point_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityMode {
    Measured,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtsSection {
    pub gains: ObserverGains,
    pub substeps: usize,
    pub velocity: VelocityMode,
    pub filter_points: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConfig {
    /// Rotation vector of `R̂₀`.
    pub r_hat0: Vec3,
    pub b_hat0: Vec3,
    pub omega_hat0: Vec3,
    pub nu_hat0: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub estimators: Vec<EstimatorKind>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub run: RunSection,
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseConfig,
    pub feature_file: Option<PathBuf>,
    pub k_diag: Vec3,
    pub fts: FtsSection,
    /// `r` and `λ_c` of the measurement filter.
    pub filter_r: f64,
    pub filter_lambda: f64,
    pub vpe: VpeParams,
    pub dqmekf_p0: [f64; 6],
    pub initial: InitialConfig,
    pub bounds: Option<RobustnessBounds>,
}

const REF_GYRO_STD_DEG: f64 = 9.1673;
const REF_TRANSVEL_STD: f64 = 0.02;
const REF_POINT_STD: f64 = 0.15;

/// ε bound for Gaussian noise of per-axis std σ: the 3σ box diagonal.
fn three_sigma_norm(std: f64) -> f64 {
    3.0 * 3f64.sqrt() * std
}

fn preset_bounds(noise: &NoiseConfig) -> RobustnessBounds {
    RobustnessBounds {
        eps_omega: three_sigma_norm(noise.gyro_std_deg.to_radians()),
        eps_upsilon: three_sigma_norm(noise.transvel_std),
        q_bar_max: FeaturePointSet::default_tetrahedron().mean().norm(),
        s_l_max: 0.5,
        y_max: 0.5,
        psi_max: 0.5,
        phi_max: 0.5,
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let xi = TrajectorySpec::reference();
        let VelocityProfile::Constant(xi0) = xi.profile else {
            unreachable!("reference trajectory has a constant twist")
        };
        let init = InitialEstimate::reference();
        let mut c = Self {
            preset: Some(preset),
            run: RunSection {
                estimators: vec![EstimatorKind::Fts],
                seeds: vec![1],
                out: PathBuf::from("out"),
                plot: false,
            },
            trajectory: TrajectoryConfig {
                r0: Vec3::zeros(),
                b0: Vec3::zeros(),
                omega0: xi0.angular,
                nu0: xi0.linear,
                profile: Profile::Constant,
                dt: xi.dt,
                t_final: xi.t_final,
            },
            noise: NoiseConfig {
                gyro_std_deg: 0.0,
                transvel_std: 0.0,
                point_dist: NoiseDistribution::Uniform,
                point_std: 0.0,
            },
            feature_file: None,
            k_diag: Vec3::new(3.0, 2.0, 1.0),
            fts: FtsSection {
                gains: ObserverGains::reference(),
                substeps: 400,
                velocity: VelocityMode::Measured,
                filter_points: false,
            },
            filter_r: DEFAULT_R,
            filter_lambda: DEFAULT_LAMBDA,
            vpe: VpeParams::default(),
            dqmekf_p0: [1.0, 1.0, 1.0, 4.0, 4.0, 4.0],
            initial: InitialConfig {
                r_hat0: Vec3::new(0.9 * std::f64::consts::PI, 0.0, 0.0),
                b_hat0: init.g_hat.position,
                omega_hat0: init.xi_hat.angular,
                nu_hat0: init.xi_hat.linear,
            },
            bounds: None,
        };
        match preset {
            Preset::Paper71NoiseFree => {}
            Preset::Paper71Noisy | Preset::Paper72 => {
                c.noise.gyro_std_deg = REF_GYRO_STD_DEG;
                c.noise.transvel_std = REF_TRANSVEL_STD;
                c.fts.velocity = VelocityMode::Filtered;
                c.run.seeds = (1..=10).collect();
                if preset == Preset::Paper72 {
                    c.noise.point_std = REF_POINT_STD;
                    c.run.estimators = EstimatorKind::ALL.to_vec();
                    c.run.seeds = (1..=5).collect();
                }
            }
            Preset::Paper73Like => {
                c.trajectory.dt = 0.0702;
                c.trajectory.t_final = 30.82;
                c.filter_lambda = 1.0;
                c.fts.velocity = VelocityMode::Filtered;
                c.initial = InitialConfig {
                    r_hat0: Vec3::zeros(),
                    b_hat0: Vec3::zeros(),
                    omega_hat0: Vec3::zeros(),
                    nu_hat0: Vec3::zeros(),
                };
            }
        }
        c.bounds = Some(preset_bounds(&c.noise));
        c
    }

    /// Checks values that individual key parsers cannot see.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        let t = &self.trajectory;
        if !(t.dt > 0.0) || !(t.t_final >= t.dt) {
            return bad(format!("trajectory needs dt > 0 and T >= dt, got dt = {}, T = {}", t.dt, t.t_final));
        }
        if self.run.seeds.is_empty() {
            return bad("seeds list is empty".into());
        }
        if self.run.estimators.is_empty() {
            return bad("estimators list is empty".into());
        }
        if self.fts.substeps == 0 {
            return bad("fts substeps must be at least 1".into());
        }
        let n = &self.noise;
        if [n.gyro_std_deg, n.transvel_std, n.point_std].iter().any(|v| !(*v >= 0.0)) {
            return bad("noise standard deviations must be nonnegative".into());
        }
        self.fts.gains.validate().map_err(|e| CliError::Input(e.to_string()))?;
        self.vpe.validate().map_err(|e| CliError::Input(e.to_string()))?;
        self.filter_params().validate().map_err(|e| CliError::Input(e.to_string()))?;
        if self.dqmekf_p0.iter().any(|v| !(*v > 0.0)) {
            return bad("dqmekf p0 entries must be positive".into());
        }
        if let Some(f) = &self.feature_file {
            if !f.is_file() {
                return bad(format!("feature file `{}` does not exist", f.display()));
            }
        }
        Ok(())
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            r: self.filter_r,
            lambda_c: self.filter_lambda,
            ..FilterParams::new(self.trajectory.dt)
        }
    }

    pub fn feature_points(&self) -> Result<FeaturePointSet, CliError> {
        match &self.feature_file {
            None => Ok(FeaturePointSet::default_tetrahedron()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("cannot read `{}`: {e}", path.display())))?;
                parse_feature_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn trajectory_spec(&self) -> TrajectorySpec {
        let t = &self.trajectory;
        let base = Twist::new(t.omega0, t.nu0);
        TrajectorySpec {
            r0: exp_so3(&t.r0),
            b0: t.b0,
            profile: match t.profile {
                Profile::Constant => VelocityProfile::Constant(base),
                Profile::Sinusoidal {
                    amp_omega,
                    amp_nu,
                    frequency,
                } => VelocityProfile::Sinusoidal {
                    base,
                    amplitude: Twist::new(amp_omega, amp_nu),
                    frequency,
                },
            },
            dt: t.dt,
            t_final: t.t_final,
        }
    }

    pub fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            gyro_std: self.noise.gyro_std_deg.to_radians(),
            transvel_std: self.noise.transvel_std,
            point: PointNoise {
                distribution: self.noise.point_dist,
                std: self.noise.point_std,
            },
            seed,
        }
    }

    pub fn initial_estimate(&self) -> InitialEstimate {
        let i = &self.initial;
        InitialEstimate {
            g_hat: Pose::new(exp_so3(&i.r_hat0), i.b_hat0),
            xi_hat: Twist::new(i.omega_hat0, i.nu_hat0),
        }
    }

    /// Estimator settings for a given landmark set.
    pub fn settings(&self, landmarks: &Landmarks) -> EstimatorSettings {
        let pts = landmarks.points.points();
        let rho = (pts.iter().map(|q| (q - landmarks.q_bar).norm_squared()).sum::<f64>() / pts.len() as f64).sqrt();
        let mut dq = DqMekfParams::from_point_noise(
            self.noise.gyro_std_deg.to_radians(),
            self.noise.transvel_std,
            self.noise.point_std,
            pts.len(),
            rho,
            landmarks.q_bar.norm(),
        );
        dq.p0 = Mat6::from_diagonal(&self.dqmekf_p0.into());
        EstimatorSettings {
            fts: FtsConfig {
                gains: self.fts.gains,
                substeps: self.fts.substeps,
                velocity: match self.fts.velocity {
                    VelocityMode::Measured => VelocitySource::Measured,
                    VelocityMode::Filtered => VelocitySource::Filtered(self.filter_params()),
                },
                filter_points: self.fts.filter_points,
            },
            vpe: self.vpe,
            dqmekf: dq,
        }
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.validate()?;
        let landmarks =
            Landmarks::new(self.feature_points()?, &self.k_diag).map_err(|e| CliError::Input(e.to_string()))?;
        Ok(Scenario {
            trajectory: self.trajectory_spec(),
            settings: self.settings(&landmarks),
            landmarks,
            noise: self.noise_spec(0),
            init: self.initial_estimate(),
            estimators: self.run.estimators.clone(),
        })
    }

    pub fn emit(&self) -> String {
        let mut s = String::from("# ftspe run configuration\n[run]\n");
        let mut kv = |k: &str, v: String| {
            if let Some(name) = k.strip_prefix('[') {
                let _ = writeln!(s, "\n[{name}");
            } else {
                let _ = writeln!(s, "{k} = {v}");
            }
        };
        if let Some(p) = self.preset {
            kv("preset", p.name().into());
        }
        kv("estimators", self.run.estimators.iter().map(|e| e.name()).collect::<Vec<_>>().join(", "));
        kv("seeds", seeds_s(&self.run.seeds));
        kv("out", self.run.out.display().to_string());
        kv("plot", self.run.plot.to_string());

        let t = &self.trajectory;
        kv("[trajectory]", String::new());
        kv("R0", vec_s(&t.r0));
        kv("b0", vec_s(&t.b0));
        kv("Omega0", vec_s(&t.omega0));
        kv("nu0", vec_s(&t.nu0));
        match t.profile {
            Profile::Constant => kv("profile", "constant".into()),
            Profile::Sinusoidal {
                amp_omega,
                amp_nu,
                frequency,
            } => {
                kv("profile", "sinusoidal".into());
                kv("amplitude_Omega", vec_s(&amp_omega));
                kv("amplitude_nu", vec_s(&amp_nu));
                kv("frequency", num(frequency));
            }
        }
        kv("dt", num(t.dt));
        kv("T", num(t.t_final));

        let n = &self.noise;
        kv("[noise]", String::new());
        kv("gyro_std_deg", num(n.gyro_std_deg));
        kv("transvel_std", num(n.transvel_std));
        kv(
            "point_dist",
            match n.point_dist {
                NoiseDistribution::Uniform => "uniform",
                NoiseDistribution::Gaussian => "gaussian",
            }
            .into(),
        );
        kv("point_std", num(n.point_std));

        kv("[features]", String::new());
        if let Some(f) = &self.feature_file {
            kv("file", f.display().to_string());
        }
        kv("K", vec_s(&self.k_diag));

        let g = &self.fts.gains;
        kv("[fts]", String::new());
        kv("p", num(g.p));
        kv("kappa", num(g.kappa));
        kv("k_p", num(g.k_p));
        kv("k_omega", num(g.k_omega));
        kv("k_upsilon", num(g.k_upsilon));
        kv("alpha1", num(g.alpha1));
        kv("alpha2", num(g.alpha2));
        kv("eps_reg", num(g.eps_reg));
        kv("substeps", self.fts.substeps.to_string());
        kv(
            "velocity",
            match self.fts.velocity {
                VelocityMode::Measured => "measured",
                VelocityMode::Filtered => "filtered",
            }
            .into(),
        );
        kv("filter_points", self.fts.filter_points.to_string());

        kv("[filter]", String::new());
        kv("r", num(self.filter_r));
        kv("lambda_c", num(self.filter_lambda));

        let v = &self.vpe;
        kv("[vpe]", String::new());
        kv("J", mat_s(&v.j));
        kv("M", mat_s(&v.m));
        kv("D_t", mat_s(&v.d_t));
        kv("D_r", mat_s(&v.d_r));
        kv("kappa", num(v.kappa));
        kv("phi_prime", num(v.phi_prime));

        kv("[dqmekf]", String::new());
        kv("P0", list_s(&self.dqmekf_p0));

        let i = &self.initial;
        kv("[initial]", String::new());
        kv("R_hat0", vec_s(&i.r_hat0));
        kv("b_hat0", vec_s(&i.b_hat0));
        kv("Omega_hat0", vec_s(&i.omega_hat0));
        kv("nu_hat0", vec_s(&i.nu_hat0));

        if let Some(b) = &self.bounds {
            kv("[bounds]", String::new());
            kv("eps_omega", num(b.eps_omega));
            kv("eps_upsilon", num(b.eps_upsilon));
            kv("q_bar_max", num(b.q_bar_max));
            kv("s_L_max", num(b.s_l_max));
            kv("y_max", num(b.y_max));
            kv("Psi_max", num(b.psi_max));
            kv("Phi_max", num(b.phi_max));
        }
        s
    }

    /// Parses a config file. A `preset` key under `[run]` selects the base values;
    /// otherwise `base` is used. Relative feature paths resolve against `dir`.
    pub fn parse(text: &str, base: Option<Preset>, dir: Option<&Path>) -> Result<Self, CliError> {
        let entries = lex(text)?;
        let preset = entries
            .iter()
            .find(|e| e.section == "run" && e.key == "preset")
            .map(|e| e.value.parse::<Preset>().map_err(|m| line_err(e.line, m)))
            .transpose()?
            .or(base);
        let mut c = Self::preset(preset.unwrap_or(Preset::Paper71NoiseFree));
        c.preset = preset;
        let mut bounds_seen = false;
        let mut bounds = c.bounds.filter(|_| preset.is_some()).unwrap_or(RobustnessBounds {
            eps_omega: f64::NAN,
            eps_upsilon: f64::NAN,
            q_bar_max: f64::NAN,
            s_l_max: f64::NAN,
            y_max: f64::NAN,
            psi_max: f64::NAN,
            phi_max: f64::NAN,
        });
        let mut profile_kind: Option<(usize, String)> = None;
        let (mut amp_omega, mut amp_nu, mut frequency) = (None, None, None);
        for e in &entries {
            let l = e.line;
            let v = e.value.as_str();
            let g = &mut c.fts.gains;
            match (e.section.as_str(), e.key.as_str()) {
                ("run", "preset") => {}
                ("run", "estimators") => c.run.estimators = parse_estimators(v).map_err(|m| line_err(l, m))?,
                ("run", "seeds") => c.run.seeds = parse_seeds(v).map_err(|m| line_err(l, m))?,
                ("run", "out") => c.run.out = PathBuf::from(v),
                ("run", "plot") => c.run.plot = boolean(v, l)?,
                ("trajectory", "R0") => c.trajectory.r0 = vec3(v, l)?,
                ("trajectory", "b0") => c.trajectory.b0 = vec3(v, l)?,
                ("trajectory", "Omega0") => c.trajectory.omega0 = vec3(v, l)?,
                ("trajectory", "nu0") => c.trajectory.nu0 = vec3(v, l)?,
                ("trajectory", "profile") => profile_kind = Some((l, v.to_ascii_lowercase())),
                ("trajectory", "amplitude_Omega") => amp_omega = Some(vec3(v, l)?),
                ("trajectory", "amplitude_nu") => amp_nu = Some(vec3(v, l)?),
                ("trajectory", "frequency") => frequency = Some(scalar(v, l)?),
                ("trajectory", "dt") => c.trajectory.dt = positive(v, l)?,
                ("trajectory", "T") => c.trajectory.t_final = positive(v, l)?,
                ("noise", "gyro_std_deg") => c.noise.gyro_std_deg = nonneg(v, l)?,
                ("noise", "transvel_std") => c.noise.transvel_std = nonneg(v, l)?,
                ("noise", "point_std") => c.noise.point_std = nonneg(v, l)?,
                ("noise", "point_dist") => {
                    c.noise.point_dist = match v.to_ascii_lowercase().as_str() {
                        "uniform" => NoiseDistribution::Uniform,
                        "gaussian" => NoiseDistribution::Gaussian,
                        other => return Err(line_err(l, format!("point_dist must be uniform or gaussian, got `{other}`"))),
                    }
                }
                ("features", "file") => {
                    let p = PathBuf::from(v);
                    c.feature_file = Some(match dir {
                        Some(d) if p.is_relative() => d.join(p),
                        _ => p,
                    });
                }
                ("features", "K") => c.k_diag = vec3(v, l)?,
                ("fts", "p") => g.p = positive(v, l)?,
                ("fts", "kappa") => g.kappa = positive(v, l)?,
                ("fts", "k_p") => g.k_p = positive(v, l)?,
                ("fts", "k_omega") => g.k_omega = positive(v, l)?,
                ("fts", "k_upsilon") => g.k_upsilon = positive(v, l)?,
                ("fts", "alpha1") => g.alpha1 = positive(v, l)?,
                ("fts", "alpha2") => g.alpha2 = positive(v, l)?,
                ("fts", "eps_reg") => g.eps_reg = positive(v, l)?,
                ("fts", "substeps") => {
                    c.fts.substeps = v
                        .parse()
                        .ok()
                        .filter(|n| *n > 0)
                        .ok_or_else(|| line_err(l, format!("substeps must be a positive integer, got `{v}`")))?
                }
                ("fts", "velocity") => {
                    c.fts.velocity = match v.to_ascii_lowercase().as_str() {
                        "measured" => VelocityMode::Measured,
                        "filtered" => VelocityMode::Filtered,
                        other => return Err(line_err(l, format!("velocity must be measured or filtered, got `{other}`"))),
                    }
                }
                ("fts", "filter_points") => c.fts.filter_points = boolean(v, l)?,
                ("filter", "r") => c.filter_r = positive(v, l)?,
                ("filter", "lambda_c") => c.filter_lambda = positive(v, l)?,
                ("vpe", "J") => c.vpe.j = mat3(v, l)?,
                ("vpe", "M") => c.vpe.m = mat3(v, l)?,
                ("vpe", "D_t") => c.vpe.d_t = mat3(v, l)?,
                ("vpe", "D_r") => c.vpe.d_r = mat3(v, l)?,
                ("vpe", "kappa") => c.vpe.kappa = positive(v, l)?,
                ("vpe", "phi_prime") => c.vpe.phi_prime = positive(v, l)?,
                ("dqmekf", "P0") => {
                    let xs = numbers(v, l)?;
                    c.dqmekf_p0 = xs
                        .try_into()
                        .map_err(|xs: Vec<f64>| line_err(l, format!("P0 needs 6 values, got {}", xs.len())))?;
                }
                ("initial", "R_hat0") => c.initial.r_hat0 = vec3(v, l)?,
                ("initial", "b_hat0") => c.initial.b_hat0 = vec3(v, l)?,
                ("initial", "Omega_hat0") => c.initial.omega_hat0 = vec3(v, l)?,
                ("initial", "nu_hat0") => c.initial.nu_hat0 = vec3(v, l)?,
                ("bounds", key) => {
                    bounds_seen = true;
                    let x = nonneg(v, l)?;
                    match key {
                        "eps_omega" => bounds.eps_omega = x,
                        "eps_upsilon" => bounds.eps_upsilon = x,
                        "q_bar_max" => bounds.q_bar_max = x,
                        "s_L_max" => bounds.s_l_max = x,
                        "y_max" => bounds.y_max = x,
                        "Psi_max" => bounds.psi_max = x,
                        "Phi_max" => bounds.phi_max = x,
                        other => return Err(line_err(l, format!("unknown key `{other}` in [bounds]"))),
                    }
                }
                (section, key) => return Err(line_err(l, format!("unknown key `{key}` in [{section}]"))),
            }
        }
        if let Some((l, kind)) = profile_kind {
            c.trajectory.profile = match kind.as_str() {
                "constant" => Profile::Constant,
                "sinusoidal" => Profile::Sinusoidal {
                    amp_omega: amp_omega.ok_or_else(|| line_err(l, "sinusoidal profile needs amplitude_Omega"))?,
                    amp_nu: amp_nu.ok_or_else(|| line_err(l, "sinusoidal profile needs amplitude_nu"))?,
                    frequency: frequency.ok_or_else(|| line_err(l, "sinusoidal profile needs frequency"))?,
                },
                other => return Err(line_err(l, format!("profile must be constant or sinusoidal, got `{other}`"))),
            };
        }
        let all_set = [
            bounds.eps_omega,
            bounds.eps_upsilon,
            bounds.q_bar_max,
            bounds.s_l_max,
            bounds.y_max,
            bounds.psi_max,
            bounds.phi_max,
        ]
        .iter()
        .all(|x| !x.is_nan());
        c.bounds = match (preset.is_some() || bounds_seen, all_set) {
            (false, _) => None,
            (true, true) => Some(bounds),
            (true, false) => return Err(CliError::Input("[bounds] section is incomplete".into())),
        };
        Ok(c)
    }
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn line_err(line: usize, m: impl Into<String>) -> CliError {
    CliError::Input(format!("config line {line}: {}", m.into()))
}

fn lex(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut section: Option<String> = None;
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            const SECTIONS: [&str; 10] =
                ["run", "trajectory", "noise", "features", "fts", "filter", "vpe", "dqmekf", "initial", "bounds"];
            if !SECTIONS.contains(&name) {
                return Err(line_err(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| line_err(line, format!("expected `key = value`, got `{s}`")))?;
        let sec = section
            .clone()
            .ok_or_else(|| line_err(line, "key outside of any [section]"))?;
        let key = k.trim().to_string();
        if out.iter().any(|e| e.section == sec && e.key == key) {
            return Err(line_err(line, format!("duplicate key `{key}` in [{sec}]")));
        }
        out.push(Entry {
            line,
            section: sec,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

/// Decimal, `a/b`, or `<c>pi` literal.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let bad = || format!("`{s}` is not a number");
    let x = if let Some(c) = s.strip_suffix("pi") {
        let c = c.trim().trim_end_matches('*').trim();
        let coeff = match c {
            "" => 1.0,
            "-" => -1.0,
            c => parse_number(c)?,
        };
        coeff * std::f64::consts::PI
    } else if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        if b == 0.0 {
            return Err(format!("`{s}` divides by zero"));
        }
        a / b
    } else {
        s.parse().map_err(|_| bad())?
    };
    if !x.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(x)
}

fn scalar(v: &str, line: usize) -> Result<f64, CliError> {
    parse_number(v).map_err(|m| line_err(line, m))
}

fn positive(v: &str, line: usize) -> Result<f64, CliError> {
    let x = scalar(v, line)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(line_err(line, format!("value must be positive, got {x}")))
    }
}

fn nonneg(v: &str, line: usize) -> Result<f64, CliError> {
    let x = scalar(v, line)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(line_err(line, format!("value must be nonnegative, got {x}")))
    }
}

fn boolean(v: &str, line: usize) -> Result<bool, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(line_err(line, format!("expected true or false, got `{other}`"))),
    }
}

fn numbers(v: &str, line: usize) -> Result<Vec<f64>, CliError> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|x| scalar(x, line)).collect()
}

fn vec3(v: &str, line: usize) -> Result<Vec3, CliError> {
    let xs = numbers(v, line)?;
    if xs.len() != 3 {
        return Err(line_err(line, format!("expected 3 values, got {}", xs.len())));
    }
    Ok(Vec3::from_column_slice(&xs))
}

/// Three values are a diagonal; nine are row-major.
fn mat3(v: &str, line: usize) -> Result<Mat3, CliError> {
    let xs = numbers(v, line)?;
    match xs.len() {
        3 => Ok(Mat3::from_diagonal(&Vec3::from_column_slice(&xs))),
        9 => Ok(Mat3::from_row_slice(&xs)),
        n => Err(line_err(line, format!("expected 3 (diagonal) or 9 (row-major) values, got {n}"))),
    }
}

/// Inverse of [`parse_seeds`]; a lone seed is written as a one-element range.
fn seeds_s(seeds: &[u64]) -> String {
    match seeds {
        [a] => format!("{a}..{a}"),
        [a, .., b] if seeds.windows(2).all(|w| w[1] == w[0] + 1) => format!("{a}..{b}"),
        _ => seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", "),
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn list_s(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", ")
}

fn vec_s(v: &Vec3) -> String {
    list_s(v.as_slice())
}

fn mat_s(m: &Mat3) -> String {
    if *m == Mat3::from_diagonal(&m.diagonal()) {
        vec_s(&m.diagonal())
    } else {
        list_s(m.transpose().as_slice())
    }
}

pub fn parse_estimators(s: &str) -> Result<Vec<EstimatorKind>, String> {
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let k: EstimatorKind = name.parse().map_err(|e: ftspe::Error| e.to_string())?;
        if out.contains(&k) {
            return Err(format!("estimator `{name}` listed twice"));
        }
        out.push(k);
    }
    Ok(out)
}

/// `N` means seeds `1..=N`; `a..b` is an inclusive range; otherwise a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let int = |x: &str| x.trim().parse::<u64>().map_err(|_| format!("`{}` is not a seed", x.trim()));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (int(a)?, int(b)?);
        if a > b {
            return Err(format!("empty seed range {a}..{b}"));
        }
        return Ok((a..=b).collect());
    }
    if !s.contains(',') {
        return Ok((1..=int(s)?).collect());
    }
    s.split(',').filter(|x| !x.trim().is_empty()).map(int).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn number_literals() {
        assert_eq!(parse_number("13/11").unwrap(), 13.0 / 11.0);
        assert_eq!(parse_number("0.9pi").unwrap(), 0.9 * std::f64::consts::PI);
        assert_eq!(parse_number("0.9 * pi").unwrap(), 0.9 * std::f64::consts::PI);
        assert_eq!(parse_number("-pi").unwrap(), -std::f64::consts::PI);
        assert_eq!(parse_number("1e-9").unwrap(), 1e-9);
        assert!(parse_number("1/0").is_err());
        assert!(parse_number("inf").is_err());
        assert!(parse_number("ten").is_err());
    }

    #[test]
    fn presets_round_trip() {
        for p in Preset::ALL {
            let c = RunConfig::preset(p);
            c.validate().unwrap();
            let text = c.emit();
            let back = RunConfig::parse(&text, None, None).unwrap();
            assert_eq!(back, c, "{p}");
            assert_eq!(back.emit(), text);
        }
    }

    #[test]
    fn preset_constants_by_symbol() {
        let text = "[run]\npreset = paper-7.2\n[fts]\np = 13/11\nk_p = 10.1\n";
        let c = RunConfig::parse(text, None, None).unwrap();
        assert_eq!(c, RunConfig::preset(Preset::Paper72));
        let emitted = c.emit();
        for line in ["k_p = 10.1", "k_upsilon = 10.02", "k_omega = 11.01", "alpha1 = 88.65", "alpha2 = 0.9609", "kappa = 1.1", "dt = 0.1", "T = 30"] {
            assert!(emitted.contains(line), "{line}");
        }
    }

    #[test]
    fn preset_values() {
        let c = RunConfig::preset(Preset::Paper73Like);
        assert_eq!(c.trajectory.dt, 0.0702);
        assert_eq!(c.filter_lambda, 1.0);
        let c = RunConfig::preset(Preset::Paper72);
        assert_eq!(c.noise.point_dist, NoiseDistribution::Uniform);
        assert_eq!(c.noise.point_std, 0.15);
        assert_eq!(c.noise_spec(0).gyro_std, 9.1673f64.to_radians());
        assert_eq!(c.run.estimators.len(), 3);
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::parse("[fts]\nk_p = 10.1\nk_q = 3\n", None, None).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = RunConfig::parse("[fts]\nk_p = -1\n", None, None).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::parse("k_p = 1\n", None, None).is_err());
        assert!(RunConfig::parse("[nope]\n", None, None).is_err());
        assert!(RunConfig::parse("[fts]\nk_p = 1\nk_p = 2\n", None, None).is_err());
        assert!(RunConfig::parse("[run]\npreset = paper-9\n", None, None).is_err());
    }

    #[test]
    fn bounds_absent_without_preset() {
        let c = RunConfig::parse("[fts]\nk_p = 10.1\n", None, None).unwrap();
        assert!(c.bounds.is_none());
        let partial = "[bounds]\neps_omega = 0\n";
        assert!(RunConfig::parse(partial, None, None).is_err());
    }

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3..5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seeds("7, 9").unwrap(), vec![7, 9]);
        assert_eq!(parse_seeds("7,").unwrap(), vec![7]);
        assert!(parse_seeds("").unwrap().is_empty());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn sinusoidal_profile_round_trip() {
        let text = "[trajectory]\nprofile = sinusoidal\namplitude_Omega = 0.1, 0, 0\namplitude_nu = [0, 0.2, 0]\nfrequency = 1/4\n";
        let c = RunConfig::parse(text, None, None).unwrap();
        assert!(matches!(c.trajectory.profile, Profile::Sinusoidal { frequency, .. } if frequency == 0.25));
        assert_eq!(RunConfig::parse(&c.emit(), None, None).unwrap(), c);
        assert!(RunConfig::parse("[trajectory]\nprofile = sinusoidal\n", None, None).is_err());
    }

    proptest! {
        #[test]
        fn emit_parse_idempotent(
            kp in 0.1..100.0f64, p in 1.01..1.99f64, dt in 0.001..1.0f64,
            sub in 1usize..1000, gyro in 0.0..20.0f64, seeds in proptest::collection::vec(0u64..1000, 1..5),
        ) {
            let mut c = RunConfig::preset(Preset::Paper72);
            c.fts.gains.k_p = kp;
            c.fts.gains.p = p;
            c.trajectory.dt = dt;
            c.fts.substeps = sub;
            c.noise.gyro_std_deg = gyro;
            c.run.seeds = seeds;
            c.vpe.j = Mat3::new(2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 1.0);
            let once = c.emit();
            let parsed = RunConfig::parse(&once, None, None).unwrap();
            prop_assert_eq!(&parsed, &c);
            prop_assert_eq!(parsed.emit(), once);
        }

        #[test]
        fn parse_never_panics(s in "\\PC{0,300}") {
            let _ = RunConfig::parse(&s, None, None);
        }
    }
}
