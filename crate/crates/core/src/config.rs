//! Sectioned TOML configuration. Every key is optional; angles are given
//! in degrees and stored in radians.
//!
//! ```toml
//! [limb]
//! length = 0.7
//! moduli = [0.19e6, 1.4e6]
//! cross_width_b = 0.0164
//! cross_height_h = 0.008
//! moment_arm_dx = 0.005
//! moment_arm_dy = 0.0025
//! sma_angle_deg = 45
//!
//! [controller]
//! kp = 2.0
//! ki = 1.5
//!
//! [uncertainty]
//! r0 = 0.1
//! r_inf = 1.5
//! tau = 0.1
//!
//! [simulation]
//! dt = 0.001
//! duration = 20
//! trajectory = "step"        # "step", "sequence" or a waypoint CSV path
//! amplitude_deg = 30
//! lag_time_constant = 0.5    # 0 disables the lag
//! mismatch_seed = 3          # omitted: no mismatch
//! antiwindup = true
//! direction_scaling = true
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::antiwindup::StepOptions;
use crate::error::{Error, Result};
use crate::lti::UncertaintyWeight;
use crate::model::LimbParams;
use crate::sim::{make_trajectory, TrajectoryKind, DEFAULT_DT, DEFAULT_LAG};
use crate::synthesis::PiGains;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    limb: RawLimb,
    #[serde(default)]
    controller: RawController,
    #[serde(default)]
    uncertainty: RawUncertainty,
    #[serde(default)]
    simulation: RawSimulation,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimb {
    length: Option<f64>,
    moduli: Option<Vec<f64>>,
    cross_width_b: Option<f64>,
    cross_height_h: Option<f64>,
    moment_arm_dx: Option<f64>,
    moment_arm_dy: Option<f64>,
    sma_angle_deg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    kp: Option<f64>,
    ki: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUncertainty {
    r0: Option<f64>,
    r_inf: Option<f64>,
    tau: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    dt: Option<f64>,
    duration: Option<f64>,
    trajectory: Option<String>,
    amplitude_deg: Option<f64>,
    lag_time_constant: Option<f64>,
    mismatch_seed: Option<u64>,
    antiwindup: Option<bool>,
    direction_scaling: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub dt: f64,
    pub duration: f64,
    pub trajectory: TrajectoryKind,
    /// rad
    pub amplitude: f64,
    pub lag_time_constant: Option<f64>,
    pub mismatch_seed: Option<u64>,
    pub options: StepOptions,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            duration: 20.0,
            trajectory: TrajectoryKind::Step,
            amplitude: 30f64.to_radians(),
            lag_time_constant: Some(DEFAULT_LAG),
            mismatch_seed: None,
            options: StepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolConfig {
    pub limb: LimbParams,
    pub gains: PiGains,
    pub weight: UncertaintyWeight,
    pub simulation: SimSettings,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            limb: LimbParams::default(),
            gains: PiGains { kp: 2.0, ki: 1.5 },
            weight: UncertaintyWeight::default(),
            simulation: SimSettings::default(),
        }
    }
}

/// `"step"`, `"sequence"`, anything else is a waypoint file.
pub fn trajectory_kind(s: &str) -> TrajectoryKind {
    match s {
        "step" => TrajectoryKind::Step,
        "sequence" | "hold-sequence" => TrajectoryKind::HoldSequence,
        other => TrajectoryKind::Waypoints(PathBuf::from(other)),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses configuration text. `path` labels error messages.
pub fn parse_config_str(text: &str, path: &str) -> Result<ToolConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_string(),
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        msg: e.message().to_string(),
    })?;
    let d = ToolConfig::default();

    let dl = d.limb;
    let limb = LimbParams {
        length: raw.limb.length.unwrap_or(dl.length),
        moduli: raw.limb.moduli.unwrap_or(dl.moduli),
        cross_width_b: raw.limb.cross_width_b.unwrap_or(dl.cross_width_b),
        cross_height_h: raw.limb.cross_height_h.unwrap_or(dl.cross_height_h),
        moment_arm_dx: raw.limb.moment_arm_dx.unwrap_or(dl.moment_arm_dx),
        moment_arm_dy: raw.limb.moment_arm_dy.unwrap_or(dl.moment_arm_dy),
        sma_angle_phi: raw.limb.sma_angle_deg.map(f64::to_radians).unwrap_or(dl.sma_angle_phi),
    };
    limb.validate()?;

    let gains = PiGains::new(raw.controller.kp.unwrap_or(d.gains.kp), raw.controller.ki.unwrap_or(d.gains.ki))?;
    let weight = UncertaintyWeight::new(
        raw.uncertainty.r0.unwrap_or(d.weight.r0),
        raw.uncertainty.r_inf.unwrap_or(d.weight.r_inf),
        raw.uncertainty.tau.unwrap_or(d.weight.tau),
    )?;

    let ds = d.simulation;
    let rs = raw.simulation;
    let lag = match rs.lag_time_constant {
        None => ds.lag_time_constant,
        Some(t) if t == 0.0 => None,
        Some(t) if t > 0.0 && t.is_finite() => Some(t),
        Some(t) => return Err(Error::domain("lag_time_constant", format!("must be >= 0, got {t}"))),
    };
    let simulation = SimSettings {
        dt: rs.dt.unwrap_or(ds.dt),
        duration: rs.duration.unwrap_or(ds.duration),
        trajectory: rs.trajectory.as_deref().map(trajectory_kind).unwrap_or(ds.trajectory),
        amplitude: rs.amplitude_deg.map(f64::to_radians).unwrap_or(ds.amplitude),
        lag_time_constant: lag,
        mismatch_seed: rs.mismatch_seed.or(ds.mismatch_seed),
        options: StepOptions {
            antiwindup: rs.antiwindup.unwrap_or(ds.options.antiwindup),
            direction_scaling: rs.direction_scaling.unwrap_or(ds.options.direction_scaling),
        },
    };
    simulation.validate()?;
    Ok(ToolConfig { limb, gains, weight, simulation })
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.duration >= 100.0 * self.dt && self.duration.is_finite()) {
            return Err(Error::domain("duration", format!("must be >= 100 dt, got {}", self.duration)));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::domain("amplitude_deg", "must be finite"));
        }
        if !matches!(self.trajectory, TrajectoryKind::Waypoints(_)) {
            make_trajectory(&self.trajectory, self.amplitude, self.duration, self.dt)?;
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<ToolConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &path.display().to_string())
}

impl ToolConfig {
    /// Resolved values as `key=value` pairs, angles in degrees.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let l = &self.limb;
        let s = &self.simulation;
        let moduli: Vec<String> = l.moduli.iter().map(|m| m.to_string()).collect();
        let traj = match &s.trajectory {
            TrajectoryKind::Step => "step".to_string(),
            TrajectoryKind::HoldSequence => "sequence".to_string(),
            TrajectoryKind::Waypoints(p) => p.display().to_string(),
        };
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        [
            ("limb.length", l.length.to_string()),
            ("limb.moduli", format!("[{}]", moduli.join(","))),
            ("limb.cross_width_b", l.cross_width_b.to_string()),
            ("limb.cross_height_h", l.cross_height_h.to_string()),
            ("limb.moment_arm_dx", l.moment_arm_dx.to_string()),
            ("limb.moment_arm_dy", l.moment_arm_dy.to_string()),
            ("limb.sma_angle_deg", l.sma_angle_phi.to_degrees().to_string()),
            ("controller.kp", self.gains.kp.to_string()),
            ("controller.ki", self.gains.ki.to_string()),
            ("uncertainty.r0", self.weight.r0.to_string()),
            ("uncertainty.r_inf", self.weight.r_inf.to_string()),
            ("uncertainty.tau", self.weight.tau.to_string()),
            ("simulation.dt", s.dt.to_string()),
            ("simulation.duration", s.duration.to_string()),
            ("simulation.trajectory", traj),
            ("simulation.amplitude_deg", format!("{}", (s.amplitude.to_degrees() * 1e9).round() / 1e9)),
            ("simulation.lag_time_constant", opt(s.lag_time_constant.map(|v| v.to_string()))),
            ("simulation.mismatch_seed", opt(s.mismatch_seed.map(|v| v.to_string()))),
            ("simulation.antiwindup", s.options.antiwindup.to_string()),
            ("simulation.direction_scaling", s.options.direction_scaling.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
