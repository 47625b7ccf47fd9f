//! Run configuration: filter variant selection, tunable parameters, preset
//! scenes, and the flat key-value config file format.
//!
//! Config files are plain text, one `section.key value...` entry per line,
//! `#` comments allowed. Unknown keys are errors (with line numbers) so
//! typos never silently fall back to defaults.

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{CameraCalib, ProjectionMode};
use crate::filter::WindowConfig;
use crate::matcher::MatcherConfig;
use crate::motion::{MotionModel, NoiseParams};
use crate::sim::{FourBarDims, FourBarMotion, HandshakeParams, Trajectory};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// State parameterization of the error-state filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Lie,
    Classic,
}

impl ParamKind {
    pub fn tag(self) -> &'static str {
        match self {
            ParamKind::Lie => "lie",
            ParamKind::Classic => "classic",
        }
    }
}

/// One of the 12 tracker variants: motion model × parameterization ×
/// projection model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FilterVariant {
    pub model: MotionModel,
    pub param: ParamKind,
    pub mode: ProjectionMode,
}

impl FilterVariant {
    /// Parses `cp|cv|ca + lie|classic + cam|obj`, e.g. `cv+lie+cam`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split('+').collect();
        if parts.len() != 3 {
            return Err(format!(
                "variant {s:?} must be <cp|cv|ca>+<lie|classic>+<cam|obj>"
            ));
        }
        let model = match parts[0] {
            "cp" => MotionModel::ConstantPosition,
            "cv" => MotionModel::ConstantVelocity,
            "ca" => MotionModel::ConstantAcceleration,
            m => return Err(format!("unknown motion model {m:?}")),
        };
        let param = match parts[1] {
            "lie" => ParamKind::Lie,
            "classic" => ParamKind::Classic,
            p => return Err(format!("unknown parameterization {p:?}")),
        };
        let mode = match parts[2] {
            "cam" => ProjectionMode::MovingCamera,
            "obj" => ProjectionMode::MovingObject,
            m => return Err(format!("unknown projection mode {m:?}")),
        };
        Ok(Self { model, param, mode })
    }

    pub fn tag(&self) -> String {
        format!(
            "{}+{}+{}",
            self.model.tag(),
            self.param.tag(),
            self.mode.tag()
        )
    }
}

/// All 12 variants in a stable order.
pub fn all_variants() -> Vec<FilterVariant> {
    let mut out = Vec::with_capacity(12);
    for model in [
        MotionModel::ConstantPosition,
        MotionModel::ConstantVelocity,
        MotionModel::ConstantAcceleration,
    ] {
        for param in [ParamKind::Lie, ParamKind::Classic] {
            for mode in [ProjectionMode::MovingCamera, ProjectionMode::MovingObject] {
                out.push(FilterVariant { model, param, mode });
            }
        }
    }
    out
}

/// Scene presets shipped with the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Handshake,
    FourBar,
    Static,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "handshake" => Ok(Preset::Handshake),
            "fourbar" => Ok(Preset::FourBar),
            "static" => Ok(Preset::Static),
            other => Err(format!("unknown preset {other:?}")),
        }
    }

    /// The body the preset moves, which fixes the projection model.
    pub fn natural_mode(self) -> ProjectionMode {
        match self {
            Preset::Handshake | Preset::Static => ProjectionMode::MovingCamera,
            Preset::FourBar => ProjectionMode::MovingObject,
        }
    }
}

/// Simulator scene parameters.
#[derive(Clone, Copy, Debug)]
pub struct SimParams {
    pub preset: Preset,
    pub duration_s: f64,
    pub rate: f64,
    pub sigma_g: f64,
    pub outlier_frac: f64,
    pub modulate: bool,
    /// Camera-to-target distance (m).
    pub standoff: f64,
    /// Four-bar crank speed (rpm).
    pub rpm: f64,
    pub fourbar: FourBarDims,
    /// Hand-shake chirp range (Hz).
    pub f0: f64,
    pub f1: f64,
    pub amp_pos: Vector3<f64>,
    pub amp_rot: Vector3<f64>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            preset: Preset::Handshake,
            duration_s: 10.0,
            rate: 2e5,
            sigma_g: 0.7,
            outlier_frac: 0.05,
            modulate: true,
            standoff: 0.2,
            rpm: 950.0,
            fourbar: FourBarDims::default(),
            f0: 1.0,
            f1: 6.0,
            amp_pos: Vector3::new(0.02, 0.016, 0.012),
            amp_rot: Vector3::new(0.06, 0.05, 0.12),
        }
    }
}

impl SimParams {
    pub fn build_trajectory(&self) -> Result<Trajectory, ConfigError> {
        match self.preset {
            Preset::Static => Ok(Trajectory::Static {
                pose: crate::camera::Pose {
                    pos: Vector3::new(0.0, 0.0, -self.standoff),
                    rot: nalgebra::Matrix3::identity(),
                },
            }),
            Preset::Handshake => Ok(Trajectory::Handshake(HandshakeParams {
                center: Vector3::new(0.0, 0.0, -self.standoff),
                amp_pos: self.amp_pos,
                amp_rot: self.amp_rot,
                f0: self.f0,
                f1: self.f1,
                duration_s: self.duration_s,
                phase_pos: Vector3::new(0.0, 1.1, 2.3),
                phase_rot: Vector3::new(0.7, 1.9, 0.2),
            })),
            Preset::FourBar => FourBarMotion::new(self.fourbar, self.rpm, self.standoff)
                .map(Trajectory::FourBar)
                .map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}

/// Everything a tracking run needs besides the input files.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub variant: FilterVariant,
    pub window: WindowConfig,
    pub matcher: MatcherConfig,
    pub noise: NoiseParams,
    pub calib: CameraCalib,
    pub sim: SimParams,
    pub init_pos: Vector3<f64>,
    /// Initial orientation as (w, x, y, z).
    pub init_quat: [f64; 4],
    /// Initial per-block standard deviations (r, θ, v, ω, a, α).
    pub p0_stds: [f64; 6],
    pub seed: u64,
}

/// Calibration resembling a 240×180 event sensor with mild barrel
/// distortion; replace via a calib file for real data.
pub fn default_calib() -> CameraCalib {
    CameraCalib {
        fx: 199.0,
        fy: 199.0,
        cx: 120.0,
        cy: 90.0,
        k1: -0.28,
        k2: 0.08,
        width: 240,
        height: 180,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: FilterVariant {
                model: MotionModel::ConstantVelocity,
                param: ParamKind::Lie,
                mode: ProjectionMode::MovingCamera,
            },
            window: WindowConfig::default(),
            matcher: MatcherConfig::default(),
            noise: NoiseParams::default(),
            calib: default_calib(),
            sim: SimParams::default(),
            init_pos: Vector3::new(0.0, 0.0, -0.2),
            init_quat: [1.0, 0.0, 0.0, 0.0],
            p0_stds: [0.01, 0.02, 0.1, 0.5, 1.0, 5.0],
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.matcher
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.window.dt_us <= 0 {
            return Err(ConfigError::Invalid("window.dt_us must be > 0".into()));
        }
        if !(self.window.sigma_d > 0.0) {
            return Err(ConfigError::Invalid("window.sigma_d must be > 0".into()));
        }
        if !(self.window.n_sigma > 0.0) {
            return Err(ConfigError::Invalid("window.n_sigma must be > 0".into()));
        }
        let sig = [
            self.noise.sigma_r,
            self.noise.sigma_theta,
            self.noise.sigma_v,
            self.noise.sigma_omega,
            self.noise.sigma_a,
            self.noise.sigma_alpha,
        ];
        if sig.iter().any(|s| *s < 0.0) {
            return Err(ConfigError::Invalid("noise densities must be >= 0".into()));
        }
        let qn: f64 = self.init_quat.iter().map(|q| q * q).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(ConfigError::Invalid(format!(
                "init.quat norm {qn} is not 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.sim.outlier_frac) {
            return Err(ConfigError::Invalid("sim.outlier_frac must be in [0,1]".into()));
        }
        Ok(())
    }

    /// Applies a config file on top of the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| {
                ConfigError::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    msg: "expected `key value`".into(),
                }
            })?;
            self.apply_entry(key, value.trim()).map_err(|msg| ConfigError::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg,
            })?;
        }
        self.validate()
    }

    pub fn apply_entry(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn f(v: &str) -> Result<f64, String> {
            v.parse().map_err(|_| format!("bad number {v:?}"))
        }
        fn int(v: &str) -> Result<i64, String> {
            v.parse().map_err(|_| format!("bad integer {v:?}"))
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "1" | "true" | "on" => Ok(true),
                "0" | "false" | "off" => Ok(false),
                _ => Err(format!("bad flag {v:?} (use on/off)")),
            }
        }
        fn vec3(v: &str) -> Result<Vector3<f64>, String> {
            let p: Vec<&str> = v.split_whitespace().collect();
            if p.len() != 3 {
                return Err("expected 3 numbers".into());
            }
            Ok(Vector3::new(f(p[0])?, f(p[1])?, f(p[2])?))
        }
        match key {
            "variant" => self.variant = FilterVariant::parse(value)?,
            "seed" => self.seed = int(value)? as u64,
            "window.dt_us" => self.window.dt_us = int(value)?,
            "window.sigma_d" => self.window.sigma_d = f(value)?,
            "window.n_sigma" => self.window.n_sigma = f(value)?,
            "window.full_normalizer" => self.window.full_normalizer = flag(value)?,
            "window.reproject_every" => self.window.reproject_every = int(value)? as u32,
            "window.divergence_trace" => self.window.divergence_trace = f(value)?,
            "matcher.alpha" => self.matcher.alpha = f(value)?,
            "matcher.beta" => self.matcher.beta = f(value)?,
            "matcher.grid_m" => self.matcher.grid_m = int(value)? as usize,
            "matcher.grid_n" => self.matcher.grid_n = int(value)? as usize,
            "matcher.dilate" => self.matcher.dilate = flag(value)?,
            "matcher.skip_lag_us" => {
                self.matcher.skip_lag_us = if value == "off" { None } else { Some(f(value)?) }
            }
            "noise.sigma_r" => self.noise.sigma_r = f(value)?,
            "noise.sigma_theta" => self.noise.sigma_theta = f(value)?,
            "noise.sigma_v" => self.noise.sigma_v = f(value)?,
            "noise.sigma_omega" => self.noise.sigma_omega = f(value)?,
            "noise.sigma_a" => self.noise.sigma_a = f(value)?,
            "noise.sigma_alpha" => self.noise.sigma_alpha = f(value)?,
            "calib.fx" => self.calib.fx = f(value)?,
            "calib.fy" => self.calib.fy = f(value)?,
            "calib.cx" => self.calib.cx = f(value)?,
            "calib.cy" => self.calib.cy = f(value)?,
            "calib.k1" => self.calib.k1 = f(value)?,
            "calib.k2" => self.calib.k2 = f(value)?,
            "calib.w" => self.calib.width = int(value)? as u32,
            "calib.h" => self.calib.height = int(value)? as u32,
            "init.position" => self.init_pos = vec3(value)?,
            "init.quat" => {
                let p: Vec<&str> = value.split_whitespace().collect();
                if p.len() != 4 {
                    return Err("expected 4 numbers (w x y z)".into());
                }
                self.init_quat = [f(p[0])?, f(p[1])?, f(p[2])?, f(p[3])?];
            }
            "init.p0" => {
                let p: Vec<&str> = value.split_whitespace().collect();
                if p.len() != 6 {
                    return Err("expected 6 numbers (r theta v omega a alpha)".into());
                }
                for (k, s) in p.iter().enumerate() {
                    self.p0_stds[k] = f(s)?;
                }
            }
            "sim.preset" => self.sim.preset = Preset::parse(value)?,
            "sim.duration_s" => self.sim.duration_s = f(value)?,
            "sim.rate" => self.sim.rate = f(value)?,
            "sim.sigma_g" => self.sim.sigma_g = f(value)?,
            "sim.outlier_frac" => self.sim.outlier_frac = f(value)?,
            "sim.modulate" => self.sim.modulate = flag(value)?,
            "sim.standoff" => self.sim.standoff = f(value)?,
            "sim.rpm" => self.sim.rpm = f(value)?,
            "sim.f0" => self.sim.f0 = f(value)?,
            "sim.f1" => self.sim.f1 = f(value)?,
            "sim.amp_pos" => self.sim.amp_pos = vec3(value)?,
            "sim.amp_rot" => self.sim.amp_rot = vec3(value)?,
            "sim.fourbar.ground" => self.sim.fourbar.ground = f(value)?,
            "sim.fourbar.crank" => self.sim.fourbar.crank = f(value)?,
            "sim.fourbar.coupler" => self.sim.fourbar.coupler = f(value)?,
            "sim.fourbar.rocker" => self.sim.fourbar.rocker = f(value)?,
            "sim.fourbar.along" => self.sim.fourbar.along = f(value)?,
            "sim.fourbar.perp" => self.sim.fourbar.perp = f(value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn twelve_variants() {
        let v = all_variants();
        assert_eq!(v.len(), 12);
        let tags: std::collections::HashSet<String> = v.iter().map(|v| v.tag()).collect();
        assert_eq!(tags.len(), 12);
    }

    #[test]
    fn variant_parse_round_trip() {
        for v in all_variants() {
            let parsed = FilterVariant::parse(&v.tag()).unwrap();
            assert_eq!(parsed, v);
        }
        assert!(FilterVariant::parse("cv+lie").is_err());
        assert!(FilterVariant::parse("xx+lie+cam").is_err());
    }

    #[test]
    fn config_file_round_trip_and_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nvariant ca+classic+obj\nwindow.dt_us 200\nmatcher.alpha 2.0\nnoise.sigma_v 5\ninit.position 0 0 -0.3\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.variant.tag(), "ca+classic+obj");
        assert_eq!(cfg.window.dt_us, 200);
        assert_eq!(cfg.matcher.alpha, 2.0);
        assert_eq!(cfg.noise.sigma_v, 5.0);
        assert_eq!(cfg.init_pos.z, -0.3);

        let bad = dir.path().join("bad.cfg");
        std::fs::write(&bad, "window.dt_us 100\nwindow.sigma_dd 3.5\n").unwrap();
        let mut cfg = RunConfig::default();
        match cfg.apply_file(&bad) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.matcher.beta = 1.0; // below alpha
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.init_quat = [0.5, 0.0, 0.0, 0.0];
        assert!(cfg.validate().is_err());
    }
}
