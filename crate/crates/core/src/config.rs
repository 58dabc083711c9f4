//! Run configuration. Every field has a default; a TOML file only needs to
//! name what it changes. Unknown keys are rejected with their path.

use serde::{Deserialize, Serialize};

use crate::arm::{ArmModel, ImpedanceParams};
use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::object_control::ObjectAdmittanceParams;
use crate::perception::PerceptionNoise;
use crate::virtual_force::VirtualForceParams;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunSection,
    pub timing: TimingSection,
    pub scene: SceneSection,
    pub camera: CameraSection,
    pub perception: PerceptionSection,
    pub virtual_force: VirtualForceParams,
    pub object: ObjectSection,
    pub impedance: ImpedanceSection,
    pub contact: ContactSection,
    pub arm: ArmModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub episodes: usize,
    pub seed: u64,
    pub max_macro_steps: usize,
    /// Record one trace line every this many control ticks.
    pub trace_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            episodes: 20,
            seed: 1,
            max_macro_steps: 40,
            trace_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    /// Control tick (s).
    pub control_period: f64,
    /// Time between perception updates (s).
    pub macro_period: f64,
    /// Portion of each macro step during which the virtual wrench is applied (s).
    pub actuation_time: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self {
            control_period: 0.01,
            macro_period: 2.5,
            actuation_time: 0.1,
        }
    }
}

impl TimingSection {
    pub fn ticks_per_macro(&self) -> usize {
        (self.macro_period / self.control_period).round() as usize
    }

    pub fn actuation_ticks(&self) -> usize {
        (self.actuation_time / self.control_period).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    /// Hole centres on the plate surface (x, y), metres. The plate surface is z = 0.
    pub holes: Vec<[f64; 2]>,
    pub hole_radius: f64,
    pub peg_radius: f64,
    pub peg_length: f64,
    /// Height of the peg tips above the plate at the start (m).
    pub start_height: f64,
    /// Insertion depth that counts as success (m).
    pub success_depth: f64,
    /// Radius of the disc the initial lateral offset is drawn from (m).
    pub initial_offset_radius: f64,
    /// Half-width of the uniform initial yaw error (rad).
    pub initial_yaw_range: f64,
    /// Fixed initial (dx, dy, yaw) overriding the random draw.
    pub initial_offset: Option<[f64; 3]>,
    pub object_mass: f64,
    /// Grasp points along the object x axis, relative to its centre (m).
    pub grasp_x: Vec<f64>,
    /// Arm base positions (x, y), metres.
    pub arm_bases: Vec<[f64; 2]>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            holes: vec![[0.1, 0.0], [-0.1, 0.0]],
            hole_radius: 0.0101,
            peg_radius: 0.01,
            peg_length: 0.05,
            start_height: 0.01,
            success_depth: 0.01,
            initial_offset_radius: 0.03,
            initial_yaw_range: 0.0,
            initial_offset: None,
            object_mass: 1.0,
            grasp_x: vec![0.16, -0.16],
            arm_bases: vec![[0.55, 0.0], [-0.55, 0.0]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub intrinsics: Intrinsics,
    /// Camera distance from the peg tip (m).
    pub distance: f64,
    /// Elevation of the viewing ray above the plate (degrees).
    pub elevation_deg: f64,
    /// Azimuth of each camera around its peg in the object frame (degrees).
    pub azimuth_deg: Vec<f64>,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::default(),
            distance: 0.13,
            elevation_deg: 35.0,
            azimuth_deg: vec![0.0, 180.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionSection {
    /// Per-axis Gaussian pixel noise on both points (px).
    pub pixel_sigma: f64,
    /// Hole pixel noise while the hole is obscured (px).
    pub obscured_hole_sigma: f64,
    pub mislabel_prob: f64,
    /// Standard deviation of the encoded heatmaps (px).
    pub heatmap_sigma: f64,
}

impl Default for PerceptionSection {
    fn default() -> Self {
        let n = PerceptionNoise::default();
        Self {
            pixel_sigma: n.pixel_sigma,
            obscured_hole_sigma: n.obscured_hole_sigma,
            mislabel_prob: n.mislabel_prob,
            heatmap_sigma: 2.0,
        }
    }
}

impl PerceptionSection {
    pub fn noise(&self) -> PerceptionNoise {
        PerceptionNoise {
            pixel_sigma: self.pixel_sigma,
            obscured_hole_sigma: self.obscured_hole_sigma,
            mislabel_prob: self.mislabel_prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectSection {
    pub inertia: [f64; 6],
    pub damping: [f64; 6],
    pub gain: [f64; 6],
    /// +1 or -1 in front of the damping term.
    pub sign: f64,
}

impl Default for ObjectSection {
    fn default() -> Self {
        Self {
            inertia: [10.0; 6],
            damping: [1000.0; 6],
            gain: [10.0; 6],
            sign: 1.0,
        }
    }
}

impl ObjectSection {
    pub fn params(&self) -> ObjectAdmittanceParams {
        let mut p = ObjectAdmittanceParams::from_diagonals(&self.inertia, &self.damping, &self.gain);
        p.sign = self.sign;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpedanceSection {
    pub inertia: [f64; 6],
    pub damping: [f64; 6],
    pub stiffness: [f64; 6],
    /// Damping of the Jacobian pseudoinverse.
    pub jacobian_damping: f64,
}

impl Default for ImpedanceSection {
    fn default() -> Self {
        Self {
            inertia: [50.0; 6],
            damping: [100.0; 6],
            stiffness: [50.0; 6],
            jacobian_damping: 0.01,
        }
    }
}

impl ImpedanceSection {
    pub fn params(&self) -> ImpedanceParams {
        ImpedanceParams::from_diagonals(&self.inertia, &self.damping, &self.stiffness)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactSection {
    /// Plate normal stiffness (N/m).
    pub k_normal: f64,
    /// Plate normal damping (N·s/m).
    pub c_normal: f64,
    /// Hole wall stiffness (N/m).
    pub k_wall: f64,
    pub friction: f64,
    /// Tangential speed below which friction is scaled down linearly (m/s).
    pub friction_smoothing: f64,
    /// Contact force magnitude that latches the contact flag (N).
    pub threshold: f64,
    /// Residual stiffness of the closed chain between the grasps (N/m).
    pub grasp_stiffness: f64,
    /// Rotational counterpart of `grasp_stiffness` (N·m/rad).
    pub grasp_rot_stiffness: f64,
}

impl Default for ContactSection {
    fn default() -> Self {
        Self {
            k_normal: 5000.0,
            c_normal: 50.0,
            k_wall: 5000.0,
            friction: 0.3,
            friction_smoothing: 1e-3,
            threshold: 1.0,
            grasp_stiffness: 1000.0,
            grasp_rot_stiffness: 10.0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl Config {
    /// Parse TOML; errors carry the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(format!("{path}: {}", e.into_inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fails when a value has no TOML form, e.g. a seed above `i64::MAX`.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("config cannot be written as TOML: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.timing;
        if !(t.control_period > 0.0 && t.control_period <= 0.1) {
            return Err(invalid("timing.control_period must be in (0, 0.1]"));
        }
        if !(t.macro_period >= t.control_period) {
            return Err(invalid("timing.macro_period must be at least one control period"));
        }
        if !(t.actuation_time >= 0.0 && t.actuation_time <= t.macro_period) {
            return Err(invalid("timing.actuation_time must be within the macro period"));
        }
        if self.run.trace_every == 0 {
            return Err(invalid("run.trace_every must be positive"));
        }
        if self.run.episodes == 0 {
            return Err(invalid("run.episodes must be at least 1"));
        }
        let s = &self.scene;
        let arms = s.holes.len();
        if arms != 2 {
            return Err(invalid("scene.holes must list exactly two holes, one per arm"));
        }
        if s.grasp_x.len() != arms || s.arm_bases.len() != arms || self.camera.azimuth_deg.len() != arms {
            return Err(invalid("scene.holes, scene.grasp_x, scene.arm_bases and camera.azimuth_deg need one entry per arm"));
        }
        if !(s.peg_radius > 0.0 && s.hole_radius > s.peg_radius) {
            return Err(invalid("scene needs 0 < peg_radius < hole_radius"));
        }
        let positive = [s.peg_length, s.start_height, s.success_depth, s.object_mass];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("scene lengths and mass must be positive"));
        }
        if !(s.initial_offset_radius >= 0.0 && s.initial_yaw_range >= 0.0) {
            return Err(invalid("scene initial offset ranges must be non-negative"));
        }
        let c = &self.camera;
        if !(c.distance > 0.0 && c.elevation_deg > 0.0 && c.elevation_deg < 90.0) {
            return Err(invalid("camera.distance must be positive and camera.elevation_deg in (0, 90)"));
        }
        c.intrinsics.validate()?;
        self.perception.noise().validate()?;
        if !(self.perception.heatmap_sigma > 0.0) {
            return Err(invalid("perception.heatmap_sigma must be positive"));
        }
        self.virtual_force.validate()?;
        self.object.params().validate()?;
        self.impedance.params().validate()?;
        if !(self.impedance.jacobian_damping >= 0.0) {
            return Err(invalid("impedance.jacobian_damping must be non-negative"));
        }
        let k = &self.contact;
        let nonneg = [k.k_normal, k.c_normal, k.k_wall, k.friction, k.grasp_stiffness, k.grasp_rot_stiffness];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(k.friction_smoothing > 0.0 && k.threshold > 0.0) {
            return Err(invalid("contact parameters out of range"));
        }
        self.arm.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = Config::from_toml_str("[run]\nepisodes = 3\n[scene]\nhole_radius = 0.0103\n").unwrap();
        assert_eq!(cfg.run.episodes, 3);
        assert_eq!(cfg.scene.hole_radius, 0.0103);
        assert_eq!(cfg.timing, TimingSection::default());
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = Config::from_toml_str("[scene]\nhole_radios = 0.01\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("scene"), "{msg}");
        assert!(msg.contains("hole_radios"), "{msg}");
    }

    #[test]
    fn bad_type_reports_path() {
        let err = Config::from_toml_str("[object]\nsign = \"minus\"\n").unwrap_err();
        assert!(err.to_string().contains("object.sign"), "{err}");
    }

    #[test]
    fn rejects_inconsistent_values() {
        assert!(Config::from_toml_str("[scene]\nhole_radius = 0.005\n").is_err());
        assert!(Config::from_toml_str("[timing]\ncontrol_period = 0.5\n").is_err());
        assert!(Config::from_toml_str("[object]\ndamping = [1000.0, 1000.0, 1000.0, 1000.0, 1000.0, -1.0]\n").is_err());
        assert!(Config::from_toml_str("[perception]\nmislabel_prob = 1.5\n").is_err());
    }

    #[test]
    fn tick_counts() {
        let t = TimingSection::default();
        assert_eq!(t.ticks_per_macro(), 250);
        assert_eq!(t.actuation_ticks(), 10);
    }
}
