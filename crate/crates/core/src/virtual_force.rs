//! Fusion of per-arm image deviations into one virtual wrench on the object.
//!
//! Each arm's peg and hole pixels are back-projected, intersected with the
//! plane through that arm's peg tip perpendicular to the hole axis, and the
//! resulting in-plane deviations are turned into normalized peg forces. Their
//! resultant (plus a random escape term when it is too weak) becomes the
//! desired wrench, staged by contact and by the perceived peg/hole states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::perception::{PegHoleObservation, PegHoleState};
use crate::spatial::{Vec3, Wrench};

/// Below this, a ray counts as parallel to the deviation plane.
pub const PARALLEL_TOL: f64 = 1e-6;
/// Below this, the camera-to-peg vector has no usable in-plane component.
pub const DEGENERATE_VIEW_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VirtualForceParams {
    /// Peak per-peg virtual force (N).
    pub k_force: f64,
    /// Torque gain about the hole axis.
    pub k_torque: f64,
    /// Magnitude of the random escape force (N).
    pub k_random: f64,
    /// Resultant-force threshold below which the escape force is added (N).
    pub random_threshold: f64,
    /// Force held along the hole axis once contact is made (N).
    pub k_contact: f64,
}

impl Default for VirtualForceParams {
    fn default() -> Self {
        Self {
            k_force: 10.0,
            k_torque: 2.0,
            k_random: 8.0,
            random_threshold: 5.0,
            k_contact: 5.0,
        }
    }
}

impl VirtualForceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k_force, self.k_torque, self.k_random, self.random_threshold, self.k_contact];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("virtual force gains must be positive: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "search")]
    PreContactSearch,
    #[serde(rename = "insert")]
    PreContactInsert,
    #[serde(rename = "contact")]
    InContact,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::PreContactSearch => "search",
            Stage::PreContactInsert => "insert",
            Stage::InContact => "contact",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesiredWrench {
    pub wrench: Wrench,
    pub stage: Stage,
}

/// Intersection of the ray `cam_pos + t·ray` with the plane through `peg_tip`
/// perpendicular to `axis`.
pub fn intersect_plane(cam_pos: &Vec3, ray: &Vec3, peg_tip: &Vec3, axis: &Vec3) -> Result<Vec3> {
    let dot = ray.dot(axis);
    if dot.abs() <= PARALLEL_TOL {
        return Err(Error::RayParallelToPlane { dot });
    }
    let p_cp = peg_tip - cam_pos;
    Ok(cam_pos + ray * (p_cp.dot(axis) / dot))
}

/// In-plane deviation from the estimated peg point to the estimated hole point.
pub fn deviation_vector(cam: &CameraModel, obs: &PegHoleObservation, peg_tip: &Vec3, axis: &Vec3) -> Result<Vec3> {
    let n_peg = cam.backproject_ray(&obs.peg_px);
    let n_hole = cam.backproject_ray(&obs.hole_px);
    let on_peg = intersect_plane(cam.position(), &n_peg, peg_tip, axis)?;
    let on_hole = intersect_plane(cam.position(), &n_hole, peg_tip, axis)?;
    Ok(on_hole - on_peg)
}

/// Per-peg virtual forces, scaled so the largest has magnitude `k_force`.
pub fn virtual_peg_forces(deviations: &[Vec3], k_force: f64) -> Result<Vec<Vec3>> {
    let max_norm = deviations.iter().map(|d| d.norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Err(Error::AllDeviationsZero);
    }
    Ok(deviations.iter().map(|d| d * (k_force / max_norm)).collect())
}

/// Resultant force and the torque component about the hole axis.
pub fn resultant_wrench(forces: &[Vec3], lever_arms: &[Vec3], axis: &Vec3, k_torque: f64, random: &Vec3) -> (Vec3, Vec3) {
    assert_eq!(forces.len(), lever_arms.len(), "one lever arm per peg force");
    let total = forces.iter().fold(*random, |acc, f| acc + f);
    let moment: Vec3 = forces
        .iter()
        .zip(lever_arms)
        .fold(Vec3::zeros(), |acc, (f, r)| acc + r.cross(f));
    let torque = axis * (k_torque * moment.dot(axis));
    (total, torque)
}

/// Unit direction that moves the peg away from the camera within the plane ⟂ axis.
pub fn forward_direction(cam_to_peg: &Vec3, axis: &Vec3) -> Result<Vec3> {
    let in_plane = axis * (-cam_to_peg.dot(axis)) + cam_to_peg;
    let norm = in_plane.norm();
    if norm <= DEGENERATE_VIEW_TOL {
        return Err(Error::DegenerateViewDirection);
    }
    Ok(in_plane / norm)
}

/// Random escape force. Zero when the summed peg force already reaches the
/// threshold; otherwise `k_random` along one uniformly chosen arm's forward
/// direction. Arms whose view is degenerate are skipped.
pub fn random_force_term<R: Rng + ?Sized>(
    sum_forces: &Vec3,
    threshold: f64,
    k_random: f64,
    cam_to_peg: &[Vec3],
    axis: &Vec3,
    rng: &mut R,
) -> Result<Vec3> {
    assert!(!cam_to_peg.is_empty(), "at least one arm");
    if sum_forces.norm() >= threshold {
        return Ok(Vec3::zeros());
    }
    let m = cam_to_peg.len();
    let first = rng.gen_range(0..m);
    for k in 0..m {
        if let Ok(dir) = forward_direction(&cam_to_peg[(first + k) % m], axis) {
            return Ok(dir * k_random);
        }
    }
    Err(Error::DegenerateViewDirection)
}

/// Stage the desired wrench from the contact flag and the perceived states.
pub fn desired_wrench(
    states: &[PegHoleState],
    contact: bool,
    force: &Vec3,
    torque: &Vec3,
    k_contact: f64,
    axis: &Vec3,
) -> DesiredWrench {
    if contact {
        DesiredWrench {
            wrench: Wrench::new(force + axis * k_contact, *torque),
            stage: Stage::InContact,
        }
    } else if !states.is_empty() && states.iter().all(|s| *s == PegHoleState::Overlapped) {
        DesiredWrench {
            wrench: Wrench::new(axis * k_contact, Vec3::zeros()),
            stage: Stage::PreContactInsert,
        }
    } else {
        DesiredWrench {
            wrench: Wrench::new(*force, *torque),
            stage: Stage::PreContactSearch,
        }
    }
}

/// What one arm contributes to the virtual wrench.
#[derive(Clone, Copy, Debug)]
pub struct ArmInput<'a> {
    pub camera: &'a CameraModel,
    /// `None` when perception failed for this arm this step.
    pub observation: Option<&'a PegHoleObservation>,
    pub peg_tip: Vec3,
    /// Peg tip relative to the object control point.
    pub lever_arm: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VirtualWrench {
    pub deviations: Vec<Vec3>,
    pub peg_forces: Vec<Vec3>,
    pub random: Vec3,
    pub force: Vec3,
    pub torque: Vec3,
    pub desired: DesiredWrench,
}

/// The whole pipeline for one perception step. Arms without a usable
/// observation contribute a zero deviation and an `Obscured` state.
pub fn compute_virtual_wrench<R: Rng + ?Sized>(
    params: &VirtualForceParams,
    arms: &[ArmInput<'_>],
    axis: &Vec3,
    contact: bool,
    rng: &mut R,
) -> VirtualWrench {
    let mut states = Vec::with_capacity(arms.len());
    let deviations: Vec<Vec3> = arms
        .iter()
        .map(|arm| match arm.observation {
            Some(obs) => {
                states.push(obs.state);
                deviation_vector(arm.camera, obs, &arm.peg_tip, axis).unwrap_or_else(|_| Vec3::zeros())
            }
            None => {
                states.push(PegHoleState::Obscured);
                Vec3::zeros()
            }
        })
        .collect();
    let peg_forces = virtual_peg_forces(&deviations, params.k_force).unwrap_or_else(|_| vec![Vec3::zeros(); arms.len()]);
    let sum = peg_forces.iter().fold(Vec3::zeros(), |acc, f| acc + f);
    let cam_to_peg: Vec<Vec3> = arms.iter().map(|a| a.peg_tip - a.camera.position()).collect();
    let random = random_force_term(&sum, params.random_threshold, params.k_random, &cam_to_peg, axis, rng)
        .unwrap_or_else(|_| Vec3::zeros());
    let levers: Vec<Vec3> = arms.iter().map(|a| a.lever_arm).collect();
    let (force, torque) = resultant_wrench(&peg_forces, &levers, axis, params.k_torque, &random);
    let desired = desired_wrench(&states, contact, &force, &torque, params.k_contact, axis);
    VirtualWrench {
        deviations,
        peg_forces,
        random,
        force,
        torque,
        desired,
    }
}
