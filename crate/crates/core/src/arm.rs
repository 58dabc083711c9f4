//! End-effector level control for each arm: rigid-grasp motion distribution,
//! the internal-force impedance law, and resolved-rate joint commands on a
//! serial 7-DOF kinematic model.

use nalgebra::{DVector, Matrix6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::object_control::{check_spd, ObjectMotionRef};
use crate::spatial::{
    matrix_to_rotvec, orthonormalize, pseudoinverse, rotvec_to_matrix, split6, stack6, Mat3, MatMN, Pose, Twist, Vec3,
    Vec6, Wrench,
};

/// Smallest singular value of the Jacobian below which a warning is logged.
pub const NEAR_SINGULAR: f64 = 1e-4;

/// One revolute joint: a fixed translation from the previous joint frame,
/// followed by a rotation about `axis` (expressed in the translated frame).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub offset: [f64; 3],
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

/// Serial revolute chain with a fixed tool offset after the last joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    pub joints: Vec<JointSpec>,
    pub tool_offset: [f64; 3],
}

impl Default for ArmModel {
    /// Anthropomorphic 7-DOF chain: spherical shoulder, elbow, spherical
    /// wrist; 0.3 m shoulder height, two 0.4 m links and a 0.1 m tool.
    fn default() -> Self {
        let roll = |offset: [f64; 3]| JointSpec {
            offset,
            axis: [0.0, 0.0, 1.0],
            lower: -2.0 * std::f64::consts::PI,
            upper: 2.0 * std::f64::consts::PI,
        };
        let pitch = |offset: [f64; 3]| JointSpec {
            offset,
            axis: [0.0, 1.0, 0.0],
            lower: -2.6,
            upper: 2.6,
        };
        Self {
            joints: vec![
                roll([0.0, 0.0, 0.3]),
                pitch([0.0, 0.0, 0.0]),
                roll([0.0, 0.0, 0.0]),
                pitch([0.0, 0.0, 0.4]),
                roll([0.0, 0.0, 0.0]),
                pitch([0.0, 0.0, 0.4]),
                roll([0.0, 0.0, 0.0]),
            ],
            tool_offset: [0.0, 0.0, 0.1],
        }
    }
}

impl ArmModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::ConfigInvalid("arm model has no joints".into()));
        }
        for (k, j) in self.joints.iter().enumerate() {
            let axis = Vec3::from(j.axis);
            if (axis.norm() - 1.0).abs() > 1e-9 || !(j.lower < j.upper) {
                return Err(Error::ConfigInvalid(format!("joint {k} has a non-unit axis or empty limits")));
            }
        }
        Ok(())
    }

    /// World-frame joint origins and axes plus the tool pose.
    fn chain(&self, base: &Pose, q: &DVector<f64>) -> (Vec<(Vec3, Vec3)>, Pose) {
        assert_eq!(q.len(), self.dof(), "joint vector length");
        let mut frame = *base;
        let mut joints = Vec::with_capacity(self.dof());
        for (spec, &angle) in self.joints.iter().zip(q.iter()) {
            frame.position += frame.rotation * Vec3::from(spec.offset);
            let axis_local = Vec3::from(spec.axis);
            joints.push((frame.position, frame.rotation * axis_local));
            frame.rotation *= rotvec_to_matrix(&(axis_local * angle));
        }
        frame.position += frame.rotation * Vec3::from(self.tool_offset);
        (joints, frame)
    }

    pub fn forward_kinematics(&self, base: &Pose, q: &DVector<f64>) -> Pose {
        self.chain(base, q).1
    }

    /// Geometric Jacobian at the tool point, world frame, `[linear; angular]`.
    pub fn jacobian(&self, base: &Pose, q: &DVector<f64>) -> MatMN {
        let (joints, tool) = self.chain(base, q);
        let mut j = MatMN::zeros(6, self.dof());
        for (c, (origin, axis)) in joints.iter().enumerate() {
            let lin = axis.cross(&(tool.position - origin));
            j.view_mut((0, c), (3, 1)).copy_from(&lin);
            j.view_mut((3, c), (3, 1)).copy_from(axis);
        }
        j
    }

    pub fn within_limits(&self, q: &DVector<f64>, slack: f64) -> Option<(usize, f64)> {
        self.joints
            .iter()
            .zip(q.iter())
            .enumerate()
            .find(|(_, (spec, &v))| v < spec.lower - slack || v > spec.upper + slack)
            .map(|(k, (_, &v))| (k, v))
    }

    /// Damped least-squares inverse kinematics from `seed`.
    pub fn inverse_kinematics(&self, base: &Pose, target: &Pose, seed: &DVector<f64>) -> Option<DVector<f64>> {
        let mut q = seed.clone();
        for _ in 0..500 {
            let pose = self.forward_kinematics(base, &q);
            let err = stack6(
                &(target.position - pose.position),
                &matrix_to_rotvec(&(target.rotation * pose.rotation.transpose())),
            );
            if err.norm() < 1e-13 {
                for (k, v) in q.iter_mut().enumerate() {
                    let spec = &self.joints[k];
                    *v = wrap_angle(*v);
                    if *v < spec.lower || *v > spec.upper {
                        return None;
                    }
                }
                return Some(q);
            }
            let j = self.jacobian(base, &q);
            let damping = if err.norm() > 1e-3 { 1e-2 } else { 0.0 };
            let step = pseudoinverse(&j, damping) * DVector::from_iterator(6, err.iter().copied());
            let scale = (0.2 / step.amax()).min(1.0);
            q += step * scale;
        }
        None
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + two_pi
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpedanceParams {
    pub inertia: Matrix6<f64>,
    pub damping: Matrix6<f64>,
    pub stiffness: Matrix6<f64>,
}

impl Default for ImpedanceParams {
    fn default() -> Self {
        Self::from_diagonals(&[50.0; 6], &[100.0; 6], &[50.0; 6])
    }
}

impl ImpedanceParams {
    pub fn from_diagonals(inertia: &[f64; 6], damping: &[f64; 6], stiffness: &[f64; 6]) -> Self {
        Self {
            inertia: Matrix6::from_diagonal(&Vec6::from_row_slice(inertia)),
            damping: Matrix6::from_diagonal(&Vec6::from_row_slice(damping)),
            stiffness: Matrix6::from_diagonal(&Vec6::from_row_slice(stiffness)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_spd("impedance inertia", &self.inertia)?;
        check_spd("impedance damping", &self.damping)?;
        check_spd("impedance stiffness", &self.stiffness)
    }
}

/// Desired end-effector motion derived from the object reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndEffectorDesired {
    pub pose: Pose,
    pub velocity: Twist,
    /// `[linear; angular]` acceleration.
    pub acceleration: Vec6,
}

/// Rigid-grasp kinematics: where the end-effector must be, and how it must
/// move, for the object to follow `object`.
///
/// `grasp_offset` is the grasp point relative to the control point in the
/// object frame; `grasp_rotation` is the end-effector orientation in the
/// object frame.
pub fn distribute_motion(object: &ObjectMotionRef, grasp_offset: &Vec3, grasp_rotation: &Mat3) -> EndEffectorDesired {
    let r = object.rotation * grasp_offset;
    let v = &object.velocity;
    let (lin_acc, ang_acc) = split6(&object.acceleration);
    let w = v.angular;
    let p_dot = v.linear - r.cross(&w);
    let p_ddot = lin_acc - w.cross(&r.cross(&w)) - r.cross(&ang_acc);
    EndEffectorDesired {
        pose: Pose::new(object.position + r, object.rotation * grasp_rotation),
        velocity: Twist::new(p_dot, w),
        acceleration: stack6(&p_ddot, &ang_acc),
    }
}

/// Maps world-frame six-vectors into the desired end-effector frame.
pub fn frame_transform(r_desired: &Mat3) -> Matrix6<f64> {
    let rt = r_desired.transpose();
    let mut t = Matrix6::zeros();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    t.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
    t
}

/// Pose error of `actual` relative to `desired`, in the desired frame.
/// Orientation error is the rotation vector of `R_dᵀ R_a`.
pub fn pose_error(actual: &Pose, desired: &Pose) -> Vec6 {
    let rt = desired.rotation.transpose();
    stack6(
        &(rt * (actual.position - desired.position)),
        &matrix_to_rotvec(&(rt * actual.rotation)),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpedanceOutput {
    /// Updated reference twist (world frame).
    pub reference: Twist,
    /// Reference acceleration used for the update (world frame).
    pub acceleration: Vec6,
    /// Acceleration error in the desired frame.
    pub delta_accel: Vec6,
}

/// One step of `M Δv̇ + K_d Δv + K_p Δx = h`, all in the desired frame.
/// Solves for `Δv̇`, maps it back to a world-frame reference acceleration and
/// integrates the reference twist.
#[allow(clippy::too_many_arguments)]
pub fn impedance_step(
    desired: &EndEffectorDesired,
    actual_pose: &Pose,
    actual_twist: &Twist,
    internal: &Wrench,
    reference: &Twist,
    params: &ImpedanceParams,
    dt: f64,
) -> ImpedanceOutput {
    debug_assert!(dt > 0.0 && dt <= 0.1, "dt out of range: {dt}");
    let t = frame_transform(&desired.pose.rotation);
    let dx = pose_error(actual_pose, &desired.pose);
    let dv = t * (actual_twist.to_vec6() - desired.velocity.to_vec6());
    let h = t * internal.to_vec6();
    let rhs = h - params.damping * dv - params.stiffness * dx;
    let delta_accel = params
        .inertia
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| params.inertia.try_inverse().expect("inertia invertible") * rhs);
    // T is orthogonal, so its inverse is its transpose.
    let accel = desired.acceleration + t.transpose() * delta_accel;
    let next = reference.to_vec6() + accel * dt;
    ImpedanceOutput {
        reference: Twist::from_vec6(&next),
        acceleration: accel,
        delta_accel,
    }
}

/// Joint velocities realizing `twist` through the (damped) Jacobian pseudoinverse.
pub fn joint_velocity_command(jacobian: &MatMN, twist: &Vec6, damping: f64) -> DVector<f64> {
    pseudoinverse(jacobian, damping) * DVector::from_iterator(6, twist.iter().copied())
}

/// Integrate a pose by a world-frame twist over `dt`.
pub fn integrate_pose(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    Pose::new(
        pose.position + twist.linear * dt,
        orthonormalize(&(rotvec_to_matrix(&(twist.angular * dt)) * pose.rotation)),
    )
}
