//! Object-level force control: grasp matrix, contact wrench estimation,
//! internal/motion wrench split and the admittance law that turns wrench error
//! into a reference object motion.

use nalgebra::{DVector, Matrix6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{
    null_space_basis, orthonormalize, rotvec_to_matrix, skew, split6, Mat3, MatMN, Twist, Vec3, Vec6, Wrench,
};

#[derive(Clone, Debug, PartialEq)]
pub struct GraspConfig {
    /// Grasp point of each arm relative to the control point, world frame.
    pub grasp_offsets: Vec<Vec3>,
    /// Object mass (kg).
    pub object_mass: f64,
    pub gravity: Vec3,
}

impl GraspConfig {
    pub fn new(grasp_offsets: Vec<Vec3>, object_mass: f64) -> Self {
        Self {
            grasp_offsets,
            object_mass,
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }

    pub fn arm_count(&self) -> usize {
        self.grasp_offsets.len()
    }

    pub fn gravity_wrench(&self) -> Wrench {
        Wrench::new(self.gravity * self.object_mass, Vec3::zeros())
    }
}

/// `G = [I 0 … I 0; [r_1]x I … [r_m]x I]`, one 6-column block per arm.
pub fn grasp_matrix(cfg: &GraspConfig) -> MatMN {
    let m = cfg.arm_count();
    let mut g = MatMN::zeros(6, 6 * m);
    for (i, r) in cfg.grasp_offsets.iter().enumerate() {
        let c = 6 * i;
        g.view_mut((0, c), (3, 3)).copy_from(&Mat3::identity());
        g.view_mut((3, c), (3, 3)).copy_from(&skew(r));
        g.view_mut((3, c + 3), (3, 3)).copy_from(&Mat3::identity());
    }
    g
}

pub fn stack_wrenches(wrenches: &[Wrench]) -> DVector<f64> {
    let mut v = DVector::zeros(6 * wrenches.len());
    for (i, w) in wrenches.iter().enumerate() {
        v.fixed_rows_mut::<6>(6 * i).copy_from(&w.to_vec6());
    }
    v
}

pub fn unstack_wrenches(v: &DVector<f64>) -> Vec<Wrench> {
    assert_eq!(v.len() % 6, 0, "stacked wrench length must be a multiple of 6");
    (0..v.len() / 6)
        .map(|i| Wrench::from_vec6(&Vec6::from_iterator(v.rows(6 * i, 6).iter().copied())))
        .collect()
}

/// Environment wrench on the object at the control point, from the
/// end-effector sensor readings with the object's weight removed.
pub fn estimate_contact_wrench(h_e: &DVector<f64>, cfg: &GraspConfig) -> Wrench {
    let g = grasp_matrix(cfg);
    let net = &g * h_e;
    let net = Vec6::from_iterator(net.iter().copied());
    Wrench::from_vec6(&net) - cfg.gravity_wrench()
}

/// Component of `-h_e` in the null space of `G`. Zero for a single arm.
pub fn internal_wrench(h_e: &DVector<f64>, g: &MatMN) -> DVector<f64> {
    let v = null_space_basis(g);
    if v.ncols() == 0 {
        return DVector::zeros(h_e.len());
    }
    // V has orthonormal columns, so V† = Vᵀ.
    -(&v * (v.transpose() * h_e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WrenchDecomposition {
    pub measured: DVector<f64>,
    pub motion: DVector<f64>,
    pub internal: DVector<f64>,
    pub contact: Wrench,
}

impl WrenchDecomposition {
    pub fn new(h_e: DVector<f64>, cfg: &GraspConfig) -> Self {
        let g = grasp_matrix(cfg);
        let internal = internal_wrench(&h_e, &g);
        let motion = -&h_e - &internal;
        let contact = estimate_contact_wrench(&h_e, cfg);
        Self {
            measured: h_e,
            motion,
            internal,
            contact,
        }
    }

    pub fn internal_for(&self, arm: usize) -> Wrench {
        Wrench::from_vec6(&Vec6::from_iterator(self.internal.rows(6 * arm, 6).iter().copied()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectAdmittanceParams {
    pub inertia: Matrix6<f64>,
    pub damping: Matrix6<f64>,
    pub gain: Matrix6<f64>,
    /// `+1` moves the object along `h_d - h_c`; `-1` is the opposite sign.
    pub sign: f64,
}

impl Default for ObjectAdmittanceParams {
    fn default() -> Self {
        Self::from_diagonals(&[10.0; 6], &[1000.0; 6], &[10.0; 6])
    }
}

impl ObjectAdmittanceParams {
    pub fn from_diagonals(inertia: &[f64; 6], damping: &[f64; 6], gain: &[f64; 6]) -> Self {
        Self {
            inertia: Matrix6::from_diagonal(&Vec6::from_row_slice(inertia)),
            damping: Matrix6::from_diagonal(&Vec6::from_row_slice(damping)),
            gain: Matrix6::from_diagonal(&Vec6::from_row_slice(gain)),
            sign: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("inertia", &self.inertia), ("damping", &self.damping), ("gain", &self.gain)] {
            check_spd(name, m)?;
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::ConfigInvalid(format!("admittance sign must be ±1, got {}", self.sign)));
        }
        Ok(())
    }
}

pub(crate) fn check_spd(name: &str, m: &Matrix6<f64>) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 {
        return Err(Error::ConfigInvalid(format!("{name} matrix is not symmetric")));
    }
    if m.symmetric_eigenvalues().iter().any(|&e| e <= 0.0) {
        return Err(Error::ConfigInvalid(format!("{name} matrix is not positive definite")));
    }
    Ok(())
}

/// Reference object motion integrated from the admittance law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotionRef {
    pub position: Vec3,
    pub rotation: Mat3,
    pub velocity: Twist,
    /// `[linear; angular]` acceleration.
    pub acceleration: Vec6,
}

impl ObjectMotionRef {
    pub fn at_rest(position: Vec3, rotation: Mat3) -> Self {
        Self {
            position,
            rotation,
            velocity: Twist::zero(),
            acceleration: Vec6::zeros(),
        }
    }
}

/// One semi-implicit Euler step of
/// `M v̇ = -K_d v + sign · K_p (h_d - h_c)`.
pub fn admittance_step(
    h_d: &Wrench,
    h_c: &Wrench,
    state: &ObjectMotionRef,
    params: &ObjectAdmittanceParams,
    dt: f64,
) -> ObjectMotionRef {
    debug_assert!(dt > 0.0 && dt <= 0.1, "dt out of range: {dt}");
    let v = state.velocity.to_vec6();
    let error = (*h_d - *h_c).to_vec6();
    let rhs = -params.damping * v + params.gain * error * params.sign;
    let accel = params
        .inertia
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| params.inertia.try_inverse().expect("inertia invertible") * rhs);
    let v_next = v + accel * dt;
    let (lin, ang) = split6(&v_next);
    let increment = rotvec_to_matrix(&(state.rotation.transpose() * ang * dt));
    ObjectMotionRef {
        position: state.position + lin * dt,
        rotation: orthonormalize(&(state.rotation * increment)),
        velocity: Twist::new(lin, ang),
        acceleration: accel,
    }
}

/// Steady-state reference velocity for a constant wrench error.
pub fn steady_state_velocity(params: &ObjectAdmittanceParams, error: &Wrench) -> Vec6 {
    let kd_inv = params.damping.try_inverse().expect("damping invertible");
    kd_inv * params.gain * error.to_vec6() * params.sign
}
