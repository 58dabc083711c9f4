//! Kinematic world: two position-controlled arms rigidly holding a bar with
//! pegs above a plate with holes, penalty contact, wrist force sensors and
//! wrist cameras. Also the closed-loop episode runner.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{distribute_motion, impedance_step, joint_velocity_command, ArmModel};
use crate::camera::{look_at, CameraModel, ImagePoint, Intrinsics};
use crate::config::{Config, ContactSection};
use crate::error::{Error, Result};
use crate::object_control::{admittance_step, grasp_matrix, stack_wrenches, unstack_wrenches, GraspConfig, ObjectMotionRef, WrenchDecomposition};
use crate::perception::{
    classify_state, decode_heatmap, encode_heatmap, ArmView, OraclePerception, PegHoleObservation, PegHoleState, Perception,
};
use crate::spatial::{matrix_to_rotvec, pseudoinverse, rot_x, rot_z, stack6, MatMN, Pose, Twist, Vec3, Wrench};
use crate::virtual_force::{compute_virtual_wrench, ArmInput, Stage};

/// Extra lateral tolerance on the success check (m).
pub const SUCCESS_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peg {
    /// Tip in the object frame.
    pub tip: Vec3,
    /// Unit tip-to-base direction in the object frame.
    pub axis: Vec3,
    pub length: f64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hole {
    /// Centre of the opening on the plate surface.
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmState {
    pub base: Pose,
    pub q: DVector<f64>,
    /// Last commanded joint velocity.
    pub qdot: DVector<f64>,
    /// End-effector pose in the object frame.
    pub grasp: Pose,
    /// Camera pose in the end-effector frame.
    pub camera_mount: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub model: ArmModel,
    pub arms: Vec<ArmState>,
    pub object: Pose,
    pub object_twist: Twist,
    pub pegs: Vec<Peg>,
    pub holes: Vec<Hole>,
    /// Hole axis, pointing into the plate.
    pub axis: Vec3,
    /// Any point on the plate surface.
    pub plate_point: Vec3,
    pub intrinsics: Intrinsics,
    pub object_mass: f64,
    pub time: f64,
}

/// Environment force on one peg tip.
pub fn peg_contact_force(
    tip: &Vec3,
    tip_velocity: &Vec3,
    hole: &Hole,
    peg_radius: f64,
    axis: &Vec3,
    plate_point: &Vec3,
    params: &ContactSection,
) -> Vec3 {
    let depth = (tip - plate_point).dot(axis);
    if depth <= 0.0 {
        return Vec3::zeros();
    }
    let rel = tip - hole.center;
    let radial = rel - axis * rel.dot(axis);
    let rho = radial.norm();
    if rho < hole.radius {
        let clearance = hole.radius - peg_radius;
        let pen = rho - clearance;
        if pen > 0.0 {
            return -radial / rho * params.k_wall * pen;
        }
        return Vec3::zeros();
    }
    let depth_rate = tip_velocity.dot(axis);
    let normal = params.k_normal * depth + params.c_normal * depth_rate.max(0.0);
    let tangential = tip_velocity - axis * depth_rate;
    let speed = tangential.norm();
    let friction = if speed > 0.0 {
        -tangential / speed.max(params.friction_smoothing) * params.friction * normal
    } else {
        Vec3::zeros()
    };
    -axis * normal + friction
}

impl Scene {
    /// Build the scene with the object displaced by `(dx, dy, yaw)` from
    /// alignment and the peg tips `start_height` above the plate.
    pub fn build(cfg: &Config, offset: [f64; 3]) -> Result<Scene> {
        cfg.validate()?;
        let s = &cfg.scene;
        let axis = Vec3::new(0.0, 0.0, -1.0);
        let holes: Vec<Hole> = s
            .holes
            .iter()
            .map(|h| Hole {
                center: Vec3::new(h[0], h[1], 0.0),
                radius: s.hole_radius,
            })
            .collect();
        // Object frame sits at the hole-pattern centroid when aligned, with
        // pegs hanging down by their length.
        let centroid = holes.iter().fold(Vec3::zeros(), |a, h| a + h.center) / holes.len() as f64;
        let pegs: Vec<Peg> = holes
            .iter()
            .map(|h| Peg {
                tip: h.center - centroid - Vec3::z() * s.peg_length,
                axis: Vec3::z(),
                length: s.peg_length,
                radius: s.peg_radius,
            })
            .collect();
        let object = Pose::new(
            centroid + Vec3::new(offset[0], offset[1], s.peg_length + s.start_height),
            rot_z(offset[2]),
        );

        let model = cfg.arm.clone();
        let mut arms = Vec::with_capacity(holes.len());
        for (i, (&gx, base_xy)) in s.grasp_x.iter().zip(&s.arm_bases).enumerate() {
            let base = Pose::new(Vec3::new(base_xy[0], base_xy[1], 0.0), nalgebra::Matrix3::identity());
            // Tool z points down; each end-effector x axis points back at its own base.
            let facing = if gx >= 0.0 { 0.0 } else { std::f64::consts::PI };
            let grasp = Pose::new(Vec3::new(gx, 0.0, 0.0), rot_z(facing) * rot_x(std::f64::consts::PI));
            let target = object.compose(&grasp);
            let q = solve_grasp_ik(&model, &base, &target).ok_or_else(|| {
                Error::ConfigInvalid(format!("no inverse kinematics solution for arm {i} at its grasp"))
            })?;
            let ee = model.forward_kinematics(&base, &q);

            let tip = object.transform_point(&pegs[i].tip);
            let az = cfg.camera.azimuth_deg[i].to_radians();
            let el = cfg.camera.elevation_deg.to_radians();
            let horizontal = object.rotation * Vec3::new(az.cos(), az.sin(), 0.0);
            let eye = tip + (horizontal * el.cos() - axis * el.sin()) * cfg.camera.distance;
            let rotation = look_at(&eye, &tip, &-axis);
            let camera_mount = ee.inverse().compose(&Pose::new(eye, rotation));
            arms.push(ArmState {
                base,
                qdot: DVector::zeros(q.len()),
                q,
                grasp,
                camera_mount,
            });
        }
        Ok(Scene {
            model,
            arms,
            object,
            object_twist: Twist::zero(),
            pegs,
            holes,
            axis,
            plate_point: Vec3::zeros(),
            intrinsics: cfg.camera.intrinsics,
            object_mass: s.object_mass,
            time: 0.0,
        })
    }

    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }

    pub fn ee_pose(&self, i: usize) -> Pose {
        let a = &self.arms[i];
        self.model.forward_kinematics(&a.base, &a.q)
    }

    pub fn jacobian(&self, i: usize) -> MatMN {
        let a = &self.arms[i];
        self.model.jacobian(&a.base, &a.q)
    }

    pub fn ee_twist(&self, i: usize) -> Twist {
        let v = self.jacobian(i) * &self.arms[i].qdot;
        Twist::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }

    pub fn camera(&self, i: usize) -> CameraModel {
        CameraModel::new(self.intrinsics, self.ee_pose(i).compose(&self.arms[i].camera_mount))
    }

    pub fn peg_tip(&self, i: usize) -> Vec3 {
        self.object.transform_point(&self.pegs[i].tip)
    }

    pub fn peg_tip_velocity(&self, i: usize) -> Vec3 {
        let r = self.peg_tip(i) - self.object.position;
        self.object_twist.linear + self.object_twist.angular.cross(&r)
    }

    pub fn arm_view(&self, i: usize) -> ArmView {
        ArmView {
            camera: self.camera(i),
            peg_tip: self.peg_tip(i),
            peg_axis: self.object.rotation * self.pegs[i].axis,
            peg_length: self.pegs[i].length,
            peg_radius: self.pegs[i].radius,
            hole_center: self.holes[i].center,
            hole_radius: self.holes[i].radius,
            hole_axis: self.axis,
        }
    }

    pub fn true_states(&self) -> Vec<PegHoleState> {
        (0..self.arm_count()).map(|i| classify_state(&self.arm_view(i))).collect()
    }

    /// Grasp offsets from the control point, world frame.
    pub fn grasp_config(&self) -> GraspConfig {
        let offsets = self
            .arms
            .iter()
            .map(|a| self.object.rotation * a.grasp.position)
            .collect();
        GraspConfig::new(offsets, self.object_mass)
    }

    pub fn contact_forces(&self, params: &ContactSection) -> Vec<Vec3> {
        (0..self.pegs.len())
            .map(|i| {
                peg_contact_force(
                    &self.peg_tip(i),
                    &self.peg_tip_velocity(i),
                    &self.holes[i],
                    self.pegs[i].radius,
                    &self.axis,
                    &self.plate_point,
                    params,
                )
            })
            .collect()
    }

    /// Total environment wrench on the object about its control point.
    pub fn environment_wrench(&self, params: &ContactSection) -> Wrench {
        self.contact_forces(params)
            .iter()
            .enumerate()
            .fold(Wrench::zero(), |acc, (i, f)| {
                acc + Wrench::new(*f, (self.peg_tip(i) - self.object.position).cross(f))
            })
    }

    /// Deviation of arm `i` from its ideal rigid grasp, `[position; rotvec]`.
    pub fn grasp_residual(&self, i: usize) -> (Vec3, Vec3) {
        let ideal = self.object.compose(&self.arms[i].grasp);
        let actual = self.ee_pose(i);
        (
            actual.position - ideal.position,
            matrix_to_rotvec(&(actual.rotation * ideal.rotation.transpose())),
        )
    }

    /// Wrench the object exerts on each end-effector, as its wrist sensor reads it.
    ///
    /// Quasi-static: the sensors jointly carry the weight and the contact
    /// load, shared by the minimum-norm solution, plus the internal load of
    /// the slightly overconstrained closed chain.
    pub fn sensor_wrenches(&self, params: &ContactSection) -> Vec<Wrench> {
        let cfg = self.grasp_config();
        let g = grasp_matrix(&cfg);
        let load = self.environment_wrench(params) + cfg.gravity_wrench();
        let load6 = DVector::from_iterator(6, load.to_vec6().iter().copied());
        let g_pinv = pseudoinverse(&g, 0.0);
        let mut h = &g_pinv * load6;
        let springs: Vec<Wrench> = (0..self.arm_count())
            .map(|i| {
                let (dp, dr) = self.grasp_residual(i);
                Wrench::new(-dp * params.grasp_stiffness, -dr * params.grasp_rot_stiffness)
            })
            .collect();
        let s = stack_wrenches(&springs);
        let n = s.len();
        h += (MatMN::identity(n, n) - &g_pinv * &g) * s;
        unstack_wrenches(&h)
    }

    /// Advance joints by `qdot` and re-seat the object on arm 0.
    pub fn step(&mut self, qdots: &[DVector<f64>], dt: f64) -> Result<()> {
        for (k, (arm, qd)) in self.arms.iter_mut().zip(qdots).enumerate() {
            arm.qdot = qd.clone();
            arm.q += qd * dt;
            if let Some((joint, value)) = self.model.within_limits(&arm.q, 0.0) {
                return Err(Error::JointLimitViolation { arm: k, joint, value });
            }
        }
        let ee = self.ee_pose(0);
        self.object = ee.compose(&self.arms[0].grasp.inverse());
        let t = self.ee_twist(0);
        self.object_twist = Twist::new(t.linear + t.angular.cross(&(self.object.position - ee.position)), t.angular);
        self.time += dt;
        Ok(())
    }

    /// Insertion depth and lateral offset of each peg tip.
    pub fn insertion(&self) -> Vec<(f64, f64)> {
        (0..self.pegs.len())
            .map(|i| {
                let tip = self.peg_tip(i);
                let rel = tip - self.holes[i].center;
                let radial = rel - self.axis * rel.dot(&self.axis);
                ((tip - self.plate_point).dot(&self.axis), radial.norm())
            })
            .collect()
    }

    pub fn is_inserted(&self, success_depth: f64) -> bool {
        self.insertion().iter().zip(&self.pegs).zip(&self.holes).all(|(((depth, rho), peg), hole)| {
            *depth >= success_depth && *rho <= hole.radius - peg.radius + SUCCESS_SLACK
        })
    }
}

fn solve_grasp_ik(model: &ArmModel, base: &Pose, target: &Pose) -> Option<DVector<f64>> {
    let d = target.position - base.position;
    let yaw = d.y.atan2(d.x);
    let seeds = [
        [yaw, 0.6, 0.0, 1.6, 0.0, 1.0, 0.0],
        [yaw, 0.3, 0.0, 2.0, 0.0, 0.8, 0.0],
        [yaw, 0.9, 0.0, 1.2, 0.0, 1.0, 0.0],
    ];
    seeds
        .iter()
        .find_map(|s| model.inverse_kinematics(base, target, &DVector::from_row_slice(s)))
}

/// splitmix64 finalizer; decorrelates (base seed, episode index) pairs.
pub fn episode_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 0;
const STREAM_CONTROL: u64 = 1;
const STREAM_PERCEPTION: u64 = 16;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Initial (dx, dy, yaw): uniform over a disc and a symmetric yaw interval.
pub fn sample_initial_offset(cfg: &Config, seed: u64) -> [f64; 3] {
    if let Some(o) = cfg.scene.initial_offset {
        return o;
    }
    let mut rng = stream(seed, STREAM_INIT);
    let r = cfg.scene.initial_offset_radius * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let yaw = if cfg.scene.initial_yaw_range > 0.0 {
        rng.gen_range(-cfg.scene.initial_yaw_range..=cfg.scene.initial_yaw_range)
    } else {
        0.0
    };
    [r * phi.cos(), r * phi.sin(), yaw]
}

/// Re-express a point through an encoded/decoded heatmap, as a keypoint
/// network's output would be.
fn through_heatmap(cam: &CameraModel, pt: ImagePoint, sigma: f64) -> ImagePoint {
    let (col, row) = cam.to_raster(&pt);
    let hm = encode_heatmap(ImagePoint::new(col, row), sigma, cam.intrinsics.width as usize, cam.intrinsics.height as usize);
    let peak = decode_heatmap(&hm);
    cam.from_raster(peak.u, peak.v)
}

/// One subsampled inner tick. Field names are part of the trace file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub obj_p: [f64; 3],
    /// Row-major rotation.
    #[serde(rename = "obj_R")]
    pub obj_r: [f64; 9],
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub h_c: [f64; 6],
    pub h_d: [f64; 6],
    #[serde(rename = "hI_norm1")]
    pub hi_norm1: f64,
    #[serde(rename = "hI_norm2")]
    pub hi_norm2: f64,
    pub d1: [f64; 3],
    pub d2: [f64; 3],
    pub s1: PegHoleState,
    pub s2: PegHoleState,
    pub stage: Stage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub success: bool,
    pub macro_steps: usize,
    pub sim_time: f64,
    /// Macro steps times the macro period, for successful runs.
    pub completion_time: Option<f64>,
    pub failure: Option<String>,
    pub initial_offset: [f64; 3],
    /// Largest grasp-frame residual seen on any arm (m).
    pub max_grasp_residual: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

fn arr6(w: &Wrench) -> [f64; 6] {
    let v = w.to_vec6();
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

/// Which inner-loop quantities to record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    Off,
    Every(usize),
}

/// Closed-loop episode: perception and virtual wrench once per macro step,
/// admittance, impedance and resolved-rate control every tick.
pub fn run_episode(cfg: &Config, seed: u64, trace: TraceMode) -> Result<EpisodeResult> {
    cfg.validate()?;
    let offset = sample_initial_offset(cfg, seed);
    let mut scene = Scene::build(cfg, offset)?;
    let n = scene.arm_count();
    let dt = cfg.timing.control_period;
    let ticks = cfg.timing.ticks_per_macro();
    let act_ticks = cfg.timing.actuation_ticks();
    let obj_params = cfg.object.params();
    let imp_params = cfg.impedance.params();
    let mut control_rng = stream(seed, STREAM_CONTROL);
    let streams = (0..n).map(|i| stream(seed, STREAM_PERCEPTION + i as u64)).collect();
    let mut perception = OraclePerception::new(cfg.perception.noise(), streams);

    let mut reference = ObjectMotionRef::at_rest(scene.object.position, scene.object.rotation);
    let mut v_ref = vec![Twist::zero(); n];
    let mut contact = false;
    let mut records = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut tick_count: usize = 0;

    let mut result = EpisodeResult {
        seed,
        success: false,
        macro_steps: 0,
        sim_time: 0.0,
        completion_time: None,
        failure: None,
        initial_offset: offset,
        max_grasp_residual: 0.0,
        trace: Vec::new(),
    };

    'outer: for step in 0..cfg.run.max_macro_steps {
        result.macro_steps = step + 1;
        let cameras: Vec<CameraModel> = (0..n).map(|i| scene.camera(i)).collect();
        let observations: Vec<Option<PegHoleObservation>> = (0..n)
            .map(|i| {
                let view = scene.arm_view(i);
                match perception.observe(&view, i) {
                    Ok(mut o) => {
                        o.peg_px = through_heatmap(&cameras[i], o.peg_px, cfg.perception.heatmap_sigma);
                        o.hole_px = through_heatmap(&cameras[i], o.hole_px, cfg.perception.heatmap_sigma);
                        Some(o)
                    }
                    Err(e) => {
                        log::debug!("perception failed on arm {i}: {e}");
                        None
                    }
                }
            })
            .collect();
        let inputs: Vec<ArmInput<'_>> = (0..n)
            .map(|i| ArmInput {
                camera: &cameras[i],
                observation: observations[i].as_ref(),
                peg_tip: scene.peg_tip(i),
                lever_arm: scene.peg_tip(i) - scene.object.position,
            })
            .collect();
        let vw = compute_virtual_wrench(&cfg.virtual_force, &inputs, &scene.axis, contact, &mut control_rng);
        let states: Vec<PegHoleState> = observations
            .iter()
            .map(|o| o.map(|o| o.state).unwrap_or(PegHoleState::Obscured))
            .collect();
        log::trace!("step {step}: stage {} states {:?}", vw.desired.stage.as_str(), states);

        for tick in 0..ticks {
            // Insertion is a guarded move: it runs until contact is felt.
            let active = match vw.desired.stage {
                Stage::PreContactInsert => !contact,
                _ => tick < act_ticks,
            };
            let h_d = if active { vw.desired.wrench } else { Wrench::zero() };
            let h_e = stack_wrenches(&scene.sensor_wrenches(&cfg.contact));
            let dec = WrenchDecomposition::new(h_e, &scene.grasp_config());
            if dec.contact.force.norm() > cfg.contact.threshold {
                contact = true;
            }
            // The admittance is driven by the reaction the object exerts on
            // its surroundings, so pressing into a surface balances h_d.
            reference = admittance_step(&h_d, &-dec.contact, &reference, &obj_params, dt);

            let mut qdots = Vec::with_capacity(n);
            for (i, vr) in v_ref.iter_mut().enumerate() {
                let grasp = scene.arms[i].grasp;
                let desired = distribute_motion(&reference, &grasp.position, &grasp.rotation);
                // Internal load as felt at the end-effector; yielding to it
                // keeps the closed chain compliant.
                let felt = -dec.internal_for(i);
                let out = impedance_step(&desired, &scene.ee_pose(i), &scene.ee_twist(i), &felt, vr, &imp_params, dt);
                *vr = out.reference;
                let j = scene.jacobian(i);
                let (s_min, _) = crate::spatial::singular_value_range(&j);
                if s_min < crate::arm::NEAR_SINGULAR {
                    log::warn!("arm {i} near singular (sigma_min = {s_min:.2e})");
                }
                qdots.push(joint_velocity_command(&j, &stack6(&vr.linear, &vr.angular), cfg.impedance.jacobian_damping));
            }
            if let Err(e) = scene.step(&qdots, dt) {
                result.failure = Some(e.to_string());
                break 'outer;
            }
            tick_count += 1;
            for i in 0..n {
                let (dp, _) = scene.grasp_residual(i);
                max_residual = max_residual.max(dp.norm());
            }

            if let TraceMode::Every(every) = trace {
                if tick_count % every == 0 {
                    let r = scene.object.rotation;
                    let d = |i: usize| [vw.deviations[i].x, vw.deviations[i].y, vw.deviations[i].z];
                    records.push(TraceRecord {
                        t: scene.time,
                        obj_p: scene.object.position.into(),
                        obj_r: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
                        q1: scene.arms[0].q.iter().copied().collect(),
                        q2: scene.arms[1].q.iter().copied().collect(),
                        h_c: arr6(&dec.contact),
                        h_d: arr6(&h_d),
                        hi_norm1: dec.internal_for(0).to_vec6().norm(),
                        hi_norm2: dec.internal_for(1).to_vec6().norm(),
                        d1: d(0),
                        d2: d(1),
                        s1: states[0],
                        s2: states[1],
                        stage: vw.desired.stage,
                    });
                }
            }
            if scene.is_inserted(cfg.scene.success_depth) {
                result.success = true;
                result.completion_time = Some((step + 1) as f64 * cfg.timing.macro_period);
                break 'outer;
            }
        }
    }
    result.sim_time = scene.time;
    result.max_grasp_residual = max_residual;
    result.trace = records;
    if !result.success && result.failure.is_none() {
        result.failure = Some(if cfg.run.max_macro_steps == 0 {
            "step limit is zero".into()
        } else {
            "step limit reached".into()
        });
    }
    Ok(result)
}
