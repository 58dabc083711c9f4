//! Acceptance criteria, one test each. Every test writes a single PASS/FAIL
//! line straight to stdout so the summary survives output capture.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmpih::arm::{frame_transform, impedance_step, integrate_pose, pose_error, ArmModel, EndEffectorDesired, ImpedanceParams};
use mmpih::batch::{run_batch, Execution};
use mmpih::camera::{look_at, CameraModel, ImagePoint, Intrinsics};
use mmpih::config::Config;
use mmpih::harness::aggregate_results;
use mmpih::object_control::{
    admittance_step, grasp_matrix, GraspConfig, ObjectAdmittanceParams, ObjectMotionRef, WrenchDecomposition,
};
use mmpih::perception::{decode_heatmap, encode_heatmap, PegHoleObservation, PegHoleState};
use mmpih::sim::{run_episode, TraceMode};
use mmpih::spatial::{
    matrix_to_rotvec, null_space_basis, pseudoinverse, rot_z, rotvec_to_matrix, MatMN, Pose, Twist, Vec3, Vec6, Wrench,
};
use mmpih::virtual_force::{
    deviation_vector, intersect_plane, random_force_term, resultant_wrench, virtual_peg_forces, Stage,
};

fn report(n: u32, name: &str, outcome: Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("acceptance criterion {n} ({name}): PASS - {detail}"),
        Err(detail) => format!("acceptance criterion {n} ({name}): FAIL - {detail}"),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    if let Err(detail) = outcome {
        panic!("criterion {n} failed: {detail}");
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn success_rate_batch(cfg: &Config, min_rate: f64) -> Result<String, String> {
    let start = Instant::now();
    let results = run_batch(cfg, TraceMode::Off, Execution::default_for_build()).map_err(|e| e.to_string())?;
    let wall = start.elapsed();
    let rep = aggregate_results(&results, cfg.timing.macro_period).map_err(|e| e.to_string())?;
    let detail = format!(
        "{}/{} succeeded (rate {:.2}, need >= {min_rate}), mean completion {:.1} s simulated, wall {:.1} s",
        rep.successes,
        rep.episodes,
        rep.success_rate,
        rep.mean_time.unwrap_or(f64::NAN),
        wall.as_secs_f64()
    );
    check(rep.episodes == 20, || format!("expected 20 episodes, got {}", rep.episodes))?;
    check(rep.success_rate >= min_rate, || detail.clone())?;
    check(wall < Duration::from_secs(120), || format!("too slow: {detail}"))?;
    Ok(detail)
}

#[test]
fn criterion_1_success_rate_default_clearance() {
    let cfg = Config::default();
    report(1, "success rate, 0.2 mm clearance", success_rate_batch(&cfg, 0.85));
}

#[test]
fn criterion_2_success_rate_easier_clearance() {
    let mut cfg = Config::default();
    cfg.scene.hole_radius = 0.0103;
    report(2, "success rate, 0.6 mm clearance", success_rate_batch(&cfg, 0.95));
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.gen_range(-scale..scale))
}

fn random_grasp(rng: &mut ChaCha8Rng) -> GraspConfig {
    let arms = rng.gen_range(2..=3);
    GraspConfig::new((0..arms).map(|_| random_vec(rng, 0.5)).collect(), rng.gen_range(0.1..5.0))
}

fn algebraic_identities() -> Result<String, String> {
    let tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut worst = [0.0f64; 4];
    for _ in 0..1000 {
        let cfg = random_grasp(&mut rng);
        let g = grasp_matrix(&cfg);
        let h_e = DVector::from_fn(g.ncols(), |_, _| rng.gen_range(-20.0..20.0));
        let dec = WrenchDecomposition::new(h_e.clone(), &cfg);
        worst[0] = worst[0].max((&g * &dec.internal).amax());
        worst[1] = worst[1].max((&dec.motion + &dec.internal + &h_e).amax());
    }
    for _ in 0..1000 {
        let rows = rng.gen_range(1..=8);
        let cols = rng.gen_range(1..=12);
        let mut m = MatMN::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0));
        if rng.gen_bool(0.3) && rows > 1 {
            let r0 = m.row(0).into_owned();
            m.set_row(rows - 1, &(r0 * 0.5));
        }
        let p = pseudoinverse(&m, 0.0);
        let e1 = (&m * &p * &m - &m).amax();
        let e2 = (&p * &m * &p - &p).amax();
        let e3 = ((&m * &p).transpose() - &m * &p).amax();
        let e4 = ((&p * &m).transpose() - &p * &m).amax();
        worst[2] = worst[2].max(e1.max(e2).max(e3).max(e4));
        let v = null_space_basis(&m);
        if v.ncols() > 0 {
            let ortho = (v.transpose() * &v - MatMN::identity(v.ncols(), v.ncols())).amax();
            worst[3] = worst[3].max(ortho.max((&m * &v).amax()));
        }
    }
    let names = ["G*h_I", "h_E + h_I + h_e", "Penrose", "null basis"];
    for (name, w) in names.iter().zip(worst) {
        check(w < tol, || format!("{name} residual {w:e} exceeds {tol:e}"))?;
    }
    Ok(format!(
        "max residuals G*h_I {:.1e}, split {:.1e}, Penrose {:.1e}, null basis {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

#[test]
fn criterion_3_algebraic_identities() {
    report(3, "algebraic identities", algebraic_identities());
}

fn random_camera(rng: &mut ChaCha8Rng, target: &Vec3) -> CameraModel {
    let az = rng.gen_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.gen_range(0.2..1.3);
    let dist = rng.gen_range(0.08..0.3);
    let eye = target + Vec3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin()) * dist;
    CameraModel::new(Intrinsics::default(), Pose::new(eye, look_at(&eye, target, &Vec3::z())))
}

fn geometric_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let axis = Vec3::new(0.0, 0.0, -1.0);
    let k_force = 10.0;
    let k_random = 8.0;
    let mut worst_dl: f64 = 0.0;
    let mut worst_ray: f64 = 0.0;
    let mut randoms = 0;
    for _ in 0..1000 {
        let tip = random_vec(&mut rng, 0.2);
        let cam = random_camera(&mut rng, &tip);
        let obs = PegHoleObservation {
            arm_index: 0,
            state: PegHoleState::Separated,
            peg_px: ImagePoint::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)),
            hole_px: ImagePoint::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)),
        };
        if let Ok(d) = deviation_vector(&cam, &obs, &tip, &axis) {
            worst_dl = worst_dl.max(d.dot(&axis).abs());
        }
        let px = cam.project_point(&tip).map_err(|e| e.to_string())?;
        let ray = cam.backproject_ray(&px);
        let hit = intersect_plane(cam.position(), &ray, &tip, &axis).map_err(|e| e.to_string())?;
        worst_ray = worst_ray.max((hit - tip).amax());

        let devs: Vec<Vec3> = (0..2).map(|_| {
            let v = random_vec(&mut rng, 0.03);
            v - axis * v.dot(&axis)
        }).collect();
        let forces = virtual_peg_forces(&devs, k_force).map_err(|e| e.to_string())?;
        let peak = forces.iter().map(|f| f.norm()).fold(0.0, f64::max);
        check((peak - k_force).abs() <= 1e-12 * k_force, || format!("max |F_i| = {peak}, expected {k_force}"))?;

        let levers: Vec<Vec3> = (0..2).map(|_| random_vec(&mut rng, 0.3)).collect();
        let sum = forces.iter().fold(Vec3::zeros(), |a, f| a + f);
        let cam_to_peg: Vec<Vec3> = (0..2).map(|_| random_vec(&mut rng, 0.2)).collect();
        let threshold = rng.gen_range(0.0..25.0);
        let random = random_force_term(&sum, threshold, k_random, &cam_to_peg, &axis, &mut rng).map_err(|e| e.to_string())?;
        let (_, torque) = resultant_wrench(&forces, &levers, &axis, 2.0, &random);
        check(torque.cross(&axis).amax() < 1e-12, || format!("M x l = {:?}", torque.cross(&axis)))?;
        check(random.dot(&axis).abs() < 1e-12, || format!("F_eps . l = {}", random.dot(&axis)))?;
        let n = random.norm();
        check(n == 0.0 || (n - k_random).abs() < 1e-12, || format!("|F_eps| = {n}"))?;
        if n > 0.0 {
            randoms += 1;
        }
    }
    check(worst_dl < 1e-10, || format!("max |d . l| = {worst_dl:e}"))?;
    check(worst_ray < 1e-12, || format!("plane intersection error {worst_ray:e}"))?;
    check(randoms > 0, || "escape force never triggered".into())?;
    Ok(format!("max |d.l| {worst_dl:.1e}, ray recovery {worst_ray:.1e}, {randoms} escape forces all of magnitude k_eps"))
}

#[test]
fn criterion_4_geometric_suite() {
    report(4, "geometric suite", geometric_suite());
}

fn controller_analytics() -> Result<String, String> {
    // Admittance: time constant M/K_d; check after five of them.
    let params = ObjectAdmittanceParams::default();
    let tau = params.inertia[(0, 0)] / params.damping[(0, 0)];
    let dt = tau / 100.0;
    let h_d = Wrench::new(Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 2.0));
    let mut state = ObjectMotionRef::at_rest(Vec3::zeros(), rotvec_to_matrix(&Vec3::new(0.1, -0.2, 0.3)));
    for _ in 0..(5.0 * tau / dt).round() as usize {
        state = admittance_step(&h_d, &Wrench::zero(), &state, &params, dt);
    }
    let expected_v = 10.0 * params.gain[(0, 0)] / params.damping[(0, 0)];
    let expected_w = 2.0 * params.gain[(5, 5)] / params.damping[(5, 5)];
    let rel_v = (state.velocity.linear.x - expected_v).abs() / expected_v;
    let rel_w = (state.velocity.angular.z - expected_w).abs() / expected_w;
    check((expected_v - 0.1).abs() < 1e-15, || format!("10 N should map to 0.1 m/s, got {expected_v}"))?;
    check(rel_v < 0.01 && rel_w < 0.01, || format!("admittance off by {rel_v:.3e} / {rel_w:.3e}"))?;

    // Impedance: hold a static desired pose under a constant internal wrench.
    let imp = ImpedanceParams::default();
    let desired = EndEffectorDesired {
        pose: Pose::new(Vec3::new(0.2, -0.1, 0.3), rotvec_to_matrix(&Vec3::new(0.4, 0.1, -0.7))),
        velocity: Twist::zero(),
        acceleration: Vec6::zeros(),
    };
    let h = Wrench::new(Vec3::new(1.5, -0.5, 0.8), Vec3::new(0.05, 0.02, -0.03));
    let dt = 1e-3;
    let mut pose = desired.pose;
    let mut reference = Twist::zero();
    for _ in 0..40_000 {
        let out = impedance_step(&desired, &pose, &reference, &h, &reference, &imp, dt);
        reference = out.reference;
        pose = integrate_pose(&pose, &reference, dt);
    }
    let h_local = frame_transform(&desired.pose.rotation) * h.to_vec6();
    let residual = (imp.stiffness * pose_error(&pose, &desired.pose) - h_local).amax();
    check(residual < 1e-6, || format!("impedance residual {residual:e}"))?;
    Ok(format!("admittance within {:.2}% of 0.1 m/s, impedance K_p*dx - h = {residual:.1e}", rel_v * 100.0))
}

#[test]
fn criterion_5_controller_analytics() {
    report(5, "controller analytics", controller_analytics());
}

fn kinematics() -> Result<String, String> {
    let model = ArmModel::default();
    let base = Pose::new(Vec3::new(0.55, 0.0, 0.0), rot_z(0.3));
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let h = 1e-6;
    let mut worst_fd: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    for _ in 0..100 {
        let q = DVector::from_fn(model.dof(), |_, _| rng.gen_range(-2.5..2.5));
        let j = model.jacobian(&base, &q);
        for c in 0..model.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let fp = model.forward_kinematics(&base, &qp);
            let fm = model.forward_kinematics(&base, &qm);
            let dp = (fp.position - fm.position) / (2.0 * h);
            let dr = matrix_to_rotvec(&(fp.rotation * fm.rotation.transpose())) / (2.0 * h);
            for r in 0..3 {
                worst_fd = worst_fd.max((j[(r, c)] - dp[r]).abs()).max((j[(r + 3, c)] - dr[r]).abs());
            }
        }
        let (s_min, _) = mmpih::spatial::singular_value_range(&j);
        if s_min > 1e-3 {
            let v = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            worst_inv = worst_inv.max((&j * (pseudoinverse(&j, 0.0) * &v) - &v).amax());
        }
    }
    check(worst_fd < 1e-6, || format!("Jacobian vs finite differences {worst_fd:e}"))?;
    check(worst_inv < 1e-9, || format!("J J+ v - v = {worst_inv:e}"))?;
    Ok(format!("FD error {worst_fd:.1e}, J*J+*v residual {worst_inv:.1e}"))
}

#[test]
fn criterion_6_kinematics() {
    report(6, "kinematics", kinematics());
}

fn heatmap_codec() -> Result<String, String> {
    let (w, h) = (224usize, 224usize);
    let sigmas = [1.0, 5.0, 20.0];
    let failures: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = sigmas
            .iter()
            .map(|&sigma| {
                s.spawn(move || {
                    for row in 0..h {
                        for col in 0..w {
                            let t = ImagePoint::new(col as f64, row as f64);
                            let got = decode_heatmap(&encode_heatmap(t, sigma, w, h));
                            if got != t {
                                return Some(format!("sigma {sigma}: target ({col}, {row}) decoded as {got:?}"));
                            }
                        }
                    }
                    None
                })
            })
            .collect();
        handles.into_iter().filter_map(|h| h.join().expect("codec thread")).collect()
    });
    check(failures.is_empty(), || failures.join("; "))?;
    let hm = encode_heatmap(ImagePoint::new(100.0, 80.0), 5.0, w, h);
    let a = hm.get(105, 80);
    let b = hm.get(100, 90);
    check((a - (-0.5f64).exp()).abs() < 1e-12, || format!("5 px value {a}"))?;
    check((b - (-2.0f64).exp()).abs() < 1e-12, || format!("10 px value {b}"))?;
    Ok(format!("{} targets exact at sigma 1/5/20, offset values exp(-0.5) and exp(-2) match", w * h))
}

#[test]
fn criterion_7_heatmap_codec() {
    report(7, "perception codec", heatmap_codec());
}

fn batch_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let p = e.expect("dir entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("read output"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn determinism() -> Result<String, String> {
    let exe = env!("CARGO_BIN_EXE_mmpih");
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (name, extra) in [("a", None), ("b", None), ("seq", Some("--sequential"))] {
        let dir = root.path().join(name);
        let mut cmd = Command::new(exe);
        cmd.args(["batch", "--episodes", "20", "--seed", "7", "--out"]).arg(&dir);
        if let Some(flag) = extra {
            cmd.arg(flag);
        }
        let status = cmd.output().map_err(|e| e.to_string())?;
        check(status.status.success(), || format!("batch run failed: {}", String::from_utf8_lossy(&status.stderr)))?;
        outputs.push(batch_files(&dir)?);
    }
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    check(names.contains(&"batch.report") && names.contains(&"episode_19.trace"), || format!("unexpected files {names:?}"))?;
    check(outputs[0] == outputs[1], || "two identical runs differ".into())?;
    check(outputs[0] == outputs[2], || "parallel and sequential runs differ".into())?;
    let bytes: usize = outputs[0].iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} files, {bytes} bytes identical across two parallel runs and one sequential run", names.len()))
}

#[test]
fn criterion_8_determinism() {
    report(8, "determinism", determinism());
}

fn staging() -> Result<String, String> {
    let mut cfg = Config::default();
    cfg.perception.pixel_sigma = 0.0;
    cfg.perception.obscured_hole_sigma = 0.0;
    cfg.perception.mislabel_prob = 0.0;
    // Far enough sideways that both pegs start Separated.
    cfg.scene.initial_offset = Some([0.0, 0.026, 0.0]);
    let result = run_episode(&cfg, 99, TraceMode::Every(1)).map_err(|e| e.to_string())?;
    let trace = &result.trace;
    check(
        trace.first().map(|r| r.stage) == Some(Stage::PreContactSearch)
            && trace[0].s1 == PegHoleState::Separated
            && trace[0].s2 == PegHoleState::Separated,
        || format!("first record {:?}", trace.first().map(|r| (r.stage, r.s1, r.s2))),
    )?;
    let k = trace
        .iter()
        .position(|r| r.stage == Stage::PreContactInsert)
        .ok_or("no insert stage recorded")?;
    check(trace[k - 1].stage == Stage::PreContactSearch, || format!("insert preceded by {:?}", trace[k - 1].stage))?;
    check(
        trace[k].s1 == PegHoleState::Overlapped && trace[k].s2 == PegHoleState::Overlapped,
        || format!("insert with states {:?} {:?}", trace[k].s1, trace[k].s2),
    )?;
    let ticks = cfg.timing.ticks_per_macro();
    let dt = cfg.timing.control_period;
    let l = Vec3::new(0.0, 0.0, -1.0);
    let step_end = (k + ticks).min(trace.len());
    let aligned = (k + 1..step_end).find(|&i| {
        let v = (Vec3::from(trace[i].obj_p) - Vec3::from(trace[i - 1].obj_p)) / dt;
        v.norm() > 1e-6 && v.dot(&l) > 0.9 * v.norm()
    });
    let i = aligned.ok_or("object velocity never aligned with +l during the insert step")?;
    let v = (Vec3::from(trace[i].obj_p) - Vec3::from(trace[i - 1].obj_p)) / dt;
    Ok(format!(
        "search -> insert at t = {:.2} s, velocity aligned after {} ticks (v.l/|v| = {:.4}), episode success {}",
        trace[k].t,
        i - k,
        v.dot(&l) / v.norm(),
        result.success
    ))
}

#[test]
fn criterion_9_staging() {
    report(9, "staging behaviour", staging());
}
