use jetstack_core::jet::JetState;
use jetstack_core::model::{allocation_matrix, centroidal_rhs, JointConfig, RobotModel};
use jetstack_core::mpc::hover_trim;
use jetstack_core::pose::BaseState;
use jetstack_core::sim::*;
use nalgebra::{UnitQuaternion, Vector3, Vector4};

fn airborne(model: &RobotModel, z: f64) -> WorldState {
    let mut w = WorldState::standing(model, &SimParams::default());
    w.base.position.z += z;
    w
}

#[test]
fn free_fall_first_step() {
    let model = RobotModel::reference();
    let mut w = airborne(&model, 2.0);
    w.engines_on = false;
    w.jets = [JetState::new(0.0, 0.0); 4];
    let n = world_step(&w, &Vector4::zeros(), &Vector4::zeros(), &model, &SimParams::default(), SIM_DT).unwrap();
    assert!((n.base.lin_velocity.z + 9.81e-3).abs() < 1e-12);
    assert!(n.base.lin_velocity.xy().norm() < 1e-15);
}

#[test]
fn resting_robot_settles_on_its_weight() {
    let model = RobotModel::reference();
    let params = SimParams::default();
    let mut w = WorldState::standing(&model, &params);
    w.engines_on = false;
    w.base.position.z += 0.01;
    for _ in 0..3000 {
        w = world_step(&w, &Vector4::zeros(), &Vector4::zeros(), &model, &params, SIM_DT).unwrap();
    }
    let total: f64 = w.contact_forces.iter().map(|f| f.z).sum();
    assert!((total - model.weight()).abs() < 0.01 * model.weight(), "contact {total}");
    assert!(ground_contact_flag(&w));
    assert!(w.base.lin_velocity.norm() < 1e-3);
}

#[test]
fn balanced_hover_thrust_does_not_accelerate() {
    let model = RobotModel::reference();
    let trim = hover_trim(&model, &JointConfig::zero(), 1.0).unwrap();
    let mut w = airborne(&model, 1.0);
    w.q = trim.q;
    w.jets = std::array::from_fn(|i| JetState::new(trim.thrusts[i], 0.0));
    let n = world_step(&w, &trim.throttle, &trim.q.angles, &model, &SimParams::default(), SIM_DT).unwrap();
    let acc = (n.com_velocity(&model) - w.com_velocity(&model)) / SIM_DT;
    assert!(acc.norm() < 1e-6, "acceleration {acc}");
    assert!(n.base.ang_velocity.norm() / SIM_DT < 1e-6);
}

#[test]
fn torque_free_flight_conserves_energy() {
    let model = RobotModel::reference();
    let params = SimParams::default();
    let mut w = airborne(&model, 30.0);
    w.engines_on = false;
    w.jets = [JetState::new(0.0, 0.0); 4];
    w.base.lin_velocity = Vector3::new(1.0, 0.5, 8.0);
    w.base.ang_velocity = Vector3::new(0.5, -0.3, 1.0);
    w.base.orientation = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3);
    let e0 = w.mechanical_energy(&model);
    for _ in 0..1000 {
        w = world_step(&w, &Vector4::zeros(), &Vector4::zeros(), &model, &params, SIM_DT).unwrap();
    }
    let drift = (w.mechanical_energy(&model) - e0).abs() / e0.abs();
    assert!(drift < 1e-3, "relative drift {drift:e}");
    assert!((w.time - 1.0).abs() < 1e-9);
    assert!((w.base.orientation.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn momentum_derivative_matches_centroidal_rhs_plus_contact() {
    let model = RobotModel::reference();
    let params = SimParams::default();
    let trim = hover_trim(&model, &JointConfig::zero(), 1.0).unwrap();
    let mut w = WorldState::standing(&model, &params);
    w.q = trim.q;
    let (mut sq_err, mut sq_ref) = (0.0, 0.0);
    for k in 0..3000 {
        let s = (k as f64 / 2500.0).min(1.0) * 1.05;
        let throttle = trim.thrusts.map(|t| model.turbine.throttle_for_thrust(t * s));
        let n = world_step(&w, &throttle, &trim.q.angles, &model, &params, SIM_DT).unwrap();
        let (p0, _) = w.momentum(&model);
        let (p1, _) = n.momentum(&model);
        let a = allocation_matrix(&model, &w.q, &w.base.isometry(), &w.com(&model)).unwrap();
        let mut expect = centroidal_rhs(&a, &w.thrusts(), &model, 1.0).unwrap();
        for fc in &n.contact_forces {
            for i in 0..3 {
                expect[i] += fc[i];
            }
        }
        let got = (p1 - p0) / SIM_DT;
        for i in 0..3 {
            sq_err += (got[i] - expect[i]).powi(2);
            sq_ref += expect[i].powi(2) + model.weight().powi(2) / 3.0;
        }
        w = n;
    }
    let rel = (sq_err / sq_ref).sqrt();
    assert!(rel < 0.01, "relative rms {rel:e}");
}

#[test]
fn same_seed_gives_bit_identical_trajectories() {
    let model = RobotModel::reference();
    let params = SimParams::default();
    let run = || {
        let mut w = WorldState::standing(&model, &params);
        let mut s = SensorSuite::new(NoiseConfig::default(), &model).unwrap();
        let mut out = Vec::new();
        for k in 0..500 {
            let th = Vector4::from_element(20.0 + (k / 100) as f64 * 5.0);
            w = world_step(&w, &th, &Vector4::new(0.1, 0.0, -0.1, 0.0), &model, &params, SIM_DT).unwrap();
            let b = s.sample(&w, &model);
            out.push((w, b.imu.map(|i| i.ang_velocity)));
        }
        out
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(format!("{:?}", x), format!("{:?}", y));
    }
}

#[test]
fn sensors_fire_on_their_own_schedules() {
    let model = RobotModel::reference();
    let params = SimParams::default();
    let mut w = WorldState::standing(&model, &params);
    let mut s = SensorSuite::new(NoiseConfig::default(), &model).unwrap();
    let (mut ft, mut imu, mut vio) = (0, 0, 0);
    for _ in 0..1000 {
        w = world_step(&w, &Vector4::zeros(), &Vector4::zeros(), &model, &params, SIM_DT).unwrap();
        let b = s.sample(&w, &model);
        ft += b.ft.is_some() as usize;
        imu += b.imu.is_some() as usize;
        vio += b.vio.is_some() as usize;
        if let Some(v) = b.vio {
            assert!((v.arrival - v.stamp - 0.02).abs() < 1e-12);
        }
    }
    assert_eq!((ft, imu, vio), (100, 200, 30));
}

#[test]
fn noiseless_sensors_report_truth() {
    let model = RobotModel::reference();
    let mut w = WorldState::standing(&model, &SimParams::default());
    w.tick = 100;
    w.jets[1] = JetState::new(77.0, 3.0);
    w.base.ang_velocity = Vector3::new(0.1, 0.2, 0.3);
    let mut s = SensorSuite::new(NoiseConfig::noiseless(), &model).unwrap();
    let b = s.sample(&w, &model);
    let ft = b.ft.unwrap();
    assert!((ft[1].force - model.jets[1].thrust_axis_local.into_inner() * 77.0).norm() < 1e-12);
    assert!((s.rpm_map.thrust(b.rpm.unwrap()[1].rpm) - 77.0).abs() < 1e-9);
    assert_eq!(b.imu.unwrap().ang_velocity, w.base.ang_velocity);
    let v = b.vio.unwrap();
    assert_eq!(v.sample.position, w.base.position);
}

#[test]
fn force_noise_has_configured_spread() {
    let model = RobotModel::reference();
    let mut w = WorldState::standing(&model, &SimParams::default());
    let mut s = SensorSuite::new(NoiseConfig { seed: 99, ..NoiseConfig::default() }, &model).unwrap();
    let mut samples = Vec::new();
    let mut tick = 0;
    while samples.len() < 10_000 {
        tick += 10;
        w.tick = tick;
        let ft = s.sample(&w, &model).ft.unwrap();
        samples.push(ft[0].force.x);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let std = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt();
    assert!((1.9..=2.1).contains(&std), "std {std}");
}

#[test]
fn contact_flag_thresholds() {
    let model = RobotModel::reference();
    let params = SimParams::default();
    let mut w = WorldState::standing(&model, &params);
    w = world_step(&w, &Vector4::zeros(), &Vector4::zeros(), &model, &params, SIM_DT).unwrap();
    assert!(ground_contact_flag(&w));
    let mut up = airborne(&model, 0.5);
    up = world_step(&up, &Vector4::zeros(), &Vector4::zeros(), &model, &params, SIM_DT).unwrap();
    assert!(!ground_contact_flag(&up));
    let mut graze = up;
    graze.contact_forces = [Vector3::new(0.0, 0.0, 0.5), Vector3::zeros()];
    assert!(!ground_contact_flag(&graze));
}

#[test]
fn non_finite_state_is_a_fault() {
    let model = RobotModel::reference();
    let mut w = airborne(&model, 1.0);
    w.base = BaseState { lin_velocity: Vector3::new(f64::NAN, 0.0, 0.0), ..w.base };
    assert!(world_step(&w, &Vector4::zeros(), &Vector4::zeros(), &model, &SimParams::default(), SIM_DT).is_err());
}
