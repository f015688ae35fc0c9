//! Handle-turning with online body-image learning.
//!
//! The simulated plant differs from the controller's model: every muscle's
//! elastic parameters are perturbed and the relays lose tension to friction.
//! Each epoch sweeps the crank through the commanded range. At every 1°
//! step the controller solves IK for the grip, asks the body image for the
//! rest lengths that reach that pose under the load it currently feels, and
//! learns from the resulting sensor frame.

use std::io::Write;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{target_muscle_lengths, update_body_image_masked, BodyImage, ControllerGains, StepSizes};
use crate::error::{Error, Result};
use crate::kinematics::{solve_ik, IkOptions, IkTarget, JointAngles};
use crate::model::RobotDescription;
use crate::statics::{equilibrium, synthesize_sensors, Environment, Handle, NoiseConfig, SimState, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub start_deg: f64,
    pub end_deg: f64,
    pub step_deg: f64,
    /// Relative spread of the plant's `a_m`, `b_m` around the nominal values.
    pub mismatch: f64,
    pub relay_friction: f64,
    pub handle: Handle,
    pub gains: ControllerGains,
    pub noise: NoiseConfig,
    /// Equilibrium gradient tolerance, N·mm/rad.
    pub solver_tol: f64,
}

impl ExperimentConfig {
    /// Defaults for the planar handle rig.
    pub fn handle_rig() -> Self {
        Self {
            epochs: 8,
            start_deg: -30.0,
            end_deg: 60.0,
            step_deg: 1.0,
            mismatch: 0.2,
            relay_friction: 0.03,
            handle: Handle {
                pivot_mm: [260.0, 0.0, -230.0],
                axis: [0.0, 1.0, 0.0],
                zero_dir: [1.0, 0.0, 0.0],
                crank_radius_mm: 100.0,
                resistance_nmm: 12000.0,
                stiffness_n_per_mm: 50.0,
                grip_link: "lower".into(),
                grip_point_mm: [0.0, 0.0, -240.0],
                angle_rad: 0.0,
            },
            gains: ControllerGains {
                steps: StepSizes {
                    a_m: 2e-3,
                    b_m: 2e-6,
                    a: 1e-4,
                    b0: 1e-3,
                },
                ..ControllerGains::default()
            },
            noise: NoiseConfig::default(),
            solver_tol: SolverOptions::default().tol,
        }
    }

    fn check(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("at least one epoch is needed".into()));
        }
        if !(self.step_deg > 0.0) || !(self.end_deg > self.start_deg) {
            return Err(Error::Argument("the sweep must run forward in positive steps".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Argument(format!("solver tolerance must be > 0, got {}", self.solver_tol)));
        }
        if !(0.0..1.0).contains(&self.mismatch) {
            return Err(Error::Argument(format!("mismatch must lie in [0, 1), got {}", self.mismatch)));
        }
        Ok(())
    }

    fn commands(&self) -> Vec<f64> {
        let n = ((self.end_deg - self.start_deg) / self.step_deg).round() as usize;
        (0..=n).map(|k| (self.start_deg + k as f64 * self.step_deg).to_radians()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Largest loadcell reading over the sweep, N.
    #[serde(rename = "peak_T_N")]
    pub peak_t_n: f64,
    /// Crank travel over the sweep, deg.
    pub rotation_deg: f64,
    /// Mean over frames of `‖l̂ − l‖∞` over taut muscles on noise-free
    /// data, mm.
    pub pred_err_mm: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub metrics: Vec<EpochMetrics>,
    /// Every equilibrium of every epoch, in order.
    pub trace: Vec<SimState>,
    pub image: BodyImage,
    pub plant: RobotDescription,
}

/// The plant: the same geometry with each muscle's `a_m`, `b_m` scaled by
/// an independent uniform factor in `[1 − spread, 1 + spread]`.
pub fn perturbed_plant(robot: &RobotDescription, spread: f64, seed: u64) -> Result<RobotDescription> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc = robot.doc().clone();
    for m in &mut doc.muscles {
        if spread > 0.0 {
            m.elastic.a_m *= 1.0 + rng.random_range(-spread..=spread);
            m.elastic.b_m *= 1.0 + rng.random_range(-spread..=spread);
        }
    }
    RobotDescription::from_doc(doc)
}

struct Controller<'a> {
    robot: &'a RobotDescription,
    grip: usize,
}

impl Controller<'_> {
    /// Commanded winds for `target`: the image's muscle lengths at the
    /// target pose under the tensions measured now.
    fn command(&self, image: &BodyImage, target: &JointAngles, t_meas: &DVector<f64>) -> Result<crate::statics::MotorWinds> {
        let l_cmd = target_muscle_lengths(image, target, t_meas)?;
        Ok(image.winds_for_lengths(&l_cmd).0)
    }

    fn ik(&self, handle: &Handle, phi: f64, seed: &JointAngles) -> Result<JointAngles> {
        let target = IkTarget {
            link: self.grip,
            point_mm: Vector3::from(handle.grip_point_mm),
            position: handle.crank_point(phi),
            orientation: None,
        };
        let opts = IkOptions {
            pos_tol: 1e-3,
            max_iters: 500,
            ..IkOptions::default()
        };
        Ok(solve_ik(self.robot, &target, seed, &opts)?.angles)
    }
}

/// Runs the experiment; deterministic in `seed`.
pub fn run_handle_learning_experiment(robot: &RobotDescription, config: &ExperimentConfig, seed: u64) -> Result<ExperimentRun> {
    config.check()?;
    let plant = perturbed_plant(robot, config.mismatch, seed)?;
    let mut env = Environment::for_robot(robot).with_handle(config.handle.clone());
    env.relay_friction = config.relay_friction;
    let ctl = Controller {
        robot,
        grip: robot.link_index(&config.handle.grip_link)?,
    };
    let solver = SolverOptions {
        tol: config.solver_tol,
        ..SolverOptions::default()
    };
    let commands = config.commands();
    let truth_noise = NoiseConfig::none();

    let mut image = BodyImage::from_robot(robot);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut trace = Vec::new();
    let mut frame_no = 0u64;

    // Starting pose: grip on the crank at the first command.
    let theta_start = ctl.ik(&config.handle, commands[0], &JointAngles::from_slice(&vec![-0.5; robot.dof()]))?;

    for epoch in 1..=config.epochs {
        let step_err = |k: usize, e: Error| e.at(format!("epoch {epoch}, step {k}"));
        let mut env = env.clone();
        if let Some(h) = env.handle.as_mut() {
            h.angle_rad = commands[0];
        }
        // Settle on the crank holding the start pose against gravity only.
        let free = Environment::for_robot(robot);
        let w0 = crate::control::hold_pose_winds(robot, &free, &theta_start, config.gains.f_min).map_err(|e| step_err(0, e))?;
        let mut state = equilibrium(&plant, &w0, &env, &theta_start, &solver)
            .and_then(SimState::require_converged)
            .map_err(|e| step_err(0, e))?;
        let start_angle = commands[0];
        let mut ik_seed = theta_start.clone();
        let mut peak: f64 = 0.0;
        let mut err_sum = 0.0;

        for (k, &phi) in commands.iter().enumerate().skip(1) {
            if let (Some(h), Some(a)) = (env.handle.as_mut(), state.handle_angle) {
                h.angle_rad = a;
            }
            let frame = synthesize_sensors(&plant, &state, &config.noise, seed, frame_no, frame_no as f64);
            frame_no += 1;
            let target = ctl.ik(&config.handle, phi, &ik_seed).map_err(|e| step_err(k, e))?;
            ik_seed = target.clone();
            let winds = ctl
                .command(&image, &target, &frame.t_meas)
                .map_err(|e| step_err(k, e))?;
            state = equilibrium(&plant, &winds, &env, &state.theta, &solver)
                .and_then(SimState::require_converged)
                .map_err(|e| step_err(k, e))?;

            let truth = synthesize_sensors(&plant, &state, &truth_noise, 0, 0, 0.0);
            let pred = image.predict(&truth.theta_meas, &truth.t_meas)?;
            // A slack wire's length is not set by its path, so only taut
            // muscles are scored.
            err_sum += (pred - &truth.l_meas)
                .iter()
                .zip(truth.t_meas.iter())
                .filter(|(_, &t)| t > 0.0)
                .fold(0.0_f64, |m, (e, _)| m.max(e.abs()));
            peak = peak.max(state.sensor_tensions.amax());

            let frame = synthesize_sensors(&plant, &state, &config.noise, seed, frame_no, frame_no as f64);
            frame_no += 1;
            // A clipped or nearly slack loadcell says little about the
            // elastic curve; such muscles sit this frame out.
            let mask: Vec<bool> = frame
                .t_meas
                .iter()
                .zip(&frame.saturated)
                .map(|(&t, &sat)| !sat && t >= config.gains.f_min)
                .collect();
            update_body_image_masked(&mut image, &frame, &config.gains.steps, &mask).map_err(|e| step_err(k, e))?;
            trace.push(state.clone());
        }
        let end = state.handle_angle.unwrap_or(start_angle);
        metrics.push(EpochMetrics {
            epoch,
            peak_t_n: peak,
            rotation_deg: (end - start_angle).to_degrees(),
            pred_err_mm: err_sum / (commands.len() - 1) as f64,
        });
    }
    Ok(ExperimentRun {
        metrics,
        trace,
        image,
        plant,
    })
}

/// `epoch,peak_T_N,rotation_deg,pred_err_mm`, one row per epoch. With two
/// or more epochs a closing `final/first` row holds the ratio of the last
/// epoch's values to the first's.
pub fn write_metrics_csv(metrics: &[EpochMetrics], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "peak_T_N", "rotation_deg", "pred_err_mm"])?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.peak_t_n.to_string(),
            m.rotation_deg.to_string(),
            m.pred_err_mm.to_string(),
        ])?;
    }
    if let (Some(first), Some(last)) = (metrics.first(), metrics.last()) {
        if metrics.len() > 1 {
            w.write_record([
                "final/first".to_string(),
                (last.peak_t_n / first.peak_t_n).to_string(),
                (last.rotation_deg / first.rotation_deg).to_string(),
                (last.pred_err_mm / first.pred_err_mm).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
