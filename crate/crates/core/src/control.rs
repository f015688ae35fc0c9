//! Muscle-space control: the learned body image, tension feedback, and
//! redundancy resolution between antagonists.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elasticity::{combined_elongation, path_tension, ElasticForm};
use crate::error::{Error, Result};
use crate::kinematics::{lengths_in, Frames, JointAngles};
use crate::model::RobotDescription;
use crate::statics::{reference_lengths, winds_for_pose, Environment, MotorWinds, SensorFrame, StaticProblem};

/// Floor applied to `a_m` and `b_m` after every update.
pub const PARAM_FLOOR: f64 = 1e-3;

/// Learned model of one muscle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleImage {
    pub a_m: f64,
    pub b_m: f64,
    pub form: ElasticForm,
    /// Linear correction per joint, mm/rad.
    pub a: Vec<f64>,
    /// Constant correction, mm.
    pub b0: f64,
}

/// Gradient of one muscle's prediction with respect to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGradient {
    pub a_m: f64,
    pub b_m: f64,
    pub a: Vec<f64>,
    pub b0: f64,
}

/// Predicts the rest length `L0 − w` the winding encoders report when
/// muscle `i` carries loadcell tension `T` in pose `θ`:
///
/// ```text
/// l̂_i = l_geom,i(θ) − e(T_path; a_m, b_m) + A_i·θ + b0_i
/// ```
///
/// `e` is the combined elongation; the stretch it describes has to be taken
/// up by the motor, hence the minus sign.
#[derive(Debug, Clone)]
pub struct BodyImage {
    robot: RobotDescription,
    l0: DVector<f64>,
    pub muscles: Vec<MuscleImage>,
}

impl BodyImage {
    /// Starts from the description's nominal elastic parameters and no
    /// correction.
    pub fn from_robot(robot: &RobotDescription) -> Self {
        let muscles = robot
            .muscles()
            .iter()
            .map(|m| MuscleImage {
                a_m: m.elastic.a_m,
                b_m: m.elastic.b_m,
                form: m.elastic.form,
                a: vec![0.0; robot.dof()],
                b0: 0.0,
            })
            .collect();
        Self {
            robot: robot.clone(),
            l0: reference_lengths(robot),
            muscles,
        }
    }

    pub fn robot(&self) -> &RobotDescription {
        &self.robot
    }

    fn check(&self, theta: &JointAngles, t: &DVector<f64>) -> Result<()> {
        theta.check_len(&self.robot)?;
        if t.len() != self.muscles.len() {
            return Err(Error::Dimension {
                what: "tension vector",
                expected: self.muscles.len(),
                got: t.len(),
            });
        }
        Ok(())
    }

    fn elongation(&self, i: usize, t_sensor: f64) -> (f64, f64, f64) {
        let m = &self.muscles[i];
        let t = path_tension(t_sensor.max(0.0), self.robot.muscles()[i].folded);
        let (a, b) = (m.a_m, m.b_m);
        // (e, de/da, de/db)
        match m.form {
            ElasticForm::ExpShifted => {
                let e = (t / a).ln_1p() / b;
                (e, -t / (a * (a + t) * b), -e / b)
            }
            ElasticForm::Exp if t > a => {
                let e = (t / a).ln() / b;
                (e, -1.0 / (a * b), -e / b)
            }
            ElasticForm::Exp => (0.0, 0.0, 0.0),
        }
    }

    /// Predicted rest lengths, mm. `t_sensor` are loadcell readings.
    pub fn predict(&self, theta: &JointAngles, t_sensor: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(theta, t_sensor)?;
        let frames = Frames::compute(&self.robot, theta)?;
        let geom = lengths_in(&self.robot, &frames);
        Ok(DVector::from_iterator(
            self.muscles.len(),
            self.muscles.iter().enumerate().map(|(i, m)| {
                let corr: f64 = m.a.iter().zip(theta.iter()).map(|(a, t)| a * t).sum();
                geom[i] - self.elongation(i, t_sensor[i]).0 + corr + m.b0
            }),
        ))
    }

    /// `∂l̂_i/∂φ_i` for every muscle.
    pub fn prediction_gradient(&self, theta: &JointAngles, t_sensor: &DVector<f64>) -> Result<Vec<ImageGradient>> {
        self.check(theta, t_sensor)?;
        Ok((0..self.muscles.len())
            .map(|i| {
                let (_, de_da, de_db) = self.elongation(i, t_sensor[i]);
                ImageGradient {
                    a_m: -de_da,
                    b_m: -de_db,
                    a: theta.iter().copied().collect(),
                    b0: 1.0,
                }
            })
            .collect())
    }

    /// `½ Σ (l̂ − l_meas)²` over the given frames.
    pub fn loss(&self, frames: &[SensorFrame]) -> Result<f64> {
        let mut sum = 0.0;
        for f in frames {
            let r = self.predict(&f.theta_meas, &f.t_meas)? - &f.l_meas;
            sum += 0.5 * r.norm_squared();
        }
        Ok(sum)
    }

    /// Converts commanded rest lengths to winds, `w = L0 − l_cmd`, clamped
    /// to the actuator range. The flag reports whether any wind was clamped.
    pub fn winds_for_lengths(&self, l_cmd: &DVector<f64>) -> (MotorWinds, bool) {
        let mut clamped = false;
        let w = DVector::from_iterator(
            l_cmd.len(),
            self.robot.muscles().iter().enumerate().map(|(i, m)| {
                let max = m.actuator.max_wind_mm;
                let w = self.l0[i] - l_cmd[i];
                clamped |= w.abs() > max;
                w.clamp(-max, max)
            }),
        );
        (MotorWinds(w), clamped)
    }
}

/// Commanded rest lengths for reaching `theta_target` under the measured
/// tensions.
pub fn target_muscle_lengths(image: &BodyImage, theta_target: &JointAngles, t_measured: &DVector<f64>) -> Result<DVector<f64>> {
    image.predict(theta_target, t_measured)
}

/// Learning rates per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub a_m: f64,
    pub b_m: f64,
    pub a: f64,
    pub b0: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            a_m: 1e-4,
            b_m: 1e-4,
            a: 1e-3,
            b0: 1e-3,
        }
    }
}

/// One gradient step per muscle on `½(l̂_i − l_meas,i)²`. Returns the loss
/// before the step.
pub fn update_body_image(image: &mut BodyImage, sample: &SensorFrame, steps: &StepSizes) -> Result<f64> {
    update_body_image_masked(image, sample, steps, &vec![true; sample.l_meas.len()])
}

/// As [`update_body_image`], touching only the muscles with `mask[i]` set.
/// The returned loss still covers every muscle.
pub fn update_body_image_masked(image: &mut BodyImage, sample: &SensorFrame, steps: &StepSizes, mask: &[bool]) -> Result<f64> {
    let pred = image.predict(&sample.theta_meas, &sample.t_meas)?;
    if sample.l_meas.len() != pred.len() {
        return Err(Error::Dimension {
            what: "measured lengths",
            expected: pred.len(),
            got: sample.l_meas.len(),
        });
    }
    if !sample.l_meas.iter().chain(sample.t_meas.iter()).chain(sample.theta_meas.iter()).all(|v| v.is_finite()) {
        return Err(Error::Argument("sensor frame contains non-finite values".into()));
    }
    if mask.len() != pred.len() {
        return Err(Error::Dimension {
            what: "update mask",
            expected: pred.len(),
            got: mask.len(),
        });
    }
    let grads = image.prediction_gradient(&sample.theta_meas, &sample.t_meas)?;
    let mut loss = 0.0;
    for (i, (m, g)) in image.muscles.iter_mut().zip(grads).enumerate() {
        let r = pred[i] - sample.l_meas[i];
        loss += 0.5 * r * r;
        if !mask[i] {
            continue;
        }
        m.a_m = (m.a_m - steps.a_m * r * g.a_m).max(PARAM_FLOOR);
        m.b_m = (m.b_m - steps.b_m * r * g.b_m).max(PARAM_FLOOR);
        for (a, ga) in m.a.iter_mut().zip(&g.a) {
            *a -= steps.a * r * ga;
        }
        m.b0 -= steps.b0 * r * g.b0;
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Wind rate per newton of tension error, mm/(N·s).
    pub kp: f64,
    /// mm/(N·s²).
    pub ki: f64,
    pub rate_limit_mm_s: f64,
    pub steps: StepSizes,
    /// Smallest tension any muscle is asked to carry, N.
    pub f_min: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp: 10.0,
            ki: 2.0,
            rate_limit_mm_s: 100.0,
            steps: StepSizes::default(),
            f_min: 5.0,
        }
    }
}

/// State of one muscle's tension loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TensionLoop {
    pub wind_mm: f64,
    pub max_wind_mm: f64,
    pub integral: f64,
}

impl TensionLoop {
    pub fn new(wind_mm: f64, max_wind_mm: f64) -> Self {
        Self {
            wind_mm,
            max_wind_mm,
            integral: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensionStep {
    pub increment_mm: f64,
    /// The rate or wind-range limit bound this step.
    pub saturated: bool,
}

/// PI tension feedback on the loadcell reading. Winding in raises tension,
/// so the wind rate follows the error. The integrator holds still while a
/// limit binds.
pub fn tension_control(state: &mut TensionLoop, t_meas: f64, t_target: f64, gains: &ControllerGains, dt: f64) -> Result<TensionStep> {
    if !(t_target >= 0.0) {
        return Err(Error::NegativeTension { index: 0, value: t_target });
    }
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be > 0, got {dt}")));
    }
    let e = t_target - t_meas;
    let raw = dt * (gains.kp * e + gains.ki * (state.integral + e * dt));
    let cap = gains.rate_limit_mm_s * dt;
    let mut inc = raw.clamp(-cap, cap);
    let target = (state.wind_mm + inc).clamp(-state.max_wind_mm, state.max_wind_mm);
    inc = target - state.wind_mm;
    let saturated = inc != raw;
    if !saturated {
        state.integral += e * dt;
    }
    state.wind_mm = target;
    Ok(TensionStep {
        increment_mm: inc,
        saturated,
    })
}

/// Minimum-norm tensions producing `tau`:
///
/// ```text
/// min ½‖f‖²  s.t.  Gᵀf = τ,  f ≥ f_min
/// ```
///
/// Solved on the dual, whose maximiser gives `f = max(f_min, Gλ)`, by
/// semismooth Newton. Raising `f_min` adds co-contraction but leaves `Gᵀf`
/// alone.
pub fn distribute_tensions(g: &DMatrix<f64>, tau: &DVector<f64>, f_min: f64) -> Result<DVector<f64>> {
    let (n, d) = g.shape();
    if tau.len() != d {
        return Err(Error::Dimension {
            what: "desired torque",
            expected: d,
            got: tau.len(),
        });
    }
    if !(f_min >= 0.0) {
        return Err(Error::Argument(format!("f_min must be >= 0, got {f_min}")));
    }
    let at = g.transpose();
    let primal = |lam: &DVector<f64>| (g * lam).map(|v| v.max(f_min));
    let dual = |lam: &DVector<f64>, f: &DVector<f64>| 0.5 * f.norm_squared() - lam.dot(&(&at * f - tau));
    let scale = tau.amax().max(f_min * g.amax()).max(1.0);
    let gram = &at * g;
    let ridge = 1e-14 * gram.diagonal().amax().max(1e-300);

    let mut lam = DVector::zeros(d);
    let mut f = primal(&lam);
    let mut q = -dual(&lam, &f);
    for _ in 0..200 {
        let resid = tau - &at * &f;
        if resid.amax() <= 1e-12 * scale {
            return Ok(f);
        }
        let mut h = DMatrix::zeros(d, d);
        let gl = g * &lam;
        for i in 0..n {
            if gl[i] > f_min {
                let row = g.row(i);
                h += row.transpose() * row;
            }
        }
        h += &gram * 1e-12 + DMatrix::identity(d, d) * ridge;
        let Some(chol) = h.cholesky() else { break };
        let step = chol.solve(&resid);
        // q is concave in λ; back off until it rises. Close to the solution
        // its change drowns in rounding, so a shrinking residual also counts.
        let r0 = resid.norm();
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &lam + &step * t;
            let fc = primal(&cand);
            let qc = -dual(&cand, &fc);
            if qc < q || (tau - &at * &fc).norm() < r0 {
                lam = cand;
                f = fc;
                q = qc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let residual = (tau - &at * &f).amax();
    if residual <= 1e-8 * scale {
        Ok(f)
    } else {
        Err(Error::Infeasible { residual })
    }
}

/// Winds that hold `theta` against gravity, payload and handle with the
/// least tension, every muscle carrying at least `f_min` on the body side.
pub fn hold_pose_winds(robot: &RobotDescription, env: &Environment, theta: &JointAngles, f_min: f64) -> Result<MotorWinds> {
    theta.check_len(robot)?;
    let zero = MotorWinds::zeros(robot.muscle_count());
    let problem = StaticProblem::new(robot, env, &zero)?;
    let e = problem.evaluate(theta);
    let f_body = distribute_tensions(&e.jacobian, &(-&e.external_gradient), f_min)?;
    let path = f_body.component_div(&env.transmission(robot));
    for (i, m) in robot.muscles().iter().enumerate() {
        let limit = path_tension(m.actuator.max_sensor_tension_n, m.folded);
        if path[i] > limit {
            return Err(Error::Infeasible { residual: path[i] - limit });
        }
    }
    // Make sure the stretch is representable before converting.
    for (i, m) in robot.muscles().iter().enumerate() {
        combined_elongation(path[i], &m.elastic)?;
    }
    winds_for_pose(robot, theta, &path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::build_handle_rig;
    use crate::elasticity::{combined_tension, ElasticParams};
    use crate::statics::{equilibrium, NoiseConfig, SimState, SolverOptions};

    fn frame(image: &BodyImage, theta: &[f64], t: &[f64]) -> SensorFrame {
        let th = JointAngles::from_slice(theta);
        let t = DVector::from_column_slice(t);
        SensorFrame {
            l_meas: image.predict(&th, &t).unwrap(),
            theta_meas: th,
            t_meas: t,
            saturated: vec![false; 6],
            timestamp: 0.0,
        }
    }

    #[test]
    fn ideal_image_reduces_to_geometry() {
        let r = build_handle_rig();
        let img = BodyImage::from_robot(&r);
        let th = JointAngles::from_slice(&[-0.3, -0.6]);
        let l = target_muscle_lengths(&img, &th, &DVector::zeros(6)).unwrap();
        let frames = Frames::compute(&r, &th).unwrap();
        assert_eq!(l, lengths_in(&r, &frames));
    }

    #[test]
    fn more_tension_shortens_the_command() {
        let r = build_handle_rig();
        let img = BodyImage::from_robot(&r);
        let th = JointAngles::zeros(2);
        let lo = target_muscle_lengths(&img, &th, &DVector::from_element(6, 10.0)).unwrap();
        let hi = target_muscle_lengths(&img, &th, &DVector::from_element(6, 40.0)).unwrap();
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| b < a));
    }

    #[test]
    fn consistent_sample_is_a_fixed_point() {
        let r = build_handle_rig();
        let mut img = BodyImage::from_robot(&r);
        img.muscles[1].b0 = 2.0;
        let f = frame(&img, &[-0.2, -0.9], &[30.0, 12.0, 50.0, 5.0, 40.0, 8.0]);
        let before = img.muscles.clone();
        let loss = update_body_image(&mut img, &f, &StepSizes::default()).unwrap();
        assert!(loss < 1e-20);
        assert_eq!(img.muscles, before);
    }

    #[test]
    fn prediction_gradient_matches_differences() {
        let r = build_handle_rig();
        let mut img = BodyImage::from_robot(&r);
        let th = JointAngles::from_slice(&[-0.4, -1.1]);
        let t = DVector::from_column_slice(&[30.0, 12.0, 50.0, 5.0, 40.0, 8.0]);
        let g = img.prediction_gradient(&th, &t).unwrap();
        let h = 1e-7;
        for i in 0..6 {
            let base = img.muscles[i].clone();
            let mut fd = |set: &dyn Fn(&mut MuscleImage, f64), x: f64| {
                set(&mut img.muscles[i], x + h);
                let p = img.predict(&th, &t).unwrap()[i];
                set(&mut img.muscles[i], x - h);
                let m = img.predict(&th, &t).unwrap()[i];
                img.muscles[i] = base.clone();
                (p - m) / (2.0 * h)
            };
            let da = fd(&|m, v| m.a_m = v, base.a_m);
            let db = fd(&|m, v| m.b_m = v, base.b_m);
            let d0 = fd(&|m, v| m.b0 = v, base.b0);
            let dz = fd(&|m, v| m.a[1] = v, base.a[1]);
            for (a, b) in [(da, g[i].a_m), (db, g[i].b_m), (d0, g[i].b0), (dz, g[i].a[1])] {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn batch_loss_descends() {
        let r = build_handle_rig();
        let truth = {
            let mut t = BodyImage::from_robot(&r);
            for m in &mut t.muscles {
                m.a_m *= 1.15;
                m.b_m *= 0.9;
                m.b0 = 0.5;
            }
            t
        };
        let batch: Vec<_> = [(-0.2, -0.4), (-0.6, -1.0), (0.1, -0.2)]
            .iter()
            .zip([10.0, 40.0, 80.0])
            .map(|(&(a, b), t)| frame(&truth, &[a, b], &[t; 6]))
            .collect();
        let mut img = BodyImage::from_robot(&r);
        let mut steps = StepSizes {
            a_m: 1e-3,
            b_m: 1e-5,
            a: 1e-3,
            b0: 1e-2,
        };
        let mut prev = img.loss(&batch).unwrap();
        for _ in 0..200 {
            let mut trial = img.clone();
            for f in &batch {
                update_body_image(&mut trial, f, &steps).unwrap();
            }
            let l = trial.loss(&batch).unwrap();
            if l <= prev {
                img = trial;
                prev = l;
            } else {
                steps.a_m *= 0.5;
                steps.b_m *= 0.5;
                steps.a *= 0.5;
                steps.b0 *= 0.5;
            }
        }
        assert!(prev < 0.5 * BodyImage::from_robot(&r).loss(&batch).unwrap());
    }

    #[test]
    fn projection_keeps_parameters_positive() {
        let r = build_handle_rig();
        let mut img = BodyImage::from_robot(&r);
        let mut f = frame(&img, &[0.0, 0.0], &[50.0; 6]);
        f.l_meas.add_scalar_mut(-100.0);
        let big = StepSizes {
            a_m: 10.0,
            b_m: 10.0,
            a: 0.0,
            b0: 0.0,
        };
        update_body_image(&mut img, &f, &big).unwrap();
        assert!(img.muscles.iter().all(|m| m.a_m >= PARAM_FLOOR && m.b_m >= PARAM_FLOOR));
    }

    #[test]
    fn tension_loop_idle_and_limited() {
        let g = ControllerGains::default();
        let mut s = TensionLoop::new(0.0, 150.0);
        let st = tension_control(&mut s, 20.0, 20.0, &g, 0.01).unwrap();
        assert_eq!(st.increment_mm, 0.0);
        assert!(!st.saturated);
        let st = tension_control(&mut s, 0.0, 400.0, &g, 0.01).unwrap();
        assert_eq!(st.increment_mm, 1.0);
        assert!(st.saturated);
        assert!(tension_control(&mut s, 0.0, -1.0, &g, 0.01).is_err());
    }

    #[test]
    fn tension_loop_settles_on_locked_pulley() {
        let p = ElasticParams::GROMMET;
        let g = ControllerGains::default();
        let mut s = TensionLoop::new(0.0, 150.0);
        let mut t = 0.0;
        let mut peak: f64 = 0.0;
        let mut settled = None;
        for k in 0..200 {
            tension_control(&mut s, t, 50.0, &g, 0.01).unwrap();
            t = combined_tension(s.wind_mm, &p);
            peak = peak.max(t);
            if (t - 50.0).abs() <= 1.0 {
                settled.get_or_insert(k);
            } else {
                settled = None;
            }
        }
        assert!(settled.is_some());
        assert!(peak <= 60.0);
    }

    #[test]
    fn zero_torque_zero_tension() {
        let g = DMatrix::from_row_slice(2, 1, &[20.0, -20.0]);
        let f = distribute_tensions(&g, &DVector::zeros(1), 0.0).unwrap();
        assert_eq!(f, DVector::zeros(2));
        let f = distribute_tensions(&g, &DVector::zeros(1), 10.0).unwrap();
        assert!((f[0] - 10.0).abs() < 1e-12 && (f[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn co_contraction_keeps_torque() {
        let g = DMatrix::from_row_slice(3, 1, &[20.0, -15.0, 30.0]);
        let tau = DVector::from_element(1, 500.0);
        for f_min in [0.0, 5.0, 10.0, 40.0] {
            let f = distribute_tensions(&g, &tau, f_min).unwrap();
            assert!((g.transpose() * &f - &tau).amax() < 1e-8);
            assert!(f.iter().all(|&v| v >= f_min - 1e-12));
        }
    }

    #[test]
    fn unreachable_torque_is_infeasible() {
        let g = DMatrix::from_row_slice(2, 1, &[20.0, 30.0]);
        let err = distribute_tensions(&g, &DVector::from_element(1, -100.0), 0.0).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn held_pose_is_an_equilibrium() {
        let r = build_handle_rig();
        let env = Environment::for_robot(&r).with_payload("lower", 1.0, [0.0, 0.0, -240.0]);
        let th = JointAngles::from_slice(&[-0.5, -1.2]);
        let w = hold_pose_winds(&r, &env, &th, 5.0).unwrap();
        let s: SimState = equilibrium(&r, &w, &env, &JointAngles::from_slice(&[-0.4, -1.0]), &SolverOptions::default()).unwrap();
        assert!(s.converged);
        assert!((&s.theta.0 - &th.0).amax() < 1e-6, "{}", s.theta.0);
        let _ = NoiseConfig::none();
    }
}
