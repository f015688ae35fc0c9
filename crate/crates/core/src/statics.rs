//! Quasi-static simulation.
//!
//! At fixed motor winds the arm rests where the total potential
//!
//! ```text
//! V(θ) = Σ η_i E_i(Δl_i) − Σ m gᵀp_com + handle penalty
//! ```
//!
//! is minimal. `Δl_i = l_geom,i(θ) − L0_i + w_i` is the stretch of muscle `i`
//! with `L0` its length at the zero pose, `E_i` the elastic energy of the
//! wire-plus-unit chain and `η_i` the fraction of tension surviving relay
//! friction. Path tensions `T_i = combined_tension(Δl_i)` are taken on the
//! actuator side, which is where the loadcell sits.
//!
//! An actuator holds at most its rated tension (the loadcell range, doubled
//! for a folded route). Beyond that the motor back-drives: tension stays at
//! the limit and the stretch past it is paid out as slip.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::elasticity::{combined_elongation, combined_tension, elastic_energy, path_tension, sensor_tension, ElasticParams};
use crate::error::{Error, Result};
use crate::kinematics::{jacobian_in, lengths_in, Frames, JointAngles, MuscleJacobian};
use crate::model::RobotDescription;

/// Wire taken up at each pulley, mm, in description order. Negative values
/// pay wire out past the reference length.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorWinds(pub DVector<f64>);

impl MotorWinds {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn from_slice(w: &[f64]) -> Self {
        Self(DVector::from_column_slice(w))
    }

    pub fn check(&self, robot: &RobotDescription) -> Result<()> {
        if self.0.len() != robot.muscle_count() {
            return Err(Error::Dimension {
                what: "motor winds",
                expected: robot.muscle_count(),
                got: self.0.len(),
            });
        }
        for (m, &w) in robot.muscles().iter().zip(self.0.iter()) {
            if !(w.abs() <= m.actuator.max_wind_mm) {
                return Err(Error::Argument(format!(
                    "wind {w} mm on `{}` exceeds the actuator limit {} mm",
                    m.id, m.actuator.max_wind_mm
                )));
            }
        }
        Ok(())
    }
}

/// Point mass carried by a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub link: String,
    pub mass_kg: f64,
    /// Position on the link, link frame.
    #[serde(default)]
    pub offset_mm: [f64; 3],
}

fn default_handle_stiffness() -> f64 {
    50.0
}

/// A crank the hand is tied to by a stiff spring.
///
/// The crank turns about `axis` through `pivot_mm`; angle zero points along
/// `zero_dir` (projected onto the crank plane) and the angle grows right-handed
/// about `axis`. The crank only moves once the spring torque exceeds
/// `resistance_nmm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    pub pivot_mm: [f64; 3],
    pub axis: [f64; 3],
    pub zero_dir: [f64; 3],
    pub crank_radius_mm: f64,
    #[serde(default)]
    pub resistance_nmm: f64,
    #[serde(default = "default_handle_stiffness")]
    pub stiffness_n_per_mm: f64,
    pub grip_link: String,
    #[serde(default)]
    pub grip_point_mm: [f64; 3],
    /// Current crank angle, rad. Unwrapped.
    #[serde(default)]
    pub angle_rad: f64,
}

impl Handle {
    fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = Vector3::from(self.axis).normalize();
        let z = Vector3::from(self.zero_dir);
        let e1 = (z - n * n.dot(&z)).normalize();
        (e1, n.cross(&e1), n)
    }

    /// World position of the crank handle at angle `phi`.
    pub fn crank_point(&self, phi: f64) -> Vector3<f64> {
        let (e1, e2, _) = self.basis();
        Vector3::from(self.pivot_mm) + self.crank_radius_mm * (phi.cos() * e1 + phi.sin() * e2)
    }

    /// Crank angle after the hand moves to `p`, starting from `angle_rad`.
    ///
    /// Minimises `½k‖p − c(φ)‖² + R|φ − φ_prev|`: the crank sticks until the
    /// spring torque `k·d·ρ·sin(ψ − φ)` exceeds `R`, then trails the hand's
    /// azimuth `ψ` by the angle at which the two balance.
    pub fn settle(&self, p: &Vector3<f64>) -> f64 {
        let (e1, e2, _) = self.basis();
        let q = p - Vector3::from(self.pivot_mm);
        let (x, y) = (q.dot(&e1), q.dot(&e2));
        let d = x.hypot(y);
        let k_max = self.stiffness_n_per_mm * d * self.crank_radius_mm;
        if d < 1e-12 || !(self.resistance_nmm < k_max) {
            return self.angle_rad;
        }
        let psi = y.atan2(x);
        let delta = wrap(psi - self.angle_rad);
        let lag = (self.resistance_nmm / k_max).asin();
        if delta.abs() <= lag {
            self.angle_rad
        } else {
            self.angle_rad + delta - lag.copysign(delta)
        }
    }

    fn check(&self, robot: &RobotDescription) -> Result<usize> {
        let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
        if !(self.crank_radius_mm > 0.0) {
            return Err(Error::Argument("crank radius must be > 0".into()));
        }
        if !(self.resistance_nmm >= 0.0) || !(self.stiffness_n_per_mm > 0.0) {
            return Err(Error::Argument(
                "handle resistance must be >= 0 and stiffness > 0".into(),
            ));
        }
        if !finite(&self.pivot_mm) || !finite(&self.grip_point_mm) {
            return Err(Error::Argument("handle coordinates must be finite".into()));
        }
        let n = Vector3::from(self.axis);
        let z = Vector3::from(self.zero_dir);
        if !(n.norm() > 1e-9) || !(n.normalize().cross(&z).norm() > 1e-9) {
            return Err(Error::Argument(
                "handle axis must be nonzero and not parallel to its zero direction".into(),
            ));
        }
        robot.link_index(&self.grip_link)
    }
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// Everything outside the robot acting on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// m/s².
    pub gravity: [f64; 3],
    #[serde(default)]
    pub payload: Option<Payload>,
    #[serde(default)]
    pub handle: Option<Handle>,
    /// Tension lost per relay point, in [0, 0.05].
    #[serde(default)]
    pub relay_friction: f64,
}

impl Environment {
    /// Gravity taken from the description, nothing else attached.
    pub fn for_robot(robot: &RobotDescription) -> Self {
        Self {
            gravity: robot.gravity().into(),
            payload: None,
            handle: None,
            relay_friction: 0.0,
        }
    }

    pub fn without_gravity() -> Self {
        Self {
            gravity: [0.0; 3],
            payload: None,
            handle: None,
            relay_friction: 0.0,
        }
    }

    pub fn with_payload(mut self, link: &str, mass_kg: f64, offset_mm: [f64; 3]) -> Self {
        self.payload = Some(Payload {
            link: link.to_string(),
            mass_kg,
            offset_mm,
        });
        self
    }

    pub fn with_handle(mut self, handle: Handle) -> Self {
        self.handle = Some(handle);
        self
    }

    /// Fraction of path tension reaching the body for each muscle.
    pub fn transmission(&self, robot: &RobotDescription) -> DVector<f64> {
        DVector::from_iterator(
            robot.muscle_count(),
            robot
                .muscles()
                .iter()
                .map(|m| (1.0 - self.relay_friction).powi(m.relay_count() as i32)),
        )
    }
}

/// Zero-stretch reference lengths: geometry at the zero pose.
pub fn reference_lengths(robot: &RobotDescription) -> DVector<f64> {
    let frames = Frames::compute(robot, &JointAngles::zeros(robot.dof())).expect("zero pose has robot dof");
    lengths_in(robot, &frames)
}

/// Stretch of one muscle, mm: `l_geom(θ) − (L0 − w)`.
pub fn muscle_stretch(robot: &RobotDescription, theta: &JointAngles, winds: &MotorWinds, muscle_id: &str) -> Result<f64> {
    let i = robot.muscle_index(muscle_id)?;
    winds.check(robot)?;
    let frames = Frames::compute(robot, theta)?;
    Ok(crate::kinematics::length_in(robot, &frames, i) - reference_lengths(robot)[i] + winds.0[i])
}

/// A smooth-enough scalar field to minimise.
pub trait Potential {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `‖∇V‖∞` drops below this, N·mm/rad.
    pub tol: f64,
    pub max_iters: usize,
    /// Largest change of any coordinate in one step, rad.
    pub max_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            max_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Potential at the start and after every accepted step.
    pub values: Vec<f64>,
}

fn hessian(p: &impl Potential, x: &DVector<f64>) -> DMatrix<f64> {
    let n = p.dim();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let step = 1e-5 * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let gp = p.gradient(&xp);
        xp[j] = x[j] - step;
        let gm = p.gradient(&xp);
        xp[j] = x[j];
        h.set_column(j, &((gp - gm) / (2.0 * step)));
    }
    (&h + h.transpose()) * 0.5
}

fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let scale = h.diagonal().amax().max(1e-12);
    let mut mu = 0.0;
    loop {
        let shifted = &h + DMatrix::identity(g.len(), g.len()) * mu;
        if let Some(c) = shifted.cholesky() {
            return -c.solve(g);
        }
        mu = if mu == 0.0 { 1e-8 * scale } else { mu * 10.0 };
    }
}

/// `V(x + d) − V(x)` by 5-point Gauss–Legendre quadrature of `∇V·d`.
/// Used where the change is too small to resolve by subtracting two values
/// of `V`; the gradient stays accurate long after `V` has run out of digits.
fn integrated_change(p: &impl Potential, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    const NODES: [(f64, f64); 5] = [
        (0.0, 0.568_888_888_888_888_9),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    NODES
        .iter()
        .map(|&(t, w)| w * p.gradient(&(x + d * (0.5 * (t + 1.0)))).dot(d))
        .sum::<f64>()
        * 0.5
}

/// Damped Newton with a backtracking line search. Only steps that lower the
/// potential are accepted, so `values` is non-increasing. Each recorded
/// value is the previous one plus the measured change; changes below the
/// rounding level of `V` are measured by [`integrated_change`].
pub fn minimize(p: &impl Potential, x0: DVector<f64>, opts: &SolverOptions) -> Minimum {
    let mut x = x0;
    let mut v = p.value(&x);
    let mut g = p.gradient(&x);
    let mut values = vec![v];
    let mut iterations = 0;
    while g.amax() >= opts.tol && iterations < opts.max_iters {
        iterations += 1;
        let mut accepted = false;
        for dir in [newton_direction(hessian(p, &x), &g), -g.clone()] {
            let mut d = dir;
            let big = d.amax();
            if big > opts.max_step {
                d *= opts.max_step / big;
            }
            let slope = g.dot(&d);
            if !(slope < 0.0) {
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..60 {
                let step = &d * alpha;
                let xn = &x + &step;
                if xn == x {
                    break;
                }
                let vn = p.value(&xn);
                let mut change = vn - v;
                if change.abs() < 1e-9 * (1.0 + v.abs()) {
                    change = integrated_change(p, &x, &step);
                }
                if change <= 1e-4 * alpha * slope {
                    let (mut xn, mut vn, mut change) = (xn, vn, change);
                    let mut gn = p.gradient(&xn);
                    // Overshot the line minimum (typical when the Hessian
                    // straddles a kink in curvature): try the secant point.
                    let s1 = gn.dot(&step);
                    let s0 = alpha * slope;
                    if s1 > 0.0 {
                        let ds = &step * (s0 / (s0 - s1));
                        let xs = &x + &ds;
                        if xs != x {
                            let cs = integrated_change(p, &x, &ds);
                            if cs < change {
                                vn = p.value(&xs);
                                gn = p.gradient(&xs);
                                xn = xs;
                                change = cs;
                            }
                        }
                    }
                    x = xn;
                    v = vn;
                    g = gn;
                    values.push(values.last().unwrap() + change);
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    Minimum {
        grad_norm: g.amax(),
        converged: g.amax() < opts.tol,
        x,
        value: v,
        iterations,
        values,
    }
}

/// Robot statics at fixed winds.
pub struct StaticProblem<'a> {
    robot: &'a RobotDescription,
    env: &'a Environment,
    winds: &'a MotorWinds,
    l0: DVector<f64>,
    eta: DVector<f64>,
    /// Path tension limit and the stretch at which it is reached.
    caps: Vec<(f64, f64)>,
    gravity: Vector3<f64>,
    /// (link, local point, mass) of every mass in the scene.
    masses: Vec<(usize, Vector3<f64>, f64)>,
    grip: Option<usize>,
}

/// Terms of the potential at one configuration.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub stretch: DVector<f64>,
    /// Actuator-side path tensions.
    pub tensions: DVector<f64>,
    /// Wire the motors have let out under overload, mm.
    pub slip: DVector<f64>,
    pub jacobian: MuscleJacobian,
    pub elastic: f64,
    pub gravity: f64,
    pub handle: f64,
    pub handle_angle: Option<f64>,
    /// Gradient of the gravity and handle terms.
    pub external_gradient: DVector<f64>,
}

impl<'a> StaticProblem<'a> {
    pub fn new(robot: &'a RobotDescription, env: &'a Environment, winds: &'a MotorWinds) -> Result<Self> {
        winds.check(robot)?;
        if !(0.0..=0.05).contains(&env.relay_friction) {
            return Err(Error::Argument(format!(
                "relay friction must lie in [0, 0.05], got {}",
                env.relay_friction
            )));
        }
        let gravity = Vector3::from(env.gravity);
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Argument("gravity must be finite".into()));
        }
        let mut masses: Vec<_> = robot
            .links()
            .iter()
            .enumerate()
            .filter(|(_, l)| l.mass_kg > 0.0)
            .map(|(i, l)| (i, Vector3::from(l.com_mm), l.mass_kg))
            .collect();
        if let Some(p) = &env.payload {
            if !(p.mass_kg >= 0.0) {
                return Err(Error::Argument(format!("payload mass must be >= 0, got {}", p.mass_kg)));
            }
            masses.push((robot.link_index(&p.link)?, Vector3::from(p.offset_mm), p.mass_kg));
        }
        let grip = env.handle.as_ref().map(|h| h.check(robot)).transpose()?;
        let caps = robot
            .muscles()
            .iter()
            .map(|m| {
                let t = path_tension(m.actuator.max_sensor_tension_n, m.folded);
                Ok((t, combined_elongation(t, &m.elastic)?.mm))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            robot,
            env,
            winds,
            l0: reference_lengths(robot),
            eta: env.transmission(robot),
            caps,
            gravity,
            masses,
            grip,
        })
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.l0
    }

    pub fn evaluate(&self, theta: &DVector<f64>) -> Evaluation {
        let r = self.robot;
        let frames = Frames::compute(r, &JointAngles(theta.clone())).expect("dimension checked");
        let stretch = lengths_in(r, &frames) - &self.l0 + &self.winds.0;
        let n = stretch.len();
        let (mut tensions, mut slip) = (DVector::zeros(n), DVector::zeros(n));
        let mut elastic = 0.0;
        for (i, m) in r.muscles().iter().enumerate() {
            let p: &ElasticParams = &m.elastic;
            let (cap, dl_cap) = self.caps[i];
            let dl = stretch[i];
            let energy = if dl > dl_cap {
                tensions[i] = cap;
                slip[i] = dl - dl_cap;
                elastic_energy(dl_cap, p) + cap * slip[i]
            } else {
                tensions[i] = combined_tension(dl, p);
                elastic_energy(dl, p)
            };
            elastic += self.eta[i] * energy;
        }
        let jacobian = jacobian_in(r, &frames);

        let mut gravity = 0.0;
        let mut external_gradient = DVector::zeros(theta.len());
        for (link, local, m) in &self.masses {
            let p = frames.point(*link, local);
            gravity -= m * self.gravity.dot(&p);
            external_gradient -= frames.point_jacobian(r, *link, &p).transpose() * (self.gravity * *m);
        }

        let (mut handle, mut handle_angle) = (0.0, None);
        if let (Some(h), Some(link)) = (&self.env.handle, self.grip) {
            let p = frames.point(link, &Vector3::from(h.grip_point_mm));
            let phi = h.settle(&p);
            let diff = p - h.crank_point(phi);
            handle = 0.5 * h.stiffness_n_per_mm * diff.norm_squared() + h.resistance_nmm * (phi - h.angle_rad).abs();
            external_gradient += frames.point_jacobian(r, link, &p).transpose() * (diff * h.stiffness_n_per_mm);
            handle_angle = Some(phi);
        }
        Evaluation {
            stretch,
            tensions,
            slip,
            jacobian,
            elastic,
            gravity,
            handle,
            handle_angle,
            external_gradient,
        }
    }

    /// Tension reaching the body side of every muscle.
    pub fn body_tensions(&self, e: &Evaluation) -> DVector<f64> {
        e.tensions.component_mul(&self.eta)
    }
}

impl Potential for StaticProblem<'_> {
    fn dim(&self) -> usize {
        self.robot.dof()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let e = self.evaluate(x);
        e.elastic + e.gravity + e.handle
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let e = self.evaluate(x);
        e.jacobian.transpose() * self.body_tensions(&e) + e.external_gradient
    }
}

/// Total potential, N·mm.
pub fn total_potential(robot: &RobotDescription, theta: &JointAngles, winds: &MotorWinds, env: &Environment) -> Result<f64> {
    theta.check_len(robot)?;
    Ok(StaticProblem::new(robot, env, winds)?.value(theta))
}

/// Analytic gradient of [`total_potential`], N·mm/rad.
pub fn potential_gradient(
    robot: &RobotDescription,
    theta: &JointAngles,
    winds: &MotorWinds,
    env: &Environment,
) -> Result<DVector<f64>> {
    theta.check_len(robot)?;
    Ok(StaticProblem::new(robot, env, winds)?.gradient(theta))
}

/// A solved (or best-effort) static configuration.
#[derive(Debug, Clone)]
pub struct SimState {
    pub theta: JointAngles,
    pub winds: MotorWinds,
    /// Actuator-side path tension per muscle, N.
    pub tensions: DVector<f64>,
    /// What an ideal loadcell reads: path tension, halved on folded routes.
    pub sensor_tensions: DVector<f64>,
    /// Wire let out by overloaded motors, mm; the winding encoders see
    /// `winds − slip`.
    pub slip: DVector<f64>,
    pub handle_angle: Option<f64>,
    pub potential: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Potential after every accepted solver step.
    pub potential_trace: Vec<f64>,
}

/// Static equilibrium reached from `theta0`.
///
/// Joint limits are not enforced; the elastic muscles alone hold the arm.
/// A run that stalls comes back with `converged == false` rather than an
/// error so the caller can inspect it; use [`SimState::require_converged`]
/// to turn that into an error.
pub fn equilibrium(
    robot: &RobotDescription,
    winds: &MotorWinds,
    env: &Environment,
    theta0: &JointAngles,
    opts: &SolverOptions,
) -> Result<SimState> {
    theta0.check_len(robot)?;
    let problem = StaticProblem::new(robot, env, winds)?;
    let min = minimize(&problem, theta0.0.clone(), opts);
    let e = problem.evaluate(&min.x);
    let sensor_tensions = DVector::from_iterator(
        robot.muscle_count(),
        robot
            .muscles()
            .iter()
            .zip(e.tensions.iter())
            .map(|(m, &t)| sensor_tension(t, m.folded)),
    );
    Ok(SimState {
        theta: JointAngles(min.x),
        winds: winds.clone(),
        tensions: e.tensions,
        sensor_tensions,
        slip: e.slip,
        handle_angle: e.handle_angle,
        potential: min.value,
        grad_norm: min.grad_norm,
        iterations: min.iterations,
        converged: min.converged,
        potential_trace: min.values,
    })
}

impl SimState {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
                residual: self.grad_norm,
            })
        }
    }
}

/// One muscle over a pulley of radius `r` on a single joint:
/// `Δl = r·θ + w`, loaded by a constant external torque.
#[derive(Debug, Clone)]
pub struct PulleyModel {
    pub radius_mm: f64,
    pub params: ElasticParams,
    pub wind_mm: f64,
    /// Applied torque about the joint, N·mm, positive along +θ.
    pub external_torque_nmm: f64,
}

impl Potential for PulleyModel {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        elastic_energy(self.radius_mm * x[0] + self.wind_mm, &self.params) - self.external_torque_nmm * x[0]
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = combined_tension(self.radius_mm * x[0] + self.wind_mm, &self.params);
        DVector::from_element(1, self.radius_mm * t - self.external_torque_nmm)
    }
}

/// Loadcell and potentiometer imperfections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Multiplies each axis' `potentiometer_noise_sd`.
    pub potentiometer_scale: f64,
    /// ADC resolution over the joint range; `None` disables quantisation.
    pub potentiometer_bits: Option<u32>,
    pub loadcell_sd_n: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            potentiometer_scale: 1.0,
            potentiometer_bits: Some(12),
            loadcell_sd_n: 0.5,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            potentiometer_scale: 0.0,
            potentiometer_bits: None,
            loadcell_sd_n: 0.0,
        }
    }
}

/// What the robot's boards report.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub theta_meas: JointAngles,
    /// Rest length commanded through the winding encoders, `L0 − w`, mm.
    pub l_meas: DVector<f64>,
    /// Loadcell readings, N, clamped to `[0, max_sensor_tension]`.
    pub t_meas: DVector<f64>,
    /// Set where the strand tension reached the loadcell range.
    pub saturated: Vec<bool>,
    pub timestamp: f64,
}

/// Deterministic noisy readout of `state`. `stream` separates frames drawn
/// under the same seed.
pub fn synthesize_sensors(
    robot: &RobotDescription,
    state: &SimState,
    noise: &NoiseConfig,
    seed: u64,
    stream: u64,
    timestamp: f64,
) -> SensorFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut gauss = |sd: f64| {
        if sd > 0.0 {
            Normal::new(0.0, sd).expect("finite sd").sample(&mut rng)
        } else {
            0.0
        }
    };

    let theta_meas = DVector::from_iterator(
        robot.dof(),
        robot.axes().zip(state.theta.iter()).map(|(axis, &th)| {
            let (lo, hi) = axis.limits;
            let mut v = th + gauss(axis.potentiometer_noise_sd * noise.potentiometer_scale);
            if let Some(bits) = noise.potentiometer_bits {
                let levels = ((1u64 << bits) - 1) as f64;
                let code = ((v.clamp(lo, hi) - lo) / (hi - lo) * levels).round();
                v = lo + code / levels * (hi - lo);
            }
            v
        }),
    );

    let l_meas = reference_lengths(robot) - (&state.winds.0 - &state.slip);
    let mut saturated = Vec::with_capacity(robot.muscle_count());
    let t_meas = DVector::from_iterator(
        robot.muscle_count(),
        robot.muscles().iter().zip(state.sensor_tensions.iter()).map(|(m, &t)| {
            let max = m.actuator.max_sensor_tension_n;
            saturated.push(t >= max);
            (t + gauss(noise.loadcell_sd_n)).clamp(0.0, max)
        }),
    );
    SensorFrame {
        theta_meas: JointAngles(theta_meas),
        l_meas,
        t_meas,
        saturated,
        timestamp,
    }
}

/// What drives a handle trace.
#[derive(Debug, Clone)]
pub enum HandleCommand {
    Winds(Vec<MotorWinds>),
    /// Joint targets; each is converted to winds that stretch every muscle
    /// to `pretension_n` at that pose.
    Angles { targets: Vec<JointAngles>, pretension_n: f64 },
}

/// Winds that leave every muscle at `tension` (path) in pose `theta`.
pub fn winds_for_pose(robot: &RobotDescription, theta: &JointAngles, tension: &DVector<f64>) -> Result<MotorWinds> {
    if tension.len() != robot.muscle_count() {
        return Err(Error::Dimension {
            what: "tension vector",
            expected: robot.muscle_count(),
            got: tension.len(),
        });
    }
    let frames = Frames::compute(robot, theta)?;
    let l = lengths_in(robot, &frames);
    let l0 = reference_lengths(robot);
    let mut w = DVector::zeros(robot.muscle_count());
    for (i, m) in robot.muscles().iter().enumerate() {
        let e = crate::elasticity::combined_elongation(tension[i], &m.elastic)
            .map_err(|_| Error::NegativeTension { index: i, value: tension[i] })?;
        w[i] = e.mm - (l[i] - l0[i]);
    }
    let w = MotorWinds(w);
    w.check(robot)?;
    Ok(w)
}

/// Sequence of warm-started equilibria; the crank angle carries over from
/// step to step.
pub fn simulate_handle(
    robot: &RobotDescription,
    env: &Environment,
    command: &HandleCommand,
    theta0: &JointAngles,
    opts: &SolverOptions,
) -> Result<Vec<SimState>> {
    if env.handle.is_none() {
        return Err(Error::Argument("simulate_handle needs a handle in the environment".into()));
    }
    let winds: Vec<MotorWinds> = match command {
        HandleCommand::Winds(w) => w.clone(),
        HandleCommand::Angles { targets, pretension_n } => {
            let t = DVector::from_element(robot.muscle_count(), *pretension_n);
            targets
                .iter()
                .map(|th| winds_for_pose(robot, th, &t))
                .collect::<Result<_>>()?
        }
    };
    let mut env = env.clone();
    let mut theta = theta0.clone();
    let mut trace = Vec::with_capacity(winds.len());
    for (k, w) in winds.iter().enumerate() {
        let s = equilibrium(robot, w, &env, &theta, opts)?
            .require_converged()
            .map_err(|e| e.at(format!("handle step {k}")))?;
        if let (Some(h), Some(phi)) = (env.handle.as_mut(), s.handle_angle) {
            h.angle_rad = phi;
        }
        theta = s.theta.clone();
        trace.push(s);
    }
    Ok(trace)
}

/// One row per state: step, angles (deg), winds (mm), path and sensor
/// tensions (N), handle angle (deg; empty without a handle).
pub fn write_trace_csv(robot: &RobotDescription, states: &[SimState], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["step".to_string()];
    header.extend((0..robot.dof()).map(|d| format!("theta{d}_deg")));
    for prefix in ["w", "T", "Ts"] {
        let unit = if prefix == "w" { "mm" } else { "N" };
        header.extend(robot.muscles().iter().map(|m| format!("{prefix}_{}_{unit}", m.id)));
    }
    header.push("handle_deg".into());
    w.write_record(&header)?;
    for (k, s) in states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.theta.iter().map(|t| t.to_degrees().to_string()));
        row.extend(s.winds.0.iter().map(f64::to_string));
        row.extend(s.tensions.iter().map(f64::to_string));
        row.extend(s.sensor_tensions.iter().map(f64::to_string));
        row.push(s.handle_angle.map(|a| a.to_degrees().to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
