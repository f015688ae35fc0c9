//! Forward kinematics of the joint tree, muscle path lengths and their
//! Jacobian, tension-to-torque mapping and damped least squares IK.
//!
//! Via points are frictionless point guides: a muscle path is the polyline
//! through its via points in world coordinates. A folded route additionally
//! returns from the insertion to its last relay point.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::model::RobotDescription;

/// Joint angles in radians, one per joint axis in description order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngles(pub DVector<f64>);

impl JointAngles {
    pub fn zeros(dof: usize) -> Self {
        Self(DVector::zeros(dof))
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self(DVector::from_column_slice(v))
    }

    pub fn check_len(&self, robot: &RobotDescription) -> Result<()> {
        if self.0.len() != robot.dof() {
            return Err(Error::Dimension {
                what: "joint angles",
                expected: robot.dof(),
                got: self.0.len(),
            });
        }
        Ok(())
    }

    /// Clamps every angle into its axis limits.
    pub fn clamped(mut self, robot: &RobotDescription) -> Self {
        for (v, (lo, hi)) in self.0.iter_mut().zip(robot.joint_limits()) {
            *v = v.clamp(lo, hi);
        }
        self
    }

    pub fn within_limits(&self, robot: &RobotDescription) -> bool {
        self.0
            .iter()
            .zip(robot.joint_limits())
            .all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }
}

impl Deref for JointAngles {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for JointAngles {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

/// `G[i][j] = dl_i / dtheta_j`, mm per radian.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleJacobian(pub DMatrix<f64>);

impl Deref for MuscleJacobian {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// World frames for one configuration.
#[derive(Debug, Clone)]
pub struct Frames {
    /// Pose of each link, indexed like `robot.links()`.
    pub links: Vec<Isometry3<f64>>,
    /// World rotation axis of each DoF.
    pub axis: Vec<Vector3<f64>>,
    /// World position of the joint centre each DoF rotates about.
    pub center: Vec<Vector3<f64>>,
    /// Joint index owning each DoF.
    pub dof_joint: Vec<usize>,
}

impl Frames {
    pub fn compute(robot: &RobotDescription, theta: &JointAngles) -> Result<Self> {
        theta.check_len(robot)?;
        let idx = &robot.index;
        let nl = robot.links().len();
        let dof = robot.dof();
        let mut links = vec![Isometry3::identity(); nl];
        let mut axis = vec![Vector3::zeros(); dof];
        let mut center = vec![Vector3::zeros(); dof];
        let mut dof_joint = vec![0; dof];
        for &li in idx.link_order.iter().skip(1) {
            let Some(ji) = idx.link_parent_joint[li] else { continue };
            let joint = &robot.joints()[ji];
            let parent = links[idx.joint_parent_link[ji]];
            let c = parent.transform_point(&Vector3::from(joint.origin_mm).into()).coords;
            let mut rot = parent.rotation;
            let off = idx.joint_dof_offset[ji];
            for (k, part) in joint.axes.iter().enumerate() {
                let d = off + k;
                let unit = part.kind.unit();
                axis[d] = rot * unit;
                center[d] = c;
                dof_joint[d] = ji;
                rot *= UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(unit), theta[d]);
            }
            links[li] = Isometry3::from_parts(Translation3::from(c), rot);
        }
        Ok(Self { links, axis, center, dof_joint })
    }

    pub fn point(&self, link: usize, local: &Vector3<f64>) -> Vector3<f64> {
        self.links[link].transform_point(&(*local).into()).coords
    }

    /// `dp/dtheta` for a world point rigidly attached to `link` (3 x DoF).
    pub fn point_jacobian(&self, robot: &RobotDescription, link: usize, p: &Vector3<f64>) -> DMatrix<f64> {
        let dof = self.axis.len();
        let mut j = DMatrix::zeros(3, dof);
        for d in 0..dof {
            if robot.index.ancestors[link][self.dof_joint[d]] {
                let v = self.axis[d].cross(&(p - self.center[d]));
                j.fixed_view_mut::<3, 1>(0, d).copy_from(&v);
            }
        }
        j
    }

    /// Angular velocity Jacobian of `link` (3 x DoF).
    pub fn angular_jacobian(&self, robot: &RobotDescription, link: usize) -> DMatrix<f64> {
        let dof = self.axis.len();
        let mut j = DMatrix::zeros(3, dof);
        for d in 0..dof {
            if robot.index.ancestors[link][self.dof_joint[d]] {
                j.fixed_view_mut::<3, 1>(0, d).copy_from(&self.axis[d]);
            }
        }
        j
    }
}

/// Pose of every link, indexed like `robot.links()`. The root is the identity.
pub fn forward_kinematics(robot: &RobotDescription, theta: &JointAngles) -> Result<Vec<Isometry3<f64>>> {
    Ok(Frames::compute(robot, theta)?.links)
}

/// Ordered (start, end) via-point index pairs making up a muscle path.
fn segments(robot: &RobotDescription, muscle: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let m = &robot.muscles()[muscle];
    let n = m.via_points.len();
    let ret = m.fold_anchor().map(|a| (n - 1, a));
    (0..n - 1).map(|k| (k, k + 1)).chain(ret)
}

fn via_world(robot: &RobotDescription, frames: &Frames, muscle: usize) -> Vec<Vector3<f64>> {
    robot.muscles()[muscle]
        .via_points
        .iter()
        .zip(&robot.index.via_links[muscle])
        .map(|(v, &li)| frames.point(li, &Vector3::from(v.pos_mm)))
        .collect()
}

pub(crate) fn length_in(robot: &RobotDescription, frames: &Frames, muscle: usize) -> f64 {
    let p = via_world(robot, frames, muscle);
    segments(robot, muscle).map(|(a, b)| (p[b] - p[a]).norm()).sum()
}

/// Geometric path length of one muscle, mm.
pub fn muscle_length(robot: &RobotDescription, theta: &JointAngles, muscle_id: &str) -> Result<f64> {
    let i = robot.muscle_index(muscle_id)?;
    let frames = Frames::compute(robot, theta)?;
    Ok(length_in(robot, &frames, i))
}

pub(crate) fn lengths_in(robot: &RobotDescription, frames: &Frames) -> DVector<f64> {
    DVector::from_iterator(
        robot.muscle_count(),
        (0..robot.muscle_count()).map(|i| length_in(robot, frames, i)),
    )
}

/// All muscle lengths in description order.
pub fn muscle_lengths(robot: &RobotDescription, theta: &JointAngles) -> Result<DVector<f64>> {
    let frames = Frames::compute(robot, theta)?;
    Ok(lengths_in(robot, &frames))
}

pub(crate) fn jacobian_in(robot: &RobotDescription, frames: &Frames) -> MuscleJacobian {
    let dof = robot.dof();
    let mut g = DMatrix::zeros(robot.muscle_count(), dof);
    for i in 0..robot.muscle_count() {
        let p = via_world(robot, frames, i);
        let links = &robot.index.via_links[i];
        for (a, b) in segments(robot, i) {
            let seg = p[b] - p[a];
            let len = seg.norm();
            if len < 1e-12 {
                continue;
            }
            let u = seg / len;
            for d in 0..dof {
                let jd = frames.dof_joint[d];
                let vel = |k: usize| {
                    if robot.index.ancestors[links[k]][jd] {
                        frames.axis[d].cross(&(p[k] - frames.center[d]))
                    } else {
                        Vector3::zeros()
                    }
                };
                g[(i, d)] += u.dot(&(vel(b) - vel(a)));
            }
        }
    }
    MuscleJacobian(g)
}

/// Analytic muscle Jacobian.
pub fn muscle_jacobian(robot: &RobotDescription, theta: &JointAngles) -> Result<MuscleJacobian> {
    let frames = Frames::compute(robot, theta)?;
    Ok(jacobian_in(robot, &frames))
}

/// `tau = -G^T f`, N·mm. Tension shortens a muscle, so it pushes the joints
/// toward decreasing that muscle's length.
pub fn joint_torques_from_tensions(g: &MuscleJacobian, f: &DVector<f64>) -> Result<DVector<f64>> {
    if f.len() != g.nrows() {
        return Err(Error::Dimension {
            what: "tension vector",
            expected: g.nrows(),
            got: f.len(),
        });
    }
    if let Some((index, &value)) = f.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeTension { index, value });
    }
    Ok(-(g.transpose() * f))
}

/// Where a point on a link should go, optionally with an orientation.
#[derive(Debug, Clone)]
pub struct IkTarget {
    pub link: usize,
    /// Point on the link, link frame, mm.
    pub point_mm: Vector3<f64>,
    pub position: Vector3<f64>,
    pub orientation: Option<Rotation3<f64>>,
}

impl IkTarget {
    /// Target equal to where `link`'s point currently is.
    pub fn from_pose(frames: &Frames, link: usize, point_mm: Vector3<f64>, with_orientation: bool) -> Self {
        let pose = frames.links[link];
        Self {
            link,
            point_mm,
            position: frames.point(link, &point_mm),
            orientation: with_orientation.then(|| pose.rotation.to_rotation_matrix()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IkOptions {
    /// mm
    pub pos_tol: f64,
    /// rad
    pub ang_tol: f64,
    pub max_iters: usize,
    /// Weight turning orientation error into an equivalent length, mm/rad.
    pub orientation_scale: f64,
    /// Return the best iterate instead of failing when the target is not met.
    pub best_effort: bool,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            pos_tol: 1.0,
            ang_tol: 0.01,
            max_iters: 200,
            orientation_scale: 100.0,
            best_effort: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IkSolution {
    pub angles: JointAngles,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
    pub converged: bool,
    /// Weighted residual norm before each iteration and after the last.
    /// Non-increasing.
    pub residuals: Vec<f64>,
}

struct IkResidual {
    e: DVector<f64>,
    pos: f64,
    ang: f64,
    norm: f64,
}

fn ik_residual(frames: &Frames, target: &IkTarget, opts: &IkOptions) -> IkResidual {
    let p = frames.point(target.link, &target.point_mm);
    let dp = target.position - p;
    let mut e = DVector::zeros(if target.orientation.is_some() { 6 } else { 3 });
    e.fixed_rows_mut::<3>(0).copy_from(&dp);
    let mut ang = 0.0;
    if let Some(rt) = &target.orientation {
        let rc = frames.links[target.link].rotation.to_rotation_matrix();
        let w = (rt * rc.inverse()).scaled_axis();
        ang = w.norm();
        e.fixed_rows_mut::<3>(3).copy_from(&(w * opts.orientation_scale));
    }
    IkResidual {
        norm: e.norm(),
        e,
        pos: dp.norm(),
        ang,
    }
}

/// Damped least squares IK with adaptive damping `1e-3 * (1 + residual)`,
/// raised tenfold whenever a step fails to reduce the residual. Iterates are
/// clamped to the joint limits after every step.
pub fn solve_ik(
    robot: &RobotDescription,
    target: &IkTarget,
    theta0: &JointAngles,
    opts: &IkOptions,
) -> Result<IkSolution> {
    theta0.check_len(robot)?;
    let dof = robot.dof();
    let mut theta = theta0.clone().clamped(robot);
    let mut frames = Frames::compute(robot, &theta)?;
    let mut r = ik_residual(&frames, target, opts);
    let mut residuals = vec![r.norm];
    let met = |r: &IkResidual| r.pos < opts.pos_tol && r.ang < opts.ang_tol;

    let mut iterations = 0;
    while !met(&r) && iterations < opts.max_iters {
        iterations += 1;
        let p = frames.point(target.link, &target.point_mm);
        let jp = frames.point_jacobian(robot, target.link, &p);
        let j = if target.orientation.is_some() {
            let ja = frames.angular_jacobian(robot, target.link) * opts.orientation_scale;
            let mut j = DMatrix::zeros(6, dof);
            j.rows_mut(0, 3).copy_from(&jp);
            j.rows_mut(3, 3).copy_from(&ja);
            j
        } else {
            jp
        };
        let jtj = j.transpose() * &j;
        let jte = j.transpose() * &r.e;
        let mut lambda = 1e-3 * (1.0 + r.norm);
        let mut improved = None;
        for _ in 0..12 {
            let a = &jtj + DMatrix::identity(dof, dof) * lambda;
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&jte);
            let cand = JointAngles(&theta.0 + step).clamped(robot);
            let cf = Frames::compute(robot, &cand)?;
            let cr = ik_residual(&cf, target, opts);
            if cr.norm < r.norm {
                improved = Some((cand, cf, cr));
                break;
            }
            lambda *= 10.0;
        }
        match improved {
            Some((t, f, nr)) => {
                theta = t;
                frames = f;
                r = nr;
                residuals.push(r.norm);
            }
            None => break,
        }
    }

    let converged = met(&r);
    if !converged && !opts.best_effort {
        return Err(Error::IkNoConvergence {
            iterations,
            residual: r.norm,
            record: residuals,
        });
    }
    Ok(IkSolution {
        angles: theta,
        iterations,
        position_error: r.pos,
        orientation_error: r.ang,
        converged,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::ElasticParams;
    use crate::model::*;

    /// Base and one arm link joined by a pitch hinge at the origin. Muscle
    /// `pulley` starts on the base and ends on the arm so that it wraps at a
    /// fixed moment arm; `rigid` lives on the base only.
    fn hinge(extra: Vec<MuscleRoute>) -> RobotDescription {
        let mut muscles = vec![MuscleRoute {
            id: "rigid".into(),
            via_points: vec![
                ViaPoint { link: "base".into(), pos_mm: [0.0, 0.0, 50.0], role: ViaRole::Origin },
                ViaPoint { link: "base".into(), pos_mm: [100.0, 0.0, 50.0], role: ViaRole::Insertion },
            ],
            folded: false,
            elastic: ElasticParams::GROMMET,
            actuator: ActuatorSpec::default(),
        }];
        muscles.extend(extra);
        let doc = DescriptionDoc {
            links: vec![
                Link { id: "base".into(), parent_joint: None, mass_kg: 0.0, com_mm: [0.0; 3] },
                Link { id: "arm".into(), parent_joint: Some("j".into()), mass_kg: 1.0, com_mm: [0.0, 0.0, -100.0] },
            ],
            joints: vec![compose_joint_module(
                CenterPart::TwoAxisCenter,
                vec![JointAxisPart::new(AxisKind::Pitch, -3.0, 3.0)],
            )
            .unwrap()
            .connect("j", "base", "arm", [0.0; 3])],
            muscles,
            circuit: CircuitTopology {
                pot_control_boards: vec![PotControlBoard {
                    id: "pb".into(),
                    channels: vec![PotChannel { joint: "j".into(), axis: 0 }],
                }],
                ..Default::default()
            },
            gravity: [0.0, 0.0, -9.81],
        };
        RobotDescription::from_doc(doc).unwrap()
    }

    #[test]
    fn zero_pose_is_identity() {
        let r = hinge(vec![]);
        let poses = forward_kinematics(&r, &JointAngles::zeros(1)).unwrap();
        for p in poses {
            assert!((p.to_homogeneous() - nalgebra::Matrix4::identity()).norm() < 1e-15);
        }
    }

    #[test]
    fn hinge_quarter_turn() {
        let r = hinge(vec![]);
        let poses = forward_kinematics(&r, &JointAngles::from_slice(&[std::f64::consts::FRAC_PI_2])).unwrap();
        let z = poses[1].rotation * Vector3::z();
        // Rotating +90 deg about y takes z onto x.
        assert!((z - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let r = hinge(vec![]);
        assert!(matches!(
            forward_kinematics(&r, &JointAngles::zeros(2)),
            Err(Error::Dimension { expected: 1, got: 2, .. })
        ));
    }

    #[test]
    fn rigid_muscle_is_constant() {
        let r = hinge(vec![]);
        for t in [-1.0, 0.0, 0.7] {
            let l = muscle_length(&r, &JointAngles::from_slice(&[t]), "rigid").unwrap();
            assert!((l - 100.0).abs() < 1e-12);
        }
        let g = muscle_jacobian(&r, &JointAngles::from_slice(&[0.3])).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn unknown_muscle() {
        let r = hinge(vec![]);
        assert!(matches!(
            muscle_length(&r, &JointAngles::zeros(1), "nope"),
            Err(Error::Unknown { kind: "muscle", .. })
        ));
    }

    #[test]
    fn torque_map() {
        let g = MuscleJacobian(DMatrix::from_row_slice(2, 1, &[20.0, -20.0]));
        let zero = joint_torques_from_tensions(&g, &DVector::zeros(2)).unwrap();
        assert_eq!(zero[0], 0.0);
        let tau = joint_torques_from_tensions(&g, &DVector::from_vec(vec![100.0, 0.0])).unwrap();
        assert!((tau[0] + 2000.0).abs() < 1e-9);
        let tau = joint_torques_from_tensions(&g, &DVector::from_vec(vec![35.0, 35.0])).unwrap();
        assert_eq!(tau[0], 0.0);
        assert!(matches!(
            joint_torques_from_tensions(&g, &DVector::from_vec(vec![1.0, -1.0])),
            Err(Error::NegativeTension { index: 1, .. })
        ));
    }

    #[test]
    fn symmetric_fold_doubles_length() {
        let folded = MuscleRoute {
            id: "fold".into(),
            via_points: vec![
                ViaPoint { link: "base".into(), pos_mm: [30.0, 0.0, 0.0], role: ViaRole::Origin },
                ViaPoint {
                    link: "base".into(),
                    pos_mm: [30.0, 0.0, 0.0],
                    role: ViaRole::Relay(RelayPointKind::ParallelRelay),
                },
                ViaPoint { link: "arm".into(), pos_mm: [30.0, 0.0, -120.0], role: ViaRole::Insertion },
            ],
            folded: true,
            elastic: ElasticParams::GROMMET,
            actuator: ActuatorSpec::default(),
        };
        let mut one_way = folded.clone();
        one_way.id = "oneway".into();
        one_way.folded = false;
        let r = hinge(vec![folded, one_way]);
        for t in [-0.4, 0.0, 0.5] {
            let th = JointAngles::from_slice(&[t]);
            let f = muscle_length(&r, &th, "fold").unwrap();
            let o = muscle_length(&r, &th, "oneway").unwrap();
            assert!((f - 2.0 * o).abs() < 1e-12);
        }
    }
}
