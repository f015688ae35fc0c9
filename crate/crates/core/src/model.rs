//! Robot description: links, joint modules, muscle routes, circuit topology.
//!
//! A description is loaded from JSON into a [`DescriptionDoc`] (plain data,
//! serde-mapped one to one onto the file) and then validated and indexed into
//! a [`RobotDescription`]. Everything downstream works on the validated form.
//!
//! Units: millimetres, newtons, kilograms, radians. Gravity is in m/s², so
//! `mass * gravity . position` comes out in N·mm.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::elasticity::ElasticParams;
use crate::error::{Error, Result};

pub const MAX_DRIVERS_PER_CONTROL_BOARD: usize = 3;
pub const MAX_LOADCELLS_PER_BOARD: usize = 12;
pub const MAX_POTENTIOMETERS_PER_BOARD: usize = 4;

/// Joint axis part. The kind fixes the rotation axis in the joint frame:
/// roll about x, pitch about y, yaw about z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    Roll,
    Pitch,
    Yaw,
}

impl AxisKind {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            AxisKind::Roll => Vector3::x(),
            AxisKind::Pitch => Vector3::y(),
            AxisKind::Yaw => Vector3::z(),
        }
    }
}

fn default_pot_noise() -> f64 {
    0.002
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAxisPart {
    pub kind: AxisKind,
    /// (min, max) in radians.
    pub limits: (f64, f64),
    #[serde(default = "default_pot_noise")]
    pub potentiometer_noise_sd: f64,
}

impl JointAxisPart {
    pub fn new(kind: AxisKind, min: f64, max: f64) -> Self {
        Self {
            kind,
            limits: (min, max),
            potentiometer_noise_sd: default_pot_noise(),
        }
    }

    fn check(&self, owner: &str, out: &mut Vec<Violation>) {
        let (lo, hi) = self.limits;
        if !(lo < hi) {
            out.push(Violation::new("axis limits must satisfy min < max", owner));
        }
        if !(lo >= -PI && hi <= PI) {
            out.push(Violation::new("axis limits must lie within [-pi, pi]", owner));
        }
        if !(self.potentiometer_noise_sd >= 0.0) {
            out.push(Violation::new("potentiometer noise sd must be >= 0", owner));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterPart {
    TwoAxisCenter,
    ThreeAxisCenter,
}

impl CenterPart {
    pub fn capacity(self) -> usize {
        match self {
            CenterPart::TwoAxisCenter => 2,
            CenterPart::ThreeAxisCenter => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CenterPart::TwoAxisCenter => "TwoAxisCenter",
            CenterPart::ThreeAxisCenter => "ThreeAxisCenter",
        }
    }
}

/// The four joint-module kinds reachable from two center parts and three axis
/// parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Shoulder3,
    Elbow2,
    Wrist2,
    Hinge1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModuleSpec {
    pub id: String,
    pub center: CenterPart,
    pub axes: Vec<JointAxisPart>,
    pub parent_link: String,
    pub child_link: String,
    /// Joint centre in the parent link frame, mm.
    #[serde(default)]
    pub origin_mm: [f64; 3],
    /// IMU slot on the module; carried through but never sampled.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub imu: bool,
}

impl JointModuleSpec {
    pub fn dof(&self) -> usize {
        self.axes.len()
    }

    /// Elbow-type modules carry a yaw (long-axis) part, wrist-type modules
    /// two bending parts.
    pub fn kind(&self) -> JointKind {
        match (self.center, self.axes.len()) {
            (CenterPart::ThreeAxisCenter, _) => JointKind::Shoulder3,
            (_, 1) => JointKind::Hinge1,
            _ if self.axes.iter().any(|a| a.kind == AxisKind::Yaw) => JointKind::Elbow2,
            _ => JointKind::Wrist2,
        }
    }

    fn check(&self, out: &mut Vec<Violation>) {
        let n = self.axes.len();
        if n == 0 || n > 3 {
            out.push(Violation::new("a joint module carries 1 to 3 axis parts", &self.id));
        }
        match self.center {
            CenterPart::ThreeAxisCenter if n != 3 => out.push(Violation::new(
                "a ThreeAxisCenter carries exactly 3 axis parts",
                &self.id,
            )),
            CenterPart::TwoAxisCenter if n > 2 => out.push(Violation::new(
                "a TwoAxisCenter carries at most 2 axis parts",
                &self.id,
            )),
            _ => {}
        }
        if self.axes.windows(2).any(|w| w[0].kind == w[1].kind) {
            out.push(Violation::new(
                "consecutive axis parts must be mutually orthogonal",
                &self.id,
            ));
        }
        for a in &self.axes {
            a.check(&self.id, out);
        }
        if !self.origin_mm.iter().all(|v| v.is_finite()) {
            out.push(Violation::new("joint origin must be finite", &self.id));
        }
    }
}

/// Builds a joint module from a center part and an ordered list of axis parts.
///
/// The resulting module still needs link ids; they are left empty here and
/// filled in by [`JointModuleSpec::connect`].
pub fn compose_joint_module(center: CenterPart, axes: Vec<JointAxisPart>) -> Result<JointModuleSpec> {
    if axes.is_empty() {
        return Err(Error::Argument("a joint module needs at least one axis part".into()));
    }
    if axes.len() > center.capacity() {
        return Err(Error::Capacity {
            center: center.name(),
            capacity: center.capacity(),
            got: axes.len(),
        });
    }
    if center == CenterPart::ThreeAxisCenter && axes.len() != 3 {
        return Err(Error::Argument("a ThreeAxisCenter carries exactly 3 axis parts".into()));
    }
    if let Some(w) = axes.windows(2).find(|w| w[0].kind == w[1].kind) {
        return Err(Error::Argument(format!(
            "consecutive axis parts must differ, got two {:?} parts",
            w[0].kind
        )));
    }
    let spec = JointModuleSpec {
        id: String::new(),
        center,
        axes,
        parent_link: String::new(),
        child_link: String::new(),
        origin_mm: [0.0; 3],
        imu: false,
    };
    let mut v = Vec::new();
    for a in &spec.axes {
        a.check("<composed>", &mut v);
    }
    match v.into_iter().next() {
        Some(v) => Err(Error::invariant(v.rule, v.subject)),
        None => Ok(spec),
    }
}

impl JointModuleSpec {
    pub fn connect(
        mut self,
        id: impl Into<String>,
        parent_link: impl Into<String>,
        child_link: impl Into<String>,
        origin_mm: [f64; 3],
    ) -> Self {
        self.id = id.into();
        self.parent_link = parent_link.into();
        self.child_link = child_link.into();
        self.origin_mm = origin_mm;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    /// Joint module whose child this link is; `None` for the fixed base.
    #[serde(default)]
    pub parent_joint: Option<String>,
    #[serde(default)]
    pub mass_kg: f64,
    /// Centre of mass in the link frame, mm.
    #[serde(default)]
    pub com_mm: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayPointKind {
    ParallelRelay,
    SkewRelay,
    OrthogonalRelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViaRole {
    Origin,
    Relay(RelayPointKind),
    Insertion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPoint {
    pub link: String,
    pub pos_mm: [f64; 3],
    pub role: ViaRole,
}

fn default_max_sensor_tension() -> f64 {
    500.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    pub gear_ratio: f64,
    pub pulley_radius_mm: f64,
    #[serde(default = "default_max_sensor_tension")]
    pub max_sensor_tension_n: f64,
    pub max_wind_mm: f64,
    /// Link carrying the motor; the origin's link when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mount_link: Option<String>,
}

impl Default for ActuatorSpec {
    fn default() -> Self {
        Self {
            gear_ratio: 29.0,
            pulley_radius_mm: 9.0,
            max_sensor_tension_n: default_max_sensor_tension(),
            max_wind_mm: 120.0,
            mount_link: None,
        }
    }
}

/// A wire route from the actuator-side origin, through relay units, to the
/// insertion. A folded route returns from the insertion to the last relay, so
/// both strands contribute to the path length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleRoute {
    pub id: String,
    pub via_points: Vec<ViaPoint>,
    #[serde(default)]
    pub folded: bool,
    pub elastic: ElasticParams,
    #[serde(default)]
    pub actuator: ActuatorSpec,
}

impl MuscleRoute {
    pub fn relay_count(&self) -> usize {
        self.via_points
            .iter()
            .filter(|v| matches!(v.role, ViaRole::Relay(_)))
            .count()
    }

    pub fn mount_link(&self) -> &str {
        self.actuator
            .mount_link
            .as_deref()
            .unwrap_or(&self.via_points[0].link)
    }

    /// Index of the via point the folded strand returns to.
    pub fn fold_anchor(&self) -> Option<usize> {
        if !self.folded {
            return None;
        }
        self.via_points
            .iter()
            .rposition(|v| matches!(v.role, ViaRole::Relay(_)))
    }

    fn check(&self, links: &HashSet<&str>, out: &mut Vec<Violation>) {
        let vp = &self.via_points;
        if vp.len() < 2 {
            out.push(Violation::new("a muscle route needs at least 2 via points", &self.id));
            return;
        }
        if vp[0].role != ViaRole::Origin {
            out.push(Violation::new("the first via point must be the origin", &self.id));
        }
        if vp[vp.len() - 1].role != ViaRole::Insertion {
            out.push(Violation::new("the last via point must be the insertion", &self.id));
        }
        if vp[1..vp.len() - 1]
            .iter()
            .any(|v| !matches!(v.role, ViaRole::Relay(_)))
        {
            out.push(Violation::new("interior via points must be relays", &self.id));
        }
        if self.folded && self.relay_count() == 0 {
            out.push(Violation::new("a folded route needs at least one relay point", &self.id));
        }
        for v in vp {
            if !links.contains(v.link.as_str()) {
                out.push(Violation::new(
                    format!("muscle `{}` references a missing link", self.id),
                    &v.link,
                ));
            }
            if !v.pos_mm.iter().all(|c| c.is_finite()) {
                out.push(Violation::new("via point positions must be finite", &self.id));
            }
        }
        if let Err(e) = self.elastic.validate() {
            out.push(Violation::new(e.to_string(), &self.id));
        }
        let a = &self.actuator;
        if !(a.gear_ratio > 0.0) {
            out.push(Violation::new("actuator gear ratio must be > 0", &self.id));
        }
        if !(a.pulley_radius_mm > 0.0) {
            out.push(Violation::new("actuator pulley radius must be > 0", &self.id));
        }
        if !(a.max_sensor_tension_n > 0.0) {
            out.push(Violation::new("actuator max sensor tension must be > 0", &self.id));
        }
        if !(a.max_wind_mm > 0.0) {
            out.push(Violation::new("actuator max wind must be > 0", &self.id));
        }
        if let Some(l) = &a.mount_link {
            if !links.contains(l.as_str()) {
                out.push(Violation::new(
                    format!("muscle `{}` mounts its actuator on a missing link", self.id),
                    l,
                ));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBoard {
    pub id: String,
    pub driver_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadcellBoard {
    pub id: String,
    pub loadcell_count: usize,
}

/// One potentiometer input: axis `axis` of joint module `joint`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PotChannel {
    pub joint: String,
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotControlBoard {
    pub id: String,
    pub channels: Vec<PotChannel>,
}

impl PotControlBoard {
    pub fn potentiometer_count(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CircuitTopology {
    #[serde(default)]
    pub control_boards: Vec<ControlBoard>,
    #[serde(default)]
    pub loadcell_boards: Vec<LoadcellBoard>,
    #[serde(default)]
    pub pot_control_boards: Vec<PotControlBoard>,
}

/// A broken rule, naming the rule and the offending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub rule: String,
    pub subject: String,
}

impl Violation {
    fn new(rule: impl Into<String>, subject: impl Into<String>) -> Self {
        Self {
            rule: rule.into(),
            subject: subject.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

/// Board counting rules. An empty list means the topology is within limits.
pub fn validate_circuit(topology: &CircuitTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut over = |kind: &str, id: &str, count: usize, limit: usize, what: &str| {
        if count > limit {
            out.push(Violation::new(
                format!("{kind} has {count} {what}, limit {limit}"),
                id,
            ));
        }
    };
    for b in &topology.control_boards {
        over("control board", &b.id, b.driver_count, MAX_DRIVERS_PER_CONTROL_BOARD, "drivers");
    }
    for b in &topology.loadcell_boards {
        over("loadcell board", &b.id, b.loadcell_count, MAX_LOADCELLS_PER_BOARD, "loadcells");
    }
    for b in &topology.pot_control_boards {
        over(
            "potentiometer board",
            &b.id,
            b.potentiometer_count(),
            MAX_POTENTIOMETERS_PER_BOARD,
            "potentiometers",
        );
    }
    out
}

/// The serde image of a description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionDoc {
    pub links: Vec<Link>,
    pub joints: Vec<JointModuleSpec>,
    pub muscles: Vec<MuscleRoute>,
    #[serde(default)]
    pub circuit: CircuitTopology,
    pub gravity: [f64; 3],
}

impl DescriptionDoc {
    /// Every broken rule in the document, in a stable order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        dup_ids("link", self.links.iter().map(|l| l.id.as_str()), &mut out);
        dup_ids("joint", self.joints.iter().map(|j| j.id.as_str()), &mut out);
        dup_ids("muscle", self.muscles.iter().map(|m| m.id.as_str()), &mut out);
        dup_ids(
            "board",
            self.circuit
                .control_boards
                .iter()
                .map(|b| b.id.as_str())
                .chain(self.circuit.loadcell_boards.iter().map(|b| b.id.as_str()))
                .chain(self.circuit.pot_control_boards.iter().map(|b| b.id.as_str())),
            &mut out,
        );

        let link_ids: HashSet<&str> = self.links.iter().map(|l| l.id.as_str()).collect();
        let joints: HashMap<&str, &JointModuleSpec> =
            self.joints.iter().map(|j| (j.id.as_str(), j)).collect();

        let roots: Vec<&Link> = self.links.iter().filter(|l| l.parent_joint.is_none()).collect();
        if roots.len() != 1 {
            let id = roots.get(1).map_or("<none>", |l| l.id.as_str());
            out.push(Violation::new("the link graph needs exactly one root link", id));
        }
        for l in &self.links {
            if !(l.mass_kg >= 0.0) || !l.mass_kg.is_finite() {
                out.push(Violation::new("link mass must be finite and >= 0", &l.id));
            }
            if !l.com_mm.iter().all(|c| c.is_finite()) {
                out.push(Violation::new("link centre of mass must be finite", &l.id));
            }
            if let Some(pj) = &l.parent_joint {
                match joints.get(pj.as_str()) {
                    None => out.push(Violation::new(
                        format!("link `{}` references a missing joint", l.id),
                        pj,
                    )),
                    Some(j) if j.child_link != l.id => out.push(Violation::new(
                        format!("joint `{pj}` does not have link `{}` as its child", l.id),
                        &l.id,
                    )),
                    _ => {}
                }
            }
        }
        let mut children = HashSet::new();
        for j in &self.joints {
            j.check(&mut out);
            for (role, link) in [("parent", &j.parent_link), ("child", &j.child_link)] {
                if !link_ids.contains(link.as_str()) {
                    out.push(Violation::new(
                        format!("joint `{}` references a missing {role} link", j.id),
                        link,
                    ));
                }
            }
            if j.parent_link == j.child_link {
                out.push(Violation::new("a joint cannot connect a link to itself", &j.id));
            }
            if !children.insert(j.child_link.as_str()) {
                out.push(Violation::new("a link can be the child of only one joint", &j.child_link));
            }
            if let Some(child) = self.links.iter().find(|l| l.id == j.child_link) {
                if child.parent_joint.as_deref() != Some(j.id.as_str()) {
                    out.push(Violation::new(
                        format!("child link does not name joint `{}` as its parent", j.id),
                        &child.id,
                    ));
                }
            }
        }

        // Cycle check: every link must reach the root by following parents.
        if out.is_empty() {
            let parent_of: HashMap<&str, &str> = self
                .joints
                .iter()
                .map(|j| (j.child_link.as_str(), j.parent_link.as_str()))
                .collect();
            for l in &self.links {
                let mut cur = l.id.as_str();
                let mut steps = 0;
                while let Some(p) = parent_of.get(cur) {
                    cur = p;
                    steps += 1;
                    if steps > self.links.len() {
                        out.push(Violation::new("the link graph must be a tree", &l.id));
                        break;
                    }
                }
            }
        }

        for m in &self.muscles {
            m.check(&link_ids, &mut out);
        }

        out.extend(validate_circuit(&self.circuit));
        let mut seen: HashSet<&PotChannel> = HashSet::new();
        for b in &self.circuit.pot_control_boards {
            for ch in &b.channels {
                let label = format!("{}/{}", ch.joint, ch.axis);
                match joints.get(ch.joint.as_str()) {
                    Some(j) if ch.axis < j.axes.len() => {}
                    _ => out.push(Violation::new(
                        format!("potentiometer board `{}` maps a missing joint axis", b.id),
                        label.clone(),
                    )),
                }
                if !seen.insert(ch) {
                    out.push(Violation::new(
                        "each joint axis maps to exactly one potentiometer channel",
                        label,
                    ));
                }
            }
        }
        for j in &self.joints {
            for axis in 0..j.axes.len() {
                let ch = PotChannel {
                    joint: j.id.clone(),
                    axis,
                };
                if !seen.contains(&ch) {
                    out.push(Violation::new(
                        "each joint axis maps to exactly one potentiometer channel",
                        format!("{}/{}", j.id, axis),
                    ));
                }
            }
        }

        if !self.gravity.iter().all(|g| g.is_finite()) {
            out.push(Violation::new("gravity must be finite", "gravity"));
        }
        out
    }
}

fn dup_ids<'a>(kind: &str, ids: impl Iterator<Item = &'a str>, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            out.push(Violation::new(format!("{kind} ids must be unique"), id));
        }
    }
}

/// Precomputed lookups for a validated description.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Index {
    /// Links ordered parent before child; position 0 is the root.
    pub link_order: Vec<usize>,
    /// For each link, the joint it hangs from.
    pub link_parent_joint: Vec<Option<usize>>,
    pub joint_parent_link: Vec<usize>,
    /// First DoF index of each joint.
    pub joint_dof_offset: Vec<usize>,
    pub dof: usize,
    /// Link index of every via point, per muscle.
    pub via_links: Vec<Vec<usize>>,
    /// For each link, whether joint `j` lies on its path to the root.
    pub ancestors: Vec<Vec<bool>>,
    link_by_id: HashMap<String, usize>,
    muscle_by_id: HashMap<String, usize>,
}

impl Index {
    fn build(doc: &DescriptionDoc) -> Self {
        let link_by_id: HashMap<String, usize> = doc
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        let joint_by_id: HashMap<&str, usize> = doc
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| (j.id.as_str(), i))
            .collect();
        let link_parent_joint: Vec<Option<usize>> = doc
            .links
            .iter()
            .map(|l| l.parent_joint.as_deref().map(|j| joint_by_id[j]))
            .collect();
        let joint_parent_link: Vec<usize> =
            doc.joints.iter().map(|j| link_by_id[&j.parent_link]).collect();

        let mut joint_dof_offset = Vec::with_capacity(doc.joints.len());
        let mut dof = 0;
        for j in &doc.joints {
            joint_dof_offset.push(dof);
            dof += j.axes.len();
        }

        // Breadth-first from the root gives a parent-before-child order.
        let root = link_parent_joint.iter().position(Option::is_none).unwrap_or(0);
        let mut link_order = vec![root];
        let mut head = 0;
        while head < link_order.len() {
            let cur = link_order[head];
            head += 1;
            for (ji, &pl) in joint_parent_link.iter().enumerate() {
                if pl == cur {
                    link_order.push(link_by_id[&doc.joints[ji].child_link]);
                }
            }
        }

        let mut ancestors = vec![vec![false; doc.joints.len()]; doc.links.len()];
        for (li, row) in ancestors.iter_mut().enumerate() {
            let mut cur = li;
            while let Some(j) = link_parent_joint[cur] {
                row[j] = true;
                cur = joint_parent_link[j];
            }
        }

        let via_links = doc
            .muscles
            .iter()
            .map(|m| m.via_points.iter().map(|v| link_by_id[&v.link]).collect())
            .collect();
        let muscle_by_id = doc
            .muscles
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();

        Self {
            link_order,
            link_parent_joint,
            joint_parent_link,
            joint_dof_offset,
            dof,
            via_links,
            ancestors,
            link_by_id,
            muscle_by_id,
        }
    }
}

/// A validated robot description. Immutable; build a modified copy through
/// [`RobotDescription::doc`] and [`RobotDescription::from_doc`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobotDescription {
    doc: DescriptionDoc,
    pub(crate) index: Index,
}

impl RobotDescription {
    pub fn from_doc(doc: DescriptionDoc) -> Result<Self> {
        if let Some(v) = doc.violations().into_iter().next() {
            return Err(Error::invariant(v.rule, v.subject));
        }
        let index = Index::build(&doc);
        Ok(Self { doc, index })
    }

    pub fn doc(&self) -> &DescriptionDoc {
        &self.doc
    }

    pub fn into_doc(self) -> DescriptionDoc {
        self.doc
    }

    pub fn links(&self) -> &[Link] {
        &self.doc.links
    }

    pub fn joints(&self) -> &[JointModuleSpec] {
        &self.doc.joints
    }

    pub fn muscles(&self) -> &[MuscleRoute] {
        &self.doc.muscles
    }

    pub fn circuit(&self) -> &CircuitTopology {
        &self.doc.circuit
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.doc.gravity)
    }

    pub fn dof(&self) -> usize {
        self.index.dof
    }

    pub fn muscle_count(&self) -> usize {
        self.doc.muscles.len()
    }

    pub fn link_index(&self, id: &str) -> Result<usize> {
        self.index.link_by_id.get(id).copied().ok_or_else(|| Error::Unknown {
            kind: "link",
            id: id.to_string(),
        })
    }

    pub fn muscle_index(&self, id: &str) -> Result<usize> {
        self.index.muscle_by_id.get(id).copied().ok_or_else(|| Error::Unknown {
            kind: "muscle",
            id: id.to_string(),
        })
    }

    /// Joint axis parts flattened in DoF order.
    pub fn axes(&self) -> impl Iterator<Item = &JointAxisPart> {
        self.doc.joints.iter().flat_map(|j| j.axes.iter())
    }

    pub fn joint_limits(&self) -> Vec<(f64, f64)> {
        self.axes().map(|a| a.limits).collect()
    }

    /// Pretty JSON in the description file format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("description serializes")
    }
}

/// Parses and validates a JSON description.
pub fn load_description(text: &str) -> Result<RobotDescription> {
    let doc: DescriptionDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    RobotDescription::from_doc(doc)
}
