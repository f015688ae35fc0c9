//! Shipped robot descriptions.
//!
//! Via-point coordinates live in the JSON files under `data/`; they are
//! plausible hand-placed values, not measurements.

use crate::model::{load_description, RobotDescription};

pub const MUSASHI_LARM_JSON: &str = include_str!("../data/musashi_larm.json");
pub const HANDLE_RIG_JSON: &str = include_str!("../data/handle_rig.json");

/// Upper-limb platform: scapula, humerus, forearm and hand joined by a 3-DoF
/// shoulder, a 2-DoF elbow (flexion and forearm roll) and a 2-DoF wrist,
/// driven by 18 muscles (5 on the scapula, 5 on the humerus, 8 on the
/// forearm).
pub fn build_musashi_larm() -> RobotDescription {
    load_description(MUSASHI_LARM_JSON).expect("shipped description is valid")
}

/// Planar two-joint arm used by the handle-turning experiment: shoulder and
/// elbow hinges, six folded muscles including two biarticular ones.
pub fn build_handle_rig() -> RobotDescription {
    load_description(HANDLE_RIG_JSON).expect("shipped description is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::ElasticForm;
    use crate::model::{load_description, JointKind};

    #[test]
    fn larm_shape() {
        let r = build_musashi_larm();
        assert_eq!(r.muscle_count(), 18);
        assert_eq!(r.dof(), 7);
        assert_eq!(r.links().len(), 4);
        let kinds: Vec<_> = r.joints().iter().map(|j| j.kind()).collect();
        assert_eq!(kinds, vec![JointKind::Shoulder3, JointKind::Elbow2, JointKind::Wrist2]);

        let mounted = |link: &str| r.muscles().iter().filter(|m| m.mount_link() == link).count();
        assert_eq!(mounted("scapula"), 5);
        assert_eq!(mounted("humerus"), 5);
        assert_eq!(mounted("forearm"), 8);
        for m in r.muscles() {
            assert_eq!(m.elastic.a_m, 3.32);
            assert_eq!(m.elastic.b_m, 0.14);
            assert_eq!(m.elastic.form, ElasticForm::ExpShifted);
            assert_eq!(m.actuator.max_sensor_tension_n, 500.0);
        }
        assert_eq!(r.muscles().iter().filter(|m| m.folded).count(), 10);
    }

    #[test]
    fn larm_round_trip() {
        let r = build_musashi_larm();
        let back = load_description(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rig_is_valid() {
        let r = build_handle_rig();
        assert_eq!(r.dof(), 2);
        assert!(r.muscles().iter().all(|m| m.folded));
    }
}
