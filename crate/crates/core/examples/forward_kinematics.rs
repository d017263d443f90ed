//! Joint positions and foot contacts while the left leg lifts and the body drifts forward.

use choreoflow::kinematics::{detect_contacts, forward_kinematics, ContactThresholds};
use choreoflow::repr::MotionSequence;
use choreoflow::schema::SkeletonSchema;

fn main() {
    let schema = SkeletonSchema::mhr260();
    let mut m = MotionSequence::standing(&schema, 40, 20.0);
    let hip = schema
        .slot(schema.joint_index("l_hip").unwrap())
        .native
        .start;
    let knee = schema
        .slot(schema.joint_index("l_knee").unwrap())
        .native
        .start;
    for t in 0..m.len() {
        let phase = t as f64 / 10.0 * std::f64::consts::TAU;
        m.frames[[t, 2]] = 0.005 * t as f64;
        // lift the left leg every half second
        let lift = phase.sin().max(0.0);
        m.frames[[t, hip + 2]] = -0.6 * lift;
        m.frames[[t, knee]] = 0.9 * lift;
    }
    let p = forward_kinematics(&m, &schema).unwrap();
    let foot = schema.joint_index("l_ankle").unwrap();
    for t in (0..m.len()).step_by(3) {
        let v = p.at(t, foot);
        println!(
            "frame {t:2}: left ankle ({:+.3}, {:+.3}, {:+.3})",
            v.x, v.y, v.z
        );
    }
    let contacts = detect_contacts(&p, &schema, ContactThresholds::default());
    println!(
        "{} foot-frame contacts over {} frames",
        contacts.count(),
        m.len()
    );
}
