//! Kinetic and geometric feature metrics between the two synthetic classes.

use choreoflow::eval::{evaluate, EvalConfig, PredicateSet};
use choreoflow::io::{synth_dataset, SynthConfig};
use choreoflow::kinematics::forward_kinematics;
use choreoflow::schema::SkeletonSchema;

fn main() {
    let schema = SkeletonSchema::mhr260();
    let corpus = synth_dataset(
        &SynthConfig {
            per_class: 30,
            ..SynthConfig::default()
        },
        &schema,
    )
    .unwrap();
    let positions = |class: &str| -> Vec<_> {
        corpus
            .items
            .iter()
            .filter(|it| it.class.as_deref() == Some(class))
            .map(|it| forward_kinematics(&it.motion, &schema).unwrap())
            .collect()
    };
    let arms = positions("arm_raise");
    let legs = positions("leg_lift");
    let config = EvalConfig {
        protocol: "aistpp".into(),
        diversity_pairs: 200,
        seed: 0,
        predicates: PredicateSet::default(),
    };
    for (label, gen) in [
        ("arm_raise vs itself", &arms),
        ("arm_raise vs leg_lift", &legs),
    ] {
        let report = evaluate(&arms, gen, &schema, &config).unwrap();
        println!("{label}:");
        for m in &report.metrics {
            println!("  {:8} {:.4}", m.name, m.value);
        }
    }
}
