//! Splits an annotated corpus into review batches and judges two scored
//! batches against the acceptance threshold.

use choreoflow::choreo::{qc_evaluate, qc_plan};

fn main() {
    let plan = qc_plan(20_000, 100, 30, 7).unwrap();
    let first = &plan.batches[0];
    println!(
        "{} batches of {}; batch 0 reviews ids {:?}...",
        plan.batches.len(),
        first.members.len(),
        &first.sampled[..5]
    );
    let mut scores = vec![4; 30];
    scores[0] = 2;
    let one_bad = qc_evaluate(0, &first.sampled, &scores, 3, 0.95).unwrap();
    scores[1] = 1;
    let two_bad = qc_evaluate(0, &first.sampled, &scores, 3, 0.95).unwrap();
    for r in [one_bad, two_bad] {
        println!("{}/30 acceptable -> {:?}", r.acceptable, r.verdict);
    }
}
