//! Batch sampling plans and acceptance verdicts for annotation review.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ChoreoError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcBatch {
    pub batch_id: usize,
    pub members: Vec<usize>,
    /// Ids drawn for review, a subset of `members`.
    pub sampled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcPlan {
    pub seed: u64,
    pub batches: Vec<QcBatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcBatchReport {
    pub batch_id: usize,
    pub sampled: Vec<usize>,
    pub scores: Vec<i64>,
    pub acceptable: usize,
    pub acceptance_rate: f64,
    pub verdict: Verdict,
}

/// Shuffles ids `0..total`, splits them into `batch_count` near-equal
/// batches and draws `n` ids from each without replacement.
pub fn qc_plan(
    total: usize,
    batch_count: usize,
    n: usize,
    seed: u64,
) -> Result<QcPlan, ChoreoError> {
    if batch_count == 0 || total < batch_count {
        return Err(ChoreoError::Config(format!(
            "cannot split {total} items into {batch_count} batches"
        )));
    }
    let smallest = total / batch_count;
    if n == 0 || n > smallest {
        return Err(ChoreoError::Config(format!(
            "sample size {n} must be in 1..={smallest} (smallest batch)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(&mut rng);
    let extra = total % batch_count;
    let mut batches = Vec::with_capacity(batch_count);
    let mut start = 0;
    for b in 0..batch_count {
        let size = smallest + usize::from(b < extra);
        let members = ids[start..start + size].to_vec();
        start += size;
        let sampled = index::sample(&mut rng, size, n)
            .into_iter()
            .map(|i| members[i])
            .collect();
        batches.push(QcBatch {
            batch_id: b,
            members,
            sampled,
        });
    }
    Ok(QcPlan { seed, batches })
}

/// Scores are 1..=5; a score `>= threshold` is acceptable and the batch
/// passes when the acceptable fraction reaches `required_rate`.
pub fn qc_evaluate(
    batch_id: usize,
    sampled: &[usize],
    scores: &[i64],
    threshold: i64,
    required_rate: f64,
) -> Result<QcBatchReport, ChoreoError> {
    if scores.is_empty() {
        return Err(ChoreoError::Config("no scores to evaluate".into()));
    }
    if !sampled.is_empty() && sampled.len() != scores.len() {
        return Err(ChoreoError::Config(format!(
            "{} sampled ids but {} scores",
            sampled.len(),
            scores.len()
        )));
    }
    if let Some((index, &score)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !(1..=5).contains(*s))
    {
        return Err(ChoreoError::Range { index, score });
    }
    let acceptable = scores.iter().filter(|&&s| s >= threshold).count();
    let rate = acceptable as f64 / scores.len() as f64;
    // tolerance keeps exact ratios such as 19/20 on the passing side
    let verdict = if rate >= required_rate - 1e-12 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(QcBatchReport {
        batch_id,
        sampled: sampled.to_vec(),
        scores: scores.to_vec(),
        acceptable,
        acceptance_rate: rate,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn twenty_thousand_into_hundred_batches() {
        let plan = qc_plan(20_000, 100, 30, 1).unwrap();
        assert_eq!(plan.batches.len(), 100);
        let mut all: Vec<usize> = Vec::new();
        for b in &plan.batches {
            assert_eq!(b.members.len(), 200);
            assert_eq!(b.sampled.len(), 30);
            let mut s = b.sampled.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 30);
            assert!(b.sampled.iter().all(|id| b.members.contains(id)));
            all.extend(&b.members);
        }
        all.sort_unstable();
        assert_eq!(all, (0..20_000).collect::<Vec<_>>());
    }

    #[test]
    fn small_plan_samples_everything() {
        let plan = qc_plan(10, 2, 5, 4).unwrap();
        for b in &plan.batches {
            let mut s = b.sampled.clone();
            let mut m = b.members.clone();
            s.sort_unstable();
            m.sort_unstable();
            assert_eq!(s, m);
        }
    }

    #[test]
    fn plan_is_deterministic_and_checked() {
        assert_eq!(
            qc_plan(500, 7, 20, 9).unwrap(),
            qc_plan(500, 7, 20, 9).unwrap()
        );
        assert_ne!(
            qc_plan(500, 7, 20, 9).unwrap(),
            qc_plan(500, 7, 20, 10).unwrap()
        );
        assert!(matches!(
            qc_plan(100, 10, 11, 0),
            Err(ChoreoError::Config(_))
        ));
        assert!(matches!(qc_plan(5, 10, 1, 0), Err(ChoreoError::Config(_))));
    }

    #[test]
    fn default_thresholds() {
        let mut s = vec![5; 29];
        s.push(2);
        let r = qc_evaluate(0, &[], &s, 3, 0.95).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.acceptance_rate - 29.0 / 30.0).abs() < 1e-15);

        let mut s = vec![5; 28];
        s.extend([2, 2]);
        assert_eq!(
            qc_evaluate(0, &[], &s, 3, 0.95).unwrap().verdict,
            Verdict::Fail
        );

        let r = qc_evaluate(0, &[], &[3; 30], 3, 0.95).unwrap();
        assert_eq!((r.acceptance_rate, r.verdict), (1.0, Verdict::Pass));

        assert!(matches!(
            qc_evaluate(0, &[], &[3, 6], 3, 0.95),
            Err(ChoreoError::Range { index: 1, score: 6 })
        ));
        assert!(qc_evaluate(0, &[], &[0], 3, 0.95).is_err());
    }

    proptest! {
        #[test]
        fn boundary_is_ceil_of_required(n in 1usize..300, k in 0usize..300) {
            let k = k.min(n);
            let mut scores = vec![4i64; k];
            scores.extend(std::iter::repeat_n(1, n - k));
            let r = qc_evaluate(0, &[], &scores, 3, 0.95).unwrap();
            let needed = (95 * n).div_ceil(100);
            prop_assert_eq!(r.verdict == Verdict::Pass, k >= needed);
        }
    }
}
