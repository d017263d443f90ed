//! Procedural two-pattern corpus used as a desk-scale training set.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusItem, IoError};
use crate::choreo::{ChoreoAnnotation, ChoreoPhrase, SpaceSpec};
use crate::eval::kinetic_features;
use crate::kinematics::forward_kinematics;
use crate::repr::{MotionSequence, IDENTITY_DIM};
use crate::schema::SkeletonSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthClass {
    ArmRaise,
    LegLift,
}

impl SynthClass {
    pub const ALL: [SynthClass; 2] = [SynthClass::ArmRaise, SynthClass::LegLift];

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::ArmRaise => "arm_raise",
            SynthClass::LegLift => "leg_lift",
        }
    }

    /// The annotation every motion of this class is paired with.
    pub fn annotation(self) -> ChoreoAnnotation {
        let (segment, movement, plane, direction, level, text) = match self {
            SynthClass::ArmRaise => (
                "left_arm",
                "raise",
                "coronal",
                "up",
                "high",
                "the left arm rises sideways",
            ),
            SynthClass::LegLift => (
                "left_leg",
                "lift",
                "sagittal",
                "forward",
                "low",
                "the left leg lifts forward",
            ),
        };
        ChoreoAnnotation {
            phrases: vec![ChoreoPhrase {
                body: BTreeMap::from([(segment.to_string(), movement.to_string())]),
                space: SpaceSpec {
                    plane: Some(plane.into()),
                    direction: Some(direction.into()),
                    level: Some(level.into()),
                },
                orientation: Some(1),
                effort: Default::default(),
            }],
            free_text: Some(text.into()),
            word_count: text.split_whitespace().count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    /// Required ratio of centroid distance to within-class RMS spread.
    pub min_separation: f64,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 2,
            per_class: 100,
            frames: 32,
            fps: 20.0,
            seed: 0,
            min_separation: 5.0,
            max_attempts: 8,
        }
    }
}

fn dof_start(schema: &SkeletonSchema, joint: &str) -> Result<usize, IoError> {
    schema
        .joint_index(joint)
        .map(|j| schema.slot(j).native.start)
        .ok_or_else(|| {
            IoError::Config(format!("schema `{}` has no joint `{joint}`", schema.name()))
        })
}

/// Columns driven by each class: (native dim, gain relative to the envelope).
fn drivers(schema: &SkeletonSchema, class: SynthClass) -> Result<Vec<(usize, f64)>, IoError> {
    Ok(match class {
        // YZX shoulder: the middle angle swings the arm about z, lifting it from +x towards +y.
        SynthClass::ArmRaise => vec![
            (dof_start(schema, "l_shoulder")? + 1, 1.0),
            (dof_start(schema, "l_elbow")?, -0.3),
        ],
        // ZYX hip: the last angle about x; negative moves the foot forward (+z).
        SynthClass::LegLift => vec![
            (dof_start(schema, "l_hip")? + 2, -0.9),
            (dof_start(schema, "l_knee")?, 1.1),
        ],
    })
}

fn generate_one(
    schema: &SkeletonSchema,
    cfg: &SynthConfig,
    class: SynthClass,
    rng: &mut ChaCha8Rng,
) -> Result<MotionSequence, IoError> {
    let mut m = MotionSequence::standing(schema, cfg.frames, cfg.fps);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let amplitude = 1.2 * (1.0 + 0.08 * rng.random_range(-1.0..1.0));
    let cycles = rng.random_range(1.8..2.2);
    let phase = rng.random_range(-0.15..0.15);
    let jaw = schema.jaw_native_dims();
    let rotation_dims: Vec<usize> = (6..schema.native_pose_dim())
        .filter(|d| !jaw.contains(d))
        .collect();
    // Small static posture offsets keep samples distinct without adding motion energy.
    for &d in &rotation_dims {
        let offset = 0.005 * jitter.sample(rng);
        m.frames.column_mut(d).mapv_inplace(|v| v + offset);
    }
    let span = (cfg.frames.max(2) - 1) as f64;
    for (dim, gain) in drivers(schema, class)? {
        for t in 0..cfg.frames {
            let s = t as f64 / span;
            let envelope = 0.5 * (1.0 - (2.0 * PI * (cycles * s + phase)).cos());
            m.frames[[t, dim]] += gain * amplitude * envelope;
        }
    }
    for &d in &rotation_dims {
        for t in 0..cfg.frames {
            m.frames[[t, d]] += 0.001 * jitter.sample(rng);
        }
    }
    for t in 0..cfg.frames {
        for &d in &rotation_dims {
            let v = m.frames[[t, d]];
            m.frames[[t, d]] = crate::repr::wrap_angle(v);
        }
    }
    m.identity = (0..IDENTITY_DIM)
        .map(|_| 0.1 * jitter.sample(rng))
        .collect();
    m.validate(schema)
        .map_err(|e| IoError::Config(e.to_string()))?;
    Ok(m)
}

/// Ratio of the smallest centroid distance to the within-class RMS
/// distance from each feature vector to its own class centroid.
pub fn class_separation(features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let d = features.first().map_or(0, Vec::len);
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (f, &c) in features.iter().zip(labels) {
        counts[c] += 1;
        for (acc, v) in centroids[c].iter_mut().zip(f) {
            *acc += v;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= (*n).max(1) as f64);
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let within = (features
        .iter()
        .zip(labels)
        .map(|(f, &c)| sq(f, &centroids[c]))
        .sum::<f64>()
        / features.len().max(1) as f64)
        .sqrt();
    let mut between = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            between = between.min(sq(&centroids[a], &centroids[b]).sqrt());
        }
    }
    between / within.max(f64::MIN_POSITIVE)
}

/// Deterministic corpus of `classes × per_class` motions, class-major order.
/// Regenerates from a derived seed until the kinetic-feature separation
/// reaches `min_separation`.
pub fn synth_dataset(cfg: &SynthConfig, schema: &SkeletonSchema) -> Result<Corpus, IoError> {
    if cfg.classes == 0 || cfg.classes > SynthClass::ALL.len() {
        return Err(IoError::Config(format!(
            "classes must be 1..={}, got {}",
            SynthClass::ALL.len(),
            cfg.classes
        )));
    }
    if cfg.per_class == 0 || cfg.frames < 2 || !(cfg.fps > 0.0) {
        return Err(IoError::Config(
            "per_class, frames >= 2 and fps > 0 are required".into(),
        ));
    }
    for attempt in 0..cfg.max_attempts.max(1) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt as u64 * 0x9E37_79B9));
        let mut items = Vec::with_capacity(cfg.classes * cfg.per_class);
        let mut features = Vec::with_capacity(items.capacity());
        let mut labels = Vec::with_capacity(items.capacity());
        for (c, &class) in SynthClass::ALL[..cfg.classes].iter().enumerate() {
            for i in 0..cfg.per_class {
                let motion = generate_one(schema, cfg, class, &mut rng)?;
                let positions = forward_kinematics(&motion, schema)
                    .map_err(|e| IoError::Config(e.to_string()))?;
                let kin = kinetic_features(&positions, motion.fps)
                    .map_err(|e| IoError::Config(e.to_string()))?;
                features.push(kin.values);
                labels.push(c);
                items.push(CorpusItem {
                    id: format!("{}_{i:03}", class.name()),
                    class: Some(class.name().to_string()),
                    motion,
                    annotation: class.annotation(),
                });
            }
        }
        let separation = if cfg.classes > 1 {
            class_separation(&features, &labels)
        } else {
            f64::INFINITY
        };
        if separation >= cfg.min_separation {
            log::info!("synthetic corpus: separation {separation:.2} on attempt {attempt}");
            return Ok(Corpus {
                schema: schema.name().to_string(),
                items,
            });
        }
        log::warn!(
            "synthetic corpus attempt {attempt}: separation {separation:.2} below {}",
            cfg.min_separation
        );
    }
    Err(IoError::Config(format!(
        "could not reach class separation {} in {} attempts",
        cfg.min_separation, cfg.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choreo::{is_valid, validate_annotation, Vocabulary};

    fn features(corpus: &Corpus, schema: &SkeletonSchema) -> (Vec<Vec<f64>>, Vec<usize>) {
        corpus
            .items
            .iter()
            .map(|it| {
                let p = forward_kinematics(&it.motion, schema).unwrap();
                let label = usize::from(it.class.as_deref() == Some("leg_lift"));
                (kinetic_features(&p, it.motion.fps).unwrap().values, label)
            })
            .unzip()
    }

    #[test]
    fn two_balanced_classes_are_separated() {
        let schema = SkeletonSchema::mhr260();
        let corpus = synth_dataset(&SynthConfig::default(), &schema).unwrap();
        assert_eq!(corpus.items.len(), 200);
        let arm = corpus
            .items
            .iter()
            .filter(|i| i.class.as_deref() == Some("arm_raise"))
            .count();
        assert_eq!(arm, 100);
        let (f, labels) = features(&corpus, &schema);

        // Independent check: per-dimension pooled standard deviation, worst case.
        let d = f[0].len();
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        for (x, &c) in f.iter().zip(&labels) {
            for k in 0..d {
                mean[c][k] += x[k] / 100.0;
            }
        }
        let mut var = 0.0f64;
        for (x, &c) in f.iter().zip(&labels) {
            for k in 0..d {
                var += (x[k] - mean[c][k]).powi(2);
            }
        }
        let total_std = (var / 199.0).sqrt();
        let dist: f64 = (0..d)
            .map(|k| (mean[0][k] - mean[1][k]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist >= 5.0 * total_std, "dist {dist} std {total_std}");
        for it in &corpus.items {
            it.motion.validate(&schema).unwrap();
        }
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let schema = SkeletonSchema::mhr260();
        let cfg = SynthConfig {
            per_class: 5,
            ..SynthConfig::default()
        };
        let a = synth_dataset(&cfg, &schema).unwrap();
        let b = synth_dataset(&cfg, &schema).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&SynthConfig { seed: 1, ..cfg }, &schema).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn motions_move_the_annotated_limb() {
        let schema = SkeletonSchema::mhr260();
        let cfg = SynthConfig {
            per_class: 1,
            ..SynthConfig::default()
        };
        let corpus = synth_dataset(&cfg, &schema).unwrap();
        let vocab = Vocabulary::default();
        let wrist = schema.joint_index("l_wrist").unwrap();
        let ankle = schema.joint_index("l_ankle").unwrap();
        for it in &corpus.items {
            assert!(is_valid(&validate_annotation(&it.annotation, &vocab)));
            let p = forward_kinematics(&it.motion, &schema).unwrap();
            let rise = |j: usize, k: usize| {
                let lo = (0..cfg.frames)
                    .map(|t| p.at(t, j)[k])
                    .fold(f64::INFINITY, f64::min);
                let hi = (0..cfg.frames)
                    .map(|t| p.at(t, j)[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            };
            match it.class.as_deref() {
                Some("arm_raise") => assert!(rise(wrist, 1) > 0.3, "wrist rise {}", rise(wrist, 1)),
                _ => assert!(rise(ankle, 2) > 0.1, "ankle forward {}", rise(ankle, 2)),
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let schema = SkeletonSchema::mhr260();
        for cfg in [
            SynthConfig {
                classes: 3,
                ..SynthConfig::default()
            },
            SynthConfig {
                frames: 1,
                ..SynthConfig::default()
            },
            SynthConfig {
                per_class: 0,
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(
                synth_dataset(&cfg, &schema),
                Err(IoError::Config(_))
            ));
        }
        assert!(synth_dataset(&SynthConfig::default(), &SkeletonSchema::chain3()).is_err());
    }
}
