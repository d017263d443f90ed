//! Rule-based motion features and distribution metrics.
//!
//! Kinetic features are per-joint mean kinetic energy per unit mass;
//! geometric features are the fraction of frames on which each configured
//! relational predicate holds. Populations of either are compared with the
//! Fréchet distance between fitted Gaussians and summarized by mean pairwise
//! distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kinematics::JointPositions;
use crate::schema::SkeletonSchema;

const DEFAULT_PREDICATES: &str = include_str!("../config/geometric_predicates.json");

/// Bumped whenever a feature definition changes.
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),
    #[error("unsupported protocol `{0}`")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Kinetic,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

/// Per joint, the mean over frame pairs of `½‖fps · Δp‖²`.
pub fn kinetic_features(p: &JointPositions, fps: f64) -> Result<FeatureVector, EvalError> {
    let (t, j) = (p.frames(), p.joints());
    if t < 2 {
        return Err(EvalError::Shape(format!(
            "kinetic features need 2 frames, got {t}"
        )));
    }
    let mut values = vec![0.0; j];
    for f in 0..t - 1 {
        for (k, v) in values.iter_mut().enumerate() {
            let d = (p.at(f + 1, k) - p.at(f, k)) * fps;
            *v += 0.5 * d.norm_squared();
        }
    }
    values.iter_mut().for_each(|v| *v /= (t - 1) as f64);
    Ok(FeatureVector {
        kind: FeatureKind::Kinetic,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Predicate {
    /// Height of `joint` exceeds that of `reference` (or the ground) by `margin`.
    Above {
        name: String,
        joint: String,
        #[serde(default)]
        reference: Option<String>,
        margin: f64,
    },
    /// Height of `joint` is below that of `reference` (or the ground) plus `margin`.
    Below {
        name: String,
        joint: String,
        #[serde(default)]
        reference: Option<String>,
        margin: f64,
    },
    Near {
        name: String,
        a: String,
        b: String,
        threshold: f64,
    },
    Far {
        name: String,
        a: String,
        b: String,
        threshold: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSet {
    pub version: u32,
    pub predicates: Vec<Predicate>,
}

impl Default for PredicateSet {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PREDICATES).expect("built-in predicate set parses")
    }
}

enum Resolved {
    Height {
        joint: usize,
        reference: Option<usize>,
        margin: f64,
        above: bool,
    },
    Distance {
        a: usize,
        b: usize,
        threshold: f64,
        near: bool,
    },
}

fn resolve(set: &PredicateSet, schema: &SkeletonSchema) -> Result<Vec<Resolved>, EvalError> {
    let idx = |name: &str| {
        schema
            .joint_index(name)
            .ok_or_else(|| EvalError::Config(format!("unknown joint `{name}` in predicate set")))
    };
    set.predicates
        .iter()
        .map(|p| {
            Ok(match p {
                Predicate::Above {
                    joint,
                    reference,
                    margin,
                    ..
                }
                | Predicate::Below {
                    joint,
                    reference,
                    margin,
                    ..
                } => Resolved::Height {
                    joint: idx(joint)?,
                    reference: reference.as_deref().map(idx).transpose()?,
                    margin: *margin,
                    above: matches!(p, Predicate::Above { .. }),
                },
                Predicate::Near {
                    a, b, threshold, ..
                }
                | Predicate::Far {
                    a, b, threshold, ..
                } => Resolved::Distance {
                    a: idx(a)?,
                    b: idx(b)?,
                    threshold: *threshold,
                    near: matches!(p, Predicate::Near { .. }),
                },
            })
        })
        .collect()
}

/// Fraction of frames on which each predicate holds.
pub fn geometric_features(
    p: &JointPositions,
    schema: &SkeletonSchema,
    predicates: &PredicateSet,
) -> Result<FeatureVector, EvalError> {
    if p.joints() != schema.joint_count() {
        return Err(EvalError::Shape(format!(
            "{} joints but schema `{}` has {}",
            p.joints(),
            schema.name(),
            schema.joint_count()
        )));
    }
    let rules = resolve(predicates, schema)?;
    let up = schema.up_axis().index();
    let t = p.frames();
    if t == 0 {
        return Err(EvalError::Shape("empty motion".into()));
    }
    let values = rules
        .iter()
        .map(|r| {
            let hits = (0..t)
                .filter(|&f| match *r {
                    Resolved::Height {
                        joint,
                        reference,
                        margin,
                        above,
                    } => {
                        let base = reference.map_or(0.0, |k| p.at(f, k)[up]);
                        let h = p.at(f, joint)[up];
                        if above {
                            h > base + margin
                        } else {
                            h < base + margin
                        }
                    }
                    Resolved::Distance {
                        a,
                        b,
                        threshold,
                        near,
                    } => {
                        let d = (p.at(f, a) - p.at(f, b)).norm();
                        if near {
                            d < threshold
                        } else {
                            d > threshold
                        }
                    }
                })
                .count();
            hits as f64 / t as f64
        })
        .collect();
    Ok(FeatureVector {
        kind: FeatureKind::Geometric,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

/// Sample mean and covariance (divisor `n − 1`), symmetrized.
pub fn fit_gaussian(features: &[FeatureVector]) -> Result<GaussianStats, EvalError> {
    let n = features.len();
    if n < 2 {
        return Err(EvalError::InsufficientSamples { needed: 2, got: n });
    }
    let d = features[0].values.len();
    let kind = features[0].kind;
    for f in features {
        if f.kind != kind {
            return Err(EvalError::Config("mixed feature kinds".into()));
        }
        if f.values.len() != d {
            return Err(EvalError::Dimension(d, f.values.len()));
        }
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(&f.values);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(&f.values) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov, n })
}

/// Square root of a symmetric PSD matrix; eigenvalues at or below the
/// roundoff floor `d·ε·max|λ|` clamp to 0.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    if !m.is_square() {
        return Err(EvalError::Dimension(m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::EigenFailure("non-finite matrix entry".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| EvalError::EigenFailure("no convergence".into()))?;
    // eigenvalues within roundoff of zero would contribute ~sqrt(eps) noise
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let floor = m.nrows() as f64 * f64::EPSILON * top;
    let roots = eig
        .eigenvalues
        .map(|l| if l <= floor { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½)`, clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, EvalError> {
    if a.mean.len() != b.mean.len() {
        return Err(EvalError::Dimension(a.mean.len(), b.mean.len()));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let sa = sqrtm_psd(&a.cov)?;
    let inner = &sa * &b.cov * &sa;
    let cross = sqrtm_psd(&inner)?;
    let d = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    if d < -1e-6 {
        log::warn!("Fréchet distance {d} below tolerance; clamping to 0");
    }
    Ok(d.max(0.0))
}

/// Mean Euclidean distance over `pairs` random distinct pairs, or over all
/// pairs when there are no more than `pairs` of them.
pub fn diversity(features: &[FeatureVector], pairs: usize, seed: u64) -> Result<f64, EvalError> {
    let n = features.len();
    if n < 2 {
        return Err(EvalError::InsufficientSamples { needed: 2, got: n });
    }
    let d = features[0].values.len();
    if let Some(f) = features.iter().find(|f| f.values.len() != d) {
        return Err(EvalError::Dimension(d, f.values.len()));
    }
    let dist = |i: usize, j: usize| {
        features[i]
            .values
            .iter()
            .zip(&features[j].values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let all = n * (n - 1) / 2;
    if pairs == 0 || all <= pairs {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += dist(i, j);
            }
        }
        return Ok(s / all as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        s += dist(i, j);
    }
    Ok(s / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub protocol: String,
    pub diversity_pairs: usize,
    pub seed: u64,
    pub predicates: PredicateSet,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: "aistpp".into(),
            diversity_pairs: 1000,
            seed: 0,
            predicates: PredicateSet::default(),
        }
    }
}

impl EvalConfig {
    /// SHA-256 over the canonical JSON of the config and the feature version.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&(FEATURE_VERSION, self)).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub kind: FeatureKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub feature_version: u32,
    pub config_hash: String,
    pub real_count: usize,
    pub generated_count: usize,
    pub metrics: Vec<MetricEntry>,
}

/// FID_k, FID_g between populations and Dist_k, Dist_g of each.
pub fn evaluate(
    real: &[JointPositions],
    generated: &[JointPositions],
    schema: &SkeletonSchema,
    config: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    if config.protocol != "aistpp" {
        return Err(EvalError::Protocol(format!(
            "{} (only `aistpp` is supported; learned-encoder protocols are out of scope)",
            config.protocol
        )));
    }
    let feats =
        |set: &[JointPositions]| -> Result<(Vec<FeatureVector>, Vec<FeatureVector>), EvalError> {
            let k = set
                .iter()
                .map(|p| kinetic_features(p, p.fps))
                .collect::<Result<_, _>>()?;
            let g = set
                .iter()
                .map(|p| geometric_features(p, schema, &config.predicates))
                .collect::<Result<_, _>>()?;
            Ok((k, g))
        };
    let (rk, rg) = feats(real)?;
    let (gk, gg) = feats(generated)?;
    let entry = |name: &str, kind, value| MetricEntry {
        name: name.into(),
        kind,
        value,
    };
    let metrics = vec![
        entry(
            "fid_k",
            FeatureKind::Kinetic,
            frechet_distance(&fit_gaussian(&rk)?, &fit_gaussian(&gk)?)?,
        ),
        entry(
            "fid_g",
            FeatureKind::Geometric,
            frechet_distance(&fit_gaussian(&rg)?, &fit_gaussian(&gg)?)?,
        ),
        entry(
            "dist_k",
            FeatureKind::Kinetic,
            diversity(&gk, config.diversity_pairs, config.seed)?,
        ),
        entry(
            "dist_g",
            FeatureKind::Geometric,
            diversity(&gg, config.diversity_pairs, config.seed)?,
        ),
        entry(
            "dist_k_real",
            FeatureKind::Kinetic,
            diversity(&rk, config.diversity_pairs, config.seed)?,
        ),
        entry(
            "dist_g_real",
            FeatureKind::Geometric,
            diversity(&rg, config.diversity_pairs, config.seed)?,
        ),
    ];
    Ok(MetricsReport {
        protocol: config.protocol.clone(),
        feature_version: FEATURE_VERSION,
        config_hash: config.hash(),
        real_count: real.len(),
        generated_count: generated.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;
    use crate::repr::MotionSequence;
    use ndarray::Array3;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn positions(frames: Vec<Vec<[f64; 3]>>, fps: f64) -> JointPositions {
        let (t, j) = (frames.len(), frames[0].len());
        let mut p = Array3::zeros((t, j, 3));
        for (f, row) in frames.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                for a in 0..3 {
                    p[[f, k, a]] = v[a];
                }
            }
        }
        JointPositions {
            schema_id: "test".into(),
            fps,
            positions: p,
        }
    }

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            kind: FeatureKind::Kinetic,
            values,
        }
    }

    #[test]
    fn kinetic_cases() {
        let still = positions(vec![vec![[1.0, 2.0, 3.0]; 2]; 5], 20.0);
        assert_eq!(
            kinetic_features(&still, 20.0).unwrap().values,
            vec![0.0, 0.0]
        );

        // 1 m/s along x at 20 fps
        let moving = positions(
            (0..6).map(|f| vec![[f as f64 / 20.0, 0.0, 0.0]]).collect(),
            20.0,
        );
        let k = kinetic_features(&moving, 20.0).unwrap().values[0];
        assert!((k - 0.5).abs() < 1e-12);
        let k2 = kinetic_features(&moving, 40.0).unwrap().values[0];
        assert!((k2 - 4.0 * k).abs() < 1e-12);
        assert!(kinetic_features(&positions(vec![vec![[0.0; 3]]], 20.0), 20.0).is_err());
    }

    proptest! {
        #[test]
        fn kinetic_translation_invariance(off in prop::array::uniform3(-10.0f64..10.0), seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<Vec<[f64; 3]>> = (0..5)
                .map(|_| (0..3).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
                .collect();
            let shifted: Vec<Vec<[f64; 3]>> = frames
                .iter()
                .map(|r| r.iter().map(|v| [v[0] + off[0], v[1] + off[1], v[2] + off[2]]).collect())
                .collect();
            let a = kinetic_features(&positions(frames, 20.0), 20.0).unwrap().values;
            let b = kinetic_features(&positions(shifted, 20.0), 20.0).unwrap().values;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn geometric_range(seed in 0u64..50) {
            let schema = SkeletonSchema::mhr260();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = MotionSequence::standing(&schema, 6, 20.0);
            m.frames.mapv_inplace(|v| v + rng.random_range(-1.0..1.0));
            let p = forward_kinematics(&m, &schema).unwrap();
            let g = geometric_features(&p, &schema, &PredicateSet::default()).unwrap();
            prop_assert!(g.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn default_predicates_on_standing_pose() {
        let schema = SkeletonSchema::mhr260();
        let set = PredicateSet::default();
        assert_eq!(set.predicates.len(), 16);
        let p = forward_kinematics(&MotionSequence::standing(&schema, 4, 20.0), &schema).unwrap();
        let g = geometric_features(&p, &schema, &set).unwrap();
        let names: Vec<&str> = set
            .predicates
            .iter()
            .map(|p| match p {
                Predicate::Above { name, .. }
                | Predicate::Below { name, .. }
                | Predicate::Near { name, .. }
                | Predicate::Far { name, .. } => name.as_str(),
            })
            .collect();
        let lifted = names.iter().position(|n| *n == "l_ankle_lifted").unwrap();
        assert_eq!(g.values[lifted], 0.0);
        let extended = names.iter().position(|n| *n == "l_arm_extended").unwrap();
        assert_eq!(g.values[extended], 1.0);
    }

    #[test]
    fn predicate_counts_frames() {
        let schema = SkeletonSchema::chain3();
        let set = PredicateSet {
            version: 1,
            predicates: vec![Predicate::Above {
                name: "tip_high".into(),
                joint: "tip".into(),
                reference: None,
                margin: 0.5,
            }],
        };
        let p = positions(
            vec![
                vec![[0.0; 3], [0.0; 3], [0.0, 1.0, 0.0]],
                vec![[0.0; 3], [0.0; 3], [0.0, 0.2, 0.0]],
                vec![[0.0; 3], [0.0; 3], [0.0, 0.9, 0.0]],
            ],
            20.0,
        );
        let g = geometric_features(&p, &schema, &set).unwrap();
        assert!((g.values[0] - 2.0 / 3.0).abs() < 1e-15);
        let bad = PredicateSet {
            version: 1,
            predicates: vec![Predicate::Near {
                name: "x".into(),
                a: "tip".into(),
                b: "nope".into(),
                threshold: 1.0,
            }],
        };
        assert!(matches!(
            geometric_features(&p, &schema, &bad),
            Err(EvalError::Config(_))
        ));
    }

    #[test]
    fn gaussian_fits() {
        let g = fit_gaussian(&[fv(vec![0.0]), fv(vec![2.0])]).unwrap();
        assert_eq!(g.mean[0], 1.0);
        assert_eq!(g.cov[(0, 0)], 2.0);
        let same = fit_gaussian(&[fv(vec![1.0, 2.0]), fv(vec![1.0, 2.0])]).unwrap();
        assert!(same.cov.iter().all(|&v| v == 0.0));
        assert!(matches!(
            fit_gaussian(&[fv(vec![1.0])]),
            Err(EvalError::InsufficientSamples { .. })
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut set: Vec<FeatureVector> = (0..9)
            .map(|_| fv((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let a = fit_gaussian(&set).unwrap();
        set.reverse();
        set.swap(0, 4);
        let b = fit_gaussian(&set).unwrap();
        assert!((&a.mean - &b.mean).norm() < 1e-14 && (&a.cov - &b.cov).norm() < 1e-14);
    }

    fn gauss1(mean: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
            n: 2,
        }
    }

    #[test]
    fn frechet_closed_forms() {
        // (μ1 − μ2)² + (σ1 − σ2)²
        let d = frechet_distance(&gauss1(0.0, 1.0), &gauss1(1.0, 1.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let d = frechet_distance(&gauss1(0.0, 1.0), &gauss1(0.0, 4.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let g = gauss1(3.0, 2.5);
        assert!(frechet_distance(&g, &g).unwrap() < 1e-10);
        assert!(frechet_distance(
            &g,
            &GaussianStats {
                mean: DVector::zeros(2),
                cov: DMatrix::zeros(2, 2),
                n: 2
            }
        )
        .is_err());
    }

    fn random_psd(d: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(d, rank, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    #[test]
    fn sqrtm_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [1usize, 2, 5, 16, 64] {
            for rank in [d, d.div_ceil(2)] {
                let a = random_psd(d, rank, &mut rng);
                let s = sqrtm_psd(&a).unwrap();
                let err = (&s * &s - &a).abs().max();
                assert!(err < 1e-8, "d = {d}: {err}");
            }
        }
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for d in [2, 8, 24] {
            let a = GaussianStats {
                mean: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                cov: random_psd(d, d, &mut rng),
                n: 10,
            };
            let b = GaussianStats {
                mean: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                cov: random_psd(d, d / 2, &mut rng),
                n: 10,
            };
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
            assert!(ab >= 0.0 && frechet_distance(&a, &a).unwrap() < 1e-10);
        }
    }

    #[test]
    fn diversity_cases() {
        let same = vec![fv(vec![1.0, 1.0]); 5];
        assert_eq!(diversity(&same, 100, 0).unwrap(), 0.0);
        assert_eq!(
            diversity(&[fv(vec![0.0]), fv(vec![3.0])], 10, 0).unwrap(),
            3.0
        );

        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 4.0]];
        let set: Vec<_> = pts.iter().map(|p| fv(p.to_vec())).collect();
        let mut brute = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i < j {
                    brute +=
                        ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                }
            }
        }
        assert!((diversity(&set, 6, 0).unwrap() - brute / 6.0).abs() < 1e-14);
        let sampled = diversity(&set, 3, 1).unwrap();
        assert!(sampled > 0.0);
        assert_eq!(sampled, diversity(&set, 3, 1).unwrap());
    }

    #[test]
    fn report_and_protocol() {
        let schema = SkeletonSchema::mhr260();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let make = |rng: &mut ChaCha8Rng| {
            let mut m = MotionSequence::standing(&schema, 5, 20.0);
            m.frames.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
            forward_kinematics(&m, &schema).unwrap()
        };
        let real: Vec<_> = (0..4).map(|_| make(&mut rng)).collect();
        let gen: Vec<_> = (0..3).map(|_| make(&mut rng)).collect();
        let r = evaluate(&real, &gen, &schema, &EvalConfig::default()).unwrap();
        assert_eq!((r.real_count, r.generated_count), (4, 3));
        assert_eq!(r.config_hash.len(), 64);
        assert!(r
            .metrics
            .iter()
            .all(|m| m.value.is_finite() && m.value >= 0.0));
        let bad = EvalConfig {
            protocol: "humanml3d".into(),
            ..EvalConfig::default()
        };
        assert!(matches!(
            evaluate(&real, &gen, &schema, &bad),
            Err(EvalError::Protocol(_))
        ));
    }
}
