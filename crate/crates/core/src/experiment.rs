//! End-to-end glue: corpus preparation and the desk-scale controllability run.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::choreo::{extract_tokens, TokenLayout, Vocabulary};
use crate::eval::{fit_gaussian, frechet_distance, kinetic_features, FeatureVector};
use crate::flow::{
    sample_batch, train_loop, FlowContext, FlowError, LossWeights, SamplerConfig, TrainConfig,
    TrainingSet,
};
use crate::io::{synth_dataset, Corpus, SynthClass, SynthConfig};
use crate::kinematics::forward_kinematics;
use crate::model::{ConditioningBundle, Model, ModelConfig};
use crate::repr::{Normalizer, RepresentationMode};
use crate::schema::SkeletonSchema;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
    #[error("{0}")]
    Other(String),
}

fn other(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Other(e.to_string())
}

/// Floor on the per-dim standard deviation of the velocity prior.
pub const PRIOR_MIN_STD: f64 = 1e-3;

/// Normalizer, loss context and precomputed training set for a corpus.
pub struct Prepared {
    pub ctx: FlowContext,
    pub set: TrainingSet,
    pub token_vocab: usize,
}

pub fn prepare_corpus(
    corpus: &Corpus,
    schema: &SkeletonSchema,
    mode: RepresentationMode,
    weights: LossWeights,
    vocab: &Vocabulary,
) -> Result<Prepared, ExperimentError> {
    let motions: Vec<_> = corpus.items.iter().map(|it| it.motion.clone()).collect();
    let normalizer = Normalizer::fit(mode, &motions, schema).map_err(other)?;
    let ctx = FlowContext::new(schema.clone(), normalizer, weights)?;
    let items = corpus
        .items
        .iter()
        .map(|it| {
            Ok((
                it.motion.clone(),
                extract_tokens(&it.annotation, vocab).map_err(other)?,
            ))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let set = TrainingSet::new(&ctx, &items)?;
    Ok(Prepared {
        ctx,
        set,
        token_vocab: TokenLayout::new(vocab).vocab_size as usize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub samples_per_class: usize,
    pub sampler: SamplerConfig,
    /// Sample with the EMA weights instead of the live ones.
    pub use_ema: bool,
}

impl ControllabilityConfig {
    pub fn new(seed: u64) -> Self {
        ControllabilityConfig {
            seed,
            synth: SynthConfig::default(),
            train: TrainConfig {
                steps: 3000,
                seed,
                ..TrainConfig::default()
            },
            samples_per_class: 20,
            sampler: SamplerConfig {
                seed: seed.wrapping_add(1),
                ..SamplerConfig::default()
            },
            use_ema: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    pub seed: u64,
    pub steps: usize,
    pub first_vel: f64,
    pub last_vel: f64,
    /// Nearest-centroid accuracy of the generated samples.
    pub accuracy: f64,
    pub frechet: f64,
    pub centroid_dist_sq: f64,
    pub train_seconds: f64,
    pub total_seconds: f64,
}

impl ControllabilityReport {
    pub fn loss_ratio(&self) -> f64 {
        self.last_vel / self.first_vel
    }
}

fn centroid(features: &[&FeatureVector]) -> Vec<f64> {
    let d = features[0].values.len();
    let mut c = vec![0.0; d];
    for f in features {
        for (a, v) in c.iter_mut().zip(&f.values) {
            *a += v / features.len() as f64;
        }
    }
    c
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Trains the desk model on the two-class synthetic corpus, then samples
/// each class annotation and classifies the samples by nearest kinetic
/// centroid of the real classes.
pub fn run_controllability(
    cfg: &ControllabilityConfig,
) -> Result<ControllabilityReport, ExperimentError> {
    let start = Instant::now();
    let schema = SkeletonSchema::mhr260();
    let vocab = Vocabulary::default();
    let corpus = synth_dataset(
        &SynthConfig {
            seed: cfg.seed,
            ..cfg.synth.clone()
        },
        &schema,
    )?;
    let prepared = prepare_corpus(
        &corpus,
        &schema,
        RepresentationMode::Continuous,
        LossWeights::default(),
        &vocab,
    )?;
    let mut model = Model::init(
        ModelConfig::desk(prepared.ctx.dim(), prepared.token_vocab),
        cfg.seed,
    )
    .map_err(other)?;
    model
        .fit_prior(
            prepared.set.examples.iter().map(|e| &e.frames),
            PRIOR_MIN_STD,
        )
        .map_err(other)?;
    let train_start = Instant::now();
    let outcome = train_loop(
        model,
        &prepared.set,
        &prepared.ctx,
        &cfg.train,
        serde_json::json!({ "experiment": "controllability", "seed": cfg.seed }),
        None,
        None,
    )?;
    let train_seconds = train_start.elapsed().as_secs_f64();

    let window = 100.min(outcome.logs.len());
    let mean_vel = |logs: &[crate::flow::StepLog]| {
        logs.iter().map(|l| l.losses["vel"]).sum::<f64>() / logs.len() as f64
    };
    let first_vel = mean_vel(&outcome.logs[..window]);
    let last_vel = mean_vel(&outcome.logs[outcome.logs.len() - window..]);

    let fps = corpus.items[0].motion.fps;
    let kin = |m: &crate::repr::MotionSequence| -> Result<FeatureVector, ExperimentError> {
        let p = forward_kinematics(m, &schema).map_err(other)?;
        kinetic_features(&p, m.fps).map_err(other)
    };
    let mut real: Vec<(usize, FeatureVector)> = Vec::new();
    for it in &corpus.items {
        let c = SynthClass::ALL
            .iter()
            .position(|k| Some(k.name()) == it.class.as_deref())
            .unwrap_or(0);
        real.push((c, kin(&it.motion)?));
    }
    let classes = cfg.synth.classes;
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            centroid(
                &real
                    .iter()
                    .filter(|(k, _)| *k == c)
                    .map(|(_, f)| f)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();

    let trained = if cfg.use_ema {
        outcome.checkpoint.ema_model()
    } else {
        outcome.checkpoint.model()
    };
    let mut conds = Vec::new();
    let mut labels = Vec::new();
    for (c, class) in SynthClass::ALL[..classes].iter().enumerate() {
        let tokens = extract_tokens(&class.annotation(), &vocab).map_err(other)?;
        for i in 0..cfg.samples_per_class {
            let identity = corpus.items[(c * cfg.synth.per_class + i) % corpus.items.len()]
                .motion
                .identity
                .clone();
            conds.push(ConditioningBundle::new(tokens.clone(), identity, 1.0));
            labels.push(c);
        }
    }
    let samples = sample_batch(
        &trained,
        &conds,
        cfg.synth.frames,
        &cfg.sampler,
        &prepared.ctx.normalizer,
        &schema,
        fps,
    )?;
    let generated = samples
        .iter()
        .map(|s| kin(&s.motion))
        .collect::<Result<Vec<_>, _>>()?;
    for (c, centroid) in centroids.iter().enumerate() {
        let gen: Vec<&FeatureVector> = generated
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == c)
            .map(|(f, _)| f)
            .collect();
        let gc = self::centroid(&gen);
        log::info!(
            "class {c}: real kinetic sum {:.4}, generated {:.4}, gap {:.4}",
            centroid.iter().sum::<f64>(),
            gc.iter().sum::<f64>(),
            dist_sq(&gc, centroid).sqrt()
        );
    }
    let correct = generated
        .iter()
        .zip(&labels)
        .filter(|(f, &label)| {
            let nearest = (0..classes)
                .min_by(|&a, &b| {
                    dist_sq(&f.values, &centroids[a]).total_cmp(&dist_sq(&f.values, &centroids[b]))
                })
                .unwrap_or(0);
            nearest == label
        })
        .count();
    let real_features: Vec<FeatureVector> = real.into_iter().map(|(_, f)| f).collect();
    let frechet = frechet_distance(
        &fit_gaussian(&generated).map_err(other)?,
        &fit_gaussian(&real_features).map_err(other)?,
    )
    .map_err(other)?;
    let centroid_dist_sq = if classes > 1 {
        dist_sq(&centroids[0], &centroids[1])
    } else {
        0.0
    };
    Ok(ControllabilityReport {
        seed: cfg.seed,
        steps: outcome.logs.len(),
        first_vel,
        last_vel,
        accuracy: correct as f64 / generated.len() as f64,
        frechet,
        centroid_dist_sq,
        train_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
