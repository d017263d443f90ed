//! Trains the desk model briefly on the synthetic corpus and samples one
//! motion per class annotation.
//!
//! cargo run --release --example train_and_sample -- [steps]

use choreoflow::choreo::{extract_tokens, Vocabulary};
use choreoflow::experiment::{prepare_corpus, PRIOR_MIN_STD};
use choreoflow::flow::{sample, train_loop, LossWeights, SamplerConfig, TrainConfig};
use choreoflow::io::{synth_dataset, write_motion, SynthClass, SynthConfig};
use choreoflow::model::{ConditioningBundle, Model, ModelConfig};
use choreoflow::repr::RepresentationMode;
use choreoflow::schema::SkeletonSchema;

fn main() {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    let schema = SkeletonSchema::mhr260();
    let vocab = Vocabulary::default();
    let corpus = synth_dataset(
        &SynthConfig {
            per_class: 20,
            ..SynthConfig::default()
        },
        &schema,
    )
    .unwrap();
    let prepared = prepare_corpus(
        &corpus,
        &schema,
        RepresentationMode::Continuous,
        LossWeights::default(),
        &vocab,
    )
    .unwrap();
    let mut model = Model::init(
        ModelConfig::desk(prepared.ctx.dim(), prepared.token_vocab),
        0,
    )
    .unwrap();
    model
        .fit_prior(
            prepared.set.examples.iter().map(|e| &e.frames),
            PRIOR_MIN_STD,
        )
        .unwrap();
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let outcome = train_loop(
        model,
        &prepared.set,
        &prepared.ctx,
        &cfg,
        serde_json::Value::Null,
        None,
        None,
    )
    .unwrap();
    for log in outcome.logs.iter().step_by((steps / 6).max(1)) {
        println!(
            "step {:4}: total {:.4}, vel {:.4}",
            log.step, log.losses["total"], log.losses["vel"]
        );
    }

    let model = outcome.checkpoint.ema_model();
    let dir = std::env::temp_dir().join("choreoflow_samples");
    std::fs::create_dir_all(&dir).unwrap();
    for class in SynthClass::ALL {
        let tokens = extract_tokens(&class.annotation(), &vocab).unwrap();
        let cond = ConditioningBundle::new(tokens, corpus.items[0].motion.identity.clone(), 1.0);
        let s = sample(
            &model,
            &cond,
            32,
            &SamplerConfig::default(),
            &prepared.ctx.normalizer,
            &schema,
            20.0,
        )
        .unwrap();
        let path = dir.join(format!("{}.dfm", class.name()));
        write_motion(&s.motion, &schema, &path).unwrap();
        println!("{} -> {}", class.name(), path.display());
    }
}
