//! Single-threaded training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{total_loss_graph, FlowBatch, FlowContext, FlowError, TrainingSet};
use crate::autodiff::Graph;
use crate::model::{
    grad_norm, write_checkpoint, AdamW, AdamWConfig, Checkpoint, Ema, Model, ModelError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Crop length; defaults to the shortest sequence (capped by the model).
    pub window: Option<usize>,
    pub seed: u64,
    pub adam: AdamWConfig,
    pub ema_decay: f64,
    /// Ramp the EMA decay up from 0.1 as `(1 + n) / (10 + n)`.
    pub ema_warmup: bool,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 8,
            window: None,
            seed: 0,
            adam: AdamWConfig {
                lr: 2e-4,
                grad_clip: Some(1.0),
                ..AdamWConfig::default()
            },
            ema_decay: 0.9999,
            ema_warmup: true,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub losses: BTreeMap<String, f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<StepLog>,
}

fn snapshot(
    model: &Model,
    opt: &AdamW,
    ema: &Ema,
    step: usize,
    meta: &serde_json::Value,
) -> Checkpoint {
    Checkpoint {
        config: model.config.clone(),
        step: step as u64,
        meta: meta.clone(),
        params: model.params.clone(),
        optimizer: Some(opt.clone()),
        ema: Some(ema.clone()),
    }
}

/// Runs `cfg.steps` optimizer steps. Each step logs its loss components as
/// one JSON line to `log`; with `checkpoint_dir` set, checkpoints are written
/// every `checkpoint_every` steps and the last good state is written before
/// aborting on a non-finite loss or gradient.
pub fn train_loop(
    mut model: Model,
    set: &TrainingSet,
    ctx: &FlowContext,
    cfg: &TrainConfig,
    meta: serde_json::Value,
    mut log: Option<&mut dyn Write>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, FlowError> {
    if set.examples.is_empty() || cfg.batch_size == 0 {
        return Err(FlowError::Config("empty dataset or zero batch size".into()));
    }
    let window = cfg
        .window
        .unwrap_or_else(|| set.min_len())
        .min(model.config.max_frames);
    if window == 0 || window > set.min_len() {
        return Err(FlowError::Config(format!(
            "window {window} does not fit the shortest sequence ({} frames)",
            set.min_len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.adam, &model.params);
    let mut ema = Ema::new(cfg.ema_decay, &model.params);
    let mut logs = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let indices: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..set.examples.len()))
            .collect();
        let batch = FlowBatch::draw(set, &indices, window, model.config.cond_drop_prob, &mut rng)?;

        let mut g = Graph::new();
        let pv = model.register(&mut g, true);
        let outcome =
            total_loss_graph(&mut g, &model, &pv, &batch, ctx, Some(&mut rng)).and_then(|terms| {
                let total = g.scalar(terms.total);
                if !total.is_finite() {
                    return Err(FlowError::Model(ModelError::NonFinite("loss".into())));
                }
                let grads = model.collect_grads(&g, &pv, terms.total)?;
                Ok((terms.components(&g), grads))
            });
        let last_good =
            |model: &Model, opt: &AdamW, ema: &Ema| snapshot(model, opt, ema, step, &meta);
        let (losses, grads) = match outcome {
            Ok(v) => v,
            Err(FlowError::Model(ModelError::NonFinite(what))) => {
                let ck = last_good(&model, &opt, &ema);
                if let Some(dir) = checkpoint_dir {
                    write_checkpoint(&ck, &dir.join("last_good.dfck"))?;
                }
                return Err(FlowError::TrainingAborted {
                    step,
                    what,
                    last_good: Box::new(ck),
                });
            }
            Err(e) => return Err(e),
        };
        let norm = grad_norm(&grads);
        let before = (model.params.clone(), opt.clone());
        if let Err(ModelError::NonFinite(what)) = opt.step(&mut model.params, &grads) {
            model.params = before.0;
            opt = before.1;
            let ck = last_good(&model, &opt, &ema);
            if let Some(dir) = checkpoint_dir {
                write_checkpoint(&ck, &dir.join("last_good.dfck"))?;
            }
            return Err(FlowError::TrainingAborted {
                step,
                what,
                last_good: Box::new(ck),
            });
        }
        let decay = if cfg.ema_warmup {
            ema.warmup_decay(step as u64)
        } else {
            cfg.ema_decay
        };
        ema.update_with_decay(&model.params, decay);

        let entry = StepLog {
            step: step + 1,
            losses,
            grad_norm: norm,
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &entry).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        logs.push(entry);
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, checkpoint_dir) {
            if every > 0 && (step + 1) % every == 0 {
                let ck = snapshot(&model, &opt, &ema, step + 1, &meta);
                write_checkpoint(&ck, &dir.join(format!("step_{:06}.dfck", step + 1)))?;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&model, &opt, &ema, cfg.steps, &meta),
        logs,
    })
}
