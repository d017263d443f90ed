//! Euler integration of the learned field from noise (`t = 1`) to data
//! (`t = 0`) with classifier-free guidance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::autodiff::Mat;
use crate::model::{ConditioningBundle, Model};
use crate::repr::{DecodeDiagnostics, MotionSequence, Normalizer};
use crate::schema::SkeletonSchema;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    /// `v = v_uncond + w·(v_cond − v_uncond)`.
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            guidance_scale: 1.0,
            seed: 0,
        }
    }
}

/// Anything that predicts a velocity for stacked sequences.
pub trait VelocityField {
    fn velocity(
        &self,
        x: &Mat,
        seq_len: usize,
        conds: &[ConditioningBundle],
    ) -> Result<Mat, FlowError>;
}

impl VelocityField for Model {
    fn velocity(
        &self,
        x: &Mat,
        seq_len: usize,
        conds: &[ConditioningBundle],
    ) -> Result<Mat, FlowError> {
        Ok(self.forward_batch(x, seq_len, conds)?)
    }
}

fn guided(
    field: &dyn VelocityField,
    x: &Mat,
    seq_len: usize,
    conds: &[ConditioningBundle],
    w: f64,
) -> Result<Mat, FlowError> {
    let uncond =
        || -> Vec<ConditioningBundle> { conds.iter().map(|c| c.unconditional()).collect() };
    if w == 1.0 {
        return field.velocity(x, seq_len, conds);
    }
    if w == 0.0 {
        return field.velocity(x, seq_len, &uncond());
    }
    let vc = field.velocity(x, seq_len, conds)?;
    let vu = field.velocity(x, seq_len, &uncond())?;
    Ok(&vu + &((&vc - &vu) * w))
}

/// Integrates `x1` (stacked, normalized space) from `t = 1` to `t = 0` in
/// `steps` uniform Euler steps. Each condition's `t` is overwritten.
pub fn integrate(
    field: &dyn VelocityField,
    x1: Mat,
    seq_len: usize,
    conds: &[ConditioningBundle],
    steps: usize,
    guidance_scale: f64,
) -> Result<Mat, FlowError> {
    if steps == 0 {
        return Err(FlowError::Config("sampler needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x1;
    let mut step_conds = conds.to_vec();
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        for c in &mut step_conds {
            c.t = t;
        }
        let v = guided(field, &x, seq_len, &step_conds, guidance_scale)?;
        if v.dim() != x.dim() {
            return Err(FlowError::Shape(format!(
                "field returned {:?} for {:?}",
                v.dim(),
                x.dim()
            )));
        }
        x.scaled_add(-dt, &v);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(FlowError::NonFinite {
                step: k,
                what: "sampler state".into(),
            });
        }
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// Final normalized state.
    pub normalized: Mat,
    pub motion: MotionSequence,
    pub diagnostics: DecodeDiagnostics,
}

/// Draws one noise block per condition from a single seeded stream, then
/// integrates and decodes all of them.
pub fn sample_batch(
    field: &dyn VelocityField,
    conds: &[ConditioningBundle],
    frames: usize,
    sampler: &SamplerConfig,
    normalizer: &Normalizer,
    schema: &SkeletonSchema,
    fps: f64,
) -> Result<Vec<Sample>, FlowError> {
    if frames == 0 || conds.is_empty() {
        return Err(FlowError::Config(
            "need at least one frame and one condition".into(),
        ));
    }
    let dim = normalizer.dim(schema);
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let x1 = Mat::from_shape_fn((frames * conds.len(), dim), |_| {
        StandardNormal.sample(&mut rng)
    });
    let x0 = integrate(
        field,
        x1,
        frames,
        conds,
        sampler.steps,
        sampler.guidance_scale,
    )?;
    let mut out = Vec::with_capacity(conds.len());
    for (b, cond) in conds.iter().enumerate() {
        let block = x0
            .slice(ndarray::s![b * frames..(b + 1) * frames, ..])
            .to_owned();
        let decoded = normalizer.decode(&block, schema, fps)?;
        let mut motion = decoded.motion;
        motion.identity = cond.identity.clone();
        out.push(Sample {
            normalized: block,
            motion,
            diagnostics: decoded.diagnostics,
        });
    }
    Ok(out)
}

pub fn sample(
    field: &dyn VelocityField,
    cond: &ConditioningBundle,
    frames: usize,
    sampler: &SamplerConfig,
    normalizer: &Normalizer,
    schema: &SkeletonSchema,
    fps: f64,
) -> Result<Sample, FlowError> {
    Ok(sample_batch(
        field,
        std::slice::from_ref(cond),
        frames,
        sampler,
        normalizer,
        schema,
        fps,
    )?
    .remove(0))
}
