//! Hybrid normalization and the per-dimension z-score ablation.
//!
//! Rotation-derived dims are divided by one pooled standard deviation and are
//! never mean-shifted, so 6D columns and sin-cos pairs keep their direction.
//! Only the 6 root channels are z-scored per dimension.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    decode_sequence, encode_sequence, ContinuousMotion, Decoded, MotionSequence, ReprError,
};
use crate::schema::{dim_layout, DimLayout, SkeletonSchema, Space, ROOT_CHANNELS};

/// Floor applied to every fitted standard deviation.
pub const EPS_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub sigma_rot: f64,
    pub trans_mean: [f64; ROOT_CHANNELS],
    pub trans_std: [f64; ROOT_CHANNELS],
    pub frame_count: usize,
}

impl NormStats {
    /// Stats for which `normalize` is the identity map.
    pub fn identity() -> Self {
        NormStats {
            sigma_rot: 1.0,
            trans_mean: [0.0; ROOT_CHANNELS],
            trans_std: [1.0; ROOT_CHANNELS],
            frame_count: 0,
        }
    }
}

/// Pools `sigma_rot` over every rotation dim and frame with mean 0, and fits
/// per-dimension mean / std on the root channels. Population divisor.
pub fn fit_norm_stats(dataset: &[ContinuousMotion]) -> Result<NormStats, ReprError> {
    let frames: usize = dataset.iter().map(|c| c.len()).sum();
    if frames < 2 {
        return Err(ReprError::EmptyDataset(format!(
            "need at least 2 frames, got {frames}"
        )));
    }
    let dim = dataset[0].frames.ncols();
    if dim <= ROOT_CHANNELS
        || dataset
            .iter()
            .any(|c| c.frames.ncols() != dim || c.normalized)
    {
        return Err(ReprError::Dimension(
            "dataset motions must share one unnormalized continuous width".into(),
        ));
    }

    let mut sum_sq_rot = 0.0;
    let mut sum = [0.0; ROOT_CHANNELS];
    for c in dataset {
        for row in c.frames.rows() {
            for d in 0..ROOT_CHANNELS {
                sum[d] += row[d];
            }
            sum_sq_rot += row.iter().skip(ROOT_CHANNELS).map(|v| v * v).sum::<f64>();
        }
    }
    let n = frames as f64;
    let trans_mean = sum.map(|s| s / n);
    let mut var = [0.0; ROOT_CHANNELS];
    for c in dataset {
        for row in c.frames.rows() {
            for d in 0..ROOT_CHANNELS {
                var[d] += (row[d] - trans_mean[d]).powi(2);
            }
        }
    }
    let rot_count = n * (dim - ROOT_CHANNELS) as f64;
    Ok(NormStats {
        sigma_rot: (sum_sq_rot / rot_count).sqrt().max(EPS_STD),
        trans_mean,
        trans_std: var.map(|v| (v / n).sqrt().max(EPS_STD)),
        frame_count: frames,
    })
}

fn check_width(c: &ContinuousMotion) -> Result<(), ReprError> {
    if c.frames.ncols() <= ROOT_CHANNELS {
        return Err(ReprError::Dimension(format!(
            "continuous width {} has no rotation dims",
            c.frames.ncols()
        )));
    }
    Ok(())
}

pub fn normalize(c: &ContinuousMotion, stats: &NormStats) -> Result<ContinuousMotion, ReprError> {
    check_width(c)?;
    if c.normalized {
        return Err(ReprError::InvalidMotion(
            "motion is already normalized".into(),
        ));
    }
    let mut out = c.clone();
    for mut row in out.frames.rows_mut() {
        for d in 0..ROOT_CHANNELS {
            row[d] = (row[d] - stats.trans_mean[d]) / stats.trans_std[d];
        }
        for v in row.iter_mut().skip(ROOT_CHANNELS) {
            *v /= stats.sigma_rot;
        }
    }
    out.normalized = true;
    Ok(out)
}

pub fn denormalize(c: &ContinuousMotion, stats: &NormStats) -> Result<ContinuousMotion, ReprError> {
    check_width(c)?;
    if !c.normalized {
        return Err(ReprError::InvalidMotion("motion is not normalized".into()));
    }
    let mut out = c.clone();
    for mut row in out.frames.rows_mut() {
        for d in 0..ROOT_CHANNELS {
            row[d] = row[d] * stats.trans_std[d] + stats.trans_mean[d];
        }
        for v in row.iter_mut().skip(ROOT_CHANNELS) {
            *v *= stats.sigma_rot;
        }
    }
    out.normalized = false;
    Ok(out)
}

/// Per-dimension z-score over raw native frames (the ablation baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub frame_count: usize,
}

impl ZScoreStats {
    pub fn fit(motions: &[MotionSequence]) -> Result<Self, ReprError> {
        let frames: usize = motions.iter().map(|m| m.len()).sum();
        if frames < 2 {
            return Err(ReprError::EmptyDataset(format!(
                "need at least 2 frames, got {frames}"
            )));
        }
        let dim = motions[0].frames.ncols();
        if motions.iter().any(|m| m.frames.ncols() != dim) {
            return Err(ReprError::Dimension("motions differ in width".into()));
        }
        let n = frames as f64;
        let mut mean = vec![0.0; dim];
        for m in motions {
            for row in m.frames.rows() {
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; dim];
        for m in motions {
            for row in m.frames.rows() {
                for d in 0..dim {
                    var[d] += (row[d] - mean[d]).powi(2);
                }
            }
        }
        Ok(ZScoreStats {
            mean,
            std: var
                .into_iter()
                .map(|v| (v / n).sqrt().max(EPS_STD))
                .collect(),
            frame_count: frames,
        })
    }
}

/// Which space the generator works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationMode {
    /// 6D / sin-cos encoding with hybrid normalization.
    #[default]
    Continuous,
    /// Raw native Euler frames, per-dimension z-score.
    #[serde(rename = "zscore136")]
    ZScore136,
}

impl std::str::FromStr for RepresentationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(RepresentationMode::Continuous),
            "zscore136" => Ok(RepresentationMode::ZScore136),
            other => Err(format!("unknown representation `{other}`")),
        }
    }
}

/// Fitted statistics together with the representation they belong to; maps
/// native motions into the generator's normalized space and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Normalizer {
    Hybrid(NormStats),
    #[serde(rename = "zscore136")]
    ZScore(ZScoreStats),
}

impl Normalizer {
    pub fn fit(
        mode: RepresentationMode,
        motions: &[MotionSequence],
        schema: &SkeletonSchema,
    ) -> Result<Self, ReprError> {
        match mode {
            RepresentationMode::Continuous => {
                let encoded = motions
                    .iter()
                    .map(|m| encode_sequence(m, schema))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Normalizer::Hybrid(fit_norm_stats(&encoded)?))
            }
            RepresentationMode::ZScore136 => {
                for m in motions {
                    m.check_dims(schema)?;
                }
                Ok(Normalizer::ZScore(ZScoreStats::fit(motions)?))
            }
        }
    }

    pub fn mode(&self) -> RepresentationMode {
        match self {
            Normalizer::Hybrid(_) => RepresentationMode::Continuous,
            Normalizer::ZScore(_) => RepresentationMode::ZScore136,
        }
    }

    pub fn dim(&self, schema: &SkeletonSchema) -> usize {
        match self {
            Normalizer::Hybrid(_) => schema.continuous_dim(),
            Normalizer::ZScore(_) => schema.native_pose_dim(),
        }
    }

    pub fn layout(&self, schema: &SkeletonSchema) -> DimLayout {
        match self {
            Normalizer::Hybrid(_) => dim_layout(schema, Space::Continuous),
            Normalizer::ZScore(_) => dim_layout(schema, Space::Native),
        }
    }

    /// Per-dim `(scale, offset)` with `raw = normalized · scale + offset`.
    pub fn affine(&self, schema: &SkeletonSchema) -> (Vec<f64>, Vec<f64>) {
        match self {
            Normalizer::Hybrid(stats) => {
                let dim = schema.continuous_dim();
                let mut scale = vec![stats.sigma_rot; dim];
                let mut offset = vec![0.0; dim];
                for d in 0..ROOT_CHANNELS {
                    scale[d] = stats.trans_std[d];
                    offset[d] = stats.trans_mean[d];
                }
                (scale, offset)
            }
            Normalizer::ZScore(stats) => (stats.std.clone(), stats.mean.clone()),
        }
    }

    /// Native motion to normalized generator-space frames.
    pub fn encode(
        &self,
        m: &MotionSequence,
        schema: &SkeletonSchema,
    ) -> Result<Array2<f64>, ReprError> {
        match self {
            Normalizer::Hybrid(stats) => Ok(normalize(&encode_sequence(m, schema)?, stats)?.frames),
            Normalizer::ZScore(stats) => {
                m.check_dims(schema)?;
                if stats.mean.len() != m.frames.ncols() {
                    return Err(ReprError::Dimension("z-score stats width mismatch".into()));
                }
                let mut out = m.frames.clone();
                for mut row in out.rows_mut() {
                    for (d, v) in row.iter_mut().enumerate() {
                        *v = (*v - stats.mean[d]) / stats.std[d];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Normalized generator-space frames back to a native motion.
    pub fn decode(
        &self,
        frames: &Array2<f64>,
        schema: &SkeletonSchema,
        fps: f64,
    ) -> Result<Decoded, ReprError> {
        match self {
            Normalizer::Hybrid(stats) => {
                let c = ContinuousMotion {
                    schema_id: schema.name().to_string(),
                    fps,
                    frames: frames.clone(),
                    normalized: true,
                };
                decode_sequence(&denormalize(&c, stats)?, schema)
            }
            Normalizer::ZScore(stats) => {
                if frames.ncols() != stats.mean.len() || frames.ncols() != schema.native_pose_dim()
                {
                    return Err(ReprError::Dimension("z-score frame width mismatch".into()));
                }
                let jaw = schema.jaw_native_dims();
                let mut native = frames.clone();
                let mut degenerate = vec![0; frames.nrows()];
                for (t, mut row) in native.rows_mut().into_iter().enumerate() {
                    for (d, v) in row.iter_mut().enumerate() {
                        let raw = *v * stats.std[d] + stats.mean[d];
                        *v = if !raw.is_finite() {
                            degenerate[t] += 1;
                            0.0
                        } else if jaw.contains(&d) {
                            0.0
                        } else if d >= ROOT_CHANNELS {
                            super::wrap_angle(raw)
                        } else {
                            raw
                        };
                    }
                }
                let t = native.nrows();
                Ok(Decoded {
                    motion: MotionSequence {
                        schema_id: schema.name().to_string(),
                        fps,
                        frames: native,
                        identity: vec![0.0; super::IDENTITY_DIM],
                    },
                    diagnostics: super::DecodeDiagnostics {
                        degenerate_per_frame: degenerate,
                        gimbal_per_frame: vec![0; t],
                    },
                })
            }
        }
    }
}
