//! Continuous manifold encoding of native Euler poses and its inverse.
//!
//! Native frames follow the canonical ordering `[root 6 | global | locals]`.
//! Encoding keeps the 6 root channels, turns every 3-DoF joint into the first
//! two columns of its rotation matrix and every hinge into `(cos θ, sin θ)`.
//! Jaw channels are dropped and come back as zeros on decode.

mod norm;
mod rotation;

pub use norm::{
    denormalize, fit_norm_stats, normalize, NormStats, Normalizer, RepresentationMode, ZScoreStats,
    EPS_STD,
};
pub use rotation::{
    angle_to_sincos, axis_rotation, canonical_angle, euler_to_matrix, hinge_rotation, matrix_to_6d,
    matrix_to_euler, sincos_to_angle, sixd_to_matrix, wrap_angle, DegenerateInput, EPS_GS,
    GIMBAL_EPS,
};

use std::f64::consts::PI;

use nalgebra::Matrix3;
use ndarray::{Array2, ArrayView1, ArrayViewMut1};

use crate::schema::{Dof, JointGroup, SkeletonSchema, ROOT_CHANNELS};

/// Length of the identity (shape) vector.
pub const IDENTITY_DIM: usize = 68;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReprError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error(transparent)]
    Degenerate(#[from] DegenerateInput),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid motion: {0}")]
    InvalidMotion(String),
}

/// Native-space motion: `T × native_pose_dim` frames plus the identity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub schema_id: String,
    pub fps: f64,
    pub frames: Array2<f64>,
    pub identity: Vec<f64>,
}

impl MotionSequence {
    /// Checks frame count, widths and identity length against `schema`.
    pub fn new(
        schema: &SkeletonSchema,
        fps: f64,
        frames: Array2<f64>,
        identity: Vec<f64>,
    ) -> Result<Self, ReprError> {
        let m = MotionSequence {
            schema_id: schema.name().to_string(),
            fps,
            frames,
            identity,
        };
        m.check_dims(schema)?;
        Ok(m)
    }

    /// All-zero pose of `frames` frames.
    pub fn rest(schema: &SkeletonSchema, frames: usize, fps: f64) -> Self {
        MotionSequence {
            schema_id: schema.name().to_string(),
            fps,
            frames: Array2::zeros((frames, schema.native_pose_dim())),
            identity: vec![0.0; IDENTITY_DIM],
        }
    }

    /// Zero rotations with the root lifted so the feet rest on the ground.
    pub fn standing(schema: &SkeletonSchema, frames: usize, fps: f64) -> Self {
        let mut m = Self::rest(schema, frames, fps);
        let up = schema.up_axis().index();
        m.frames.column_mut(up).fill(schema.standing_height());
        m
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn check_dims(&self, schema: &SkeletonSchema) -> Result<(), ReprError> {
        if self.frames.nrows() == 0 {
            return Err(ReprError::Dimension("motion has no frames".into()));
        }
        if self.frames.ncols() != schema.native_pose_dim() {
            return Err(ReprError::Dimension(format!(
                "motion has {} columns, schema `{}` expects {}",
                self.frames.ncols(),
                schema.name(),
                schema.native_pose_dim()
            )));
        }
        if self.identity.len() != IDENTITY_DIM {
            return Err(ReprError::Dimension(format!(
                "identity has {} entries, expected {IDENTITY_DIM}",
                self.identity.len()
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(ReprError::InvalidMotion(format!(
                "fps {} is not positive",
                self.fps
            )));
        }
        Ok(())
    }

    /// Full invariant check: dimensions, finiteness, zero jaw, angle range.
    pub fn validate(&self, schema: &SkeletonSchema) -> Result<(), ReprError> {
        self.check_dims(schema)?;
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(ReprError::InvalidMotion("non-finite frame entry".into()));
        }
        let jaw = schema.jaw_native_dims();
        for (t, row) in self.frames.rows().into_iter().enumerate() {
            if jaw.iter().any(|&d| row[d] != 0.0) {
                return Err(ReprError::InvalidMotion(format!(
                    "frame {t}: jaw channel is not zero"
                )));
            }
            for d in ROOT_CHANNELS..row.len() {
                if !(row[d] > -PI && row[d] <= PI) {
                    return Err(ReprError::InvalidMotion(format!(
                        "frame {t}, dim {d}: angle {} outside (-pi, pi]",
                        row[d]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Manifold-encoded motion, `T × continuous_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousMotion {
    pub schema_id: String,
    pub fps: f64,
    pub frames: Array2<f64>,
    pub normalized: bool,
}

impl ContinuousMotion {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }
}

/// Per-decode bookkeeping: how many blocks needed the fallback.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodeDiagnostics {
    /// Degenerate 6D blocks or sin-cos pairs, per frame.
    pub degenerate_per_frame: Vec<usize>,
    /// Gimbal-locked Euler extractions, per frame.
    pub gimbal_per_frame: Vec<usize>,
}

impl DecodeDiagnostics {
    pub fn degenerate_total(&self) -> usize {
        self.degenerate_per_frame.iter().sum()
    }

    pub fn projection_applied(&self) -> bool {
        self.degenerate_total() > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub motion: MotionSequence,
    pub diagnostics: DecodeDiagnostics,
}

/// Encodes one native frame into `out` (length `continuous_dim`).
pub fn encode_frame(schema: &SkeletonSchema, native: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
    for d in 0..ROOT_CHANNELS {
        out[d] = native[d];
    }
    for slot in schema.slots() {
        let Some(cont) = &slot.continuous else {
            continue;
        };
        let joint = &schema.joints()[slot.joint];
        let n = slot.native.start;
        let c = cont.start;
        match joint.dof {
            Dof::Three => {
                let r = euler_to_matrix(
                    [native[n], native[n + 1], native[n + 2]],
                    joint.rotation_order,
                );
                for (k, v) in matrix_to_6d(&r).into_iter().enumerate() {
                    out[c + k] = v;
                }
            }
            Dof::One { .. } => {
                let (cs, sn) = angle_to_sincos(native[n]);
                out[c] = cs;
                out[c + 1] = sn;
            }
        }
    }
}

/// Native motion to (unnormalized) continuous motion.
pub fn encode_sequence(
    m: &MotionSequence,
    schema: &SkeletonSchema,
) -> Result<ContinuousMotion, ReprError> {
    m.check_dims(schema)?;
    let mut frames = Array2::zeros((m.len(), schema.continuous_dim()));
    for (src, dst) in m.frames.rows().into_iter().zip(frames.rows_mut()) {
        encode_frame(schema, src, dst);
    }
    Ok(ContinuousMotion {
        schema_id: m.schema_id.clone(),
        fps: m.fps,
        frames,
        normalized: false,
    })
}

/// Rotation matrix of one joint from its continuous block. Degenerate blocks
/// fall back to the identity rotation and report `true`.
pub fn joint_rotation(
    schema: &SkeletonSchema,
    joint: usize,
    row: ArrayView1<f64>,
) -> (Matrix3<f64>, bool) {
    let slot = schema.slot(joint);
    let Some(cont) = &slot.continuous else {
        return (Matrix3::identity(), false);
    };
    let c = cont.start;
    match schema.joints()[joint].dof {
        Dof::Three => {
            let v = [
                row[c],
                row[c + 1],
                row[c + 2],
                row[c + 3],
                row[c + 4],
                row[c + 5],
            ];
            match sixd_to_matrix(&v) {
                Ok(r) => (r, false),
                Err(_) => (Matrix3::identity(), true),
            }
        }
        Dof::One { axis } => {
            let norm = row[c].hypot(row[c + 1]);
            if norm >= EPS_GS {
                (
                    hinge_rotation(&axis, row[c] / norm, row[c + 1] / norm),
                    false,
                )
            } else {
                (Matrix3::identity(), true)
            }
        }
    }
}

/// Continuous motion (unnormalized) back to native Euler space.
///
/// Off-manifold blocks are projected by Gram-Schmidt; blocks too short to
/// carry a rotation decode to the identity / zero angle and are counted in
/// the diagnostics instead of failing the sequence.
pub fn decode_sequence(
    c: &ContinuousMotion,
    schema: &SkeletonSchema,
) -> Result<Decoded, ReprError> {
    if c.normalized {
        return Err(ReprError::InvalidMotion(
            "decode expects an unnormalized motion; call denormalize first".into(),
        ));
    }
    if c.frames.ncols() != schema.continuous_dim() || c.frames.nrows() == 0 {
        return Err(ReprError::Dimension(format!(
            "continuous motion is {}x{}, schema `{}` expects T x {}",
            c.frames.nrows(),
            c.frames.ncols(),
            schema.name(),
            schema.continuous_dim()
        )));
    }
    let t = c.len();
    let mut frames = Array2::zeros((t, schema.native_pose_dim()));
    let mut diagnostics = DecodeDiagnostics {
        degenerate_per_frame: vec![0; t],
        gimbal_per_frame: vec![0; t],
    };
    for (f, (src, mut dst)) in c
        .frames
        .rows()
        .into_iter()
        .zip(frames.rows_mut())
        .enumerate()
    {
        for d in 0..ROOT_CHANNELS {
            dst[d] = if src[d].is_finite() { src[d] } else { 0.0 };
        }
        for slot in schema.slots() {
            let joint = &schema.joints()[slot.joint];
            if joint.group == JointGroup::Jaw {
                continue;
            }
            let cont = slot
                .continuous
                .as_ref()
                .expect("non-jaw joints are encoded");
            let n = slot.native.start;
            match joint.dof {
                Dof::Three => {
                    let v = [
                        src[cont.start],
                        src[cont.start + 1],
                        src[cont.start + 2],
                        src[cont.start + 3],
                        src[cont.start + 4],
                        src[cont.start + 5],
                    ];
                    let r = match sixd_to_matrix(&v) {
                        Ok(r) => r,
                        Err(_) => {
                            diagnostics.degenerate_per_frame[f] += 1;
                            Matrix3::identity()
                        }
                    };
                    let (angles, locked) = matrix_to_euler(&r, joint.rotation_order);
                    if locked {
                        diagnostics.gimbal_per_frame[f] += 1;
                    }
                    for k in 0..3 {
                        dst[n + k] = canonical_angle(angles[k]);
                    }
                }
                Dof::One { .. } => {
                    let (theta, degenerate) = sincos_to_angle(src[cont.start], src[cont.start + 1]);
                    if degenerate {
                        diagnostics.degenerate_per_frame[f] += 1;
                    }
                    dst[n] = theta;
                }
            }
        }
    }
    Ok(Decoded {
        motion: MotionSequence {
            schema_id: c.schema_id.clone(),
            fps: c.fps,
            frames,
            identity: vec![0.0; IDENTITY_DIM],
        },
        diagnostics,
    })
}
