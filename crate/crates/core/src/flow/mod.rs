//! Flow-matching objective on the linear path `x_t = (1 − t)·x̄0 + t·x1`.
//!
//! The network predicts the constant velocity `x1 − x̄0`. Training combines
//! an anatomy-weighted velocity MSE, an `x̂0 = x_t − t·v̂` reconstruction
//! term, velocity/acceleration smoothing on `x̂0`, and forward-kinematics
//! losses on the denormalized `x̂0`.

mod sampler;
mod train;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, Var};
use crate::kinematics::{
    contact_rows, detect_contacts, fk_graph, fk_graph_native, fk_loss_graph, ContactMask,
    ContactThresholds, FkWeights, JointPositions,
};
use crate::model::{ConditioningBundle, Model, ModelError, ParamVars};
use crate::repr::{MotionSequence, Normalizer, ReprError, RepresentationMode};
use crate::schema::{DimLayout, SkeletonSchema};

pub use sampler::{integrate, sample, sample_batch, Sample, SamplerConfig, VelocityField};
pub use train::{train_loop, StepLog, TrainConfig, TrainOutcome};

/// Lower bound of the training timestep distribution.
pub const T_MIN: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("training aborted at step {step}: {what}")]
    TrainingAborted {
        step: usize,
        what: String,
        last_good: Box<crate::model::Checkpoint>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Checkpoint(#[from] crate::model::CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where the root-translation dims go in the velocity loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RootGroup {
    #[default]
    Body,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_rot: f64,
    pub lambda_body: f64,
    pub lambda_hand: f64,
    pub lambda_x0: f64,
    pub lambda_v: f64,
    pub lambda_a: f64,
    /// Multiplier on the whole kinematic term.
    pub lambda_fk: f64,
    pub fk: FkWeights,
    pub root_group: RootGroup,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rot: 1.0,
            lambda_body: 1.5,
            lambda_hand: 0.5,
            lambda_x0: 2.0,
            lambda_v: 0.5,
            lambda_a: 1.5,
            lambda_fk: 1.0,
            fk: FkWeights::default(),
            root_group: RootGroup::Body,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda_rot: 0.0,
            lambda_body: 0.0,
            lambda_hand: 0.0,
            lambda_x0: 0.0,
            lambda_v: 0.0,
            lambda_a: 0.0,
            lambda_fk: 0.0,
            fk: FkWeights::default(),
            root_group: RootGroup::Body,
        }
    }
}

/// Column sets of the three velocity groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VelocityGroups {
    pub rot: Vec<usize>,
    pub body: Vec<usize>,
    pub hand: Vec<usize>,
}

impl VelocityGroups {
    /// Jaw dims (native space only) join the body group.
    pub fn new(layout: &DimLayout, root: RootGroup) -> Result<Self, FlowError> {
        let mut rot = layout.global_rotation.clone();
        let mut body = layout.body_rotation.clone();
        body.extend(&layout.jaw);
        match root {
            RootGroup::Body => body.extend(&layout.root_translation),
            RootGroup::Global => rot.extend(&layout.root_translation),
        }
        let hand = layout.hand_rotation.clone();
        let mut seen = vec![0u8; layout.dim];
        for &d in rot.iter().chain(&body).chain(&hand) {
            if d >= layout.dim {
                return Err(FlowError::Layout(format!(
                    "dim {d} outside width {}",
                    layout.dim
                )));
            }
            seen[d] += 1;
        }
        if let Some(d) = seen.iter().position(|&c| c != 1) {
            return Err(FlowError::Layout(format!(
                "dim {d} is covered {} times",
                seen[d]
            )));
        }
        rot.sort_unstable();
        body.sort_unstable();
        Ok(VelocityGroups { rot, body, hand })
    }
}

pub fn interpolate(x0: &Mat, x1: &Mat, t: f64) -> Result<Mat, FlowError> {
    if x0.dim() != x1.dim() {
        return Err(FlowError::Shape(format!(
            "{:?} vs {:?}",
            x0.dim(),
            x1.dim()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::Shape(format!("t = {t} outside [0, 1]")));
    }
    Ok(interpolate_unchecked(x0, x1, t))
}

fn interpolate_unchecked(x0: &Mat, x1: &Mat, t: f64) -> Mat {
    let mut out = x0.clone();
    ndarray::Zip::from(&mut out)
        .and(x1)
        .for_each(|a, &b| *a = (1.0 - t) * *a + t * b);
    out
}

/// Weighted group terms and their sum, all `1 × 1`.
#[derive(Debug, Clone, Copy)]
pub struct VelocityTerms {
    pub rot: Var,
    pub body: Var,
    pub hand: Var,
    pub total: Var,
}

fn group_mse(g: &mut Graph, a: Var, b: Var, cols: &[usize]) -> Var {
    if cols.is_empty() {
        return g.constant(Mat::zeros((1, 1)));
    }
    let pa = g.permute_cols(a, cols);
    let pb = g.permute_cols(b, cols);
    g.mse(pa, pb)
}

pub fn anatomy_velocity_loss_graph(
    g: &mut Graph,
    v_hat: Var,
    v_target: Var,
    groups: &VelocityGroups,
    w: &LossWeights,
) -> VelocityTerms {
    let rot = group_mse(g, v_hat, v_target, &groups.rot);
    let body = group_mse(g, v_hat, v_target, &groups.body);
    let hand = group_mse(g, v_hat, v_target, &groups.hand);
    let rot = g.scale(rot, w.lambda_rot);
    let body = g.scale(body, w.lambda_body);
    let hand = g.scale(hand, w.lambda_hand);
    let s = g.add(rot, body);
    let total = g.add(s, hand);
    VelocityTerms {
        rot,
        body,
        hand,
        total,
    }
}

/// Per-group values: weighted terms, unweighted means and raw squared sums.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct VelocityBreakdown {
    pub rot: f64,
    pub body: f64,
    pub hand: f64,
    pub rot_mse: f64,
    pub body_mse: f64,
    pub hand_mse: f64,
    pub rot_sum: f64,
    pub body_sum: f64,
    pub hand_sum: f64,
}

pub fn anatomy_velocity_loss(
    v_hat: &Mat,
    v_target: &Mat,
    layout: &DimLayout,
    w: &LossWeights,
) -> Result<(f64, VelocityBreakdown), FlowError> {
    if v_hat.dim() != v_target.dim() || v_hat.ncols() != layout.dim {
        return Err(FlowError::Shape(format!(
            "{:?} vs {:?} for layout width {}",
            v_hat.dim(),
            v_target.dim(),
            layout.dim
        )));
    }
    let groups = VelocityGroups::new(layout, w.root_group)?;
    let mut g = Graph::new();
    let a = g.constant(v_hat.clone());
    let b = g.constant(v_target.clone());
    let terms = anatomy_velocity_loss_graph(&mut g, a, b, &groups, w);
    let sum = |cols: &[usize]| {
        cols.iter()
            .map(|&c| {
                v_hat
                    .column(c)
                    .iter()
                    .zip(v_target.column(c))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
    };
    let mean = |cols: &[usize]| {
        if cols.is_empty() {
            0.0
        } else {
            sum(cols) / (cols.len() * v_hat.nrows()) as f64
        }
    };
    let b = VelocityBreakdown {
        rot: g.scalar(terms.rot),
        body: g.scalar(terms.body),
        hand: g.scalar(terms.hand),
        rot_mse: mean(&groups.rot),
        body_mse: mean(&groups.body),
        hand_mse: mean(&groups.hand),
        rot_sum: sum(&groups.rot),
        body_sum: sum(&groups.body),
        hand_sum: sum(&groups.hand),
    };
    Ok((g.scalar(terms.total), b))
}

#[derive(Debug, Clone, Copy)]
pub struct ReconstructionTerms {
    pub x0_hat: Var,
    pub x0: Var,
    pub smooth_v: Var,
    pub smooth_a: Var,
    pub smooth: Var,
}

/// `x̂0 = x_t − t·v̂` on stacked sequences; `t_rows` holds each row's t.
pub fn reconstruction_and_smoothing_graph(
    g: &mut Graph,
    x_t: Var,
    t_rows: &[f64],
    v_hat: Var,
    x0: Var,
    seq_len: usize,
    w: &LossWeights,
) -> ReconstructionTerms {
    let tcol = g.constant(Mat::from_shape_vec((t_rows.len(), 1), t_rows.to_vec()).expect("column"));
    let tv = g.mul_col(v_hat, tcol);
    let x0_hat = g.sub(x_t, tv);
    let rec = g.mse(x0_hat, x0);
    let rec = g.scale(rec, w.lambda_x0);
    let zero = || Mat::zeros((1, 1));
    let (smooth_v, smooth_a) = if seq_len >= 2 {
        let dh = g.frame_diff(x0_hat, seq_len);
        let dt = g.frame_diff(x0, seq_len);
        let sv = g.mse(dh, dt);
        let sv = g.scale(sv, w.lambda_v);
        let sa = if seq_len >= 3 {
            let ah = g.frame_diff(dh, seq_len - 1);
            let at = g.frame_diff(dt, seq_len - 1);
            let sa = g.mse(ah, at);
            g.scale(sa, w.lambda_a)
        } else {
            g.constant(zero())
        };
        (sv, sa)
    } else {
        (g.constant(zero()), g.constant(zero()))
    };
    let smooth = g.add(smooth_v, smooth_a);
    ReconstructionTerms {
        x0_hat,
        x0: rec,
        smooth_v,
        smooth_a,
        smooth,
    }
}

/// Single-sequence `(L_x0, L_smooth)`.
pub fn reconstruction_and_smoothing(
    x_t: &Mat,
    t: f64,
    v_hat: &Mat,
    x0: &Mat,
    w: &LossWeights,
) -> Result<(f64, f64), FlowError> {
    if x_t.dim() != v_hat.dim() || x_t.dim() != x0.dim() {
        return Err(FlowError::Shape("x_t, v̂ and x̄0 must share a shape".into()));
    }
    let mut g = Graph::new();
    let (a, b, c) = (
        g.constant(x_t.clone()),
        g.constant(v_hat.clone()),
        g.constant(x0.clone()),
    );
    let r =
        reconstruction_and_smoothing_graph(&mut g, a, &vec![t; x_t.nrows()], b, c, x_t.nrows(), w);
    Ok((g.scalar(r.x0), g.scalar(r.smooth)))
}

/// Everything the loss needs besides the model and the batch.
#[derive(Debug, Clone)]
pub struct FlowContext {
    pub schema: SkeletonSchema,
    pub normalizer: Normalizer,
    pub weights: LossWeights,
    pub contact: ContactThresholds,
    pub groups: VelocityGroups,
    scale: Mat,
    offset: Mat,
}

impl FlowContext {
    pub fn new(
        schema: SkeletonSchema,
        normalizer: Normalizer,
        weights: LossWeights,
    ) -> Result<Self, FlowError> {
        let groups = VelocityGroups::new(&normalizer.layout(&schema), weights.root_group)?;
        let (scale, offset) = normalizer.affine(&schema);
        let row = |v: Vec<f64>| Mat::from_shape_vec((1, v.len()), v).expect("row");
        Ok(FlowContext {
            schema,
            weights,
            contact: ContactThresholds::default(),
            groups,
            scale: row(scale),
            offset: row(offset),
            normalizer,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.ncols()
    }

    fn fk(&self, g: &mut Graph, x_norm: Var) -> Var {
        let s = g.constant(self.scale.clone());
        let o = g.constant(self.offset.clone());
        let raw = g.mul_row(x_norm, s);
        let raw = g.add_row(raw, o);
        match self.normalizer.mode() {
            RepresentationMode::Continuous => fk_graph(g, raw, &self.schema),
            RepresentationMode::ZScore136 => fk_graph_native(g, raw, &self.schema),
        }
    }

    /// Joint positions (`T × 3J`) of normalized frames.
    pub fn positions(&self, x_norm: &Mat) -> Mat {
        let mut g = Graph::new();
        let x = g.constant(x_norm.clone());
        let p = self.fk(&mut g, x);
        g.value(p).clone()
    }
}

/// One training sequence in normalized generator space.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub frames: Mat,
    pub tokens: Vec<u32>,
    pub identity: Vec<f64>,
    pub positions: Mat,
    pub contacts: ContactMask,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub fps: f64,
    pub examples: Vec<TrainExample>,
}

impl TrainingSet {
    pub fn new(ctx: &FlowContext, items: &[(MotionSequence, Vec<u32>)]) -> Result<Self, FlowError> {
        if items.is_empty() {
            return Err(FlowError::Config("empty dataset".into()));
        }
        let fps = items[0].0.fps;
        let mut examples = Vec::with_capacity(items.len());
        for (m, tokens) in items {
            let frames = ctx.normalizer.encode(m, &ctx.schema)?;
            let positions = ctx.positions(&frames);
            let jp = JointPositions::from_rows(ctx.schema.name(), m.fps, &positions);
            let contacts = detect_contacts(&jp, &ctx.schema, ctx.contact);
            examples.push(TrainExample {
                frames,
                tokens: tokens.clone(),
                identity: m.identity.clone(),
                positions,
                contacts,
            });
        }
        Ok(TrainingSet { fps, examples })
    }

    pub fn min_len(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.frames.nrows())
            .min()
            .unwrap_or(0)
    }
}

/// A fully drawn batch: data, noise, timesteps and conditions.
#[derive(Debug, Clone)]
pub struct FlowBatch {
    pub seq_len: usize,
    pub x0: Mat,
    pub x1: Mat,
    pub t: Vec<f64>,
    pub conds: Vec<ConditioningBundle>,
    pub positions: Mat,
    pub contact: Mat,
}

fn stack(parts: &[Mat]) -> Mat {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
}

impl FlowBatch {
    /// Draws crops of `seq_len` frames, noise, `t ~ U[T_MIN, 1)` and the
    /// joint condition drop for each chosen example.
    pub fn draw(
        set: &TrainingSet,
        indices: &[usize],
        seq_len: usize,
        cond_drop_prob: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, FlowError> {
        let (mut x0, mut x1, mut pos, mut masks) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut ts, mut conds) = (Vec::new(), Vec::new());
        for &i in indices {
            let e = &set.examples[i];
            let len = e.frames.nrows();
            if len < seq_len {
                return Err(FlowError::Shape(format!(
                    "example {i} has {len} frames, crop needs {seq_len}"
                )));
            }
            let start = if len == seq_len {
                0
            } else {
                rng.random_range(0..=len - seq_len)
            };
            let range = start..start + seq_len;
            x0.push(e.frames.slice(ndarray::s![range.clone(), ..]).to_owned());
            pos.push(e.positions.slice(ndarray::s![range.clone(), ..]).to_owned());
            masks.push(ContactMask {
                mask: e.contacts.mask.slice(ndarray::s![range, ..]).to_owned(),
            });
            x1.push(Mat::from_shape_fn((seq_len, e.frames.ncols()), |_| {
                StandardNormal.sample(rng)
            }));
            let t = rng.random_range(T_MIN..1.0);
            let drop = rng.random::<f64>() < cond_drop_prob;
            ts.push(t);
            conds.push(ConditioningBundle {
                tokens: e.tokens.clone(),
                identity: e.identity.clone(),
                t,
                drop_text: drop,
                drop_identity: drop,
            });
        }
        let mask_refs: Vec<&ContactMask> = masks.iter().collect();
        Ok(FlowBatch {
            seq_len,
            x0: stack(&x0),
            x1: stack(&x1),
            t: ts,
            conds,
            positions: stack(&pos),
            contact: contact_rows(&mask_refs),
        })
    }

    pub fn x_t(&self) -> Mat {
        let mut out = self.x0.clone();
        for (b, &t) in self.t.iter().enumerate() {
            let rows = b * self.seq_len..(b + 1) * self.seq_len;
            let x1 = self.x1.slice(ndarray::s![rows.clone(), ..]);
            let mut blk = out.slice_mut(ndarray::s![rows, ..]);
            ndarray::Zip::from(&mut blk)
                .and(&x1)
                .for_each(|a, &b| *a = (1.0 - t) * *a + t * b);
        }
        out
    }

    pub fn target_velocity(&self) -> Mat {
        &self.x1 - &self.x0
    }

    fn t_rows(&self) -> Vec<f64> {
        self.t
            .iter()
            .flat_map(|&t| std::iter::repeat_n(t, self.seq_len))
            .collect()
    }
}

/// Graph handles of every loss component.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub velocity: VelocityTerms,
    pub reconstruction: ReconstructionTerms,
    pub fk_pos: Var,
    pub fk_linvel: Var,
    pub fk_contact: Var,
    pub fk: Var,
    pub total: Var,
}

impl LossTerms {
    pub fn components(&self, g: &Graph) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("vel", self.velocity.total),
            ("vel_rot", self.velocity.rot),
            ("vel_body", self.velocity.body),
            ("vel_hand", self.velocity.hand),
            ("x0", self.reconstruction.x0),
            ("smooth", self.reconstruction.smooth),
            ("smooth_v", self.reconstruction.smooth_v),
            ("smooth_a", self.reconstruction.smooth_a),
            ("fk", self.fk),
            ("fk_pos", self.fk_pos),
            ("fk_linvel", self.fk_linvel),
            ("fk_contact", self.fk_contact),
            ("total", self.total),
        ] {
            m.insert(k.to_string(), g.scalar(v));
        }
        m
    }
}

/// Loss of a given velocity prediction `v_hat` (stacked, normalized space).
pub fn total_loss_from_velocity(
    g: &mut Graph,
    v_hat: Var,
    batch: &FlowBatch,
    ctx: &FlowContext,
) -> LossTerms {
    let w = &ctx.weights;
    let target = g.constant(batch.target_velocity());
    let velocity = anatomy_velocity_loss_graph(g, v_hat, target, &ctx.groups, w);
    let x_t = g.constant(batch.x_t());
    let x0 = g.constant(batch.x0.clone());
    let reconstruction =
        reconstruction_and_smoothing_graph(g, x_t, &batch.t_rows(), v_hat, x0, batch.seq_len, w);
    let (fk_pos, fk_linvel, fk_contact, fk) = if w.lambda_fk != 0.0 {
        let pred = ctx.fk(g, reconstruction.x0_hat);
        let terms = fk_loss_graph(
            g,
            pred,
            &batch.positions,
            batch.seq_len,
            ctx.schema.feet(),
            &batch.contact,
            w.fk,
        );
        let fk = g.scale(terms.total, w.lambda_fk);
        let s = |g: &mut Graph, v: Var| g.scale(v, w.lambda_fk);
        (s(g, terms.pos), s(g, terms.linvel), s(g, terms.contact), fk)
    } else {
        let z = g.constant(Mat::zeros((1, 1)));
        (z, z, z, z)
    };
    let a = g.add(velocity.total, reconstruction.x0);
    let b = g.add(a, reconstruction.smooth);
    let total = g.add(b, fk);
    LossTerms {
        velocity,
        reconstruction,
        fk_pos,
        fk_linvel,
        fk_contact,
        fk,
        total,
    }
}

/// Runs the model on the batch and assembles the full objective.
pub fn total_loss_graph(
    g: &mut Graph,
    model: &Model,
    pv: &ParamVars,
    batch: &FlowBatch,
    ctx: &FlowContext,
    dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<LossTerms, FlowError> {
    if batch.x0.ncols() != ctx.dim() {
        return Err(FlowError::Shape(format!(
            "batch width {} but the context expects {}",
            batch.x0.ncols(),
            ctx.dim()
        )));
    }
    let x_t = g.constant(batch.x_t());
    let v_hat = model.forward_graph(g, pv, x_t, batch.seq_len, &batch.conds, dropout_rng)?;
    Ok(total_loss_from_velocity(g, v_hat, batch, ctx))
}

/// Scalar objective and its components without gradients.
pub fn total_loss(
    model: &Model,
    batch: &FlowBatch,
    ctx: &FlowContext,
) -> Result<(f64, BTreeMap<String, f64>), FlowError> {
    let mut g = Graph::new();
    let pv = model.register(&mut g, false);
    let terms = total_loss_graph(&mut g, model, &pv, batch, ctx, None)?;
    Ok((g.scalar(terms.total), terms.components(&g)))
}

/// Largest relative error between analytic and central-difference
/// gradients of the total loss over `probes` random parameter entries.
pub fn loss_gradient_check(
    model: &Model,
    batch: &FlowBatch,
    ctx: &FlowContext,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<f64, FlowError> {
    use rand::SeedableRng;
    let mut g = Graph::new();
    let pv = model.register(&mut g, true);
    let terms = total_loss_graph(&mut g, model, &pv, batch, ctx, None)?;
    let grads = model.collect_grads(&g, &pv, terms.total)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for _ in 0..probes {
        let pi = rng.random_range(0..model.params.len());
        let (rows, cols) = model.params.values()[pi].dim();
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let orig = model.params.values()[pi][[r, c]];
        probe.params.values_mut()[pi][[r, c]] = orig + h;
        let plus = total_loss(&probe, batch, ctx)?.0;
        probe.params.values_mut()[pi][[r, c]] = orig - h;
        let minus = total_loss(&probe, batch, ctx)?.0;
        probe.params.values_mut()[pi][[r, c]] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let a = grads[pi][[r, c]];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Stacks `B` frame blocks of equal length.
pub fn stack_frames(parts: &[Array2<f64>]) -> Mat {
    stack(parts)
}

#[cfg(test)]
mod tests;
