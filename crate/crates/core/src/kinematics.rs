//! Forward kinematics and the kinematic loss family.
//!
//! Plain FK runs on nalgebra matrices frame by frame. The graph variants
//! build the same chain on an [`autodiff::Graph`](crate::autodiff::Graph) so
//! that the losses can be differentiated back to generator space; in
//! continuous space they take rotations straight from the Gram-Schmidt /
//! normalized sin-cos blocks, which is the same matrix the decoder produces
//! before it extracts Euler angles.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Mat, Var};
use crate::repr::{
    encode_sequence, euler_to_matrix, hinge_rotation, joint_rotation, MotionSequence,
};
use crate::schema::{Dof, JointGroup, SkeletonSchema, ROOT_CHANNELS};

#[derive(Debug, thiserror::Error)]
pub enum KinError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape error: {0}")]
    Shape(String),
}

/// World-space joint positions, `T × J × 3`, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    pub schema_id: String,
    pub fps: f64,
    pub positions: Array3<f64>,
}

impl JointPositions {
    pub fn frames(&self) -> usize {
        self.positions.dim().0
    }

    pub fn joints(&self) -> usize {
        self.positions.dim().1
    }

    pub fn at(&self, t: usize, j: usize) -> Vector3<f64> {
        Vector3::new(
            self.positions[[t, j, 0]],
            self.positions[[t, j, 1]],
            self.positions[[t, j, 2]],
        )
    }

    /// Flattened `T × 3J` view (joint-major within a row), the layout used by
    /// the graph FK.
    pub fn to_rows(&self) -> Array2<f64> {
        let (t, j, _) = self.positions.dim();
        self.positions
            .to_shape((t, 3 * j))
            .expect("contiguous positions")
            .to_owned()
    }

    pub fn from_rows(schema_id: &str, fps: f64, rows: &Array2<f64>) -> Self {
        let (t, w) = rows.dim();
        let positions = rows
            .to_shape((t, w / 3, 3))
            .expect("row width is a multiple of 3")
            .to_owned();
        JointPositions {
            schema_id: schema_id.to_string(),
            fps,
            positions,
        }
    }
}

/// Per-frame contact flags for the schema's foot joints, `T × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMask {
    pub mask: Array2<bool>,
}

impl ContactMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContactThresholds {
    /// Foot height below which contact is possible, meters.
    pub height: f64,
    /// Foot speed below which contact is possible, m/s.
    pub speed: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        ContactThresholds {
            height: 0.05,
            speed: 0.30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FkWeights {
    pub pos: f64,
    pub linvel: f64,
    pub contact: f64,
}

impl Default for FkWeights {
    fn default() -> Self {
        FkWeights {
            pos: 1.0,
            linvel: 0.5,
            contact: 1.0,
        }
    }
}

/// Weighted components of the kinematic loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FkLoss {
    pub pos: f64,
    pub linvel: f64,
    pub contact: f64,
    pub total: f64,
}

fn root_translation(row: ArrayView1<f64>) -> Vector3<f64> {
    Vector3::new(row[0], row[1], row[2])
}

/// Chains local rotations into world positions for one frame.
fn chain(
    schema: &SkeletonSchema,
    translation: Vector3<f64>,
    local: impl Fn(usize) -> Matrix3<f64>,
    out: &mut [Vector3<f64>],
) {
    let mut world_r = vec![Matrix3::identity(); schema.joint_count()];
    for &j in schema.fk_order() {
        let spec = &schema.joints()[j];
        let r = local(j);
        match schema.parent(j) {
            None => {
                world_r[j] = r;
                out[j] = translation + r * spec.offset;
            }
            Some(p) => {
                out[j] = out[p] + world_r[p] * spec.offset;
                world_r[j] = world_r[p] * r;
            }
        }
    }
}

fn native_local(schema: &SkeletonSchema, j: usize, row: ArrayView1<f64>) -> Matrix3<f64> {
    let spec = &schema.joints()[j];
    let n = schema.slot(j).native.start;
    match spec.dof {
        Dof::Three => euler_to_matrix([row[n], row[n + 1], row[n + 2]], spec.rotation_order),
        Dof::One { axis } => {
            let (s, c) = row[n].sin_cos();
            hinge_rotation(&axis, c, s)
        }
    }
}

/// FK from native Euler frames. Root channels 0..2 translate the skeleton;
/// channels 3..5 are carried by the representation but do not move joints.
pub fn forward_kinematics(
    m: &MotionSequence,
    schema: &SkeletonSchema,
) -> Result<JointPositions, KinError> {
    if m.frames.ncols() != schema.native_pose_dim() {
        return Err(KinError::Dimension(format!(
            "motion has {} dims, schema `{}` expects {}",
            m.frames.ncols(),
            schema.name(),
            schema.native_pose_dim()
        )));
    }
    let (t, jn) = (m.len(), schema.joint_count());
    let mut positions = Array3::zeros((t, jn, 3));
    let mut buf = vec![Vector3::zeros(); jn];
    for (f, row) in m.frames.rows().into_iter().enumerate() {
        chain(
            schema,
            root_translation(row),
            |j| native_local(schema, j, row),
            &mut buf,
        );
        for (j, p) in buf.iter().enumerate() {
            for k in 0..3 {
                positions[[f, j, k]] = p[k];
            }
        }
    }
    Ok(JointPositions {
        schema_id: m.schema_id.clone(),
        fps: m.fps,
        positions,
    })
}

/// FK straight from unnormalized continuous frames (Gram-Schmidt rotations).
pub fn forward_kinematics_continuous(
    frames: &Array2<f64>,
    schema: &SkeletonSchema,
    fps: f64,
) -> Result<JointPositions, KinError> {
    if frames.ncols() != schema.continuous_dim() {
        return Err(KinError::Dimension(format!(
            "continuous frames have {} dims, schema `{}` expects {}",
            frames.ncols(),
            schema.name(),
            schema.continuous_dim()
        )));
    }
    let (t, jn) = (frames.nrows(), schema.joint_count());
    let mut positions = Array3::zeros((t, jn, 3));
    let mut buf = vec![Vector3::zeros(); jn];
    for (f, row) in frames.rows().into_iter().enumerate() {
        chain(
            schema,
            root_translation(row),
            |j| joint_rotation(schema, j, row).0,
            &mut buf,
        );
        for (j, p) in buf.iter().enumerate() {
            for k in 0..3 {
                positions[[f, j, k]] = p[k];
            }
        }
    }
    Ok(JointPositions {
        schema_id: schema.name().to_string(),
        fps,
        positions,
    })
}

/// `R(θ) = A + cos θ · Bc + sin θ · Bs` for a fixed axis, flattened row-major.
fn cos_sin_basis(rot: impl Fn(f64, f64) -> Matrix3<f64>) -> (Mat, Mat) {
    let r0 = rot(1.0, 0.0);
    let rpi = rot(-1.0, 0.0);
    let rhalf = rot(0.0, 1.0);
    let a = (r0 + rpi) * 0.5;
    let bc = (r0 - rpi) * 0.5;
    let bs = rhalf - a;
    let mut constant = Mat::zeros((1, 9));
    let mut coef = Mat::zeros((2, 9));
    for i in 0..3 {
        for j in 0..3 {
            constant[[0, 3 * i + j]] = a[(i, j)];
            coef[[0, 3 * i + j]] = bc[(i, j)];
            coef[[1, 3 * i + j]] = bs[(i, j)];
        }
    }
    (constant, coef)
}

fn rotation_from_cs(g: &mut Graph, cs: Var, rot: impl Fn(f64, f64) -> Matrix3<f64>) -> Var {
    let (constant, coef) = cos_sin_basis(rot);
    let coef = g.constant(coef);
    let constant = g.constant(constant);
    let lin = g.matmul(cs, coef);
    g.add_row(lin, constant)
}

fn hinge_axis_rotation(axis: Vector3<f64>) -> impl Fn(f64, f64) -> Matrix3<f64> {
    move |c, s| hinge_rotation(&axis, c, s)
}

/// Row-major permutation taking `[b1 | b2 | b3]` columns to a flat matrix.
fn columns_to_row_major() -> Vec<usize> {
    let mut idx = vec![0; 9];
    for i in 0..3 {
        for j in 0..3 {
            idx[3 * i + j] = 3 * j + i;
        }
    }
    idx
}

/// Differentiable Gram-Schmidt of a `N × 6` block into `N × 9` rotations.
pub fn graph_sixd_to_matrix(g: &mut Graph, block: Var) -> Var {
    let a1 = g.slice_cols(block, 0, 3);
    let a2 = g.slice_cols(block, 3, 3);
    let b1 = g.l2_normalize_rows(a1, 1e-12);
    let d = g.row_dot(b1, a2);
    let proj = g.mul_col(b1, d);
    let res = g.sub(a2, proj);
    let b2 = g.l2_normalize_rows(res, 1e-12);
    let b3 = g.cross3(b1, b2);
    let cols = g.concat_cols(&[b1, b2, b3]);
    g.permute_cols(cols, &columns_to_row_major())
}

fn graph_chain(
    g: &mut Graph,
    schema: &SkeletonSchema,
    translation: Var,
    mut local: impl FnMut(&mut Graph, usize) -> Option<Var>,
) -> Var {
    let jn = schema.joint_count();
    let mut world_r: Vec<Option<Var>> = vec![None; jn];
    let mut world_p: Vec<Option<Var>> = vec![None; jn];
    for &j in schema.fk_order() {
        let spec = &schema.joints()[j];
        let r = local(g, j);
        let off =
            Mat::from_shape_vec((1, 3), spec.offset.iter().copied().collect()).expect("3-vector");
        match schema.parent(j) {
            None => {
                let r = r.expect("root carries a rotation");
                world_r[j] = Some(r);
                world_p[j] = Some(if spec.offset.norm() == 0.0 {
                    translation
                } else {
                    let off = g.constant(off);
                    let o = g.mat3_vec(r, off);
                    g.add(translation, o)
                });
            }
            Some(p) => {
                let pr = world_r[p].expect("parent before child");
                let pp = world_p[p].expect("parent before child");
                let off = g.constant(off);
                let o = g.mat3_vec(pr, off);
                world_p[j] = Some(g.add(pp, o));
                world_r[j] = Some(match r {
                    Some(r) => g.mat3_mul(pr, r),
                    None => pr,
                });
            }
        }
    }
    let parts: Vec<Var> = world_p
        .into_iter()
        .map(|p| p.expect("all joints reached"))
        .collect();
    g.concat_cols(&parts)
}

/// Graph FK on unnormalized continuous rows `N × continuous_dim`; returns
/// positions `N × 3J`. Jaw joints contribute the identity rotation.
pub fn fk_graph(g: &mut Graph, x: Var, schema: &SkeletonSchema) -> Var {
    assert_eq!(g.shape(x).1, schema.continuous_dim(), "fk_graph width");
    let translation = g.slice_cols(x, 0, 3);
    graph_chain(g, schema, translation, |g, j| {
        let spec = &schema.joints()[j];
        let cont = schema.slot(j).continuous.clone()?;
        Some(match spec.dof {
            Dof::Three => {
                let block = g.slice_cols(x, cont.start, 6);
                graph_sixd_to_matrix(g, block)
            }
            Dof::One { axis } => {
                let pair = g.slice_cols(x, cont.start, 2);
                let unit = g.l2_normalize_rows(pair, 1e-12);
                rotation_from_cs(g, unit, hinge_axis_rotation(axis))
            }
        })
    })
}

/// Graph FK on native Euler rows `N × native_pose_dim` (used by the z-score
/// ablation). Jaw joints contribute the identity rotation.
pub fn fk_graph_native(g: &mut Graph, x: Var, schema: &SkeletonSchema) -> Var {
    assert_eq!(
        g.shape(x).1,
        schema.native_pose_dim(),
        "fk_graph_native width"
    );
    let translation = g.slice_cols(x, 0, 3);
    graph_chain(g, schema, translation, |g, j| {
        let spec = &schema.joints()[j];
        if spec.group == JointGroup::Jaw {
            return None;
        }
        let start = schema.slot(j).native.start;
        let width = spec.dof.count();
        let angles = g.slice_cols(x, start, width);
        let c = g.cos(angles);
        let s = g.sin(angles);
        let cs_for = |g: &mut Graph, k: usize| {
            let ck = g.slice_cols(c, k, 1);
            let sk = g.slice_cols(s, k, 1);
            g.concat_cols(&[ck, sk])
        };
        Some(match spec.dof {
            Dof::Three => {
                let axes = spec.rotation_order.axes();
                let mut acc: Option<Var> = None;
                for (k, axis) in axes.into_iter().enumerate() {
                    let cs = cs_for(g, k);
                    let unit = axis.unit();
                    let r = rotation_from_cs(g, cs, hinge_axis_rotation(unit));
                    acc = Some(match acc {
                        None => r,
                        Some(prev) => g.mat3_mul(prev, r),
                    });
                }
                acc.expect("three axes")
            }
            Dof::One { axis } => {
                let cs = cs_for(g, 0);
                rotation_from_cs(g, cs, hinge_axis_rotation(axis))
            }
        })
    })
}

/// Contact where the foot is low and slow. Speed at frame `t` uses the
/// forward difference to `t + 1` (backward on the last frame).
pub fn detect_contacts(
    p: &JointPositions,
    schema: &SkeletonSchema,
    thresholds: ContactThresholds,
) -> ContactMask {
    let feet = schema.feet();
    let up = schema.up_axis().index();
    let t = p.frames();
    let mut mask = Array2::from_elem((t, feet.len()), false);
    for (fi, &foot) in feet.iter().enumerate() {
        for f in 0..t {
            let speed = if t < 2 {
                0.0
            } else {
                let (a, b) = if f + 1 < t { (f, f + 1) } else { (f - 1, f) };
                (p.at(b, foot) - p.at(a, foot)).norm() * p.fps
            };
            let height = p.positions[[f, foot, up]];
            mask[[f, fi]] = height < thresholds.height && speed < thresholds.speed;
        }
    }
    ContactMask { mask }
}

/// Kinematic loss between predicted and ground-truth positions.
///
/// Position and velocity terms average the squared Euclidean error over
/// (frame, joint); the contact term averages `‖p̂[t+1] − p̂[t]‖²` over foot
/// frames `t < T − 1` flagged in `mask`.
pub fn fk_loss(
    pred: &JointPositions,
    target: &JointPositions,
    mask: &ContactMask,
    feet: &[usize],
    weights: FkWeights,
) -> Result<FkLoss, KinError> {
    if pred.positions.dim() != target.positions.dim() {
        return Err(KinError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.positions.dim(),
            target.positions.dim()
        )));
    }
    let (t, jn, _) = pred.positions.dim();
    if mask.mask.dim() != (t, feet.len()) {
        return Err(KinError::Shape(format!(
            "contact mask {:?}, expected ({t}, {})",
            mask.mask.dim(),
            feet.len()
        )));
    }
    let mut pos = 0.0;
    for f in 0..t {
        for j in 0..jn {
            pos += (pred.at(f, j) - target.at(f, j)).norm_squared();
        }
    }
    pos /= (t * jn) as f64;

    let mut linvel = 0.0;
    let mut contact = 0.0;
    let mut contact_n = 0usize;
    if t >= 2 {
        for f in 0..t - 1 {
            for j in 0..jn {
                let dp = pred.at(f + 1, j) - pred.at(f, j);
                let dt = target.at(f + 1, j) - target.at(f, j);
                linvel += (dp - dt).norm_squared();
            }
            for (fi, &foot) in feet.iter().enumerate() {
                if mask.mask[[f, fi]] {
                    contact += (pred.at(f + 1, foot) - pred.at(f, foot)).norm_squared();
                    contact_n += 1;
                }
            }
        }
        linvel /= ((t - 1) * jn) as f64;
        if contact_n > 0 {
            contact /= contact_n as f64;
        }
    }
    let out = FkLoss {
        pos: weights.pos * pos,
        linvel: weights.linvel * linvel,
        contact: weights.contact * contact,
        total: 0.0,
    };
    Ok(FkLoss {
        total: out.pos + out.linvel + out.contact,
        ..out
    })
}

/// Graph nodes of the weighted kinematic loss.
#[derive(Debug, Clone, Copy)]
pub struct FkTerms {
    pub pos: Var,
    pub linvel: Var,
    pub contact: Var,
    pub total: Var,
}

/// Contact flags of a batch laid out for [`fk_loss_graph`]: one row per
/// frame difference `(b, t)` with `t < T − 1`, one column per foot.
pub fn contact_rows(masks: &[&ContactMask]) -> Mat {
    let rows: usize = masks.iter().map(|m| m.mask.nrows().saturating_sub(1)).sum();
    let feet = masks.first().map_or(0, |m| m.mask.ncols());
    let mut out = Mat::zeros((rows, feet));
    let mut r = 0;
    for m in masks {
        for t in 0..m.mask.nrows().saturating_sub(1) {
            for f in 0..feet {
                out[[r, f]] = if m.mask[[t, f]] { 1.0 } else { 0.0 };
            }
            r += 1;
        }
    }
    out
}

/// Differentiable counterpart of [`fk_loss`] on stacked rows: `pred` is
/// `B·T × 3J`, `target` the matching constant, `contact` from
/// [`contact_rows`].
pub fn fk_loss_graph(
    g: &mut Graph,
    pred: Var,
    target: &Mat,
    seq_len: usize,
    feet: &[usize],
    contact: &Mat,
    weights: FkWeights,
) -> FkTerms {
    assert_eq!(g.shape(pred), target.dim(), "fk_loss_graph shapes");
    let tgt = g.constant(target.clone());
    // mean over (frame, joint) of a squared 3-vector = 3 × mean over entries
    let pos_mse = g.mse(pred, tgt);
    let pos = g.scale(pos_mse, 3.0 * weights.pos);

    if seq_len < 2 {
        let zero = g.constant(Mat::zeros((1, 1)));
        let total = pos;
        return FkTerms {
            pos,
            linvel: zero,
            contact: zero,
            total,
        };
    }
    let dp = g.frame_diff(pred, seq_len);
    let dt = g.frame_diff(tgt, seq_len);
    let vel_mse = g.mse(dp, dt);
    let linvel = g.scale(vel_mse, 3.0 * weights.linvel);

    let count = contact.sum();
    let contact_term = if count > 0.0 && !feet.is_empty() {
        let cols: Vec<Var> = feet.iter().map(|&f| g.slice_cols(dp, 3 * f, 3)).collect();
        let foot_d = g.concat_cols(&cols);
        let sq = g.square(foot_d);
        let mut mask = Mat::zeros(g.shape(sq));
        for r in 0..mask.nrows() {
            for (fi, _) in feet.iter().enumerate() {
                for k in 0..3 {
                    mask[[r, 3 * fi + k]] = contact[[r, fi]];
                }
            }
        }
        let masked = g.mask_mul(sq, mask);
        let s = g.sum(masked);
        g.scale(s, weights.contact / count)
    } else {
        g.constant(Mat::zeros((1, 1)))
    };
    let partial = g.add(pos, linvel);
    let total = g.add(partial, contact_term);
    FkTerms {
        pos,
        linvel,
        contact: contact_term,
        total,
    }
}

/// Compares graph FK gradients against central differences of the plain
/// continuous FK, for a random linear functional of all joint positions.
/// Returns the worst per-entry relative error.
pub fn fk_jacobian_check(
    m: &MotionSequence,
    schema: &SkeletonSchema,
    h: f64,
    seed: u64,
) -> Result<f64, KinError> {
    let cont = encode_sequence(m, schema).map_err(|e| KinError::Dimension(e.to_string()))?;
    let x0 = cont.frames;
    let (t, d) = x0.dim();
    let width = 3 * schema.joint_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Mat::from_shape_fn((t, width), |_| rng.random_range(-1.0..1.0));

    let mut g = Graph::new();
    let x = g.param(x0.clone());
    let p = fk_graph(&mut g, x, schema);
    let wv = g.constant(w.clone());
    let weighted = g.mul(p, wv);
    let loss = g.sum(weighted);
    let grads = g.backward(loss);
    let analytic = grads.get_or_zeros(x, (t, d));

    let functional = |row: &Array2<f64>, f: usize| -> f64 {
        let pos = forward_kinematics_continuous(row, schema, m.fps)
            .expect("width checked")
            .to_rows();
        pos.row(0).dot(&w.row(f))
    };
    let mut worst: f64 = 0.0;
    for f in 0..t {
        let base = x0.row(f).to_owned().insert_axis(ndarray::Axis(0));
        for k in 0..d {
            let mut plus = base.clone();
            plus[[0, k]] += h;
            let mut minus = base.clone();
            minus[[0, k]] -= h;
            let fd = (functional(&plus, f) - functional(&minus, f)) / (2.0 * h);
            let a = analytic[[f, k]];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Builds a native row with every non-jaw rotation drawn uniformly from
/// `[-amplitude, amplitude]` and a small root translation.
pub fn random_pose_row(schema: &SkeletonSchema, rng: &mut impl Rng, amplitude: f64) -> Vec<f64> {
    let mut row = vec![0.0; schema.native_pose_dim()];
    for v in row.iter_mut().take(3) {
        *v = rng.random_range(-0.5..0.5);
    }
    let jaw = schema.jaw_native_dims();
    for (d, v) in row.iter_mut().enumerate().skip(ROOT_CHANNELS) {
        if !jaw.contains(&d) {
            *v = rng.random_range(-amplitude..amplitude);
        }
    }
    row
}
