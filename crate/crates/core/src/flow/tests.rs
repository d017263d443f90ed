use super::*;
use crate::kinematics::random_pose_row;
use crate::model::{Model, ModelConfig};
use crate::repr::IDENTITY_DIM;
use crate::schema::{dim_layout, Space};
use proptest::prelude::{prop, prop_assert, proptest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn wave_motion(schema: &SkeletonSchema, frames: usize, rng: &mut ChaCha8Rng) -> MotionSequence {
    let base = random_pose_row(schema, rng, 0.6);
    let dir = random_pose_row(schema, rng, 0.4);
    let phase = rng.random_range(0.0..6.0);
    let mut m = MotionSequence::standing(schema, frames, 20.0);
    for t in 0..frames {
        let s = (0.4 * t as f64 + phase).sin();
        for d in 3..schema.native_pose_dim() {
            m.frames[[t, d]] += base[d] + s * dir[d];
        }
        m.frames[[t, 0]] += 0.02 * t as f64;
    }
    for d in schema.jaw_native_dims() {
        m.frames.column_mut(d).fill(0.0);
    }
    m.identity = (0..IDENTITY_DIM)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    m
}

fn setup(
    schema: SkeletonSchema,
    mode: RepresentationMode,
    count: usize,
    frames: usize,
) -> (FlowContext, TrainingSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let motions: Vec<MotionSequence> = (0..count)
        .map(|_| wave_motion(&schema, frames, &mut rng))
        .collect();
    let normalizer = Normalizer::fit(mode, &motions, &schema).unwrap();
    let ctx = FlowContext::new(schema, normalizer, LossWeights::default()).unwrap();
    let items: Vec<_> = motions
        .into_iter()
        .enumerate()
        .map(|(i, m)| (m, vec![2, 4 + i as u32, 5]))
        .collect();
    let set = TrainingSet::new(&ctx, &items).unwrap();
    (ctx, set)
}

fn desk_model(ctx: &FlowContext, seed: u64, jitter: f64) -> Model {
    let mut model = Model::init(ModelConfig::desk(ctx.dim(), 32), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for v in model.params.values_mut() {
        v.mapv_inplace(|x| x + rng.random_range(-jitter..jitter));
    }
    model
}

#[test]
fn interpolation_endpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Mat::from_shape_fn((4, 3), |_| rng.random_range(-5.0..5.0));
    let b = Mat::from_shape_fn((4, 3), |_| rng.random_range(-5.0..5.0));
    assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
    assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
    assert_eq!(interpolate(&a, &b, 0.5).unwrap(), (&a + &b) * 0.5);
    assert!(interpolate(&a, &Mat::zeros((2, 3)), 0.5).is_err());
    assert!(interpolate(&a, &b, 1.5).is_err());
}

proptest! {
    #[test]
    fn path_identity(t in 0.0f64..=1.0, vals in prop::collection::vec(-100.0f64..100.0, 12)) {
        let a = Mat::from_shape_vec((3, 2), vals[..6].to_vec()).unwrap();
        let b = Mat::from_shape_vec((3, 2), vals[6..].to_vec()).unwrap();
        let xt = interpolate(&a, &b, t).unwrap();
        for ((x, p), q) in xt.iter().zip(&a).zip(&b) {
            let lhs = x - p;
            let rhs = t * (q - p);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + p.abs() + q.abs()));
        }
    }
}

#[test]
fn velocity_loss_reductions() {
    let schema = SkeletonSchema::mhr260();
    let layout = dim_layout(&schema, Space::Continuous);
    let w = LossWeights::default();
    let t = 5;
    let target = Mat::from_shape_fn((t, layout.dim), |(i, j)| (i * 7 + j) as f64 * 0.01);
    let (l, b) = anatomy_velocity_loss(&target, &target, &layout, &w).unwrap();
    assert_eq!(l, 0.0);
    assert_eq!(b, VelocityBreakdown::default());

    let mut pred = target.clone();
    pred[[2, layout.hand_rotation[3]]] += 1.0;
    let (l, b) = anatomy_velocity_loss(&pred, &target, &layout, &w).unwrap();
    let expect = w.lambda_hand / (layout.hand_rotation.len() * t) as f64;
    assert!((l - expect).abs() < 1e-15);
    assert!((b.hand - expect).abs() < 1e-15);
    assert_eq!(b.hand_sum, 1.0);
    assert_eq!((b.rot, b.body), (0.0, 0.0));
}

#[test]
fn swapping_group_weights_swaps_terms() {
    let schema = SkeletonSchema::chain3();
    let layout = dim_layout(&schema, Space::Continuous);
    let target = Mat::zeros((3, layout.dim));
    let mut pred = target.clone();
    pred.column_mut(layout.body_rotation[0]).fill(0.5);
    pred.column_mut(layout.hand_rotation[0]).fill(0.7);
    let w = LossWeights::default();
    let swapped = LossWeights {
        lambda_body: w.lambda_hand,
        lambda_hand: w.lambda_body,
        ..w
    };
    let (_, a) = anatomy_velocity_loss(&pred, &target, &layout, &w).unwrap();
    let (_, b) = anatomy_velocity_loss(&pred, &target, &layout, &swapped).unwrap();
    assert!((a.body / w.lambda_body * w.lambda_hand - b.body).abs() < 1e-15);
    assert!((a.hand / w.lambda_hand * w.lambda_body - b.hand).abs() < 1e-15);
    assert_eq!((a.body_mse, a.hand_mse), (b.body_mse, b.hand_mse));
}

#[test]
fn root_translation_is_supervised() {
    let schema = SkeletonSchema::mhr260();
    let layout = dim_layout(&schema, Space::Continuous);
    let groups = VelocityGroups::new(&layout, RootGroup::Body).unwrap();
    assert!(groups.body.contains(&0) && groups.body.contains(&5));
    let total = groups.rot.len() + groups.body.len() + groups.hand.len();
    assert_eq!(total, 260);
    let mut broken = layout.clone();
    broken.hand_rotation.pop();
    assert!(matches!(
        VelocityGroups::new(&broken, RootGroup::Body),
        Err(FlowError::Layout(_))
    ));
}

#[test]
fn reconstruction_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = LossWeights::default();
    let x0 = Mat::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
    let x1 = Mat::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
    let t = 0.37;
    let xt = interpolate(&x0, &x1, t).unwrap();
    let v = &x1 - &x0;
    let (lx, ls) = reconstruction_and_smoothing(&xt, t, &v, &x0, &w).unwrap();
    assert!(lx < 1e-28 && ls < 1e-28);

    // v̂ shifted by a constant per-frame error: x̂0 = x̄0 − t·c
    let c = [0.2, -0.1, 0.4, 0.0];
    let mut vb = v.clone();
    for mut row in vb.rows_mut() {
        for k in 0..4 {
            row[k] += c[k];
        }
    }
    let (lx, ls) = reconstruction_and_smoothing(&xt, t, &vb, &x0, &w).unwrap();
    let norm2: f64 = c.iter().map(|v| (t * v) * (t * v)).sum();
    assert!((lx - w.lambda_x0 * norm2 / 4.0).abs() < 1e-14);
    assert!(ls < 1e-28);

    // two frames: only the velocity term exists
    let a = Mat::from_shape_vec((2, 1), vec![0.0, 0.0]).unwrap();
    let vhat = Mat::from_shape_vec((2, 1), vec![0.0, -1.0]).unwrap();
    let (_, ls) = reconstruction_and_smoothing(&a, 1.0, &vhat, &a, &w).unwrap();
    assert!((ls - w.lambda_v * 1.0).abs() < 1e-15);
}

fn draw(set: &TrainingSet, b: usize, seed: u64) -> FlowBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..b).collect();
    FlowBatch::draw(set, &idx, set.min_len(), 0.0, &mut rng).unwrap()
}

#[test]
fn perfect_velocity_is_a_fixed_point() {
    for mode in [
        RepresentationMode::Continuous,
        RepresentationMode::ZScore136,
    ] {
        let (ctx, set) = setup(SkeletonSchema::mhr260(), mode, 3, 8);
        let batch = draw(&set, 3, 5);
        let mut g = Graph::new();
        let v = g.constant(batch.target_velocity());
        let terms = total_loss_from_velocity(&mut g, v, &batch, &ctx);
        for (k, val) in terms.components(&g) {
            assert!(val.abs() < 1e-18, "{mode:?} {k} = {val}");
        }
    }
}

#[test]
fn only_reconstruction_weight() {
    let (mut ctx, set) = setup(
        SkeletonSchema::chain3(),
        RepresentationMode::Continuous,
        2,
        6,
    );
    ctx.weights = LossWeights {
        lambda_x0: 2.0,
        ..LossWeights::zero()
    };
    let batch = draw(&set, 2, 1);
    let model = desk_model(&ctx, 2, 0.05);
    let (total, parts) = total_loss(&model, &batch, &ctx).unwrap();
    assert!(total > 0.0);
    assert_eq!(total, parts["x0"]);
}

#[test]
fn gradient_check_chain3() {
    let (ctx, set) = setup(
        SkeletonSchema::chain3(),
        RepresentationMode::Continuous,
        3,
        6,
    );
    let batch = draw(&set, 3, 4);
    let model = desk_model(&ctx, 1, 0.05);
    let (_, parts) = total_loss(&model, &batch, &ctx).unwrap();
    assert!(parts["fk"] > 0.0 && parts["vel"] > 0.0 && parts["smooth"] > 0.0);
    let err = loss_gradient_check(&model, &batch, &ctx, 48, 1e-5, 7).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

struct ConstantField(Mat);

impl VelocityField for ConstantField {
    fn velocity(&self, _x: &Mat, _s: usize, _c: &[ConditioningBundle]) -> Result<Mat, FlowError> {
        Ok(self.0.clone())
    }
}

/// dx/dt = x, so integrating from t = 1 down to 0 gives x1 / e.
struct LinearField;

impl VelocityField for LinearField {
    fn velocity(&self, x: &Mat, _s: usize, _c: &[ConditioningBundle]) -> Result<Mat, FlowError> {
        Ok(x.clone())
    }
}

fn cond() -> ConditioningBundle {
    ConditioningBundle::new(vec![2, 5, 7], vec![0.1; IDENTITY_DIM], 1.0)
}

#[test]
fn constant_field_lands_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = Mat::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
    let x1 = Mat::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
    let field = ConstantField(&x1 - &x0);
    for steps in [1, 10, 50] {
        let out = integrate(&field, x1.clone(), 4, &[cond()], steps, 1.0).unwrap();
        let err = (&out - &x0).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-9, "steps {steps}: {err}");
    }
}

#[test]
fn euler_is_first_order() {
    let x1 = Mat::from_elem((1, 1), 1.0);
    let exact = (-1.0f64).exp();
    let err = |n| {
        (integrate(&LinearField, x1.clone(), 1, &[cond()], n, 1.0).unwrap()[[0, 0]] - exact).abs()
    };
    for n in [10, 20, 40, 80] {
        let ratio = err(n) / err(2 * n);
        assert!((1.7..=2.3).contains(&ratio), "n = {n}: ratio {ratio}");
    }
}

#[test]
fn guidance_endpoints_are_exact() {
    let (ctx, _) = setup(
        SkeletonSchema::chain3(),
        RepresentationMode::Continuous,
        2,
        4,
    );
    let model = desk_model(&ctx, 3, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x1 = Mat::from_shape_fn((5, ctx.dim()), |_| rng.random_range(-1.0..1.0));
    let c = cond();
    let w0 = integrate(&model, x1.clone(), 5, &[c.clone()], 6, 0.0).unwrap();
    let uncond = integrate(&model, x1.clone(), 5, &[c.unconditional()], 6, 1.0).unwrap();
    assert_eq!(w0, uncond);
    let w1 = integrate(&model, x1.clone(), 5, &[c.clone()], 6, 1.0).unwrap();
    let wf = integrate(&model, x1.clone(), 5, &[c.clone()], 6, 1.0 + 1e-12).unwrap();
    assert_ne!(w0, w1);
    assert!((&w1 - &wf).mapv(f64::abs).sum() < 1e-6);

    // guided velocity is affine in w
    let conds = [c.clone()];
    let vc = model.velocity(&x1, 5, &conds).unwrap();
    let vu = model.velocity(&x1, 5, &[c.unconditional()]).unwrap();
    let step = |w: f64| integrate(&model, x1.clone(), 5, &conds, 1, w).unwrap();
    let expect = &x1 - &((&vu + &((&vc - &vu) * 2.5)) * 1.0);
    assert!((&step(2.5) - &expect).mapv(f64::abs).sum() < 1e-12);
}

#[test]
fn sampling_decodes_native_motion() {
    let (ctx, set) = setup(
        SkeletonSchema::chain3(),
        RepresentationMode::Continuous,
        2,
        4,
    );
    let model = desk_model(&ctx, 3, 0.1);
    let cfg = SamplerConfig {
        steps: 4,
        ..SamplerConfig::default()
    };
    let s = sample(
        &model,
        &cond(),
        7,
        &cfg,
        &ctx.normalizer,
        &ctx.schema,
        set.fps,
    )
    .unwrap();
    assert_eq!(s.motion.frames.dim(), (7, ctx.schema.native_pose_dim()));
    let again = sample(
        &model,
        &cond(),
        7,
        &cfg,
        &ctx.normalizer,
        &ctx.schema,
        set.fps,
    )
    .unwrap();
    assert_eq!(s.normalized, again.normalized);
}

#[test]
fn sampler_defaults() {
    let c = SamplerConfig::default();
    assert_eq!((c.steps, c.guidance_scale), (50, 1.0));
}

#[test]
fn zero_steps_returns_initialization() {
    let (ctx, set) = setup(
        SkeletonSchema::chain3(),
        RepresentationMode::Continuous,
        4,
        6,
    );
    let model = Model::init(ModelConfig::desk(ctx.dim(), 32), 5).unwrap();
    let cfg = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let out = train_loop(
        model.clone(),
        &set,
        &ctx,
        &cfg,
        serde_json::Value::Null,
        None,
        None,
    )
    .unwrap();
    assert_eq!(out.checkpoint.params, model.params);
    assert_eq!(out.checkpoint.step, 0);
}

#[test]
fn training_is_deterministic_and_logs() {
    let (ctx, set) = setup(
        SkeletonSchema::chain3(),
        RepresentationMode::Continuous,
        6,
        8,
    );
    let model = Model::init(ModelConfig::desk(ctx.dim(), 32), 5).unwrap();
    let cfg = TrainConfig {
        steps: 6,
        batch_size: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut buf = Vec::new();
    let a = train_loop(
        model.clone(),
        &set,
        &ctx,
        &cfg,
        serde_json::Value::Null,
        Some(&mut buf),
        None,
    )
    .unwrap();
    let b = train_loop(model, &set, &ctx, &cfg, serde_json::Value::Null, None, None).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.logs, b.logs);
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["step", "total", "vel", "x0", "smooth", "fk", "grad_norm"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn non_finite_training_aborts_with_last_good_state() {
    let (ctx, set) = setup(
        SkeletonSchema::chain3(),
        RepresentationMode::Continuous,
        4,
        6,
    );
    let mut model = Model::init(ModelConfig::desk(ctx.dim(), 32), 5).unwrap();
    model.params.get_mut("head.b").unwrap()[[0, 0]] = f64::INFINITY;
    let cfg = TrainConfig {
        steps: 3,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    match train_loop(
        model.clone(),
        &set,
        &ctx,
        &cfg,
        serde_json::Value::Null,
        None,
        Some(dir.path()),
    ) {
        Err(FlowError::TrainingAborted {
            step, last_good, ..
        }) => {
            assert_eq!(step, 0);
            assert_eq!(last_good.params, model.params);
            assert!(dir.path().join("last_good.dfck").exists());
        }
        other => panic!("expected abort, got {:?}", other.map(|o| o.logs.len())),
    }
}
