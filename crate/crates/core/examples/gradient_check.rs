//! Compares the analytic gradient of the full training loss with central
//! differences on the three-joint schema.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use choreoflow::flow::{
    loss_gradient_check, total_loss, FlowBatch, FlowContext, LossWeights, TrainingSet,
};
use choreoflow::kinematics::random_pose_row;
use choreoflow::model::{Model, ModelConfig};
use choreoflow::repr::{MotionSequence, Normalizer, RepresentationMode};
use choreoflow::schema::SkeletonSchema;

fn main() {
    let schema = SkeletonSchema::chain3();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let motions: Vec<MotionSequence> = (0..3)
        .map(|_| {
            let mut m = MotionSequence::standing(&schema, 8, 20.0);
            for t in 0..8 {
                for (d, v) in random_pose_row(&schema, &mut rng, 0.4)
                    .into_iter()
                    .enumerate()
                {
                    m.frames[[t, d]] += v;
                }
            }
            m
        })
        .collect();
    let normalizer = Normalizer::fit(RepresentationMode::Continuous, &motions, &schema).unwrap();
    let ctx = FlowContext::new(schema, normalizer, LossWeights::default()).unwrap();
    let items: Vec<_> = motions.into_iter().map(|m| (m, vec![2, 5])).collect();
    let set = TrainingSet::new(&ctx, &items).unwrap();
    let batch = FlowBatch::draw(&set, &[0, 1, 2], 8, 0.0, &mut rng).unwrap();

    // perturb away from the zero-initialized head so every path carries gradient
    let mut model = Model::init(ModelConfig::desk(ctx.dim(), 16), 0).unwrap();
    for v in model.params.values_mut() {
        v.mapv_inplace(|x| x + rng.random_range(-0.05..0.05));
    }
    let (total, parts) = total_loss(&model, &batch, &ctx).unwrap();
    println!("loss {total:.5}: {parts:?}");
    let worst = loss_gradient_check(&model, &batch, &ctx, 64, 1e-5, 1).unwrap();
    println!("max relative error over 64 parameters: {worst:.2e}");
}
