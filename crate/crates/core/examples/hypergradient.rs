//! Computes the LF-weight hypergradient on one batch of the synthetic task in
//! both modes and applies a single outer step.
//!
//!     cargo run --release --example hypergradient

use ndarray::s;
use wisdom::aggregator::AggregatorParams;
use wisdom::bilevel::{hypergradient, outer_weight_step, HypergradMode};
use wisdom::model::{FeatureModel, MlpShape};
use wisdom::objective::{JointBatch, ObjectiveConfig};
use wisdom::synthetic::{planted_noise, PlantedNoiseConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> wisdom::Result<()> {
    let gen = PlantedNoiseConfig::default();
    let exp = planted_noise(&gen, 0)?;
    let d = &exp.data;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agg = AggregatorParams::init(&d.lfs, d.num_classes, &mut rng);
    let model = FeatureModel::init(MlpShape::new(d.feature_dim(), vec![64], d.num_classes), 0.0, 0)?;
    let batch = JointBatch::new(
        d.supervised.x.slice(s![..32, ..]),
        d.supervised.fired.slice(s![..32, ..]),
        d.supervised.labels[..32].to_vec(),
        d.unlabeled.x.slice(s![..32, ..]),
        d.unlabeled.fired.slice(s![..32, ..]),
    );
    let obj = ObjectiveConfig::default();
    for mode in [HypergradMode::Exact, HypergradMode::FirstOrder] {
        let h = hypergradient(&agg, &model, &batch, None, &d.validation, &obj, 3e-4, mode)?;
        println!("{mode:?}: {h:.3e}");
    }
    outer_weight_step(&mut agg, &model, &batch, None, &d.validation, &obj, 3e-4, 1.0, HypergradMode::Exact)?;
    println!("w after one outer step with beta = 1: {:.6}", agg.weights);
    Ok(())
}
