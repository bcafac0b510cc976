//! Shows how LF weights change the label model: the same trigger rows are
//! aggregated with full weights and again with one LF switched off.
//!
//!     cargo run --example label_model

use ndarray::{array, Array1};
use wisdom::aggregator::{self, AggregatorParams};

fn main() {
    // Three LFs over two classes; LF 2 votes for class 0 with a strong potential.
    let theta = array![[0.2, 1.5], [0.1, 1.2], [1.4, 0.3]];
    let quality = Array1::from_elem(3, 0.8);
    let targets = vec![1, 1, 0];
    let fired = array![[1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];

    for weights in [array![1.0, 1.0, 1.0], array![1.0, 1.0, 0.0]] {
        let params = AggregatorParams::new(theta.clone(), weights.clone(), quality.clone(), targets.clone());
        println!("w = {weights}");
        println!("  log Z = {:.4}", aggregator::log_partition(&params));
        for (row, post) in fired.rows().into_iter().zip(aggregator::posteriors(&params, fired.view()).rows()) {
            println!("  fired {row} -> P(y) = [{:.3}, {:.3}]", post[0], post[1]);
        }
        println!(
            "  ll_u = {:.4}, quality guide = {:.4}",
            aggregator::ll_unsupervised(&params, fired.view()),
            aggregator::quality_guide_loss(&params)
        );
    }
}
