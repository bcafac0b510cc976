//! Trains with LF reweighting on the synthetic task, writes a checkpoint and
//! a CSV trace, then resumes from the checkpoint for a few more epochs.
//!
//!     cargo run --release --example train_wisdom -- [out dir]

use std::path::PathBuf;

use wisdom::bilevel::{Checkpoint, Trainer};
use wisdom::config::Config;
use wisdom::harness::{configure_method, evaluate_macro_f1, Method};
use wisdom::synthetic::{planted_noise, PlantedNoiseConfig};

fn main() -> wisdom::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "wisdom_run".into()));
    std::fs::create_dir_all(&out)?;
    let exp = planted_noise(&PlantedNoiseConfig::default(), 0)?;
    let cfg = Config {
        hidden: vec![128, 128],
        epochs: 5,
        ..Config::default()
    };
    let trainer_cfg = configure_method(Method::Wisdom, &cfg.trainer(0));
    let ck_path = out.join("checkpoint.json");

    let first = Trainer::new(&exp.data, trainer_cfg)?.checkpoint_to(&ck_path).run()?;
    first.trace.save_csv(out.join("trace.csv"))?;
    println!("after {} epochs: w = {:.4}", first.last.epoch, first.last.aggregator.weights);

    let resumed = Trainer::resume(&exp.data, Checkpoint::load(&ck_path)?, 10)?
        .checkpoint_to(&ck_path)
        .run()?;
    let preds = resumed.best.model.predict(exp.test.x.view())?;
    println!(
        "after {} epochs: w = {:.4}; best epoch {} val macro-F1 {:.4} test macro-F1 {:.4}",
        resumed.last.epoch,
        resumed.last.aggregator.weights,
        resumed.best.epoch,
        resumed.best.val_macro_f1,
        evaluate_macro_f1(&preds, &exp.test.labels, exp.data.num_classes)?
    );
    println!("trace and checkpoint written to {}", out.display());
    Ok(())
}
