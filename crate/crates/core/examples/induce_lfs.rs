//! Induces labeling functions from the labeled slice of a small comment
//! corpus and prints each one with its labeled-set precision and coverage.
//!
//!     cargo run --release --example induce_lfs -- [pool.jsonl labels.json]

use wisdom::config::Config;
use wisdom::corpus::{load_dataset, DatasetFormat, Document, LabelMap};
use wisdom::harness::{induce_for_split, text_setup};

const SPAM: [&str; 5] = [
    "check out my channel",
    "subscribe to my channel please",
    "free gift card click here",
    "check my new video",
    "click here to win",
];
const HAM: [&str; 5] = [
    "love this song",
    "this song is so good",
    "great video love it",
    "best song ever",
    "still listening in 2015",
];

fn toy_pool() -> Vec<Document> {
    (0..600)
        .map(|i| {
            let (text, y) = if i % 2 == 1 { (SPAM[i / 2 % 5], 1) } else { (HAM[i / 2 % 5], 0) };
            let tail = ["", " wow", " haha", " so much"][i / 10 % 4];
            Document::new(i as u64, format!("{text}{tail}"), Some(y))
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (pool, labels) = match args.as_slice() {
        [pool, labels] => {
            let labels = LabelMap::load(labels)?;
            (load_dataset(pool, DatasetFormat::Jsonl, &labels)?, labels)
        }
        _ => (toy_pool(), LabelMap::new(["ham", "spam"])?),
    };
    let cfg = Config::default();
    let setup = text_setup(&pool, labels.num_classes(), &cfg, 0)?;
    println!(
        "{} supervised, {} validation, {} unlabeled; {} vocabulary terms",
        setup.split.supervised.len(),
        setup.split.validation.len(),
        setup.split.unlabeled.len(),
        setup.vocab.len()
    );
    for lf in induce_for_split(&setup, &cfg)? {
        println!(
            "{:<40} precision {:.2} coverage {:.2}",
            lf.describe(&setup.vocab, &labels),
            lf.train_precision,
            lf.train_coverage
        );
    }
    Ok(())
}
