//! Sweeps the labeled fraction of a fixed synthetic pool and prints how the
//! supervised baseline and the reweighted model move with it.
//!
//!     cargo run --release --example ablation -- [seeds]

use wisdom::config::Config;
use wisdom::harness::{aggregate_runs, run_method, Method};
use wisdom::synthetic::{planted_noise, PlantedNoiseConfig};

fn main() -> wisdom::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = Config {
        hidden: vec![256, 256],
        ..Config::default()
    };
    let mut runs = Vec::new();
    for fraction in [0.05, 0.10, 0.20] {
        let gen = PlantedNoiseConfig::with_labeled_fraction(4400, fraction);
        for seed in 0..seeds {
            let mut exp = planted_noise(&gen, seed)?;
            exp.dataset = format!("planted_noise@{:.0}%", 100.0 * fraction);
            for method in [Method::Supervised, Method::Wisdom] {
                runs.push(run_method(method, &exp, &cfg, seed)?);
            }
        }
    }
    print!("{}", aggregate_runs(&runs, true)?.to_markdown());
    Ok(())
}
