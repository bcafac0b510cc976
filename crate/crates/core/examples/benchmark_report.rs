//! Runs all four methods over several seeds of the synthetic task and prints
//! the aggregated macro-F1 table in markdown and CSV.
//!
//!     cargo run --release --example benchmark_report -- [seeds]

use wisdom::config::Config;
use wisdom::harness::{aggregate_runs, run_benchmark, Method};
use wisdom::synthetic::{planted_noise, PlantedNoiseConfig};

fn main() -> wisdom::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds: Vec<u64> = (0..seeds).collect();
    let cfg = Config {
        hidden: vec![128, 128],
        epochs: 30,
        ..Config::default()
    };
    let gen = PlantedNoiseConfig::default();
    let runs = run_benchmark(&cfg, &Method::ALL, &seeds, |seed| planted_noise(&gen, seed))?;
    let table = aggregate_runs(&runs, true)?;
    println!("{}", table.to_markdown());
    println!("{}", table.to_csv()?);
    Ok(())
}
