//! Learns LF weights on a synthetic task where two of six LFs are noisy and
//! prints the learned weights next to each LF's planted precision.
//!
//!     cargo run --release --example planted_noise -- [seeds] [hidden width]

use wisdom::config::Config;
use wisdom::harness::{run_method, Method};
use wisdom::synthetic::{planted_noise, PlantedNoiseConfig};

fn main() -> wisdom::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let gen = PlantedNoiseConfig::default();
    let width: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(256);
    let cfg = Config {
        hidden: vec![width, width],
        ..Config::default()
    };

    println!("planted precision: {:?}", (0..gen.num_lfs()).map(|j| gen.precision(j)).collect::<Vec<_>>());
    for seed in 0..seeds {
        let exp = planted_noise(&gen, seed)?;
        let spear = run_method(Method::AutoSpear, &exp, &cfg, seed)?;
        let wisdom = run_method(Method::Wisdom, &exp, &cfg, seed)?;
        let w = wisdom.weights.unwrap_or_default();
        let mean = |noisy: bool| {
            let v: Vec<f64> = (0..w.len()).filter(|&j| gen.is_noisy(j) == noisy).map(|j| w[j]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        println!(
            "seed {seed}: auto_spear F1 {:.4} | wisdom F1 {:.4} (epoch {}, {:.1}s) | w clean {:.4} noisy {:.4} | w = {:.4?}",
            spear.test_macro_f1,
            wisdom.test_macro_f1,
            wisdom.best_epoch,
            wisdom.wall_time_secs,
            mean(false),
            mean(true),
            w
        );
    }
    Ok(())
}
