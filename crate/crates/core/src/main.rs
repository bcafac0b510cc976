use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use wisdom::config::Config;
use wisdom::corpus::{load_dataset, DatasetFormat, Document, LabelMap};
use wisdom::harness::{
    aggregate_runs, emit_report, induce_for_split, load_runs, run_benchmark, run_method, save_run,
    text_experiment, text_setup, Method, ReportFormat,
};
use wisdom::lf::{load_lfs, save_lfs};

#[derive(Parser)]
#[command(name = "wisdom", version, about = "Weak supervision with learned labeling-function weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Induce labeling functions from the labeled part of a pool.
    Induce {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method on one seed and write the run record.
    Train {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        /// LF file from `induce`; induced on the fly when omitted.
        #[arg(long)]
        lfs: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the training trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every configured method over every configured seed.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate run records into a report.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => {
            let mut cfg = Config::default();
            cfg.apply_env()?;
            Ok(cfg)
        }
    }
}

fn load_docs(path: &Path, labels: &LabelMap) -> anyhow::Result<Vec<Document>> {
    load_dataset(path, DatasetFormat::Jsonl, labels).with_context(|| format!("loading {}", path.display()))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Induce {
            data,
            labels,
            config,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let label_map = LabelMap::load(&labels)?;
            let pool = load_docs(&data, &label_map)?;
            let setup = text_setup(&pool, label_map.num_classes(), &cfg, seed.unwrap_or(cfg.seed))?;
            let lfs = induce_for_split(&setup, &cfg)?;
            save_lfs(&out, &lfs, &setup.vocab, &label_map)?;
            log::info!("{} labeling functions written to {}", lfs.len(), out.display());
        }
        Command::Train {
            method,
            data,
            test,
            labels,
            lfs,
            config,
            seed,
            out,
            trace,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let label_map = LabelMap::load(&labels)?;
            let Some(test) = test.or_else(|| cfg.test.clone()) else {
                bail!("a test file is required (--test or `test` in the config)");
            };
            let pool = load_docs(&data, &label_map)?;
            let test_docs = load_docs(&test, &label_map)?;
            let setup = text_setup(&pool, label_map.num_classes(), &cfg, seed)?;
            let lfs = match (&lfs, method.uses_lfs()) {
                (_, false) => Vec::new(),
                (Some(path), true) => load_lfs(path, &setup.vocab, &label_map)?,
                (None, true) => induce_for_split(&setup, &cfg)?,
            };
            let exp = text_experiment(&setup, &lfs, &test_docs, &cfg)?;
            let run = run_method(method, &exp, &cfg, seed)?;
            if let Some(path) = trace {
                run.trace.save_csv(path)?;
            }
            save_run(&run, &out)?;
            log::info!("{method} seed {seed}: test macro-F1 {:.4}", run.test_macro_f1);
        }
        Command::Benchmark { config } => {
            let cfg = load_config(Some(&config))?;
            let (Some(pool_path), Some(test_path), Some(labels_path)) = (&cfg.pool, &cfg.test, &cfg.labels) else {
                bail!("benchmark config needs `pool`, `test` and `labels`");
            };
            let label_map = LabelMap::load(labels_path)?;
            let pool = load_docs(pool_path, &label_map)?;
            let test_docs = load_docs(test_path, &label_map)?;
            let needs_lfs = cfg.methods.iter().any(|m| m.uses_lfs());
            let runs = run_benchmark(&cfg, &cfg.methods, &cfg.seeds, |seed| {
                let setup = text_setup(&pool, label_map.num_classes(), &cfg, seed)?;
                let lfs = if needs_lfs { induce_for_split(&setup, &cfg)? } else { Vec::new() };
                text_experiment(&setup, &lfs, &test_docs, &cfg)
            })?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            for run in &runs {
                let name = format!("{}_{}_{}_seed{}.json", run.dataset, run.feature_mode, run.method, run.seed);
                save_run(run, cfg.out_dir.join(name))?;
            }
            let deltas = cfg.methods.contains(&Method::Supervised);
            let table = aggregate_runs(&runs, deltas)?;
            emit_report(&table, ReportFormat::Csv, cfg.out_dir.join("report.csv"))?;
            emit_report(&table, ReportFormat::Markdown, cfg.out_dir.join("report.md"))?;
            print!("{}", table.to_markdown());
        }
        Command::Report { runs, format, out } => {
            let records = load_runs(&runs)?;
            let deltas = records.iter().any(|r| r.method == Method::Supervised);
            let table = aggregate_runs(&records, deltas)?;
            match out {
                Some(path) => emit_report(&table, format, path)?,
                None => print!("{}", table.render(format)?),
            }
        }
    }
    Ok(())
}
