//! Command-line driver: corpus generation, fold preparation, training,
//! prediction, evaluation and reporting.

pub mod commands;
pub mod settings;

use std::fs;
use std::path::PathBuf;

use casematch_core::config::Component;
use casematch_core::synth::SyntheticSpec;
use casematch_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::RunContext;

#[derive(Debug, Parser)]
#[command(name = "casematch", version, about = "Interpretable similar-case matching")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

/// Options selecting the run configuration and directory.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Overrides one config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Shorthand for `--set corpus=PATH`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,

    /// Run directory name; defaults to a hash of the config.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Module {
    Fsi,
    Matcher,
    Aligner,
    All,
}

impl Module {
    fn components(self) -> Vec<Component> {
        match self {
            Module::Fsi => vec![Component::Fsi],
            Module::Matcher => vec![Component::Matcher],
            Module::Aligner => vec![Component::Aligner],
            Module::All => Component::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic corpus as JSONL.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// TOML generator spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Splits the corpus into folds and writes per-fold training sets.
    Prepare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Trains heads for one fold or all folds.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, value_enum, default_value_t = Module::All)]
        module: Module,
        /// Runs folds on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Runs the trained pipeline over test pairs.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        parallel: bool,
    },
    /// Scores fold predictions, or a prediction file against a gold file.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, conflicts_with_all = ["predictions", "gold"])]
        fold: Option<usize>,
        #[arg(long, requires = "gold")]
        predictions: Option<PathBuf>,
        #[arg(long, requires = "predictions")]
        gold: Option<PathBuf>,
        /// Report directory for file mode; defaults to the current one.
        #[arg(long, requires = "predictions")]
        out: Option<PathBuf>,
    },
    /// Aggregates fold reports into the run report.
    Report {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn run_context(global: &RunArgs) -> anyhow::Result<RunContext> {
    let mut overrides = global.overrides.clone();
    if let Some(c) = &global.corpus {
        overrides.push(format!("corpus={}", toml_string(&c.to_string_lossy())));
    }
    if let Some(d) = &global.output_dir {
        overrides.push(format!("output_dir={}", toml_string(&d.to_string_lossy())));
    }
    let config = settings::load_config(global.config.as_deref(), &overrides)?;
    let ctx = RunContext::new(config, global.run_id.as_deref());
    log::info!("run directory {}", ctx.layout.root.display());
    Ok(ctx)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn load_spec(path: Option<&std::path::Path>) -> anyhow::Result<SyntheticSpec> {
    let Some(path) = path else {
        return Ok(SyntheticSpec::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    Ok(spec)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { out, spec, n_pairs, seed } => {
            let mut spec = load_spec(spec.as_deref())?;
            if let Some(n) = n_pairs {
                spec.n_pairs = n;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let n = commands::generate_corpus(&spec, &out)?;
            println!("wrote {n} pairs to {}", out.display());
        }
        Command::Prepare { run } => {
            let ctx = run_context(&run)?;
            let splits = commands::prepare(&ctx)?;
            println!("prepared {} folds in {}", splits.len(), ctx.layout.root.display());
        }
        Command::Train { run, fold, module, parallel } => {
            let ctx = run_context(&run)?;
            let manifests = commands::train(&ctx, fold, &module.components(), parallel)?;
            for m in manifests {
                let names: Vec<String> = m.components.keys().map(|c| c.to_string()).collect();
                println!("fold {}: heads {}", m.fold_id, names.join(", "));
            }
        }
        Command::Predict { run, fold, parallel } => {
            let ctx = run_context(&run)?;
            let folds: Vec<usize> = fold.map_or_else(|| (0..ctx.config.k_folds).collect(), |f| vec![f]);
            let summaries = commands::predict(&ctx, fold, parallel)?;
            for (f, s) in folds.iter().zip(summaries) {
                println!(
                    "fold {f}: {} pairs, {} fallback selections, {} conflicts resolved",
                    s.n_pairs, s.fallback_count, s.resolution_count
                );
            }
        }
        Command::Evaluate { fold, predictions: Some(p), gold: Some(g), out, .. } => {
            debug_assert!(fold.is_none());
            let out = out.unwrap_or_else(|| PathBuf::from("."));
            let report = commands::evaluate_files(&p, &g, &out)?;
            print!("{}", report.summary_table());
        }
        Command::Evaluate { run, fold, .. } => {
            let ctx = run_context(&run)?;
            let reports = commands::evaluate_run(&ctx, fold)?;
            for r in &reports {
                print!("{}", r.summary_table());
            }
            if fold.is_none() {
                let run_report = fs::read_to_string(ctx.layout.root.join("report.txt"))
                    .map_err(|e| Error::io(ctx.layout.root.join("report.txt"), e))?;
                print!("{run_report}");
            }
        }
        Command::Report { run } => {
            let ctx = run_context(&run)?;
            print!("{}", commands::report(&ctx)?.summary_table());
        }
    }
    Ok(())
}

/// 1 for input validation failures, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}
