//! `pkge` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pkge::checkpoint;
use pkge::config::{ModelKind, RunConfig};
use pkge::eval::{evaluate, report_by_category};
use pkge::experiment::{run_ablation, sweep_csv, sweep_relation_dim, ABLATION_VARIANTS};
use pkge::kg::{categorize_relations, category_counts, CategoryConvention, Split, TripleStore, DEFAULT_CATEGORY_THRESHOLD};
use pkge::train::{train, TrainOptions};
use pkge::Error;

#[derive(Parser)]
#[command(name = "pkge", version, about = "Knowledge graph completion with patch-refinement transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Directory with train.txt, valid.txt and test.txt.
    #[arg(long)]
    dataset: PathBuf,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Run directory for logs, checkpoints and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    eval_batch: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the checkpoint with the best validation MRR.
    Train(RunArgs),
    /// Evaluate a checkpoint with the filtered ranking protocol.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Write report.csv and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CATEGORY_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value = "all-splits")]
        convention: CategoryConvention,
        #[arg(long, default_value_t = 256)]
        eval_batch: usize,
    },
    /// Train the base config and named variants, then print metric deltas.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Variant name, repeatable; `all` runs every variant.
        #[arg(long, required = true)]
        variant: Vec<String>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Validation MRR across relation embedding widths.
    SweepDim {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 500, 1000])]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["patreformer", "transe", "distmult"])]
        models: Vec<ModelKind>,
    },
    /// Dataset statistics table.
    Stats {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Relation category counts for one split.
    Categorize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_CATEGORY_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value = "all-splits")]
        convention: CategoryConvention,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } => 2,
        Error::Mismatch(_) | Error::Checkpoint(_) | Error::Parse { .. } | Error::Lookup { .. } => 3,
        Error::NonFinite(_) => 4,
        _ => 1,
    }
}

fn load_dataset(dir: &Path) -> pkge::Result<TripleStore> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} not found", dir.display())));
    }
    TripleStore::load_dir(dir)
}

fn resolve_config(a: &RunArgs) -> pkge::Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(path) = &a.config {
        c.apply_file(path)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        c.set(k, v)?;
    }
    if let Some(m) = a.model {
        c.model.model = m;
    }
    if let Some(s) = a.seed {
        c.train.seed = s;
    }
    if let Some(e) = a.epochs {
        c.train.epochs = e;
    }
    c.validate()?;
    Ok(c)
}

fn write_out(dir: &Path, name: &str, text: &str) -> pkge::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn options(a: &RunArgs, out: Option<PathBuf>) -> TrainOptions {
    TrainOptions {
        out_dir: out,
        eval_batch: a.eval_batch,
    }
}

fn run(cli: Cli) -> pkge::Result<()> {
    match cli.command {
        Command::Train(a) => {
            let config = resolve_config(&a)?;
            let store = load_dataset(&a.dataset)?;
            let out = train::<f32>(&store, &config, &options(&a, a.out.clone()), |e| {
                eprintln!("{}", e.csv_line());
            })?;
            match out.best_valid_mrr {
                Some(m) => println!("best epoch {} valid MRR {m:.4}", out.best_epoch),
                None => println!("finished {} epochs", out.best_epoch),
            }
            let report = evaluate(&out.model, &store, Split::Test, a.eval_batch, None)?;
            print!("{}", report.to_text());
            if let Some(dir) = &a.out {
                write_out(dir, "report.csv", &report.to_csv())?;
            }
        }
        Command::Eval {
            dataset,
            checkpoint: ckpt,
            split,
            out,
            threshold,
            convention,
            eval_batch,
        } => {
            let store = load_dataset(&dataset)?;
            let (model, header) = checkpoint::load::<f32>(&ckpt)?;
            checkpoint::check_dataset(&header, &store)?;
            let cats = categorize_relations(&store, threshold, convention)?;
            let report = evaluate(&model, &store, split, eval_batch, Some(&cats))?;
            print!("{}", report.to_text());
            println!();
            print!("{}", report_by_category(&[(header.config.model.model.as_str(), &report)]));
            if let Some(dir) = out {
                write_out(&dir, "report.csv", &report.to_csv())?;
                write_out(&dir, "report.txt", &report.to_text())?;
            }
        }
        Command::Ablate { run, variant, split } => {
            let names: Vec<&str> = if variant.iter().any(|v| v == "all") {
                ABLATION_VARIANTS.to_vec()
            } else {
                variant.iter().map(String::as_str).collect()
            };
            let config = resolve_config(&run)?;
            for v in &names {
                pkge::experiment::apply_variant(&config.model, v)?;
            }
            let store = load_dataset(&run.dataset)?;
            let result = run_ablation::<f32>(&store, &config, &names, split, &options(&run, None))?;
            let table = result.table();
            print!("{table}");
            if let Some(dir) = &run.out {
                write_out(dir, "config.txt", &config.to_text())?;
                write_out(dir, "ablation.txt", &table)?;
            }
        }
        Command::SweepDim { run, dims, models } => {
            let config = resolve_config(&run)?;
            for &m in &models {
                for &d in &dims {
                    pkge::experiment::sweep_config(&config, m, d)?;
                }
            }
            let store = load_dataset(&run.dataset)?;
            let rows = sweep_relation_dim::<f32>(&store, &dims, &config, &models, &options(&run, None))?;
            let csv = sweep_csv(&rows);
            print!("{csv}");
            if let Some(dir) = &run.out {
                write_out(dir, "config.txt", &config.to_text())?;
                write_out(dir, "sweep.csv", &csv)?;
            }
        }
        Command::Stats { datasets } => {
            println!("{:<20} {:>9} {:>9} {:>9} {:>7} {:>7}", "dataset", "#ent", "#rel", "#train", "#valid", "#test");
            for dir in datasets {
                let s = load_dataset(&dir)?.stats();
                let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
                println!(
                    "{:<20} {:>9} {:>9} {:>9} {:>7} {:>7}",
                    name, s.entities, s.relations, s.train, s.valid, s.test
                );
            }
        }
        Command::Categorize {
            dataset,
            split,
            threshold,
            convention,
        } => {
            let store = load_dataset(&dataset)?;
            let cats = categorize_relations(&store, threshold, convention)?;
            let counts = category_counts(&store, &cats, split);
            println!("# convention={} threshold={threshold} split={split}", convention.as_str());
            println!("{:<8} {:>10} {:>10}", "category", "relations", "#triples");
            for (c, n) in counts {
                let rels = cats.values().filter(|rc| rc.category == c).count();
                println!("{:<8} {:>10} {:>10}", c.label(), rels, n);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("PKGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
