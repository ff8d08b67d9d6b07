//! `tent` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tent_core::graph::io::load_dataset;
use tent_core::harness::persist::{self, METRICS_FILE, SUMMARY_FILE};
use tent_core::harness::{eval_record, generate_sbm, meta_train, run_ablation, write_dataset, MetricsEvent, MetricsRecord, SbmParams, TrainConfig, Variant};
use tent_core::{Result, TentError};

#[derive(Parser)]
#[command(name = "tent", version, about = "Task-adaptive few-shot node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stochastic-block-model dataset.
    Gen(GenArgs),
    /// Meta-train a model and evaluate it on novel classes.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on novel classes.
    Eval(EvalArgs),
    /// Train every variant for several seeds on shared task streams.
    Ablate(AblateArgs),
    /// Collect summary.json files under a directory into a CSV table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "sbm-small")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    nodes_per_class: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Class split as `base,val,novel`.
    #[arg(long, value_parser = parse_split)]
    split: Option<(usize, usize, usize)>,
}

/// Run settings shared by `train`, `eval` and `ablate`; flags override the
/// config file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    query: Option<usize>,
    #[arg(long)]
    train_n_way: Option<usize>,
    #[arg(long)]
    train_k_shot: Option<usize>,
    #[arg(long)]
    test_tasks: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of seeds, run as `0..seeds`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_split(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [b, v, n] => Ok((b, v, n)),
        _ => Err("expected base,val,novel".into()),
    }
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| TentError::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            TrainConfig::from_json(&text)
        }
        None => Ok(TrainConfig::default()),
    }
}

impl RunArgs {
    fn config(&self, seed: Option<u64>, variant: Option<Variant>) -> Result<TrainConfig> {
        let mut cfg = read_config(self.config.as_deref())?;
        let ep = &mut cfg.episodes;
        for (flag, slot) in [
            (self.n_way, &mut ep.n_way),
            (self.k_shot, &mut ep.k_shot),
            (self.query, &mut ep.query_size),
            (self.train_n_way, &mut ep.train_n_way),
            (self.train_k_shot, &mut ep.train_k_shot),
            (self.epochs, &mut cfg.epochs),
            (self.test_tasks, &mut cfg.test_tasks),
        ] {
            if let Some(v) = flag {
                *slot = v;
            }
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(v) = variant {
            cfg.variant = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TentError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn gen(args: GenArgs) -> Result<()> {
    let mut p = SbmParams::preset(&args.preset, args.seed)?;
    p.classes = args.classes.unwrap_or(p.classes);
    p.nodes_per_class = args.nodes_per_class.unwrap_or(p.nodes_per_class);
    p.p_in = args.p_in.unwrap_or(p.p_in);
    p.p_out = args.p_out.unwrap_or(p.p_out);
    p.feature_dim = args.dim.unwrap_or(p.feature_dim);
    p.feature_noise = args.noise.unwrap_or(p.feature_noise);
    p.split = args.split.unwrap_or(p.split);
    let (g, split) = generate_sbm(&p)?;
    write_dataset(&args.out, &g, &split)?;
    println!(
        "wrote {} nodes, {} edges, {} classes to {}",
        g.node_count(),
        g.adjacency().undirected_edge_count(),
        p.classes,
        args.out.display()
    );
    Ok(())
}

fn print_record(r: &MetricsRecord) {
    println!(
        "{} seed {}: accuracy {:.4} ± {:.4} over {} tasks",
        r.variant, r.seed, r.test_accuracy_mean, r.test_accuracy_std, r.test_tasks
    );
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.run.config(args.seed, args.variant)?;
    let (g, split) = load_dataset(&args.run.data)?;
    let outcome = meta_train(&g, &split, &cfg)?;
    persist::write_run(&args.run.out, &outcome.model, &outcome.record, &outcome.events)?;
    print_record(&outcome.record);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.run.config(args.seed, args.variant)?;
    let (g, split) = load_dataset(&args.run.data)?;
    let model = persist::load_checkpoint(&args.model)?;
    let record = eval_record(&model, &g, &split, &cfg)?;
    create_dir(&args.run.out)?;
    let events = [
        MetricsEvent::Test {
            accuracy_mean: record.test_accuracy_mean,
            accuracy_std: record.test_accuracy_std,
            tasks: record.test_tasks,
        },
        MetricsEvent::Timing {
            wall_clock_secs: record.wall_clock_secs,
        },
    ];
    persist::write_metrics(&args.run.out.join(METRICS_FILE), &events)?;
    persist::write_summary(&args.run.out.join(SUMMARY_FILE), &record)?;
    print_record(&record);
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.run.config(None, None)?;
    let (g, split) = load_dataset(&args.run.data)?;
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let started = Instant::now();
    let outcomes = run_ablation(&g, &split, &cfg, &Variant::ALL, &seeds)?;
    let mut records = Vec::new();
    for o in &outcomes {
        let dir = args.run.out.join(o.record.variant.name()).join(format!("seed{}", o.record.seed));
        persist::write_run(&dir, &o.model, &o.record, &o.events)?;
        records.push(o.record.clone());
    }
    let csv = persist::render_report(&records);
    let path = args.run.out.join("ablation.csv");
    fs::write(&path, &csv).map_err(|e| TentError::Io { path, source: e })?;
    print!("{csv}");
    for v in Variant::ALL {
        let accs: Vec<f64> = records.iter().filter(|r| r.variant == v).map(|r| r.test_accuracy_mean).collect();
        let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
        println!("{v}: mean accuracy {mean:.4} over {} seeds", accs.len());
    }
    println!("test streams shared across variants; {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn collect_summaries(dir: &Path, out: &mut Vec<MetricsRecord>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| TentError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_summaries(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == SUMMARY_FILE) {
            out.push(persist::read_summary(&p)?);
        }
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    collect_summaries(&args.runs, &mut records)?;
    if records.is_empty() {
        return Err(TentError::Argument(format!("no {SUMMARY_FILE} found under {}", args.runs.display())));
    }
    let csv = persist::render_report(&records);
    match args.out {
        Some(path) => fs::write(&path, csv).map_err(|e| TentError::Io { path, source: e })?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string(), "kind": e.kind() }));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn split_parser() {
        assert_eq!(parse_split("5,5,5").unwrap(), (5, 5, 5));
        assert!(parse_split("5,5").is_err());
    }

    #[test]
    fn model_file_name() {
        assert_eq!(persist::CHECKPOINT_FILE, "model.tentc");
    }
}
