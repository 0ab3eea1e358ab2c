use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use spacenet::engine::{read_checkpoint, write_checkpoint, Sequence};
use spacenet::experiment::export::{
    concentration_ratio, connection_counts, export_activation_matrix, foreground_mask, grid_pgm,
    grid_text, matrix_csv,
};
use spacenet::experiment::runner::{
    collect_reports, load_tasks, run_naive_with, run_sparse_with, summary_csv, write_report,
    write_timing,
};
use spacenet::experiment::{acc_metric, bwt_metric, Method, RunConfig};

#[derive(Parser)]
#[command(name = "spacenet", version, about = "Class-incremental learning with adaptive sparse connections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Spacenet,
    Static,
    Naive,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Spacenet => Method::Spacenet,
            MethodArg::Static => Method::Static,
            MethodArg::Naive => Method::Naive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Export {
    ConnGrid,
    Activations,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the task sequence and write report.json, accuracy_matrix.csv and a checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Single seed; defaults to every seed listed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "spacenet")]
        method: MethodArg,
        /// Also write a checkpoint after this many tasks.
        #[arg(long)]
        checkpoint_after: Option<usize>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print the accuracy matrix stored in a checkpoint, re-evaluating if a config is given.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write connection grids or activation matrices from a checkpoint.
    Export {
        #[arg(long, value_enum)]
        what: Export,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Needed for activations (test images) and the foreground statistic.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Task whose connections or test images are used; all tasks if omitted.
        #[arg(long)]
        task: Option<usize>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Aggregate every report.json under a directory into summary.csv.
    Metrics {
        #[arg(long)]
        runs: PathBuf,
    },
}

fn fmt_bwt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |b| format!("{b:.2}"))
}

fn run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    method: Method,
    checkpoint_after: Option<usize>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let cfg = RunConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    let tasks = load_tasks(&cfg).context("loading tasks")?;
    let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let root = out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    if resume.is_some() && (seeds.len() != 1 || method == Method::Naive) {
        bail!("--resume needs a single --seed and a sparse method");
    }
    for seed in seeds {
        let dir = root.join(method.as_str()).join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let start = Instant::now();
        let report = match method {
            Method::Naive => run_naive_with(&cfg, seed, &tasks)?,
            _ => {
                let prior = resume.as_ref().map(read_checkpoint).transpose()?;
                let (report, seq) =
                    run_sparse_with(&cfg, seed, method == Method::Spacenet, &tasks, prior, |s: &Sequence| {
                        if Some(s.next_task()) == checkpoint_after {
                            write_checkpoint(dir.join(format!("checkpoint-task{}.json", s.next_task())), s)?;
                        }
                        eprintln!("seed {seed}: task {} done, row {:?}", s.next_task(), s.matrix.final_row().unwrap_or_default());
                        Ok(())
                    })?;
                write_checkpoint(dir.join("checkpoint.json"), &seq)?;
                report
            }
        };
        write_report(&dir, &report)?;
        write_timing(&dir, start.elapsed().as_secs_f64())?;
        println!(
            "{} seed {seed}: ACC {:.2} BWT {} ({})",
            method.as_str(),
            report.acc,
            fmt_bwt(report.bwt),
            dir.display()
        );
    }
    Ok(())
}

fn eval(checkpoint: &Path, config: Option<PathBuf>) -> Result<()> {
    let mut seq = read_checkpoint(checkpoint)?;
    print!("{}", seq.matrix.to_csv());
    println!("ACC {:.2} BWT {}", acc_metric(&seq.matrix).unwrap_or(0.0), fmt_bwt(bwt_metric(&seq.matrix)));
    if let Some(cfg) = config {
        let cfg = RunConfig::load(cfg)?;
        let tasks = load_tasks(&cfg)?;
        seq.state.restore_all_classifiers();
        for t in 0..seq.next_task().min(tasks.len()) {
            println!("task {}: {:.2}", t + 1, seq.state.accuracy(&tasks[t].test)?);
        }
    }
    Ok(())
}

fn export(
    what: Export,
    checkpoint: &Path,
    config: Option<PathBuf>,
    task: Option<usize>,
    samples: usize,
    out: &Path,
) -> Result<()> {
    let mut seq = read_checkpoint(checkpoint)?;
    fs::create_dir_all(out)?;
    let tasks = config.map(|c| RunConfig::load(c).and_then(|c| load_tasks(&c))).transpose()?;
    let shape = seq.state.architecture().input;
    match what {
        Export::ConnGrid => {
            let counts = connection_counts(&seq.state, task)?;
            let (h, w) = if shape.height > 1 { (shape.height, shape.width) } else { (1, counts.len()) };
            let stem = task.map_or("conn-grid-all".to_string(), |t| format!("conn-grid-task{}", t + 1));
            fs::write(out.join(format!("{stem}.txt")), grid_text(&counts, h, w)?)?;
            fs::write(out.join(format!("{stem}.pgm")), grid_pgm(&counts, h, w)?)?;
            println!("total connections: {}", counts.iter().map(|&c| c as u64).sum::<u64>());
            if let Some(tasks) = &tasks {
                let t = task.unwrap_or(0);
                let mask = foreground_mask(&tasks[t].train)?;
                match concentration_ratio(&counts, &mask) {
                    Some(r) => println!("foreground/background mean count ratio: {r:.3}"),
                    None => println!("foreground/background mean count ratio: n/a"),
                }
            }
        }
        Export::Activations => {
            let Some(tasks) = tasks else { bail!("--config is needed to read test images") };
            let t = task.unwrap_or(0);
            seq.state.restore_all_classifiers();
            let ex = export_activation_matrix(&seq.state, &tasks[t].test, samples)?;
            for (l, (m, s)) in ex.layers.iter().zip(&ex.sparsity).enumerate() {
                fs::write(out.join(format!("activations-layer{}.csv", l + 1)), matrix_csv(m))?;
                println!("layer {}: {}x{} sparsity {:.4}", l + 1, m.rows(), m.cols(), s);
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, seed, out, method, checkpoint_after, resume } => {
            run(&config, seed, out, method.into(), checkpoint_after, resume)
        }
        Command::Eval { checkpoint, config } => eval(&checkpoint, config),
        Command::Export { what, checkpoint, config, task, samples, out } => {
            export(what, &checkpoint, config, task, samples, &out)
        }
        Command::Metrics { runs } => {
            let reports = collect_reports(&runs)?;
            if reports.is_empty() {
                bail!("no report.json under {}", runs.display());
            }
            let csv = summary_csv(&reports);
            fs::write(runs.join("summary.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
    }
}
