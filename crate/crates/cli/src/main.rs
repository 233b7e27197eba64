//! `feudal`: train, evaluate and compare feudal graph policies on the snake.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use feudal_core::env::write_trajectory;
use feudal_core::harness::{
    derive_seed, diagonal_trend, evaluate, evaluate_random, file_header, load_checkpoint, plot,
    policy_trajectory, random_search, train, transfer_matrix, write_eval_csv, Agent, Checkpoint,
    ExperimentConfig, Pairing, SearchSpace, TrainOptions, EVAL_SEED,
};
use feudal_core::{MorphologyFile, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "feudal",
    version,
    about = "Feudal graph policies trained with CMA-ES on a planar snake"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with the dual CMA-ES loop.
    Train(TrainArgs),
    /// Evaluate a checkpoint over seeded episodes.
    Evaluate(EvaluateArgs),
    /// Zero-shot transfer matrix across limb counts.
    Transfer(TransferArgs),
    /// Random search over step size and hidden width.
    Search(SearchArgs),
    /// Smoothed learning curves from a training run.
    Plot(PlotArgs),
}

/// Flags that override fields of the experiment config.
#[derive(Args, Debug, Clone, Default)]
struct SharedArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// feudgraph, feuddeepset or deepsetmlp.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    limbs: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    /// Population size of both optimizers.
    #[arg(long)]
    popsize: Option<usize>,
    /// Initial step size of both optimizers.
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    episodes_per_candidate: Option<usize>,
    /// Evaluation threads.
    #[arg(long)]
    parallel: Option<usize>,
    /// Reject actions outside [-1, 1] instead of clamping them.
    #[arg(long)]
    strict_actions: bool,
    /// JSON morphology with pooling levels for the configured limb count.
    #[arg(long)]
    morphology: Option<PathBuf>,
    /// index-aligned or random-seeded.
    #[arg(long)]
    pairing: Option<Pairing>,
}

impl SharedArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = Some(v.clone());
        }
        if let Some(v) = self.variant {
            cfg.policy.variant = v;
        }
        if let Some(v) = self.limbs {
            cfg.env.limb_count = v;
        }
        if let Some(v) = self.generations {
            cfg.generations = v;
        }
        if let Some(v) = self.popsize {
            cfg.popsize = v;
        }
        if let Some(v) = self.sigma0 {
            cfg.sigma0_manager = v;
            cfg.sigma0_worker = v;
        }
        if let Some(v) = self.episodes_per_candidate {
            cfg.episodes_per_candidate = v;
        }
        if let Some(v) = self.parallel {
            cfg.parallel = v;
        }
        if self.strict_actions {
            cfg.env.strict_actions = true;
        }
        if let Some(path) = &self.morphology {
            cfg.morphology = Some(MorphologyFile::load(path)?);
        }
        if let Some(v) = self.pairing {
            cfg.pairing = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Continue from `<out>/checkpoint.json` if present.
    #[arg(long)]
    resume: bool,
    /// Stop after this many completed generations (resumable).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint file, or a run directory containing `checkpoint.json`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate on a different limb count.
    #[arg(long)]
    limbs: Option<usize>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Directory for `eval.csv`; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also evaluate freshly sampled random parameters as a baseline.
    #[arg(long)]
    random_baseline: bool,
    /// Seed of the random baseline's parameter draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the body trajectory of the first evaluation episode to this CSV.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TransferArgs {
    /// Directory holding one run per training limb count as `n<N>/checkpoint.json`.
    #[arg(long)]
    runs: PathBuf,
    /// Training limb counts, e.g. `3..7` or `3,5,7`.
    #[arg(long, default_value = "3..7")]
    train_limbs: LimbList,
    /// Test limb counts.
    #[arg(long, default_value = "3..7")]
    test_limbs: LimbList,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Train runs that are missing, using the shared flags.
    #[arg(long)]
    train_missing: bool,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[arg(long, default_value_t = 10)]
    budget: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma0_min: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma0_max: f64,
    /// Candidate hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    widths: Vec<usize>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Run directory containing `checkpoint.json`.
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
struct LimbList(Vec<usize>);

impl std::str::FromStr for LimbList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_limbs(s).map(LimbList)
    }
}

/// `a..b` (inclusive) or a comma-separated list.
fn parse_limbs(s: &str) -> Result<Vec<usize>, String> {
    let bad = |_| format!("invalid limb list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (
            a.trim().parse().map_err(bad)?,
            b.trim().parse().map_err(bad)?,
        );
        if a > b {
            return Err(format!("empty limb range `{s}`"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(bad))
        .collect()
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("checkpoint.json")
    } else {
        p.to_path_buf()
    }
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.shared.resolve()?;
    let out = cfg
        .out_dir
        .get_or_insert_with(|| PathBuf::from("runs/train"))
        .clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let resolved = serde_json::to_string_pretty(&cfg)?;
    std::fs::write(out.join("config.json"), resolved + "\n")?;
    let ck = train(
        &cfg,
        &TrainOptions {
            resume: args.resume,
            stop_after: args.stop_after,
        },
    )?;
    if let Some(last) = ck.records.last() {
        println!(
            "generation {}: best R_M {:.4}, mean R_M {:.4}, {} evaluations",
            last.generation, last.best_manager_return, last.mean_manager_return, last.evaluations
        );
    }
    if let Some(best) = &ck.best {
        println!(
            "best pair so far: R_M {:.4}, R_W {:.4} (generation {})",
            best.manager_return, best.worker_return, best.generation
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let path = checkpoint_path(&args.checkpoint);
    let ck = load_checkpoint(&path)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&out)?;
    let report = evaluate(&ck, args.limbs, args.episodes, args.parallel)?;
    let csv = out.join(match args.limbs {
        Some(n) => format!("eval_n{n}.csv"),
        None => "eval.csv".into(),
    });
    write_eval_csv(&csv, &report, &ck.config_hash)?;
    println!(
        "{} limbs, {} episodes: mean R_M {:.4} +/- {:.4} (std {:.4}), mean R_W {:.4}",
        report.limbs,
        report.episodes(),
        report.mean_manager_return,
        report.stderr_manager_return,
        report.std_manager_return,
        report.mean_worker_return
    );
    if args.random_baseline {
        let mut cfg = ck.config.clone();
        cfg.env.limb_count = report.limbs;
        if args.limbs.is_some() {
            cfg.morphology = None;
        }
        let random = evaluate_random(&cfg, args.episodes, args.seed, args.parallel)?;
        write_eval_csv(&out.join("eval_random.csv"), &random, &ck.config_hash)?;
        let se = report
            .stderr_manager_return
            .hypot(random.stderr_manager_return);
        println!(
            "random baseline: mean R_M {:.4} +/- {:.4}; difference {:.1} standard errors",
            random.mean_manager_return,
            random.stderr_manager_return,
            (report.mean_manager_return - random.mean_manager_return) / se
        );
    }
    if let Some(traj) = &args.trajectory {
        let limbs = report.limbs;
        let agent = Agent::for_limbs(&ck.config, limbs)?;
        let (manager, worker) = ck.policy_params();
        let rows = policy_trajectory(
            &agent,
            manager.as_slice(),
            worker.as_slice(),
            derive_seed(EVAL_SEED, &[0]),
        )?;
        let f = File::create(traj).with_context(|| format!("creating {}", traj.display()))?;
        write_trajectory(
            BufWriter::new(f),
            &rows,
            Some(&file_header(&ck.config_hash)),
        )?;
        println!("wrote trajectory {}", traj.display());
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn run_transfer(args: &TransferArgs) -> Result<()> {
    let mut cks: BTreeMap<usize, Checkpoint> = BTreeMap::new();
    for &n in &args.train_limbs.0 {
        let dir = args.runs.join(format!("n{n}"));
        let path = dir.join("checkpoint.json");
        if !path.exists() {
            if !args.train_missing {
                bail!(
                    "missing {} (pass --train-missing to train it)",
                    path.display()
                );
            }
            let mut cfg = args.shared.resolve()?;
            cfg.env.limb_count = n;
            cfg.out_dir = Some(dir.clone());
            log::info!("training {n}-limb run in {}", dir.display());
            train(&cfg, &TrainOptions::default())?;
        }
        cks.insert(n, load_checkpoint(&path)?);
    }
    let parallel = args.shared.parallel.unwrap_or(1);
    let m = transfer_matrix(
        &cks,
        &args.train_limbs.0,
        &args.test_limbs.0,
        args.episodes,
        parallel,
    )?;
    let out = args.shared.out.clone().unwrap_or_else(|| args.runs.clone());
    std::fs::create_dir_all(&out)?;
    m.write_csv(&out.join("transfer.csv"))?;
    m.write_html(&out.join("transfer.html"))?;
    print!("train\\test");
    for t in &m.test_limbs {
        print!("{t:>10}");
    }
    println!();
    for (n, row) in m.train_limbs.iter().zip(&m.cells) {
        print!("{n:>10}");
        for v in row {
            print!("{v:>10.3}");
        }
        println!();
    }
    let (near, rows) = diagonal_trend(&m);
    println!("best test morphology within one limb of training in {near}/{rows} rows");
    println!("wrote {}", out.join("transfer.csv").display());
    Ok(())
}

fn run_search(args: &SearchArgs) -> Result<()> {
    let mut base = args.shared.resolve()?;
    let out = base
        .out_dir
        .take()
        .unwrap_or_else(|| PathBuf::from("runs/search"));
    std::fs::create_dir_all(&out)?;
    let space = SearchSpace {
        sigma0_min: args.sigma0_min,
        sigma0_max: args.sigma0_max,
        hidden_widths: args.widths.clone(),
    };
    let ledger = out.join("search.csv");
    let trials = random_search(&space, args.budget, &base, base.seed, Some(&ledger))?;
    println!(
        "{:>5} {:>10} {:>6} {:>12}",
        "trial", "sigma0", "width", "final best"
    );
    for t in &trials {
        println!(
            "{:>5} {:>10.4} {:>6} {:>12.4}",
            t.index, t.sigma0, t.hidden_width, t.final_best_manager_return
        );
    }
    println!("ledger {}", ledger.display());
    Ok(())
}

fn run_plot(args: &PlotArgs) -> Result<()> {
    let ck = load_checkpoint(&checkpoint_path(&args.run))?;
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    let files = plot(&ck.records, &out, &ck.config_hash)?;
    println!("wrote {} and {}", files.csv.display(), files.svg.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Transfer(a) => run_transfer(a),
        Command::Search(a) => run_search(a),
        Command::Plot(a) => run_plot(a),
    }
}
