use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use offline_pricing::analysis::bound_components;
use offline_pricing::experiments::{
    evaluate, replication_dataset, run_regret_sweep, run_suite, optimal_price_table, write_price_table_csv, EvaluationMode,
    ExperimentConfig,
};
use offline_pricing::learners::learn;
use offline_pricing::mdp::action_marginals;
use offline_pricing::simulation::{read_datasets_csv, write_datasets_csv, DatasetManifest};
use offline_pricing::{
    estimate_lambdas, refined_intervals, scenario_behavior, solve_optimal, LearnerOutput, Method, OfflineDataset,
    PricingError, StateDistribution,
};

#[derive(Parser)]
#[command(name = "pricing", version, about = "Offline dynamic pricing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Default)]
struct Common {
    /// Behavior scenario, 1..=5.
    #[arg(long, global = true)]
    scenario: Option<usize>,
    /// Trajectories per dataset.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Replications.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Confidence width multiplier.
    #[arg(long, global = true)]
    c: Option<f64>,
    /// Grid size of the inner demand optimizer.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    eval: Option<Eval>,
    #[arg(long, global = true)]
    mc_rollouts: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON experiment config; its values take precedence over flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exit with code 3 when a method cannot produce a policy.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Eval {
    Exact,
    Mc,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal price table of the true model.
    Solve,
    /// Generate offline datasets.
    Simulate,
    /// Learn a policy from one dataset.
    Learn(DataArgs),
    /// Learn a policy and report its value and regret.
    Evaluate(DataArgs),
    /// Replicated comparison of learners.
    Experiment {
        /// Run scenarios 1..=5 instead of a single one.
        #[arg(long)]
        all: bool,
    },
    /// Mean regret against sample size.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "20,80,320,1280")]
        ns: Vec<usize>,
        #[arg(long, default_value = "refined_pess")]
        method: Method,
    },
    /// Regret bound components for one dataset.
    Bounds(DataArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, default_value = "refined_pess")]
    method: Method,
    /// Dataset CSV written by `simulate`; simulated on the fly when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    replication: usize,
}

fn build_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = common.scenario {
        cfg.scenario = v;
    }
    if let Some(v) = common.n {
        cfg.n = v;
    }
    if let Some(v) = common.reps {
        cfg.replications = v;
    }
    if let Some(v) = common.c {
        cfg.c = v;
    }
    if let Some(v) = common.grid {
        cfg.grid = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.eval {
        cfg.evaluation = match v {
            Eval::Exact => EvaluationMode::Exact,
            Eval::Mc => EvaluationMode::Mc,
        };
    }
    if let Some(v) = common.mc_rollouts {
        cfg.mc_rollouts = v;
    }
    cfg.out = common.out.clone();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = ExperimentConfig::from_json(&text)?;
        if cfg.out.is_none() {
            cfg.out = common.out.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_dataset(cfg: &ExperimentConfig, args: &DataArgs) -> Result<OfflineDataset> {
    let m = &cfg.model;
    match &args.data {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let mut all = read_datasets_csv(file, m.prices(), m.horizon(), m.max_inventory())?;
            all.remove(&args.replication)
                .ok_or_else(|| PricingError::InvalidInput(format!("no replication {} in file", args.replication)).into())
        }
        None => Ok(replication_dataset(cfg, &scenario_behavior(m, cfg.scenario)?, args.replication)?),
    }
}

fn learn_one(cfg: &ExperimentConfig, args: &DataArgs) -> Result<(OfflineDataset, LearnerOutput)> {
    let data = load_dataset(cfg, args)?;
    let out = learn(args.method, &data, cfg.bounds_for(&data)?, &cfg.learner_config())?;
    Ok((data, out))
}

fn solve(cfg: &ExperimentConfig) -> Result<()> {
    let table = optimal_price_table(cfg);
    let sol = solve_optimal(&cfg.model);
    let mut stdout = io::stdout().lock();
    write!(stdout, "{:>4}", "x")?;
    for t in 1..=cfg.model.horizon() {
        write!(stdout, "{:>6}", format!("t{t}"))?;
    }
    writeln!(stdout)?;
    for (i, row) in table.iter().enumerate() {
        write!(stdout, "{:>4}", i + 1)?;
        for p in row {
            write!(stdout, "{p:>6}")?;
        }
        writeln!(stdout)?;
    }
    writeln!(stdout, "optimal value from full stock: {:.6}", sol.v.get(0, cfg.model.max_inventory()))?;
    if let Some(dir) = &cfg.out {
        write_price_table_csv(&table, create(dir, "optimal_prices.csv")?)?;
    }
    Ok(())
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let behavior = scenario_behavior(&cfg.model, cfg.scenario)?;
    let datasets = (0..cfg.replications)
        .map(|r| replication_dataset(cfg, &behavior, r).map(|d| (r, d)))
        .collect::<offline_pricing::Result<Vec<_>>>()?;
    match &cfg.out {
        Some(dir) => {
            write_datasets_csv(create(dir, "datasets.csv")?, &datasets)?;
            let manifest = DatasetManifest {
                seed: cfg.seed,
                scenario: Some(cfg.scenario),
                n: cfg.n,
                horizon: cfg.model.horizon(),
                replications: cfg.replications,
            };
            serde_json::to_writer_pretty(create(dir, "manifest.json")?, &manifest)?;
            println!("wrote {} datasets to {}", datasets.len(), dir.display());
        }
        None => write_datasets_csv(io::stdout().lock(), &datasets)?,
    }
    Ok(())
}

fn learn_cmd(cfg: &ExperimentConfig, args: &DataArgs) -> Result<()> {
    let (data, out) = learn_one(cfg, args)?;
    let cap = cfg.model.max_inventory();
    println!("method: {}", out.method);
    println!("estimated value from full stock: {:.6}", out.v.get(0, cap));
    for t in 0..cfg.model.horizon() {
        let prices: Vec<String> = (0..=cap)
            .map(|x| out.policy.action(t, x).map_or("-".into(), |a| cfg.model.price(a).to_string()))
            .collect();
        println!("t{}: {}", t + 1, prices.join(" "));
    }
    if let Some(dir) = &cfg.out {
        out.write_policy_csv(create(dir, "policy.csv")?)?;
        out.write_q_csv(create(dir, "q.csv")?)?;
        out.write_values_csv(create(dir, "values.csv")?)?;
        if out.lambda_choice.is_some() {
            out.write_lambda_csv(create(dir, "lambda.csv")?)?;
        }
        if out.regret.is_some() {
            out.write_regret_csv(create(dir, "regret.csv")?)?;
        }
        let set = refined_intervals(&estimate_lambdas(&data, cfg.c)?, cfg.bounds_for(&data)?);
        set.write_csv(create(dir, "intervals.csv")?)?;
    }
    Ok(())
}

fn evaluate_cmd(cfg: &ExperimentConfig, args: &DataArgs) -> Result<()> {
    let (_, out) = learn_one(cfg, args)?;
    let start = StateDistribution::point_mass(cfg.model.max_inventory(), cfg.model.max_inventory());
    let optimal = offline_pricing::evaluate_policy_exact(&cfg.model, &solve_optimal(&cfg.model).policy, &start)?;
    let (value, se) = evaluate(cfg, &out.policy, args.replication)?;
    println!("method: {}", out.method);
    match se {
        Some(se) => println!("value: {value:.6} (standard error {se:.6})"),
        None => println!("value: {value:.6}"),
    }
    println!("optimal: {:.6}", optimal.expected);
    println!("regret: {:.6}", optimal.expected - value);
    Ok(())
}

fn experiment(cfg: &ExperimentConfig, all: bool, strict: bool) -> Result<ExitCode> {
    let scenarios: Vec<usize> = if all { (1..=5).collect() } else { vec![cfg.scenario] };
    let res = run_suite(cfg, &scenarios)?;
    println!(
        "{:<9} {:<14} {:>5} {:>7} {:>11} {:>9} {:>11}",
        "scenario", "method", "runs", "failed", "mean", "se", "regret"
    );
    for s in &res.summary {
        println!(
            "{:<9} {:<14} {:>5} {:>7} {:>11.4} {:>9.4} {:>11.4}",
            s.scenario, s.method, s.runs, s.failed, s.mean, s.std_error, s.mean_regret
        );
    }
    println!("optimal value: {:.4}", res.optimal_value);
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        res.write_dir(dir)?;
    }
    let failed: usize = res.summary.iter().map(|s| s.failed).sum();
    if strict && failed > 0 {
        eprintln!("error: {failed} learner runs could not produce a policy");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(cfg: &ExperimentConfig, ns: &[usize], method: Method) -> Result<()> {
    let res = run_regret_sweep(cfg, ns, method)?;
    println!("{:>8} {:>12} {:>10} {:>8}", "n", "regret", "se", "match");
    for p in &res.points {
        println!("{:>8} {:>12.6} {:>10.6} {:>8.3}", p.n, p.mean_regret, p.std_error, p.optimal_match);
    }
    println!("log-log slope: {:.4}", res.slope);
    println!("strictly decreasing: {}", res.strictly_decreasing());
    if let Some(dir) = &cfg.out {
        res.write_csv(create(dir, "sweep.csv")?)?;
    }
    Ok(())
}

fn bounds(cfg: &ExperimentConfig, args: &DataArgs) -> Result<()> {
    let data = load_dataset(cfg, args)?;
    let m = &cfg.model;
    let start = StateDistribution::point_mass(m.max_inventory(), m.max_inventory());
    let opt = action_marginals(m, &solve_optimal(m).policy, &start)?;
    let beh = action_marginals(m, &scenario_behavior(m, cfg.scenario)?, &start)?;
    let report = bound_components(m, &data, &opt, &beh, cfg.c)?;
    println!("{}", report.to_json()?);
    if let Some(dir) = &cfg.out {
        create(dir, "bounds.json")?.write_all(report.to_json()?.as_bytes())?;
        report.write_eta_csv(create(dir, "eta.csv")?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match build_config(&cli.common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: invalid config: {e:#}");
            return Ok(ExitCode::from(2));
        }
    };
    let strict = cli.common.strict;
    let outcome = match &cli.command {
        Command::Solve => solve(&cfg),
        Command::Simulate => simulate(&cfg),
        Command::Learn(a) => learn_cmd(&cfg, a),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a),
        Command::Experiment { all } => return experiment(&cfg, *all, strict),
        Command::Sweep { ns, method } => sweep(&cfg, ns, *method),
        Command::Bounds(a) => bounds(&cfg, a),
    };
    match outcome {
        Err(e) if !strict && matches!(e.downcast_ref(), Some(PricingError::Unlearnable { .. })) => {
            eprintln!("warning: {e}");
            Ok(ExitCode::SUCCESS)
        }
        other => other.map(|()| ExitCode::SUCCESS),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<PricingError>() {
        Some(PricingError::Unlearnable { .. }) => 3,
        Some(PricingError::InvalidInput(_) | PricingError::Json(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
