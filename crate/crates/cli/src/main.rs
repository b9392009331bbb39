//! `grouptest`: generate designs, run simulations and sweeps, and inspect
//! thresholds, disguised items and the exhaustive decoder.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grouptest_core::decoders::{enumerate_consistent_sets_capped, map_oracle_decode_capped, DecoderKind};
use grouptest_core::designs::{bernoulli_design, individual_design, near_constant_design, DesignKind, DEFAULT_BERNOULLI_NU};
use grouptest_core::disguise::{
    aldridge_avg_check, construct_set, disguise_report, very_present_items, ReportMode, ScoreMode,
};
use grouptest_core::harness::{
    converse_experiment, grid_base, parse_t_grid, render, to_json, with_threads, ConverseConfig, DesignConfig,
    Experiment, ExperimentConfig, OutputConfig, OutputFormat, PriorConfig, RelativeTo, TValues,
};
use grouptest_core::thresholds::{
    c_p_exact, calligraphic_l, converse_budget, d_star, dd_params, optimal_tests, t_star, DEFAULT_XI,
};
use grouptest_core::{stream, Error, OutcomeVector, Result, TestDesign};
use serde_json::json;

#[derive(Parser)]
#[command(name = "grouptest", version, about = "Non-adaptive group testing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test design utilities.
    Design {
        #[command(subcommand)]
        action: DesignAction,
    },
    /// Run Monte Carlo trials at one test budget.
    Simulate(SimulateArgs),
    /// Run Monte Carlo trials over a grid of test budgets.
    Sweep(SweepArgs),
    /// Print threshold quantities as JSON.
    Bounds(BoundsArgs),
    /// Disguise analysis of a design file.
    Disguise(DisguiseArgs),
    /// Exhaustive decoding of one outcome vector.
    Oracle(OracleArgs),
    /// Count disguised items in constructed independent sets.
    Converse(ConverseArgs),
}

#[derive(Subcommand)]
enum DesignAction {
    /// Draw a random design and write it as a matrix file.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    kind: DesignKind,
    #[arg(long)]
    n: usize,
    #[arg(long = "T")]
    t: Option<usize>,
    /// Sparsity the design is tuned for.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment config; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// `iid:P`, `comb:K` or `coupled:K`.
    #[arg(long)]
    prior: Option<PriorConfig>,
    #[arg(long)]
    design: Option<DesignKind>,
    /// Sparsity the design is tuned for (defaults to the prior mean).
    #[arg(long)]
    design_k: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    /// Matrix file for `--design file`.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    decoder: Option<DecoderKind>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Reuse one design for every trial at a given T.
    #[arg(long)]
    fixed_design: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long = "T")]
    t: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `LO:HI:STEP`, scaled by `--relative-to`.
    #[arg(long)]
    t_grid: Option<String>,
    #[arg(long, default_value = "abs")]
    relative_to: RelativeTo,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: f64,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_XI)]
    xi: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Test budget for the DD schedule (defaults to ceil(t_star)).
    #[arg(long = "T")]
    t: Option<usize>,
}

#[derive(Args)]
struct DisguiseArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = DEFAULT_XI)]
    xi: f64,
    /// Exact per-item probabilities and exact extraction scores.
    #[arg(long)]
    exact: bool,
    /// Monte Carlo trials when `--exact` is off.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Outcome string such as `0110`.
    #[arg(long)]
    outcomes: String,
    /// `iid:P` or `comb:K`.
    #[arg(long)]
    prior: PriorConfig,
    /// Most possibly-defective items to enumerate over.
    #[arg(long, default_value_t = grouptest_core::decoders::DEFAULT_ENUMERATION_CAP)]
    cap: usize,
}

#[derive(Args)]
struct ConverseArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: f64,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value = "ncc")]
    design: DesignKind,
    #[arg(long)]
    design_k: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_XI)]
    xi: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Print every trial, not just the aggregates.
    #[arg(long)]
    per_trial: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Design { action: DesignAction::Gen(args) } => design_gen(args),
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
        Command::Bounds(args) => bounds(args),
        Command::Disguise(args) => disguise(args),
        Command::Oracle(args) => oracle(args),
        Command::Converse(args) => converse(args),
    }
}

fn write_output(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", to_json(value)?);
    Ok(())
}

fn design_gen(args: GenArgs) -> Result<()> {
    let mut rng = stream::from_seed(args.seed);
    let need_t = || args.t.ok_or_else(|| Error::InvalidParameter(format!("--T is required for {} designs", args.kind.name())));
    let need_k = || args.k.ok_or_else(|| Error::InvalidParameter(format!("--k is required for {} designs", args.kind.name())));
    let design = match args.kind {
        DesignKind::Ncc => near_constant_design(args.n, need_t()?, need_k()?, &mut rng)?,
        DesignKind::Bernoulli => {
            bernoulli_design(args.n, need_t()?, need_k()?, args.nu.unwrap_or(DEFAULT_BERNOULLI_NU), &mut rng)?
        }
        DesignKind::Individual => {
            if args.t.is_some_and(|t| t != args.n) {
                return Err(Error::InvalidParameter("individual design has T = n".into()));
            }
            individual_design(args.n)?
        }
        DesignKind::File => return Err(Error::InvalidParameter("`file` is not a generator kind".into())),
    };
    design.write_matrix(&args.out)
}

/// Builds a config from `--config` and flags; flags win.
fn build_config(run: &RunArgs, t_values: Option<TValues>) -> Result<ExperimentConfig> {
    let missing = |flag: &str| Error::InvalidParameter(format!("--{flag} is required without --config"));
    let mut config = match &run.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig {
            n: run.n.ok_or_else(|| missing("n"))?,
            prior: run.prior.ok_or_else(|| missing("prior"))?,
            design: DesignConfig::new(run.design.ok_or_else(|| missing("design"))?),
            decoder: run.decoder.unwrap_or(DecoderKind::Dd),
            t_values: t_values.clone().ok_or_else(|| missing("T"))?,
            trials: run.trials.ok_or_else(|| missing("trials"))?,
            master_seed: run.seed.unwrap_or(0),
            xi: None,
            epsilon: None,
            output: None,
            fixed_design: false,
        },
    };
    if let Some(n) = run.n {
        config.n = n;
    }
    if let Some(prior) = run.prior {
        config.prior = prior;
    }
    if let Some(kind) = run.design {
        config.design.kind = kind;
    }
    if run.design_k.is_some() {
        config.design.k = run.design_k;
    }
    if run.nu.is_some() {
        config.design.nu = run.nu;
    }
    if run.matrix.is_some() {
        config.design.path = run.matrix.clone();
    }
    if let Some(decoder) = run.decoder {
        config.decoder = decoder;
    }
    if let Some(t) = t_values {
        config.t_values = t;
    }
    if let Some(trials) = run.trials {
        config.trials = trials;
    }
    if let Some(seed) = run.seed {
        config.master_seed = seed;
    }
    if run.xi.is_some() {
        config.xi = run.xi;
    }
    if run.epsilon.is_some() {
        config.epsilon = run.epsilon;
    }
    config.fixed_design |= run.fixed_design;
    if run.format.is_some() || run.out.is_some() {
        let mut output = config.output.take().unwrap_or(OutputConfig { path: None, format: OutputFormat::Csv });
        if let Some(format) = run.format {
            output.format = format;
        }
        if run.out.is_some() {
            output.path = run.out.clone();
        }
        config.output = Some(output);
    }
    Ok(config)
}

fn execute(config: ExperimentConfig, threads: Option<usize>) -> Result<()> {
    let experiment = Experiment::new(config)?;
    let result = with_threads(threads, || experiment.sweep())?;
    let output = experiment.config.output.clone().unwrap_or(OutputConfig { path: None, format: OutputFormat::Csv });
    write_output(&render(&result, output.format)?, output.path.as_deref())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = build_config(&args.run, args.t.map(TValues::Single))?;
    execute(config, args.run.threads)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let grid = match &args.t_grid {
        Some(spec) => {
            // The grid base needs n and the prior, which may come from the config.
            let partial = build_config(&args.run, Some(TValues::Grid(Vec::new())))?;
            let base = grid_base(args.relative_to, partial.n, &partial.prior)?;
            Some(TValues::Grid(parse_t_grid(spec, base)?))
        }
        None => None,
    };
    let config = build_config(&args.run, grid)?;
    execute(config, args.run.threads)
}

fn bounds(args: BoundsArgs) -> Result<()> {
    let n = args.n as f64;
    let ts = t_star(n, args.k)?;
    let num_tests = args.t.unwrap_or(ts.ceil() as usize);
    let (d, d_value) = d_star();
    let mut out = json!({
        "n": args.n,
        "k": args.k,
        "t_star": ts,
        "optimal_tests": optimal_tests(n, args.k)?,
        "d_star": { "argmax": d, "value": d_value },
        "dd_params": dd_params(args.n, args.k, num_tests, args.epsilon)?,
    });
    if let Some(p) = args.p {
        let l = calligraphic_l(p, args.n)?;
        let cp = c_p_exact(p, args.n)?;
        out["p"] = json!(p);
        out["L"] = json!({ "value": l.value, "argmin": l.argmin });
        out["c_p"] = json!(cp);
        out["converse_budget"] = json!(converse_budget(n, p, args.xi, cp)?);
        out["xi"] = json!(args.xi);
    }
    print_json(&out)
}

fn disguise(args: DisguiseArgs) -> Result<()> {
    let design = TestDesign::read_matrix(&args.matrix)?;
    let mode = if args.exact { ScoreMode::Exact } else { ScoreMode::ProductBound };
    let extraction = construct_set(&design, args.p, args.xi, mode)?;
    let report_mode = if args.exact {
        ReportMode::Exact { p: args.p }
    } else {
        ReportMode::MonteCarlo { p: args.p, trials: args.trials, seed: args.seed }
    };
    let report = disguise_report(&extraction.reference_design(&design), report_mode, Some(&extraction.w))?;
    let aldridge = match aldridge_avg_check(&design, args.p) {
        Ok(check) => json!(check),
        Err(Error::MustCleanFirst { count, first }) => json!({ "skipped": format!("{count} test(s) below size 2, first {first}") }),
        Err(e) => return Err(e),
    };
    print_json(&json!({
        "n": design.num_items(),
        "T": design.num_tests(),
        "p": args.p,
        "xi": args.xi,
        "very_present": very_present_items(&design, args.xi),
        "construct_set": extraction,
        "report": report,
        "aldridge": aldridge,
    }))
}

fn oracle(args: OracleArgs) -> Result<()> {
    let design = TestDesign::read_matrix(&args.matrix)?;
    let outcomes = OutcomeVector::from_bits(&args.outcomes)?;
    let prior = args.prior.prior();
    prior.validate(design.num_items())?;
    let cardinality = match prior {
        grouptest_core::Prior::Combinatorial { k } => Some(k),
        grouptest_core::Prior::Iid { .. } => None,
    };
    let sets = enumerate_consistent_sets_capped(&design, &outcomes, cardinality, args.cap)?;
    let map = match map_oracle_decode_capped(&design, &outcomes, &prior, args.cap) {
        Ok(r) => Some(r.estimate),
        Err(Error::Infeasible) => None,
        Err(e) => return Err(e),
    };
    print_json(&json!({ "consistent_sets": sets, "count": sets.len(), "map_estimate": map }))
}

fn converse(args: ConverseArgs) -> Result<()> {
    let config = ConverseConfig {
        n: args.n,
        p: args.p,
        design: DesignConfig { kind: args.design, nu: args.nu, k: args.design_k, path: None },
        num_tests: args.t,
        trials: args.trials,
        master_seed: args.seed,
        xi: args.xi,
        epsilon: args.epsilon,
        score_mode: if args.exact { ScoreMode::Exact } else { ScoreMode::ProductBound },
    };
    let mut report = with_threads(args.threads, || converse_experiment(&config))?;
    if !args.per_trial {
        report.per_trial.clear();
    }
    print_json(&report)
}
