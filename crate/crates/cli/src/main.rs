//! `pnp-tamp`: plan, verify, benchmark and inspect pick-and-place instances.
//!
//! Settings come from an optional JSON config file; command-line flags win
//! over the file, and the file wins over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pnp_tamp::bench::{self, BenchConfig};
use pnp_tamp::par::Exec;
use pnp_tamp::plan::{extract_plan, verify_plan, Plan, VerifyTolerances};
use pnp_tamp::solver::{presolve, solve, Branching, NodeSelection, SolveOptions, SolveStats, SolveStatus};
use pnp_tamp::tamp::{build, BuildReport, Params, Scenario, TampError, Variant};

const EXIT_FAILED: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(name = "pnp-tamp", version, about = "MILP task-and-motion planner for pick-and-place")]
#[command(after_help = "Exit codes: 0 success, 1 verification failure, 2 infeasible, 3 timeout, 4 input error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write the plan.
    Plan(PlanArgs),
    /// Check a plan file against its scenario.
    Verify(VerifyArgs),
    /// Run a randomized variant comparison.
    Bench(BenchArgs),
    /// Build the model and report its size without solving.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ModelFlags {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// JSON file with `params` and `solve` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// baseline, hard or hard_soft.
    #[arg(long)]
    variant: Option<Variant>,
    /// Horizon length in steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Step duration in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Growth rate of the distance weight over the horizon.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct SolveFlags {
    /// Wall-clock limit per solve, seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Relative MIP gap.
    #[arg(long)]
    gap: Option<f64>,
    /// most_fractional or lowest_index.
    #[arg(long, value_parser = parse_snake::<Branching>)]
    branching: Option<Branching>,
    /// best_bound or depth_first.
    #[arg(long, value_parser = parse_snake::<NodeSelection>)]
    node_selection: Option<NodeSelection>,
    /// Branch-and-bound workers; defaults to PNP_TAMP_WORKERS or the core count.
    #[arg(long)]
    workers: Option<usize>,
    /// Let workers race; node counts may then vary between runs.
    #[arg(long)]
    nondeterministic: bool,
    /// Keep LP pricing on one thread.
    #[arg(long)]
    sequential: bool,
    /// Stop after this many nodes.
    #[arg(long)]
    node_limit: Option<u64>,
}

impl SolveFlags {
    fn apply(&self, o: &mut SolveOptions) {
        if let Some(v) = self.time_limit {
            o.time_limit_s = v;
        }
        if let Some(v) = self.gap {
            o.mip_gap = v;
        }
        if let Some(v) = self.branching {
            o.branching = v;
        }
        if let Some(v) = self.node_selection {
            o.node_selection = v;
        }
        if let Some(v) = self.workers {
            o.workers = v;
        }
        if self.nondeterministic {
            o.deterministic = false;
        }
        if self.sequential {
            o.exec = Exec::Sequential;
        }
        if self.node_limit.is_some() {
            o.node_limit = self.node_limit;
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    solve: SolveFlags,
    /// Where to write the plan JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV trace of gripper positions and actions.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench config JSON; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for records.csv, timings.csv and summary.json.
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    n_dlv: Option<usize>,
    /// Fixed horizon instead of the per-delivery rule.
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated horizons to sweep.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Comma-separated variants to run.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    /// Cells solved concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    solve: SolveFlags,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Also write the full model listing here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    params: Params,
    solve: SolveOptions,
}

#[derive(Serialize)]
struct PlanStats<'a> {
    variant: Variant,
    steps: usize,
    status: &'static str,
    objective: f64,
    j_time: f64,
    j_dist: f64,
    j_route: f64,
    completion_step: usize,
    binaries: usize,
    verified: bool,
    solve: &'a SolveStats,
}

#[derive(Serialize)]
struct InspectOutput<'a> {
    report: &'a BuildReport,
    presolved_binaries: Option<usize>,
    variables: usize,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<TampError> for Failure {
    fn from(e: TampError) -> Self {
        let code = match e {
            TampError::InfeasibleScenario(_) => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

fn parse_snake<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let s = Scenario::from_json(&read(path)?).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })?;
    s.validate()?;
    Ok(s)
}

fn resolve(model: &ModelFlags, solve: Option<&SolveFlags>) -> Result<(Scenario, Params, SolveOptions), Failure> {
    let scenario = load_scenario(&model.scenario)?;
    let mut cfg = match &model.config {
        Some(p) => serde_json::from_str::<FileConfig>(&read(p)?).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        None => FileConfig::default(),
    };
    let p = &mut cfg.params;
    if let Some(v) = model.variant {
        p.variant = v;
    }
    if let Some(v) = model.steps {
        p.steps = v;
    }
    if let Some(v) = model.dt {
        p.dt_s = v;
    }
    if let Some(v) = model.alpha {
        p.alpha = v;
    }
    p.validate()?;
    if let Some(f) = solve {
        f.apply(&mut cfg.solve);
    }
    Ok((scenario, cfg.params, cfg.solve))
}

fn cmd_plan(a: &PlanArgs) -> Result<(), Failure> {
    let (scenario, params, opts) = resolve(&a.model, Some(&a.solve))?;
    let (model, layout, report) = build(&scenario, &params)?;
    let (sol, stats) = solve(&model, &opts);
    match sol.status {
        SolveStatus::Infeasible => {
            return Err(Failure { code: EXIT_INFEASIBLE, message: "model is infeasible for this horizon".into() })
        }
        SolveStatus::Timeout => {
            return Err(Failure {
                code: EXIT_TIMEOUT,
                message: format!("no plan found within {} s", opts.time_limit_s),
            })
        }
        _ => {}
    }
    let plan = extract_plan(&sol, &layout, &scenario, &params).map_err(|e| Failure { code: EXIT_FAILED, message: e.to_string() })?;
    let verdict = verify_plan(&plan, &scenario, &params, &VerifyTolerances::default());
    write(&a.out, &plan.to_json())?;
    if let Some(t) = &a.trace {
        let f = fs::File::create(t).map_err(|e| Failure::input(format!("{}: {e}", t.display())))?;
        plan.write_trace(f).map_err(|e| Failure::input(e.to_string()))?;
    }
    let out = PlanStats {
        variant: params.variant,
        steps: params.steps,
        status: sol.status.label(),
        objective: sol.objective,
        j_time: plan.objective.j_time,
        j_dist: plan.objective.j_dist,
        j_route: plan.objective.j_route,
        completion_step: plan.completion_step,
        binaries: report.binaries,
        verified: verdict.passed(),
        solve: &stats,
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("stats serialize"));
    if !verdict.passed() {
        return Err(Failure { code: EXIT_FAILED, message: format!("plan failed verification\n{verdict}") });
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&a.scenario)?;
    let plan = Plan::from_json(&read(&a.plan)?).map_err(|e| Failure::input(format!("{}: {e}", a.plan.display())))?;
    let params = Params { steps: plan.steps, dt_s: plan.dt_s, variant: plan.variant, ..Params::default() };
    let report = verify_plan(&plan, &scenario, &params, &VerifyTolerances::default());
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_FAILED, message: "plan failed verification".into() })
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => BenchConfig::from_json(&read(p)?).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        None => BenchConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.instances {
        cfg.instances = v;
    }
    if let Some(v) = a.n_dlv {
        cfg.n_dlv = v;
    }
    if a.steps.is_some() {
        cfg.steps = a.steps;
    }
    if let Some(v) = &a.sweep {
        cfg.sweep = v.clone();
    }
    if let Some(v) = &a.variants {
        cfg.variants = v.clone();
    }
    if let Some(v) = a.jobs {
        cfg.jobs = v;
    }
    a.solve.apply(&mut cfg.solve);
    cfg.validate().map_err(|e| Failure::input(e.to_string()))?;
    let out = bench::run_benchmark(&cfg).map_err(|e| Failure::input(e.to_string()))?;
    bench::write_outputs(&out, &a.out).map_err(|e| Failure::input(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&out.summary).expect("summary serializes"));
    Ok(())
}

fn cmd_inspect(a: &InspectArgs) -> Result<(), Failure> {
    let (scenario, params, _) = resolve(&a.model, None)?;
    let (model, _, report) = build(&scenario, &params)?;
    let presolved_binaries = presolve(&model).ok().map(|p| p.stats.binaries_after);
    if let Some(path) = &a.dump {
        write(path, &model.to_string())?;
    }
    let out = InspectOutput { report: &report, presolved_binaries, variables: model.num_vars() };
    println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
