//! Command-line front end: single solves, method comparisons, batch
//! benchmarking, and tableau validation with machine-readable output.
//!
//! Exit codes: 0 success/converged, 2 non-convergence (or failed
//! validation), 3 input error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use sicnm::bench::{
    run_comparison, run_limit_test, with_thread_cap, write_all_traces, BenchReport,
    ExperimentSpec, OptsPatch,
};
use sicnm::caseio::{parse_case, parse_case_json, NetworkCase};
use sicnm::pfcore::{initial_state, PfProblem, StartMode};
use sicnm::solvers::{enforce_q_limits, solve_with, Method, SolveReport};
use sicnm::tableau::{check_order_conditions, rodas3d, rodas4, stability_function};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sicnm",
    version,
    about = "Sparse AC power-flow solvers: Newton-Raphson, continuous-Newton variants, and a semi-implicit Rosenbrock engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case with one method and emit a JSON report
    Run(RunArgs),
    /// Run several methods on one case and print a comparison table
    Compare(CompareArgs),
    /// Execute an experiment spec file (comparison matrix or limit test)
    Bench(BenchArgs),
    /// Print order-condition residuals and damping samples for a tableau
    ValidateTableau(ValidateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StartArg {
    /// angles 0, magnitudes 1
    Flat,
    /// magnitudes and angles from the case tables
    Case,
}

impl From<StartArg> for StartMode {
    fn from(s: StartArg) -> StartMode {
        match s {
            StartArg::Flat => StartMode::Flat,
            StartArg::Case => StartMode::CaseValues,
        }
    }
}

#[derive(Args)]
struct SolverFlags {
    /// Mismatch infinity-norm convergence target
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration budget (accepted steps for the step-controlled engines)
    #[arg(long)]
    max_iter: Option<usize>,
    /// Initial step size for the continuous methods
    #[arg(long)]
    h0: Option<f64>,
    /// Absolute tolerance of the embedded step controller
    #[arg(long)]
    atol: Option<f64>,
    /// Relative tolerance of the embedded step controller
    #[arg(long)]
    rtol: Option<f64>,
    /// Convert limit-violating PV buses to PQ and re-solve
    #[arg(long)]
    enforce_q_limits: bool,
    /// Initial state recipe
    #[arg(long, value_enum, default_value = "case")]
    start: StartArg,
}

impl SolverFlags {
    fn options_for(&self, method: Method) -> sicnm::solvers::SolverOptions {
        let mut o = method.default_options();
        if let Some(v) = self.tol {
            o.tol = v;
        }
        if let Some(v) = self.max_iter {
            o.max_iter = v;
        }
        if let Some(v) = self.h0 {
            o.h0 = v;
        }
        if let Some(v) = self.atol {
            o.atol = v;
        }
        if let Some(v) = self.rtol {
            o.rtol = v;
        }
        o
    }

    fn patch(&self) -> OptsPatch {
        OptsPatch {
            tol: self.tol,
            max_iter: self.max_iter,
            h0: self.h0,
            atol: self.atol,
            rtol: self.rtol,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// MATPOWER .m case file (or .json mirror)
    #[arg(long)]
    case: PathBuf,
    /// Method id: m1, m2, m3, m7-jh, m7-j, m7-j1, m7-j0, m8-rodas4, m8-rodas3d
    #[arg(long, default_value = "m1")]
    method: String,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the per-iteration trace as CSV (plus a JSON series file)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the solve report as JSON (default: stdout)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print per-iteration progress on stderr
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct CompareArgs {
    /// MATPOWER .m case file (or .json mirror)
    #[arg(long)]
    case: PathBuf,
    /// Comma-separated method ids (default: all nine)
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the comparison report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write one trace CSV per method into this directory
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment spec JSON (see the bench module's ExperimentSpec)
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Write the full report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write per-cell trace CSVs into this directory (comparison mode)
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Write the summary table as CSV
    #[arg(long)]
    summary_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Tableau name: rodas3d or rodas4
    name: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::ValidateTableau(args) => cmd_validate_tableau(&args),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn load_case(path: &Path) -> Result<NetworkCase, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().is_some_and(|x| x == "json") {
        parse_case_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        parse_case(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn parse_method(id: &str) -> Result<Method, String> {
    Method::from_id(id).ok_or_else(|| {
        format!("unknown method id `{id}` (expected m1, m2, m3, m7-jh, m7-j, m7-j1, m7-j0, m8-rodas4, m8-rodas3d)")
    })
}

fn report_json(report: &SolveReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).expect("report serialization");
    v.as_object_mut()
        .expect("report is an object")
        .insert("schema".into(), serde_json::json!(1));
    v
}

fn cmd_run(args: &RunArgs) -> Result<u8, String> {
    let method = parse_method(&args.method)?;
    let case = load_case(&args.case)?;
    let opts = args.solver.options_for(method);
    let start: StartMode = args.solver.start.into();

    let report = if args.solver.enforce_q_limits {
        let q = enforce_q_limits(method, &case, &opts, start).map_err(|e| e.to_string())?;
        if args.verbose > 0 {
            for conv in &q.conversions {
                eprintln!(
                    "q-limit: bus {} pinned at {:?} ({:.2} MVAr demanded) in round {}",
                    conv.bus_id, conv.bound, conv.qg_mvar, conv.round
                );
            }
        }
        q.report
    } else {
        let prob = PfProblem::from_case(&case).map_err(|e| e.to_string())?;
        let y0 = initial_state(&prob, &case, start);
        solve_with(method, &prob, &y0, &opts)
    };

    if args.verbose > 0 {
        for e in &report.trace.entries {
            eprintln!(
                "iter {:4}  |g|={:10.3e}  h={:9.3e}  {}",
                e.iter,
                e.err_inf,
                e.h,
                if e.accepted { "accepted" } else { "rejected" }
            );
        }
    }
    if let Some(path) = &args.trace {
        sicnm::bench::emit_trace_csv(&report.trace, &args.method, path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let json = serde_json::to_string_pretty(&report_json(&report)).expect("json");
    match &args.report {
        Some(path) => {
            std::fs::write(path, &json).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => println!("{json}"),
    }
    eprintln!(
        "{}: {} in {} iterations, |g| = {:.3e}, {:.3}s",
        args.method,
        report.status.table_label(),
        report.iterations,
        report.final_mismatch,
        report.wall_time_s
    );
    Ok(if report.converged() { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_compare(args: &CompareArgs) -> Result<u8, String> {
    // surface case problems as input errors before building the matrix
    load_case(&args.case)?;
    let methods: Vec<String> = if args.methods.is_empty() {
        Method::all().iter().map(|m| m.id().to_string()).collect()
    } else {
        for m in &args.methods {
            parse_method(m)?;
        }
        args.methods.clone()
    };
    let mut opts = HashMap::new();
    for m in &methods {
        opts.insert(m.clone(), args.solver.patch());
    }
    let spec = ExperimentSpec {
        cases: vec![args.case.clone()],
        methods,
        opts,
        seed: 0,
        perturb: None,
        start: args.solver.start.into(),
        enforce_q_limits: args.solver.enforce_q_limits,
    };
    let report = run_comparison(&spec);
    print!("{}", report.summary_table());
    if let Some(dir) = &args.trace_dir {
        write_all_traces(&report, dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(EXIT_OK)
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, String> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| format!("{}: {e}", args.spec.display()))?;
    let mut spec = ExperimentSpec::from_json(&text)
        .map_err(|e| format!("{}: {e}", args.spec.display()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let threads = std::env::var("SICNM_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    let report: BenchReport = if spec.perturb.is_some() {
        with_thread_cap(threads, || run_limit_test(&spec))?
    } else {
        with_thread_cap(threads, || run_comparison(&spec))
    };

    if spec.perturb.is_some() {
        println!(
            "{:<14} {:>6} {:>8} {:>12} {:>12}",
            "method", "runs", "rate", "mean iters", "mean time"
        );
        for s in &report.limit_stats {
            println!(
                "{:<14} {:>6} {:>7.1}% {:>12} {:>12}",
                s.method,
                s.runs,
                100.0 * s.convergence_rate,
                s.mean_iterations.map_or("-".into(), |v| format!("{v:.2}")),
                s.mean_time_s.map_or("-".into(), |v| format!("{v:.3}s")),
            );
        }
    } else {
        print!("{}", report.summary_table());
        if let Some(dir) = &args.trace_dir {
            write_all_traces(&report, dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        }
    }
    if let Some(path) = &args.summary_csv {
        std::fs::write(path, report.summary_csv())
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(EXIT_OK)
}

fn cmd_validate_tableau(args: &ValidateArgs) -> Result<u8, String> {
    let tab = match args.name.as_str() {
        "rodas3d" => rodas3d(),
        "rodas4" => rodas4(),
        _ => return Err(format!("unknown tableau `{}` (expected rodas3d or rodas4)", args.name)),
    };
    let res = check_order_conditions(&tab).map_err(|e| e.to_string())?;
    let max = res.iter().cloned().fold(0.0f64, f64::max);
    println!("{tab}");
    println!("order-condition residuals ({}):", res.len());
    for (k, r) in res.iter().enumerate() {
        println!("  [{k:2}] {r:.3e}");
    }
    println!("max residual: {max:.3e}");
    println!("damping samples:");
    let mut r_at_neg_1e8 = f64::INFINITY;
    for exp in [2, 4, 6, 8] {
        let z = -(10f64.powi(exp));
        let r = stability_function(&tab, num_complex::Complex64::new(z, 0.0)).norm();
        println!("  |R(-1e{exp})| = {r:.3e}");
        if exp == 8 {
            r_at_neg_1e8 = r;
        }
    }
    let r_pos = stability_function(&tab, num_complex::Complex64::new(1e8, 0.0)).norm();
    println!("  |R(+1e8)| = {r_pos:.3e}");
    let pass = max <= 1e-12 && r_at_neg_1e8 <= 1e-5;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { EXIT_OK } else { EXIT_NOT_CONVERGED })
}
