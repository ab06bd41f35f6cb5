//! Deterministic experiment harness: method-comparison matrices over case
//! files, randomized limit tests with seeded perturbations, and CSV/JSON
//! trace emission.
//!
//! The (case, method, run) matrix is embarrassingly parallel. With the
//! `parallel` feature (default) cells run on rayon; per-run RNG streams are
//! derived from (master seed, run index), so execution order never affects
//! the results and a report is byte-identical across thread counts apart
//! from wall-clock fields.

use crate::caseio::{parse_case, parse_case_json, NetworkCase};
use crate::pfcore::{initial_state, PfProblem, StartMode, StateVector};
use crate::solvers::{
    enforce_q_limits, solve_with, Counters, IterationTrace, Method, SolveStatus, SolverOptions,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Randomized-start protocol: perturb the starting angles of a random
/// subset of non-slack buses with clipped normal deviations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub fraction_of_buses: f64,
    pub angle_range_rad: [f64; 2],
    pub runs: usize,
    pub iter_cap: usize,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        PerturbSpec {
            fraction_of_buses: 0.5,
            angle_range_rad: [-0.005, 0.005],
            runs: 100,
            iter_cap: 40,
        }
    }
}

/// Per-method option overrides for a spec file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptsPatch {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub h0: Option<f64>,
    pub atol: Option<f64>,
    pub rtol: Option<f64>,
}

impl OptsPatch {
    fn apply(&self, mut o: SolverOptions) -> SolverOptions {
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
}

fn default_start() -> StartMode {
    StartMode::CaseValues
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub cases: Vec<PathBuf>,
    pub methods: Vec<String>,
    #[serde(default)]
    pub opts: HashMap<String, OptsPatch>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub perturb: Option<PerturbSpec>,
    #[serde(default = "default_start")]
    pub start: StartMode,
    #[serde(default)]
    pub enforce_q_limits: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if let Some(p) = &spec.perturb {
            if p.runs < 1 {
                return Err("perturb.runs must be >= 1".into());
            }
            if !(p.fraction_of_buses > 0.0 && p.fraction_of_buses <= 1.0) {
                return Err("perturb.fraction_of_buses must be in (0, 1]".into());
            }
        }
        Ok(spec)
    }
}

/// One (case, method) cell of the comparison matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub case: String,
    pub method: String,
    pub status: Option<SolveStatus>,
    pub error: Option<String>,
    pub iterations: usize,
    pub final_mismatch: f64,
    pub wall_time_s: f64,
    pub counters: Counters,
    #[serde(skip)]
    pub trace: IterationTrace,
}

impl CellResult {
    /// Table-style label: iteration count with wall time for converged
    /// cells, the divergence taxonomy otherwise.
    pub fn table_cell(&self) -> String {
        match (&self.status, &self.error) {
            (Some(SolveStatus::Converged), _) => {
                format!("{}({:.2}s)", self.iterations, self.wall_time_s)
            }
            (Some(s), _) => s.table_label().to_string(),
            (None, Some(e)) => format!("err: {e}"),
            (None, None) => "?".into(),
        }
    }
}

/// One run of the limit test for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub case: String,
    pub method: String,
    pub run: usize,
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// Aggregates over the limit-test runs of one (case, method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitStats {
    pub case: String,
    pub method: String,
    pub runs: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    /// means over the converged runs only
    pub mean_iterations: Option<f64>,
    pub mean_time_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: u32,
    pub seed: u64,
    pub cells: Vec<CellResult>,
    pub runs: Vec<RunRecord>,
    pub limit_stats: Vec<LimitStats>,
}

impl BenchReport {
    /// Zero out the hardware-dependent fields; what remains must be
    /// identical across reruns with the same spec and seed.
    pub fn zero_wall_times(&mut self) {
        for c in &mut self.cells {
            c.wall_time_s = 0.0;
        }
        for r in &mut self.runs {
            r.wall_time_s = 0.0;
        }
        for s in &mut self.limit_stats {
            s.mean_time_s = s.mean_time_s.map(|_| 0.0);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Aligned text table, one row per method and one column per case.
    pub fn summary_table(&self) -> String {
        let mut cases: Vec<&str> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !cases.contains(&c.case.as_str()) {
                cases.push(&c.case);
            }
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
        }
        let cell = |case: &str, method: &str| {
            self.cells
                .iter()
                .find(|c| c.case == case && c.method == method)
                .map(|c| c.table_cell())
                .unwrap_or_default()
        };
        let mut widths: Vec<usize> = methods.iter().map(|m| m.len()).collect();
        for (k, m) in methods.iter().enumerate() {
            for case in &cases {
                widths[k] = widths[k].max(cell(case, m).len());
            }
        }
        let case_w = cases.iter().map(|c| c.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        out.push_str(&format!("{:case_w$}", "case"));
        for (k, m) in methods.iter().enumerate() {
            out.push_str(&format!("  {:>w$}", m, w = widths[k]));
        }
        out.push('\n');
        for case in &cases {
            out.push_str(&format!("{case:case_w$}"));
            for (k, m) in methods.iter().enumerate() {
                out.push_str(&format!("  {:>w$}", cell(case, m), w = widths[k]));
            }
            out.push('\n');
        }
        out
    }

    /// The same summary as CSV.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("case,method,status,iterations,wall_time_s,g_evals,j_evals,hz_evals,lu_facts\n");
        for c in &self.cells {
            let status = match (&c.status, &c.error) {
                (Some(s), _) => s.table_label().to_string(),
                (None, Some(e)) => format!("error: {}", e.replace(',', ";")),
                _ => "?".into(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.case,
                c.method,
                status,
                c.iterations,
                c.wall_time_s,
                c.counters.g_evals,
                c.counters.j_evals,
                c.counters.hz_evals,
                c.counters.lu_facts
            ));
        }
        out
    }
}

fn load_case(path: &Path) -> Result<(String, NetworkCase), String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let case = if path.extension().is_some_and(|x| x == "json") {
        parse_case_json(&text).map_err(|e| format!("{}: {e}", path.display()))?
    } else {
        parse_case(&text).map_err(|e| format!("{}: {e}", path.display()))?
    };
    let name = if case.name.is_empty() {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        case.name.clone()
    };
    Ok((name, case))
}

fn map_cells<T: Sync, U: Send>(items: &[T], parallel: bool, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            return items.par_iter().map(&f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(&f).collect()
}

/// Run `f` inside a rayon pool capped at `threads` workers (used by the CLI
/// to honor `SICNM_THREADS`). Without the `parallel` feature, or with
/// `threads = None`, runs `f` directly.
pub fn with_thread_cap<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool construction");
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

fn solver_options_for(spec: &ExperimentSpec, method_id: &str, method: Method) -> SolverOptions {
    let base = method.default_options();
    match spec.opts.get(method_id) {
        Some(patch) => patch.apply(base),
        None => base,
    }
}

fn comparison_cell(
    spec: &ExperimentSpec,
    case_name: &str,
    case: &NetworkCase,
    method_id: &str,
) -> CellResult {
    let error_cell = |msg: String| CellResult {
        case: case_name.to_string(),
        method: method_id.to_string(),
        status: None,
        error: Some(msg),
        iterations: 0,
        final_mismatch: f64::NAN,
        wall_time_s: 0.0,
        counters: Counters::default(),
        trace: IterationTrace::default(),
    };
    let Some(method) = Method::from_id(method_id) else {
        return error_cell(format!("unknown method id `{method_id}`"));
    };
    let opts = solver_options_for(spec, method_id, method);
    let report = if spec.enforce_q_limits {
        match enforce_q_limits(method, case, &opts, spec.start) {
            Ok(q) => q.report,
            Err(e) => return error_cell(e.to_string()),
        }
    } else {
        let prob = match PfProblem::from_case(case) {
            Ok(p) => p,
            Err(e) => return error_cell(e.to_string()),
        };
        let y0 = initial_state(&prob, case, spec.start);
        solve_with(method, &prob, &y0, &opts)
    };
    CellResult {
        case: case_name.to_string(),
        method: method_id.to_string(),
        status: Some(report.status),
        error: None,
        iterations: report.iterations,
        final_mismatch: report.final_mismatch,
        wall_time_s: report.wall_time_s,
        counters: report.counters,
        trace: report.trace,
    }
}

fn run_comparison_impl(spec: &ExperimentSpec, parallel: bool) -> BenchReport {
    let loaded: Vec<Result<(String, NetworkCase), String>> =
        spec.cases.iter().map(|p| load_case(p)).collect();
    let mut tasks: Vec<(usize, String)> = Vec::new();
    for ci in 0..loaded.len() {
        for m in &spec.methods {
            tasks.push((ci, m.clone()));
        }
    }
    let cells = map_cells(&tasks, parallel, |(ci, method_id)| match &loaded[*ci] {
        Ok((name, case)) => comparison_cell(spec, name, case, method_id),
        Err(msg) => CellResult {
            case: spec.cases[*ci].display().to_string(),
            method: method_id.clone(),
            status: None,
            error: Some(msg.clone()),
            iterations: 0,
            final_mismatch: f64::NAN,
            wall_time_s: 0.0,
            counters: Counters::default(),
            trace: IterationTrace::default(),
        },
    });
    BenchReport { schema: 1, seed: spec.seed, cells, runs: Vec::new(), limit_stats: Vec::new() }
}

/// Run every method on every case with the standard comparison protocol.
/// Per-cell failures are recorded in the report, never aborting the matrix.
pub fn run_comparison(spec: &ExperimentSpec) -> BenchReport {
    run_comparison_impl(spec, true)
}

/// Sequential variant of [`run_comparison`] (also what the parallel variant
/// degrades to without the `parallel` feature). Results are identical.
pub fn run_comparison_seq(spec: &ExperimentSpec) -> BenchReport {
    run_comparison_impl(spec, false)
}

/// Clipped-normal angle perturbation for one run, derived deterministically
/// from (seed, run index).
fn perturbed_start(
    prob: &PfProblem,
    case: &NetworkCase,
    start: StartMode,
    p: &PerturbSpec,
    seed: u64,
    run: usize,
) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64 + 1);
    let mut y = initial_state(prob, case, start);
    let n = prob.idx.n_buses();
    let mut candidates: Vec<usize> = (0..n).filter(|&b| b != prob.idx.slack).collect();
    let pick = ((candidates.len() as f64) * p.fraction_of_buses).floor() as usize;
    let pick = pick.clamp(1, candidates.len());
    // partial Fisher-Yates
    for i in 0..pick {
        let j = i + (rng.next_u64() as usize) % (candidates.len() - i);
        candidates.swap(i, j);
    }
    let [lo, hi] = p.angle_range_rad;
    let sigma = (hi - lo) / 4.0;
    for &bus in &candidates[..pick] {
        let dev = (sigma * standard_normal(&mut rng)).clamp(lo, hi);
        if let Some(c) = prob.idx.theta_col(bus) {
            y.data[c] += dev;
        }
    }
    y
}

/// Box-Muller standard normal draw.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

fn run_limit_impl(spec: &ExperimentSpec, parallel: bool) -> Result<BenchReport, String> {
    let perturb = spec.perturb.clone().ok_or("limit test needs a `perturb` section")?;
    let loaded: Vec<(String, NetworkCase, PfProblem)> = spec
        .cases
        .iter()
        .map(|p| {
            let (name, case) = load_case(p)?;
            let prob = PfProblem::from_case(&case).map_err(|e| e.to_string())?;
            Ok((name, case, prob))
        })
        .collect::<Result<_, String>>()?;

    let mut tasks: Vec<(usize, usize, String)> = Vec::new();
    for ci in 0..loaded.len() {
        for run in 0..perturb.runs {
            for m in &spec.methods {
                tasks.push((ci, run, m.clone()));
            }
        }
    }
    let records = map_cells(&tasks, parallel, |(ci, run, method_id)| {
        let (name, case, prob) = &loaded[*ci];
        let Some(method) = Method::from_id(method_id) else {
            return RunRecord {
                case: name.clone(),
                method: method_id.clone(),
                run: *run,
                status: None,
                iterations: 0,
                wall_time_s: 0.0,
            };
        };
        let mut opts = solver_options_for(spec, method_id, method);
        // the limit protocol pins the initial step and the iteration budget
        opts.h0 = 0.1;
        opts.max_iter = perturb.iter_cap;
        let y0 = perturbed_start(prob, case, spec.start, &perturb, spec.seed, *run);
        let report = solve_with(method, prob, &y0, &opts);
        RunRecord {
            case: name.clone(),
            method: method_id.clone(),
            run: *run,
            status: Some(report.status),
            iterations: report.iterations,
            wall_time_s: report.wall_time_s,
        }
    });

    let mut limit_stats = Vec::new();
    for (name, _, _) in &loaded {
        for m in &spec.methods {
            let of_method: Vec<&RunRecord> =
                records.iter().filter(|r| &r.case == name && &r.method == m).collect();
            let converged: Vec<&&RunRecord> = of_method
                .iter()
                .filter(|r| r.status == Some(SolveStatus::Converged))
                .collect();
            let n_conv = converged.len();
            limit_stats.push(LimitStats {
                case: name.clone(),
                method: m.clone(),
                runs: of_method.len(),
                converged: n_conv,
                convergence_rate: n_conv as f64 / of_method.len().max(1) as f64,
                mean_iterations: (n_conv > 0).then(|| {
                    converged.iter().map(|r| r.iterations as f64).sum::<f64>() / n_conv as f64
                }),
                mean_time_s: (n_conv > 0).then(|| {
                    converged.iter().map(|r| r.wall_time_s).sum::<f64>() / n_conv as f64
                }),
            });
        }
    }
    Ok(BenchReport { schema: 1, seed: spec.seed, cells: Vec::new(), runs: records, limit_stats })
}

/// Randomized limit test: `runs` perturbed starts per case, every method on
/// the same perturbed start, iteration budget `iter_cap`, initial step 0.1.
/// Fully deterministic given the spec's seed.
pub fn run_limit_test(spec: &ExperimentSpec) -> Result<BenchReport, String> {
    run_limit_impl(spec, true)
}

/// Sequential variant of [`run_limit_test`]; identical results.
pub fn run_limit_test_seq(spec: &ExperimentSpec) -> Result<BenchReport, String> {
    run_limit_impl(spec, false)
}

/// Write one trace as CSV (`iter,err_inf,h,accepted`) plus a plotting-
/// neutral JSON series file next to it (same stem, `.json` extension).
pub fn emit_trace_csv(trace: &IterationTrace, name: &str, path: &Path) -> std::io::Result<()> {
    let mut csv = String::from("iter,err_inf,h,accepted\n");
    for e in &trace.entries {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e.iter,
            e.err_inf,
            e.h,
            if e.accepted { 1 } else { 0 }
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(csv.as_bytes())?;

    let points: Vec<serde_json::Value> = trace
        .entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "iter": e.iter,
                "err_inf": e.err_inf,
                "h": e.h,
                "accepted": e.accepted,
            })
        })
        .collect();
    let series = serde_json::json!({ "name": name, "points": points });
    let json_path = path.with_extension("json");
    let mut jf = std::fs::File::create(json_path)?;
    jf.write_all(serde_json::to_string_pretty(&series).expect("series json").as_bytes())?;
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Write one `<case>__<method>.csv` (+ `.json`) per comparison cell into
/// `dir`; returns the CSV paths written.
pub fn write_all_traces(report: &BenchReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for cell in &report.cells {
        if cell.trace.is_empty() && cell.status.is_none() {
            continue;
        }
        let name = format!("{}__{}", sanitize(&cell.case), sanitize(&cell.method));
        let path = dir.join(format!("{name}.csv"));
        emit_trace_csv(&cell.trace, &name, &path)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_validation() {
        let ok = r#"{"cases": ["a.m"], "methods": ["m1"], "seed": 7}"#;
        let spec = ExperimentSpec::from_json(ok).unwrap();
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.start, StartMode::CaseValues);

        let bad = r#"{"cases": [], "methods": [], "perturb":
            {"fraction_of_buses": 0.0, "angle_range_rad": [-1, 1], "runs": 10, "iter_cap": 4}}"#;
        assert!(ExperimentSpec::from_json(bad).is_err());
    }

    #[test]
    fn standard_normal_is_deterministic_per_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        a.set_stream(3);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        b.set_stream(3);
        for _ in 0..16 {
            assert_eq!(standard_normal(&mut a), standard_normal(&mut b));
        }
        let mut c = ChaCha8Rng::seed_from_u64(42);
        c.set_stream(4);
        assert_ne!(standard_normal(&mut a), standard_normal(&mut c));
    }

    #[test]
    fn unknown_method_is_an_error_cell_not_a_panic() {
        let spec = ExperimentSpec {
            cases: vec![],
            methods: vec!["m99".into()],
            opts: HashMap::new(),
            seed: 0,
            perturb: None,
            start: StartMode::Flat,
            enforce_q_limits: false,
        };
        let report = run_comparison_seq(&spec);
        assert!(report.cells.is_empty());
    }

    #[test]
    fn missing_case_file_is_recorded() {
        let spec = ExperimentSpec {
            cases: vec![PathBuf::from("/nonexistent/case999.m")],
            methods: vec!["m1".into()],
            opts: HashMap::new(),
            seed: 0,
            perturb: None,
            start: StartMode::Flat,
            enforce_q_limits: false,
        };
        let report = run_comparison_seq(&spec);
        assert_eq!(report.cells.len(), 1);
        assert!(report.cells[0].error.as_ref().unwrap().contains("case999.m"));
    }
}
