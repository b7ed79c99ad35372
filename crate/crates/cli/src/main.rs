//! `cmoment` — command-line front end for the moment-SOS pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;

use cmoment::certify::{extract_atoms, extract_sos, CertKind, Certificate, MomentTable, MomentTableJson};
use cmoment::interchange;
use cmoment::multiorder::{declared_optimal, solve_global, IterRecord, LoopParams, Termination};
use cmoment::opf::{build_opf_pop, parse_case, preprocess, PreprocessOptions};
use cmoment::pop::{parse_pop, pop_to_json, Field, Pop};
use cmoment::relaxation::{add_sphere_slack, assemble_with, hermitian_to_real, FlowMode, RelaxOptions, SdpProblem};
use cmoment::sdp::{solve_sdp, SdpOptions, SdpSolution, SdpStatus};
use cmoment::sparsity::{analyze, CliquePlan};
use cmoment::Error;

const SOLVER_ENV: &str = "CMOMENT_SOLVER";

#[derive(Parser)]
#[command(name = "cmoment", version, about = "Complex and real moment-SOS hierarchies")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a polynomial optimization problem given as JSON.
    Solve(SolveArgs),
    /// Solve an optimal power flow case (MATPOWER format).
    Opf(OpfArgs),
    /// Report the sparsity graph, cliques and constraint assignment.
    Analyze(AnalyzeArgs),
    /// Re-run the certificate checks on a saved moment table.
    Certify(CertifyArgs),
}

#[derive(Args, Serialize, Clone)]
struct RelaxArgs {
    /// Relaxation order (defaults to the lowest admissible one).
    #[arg(long)]
    order: Option<u32>,
    /// Use the chordal (clique) decomposition instead of one dense clique.
    #[arg(long)]
    sparse: bool,
    /// Escalate per-constraint orders from mismatches until certified.
    #[arg(long)]
    multi_order: bool,
    /// Apply the balanced/even zero mask when the problem admits one.
    #[arg(long)]
    symmetry: bool,
    /// Impose hyponormality blocks up to moment order `t`.
    #[arg(long, value_name = "T")]
    hypo_strengthen: Option<u32>,
    /// How order-one cliques handle quartic constraints.
    #[arg(long, value_enum, default_value_t = FlowArg::Auto)]
    flow_mode: FlowArg,
    /// `internal` or `file:<path>` (problem written to <path>, solution read from <path>.sol.json).
    #[arg(long, env = SOLVER_ENV, default_value = "internal")]
    solver: String,
    /// Mismatch tolerance for --multi-order.
    #[arg(long)]
    eps: Option<f64>,
    /// Largest mismatches escalated per iteration.
    #[arg(long, default_value_t = 2)]
    h: usize,
    /// Maximum spread between the largest and smallest order.
    #[arg(long, default_value_t = 2)]
    delta: u32,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Write the JSON run report here.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Print the JSON report instead of the human summary.
    #[arg(long)]
    json: bool,
    /// Stream multi-order iteration records as JSON lines.
    #[arg(long, value_name = "PATH")]
    history: Option<PathBuf>,
    /// Print solver progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args, Serialize)]
struct SolveArgs {
    problem: PathBuf,
    /// Add a slack variable and the sphere |z|² + |s|² = R².
    #[arg(long, value_name = "R")]
    slack: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    relax: RelaxArgs,
}

#[derive(Args, Serialize)]
struct OpfArgs {
    case: PathBuf,
    /// Solve the real (rectangular-coordinate) formulation.
    #[arg(long)]
    real: bool,
    /// Merge buses joined by branches with |r + jx| below this (p.u.).
    #[arg(long)]
    min_impedance: Option<f64>,
    /// Raise branch resistances to at least this (p.u.).
    #[arg(long)]
    min_resistance: Option<f64>,
    /// Minimize total losses instead of generation cost.
    #[arg(long)]
    loss: bool,
    /// Also write the polynomial problem as JSON (for `certify`).
    #[arg(long, value_name = "PATH")]
    write_problem: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    relax: RelaxArgs,
}

#[derive(Args, Serialize)]
struct AnalyzeArgs {
    problem: PathBuf,
    /// Per-constraint order applied uniformly (defaults to each constraint's lowest).
    #[arg(long)]
    order: Option<u32>,
}

#[derive(Args, Serialize)]
struct CertifyArgs {
    /// Moment table, or a run report carrying one.
    moments: PathBuf,
    problem: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(ValueEnum, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum FlowArg {
    Auto,
    Riesz,
    Schur,
}

impl From<FlowArg> for FlowMode {
    fn from(f: FlowArg) -> Self {
        match f {
            FlowArg::Auto => FlowMode::Auto,
            FlowArg::Riesz => FlowMode::Riesz,
            FlowArg::Schur => FlowMode::Schur,
        }
    }
}

// ---- report ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Outcome {
    Certified,
    DeclaredOptimal,
    BoundOnly,
    Infeasible,
    Unbounded,
    InputError,
    NumericalFailure,
}

impl Outcome {
    fn code(self) -> u8 {
        match self {
            Outcome::Certified | Outcome::DeclaredOptimal => 0,
            Outcome::BoundOnly => 2,
            Outcome::Infeasible | Outcome::Unbounded => 3,
            Outcome::InputError => 4,
            Outcome::NumericalFailure => 5,
        }
    }
}

fn classify(e: &Error) -> Outcome {
    match e {
        Error::Infeasible => Outcome::Infeasible,
        Error::Unbounded => Outcome::Unbounded,
        Error::NumericalFailure(_)
        | Error::IterationLimit(_)
        | Error::NoProgress
        | Error::DegenerateClique(_)
        | Error::CommutationFailure(_)
        | Error::StitchFailure
        | Error::IdentityResidualTooLarge(_) => Outcome::NumericalFailure,
        Error::MaxItersExceeded { .. } => Outcome::BoundOnly,
        _ => Outcome::InputError,
    }
}

#[derive(Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct SdpSummary {
    status: SdpStatus,
    solver: String,
    iterations: usize,
    primal_obj: f64,
    dual_obj: f64,
    residuals: cmoment::sdp::Residuals,
    num_vars: usize,
    block_sizes: Vec<usize>,
}

#[derive(Serialize, Default)]
struct Timings {
    total_seconds: f64,
    iteration_seconds: Vec<f64>,
}

#[derive(Serialize)]
struct RunReport {
    tool: Tool,
    command: &'static str,
    config: serde_json::Value,
    status: Outcome,
    exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sdp: Option<SdpSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<Certificate>,
    /// Reported point as `[re, im]` pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective_at_point: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_violation: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    history: Vec<IterRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    moments: Option<MomentTableJson>,
    timings: Timings,
}

impl RunReport {
    fn new(command: &'static str, config: serde_json::Value) -> Self {
        RunReport {
            tool: Tool { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") },
            command,
            config,
            status: Outcome::BoundOnly,
            exit_code: 2,
            error: None,
            bound: None,
            sdp: None,
            certificate: None,
            point: None,
            objective_at_point: None,
            max_violation: None,
            history: vec![],
            labels: None,
            moments: None,
            timings: Timings::default(),
        }
    }

    fn set(&mut self, o: Outcome) {
        self.status = o;
        self.exit_code = o.code();
    }

    fn fail(&mut self, e: &Error) {
        self.set(classify(e));
        self.error = Some(e.to_string());
        if let Error::MaxItersExceeded { bound, .. } = e {
            self.bound = Some(*bound);
        }
    }

    fn set_point(&mut self, pop: &Pop, z: &[Complex64]) {
        self.point = Some(z.iter().map(|v| [v.re, v.im]).collect());
        self.objective_at_point = pop.objective_value(z).ok();
        self.max_violation = pop.max_violation(z).ok();
    }
}

// ---- solving ----

enum Solver {
    Internal,
    File(PathBuf),
}

fn parse_solver(s: &str) -> Result<Solver, Error> {
    match s {
        "internal" => Ok(Solver::Internal),
        _ => match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(Solver::File(PathBuf::from(p))),
            _ => Err(Error::InvalidInput(format!("unknown solver `{s}` (expected internal or file:<path>)"))),
        },
    }
}

fn solution_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".sol.json");
    PathBuf::from(s)
}

fn run_solver(solver: &Solver, emb: &SdpProblem, opts: &SdpOptions) -> Result<(SdpSolution, String), Error> {
    match solver {
        Solver::Internal => Ok((solve_sdp(emb, opts)?, "internal".into())),
        Solver::File(path) => {
            std::fs::write(path, interchange::write_problem(emb)?)?;
            let sol_path = solution_path(path);
            let text = std::fs::read_to_string(&sol_path).map_err(|_| {
                Error::InvalidInput(format!(
                    "wrote {}; solve it externally and place the solution at {}",
                    path.display(),
                    sol_path.display()
                ))
            })?;
            Ok((interchange::read_solution(emb, &text)?, format!("file:{}", path.display())))
        }
    }
}

fn relax_options(a: &RelaxArgs) -> RelaxOptions {
    RelaxOptions {
        symmetry: a.symmetry,
        flow_mode: a.flow_mode.into(),
        hypo_strengthen: a.hypo_strengthen,
        ..Default::default()
    }
}

fn sdp_options(a: &RelaxArgs) -> SdpOptions {
    SdpOptions { verbose: a.verbose, ..Default::default() }
}

/// Single relaxation at one (uniform) order.
fn solve_fixed(pop: &Pop, a: &RelaxArgs, rep: &mut RunReport) -> Result<(), Error> {
    let solver = parse_solver(&a.solver)?;
    let d = a.order.unwrap_or_else(|| pop.d_min());
    let plan = if a.sparse {
        let orders: Vec<u32> = (0..pop.constraints.len()).map(|i| d.max(pop.k_constraint(i))).collect();
        CliquePlan::sparse(pop, &orders)?
    } else {
        CliquePlan::dense(pop, d)?
    };
    let sdp = assemble_with(pop, &plan, &relax_options(a))?;
    let emb = hermitian_to_real(&sdp);
    let (sol, name) = run_solver(&solver, &emb, &sdp_options(a))?;
    rep.sdp = Some(SdpSummary {
        status: sol.status,
        solver: name,
        iterations: sol.iterations,
        primal_obj: sol.primal_obj,
        dual_obj: sol.dual_obj,
        residuals: sol.residuals.clone(),
        num_vars: emb.num_vars,
        block_sizes: sdp.psd_blocks().map(|b| b.size).collect(),
    });
    match sol.status {
        SdpStatus::Infeasible => return Err(Error::Infeasible),
        SdpStatus::Unbounded => return Err(Error::Unbounded),
        _ => {}
    }
    rep.bound = Some(sol.primal_obj);
    let table = MomentTable::from_solution(&sdp, &sol.y);
    rep.moments = Some(table.to_json());
    let mut cert = match extract_atoms(&table, pop) {
        Ok(c) => c,
        Err(e) => Certificate::none(vec![], vec![e.to_string()]),
    };
    if sol.block_duals.iter().any(|b| b.is_some()) {
        match extract_sos(&sdp, &emb, &sol) {
            Ok(s) => cert.sos = Some(s),
            Err(e) => cert.diagnostics.push(format!("sos: {e}")),
        }
    }
    if cert.kind != CertKind::None && !cert.atoms.is_empty() {
        rep.set(Outcome::Certified);
        rep.set_point(pop, &cert.atoms[0].point.clone());
    } else {
        rep.set(Outcome::BoundOnly);
    }
    rep.certificate = Some(cert);
    Ok(())
}

fn solve_multi(pop: &Pop, a: &RelaxArgs, default_eps: Option<f64>, rep: &mut RunReport) -> Result<(), Error> {
    if !matches!(parse_solver(&a.solver)?, Solver::Internal) {
        return Err(Error::InvalidInput("--multi-order runs with the internal solver only".into()));
    }
    let params = LoopParams {
        eps: a.eps.or(default_eps),
        h: a.h,
        delta_max_min: a.delta,
        max_iters: a.max_iters,
        relax: relax_options(a),
        sdp: sdp_options(a),
    };
    let mut stream = match &a.history {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };
    let mut records = vec![];
    let verbose = a.verbose;
    let out = solve_global(pop, &params, |r| {
        if verbose {
            eprintln!(
                "iter {:>2}  bound {:>14.6}  max mismatch {:>10}  raised {:?}",
                r.iteration,
                r.bound,
                r.max_mismatch.map_or("-".into(), |m| format!("{m:.3e}")),
                r.incremented
            );
        }
        if let Some(f) = stream.as_mut() {
            use std::io::Write;
            let _ = writeln!(f, "{}", serde_json::to_string(r).unwrap_or_default());
        }
        records.push(r.clone());
    });
    rep.timings.iteration_seconds = records.iter().map(|r| r.seconds).collect();
    rep.history = records
        .into_iter()
        .map(|mut r| {
            r.seconds = 0.0;
            r
        })
        .collect();
    let out = out?;
    rep.bound = Some(out.bound);
    rep.set_point(pop, &out.point);
    let eps = params.eps.unwrap_or(1e-4 * (1.0 + out.bound.abs()));
    rep.set(match out.termination {
        Termination::Certified => Outcome::Certified,
        Termination::MismatchBelowEps if declared_optimal(pop, out.bound, &out.point, eps) => Outcome::DeclaredOptimal,
        Termination::MismatchBelowEps => Outcome::BoundOnly,
    });
    rep.certificate = out.certificate;
    Ok(())
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn load_pop(path: &Path) -> Result<Pop, Error> {
    parse_pop(&read(path)?)
}

fn cmd_solve(a: &SolveArgs, rep: &mut RunReport) -> Result<Pop, Error> {
    let mut pop = load_pop(&a.problem)?;
    if let Some(r) = a.slack {
        if !(r > 0.0) {
            return Err(Error::InvalidInput("--slack needs a positive radius".into()));
        }
        pop = add_sphere_slack(&pop, r);
    }
    if a.relax.multi_order {
        solve_multi(&pop, &a.relax, None, rep)?;
    } else {
        solve_fixed(&pop, &a.relax, rep)?;
    }
    Ok(pop)
}

fn cmd_opf(a: &OpfArgs, rep: &mut RunReport) -> Result<Pop, Error> {
    let case = parse_case(&read(&a.case)?)?;
    let case = preprocess(
        &case,
        &PreprocessOptions { min_impedance: a.min_impedance, min_resistance: a.min_resistance, loss_objective: a.loss },
    );
    let (pop, model) = build_opf_pop(&case)?;
    let pop = if a.real { pop.realify() } else { pop };
    rep.labels = Some(model.labels.clone());
    if let Some(p) = &a.write_problem {
        std::fs::write(p, pop_to_json(&pop))?;
    }
    if a.relax.multi_order {
        solve_multi(&pop, &a.relax, Some(1.0), rep)?;
    } else {
        solve_fixed(&pop, &a.relax, rep)?;
    }
    if !a.real {
        // report voltages with the reference angle at zero
        if let Some(p) = &rep.point {
            let z: Vec<Complex64> = p.iter().map(|v| Complex64::new(v[0], v[1])).collect();
            rep.point = Some(model.fix_angle(&z).iter().map(|v| [v.re, v.im]).collect());
        }
        if let Some(c) = rep.certificate.as_mut() {
            for at in &mut c.atoms {
                at.point = model.fix_angle(&at.point);
            }
        }
    }
    Ok(pop)
}

fn print_summary(rep: &RunReport, pop: Option<&Pop>) {
    println!("status: {:?} (exit {})", rep.status, rep.exit_code);
    if let Some(e) = &rep.error {
        println!("error: {e}");
    }
    if let Some(b) = rep.bound {
        println!("bound: {b:.8}");
    }
    if let Some(s) = &rep.sdp {
        println!(
            "sdp: {:?} after {} iterations, {} variables, blocks {:?}",
            s.status, s.iterations, s.num_vars, s.block_sizes
        );
    }
    for r in &rep.history {
        println!(
            "iter {}: bound {:.6}, cliques {:?}, max mismatch {}",
            r.iteration,
            r.bound,
            r.cliques,
            r.max_mismatch.map_or("-".into(), |m| format!("{m:.3e}"))
        );
    }
    if let (Some(last), Some(pop)) = (rep.history.last(), pop) {
        let raised: Vec<String> = (0..last.orders.len())
            .filter(|&i| last.orders[i] > pop.k_constraint(i))
            .map(|i| format!("{}={}", rep.labels.as_ref().map_or_else(|| pop.label(i), |l| l[i].clone()), last.orders[i]))
            .collect();
        println!("raised orders: {}", if raised.is_empty() { "none".into() } else { raised.join(" ") });
    }
    if let Some(c) = &rep.certificate {
        println!("certificate: {:?}, rank {}, t {:?}{}", c.kind, c.rank, c.t, if c.orbit { " (orbit)" } else { "" });
        for (j, a) in c.atoms.iter().enumerate() {
            let coords: Vec<String> = a.point.iter().map(|v| format!("{:.6}{:+.6}i", v.re, v.im)).collect();
            println!("  atom {j}: weight {:.6}  ({})", a.weight, coords.join(", "));
        }
        if let Some(s) = &c.sos {
            println!("  sos: lambda {:.8}, identity residual {:.2e}", s.lambda, s.residual);
        }
        for d in &c.diagnostics {
            println!("  note: {d}");
        }
    }
    if let Some(p) = &rep.point {
        if rep.certificate.as_ref().map_or(true, |c| c.atoms.is_empty()) {
            let coords: Vec<String> = p.iter().map(|v| format!("{:.6}{:+.6}i", v[0], v[1])).collect();
            println!("point: ({})", coords.join(", "));
        }
        if let (Some(f), Some(v)) = (rep.objective_at_point, rep.max_violation) {
            println!("objective at point: {f:.8}, max violation {v:.3e}");
        }
    }
}

fn emit(rep: &RunReport, relax: &RelaxArgs, pop: Option<&Pop>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(rep)?;
    if let Some(p) = &relax.report {
        std::fs::write(p, &text)?;
    }
    if relax.json {
        println!("{text}");
    } else {
        print_summary(rep, pop);
    }
    Ok(())
}

fn run_pipeline(
    command: &'static str,
    config: serde_json::Value,
    relax: &RelaxArgs,
    body: impl FnOnce(&mut RunReport) -> Result<Pop, Error>,
) -> u8 {
    let t0 = Instant::now();
    let mut rep = RunReport::new(command, config);
    let pop = match body(&mut rep) {
        Ok(p) => Some(p),
        Err(e) => {
            rep.fail(&e);
            None
        }
    };
    rep.timings.total_seconds = t0.elapsed().as_secs_f64();
    if let Err(e) = emit(&rep, relax, pop.as_ref()) {
        eprintln!("error: {e}");
        return Outcome::InputError.code();
    }
    rep.exit_code
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), Error> {
    let pop = load_pop(&a.problem)?;
    let orders: Vec<u32> = (0..pop.constraints.len())
        .map(|i| a.order.unwrap_or(0).max(pop.k_constraint(i)))
        .collect();
    let plan = CliquePlan::sparse(&pop, &orders)?;
    let report = analyze(&pop, &plan);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum MomentsInput {
    Table(MomentTableJson),
    Report { moments: MomentTableJson },
}

fn cmd_certify(a: &CertifyArgs) -> Result<u8, Error> {
    let table = match serde_json::from_str::<MomentsInput>(&read(&a.moments)?)? {
        MomentsInput::Table(t) | MomentsInput::Report { moments: t } => MomentTable::from_json(&t)?,
    };
    let pop = load_pop(&a.problem)?;
    if table.n != pop.n || (table.field == Field::Real) != (pop.field == Field::Real) {
        return Err(Error::InvalidInput("moment table and problem disagree on variables or field".into()));
    }
    let cert = extract_atoms(&table, &pop)?;
    let certified = cert.kind != CertKind::None && !cert.atoms.is_empty();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&cert)?);
    } else {
        println!("certificate: {:?}, rank {}, t {:?}", cert.kind, cert.rank, cert.t);
        for v in &cert.verdicts {
            println!(
                "  clique {} t={}: rank {:?} (low {:?}), rank-one {}, flat {}, hyponormal {:?}",
                v.clique, v.t, v.rank, v.rank_low, v.rank_one, v.flat, v.hyponormal
            );
        }
        for (j, at) in cert.atoms.iter().enumerate() {
            let coords: Vec<String> = at.point.iter().map(|v| format!("{:.6}{:+.6}i", v.re, v.im)).collect();
            println!("  atom {j}: weight {:.6}  ({})", at.weight, coords.join(", "));
        }
    }
    Ok(if certified { 0 } else { 2 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Outcome::InputError.code() } else { 0 });
        }
    };
    let code = match &cli.cmd {
        Command::Solve(a) => {
            let cfg = serde_json::to_value(a).unwrap_or_default();
            run_pipeline("solve", cfg, &a.relax, |rep| cmd_solve(a, rep))
        }
        Command::Opf(a) => {
            let cfg = serde_json::to_value(a).unwrap_or_default();
            run_pipeline("opf", cfg, &a.relax, |rep| cmd_opf(a, rep))
        }
        Command::Analyze(a) => match cmd_analyze(a) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                classify(&e).code()
            }
        },
        Command::Certify(a) => match cmd_certify(a) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                classify(&e).code()
            }
        },
    };
    ExitCode::from(code)
}
