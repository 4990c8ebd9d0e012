mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use glcn_core::harness::{self, ReportFormat, StudyPlan};
use glcn_core::verify::{self, VerifyOptions};
use glcn_core::{sipg, DGSpace, Discretization, LinearSolverKind, Mesh, Rect, SipgConfig, SourceRule, StepConfig};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "glcn", version, about = "Crank-Nicolson SIPG solver for the complex Ginzburg-Landau equation")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and report the final errors.
    Run(Box<RunArgs>),
    /// Run a convergence study from a plan file.
    Study(StudyArgs),
    /// Run the invariant suites.
    Verify(VerifyArgs),
    /// Print a mesh (and optionally export operators).
    DumpMesh(DumpMeshArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// example1 or example2.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Cells per side.
    #[arg(long, conflicts_with = "h")]
    n: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, conflicts_with = "steps")]
    tau: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Interior penalty parameter.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    nu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Force f = 0; the case then only supplies the initial datum.
    #[arg(long)]
    homogeneous: bool,
    #[command(flatten)]
    solver: SolverArgs,
    /// Directory for step reports and field dumps.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a field snapshot every M steps.
    #[arg(long, value_name = "M")]
    snapshot_every: Option<usize>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug, Default)]
struct SolverArgs {
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    newton_max_iter: Option<usize>,
    /// Disable the fixed-point fallback.
    #[arg(long)]
    no_fallback: bool,
    #[arg(long, value_enum)]
    linear_solver: Option<LinearSolverArg>,
    /// Relative tolerance of the iterative linear solver.
    #[arg(long, default_value_t = 1e-12)]
    linear_tol: f64,
    #[arg(long, default_value_t = 5000)]
    linear_max_iter: usize,
    #[arg(long, value_enum)]
    source_rule: Option<SourceRuleArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LinearSolverArg {
    Direct,
    Iterative,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SourceRuleArg {
    Midpoint,
    Average,
}

impl SolverArgs {
    fn apply(&self, s: &mut harness::SolverSettings) {
        if let Some(v) = self.newton_tol {
            s.newton_tol = v;
        }
        if let Some(v) = self.newton_max_iter {
            s.newton_max_iter = v;
        }
        if self.no_fallback {
            s.fixed_point_fallback = false;
        }
        match self.linear_solver {
            Some(LinearSolverArg::Direct) => s.linear_solver = LinearSolverKind::Direct,
            Some(LinearSolverArg::Iterative) => {
                s.linear_solver = LinearSolverKind::Iterative { tol: self.linear_tol, max_iter: self.linear_max_iter }
            }
            None => {}
        }
        match self.source_rule {
            Some(SourceRuleArg::Midpoint) => s.source_rule = SourceRule::Midpoint,
            Some(SourceRuleArg::Average) => s.source_rule = SourceRule::Average,
            None => {}
        }
    }
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// Plan file (JSON).
    plan: PathBuf,
    /// Output directory for the CSV and markdown reports.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write the JSON report.
    #[arg(long)]
    json: bool,
    /// Fill the seconds column with wall-clock times.
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Penalty used by every suite instead of 10(k+1)^2.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Time step of the growth check.
    #[arg(long)]
    tau: Option<f64>,
    /// Reaction coefficient of the growth check.
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Random initial data per decay/growth check.
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DumpMeshArgs {
    /// Take the domain from a case.
    #[arg(long, conflicts_with = "rect")]
    case: Option<String>,
    /// Domain as x0,x1,y0,y1 (default: unit square).
    #[arg(long, value_delimiter = ',', num_args = 4, allow_negative_numbers = true)]
    rect: Option<Vec<f64>>,
    /// Cells per side.
    #[arg(long)]
    n: usize,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write mass.txt and stiffness.txt in `i j value` format to this directory.
    #[arg(long, value_name = "DIR")]
    operators: Option<PathBuf>,
    /// Degree for the operator export.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    lambda: Option<f64>,
}

/// Failures mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    /// Usage already printed.
    Usage,
    Check,
}

impl Failure {
    fn from_core(e: glcn_core::Error) -> Self {
        if e.is_solver_failure() {
            Failure::Solver(e.into())
        } else {
            Failure::Config(e.into())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn io_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let result = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Study(args) => cmd_study(args),
        Command::Verify(args) => cmd_verify(args),
        Command::DumpMesh(args) => cmd_dump_mesh(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Usage) => ExitCode::from(2),
        Err(Failure::Check) => ExitCode::from(1),
    }
}

fn flags_config(a: &RunArgs) -> RunConfig {
    RunConfig {
        case: a.case.clone(),
        k: a.k,
        n: a.n,
        h: a.h,
        tau: a.tau,
        steps: a.steps,
        t_final: a.t_final,
        penalty: a.lambda,
        params: harness::ParamOverrides { nu: a.nu, alpha: a.alpha, kappa: a.kappa, beta: a.beta, gamma: a.gamma },
        homogeneous: a.homogeneous,
        solver: Default::default(),
        output_dir: a.out.clone(),
        snapshot_every: a.snapshot_every,
    }
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path).map_err(config_err)?,
        None => RunConfig::default(),
    };
    cfg = cfg.merge(flags_config(&args));
    args.solver.apply(&mut cfg.solver);
    if cfg.case.is_none() {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = cmd.find_subcommand_mut("run").expect("run subcommand").render_usage();
        eprintln!("error: no case given (use --case example1 or --case example2)\n\n{usage}");
        return Err(Failure::Usage);
    }
    let run = cfg.resolve().map_err(config_err)?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let mesh = Mesh::build_structured(run.case.domain, run.n).map_err(Failure::from_core)?;
    let space = DGSpace::new(Arc::new(mesh), run.k).map_err(Failure::from_core)?;
    let disc = Discretization::new(space, run.case.clone(), SipgConfig { penalty: run.penalty })
        .map_err(Failure::from_core)?;

    let out_dir = run.output_dir.clone();
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(io_err)?;
    }
    let mut steps_file = match &out_dir {
        Some(dir) => Some(fs::File::create(dir.join("steps.jsonl")).map_err(io_err)?),
        None => None,
    };
    let mut io_error: Option<std::io::Error> = None;
    let mut norms = Vec::with_capacity(run.steps + 1);
    let snapshot_every = run.snapshot_every;
    let outcome = disc.run(run.step, |u, report| {
        norms.push(disc.space.l2_norm(u));
        let n = report.map_or(0, |r| r.n);
        if let (Some(file), Some(r)) = (steps_file.as_mut(), report) {
            if let Err(e) = writeln!(file, "{}", r.to_json_line()) {
                io_error.get_or_insert(e);
            }
        }
        if let (Some(dir), Some(m)) = (&out_dir, snapshot_every) {
            if n % m == 0 {
                if let Err(e) = fs::write(dir.join(format!("snapshot_{n:05}.csv")), u.to_csv()) {
                    io_error.get_or_insert(e);
                }
            }
        }
    });
    let out = outcome.map_err(Failure::from_core)?;
    if let Some(e) = io_error {
        return Err(io_err(e));
    }

    let case = &disc.case;
    println!(
        "case {}  k = {}  n = {}  h = {}  tau = {:e}  steps = {}  T = {:e}  lambda = {}",
        case.name,
        run.k,
        run.n,
        disc.space.mesh().h,
        run.tau,
        run.steps,
        out.t_final,
        run.penalty
    );
    println!("newton iterations: {}", out.newton_total());
    if case.homogeneous {
        println!("level  t  l2_norm");
        for (i, v) in norms.iter().enumerate() {
            println!("{i}  {:.6e}  {v:.12e}", i as f64 * run.tau);
        }
        let monotone = norms.windows(2).all(|w| w[1] <= w[0] + 1e-9);
        println!("norm history {}", if monotone { "nonincreasing" } else { "not monotone" });
    } else {
        let errors = harness::final_errors(&disc, &out.final_field, out.t_final);
        println!("L2 error: {:.6e}", errors.l2);
        println!("DG error: {:.6e}", errors.dg);
        if let Some(dir) = &out_dir {
            let summary = serde_json::json!({
                "case": case.name, "k": run.k, "n": run.n, "tau": run.tau, "steps": run.steps,
                "t_final": out.t_final, "penalty": run.penalty,
                "l2_error": errors.l2, "dg_error": errors.dg, "newton_total": out.newton_total(),
            });
            fs::write(dir.join("summary.json"), format!("{summary:#}\n")).map_err(io_err)?;
        }
    }
    if let Some(dir) = &out_dir {
        fs::write(dir.join("final.csv"), out.final_field.to_csv()).map_err(io_err)?;
    }
    Ok(())
}

fn threads_from_env() -> Result<usize, Failure> {
    match std::env::var("GLCN_THREADS") {
        Err(_) => Ok(0),
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => {
            v.trim().parse().map_err(|_| config_err(anyhow!("GLCN_THREADS must be a non-negative integer, got '{v}'")))
        }
    }
}

fn cmd_study(args: StudyArgs) -> CmdResult {
    let text = fs::read_to_string(&args.plan)
        .with_context(|| format!("reading {}", args.plan.display()))
        .map_err(config_err)?;
    let mut plan: StudyPlan =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.plan.display())).map_err(config_err)?;
    args.solver.apply(&mut plan.solver);
    plan.record_timing |= args.timing;
    plan.validate().map_err(config_err)?;
    let threads = threads_from_env()?;
    let report = harness::run_study(&plan, threads).map_err(Failure::from_core)?;
    let stem = args.plan.file_stem().and_then(|s| s.to_str()).unwrap_or("study").to_string();
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())).map_err(io_err)?;
    let write = |ext: &str, format: ReportFormat| -> Result<PathBuf, Failure> {
        let path = args.out.join(format!("{stem}.{ext}"));
        fs::write(&path, harness::render(&report, format)).map_err(io_err)?;
        Ok(path)
    };
    let csv = write("csv", ReportFormat::Csv)?;
    let md = write("md", ReportFormat::Markdown)?;
    print!("{}", report.to_markdown());
    println!();
    println!("wrote {} and {}", csv.display(), md.display());
    if args.json {
        let json = write("json", ReportFormat::Json)?;
        println!("wrote {}", json.display());
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let opts = VerifyOptions {
        penalty: args.lambda,
        tau: args.tau,
        gamma: args.gamma,
        random_cases: args.cases,
        seed: args.seed,
    };
    if let Some(p) = opts.penalty {
        SipgConfig { penalty: p }.validate().map_err(config_err)?;
    }
    if let Some(t) = opts.tau {
        StepConfig::new(t).validate().map_err(config_err)?;
    }
    if opts.gamma.is_some_and(|g| !g.is_finite()) {
        return Err(config_err(anyhow!("gamma must be finite")));
    }
    let tau = opts.tau.unwrap_or(0.5);
    let gamma = opts.gamma.unwrap_or(1.0);
    if let Some(w) = StepConfig::new(tau).solvability_warning(gamma) {
        println!("warning: {w}");
    }
    let outcomes = verify::run_all(&opts);
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    for o in &outcomes {
        println!("{}  {:width$}  {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed == 0 {
        println!("all {} suites passed", outcomes.len());
        Ok(())
    } else {
        println!("{failed} of {} suites failed", outcomes.len());
        Err(Failure::Check)
    }
}

fn cmd_dump_mesh(args: DumpMeshArgs) -> CmdResult {
    let rect = match (&args.case, &args.rect) {
        (Some(name), _) => glcn_core::case_by_name(name).map_err(config_err)?.domain,
        (None, Some(r)) => Rect::new(r[0], r[1], r[2], r[3]).map_err(config_err)?,
        (None, None) => Rect::unit_square(),
    };
    let mesh = Mesh::build_structured(rect, args.n).map_err(config_err)?;
    let text = mesh.dump();
    match &args.out {
        Some(path) => fs::write(path, &text).map_err(io_err)?,
        None => print!("{text}"),
    }
    if let Some(dir) = &args.operators {
        export_operators(mesh, &args, dir)?;
    }
    Ok(())
}

fn export_operators(mesh: Mesh, args: &DumpMeshArgs, dir: &Path) -> CmdResult {
    let cfg = args.lambda.map_or_else(|| SipgConfig::default_for_degree(args.k), |penalty| SipgConfig { penalty });
    let space = DGSpace::new(Arc::new(mesh), args.k).map_err(config_err)?;
    let stiffness = sipg::assemble_stiffness(&space, &cfg).map_err(config_err)?;
    let mass = sipg::assemble_mass(&space);
    fs::create_dir_all(dir).map_err(io_err)?;
    fs::write(dir.join("mass.txt"), mass.to_coordinate_text()).map_err(io_err)?;
    fs::write(dir.join("stiffness.txt"), stiffness.to_coordinate_text()).map_err(io_err)?;
    Ok(())
}
