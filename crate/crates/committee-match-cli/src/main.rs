//! Command-line front end: generate instances, solve them, re-verify
//! answers, run the exhaustive oracle and the benchmark.
//!
//! Exit codes: 0 success, 1 verification failure, 2 solver non-convergence,
//! 3 I/O or validation error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use committee_match::bench::{self, BenchConfig, Scenario};
use committee_match::exec::{self, Exec};
use committee_match::gen::{self, AlphaMode, GenParams};
use committee_match::io::{self, LoadedInstance, SolutionFile, SolverOverrides};
use committee_match::leo::SolverParams;
use committee_match::meo::MeoParams;
use committee_match::model::{Instance, Matching, StudentId};
use committee_match::oracle;
use committee_match::pipeline::{self, PipelineError};
use committee_match::verify::Verdict;
use committee_match::Rational;
use serde_json::json;

#[derive(Parser)]
#[command(name = "committee-match", version, about = "Committee-governed school choice solver")]
struct Cli {
    /// Report errors as JSON objects on stderr.
    #[arg(long, global = true)]
    json: bool,
    /// Reject instance files with unknown fields instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random instance.
    Gen(GenArgs),
    /// Acceptable choice set for one school.
    SolveSingle {
        instance: PathBuf,
        #[arg(long)]
        school: String,
        /// Comma-separated student ids; defaults to every student.
        #[arg(long, value_delimiter = ',')]
        applicants: Option<Vec<String>>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Approximately stable matching for the whole market.
    SolveMatch {
        instance: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Recompute a solution's certificate from the instance alone.
    Verify { instance: PathBuf, solution: PathBuf },
    /// Exhaustive search on small instances.
    Oracle {
        #[command(subcommand)]
        query: OracleQuery,
    },
    /// Bound-versus-achieved table over random trials.
    Bench {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Single)]
        mode: Mode,
        /// Add wall-clock columns; the report is then no longer reproducible.
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Match,
    Percentile,
}

#[derive(Subcommand)]
enum OracleQuery {
    /// Every acceptable choice set with its β window.
    Acceptable(PoolArgs),
    /// Smallest β admitting an acceptable set.
    MinBeta(PoolArgs),
    /// Every stable matching of the market padded with dummy students.
    Stable {
        instance: PathBuf,
        /// Comma-separated thresholds, one per school; all zero by default.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<String>>,
        /// Take thresholds, adjusted ranks and capacities from a market solution.
        #[arg(long, conflicts_with = "betas")]
        solution: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PoolArgs {
    instance: PathBuf,
    #[arg(long)]
    school: String,
    #[arg(long, value_delimiter = ',')]
    applicants: Option<Vec<String>>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    students: usize,
    #[arg(long, default_value_t = 1)]
    schools: usize,
    #[arg(long)]
    members: usize,
    #[arg(long)]
    capacity: usize,
    /// fixed:K, uniform or percentile:P
    #[arg(long, default_value = "uniform")]
    alpha_mode: String,
    /// Draw each school's capacity and committee size up to the given maxima.
    #[arg(long)]
    vary: bool,
    /// Refuse shapes too large for the exhaustive oracle.
    #[arg(long)]
    oracle_compatible: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverArgs {
    fn overrides(&self) -> SolverOverrides {
        SolverOverrides {
            eps: self.eps,
            delta: self.delta,
            damping: self.damping,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            ..Default::default()
        }
    }
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn io(message: impl ToString) -> Self {
        Failure { code: 3, kind: "io", message: message.to_string() }
    }

    fn invalid(message: impl ToString) -> Self {
        Failure { code: 3, kind: "validation", message: message.to_string() }
    }

    fn verification(message: impl ToString) -> Self {
        Failure { code: 1, kind: "verification", message: message.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_non_convergence() {
            Failure { code: 2, kind: "non_convergence", message: e.to_string() }
        } else if matches!(e, PipelineError::Invalid(_) | PipelineError::UnknownSchool(_)) {
            Failure::invalid(e)
        } else {
            Failure { code: 1, kind: "solver", message: e.to_string() }
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn emit(output: Option<&Path>, text: &str) -> Outcome {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Failure::io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path, strict: bool) -> Result<LoadedInstance, Failure> {
    let loaded = io::parse_instance(&read(path)?, strict).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    for w in loaded.instance.integral_mode_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(loaded)
}

fn student_ids(instance: &Instance, labels: &[String]) -> Result<Vec<StudentId>, Failure> {
    labels
        .iter()
        .map(|l| {
            instance
                .students
                .iter()
                .position(|s| s.label == *l)
                .ok_or_else(|| Failure::invalid(format!("no student labelled {l}")))
        })
        .collect()
}

fn names(instance: &Instance, ids: &[StudentId]) -> String {
    let v: Vec<&str> = ids.iter().map(|&i| instance.students[i].label.as_str()).collect();
    format!("{{{}}}", v.join(","))
}

fn certificate_outcome(v: &Verdict) -> Outcome {
    if v.ok {
        return Ok(());
    }
    let first = v.violations.first().map_or(String::new(), |x| format!(": {} at {} ({} vs {})", x.condition, x.entity, x.measured, x.bound));
    Err(Failure::verification(format!("certificate failed with {} violations{first}", v.violations.len())))
}

fn cmd_gen(a: &GenArgs) -> Outcome {
    let alpha_mode: AlphaMode = a.alpha_mode.parse().map_err(Failure::invalid)?;
    let p = GenParams {
        students: a.students,
        schools: a.schools,
        members: a.members,
        capacity: a.capacity,
        alpha_mode,
        vary: a.vary,
        seed: a.seed,
    };
    if a.oracle_compatible && !p.oracle_compatible() {
        return Err(Failure::invalid("shape is too large for the exhaustive oracle"));
    }
    let inst = gen::generate(&p).map_err(Failure::invalid)?;
    emit(a.output.as_deref(), &io::write_instance(&inst, None))
}

fn single_params(file: &SolverOverrides, cli: &SolverOverrides) -> SolverParams {
    let mut p = SolverParams::default();
    file.apply_leo(&mut p);
    cli.apply_leo(&mut p);
    p
}

fn match_params(file: &SolverOverrides, cli: &SolverOverrides) -> MeoParams {
    let mut p = MeoParams::default();
    file.apply_meo(&mut p);
    cli.apply_meo(&mut p);
    p
}

fn cmd_solve_single(cli: &Cli, path: &Path, school: &str, applicants: Option<&[String]>, solver: &SolverArgs, output: Option<&Path>) -> Outcome {
    let loaded = load(path, cli.strict)?;
    let inst = &loaded.instance;
    let h = pipeline::school_index(inst, school)?;
    let pool = applicants.map(|a| student_ids(inst, a)).transpose()?;
    let params = single_params(&loaded.solver, &solver.overrides());
    let out = pipeline::solve_single(inst, h, pool.as_deref(), &params)?;
    eprintln!("selected {} at beta {}", names(inst, &out.selected), out.beta);
    emit(output, &io::write_solution(&SolutionFile::from_single(inst, &out)))?;
    certificate_outcome(&out.certificate)
}

fn cmd_solve_match(cli: &Cli, path: &Path, solver: &SolverArgs, output: Option<&Path>) -> Outcome {
    let loaded = load(path, cli.strict)?;
    let params = match_params(&loaded.solver, &solver.overrides());
    let out = pipeline::solve_match(&loaded.instance, &params)?;
    let betas: Vec<String> = out.betas.iter().map(|b| b.to_string()).collect();
    eprintln!("matched at betas [{}], residual {:.2e}", betas.join(", "), out.diagnostics.residual);
    emit(output, &io::write_solution(&SolutionFile::from_match(&out)))?;
    certificate_outcome(&out.certificate)
}

fn cmd_verify(cli: &Cli, instance: &Path, solution: &Path) -> Outcome {
    let loaded = load(instance, cli.strict)?;
    let sol = io::parse_solution(&read(solution)?).map_err(|e| Failure::invalid(format!("{}: {e}", solution.display())))?;
    let verdict = io::verify_solution(&loaded.instance, &sol).map_err(Failure::invalid)?;
    println!("{}", serde_json::to_string_pretty(&verdict).expect("verdict serializes"));
    if verdict != sol.certificate {
        return Err(Failure::verification("recomputed certificate differs from the embedded one"));
    }
    certificate_outcome(&verdict)
}

fn oracle_failure(e: oracle::OracleError) -> Failure {
    Failure::invalid(e)
}

fn pool(inst: &Instance, a: &PoolArgs) -> Result<(usize, Vec<StudentId>), Failure> {
    let h = pipeline::school_index(inst, &a.school)?;
    let ids = match &a.applicants {
        Some(l) => student_ids(inst, l)?,
        None => (0..inst.num_students()).collect(),
    };
    Ok((h, ids))
}

fn parse_rational(s: &str) -> Result<Rational, Failure> {
    s.trim().parse().map_err(|_| Failure::invalid(format!("not a fraction: {s:?}")))
}

fn cmd_oracle(cli: &Cli, q: &OracleQuery) -> Outcome {
    match q {
        OracleQuery::Acceptable(a) => {
            let inst = load(&a.instance, cli.strict)?.instance;
            let (h, ids) = pool(&inst, a)?;
            let sets = oracle::enumerate_acceptable(&inst.schools[h], &ids, Exec::Parallel).map_err(oracle_failure)?;
            if cli.json {
                let rows: Vec<_> = sets
                    .iter()
                    .map(|(s, w)| {
                        let labels: Vec<&str> = s.iter().map(|&i| inst.students[i].label.as_str()).collect();
                        json!({"selected": labels, "beta_lo": w.lo, "beta_hi": w.hi})
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
            } else {
                for (s, w) in &sets {
                    println!("{}  beta in [{}, {}]", names(&inst, s), w.lo, w.hi);
                }
            }
            Ok(())
        }
        OracleQuery::MinBeta(a) => {
            let inst = load(&a.instance, cli.strict)?.instance;
            let (h, ids) = pool(&inst, a)?;
            match oracle::min_beta(&inst.schools[h], &ids, Exec::Parallel).map_err(oracle_failure)? {
                Some(b) => println!("{b}"),
                None => println!("none"),
            }
            Ok(())
        }
        OracleQuery::Stable { instance, betas, solution } => {
            let inst = load(instance, cli.strict)?.instance.pad_with_dummies();
            let (inst, betas) = match (betas, solution) {
                (_, Some(path)) => {
                    let sol = io::parse_solution(&read(path)?).map_err(Failure::invalid)?;
                    if sol.schools.len() != inst.num_schools() {
                        return Err(Failure::invalid("solution lists a different number of schools"));
                    }
                    let alphas: Vec<Vec<Rational>> =
                        sol.schools.iter().map(|s| s.members.iter().map(|m| m.adjusted_alpha.clone()).collect()).collect();
                    let caps: Vec<usize> = sol.schools.iter().map(|s| s.adjusted_capacity).collect();
                    let betas = sol.schools.iter().map(|s| s.beta.clone()).collect();
                    (inst.with_adjusted(&alphas, &caps), betas)
                }
                (Some(b), None) => {
                    let b: Vec<Rational> = b.iter().map(|s| parse_rational(s)).collect::<Result<_, _>>()?;
                    if b.len() != inst.num_schools() {
                        return Err(Failure::invalid(format!("{} thresholds for {} schools", b.len(), inst.num_schools())));
                    }
                    (inst, b)
                }
                (None, None) => {
                    let zero = vec![Rational::from_integer(0.into()); inst.num_schools()];
                    (inst, zero)
                }
            };
            let found = oracle::enumerate_stable(&inst, &betas, Exec::Parallel).map_err(oracle_failure)?;
            for m in &found {
                println!("{}", describe_matching(&inst, m));
            }
            eprintln!("{} stable matchings", found.len());
            Ok(())
        }
    }
}

fn describe_matching(inst: &Instance, m: &Matching) -> String {
    inst.schools
        .iter()
        .enumerate()
        .map(|(h, s)| format!("{}:{}", s.label, names(inst, &m.roster(h))))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_bench(trials: usize, seed: u64, mode: Mode, timing: bool, sequential: bool) -> Outcome {
    let scenario = match mode {
        Mode::Single => Scenario::Single,
        Mode::Match => Scenario::Match,
        Mode::Percentile => Scenario::Percentile,
    };
    let exec = if sequential { Exec::Sequential } else { Exec::Parallel };
    let report = bench::run(&BenchConfig { scenario, trials, seed, timing, exec });
    print!("{}", report.render(timing));
    let failed = report.count(|s| matches!(s, bench::Status::Failed | bench::Status::Error(_)));
    if failed > 0 {
        return Err(Failure::verification(format!("{failed} trials failed")));
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::SolveSingle { instance, school, applicants, solver, output } => {
            cmd_solve_single(cli, instance, school, applicants.as_deref(), solver, output.as_deref())
        }
        Command::SolveMatch { instance, solver, output } => cmd_solve_match(cli, instance, solver, output.as_deref()),
        Command::Verify { instance, solution } => cmd_verify(cli, instance, solution),
        Command::Oracle { query } => cmd_oracle(cli, query),
        Command::Bench { trials, seed, mode, timing, sequential } => cmd_bench(*trials, *seed, *mode, *timing, *sequential),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("COMMITTEE_MATCH_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                exec::set_threads(n);
            }
            _ => eprintln!("warning: ignoring COMMITTEE_MATCH_THREADS={n:?}"),
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if cli.json {
                eprintln!("{}", json!({"error": f.kind, "message": f.message, "exit_code": f.code}));
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
