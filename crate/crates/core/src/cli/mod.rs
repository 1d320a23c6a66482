//! Command-line front end: `solve`, `gradcheck`, `train` and `bench`.

mod bench;
mod check;
mod input;

pub use bench::{fit_exponent, run_bench, BenchKind, BenchRow, BENCH_HEADER};
pub use check::{check_assignment, check_gsa, check_lp, random_suite, CheckReport, CheckRow, CheckSettings};
pub use input::{parse_json, read_json, AssignmentInput, GsaInput, GsaInstance, LpInput};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::alignment::{gsa_gengrad, gsa_loss, solve_gsa};
use crate::assignment::{assignment_gengrad, solve_assignment};
use crate::error::Error;
use crate::experiments::{
    gen_bag_dataset, gen_seq_dataset, train_bags, train_seq, write_jsonl, Recorder, TrainConfig, DEFAULT_SEED,
};
use crate::grad::{assemble_gengrad_for, EfficiencyClass, Tolerance};
use crate::lpref::{solve_lp, FD_EPS};
use crate::matrix::Matrix;
use crate::DEFAULT_TOL;

#[derive(Debug, Parser)]
#[command(name = "lincomb", version, about = "Generalized gradients of combinatorial optimal values")]
pub struct Cli {
    /// Seed for every random choice [default: 20190601; train: the config's seed]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Absolute and relative tolerance for inequality checks
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Output file (solve, gradcheck, bench) or directory (train)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Assignment,
    Gsa,
    Lp,
}

impl ProblemKind {
    fn name(self) -> &'static str {
        match self {
            ProblemKind::Assignment => "assignment",
            ProblemKind::Gsa => "gsa",
            ProblemKind::Lp => "lp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Bags,
    Seq,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and print z*, witnesses and the generalized gradient as JSON
    Solve { kind: ProblemKind, input: PathBuf },
    /// Check gradients on one instance, or on a seeded random suite when no input is given
    Gradcheck {
        kind: ProblemKind,
        input: Option<PathBuf>,
        #[arg(long, default_value_t = FD_EPS)]
        eps: f64,
        /// Random points per supergradient check
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Instances in the random suite
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Add this to every entry of the candidate gradient (negative control)
        #[arg(long, default_value_t = 0.0)]
        perturb_grad: f64,
        /// Take the candidate gradient from a `solve` output file
        #[arg(long)]
        grad: Option<PathBuf>,
    },
    /// Train on a synthetic task; writes metrics.csv, model.ckpt, config.json and dataset.jsonl
    Train { task: Task, config: PathBuf },
    /// Time solve+backward pairs; prints CSV `kind,size,repeat,seconds`
    Bench {
        kind: ProblemKind,
        #[arg(long, value_delimiter = ',', default_values_t = vec![8, 16, 32, 64])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    CheckFailed = 1,
    InputError = 2,
    SolverError = 3,
    TrainingAborted = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn tag(self) -> &'static str {
        match self {
            ExitStatus::Ok => "ok",
            ExitStatus::CheckFailed => "check",
            ExitStatus::InputError => "input",
            ExitStatus::SolverError => "solver",
            ExitStatus::TrainingAborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    /// The single stderr line: `error[<code>:<tag>] <message>`.
    pub fn line(&self) -> String {
        let msg = self.message.replace('\n', " ");
        format!("error[{}:{}] {msg}", self.status.code(), self.status.tag())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = if e.is_solver_failure() {
            ExitStatus::SolverError
        } else {
            ExitStatus::InputError
        };
        CliError::new(status, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(DEFAULT_SEED)
}

fn emit(out: &Option<PathBuf>, stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::new(ExitStatus::InputError, format!("{}: {e}", path.display())))?,
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new(ExitStatus::InputError, e.to_string()))?,
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

/// `f64::INFINITY` has no JSON form; report it as `null`.
fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Solver report for one instance.
pub fn solve_report(kind: ProblemKind, input: &Path) -> CliResult<Value> {
    Ok(match kind {
        ProblemKind::Assignment => {
            let c = read_json::<AssignmentInput>(input)?.cost_matrix()?;
            let r = solve_assignment(&c)?;
            let g = assignment_gengrad(&r);
            let n = c.size();
            let grad = Matrix::from_vec(n, n, g.d_c.unwrap_or_default())?;
            json!({
                "kind": "assignment",
                "z_star": r.z_star,
                "perm": r.perm,
                "duals_u": r.duals_u,
                "duals_v": r.duals_v,
                "unique": r.unique,
                "second_best_gap": finite_or_null(r.second_best_gap),
                "gradient": grad.to_rows(),
            })
        }
        ProblemKind::Gsa => {
            let inst = read_json::<GsaInput>(input)?.instance()?;
            let r = solve_gsa(&inst.grid);
            let mut v = json!({
                "kind": "gsa",
                "z_star": r.z_star,
                "path": r.path,
                "unique": r.unique,
                "gradient": gsa_gengrad(&r, &inst.grid).to_rows(),
            });
            if let Some((lp, targets)) = &inst.logp {
                let loss = gsa_loss(lp, targets, inst.grid.gamma())?;
                v["logp_gradient"] = json!(loss.grad_logp.to_rows());
            }
            v
        }
        ProblemKind::Lp => {
            let spec = read_json::<LpInput>(input)?.spec()?;
            let out = solve_lp(&spec)?;
            let all = crate::grad::Dependencies {
                c: true,
                b: true,
                a: true,
            };
            let g = assemble_gengrad_for(&spec, &out, EfficiencyClass::PrimalDualEff(all))?;
            json!({
                "kind": "lp",
                "z_star": out.z_star,
                "u_star": out.u_star,
                "v_star": out.v_star,
                "unique": out.unique,
                "gradient": {
                    "c": g.d_c,
                    "b": g.d_b,
                    "A": g.d_a.map(|m| m.to_rows()),
                },
            })
        }
    })
}

fn candidate_matrix(v: &Value) -> CliResult<Matrix> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())
        .map_err(|e| CliError::new(ExitStatus::InputError, format!("gradient: {e}")))?;
    Ok(Matrix::from_rows(&rows)?)
}

fn gradcheck_report(
    cli: &Cli,
    kind: ProblemKind,
    input: Option<&Path>,
    settings: &CheckSettings,
    instances: usize,
    grad: Option<&Path>,
) -> CliResult<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed(cli));
    let candidate = match grad {
        Some(path) => {
            let v: Value = read_json(path)?;
            Some(
                v.get("gradient")
                    .cloned()
                    .ok_or_else(|| CliError::new(ExitStatus::InputError, "gradient file lacks a \"gradient\" field"))?,
            )
        }
        None => None,
    };
    let Some(input) = input else {
        if candidate.is_some() {
            return Err(CliError::new(ExitStatus::InputError, "--grad needs an input instance"));
        }
        return Ok(random_suite(kind.name(), instances, settings, &mut rng)?);
    };
    let rows = match kind {
        ProblemKind::Assignment => {
            let c = read_json::<AssignmentInput>(input)?.cost_matrix()?;
            let g = candidate.as_ref().map(candidate_matrix).transpose()?;
            check_assignment(0, &c, g.as_ref(), settings, &mut rng)?
        }
        ProblemKind::Gsa => {
            let inst = read_json::<GsaInput>(input)?.instance()?;
            let g = candidate.as_ref().map(candidate_matrix).transpose()?;
            check_gsa(0, &inst.grid, g.as_ref(), settings, &mut rng)?
        }
        ProblemKind::Lp => {
            let spec = read_json::<LpInput>(input)?.spec()?;
            let uv = match &candidate {
                Some(v) => {
                    let block = |name: &str| -> CliResult<Vec<f64>> {
                        serde_json::from_value(v.get(name).cloned().unwrap_or(Value::Null))
                            .map_err(|e| CliError::new(ExitStatus::InputError, format!("gradient.{name}: {e}")))
                    };
                    Some((block("c")?, block("b")?))
                }
                None => None,
            };
            check_lp(0, &spec, uv, settings, &mut rng)?
        }
    };
    Ok(CheckReport::new(kind.name(), rows))
}

fn train(cli: &Cli, task: Task, config: &Path, stdout: &mut dyn Write) -> CliResult<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::new(ExitStatus::InputError, format!("{}: {e}", config.display())))?;
    let mut cfg = TrainConfig::from_json(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(match task {
        Task::Bags => "lincomb-bags",
        Task::Seq => "lincomb-seq",
    }));
    let io = |e: std::io::Error| CliError::new(ExitStatus::InputError, format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(&dir).map_err(io)?;

    let resolved = pretty(&serde_json::to_value(&cfg).expect("config serializes"));
    std::fs::write(dir.join("config.json"), &resolved).map_err(io)?;
    emit(&None, stdout, &resolved)?;

    let data = BufWriter::new(File::create(dir.join("dataset.jsonl")).map_err(io)?);
    match task {
        Task::Bags => write_jsonl(data, &gen_bag_dataset(&cfg.bag_data)?.records())?,
        Task::Seq => {
            let d = gen_seq_dataset(&cfg.seq_data)?;
            let mut all = d.train;
            all.extend(d.test);
            write_jsonl(data, &all)?
        }
    }

    let metrics = File::create(dir.join("metrics.csv")).map_err(io)?;
    let mut rec = Recorder::streaming(Box::new(BufWriter::new(metrics)))?;
    let result = match task {
        Task::Bags => train_bags(&cfg, &mut rec),
        Task::Seq => train_seq(&cfg, &mut rec),
    };
    let outcome = result.map_err(|e| {
        if e.is_solver_failure() || matches!(e, Error::NonFinite(_)) {
            CliError::new(ExitStatus::TrainingAborted, format!("training aborted: {e}"))
        } else {
            CliError::from(e)
        }
    })?;
    outcome.params.save(&dir.join("model.ckpt"))?;
    Ok(())
}

/// Runs a parsed command, writing primary output to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> CliResult<()> {
    if !(cli.tol >= 0.0 && cli.tol.is_finite()) {
        return Err(CliError::new(ExitStatus::InputError, "--tol must be a finite value >= 0"));
    }
    match &cli.command {
        Command::Solve { kind, input } => {
            let report = solve_report(*kind, input)?;
            emit(&cli.out, stdout, &pretty(&report))
        }
        Command::Gradcheck {
            kind,
            input,
            eps,
            trials,
            instances,
            perturb_grad,
            grad,
        } => {
            if !(*eps > 0.0) {
                return Err(CliError::new(ExitStatus::InputError, "--eps must be > 0"));
            }
            let settings = CheckSettings {
                eps: *eps,
                trials: *trials,
                tol: Tolerance::new(cli.tol, cli.tol),
                perturb: *perturb_grad,
            };
            let report = gradcheck_report(cli, *kind, input.as_deref(), &settings, *instances, grad.as_deref())?;
            emit(&cli.out, stdout, &pretty(&serde_json::to_value(&report).expect("report serializes")))?;
            if report.pass {
                Ok(())
            } else {
                Err(CliError::new(
                    ExitStatus::CheckFailed,
                    format!("{} of {} gradient checks failed", report.failed, report.checks.len()),
                ))
            }
        }
        Command::Train { task, config } => train(cli, *task, config, stdout),
        Command::Bench { kind, sizes, repeats } => {
            let bk = match kind {
                ProblemKind::Assignment => BenchKind::Assignment,
                ProblemKind::Gsa => BenchKind::Gsa,
                ProblemKind::Lp => BenchKind::Lp,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed(cli));
            let rows = run_bench(bk, sizes, *repeats, &mut rng)?;
            let mut text = format!("{BENCH_HEADER}\n");
            for r in &rows {
                text.push_str(&r.csv_line());
                text.push('\n');
            }
            emit(&cli.out, stdout, &text)
        }
    }
}

/// Parses `args`, runs, and returns the exit code; errors go to `stderr` as one line.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("bad arguments").to_string();
            let err = CliError::new(ExitStatus::InputError, first.trim_start_matches("error: "));
            let _ = writeln!(stderr, "{}", err.line());
            return err.status.code();
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.line());
            e.status.code()
        }
    }
}
