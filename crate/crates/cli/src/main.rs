//! `varbounds`: command-line access to the VaR bound solvers and study harness.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use varbounds::hom::{
    crude_var_bounds, worst_var_dual, worst_var_wang, DualProblem, WangMode, WangProblem,
};
use varbounds::margins::MarginRef;
use varbounds::rearrange::{ara, ra_with, AraConfig, Objective, RaOutcome, RearrangeConfig, Tolerance};
use varbounds::study::{
    case_margins, format_g15, run_ara_grid, run_study, summary_path, AraGridSpec, CaseId, CaseSpec, StudySpec,
};
use varbounds::{Error, Pareto};

#[derive(Parser, Debug)]
#[command(name = "varbounds", version, about = "Worst/best Value-at-Risk bounds under dependence uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bounds valid for any dependence structure.
    Crude {
        #[command(flatten)]
        margins: MarginArgs,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
    },
    /// Homogeneous worst VaR via the dual bound (Pareto margins).
    Dual {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        /// Lower end of the s interval [default: half the Wang value].
        #[arg(long)]
        s_lower: Option<f64>,
        #[arg(long)]
        s_upper: Option<f64>,
    },
    /// Homogeneous worst VaR via Wang's approach (Pareto margins).
    Wang {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Analytic)]
        mode: ModeArg,
        /// Override the lower end of the c interval.
        #[arg(long)]
        c_lower: Option<f64>,
        /// Override the upper end of the c interval.
        #[arg(long)]
        c_upper: Option<f64>,
    },
    /// Rearrangement Algorithm at a fixed N.
    Ra {
        #[command(flatten)]
        margins: MarginArgs,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long = "N", default_value_t = 1024)]
        n: usize,
        /// Absolute tolerance; omit to iterate until all columns are oppositely ordered.
        #[arg(long)]
        abstol: Option<f64>,
        /// Column-step cap per matrix [default: 10 d].
        #[arg(long)]
        max_ra: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimise the maximal row sum on [0, alpha] (best VaR) instead.
        #[arg(long)]
        best: bool,
    },
    /// Adaptive Rearrangement Algorithm.
    Ara {
        #[command(flatten)]
        margins: MarginArgs,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        /// Exponents k, N = 2^k.
        #[arg(long = "K", value_delimiter = ',', default_value = "8,9,10,11,12,13,14,15,16,17,18,19")]
        k: Vec<u32>,
        /// Individual and joint relative tolerances.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01")]
        eps: Vec<f64>,
        #[arg(long)]
        max_ra: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// RA replication study (Study 1: N grid at d = 20; Study 2: d grid at N = 2^8).
    Study {
        #[arg(long, default_value_t = 1)]
        study: u8,
        /// Cases to run [default: all].
        #[arg(long, value_delimiter = ',')]
        case: Vec<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        abstol: f64,
        #[arg(long, default_value_t = 271)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Full-size grids and 100 replications instead of the desk preset.
        #[arg(long)]
        full: bool,
    },
    /// ARA scenario grid over cases, d, and tolerances.
    AraGrid {
        #[arg(long, value_delimiter = ',')]
        case: Vec<String>,
        #[arg(long = "d", value_delimiter = ',')]
        d: Vec<usize>,
        #[arg(long = "K", value_delimiter = ',')]
        k: Vec<u32>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long)]
        max_ra: Option<usize>,
        #[arg(long, default_value_t = 271)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full: bool,
    },
}

#[derive(Args, Debug)]
struct MarginArgs {
    /// Comma-separated Pareto shapes, one per margin.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["theta", "case"])]
    pareto: Vec<f64>,
    /// Common Pareto shape (with --d).
    #[arg(long, conflicts_with = "case")]
    theta: Option<f64>,
    /// Portfolio case HH, LH, LL or LH1 (with --d).
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Analytic,
    Numeric,
    Transformed,
}

enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

type CliResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_case(s: &str) -> Result<CaseId, Failure> {
    s.parse().map_err(|e: Error| usage(e.to_string()))
}

impl MarginArgs {
    fn build(&self) -> Result<Vec<MarginRef>, Failure> {
        if !self.pareto.is_empty() {
            if self.d.is_some_and(|d| d != self.pareto.len()) {
                return Err(usage("--d does not match the length of --pareto"));
            }
            return Ok(self
                .pareto
                .iter()
                .map(|&t| Pareto::new(t).map(Pareto::into_ref))
                .collect::<Result<_, _>>()?);
        }
        let d = self.d.ok_or_else(|| usage("give --pareto, or --d with --theta or --case"))?;
        if let Some(theta) = self.theta {
            let m = Pareto::new(theta)?.into_ref();
            return Ok(vec![m; d]);
        }
        if let Some(case) = &self.case {
            return Ok(case_margins(&CaseSpec::new(parse_case(case)?, d))?);
        }
        Err(usage("give --pareto, or --d with --theta or --case"))
    }
}

/// Prints `name value` rows with the names padded to a common width.
fn table(rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v}");
    }
}

fn g(x: f64) -> String {
    format_g15(x)
}

fn ra_rows(out: &RaOutcome, n: usize) -> Vec<(&'static str, String)> {
    vec![
        ("N", n.to_string()),
        ("s_lower", g(out.lower.bound)),
        ("s_upper", g(out.upper.bound)),
        ("relative_range", g(out.relative_range)),
        ("cols_lower", out.lower.columns_rearranged.to_string()),
        ("cols_upper", out.upper.columns_rearranged.to_string()),
        ("opp_ordered_lower", out.lower.opp_ordered_columns.to_string()),
        ("opp_ordered_upper", out.upper.opp_ordered_columns.to_string()),
        ("converged_lower", out.lower.tolerance_reached.to_string()),
        ("converged_upper", out.upper.tolerance_reached.to_string()),
    ]
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Crude { margins, alpha } => {
            let ms = margins.build()?;
            let (lo, hi) = crude_var_bounds(&ms, alpha)?;
            table(&[("d", ms.len().to_string()), ("lower", g(lo)), ("upper", g(hi))]);
        }
        Command::Dual { theta, d, alpha, s_lower, s_upper } => {
            let s_l = match s_lower {
                Some(s) => s,
                None => 0.5 * worst_var_wang(&WangProblem::pareto(theta, d, alpha, WangMode::Analytic)?)?.value,
            };
            let mut p = DualProblem::new(Pareto::new(theta)?.into_ref(), d, alpha, s_l)?;
            if let Some(s_u) = s_upper {
                p = p.with_s_upper(s_u)?;
            }
            let (lo, hi) = p.s_interval();
            let s = worst_var_dual(&p)?;
            table(&[("s_lower", g(lo)), ("s_upper", g(hi)), ("worst_var", g(s))]);
        }
        Command::Wang { theta, d, alpha, mode, c_lower, c_upper } => {
            let mode = match mode {
                ModeArg::Analytic => WangMode::Analytic,
                ModeArg::Numeric => WangMode::Numeric,
                ModeArg::Transformed => WangMode::Transformed,
            };
            let mut p = WangProblem::pareto(theta, d, alpha, mode)?;
            if c_lower.is_some() || c_upper.is_some() {
                let (l, u) = p.c_interval();
                p = p.with_interval(c_lower.unwrap_or(l), c_upper.unwrap_or(u))?;
            }
            let o = worst_var_wang(&p)?;
            table(&[
                ("c_star", g(o.c_star)),
                ("a_c", g(o.a_c)),
                ("b_c", g(o.b_c)),
                ("worst_var", g(o.value)),
                ("d_ibar", g(o.cross_check)),
                ("discrepancy", g(o.discrepancy)),
            ]);
        }
        Command::Ra { margins, alpha, n, abstol, max_ra, seed, best } => {
            let ms = margins.build()?;
            let cfg = RearrangeConfig {
                tolerance: abstol.map_or(Tolerance::None, Tolerance::Absolute),
                max_column_rearrangements: max_ra,
                seed,
                objective: if best { Objective::MinMax } else { Objective::MaxMin },
                ..RearrangeConfig::default()
            };
            let out = ra_with(&ms, alpha, n, &cfg)?;
            table(&ra_rows(&out, n));
        }
        Command::Ara { margins, alpha, k, eps, max_ra, seed } => {
            let ms = margins.build()?;
            let [e1, e2] = eps[..] else {
                return Err(usage("--eps takes two values: individual,joint"));
            };
            let cfg = AraConfig { k, eps_individual: e1, eps_joint: e2, max_column_rearrangements: max_ra, seed, ..AraConfig::default() };
            let out = ara(&ms, alpha, &cfg)?;
            let ra = RaOutcome { lower: out.lower, upper: out.upper, relative_range: out.relative_range };
            let mut rows = ra_rows(&ra, out.n_used);
            rows[0] = ("N_used", out.n_used.to_string());
            rows.push(("joint_converged", out.joint_converged.to_string()));
            table(&rows);
        }
        Command::Study { study, case, reps, alpha, abstol, seed, jobs, out, full } => {
            let mut spec = match (study, full) {
                (1, false) => StudySpec::study1_desk(),
                (1, true) => StudySpec::study1_full(),
                (2, false) => StudySpec::study2_desk(),
                (2, true) => StudySpec::study2_full(),
                _ => return Err(usage(format!("--study must be 1 or 2, got {study}"))),
            };
            if !case.is_empty() {
                spec.cases = case.iter().map(|c| parse_case(c)).collect::<Result<_, _>>()?;
            }
            if let Some(b) = reps {
                spec.replications = b;
            }
            spec.alpha = alpha;
            spec.eps_abs = abstol;
            spec.base_seed = seed;
            spec.jobs = jobs;
            let res = run_study(&spec, Some(&out))?;
            table(&[
                ("records", res.records.len().to_string()),
                ("failed", res.records.iter().filter(|r| r.failed()).count().to_string()),
                ("cells", res.summaries.len().to_string()),
                ("out", out.display().to_string()),
                ("summary", summary_path(&out).display().to_string()),
            ]);
        }
        Command::AraGrid { case, d, k, reps, alpha, max_ra, seed, jobs, out, full } => {
            let mut spec = if full { AraGridSpec::full() } else { AraGridSpec::desk() };
            if !case.is_empty() {
                spec.cases = case.iter().map(|c| parse_case(c)).collect::<Result<_, _>>()?;
            }
            if !d.is_empty() {
                spec.d_list = d;
            }
            if !k.is_empty() {
                spec.k = k;
            }
            if let Some(b) = reps {
                spec.replications = b;
            }
            spec.alpha = alpha;
            spec.max_column_rearrangements = max_ra;
            spec.base_seed = seed;
            spec.jobs = jobs;
            let res = run_ara_grid(&spec, Some(&out))?;
            table(&[
                ("records", res.records.len().to_string()),
                ("failed", res.records.iter().filter(|r| r.failed()).count().to_string()),
                ("scenarios", res.summaries.len().to_string()),
                ("out", out.display().to_string()),
                ("summary", summary_path(&out).display().to_string()),
            ]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
