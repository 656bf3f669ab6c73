//! The `crossdiff` driver: parses a scenario file, runs solvers and checks
//! and writes CSV and JSON artifacts into an output directory.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error,
//! 3 solver failure.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use crossdiff_core::config::{CheckKind, Scenario};
use crossdiff_core::exponents::exponent_table;
use crossdiff_core::forward::write_diagnostics_csv;
use crossdiff_core::io::write_trajectory_csv;
use crossdiff_core::suite::{check_name, run_selected, Suite};
use crossdiff_core::{Error, VerificationReport};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "crossdiff", version, about = "Numerical lab for cross-diffusion systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the forward problem; writes trajectory.csv and diagnostics.csv.
    Simulate(Common),
    /// Solve the dual problem at every mollification level.
    Dual(Common),
    /// Tabulate the duality pairing along a joint grid, time-step and mollification refinement.
    Uniqueness(Common),
    /// Run the checks listed in `checks.select`.
    Verify(Common),
    /// Dump the exponent table for `checks.exponents`.
    Exponents(Common),
    /// Merge every `*_report.json` in the output directory into one summary.
    Report(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mollification levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
    /// σ values in [0, 1], comma separated.
    #[arg(long = "sigma-grid", value_delimiter = ',')]
    pub sigma_grid: Option<Vec<f64>>,
    /// Tolerance override `key=value`; repeatable.
    #[arg(long = "tol", value_parser = parse_tol)]
    pub tol: Vec<(String, f64)>,
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver { check: String, message: String },
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Solver { .. } => EXIT_SOLVER,
        }
    }

    fn from_error(check: &str, e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            other => Failure::Solver {
                check: check.to_string(),
                message: other.to_string(),
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Solver { check, message } => write!(f, "solver failure in check `{check}`: {message}"),
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(passed) => {
            if passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

/// Runs one subcommand; `Ok(false)` means a check failed.
pub fn execute(command: &Command) -> Result<bool, Failure> {
    match command {
        Command::Simulate(c) => simulate(c),
        Command::Dual(c) => dual(c),
        Command::Uniqueness(c) => uniqueness(c),
        Command::Verify(c) => verify(c),
        Command::Exponents(c) => exponents(c),
        Command::Report(c) => report(c),
    }
}

/// Reads the scenario and applies command-line overrides.
pub fn load_scenario(c: &Common) -> Result<Scenario, Failure> {
    let path = c.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut s = Scenario::from_toml(&text).map_err(|e| Failure::from_error("config", e))?;
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    if let Some(levels) = &c.levels {
        s.checks.levels = levels.clone();
    }
    if let Some(grid) = &c.sigma_grid {
        s.checks.sigma_grid = grid.clone();
    }
    for (k, v) in &c.tol {
        s.checks.set_tolerance(k, *v).map_err(|e| Failure::from_error("config", e))?;
    }
    s.validate().map_err(|e| Failure::from_error("config", e))?;
    Ok(s)
}

fn out_dir(c: &Common) -> Result<&Path, Failure> {
    fs::create_dir_all(&c.out).map_err(|e| Failure::Config(format!("{}: {e}", c.out.display())))?;
    Ok(&c.out)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn io_failure(what: &str) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure::Config(format!("writing {what}: {e}"))
}

fn header(s: &Scenario) -> Vec<(&'static str, String)> {
    vec![("config_hash", s.hash()), ("seed", s.seed.to_string())]
}

fn as_pairs<'a>(h: &'a [(&'static str, String)]) -> Vec<(&'static str, &'a str)> {
    h.iter().map(|(k, v)| (*k, v.as_str())).collect()
}

fn write_report(dir: &Path, stem: &str, report: &VerificationReport) -> Result<(), Failure> {
    let json = report.to_json().map_err(io_failure(stem))?;
    write_text(&dir.join(format!("{stem}.json")), &(json + "\n"))?;
    report.write_csv(create(&dir.join(format!("{stem}.csv")))?).map_err(io_failure(stem))
}

fn print_report(report: &VerificationReport) {
    for check in &report.checks {
        let status = if check.passes() { "pass" } else { "FAIL" };
        println!("{status} {}", check.name);
        for e in check.entries.iter().filter(|e| !e.passes) {
            println!("    {}: lhs {:e} > bound (rhs {:e}, rtol {}, atol {})", e.name, e.lhs, e.rhs, e.rtol, e.atol);
        }
    }
}

fn simulate(c: &Common) -> Result<bool, Failure> {
    let s = load_scenario(c)?;
    let dir = out_dir(c)?;
    let mut suite = Suite::new(&s);
    let describe = suite.model().map_err(|e| Failure::from_error("simulate", e))?.describe();
    let sol = suite.base().map_err(|e| Failure::from_error("simulate", e))?;
    let mut h = header(&s);
    h.push(("model", describe));
    let pairs = as_pairs(&h);
    write_trajectory_csv(&sol.trajectory, &pairs, create(&dir.join("trajectory.csv"))?).map_err(io_failure("trajectory"))?;
    write_diagnostics_csv(&sol.diagnostics, &pairs, create(&dir.join("diagnostics.csv"))?).map_err(io_failure("diagnostics"))?;
    let iters = sol.diagnostics.iter().map(|d| d.newton_iters).max().unwrap_or(0);
    println!("simulate: {} steps, max Newton iterations {iters}", sol.trajectory.steps());
    Ok(true)
}

fn single_check(s: &Scenario, suite: &mut Suite<'_>, kind: CheckKind) -> Result<VerificationReport, Failure> {
    let name = check_name(kind);
    let check = suite.run(kind).map_err(|e| Failure::from_error(&name, e))?;
    let mut report = VerificationReport::new();
    report.meta("config_hash", s.hash());
    report.meta("seed", s.seed);
    report.add(check);
    Ok(report)
}

fn dual(c: &Common) -> Result<bool, Failure> {
    let s = load_scenario(c)?;
    let dir = out_dir(c)?;
    let mut suite = Suite::new(&s);
    let report = single_check(&s, &mut suite, CheckKind::Dual)?;
    let h = header(&s);
    let pairs = as_pairs(&h);
    let levels = suite.pairings().map_err(|e| Failure::from_error("dual", e))?;
    let mut w = create(&dir.join("dual_estimates.csv"))?;
    let rows: Vec<_> = levels.iter().map(|(p, _)| (p.n, p.estimates)).collect();
    write_rows(
        &mut w,
        &pairs,
        &["n", "sup_grad", "laplacian_sq", "psi_sigma", "g_star", "terminal_grad"],
        rows.iter().map(|(n, e)| vec![n.to_string(), e.sup_grad.to_string(), e.laplacian_sq.to_string(), e.psi_sigma.to_string(), e.g_star.to_string(), e.terminal_grad.to_string()]),
    )?;
    for (p, traj) in levels {
        write_trajectory_csv(traj, &pairs, create(&dir.join(format!("dual_n{}.csv", p.n)))?).map_err(io_failure("dual trajectory"))?;
    }
    write_report(dir, "dual_report", &report)?;
    print_report(&report);
    Ok(report.passes())
}

fn uniqueness(c: &Common) -> Result<bool, Failure> {
    let s = load_scenario(c)?;
    let dir = out_dir(c)?;
    let mut suite = Suite::new(&s);
    let report = single_check(&s, &mut suite, CheckKind::Uniqueness)?;
    let h = header(&s);
    let levels = suite.refinement().map_err(|e| Failure::from_error("uniqueness", e))?;
    write_rows(
        &mut create(&dir.join("uniqueness.csv"))?,
        &as_pairs(&h),
        &["level", "nodes", "dt", "n", "pairing", "rhs_diffusion", "rhs_reaction", "scale"],
        levels.iter().enumerate().map(|(i, l)| {
            let p = &l.result;
            vec![
                i.to_string(),
                l.nodes.to_string(),
                l.dt.to_string(),
                p.n.to_string(),
                p.pairing.to_string(),
                p.rhs_diffusion.to_string(),
                p.rhs_reaction.to_string(),
                l.scale.to_string(),
            ]
        }),
    )?;
    write_report(dir, "uniqueness_report", &report)?;
    print_report(&report);
    Ok(report.passes())
}

fn verify(c: &Common) -> Result<bool, Failure> {
    let s = load_scenario(c)?;
    let dir = out_dir(c)?;
    let report = run_selected(&s).map_err(|e| Failure::from_error(&check_name(e.check), e.error))?;
    write_report(dir, "verify_report", &report)?;
    print_report(&report);
    Ok(report.passes())
}

#[derive(Serialize)]
struct ExponentDump {
    config_hash: String,
    table: crossdiff_core::exponents::ExponentTable,
}

fn exponents(c: &Common) -> Result<bool, Failure> {
    let s = load_scenario(c)?;
    let dir = out_dir(c)?;
    let e = s
        .checks
        .exponents
        .as_ref()
        .ok_or_else(|| Failure::Config("exponents needs [checks.exponents]".into()))?;
    let table = exponent_table(e.n, e.p, e.k, e.l, e.sigma).map_err(|e| Failure::Config(e.to_string()))?;
    let dump = ExponentDump {
        config_hash: s.hash(),
        table,
    };
    let json = serde_json::to_string_pretty(&dump).map_err(|e| Failure::Config(e.to_string()))?;
    write_text(&dir.join("exponents.json"), &(json.clone() + "\n"))?;
    println!("{json}");
    Ok(true)
}

/// Merges every `*_report.json` under `--out` (sorted by file name).
fn report(c: &Common) -> Result<bool, Failure> {
    let config = match &c.config {
        Some(_) => Some(load_scenario(c)?),
        None => None,
    };
    let dir = out_dir(c)?;
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with("_report.json"))
        .collect();
    names.sort();
    let mut summary = VerificationReport::new();
    if let Some(s) = &config {
        summary.meta("config_hash", s.hash());
    }
    for name in &names {
        let text = fs::read_to_string(dir.join(name)).map_err(|e| Failure::Config(format!("{name}: {e}")))?;
        let part = VerificationReport::from_json(&text).map_err(|e| Failure::Config(format!("{name}: {e}")))?;
        let stem = name.trim_end_matches(".json");
        if let Some(h) = part.metadata.get("config_hash") {
            summary.meta(format!("{stem}.config_hash"), h);
        }
        for mut check in part.checks {
            check.name = format!("{stem}.{}", check.name);
            summary.add(check);
        }
    }
    write_report(dir, "summary", &summary)?;
    print_report(&summary);
    Ok(summary.passes())
}

fn write_rows<W: std::io::Write>(
    out: &mut W,
    comments: &[(&str, &str)],
    columns: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::Config(format!("writing table: {e}"));
    for (k, v) in comments {
        writeln!(out, "# {k}={v}").map_err(fail)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_fail = |e: csv::Error| Failure::Config(format!("writing table: {e}"));
    w.write_record(columns).map_err(csv_fail)?;
    for r in rows {
        w.write_record(&r).map_err(csv_fail)?;
    }
    w.flush().map_err(fail)
}
