//! Command-line driver.
//!
//! Every command resolves its full configuration (flags over `--config`
//! file over defaults), runs, and writes a CSV table or a JSON document.
//! Both carry the resolved configuration so that a run can be repeated with
//! `--config <output file>`. Worker count, output path and format are
//! deliberately left out of the echo: they do not change the results.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::action_ld::{minimize_action_ld, LdOptions, Target};
use crate::action_md::quasipotential_md;
use crate::deterministic::{solve_lln, DEFAULT_DT};
use crate::error::Error;
use crate::model::{build_model, r0_and_epsilon, ModelKind, ModelParams, ReactionModel};
use crate::predict::{compare_bounds, critical_size, critical_size_md, extinction_quasipotential, fit_log_mean_time};
use crate::quasipotential::QuasiPotential;
use crate::simulate::{gillespie_path, mc_extinction, SimConfig, DEFAULT_T_MAX};

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "EPIEXTINCT_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Version tag of every CSV column layout and JSON document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "epiextinct", version, about = "Stochastic epidemic models and extinction-time predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Model family.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Infection rate.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Recovery rate.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Loss-of-immunity rate (SIRS).
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Birth and death rate (SIR with demography).
    #[arg(long, global = true)]
    mu: Option<f64>,
    /// Seed; defaults to $EPIEXTINCT_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// File of `key=value` lines; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Ld,
    Md,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reaction encoding, endemic equilibrium, Jacobian spectrum, R0.
    ModelInfo,
    /// One Gillespie path of the counts.
    Simulate {
        #[arg(long)]
        pop_size: u64,
        #[arg(long, default_value_t = 100.0)]
        t_max: f64,
        /// Initial proportions; the endemic equilibrium when absent.
        #[arg(long, value_delimiter = ',')]
        z0: Option<Vec<f64>>,
    },
    /// Monte Carlo extinction times at one or more population sizes.
    ExtinctionMc {
        #[arg(long, value_delimiter = ',', required = true)]
        pop_size: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = DEFAULT_T_MAX)]
        t_max: f64,
        #[arg(long, value_delimiter = ',')]
        z0: Option<Vec<f64>>,
    },
    /// Law-of-large-numbers ODE.
    Ode {
        #[arg(long, value_delimiter = ',', required = true)]
        z0: Vec<f64>,
        #[arg(long, default_value_t = 50.0)]
        t_max: f64,
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
    },
    /// Quasi-potential: LD cost of extinction or MD cost of a deviation.
    Quasipotential {
        #[arg(long, value_enum, default_value_t = RegimeArg::Ld)]
        regime: RegimeArg,
        /// Deviation above equilibrium in the infective fraction; LD runs
        /// target extinction when it is absent.
        #[arg(long)]
        a: Option<f64>,
        /// Minimize numerically even where a closed form exists.
        #[arg(long)]
        numerical: bool,
    },
    /// CLT, MD and LD tail exponents for an SIS deviation.
    Bounds {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        pop_size: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
    },
    /// Critical population sizes.
    CriticalSize {
        /// Accepts fractions such as `15/1`.
        #[arg(long, value_parser = parse_number)]
        r0: Option<f64>,
        /// Accepts fractions such as `1/3750`.
        #[arg(long, value_parser = parse_number)]
        epsilon: Option<f64>,
        /// Drop the `(1 - 1/R0)^2` factor.
        #[arg(long)]
        simplified: bool,
        /// Also report the MD critical size at this scale (needs a model).
        #[arg(long)]
        alpha: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ModelInfo => "model-info",
            Command::Simulate { .. } => "simulate",
            Command::ExtinctionMc { .. } => "extinction-mc",
            Command::Ode { .. } => "ode",
            Command::Quasipotential { .. } => "quasipotential",
            Command::Bounds { .. } => "bounds",
            Command::CriticalSize { .. } => "critical-size",
        }
    }
}

/// A decimal number or a fraction `p/q`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let bad = || format!("`{s}` is not a number or fraction");
    match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| bad())?;
            let q: f64 = q.trim().parse().map_err(|_| bad())?;
            if q == 0.0 {
                return Err(bad());
            }
            Ok(p / q)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

/// Failure of a command, mapped onto an exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(format!("i/o error: {e}"))
    }
}

/// Keys never echoed into outputs and never read from config files.
const RUNTIME_KEYS: [&str; 4] = ["workers", "out", "format", "config"];

/// Reads `key=value` lines. A file whose first non-blank line starts with
/// `#@` is an output of this program: only its `#@` lines are read.
fn read_config(path: &PathBuf) -> Result<Vec<(String, String)>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let embedded = text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.starts_with("#@"));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = if embedded {
            match line.strip_prefix("#@") {
                Some(rest) => rest.trim(),
                None => continue,
            }
        } else {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            t
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim().to_string());
        if k == "schema" || RUNTIME_KEYS.contains(&k.as_str()) {
            continue;
        }
        out.push((k, v));
    }
    Ok(out)
}

/// Splices config-file entries in as flags unless the flag was given.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut config_path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            config_path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(p.to_string());
        }
    }
    let Some(path) = config_path else {
        return Ok(args);
    };
    let entries = read_config(&PathBuf::from(path))?;
    let given = |key: &str| {
        let flag = format!("--{key}");
        strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut merged = args;
    for (k, v) in entries {
        if k == "command" {
            if !strs.iter().skip(1).any(|a| *a == v) {
                return Err(Failure::Usage(format!("config was written by `{v}`; run that command")));
            }
            continue;
        }
        if given(&k) {
            continue;
        }
        match v.as_str() {
            "true" => merged.push(format!("--{k}").into()),
            "false" => {}
            _ => merged.push(format!("--{k}={v}").into()),
        }
    }
    Ok(merged)
}

/// Runs the CLI on `args` (program name first), writing results to `stdout`
/// unless `--out` is given and diagnostics to `stderr`. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(f) => return report_failure(f, stderr),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let workers = cli.common.workers;
    let outcome = if workers > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(Failure::Domain(format!("cannot start {workers} workers: {e}"))),
        }
    } else {
        execute(&cli)
    };
    match outcome {
        Ok(report) => {
            let text = report.render(cli.common.format);
            let written = match &cli.common.out {
                Some(path) => fs::write(path, text.as_bytes()),
                None => stdout.write_all(text.as_bytes()),
            };
            if let Err(e) = written {
                return report_failure(Failure::from(e), stderr);
            }
            for w in &report.warnings {
                let _ = writeln!(stderr, "warning: {w}");
            }
            report.exit_code
        }
        Err(f) => report_failure(f, stderr),
    }
}

fn report_failure(f: Failure, stderr: &mut dyn Write) -> i32 {
    match f {
        Failure::Usage(m) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_USAGE
        }
        Failure::Domain(m) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_DOMAIN
        }
    }
}

/// A command's output before formatting.
struct Report {
    command: &'static str,
    config: Vec<(String, String)>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    result: Value,
    warnings: Vec<String>,
    exit_code: i32,
}

impl Report {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = String::new();
                for (k, v) in &self.config {
                    out.push_str(&format!("#@ {k}={v}\n"));
                }
                out.push_str(&format!("#@ schema={}/{}\n", self.command, SCHEMA_VERSION));
                let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
                w.write_record(&self.header).expect("in-memory write");
                for r in &self.rows {
                    w.write_record(r).expect("in-memory write");
                }
                out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"));
                out
            }
            Format::Json => {
                let config: serde_json::Map<String, Value> =
                    self.config.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
                let doc = json!({
                    "schema": format!("{}/{}", self.command, SCHEMA_VERSION),
                    "command": self.command,
                    "config": config,
                    "result": self.result,
                    "warnings": self.warnings,
                });
                let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
                s.push('\n');
                s
            }
        }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// The model flags, validated, with their echo.
fn resolve_model(c: &Common) -> Result<(ModelKind, ModelParams, ReactionModel, Vec<(String, String)>), Failure> {
    let name = c.model.as_deref().ok_or_else(|| Failure::Usage("--model is required".into()))?;
    let kind: ModelKind = name.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let lambda = c.lambda.ok_or_else(|| Failure::Usage("--lambda is required".into()))?;
    let gamma = c.gamma.ok_or_else(|| Failure::Usage("--gamma is required".into()))?;
    let mut echo = vec![
        ("model".to_string(), kind.as_str().to_string()),
        ("lambda".to_string(), num(lambda)),
        ("gamma".to_string(), num(gamma)),
    ];
    let params = match kind {
        ModelKind::Sis => ModelParams::sis(lambda, gamma),
        ModelKind::Sirs => {
            let rho = c.rho.ok_or_else(|| Failure::Usage("--rho is required for sirs".into()))?;
            echo.push(("rho".into(), num(rho)));
            ModelParams::sirs(lambda, gamma, rho)
        }
        ModelKind::SirDemography => {
            let mu = c.mu.ok_or_else(|| Failure::Usage("--mu is required for sir-demography".into()))?;
            echo.push(("mu".into(), num(mu)));
            ModelParams::sir_demography(lambda, gamma, mu)
        }
    };
    let model = build_model(kind, params)?;
    Ok((kind, params, model, echo))
}

fn component_names(kind: ModelKind) -> Vec<&'static str> {
    match kind {
        ModelKind::Sis => vec!["i"],
        ModelKind::Sirs | ModelKind::SirDemography => vec!["i", "s"],
    }
}

fn start_point(model: &ReactionModel, z0: &Option<Vec<f64>>) -> Result<Vec<f64>, Failure> {
    match z0 {
        Some(z) => Ok(z.clone()),
        None => Ok(model.stable_equilibrium()?),
    }
}

fn execute(cli: &Cli) -> Result<Report, Failure> {
    let c = &cli.common;
    let command = cli.command.name();
    let mut config = vec![("command".to_string(), command.to_string())];
    let mut warnings = Vec::new();
    let mut exit_code = EXIT_OK;
    let (header, rows, result): (Vec<String>, Vec<Vec<String>>, Value) = match &cli.command {
        Command::ModelInfo => {
            let (kind, params, model, echo) = resolve_model(c)?;
            config.extend(echo);
            let eq = model.endemic_equilibrium()?;
            if !eq.stable {
                warnings.push("endemic equilibrium is not linearly stable".into());
            }
            let names = component_names(kind);
            let mut rows = vec![vec!["model".to_string(), kind.as_str().to_string()]];
            for (n, z) in names.iter().zip(&eq.z_star) {
                rows.push(vec![format!("z_star_{n}"), num(*z)]);
            }
            for (k, e) in eq.eigenvalues.iter().enumerate() {
                rows.push(vec![format!("eigenvalue_{k}_re"), num(e.re)]);
                rows.push(vec![format!("eigenvalue_{k}_im"), num(e.im)]);
            }
            rows.push(vec!["stable".into(), eq.stable.to_string()]);
            let repro = r0_and_epsilon(&params);
            rows.push(vec!["r0".into(), num(repro.r0)]);
            if kind == ModelKind::SirDemography {
                rows.push(vec!["epsilon".into(), num(repro.epsilon)]);
            }
            let reactions: Vec<Value> = model
                .reactions()
                .iter()
                .map(|r| json!({ "label": r.label, "jump": r.jump }))
                .collect();
            let result = json!({
                "model": kind.as_str(),
                "components": names,
                "params": to_json(&params),
                "reactions": reactions,
                "equilibrium": to_json(&eq),
                "reproduction": to_json(&repro),
            });
            (vec!["quantity".into(), "value".into()], rows, result)
        }
        Command::Simulate { pop_size, t_max, z0 } => {
            let (kind, _, model, echo) = resolve_model(c)?;
            config.extend(echo);
            let seed = resolve_seed(c.seed)?;
            let z = start_point(&model, z0)?;
            config.extend([
                ("pop-size".into(), pop_size.to_string()),
                ("t-max".into(), num(*t_max)),
                ("z0".into(), list(&z)),
                ("seed".into(), seed.to_string()),
            ]);
            let cfg = SimConfig::new(*pop_size, &z, *t_max, seed, 0)?;
            let path = gillespie_path(&model, &cfg)?;
            let names = component_names(kind);
            let mut header = vec!["time".to_string(), "reaction".to_string()];
            header.extend(names.iter().map(|n| n.to_string()));
            let mut rows = Vec::with_capacity(path.num_events() + 1);
            let mut first = vec![num(0.0), String::new()];
            first.extend(path.initial_counts.iter().map(|x| x.to_string()));
            rows.push(first);
            for i in 0..path.num_events() {
                let mut r = vec![num(path.times[i]), model.reactions()[path.reactions[i]].label.clone()];
                r.extend(path.counts[i].iter().map(|x| x.to_string()));
                rows.push(r);
            }
            let result = json!({
                "pop_size": pop_size,
                "initial_counts": path.initial_counts,
                "events": path.num_events(),
                "end_time": path.end_time,
                "termination": to_json(&path.termination),
                "final_counts": path.counts.last().unwrap_or(&path.initial_counts),
            });
            (header, rows, result)
        }
        Command::ExtinctionMc { pop_size, reps, t_max, z0 } => {
            let (_, _, model, echo) = resolve_model(c)?;
            config.extend(echo);
            let seed = resolve_seed(c.seed)?;
            let z = start_point(&model, z0)?;
            config.extend([
                ("pop-size".into(), pop_size.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")),
                ("reps".into(), reps.to_string()),
                ("t-max".into(), num(*t_max)),
                ("z0".into(), list(&z)),
                ("seed".into(), seed.to_string()),
            ]);
            let mut rows = Vec::new();
            let mut summaries = Vec::new();
            let mut all = Vec::new();
            for &n in pop_size {
                let stats = mc_extinction(&model, n, &z, *reps, *t_max, seed, c.workers)?;
                for (r, (t, cens)) in stats.times.iter().zip(&stats.censored).enumerate() {
                    rows.push(vec![n.to_string(), r.to_string(), num(*t), cens.to_string()]);
                }
                if stats.n_censored > 0 {
                    warnings.push(format!("N={n}: {} of {} replicates censored at t_max", stats.n_censored, stats.replicates));
                }
                summaries.push(json!({
                    "pop_size": n,
                    "replicates": stats.replicates,
                    "censored": stats.n_censored,
                    "mean": stats.mean,
                    "log_mean": stats.log_mean,
                    "std_dev": stats.std_dev,
                    "ci_half_width_log": stats.ci_half_width_log,
                }));
                all.push(stats);
            }
            let fit = if all.len() >= 2 { Some(to_json(&fit_log_mean_time(&all)?)) } else { None };
            let header = ["pop_size", "replicate", "time", "censored"].map(String::from).to_vec();
            (header, rows, json!({ "summaries": summaries, "log_mean_fit": fit }))
        }
        Command::Ode { z0, t_max, dt } => {
            let (kind, _, model, echo) = resolve_model(c)?;
            config.extend(echo);
            config.extend([
                ("z0".into(), list(z0)),
                ("t-max".into(), num(*t_max)),
                ("dt".into(), num(*dt)),
            ]);
            let traj = solve_lln(&model, z0, *t_max, *dt)?;
            let mut header = vec!["time".to_string()];
            header.extend(component_names(kind).iter().map(|n| n.to_string()));
            let rows = traj
                .times()
                .iter()
                .zip(traj.states())
                .map(|(t, s)| std::iter::once(num(*t)).chain(s.iter().map(|x| num(*x))).collect())
                .collect();
            let result = json!({ "times": traj.times(), "states": traj.states() });
            (header, rows, result)
        }
        Command::Quasipotential { regime, a, numerical } => {
            let (kind, params, model, echo) = resolve_model(c)?;
            config.extend(echo);
            config.push(("regime".into(), format!("{regime:?}").to_lowercase()));
            if let Some(a) = a {
                config.push(("a".into(), num(*a)));
            }
            if *numerical {
                config.push(("numerical".into(), "true".into()));
            }
            let q: QuasiPotential = match regime {
                RegimeArg::Md => {
                    let a = a.ok_or_else(|| Failure::Usage("--a is required for --regime md".into()))?;
                    if *numerical {
                        crate::action_md::quasipotential_md_gramian(&model, a, &Default::default())?
                    } else {
                        quasipotential_md(&model, a)?
                    }
                }
                RegimeArg::Ld => {
                    let z = model.stable_equilibrium()?;
                    let level = match a {
                        Some(a) => z[0] + a,
                        None => 0.0,
                    };
                    if kind == ModelKind::Sis && !*numerical {
                        match a {
                            Some(a) => QuasiPotential::closed_form(crate::action_ld::ld_exit_cost_sis(&params, *a)?),
                            None => extinction_quasipotential(&model)?,
                        }
                    } else if a.is_none() && !*numerical {
                        extinction_quasipotential(&model)?
                    } else {
                        minimize_action_ld(&model, &z, &Target::Hyperplane { component: 0, level }, &LdOptions::default())?
                    }
                }
            };
            if !q.converged || !q.warnings.is_empty() {
                exit_code = EXIT_CONVERGENCE;
            }
            warnings.extend(q.warnings.iter().cloned());
            let header = ["regime", "value", "provenance", "horizon", "converged"].map(String::from).to_vec();
            let rows = vec![vec![
                format!("{regime:?}").to_lowercase(),
                num(q.value),
                to_json(&q.provenance).as_str().unwrap_or_default().to_string(),
                q.horizon.map(num).unwrap_or_else(|| num(f64::INFINITY)),
                q.converged.to_string(),
            ]];
            (header, rows, to_json(&q))
        }
        Command::Bounds { a, pop_size, alpha, eta } => {
            let (kind, params, _, echo) = resolve_model(c)?;
            if kind != ModelKind::Sis {
                return Err(Failure::Domain("bounds are available for the SIS model only".into()));
            }
            config.extend(echo);
            config.extend([
                ("a".into(), num(*a)),
                ("pop-size".into(), num(*pop_size)),
                ("alpha".into(), num(*alpha)),
                ("eta".into(), num(*eta)),
            ]);
            let b = compare_bounds(&params, *a, *pop_size, *alpha, *eta)?;
            if let Some(e) = &b.ld_error {
                warnings.push(format!("LD entry unavailable: {e}"));
                exit_code = EXIT_DOMAIN;
            }
            let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
            let header = ["a", "pop_size", "alpha", "eta", "clt", "md", "ld", "ld_quadratic_ratio", "ld_ratio_taylor"]
                .map(String::from)
                .to_vec();
            let rows = vec![vec![
                num(b.a),
                num(b.pop_size),
                num(b.alpha),
                num(b.eta),
                num(b.clt),
                num(b.md),
                opt(b.ld),
                opt(b.ld_quadratic_ratio),
                num(b.ld_ratio_taylor),
            ]];
            (header, rows, to_json(&b))
        }
        Command::CriticalSize { r0, epsilon, simplified, alpha } => {
            let have_model = c.model.is_some();
            let (r0v, eps, model) = match (r0, epsilon) {
                (Some(r), Some(e)) => (*r, *e, if have_model { Some(resolve_model(c)?) } else { None }),
                (None, None) => {
                    let m = resolve_model(c)?;
                    if m.0 != ModelKind::SirDemography {
                        return Err(Failure::Usage(
                            "give --r0 and --epsilon, or an sir-demography model".into(),
                        ));
                    }
                    let s = r0_and_epsilon(&m.1);
                    (s.r0, s.epsilon, Some(m))
                }
                _ => return Err(Failure::Usage("--r0 and --epsilon go together".into())),
            };
            if let Some(m) = &model {
                config.extend(m.3.iter().cloned());
            }
            if r0.is_some() {
                config.extend([("r0".into(), num(r0v)), ("epsilon".into(), num(eps))]);
            }
            if *simplified {
                config.push(("simplified".into(), "true".into()));
            }
            let cs = critical_size(r0v, eps)?;
            let value = if *simplified { cs.simplified } else { cs.full };
            let mut header = ["r0", "epsilon", "formula", "critical_size"].map(String::from).to_vec();
            let mut row = vec![
                num(r0v),
                num(eps),
                if *simplified { "simplified" } else { "full" }.to_string(),
                num(value),
            ];
            let mut result = json!({ "r0": r0v, "epsilon": eps, "full": cs.full, "simplified": cs.simplified, "critical_size": value });
            if let Some(alpha) = alpha {
                let m = model
                    .as_ref()
                    .ok_or_else(|| Failure::Usage("--alpha needs a model for the endemic level".into()))?;
                config.push(("alpha".into(), num(*alpha)));
                let nc = critical_size_md(&m.2, *alpha)?;
                header.extend(["alpha".to_string(), "critical_size_md".to_string()]);
                row.extend([num(*alpha), num(nc)]);
                result["alpha"] = json!(alpha);
                result["critical_size_md"] = json!(nc);
            }
            (header, vec![row], result)
        }
    };
    Ok(Report {
        command,
        config,
        header,
        rows,
        result,
        warnings,
        exit_code,
    })
}

/// Config echo of a finished report, for tests and bindings.
pub fn parse_embedded_config(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.strip_prefix("#@"))
        .filter_map(|l| l.trim().split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("epiextinct").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_number("1/4").unwrap(), 0.25);
        assert_eq!(parse_number(" 2.5 ").unwrap(), 2.5);
        assert!(parse_number("1/0").is_err());
        assert!(parse_number("x").is_err());
    }

    #[test]
    fn model_info_sis() {
        let (code, out, _) = call(&["model-info", "--model", "sis", "--lambda", "2", "--gamma", "1"]);
        assert_eq!(code, 0);
        assert!(out.contains("z_star_i,0.5\n"));
        assert!(out.contains("eigenvalue_0_re,-1\n"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(call(&["model-info", "--model", "sis", "--lambda", "1", "--gamma", "2"]).0, EXIT_DOMAIN);
        assert_eq!(call(&["model-info", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(call(&["model-info", "--model", "sis"]).0, EXIT_USAGE);
        assert_eq!(call(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn critical_size_example() {
        let (code, out, _) = call(&["critical-size", "--r0", "15", "--epsilon", "1/3750", "--simplified"]);
        assert_eq!(code, 0);
        let last: Vec<&str> = out.lines().last().unwrap().split(',').collect();
        assert_eq!(last[2], "simplified");
        assert!((last[3].parse::<f64>().unwrap() - 937_500.0).abs() < 1e-6, "{out}");
    }

    #[test]
    fn embedded_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.csv");
        let args = ["ode", "--model", "sirs", "--lambda", "2", "--gamma", "1", "--rho", "1", "--z0", "0.1,0.8", "--t-max", "2"];
        let mut full: Vec<&str> = args.to_vec();
        let p = first.to_str().unwrap();
        full.extend(["--out", p]);
        assert_eq!(call(&full).0, 0);
        let (code, again, _) = call(&["ode", "--config", p]);
        assert_eq!(code, 0);
        assert_eq!(again, fs::read_to_string(&first).unwrap());
        let cfg = parse_embedded_config(&again);
        assert_eq!(cfg["rho"], "1");
        assert!(!cfg.contains_key("out"));
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nmodel=sis\nlambda=3\ngamma=1\n").unwrap();
        let p = path.to_str().unwrap();
        let (_, out, _) = call(&["model-info", "--config", p, "--lambda", "2"]);
        assert!(out.contains("#@ lambda=2\n") && out.contains("z_star_i,0.5\n"), "{out}");
    }
}
