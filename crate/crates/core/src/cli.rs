//! Command-line front end.
//!
//! Every run is described by a [`RunConfig`]. Flags are collected into a JSON
//! object laid over the defaults, and a `--config` file is laid over both, so
//! file values win. The resolved config is written next to the output as
//! `<out>.config.json`, or to stderr when the output goes to stdout.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::capacity_opt::{
    default_lambda_grid, feedback_capacity, information_bearing_capacity, kkt_structure_check,
    sup_entropy_feedback, sup_entropy_weak, weak_feedback_bound, CapacityPoint, InfoBearing,
    KktReport, Problem, SolverOptions,
};
use crate::channel_oracle::{Discipline, Enumeration, InterarrivalLaw, McOptions};
use crate::distributions::{Pmf, ServiceKind, ServiceModel};
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::gap_checker::{
    entropy_rate_condition_with, theorem5_check, GapReport, RateConditionReport, RateMethod,
    RateOptions,
};
use crate::queue_sim::{simulate_fifo, simulate_lcfs_preemptive, QueueTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_)
        | Error::InvalidPmf(_)
        | Error::UnstableRate { .. }
        | Error::InsufficientTruncation { .. }
        | Error::InsufficientSupport { .. }
        | Error::Config(_) => EXIT_CONFIG,
        Error::NonConvergence { .. } | Error::TruncationInadequate { .. } => EXIT_NON_CONVERGENCE,
        Error::BudgetExceeded { .. } | Error::Undersampled { .. } => EXIT_BUDGET,
        Error::Io(_) => EXIT_IO,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    /// Feedback capacity and weak-feedback bound over rates.
    Capacity,
    /// Strict-gap sweep.
    Gap,
    /// Entropy-rate condition.
    EntropyRate,
    /// Queue trace.
    Simulate,
    /// Stationarity structure of the binary optimizers.
    KktCheck,
    /// Capacity with an information-bearing packet payload.
    InfoBearing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BoundChoice {
    Feedback,
    WeakFeedback,
    Both,
}

/// A complete, reproducible description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<CommandKind>,
    pub service: ServiceKind,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    /// Which curve(s) `capacity` reports, and which curve `info-bearing` uses.
    pub bound: BoundChoice,
    pub solver: SolverOptions,
    pub enumeration: Enumeration,
    pub mc: McOptions,
    pub seed: Option<u64>,
    /// Output path, `-` for stdout.
    pub out: String,
    /// Defaults from the output extension, then from the command.
    pub format: Option<Format>,
    pub policy: Discipline,
    /// Packets (`simulate`) or block length (`entropy-rate`).
    pub n: Option<usize>,
    pub method: RateMethod,
    pub burn_in: usize,
    /// Interarrival law replacing geometric(`lambda`).
    pub interarrivals: Option<Pmf>,
    pub problem: Problem,
    /// Payload bits per packet.
    pub c0: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            service: ServiceKind::Binary12,
            lambda: None,
            lambda_grid: None,
            bound: BoundChoice::Both,
            solver: SolverOptions::default(),
            enumeration: Enumeration::default(),
            mc: McOptions::default(),
            seed: None,
            out: "-".into(),
            format: None,
            policy: Discipline::Fifo,
            n: None,
            method: RateMethod::Exact,
            burn_in: 0,
            interarrivals: None,
            problem: Problem::Feedback,
            c0: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ServiceFlag {
    Binary12,
    Geometric,
    Deterministic,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyFlag {
    Fifo,
    #[value(alias = "lcfs_preemptive", alias = "lcfs-preemptive")]
    Lcfs,
}

/// Capacity bounds for discrete-time single-server queue timing channels.
#[derive(Debug, Parser)]
#[command(name = "queuecap", version)]
struct Cli {
    command: CommandKind,
    /// JSON run config; its values override flags.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    service: Option<ServiceFlag>,
    /// Service rate (geometric service).
    #[arg(long)]
    mu: Option<f64>,
    /// Service time (deterministic service).
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated probabilities of 0, 1, 2, ... (custom service).
    #[arg(long)]
    pmf: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    bound: Option<BoundChoice>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    constraint_tol: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    support_cap: Option<usize>,
    /// Cap on enumerated states.
    #[arg(long)]
    budget: Option<u128>,
    #[arg(long)]
    tail_tol: Option<f64>,
    #[arg(long)]
    max_horizon: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path, `-` for stdout.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    policy: Option<PolicyFlag>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    method: Option<MethodFlag>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Comma-separated probabilities of interarrival 0, 1, 2, ...
    #[arg(long)]
    interarrivals: Option<String>,
    #[arg(long)]
    problem: Option<ProblemFlag>,
    #[arg(long)]
    c0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodFlag {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProblemFlag {
    Feedback,
    Weak,
}

fn dense_pmf(text: &str) -> Result<Value> {
    let probs = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad probability {t:?}: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    let pmf = Pmf::from_dense(&probs, 0.0)?;
    serde_json::to_value(pmf).map_err(|e| Error::Config(e.to_string()))
}

/// Parses `start:stop:step` (stop included) or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number {t:?} in grid: {e}")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if !(h > 0.0) || b < a {
                return Err(Error::Config(format!("bad grid {text:?}")));
            }
            let count = ((b - a) / h + 1e-9).floor() as usize + 1;
            // rounding keeps 0.3 + 0.04 k free of representation noise
            Ok((0..count).map(|i| ((a + h * i as f64) * 1e12).round() / 1e12).collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(Error::Config(format!("bad grid {text:?}"))),
    }
}

fn flags_to_value(cli: &Cli) -> Result<Value> {
    let mut m = Map::new();
    m.insert("command".into(), serde_json::to_value(cli.command).expect("enum"));
    let service = match (cli.service, cli.mu, cli.k, &cli.pmf) {
        (None, None, None, None) => None,
        (Some(ServiceFlag::Binary12), None, None, None) => Some(json!({"kind": "binary12"})),
        (Some(ServiceFlag::Geometric) | None, Some(mu), None, None) => {
            Some(json!({"kind": "geometric", "mu": mu}))
        }
        (Some(ServiceFlag::Deterministic) | None, None, Some(k), None) => {
            Some(json!({"kind": "deterministic", "k": k}))
        }
        (Some(ServiceFlag::Custom) | None, None, None, Some(p)) => {
            Some(json!({"kind": "custom", "pmf": dense_pmf(p)?}))
        }
        _ => {
            return Err(Error::Config(
                "service flags: use --mu with geometric, --k with deterministic, --pmf with custom"
                    .into(),
            ))
        }
    };
    if let Some(s) = service {
        m.insert("service".into(), s);
    }
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.into(), v);
        }
    };
    put("lambda", cli.lambda.map(|x| json!(x)));
    put("lambda_grid", cli.lambda_grid.as_deref().map(parse_grid).transpose()?.map(|g| json!(g)));
    put("bound", cli.bound.map(|b| serde_json::to_value(b).expect("enum")));
    put("seed", cli.seed.map(|x| json!(x)));
    put("out", cli.out.clone().map(Value::String));
    put("format", cli.format.map(|f| serde_json::to_value(f).expect("enum")));
    put(
        "policy",
        cli.policy.map(|p| {
            json!(match p {
                PolicyFlag::Fifo => "fifo",
                PolicyFlag::Lcfs => "lcfs_preemptive",
            })
        }),
    );
    put("n", cli.n.map(|x| json!(x)));
    put(
        "method",
        cli.method.map(|x| {
            json!(match x {
                MethodFlag::Exact => "exact",
                MethodFlag::Mc => "mc",
            })
        }),
    );
    put("burn_in", cli.burn_in.map(|x| json!(x)));
    put("interarrivals", cli.interarrivals.as_deref().map(dense_pmf).transpose()?);
    put(
        "problem",
        cli.problem.map(|x| {
            json!(match x {
                ProblemFlag::Feedback => "feedback",
                ProblemFlag::Weak => "weak",
            })
        }),
    );
    put("c0", cli.c0.map(|x| json!(x)));

    let mut solver = Map::new();
    for (k, v) in [
        ("tol", cli.tol.map(|x| json!(x))),
        ("constraint_tol", cli.constraint_tol.map(|x| json!(x))),
        ("max_iterations", cli.max_iterations.map(|x| json!(x))),
        ("support_cap", cli.support_cap.map(|x| json!(x))),
    ] {
        if let Some(v) = v {
            solver.insert(k.into(), v);
        }
    }
    let mut enumeration = Map::new();
    for (k, v) in [
        ("budget", cli.budget.map(|x| json!(x))),
        ("tail_tol", cli.tail_tol.map(|x| json!(x))),
        ("max_horizon", cli.max_horizon.map(|x| json!(x))),
    ] {
        if let Some(v) = v {
            enumeration.insert(k.into(), v);
        }
    }
    let mut mc = Map::new();
    for (k, v) in [("samples", cli.samples.map(|x| json!(x))), ("bootstrap", cli.bootstrap.map(|x| json!(x)))] {
        if let Some(v) = v {
            mc.insert(k.into(), v);
        }
    }
    for (k, sub) in [("solver", solver), ("enumeration", enumeration), ("mc", mc)] {
        if !sub.is_empty() {
            m.insert(k.into(), Value::Object(sub));
        }
    }
    Ok(Value::Object(m))
}

/// Lays `top` over `base`; nested objects merge key by key, except the
/// tagged service description, which is replaced whole.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if k != "service" && slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn default_format(command: CommandKind, out: &str) -> Format {
    match Path::new(out).extension().and_then(|e| e.to_str()) {
        Some("csv") => return Format::Csv,
        Some("json") => return Format::Json,
        _ => {}
    }
    match command {
        CommandKind::Gap | CommandKind::Simulate => Format::Csv,
        _ => Format::Json,
    }
}

/// Builds the resolved config: flags, then the file over them, then defaults
/// that depend on other fields.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("serializable");
    merge(&mut value, flags_to_value(cli)?);
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        if !file.is_object() {
            return Err(Error::Config(format!("{path}: expected a JSON object")));
        }
        merge(&mut value, file);
    }
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    let command = cfg.command.ok_or_else(|| Error::Config("no command".into()))?;
    let service = ServiceModel::new(cfg.service.clone())?;
    if cfg.format.is_none() {
        cfg.format = Some(default_format(command, &cfg.out));
    }
    match command {
        CommandKind::Capacity | CommandKind::Gap | CommandKind::InfoBearing => {
            if cfg.lambda_grid.is_none() {
                cfg.lambda_grid = Some(match cfg.lambda {
                    Some(l) => vec![l],
                    None => default_lambda_grid(service.mu()),
                });
            }
        }
        CommandKind::Simulate | CommandKind::EntropyRate => {
            if cfg.lambda.is_none() && cfg.interarrivals.is_none() {
                return Err(Error::Config(format!("{command:?} needs --lambda or interarrivals")));
            }
            if cfg.seed.is_none() && (command == CommandKind::Simulate || cfg.method == RateMethod::Mc) {
                return Err(Error::Config("stochastic runs need an explicit --seed".into()));
            }
            if cfg.n.is_none() {
                cfg.n = Some(if command == CommandKind::Simulate { 1000 } else { 4 });
            }
        }
        CommandKind::KktCheck => {
            if cfg.lambda.is_none() {
                return Err(Error::Config("kkt-check needs --lambda".into()));
            }
        }
    }
    Ok(cfg)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn arrivals_of(cfg: &RunConfig) -> Result<InterarrivalLaw> {
    match (&cfg.interarrivals, cfg.lambda) {
        (Some(pmf), _) => Ok(InterarrivalLaw::Custom { pmf: pmf.clone() }),
        (None, Some(lambda)) => Ok(InterarrivalLaw::Geometric { lambda }),
        (None, None) => Err(Error::Config("no arrival law".into())),
    }
}

/// Output text and the first per-point error, if any.
struct Artifact {
    text: String,
    error: Option<Error>,
}

fn run_capacity(cfg: &RunConfig, service: &ServiceModel, format: Format) -> Result<Artifact> {
    let grid = cfg.lambda_grid.as_deref().unwrap_or_default();
    let mut points: Vec<CapacityPoint> = Vec::new();
    for &lambda in grid {
        if matches!(cfg.bound, BoundChoice::Feedback | BoundChoice::Both) {
            points.push(feedback_capacity(lambda, service, &cfg.solver)?);
        }
        if matches!(cfg.bound, BoundChoice::WeakFeedback | BoundChoice::Both) {
            points.push(weak_feedback_bound(lambda, service, &cfg.solver)?);
        }
    }
    let text = match format {
        Format::Json => to_json(&points),
        Format::Csv => {
            let mut s = format!("bound,{}\n", CapacityPoint::CSV_HEADER);
            for p in &points {
                let bound = serde_json::to_value(p.bound).expect("enum");
                s.push_str(&format!("{},{}\n", bound.as_str().expect("string"), p.csv_row()));
            }
            s
        }
    };
    Ok(Artifact { text, error: None })
}

#[derive(Serialize)]
struct GapOutput<'a> {
    note: &'static str,
    reports: Vec<&'a GapReport>,
    errors: Vec<PointError>,
}

#[derive(Serialize)]
struct PointError {
    lambda: f64,
    error: String,
}

fn run_gap(cfg: &RunConfig, service: &ServiceModel, format: Format) -> Result<Artifact> {
    let grid = cfg.lambda_grid.clone().unwrap_or_default();
    let results = theorem5_check(service, &grid, &cfg.solver);
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    let mut first = None;
    for (&lambda, r) in grid.iter().zip(results) {
        match r {
            Ok(r) => reports.push(r),
            Err(e) => {
                eprintln!("warning: lambda = {lambda}: {e}");
                errors.push(PointError { lambda, error: e.to_string() });
                first.get_or_insert(e);
            }
        }
    }
    let text = match format {
        Format::Json => to_json(&GapOutput {
            note: "gap magnitudes are measured values",
            reports: reports.iter().collect(),
            errors,
        }),
        Format::Csv => {
            let mut s = format!("{}\n", GapReport::CSV_HEADER);
            for r in &reports {
                s.push_str(&r.csv_row());
                s.push('\n');
            }
            s
        }
    };
    Ok(Artifact { text, error: first })
}

fn run_entropy_rate(cfg: &RunConfig, service: &ServiceModel, format: Format) -> Result<Artifact> {
    let opts = RateOptions {
        n: cfg.n.unwrap_or(4),
        method: cfg.method,
        enumeration: cfg.enumeration,
        mc: cfg.mc,
        seed: cfg.seed,
        burn_in: cfg.burn_in,
    };
    let r: RateConditionReport = entropy_rate_condition_with(service, cfg.policy, &arrivals_of(cfg)?, &opts)?;
    let text = match format {
        Format::Json => to_json(&r),
        Format::Csv => {
            let tag = |v: &Value| v.as_str().expect("string").to_string();
            format!(
                "lambda,h_geometric_bits,lower_bits,upper_bits,n,method,satisfied\n{},{},{},{},{},{},{}\n",
                g9(r.lambda),
                g9(r.h_geometric),
                g9(r.rate_bracket[0]),
                g9(r.rate_bracket[1]),
                r.n,
                tag(&serde_json::to_value(r.method).expect("enum")),
                tag(&serde_json::to_value(r.satisfied).expect("enum")),
            )
        }
    };
    Ok(Artifact { text, error: None })
}

fn run_simulate(cfg: &RunConfig, service: &ServiceModel, format: Format) -> Result<Artifact> {
    let policy = arrivals_of(cfg)?.policy();
    let (n, seed) = (cfg.n.unwrap_or(1000), cfg.seed.expect("checked on resolve"));
    let trace: QueueTrace = match cfg.policy {
        Discipline::Fifo => simulate_fifo(&policy, service, n, seed)?,
        Discipline::LcfsPreemptive => simulate_lcfs_preemptive(&policy, service, n, seed)?,
    };
    let text = match format {
        Format::Json => to_json(&trace),
        Format::Csv => trace.to_csv(),
    };
    Ok(Artifact { text, error: None })
}

#[derive(Serialize)]
struct KktOutput {
    lambda: f64,
    passes: bool,
    report: KktReport,
}

fn run_kkt(cfg: &RunConfig, service: &ServiceModel, format: Format) -> Result<Artifact> {
    let lambda = cfg.lambda.expect("checked on resolve");
    let a = crate::capacity_opt::mean_budget(lambda, service.mu())?;
    let sup = match cfg.problem {
        Problem::Feedback => sup_entropy_feedback(service, a, &cfg.solver)?,
        Problem::Weak => sup_entropy_weak(service, a, &cfg.solver)?,
    };
    let report = kkt_structure_check(cfg.problem, &sup.output, lambda)?;
    let out = KktOutput { lambda, passes: report.passes(1e-4), report };
    let text = match format {
        Format::Json => to_json(&out),
        Format::Csv => format!(
            "lambda,residual,budget_multiplier,passes\n{},{},{},{}\n",
            g9(lambda),
            g9(out.report.residual),
            g9(out.report.budget_multiplier()),
            out.passes
        ),
    };
    Ok(Artifact { text, error: None })
}

fn run_info_bearing(cfg: &RunConfig, service: &ServiceModel, format: Format) -> Result<Artifact> {
    let grid = cfg.lambda_grid.clone().unwrap_or_default();
    let opts = cfg.solver.clone();
    let weak = cfg.bound == BoundChoice::WeakFeedback;
    let curve = |l: f64| -> Result<f64> {
        let p = if weak { weak_feedback_bound(l, service, &opts)? } else { feedback_capacity(l, service, &opts)? };
        Ok(p.value_bits_per_slot)
    };
    let r: InfoBearing = information_bearing_capacity(curve, cfg.c0, service.mu(), &grid)?;
    let text = match format {
        Format::Json => to_json(&r),
        Format::Csv => format!("lambda,value_bits_per_slot\n{},{}\n", g9(r.lambda), g9(r.value_bits_per_slot)),
    };
    Ok(Artifact { text, error: None })
}

/// Runs a resolved config and writes its artifacts.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let command = cfg.command.ok_or_else(|| Error::Config("no command".into()))?;
    let service = ServiceModel::new(cfg.service.clone())?;
    let format = cfg.format.unwrap_or_else(|| default_format(command, &cfg.out));
    let artifact = match command {
        CommandKind::Capacity => run_capacity(cfg, &service, format)?,
        CommandKind::Gap => run_gap(cfg, &service, format)?,
        CommandKind::EntropyRate => run_entropy_rate(cfg, &service, format)?,
        CommandKind::Simulate => run_simulate(cfg, &service, format)?,
        CommandKind::KktCheck => run_kkt(cfg, &service, format)?,
        CommandKind::InfoBearing => run_info_bearing(cfg, &service, format)?,
    };
    let config_text = to_json(cfg);
    if cfg.out == "-" {
        print!("{}", artifact.text);
        eprint!("resolved config: {config_text}");
    } else {
        fs::write(&cfg.out, &artifact.text)?;
        fs::write(format!("{}.config.json", cfg.out), config_text)?;
    }
    match artifact.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Parses arguments, runs, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match resolve(&cli).and_then(|cfg| run(&cfg)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
