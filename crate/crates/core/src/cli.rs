//! Command-line front end: single runs, step-size sweeps, and trace audits.
//!
//! Settings come from flags, then an optional `key=value` file given by
//! `--config`, then defaults. Exit status is 0 on success, 1 when a run does
//! not converge or an audit fails, and 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{audit_identities, csv_row, RunReport, StepRecord, SweepTable};
use crate::error::{Error, Result};
use crate::flow::{run_flow, EnergySystem, FlowConfig, Method, Metric};
use crate::mesh::centered_unit_square;
use crate::seq_calculus::StepSize;
use crate::sphere_data::{make_initial, InitSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Energy of the exact harmonic map on the centered unit square.
pub const DEFAULT_REFERENCE_ENERGY: f64 = 3.009;

#[derive(Parser, Debug)]
#[command(name = "harmflow", version, about = "Projection-free BDF2 and Euler flows for sphere-valued harmonic maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one flow and write a summary row (and optionally a per-step trace).
    Run(FlowArgs),
    /// Run one flow per step size and write the convergence table.
    Sweep(FlowArgs),
    /// Print the identity residual summary of a saved trace.
    Audit(AuditArgs),
}

#[derive(Args, Debug, Default)]
struct FlowArgs {
    /// key=value file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cells per side of the mesh on (-1/2, 1/2)^2.
    #[arg(long)]
    mesh_n: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    /// Step size, or a comma-separated list for sweeps.
    #[arg(long)]
    tau: Option<String>,
    /// `lo:hi`, meaning step sizes 2^-lo, ..., 2^-hi.
    #[arg(long)]
    tau_range: Option<String>,
    #[arg(long)]
    eps_stop: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    #[arg(long)]
    max_steps: Option<String>,
    /// exact, perturbed or random.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    perturb_amplitude: Option<String>,
    #[arg(long)]
    ref_energy: Option<String>,
    /// Summary CSV destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step trace destination (run only).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// on or off.
    #[arg(long)]
    audit: Option<String>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Trace file written by `run --trace-out`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = "bdf2")]
    method: String,
}

/// Fully resolved settings of a run or sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub mesh_n: usize,
    pub method: Method,
    pub metric: Metric,
    pub taus: Vec<f64>,
    pub eps_stop: f64,
    pub t_max: f64,
    pub max_steps: usize,
    pub init: InitSpec,
    pub reference_energy: f64,
    pub audit: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            mesh_n: 32,
            method: Method::Bdf2,
            metric: Metric::H1,
            taus: vec![0.125],
            eps_stop: 1e-3,
            t_max: 1e6,
            max_steps: 1_000_000,
            init: InitSpec::perturbed(0.5, 0),
            reference_energy: DEFAULT_REFERENCE_ENERGY,
            audit: true,
        }
    }
}

/// Parses a flat `key=value` file; `#` starts a comment, dashes and
/// underscores in keys are interchangeable.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("invalid value {v:?} for {key}")))
}

/// `2:5` → `[2⁻², 2⁻³, 2⁻⁴, 2⁻⁵]`.
pub fn parse_tau_range(s: &str) -> Result<Vec<f64>> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("tau range {s:?} is not lo:hi")))?;
    let (lo, hi): (i32, i32) = (parse("tau-range", lo.trim())?, parse("tau-range", hi.trim())?);
    if hi < lo {
        return Err(Error::Parse(format!("empty tau range {s:?}")));
    }
    Ok((lo..=hi).map(|m| StepSize::pow2(m).get()).collect())
}

fn parse_tau_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t: f64 = parse("tau", t.trim())?;
            StepSize::new(t).map(StepSize::get)
        })
        .collect()
}

impl FlowArgs {
    fn flag_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v.clone());
            }
        };
        put("mesh_n", &self.mesh_n);
        put("method", &self.method);
        put("metric", &self.metric);
        put("tau", &self.tau);
        put("tau_range", &self.tau_range);
        put("eps_stop", &self.eps_stop);
        put("t_max", &self.t_max);
        put("max_steps", &self.max_steps);
        put("init", &self.init);
        put("seed", &self.seed);
        put("perturb_amplitude", &self.perturb_amplitude);
        put("ref_energy", &self.ref_energy);
        put("audit", &self.audit);
        m
    }
}

impl CliConfig {
    /// Applies `settings` over the defaults.
    pub fn from_settings(settings: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = CliConfig::default();
        let mut init_kind = "perturbed".to_string();
        let mut seed = 0u64;
        let mut amplitude = 0.5;
        for (k, v) in settings {
            match k.as_str() {
                "mesh_n" => c.mesh_n = parse(k, v)?,
                "method" => c.method = v.parse()?,
                "metric" => c.metric = v.parse()?,
                "tau" => c.taus = parse_tau_list(v)?,
                "tau_range" => {}
                "eps_stop" => c.eps_stop = parse(k, v)?,
                "t_max" => c.t_max = parse(k, v)?,
                "max_steps" => c.max_steps = parse(k, v)?,
                "init" => init_kind = v.clone(),
                "seed" => seed = parse(k, v)?,
                "perturb_amplitude" => amplitude = parse(k, v)?,
                "ref_energy" => c.reference_energy = parse(k, v)?,
                "audit" => {
                    c.audit = match v.as_str() {
                        "on" => true,
                        "off" => false,
                        _ => return Err(Error::Parse(format!("audit must be on or off, got {v:?}"))),
                    }
                }
                _ => return Err(Error::Parse(format!("unknown setting {k:?}"))),
            }
        }
        match (settings.get("tau"), settings.get("tau_range")) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument("give either tau or tau-range".into()))
            }
            (None, Some(r)) => c.taus = parse_tau_range(r)?,
            _ => {}
        }
        c.init = match init_kind.as_str() {
            "exact" => InitSpec::exact(),
            "perturbed" => InitSpec::perturbed(amplitude, seed),
            "random" => InitSpec::random(seed),
            _ => return Err(Error::Parse(format!("unknown init kind {init_kind:?}"))),
        };
        if c.mesh_n < 2 {
            return Err(Error::InvalidArgument("mesh-n must be at least 2".into()));
        }
        if !(c.eps_stop > 0.0) || !(c.t_max > 0.0) {
            return Err(Error::InvalidArgument("eps-stop and t-max must be positive".into()));
        }
        Ok(c)
    }

    pub fn flow_config(&self, tau: f64) -> Result<FlowConfig> {
        let mut f = FlowConfig::new(self.method, self.metric, StepSize::new(tau)?);
        f.eps_stop = self.eps_stop;
        f.t_max = self.t_max;
        f.max_steps = self.max_steps;
        f.reference_energy = Some(self.reference_energy);
        Ok(f)
    }

    /// Sweeps need at least two step sizes, each half the previous.
    pub fn validate_sweep(&self) -> Result<()> {
        if self.taus.len() < 2 {
            return Err(Error::InvalidArgument("a sweep needs at least two step sizes".into()));
        }
        for w in self.taus.windows(2) {
            if (2.0 * w[1] - w[0]).abs() > 1e-12 * w[0] {
                return Err(Error::InvalidArgument(format!(
                    "sweep step sizes must halve: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

fn resolve(args: &FlowArgs) -> Result<CliConfig> {
    let mut settings = match &args.config {
        Some(p) => parse_config_file(&fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    let flags = args.flag_map();
    // a flag for either tau form replaces both file entries
    if flags.contains_key("tau") || flags.contains_key("tau_range") {
        settings.remove("tau");
        settings.remove("tau_range");
    }
    settings.extend(flags);
    CliConfig::from_settings(&settings)
}

/// Runs every step size of `cfg` on its own thread; reports come back in
/// the order of `cfg.taus`.
pub fn execute(cfg: &CliConfig) -> Result<Vec<RunReport>> {
    let mesh = centered_unit_square(cfg.mesh_n)?;
    let sys = EnergySystem::harmonic_map(&mesh);
    let u0 = make_initial(&mesh, cfg.init);
    let flow_cfgs = cfg
        .taus
        .iter()
        .map(|&t| cfg.flow_config(t))
        .collect::<Result<Vec<_>>>()?;
    std::thread::scope(|s| {
        let handles: Vec<_> = flow_cfgs
            .iter()
            .map(|fc| {
                let (sys, u0) = (&sys, &u0);
                s.spawn(move || run_flow(u0, sys, fc))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("flow thread panicked"))
            .collect()
    })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn trace_csv(trace: &[StepRecord]) -> String {
    let mut s = String::from(StepRecord::CSV_HEADER);
    s.push('\n');
    for r in trace {
        s += &r.to_csv();
        s.push('\n');
    }
    s
}

fn report_ok(r: &RunReport, audit: bool) -> bool {
    r.converged && (!audit || r.audit.passes())
}

fn cmd_run(args: &FlowArgs) -> Result<i32> {
    let cfg = resolve(args)?;
    if cfg.taus.len() != 1 {
        return Err(Error::InvalidArgument("run takes a single step size".into()));
    }
    let report = execute(&cfg)?.pop().expect("one report");
    let summary = format!(
        "{}\n{}\n",
        SweepTable::CSV_HEADER,
        csv_row(&report, None, None)
    );
    write_output(args.out.as_deref(), &summary)?;
    if let Some(p) = &args.trace_out {
        fs::write(p, trace_csv(&report.trace))?;
    }
    if cfg.audit {
        eprint!("{}", report.audit.render());
    }
    if !report.converged {
        eprintln!("run stopped without converging ({:?})", report.stop_reason);
    }
    Ok(if report_ok(&report, cfg.audit) { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_sweep(args: &FlowArgs) -> Result<i32> {
    let cfg = resolve(args)?;
    cfg.validate_sweep()?;
    let reports = execute(&cfg)?;
    let ok = reports.iter().all(|r| report_ok(r, cfg.audit));
    if cfg.audit {
        for r in &reports {
            eprintln!("tau = {}", r.tau);
            eprint!("{}", r.audit.render());
        }
    }
    let table = SweepTable::from_reports(reports)?;
    write_output(args.out.as_deref(), &table.to_csv())?;
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_audit(args: &AuditArgs) -> Result<i32> {
    let method: Method = args.method.parse()?;
    let text = fs::read_to_string(&args.trace)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(StepRecord::CSV_HEADER) {
        return Err(Error::Parse("trace file has an unexpected header".into()));
    }
    let trace = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| StepRecord::from_csv(l).ok_or_else(|| Error::Parse(format!("bad trace line {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let summary = audit_identities(&trace, method);
    print!("{}", summary.render());
    Ok(if summary.passes() { EXIT_OK } else { EXIT_FAILURE })
}

fn is_usage(e: &Error) -> bool {
    matches!(e, Error::InvalidArgument(_) | Error::Parse(_))
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage(&e) {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn config_file_format() {
        let m = parse_config_file("# sweep\nmesh-n = 16\nmethod=euler  # baseline\n\n").unwrap();
        assert_eq!(m, map(&[("mesh_n", "16"), ("method", "euler")]));
        assert!(parse_config_file("mesh_n 16").is_err());
    }

    #[test]
    fn tau_range_halves() {
        assert_eq!(parse_tau_range("2:4").unwrap(), vec![0.25, 0.125, 0.0625]);
        assert!(parse_tau_range("4:2").is_err());
        assert!(parse_tau_range("3").is_err());
    }

    #[test]
    fn settings_resolve_over_defaults() {
        let c = CliConfig::from_settings(&map(&[
            ("init", "random"),
            ("seed", "7"),
            ("tau_range", "1:3"),
            ("metric", "l2"),
        ]))
        .unwrap();
        assert_eq!(c.init, InitSpec::random(7));
        assert_eq!(c.metric, Metric::L2);
        assert_eq!(c.taus.len(), 3);
        assert_eq!(c.mesh_n, 32);
        assert!(CliConfig::from_settings(&map(&[("tau", "0.1"), ("tau_range", "1:2")])).is_err());
        assert!(CliConfig::from_settings(&map(&[("colour", "red")])).is_err());
        assert!(CliConfig::from_settings(&map(&[("tau", "-1")])).is_err());
    }

    #[test]
    fn sweep_validation() {
        let mut c = CliConfig::default();
        assert!(c.validate_sweep().is_err());
        c.taus = vec![0.25, 0.125];
        assert!(c.validate_sweep().is_ok());
        c.taus = vec![0.25, 0.1];
        assert!(c.validate_sweep().is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["harmflow", "sweep", "--tau", "0.25"]), EXIT_USAGE);
        assert_eq!(main_with_args(["harmflow", "run", "--method", "rk4"]), EXIT_USAGE);
        assert_eq!(main_with_args(["harmflow", "frobnicate"]), EXIT_USAGE);
    }
}
