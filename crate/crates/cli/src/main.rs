//! `staircase`: batch front end for certified constants, mass-flow
//! simulation, geometric realisation and the regularity calculators.
//!
//! Exit codes: 0 success, 1 bound or invariant violation, 2 configuration
//! error, 3 certification budget exhausted.

// `!(x > 0.0)` guards double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use staircase_core::laminate::{validate, Laminate};
use staircase_core::realizer::{
    check_map, export_mesh, realize_scheme, MapChecks, SchemeRealization,
};
use staircase_core::regularity::{
    bootstrap_exponents, discrete_lemma41, pinching_beta, BootstrapInput, GridFn, PinchInput,
};
use staircase_core::schedule::{compute_constants, verify_schedule, Precision, ScheduleConstants};
use staircase_core::scheme::{cell_laminate, init, run, stages_csv, RunReport};
use staircase_core::{Error, Result};

use config::{Overrides, RunConfig};

/// Prints to stdout; a closed pipe is not an error since every result is
/// also written to the output directory.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser, Debug)]
#[command(
    name = "staircase",
    version,
    about = "Staircase-laminate convex integration toolkit"
)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "STAIRCASE_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    params: ParamFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ParamFlags {
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long = "Lambda", global = true)]
    big_lambda: Option<f64>,
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    sharpness: Option<f64>,
    /// Parameter point as `a0p,a0m,b`.
    #[arg(long = "P0", global = true, value_delimiter = ',', num_args = 3)]
    p0: Option<Vec<f64>>,
    /// Number of simulated stages.
    #[arg(long = "stages", short = 'L', global = true)]
    stages: Option<u32>,
    #[arg(long, global = true)]
    depth: Option<u32>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    sup_budget: Option<f64>,
    /// `double` or `extended`.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long, global = true)]
    ell_max: Option<u32>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "double" => Ok(Precision::Double),
        "extended" => Ok(Precision::Extended),
        other => Err(format!("unknown precision '{other}' (double|extended)")),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify the scheme constants and write constants.json.
    Constants,
    /// Run the mass-flow simulation; writes stages.csv and summary.json.
    Simulate,
    /// Realise the first stages on the unit square; writes mesh.json,
    /// laminate.json and realize.json.
    Realize,
    /// Verify the schedule, or validate a laminate file.
    Verify {
        #[arg(long)]
        laminate: Option<PathBuf>,
    },
    /// Regularity calculators.
    #[command(subcommand)]
    Regularity(RegularityCmd),
}

#[derive(Subcommand, Debug)]
enum RegularityCmd {
    /// Integrability exponents `q_{k+1} = min(p⋆, q_k/γ)`.
    Bootstrap { n: u32, p: f64, gamma: f64 },
    /// Admissible `β` interval under the pinching condition.
    Pinching {
        n: u32,
        lambda: f64,
        #[arg(name = "LAMBDA_MAX")]
        big_lambda: f64,
    },
    /// Mollified one-sided gradient bound on a grid; writes lemma41.csv.
    Lemma41 {
        /// JSON `{grid, sigma, bounds, eps}`; defaults to `x³ + y` on `[1,2]²`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let f = &cli.params;
    Overrides {
        lambda: f.lambda,
        big_lambda: f.big_lambda,
        p: f.p,
        delta: f.delta,
        sharpness: f.sharpness,
        p0: f.p0.as_ref().map(|v| [v[0], v[1], v[2]]),
        stages: f.stages,
        realize_depth: f.depth,
        theta: f.theta,
        eta: f.eta,
        sup_budget: f.sup_budget,
        output: cli.out.clone(),
        precision: f.precision,
        ell_max: f.ell_max,
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    if let Command::Regularity(cmd) = &cli.command {
        return cmd_regularity(cmd, cli.out.as_deref());
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides(cli))?;
    std::fs::create_dir_all(&cfg.output)?;
    match &cli.command {
        Command::Constants => cmd_constants(&cfg).map(|_| 0),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Realize => cmd_realize(&cfg),
        Command::Verify { laminate } => cmd_verify(&cfg, laminate.as_deref()),
        Command::Regularity(_) => unreachable!(),
    }
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn constants(cfg: &RunConfig) -> Result<ScheduleConstants> {
    compute_constants(&cfg.profile()?, cfg.exponent(), cfg.gap(), &cfg.cert)
}

fn cmd_constants(cfg: &RunConfig) -> Result<ScheduleConstants> {
    let c = constants(cfg)?;
    write_json(&cfg.output, "constants.json", &c)?;
    out!("{}", serde_json::to_string_pretty(&c)?);
    Ok(c)
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    p: f64,
    delta: f64,
    p_crit: f64,
    stages: u32,
    final_total_mass: f64,
    #[serde(rename = "Sp_max")]
    sp_max: f64,
    #[serde(rename = "Sp_bound")]
    sp_bound: f64,
    #[serde(rename = "S1_max")]
    s1_max: f64,
    energy: Vec<f64>,
    energy_increasing: bool,
    violations: usize,
    first_violation: Option<&'a str>,
}

fn summarize<'a>(c: &ScheduleConstants, rep: &'a RunReport) -> SimulationSummary<'a> {
    SimulationSummary {
        p: c.p,
        delta: c.delta,
        p_crit: c.p_crit,
        stages: rep.stages.len() as u32 - 1,
        final_total_mass: rep.stages.last().map_or(0.0, |s| s.total_mass),
        sp_max: rep.sp_max,
        sp_bound: rep.sp_bound,
        s1_max: rep.stages.iter().map(|s| s.s1).fold(0.0, f64::max),
        energy: rep.stages.iter().map(|s| s.energy).collect(),
        energy_increasing: rep.energy_increasing,
        violations: rep.violations,
        first_violation: rep
            .stages
            .iter()
            .find_map(|s| s.violations.first().map(String::as_str)),
    }
}

fn cmd_simulate(cfg: &RunConfig) -> Result<u8> {
    let c = constants(cfg)?;
    write_json(&cfg.output, "constants.json", &c)?;
    let rep = run(&c, cfg.p0, cfg.stages)?;
    std::fs::write(cfg.output.join("stages.csv"), stages_csv(&rep))?;
    let summary = summarize(&c, &rep);
    write_json(&cfg.output, "summary.json", &summary)?;
    out!("{}", serde_json::to_string_pretty(&summary)?);
    if let Err(e) = rep.check() {
        eprintln!("violation: {e}");
        return Ok(1);
    }
    Ok(0)
}

#[derive(Serialize)]
struct RealizeSummary<'a> {
    depth: u32,
    eta: f64,
    grad_tol: f64,
    histogram: &'a [staircase_core::realizer::HistogramEntry],
    max_histogram_error: f64,
    mean_diameter: &'a [f64],
    checks: MapChecks,
    ok: bool,
}

const MAP_TOL: f64 = 1e-9;

fn cmd_realize(cfg: &RunConfig) -> Result<u8> {
    let c = constants(cfg)?;
    let root = init(&c, cfg.p0)?;
    let nu: Laminate = cell_laminate(&c, &root.cells[0], 0)?;
    write_json(&cfg.output, "laminate.json", &nu)?;
    let SchemeRealization {
        map,
        depth,
        grad_tol,
        histogram,
        mean_diameter,
    } = realize_scheme(&c, cfg.p0, cfg.realize_depth, None, &cfg.osc)?;
    export_mesh(&map, &cfg.output.join("mesh.json"))?;
    let checks = check_map(&map, 1000);
    let max_err = histogram
        .iter()
        .map(|h| (h.area_fraction - h.mass).abs())
        .fold(0.0, f64::max);
    let ok = max_err <= cfg.osc.eta
        && checks.tiling_defect <= MAP_TOL
        && checks.continuity <= MAP_TOL
        && checks.boundary <= MAP_TOL;
    let summary = RealizeSummary {
        depth,
        eta: cfg.osc.eta,
        grad_tol,
        histogram: &histogram,
        max_histogram_error: max_err,
        mean_diameter: &mean_diameter,
        checks,
        ok,
    };
    write_json(&cfg.output, "realize.json", &summary)?;
    out!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if ok { 0 } else { 1 })
}

fn cmd_verify(cfg: &RunConfig, laminate: Option<&Path>) -> Result<u8> {
    if let Some(path) = laminate {
        let text = read_input(path)?;
        let nu: Laminate = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let rep = validate(&nu);
        out!("{}", serde_json::to_string_pretty(&rep)?);
        return Ok(if rep.ok { 0 } else { 1 });
    }
    let c = constants(cfg)?;
    let rep = verify_schedule(&c, cfg.ell_max, cfg.precision)?;
    write_json(&cfg.output, "verify.json", &rep)?;
    out!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(0)
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct OneSidedInput {
    grid: GridFn,
    sigma: [f64; 2],
    bounds: [f64; 2],
    eps: f64,
}

fn cmd_regularity(cmd: &RegularityCmd, out: Option<&Path>) -> Result<u8> {
    let emit = |name: &str, text: String| -> Result<()> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    };
    match cmd {
        RegularityCmd::Bootstrap { n, p, gamma } => {
            let b = bootstrap_exponents(&BootstrapInput {
                n: *n,
                p: *p,
                gamma: *gamma,
            })?;
            let text = serde_json::to_string_pretty(&b)?;
            out!("{text}");
            emit("bootstrap.json", text + "\n")?;
        }
        RegularityCmd::Pinching {
            n,
            lambda,
            big_lambda,
        } => {
            let iv = pinching_beta(&PinchInput {
                n: *n,
                lambda: *lambda,
                big_lambda: *big_lambda,
            })?;
            let text = serde_json::to_string_pretty(&iv)?;
            out!("{text}");
            emit("pinching.json", text + "\n")?;
        }
        RegularityCmd::Lemma41 { input } => {
            let inp = match input {
                Some(path) => serde_json::from_str(&read_input(path)?)
                    .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?,
                None => OneSidedInput {
                    grid: GridFn::sample(51, 51, [1.0, 1.0], [2.0, 2.0], |x, y| x * x * x + y),
                    sigma: [1.0, 1.0],
                    bounds: [0.0, 1.0],
                    eps: 0.1,
                },
            };
            let rep = discrete_lemma41(&inp.grid, inp.sigma, inp.bounds, inp.eps)?;
            emit("lemma41.csv", rep.to_csv())?;
            out!(
                "{}",
                serde_json::json!({
                    "holds": rep.holds,
                    "nodes": rep.nodes,
                    "min_slack": rep.min_slack,
                    "max_slack": rep.max_slack,
                })
            );
            if !rep.holds {
                return Ok(1);
            }
        }
    }
    Ok(0)
}
