//! Batch experiment driver: every probe and the control synthesizer behind
//! one binary.
//!
//! Each subcommand reads a schema-versioned JSON config (or builds one from
//! flags), runs its probe, and writes a JSON summary plus a tidy CSV detail
//! table with a column-dictionary sidecar. Every inequality a run asserts
//! appears as one summary row; exit 0 means all rows held, exit 1 is an
//! assertion or runtime failure with the first counterexample on stderr, and
//! exit 2 is a schema violation naming the offending field.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde_json::{json, Map, Value};

use spectracontrol::config::{
    self, ControlRunConfig, DualityCheckConfig, GridInfoConfig, LsBernsteinConfig, LsCubesConfig,
    LsProbeConfig, LsRemezConfig, ObsProbeConfig, PropDecayConfig, PropDissipationConfig,
    PropGeneratorConfig, PropMultiplierConfig, SymbolCheckConfig, SymbolSectorConfig,
    ThickGenConfig, ThickVerifyConfig,
};
use spectracontrol::control::{
    adjoint_observability_probe, duality_check, observability_probe, synthesize_control,
    STAGE_RESIDUAL_BOUND,
};
use spectracontrol::error::{Error, Result};
use spectracontrol::grid::{exponent_to_json, GridSpec, SpectralField};
use spectracontrol::linalg::CMatrix;
use spectracontrol::ls::{
    bernstein_check, c3_constant, classify_cubes, cube_threshold, good_cube_mass, ls_ensemble,
    remez_probe,
};
use spectracontrol::propagator::{
    dissipation_probe, generator_check, multiplier_seminorm, symbol_decay_probe, CutoffSpec,
};
use spectracontrol::report::{fmt_num, CsvTable, InequalityRow, RunSummary};
use spectracontrol::rng::Stream;
use spectracontrol::symbol::{
    check_normal_ellipticity, derived_sector, perturbation_params, OperatorSymbol,
};
use spectracontrol::thick::ThickSet;

#[derive(Parser)]
#[command(
    name = "spectracontrol",
    version,
    about = "Spectral inequality, dissipation, observability, and null-control probes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Named flags and --override entries are
/// applied to the top-level keys of the config object, in that order.
#[derive(Args, Debug)]
struct CommonArgs {
    /// Config JSON file; omitted means flags alone drive the run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level config override, KEY=VALUE (VALUE parses as JSON, else string).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// JSON summary path; the CSV detail table lands next to it.
    #[arg(long, default_value = "summary.json")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Echo the derived facts of one grid.
    GridInfo {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid as d:N:Q:n.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Thick control/observation regions.
    Thick {
        #[command(subcommand)]
        command: ThickCommand,
    },
    /// Band-limited restriction and derivative inequalities.
    Ls {
        #[command(subcommand)]
        command: LsCommand,
    },
    /// Symbol-level certification.
    Symbol {
        #[command(subcommand)]
        command: SymbolCommand,
    },
    /// Semigroup and multiplier probes.
    Prop {
        #[command(subcommand)]
        command: PropCommand,
    },
    /// Observability estimates.
    Obs {
        #[command(subcommand)]
        command: ObsCommand,
    },
    /// Control synthesis.
    Control {
        #[command(subcommand)]
        command: ControlCommand,
    },
    /// Control cost against the adjoint observability bound.
    Duality {
        #[command(subcommand)]
        command: DualityCommand,
    },
}

#[derive(Subcommand)]
enum ThickCommand {
    /// Generate a stripe or random thick set and write it out.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid as d:N:Q:n.
        #[arg(long)]
        grid: Option<String>,
        /// Set family: stripes or random.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-certify a stored set against a box.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Set JSON path.
        #[arg(long)]
        set: Option<String>,
        /// Box side lengths, comma-separated.
        #[arg(long)]
        ell: Option<String>,
    },
}

#[derive(Subcommand)]
enum LsCommand {
    /// Ensemble restriction ratios against the thickness bound.
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        /// Set JSON path.
        #[arg(long)]
        set: Option<String>,
        /// Band widths, comma-separated.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Good-cube classification and the guaranteed mass share.
    Cubes {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid as d:N:Q:n.
        #[arg(long)]
        grid: Option<String>,
        /// Band widths, comma-separated.
        #[arg(long)]
        band: Option<String>,
        /// Cube acceptance factor.
        #[arg(long = "A")]
        a: Option<f64>,
        #[arg(long)]
        alpha_max: Option<usize>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Derivative bounds for random band-limited fields.
    Bernstein {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid as d:N:Q:n.
        #[arg(long)]
        grid: Option<String>,
        /// Band widths, comma-separated.
        #[arg(long)]
        band: Option<String>,
        /// Derivative multi-index, comma-separated.
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Polynomial sub-level comparison over random small-measure unions.
    Remez {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum SymbolCommand {
    /// Normal-ellipticity certification.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Symbol JSON path.
        #[arg(long)]
        symbol: Option<String>,
    },
    /// Closed-form sector parameters from an ellipticity constant.
    Sector {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        kappa: Option<f64>,
    },
}

#[derive(Subcommand)]
enum PropCommand {
    /// Fitted symbol-derivative decay along a frequency ray.
    Decay {
        #[command(flatten)]
        common: CommonArgs,
        /// Symbol JSON path.
        #[arg(long)]
        symbol: Option<String>,
        /// Derivative multi-index, comma-separated.
        #[arg(long)]
        alpha: Option<String>,
        /// Time nodes, comma-separated.
        #[arg(long)]
        t_grid: Option<String>,
    },
    /// High-frequency decay fit for the cut semigroup.
    Dissipation {
        #[command(flatten)]
        common: CommonArgs,
        /// Symbol JSON path.
        #[arg(long)]
        symbol: Option<String>,
        /// Grid as d:N:Q:n.
        #[arg(long)]
        grid: Option<String>,
        /// Cutoff scales, comma-separated.
        #[arg(long)]
        lambda_grid: Option<String>,
        /// Time nodes, comma-separated.
        #[arg(long)]
        t_grid: Option<String>,
        /// Measurement exponent (a number or "inf").
        #[arg(long)]
        p: Option<String>,
    },
    /// First-order convergence of (I - V_t)/t to the symbol.
    Generator {
        #[command(flatten)]
        common: CommonArgs,
        /// Symbol JSON path.
        #[arg(long)]
        symbol: Option<String>,
        /// Grid as d:N:Q:n.
        #[arg(long)]
        grid: Option<String>,
        /// Band widths, comma-separated.
        #[arg(long)]
        band: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Seminorm and kernel-mass report for a named multiplier family.
    Multiplier {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid as d:N:Q:n.
        #[arg(long)]
        grid: Option<String>,
        /// Family: cutoff, one, or gaussian.
        #[arg(long)]
        family: Option<String>,
        /// Cutoff scale for the cutoff family.
        #[arg(long)]
        lambda: Option<f64>,
        /// Width for the gaussian family.
        #[arg(long)]
        width: Option<f64>,
    },
}

#[derive(Subcommand)]
enum ObsCommand {
    /// Empirical observability constants over a horizon sweep.
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        /// Symbol JSON path.
        #[arg(long)]
        symbol: Option<String>,
        /// Set JSON path.
        #[arg(long)]
        set: Option<String>,
        /// Strictly increasing horizons, comma-separated.
        #[arg(long)]
        horizons: Option<String>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Probe the adjoint semigroup instead of the forward one.
        #[arg(long)]
        adjoint: bool,
    },
}

#[derive(Subcommand)]
enum ControlCommand {
    /// Synthesize a null control for a problem file.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Problem JSON (the config of this subcommand).
        #[arg(long)]
        problem: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DualityCommand {
    /// Synthesize a control and compare its cost with the adjoint bound.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Path to a control-run problem config.
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok((summary, out)) => {
            if let Err(e) = summary.save(&out) {
                eprintln!("error: cannot write summary '{}': {e}", out.display());
                return ExitCode::from(1);
            }
            match summary.first_failure() {
                None => ExitCode::SUCCESS,
                Some(row) => {
                    let serialized = serde_json::to_string(row)
                        .unwrap_or_else(|_| format!("{row:?}"));
                    eprintln!("assertion failed: {serialized}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Schema(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn init_threads() {
    let Ok(text) = std::env::var("SPECTRACONTROL_THREADS") else {
        return;
    };
    match text.parse::<usize>() {
        Ok(n) if n >= 1 => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("SPECTRACONTROL_THREADS='{text}' ignored, expected a positive integer"),
    }
}

/// Merges config file, named flags, then --override entries, and hands the
/// object to the runner together with the config directory and summary path.
fn dispatch(command: &Command) -> Result<(RunSummary, PathBuf)> {
    match command {
        Command::GridInfo { common, grid } => {
            let obj = merged(common, vec![("grid", grid.clone().map(Value::from))])?;
            finish(common, run_grid_info(obj))
        }
        Command::Thick { command } => match command {
            ThickCommand::Gen { common, grid, kind, seed } => {
                let obj = merged(
                    common,
                    vec![
                        ("grid", grid.clone().map(Value::from)),
                        ("kind", kind.clone().map(Value::from)),
                        ("seed", seed.map(Value::from)),
                    ],
                )?;
                finish(common, run_thick_gen(obj, &base_dir(common)))
            }
            ThickCommand::Verify { common, set, ell } => {
                let obj = merged(
                    common,
                    vec![
                        ("set", set.clone().map(Value::from)),
                        ("ell", parse_list_flag(ell.as_deref(), "ell")?),
                    ],
                )?;
                finish(common, run_thick_verify(obj, &base_dir(common)))
            }
        },
        Command::Ls { command } => match command {
            LsCommand::Probe { common, set, lambda, ensemble, seed } => {
                let obj = merged(
                    common,
                    vec![
                        ("set", set.clone().map(Value::from)),
                        ("lambda", parse_list_flag(lambda.as_deref(), "lambda")?),
                        ("ensemble", ensemble.map(Value::from)),
                        ("seed", seed.map(Value::from)),
                    ],
                )?;
                finish(common, run_ls_probe(obj, &base_dir(common), &common.out))
            }
            LsCommand::Cubes { common, grid, band, a, alpha_max, ensemble, seed } => {
                let obj = merged(
                    common,
                    vec![
                        ("grid", grid.clone().map(Value::from)),
                        ("band", parse_list_flag(band.as_deref(), "band")?),
                        ("a", a.map(Value::from)),
                        ("alpha_max", alpha_max.map(Value::from)),
                        ("ensemble", ensemble.map(Value::from)),
                        ("seed", seed.map(Value::from)),
                    ],
                )?;
                finish(common, run_ls_cubes(obj, &common.out))
            }
            LsCommand::Bernstein { common, grid, band, alpha, ensemble, seed } => {
                let obj = merged(
                    common,
                    vec![
                        ("grid", grid.clone().map(Value::from)),
                        ("band", parse_list_flag(band.as_deref(), "band")?),
                        ("alpha", parse_index_list_flag(alpha.as_deref(), "alpha")?),
                        ("ensemble", ensemble.map(Value::from)),
                        ("seed", seed.map(Value::from)),
                    ],
                )?;
                finish(common, run_ls_bernstein(obj, &common.out))
            }
            LsCommand::Remez { common, degree, ensemble, seed } => {
                let obj = merged(
                    common,
                    vec![
                        ("degree", degree.map(Value::from)),
                        ("ensemble", ensemble.map(Value::from)),
                        ("seed", seed.map(Value::from)),
                    ],
                )?;
                finish(common, run_ls_remez(obj, &common.out))
            }
        },
        Command::Symbol { command } => match command {
            SymbolCommand::Check { common, symbol } => {
                let obj =
                    merged(common, vec![("symbol", symbol.clone().map(Value::from))])?;
                finish(common, run_symbol_check(obj, &base_dir(common), &common.out))
            }
            SymbolCommand::Sector { common, kappa } => {
                let obj = merged(common, vec![("kappa", kappa.map(Value::from))])?;
                finish(common, run_symbol_sector(obj, &common.out))
            }
        },
        Command::Prop { command } => match command {
            PropCommand::Decay { common, symbol, alpha, t_grid } => {
                let obj = merged(
                    common,
                    vec![
                        ("symbol", symbol.clone().map(Value::from)),
                        ("alpha", parse_index_list_flag(alpha.as_deref(), "alpha")?),
                        ("t_grid", parse_list_flag(t_grid.as_deref(), "t_grid")?),
                    ],
                )?;
                finish(common, run_prop_decay(obj, &base_dir(common), &common.out))
            }
            PropCommand::Dissipation { common, symbol, grid, lambda_grid, t_grid, p } => {
                let obj = merged(
                    common,
                    vec![
                        ("symbol", symbol.clone().map(Value::from)),
                        ("grid", grid.clone().map(Value::from)),
                        ("lambda_grid", parse_list_flag(lambda_grid.as_deref(), "lambda_grid")?),
                        ("t_grid", parse_list_flag(t_grid.as_deref(), "t_grid")?),
                        ("p", p.as_deref().map(exponent_flag_value)),
                    ],
                )?;
                finish(common, run_prop_dissipation(obj, &base_dir(common), &common.out))
            }
            PropCommand::Generator { common, symbol, grid, band, seed } => {
                let obj = merged(
                    common,
                    vec![
                        ("symbol", symbol.clone().map(Value::from)),
                        ("grid", grid.clone().map(Value::from)),
                        ("band", parse_list_flag(band.as_deref(), "band")?),
                        ("seed", seed.map(Value::from)),
                    ],
                )?;
                finish(common, run_prop_generator(obj, &base_dir(common), &common.out))
            }
            PropCommand::Multiplier { common, grid, family, lambda, width } => {
                let obj = merged(
                    common,
                    vec![
                        ("grid", grid.clone().map(Value::from)),
                        ("family", family.clone().map(Value::from)),
                        ("lambda", lambda.map(Value::from)),
                        ("width", width.map(Value::from)),
                    ],
                )?;
                finish(common, run_prop_multiplier(obj, &common.out))
            }
        },
        Command::Obs { command } => match command {
            ObsCommand::Probe {
                common,
                symbol,
                set,
                horizons,
                ensemble,
                nodes,
                seed,
                adjoint,
            } => {
                let mut extra = vec![
                    ("symbol", symbol.clone().map(Value::from)),
                    ("set", set.clone().map(Value::from)),
                    ("horizons", parse_list_flag(horizons.as_deref(), "horizons")?),
                    ("ensemble", ensemble.map(Value::from)),
                    ("nodes", nodes.map(Value::from)),
                    ("seed", seed.map(Value::from)),
                ];
                if *adjoint {
                    extra.push(("adjoint", Some(Value::from(true))));
                }
                let obj = merged(common, extra)?;
                finish(common, run_obs_probe(obj, &base_dir(common), &common.out))
            }
        },
        Command::Control { command } => match command {
            ControlCommand::Run { common, problem } => {
                let config_path = problem.clone().or_else(|| common.config.clone());
                let mut obj = config::load_object(config_path.as_deref())?;
                for spec in &common.overrides {
                    config::apply_override(&mut obj, spec)?;
                }
                let base = config_path
                    .as_deref()
                    .and_then(Path::parent)
                    .map(Path::to_path_buf)
                    .unwrap_or_default();
                finish(common, run_control(obj, &base, &common.out))
            }
        },
        Command::Duality { command } => match command {
            DualityCommand::Check { common, problem, ensemble, nodes, seed } => {
                let obj = merged(
                    common,
                    vec![
                        ("problem", problem.clone().map(Value::from)),
                        ("ensemble", ensemble.map(Value::from)),
                        ("nodes", nodes.map(Value::from)),
                        ("seed", seed.map(Value::from)),
                    ],
                )?;
                finish(common, run_duality(obj, &base_dir(common), &common.out))
            }
        },
    }
}

fn finish(common: &CommonArgs, run: Result<RunSummary>) -> Result<(RunSummary, PathBuf)> {
    Ok((run?, common.out.clone()))
}

fn base_dir(common: &CommonArgs) -> PathBuf {
    common
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn merged(
    common: &CommonArgs,
    extra: Vec<(&str, Option<Value>)>,
) -> Result<Map<String, Value>> {
    let mut obj = config::load_object(common.config.as_deref())?;
    for (key, value) in extra {
        if let Some(value) = value {
            obj.insert(key.to_string(), value);
        }
    }
    for spec in &common.overrides {
        config::apply_override(&mut obj, spec)?;
    }
    Ok(obj)
}

fn parse_list_flag(text: Option<&str>, field: &str) -> Result<Option<Value>> {
    let Some(text) = text else { return Ok(None) };
    let mut out = Vec::new();
    for part in text.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::schema(format!("{field}: '{part}' is not a number")))?;
        out.push(Value::from(v));
    }
    Ok(Some(Value::Array(out)))
}

fn parse_index_list_flag(text: Option<&str>, field: &str) -> Result<Option<Value>> {
    let Some(text) = text else { return Ok(None) };
    let mut out = Vec::new();
    for part in text.split(',') {
        let v: usize = part
            .trim()
            .parse()
            .map_err(|_| Error::schema(format!("{field}: '{part}' is not an index")))?;
        out.push(Value::from(v));
    }
    Ok(Some(Value::Array(out)))
}

fn exponent_flag_value(text: &str) -> Value {
    match text {
        "inf" | "infinity" => Value::from("inf"),
        other => match other.parse::<f64>() {
            Ok(v) => Value::from(v),
            Err(_) => Value::from(other),
        },
    }
}

fn bool_row(name: &str, ok: bool) -> InequalityRow {
    InequalityRow::new(name, if ok { 0.0 } else { 1.0 }, 0.0)
}

fn exponent_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p}")
    }
}

fn csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

/// File name (not path) for echoing artifacts inside summaries.
fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn check_symbol_grid(symbol: &OperatorSymbol, grid: &GridSpec) -> Result<()> {
    if symbol.dim() != grid.dim || symbol.value_dim() != grid.value_dim {
        return Err(Error::schema(format!(
            "symbol: acts on dimension {} with {} components, grid has dimension {} with {} components",
            symbol.dim(),
            symbol.value_dim(),
            grid.dim,
            grid.value_dim
        )));
    }
    Ok(())
}

fn require_certified(set: &ThickSet) -> Result<()> {
    if set.certified().is_none() {
        return Err(Error::schema(
            "set: file carries no thickness certificate; generate it with 'thick gen' or certify with 'thick verify'".to_string(),
        ));
    }
    Ok(())
}

fn run_grid_info(obj: Map<String, Value>) -> Result<RunSummary> {
    let cfg: GridInfoConfig = config::decode(obj)?;
    let grid = cfg.validate()?;
    let mut summary = RunSummary::new("grid-info");
    summary.push(InequalityRow::with_tolerance(
        "grid/nyquist_spacing_identity",
        (grid.h() * grid.nyquist() / std::f64::consts::PI - 1.0).abs(),
        0.0,
        1e-12,
    ));
    summary.details = json!({
        "dim": grid.dim,
        "points": grid.points,
        "period": grid.period,
        "value_dim": grid.value_dim,
        "sites": grid.num_sites(),
        "spacing": grid.h(),
        "cell_volume": grid.cell_volume(),
        "nyquist": grid.nyquist(),
        "state_exponent": exponent_to_json(grid.lp),
    });
    Ok(summary)
}

fn run_thick_gen(obj: Map<String, Value>, base: &Path) -> Result<RunSummary> {
    let cfg: ThickGenConfig = config::decode(obj)?;
    let (set, out_path) = cfg.build(base)?;
    set.save(&out_path)?;
    let cert = set.certified().expect("generators always certify");
    let grid = set.grid();
    let on = set.indicator().iter().filter(|&&b| b).count();
    let density = on as f64 / grid.num_sites() as f64;
    let mut summary = RunSummary::new("thick gen");
    summary.push(InequalityRow::new("thick/rho_le_density", cert.rho, density));
    if cfg.kind == "stripes" {
        let exact = cfg.on_width.unwrap_or(0.0) / cfg.period.unwrap_or(1.0);
        summary.push(InequalityRow::new(
            "thick/stripe_rho_exact",
            (cert.rho - exact).abs(),
            0.0,
        ));
    }
    summary.details = json!({
        "kind": cfg.kind,
        "rho": cert.rho,
        "ell": cert.ell,
        "density": density,
        "on_cells": on,
        "cells": grid.num_sites(),
        "set_file": file_name(&out_path),
    });
    Ok(summary)
}

fn run_thick_verify(obj: Map<String, Value>, base: &Path) -> Result<RunSummary> {
    let cfg: ThickVerifyConfig = config::decode(obj)?;
    cfg.validate()?;
    let mut set = config::load_set(&config::resolve(base, &cfg.set))?;
    let mut summary = RunSummary::new("thick verify");
    match set.certify(&cfg.ell) {
        Ok(rho) => {
            summary.push(bool_row("thick/certified", true));
            if let Some(floor) = cfg.rho_min {
                summary.push(InequalityRow::new("thick/rho_floor", floor, rho));
            }
            summary.details = json!({ "rho": rho, "ell": cfg.ell });
        }
        Err(e) => {
            summary.push(bool_row("thick/certified", false));
            summary.details = json!({ "ell": cfg.ell, "error": e.to_string() });
        }
    }
    Ok(summary)
}

fn run_ls_probe(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: LsProbeConfig = config::decode(obj)?;
    let set = config::load_set(&config::resolve(base, &cfg.set))?;
    require_certified(&set)?;
    cfg.validate(set.grid())?;
    let ensemble = ls_ensemble(&set, &cfg.lambda, cfg.ensemble, cfg.seed)?;

    let mut summary = RunSummary::new("ls probe");
    let mut table = CsvTable::new(&[
        ("sample", "ensemble member index"),
        ("ratio", "restricted-to-total norm ratio"),
        ("bound", "thickness lower bound at the frozen constant"),
        ("fitted_k", "smallest constant making the bound hold"),
    ]);
    let bound = ensemble.rows[0].bound(cfg.k);
    summary.push(InequalityRow::new("ls/ensemble_min_ratio", bound, ensemble.min_ratio));
    for (i, row) in ensemble.rows.iter().enumerate() {
        summary.push(InequalityRow::new(format!("ls/sample{i}"), row.bound(cfg.k), row.ratio));
        table.push(vec![
            i.to_string(),
            fmt_num(row.ratio),
            fmt_num(row.bound(cfg.k)),
            fmt_num(row.fitted_k),
        ]);
    }
    table.save(&csv_path(out))?;
    let first = &ensemble.rows[0];
    summary.details = json!({
        "rho": first.rho,
        "ell": first.ell,
        "lambda": cfg.lambda,
        "state_exponent": exponent_to_json(first.lp.0),
        "k": cfg.k,
        "bound": bound,
        "min_ratio": ensemble.min_ratio,
        "max_fitted_k": ensemble.max_fitted_k,
        "ensemble": cfg.ensemble,
        "seed": cfg.seed,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_ls_cubes(obj: Map<String, Value>, out: &Path) -> Result<RunSummary> {
    let cfg: LsCubesConfig = config::decode(obj)?;
    let grid = cfg.validate()?;
    let mut summary = RunSummary::new("ls cubes");
    let mut table = CsvTable::new(&[
        ("sample", "ensemble member index"),
        ("p", "mass exponent"),
        ("share", "required mass share C_3 * ||f||_p"),
        ("good_mass", "field mass on the union of good cubes"),
        ("good_cubes", "number of good cubes"),
        ("cubes", "total number of cubes"),
    ]);
    let mut inconclusive = 0usize;
    for i in 0..cfg.ensemble {
        let f = SpectralField::random_band_limited(grid, &cfg.band, cfg.seed, i as u64)?;
        let verdicts = classify_cubes(&f, cfg.a, cfg.alpha_max)?;
        let good = verdicts.iter().filter(|v| v.good).count();
        inconclusive += verdicts.iter().filter(|v| v.good && !v.tail_conclusive).count();
        for &p in &cfg.exponents {
            let c3 = c3_constant(cfg.a, grid.dim, p.0);
            let share = c3 * f.lp_norm_with(p.0);
            let mass = good_cube_mass(&f, &verdicts, p.0)?;
            summary.push(InequalityRow::new(
                format!("cubes/sample{i}/p{}", exponent_label(p.0)),
                share,
                mass,
            ));
            table.push(vec![
                i.to_string(),
                exponent_label(p.0),
                fmt_num(share),
                fmt_num(mass),
                good.to_string(),
                verdicts.len().to_string(),
            ]);
        }
    }
    table.save(&csv_path(out))?;
    summary.details = json!({
        "a": cfg.a,
        "threshold": cube_threshold(grid.dim),
        "alpha_max": cfg.alpha_max,
        "band": cfg.band,
        "ensemble": cfg.ensemble,
        "seed": cfg.seed,
        "c3": cfg.exponents.iter()
            .map(|p| (exponent_label(p.0), c3_constant(cfg.a, grid.dim, p.0)))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "tail_inconclusive_good_cubes": inconclusive,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_ls_bernstein(obj: Map<String, Value>, out: &Path) -> Result<RunSummary> {
    let cfg: LsBernsteinConfig = config::decode(obj)?;
    let grid = cfg.validate()?;
    let mut summary = RunSummary::new("ls bernstein");
    let mut table = CsvTable::new(&[
        ("sample", "ensemble member index"),
        ("kind", "standard or sharp bound"),
        ("lhs", "derivative norm"),
        ("rhs", "bound on the derivative norm"),
    ]);
    for i in 0..cfg.ensemble {
        let f = SpectralField::random_band_limited(grid, &cfg.band, cfg.seed, i as u64)?;
        let record = bernstein_check(&f, &cfg.alpha)?;
        summary.push(InequalityRow::with_tolerance(
            format!("bernstein/sample{i}"),
            record.lhs,
            record.rhs,
            1e-12 * record.rhs,
        ));
        table.push(vec![
            i.to_string(),
            "standard".to_string(),
            fmt_num(record.lhs),
            fmt_num(record.rhs),
        ]);
        if let Some(sharp_rhs) = record.sharp_rhs {
            summary.push(InequalityRow::with_tolerance(
                format!("bernstein/sample{i}/sharp"),
                record.lhs,
                sharp_rhs,
                1e-10 * sharp_rhs,
            ));
            table.push(vec![
                i.to_string(),
                "sharp".to_string(),
                fmt_num(record.lhs),
                fmt_num(sharp_rhs),
            ]);
        }
    }
    table.save(&csv_path(out))?;
    summary.details = json!({
        "alpha": cfg.alpha,
        "band": cfg.band,
        "ensemble": cfg.ensemble,
        "seed": cfg.seed,
        "state_exponent": exponent_to_json(grid.lp),
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_ls_remez(obj: Map<String, Value>, out: &Path) -> Result<RunSummary> {
    let cfg: LsRemezConfig = config::decode(obj)?;
    let x_norm = cfg.validate()?;
    let mut summary = RunSummary::new("ls remez");
    let mut table = CsvTable::new(&[
        ("sample", "ensemble member index"),
        ("fitted_c1", "smallest constant making the comparison hold"),
        ("ratio", "sub-union sup over interval sup"),
        ("m_bound", "disc bound M"),
        ("exponent", "ln M / ln 2"),
    ]);
    let width = cfg.measure / 4.0;
    let mut results = Vec::with_capacity(cfg.ensemble);
    for i in 0..cfg.ensemble {
        let mut rng = Stream::new(cfg.seed, i as u64);
        let coeffs: Vec<Vec<Complex64>> = (0..=cfg.degree)
            .map(|_| {
                (0..cfg.value_dim)
                    .map(|_| Complex64::new(2.0 * rng.uniform() - 1.0, 0.0))
                    .collect()
            })
            .collect();
        let a_sub: Vec<(f64, f64)> = (0..4)
            .map(|q| {
                let start = 0.25 * q as f64 + (0.25 - width) * rng.uniform();
                (start, start + width)
            })
            .collect();
        let result = remez_probe(&coeffs, x_norm, &a_sub)?;
        if let Some(c1) = cfg.c1 {
            summary.push(InequalityRow::new(
                format!("remez/sample{i}/claimed_c1"),
                (result.measure / c1).powf(result.exponent),
                result.ratio,
            ));
        }
        table.push(vec![
            i.to_string(),
            fmt_num(result.fitted_c1),
            fmt_num(result.ratio),
            fmt_num(result.m_bound),
            fmt_num(result.exponent),
        ]);
        results.push(result);
    }
    let mean = results.iter().map(|r| r.fitted_c1).sum::<f64>() / results.len() as f64;
    for (i, result) in results.iter().enumerate() {
        summary.push(InequalityRow::new(
            format!("remez/sample{i}/c1_stability"),
            (result.fitted_c1 - mean).abs(),
            cfg.stability * mean,
        ));
    }
    table.save(&csv_path(out))?;
    summary.details = json!({
        "degree": cfg.degree,
        "value_dim": cfg.value_dim,
        "measure": cfg.measure,
        "ensemble": cfg.ensemble,
        "seed": cfg.seed,
        "mean_fitted_c1": mean,
        "stability": cfg.stability,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_symbol_check(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: SymbolCheckConfig = config::decode(obj)?;
    let x_norm = cfg.validate()?;
    let symbol = config::load_symbol(&config::resolve(base, &cfg.symbol))?;
    if cfg.sphere_samples < 256 * symbol.dim() {
        return Err(Error::schema(format!(
            "sphere_samples: need at least {} for dimension {}",
            256 * symbol.dim(),
            symbol.dim()
        )));
    }
    if cfg.lambda_samples < 16 {
        return Err(Error::schema("lambda_samples: need at least 16".to_string()));
    }
    let mut report =
        check_normal_ellipticity(&symbol, x_norm, cfg.sphere_samples, cfg.lambda_samples)?;
    let mut summary = RunSummary::new("symbol check");
    summary.push(bool_row("ellipticity/certified", report.pass));
    if report.pass {
        let pert = perturbation_params(&symbol, &report, x_norm)?;
        report.perturbation = Some(pert);
        summary.push(bool_row("ellipticity/interior_consistent", report.interior_ok));
        let sector = report.sector.expect("passing reports carry a sector");
        summary.push(InequalityRow::new(
            "sector/angle_above_half_pi",
            std::f64::consts::FRAC_PI_2,
            sector.phi,
        ));
        if let Some(cap) = cfg.kappa_max {
            summary.push(InequalityRow::new("ellipticity/kappa_cap", report.kappa, cap));
        }
    }
    let mut table = CsvTable::new(&[
        ("alpha", "derivative multi-index"),
        ("seminorm", "symbol seminorm N_alpha"),
    ]);
    for entry in &report.seminorms {
        table.push(vec![format!("{:?}", entry.alpha), fmt_num(entry.value)]);
    }
    table.save(&csv_path(out))?;
    summary.details = json!({
        "report": serde_json::to_value(&report)?,
        "sphere_samples": cfg.sphere_samples,
        "lambda_samples": cfg.lambda_samples,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_symbol_sector(obj: Map<String, Value>, out: &Path) -> Result<RunSummary> {
    let cfg: SymbolSectorConfig = config::decode(obj)?;
    cfg.validate()?;
    let params = derived_sector(cfg.kappa);
    let mut summary = RunSummary::new("symbol sector");
    summary.push(InequalityRow::new(
        "sector/angle_above_half_pi",
        std::f64::consts::FRAC_PI_2,
        params.phi,
    ));
    summary.push(InequalityRow::new("sector/vertex_negative", params.mu, 0.0));
    summary.push(InequalityRow::new("sector/resolvent_bound_floor", 3.0, params.m_const));
    let mut table = CsvTable::new(&[("quantity", "parameter name"), ("value", "value")]);
    table.push(vec!["kappa".to_string(), fmt_num(cfg.kappa)]);
    table.push(vec!["m_const".to_string(), fmt_num(params.m_const)]);
    table.push(vec!["phi".to_string(), fmt_num(params.phi)]);
    table.push(vec!["mu".to_string(), fmt_num(params.mu)]);
    table.save(&csv_path(out))?;
    summary.details = json!({
        "kappa": cfg.kappa,
        "m_const": params.m_const,
        "phi": params.phi,
        "mu": params.mu,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_prop_decay(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: PropDecayConfig = config::decode(obj)?;
    let x_norm = cfg.validate()?;
    let symbol = config::load_symbol(&config::resolve(base, &cfg.symbol))?;
    if cfg.alpha.len() != symbol.dim() {
        return Err(Error::schema(format!(
            "alpha: got {} entries for dimension {}",
            cfg.alpha.len(),
            symbol.dim()
        )));
    }
    if cfg.sphere_samples < 256 * symbol.dim() {
        return Err(Error::schema(format!(
            "sphere_samples: need at least {} for dimension {}",
            256 * symbol.dim(),
            symbol.dim()
        )));
    }
    let report =
        check_normal_ellipticity(&symbol, x_norm, cfg.sphere_samples, cfg.lambda_samples)?;
    if !report.pass {
        return Err(Error::invalid(
            "decay probe needs a normally elliptic symbol; certification failed".to_string(),
        ));
    }
    let pert = perturbation_params(&symbol, &report, x_norm)?;
    let xi_grid = cfg.frequencies(symbol.dim())?;
    let fit = symbol_decay_probe(&symbol, x_norm, &pert, &cfg.alpha, &cfg.t_grid, &xi_grid)?;

    let mut summary = RunSummary::new("prop decay");
    let mut table = CsvTable::new(&[
        ("t", "time"),
        ("xi_radius", "Euclidean frequency radius"),
        ("lhs", "derivative norm of the semigroup symbol"),
        ("rhs", "fitted bound K exp(omega t - mu |xi|^m t)"),
    ]);
    for (i, row) in fit.rows.iter().enumerate() {
        let rhs = fit.k_alpha * row.rhs_unit;
        summary.push(InequalityRow::with_tolerance(
            format!("decay/row{i}"),
            row.lhs,
            rhs,
            1e-9 * rhs,
        ));
        let radius = row.xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        table.push(vec![
            fmt_num(row.t),
            fmt_num(radius),
            fmt_num(row.lhs),
            fmt_num(rhs),
        ]);
    }
    let allowed = cfg.max_breakdowns.unwrap_or(fit.rows.len() / 5);
    summary.push(InequalityRow::new(
        "decay/richardson_breakdowns",
        fit.breakdowns as f64,
        allowed as f64,
    ));
    table.save(&csv_path(out))?;
    summary.details = json!({
        "alpha": fit.alpha,
        "k_alpha": fit.k_alpha,
        "omega": fit.omega,
        "mu": fit.mu,
        "breakdowns": fit.breakdowns,
        "kappa": report.kappa,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_prop_dissipation(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: PropDissipationConfig = config::decode(obj)?;
    let grid = cfg.validate()?;
    let symbol = config::load_symbol(&config::resolve(base, &cfg.symbol))?;
    check_symbol_grid(&symbol, &grid)?;
    let fit = dissipation_probe(&symbol, grid, &cfg.lambda_grid, &cfg.t_grid, cfg.ensemble, cfg.seed)?;

    let mut summary = RunSummary::new("prop dissipation");
    let mut table = CsvTable::new(&[
        ("t", "time"),
        ("lambda", "cutoff scale"),
        ("lhs", "norm of the high-frequency semigroup block"),
        ("rhs", "fitted bound c1 exp(-c2 t lambda^m)"),
    ]);
    let m = symbol.order() as i32;
    for (i, row) in fit.rows.iter().enumerate() {
        let rhs = fit.c1 * (-fit.c2 * row.t * row.lambda.powi(m)).exp();
        summary.push(InequalityRow::with_tolerance(
            format!("dissipation/row{i}"),
            row.norm,
            rhs,
            1e-12 * rhs,
        ));
        table.push(vec![
            fmt_num(row.t),
            fmt_num(row.lambda),
            fmt_num(row.norm),
            fmt_num(rhs),
        ]);
    }
    if let Some(floor) = cfg.c2_min {
        summary.push(InequalityRow::new("dissipation/c2_floor", floor, fit.c2));
    }
    if let Some(cap) = cfg.c1_max {
        summary.push(InequalityRow::new("dissipation/c1_cap", fit.c1, cap));
    }
    table.save(&csv_path(out))?;
    summary.details = json!({
        "c1": fit.c1,
        "c2": fit.c2,
        "lambda0": fit.lambda0,
        "order": fit.order,
        "rates": fit.rates,
        "ensemble": cfg.ensemble,
        "seed": cfg.seed,
        "state_exponent": exponent_to_json(grid.lp),
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_prop_generator(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: PropGeneratorConfig = config::decode(obj)?;
    let grid = cfg.validate()?;
    let symbol = config::load_symbol(&config::resolve(base, &cfg.symbol))?;
    check_symbol_grid(&symbol, &grid)?;
    let f = SpectralField::random_band_limited(grid, &cfg.band, cfg.seed, 0)?;
    let record = generator_check(&symbol, &f, &cfg.t_grid)?;

    let mut summary = RunSummary::new("prop generator");
    let mut table = CsvTable::new(&[
        ("t", "time step"),
        ("residual", "relative first-order residual"),
    ]);
    if record.skipped {
        summary.push(bool_row("generator/nontrivial_sample", false));
        summary.details = json!({ "skipped": true });
        table.save(&csv_path(out))?;
        return Ok(summary);
    }
    for (i, (t, r)) in record.rows.iter().enumerate() {
        summary.push(InequalityRow::with_tolerance(
            format!("generator/row{i}"),
            *r,
            record.fitted_c * t,
            1e-12 * record.fitted_c * t,
        ));
        table.push(vec![fmt_num(*t), fmt_num(*r)]);
    }
    let order = log_log_slope(&record.rows);
    summary.push(InequalityRow::new("generator/order_estimate", cfg.order_min, order));
    table.save(&csv_path(out))?;
    summary.details = json!({
        "fitted_c": record.fitted_c,
        "order": order,
        "band": cfg.band,
        "seed": cfg.seed,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

/// Least-squares slope of ln r against ln t over the rows with r > 0.
fn log_log_slope(rows: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|(_, r)| *r > 0.0).map(|(t, r)| (t.ln(), r.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn run_prop_multiplier(obj: Map<String, Value>, out: &Path) -> Result<RunSummary> {
    let cfg: PropMultiplierConfig = config::decode(obj)?;
    let grid = cfg.validate()?;
    let n = grid.value_dim;
    let report = match cfg.family.as_str() {
        "cutoff" => {
            let spec = CutoffSpec::new(cfg.lambda.expect("validated"))?;
            let m = move |xi: &[f64]| {
                CMatrix::identity(n, n) * Complex64::new(spec.chi(xi), 0.0)
            };
            multiplier_seminorm(&m, grid, cfg.epsilon)?
        }
        "one" => {
            let m = move |_: &[f64]| CMatrix::identity(n, n);
            multiplier_seminorm(&m, grid, cfg.epsilon)?
        }
        "gaussian" => {
            let w = cfg.width.expect("validated");
            let m = move |xi: &[f64]| {
                let r2 = xi.iter().map(|x| x * x).sum::<f64>();
                CMatrix::identity(n, n) * Complex64::new((-r2 / (2.0 * w * w)).exp(), 0.0)
            };
            multiplier_seminorm(&m, grid, cfg.epsilon)?
        }
        _ => unreachable!("validated"),
    };

    let mut summary = RunSummary::new("prop multiplier");
    summary.push(bool_row("multiplier/seminorm_finite", report.mu.is_finite()));
    summary.push(bool_row("multiplier/kernel_mass_finite", report.l1_norm.is_finite()));
    if cfg.family == "one" {
        let r_max = (0..grid.num_sites())
            .map(|site| {
                let xi = grid.site_xi(site);
                xi[..grid.dim].iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        let closed_form = 1.0 + r_max.powf(cfg.epsilon);
        summary.push(InequalityRow::new(
            "multiplier/identity_seminorm_closed_form",
            (report.mu - closed_form).abs(),
            1e-9 * closed_form,
        ));
        summary.push(InequalityRow::new(
            "multiplier/identity_kernel_mass_exact",
            (report.l1_norm - 1.0).abs(),
            1e-9,
        ));
    }
    if let Some(cap) = cfg.ratio_max {
        summary.push(InequalityRow::new("multiplier/mass_ratio_cap", report.ratio, cap));
    }
    let mut table = CsvTable::new(&[("quantity", "report entry"), ("value", "value")]);
    table.push(vec!["mu".to_string(), fmt_num(report.mu)]);
    table.push(vec!["l1_norm".to_string(), fmt_num(report.l1_norm)]);
    table.push(vec!["ratio".to_string(), fmt_num(report.ratio)]);
    table.save(&csv_path(out))?;
    summary.details = json!({
        "family": cfg.family,
        "lambda": cfg.lambda,
        "width": cfg.width,
        "epsilon": cfg.epsilon,
        "mu": report.mu,
        "l1_norm": report.l1_norm,
        "ratio": report.ratio,
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_obs_probe(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: ObsProbeConfig = config::decode(obj)?;
    cfg.validate()?;
    let symbol = config::load_symbol(&config::resolve(base, &cfg.symbol))?;
    let set = config::load_set(&config::resolve(base, &cfg.set))?;
    check_symbol_grid(&symbol, set.grid())?;

    let mut summary = RunSummary::new("obs probe");
    let mut table = CsvTable::new(&[
        ("horizon", "observation horizon"),
        ("member", "ensemble member index"),
        ("numerator", "terminal state norm"),
        ("denominator", "time-averaged observed norm"),
        ("ratio", "member observability ratio"),
    ]);
    let mut estimates = Vec::with_capacity(cfg.horizons.len());
    for &horizon in &cfg.horizons {
        let est = if cfg.adjoint {
            adjoint_observability_probe(
                &symbol,
                &set,
                horizon,
                cfg.state_exponent.0,
                cfg.time_exponent.0,
                cfg.ensemble,
                cfg.nodes,
                cfg.seed,
            )?
        } else {
            observability_probe(
                &symbol,
                &set,
                horizon,
                cfg.state_exponent.0,
                cfg.time_exponent.0,
                cfg.ensemble,
                cfg.nodes,
                cfg.seed,
            )?
        };
        summary.push(bool_row(
            &format!("obs/constant_finite/T{horizon}"),
            est.c_obs_hat.is_finite(),
        ));
        for (j, row) in est.rows.iter().enumerate() {
            table.push(vec![
                fmt_num(horizon),
                j.to_string(),
                fmt_num(row.numerator),
                fmt_num(row.denominator),
                fmt_num(row.ratio),
            ]);
        }
        estimates.push(est);
    }
    for pair in estimates.windows(2) {
        summary.push(InequalityRow::with_tolerance(
            format!("obs/nonincreasing/T{}_to_T{}", pair[0].horizon, pair[1].horizon),
            pair[1].c_obs_hat,
            pair[0].c_obs_hat,
            1e-9 * pair[0].c_obs_hat,
        ));
    }
    table.save(&csv_path(out))?;
    summary.details = json!({
        "adjoint": cfg.adjoint,
        "ensemble": cfg.ensemble,
        "nodes": cfg.nodes,
        "seed": cfg.seed,
        "state_exponent": exponent_to_json(cfg.state_exponent.0),
        "time_exponent": exponent_to_json(cfg.time_exponent.0),
        "constants": estimates.iter()
            .map(|e| json!({ "horizon": e.horizon, "c_obs_hat": e.c_obs_hat }))
            .collect::<Vec<_>>(),
        "detail_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_control(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: ControlRunConfig = config::decode(obj)?;
    let problem = cfg.build(base)?;
    let outcome = synthesize_control(&problem)?;

    let mut summary = RunSummary::new("control run");
    summary.push(InequalityRow::new(
        "control/terminal_below_tolerance",
        outcome.terminal_norm,
        outcome.epsilon * outcome.initial_norm,
    ));
    summary.push(bool_row("control/cost_finite", outcome.cost.is_finite()));
    for (j, stage) in outcome.stages.iter().enumerate() {
        summary.push(InequalityRow::new(
            format!("control/stage{j}/residual_bound"),
            stage.residual,
            STAGE_RESIDUAL_BOUND,
        ));
    }

    let mut table = CsvTable::new(&[
        ("t", "time"),
        ("state_norm", "state norm at t"),
        ("control_norm", "control norm on [t, t + step)"),
    ]);
    for row in &outcome.trajectory {
        table.push(vec![
            fmt_num(row.t),
            fmt_num(row.state_norm),
            fmt_num(row.control_norm),
        ]);
    }
    table.save(&csv_path(out))?;

    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut control_files = Vec::with_capacity(outcome.controls.len());
    for (k, sample) in outcome.controls.iter().enumerate() {
        let name = format!("{stem}_u{k:04}.specfld");
        sample.field.save(&dir.join(&name))?;
        control_files.push(json!({
            "t": sample.t,
            "duration": sample.duration,
            "file": name,
        }));
    }

    summary.details = json!({
        "success": outcome.success,
        "initial_norm": outcome.initial_norm,
        "terminal_norm": outcome.terminal_norm,
        "epsilon": outcome.epsilon,
        "cost": outcome.cost,
        "state_exponent": exponent_to_json(outcome.state_exponent),
        "time_exponent": exponent_to_json(outcome.time_exponent),
        "approximate": outcome.approximate,
        "stages": serde_json::to_value(&outcome.stages)?,
        "controls": control_files,
        "trajectory_csv": file_name(&csv_path(out)),
    });
    Ok(summary)
}

fn run_duality(obj: Map<String, Value>, base: &Path, out: &Path) -> Result<RunSummary> {
    let cfg: DualityCheckConfig = config::decode(obj)?;
    let problem = cfg.build(base)?;
    let report = duality_check(&problem, cfg.ensemble, cfg.nodes, cfg.seed)?;

    let mut summary = RunSummary::new("duality check");
    summary.push(InequalityRow::new(
        "duality/cost_within_adjoint_bound",
        report.cost,
        report.bound,
    ));
    summary.push(bool_row("duality/forward_constant_finite", report.forward.c_obs_hat.is_finite()));
    summary.push(bool_row("duality/adjoint_constant_finite", report.adjoint.c_obs_hat.is_finite()));

    let mut table = CsvTable::new(&[
        ("side", "forward or adjoint"),
        ("member", "ensemble member index"),
        ("ratio", "member observability ratio"),
    ]);
    for (side, est) in [("forward", &report.forward), ("adjoint", &report.adjoint)] {
        for (j, row) in est.rows.iter().enumerate() {
            table.push(vec![side.to_string(), j.to_string(), fmt_num(row.ratio)]);
        }
    }
    table.save(&csv_path(out))?;
    summary.details = serde_json::to_value(&report)?;
    Ok(summary)
}
