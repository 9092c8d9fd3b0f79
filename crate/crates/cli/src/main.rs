//! `geoplace`: run scenarios, compare strategies and reproduce experiments.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid input, 4 infeasible scenario.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use geoplace_core::experiments::{self, RegionCatalog, ScaleConfig, SloLevel};
use geoplace_core::fixtures;
use geoplace_core::forecast::{GbdtConfig, TrafficTrace};
use geoplace_core::gen::{self, TrafficGen};
use geoplace_core::sim::{merge_json, ForecastMode, Scenario};
use geoplace_core::{by_name, simulate, Error, RunOptions, STRATEGY_NAMES};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "geoplace", version, about = "Carbon- and cost-aware microservice placement simulator")]
struct Cli {
    /// Master seed; overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON or TOML overrides: merged over the scenario, the `gen eu` settings, or (for `scale`) a `ga` table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one strategy over a scenario.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "aceso")]
        strategy: String,
        #[arg(long)]
        forecaster: Option<Mode>,
    },
    /// Simulate several strategies and normalize by the static baseline.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "static,aceso,vanilla-ga,sampling")]
        strategies: Vec<String>,
        /// Seeds to run; defaults to --seed or the scenario seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        forecaster: Option<Mode>,
    },
    /// Search-space size and solve time with and without each pruning.
    Ablate {
        scenario: PathBuf,
        /// relaxed, medium or strict sets the SLO from the all-in-base latency
        /// at the busiest hour; scenario keeps the scenario SLO.
        #[arg(long, default_value = "strict")]
        slo_level: String,
    },
    /// Solve time against the number of movable services.
    Scale {
        #[arg(long, value_delimiter = ',', default_value = "50,100,200,400")]
        sizes: Vec<usize>,
        #[arg(long, default_value = "eu")]
        catalog: String,
        #[arg(long, value_delimiter = ',', default_value = "relaxed")]
        slo_levels: Vec<String>,
        /// Seeds per cell, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Compare the forecaster with naive baselines on a held-out split.
    ForecastEval {
        /// Traffic CSV; a synthetic diurnal trace with bursts is generated if omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        train_frac: f64,
        /// Length of the generated trace.
        #[arg(long, default_value_t = 14)]
        days: usize,
    },
    /// Write a fixture or synthetic trace to the output directory.
    Gen {
        #[arg(value_enum)]
        what: GenKind,
        /// Days of generated traffic.
        #[arg(long, default_value_t = 7)]
        days: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Gbdt,
    Persistence,
    LagMean,
    Reactive,
}

impl From<Mode> for ForecastMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Gbdt => ForecastMode::Gbdt,
            Mode::Persistence => ForecastMode::Persistence,
            Mode::LagMean => ForecastMode::LagMean,
            Mode::Reactive => ForecastMode::Reactive,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenKind {
    Deathstar,
    Eu,
    Traffic,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_infeasible() {
        4
    } else {
        3
    }
}

fn load_overrides(path: Option<&Path>) -> Result<Option<Value>, Error> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let value = if path.extension().is_some_and(|x| x == "toml") {
        let t: toml::Table = toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| Error::Validation(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(Error::Validation(format!("{}: expected a table of overrides", path.display())));
    }
    Ok(Some(value))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Validation(format!("cannot create {}: {e}", dir.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Error> {
    let fail = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(cli: Cli) -> Result<(), Error> {
    let overrides = load_overrides(cli.config.as_deref())?;
    match cli.command {
        Command::Run { scenario, strategy, forecaster } => {
            let scn = Scenario::load(&scenario, overrides)?;
            let mut s = by_name(&strategy)?;
            let out = simulate(&scn, s.as_mut(), &RunOptions { forecaster: forecaster.map(Into::into), seed: cli.seed })?;
            out.write(&cli.out, &scn.infra.regions.ids())?;
            print(&serde_json::to_value(&out.summary).unwrap_or_default());
        }
        Command::Compare { scenario, strategies, seeds, forecaster } => {
            for s in &strategies {
                if !STRATEGY_NAMES.contains(&s.as_str()) {
                    return Err(Error::UnknownStrategy(s.clone()));
                }
            }
            let scn = Scenario::load(&scenario, overrides)?;
            let seeds = if seeds.is_empty() { vec![cli.seed.unwrap_or(scn.spec.seed)] } else { seeds };
            let ids = scn.infra.regions.ids();
            create_dir(&cli.out)?;
            let (mut rows, mut regions) = (Vec::new(), Vec::new());
            for &seed in &seeds {
                let (r, outputs) = experiments::compare(&scn, &strategies, seed, forecaster.map(Into::into))?;
                for o in &outputs {
                    o.write(&cli.out.join(format!("seed-{seed}")).join(&o.summary.strategy), &ids)?;
                    regions.extend(experiments::region_distribution(o, &ids, seed));
                }
                rows.extend(r);
            }
            write_csv(&cli.out.join("compare.csv"), &rows)?;
            write_csv(&cli.out.join("regions.csv"), &regions)?;
            print(&serde_json::to_value(&rows).unwrap_or_default());
        }
        Command::Ablate { scenario, slo_level } => {
            let level = match slo_level.as_str() {
                "scenario" => None,
                other => Some(other.parse::<SloLevel>()?),
            };
            let scn = Scenario::load(&scenario, overrides)?;
            let seed = cli.seed.unwrap_or(scn.spec.seed);
            let rows = experiments::ablate(&scn, seed, level)?;
            create_dir(&cli.out)?;
            write_csv(&cli.out.join("ablation.csv"), &rows)?;
            let timing: Vec<Value> = rows.iter().map(|r| json!({"variant": r.variant, "solve_time_s": r.solve_time_s})).collect();
            write_json(&cli.out.join("ablation_timing.json"), &Value::Array(timing.clone()))?;
            print(&json!({"rows": rows, "timing": timing}));
        }
        Command::Scale { sizes, catalog, slo_levels, seeds } => {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::InvalidConfig("sizes must be positive".into()));
            }
            if seeds == 0 {
                return Err(Error::InvalidConfig("seeds must be positive".into()));
            }
            let levels = slo_levels.iter().map(|l| l.parse::<SloLevel>()).collect::<Result<Vec<_>, _>>()?;
            let mut cfg = ScaleConfig { catalog: catalog.parse::<RegionCatalog>()?, ..ScaleConfig::default() };
            if let Some(ga) = overrides.as_ref().and_then(|o| o.get("ga")) {
                let mut base = serde_json::to_value(cfg.ga).map_err(|e| Error::Validation(e.to_string()))?;
                merge_json(&mut base, ga.clone());
                cfg.ga = serde_json::from_value(base).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            }
            let rows = experiments::scale(&sizes, &levels, seeds, &cfg, cli.seed.unwrap_or(0))?;
            create_dir(&cli.out)?;
            write_csv(&cli.out.join("scale.csv"), &rows)?;
            let medians = experiments::scale_medians(&rows);
            let fits: Vec<Value> = levels
                .iter()
                .map(|&level| {
                    let points: Vec<(f64, f64)> =
                        medians.iter().filter(|m| m.slo_level == level).map(|m| (m.services as f64, m.median_solve_time_s)).collect();
                    json!({"slo_level": level, "exponent": experiments::power_law_exponent(&points)})
                })
                .collect();
            let timing = json!({"medians": medians, "fits": fits});
            write_json(&cli.out.join("scale_timing.json"), &timing)?;
            print(&json!({"rows": rows, "timing": timing}));
        }
        Command::ForecastEval { trace, train_frac, days } => {
            let trace = match trace {
                Some(p) => TrafficTrace::load_csv(&p)?,
                None => {
                    let start = geoplace_core::timefmt::parse_ts("2023-08-01T00:00:00Z")?;
                    let seed = geoplace_core::seed::derive_seed(cli.seed.unwrap_or(0), "forecast-eval/traffic");
                    gen::generate_traffic(&TrafficGen::default(), start, days * 288, seed)?.0
                }
            };
            let rows = experiments::forecast_eval(&trace, train_frac, &GbdtConfig::default())?;
            create_dir(&cli.out)?;
            let scores: Vec<Value> = rows.iter().map(|r| json!({"model": r.model, "mae": r.mae, "windows": r.windows})).collect();
            let timing: Vec<Value> = rows.iter().map(|r| json!({"model": r.model, "mean_inference_ms": r.mean_inference_ms})).collect();
            let mut w = csv::Writer::from_path(cli.out.join("forecast_eval.csv")).map_err(|e| Error::Validation(e.to_string()))?;
            w.write_record(["model", "mae", "windows"]).map_err(|e| Error::Validation(e.to_string()))?;
            for r in &rows {
                w.write_record([r.model.clone(), format!("{}", r.mae), r.windows.to_string()]).map_err(|e| Error::Validation(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::Validation(e.to_string()))?;
            write_json(&cli.out.join("forecast_timing.json"), &Value::Array(timing))?;
            print(&Value::Array(scores));
        }
        Command::Gen { what, days } => {
            let seed = cli.seed.unwrap_or(7);
            match what {
                GenKind::Deathstar => fixtures::write_deathstar(&cli.out)?,
                GenKind::Eu => {
                    let mut v = serde_json::to_value(fixtures::EuConfig::default()).map_err(|e| Error::Validation(e.to_string()))?;
                    if let Some(o) = overrides {
                        merge_json(&mut v, o);
                    }
                    let cfg: fixtures::EuConfig = serde_json::from_value(v).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    fixtures::write_eu(&cli.out, &cfg, seed)?
                }
                GenKind::Traffic => {
                    create_dir(&cli.out)?;
                    let start = geoplace_core::timefmt::parse_ts("2023-08-01T00:00:00Z")?;
                    let (trace, bursts) = gen::generate_traffic(&TrafficGen::default(), start, days * 288, seed)?;
                    trace.write_csv(&cli.out.join("traffic.csv"))?;
                    write_json(&cli.out.join("bursts.json"), &serde_json::to_value(bursts).unwrap_or_default())?;
                }
            }
            println!("wrote {}", cli.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
