//! Command-line front end: closed-loop runs, offline fits, comparison
//! experiments, the payload sweep, and plot regeneration from logs.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use skiff::harness::config::{presets, ExperimentConfig, ScenarioConfig};
use skiff::harness::plot::{error_svg, path_overlay_svg, thrust_svg};
use skiff::harness::runner::{execute_experiment, execute_scenario, execute_sweep, RunArtifacts};
use skiff::sim::RunLog;
use skiff::sysid::{fit_model, FitOptions};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "skiff", version, about = "Planar watercraft simulation, identification, and optimal control")]
struct Cli {
    /// Scenario (simulate) or experiment (experiment) TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (identify: output file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config's noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and write its artifact directory.
    Simulate,
    /// Fit a model offline from a run-log CSV.
    Identify {
        /// Run-log CSV to fit from.
        #[arg(long)]
        log: PathBuf,
        /// Trailing window to fit over [s].
        #[arg(long, default_value_t = 30.0)]
        window: f64,
    },
    /// Run a nominal vs data-driven comparison pair.
    Experiment {
        /// Built-in study; see --list.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// List the built-in studies and exit.
        #[arg(long)]
        list: bool,
    },
    /// Run the payload sweep (11 comparison pairs, 0 to 2 kg).
    Sweep,
    /// Re-render SVG plots from run-log CSVs.
    Plot {
        /// Run-log CSV; repeat to overlay several runs.
        #[arg(long, required = true)]
        log: Vec<PathBuf>,
    },
}

fn load_log(path: &Path) -> Result<RunLog> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("could not read {}", path.display()))?;
    RunLog::from_csv_str(&text).with_context(|| format!("could not parse {}", path.display()))
}

fn report_run(label: &str, art: &RunArtifacts) {
    let m = &art.metrics;
    println!(
        "{label}: mean {:.4} m, max {:.4} m over [{}, {}] s -> {}",
        m.mean_err_m,
        m.max_err_m,
        m.window_s[0],
        m.window_s[1],
        art.dir.display()
    );
    if let Some(err) = m.coeff_rel_err {
        println!("{label}: worst coefficient error {:.2}%", 100.0 * err);
    }
}

/// A recorded fault still writes artifacts but must fail the invocation.
fn check_fault(art: &RunArtifacts) -> Result<()> {
    if let Some(reason) = &art.metrics.fault {
        bail!("run faulted: {reason}");
    }
    Ok(())
}

fn simulate(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let art = execute_scenario(&cfg, &dir)?;
    report_run(&cfg.name, &art);
    check_fault(&art)
}

fn identify(cli: &Cli, log_path: &Path, window: f64) -> Result<()> {
    let log = load_log(log_path)?;
    let start = std::time::Instant::now();
    let fit = fit_model(&log.times, &log.states, &log.controls, window, &FitOptions::default(), None)?;
    let wall = start.elapsed().as_secs_f64();
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    std::fs::write(&out, fit.model.to_json())
        .with_context(|| format!("could not write {}", out.display()))?;
    println!(
        "fit over [{:.2}, {:.2}] s in {:.2} s -> {}",
        fit.model.window[0],
        fit.model.window[1],
        wall,
        out.display()
    );
    Ok(())
}

fn experiment(cli: &Cli, preset: Option<&str>, list: bool) -> Result<()> {
    if list {
        for name in presets::EXPERIMENT_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let mut exp = match (preset, &cli.config) {
        (Some(name), _) => presets::by_name(name)
            .with_context(|| format!("unknown preset {name}; --list shows the options"))?,
        (None, Some(path)) => ExperimentConfig::load(path)?,
        (None, None) => bail!("pass --preset <name> or --config <experiment.toml>"),
    };
    if let Some(seed) = cli.seed {
        exp.nominal.seed = seed;
        exp.data_driven.seed = seed;
    }
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&exp.name));
    let out = execute_experiment(&exp, &root)?;
    report_run("nominal", &out.nominal);
    report_run("data-driven", &out.data_driven);
    println!(
        "mean error reduction {:.1}%, max {:.1}% -> {}",
        out.summary.mean_err_reduction_pct,
        out.summary.max_err_reduction_pct,
        root.display()
    );
    check_fault(&out.nominal)?;
    check_fault(&out.data_driven)
}

fn sweep(cli: &Cli) -> Result<()> {
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let payloads = presets::sweep_payloads();
    let summary = execute_sweep(&payloads, &root)?;
    for p in &summary.points {
        println!(
            "{:.1} kg: nominal {:.4} m, data-driven {:.4} m",
            p.payload_kg, p.nominal_mean_err_m, p.data_driven_mean_err_m
        );
    }
    println!("-> {}", root.display());
    Ok(())
}

fn plot(cli: &Cli, logs: &[PathBuf]) -> Result<()> {
    let loaded: Vec<(String, RunLog)> = logs
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
            load_log(p).map(|log| (name, log))
        })
        .collect::<Result<_>>()?;
    let runs: Vec<(&str, &RunLog)> = loaded.iter().map(|(n, l)| (n.as_str(), l)).collect();
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("plots"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("could not create {}", dir.display()))?;
    std::fs::write(dir.join("path.svg"), path_overlay_svg(&runs))?;
    std::fs::write(dir.join("error.svg"), error_svg(&runs, &[]))?;
    std::fs::write(dir.join("thrust.svg"), thrust_svg(runs[0].1))?;
    println!("wrote path.svg, error.svg, thrust.svg -> {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Identify { log, window } => identify(&cli, log, *window),
        Command::Experiment { preset, list } => experiment(&cli, preset.as_deref(), *list),
        Command::Sweep => sweep(&cli),
        Command::Plot { log } => plot(&cli, log),
    }
}
