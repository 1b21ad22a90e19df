//! Command-line front end: calibrate the simulator, train the nested or
//! flat agents, evaluate schedules, and build comparison tables.
//!
//! Exit codes: 0 on success, 2 on usage errors (clap), 3 on runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ndrl::config::RunConfig;
use ndrl::crop_env::{
    calibrate, default_param_grid, generate_weather, load_treatments, run_season, weather_to_csv,
    Observation, Schedule, SoilParams, Treatment, YearProfile, TREATMENTS_CSV,
};
use ndrl::error::{Error, Result};
use ndrl::metrics::{self, MetricsRow};
use ndrl::trainer::{train, Algorithm, TrainingOutcome};

#[derive(Parser)]
#[command(name = "ndrl", version, about = "Nested dual-agent irrigation and nitrogen scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search simulator parameters against the shipped field treatments.
    Calibrate {
        #[arg(long, default_value_t = 42)]
        weather_seed: u64,
        /// Output directory (default: $NDRL_OUT or ./out, plus /calibration).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the nested parent/child agents.
    Train(TrainArgs),
    /// Train the flat per-event DQN baseline.
    Baseline(TrainArgs),
    /// Simulate a schedule CSV and report yield and productivity metrics.
    Evaluate {
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value = "2023")]
        year: String,
        #[arg(long, default_value_t = 42)]
        weather_seed: u64,
        /// Simulator parameters file (key = value); defaults to the shipped
        /// calibration.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a field-vs-methods comparison table from two finished runs.
    Compare {
        /// Nested training run directory (with run_meta.json).
        #[arg(long)]
        run: PathBuf,
        /// Baseline run directory.
        #[arg(long)]
        baseline_run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bundled treatment table and generated weather to CSV files.
    ExportFixtures {
        #[arg(long, default_value_t = 42)]
        weather_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (key = value, see README).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    /// Year profile: 2023 (dry) or 2024 (wet).
    #[arg(long)]
    year: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list; runs once per seed into seed-N subdirs.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    weather_seed: Option<u64>,
    /// Simulator parameters file; defaults to the shipped calibration.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_root(explicit: Option<PathBuf>, suffix: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os("NDRL_OUT").map_or_else(|| PathBuf::from("out"), PathBuf::from);
        root.join(suffix)
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_params(path: Option<&Path>) -> Result<SoilParams> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SoilParams::from_key_values(&text, p)
        }
        None => Ok(SoilParams::default_calibrated()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { weather_seed, out } => {
            cmd_calibrate(weather_seed, out_root(out, "calibration"))
        }
        Command::Train(args) => cmd_train(args, Algorithm::Nested, "train"),
        Command::Baseline(args) => cmd_train(args, Algorithm::FlatDqn, "baseline"),
        Command::Evaluate {
            schedule,
            year,
            weather_seed,
            params,
            out,
        } => cmd_evaluate(
            &schedule,
            &year,
            weather_seed,
            params.as_deref(),
            out_root(out, "evaluate"),
        ),
        Command::Compare {
            run,
            baseline_run,
            out,
        } => cmd_compare(&run, &baseline_run, out_root(out, "compare")),
        Command::ExportFixtures { weather_seed, out } => {
            cmd_export_fixtures(weather_seed, out_root(out, "fixtures"))
        }
    }
}

fn fixture_observations<'w>(
    treatments: &[Treatment],
    weather_dry: &'w [ndrl::crop_env::WeatherDay],
    weather_wet: &'w [ndrl::crop_env::WeatherDay],
) -> Vec<Observation<'w>> {
    treatments
        .iter()
        .map(|t| Observation {
            schedule: t.schedule.clone(),
            weather: match t.profile {
                YearProfile::Dry2023 => weather_dry,
                YearProfile::Wet2024 => weather_wet,
            },
            observed_yield: t.observed_yield,
        })
        .collect()
}

fn cmd_calibrate(weather_seed: u64, out: PathBuf) -> Result<()> {
    let treatments = load_treatments(TREATMENTS_CSV)?;
    let weather_dry = generate_weather(weather_seed, YearProfile::Dry2023);
    let weather_wet = generate_weather(weather_seed, YearProfile::Wet2024);
    let observations = fixture_observations(&treatments, &weather_dry, &weather_wet);
    let grid = default_param_grid();
    let (best, score) = calibrate(&grid, &observations)?;

    let mut predicted = Vec::with_capacity(observations.len());
    let mut report = String::from("treatment,year,observed_kgha,predicted_kgha\n");
    for (t, obs) in treatments.iter().zip(&observations) {
        let p = run_season(&obs.schedule, obs.weather, &best)?.yield_kgha;
        predicted.push(p);
        report.push_str(&format!(
            "{},{},{},{}\n",
            t.name,
            t.profile.label(),
            t.observed_yield,
            p
        ));
    }
    let observed: Vec<f64> = observations.iter().map(|o| o.observed_yield).collect();
    let d = metrics::d_index(&observed, &predicted)?;
    let r2 = metrics::r_squared(&observed, &predicted)?;

    write_file(&out.join("params.cfg"), &best.to_key_values())?;
    write_file(&out.join("fit.csv"), &report)?;
    write_file(
        &out.join("fit_metrics.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "nrmse_pct": score,
            "d_index": d,
            "r_squared": r2,
            "grid_points": grid.len(),
            "weather_seed": weather_seed,
        }))
        .expect("json"),
    )?;
    println!("calibrated over {} grid points", grid.len());
    println!("nRMSE {score:.2}%  d-index {d:.3}  R^2 {r2:.3}");
    println!("wrote {}", out.join("params.cfg").display());
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    if let Some(y) = &args.year {
        cfg.year_profile = YearProfile::parse(y)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.weather_seed {
        cfg.weather_seed = w;
    }
    cfg.validate()
}

fn cmd_train(args: TrainArgs, algorithm: Algorithm, label: &str) -> Result<()> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    apply_overrides(&mut cfg, &args)?;
    let params = load_params(args.params.as_deref())?;
    let out = out_root(args.out.clone(), label);

    let seeds = args.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    let fan_out = seeds.len() > 1;
    let mut summary = String::from("seed,best_episode,best_yield,total_i,total_n\n");
    for &seed in &seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let dir = if fan_out {
            out.join(format!("seed-{seed}"))
        } else {
            out.clone()
        };
        let outcome = run_one(&run_cfg, algorithm, &params, &dir)?;
        match &outcome.best {
            Some(b) => {
                println!(
                    "seed {seed}: best yield {:.1} kg/ha (episode {}, {:.1} mm, {:.1} kg N/ha)",
                    b.yield_kgha,
                    b.episode,
                    b.schedule.total_irrigation(),
                    b.schedule.total_nitrogen()
                );
                summary.push_str(&format!(
                    "{seed},{},{},{},{}\n",
                    b.episode,
                    b.yield_kgha,
                    b.schedule.total_irrigation(),
                    b.schedule.total_nitrogen()
                ));
            }
            None => {
                println!("seed {seed}: no budget-respecting episode");
                summary.push_str(&format!("{seed},,,,\n"));
            }
        }
    }
    if fan_out {
        write_file(&out.join("summary.csv"), &summary)?;
    }
    Ok(())
}

fn run_one(
    cfg: &RunConfig,
    algorithm: Algorithm,
    params: &SoilParams,
    dir: &Path,
) -> Result<TrainingOutcome> {
    let weather = generate_weather(cfg.weather_seed, cfg.year_profile);
    let outcome = train(cfg, algorithm, &weather, params)?;

    write_file(&dir.join("training_log.csv"), &outcome.log_csv())?;
    write_file(&dir.join("child_net.txt"), &outcome.child_net.save())?;

    let algo_name = match algorithm {
        Algorithm::Nested => "nested",
        Algorithm::FlatDqn => "flat_dqn",
    };
    let best_json = outcome.best.as_ref().map(|b| {
        serde_json::json!({
            "episode": b.episode,
            "yield_kgha": b.yield_kgha,
            "total_irrigation": b.schedule.total_irrigation(),
            "total_nitrogen": b.schedule.total_nitrogen(),
        })
    });
    write_file(
        &dir.join("run_meta.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "algorithm": algo_name,
            "config": cfg,
            "params": params,
            "best": best_json,
        }))
        .expect("json"),
    )?;

    if let Some(b) = &outcome.best {
        write_file(&dir.join("best_schedule.csv"), &b.schedule.to_csv())?;
        let yields: Vec<f64> = outcome.log.iter().map(|r| r.yield_kgha).collect();
        let steps: Vec<usize> = outcome.log.iter().map(|r| r.steps).collect();
        let cyasr = metrics::cyasr(&yields, &steps, yields.len())?;
        let row = MetricsRow::compute(
            algo_name,
            b.schedule.total_irrigation(),
            b.schedule.total_nitrogen(),
            b.yield_kgha,
        )?;
        write_file(
            &dir.join("metrics.json"),
            &serde_json::to_string_pretty(&serde_json::json!({
                "best": row,
                "cyasr_kgha_per_step": cyasr,
            }))
            .expect("json"),
        )?;
    }
    Ok(outcome)
}

fn cmd_evaluate(
    schedule_path: &Path,
    year: &str,
    weather_seed: u64,
    params_path: Option<&Path>,
    out: PathBuf,
) -> Result<()> {
    let profile = YearProfile::parse(year)?;
    let schedule = Schedule::load(schedule_path)?;
    let params = load_params(params_path)?;
    let weather = generate_weather(weather_seed, profile);
    let result = run_season(&schedule, &weather, &params)?;
    let row = MetricsRow::compute(
        "schedule",
        result.total_irrigation,
        result.total_nitrogen,
        result.yield_kgha,
    )?;
    println!(
        "year {}: yield {:.1} kg/ha with {:.1} mm irrigation, {:.1} kg N/ha",
        profile.label(),
        result.yield_kgha,
        result.total_irrigation,
        result.total_nitrogen
    );
    println!("IWP {:.3} kg/m^3  NPFP {:.3} kg/kg", row.iwp_kg_m3, row.npfp_kg_kg);
    write_file(
        &out.join("metrics.json"),
        &serde_json::to_string_pretty(&row).expect("json"),
    )?;
    Ok(())
}

struct FinishedRun {
    algorithm: String,
    profile: YearProfile,
    schedule: Schedule,
    yield_kgha: f64,
}

fn load_run(dir: &Path) -> Result<FinishedRun> {
    let meta_path = dir.join("run_meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&meta_path, 1, e.to_string()))?;
    let algorithm = meta["algorithm"]
        .as_str()
        .ok_or_else(|| Error::InvalidData(format!("{}: missing algorithm", meta_path.display())))?
        .to_string();
    let profile: YearProfile = serde_json::from_value(meta["config"]["year_profile"].clone())
        .map_err(|e| Error::InvalidData(format!("{}: {e}", meta_path.display())))?;
    let weather_seed = meta["config"]["weather_seed"].as_u64().ok_or_else(|| {
        Error::InvalidData(format!("{}: missing weather_seed", meta_path.display()))
    })?;
    let params: SoilParams = serde_json::from_value(meta["params"].clone())
        .map_err(|e| Error::InvalidData(format!("{}: {e}", meta_path.display())))?;
    let schedule = Schedule::load(&dir.join("best_schedule.csv"))?;
    let weather = generate_weather(weather_seed, profile);
    let result = run_season(&schedule, &weather, &params)?;
    Ok(FinishedRun {
        algorithm,
        profile,
        schedule,
        yield_kgha: result.yield_kgha,
    })
}

fn cmd_compare(run_dir: &Path, baseline_dir: &Path, out: PathBuf) -> Result<()> {
    let mut table = String::from("Category,Year,Methods,Irrigation,Fertilizer_N,Yields,IWP,NPFP\n");
    let mut push_row = |category: &str, year: &str, method: &str, row: &MetricsRow| {
        table.push_str(&format!(
            "{category},{year},{method},{},{},{},{:.2},{:.2}\n",
            row.irrigation_mm, row.fertilizer_n_kgha, row.yield_kgha, row.iwp_kg_m3, row.npfp_kg_kg
        ));
    };

    for t in load_treatments(TREATMENTS_CSV)? {
        let row = MetricsRow::compute(
            &t.name,
            t.schedule.total_irrigation(),
            t.schedule.total_nitrogen(),
            t.observed_yield,
        )?;
        push_row("Field Data", t.profile.label(), &t.name, &row);
    }
    for dir in [run_dir, baseline_dir] {
        let run = load_run(dir)?;
        let row = MetricsRow::compute(
            &run.algorithm,
            run.schedule.total_irrigation(),
            run.schedule.total_nitrogen(),
            run.yield_kgha,
        )?;
        push_row("Simulation", run.profile.label(), &run.algorithm, &row);
    }

    write_file(&out.join("comparison_table.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_export_fixtures(weather_seed: u64, out: PathBuf) -> Result<()> {
    write_file(&out.join("treatments.csv"), TREATMENTS_CSV)?;
    for profile in [YearProfile::Dry2023, YearProfile::Wet2024] {
        let weather = generate_weather(weather_seed, profile);
        write_file(
            &out.join(format!("weather_{}.csv", profile.label())),
            &weather_to_csv(&weather),
        )?;
    }
    println!("wrote fixtures to {}", out.display());
    Ok(())
}
