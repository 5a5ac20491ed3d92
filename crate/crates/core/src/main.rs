use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wimaxsim::compare::compare_runs;
use wimaxsim::config::{Config, Preset};
use wimaxsim::sim::{run_scenario, RunOutput};
use wimaxsim::Error;

/// Discrete-event simulator of QoS scheduling in an IEEE 802.16e cell.
#[derive(Parser)]
#[command(name = "wimaxsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv and summary.txt
    Run(RunArgs),
    /// Run two scenarios and compare their post-warmup metrics
    Compare(CompareArgs),
    /// Parse and validate a configuration without running it
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Bundled scenario (default: baseline)
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// TOML configuration file (instead of a preset)
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon override, in simulated seconds
    #[arg(long)]
    duration_s: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write frames.csv listing every grant of every frame
    #[arg(long)]
    dump_frames: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Scenario A: a preset name or a configuration path
    scenario_a: String,
    /// Scenario B: a preset name or a configuration path
    scenario_b: String,
    /// Master seed override applied to both scenarios
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon override applied to both scenarios, in simulated seconds
    #[arg(long)]
    duration_s: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// A preset name or a configuration path
    scenario: String,
}

fn preset_by_name(name: &str) -> Option<Preset> {
    match name.replace('-', "_").as_str() {
        "baseline" => Some(Preset::Baseline),
        "improve_voice" => Some(Preset::ImproveVoice),
        "improve_data" => Some(Preset::ImproveData),
        _ => None,
    }
}

/// Loads a scenario given either a preset name or a config-file path.
fn load_scenario(spec: &str) -> Result<(Config, String), Error> {
    if let Some(preset) = preset_by_name(spec) {
        return Ok((preset.config()?, preset.name().to_owned()));
    }
    let path = Path::new(spec);
    let name = path
        .file_stem()
        .map_or_else(|| spec.to_owned(), |s| s.to_string_lossy().into_owned());
    Ok((Config::from_path(path)?, name))
}

fn apply_overrides(cfg: &mut Config, seed: Option<u64>, duration_s: Option<u64>) {
    if let Some(seed) = seed {
        cfg.sim.seed = seed;
    }
    if let Some(duration) = duration_s {
        cfg.sim.duration_s = duration.max(1);
        if cfg.sim.warmup_s >= cfg.sim.duration_s {
            let clamped = cfg.sim.duration_s - 1;
            log::warn!(
                "warmup {} s does not fit the {} s horizon; clamping warmup to {} s",
                cfg.sim.warmup_s,
                cfg.sim.duration_s,
                clamped
            );
            cfg.sim.warmup_s = clamped;
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let (mut cfg, name) = match &args.config {
        Some(path) => load_scenario(&path.display().to_string())?,
        None => {
            let preset = args.preset.unwrap_or(Preset::Baseline);
            (preset.config()?, preset.name().to_owned())
        }
    };
    apply_overrides(&mut cfg, args.seed, args.duration_s);

    let output: RunOutput = run_scenario(&cfg, &name, args.dump_frames)?;
    print!("{}", output.summary);

    let metrics = write_file(&args.out, "metrics.csv", &output.metrics_csv)?;
    let summary = write_file(&args.out, "summary.txt", &output.summary)?;
    println!("wrote {}", metrics.display());
    println!("wrote {}", summary.display());
    if let Some(frames) = &output.frames_csv {
        let path = write_file(&args.out, "frames.csv", frames)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Error> {
    let (mut cfg_a, name_a) = load_scenario(&args.scenario_a)?;
    let (mut cfg_b, name_b) = load_scenario(&args.scenario_b)?;
    apply_overrides(&mut cfg_a, args.seed, args.duration_s);
    apply_overrides(&mut cfg_b, args.seed, args.duration_s);

    let run_a = run_scenario(&cfg_a, &name_a, false)?;
    let run_b = run_scenario(&cfg_b, &name_b, false)?;
    let report = compare_runs(&run_a, &run_b);
    print!("{}", report.text);

    let path = write_file(&args.out, "compare.csv", &report.csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Error> {
    let (cfg, name) = load_scenario(&args.scenario)?;
    let stations = cfg.station_plan().len();
    println!(
        "{name}: configuration valid ({} stations, {} service classes, {} s horizon, {} cell{})",
        stations,
        cfg.classes.len(),
        cfg.sim.duration_s,
        cfg.sim.cells,
        if cfg.sim.cells == 1 { "" } else { "s" },
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

/// 1 = bad scenario input, 2 = a run aborted on an internal audit, 3 = the
/// run finished but its outputs could not be produced or written.
fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Config(_) => 1,
        Error::Write { .. } | Error::Metrics(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}
