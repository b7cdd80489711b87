use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgemine::baseline::BaselineKind;
use edgemine::harness::{
    game_report, resolve_scenario, run_experiment, ExperimentSpec, PolicySpec, Track,
};
use edgemine::madrl::Mode;
use edgemine::model::{generate_scenario, GeneratorParams};
use edgemine::Error;

#[derive(Parser)]
#[command(
    name = "edgemine",
    version,
    about = "Joint offloading and mining experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scenario file.
    Gen(GenArgs),
    /// Train MA-DDPG policies.
    Train(TrackArgs),
    /// Roll out a baseline or a trained policy.
    Eval(EvalArgs),
    /// Solve the channel-selection game and print the certificate.
    SolveGame(TrackArgs),
    /// PoR vs DPoS latency and bandwidth.
    ConsensusBench(TrackArgs),
    /// Run an experiment spec as written.
    Run(RunArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator parameters (JSON). Without it the built-in sample is used.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    devices: usize,
    #[arg(long, default_value_t = 3)]
    subbands: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output scenario file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    /// Experiment spec (JSON); its track is replaced by the subcommand.
    #[arg(long, conflicts_with = "scenario")]
    spec: Option<PathBuf>,
    /// Scenario file, used with default settings when no spec is given.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: TrackArgs,
    /// Baseline name or path to a policy checkpoint.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
}

fn build_spec(a: &TrackArgs, track: Track) -> edgemine::Result<ExperimentSpec> {
    let mut spec = match (&a.spec, &a.scenario) {
        (Some(p), _) => ExperimentSpec::load(p)?,
        (None, Some(s)) => {
            let out = a
                .out
                .clone()
                .ok_or_else(|| Error::Validation("--out is required with --scenario".into()))?;
            let text = format!(
                r#"{{"source": {{"kind": "file", "path": {}}}, "track": "train", "output_dir": {}}}"#,
                serde_json::to_string(s)?,
                serde_json::to_string(&out)?
            );
            ExperimentSpec::from_json_str(&text)?
        }
        (None, None) => {
            return Err(Error::Validation(
                "one of --spec or --scenario is required".into(),
            ))
        }
    };
    spec.track = track;
    override_common(&mut spec, a.seed, a.out.as_deref(), a.mode);
    spec.validate()?;
    Ok(spec)
}

fn override_common(
    spec: &mut ExperimentSpec,
    seed: Option<u64>,
    out: Option<&Path>,
    mode: Option<Mode>,
) {
    if let Some(s) = seed {
        spec.seed_base = s;
    }
    if let Some(o) = out {
        spec.output_dir = o.to_path_buf();
    }
    if let Some(m) = mode {
        spec.mode = m;
    }
}

fn print_json<S: serde::Serialize>(v: &S) -> edgemine::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> edgemine::Result<()> {
    match cli.cmd {
        Cmd::Gen(a) => {
            let mut params = match &a.spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p)?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    serde_path_to_error::deserialize::<_, GeneratorParams>(de).map_err(|e| {
                        Error::Schema {
                            path: e.path().to_string(),
                            message: e.inner().to_string(),
                        }
                    })?
                }
                None => GeneratorParams::sample(a.devices, a.subbands, 0),
            };
            if let Some(s) = a.seed {
                params.seed = s;
            }
            let s = generate_scenario(&params)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            s.save(&a.out)?;
            Ok(())
        }
        Cmd::Train(a) => {
            let m = run_experiment(&build_spec(&a, Track::Train)?)?;
            print_json(&m.runs)
        }
        Cmd::Eval(a) => {
            let mut spec = build_spec(&a.common, Track::Eval)?;
            if let Some(p) = &a.policy {
                spec.eval.policy = match p.parse::<BaselineKind>() {
                    Ok(k) => PolicySpec::Baseline(k),
                    Err(_) => PolicySpec::Checkpoint(PathBuf::from(p)),
                };
            }
            if let Some(e) = a.episodes {
                spec.eval.episodes = e;
            }
            spec.validate()?;
            let m = run_experiment(&spec)?;
            print_json(&m.runs)
        }
        Cmd::SolveGame(a) => {
            let spec = build_spec(&a, Track::SolveGame)?;
            run_experiment(&spec)?;
            let first = spec.sweep.as_ref().map(|s| (s.variable, s.values[0]));
            let report = game_report(&resolve_scenario(&spec.source, first)?, &spec.solve)?;
            std::fs::write(
                spec.output_dir.join("solve_game.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            print_json(&report)
        }
        Cmd::ConsensusBench(a) => {
            let m = run_experiment(&build_spec(&a, Track::ConsensusBench)?)?;
            print_json(&m.runs)
        }
        Cmd::Run(a) => {
            let mut spec = ExperimentSpec::load(&a.spec)?;
            override_common(&mut spec, a.seed, a.out.as_deref(), a.mode);
            let m = run_experiment(&spec)?;
            print_json(&m.runs)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": "usage", "message": e.to_string() });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
