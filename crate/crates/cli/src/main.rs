//! `superbunch`: theory tables, source simulation, coincidence analysis and
//! slice fitting for cascaded pseudothermal light.
//!
//! Exit codes: 0 success, 1 I/O, 2 validation, 3 analysis, 4 fit did not converge.

mod commands;
mod failure;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use superbunch_core::analysis::default_binning;
use superbunch_core::fitting::{BandwidthMode, SliceModel};
use superbunch_core::model::{hz_to_angular, PS_PER_S};
use superbunch_core::SourceConfig;

use commands::{AnalyzeParams, FitParams, PipelineParams, SimulateParams, TheoryParams};
use failure::{Context, Failure, Outcome, IO, VALIDATION};

#[derive(Parser)]
#[command(name = "superbunch", version, about = "Simulate and analyze superbunching pseudothermal light")]
struct Cli {
    /// Worker threads. Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the closed-form coherence functions.
    Theory(TheoryArgs),
    /// Simulate three detector streams.
    Simulate(SimulateArgs),
    /// Count three-fold coincidences and normalize them to g3.
    Analyze(AnalyzeArgs),
    /// Fit a slice profile.
    Fit(FitArgs),
    /// Simulate, analyze and fit in one go.
    Pipeline(PipelineArgs),
    /// Re-run a recorded manifest and check the outputs match.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 3)]
    order: u32,
    #[arg(long, default_value_t = 2)]
    stages: usize,
    /// Stage bandwidths in Hz; a single value applies to every stage.
    #[arg(long, value_delimiter = ',', default_value = "5000")]
    bandwidth_hz: Vec<f64>,
    /// Grid points per axis (odd).
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Grid half-width in coherence times.
    #[arg(long, default_value_t = 5.0)]
    span: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Source flags; each overrides the matching config key.
#[derive(Args)]
struct SourceArgs {
    /// JSON config; the built-in two-stage default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, visible_alias = "stages")]
    n_stages: Option<usize>,
    /// Stage bandwidths in rad/s; a single value applies to every stage.
    #[arg(long, value_delimiter = ',', conflicts_with = "bandwidth_hz")]
    bandwidths: Vec<f64>,
    /// Stage bandwidths in Hz; a single value applies to every stage.
    #[arg(long, value_delimiter = ',')]
    bandwidth_hz: Vec<f64>,
    #[arg(long, visible_alias = "rate")]
    mean_rate_per_detector: Option<f64>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, visible_alias = "modes")]
    modes_per_stage: Option<usize>,
    /// Seconds.
    #[arg(long)]
    sample_dt: Option<f64>,
    #[arg(long, env = "SUPERBUNCH_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Also write CSV copies of the streams.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Binning flags; defaults follow the coherence time.
#[derive(Args)]
struct BinningArgs {
    #[arg(long)]
    bin_width_ps: Option<u64>,
    #[arg(long)]
    max_delay_ps: Option<u64>,
    /// Sets the background region (three coherence times) and default binning.
    #[arg(long)]
    coherence_time_ps: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory with ch1/ch2/ch3 stream files (.pstr or .csv).
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    binning: BinningArgs,
    /// Acquisition time; taken from the run record when present.
    #[arg(long)]
    duration_ps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Slice CSV with tau_ps, value and sigma columns.
    #[arg(long)]
    slice: PathBuf,
    /// eq4 (t1 = t3 slice) or eq5 (diagonal slice).
    #[arg(long, default_value = "eq5")]
    model: SliceModel,
    #[arg(long, default_value_t = 2)]
    stages: usize,
    /// Fit two stages with independent bandwidths.
    #[arg(long)]
    two_bandwidth: bool,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    binning: BinningArgs,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    two_bandwidth: bool,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write to a different location than the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn per_stage(values: &[f64], n: usize) -> Outcome<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        k if k == n => Ok(values.to_vec()),
        k => Err(Failure::msg(
            VALIDATION,
            format!("got {k} bandwidths for {n} stage(s); give one or one per stage"),
        )),
    }
}

fn resolve_config(a: &SourceArgs) -> Outcome<SourceConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).code(IO, &format!("reading {}", path.display()))?;
            SourceConfig::from_json(&text).code(VALIDATION, &format!("parsing {}", path.display()))?
        }
        None => SourceConfig::default_two_stage(),
    };
    if let Some(n) = a.n_stages {
        cfg.n_stages = n;
    }
    let given: Vec<f64> = if !a.bandwidth_hz.is_empty() {
        a.bandwidth_hz.iter().map(|&hz| hz_to_angular(hz)).collect()
    } else {
        a.bandwidths.clone()
    };
    if !given.is_empty() {
        cfg.bandwidths = if cfg.n_stages == 0 { Vec::new() } else { per_stage(&given, cfg.n_stages)? };
    } else if a.n_stages.is_some() && cfg.bandwidths.len() != cfg.n_stages {
        let bw = cfg.bandwidths.first().copied().unwrap_or_else(|| hz_to_angular(5_000.0));
        cfg.bandwidths = vec![bw; cfg.n_stages];
    }
    if let Some(v) = a.mean_rate_per_detector {
        cfg.mean_rate_per_detector = v;
    }
    if let Some(v) = a.duration {
        cfg.duration = v;
    }
    if let Some(v) = a.modes_per_stage {
        cfg.modes_per_stage = v;
    }
    if let Some(v) = a.sample_dt {
        cfg.sample_dt = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn resolve_binning(b: &BinningArgs, config: Option<&SourceConfig>) -> Outcome<(u64, u64, f64)> {
    let tc_ps = b
        .coherence_time_ps
        .or_else(|| config.and_then(SourceConfig::longest_coherence_time).map(|tc| tc * PS_PER_S));
    let (bin, max) = match (b.bin_width_ps, b.max_delay_ps, tc_ps) {
        (Some(bin), Some(max), _) => (bin, max),
        (bin, max, Some(tc)) => {
            let (db, dm) = default_binning(tc / PS_PER_S);
            let bin = bin.unwrap_or(db);
            (bin, max.unwrap_or(dm.div_ceil(bin) * bin))
        }
        _ => {
            return Err(Failure::msg(
                VALIDATION,
                "no coherence time available: pass --coherence-time-ps or both --bin-width-ps and --max-delay-ps",
            ))
        }
    };
    // without a coherence time, treat the window as five of them
    let tc_ps = tc_ps.unwrap_or(max as f64 / 5.0);
    Ok((bin, max, tc_ps))
}

fn run(cli: Cli) -> Outcome<()> {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::Theory(a) => {
            let bandwidths = if a.stages == 0 {
                Vec::new()
            } else {
                per_stage(&a.bandwidth_hz, a.stages)?.into_iter().map(hz_to_angular).collect()
            };
            let p = TheoryParams {
                order: a.order,
                stages: a.stages,
                bandwidths,
                grid: a.grid,
                span: a.span,
            };
            commands::theory(&p, &a.out, threads)?;
        }
        Command::Simulate(a) => {
            let cfg = resolve_config(&a.source)?;
            commands::simulate_cmd(&cfg, &SimulateParams { csv: a.csv }, &a.out, threads)?;
        }
        Command::Analyze(a) => {
            let record = commands::read_simulation_record(&a.input)?;
            let (bin, max, tc) = resolve_binning(&a.binning, record.as_ref().map(|r| &r.config))?;
            let p = AnalyzeParams {
                bin_width_ps: bin,
                max_delay_ps: max,
                coherence_time_ps: tc,
                duration_ps: a.duration_ps.or(record.map(|r| r.duration_ps)),
            };
            commands::analyze_cmd(&p, &a.input, &a.out, threads)?;
        }
        Command::Fit(a) => {
            let mode = if a.two_bandwidth {
                if a.stages != 2 {
                    return Err(Failure::msg(VALIDATION, "--two-bandwidth needs --stages 2"));
                }
                BandwidthMode::TwoStage
            } else {
                BandwidthMode::Shared { n_stages: a.stages }
            };
            let p = FitParams {
                model: a.model,
                mode,
                max_iterations: a.max_iterations,
            };
            let (_, fit) = commands::fit_cmd(&p, &a.slice, &a.out, threads)?;
            if !fit.converged {
                return Err(commands::fit_failure(&fit));
            }
        }
        Command::Pipeline(a) => {
            let cfg = resolve_config(&a.source)?;
            let (bin, max, tc) = resolve_binning(&a.binning, Some(&cfg))?;
            let p = PipelineParams {
                simulate: SimulateParams { csv: a.csv },
                analyze: AnalyzeParams {
                    bin_width_ps: bin,
                    max_delay_ps: max,
                    coherence_time_ps: tc,
                    duration_ps: Some(cfg.duration_ps()),
                },
                two_bandwidth: a.two_bandwidth,
                max_iterations: a.max_iterations,
            };
            commands::pipeline(&cfg, &p, &a.out, threads)?;
        }
        Command::Replay(a) => {
            let m = manifest::read(&a.manifest)?;
            commands::replay(&m, a.out.as_deref(), threads)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
