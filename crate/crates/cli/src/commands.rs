//! Subcommand implementations. Each takes fully resolved parameters so a
//! manifest can replay it without consulting flags or the environment.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superbunch_core::analysis::{analyze, AnalysisSummary};
use superbunch_core::coherence::{g3, gn_zero, slice_model_diag, slice_model_t1_eq_t3, CoherenceModel};
use superbunch_core::coincidence::{slice, BinGeometry, G3Surface};
use superbunch_core::fitting::{fit_slice, BandwidthMode, FitOptions, FitResult, SliceModel};
use superbunch_core::io;
use superbunch_core::model::{coherence_time, PS_PER_S};
use superbunch_core::parallel::with_threads;
use superbunch_core::simulation::simulate;
use superbunch_core::{Execution, PhotonStream, SliceDirection, SliceSpec, SourceConfig, TimeTuple};

use crate::failure::{analysis_code, config_error, Context, Failure, Outcome, ANALYSIS, FIT, IO, VALIDATION};
use crate::manifest::{digest, sha256_file, Draft, FileDigest, Manifest};

pub const MANIFEST: &str = "manifest.json";
pub const SIMULATION_JSON: &str = "simulation.json";
pub const SUMMARY_JSON: &str = "summary.json";

pub fn stream_file(channel: u8) -> String {
    format!("ch{channel}.pstr")
}

pub fn slice_file(direction: SliceDirection) -> String {
    format!("slice_{}.csv", direction.name())
}

fn create_dir(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).code(IO, &format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    fs::write(path, text + "\n").code(IO, &format!("writing {}", path.display()))
}

/// CSV whose first line records the manifest hash.
fn write_csv(path: &Path, hash: &str, body: impl FnOnce(&mut dyn Write) -> superbunch_core::Result<()>) -> Outcome<()> {
    let what = format!("writing {}", path.display());
    let file = fs::File::create(path).code(IO, &what)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# manifest_hash={hash}").code(IO, &what)?;
    body(&mut w).code(IO, &what)?;
    w.flush().code(IO, &what)
}

// ---------------------------------------------------------------- theory

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub order: u32,
    pub stages: usize,
    /// Per-stage bandwidths, rad/s.
    pub bandwidths: Vec<f64>,
    /// Grid points per axis (odd).
    pub grid: usize,
    /// Half-width of the grid in coherence times.
    pub span: f64,
}

#[derive(Serialize)]
struct ZeroDelay {
    n_stages: u32,
    value: u128,
}

#[derive(Serialize)]
struct TheoryOutput<'a> {
    manifest_hash: &'a str,
    order: u32,
    n_stages: usize,
    bandwidths: &'a [f64],
    zero_delay: u128,
    zero_delay_by_stages: Vec<ZeroDelay>,
    grid: Option<BinGeometry>,
}

pub fn theory(p: &TheoryParams, out: &Path, threads: usize) -> Outcome<Manifest> {
    if p.order == 0 || p.order > 20 {
        return Err(Failure::msg(VALIDATION, format!("order must be in 1..=20 (got {})", p.order)));
    }
    if p.grid < 3 || p.grid % 2 == 0 {
        return Err(Failure::msg(VALIDATION, format!("grid must be odd and >= 3 (got {})", p.grid)));
    }
    if !(p.span > 0.0 && p.span.is_finite()) {
        return Err(Failure::msg(VALIDATION, "span must be > 0"));
    }
    if p.bandwidths.len() != p.stages || p.bandwidths.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Failure::msg(VALIDATION, "need one positive bandwidth per stage"));
    }
    let zero = gn_zero(p.order, p.stages as u32).code(VALIDATION, "zero-delay value")?;
    let by_stages = (1..=4u32)
        .map(|n| gn_zero(p.order, n).map(|value| ZeroDelay { n_stages: n, value }))
        .collect::<Result<Vec<_>, _>>()
        .code(VALIDATION, "zero-delay table")?;

    create_dir(out)?;
    let params = serde_json::to_value(p).expect("params serialize");
    let draft = Draft::new("theory", None, params, Vec::new(), None, out, threads);
    let hash = draft.hash().to_string();
    let mut outputs = Vec::new();

    // grid scale from the longest coherence time; coherent light has none
    let tc = p
        .bandwidths
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, b| Some(m.map_or(b, |x| x.min(b))))
        .map(coherence_time)
        .unwrap_or_else(|| coherence_time(superbunch_core::model::hz_to_angular(5_000.0)));
    let half = (p.grid - 1) / 2;
    let bin = ((p.span * tc * PS_PER_S / half as f64).round() as u64).max(1);
    let geometry = BinGeometry::new(bin, bin * half as u64).code(VALIDATION, "grid")?;

    let mut grid = None;
    if p.order == 3 {
        let bws = p.bandwidths.clone();
        let surface = G3Surface::tabulate(geometry, |t12, t23| g3(TimeTuple::new(t12, 0.0, -t23), &bws));
        write_csv(&out.join("surface.csv"), &hash, |w| io::surface_csv(w, &surface))?;
        outputs.push(PathBuf::from("surface.csv"));
        for d in SliceDirection::ALL {
            let s = slice(&surface, SliceSpec::new(d));
            write_csv(&out.join(slice_file(d)), &hash, |w| io::slice_csv(w, &s))?;
            outputs.push(PathBuf::from(slice_file(d)));
        }
        write_csv(&out.join("slice_models.csv"), &hash, |w| {
            writeln!(w, "tau_ps,eq4,eq5")?;
            for k in -(half as i64)..=half as i64 {
                let tau_ps = k * bin as i64;
                let tau = tau_ps as f64 / PS_PER_S;
                writeln!(w, "{tau_ps},{},{}", slice_model_t1_eq_t3(tau, &bws), slice_model_diag(tau, &bws))?;
            }
            Ok(())
        })?;
        outputs.push(PathBuf::from("slice_models.csv"));
        grid = Some(geometry);
    } else if p.order == 2 {
        let model = CoherenceModel::new(2, p.bandwidths.clone()).code(VALIDATION, "model")?;
        write_csv(&out.join("g2.csv"), &hash, |w| {
            writeln!(w, "tau_ps,value")?;
            for k in -(half as i64)..=half as i64 {
                let tau_ps = k * bin as i64;
                writeln!(w, "{tau_ps},{}", model.gn(&[tau_ps as f64 / PS_PER_S, 0.0])?)?;
            }
            Ok(())
        })?;
        outputs.push(PathBuf::from("g2.csv"));
        grid = Some(geometry);
    }

    let output = TheoryOutput {
        manifest_hash: &hash,
        order: p.order,
        n_stages: p.stages,
        bandwidths: &p.bandwidths,
        zero_delay: zero,
        zero_delay_by_stages: by_stages,
        grid,
    };
    for z in &output.zero_delay_by_stages {
        println!("g{}(0), n = {}: {}", p.order, z.n_stages, z.value);
    }
    println!("g{}(0) for {} stage(s): {}", p.order, p.stages, zero);
    write_json(&out.join("theory.json"), &output)?;
    outputs.push(PathBuf::from("theory.json"));
    draft.finish(out, &outputs, &out.join(MANIFEST))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateParams {
    /// Also write one-timestamp-per-line CSV copies of the streams.
    pub csv: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub manifest_hash: String,
    pub config: SourceConfig,
    pub duration_ps: u64,
    pub counts: [usize; 3],
    /// SHA-256 of each binary stream file, which has no room for the hash.
    pub streams: Vec<FileDigest>,
}

pub fn simulate_cmd(config: &SourceConfig, p: &SimulateParams, out: &Path, threads: usize) -> Outcome<Manifest> {
    let config = config.clone().validate().map_err(|v| config_error(&v))?;
    create_dir(out)?;
    let params = serde_json::to_value(p).expect("params serialize");
    let draft = Draft::new("simulate", Some(&config), params, Vec::new(), None, out, threads);
    let hash = draft.hash().to_string();

    let exec = Execution::from_threads(threads);
    let det = with_threads(threads, || simulate(&config, exec)).map_err(|e| Failure::new(analysis_code(&e), e))?;

    let mut outputs = Vec::new();
    let mut streams = Vec::new();
    for s in &det.streams {
        let name = stream_file(s.channel());
        let path = out.join(&name);
        io::write_stream(&path, s).code(IO, &format!("writing {}", path.display()))?;
        streams.push(FileDigest {
            path: PathBuf::from(&name),
            sha256: sha256_file(&path)?,
        });
        outputs.push(PathBuf::from(&name));
        if p.csv {
            let name = format!("ch{}.csv", s.channel());
            write_csv(&out.join(&name), &hash, |w| {
                for t in s.timestamps() {
                    writeln!(w, "{t}")?;
                }
                Ok(())
            })?;
            outputs.push(PathBuf::from(name));
        }
    }
    let record = SimulationRecord {
        manifest_hash: hash.clone(),
        config: config.clone(),
        duration_ps: det.duration_ps,
        counts: [det.streams[0].len(), det.streams[1].len(), det.streams[2].len()],
        streams,
    };
    write_json(&out.join(SIMULATION_JSON), &record)?;
    outputs.push(PathBuf::from(SIMULATION_JSON));
    println!(
        "simulated {} s, {} stage(s): {} / {} / {} events",
        config.duration, config.n_stages, record.counts[0], record.counts[1], record.counts[2]
    );
    draft.finish(out, &outputs, &out.join(MANIFEST))
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeParams {
    pub bin_width_ps: u64,
    pub max_delay_ps: u64,
    pub coherence_time_ps: f64,
    pub duration_ps: Option<u64>,
}

#[derive(Serialize)]
struct SummaryOutput<'a> {
    manifest_hash: &'a str,
    #[serde(flatten)]
    summary: &'a AnalysisSummary,
}

/// Stream files of a run directory: binary if present, else CSV.
pub fn stream_paths(dir: &Path) -> Outcome<Vec<PathBuf>> {
    (1..=3u8)
        .map(|ch| {
            let bin = dir.join(stream_file(ch));
            let csv = dir.join(format!("ch{ch}.csv"));
            if bin.exists() {
                Ok(bin)
            } else if csv.exists() {
                Ok(csv)
            } else {
                Err(Failure::msg(
                    ANALYSIS,
                    format!("no stream for channel {ch} in {} (expected {})", dir.display(), stream_file(ch)),
                ))
            }
        })
        .collect()
}

fn read_stream_any(path: &Path, channel: u8) -> Outcome<PhotonStream> {
    let result = if path.extension().is_some_and(|e| e == "csv") {
        io::read_stream_csv(path, channel)
    } else {
        io::read_stream(path)
    };
    result.map_err(|e| {
        let code = analysis_code(&e);
        let code = if code == VALIDATION { ANALYSIS } else { code };
        Failure::new(code, anyhow::Error::new(e).context(format!("reading {}", path.display())))
    })
}

/// Reads the run record written by `simulate`, if the directory has one.
pub fn read_simulation_record(dir: &Path) -> Outcome<Option<SimulationRecord>> {
    let path = dir.join(SIMULATION_JSON);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).code(IO, &format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map(Some)
        .code(ANALYSIS, &format!("parsing {}", path.display()))
}

pub fn analyze_cmd(p: &AnalyzeParams, input: &Path, out: &Path, threads: usize) -> Outcome<Manifest> {
    BinGeometry::new(p.bin_width_ps, p.max_delay_ps).code(VALIDATION, "binning")?;
    if !(p.coherence_time_ps > 0.0 && p.coherence_time_ps.is_finite()) {
        return Err(Failure::msg(VALIDATION, "coherence time must be > 0"));
    }
    let paths = stream_paths(input)?;
    let inputs = paths.iter().map(|p| digest(p)).collect::<Outcome<Vec<_>>>()?;
    let streams: Vec<PhotonStream> = paths
        .iter()
        .enumerate()
        .map(|(k, path)| read_stream_any(path, k as u8 + 1))
        .collect::<Outcome<_>>()?;
    if let Some(d) = p.duration_ps {
        for s in &streams {
            s.check_within(d).map_err(|e| Failure::new(ANALYSIS, e))?;
        }
    }

    create_dir(out)?;
    let params = serde_json::to_value(p).expect("params serialize");
    let draft = Draft::new("analyze", None, params, inputs, Some(input), out, threads);
    let hash = draft.hash().to_string();

    let core_params = superbunch_core::analysis::AnalysisParams {
        bin_width_ps: p.bin_width_ps,
        max_delay_ps: p.max_delay_ps,
        coherence_time_ps: p.coherence_time_ps,
        duration_ps: p.duration_ps,
    };
    let exec = Execution::from_threads(threads);
    let a = with_threads(threads, || analyze([&streams[0], &streams[1], &streams[2]], &core_params, exec))
        .map_err(|e| Failure::new(ANALYSIS, anyhow::Error::new(e).context("coincidence analysis")))?;

    let mut outputs = vec![PathBuf::from("histogram.csv"), PathBuf::from("surface.csv")];
    write_csv(&out.join("histogram.csv"), &hash, |w| io::histogram_csv(w, &a.histogram))?;
    write_csv(&out.join("surface.csv"), &hash, |w| io::surface_csv(w, &a.surface))?;
    for s in &a.slices {
        let name = slice_file(s.spec.direction);
        write_csv(&out.join(&name), &hash, |w| io::slice_csv(w, s))?;
        outputs.push(PathBuf::from(name));
    }
    write_json(
        &out.join(SUMMARY_JSON),
        &SummaryOutput {
            manifest_hash: &hash,
            summary: &a.summary,
        },
    )?;
    outputs.push(PathBuf::from(SUMMARY_JSON));

    let s = &a.summary.surface;
    println!("triples: {} (center bin {})", s.total_triples, s.center_count);
    println!("center g3: {:.4} ± {:.4}", s.center, s.center_sigma);
    println!("background: {:.4} ± {:.4}", s.background, s.background_sigma);
    println!("peak/background: {:.4} ± {:.4}", s.ratio, s.ratio_sigma);
    for sl in &a.summary.slices {
        if let (Some(r), Some(rs)) = (sl.ratio, sl.ratio_sigma) {
            println!("slice {}: {:.4} ± {:.4}", sl.direction.name(), r, rs);
        }
    }
    draft.finish(out, &outputs, &out.join(MANIFEST))
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub model: SliceModel,
    pub mode: BandwidthMode,
    pub max_iterations: usize,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    manifest_hash: &'a str,
    #[serde(flatten)]
    fit: &'a FitResult,
}

/// Manifest path for a fit written to `out`.
pub fn fit_manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "fit".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn fit_cmd(p: &FitParams, input: &Path, out: &Path, threads: usize) -> Outcome<(Manifest, FitResult)> {
    let profile = io::read_slice_csv(input).map_err(|e| {
        let code = if matches!(e, superbunch_core::Error::Io(_)) { IO } else { VALIDATION };
        Failure::new(code, anyhow::Error::new(e).context(format!("reading {}", input.display())))
    })?;
    let inputs = vec![digest(input)?];
    let mut opts = FitOptions::new(p.model, p.mode.n_stages());
    opts.mode = p.mode;
    opts.max_iterations = p.max_iterations;
    let fit = fit_slice(&profile, &opts).code(VALIDATION, "fit")?;

    let base = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(base)?;
    let params = serde_json::to_value(p).expect("params serialize");
    let draft = Draft::new("fit", None, params, inputs, Some(input), out, threads);
    let hash = draft.hash().to_string();
    write_json(out, &FitOutput { manifest_hash: &hash, fit: &fit })?;
    let name = PathBuf::from(out.file_name().expect("fit output is a file"));
    let manifest = draft.finish(base, &[name], &fit_manifest_path(out))?;

    let hz = |w: f64| w / (2.0 * std::f64::consts::PI);
    println!("g3_zero: {:.4} ± {:.4}", fit.g3_zero, fit.g3_zero_sigma);
    println!(
        "bandwidth: {:.6e} ± {:.2e} rad/s ({:.2} ± {:.2} Hz)",
        fit.bandwidth,
        fit.bandwidth_sigma,
        hz(fit.bandwidth),
        hz(fit.bandwidth_sigma)
    );
    println!("chi2/dof: {:.3}, iterations: {}", fit.chi2 / fit.dof.max(1) as f64, fit.iterations);
    Ok((manifest, fit))
}

pub fn fit_failure(fit: &FitResult) -> Failure {
    Failure::msg(
        FIT,
        format!(
            "fit did not converge after {} iterations (scaled gradient norm {:.3e}, chi2 {:.4e}); best parameters were written",
            fit.iterations, fit.gradient_norm, fit.chi2
        ),
    )
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub simulate: SimulateParams,
    pub analyze: AnalyzeParams,
    /// Fit every stage with its own bandwidth (two stages only).
    pub two_bandwidth: bool,
    pub max_iterations: usize,
}

/// Slice and model pairs fitted by the pipeline.
pub const PIPELINE_FITS: [(SliceDirection, SliceModel); 2] = [
    (SliceDirection::T1EqT3, SliceModel::Eq4),
    (SliceDirection::T1t2EqT2t3, SliceModel::Eq5),
];

pub fn pipeline(config: &SourceConfig, p: &PipelineParams, out: &Path, threads: usize) -> Outcome<Manifest> {
    let config = config.clone().validate().map_err(|v| config_error(&v))?;
    if p.two_bandwidth && config.n_stages != 2 {
        return Err(Failure::msg(VALIDATION, "the two-bandwidth fit needs exactly two stages"));
    }
    create_dir(out)?;
    let params = serde_json::to_value(p).expect("params serialize");
    let draft = Draft::new("pipeline", Some(&config), params, Vec::new(), None, out, threads);

    let sim_dir = out.join("simulate");
    let ana_dir = out.join("analyze");
    let sim = simulate_cmd(&config, &p.simulate, &sim_dir, threads)?;
    let ana = analyze_cmd(&p.analyze, &sim_dir, &ana_dir, threads)?;
    let mut outputs: Vec<PathBuf> = sim
        .outputs
        .iter()
        .map(|d| Path::new("simulate").join(&d.path))
        .chain(ana.outputs.iter().map(|d| Path::new("analyze").join(&d.path)))
        .collect();

    let mut unconverged = None;
    if config.n_stages > 0 {
        let mode = if p.two_bandwidth {
            BandwidthMode::TwoStage
        } else {
            BandwidthMode::Shared { n_stages: config.n_stages }
        };
        for (direction, model) in PIPELINE_FITS {
            let name = format!("fit_{}.json", direction.name());
            let fp = FitParams {
                model,
                mode,
                max_iterations: p.max_iterations,
            };
            println!("fit {} ({}):", direction.name(), serde_json::to_value(model).expect("model").as_str().unwrap_or(""));
            let (_, fit) = fit_cmd(&fp, &ana_dir.join(slice_file(direction)), &out.join(&name), threads)?;
            outputs.push(PathBuf::from(&name));
            if !fit.converged && unconverged.is_none() {
                unconverged = Some(fit);
            }
        }
    } else {
        println!("coherent light (no stages): slice fits skipped");
    }
    let manifest = draft.finish(out, &outputs, &out.join(MANIFEST))?;
    match unconverged {
        Some(fit) => Err(fit_failure(&fit)),
        None => Ok(manifest),
    }
}

// ---------------------------------------------------------------- replay

fn params<T: for<'de> Deserialize<'de>>(m: &Manifest) -> Outcome<T> {
    serde_json::from_value(m.parameters.clone()).code(VALIDATION, "manifest parameters")
}

fn require_config(m: &Manifest) -> Outcome<&SourceConfig> {
    m.config
        .as_ref()
        .ok_or_else(|| Failure::msg(VALIDATION, format!("{} manifest has no config", m.command)))
}

fn require_input(m: &Manifest) -> Outcome<&Path> {
    m.input
        .as_deref()
        .ok_or_else(|| Failure::msg(VALIDATION, format!("{} manifest has no input", m.command)))
}

/// Re-runs the command recorded in `m`, writing to `out` (default: the
/// recorded output location), and reports whether every output matches.
pub fn replay(m: &Manifest, out: Option<&Path>, threads: usize) -> Outcome<Manifest> {
    let out = out.unwrap_or(&m.out);
    for d in &m.inputs {
        let now = sha256_file(&d.path)?;
        if now != d.sha256 {
            return Err(Failure::msg(ANALYSIS, format!("input {} changed since the recorded run", d.path.display())));
        }
    }
    let fresh = match m.command.as_str() {
        "theory" => theory(&params(m)?, out, threads)?,
        "simulate" => simulate_cmd(require_config(m)?, &params(m)?, out, threads)?,
        "analyze" => analyze_cmd(&params(m)?, require_input(m)?, out, threads)?,
        "fit" => {
            let (manifest, fit) = fit_cmd(&params(m)?, require_input(m)?, out, threads)?;
            if !fit.converged {
                return Err(fit_failure(&fit));
            }
            manifest
        }
        "pipeline" => pipeline(require_config(m)?, &params(m)?, out, threads)?,
        other => return Err(Failure::msg(VALIDATION, format!("unknown command '{other}' in manifest"))),
    };
    if fresh.hash != m.hash {
        return Err(Failure::msg(
            ANALYSIS,
            format!("replayed hash {} differs from recorded {}", fresh.hash, m.hash),
        ));
    }
    // outputs are compared in recorded order by content; a fit may be replayed under another name
    let differing: Vec<String> = m
        .outputs
        .iter()
        .zip(fresh.outputs.iter().map(Some).chain(std::iter::repeat(None)))
        .filter(|(old, new)| new.is_none_or(|n| n.sha256 != old.sha256))
        .map(|(old, _)| old.path.display().to_string())
        .collect();
    if !differing.is_empty() || fresh.outputs.len() != m.outputs.len() {
        return Err(Failure::msg(ANALYSIS, format!("outputs differ from the recorded run: {}", differing.join(", "))));
    }
    println!("reproduced {} output(s), manifest hash {}", fresh.outputs.len(), fresh.hash);
    Ok(fresh)
}
