use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use haemocam::io::{
    self as hio, read_cube, read_map, read_mask, read_ppm, write_cube, write_map, write_ppm,
};
use haemocam::metrics::{concentration_mse, write_records_csv, MetricsRecord};
use haemocam::synth::{pulse_sequence, render_phantom, PhantomSpec, PulseParams};
use haemocam::timeseries::{dominant_frequency, patch_mean, write_trace, Rect};
use haemocam::{
    fixtures, BayesConfig, CameraSensitivity, ChromophoreBasis, Exec, Mode, Pipeline,
    PipelineConfig, RgbImage, WavelengthGrid,
};
use serde::Serialize;

mod config;

use config::{parse_grid, parse_pair, pick, Defaults, FileConfig};

/// Haemoglobin maps from RGB frames: Haar-domain hybrid spectral estimation.
#[derive(Parser, Debug)]
#[command(name = "haemocam", version, about)]
struct Cli {
    /// Worker threads; 1 runs everything sequentially and deterministically
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Wavelength grid as start,step,count in nm [default: 450,10,26]
    #[arg(long, global = true)]
    grid: Option<String>,
    /// TOML file with defaults for any flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic phantoms
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Estimate concentration maps from RGB frames
    Estimate(EstimateArgs),
    /// Fit concentrations directly from a spectral cube
    Reference(ReferenceArgs),
    /// Concentration error between two maps
    Compare(CompareArgs),
    /// Dominant frequency of the THb patch mean over a map sequence
    Pulse(PulseArgs),
    /// Frames per second of each estimator
    Bench(BenchArgs),
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Single tissue phantom: spectral cube, truth map and RGB frame
    Phantom(PhantomArgs),
    /// Pulsating phantom written as a numbered frame sequence
    Pulse(SynthPulseArgs),
}

#[derive(Args, Debug, Default)]
struct OperatorArgs {
    /// Camera sensitivity CSV (wavelength_nm,red,green,blue); built-in fixture if omitted
    #[arg(long)]
    sensitivity: Option<PathBuf>,
    /// Chromophore CSV (wavelength_nm,hbo,hb); built-in fixture if omitted
    #[arg(long)]
    basis: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// TOML phantom description; a random tissue phantom if omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian noise on reflectance samples
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    exposure: Option<f64>,
    #[arg(long)]
    out_cube: PathBuf,
    #[arg(long)]
    out_truth: PathBuf,
    #[arg(long)]
    out_rgb: PathBuf,
    #[command(flatten)]
    ops: OperatorArgs,
}

#[derive(Args, Debug)]
struct SynthPulseArgs {
    #[arg(long)]
    fps: Option<f64>,
    /// Sequence length in seconds
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Pulse frequency
    #[arg(long, default_value_t = 1.25)]
    hz: f64,
    /// Fractional THb modulation
    #[arg(long, default_value_t = 0.05)]
    amplitude: f64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    ops: OperatorArgs,
}

#[derive(Args, Debug)]
struct EstimatorArgs {
    /// hybrid | tikhonov | bayes
    #[arg(long)]
    mode: Option<Mode>,
    /// Haar levels of the hybrid estimator
    #[arg(long)]
    levels: Option<usize>,
    /// Relative Tikhonov weight
    #[arg(long)]
    gamma: Option<f64>,
    /// Shape-prior weight
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Floor applied before taking logarithms
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// PPM frame or glob pattern
    #[arg(long = "in")]
    input: String,
    /// Output map; a directory when the input matches several frames
    #[arg(long)]
    out_map: PathBuf,
    /// Optional estimated spectral cube (single frame only)
    #[arg(long)]
    out_cube: Option<PathBuf>,
    #[command(flatten)]
    est: EstimatorArgs,
    #[command(flatten)]
    ops: OperatorArgs,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[arg(long)]
    in_cube: PathBuf,
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long)]
    out_map: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// PPM whose non-zero pixels select the compared region
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PulseArgs {
    /// Glob of concentration maps, processed in lexical order
    #[arg(long)]
    maps: String,
    /// Patch as x,y,w,h; whole frame if omitted
    #[arg(long)]
    rect: Option<Rect>,
    #[arg(long)]
    fps: Option<f64>,
    /// Search band in Hz as lo,hi
    #[arg(long)]
    band: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// PPM frame or glob pattern
    #[arg(long = "in")]
    input: String,
    /// Comma-separated mode:levels list
    #[arg(long, default_value = "hybrid:1,hybrid:3,tikhonov:1,bayes:1")]
    modes: String,
    #[arg(long)]
    repeat: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    est: EstimatorArgs,
    #[command(flatten)]
    ops: OperatorArgs,
}

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<haemocam::Error>() {
            return match e {
                haemocam::Error::Argument(_) => 2,
                e if e.is_numerical() => 4,
                _ => 3,
            };
        }
    }
    3
}

/// Settings shared by every subcommand once flags and config are merged.
struct Context_ {
    file: FileConfig,
    grid: WavelengthGrid,
    exec: Exec,
}

impl Context_ {
    fn sensitivity(&self, ops: &OperatorArgs) -> anyhow::Result<CameraSensitivity> {
        match ops
            .sensitivity
            .clone()
            .or(self.file.sensitivity.clone().map(PathBuf::from))
        {
            Some(p) => hio::load_sensitivity(&p, self.grid)
                .with_context(|| format!("loading {}", p.display())),
            None => Ok(fixtures::camera_sensitivity(self.grid)?),
        }
    }

    fn basis(&self, path: Option<&Path>) -> anyhow::Result<ChromophoreBasis> {
        match path
            .map(Path::to_path_buf)
            .or(self.file.basis.clone().map(PathBuf::from))
        {
            Some(p) => {
                hio::load_basis(&p, self.grid).with_context(|| format!("loading {}", p.display()))
            }
            None => Ok(fixtures::chromophore_basis(self.grid)?),
        }
    }

    fn pipeline_config(&self, a: &EstimatorArgs) -> PipelineConfig {
        let f = &self.file;
        let d = Defaults::bayes();
        PipelineConfig {
            n_levels: pick(a.levels, f.levels, Defaults::LEVELS),
            tikhonov_gamma: pick(a.gamma, f.gamma, Defaults::GAMMA),
            bayes: BayesConfig {
                beta: pick(a.beta, f.beta, d.beta),
                max_iters: pick(a.iters, f.iters, d.max_iters),
                rel_tol: pick(a.tol, f.tol, d.rel_tol),
                epsilon: pick(a.epsilon, f.epsilon, d.epsilon),
            },
            mode: pick(a.mode, f.mode, Defaults::mode()),
            exec: self.exec,
        }
    }
}

fn print_config<T: Serialize>(command: &str, cfg: &T) {
    match toml::to_string(cfg) {
        Ok(s) => {
            println!("# {command} effective config");
            for line in s.lines() {
                println!("#   {line}");
            }
        }
        Err(e) => eprintln!("warning: cannot print config: {e}"),
    }
}

fn expand(pattern: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| usage(format!("bad glob `{pattern}`: {e}")))?
        .collect::<Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!(usage(format!("no files match `{pattern}`")));
    }
    Ok(paths)
}

fn load_frame(path: &Path) -> anyhow::Result<RgbImage> {
    read_ppm(hio::open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let grid = parse_grid(&pick(
        cli.grid.clone(),
        file.grid.clone(),
        Defaults::GRID.to_string(),
    ))?;
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            bail!(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let exec = if threads == Some(1) {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let ctx = Context_ { file, grid, exec };

    match cli.command {
        Command::Synth(SynthCommand::Phantom(a)) => synth_phantom(&ctx, a),
        Command::Synth(SynthCommand::Pulse(a)) => synth_pulse(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
        Command::Reference(a) => reference(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Pulse(a) => pulse(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
    }
}

fn synth_phantom(ctx: &Context_, a: PhantomArgs) -> anyhow::Result<()> {
    let f = &ctx.file;
    let seed = pick(a.seed, f.seed, 0);
    let noise = pick(a.noise, f.noise, 0.0);
    let mut spec = match &a.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<PhantomSpec>(&text)
                .map_err(|e| usage(format!("phantom spec {}: {e}", p.display())))?
        }
        None => PhantomSpec::tissue(a.height, a.width, seed, noise),
    };
    if a.seed.is_some() || f.seed.is_some() {
        spec.seed = seed;
    }
    if a.noise.is_some() || f.noise.is_some() {
        spec.noise_sigma = noise;
    }
    let exposure = pick(a.exposure, f.exposure, Defaults::EXPOSURE);
    #[derive(Serialize)]
    struct Shown {
        height: usize,
        width: usize,
        seed: u64,
        noise: f64,
        exposure: f64,
        blobs: usize,
    }
    print_config(
        "synth phantom",
        &Shown {
            height: spec.height,
            width: spec.width,
            seed: spec.seed,
            noise: spec.noise_sigma,
            exposure,
            blobs: spec.blobs.len(),
        },
    );
    let camera = ctx.sensitivity(&a.ops)?;
    let basis = ctx.basis(a.ops.basis.as_deref())?;
    let ph = render_phantom(&spec, &camera, &basis, exposure, ctx.exec)?;
    hio::save(&a.out_cube, |w| write_cube(w, &ph.cube))?;
    hio::save(&a.out_truth, |w| write_map(w, &ph.truth))?;
    let mut scale = 0.0;
    hio::save(&a.out_rgb, |w| {
        scale = write_ppm(w, &ph.rgb)?;
        Ok(())
    })?;
    println!(
        "wrote {} ({}x{}x{}), {}, {} (scale {scale:e})",
        a.out_cube.display(),
        spec.height,
        spec.width,
        ph.cube.bands(),
        a.out_truth.display(),
        a.out_rgb.display()
    );
    Ok(())
}

fn synth_pulse(ctx: &Context_, a: SynthPulseArgs) -> anyhow::Result<()> {
    let f = &ctx.file;
    let params = PulseParams {
        fps: pick(a.fps, f.fps, Defaults::FPS),
        duration_s: a.duration,
        pulse_hz: a.hz,
        amplitude: a.amplitude,
    };
    let seed = pick(a.seed, f.seed, 0);
    let noise = pick(a.noise, f.noise, 0.0);
    print_config(
        "synth pulse",
        &(params, [("seed", seed as f64), ("noise", noise)]),
    );
    let camera = ctx.sensitivity(&a.ops)?;
    let basis = ctx.basis(a.ops.basis.as_deref())?;
    let spec = PhantomSpec::tissue(a.height, a.width, seed, noise);
    let frames = pulse_sequence(&spec, &camera, &basis, params, ctx.exec)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let n = frames.len();
    for (i, frame) in frames.enumerate() {
        let path = a.out_dir.join(format!("frame_{i:05}.ppm"));
        hio::save(&path, |w| write_ppm(w, &frame).map(|_| ()))?;
    }
    println!("wrote {n} frames to {}", a.out_dir.display());
    Ok(())
}

fn estimate(ctx: &Context_, a: EstimateArgs) -> anyhow::Result<()> {
    let cfg = ctx.pipeline_config(&a.est);
    print_config("estimate", &cfg);
    let paths = expand(&a.input)?;
    let many = paths.len() > 1;
    if many && a.out_cube.is_some() {
        bail!(usage("--out-cube needs a single input frame"));
    }
    if many {
        std::fs::create_dir_all(&a.out_map)
            .with_context(|| format!("creating {}", a.out_map.display()))?;
    }
    let camera = ctx.sensitivity(&a.ops)?;
    let basis = ctx.basis(a.ops.basis.as_deref())?;
    let pipeline = Pipeline::new(&camera, &basis, cfg)?;

    let frames = paths.iter().map(|p| load_frame(p));
    let mut loaded = Vec::with_capacity(paths.len());
    for f in frames {
        loaded.push(f?);
    }
    for (path, result) in paths.iter().zip(pipeline.estimate_sequence(loaded)) {
        let est = result.with_context(|| format!("estimating {}", path.display()))?;
        let out = if many {
            a.out_map
                .join(path.file_stem().unwrap_or_default())
                .with_extension("spc")
        } else {
            a.out_map.clone()
        };
        hio::save(&out, |w| write_map(w, &est.map))?;
        if let Some(cube_path) = &a.out_cube {
            hio::save(cube_path, |w| write_cube(w, &est.cube))?;
        }
        let thb = est.map.thb();
        let valid: Vec<f64> = thb.iter().copied().filter(|v| v.is_finite()).collect();
        let mean = valid.iter().sum::<f64>() / valid.len().max(1) as f64;
        println!(
            "{} -> {}: mean THb {mean:.3} g/L, {} Bayes + {} Tikhonov coefficients, {:.3} s",
            path.display(),
            out.display(),
            est.stats.bayes_coefficients,
            est.stats.tikhonov_coefficients,
            est.stats.elapsed.as_secs_f64()
        );
    }
    Ok(())
}

fn reference(ctx: &Context_, a: ReferenceArgs) -> anyhow::Result<()> {
    let cube = read_cube(hio::open(&a.in_cube)?)
        .with_context(|| format!("reading {}", a.in_cube.display()))?;
    // the cube carries its own grid; tables are resampled onto it
    let ctx = Context_ {
        grid: *cube.grid(),
        file: ctx.file.clone(),
        exec: ctx.exec,
    };
    print_config("reference", &ctx.grid);
    let basis = ctx.basis(a.basis.as_deref())?;
    let camera = fixtures::camera_sensitivity(ctx.grid)?;
    let cfg = PipelineConfig {
        mode: Mode::DirectMsi,
        exec: ctx.exec,
        ..Default::default()
    };
    let map = Pipeline::new(&camera, &basis, cfg)?.estimate_msi(&cube)?;
    hio::save(&a.out_map, |w| write_map(w, &map))?;
    println!(
        "wrote {} ({}x{})",
        a.out_map.display(),
        map.height(),
        map.width()
    );
    Ok(())
}

fn compare(ctx: &Context_, a: CompareArgs) -> anyhow::Result<()> {
    let est =
        read_map(hio::open(&a.est)?).with_context(|| format!("reading {}", a.est.display()))?;
    let reference = read_map(hio::open(&a.reference)?)
        .with_context(|| format!("reading {}", a.reference.display()))?;
    let mask = match &a.mask {
        Some(p) => {
            let (h, w, m) =
                read_mask(hio::open(p)?).with_context(|| format!("reading {}", p.display()))?;
            if (h, w) != (est.height(), est.width()) {
                bail!(usage(format!(
                    "mask is {h}x{w}, maps are {}x{}",
                    est.height(),
                    est.width()
                )));
            }
            Some(m)
        }
        None => None,
    };
    let report = concentration_mse(&est, &reference, mask.as_deref(), ctx.exec)?;
    println!(
        "rmse {:.6} mse {:.6} mse_hbo {:.6} mse_hb {:.6} pixels {}",
        report.rmse, report.mse, report.mse_hbo, report.mse_hb, report.pixels
    );
    if let Some(out) = &a.report {
        let method = a
            .est
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let record = MetricsRecord::new(method, 0, &report, f64::NAN);
        hio::save(out, |w| write_records_csv(w, &[record]))?;
    }
    Ok(())
}

fn pulse(ctx: &Context_, a: PulseArgs) -> anyhow::Result<()> {
    let f = &ctx.file;
    let fps = pick(a.fps, f.fps, Defaults::FPS);
    let band = parse_pair(
        &pick(a.band.clone(), f.band.clone(), Defaults::BAND.to_string()),
        "band",
    )?;
    print_config(
        "pulse",
        &[("fps", fps), ("band_lo_hz", band.0), ("band_hi_hz", band.1)],
    );
    let paths = expand(&a.maps)?;
    let mut maps = Vec::with_capacity(paths.len());
    for p in &paths {
        maps.push(read_map(hio::open(p)?).with_context(|| format!("reading {}", p.display()))?);
    }
    let rect = a
        .rect
        .unwrap_or_else(|| Rect::new(0, 0, maps[0].width(), maps[0].height()));
    let trace = patch_mean(&maps, rect, fps)?;
    if let Some(out) = &a.out {
        hio::save(out, |w| write_trace(w, &trace))?;
    }
    let peak = dominant_frequency(&trace, band)?;
    println!("peak_hz {:.4}", peak.peak_hz);
    println!("power_fraction {:.4}", peak.power_fraction);
    println!("bpm {:.2}", peak.bpm());
    Ok(())
}

fn parse_modes(s: &str) -> anyhow::Result<Vec<(Mode, usize)>> {
    s.split(',')
        .map(|item| {
            let (mode, levels) = item.trim().split_once(':').unwrap_or((item.trim(), "1"));
            let mode: Mode = mode.parse().map_err(|e| usage(format!("{e}")))?;
            let levels = levels
                .parse()
                .map_err(|_| usage(format!("bad level count in `{item}`")))?;
            Ok((mode, levels))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench(ctx: &Context_, a: BenchArgs) -> anyhow::Result<()> {
    let repeat = pick(a.repeat, ctx.file.repeat, Defaults::REPEAT);
    if repeat == 0 {
        bail!(usage("--repeat must be at least 1"));
    }
    let modes = parse_modes(&a.modes)?;
    let base = ctx.pipeline_config(&a.est);
    print_config("bench", &base);
    let camera = ctx.sensitivity(&a.ops)?;
    let basis = ctx.basis(a.ops.basis.as_deref())?;
    let frames: Vec<RgbImage> = expand(&a.input)?
        .iter()
        .map(|p| load_frame(p))
        .collect::<anyhow::Result<_>>()?;

    let mut rows = Vec::new();
    for (mode, levels) in modes {
        let pipeline = Pipeline::new(
            &camera,
            &basis,
            PipelineConfig {
                mode,
                n_levels: levels,
                ..base
            },
        )?;
        let mut rates = Vec::with_capacity(repeat);
        for _ in 0..repeat {
            let mut total = Duration::ZERO;
            for frame in &frames {
                // elapsed covers decomposition, estimation and recomposition
                total += pipeline.estimate_frame(frame)?.stats.elapsed;
            }
            rates.push(frames.len() as f64 / total.as_secs_f64().max(1e-12));
        }
        let fps = median(rates);
        println!("{:<10} levels {levels}  {fps:>10.3} frames/s", mode.name());
        rows.push((mode, levels, fps));
    }
    if let Some(out) = &a.report {
        hio::save(out, |w| {
            use std::io::Write;
            writeln!(w, "method,n_levels,frames_per_sec,frames,repeat")?;
            for (mode, levels, fps) in &rows {
                writeln!(
                    w,
                    "{},{levels},{fps},{},{repeat}",
                    mode.name(),
                    frames.len()
                )?;
            }
            Ok(())
        })?;
    }
    Ok(())
}
