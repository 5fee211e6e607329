//! Subcommands of the `sphsplat` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use sphsplat_core::decoder::GaussianSet;
use sphsplat_core::frame::FramePacket;
use sphsplat_core::grid::voxelize;
use sphsplat_core::metrics::{chamfer_metrics, format_metrics, psnr, ssim};
use sphsplat_core::pipeline::{Model, PipelineError};
use sphsplat_core::render::{render_with_background, Background, ElevationProfile};
use sphsplat_core::scenegen::{ground_truth_cloud, SequenceGenerator, SyntheticScene};
use sphsplat_core::stream::{deserialize_state, serialize_state, StreamError, Streamer};

use crate::config::{BackgroundKind, ConfigError, RunConfig};
use crate::dataset::{frame_file, Dataset, DatasetError, DatasetWriter};
use crate::ply::{read_gaussians_ply, read_points_ply, write_gaussians_ply, write_points_ply, PlyError};
use crate::ppm::{read_image, write_image};
use crate::selftest;

/// Exit status of a usage error (bad arguments or configuration).
pub const EXIT_USAGE: i32 = 1;
/// Exit status of a data error (missing, malformed or unusable inputs).
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sphsplat", version, about = "Spherical-voxel Gaussian splatting for panoramic camera rigs")]
pub struct Cli {
    /// Root seed for scene layout, seeded weights and refiner init
    /// (overrides `seed` in the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence as a dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        frames: u32,
        /// Add the moving box (also enabled by `scene.with_mover`).
        #[arg(long)]
        mover: bool,
        /// Skip writing `gt_cloud.ply`.
        #[arg(long)]
        no_gt: bool,
    },
    /// Voxelize one frame and print grid statistics.
    Voxelize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: u32,
    },
    /// Decode one frame to a Gaussian PLY.
    Decode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: u32,
        #[arg(long)]
        out: PathBuf,
        /// Views to decode from (default: all).
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
    },
    /// Render a Gaussian PLY with the cameras of a dataset frame.
    Render {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: u32,
        /// Output directory; images are named like the dataset's.
        #[arg(long)]
        out: PathBuf,
        /// Views to render (default: all).
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        /// Views the elevation background is estimated from (default: the
        /// views not rendered, or all when every view is rendered).
        #[arg(long, value_delimiter = ',')]
        background_views: Vec<usize>,
    },
    /// Fuse a dataset into an RPGS stream.
    Stream {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of leading frames to ingest (default: all).
        #[arg(long)]
        frames: Option<u32>,
    },
    /// Reconstruct one frame of an RPGS stream.
    Reconstruct {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        frame: u32,
        /// Gaussian PLY of the reconstructed frame.
        #[arg(long)]
        out: PathBuf,
        /// Also render every camera of this dataset frame into `--render-dir`.
        #[arg(long, requires = "render_dir")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        render_dir: Option<PathBuf>,
    },
    /// Compare rendered images with the dataset images (PSNR, SSIM).
    EvalNvs {
        #[arg(long)]
        renders: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: u32,
        /// Views to compare (default: every view with a rendered image).
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
    },
    /// Chamfer accuracy, completeness and overall against a ground-truth cloud.
    EvalRecon {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Skip Sim(3) + ICP alignment.
        #[arg(long)]
        no_align: bool,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Write a seeded weight bundle.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        /// Feature channels of the data (default: `synth.feature_dim`).
        #[arg(long)]
        feature_dim: Option<usize>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    pub fn prefix(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "error[usage]",
            CliError::Data(_) => "error[data]",
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}
data_error!(DatasetError, PlyError, StreamError, PipelineError, sphsplat_core::metrics::MetricsError);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {e}", e.prefix());
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.stream.seed = cfg.seed;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Synth { out, frames, mover, no_gt } => synth(cfg, &out, frames, mover, !no_gt),
        Command::Voxelize { data, frame } => voxelize_cmd(cfg, &data, frame),
        Command::Decode { data, frame, out, views } => decode(cfg, &data, frame, &out, &views),
        Command::Render { ply, data, frame, out, views, background_views } => {
            render_cmd(cfg, &ply, &data, frame, &out, &views, &background_views)
        }
        Command::Stream { data, out, frames } => stream(cfg, &data, &out, frames),
        Command::Reconstruct { stream, frame, out, data, render_dir } => {
            reconstruct(cfg, &stream, frame, &out, data.as_deref().zip(render_dir.as_deref()))
        }
        Command::EvalNvs { renders, data, frame, views } => eval_nvs(&renders, &data, frame, &views),
        Command::EvalRecon { ply, gt, no_align } => eval_recon(cfg, &ply, &gt, no_align),
        Command::Selftest => {
            if selftest::run_all(cfg.seed) {
                Ok(())
            } else {
                Err(CliError::Data("selftest failed".into()))
            }
        }
        Command::InitWeights { out, feature_dim } => {
            let model = Model::seeded(cfg.model, feature_dim.unwrap_or(cfg.synth.feature_dim), cfg.seed);
            let mut bytes = Vec::new();
            model.write_weights(&mut bytes).expect("writing to memory");
            fs::write(&out, bytes).map_err(|e| io_error(&out, e))
        }
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

/// Weights from the configured bundle, or seeded from the root seed.
pub fn load_model(cfg: &RunConfig, feature_dim: usize) -> Result<Model, CliError> {
    let model = match &cfg.weights {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
            Model::read_weights(cfg.model, &mut bytes.as_slice())?
        }
        None => Model::seeded(cfg.model, feature_dim, cfg.seed),
    };
    model.check(feature_dim)?;
    Ok(model)
}

fn synth(cfg: &RunConfig, out: &Path, frames: u32, mover: bool, gt: bool) -> Result<(), CliError> {
    if frames == 0 {
        return Err(CliError::Usage("--frames must be at least 1".into()));
    }
    let mut layout = cfg.scene;
    layout.with_mover |= mover;
    let scene = SyntheticScene::open_air(cfg.seed, &layout);
    let generator =
        SequenceGenerator::new(&scene, &cfg.rig, cfg.synth, cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut writer = DatasetWriter::create(out)?;
    for f in 0..frames {
        writer.push(&generator.frame(f).0)?;
        log::info!("synth: frame {f} written");
    }
    writer.finish()?;
    if gt {
        write_points_ply(&out.join("gt_cloud.ply"), &ground_truth_cloud(&scene, cfg.eval.gt_density, cfg.seed))?;
    }
    println!("{}", format_metrics(&[("frames", frames as f64), ("cameras", cfg.rig.camera_count() as f64)]).trim_end());
    Ok(())
}

fn load_frame(data: &Path, frame: u32) -> Result<(Dataset, FramePacket), CliError> {
    let ds = Dataset::open(data)?;
    let packet = ds.load_frame(frame)?;
    Ok((ds, packet))
}

fn select_views(packet: &mut FramePacket, views: &[usize]) -> Result<(), CliError> {
    if views.is_empty() {
        return Ok(());
    }
    if let Some(v) = views.iter().find(|&&v| v >= packet.views.len()) {
        return Err(CliError::Usage(format!("view {v} does not exist ({} views)", packet.views.len())));
    }
    packet.views = views.iter().map(|&v| packet.views[v].clone()).collect();
    Ok(())
}

fn voxelize_cmd(cfg: &RunConfig, data: &Path, frame: u32) -> Result<(), CliError> {
    let (ds, packet) = load_frame(data, frame)?;
    let model = load_model(cfg, ds.meta.feature_dim)?;
    let samples = model.samples(&packet)?;
    let vox = voxelize(&samples, &cfg.model.grid);
    let cells = vox.grid.len();
    let pixels = (packet.width as usize * packet.height as usize * packet.views.len()) as f64;
    let max_members = vox.members.iter().map(Vec::len).max().unwrap_or(0);
    let mut entries = vec![
        ("pixels", pixels),
        ("samples", samples.len() as f64),
        ("dropped", vox.dropped as f64),
        ("cells", cells as f64),
        ("mean_members", samples.len().saturating_sub(vox.dropped) as f64 / cells.max(1) as f64),
        ("max_members", max_members as f64),
        ("primitives", (cells * cfg.model.decoder.gaussians_per_voxel) as f64),
    ];
    entries.push(("pixel_ratio", pixels / entries[6].1.max(1.0)));
    print!("{}", format_metrics(&entries));
    for (i, (c, n)) in vox.grid.shell_histogram().into_iter().enumerate().filter(|(_, (c, _))| *c > 0) {
        println!("shell {i} r={:.2} cells={c} points={n}", cfg.model.grid.shell_center(i as u32));
    }
    Ok(())
}

fn decode(cfg: &RunConfig, data: &Path, frame: u32, out: &Path, views: &[usize]) -> Result<(), CliError> {
    let (ds, mut packet) = load_frame(data, frame)?;
    select_views(&mut packet, views)?;
    let model = load_model(cfg, ds.meta.feature_dim)?;
    let decoded = model.decode_frame(&packet)?;
    write_gaussians_ply(out, &decoded.set)?;
    print!("{}", format_metrics(&[("cells", decoded.anchors.grid.len() as f64), ("primitives", decoded.set.len() as f64)]));
    Ok(())
}

fn background(cfg: &RunConfig, packet: &FramePacket, source: &[usize]) -> Background {
    match cfg.eval.background {
        BackgroundKind::Solid => Background::Solid(cfg.eval.background_color),
        BackgroundKind::Elevation => {
            let views: Vec<_> = source.iter().map(|&v| packet.views[v].clone()).collect();
            ElevationProfile::from_views(&views, cfg.eval.elevation_step_deg)
                .map(Background::Elevation)
                .unwrap_or(Background::Solid(cfg.eval.background_color))
        }
    }
}

fn render_views(
    cfg: &RunConfig,
    set: &GaussianSet,
    packet: &FramePacket,
    views: &[usize],
    bg: &Background,
    out: &Path,
) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    for &v in views {
        let img = render_with_background(set, &packet.views[v].camera, bg, &cfg.render);
        write_image(&frame_file(out, packet.frame_id, v, ".ppm"), &img.color)?;
    }
    Ok(())
}

fn render_cmd(
    cfg: &RunConfig,
    ply: &Path,
    data: &Path,
    frame: u32,
    out: &Path,
    views: &[usize],
    background_views: &[usize],
) -> Result<(), CliError> {
    let set = read_gaussians_ply(ply)?;
    let (_, packet) = load_frame(data, frame)?;
    let n = packet.views.len();
    let check = |list: &[usize]| match list.iter().find(|&&v| v >= n) {
        Some(v) => Err(CliError::Usage(format!("view {v} does not exist ({n} views)"))),
        None => Ok(()),
    };
    check(views)?;
    check(background_views)?;
    let views: Vec<usize> = if views.is_empty() { (0..n).collect() } else { views.to_vec() };
    let source: Vec<usize> = if !background_views.is_empty() {
        background_views.to_vec()
    } else {
        let rest: Vec<usize> = (0..n).filter(|v| !views.contains(v)).collect();
        if rest.is_empty() { (0..n).collect() } else { rest }
    };
    render_views(cfg, &set, &packet, &views, &background(cfg, &packet, &source), out)?;
    print!("{}", format_metrics(&[("rendered", views.len() as f64), ("primitives", set.len() as f64)]));
    Ok(())
}

fn stream(cfg: &RunConfig, data: &Path, out: &Path, frames: Option<u32>) -> Result<(), CliError> {
    let ds = Dataset::open(data)?;
    let count = frames.unwrap_or(ds.frame_count()).min(ds.frame_count());
    let model = load_model(cfg, ds.meta.feature_dim)?;
    let mut streamer = Streamer::new(model, cfg.stream);
    let mut decoded = Vec::with_capacity(count as usize);
    for f in 0..count {
        let report = streamer.ingest(&ds.load_frame(f)?)?;
        log::info!(
            "stream: frame {f} decoded={} dynamic={} holes={} added={} shared={}",
            report.decoded,
            report.dynamic,
            report.hole_pixels,
            report.added,
            report.shared_after
        );
        decoded.push(report.decoded);
    }
    let state = streamer.into_state();
    let bytes = serialize_state(&state)?;
    fs::write(out, &bytes).map_err(|e| io_error(out, e))?;
    let naive = sphsplat_core::stream::naive_concatenation_len(&decoded, state.shared.sh_degree);
    print!(
        "{}",
        format_metrics(&[
            ("frames", count as f64),
            ("shared", state.shared.len() as f64),
            ("dynamic_total", state.dynamic.values().map(|d| d.len()).sum::<usize>() as f64),
            ("bytes", bytes.len() as f64),
            ("naive_bytes", naive as f64),
            ("compaction", naive as f64 / bytes.len() as f64),
        ])
    );
    Ok(())
}

fn reconstruct(
    cfg: &RunConfig,
    stream: &Path,
    frame: u32,
    out: &Path,
    render: Option<(&Path, &Path)>,
) -> Result<(), CliError> {
    let bytes = fs::read(stream).map_err(|e| io_error(stream, e))?;
    let state = deserialize_state(&bytes)?;
    let r = state.reconstruct(frame, &cfg.stream.refiner)?;
    write_gaussians_ply(out, &r.merged)?;
    if let Some((data, dir)) = render {
        let (_, packet) = load_frame(data, frame)?;
        let all: Vec<usize> = (0..packet.views.len()).collect();
        render_views(cfg, &r.merged, &packet, &all, &background(cfg, &packet, &all), dir)?;
    }
    print!(
        "{}",
        format_metrics(&[("shared", r.shared.len() as f64), ("dynamic", r.dynamic.len() as f64), ("primitives", r.merged.len() as f64)])
    );
    Ok(())
}

fn eval_nvs(renders: &Path, data: &Path, frame: u32, views: &[usize]) -> Result<(), CliError> {
    let ds = Dataset::open(data)?;
    let n = ds.meta.camera_count;
    let views: Vec<usize> = if views.is_empty() {
        (0..n).filter(|&v| frame_file(renders, frame, v, ".ppm").exists()).collect()
    } else {
        views.to_vec()
    };
    if views.is_empty() {
        return Err(CliError::Data(format!("no rendered images for frame {frame} in {}", renders.display())));
    }
    let mut entries: Vec<(String, f64)> = Vec::new();
    let (mut sum_psnr, mut sum_ssim) = (0.0, 0.0);
    for &v in &views {
        if v >= n {
            return Err(CliError::Usage(format!("view {v} does not exist ({n} views)")));
        }
        let rendered = read_image(&frame_file(renders, frame, v, ".ppm"))?;
        let reference = read_image(&frame_file(data, frame, v, ".ppm"))?;
        let (p, s) = (psnr(&rendered, &reference)?, ssim(&rendered, &reference)?);
        sum_psnr += p;
        sum_ssim += s;
        entries.push((format!("psnr_cam{v}"), p));
        entries.push((format!("ssim_cam{v}"), s));
    }
    entries.push(("psnr_mean".into(), sum_psnr / views.len() as f64));
    entries.push(("ssim_mean".into(), sum_ssim / views.len() as f64));
    let refs: Vec<(&str, f64)> = entries.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    print!("{}", format_metrics(&refs));
    Ok(())
}

fn eval_recon(cfg: &RunConfig, ply: &Path, gt: &Path, no_align: bool) -> Result<(), CliError> {
    let pred = read_points_ply(ply)?;
    let truth = read_points_ply(gt)?;
    let r = chamfer_metrics(&pred, &truth, cfg.eval.align && !no_align)?;
    print!(
        "{}",
        format_metrics(&[
            ("accuracy", r.accuracy),
            ("completeness", r.completeness),
            ("overall", r.overall),
            ("scale", r.transform.scale),
        ])
    );
    Ok(())
}
