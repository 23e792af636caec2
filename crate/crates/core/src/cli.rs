//! Command-line interface. `run` parses arguments, executes one command and
//! returns the process exit code: 0 success, 1 threshold failure, 2 input or
//! parse error, 3 IO error.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::camera::{CameraIntrinsics, ViewPose};
use crate::error::{Error, Result};
use crate::grad::{run_gradcheck, GradcheckConfig};
use crate::image::{encode_buf1, write_atomic, write_image};
use crate::raster::{render, AttributeMode, ComposeMode, RenderSettings, DEFAULT_BAND, DEFAULT_LAMBDA_SLOPE};
use crate::scene::{build_topology, read_scene, write_scene, SceneRepresentation};
use crate::trainer::nn::OptimizerKind;
use crate::trainer::{
    evaluate_iou, fit_scene, load_dataset, make_synthetic, read_checkpoint, read_manifest, sample_generator, train_toy_gan, FitOptions,
    FitView, SyntheticOptions, ToyGenerator, TrainConfig, ViewpointDistribution, CANONICAL_YAWS, MANIFEST_NAME,
};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "SOFTMESH_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "softmesh", version, about = "Differentiable mesh renderer and toy 3D-aware GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render an SCN1 scene to PPM (or PNG by extension).
    Render(RenderArgs),
    /// Compare analytic gradients with central differences on random scenes.
    Gradcheck(GradcheckArgs),
    /// Fit a sphere (or a given scene) to renders of a target scene.
    Fit(FitArgs),
    /// Train the toy generator on a directory of images.
    Train(TrainArgs),
    /// Render a grid of generator samples from a checkpoint.
    Sample(SampleArgs),
    /// Write a synthetic dataset of textured ellipsoids with a manifest.
    MakeSynthetic(SyntheticArgs),
    /// Write an SCN1 sphere scene.
    InitScene(InitSceneArgs),
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Input scene (SCN1).
    scene: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Rotation about the vertical axis, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    yaw: f64,
    /// Rotation about the horizontal axis, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pitch: f64,
    /// Background crop offset `x,y`; defaults to the centered window.
    #[arg(long, value_parser = parse_pair)]
    crop: Option<(usize, usize)>,
    /// Soft band width in pixels.
    #[arg(long, default_value_t = DEFAULT_BAND)]
    b: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_SLOPE)]
    lambda_slope: f64,
    /// Output side in pixels; defaults to the scene's N.
    #[arg(long)]
    res: Option<usize>,
    /// Interpolate UV coordinates and sample the texture per pixel (default).
    #[arg(long, conflicts_with = "direct")]
    uv: bool,
    /// Interpolate per-vertex colors.
    #[arg(long)]
    direct: bool,
    /// Disable the soft pass.
    #[arg(long)]
    crisp: bool,
    /// Use the non-nested compositing rule.
    #[arg(long)]
    literal_compose: bool,
    /// Write `<prefix>.depth.buf1`, `<prefix>.alpha_c.buf1`, `<prefix>.alpha_s.buf1`.
    #[arg(long, value_name = "PREFIX")]
    dump_buffers: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 32)]
    res: usize,
    /// Vertex step; color steps are a tenth of it.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Fit settings, `key=value` per line (see `FitConfig`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene whose renders are the targets.
    #[arg(long)]
    target: PathBuf,
    /// Starting scene; defaults to a gray sphere.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Fitted scene output.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// Render of the fitted scene at the first view.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of square training images.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the config's steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of samples scored against the manifest silhouettes, when the
    /// data directory has a manifest.
    #[arg(long, default_value_t = 64)]
    eval_samples: usize,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Comma-separated yaw angles in degrees; defaults to -90,-45,0,45,90.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    yaws: Vec<f64>,
    /// Omit the normal, texture and background panels.
    #[arg(long)]
    no_panels: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 16)]
    res: usize,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 45.0)]
    yaw_range: f64,
    #[arg(long, default_value_t = 15.0)]
    pitch_range: f64,
}

#[derive(Args, Debug)]
struct InitSceneArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    res: usize,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Object color `r,g,b` in [0, 1].
    #[arg(long, value_parser = parse_rgb, default_value = "0.8,0.5,0.3")]
    color: [f64; 3],
    #[arg(long, value_parser = parse_rgb, default_value = "0.2,0.3,0.4")]
    background: [f64; 3],
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected x,y")?;
    Ok((a.trim().parse().map_err(|_| "bad x")?, b.trim().parse().map_err(|_| "bad y")?))
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected r,g,b".to_string())
}

/// Settings of the `fit` command.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub options: FitOptions,
    /// Target viewpoints as (yaw, pitch) in degrees, rendered with a centered crop.
    pub views: Vec<(f64, f64)>,
    /// Radius of the default starting sphere.
    pub init_radius: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { options: FitOptions::default(), views: vec![(0.0, 0.0), (35.0, 10.0), (-35.0, -10.0)], init_radius: 0.6 }
    }
}

impl FitConfig {
    /// `key=value` lines with `#` comments. Keys: steps, lr_shape, lr_color,
    /// levels, optimizer, b, lambda_slope, soft, init_radius and
    /// views (`yaw,pitch;yaw,pitch;...`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value, got {raw:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad value {v:?} for {k}")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Parse(format!("bad value {v:?} for {k}")));
            let o = &mut c.options;
            match k {
                "steps" => o.steps = int(v)?,
                "lr_shape" => o.lr_shape = num(v)?,
                "lr_color" => o.lr_color = num(v)?,
                "levels" => o.levels = int(v)?,
                "optimizer" => o.optimizer = v.parse::<OptimizerKind>()?,
                "b" => o.settings.band = num(v)?,
                "lambda_slope" => o.settings.lambda_slope = num(v)?,
                "soft" => o.settings.soft = v.parse().map_err(|_| Error::Parse(format!("bad value {v:?} for soft")))?,
                "init_radius" => c.init_radius = num(v)?,
                "views" => {
                    c.views = v
                        .split(';')
                        .filter(|p| !p.trim().is_empty())
                        .map(|p| {
                            let (y, q) = p.split_once(',').ok_or_else(|| Error::Parse(format!("bad view {p:?}")))?;
                            Ok((num(y.trim())?, num(q.trim())?))
                        })
                        .collect::<Result<_>>()?;
                }
                _ => return Err(Error::Parse(format!("unknown fit key {k:?}"))),
            }
        }
        if c.views.is_empty() {
            return Err(Error::InvalidArgument("fit needs at least one view".into()));
        }
        Ok(c)
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Divergence(_) => EXIT_THRESHOLD,
        Error::InvalidArgument(_) | Error::DegenerateInput(_) | Error::Parse(_) => EXIT_INPUT,
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// human-readable output to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_INPUT;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Render(a) => cmd_render(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Sample(a) => cmd_sample(&a, out),
        Command::MakeSynthetic(a) => cmd_make_synthetic(&a, out),
        Command::InitScene(a) => cmd_init_scene(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} not found", path.display()))))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("directory {} not found", path.display()))))
    }
}

/// Opens a run log for appending.
fn open_log(path: &Path) -> Result<std::fs::File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

fn buffer_path(prefix: &Path, name: &str) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(format!(".{name}.buf1"));
    PathBuf::from(p)
}

fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> Result<i32> {
    require_file(&a.scene)?;
    let scene = read_scene(&a.scene)?;
    let n = scene.n();
    let res = a.res.unwrap_or(n);
    if res == 0 || res > 2 * n {
        return Err(Error::InvalidArgument(format!("--res must be in 1..={} for this scene", 2 * n)));
    }
    let crop = a.crop.unwrap_or(((2 * n - res) / 2, (2 * n - res) / 2));
    let settings = RenderSettings {
        band: a.b,
        lambda_slope: a.lambda_slope,
        attributes: if a.direct { AttributeMode::Direct } else { AttributeMode::Uv },
        soft: !a.crisp,
        compose: if a.literal_compose { ComposeMode::Literal } else { ComposeMode::Nested },
    };
    let pose = ViewPose::from_degrees(a.yaw, a.pitch)?;
    let intrinsics = CameraIntrinsics::new(crate::camera::DEFAULT_CAMERA_DISTANCE, res)?;
    let topology = build_topology(n)?;
    let output = render(&scene, &topology, &pose, crop, &intrinsics, &settings)?;
    write_image(&a.out, &output.color)?;
    if let Some(prefix) = &a.dump_buffers {
        write_atomic(&buffer_path(prefix, "depth"), &encode_buf1(&output.depth_image()))?;
        write_atomic(&buffer_path(prefix, "alpha_c"), &encode_buf1(&output.crisp_alpha_image()))?;
        write_atomic(&buffer_path(prefix, "alpha_s"), &encode_buf1(&output.soft_alpha_image()))?;
    }
    writeln!(out, "wrote {} ({res}x{res})", a.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = GradcheckConfig { seed: a.seed, trials: a.trials, res: a.res, eps: a.eps, tolerance: a.tolerance };
    let report = run_gradcheck(&cfg)?;
    let text = report.to_text();
    if let Some(path) = &a.report {
        write_atomic(path, text.as_bytes())?;
    }
    write!(out, "{text}")?;
    Ok(if report.ok() { EXIT_OK } else { EXIT_THRESHOLD })
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<i32> {
    require_file(&a.target)?;
    let cfg = match &a.config {
        Some(p) => {
            require_file(p)?;
            FitConfig::parse(&std::fs::read_to_string(p)?)?
        }
        None => FitConfig::default(),
    };
    if let Some(p) = &a.init {
        require_file(p)?;
    }
    let target = read_scene(&a.target)?;
    let n = target.n();
    let init = match &a.init {
        Some(p) => read_scene(p)?,
        None => SceneRepresentation::sphere(n, cfg.init_radius, [0.5; 3], [0.5; 3])?,
    };
    if init.n() != n {
        return Err(Error::InvalidArgument(format!("init scene has N={}, target has N={n}", init.n())));
    }
    let topology = build_topology(n)?;
    let intrinsics = CameraIntrinsics::for_side(n);
    let views: Vec<FitView> = cfg
        .views
        .iter()
        .map(|&(y, p)| {
            let pose = ViewPose::from_degrees(y, p)?;
            let crop = (n / 2, n / 2);
            let target = render(&target, &topology, &pose, crop, &intrinsics, &cfg.options.settings)?.color;
            Ok(FitView { pose, crop_offset: crop, target })
        })
        .collect::<Result<_>>()?;
    let mut log = open_log(&a.log)?;
    let result = fit_scene(&views, &init, &cfg.options, Some(&mut log))?;
    let (first, last) = (result.losses[0], *result.losses.last().unwrap());
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    let summary = format!("initial_loss {first:.9e} final_loss {last:.9e} ratio {ratio:.6e}");
    writeln!(log, "{summary}")?;
    write_scene(&a.out, &result.scene)?;
    if let Some(path) = &a.render {
        let v = &views[0];
        write_image(path, &render(&result.scene, &topology, &v.pose, v.crop_offset, &intrinsics, &cfg.options.settings)?.color)?;
    }
    writeln!(out, "{summary}")?;
    Ok(EXIT_OK)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    require_file(&a.config)?;
    require_dir(&a.data)?;
    let mut config = TrainConfig::parse(&std::fs::read_to_string(&a.config)?)?;
    if let Some(s) = a.steps {
        config.steps = s;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let dataset = load_dataset(&a.data)?;
    let mut log = open_log(&a.log)?;
    let outcome = train_toy_gan(&dataset, &config, &mut log, Some(&a.checkpoint))?;
    writeln!(out, "trained {} steps: loss_d {:.6} loss_g {:.6}", config.steps, outcome.final_loss_d, outcome.final_loss_g)?;
    if a.eval_samples > 0 && a.data.join(MANIFEST_NAME).is_file() {
        let masks: Vec<Vec<bool>> = read_manifest(&a.data)?.into_iter().map(|e| e.mask).collect();
        let mut ious = evaluate_iou(&outcome.generator, &masks, a.eval_samples, config.seed)?;
        ious.sort_by(f64::total_cmp);
        let median = ious[ious.len() / 2];
        let line = format!("median_iou {median:.6} over {} samples", ious.len());
        writeln!(log, "{line}")?;
        writeln!(out, "{line}")?;
    }
    Ok(EXIT_OK)
}

fn cmd_sample(a: &SampleArgs, out: &mut dyn Write) -> Result<i32> {
    require_file(&a.checkpoint)?;
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let g = ToyGenerator::from_checkpoint(&ckpt)?;
    let yaws = if a.yaws.is_empty() { CANONICAL_YAWS.to_vec() } else { a.yaws.clone() };
    let grid = sample_generator(&g, a.count, &yaws, !a.no_panels, a.seed)?;
    write_image(&a.out, &grid.image)?;
    let line = format!("sample count {} views {} grid {}x{}", a.count, yaws.len(), grid.image.width, grid.image.height);
    if let Some(path) = &a.log {
        writeln!(open_log(path)?, "{line}")?;
    }
    writeln!(out, "{line}")?;
    Ok(EXIT_OK)
}

fn cmd_make_synthetic(a: &SyntheticArgs, out: &mut dyn Write) -> Result<i32> {
    let opts = SyntheticOptions {
        count: a.count,
        n: a.res,
        seed: a.seed,
        viewpoints: ViewpointDistribution::new(a.yaw_range, a.pitch_range)?,
        ..Default::default()
    };
    let entries = make_synthetic(&a.out, &opts)?;
    writeln!(out, "wrote {} images to {}", entries.len(), a.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_init_scene(a: &InitSceneArgs, out: &mut dyn Write) -> Result<i32> {
    let scene = SceneRepresentation::sphere(a.res, a.radius, a.color, a.background)?;
    write_scene(&a.out, &scene)?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(EXIT_OK)
}
