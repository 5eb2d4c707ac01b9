//! Command-line surface: argument definitions and one function per
//! subcommand. Each command writes its outputs plus `summary.json` into the
//! `--out` directory.

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, create_dir, write_summary, LoadedObject};
use crate::error::{Error, Result};
use crate::report::{self, MetricSummary};
use crate::{calib, png};
use clap::{Args, Parser, Subcommand};
use lift3d_core::compose::{compose_frame, default_shadow_sprite, ipm_drivable_map, GridSpec, ObjectBank, SampleDistributions};
use lift3d_core::eval::{evaluate_consistency, FieldRenderer, OracleRenderer, RecolorBaseline};
use lift3d_core::generator::{GeneratorParams, LatentCode};
use lift3d_core::geometry::{orbit_pose, BoxPose, CameraIntrinsics, RigidPose};
use lift3d_core::image::Image;
use lift3d_core::optim::{fit, init_latents, ObjectRecord};
use lift3d_core::oracle::gen_objects;
use lift3d_core::render::{render_image, RaySampleSpec};
use lift3d_core::rng::{Rng, Stream};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_FILE: &str = "checkpoint.l3d";
pub const LOSS_FILE: &str = "loss.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INTERP_FILE: &str = "interp.png";

#[derive(Debug, Clone, Parser)]
#[command(name = "lift3d", version, about = "Lift posed object views into a shared 3D generator and composite the results into driving frames")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Only log errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render a procedural multi-view dataset.
    GenViews(GenViewsArgs),
    /// Fit the shared generator and per-object latents to a dataset.
    Lift(LiftArgs),
    /// Insert lifted objects into background frames and write KITTI labels.
    Compose(ComposeArgs),
    /// Measure multi-view consistency by reprojection.
    Eval(EvalArgs),
    /// Render a strip interpolating between two latent codes.
    Interp(InterpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenViewsArgs {
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Image side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LiftArgs {
    /// Dataset root written by `gen-views` (or laid out the same way).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub iters: Option<u64>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ComposeArgs {
    /// Directory with `image/*.png`, `calib/<stem>.txt` and optionally
    /// `drivable/<stem>.png`.
    #[arg(long)]
    pub backgrounds: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub objects_per_frame: Option<usize>,
    /// Take label 2D boxes from the rendered mask extent.
    #[arg(long)]
    pub bbox_from_mask: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Lifted model to evaluate, one report per object.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset whose procedural objects are evaluated as exact references.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Index of the first object in the latent table.
    #[arg(long, default_value_t = 0)]
    pub a: usize,
    /// Index of the second object (default: the last one).
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenViewsSummary {
    pub command: &'static str,
    pub seed: u64,
    pub objects: Vec<String>,
    pub views_per_object: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftSummary {
    pub command: &'static str,
    pub seed: u64,
    pub objects: Vec<String>,
    pub start_step: u64,
    pub end_step: u64,
    pub iterations: u64,
    pub final_loss: Option<f64>,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposeSummary {
    pub command: &'static str,
    pub seed: u64,
    pub frames: usize,
    pub skipped: usize,
    pub placed: usize,
    pub rejected: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectMetric {
    pub id: String,
    pub source: &'static str,
    #[serde(flatten)]
    pub metric: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub command: &'static str,
    pub seed: u64,
    pub pairs: usize,
    pub reports: Vec<ObjectMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpSummary {
    pub command: &'static str,
    pub a: String,
    pub b: String,
    pub frames: usize,
    pub alphas: Vec<f64>,
}

/// Loads the config file (or defaults) and resolves the seed: the flag wins
/// over the file's top-level `seed`, which defaults to 0.
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub cli_seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let seed = cli.seed.or(config.seed).unwrap_or(0);
        create_dir(&cli.out)?;
        Ok(Context { config, seed, cli_seed: cli.seed, out: cli.out.clone() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Runs the parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::GenViews(a) => gen_views(&ctx, a).map(drop),
        Command::Lift(a) => lift(&ctx, a).map(drop),
        Command::Compose(a) => compose(&ctx, a).map(drop),
        Command::Eval(a) => eval(&ctx, a).map(drop),
        Command::Interp(a) => interp(&ctx, a).map(drop),
    }
}

pub fn gen_views(ctx: &Context, args: &GenViewsArgs) -> Result<GenViewsSummary> {
    let mut o = ctx.config.oracle.clone();
    o.objects = args.objects.unwrap_or(o.objects);
    o.views = args.views.unwrap_or(o.views);
    o.size = args.size.unwrap_or(o.size);
    if o.objects == 0 || o.views == 0 {
        return Err(Error::Usage("--objects and --views must be at least 1".into()));
    }
    let cam = o.camera()?;
    let objects = gen_objects(o.objects, &o.schedule(), &cam, ctx.seed, o.jitter())?;
    let mut ids = Vec::with_capacity(objects.len());
    for (i, obj) in objects.iter().enumerate() {
        let id = dataset::object_id(i);
        dataset::write_object(&ctx.out, &id, obj, &cam)?;
        ids.push(id);
    }
    log::info!("wrote {} objects x {} views to {}", ids.len(), o.views, ctx.out.display());
    let summary = GenViewsSummary { command: "gen-views", seed: ctx.seed, objects: ids, views_per_object: o.views, width: cam.width, height: cam.height };
    write_summary(&ctx.path(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn records(objects: &[LoadedObject], latents: &[LatentCode]) -> Vec<ObjectRecord> {
    objects.iter().zip(latents).map(|(o, z)| ObjectRecord { id: o.id().to_string(), latent: z.clone(), views: o.views.clone() }).collect()
}

pub fn lift(ctx: &Context, args: &LiftArgs) -> Result<LiftSummary> {
    let objects = dataset::read_dataset(&args.data)?;
    let ids: Vec<String> = objects.iter().map(|o| o.id().to_string()).collect();
    let mut section = ctx.config.lift.clone();
    section.iterations = args.iters.unwrap_or(section.iterations);
    let seed = ctx.cli_seed.or(section.seed).unwrap_or(ctx.seed);
    let cfg = section.fit_config(seed);
    let (params, latents, state) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            if ck.ids != ids {
                return Err(Error::Usage(format!("checkpoint objects {:?} do not match dataset objects {:?}", ck.ids, ids)));
            }
            let Some(state) = ck.optimizer else {
                return Err(Error::format(path, "checkpoint has no optimizer state to resume from"));
            };
            (ck.params, ck.latents, Some(state))
        }
        None => {
            let gen = ctx.config.generator.to_config();
            let params = GeneratorParams::init(gen.clone(), seed)?;
            let latents = init_latents(ids.len(), gen.latent_dim, section.latent_std, seed);
            (params, latents, None)
        }
    };
    let start_step = state.as_ref().map_or(0, |s| s.step);
    log::info!("lifting {} objects for {} iterations from step {start_step}", ids.len(), cfg.iterations);
    let out = fit(&records(&objects, &latents), params, &cfg, state)?;
    report::write_losses(&ctx.path(LOSS_FILE), &out.state.history)?;
    let summary = LiftSummary {
        command: "lift",
        seed,
        objects: ids.clone(),
        start_step,
        end_step: out.state.step,
        iterations: cfg.iterations,
        final_loss: out.state.history.last().map(|r| r.terms.total),
        parameters: out.params.len(),
    };
    Checkpoint { params: out.params, ids, latents: out.latents, optimizer: Some(out.state) }.write(&ctx.path(CHECKPOINT_FILE))?;
    write_summary(&ctx.path(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Background frames of a compose input directory, in name order.
fn frame_stems(dir: &Path) -> Result<Vec<String>> {
    let image_dir = dir.join("image");
    let entries = std::fs::read_dir(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut stems = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(&image_dir, e))?.path();
        if path.extension().is_some_and(|x| x == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn compose(ctx: &Context, args: &ComposeArgs) -> Result<ComposeSummary> {
    let ck = Checkpoint::read(&args.checkpoint)?;
    let mut section = ctx.config.compose.clone();
    section.objects_per_frame = args.objects_per_frame.unwrap_or(section.objects_per_frame);
    section.bbox_from_mask |= args.bbox_from_mask;
    let cfg = section.compose_config();
    let mut bank = ObjectBank::new(&ck.params, &ck.latents)?;
    let shadow = default_shadow_sprite(32);
    let (image_out, label_out) = (ctx.path("image"), ctx.path("label"));
    create_dir(&image_out)?;
    create_dir(&label_out)?;
    let mut s = ComposeSummary { command: "compose", seed: ctx.seed, frames: 0, skipped: 0, placed: 0, rejected: 0, missing: 0 };
    for (index, stem) in frame_stems(&args.backgrounds)?.iter().enumerate() {
        let calib_path = args.backgrounds.join("calib").join(format!("{stem}.txt"));
        if !calib_path.is_file() {
            log::warn!("frame {stem}: no calibration at {}, skipped", calib_path.display());
            s.skipped += 1;
            continue;
        }
        let calib = calib::read(&calib_path)?;
        let bg = png::read_rgb(&args.backgrounds.join("image").join(format!("{stem}.png")))?;
        let drivable_path = args.backgrounds.join("drivable").join(format!("{stem}.png"));
        let map = if drivable_path.is_file() { Some(ipm_drivable_map(&png::read_mask(&drivable_path)?, &calib, GridSpec::default())?) } else { None };
        let dist = SampleDistributions::cars(calib.ground_height());
        let mut rng = Rng::indexed(ctx.seed, Stream::Compose, index as u64);
        let scene = compose_frame(&bg, &calib, &mut bank, &dist, map.as_ref(), &shadow, &cfg, &mut rng)?;
        png::write_rgb(&image_out.join(format!("{stem}.png")), &scene.image)?;
        let label_path = label_out.join(format!("{stem}.txt"));
        std::fs::write(&label_path, scene.label_text()).map_err(|e| Error::io(&label_path, e))?;
        s.frames += 1;
        s.placed += scene.objects.len();
        s.rejected += scene.rejected;
        s.missing += scene.missing;
    }
    if s.skipped > 0 {
        log::warn!("{} frames skipped for missing calibration", s.skipped);
    }
    write_summary(&ctx.path(SUMMARY_FILE), &s)?;
    Ok(s)
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<EvalSummary> {
    if args.checkpoint.is_none() && args.data.is_none() {
        return Err(Error::Usage("eval needs --checkpoint, --data or both".into()));
    }
    let mut section = ctx.config.eval.clone();
    section.pairs = args.pairs.unwrap_or(section.pairs);
    let spec = section.pair_spec(ctx.seed);
    let cam = section.camera()?;
    let mut reports = Vec::new();
    let mut emit = |id: &str, source: &'static str, report: &lift3d_core::eval::MetricReport| -> Result<()> {
        report::write_pairs(&ctx.path(&format!("re_{id}_{source}.csv")), report)?;
        log::info!("{id} {source}: mean reprojection error {:.5}", report.mean);
        reports.push(ObjectMetric { id: id.to_string(), source, metric: report.into() });
        Ok(())
    };
    if let Some(path) = &args.checkpoint {
        let ck = Checkpoint::read(path)?;
        for (id, z) in ck.ids.iter().zip(&ck.latents) {
            let field = FieldRenderer::new(&ck.params, z, cam, section.samples_per_ray)?;
            emit(id, "field", &evaluate_consistency(&field, &spec, false)?)?;
            if section.baseline_spread > 0.0 {
                let base = RecolorBaseline { inner: field, seed: ctx.seed, spread: section.baseline_spread };
                emit(id, "baseline", &evaluate_consistency(&base, &spec, false)?)?;
            }
        }
    }
    if let Some(root) = &args.data {
        for obj in dataset::read_dataset(root)? {
            let Some(scene) = obj.oracle_scene() else {
                log::warn!("{}: no shape seed in the manifest, no oracle reference", obj.id());
                continue;
            };
            emit(obj.id(), "oracle", &evaluate_consistency(&OracleRenderer { scene: &scene, camera: cam }, &spec, false)?)?;
        }
    }
    let summary = EvalSummary { command: "eval", seed: ctx.seed, pairs: spec.count, reports };
    write_summary(&ctx.path(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Interpolation weights `k / (frames - 1)`; a single frame uses 0.
pub fn interp_alphas(frames: usize) -> Vec<f64> {
    (0..frames).map(|k| if frames > 1 { k as f64 / (frames - 1) as f64 } else { 0.0 }).collect()
}

/// Renders `(1 - a) * za + a * zb` for each weight from one camera pose.
pub fn interp_frames(
    params: &GeneratorParams,
    za: &LatentCode,
    zb: &LatentCode,
    alphas: &[f64],
    cam: &CameraIntrinsics,
    pose: &RigidPose,
    samples_per_ray: usize,
) -> Result<Vec<Image>> {
    let spec = RaySampleSpec { samples_per_ray, stratified: false };
    alphas
        .iter()
        .map(|&a| {
            let (style, field) = params.generate(&za.lerp(zb, a))?;
            Ok(render_image(&field.conditioned(&style)?, cam, pose, &BoxPose::CANONICAL, &spec)?.rgb)
        })
        .collect()
}

/// Places equally sized images side by side.
pub fn tile_horizontal(frames: &[Image]) -> Result<Image> {
    let first = frames.first().ok_or_else(|| Error::Usage("nothing to tile".into()))?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    if frames.iter().any(|f| !f.same_shape(first)) {
        return Err(Error::Usage("frames differ in size".into()));
    }
    Ok(Image::from_fn(w * frames.len(), h, c, |x, y, ch| frames[x / w].get(x % w, y, ch)))
}

pub fn interp(ctx: &Context, args: &InterpArgs) -> Result<InterpSummary> {
    let ck = Checkpoint::read(&args.checkpoint)?;
    let n = ck.latents.len();
    let b = args.b.unwrap_or(n.saturating_sub(1));
    if args.a >= n || b >= n {
        return Err(Error::Usage(format!("object indices {} and {b} must be below {n}", args.a)));
    }
    let section = &ctx.config.interp;
    let frames = args.frames.unwrap_or(section.frames);
    if frames == 0 {
        return Err(Error::Usage("--frames must be at least 1".into()));
    }
    let cam = section.camera()?;
    let pose = orbit_pose(section.azimuth_deg, section.elevation_deg, section.radius)?;
    let alphas = interp_alphas(frames);
    let images = interp_frames(&ck.params, &ck.latents[args.a], &ck.latents[b], &alphas, &cam, &pose, section.samples_per_ray)?;
    png::write_rgb(&ctx.path(INTERP_FILE), &tile_horizontal(&images)?)?;
    let summary = InterpSummary { command: "interp", a: ck.ids[args.a].clone(), b: ck.ids[b].clone(), frames, alphas };
    write_summary(&ctx.path(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
