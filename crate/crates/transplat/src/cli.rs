//! Command-line entry points.
//!
//! Every command resolves its configuration (file plus flag overrides),
//! validates it before touching inputs, and writes a JSON run manifest next
//! to its outputs — also on failure, with the error recorded. Exit codes:
//! 0 ok, 1 usage, 2 validation, 3 runtime, 4 acceptance-check failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{load_camera, save_camera, CameraView};
use crate::depth::{extract_all, WindowSearchConfig};
use crate::error::{Error, Result};
use crate::img::{
    read_pfm_gray, read_png_rgb, write_mask_png, write_pfm_gray, write_pfm_rgb, write_png_rgb,
    ImageF,
};
use crate::losses::PriorInputs;
use crate::mesh::{
    f1_score, load_ply, marching_cubes, psnr, save_ply, ssim, TsdfVolume,
};
use crate::rasterizer::render_view;
use crate::scene::{load_scene, save_scene};
use crate::synth::{dilemma_report, generate, GroundTruth, Scenario, SynthSpec};
use crate::trainer::{TrainConfig, TrainState, TrainView};

/// Environment variable overriding the default worker count.
pub const THREADS_ENV: &str = "TRANSPLAT_THREADS";

// --- configuration --------------------------------------------------------

/// The full configuration tree: one section per pipeline stage. Unknown keys
/// are rejected; missing keys take the defaults printed by
/// `--print-defaults`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub depth: WindowSearchConfig,
    pub fuse: FuseConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseConfig {
    /// Voxel edge, meters.
    pub voxel: f64,
    /// Margin around the observed geometry, in voxels.
    pub margin_voxels: f64,
    /// Hard cap on volume cells, guarding against runaway bounds.
    pub max_cells: usize,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig {
            voxel: crate::mesh::DEFAULT_VOXEL,
            margin_voxels: 5.0,
            max_cells: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau: crate::mesh::DEFAULT_TAU,
            samples: crate::mesh::DEFAULT_CHAMFER_SAMPLES,
            seed: 0,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.depth.validate()?;
        if !(self.fuse.voxel > 0.0) {
            return Err(Error::ConfigValidation("fuse voxel must be positive".into()));
        }
        if !(self.eval.tau > 0.0) || self.eval.samples == 0 {
            return Err(Error::ConfigValidation(
                "eval needs positive tau and sample count".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::ConfigValidation(format!("{}: {e}", path.display())))
    }
}

// --- argument surface -----------------------------------------------------

#[derive(Parser, Debug)]
#[command(name = "transplat", version, about = "Gaussian-splatting geometry toolkit for transparent surfaces", disable_help_subcommand = true)]
struct CliArgs {
    /// Worker thread count (default: TRANSPLAT_THREADS or hardware).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the full default configuration as TOML and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Args, Debug, Clone)]
struct CommonCfg {
    /// Configuration file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override every stage seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonCfg {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.synth.seed = s;
            cfg.train.seed = s;
            cfg.eval.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic scene with analytic ground truth.
    Synth {
        #[command(flatten)]
        common: CommonCfg,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view of a scene.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 2)]
        stage: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all depth estimators over one view.
    ExtractDepth {
        #[command(flatten)]
        common: CommonCfg,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the loss parts of a scene against a dataset view.
    LossReport {
        #[command(flatten)]
        common: CommonCfg,
        #[arg(long)]
        scene: PathBuf,
        /// Dataset directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long, default_value_t = 1)]
        stage: u8,
    },
    /// Two-stage training against a synthetic dataset.
    Train {
        #[command(flatten)]
        common: CommonCfg,
        /// Dataset directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse depth maps into a TSDF and extract the mesh.
    Fuse {
        #[command(flatten)]
        common: CommonCfg,
        /// Directory of per-view depth maps (PFM).
        #[arg(long)]
        depths: PathBuf,
        /// Directory of matching camera files (JSON, same stems).
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        voxel: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Geometric metrics of a predicted mesh against ground truth.
    Eval {
        #[command(flatten)]
        common: CommonCfg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// PSNR and SSIM between two images.
    EvalImg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Depth-estimator error table on a synthetic dataset.
    DilemmaReport {
        #[command(flatten)]
        common: CommonCfg,
        /// Dataset directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// synth -> train -> extract -> fuse -> eval, end to end.
    Pipeline {
        #[command(flatten)]
        common: CommonCfg,
        #[arg(long)]
        out: PathBuf,
        /// Fail (exit 4) when the fused mesh misses the quality bar.
        #[arg(long)]
        check: bool,
    },
}

// --- run manifest ---------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: u64,
    /// Fully resolved configuration, defaults materialized.
    pub config: serde_json::Value,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file.
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: u128,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

struct ManifestBuilder {
    m: RunManifest,
    path: PathBuf,
    started: Instant,
}

impl ManifestBuilder {
    fn new(command: &str, manifest_path: PathBuf) -> Self {
        ManifestBuilder {
            m: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: 0,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                wall_ms: 0,
                error: None,
                metrics: None,
            },
            path: manifest_path,
            started: Instant::now(),
        }
    }

    fn set_config<T: Serialize>(&mut self, cfg: &T, seed: u64) {
        self.m.config = serde_json::to_value(cfg).expect("config serializes");
        self.m.seed = seed;
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.m
            .inputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.m
            .outputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    fn finish(mut self, err: Option<&Error>) {
        self.m.wall_ms = self.started.elapsed().as_millis();
        self.m.error = err.map(|e| e.to_string());
        if let Some(dir) = self.path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        if let Ok(json) = serde_json::to_string_pretty(&self.m) {
            let _ = std::fs::write(&self.path, json + "\n");
        }
    }
}

// --- dataset layout -------------------------------------------------------

fn view_stem(k: usize) -> String {
    format!("view_{k:03}")
}

/// Writes a generated dataset under `dir` in the formats of the other
/// commands. Returns all written paths.
fn write_dataset(
    dir: &Path,
    spec: &SynthSpec,
    scene: &crate::scene::SceneFile,
    gt: &GroundTruth,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for sub in ["cameras", "images", "delighted", "masks", "normals", "depth_gt"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut put = |p: PathBuf, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        f(&p)?;
        written.push(p);
        Ok(())
    };
    put(dir.join("scene.tsplat"), &|p| save_scene(scene, p))?;
    put(dir.join("spec.json"), &|p| {
        let json = serde_json::to_string_pretty(spec).expect("spec serializes");
        std::fs::write(p, json + "\n").map_err(|e| Error::io(p, e))
    })?;
    put(dir.join("gt_mesh.ply"), &|p| save_ply(&gt.mesh, p, true))?;
    for (k, vt) in gt.views.iter().enumerate() {
        let s = view_stem(k);
        put(dir.join("cameras").join(format!("{s}.json")), &|p| {
            save_camera(p, &vt.cam)
        })?;
        put(dir.join("images").join(format!("{s}.png")), &|p| {
            write_png_rgb(p, &vt.image)
        })?;
        put(dir.join("delighted").join(format!("{s}.png")), &|p| {
            write_png_rgb(p, &vt.delighted)
        })?;
        put(dir.join("masks").join(format!("{s}.png")), &|p| {
            write_mask_png(p, &vt.mask)
        })?;
        put(dir.join("normals").join(format!("{s}.pfm")), &|p| {
            write_pfm_rgb(p, &vt.normal)
        })?;
        put(dir.join("depth_gt").join(format!("{s}.pfm")), &|p| {
            write_pfm_gray(p, &vt.depth)
        })?;
    }
    Ok(written)
}

/// Loads the spec of a dataset directory and regenerates its scene and
/// analytic ground truth (generation is seeded and deterministic, which keeps
/// supervision at full precision instead of re-quantizing it through PNG).
fn load_dataset(dir: &Path) -> Result<(SynthSpec, crate::scene::SceneFile, GroundTruth)> {
    let spec_path = dir.join("spec.json");
    let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        what: "synth spec",
        path: spec_path.clone(),
        detail: e.to_string(),
    })?;
    let (scene, gt) = generate(&spec)?;
    Ok((spec, scene, gt))
}

fn train_views(gt: &GroundTruth) -> Vec<TrainView> {
    gt.views
        .iter()
        .map(|vt| TrainView {
            cam: vt.cam.clone(),
            inputs: PriorInputs {
                gt: vt.image.clone(),
                delighted: vt.delighted.clone(),
                mask: vt.mask.clone(),
                normal_prior: vt.normal.clone(),
            },
        })
        .collect()
}

// --- shared steps ---------------------------------------------------------

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == ext).unwrap_or(false))
        .collect();
    out.sort();
    Ok(out)
}

/// Fuses depth maps over a volume spanning `bounds` when given, otherwise
/// the bounding box of all back-projected valid depth pixels; either is
/// padded by the configured margin.
fn fuse_depths(
    depths: &[(ImageF, CameraView)],
    cfg: &FuseConfig,
    bounds: Option<(Vector3<f64>, Vector3<f64>)>,
) -> Result<crate::mesh::TriMesh> {
    let (mut lo, mut hi) = bounds.unwrap_or_else(|| {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (depth, cam) in depths {
            let o = cam.center();
            for y in 0..cam.height {
                for x in 0..cam.width {
                    let d = depth.at(x, y);
                    if d <= 0.0 {
                        continue;
                    }
                    let p = o + d * cam.pixel_ray(x, y);
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
        }
        (lo, hi)
    });
    if !lo.x.is_finite() || lo.x > hi.x {
        return Err(Error::EmptyIsosurface);
    }
    let margin = cfg.margin_voxels * cfg.voxel;
    lo.add_scalar_mut(-margin);
    hi.add_scalar_mut(margin);
    let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cfg.voxel).ceil() as usize + 1);
    if dims.iter().product::<usize>() > cfg.max_cells {
        return Err(Error::ConfigValidation(format!(
            "fusion volume {dims:?} exceeds {} cells; raise voxel size",
            cfg.max_cells
        )));
    }
    let mut vol = TsdfVolume::new(lo, cfg.voxel, dims)?;
    for (depth, cam) in depths {
        vol.integrate(depth, cam);
    }
    marching_cubes(&vol, 0.0)
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    chamfer: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    tau: f64,
}

fn eval_meshes(
    pred: &crate::mesh::TriMesh,
    gt: &crate::mesh::TriMesh,
    cfg: &EvalConfig,
) -> Result<EvalOutput> {
    let m = f1_score(pred, gt, cfg.tau, cfg.samples, cfg.seed)?;
    Ok(EvalOutput {
        chamfer: m.chamfer,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        tau: cfg.tau,
    })
}

// --- command bodies -------------------------------------------------------

fn cmd_synth(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    scenario: &Option<String>,
    views: Option<usize>,
    image_size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut cfg = common.resolve()?;
    if let Some(s) = scenario {
        let sc: Scenario = s.parse()?;
        let mut spec = SynthSpec::default_for(sc);
        spec.seed = cfg.synth.seed;
        // Scenario flag resets scenario-dependent defaults, keeping any
        // explicitly overridden rig values from the file.
        if common.config.is_some() {
            spec = cfg.synth.clone();
            spec.scenario = sc;
        }
        cfg.synth = spec;
    }
    if let Some(v) = views {
        cfg.synth.views = v;
    }
    if let Some(s) = image_size {
        cfg.synth.image_size = s;
    }
    cfg.validate()?;
    mb.set_config(&cfg, cfg.synth.seed);
    let (scene, gt) = generate(&cfg.synth)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for p in write_dataset(out, &cfg.synth, &scene, &gt)? {
        mb.output(&p)?;
    }
    println!(
        "synth: {} views of {} -> {}",
        cfg.synth.views,
        cfg.synth.scenario.name(),
        out.display()
    );
    Ok(())
}

fn cmd_render(
    mb: &mut ManifestBuilder,
    scene_path: &Path,
    camera_path: &Path,
    stage: u8,
    out: &Path,
) -> Result<()> {
    if !(stage == 1 || stage == 2) {
        return Err(Error::ConfigValidation(format!("stage must be 1 or 2, got {stage}")));
    }
    mb.set_config(&serde_json::json!({ "stage": stage }), 0);
    mb.input(scene_path)?;
    mb.input(camera_path)?;
    let scene = load_scene(scene_path)?;
    let cam = load_camera(camera_path)?;
    let bundle = render_view(&scene, &cam, stage);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outputs = [
        ("color.png", false),
        ("depth_standard.pfm", true),
        ("normal.pfm", true),
        ("distance.pfm", true),
        ("alpha.pfm", true),
        ("mask.pfm", true),
    ];
    write_png_rgb(&out.join(outputs[0].0), &bundle.color)?;
    write_pfm_gray(&out.join("depth_standard.pfm"), &bundle.depth_standard)?;
    write_pfm_rgb(&out.join("normal.pfm"), &bundle.normal)?;
    write_pfm_gray(&out.join("distance.pfm"), &bundle.distance)?;
    write_pfm_gray(&out.join("alpha.pfm"), &bundle.alpha_acc)?;
    write_pfm_gray(&out.join("mask.pfm"), &bundle.mask)?;
    for (name, _) in outputs {
        mb.output(&out.join(name))?;
    }
    Ok(())
}

fn cmd_extract_depth(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    scene_path: &Path,
    camera_path: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = common.resolve()?;
    cfg.depth.validate()?;
    mb.set_config(&cfg.depth, 0);
    mb.input(scene_path)?;
    mb.input(camera_path)?;
    let scene = load_scene(scene_path)?;
    let cam = load_camera(camera_path)?;
    let maps = extract_all(&scene, &cam, &cfg.depth);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, im) in [
        ("standard", &maps.standard),
        ("unbiased", &maps.unbiased),
        ("nearest", &maps.nearest),
        ("first", &maps.first),
        ("fallback", &maps.fallback),
        ("fusion", &maps.fusion),
    ] {
        let p = out.join(format!("{name}.pfm"));
        write_pfm_gray(&p, im)?;
        mb.output(&p)?;
    }
    Ok(())
}

fn cmd_loss_report(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    scene_path: &Path,
    data: &Path,
    view: usize,
    stage: u8,
) -> Result<()> {
    let cfg = common.resolve()?;
    mb.set_config(&cfg.train.weights, 0);
    mb.input(scene_path)?;
    mb.input(&data.join("spec.json"))?;
    let scene = load_scene(scene_path)?;
    let (_, _, gt) = load_dataset(data)?;
    let vt = gt
        .views
        .get(view)
        .ok_or_else(|| Error::ConfigValidation(format!("view {view} out of range")))?;
    let inputs = PriorInputs {
        gt: vt.image.clone(),
        delighted: vt.delighted.clone(),
        mask: vt.mask.clone(),
        normal_prior: vt.normal.clone(),
    };
    let report = crate::grad::view_loss(&scene, &vt.cam, stage, &inputs, &cfg.train.weights)?;
    let json = serde_json::json!({
        "stage": stage,
        "view": view,
        "rgb": report.parts.rgb,
        "trans": report.parts.trans,
        "normal": report.parts.normal,
        "flatten": report.parts.flatten,
        "total": report.total,
    });
    println!("{}", serde_json::to_string_pretty(&json).expect("json"));
    mb.m.metrics = Some(json);
    Ok(())
}

fn cmd_train(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    data: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = common.resolve()?;
    cfg.train.validate()?;
    mb.set_config(&cfg.train, cfg.train.seed);
    mb.input(&data.join("spec.json"))?;
    mb.input(&data.join("scene.tsplat"))?;
    let (_, _, gt) = load_dataset(data)?;
    let scene = load_scene(&data.join("scene.tsplat"))?;
    let views = train_views(&gt);
    let mut state = TrainState::new(scene);
    state.run(&views, &cfg.train)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let scene_out = out.join("trained.tsplat");
    let log_out = out.join("loss_log.csv");
    save_scene(&state.scene, &scene_out)?;
    state.write_log_csv(&log_out)?;
    mb.output(&scene_out)?;
    mb.output(&log_out)?;
    if let Some(r) = state.last_report() {
        println!("train: final loss {:.6} over {} records", r.total, state.scene.len());
    }
    Ok(())
}

fn cmd_fuse(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    depths_dir: &Path,
    cameras_dir: &Path,
    voxel: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = common.resolve()?;
    if let Some(v) = voxel {
        cfg.fuse.voxel = v;
    }
    cfg.validate()?;
    mb.set_config(&cfg.fuse, 0);
    let depth_files = sorted_files(depths_dir, "pfm")?;
    if depth_files.is_empty() {
        return Err(Error::ConfigValidation(format!(
            "no .pfm depth maps in {}",
            depths_dir.display()
        )));
    }
    let mut pairs = Vec::new();
    for dp in &depth_files {
        let stem = dp.file_stem().unwrap_or_default().to_string_lossy();
        let cp = cameras_dir.join(format!("{stem}.json"));
        mb.input(dp)?;
        mb.input(&cp)?;
        pairs.push((read_pfm_gray(dp)?, load_camera(&cp)?));
    }
    let mesh = fuse_depths(&pairs, &cfg.fuse, None)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_ply(&mesh, out, true)?;
    mb.output(out)?;
    println!(
        "fuse: {} views -> {} vertices, {} faces",
        pairs.len(),
        mesh.vertices.len(),
        mesh.faces.len()
    );
    Ok(())
}

fn cmd_eval(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    pred: &Path,
    gt: &Path,
    tau: Option<f64>,
) -> Result<()> {
    let mut cfg = common.resolve()?;
    if let Some(t) = tau {
        cfg.eval.tau = t;
    }
    cfg.validate()?;
    mb.set_config(&cfg.eval, cfg.eval.seed);
    mb.input(pred)?;
    mb.input(gt)?;
    let pm = load_ply(pred)?;
    let gm = load_ply(gt)?;
    let out = eval_meshes(&pm, &gm, &cfg.eval)?;
    println!(
        "CD {:.6} m  P {:.4}  R {:.4}  F1 {:.4}  (tau {})",
        out.chamfer, out.precision, out.recall, out.f1, out.tau
    );
    mb.m.metrics = Some(serde_json::to_value(&out).expect("metrics"));
    Ok(())
}

fn cmd_eval_img(mb: &mut ManifestBuilder, pred: &Path, gt: &Path) -> Result<()> {
    mb.set_config(&serde_json::Value::Null, 0);
    mb.input(pred)?;
    mb.input(gt)?;
    let a = read_png_rgb(pred)?;
    let b = read_png_rgb(gt)?;
    let p = psnr(&a, &b)?;
    let s = ssim(&a, &b)?;
    println!("PSNR {p:.4} dB  SSIM {s:.6}");
    mb.m.metrics = Some(serde_json::json!({ "psnr_db": p, "ssim": s }));
    Ok(())
}

fn cmd_dilemma_report(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    data: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = common.resolve()?;
    cfg.depth.validate()?;
    mb.set_config(&cfg.depth, 0);
    mb.input(&data.join("spec.json"))?;
    let (_, scene, gt) = load_dataset(data)?;
    let rows = dilemma_report(&scene, &gt, &cfg.depth)?;
    let json = serde_json::to_string_pretty(&rows).expect("report serializes");
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, json.clone() + "\n").map_err(|e| Error::io(out, e))?;
    mb.output(out)?;
    println!("{json}");
    Ok(())
}

/// Quality bar for `pipeline --check`.
pub const CHECK_MAX_CHAMFER: f64 = 0.01;
pub const CHECK_MIN_F1: f64 = 0.7;

fn cmd_pipeline(
    mb: &mut ManifestBuilder,
    common: &CommonCfg,
    out: &Path,
    check: bool,
) -> Result<bool> {
    let cfg = common.resolve()?;
    cfg.validate()?;
    mb.set_config(&cfg, cfg.synth.seed);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let stage = |name: &str, e: Error| -> Error {
        Error::ConfigValidation(format!("pipeline stage `{name}`: {e}"))
    };

    // synth
    let (scene, gt) = generate(&cfg.synth).map_err(|e| stage("synth", e))?;
    let synth_dir = out.join("synth");
    std::fs::create_dir_all(&synth_dir).map_err(|e| Error::io(&synth_dir, e))?;
    for p in write_dataset(&synth_dir, &cfg.synth, &scene, &gt).map_err(|e| stage("synth", e))? {
        mb.output(&p)?;
    }

    // train
    let views = train_views(&gt);
    let mut state = TrainState::new(scene);
    state.run(&views, &cfg.train).map_err(|e| stage("train", e))?;
    let trained_path = out.join("trained.tsplat");
    save_scene(&state.scene, &trained_path).map_err(|e| stage("train", e))?;
    state
        .write_log_csv(&out.join("loss_log.csv"))
        .map_err(|e| stage("train", e))?;
    mb.output(&trained_path)?;
    mb.output(&out.join("loss_log.csv"))?;

    // extract first-surface depth per view
    let depth_dir = out.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
    let mut pairs = Vec::new();
    for (k, vt) in gt.views.iter().enumerate() {
        let maps = extract_all(&state.scene, &vt.cam, &cfg.depth);
        let p = depth_dir.join(format!("{}.pfm", view_stem(k)));
        write_pfm_gray(&p, &maps.first).map_err(|e| stage("extract-depth", e))?;
        mb.output(&p)?;
        // Fuse from the full-precision fusion-grade maps, not the f32 files.
        pairs.push((maps.fusion, vt.cam.clone()));
    }

    // fuse, cropped to the ground-truth extent so evaluation compares
    // like with like.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for v in &gt.mesh.vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let mesh =
        fuse_depths(&pairs, &cfg.fuse, Some((lo, hi))).map_err(|e| stage("fuse", e))?;
    let mesh_path = out.join("fused.ply");
    save_ply(&mesh, &mesh_path, true).map_err(|e| stage("fuse", e))?;
    mb.output(&mesh_path)?;

    // eval
    let metrics = eval_meshes(&mesh, &gt.mesh, &cfg.eval).map_err(|e| stage("eval", e))?;
    println!(
        "pipeline: CD {:.6} m  P {:.4}  R {:.4}  F1 {:.4}",
        metrics.chamfer, metrics.precision, metrics.recall, metrics.f1
    );
    let passed = metrics.chamfer < CHECK_MAX_CHAMFER && metrics.f1 > CHECK_MIN_F1;
    mb.m.metrics = Some(serde_json::json!({
        "chamfer": metrics.chamfer,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "tau": metrics.tau,
        "check": if check { Some(passed) } else { None },
    }));
    if check && !passed {
        println!(
            "check FAILED: need CD < {CHECK_MAX_CHAMFER} and F1 > {CHECK_MIN_F1}"
        );
    }
    Ok(passed || !check)
}

// --- dispatch -------------------------------------------------------------

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::ConfigValidation(_)
        | Error::InvalidSpec(_)
        | Error::InvalidCamera(_)
        | Error::ShapeMismatch { .. } => 2,
        _ => 3,
    }
}

fn init_threads(n: Option<usize>) {
    let n = n.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // Ignored if a global pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn manifest_path_for(cmd: &Cmd) -> PathBuf {
    match cmd {
        Cmd::Synth { out, .. }
        | Cmd::Render { out, .. }
        | Cmd::ExtractDepth { out, .. }
        | Cmd::Train { out, .. }
        | Cmd::Pipeline { out, .. } => out.join("manifest.json"),
        Cmd::Fuse { out, .. } | Cmd::DilemmaReport { out, .. } => {
            out.with_extension("manifest.json")
        }
        Cmd::LossReport { scene, .. } => scene.with_extension("loss.manifest.json"),
        Cmd::Eval { pred, .. } | Cmd::EvalImg { pred, .. } => {
            pred.with_extension("eval.manifest.json")
        }
    }
}

fn cmd_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Synth { .. } => "synth",
        Cmd::Render { .. } => "render",
        Cmd::ExtractDepth { .. } => "extract-depth",
        Cmd::LossReport { .. } => "loss-report",
        Cmd::Train { .. } => "train",
        Cmd::Fuse { .. } => "fuse",
        Cmd::Eval { .. } => "eval",
        Cmd::EvalImg { .. } => "eval-img",
        Cmd::DilemmaReport { .. } => "dilemma-report",
        Cmd::Pipeline { .. } => "pipeline",
    }
}

/// Parses `argv` and runs one command; returns the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match CliArgs::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            // Help/version requests are success, anything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads(args.threads);
    if args.print_defaults {
        print!(
            "{}",
            toml::to_string_pretty(&Config::default()).expect("defaults serialize")
        );
        return 0;
    }
    let Some(cmd) = args.cmd else {
        eprintln!("error: missing subcommand (see --help)");
        return 1;
    };
    let mut mb = ManifestBuilder::new(cmd_name(&cmd), manifest_path_for(&cmd));
    let result: Result<bool> = match &cmd {
        Cmd::Synth { common, scenario, views, image_size, out } => {
            cmd_synth(&mut mb, common, scenario, *views, *image_size, out).map(|_| true)
        }
        Cmd::Render { scene, camera, stage, out } => {
            cmd_render(&mut mb, scene, camera, *stage, out).map(|_| true)
        }
        Cmd::ExtractDepth { common, scene, camera, out } => {
            cmd_extract_depth(&mut mb, common, scene, camera, out).map(|_| true)
        }
        Cmd::LossReport { common, scene, data, view, stage } => {
            cmd_loss_report(&mut mb, common, scene, data, *view, *stage).map(|_| true)
        }
        Cmd::Train { common, data, out } => cmd_train(&mut mb, common, data, out).map(|_| true),
        Cmd::Fuse { common, depths, cameras, voxel, out } => {
            cmd_fuse(&mut mb, common, depths, cameras, *voxel, out).map(|_| true)
        }
        Cmd::Eval { common, pred, gt, tau } => {
            cmd_eval(&mut mb, common, pred, gt, *tau).map(|_| true)
        }
        Cmd::EvalImg { pred, gt } => cmd_eval_img(&mut mb, pred, gt).map(|_| true),
        Cmd::DilemmaReport { common, data, out } => {
            cmd_dilemma_report(&mut mb, common, data, out).map(|_| true)
        }
        Cmd::Pipeline { common, out, check } => cmd_pipeline(&mut mb, common, out, *check),
    };
    match result {
        Ok(true) => {
            mb.finish(None);
            0
        }
        Ok(false) => {
            mb.finish(None);
            4
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code_for(&e);
            mb.finish(Some(&e));
            code
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}
