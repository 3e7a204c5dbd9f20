use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wildmvs::benchmark::{
    depth_metrics, precision_recall, reconstruction_threshold, select_source_views, depth_range_from_sparse,
    DepthMetrics, SparseModel, DEFAULT_MIN_SELECTION_ANGLE, DEFAULT_MIN_SHARED_POINTS,
};
use wildmvs::fusion::{fuse, PointCloud};
use wildmvs::geometry::{read_cameras, Camera, DepthRange, NamedCamera};
use wildmvs::imagery::{load_depth_pfm, load_image, save_depth_pfm, DepthMap, GroundTruthDepth, Image};
use wildmvs::photoloss::fit_lambda;
use wildmvs::pipeline::{estimate_depth_from_features, view_features, PipelineConfig, TrainingBatch};
use wildmvs::synthdata::{generate, write_scene, SceneSpec};
use wildmvs::{Error, Result};

#[derive(Parser)]
#[command(name = "wildmvs", version, about = "Plane-sweep stereo, fusion and evaluation over scene directories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene directory.
    Synth {
        /// Scene description (`key = value` lines); defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Estimate a depth map for every view of a scene.
    Depth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Fuse depth maps into a PLY point cloud.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        depths: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Depth-map metrics as JSON.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        /// Scene directory holding ground-truth `depths/`.
        #[arg(long)]
        gt: PathBuf,
        /// `name d_min d_max` per view; defaults to `<pred>/ranges.txt`.
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Point-cloud precision, recall and F-score as JSON.
    EvalRecon {
        #[arg(long)]
        pred: PathBuf,
        /// Reference cloud; defaults to `<scene>/gt_cloud.ply`.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Scene whose ground-truth depths set the distance threshold.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Explicit distance threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Fit the softmin lambda on scenes; prints a `step,lambda,loss` trace.
    FitLambda {
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        init: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        step_size: f64,
        /// Write the trace here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
}

#[derive(Args, Default)]
struct Options {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["variance", "softmin"])]
    agg: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long)]
    hyps: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    rel_depth_tol: Option<f64>,
    #[arg(long)]
    reproj_tol: Option<f64>,
    #[arg(long)]
    min_angle: Option<f64>,
    #[arg(long)]
    min_views: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Options {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::parse(&read_text(p)?)?,
            None => PipelineConfig::default(),
        };
        let overrides = [
            ("agg", self.agg.clone()),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("hyps", self.hyps.map(|v| v.to_string())),
            ("views", self.views.map(|v| v.to_string())),
            ("temp", self.temp.map(|v| v.to_string())),
            ("radius", self.radius.map(|v| v.to_string())),
            ("rel_depth_tol", self.rel_depth_tol.map(|v| v.to_string())),
            ("reproj_tol", self.reproj_tol.map(|v| v.to_string())),
            ("min_angle", self.min_angle.map(|v| v.to_string())),
            ("min_views", self.min_views.map(|v| v.to_string())),
            ("window", self.window.map(|v| v.to_string())),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

/// Cameras, images and sparse points of a scene directory.
struct SceneDir {
    root: PathBuf,
    cameras: Vec<NamedCamera>,
}

impl SceneDir {
    fn open(root: &Path) -> Result<Self> {
        let cameras = read_cameras(&root.join("cameras.txt"))?;
        if cameras.is_empty() {
            return Err(Error::Empty(format!("{} lists no cameras", root.join("cameras.txt").display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            cameras,
        })
    }

    fn plain_cameras(&self) -> Vec<Camera> {
        self.cameras.iter().map(|c| c.camera.clone()).collect()
    }

    fn image(&self, name: &str) -> Result<Image> {
        let dir = self.root.join("images");
        let path = ["ppm", "pgm", "png"]
            .iter()
            .map(|ext| dir.join(format!("{name}.{ext}")))
            .find(|p| p.exists())
            .unwrap_or_else(|| dir.join(format!("{name}.ppm")));
        load_image(&path)
    }

    fn images(&self) -> Result<Vec<Image>> {
        let images = self.cameras.iter().map(|c| self.image(&c.name)).collect::<Result<Vec<_>>>()?;
        for (img, nc) in images.iter().zip(&self.cameras) {
            let cam = &nc.camera;
            let (w, h) = (wildmvs::imagery::Grid::width(img), wildmvs::imagery::Grid::height(img));
            if (w, h) != (cam.width, cam.height) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} at {}x{}", nc.name, cam.width, cam.height),
                    got: format!("{w}x{h}"),
                });
            }
        }
        Ok(images)
    }

    fn sparse(&self) -> Result<SparseModel> {
        SparseModel::read(&self.root.join("points3d.txt"), self.cameras.clone())
    }

    fn gt_depth(&self, name: &str) -> Result<DepthMap> {
        load_depth_pfm(&self.root.join("depths").join(format!("{name}.pfm")))
    }
}

fn cmd_synth(spec: Option<&Path>, out: &Path, opts: &Options) -> Result<()> {
    let mut spec = match spec {
        Some(p) => SceneSpec::parse(&read_text(p)?)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = opts.seed {
        spec.texture_seed = seed;
    }
    let scene = generate(&spec)?;
    create_dir(out)?;
    write_scene(out, &scene)
}

fn format_ranges(entries: &[(String, DepthRange)]) -> String {
    let mut s = String::from("# name d_min d_max\n");
    for (name, r) in entries {
        let _ = writeln!(s, "{name} {} {}", r.d_min, r.d_max);
    }
    s
}

fn parse_ranges(path: &Path) -> Result<Vec<(String, DepthRange)>> {
    let text = read_text(path)?;
    let bad = |reason: String| Error::Malformed {
        kind: "ranges file",
        path: path.to_path_buf(),
        reason,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [name, lo, hi] = toks.as_slice() else {
            return Err(bad(format!("line {}: expected `name d_min d_max`", i + 1)));
        };
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad(format!("line {}: bad number {t:?}", i + 1)));
        out.push((name.to_string(), DepthRange::new(num(lo)?, num(hi)?)?));
    }
    Ok(out)
}

fn cmd_depth(scene: &Path, out: &Path, opts: &Options) -> Result<()> {
    let cfg = opts.config()?;
    let dir = SceneDir::open(scene)?;
    let images = dir.images()?;
    let model = dir.sparse()?;
    let cams = dir.plain_cameras();
    let feats = view_features(&images, cfg.stride)?;
    create_dir(out)?;
    let mut ranges = Vec::new();
    for (r, nc) in dir.cameras.iter().enumerate() {
        let mut sources = select_source_views(&model, r, DEFAULT_MIN_SHARED_POINTS, DEFAULT_MIN_SELECTION_ANGLE)?;
        sources.truncate(cfg.source_views);
        if sources.is_empty() {
            warn(&format!("{}: no source view passes selection, skipped", nc.name));
            continue;
        }
        let views: Vec<usize> = std::iter::once(r).chain(sources.iter().copied()).collect();
        let range = match depth_range_from_sparse(&model, r, &views) {
            Ok(range) => range,
            Err(e) => {
                warn(&format!("{}: {e}, skipped", nc.name));
                continue;
            }
        };
        let depth = estimate_depth_from_features(&feats, &cams, r, &sources, range, &cfg)?;
        save_depth_pfm(&out.join(format!("{}.pfm", nc.name)), &depth)?;
        ranges.push((nc.name.clone(), range));
    }
    write_text(&out.join("ranges.txt"), &format_ranges(&ranges))
}

/// Estimated depth maps present in `dir`, with their scene cameras.
fn load_estimates(scene: &SceneDir, dir: &Path) -> Result<(Vec<DepthMap>, Vec<Camera>, Vec<usize>)> {
    let (mut depths, mut cams, mut idx) = (Vec::new(), Vec::new(), Vec::new());
    for (i, nc) in scene.cameras.iter().enumerate() {
        let path = dir.join(format!("{}.pfm", nc.name));
        if path.exists() {
            depths.push(load_depth_pfm(&path)?);
            cams.push(nc.camera.clone());
            idx.push(i);
        }
    }
    Ok((depths, cams, idx))
}

fn cmd_fuse(scene: &Path, depths_dir: &Path, out: &Path, opts: &Options) -> Result<()> {
    let cfg = opts.config()?;
    let dir = SceneDir::open(scene)?;
    let (depths, cams, idx) = load_estimates(&dir, depths_dir)?;
    if depths.is_empty() {
        return Err(Error::Empty(format!("no depth maps for this scene in {}", depths_dir.display())));
    }
    let images = idx
        .iter()
        .map(|&i| dir.image(&dir.cameras[i].name))
        .collect::<Result<Vec<_>>>()?;
    if depths.len() < cfg.fusion.min_views {
        warn(&format!(
            "{} depth map(s) cannot reach {} consistent views; the cloud is empty",
            depths.len(),
            cfg.fusion.min_views
        ));
    }
    let cloud = fuse(&depths, &cams, Some(&images), &cfg.fusion)?;
    if cloud.is_empty() {
        warn("fused cloud is empty");
    }
    cloud.write_ply(out)
}

#[derive(Serialize)]
struct ViewMetrics {
    view: String,
    #[serde(flatten)]
    metrics: DepthMetrics,
}

#[derive(Serialize)]
struct DepthReport {
    views: Vec<ViewMetrics>,
    mean: DepthMetrics,
}

fn cmd_eval_depth(pred: &Path, gt: &Path, ranges: Option<&Path>) -> Result<String> {
    let ranges = parse_ranges(&ranges.map_or_else(|| pred.join("ranges.txt"), Path::to_path_buf))?;
    let scene = SceneDir::open(gt)?;
    let mut views = Vec::new();
    for (name, range) in &ranges {
        if !scene.cameras.iter().any(|c| &c.name == name) {
            return Err(Error::invalid(format!("ranges list unknown view {name:?}")));
        }
        let d = load_depth_pfm(&pred.join(format!("{name}.pfm")))?;
        let g = GroundTruthDepth::from_depth(scene.gt_depth(name)?);
        views.push(ViewMetrics {
            view: name.clone(),
            metrics: depth_metrics(&d, &g, *range)?,
        });
    }
    if views.is_empty() {
        return Err(Error::Empty("no views to evaluate".into()));
    }
    let n = views.len() as f64;
    let avg = |f: fn(&DepthMetrics) -> f64| views.iter().map(|v| f(&v.metrics)).sum::<f64>() / n;
    let mean = DepthMetrics {
        epe: avg(|m| m.epe),
        e1: avg(|m| m.e1),
        e3: avg(|m| m.e3),
    };
    to_json(&DepthReport { views, mean })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::invalid(format!("cannot serialize report: {e}")))
}

fn cmd_eval_recon(pred: &Path, reference: Option<&Path>, scene: Option<&Path>, threshold: Option<f64>) -> Result<String> {
    let recon = PointCloud::read_ply(pred)?;
    let ref_path = match (reference, scene) {
        (Some(r), _) => r.to_path_buf(),
        (None, Some(s)) => s.join("gt_cloud.ply"),
        (None, None) => return Err(Error::invalid("eval-recon needs --ref or --scene")),
    };
    let reference = PointCloud::read_ply(&ref_path)?;
    let t = match (threshold, scene) {
        (Some(t), _) => t,
        (None, Some(s)) => {
            let dir = SceneDir::open(s)?;
            let gts = dir
                .cameras
                .iter()
                .map(|c| Ok(GroundTruthDepth::from_depth(dir.gt_depth(&c.name)?)))
                .collect::<Result<Vec<_>>>()?;
            let cams: Vec<&Camera> = dir.cameras.iter().map(|c| &c.camera).collect();
            reconstruction_threshold(&gts, &cams)?
        }
        (None, None) => return Err(Error::invalid("eval-recon needs --scene or --threshold to set the distance threshold")),
    };
    to_json(&precision_recall(&recon, &reference, t)?)
}

fn cmd_fit_lambda(scenes: &[PathBuf], init: f64, steps: usize, step_size: f64, opts: &Options) -> Result<(String, f64)> {
    let cfg = opts.config()?;
    let batches = scenes
        .iter()
        .map(|s| {
            let dir = SceneDir::open(s)?;
            TrainingBatch::from_sparse(dir.images()?, &dir.sparse()?)
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_lambda(&batches, &cfg, init, steps, step_size)?;
    let mut csv = String::from("step,lambda,loss\n");
    for (i, (l, v)) in fit.trace.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l},{v}");
    }
    Ok((csv, fit.x))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out, opts } => cmd_synth(spec.as_deref(), &out, &opts),
        Command::Depth { scene, out, opts } => cmd_depth(&scene, &out, &opts),
        Command::Fuse {
            scene,
            depths,
            out,
            opts,
        } => cmd_fuse(&scene, &depths, &out, &opts),
        Command::EvalDepth { pred, gt, ranges } => {
            println!("{}", cmd_eval_depth(&pred, &gt, ranges.as_deref())?);
            Ok(())
        }
        Command::EvalRecon {
            pred,
            reference,
            scene,
            threshold,
        } => {
            println!("{}", cmd_eval_recon(&pred, reference.as_deref(), scene.as_deref(), threshold)?);
            Ok(())
        }
        Command::FitLambda {
            scenes,
            init,
            steps,
            step_size,
            out,
            opts,
        } => {
            let (csv, lambda) = cmd_fit_lambda(&scenes, init, steps, step_size, &opts)?;
            match out {
                Some(p) => write_text(&p, &csv)?,
                None => print!("{csv}"),
            }
            eprintln!("lambda={lambda}");
            Ok(())
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("WILDMVS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::invalid(format!("WILDMVS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: code={} message={msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
