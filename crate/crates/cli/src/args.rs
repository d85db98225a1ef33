use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use raybundle::fields::AnalyticShape;
use raybundle::geometry::{BundleSchedule, PatchSize};
use raybundle::losses::LossArm;
use raybundle::math::Vec3;
use raybundle::trainer::RenderMode;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "raybundle", version, about = "Ray-bundle neural SDF reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene of an analytic shape.
    Synth(SynthArgs),
    /// Train a field on a scene.
    Train(TrainArgs),
    /// Render views from a checkpoint.
    Render(RenderArgs),
    /// Extract a mesh from a checkpoint.
    Mesh(MeshArgs),
    /// Chamfer and PSNR report for a checkpoint or mesh.
    Eval(EvalArgs),
    /// Run the loss and bundle-setting ablation grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with synthesis settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `sphere[:r]`, `box[:h]`, `box:hx,hy,hz` or `torus[:R,r]`.
    #[arg(long)]
    pub shape: Option<String>,
    /// Training views.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub test_views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ground-truth surface points written with the scene.
    #[arg(long)]
    pub gt_points: Option<usize>,
}

/// Flags shared by the training commands; each overrides the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_parser = parse_render_mode)]
    pub render_mode: Option<RenderMode>,
    /// `3`, `3x3` or `5x7`.
    #[arg(long, value_parser = parse_patch)]
    pub bundle_size: Option<PatchSize>,
    #[arg(long)]
    pub bundles: Option<usize>,
    /// bundle-only, mean-var-l1, mean-var-l2, laplace or sobel.
    #[arg(long, value_parser = parse_arm)]
    pub loss_arm: Option<LossArm>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Total steps, overriding the epoch count.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Continue from the run directory's latest checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop (and checkpoint) once this many steps are complete.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Evaluate the final state into `report.json`.
    #[arg(long)]
    pub eval: bool,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `test`, `train`, `all` or a comma-separated list of view indices.
    #[arg(long, default_value = "test")]
    pub views: String,
    #[arg(long, value_parser = parse_render_mode)]
    pub render_mode: Option<RenderMode>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output OBJ path.
    #[arg(long)]
    pub out: PathBuf,
    /// Cells per axis over `[-1, 1]³`.
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    /// Scene whose normalization maps the mesh back to world coordinates.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "mesh", required_unless_present = "mesh")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate an OBJ file (world coordinates) instead of a checkpoint.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub scene: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub res: Option<usize>,
    /// Surface samples per point set for Chamfer.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_psnr: bool,
    #[arg(long, value_parser = parse_render_mode)]
    pub render_mode: Option<RenderMode>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated seeds; each row is trained once per seed.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    /// Grid spec (TOML); the standard eleven-row grid when omitted.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

fn parse_render_mode(s: &str) -> Result<RenderMode, String> {
    s.parse()
}

fn parse_patch(s: &str) -> Result<PatchSize, String> {
    s.parse()
}

fn parse_arm(s: &str) -> Result<LossArm, String> {
    LossArm::parse(s).ok_or_else(|| {
        let names: Vec<&str> = LossArm::ALL.iter().map(|a| a.name()).collect();
        format!("unknown loss arm `{s}` (expected one of {})", names.join(", "))
    })
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Result<Vec<u64>, _> = s.split(',').map(|t| t.trim().parse::<u64>()).collect();
    match seeds {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::usage(format!("--seeds: expected comma-separated integers, got `{s}`"))),
    }
}

pub fn parse_shape(s: &str) -> Result<AnalyticShape<f64>, CliError> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let nums: Vec<f64> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::usage(format!("--shape `{s}`: {e}")))?
    };
    let shape = match (kind, nums.as_slice()) {
        ("sphere", []) => AnalyticShape::sphere(0.5),
        ("sphere", [r]) => AnalyticShape::sphere(*r),
        ("box", []) => AnalyticShape::cube(0.4),
        ("box", [h]) => AnalyticShape::cube(*h),
        ("box", [x, y, z]) => AnalyticShape::Box {
            center: Vec3::zero(),
            half_extents: Vec3::new(*x, *y, *z),
        },
        ("torus", []) => AnalyticShape::torus(0.5, 0.2),
        ("torus", [a, b]) => AnalyticShape::torus(*a, *b),
        _ => return Err(CliError::usage(format!("--shape: cannot parse `{s}`"))),
    };
    shape.validate().map_err(CliError::usage)?;
    Ok(shape)
}

impl RunArgs {
    /// Config file (or defaults) with these flags applied, then resolved.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.resolve()
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.scene {
            cfg.scene = Some(s.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.deterministic |= self.deterministic;
        if let Some(m) = self.render_mode {
            cfg.train.render_mode = m;
        }
        if let Some(p) = self.bundle_size {
            set_patch(&mut cfg.train, p);
        }
        if let Some(b) = self.bundles {
            cfg.train.bundles = b;
        }
        if self.loss_arm.is_some() {
            cfg.loss_arm = self.loss_arm;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
            cfg.train.iterations = None;
        }
        if self.iterations.is_some() {
            cfg.train.iterations = self.iterations;
        }
    }
}

/// Odd squares use the bundle schedule; anything else a fixed rectangle.
pub fn set_patch(cfg: &mut raybundle::trainer::TrainConfig, p: PatchSize) {
    if p.rows == p.cols && p.rows % 2 == 1 {
        cfg.patch = BundleSchedule::Fixed { size: p.rows };
        cfg.patch_rect = None;
    } else {
        cfg.patch_rect = Some(p);
    }
}
