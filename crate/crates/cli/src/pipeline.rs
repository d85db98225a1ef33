//! Training and evaluation steps shared by the subcommands.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raybundle::fields::FieldParams;
use raybundle::scene::{
    chamfer, marching_cubes, psnr, sample_mesh_surface, EvalReport, GridSpec, SceneDataset, TriangleMesh, ViewPsnr,
};
use raybundle::trainer::{self, load_checkpoint, RenderMode, RunOptions, RunSummary, TrainConfig, TrainState};

use crate::config::{EvalOptions, RunConfig, RESOLVED_CONFIG};
use crate::error::{io, CliError};

pub const LOG_NAME: &str = "train.ndjson";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST: &str = "latest.ckpt";

/// Sizes the global rayon pool; later calls keep the first size.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn latest_checkpoint(run_dir: &Path) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(LATEST)
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub summary: RunSummary,
}

/// Trains into `run_dir`, writing the resolved config first.
///
/// With `resume`, continues from the run's latest checkpoint (which must
/// carry the same config hash) and appends to its log.
pub fn train_run(
    cfg: &RunConfig,
    scene: &SceneDataset,
    run_dir: &Path,
    resume: bool,
    stop_after: Option<usize>,
    quiet: bool,
) -> Result<TrainOutcome, CliError> {
    std::fs::create_dir_all(run_dir).map_err(io(run_dir))?;
    cfg.save(&run_dir.join(RESOLVED_CONFIG))?;
    let hash = cfg.train.hash();
    let mut state = if resume {
        let ck = load_checkpoint(&latest_checkpoint(run_dir), Some(&hash))?;
        ck.state
    } else {
        TrainState::new(&cfg.train)
    };
    let log_path = run_dir.join(LOG_NAME);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)
        .map_err(io(&log_path))?;
    let mut log = BufWriter::new(file);
    let total = cfg.train.total_steps(scene.train_views().len());
    let every = (total / 20).max(1);
    let mut progress = |r: &trainer::StepRecord| {
        if !quiet && (r.step % every == 0 || r.step + 1 == total) {
            eprintln!(
                "step {:>6}/{total}  loss {:.5}  color {:.5}  eik {:.5}  beta {:.4}  {:.0} ms",
                r.step, r.loss.total, r.loss.c, r.loss.eik, r.beta, r.wall_ms
            );
        }
    };
    let summary = trainer::train(
        &mut state,
        scene,
        &cfg.train,
        RunOptions {
            log: Some(&mut log),
            checkpoint_dir: Some(run_dir.join(CHECKPOINT_DIR)),
            stop_after,
            on_step: Some(&mut progress),
        },
    )?;
    log.flush().map_err(io(&log_path))?;
    Ok(TrainOutcome { state, summary })
}

/// Zero level set of the field over `[-1, 1]³`, in world coordinates.
pub fn extract_mesh(params: &FieldParams<f64>, scene: Option<&SceneDataset>, res: usize) -> Result<TriangleMesh, CliError> {
    let mut mesh = marching_cubes(params, &GridSpec::cube(1.0, res))?;
    if let Some(s) = scene {
        let n = s.normalization;
        mesh.map_vertices(|v| n.to_world(v));
    }
    Ok(mesh)
}

/// Chamfer between mesh surface samples and the scene's ground truth.
///
/// Scenes with an analytic shape are compared against fresh samples of that
/// shape (at the same count as the mesh); otherwise the stored ground-truth
/// points are used.
pub fn mesh_chamfer(mesh: &TriangleMesh, scene: &SceneDataset, opts: &EvalOptions) -> Result<(f64, usize), CliError> {
    if mesh.is_empty() {
        return Err(CliError::numerical("extracted mesh is empty (the field has no zero crossing)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pts = sample_mesh_surface(mesh, opts.chamfer_points, &mut rng)?;
    let gt = match (&scene.shape, &scene.ground_truth) {
        (Some(shape), _) => shape.sample_surface(opts.chamfer_points, &mut rng),
        (None, Some(points)) => points.clone(),
        (None, None) => return Err(CliError::data("scene has no ground-truth shape or points")),
    };
    Ok((chamfer(&pts, &gt)?, pts.len()))
}

pub fn test_view_psnr(
    params: &FieldParams<f64>,
    scene: &SceneDataset,
    cfg: &TrainConfig,
    mode: RenderMode,
) -> Result<Vec<ViewPsnr>, CliError> {
    scene
        .test_views()
        .into_iter()
        .map(|i| {
            let v = &scene.views[i];
            let img = trainer::render_view(params, &v.camera, cfg, mode, i as u64)?;
            Ok(ViewPsnr {
                view: v.name.clone(),
                psnr: psnr(&img, &v.image, 1.0)?,
            })
        })
        .collect()
}

/// Mesh, Chamfer and (optionally) PSNR for trained parameters.
pub fn evaluate(
    params: &FieldParams<f64>,
    scene: &SceneDataset,
    cfg: &TrainConfig,
    opts: &EvalOptions,
    config_hash: String,
) -> Result<(EvalReport, TriangleMesh), CliError> {
    let mut report = EvalReport::new(config_hash);
    let t = Instant::now();
    let mesh = extract_mesh(params, Some(scene), opts.mesh_resolution)?;
    report.timings.insert("mesh".into(), t.elapsed().as_secs_f64());
    report.mesh_vertices = mesh.vertices.len();
    report.mesh_triangles = mesh.triangles.len();
    let t = Instant::now();
    let (c, n) = mesh_chamfer(&mesh, scene, opts)?;
    report.chamfer = Some(c);
    report.chamfer_points = n;
    report.timings.insert("chamfer".into(), t.elapsed().as_secs_f64());
    if opts.psnr {
        let t = Instant::now();
        report.set_psnr(test_view_psnr(params, scene, cfg, cfg.render_mode)?);
        report.timings.insert("psnr".into(), t.elapsed().as_secs_f64());
    }
    Ok((report, mesh))
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, report.to_json() + "\n").map_err(io(path))
}
