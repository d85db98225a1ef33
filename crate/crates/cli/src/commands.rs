use std::path::Path;

use raybundle::scene::{load_scene, parse_obj, save_scene, synth_scene, write_image, write_obj, EvalReport, SynthConfig};
use raybundle::trainer::{load_checkpoint, render_view};

use crate::ablate::{self, Grid};
use crate::args::{parse_seeds, parse_shape, AblateArgs, EvalArgs, MeshArgs, RenderArgs, SynthArgs, TrainArgs};
use crate::config::{EvalOptions, RunConfig, RESOLVED_CONFIG};
use crate::error::{io, CliError};
use crate::pipeline::{self, init_threads};

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io(p))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = &a.shape {
        cfg.shape = parse_shape(s)?;
    }
    if let Some(v) = a.views {
        cfg.train_views = v;
    }
    if let Some(v) = a.test_views {
        cfg.test_views = v;
    }
    if let Some(r) = a.res {
        cfg.resolution = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.gt_points {
        cfg.ground_truth_points = n;
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let scene = synth_scene(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(io(&a.out))?;
    save_scene(&scene, &a.out)?;
    let p = a.out.join("synth.toml");
    std::fs::write(&p, toml::to_string(&cfg).expect("synth config serializes")).map_err(io(&p))?;
    println!(
        "wrote {} views ({} test) to {}",
        scene.views.len(),
        scene.test_views().len(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut run = a.run.clone();
    if a.resume && run.config.is_none() {
        let out = run.out.as_ref().ok_or_else(|| CliError::usage("--resume needs --out"))?;
        run.config = Some(out.join(RESOLVED_CONFIG));
    }
    let cfg = run.run_config()?;
    init_threads(cfg.threads);
    let scene = load_scene(cfg.scene_dir()?)?;
    let out = cfg.out_dir()?.to_path_buf();
    let o = pipeline::train_run(&cfg, &scene, &out, a.resume, a.stop_after, a.quiet)?;
    let s = &o.summary;
    println!(
        "trained {} steps (now at {}/{}); checkpoint {}",
        s.steps_run,
        s.final_step,
        s.total_steps,
        pipeline::latest_checkpoint(&out).display()
    );
    if a.eval && s.final_step == s.total_steps {
        let (report, mesh) = pipeline::evaluate(&o.state.params, &scene, &cfg.train, &cfg.eval, cfg.train.hash())?;
        write_obj(&mesh, &out.join("mesh.obj"))?;
        pipeline::write_report(&report, &out.join("report.json"))?;
        print_report(&report);
    }
    Ok(())
}

fn view_list(spec: &str, scene: &raybundle::scene::SceneDataset) -> Result<Vec<usize>, CliError> {
    let ids = match spec {
        "test" => scene.test_views(),
        "train" => scene.train_views(),
        "all" => (0..scene.views.len()).collect(),
        _ => spec
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::usage(format!("--views `{spec}`: {e}")))?,
    };
    if let Some(&bad) = ids.iter().find(|&&i| i >= scene.views.len()) {
        return Err(CliError::usage(format!(
            "--views: index {bad} out of range (scene has {} views)",
            scene.views.len()
        )));
    }
    Ok(ids)
}

pub fn render(a: RenderArgs) -> Result<(), CliError> {
    init_threads(a.threads);
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let scene = load_scene(&a.scene)?;
    let mode = a.render_mode.unwrap_or(ck.config.render_mode);
    std::fs::create_dir_all(&a.out).map_err(io(&a.out))?;
    for i in view_list(&a.views, &scene)? {
        let v = &scene.views[i];
        let img = render_view(&ck.state.params, &v.camera, &ck.config, mode, i as u64)?;
        let p = a.out.join(format!("{}.png", v.name));
        write_image(&img, &p)?;
        let db = raybundle::scene::psnr(&img, &v.image, 1.0)?;
        println!("{}: {db:.2} dB", p.display());
    }
    Ok(())
}

pub fn mesh(a: MeshArgs) -> Result<(), CliError> {
    init_threads(a.threads);
    if a.res < 2 {
        return Err(CliError::usage("--res must be at least 2"));
    }
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let scene = a.scene.as_deref().map(load_scene).transpose()?;
    let mesh = pipeline::extract_mesh(&ck.state.params, scene.as_ref(), a.res)?;
    write_obj(&mesh, &a.out)?;
    println!(
        "wrote {} ({} vertices, {} triangles)",
        a.out.display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    init_threads(a.threads);
    let scene = load_scene(&a.scene)?;
    let mut opts = EvalOptions::default();
    if let Some(r) = a.res {
        opts.mesh_resolution = r;
    }
    if let Some(n) = a.points {
        opts.chamfer_points = n;
    }
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    opts.psnr = !a.no_psnr;
    opts.validate()?;
    let report = match (&a.checkpoint, &a.mesh) {
        (Some(ck), _) => {
            let ck = load_checkpoint(ck, None)?;
            let mut cfg = ck.config.clone();
            if let Some(m) = a.render_mode {
                cfg.render_mode = m;
            }
            let (report, mesh) = pipeline::evaluate(&ck.state.params, &scene, &cfg, &opts, ck.config_hash)?;
            let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            std::fs::create_dir_all(dir).map_err(io(dir))?;
            write_obj(&mesh, &dir.join("mesh.obj"))?;
            report
        }
        (None, Some(path)) => {
            let mesh = parse_obj(path)?;
            let mut report = EvalReport::new(String::new());
            report.mesh_vertices = mesh.vertices.len();
            report.mesh_triangles = mesh.triangles.len();
            let (c, n) = pipeline::mesh_chamfer(&mesh, &scene, &opts)?;
            report.chamfer = Some(c);
            report.chamfer_points = n;
            report
        }
        (None, None) => return Err(CliError::usage("eval needs --checkpoint or --mesh")),
    };
    pipeline::write_report(&report, &a.out)?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &EvalReport) {
    if let Some(c) = r.chamfer {
        println!("{}: {c:.6} ({} points)", r.chamfer_kind, r.chamfer_points);
    }
    for v in &r.psnr {
        println!("PSNR {}: {:.2} dB", v.view, v.psnr);
    }
    if let Some(m) = r.mean_psnr {
        println!("mean PSNR: {m:.2} dB");
    }
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let base: RunConfig = a.run.run_config()?;
    init_threads(base.threads);
    let seeds = parse_seeds(&a.seeds)?;
    let grid = match &a.grid {
        Some(p) => Grid::load(p)?,
        None => Grid::standard(),
    };
    for row in &grid.rows {
        ablate::row_config(&base, row, seeds[0])?;
    }
    let scene = load_scene(base.scene_dir()?)?;
    let out = base.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(io(&out))?;
    base.save(&out.join(RESOLVED_CONFIG))?;
    let results = ablate::run_grid(&base, &scene, &grid, &seeds, &out, a.quiet)?;
    ablate::write_results(&results, &out)?;
    print!("{}", ablate::format_table(&results));
    Ok(())
}
