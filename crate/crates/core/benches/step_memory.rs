//! Tape and gradient memory of one training step across batch shapes.
//!
//! `cargo bench -p raybundle --bench step_memory`

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raybundle::fields::{FieldConfig, FieldParams};
use raybundle::geometry::PatchSize;
use raybundle::scene::{synth_scene, SynthConfig};
use raybundle::trainer::{measure_step, SamplingConfig, TrainConfig};

fn main() {
    let scene = synth_scene(&SynthConfig {
        train_views: 4,
        test_views: 1,
        resolution: 48,
        ground_truth_points: 100,
        ..SynthConfig::default()
    })
    .expect("synthetic scene");
    println!(
        "{:>5} {:>6} {:>6} {:>7} {:>6} {:>8} {:>12} {:>12} {:>14} {:>8}",
        "n", "patch", "dense", "sparse", "width", "samples", "tape MiB", "grad MiB", "B/(sample*w)", "ms"
    );
    let cases = [
        (16, 3, 32, 16, 32),
        (32, 3, 32, 16, 32),
        (64, 3, 32, 16, 32),
        (32, 3, 64, 16, 32),
        (32, 3, 32, 32, 32),
        (32, 5, 32, 16, 32),
        (32, 3, 32, 16, 64),
        (32, 1, 64, 16, 64),
        (229, 3, 64, 16, 64),
    ];
    for (n, s, dense, sparse, width) in cases {
        let field = FieldConfig {
            geo_width: width,
            color_width: width,
            ..FieldConfig::tiny()
        };
        let cfg = TrainConfig {
            bundles: n,
            patch_rect: Some(PatchSize::square(s)),
            sampling: SamplingConfig {
                n_dense: dense,
                n_sparse: sparse,
                guided: None,
            },
            eikonal_points: 0,
            field,
            ..TrainConfig::default()
        };
        let params = FieldParams::new(field, &mut ChaCha8Rng::seed_from_u64(0));
        let t0 = Instant::now();
        let fp = measure_step(&params, &scene, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .expect("step");
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let mib = |b: usize| b as f64 / (1024.0 * 1024.0);
        println!(
            "{n:>5} {:>6} {dense:>6} {sparse:>7} {width:>6} {:>8} {:>12.2} {:>12.2} {:>14.1} {ms:>8.1}",
            format!("{s}x{s}"),
            fp.samples,
            mib(fp.tape_bytes),
            mib(fp.gradient_bytes),
            fp.tape_bytes as f64 / (fp.samples * width) as f64,
        );
    }
}
