//! The loss-arm and bundle-setting ablation grid.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use raybundle::geometry::PatchSize;
use raybundle::losses::LossArm;
use raybundle::scene::SceneDataset;
use serde::{Deserialize, Serialize};

use crate::args::set_patch;
use crate::config::RunConfig;
use crate::error::{io, CliError};
use crate::pipeline;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRow {
    pub name: String,
    pub arm: LossArm,
    /// `rows x cols`, e.g. `"5x7"`.
    pub size: String,
    pub bundles: usize,
}

impl GridRow {
    fn new(name: &str, arm: LossArm, size: &str, bundles: usize) -> Self {
        Self {
            name: name.into(),
            arm,
            size: size.into(),
            bundles,
        }
    }

    pub fn patch(&self) -> Result<PatchSize, CliError> {
        self.size
            .parse()
            .map_err(|e| CliError::usage(format!("grid row {}: {e}", self.name)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub rows: Vec<GridRow>,
}

impl Grid {
    /// Loss arms at 3×3 / 229 (exp1–exp5), then bundle sizes and counts
    /// with the full loss (exp6–exp11).
    pub fn standard() -> Self {
        use LossArm::*;
        let mut rows: Vec<GridRow> = LossArm::ALL
            .iter()
            .enumerate()
            .map(|(i, &arm)| GridRow::new(&format!("exp{}", i + 1), arm, "3x3", 229))
            .collect();
        rows.extend([
            GridRow::new("exp6", Sobel, "3x3", 229),
            GridRow::new("exp7", Sobel, "5x7", 229),
            GridRow::new("exp8", Sobel, "7x7", 229),
            GridRow::new("exp9", Sobel, "3x3", 57),
            GridRow::new("exp10", Sobel, "3x3", 114),
            GridRow::new("exp11", Sobel, "3x3", 229),
        ]);
        Self { rows }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let grid: Self = toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if grid.rows.is_empty() {
            return Err(CliError::usage(format!("{}: grid has no rows", path.display())));
        }
        Ok(grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub name: String,
    pub arm: LossArm,
    pub size: String,
    pub bundles: usize,
    pub seeds: Vec<u64>,
    pub chamfer: Vec<f64>,
    pub mean_chamfer: f64,
    /// Run directory per seed (shared when an earlier row had the same config).
    pub runs: Vec<PathBuf>,
}

/// Config for one grid cell.
pub fn row_config(base: &RunConfig, row: &GridRow, seed: u64) -> Result<RunConfig, CliError> {
    let mut cfg = base.clone();
    cfg.loss_arm = Some(row.arm);
    set_patch(&mut cfg.train, row.patch()?);
    cfg.train.bundles = row.bundles;
    cfg.train.seed = seed;
    cfg.eval.psnr = false;
    cfg.resolve()
}

/// Trains and scores every row for every seed. Cells whose resolved
/// training config repeats an earlier cell reuse its result.
pub fn run_grid(
    base: &RunConfig,
    scene: &SceneDataset,
    grid: &Grid,
    seeds: &[u64],
    out: &Path,
    quiet: bool,
) -> Result<Vec<RowResult>, CliError> {
    let mut done: HashMap<String, (f64, PathBuf)> = HashMap::new();
    let mut results = Vec::with_capacity(grid.rows.len());
    for row in &grid.rows {
        let mut chamfer = Vec::with_capacity(seeds.len());
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = row_config(base, row, seed)?;
            let dir = out.join(format!("{}_seed{seed}", row.name));
            cfg.out = Some(dir.clone());
            let hash = cfg.train.hash();
            let (c, run) = match done.get(&hash) {
                Some(hit) => hit.clone(),
                None => {
                    if !quiet {
                        eprintln!("{} ({}, {}, {} bundles), seed {seed}", row.name, row.arm.label(), row.size, row.bundles);
                    }
                    let o = pipeline::train_run(&cfg, scene, &dir, false, None, true)?;
                    let (report, _) = pipeline::evaluate(&o.state.params, scene, &cfg.train, &cfg.eval, hash.clone())?;
                    pipeline::write_report(&report, &dir.join("report.json"))?;
                    let c = report.chamfer.expect("chamfer is always computed");
                    done.insert(hash, (c, dir.clone()));
                    (c, dir)
                }
            };
            chamfer.push(c);
            runs.push(run);
        }
        let mean_chamfer = chamfer.iter().sum::<f64>() / chamfer.len() as f64;
        results.push(RowResult {
            name: row.name.clone(),
            arm: row.arm,
            size: row.size.clone(),
            bundles: row.bundles,
            seeds: seeds.to_vec(),
            chamfer,
            mean_chamfer,
            runs,
        });
    }
    Ok(results)
}

/// Markdown table: method, loss, bundle size, bundle count, Chamfer.
pub fn format_table(results: &[RowResult]) -> String {
    let seeds = results.first().map(|r| r.seeds.clone()).unwrap_or_default();
    let mut s = String::from("| Method | Loss | BundleSize | BundleNum | Chamfer |");
    for seed in &seeds {
        let _ = write!(s, " seed {seed} |");
    }
    s.push_str("\n|---|---|---|---|---|");
    s.push_str(&"---|".repeat(seeds.len()));
    s.push('\n');
    for r in results {
        let _ = write!(
            s,
            "| {} | {} | {} | {} | {:.5} |",
            r.name,
            r.arm.label(),
            r.size.replace('x', " × "),
            r.bundles,
            r.mean_chamfer
        );
        for c in &r.chamfer {
            let _ = write!(s, " {c:.5} |");
        }
        s.push('\n');
    }
    s
}

pub fn write_results(results: &[RowResult], out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(io(out))?;
    let md = out.join("ablation.md");
    std::fs::write(&md, format_table(results)).map_err(io(&md))?;
    let json = out.join("ablation.json");
    let text = serde_json::to_string_pretty(results).expect("results serialize");
    std::fs::write(&json, text + "\n").map_err(io(&json))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_has_all_rows() {
        let g = Grid::standard();
        let names: Vec<&str> = g.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, (1..=11).map(|i| format!("exp{i}")).collect::<Vec<_>>());
        assert!(g.rows.iter().any(|r| r.patch().unwrap() == PatchSize::new(5, 7)));
        let counts: Vec<usize> = g.rows[8..].iter().map(|r| r.bundles).collect();
        assert_eq!(counts, [57, 114, 229]);
        let back: Grid = toml::from_str(&toml::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rectangular_rows_use_a_fixed_patch() {
        let g = Grid::standard();
        let cfg = row_config(&RunConfig::default(), &g.rows[6], 4).unwrap();
        assert_eq!(cfg.train.patch_rect, Some(PatchSize::new(5, 7)));
        assert_eq!(cfg.train.seed, 4);
        let cfg = row_config(&RunConfig::default(), &g.rows[7], 4).unwrap();
        assert_eq!(cfg.train.patch_rect, None);
        assert_eq!(cfg.train.patch_at(0).unwrap(), PatchSize::square(7));
    }

    #[test]
    fn table_lists_every_row() {
        let r = RowResult {
            name: "exp7".into(),
            arm: LossArm::Sobel,
            size: "5x7".into(),
            bundles: 229,
            seeds: vec![0, 1],
            chamfer: vec![0.01, 0.03],
            mean_chamfer: 0.02,
            runs: vec![],
        };
        let t = format_table(&[r]);
        assert!(t.contains("| exp7 | M+V l2 + Sobel | 5 × 7 | 229 | 0.02000 | 0.01000 | 0.03000 |"), "{t}");
    }
}
