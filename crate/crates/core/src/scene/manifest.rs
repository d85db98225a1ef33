//! TOML scene manifest.
//!
//! ```toml
//! version = 1
//!
//! [normalization]
//! center = [0.0, 0.0, 0.0]
//! radius = 1.0
//!
//! [[views]]
//! name = "view_000"
//! image = "images/view_000.png"
//! mask = "masks/view_000.png"
//! width = 96
//! height = 96
//! intrinsics = [144.0, 144.0, 48.0, 48.0]
//! camera_to_world = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -3.0, 0.0, 0.0, 0.0, 1.0]
//! split = "train"
//! ```
//!
//! Optional top-level `ground_truth_points` names an `x y z` point file and
//! `[shape]` an analytic shape, both in world coordinates.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, read_image, read_mask, read_points, write_image, write_mask, write_points};
use super::{Normalization, SceneDataset, SceneError, Split, View};
use crate::fields::AnalyticShape;
use crate::geometry::{Camera, Intrinsics, Pose};

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_points: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<AnalyticShape<f64>>,
    #[serde(default)]
    pub views: Vec<ManifestView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub name: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub width: usize,
    pub height: usize,
    /// `fx, fy, cx, cy`
    pub intrinsics: [f64; 4],
    /// Row-major 4×4.
    pub camera_to_world: Vec<f64>,
    #[serde(default)]
    pub split: Split,
}

fn field(path: &Path, field: String, msg: impl Into<String>) -> SceneError {
    SceneError::Field {
        path: path.to_path_buf(),
        field,
        msg: msg.into(),
    }
}

/// Loads `dir/manifest.toml` and everything it references.
pub fn load_scene(dir: &Path) -> Result<SceneDataset, SceneError> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| SceneError::Parse {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    if m.version != MANIFEST_VERSION {
        return Err(field(
            &path,
            "version".into(),
            format!("unsupported version {} (expected {MANIFEST_VERSION})", m.version),
        ));
    }
    let norm = m.normalization;
    if !(norm.radius > 0.0 && norm.radius.is_finite()) || !norm.center.iter().all(|c| c.is_finite()) {
        return Err(field(&path, "normalization".into(), "radius must be positive and all values finite"));
    }
    if m.views.is_empty() {
        return Err(SceneError::NoViews { path });
    }
    if let Some(s) = &m.shape {
        s.validate().map_err(|e| field(&path, "shape".into(), e))?;
    }
    let mut views = Vec::with_capacity(m.views.len());
    for (i, v) in m.views.iter().enumerate() {
        let f = |name: &str| format!("views[{i}].{name}");
        if v.camera_to_world.len() != 16 {
            return Err(field(
                &path,
                f("camera_to_world"),
                format!("expected 16 values, got {}", v.camera_to_world.len()),
            ));
        }
        if !v.camera_to_world.iter().chain(&v.intrinsics).all(|x| x.is_finite()) {
            return Err(field(&path, f("camera_to_world"), "non-finite value"));
        }
        let bottom = &v.camera_to_world[12..];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(field(&path, f("camera_to_world"), "last row must be 0 0 0 1"));
        }
        let mat: [f64; 16] = v.camera_to_world[..].try_into().expect("length checked");
        let [fx, fy, cx, cy] = v.intrinsics;
        let cam = Camera::new(
            Intrinsics { fx, fy, cx, cy },
            Pose::from_matrix4(&mat),
            v.width,
            v.height,
        )
        .map_err(|e| field(&path, f("camera_to_world"), e.to_string()))?;
        let image = read_image(&dir.join(&v.image))?;
        if (image.width(), image.height()) != (v.width, v.height) {
            return Err(SceneError::Dimension {
                view: v.name.clone(),
                what: "image",
                got_w: image.width(),
                got_h: image.height(),
                want_w: v.width,
                want_h: v.height,
            });
        }
        let mask = match &v.mask {
            Some(p) => {
                let mk = read_mask(&dir.join(p))?;
                if (mk.width(), mk.height()) != (v.width, v.height) {
                    return Err(SceneError::Dimension {
                        view: v.name.clone(),
                        what: "mask",
                        got_w: mk.width(),
                        got_h: mk.height(),
                        want_w: v.width,
                        want_h: v.height,
                    });
                }
                Some(mk)
            }
            None => None,
        };
        views.push(View {
            name: v.name.clone(),
            camera: norm.camera_to_unit(&cam),
            image,
            mask,
            split: v.split,
        });
    }
    let ground_truth = match &m.ground_truth_points {
        Some(p) => Some(read_points(&dir.join(p))?),
        None => None,
    };
    Ok(SceneDataset {
        views,
        normalization: norm,
        shape: m.shape,
        ground_truth,
    })
}

/// Writes images, masks, points and `manifest.toml` under `dir`.
pub fn save_scene(scene: &SceneDataset, dir: &Path) -> Result<Manifest, SceneError> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let mut views = Vec::with_capacity(scene.views.len());
    for v in &scene.views {
        let image = format!("images/{}.png", v.name);
        write_image(&v.image, &dir.join(&image))?;
        let mask = match &v.mask {
            Some(mk) => {
                let p = format!("masks/{}.png", v.name);
                write_mask(mk, &dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        let cam = scene.normalization.camera_to_world(&v.camera);
        let k = cam.intrinsics();
        views.push(ManifestView {
            name: v.name.clone(),
            image,
            mask,
            width: cam.width(),
            height: cam.height(),
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
            camera_to_world: cam.pose().to_matrix4().to_vec(),
            split: v.split,
        });
    }
    let ground_truth_points = match &scene.ground_truth {
        Some(pts) => {
            let name = "gt_points.xyz".to_string();
            write_points(pts, &dir.join(&name))?;
            Some(name)
        }
        None => None,
    };
    let m = Manifest {
        version: MANIFEST_VERSION,
        normalization: scene.normalization,
        ground_truth_points,
        shape: scene.shape,
        views,
    };
    let path: PathBuf = dir.join(MANIFEST_NAME);
    let text = toml::to_string(&m).map_err(|e| SceneError::Parse {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(m)
}
