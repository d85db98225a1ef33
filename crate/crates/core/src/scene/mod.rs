//! Scene datasets: manifest I/O, synthetic scenes, meshing and metrics.

mod eval;
mod kdtree;
mod manifest;
mod mesh;
mod synth;
mod tables;

use std::path::{Path, PathBuf};

use crate::fields::AnalyticShape;
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::math::Vec3;
use crate::raster::{ForegroundMask, RgbImage};

pub use eval::{chamfer, psnr, sample_mesh_surface, EvalReport, ViewPsnr, PSNR_CAP};
pub use kdtree::KdTree;
pub use manifest::{load_scene, save_scene, Manifest, ManifestView, MANIFEST_NAME, MANIFEST_VERSION};
pub use mesh::{marching_cubes, parse_obj, write_obj, GridSpec, TriangleMesh};
pub use synth::{synth_scene, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: field `{field}`: {msg}")]
    Field {
        path: PathBuf,
        field: String,
        msg: String,
    },
    #[error("{path}: manifest lists no views")]
    NoViews { path: PathBuf },
    #[error("view `{view}`: {what} is {got_w}x{got_h} but the manifest says {want_w}x{want_h}")]
    Dimension {
        view: String,
        what: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("{path}: image error: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// Similarity mapping world coordinates into the unit-sphere frame.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            radius: 1.0,
        }
    }
}

impl Normalization {
    pub fn to_unit(&self, p: Vec3<f64>) -> Vec3<f64> {
        (p - Vec3::from_array(self.center)) / self.radius
    }

    pub fn to_world(&self, p: Vec3<f64>) -> Vec3<f64> {
        p * self.radius + Vec3::from_array(self.center)
    }

    /// Expresses a world-frame camera in the unit frame.
    pub fn camera_to_unit(&self, cam: &Camera<f64>) -> Camera<f64> {
        let pose = Pose {
            rotation: cam.pose().rotation,
            translation: self.to_unit(cam.pose().translation),
        };
        Camera::new(*cam.intrinsics(), pose, cam.width(), cam.height())
            .expect("rotation and intrinsics unchanged")
    }

    pub fn camera_to_world(&self, cam: &Camera<f64>) -> Camera<f64> {
        let pose = Pose {
            rotation: cam.pose().rotation,
            translation: self.to_world(cam.pose().translation),
        };
        Camera::new(*cam.intrinsics(), pose, cam.width(), cam.height())
            .expect("rotation and intrinsics unchanged")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    /// Camera in the unit frame.
    pub camera: Camera<f64>,
    pub image: RgbImage<f64>,
    pub mask: Option<ForegroundMask>,
    pub split: Split,
}

/// Views and ground truth, with every camera in the unit frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub views: Vec<View>,
    pub normalization: Normalization,
    /// Exact shape in world coordinates, for synthetic scenes.
    pub shape: Option<AnalyticShape<f64>>,
    /// Ground-truth surface points in world coordinates.
    pub ground_truth: Option<Vec<Vec3<f64>>>,
}

impl SceneDataset {
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].split == split)
            .collect()
    }

    pub fn train_views(&self) -> Vec<usize> {
        self.split(Split::Train)
    }

    pub fn test_views(&self) -> Vec<usize> {
        self.split(Split::Test)
    }
}

/// Camera with `f = focal_scale · res` and a centered principal point.
pub fn look_at_camera(eye: Vec3<f64>, target: Vec3<f64>, width: usize, height: usize, focal_scale: f64) -> Camera<f64> {
    let dir = (target - eye).normalized();
    let up = if dir.z.abs() > 0.99 {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    };
    let f = focal_scale * width.max(height) as f64;
    Camera::new(
        Intrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        },
        Pose::look_at(eye, target, up),
        width,
        height,
    )
    .expect("look-at pose is a rotation")
}

/// Writes an image as 8-bit RGB PNG with `round(255·c)` quantization.
pub fn write_image(image: &RgbImage<f64>, path: &Path) -> Result<(), SceneError> {
    let mut buf = image::RgbImage::new(image.width() as u32, image.height() as u32);
    for (i, px) in image.pixels().iter().enumerate() {
        let (u, v) = ((i % image.width()) as u32, (i / image.width()) as u32);
        buf.put_pixel(u, v, image::Rgb(px.map(quantize)));
    }
    buf.save(path).map_err(|e| SceneError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn quantize(c: f64) -> u8 {
    (255.0 * c.clamp(0.0, 1.0)).round() as u8
}

pub fn read_image(path: &Path) -> Result<RgbImage<f64>, SceneError> {
    let img = image::open(path)
        .map_err(|e| SceneError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img
        .pixels()
        .map(|p| p.0.map(|c| c as f64 / 255.0))
        .collect();
    Ok(RgbImage::from_pixels(w, h, pixels).expect("decoder yields w*h pixels"))
}

pub fn write_mask(mask: &ForegroundMask, path: &Path) -> Result<(), SceneError> {
    let mut buf = image::GrayImage::new(mask.width() as u32, mask.height() as u32);
    for (i, &b) in mask.data().iter().enumerate() {
        let (u, v) = ((i % mask.width()) as u32, (i / mask.width()) as u32);
        buf.put_pixel(u, v, image::Luma([if b { 255 } else { 0 }]));
    }
    buf.save(path).map_err(|e| SceneError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn read_mask(path: &Path) -> Result<ForegroundMask, SceneError> {
    let img = image::open(path)
        .map_err(|e| SceneError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] >= 128).collect();
    Ok(ForegroundMask::new(w, h, data).expect("decoder yields w*h pixels"))
}

/// Points as `x y z` lines.
pub fn write_points(points: &[Vec3<f64>], path: &Path) -> Result<(), SceneError> {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(points.len() * 64);
    for p in points {
        let _ = writeln!(s, "{:e} {:e} {:e}", p.x, p.y, p.z);
    }
    std::fs::write(path, s).map_err(io_err(path))
}

pub fn read_points(path: &Path) -> Result<Vec<Vec3<f64>>, SceneError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| SceneError::Parse {
                    path: path.to_path_buf(),
                    msg: format!("line {}: {e}", i + 1),
                })?;
            match v[..] {
                [x, y, z] => Ok(Vec3::new(x, y, z)),
                _ => Err(SceneError::Parse {
                    path: path.to_path_buf(),
                    msg: format!("line {}: expected 3 coordinates, got {}", i + 1, v.len()),
                }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
