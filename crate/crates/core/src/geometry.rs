//! Pinhole cameras, pixel rays, ray bundles and the bundle distance mask.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{Mat3, Vec3};
use crate::raster::{ForegroundMask, RgbImage};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("camera rotation is not a proper rotation (orthonormality error {ortho:e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("{width}x{height} image cannot hold a {size} patch")]
    ImageTooSmall {
        width: usize,
        height: usize,
        size: PatchSize,
    },
    #[error("foreground mask has no foreground pixels")]
    EmptyMask,
    #[error("image is {got_w}x{got_h} but camera expects {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("bundle count must be at least 1")]
    NoBundles,
    #[error("bundle size {0} must be odd and at least 1")]
    EvenBundleSize(usize),
    #[error("distance mask needs a patch of at least 3x3, got {rows}x{cols}")]
    PatchTooSmall { rows: usize, cols: usize },
    #[error("expected {expected} surface points, got {got}")]
    PointCount { expected: usize, got: usize },
}

const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Scalar> Intrinsics<T> {
    pub fn matrix(&self) -> Mat3<T> {
        let (o, z) = (T::one(), T::zero());
        Mat3 {
            rows: [[self.fx, z, self.cx], [z, self.fy, self.cy], [z, z, o]],
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn translated(t: Vec3<T>) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Camera at `eye` looking at `target`; image x right, y down, z forward.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Self {
        let forward = (target - eye).normalized();
        let mut right = forward.cross(up);
        if right.norm() < T::lit(1e-9) {
            let alt = if forward.x.abs() < T::lit(0.9) {
                Vec3::new(T::one(), T::zero(), T::zero())
            } else {
                Vec3::new(T::zero(), T::one(), T::zero())
            };
            right = forward.cross(alt);
        }
        let right = right.normalized();
        let down = forward.cross(right);
        Self {
            rotation: Mat3::from_columns(right, down, forward),
            translation: eye,
        }
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_matrix4(&self) -> [T; 16] {
        let r = &self.rotation.rows;
        let t = self.translation;
        let (o, z) = (T::one(), T::zero());
        [
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            z, z, z, o,
        ]
    }

    pub fn from_matrix4(m: &[T; 16]) -> Self {
        Self {
            rotation: Mat3 {
                rows: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            },
            translation: Vec3::new(m[3], m[7], m[11]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    intrinsics: Intrinsics<T>,
    pose: Pose<T>,
    width: usize,
    height: usize,
}

impl<T: Scalar> Camera<T> {
    pub fn new(
        intrinsics: Intrinsics<T>,
        pose: Pose<T>,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let ortho = pose.rotation.orthonormality_error().to_f64_lossy();
        let det = pose.rotation.determinant().to_f64_lossy();
        if !(ortho <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(GeometryError::Intrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        let (w, h) = (T::lit(width as f64), T::lit(height as f64));
        if !(cx >= T::zero() && cx < w && cy >= T::zero() && cy < h) {
            return Err(GeometryError::Intrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            intrinsics,
            pose,
            width,
            height,
        })
    }

    pub fn intrinsics(&self) -> &Intrinsics<T> {
        &self.intrinsics
    }

    pub fn pose(&self) -> &Pose<T> {
        &self.pose
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn center(&self) -> Vec3<T> {
        self.pose.translation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
}

impl<T: Scalar> Ray<T> {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3<T>, direction: Vec3<T>) -> Self {
        Self {
            origin,
            direction: direction.normalized(),
        }
    }

    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }

    /// Entry and exit depths through a sphere, if the ray meets it ahead of
    /// the origin.
    pub fn sphere_interval(&self, center: Vec3<T>, radius: T) -> Option<(T, T)> {
        let oc = self.origin - center;
        let b = oc.dot(self.direction);
        let c = oc.norm_squared() - radius * radius;
        let disc = b * b - c;
        if disc <= T::zero() {
            return None;
        }
        let s = disc.sqrt();
        let (t0, t1) = (-b - s, -b + s);
        (t1 > T::zero()).then_some((t0.max(T::zero()), t1))
    }
}

/// Back-projects the continuous pixel position `(u, v)`; pixel centers sit at
/// half-integer coordinates.
pub fn pixel_to_ray<T: Scalar>(cam: &Camera<T>, u: T, v: T) -> Result<Ray<T>, GeometryError> {
    let (w, h) = (T::lit(cam.width as f64), T::lit(cam.height as f64));
    if !(u >= T::zero() && u < w && v >= T::zero() && v < h) {
        return Err(GeometryError::PixelOutOfBounds {
            u: u.to_f64_lossy(),
            v: v.to_f64_lossy(),
            width: cam.width,
            height: cam.height,
        });
    }
    let k = &cam.intrinsics;
    let local = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, T::one());
    let dir = cam.pose.rotation.mul_vec(local);
    Ok(Ray::new(cam.pose.translation, dir))
}

/// Ray through the center of integer pixel `(col, row)`.
pub fn pixel_center_ray<T: Scalar>(cam: &Camera<T>, col: usize, row: usize) -> Ray<T> {
    let half = T::lit(0.5);
    pixel_to_ray(cam, T::lit(col as f64) + half, T::lit(row as f64) + half)
        .expect("pixel center inside image")
}

/// Rectangular patch extent, `rows × cols` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSize {
    pub rows: usize,
    pub cols: usize,
}

impl PatchSize {
    pub const fn square(s: usize) -> Self {
        Self { rows: s, cols: s }
    }

    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Offset of the anchor cell from the top-left corner (center, rounded down).
    pub fn anchor_offset(&self) -> (usize, usize) {
        ((self.rows - 1) / 2, (self.cols - 1) / 2)
    }

    /// Row-major index of the anchor cell.
    pub fn anchor_index(&self) -> usize {
        let (r, c) = self.anchor_offset();
        r * self.cols + c
    }
}

impl fmt::Display for PatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for PatchSize {
    type Err = String;

    /// Accepts `"3"`, `"3x3"` or `"5x7"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad patch size {s:?}: {e}"))
        };
        let size = match s.split_once(['x', 'X', '×']) {
            Some((r, c)) => Self::new(parse(r)?, parse(c)?),
            None => Self::square(parse(s)?),
        };
        if size.rows == 0 || size.cols == 0 {
            return Err(format!("patch size {s:?} must be positive"));
        }
        Ok(size)
    }
}

/// A patch of camera rays treated as one sampling unit.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBundle<T> {
    /// Anchor pixel as (column, row).
    pub anchor: (usize, usize),
    pub size: PatchSize,
    /// Pixel coordinates (column, row) of every ray, row-major within the patch.
    pub pixels: Vec<(usize, usize)>,
    pub rays: Vec<Ray<T>>,
    pub true_colors: Vec<[T; 3]>,
    pub view: usize,
}

impl<T: Scalar> RayBundle<T> {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn central_ray(&self) -> &Ray<T> {
        &self.rays[self.size.anchor_index()]
    }
}

/// Draws `n` pixel indices uniformly over the image (or its foreground).
///
/// This is the single-ray sampler; [`build_bundles`] uses it for anchors, so
/// 1×1 bundles select exactly the same pixels under the same seed.
pub fn sample_pixels<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    n: usize,
    rng: &mut R,
    mask: Option<&ForegroundMask>,
) -> Result<Vec<(usize, usize)>, GeometryError> {
    match mask {
        Some(m) => {
            let fg: Vec<usize> = m
                .data()
                .iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i))
                .collect();
            if fg.is_empty() {
                return Err(GeometryError::EmptyMask);
            }
            Ok((0..n)
                .map(|_| {
                    let i = fg[rng.random_range(0..fg.len())];
                    (i % width, i / width)
                })
                .collect())
        }
        None => Ok((0..n)
            .map(|_| {
                let i = rng.random_range(0..width * height);
                (i % width, i / width)
            })
            .collect()),
    }
}

pub fn build_bundles<T: Scalar, R: Rng + ?Sized>(
    cam: &Camera<T>,
    image: &RgbImage<T>,
    view: usize,
    n: usize,
    size: PatchSize,
    rng: &mut R,
    mask: Option<&ForegroundMask>,
) -> Result<Vec<RayBundle<T>>, GeometryError> {
    let (w, h) = (image.width(), image.height());
    if (w, h) != (cam.width(), cam.height()) {
        return Err(GeometryError::DimensionMismatch {
            got_w: w,
            got_h: h,
            want_w: cam.width(),
            want_h: cam.height(),
        });
    }
    if n == 0 {
        return Err(GeometryError::NoBundles);
    }
    if size.rows == 0 || size.cols == 0 || w < size.cols || h < size.rows {
        return Err(GeometryError::ImageTooSmall {
            width: w,
            height: h,
            size,
        });
    }
    if let Some(m) = mask {
        if (m.width(), m.height()) != (w, h) {
            return Err(GeometryError::DimensionMismatch {
                got_w: m.width(),
                got_h: m.height(),
                want_w: w,
                want_h: h,
            });
        }
    }
    let (off_r, off_c) = size.anchor_offset();
    let anchors = sample_pixels(w, h, n, rng, mask)?;
    Ok(anchors
        .into_iter()
        .map(|(u, v)| {
            // shift the patch inward so it stays inside the image
            let col = u.clamp(off_c, w - size.cols + off_c);
            let row = v.clamp(off_r, h - size.rows + off_r);
            let (c0, r0) = (col - off_c, row - off_r);
            let mut pixels = Vec::with_capacity(size.pixel_count());
            let mut rays = Vec::with_capacity(size.pixel_count());
            let mut true_colors = Vec::with_capacity(size.pixel_count());
            for r in r0..r0 + size.rows {
                for c in c0..c0 + size.cols {
                    pixels.push((c, r));
                    rays.push(pixel_center_ray(cam, c, r));
                    true_colors.push(image.get(c, r));
                }
            }
            RayBundle {
                anchor: (col, row),
                size,
                pixels,
                rays,
                true_colors,
                view,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BundleSchedule {
    Fixed {
        size: usize,
    },
    /// Linear interpolation from `start` to `end` over `total_epochs`,
    /// rounded to the nearest odd size.
    Linear {
        start: usize,
        end: usize,
        total_epochs: usize,
    },
}

impl Default for BundleSchedule {
    fn default() -> Self {
        Self::Fixed { size: 3 }
    }
}

fn check_odd(s: usize) -> Result<usize, GeometryError> {
    if s == 0 || s % 2 == 0 {
        Err(GeometryError::EvenBundleSize(s))
    } else {
        Ok(s)
    }
}

pub fn bundle_size_schedule(epoch: usize, schedule: &BundleSchedule) -> Result<usize, GeometryError> {
    match *schedule {
        BundleSchedule::Fixed { size } => check_odd(size),
        BundleSchedule::Linear {
            start,
            end,
            total_epochs,
        } => {
            check_odd(start)?;
            check_odd(end)?;
            if total_epochs == 0 || epoch >= total_epochs {
                return Ok(end);
            }
            let frac = epoch as f64 / total_epochs as f64;
            let s = start as f64 + (end as f64 - start as f64) * frac;
            let odd = 2.0 * ((s - 1.0) / 2.0).round() + 1.0;
            Ok(odd.max(1.0) as usize)
        }
    }
}

/// Binary per-pixel mask over one bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceMask {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<bool>,
}

impl DistanceMask {
    pub fn all(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.values[r * self.cols + c]
    }

    /// Interior cells, the support of a valid 3×3 convolution.
    pub fn interior(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for r in 1..self.rows.saturating_sub(1) {
            for c in 1..self.cols.saturating_sub(1) {
                out.push(self.get(r, c));
            }
        }
        out
    }
}

/// Cell `(i, j)` is kept iff some in-bounds 8-neighbor lies closer than `tau`.
pub fn distance_mask<T: Scalar>(
    points: &[Vec3<T>],
    rows: usize,
    cols: usize,
    tau: T,
) -> Result<DistanceMask, GeometryError> {
    if rows < 3 || cols < 3 {
        return Err(GeometryError::PatchTooSmall { rows, cols });
    }
    if points.len() != rows * cols {
        return Err(GeometryError::PointCount {
            expected: rows * cols,
            got: points.len(),
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let p = points[(r as usize) * cols + c as usize];
            let mut nearest = T::infinity();
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (nr, nc) = (r + dr, c + dc);
                    if (dr, dc) == (0, 0)
                        || nr < 0
                        || nc < 0
                        || nr >= rows as isize
                        || nc >= cols as isize
                    {
                        continue;
                    }
                    let q = points[(nr as usize) * cols + nc as usize];
                    nearest = nearest.min(p.distance(q));
                }
            }
            values.push(nearest < tau);
        }
    }
    Ok(DistanceMask { rows, cols, values })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn simple_camera(width: usize, height: usize) -> Camera<f64> {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
        };
        Camera::new(k, Pose::identity(), width, height).unwrap()
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let cam = simple_camera(100, 100);
        let ray = pixel_to_ray(&cam, 50.0, 50.0).unwrap();
        assert_eq!(ray.direction, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(ray.origin, Vec3::zero());
    }

    #[test]
    fn off_axis_back_projection() {
        let cam = simple_camera(200, 100);
        let ray = pixel_to_ray(&cam, 150.0, 50.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ray.direction - Vec3::new(h, 0.0, h)).norm() < 1e-12);
    }

    #[test]
    fn translated_camera_origin() {
        let t = Vec3::new(1.5, -2.0, 0.25);
        let k = Intrinsics {
            fx: 80.0,
            fy: 90.0,
            cx: 31.0,
            cy: 17.0,
        };
        let cam = Camera::new(k, Pose::translated(t), 64, 48).unwrap();
        for (u, v) in [(0.0, 0.0), (63.9, 47.9), (12.5, 30.5)] {
            assert_eq!(pixel_to_ray(&cam, u, v).unwrap().origin, t);
        }
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let cam = simple_camera(100, 100);
        assert!(matches!(
            pixel_to_ray(&cam, 100.0, 5.0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
        assert!(pixel_to_ray(&cam, -0.1, 5.0).is_err());
    }

    #[test]
    fn camera_validation() {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
        };
        let mut bad = Pose::identity();
        bad.rotation.rows[0][0] = 1.01;
        assert!(matches!(
            Camera::new(k, bad, 100, 100),
            Err(GeometryError::NotARotation { .. })
        ));
        let mut reflect = Pose::identity();
        reflect.rotation.rows[2][2] = -1.0;
        assert!(Camera::new(k, reflect, 100, 100).is_err());
        let neg = Intrinsics { fx: -1.0, ..k };
        assert!(Camera::new(neg, Pose::identity(), 100, 100).is_err());
        let off = Intrinsics { cx: 100.0, ..k };
        assert!(Camera::new(off, Pose::identity(), 100, 100).is_err());
    }

    #[test]
    fn look_at_points_forward_axis_at_target() {
        let eye = Vec3::new(3.0f64, 1.0, -2.0);
        let pose = Pose::look_at(eye, Vec3::zero(), Vec3::new(0.0, 0.0, 1.0));
        assert!(pose.rotation.orthonormality_error() < 1e-12);
        assert!((pose.rotation.determinant() - 1.0).abs() < 1e-12);
        let fwd = pose.rotation.column(2);
        assert!((fwd - (-eye).normalized()).norm() < 1e-12);
        let m = pose.to_matrix4();
        assert_eq!(Pose::from_matrix4(&m), pose);
    }

    #[test]
    fn bundle_counts() {
        let cam = simple_camera(100, 100);
        let img = RgbImage::filled(100, 100, [0.5, 0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = build_bundles(&cam, &img, 0, 229, PatchSize::square(3), &mut rng, None).unwrap();
        assert_eq!(b.len(), 229);
        assert_eq!(b.iter().map(|x| x.len()).sum::<usize>(), 2061);
        let b = build_bundles(&cam, &img, 0, 114, PatchSize::square(3), &mut rng, None).unwrap();
        assert_eq!(b.iter().map(|x| x.len()).sum::<usize>(), 1026);
        let b = build_bundles(&cam, &img, 0, 1, PatchSize::square(1), &mut rng, None).unwrap();
        assert_eq!(b[0].len(), 1);
        assert_eq!(b[0].pixels[0], b[0].anchor);
    }

    #[test]
    fn bundles_stay_in_bounds_and_follow_mask() {
        let cam = simple_camera(100, 100);
        let img = RgbImage::filled(100, 100, [0.1, 0.2, 0.3]);
        let mut fg = vec![false; 100 * 100];
        // foreground only in the top-left corner forces clamping
        fg[0] = true;
        fg[1] = true;
        let mask = ForegroundMask::new(100, 100, fg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let size = PatchSize::new(5, 7);
        let b = build_bundles(&cam, &img, 2, 50, size, &mut rng, Some(&mask)).unwrap();
        for bundle in &b {
            assert_eq!(bundle.len(), 35);
            assert_eq!(bundle.anchor, (3, 2));
            assert_eq!(bundle.pixels[size.anchor_index()], bundle.anchor);
            assert!(bundle.pixels.iter().all(|&(c, r)| c < 100 && r < 100));
            assert_eq!(bundle.view, 2);
        }
        let empty = ForegroundMask::new(100, 100, vec![false; 10000]).unwrap();
        assert_eq!(
            build_bundles(&cam, &img, 0, 1, size, &mut rng, Some(&empty)),
            Err(GeometryError::EmptyMask)
        );
        let tiny = RgbImage::filled(4, 4, [0.0; 3]);
        let k = Intrinsics {
            fx: 4.0,
            fy: 4.0,
            cx: 2.0,
            cy: 2.0,
        };
        let small_cam = Camera::new(k, Pose::identity(), 4, 4).unwrap();
        assert!(matches!(
            build_bundles(&small_cam, &tiny, 0, 1, PatchSize::square(5), &mut rng, None),
            Err(GeometryError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn schedule_examples() {
        let fixed = BundleSchedule::Fixed { size: 3 };
        for e in [0, 17, 10_000] {
            assert_eq!(bundle_size_schedule(e, &fixed).unwrap(), 3);
        }
        let lin = BundleSchedule::Linear {
            start: 7,
            end: 3,
            total_epochs: 100,
        };
        assert_eq!(bundle_size_schedule(0, &lin).unwrap(), 7);
        assert_eq!(bundle_size_schedule(50, &lin).unwrap(), 5);
        assert_eq!(bundle_size_schedule(100, &lin).unwrap(), 3);
        assert_eq!(
            bundle_size_schedule(0, &BundleSchedule::Fixed { size: 4 }),
            Err(GeometryError::EvenBundleSize(4))
        );
        let even = BundleSchedule::Linear {
            start: 6,
            end: 3,
            total_epochs: 10,
        };
        assert!(bundle_size_schedule(1, &even).is_err());
    }

    fn planar_grid(spacing: f64) -> Vec<Vec3<f64>> {
        let mut pts = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                pts.push(Vec3::new(c as f64 * spacing, r as f64 * spacing, 2.0));
            }
        }
        pts
    }

    #[test]
    fn distance_mask_examples() {
        let same = vec![Vec3::new(0.3, 0.1, 1.0); 9];
        assert!(distance_mask(&same, 3, 3, 0.05).unwrap().values.iter().all(|&b| b));

        let grid = planar_grid(0.01);
        assert!(distance_mask(&grid, 3, 3, 0.05).unwrap().values.iter().all(|&b| b));

        let tau = 0.05;
        let mut pts = planar_grid(0.01);
        // push the corner back along the viewing ray (+z)
        pts[0].z += 10.0 * tau;
        let m = distance_mask(&pts, 3, 3, tau).unwrap();
        assert!(!m.values[0]);
        assert!(m.values[1..].iter().all(|&b| b));

        assert!(matches!(
            distance_mask(&pts[..4], 2, 2, tau),
            Err(GeometryError::PatchTooSmall { .. })
        ));
    }
}
