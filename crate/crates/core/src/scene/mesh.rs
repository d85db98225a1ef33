//! Triangle meshes, marching cubes and Wavefront OBJ I/O.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::{io_err, SceneError};
use crate::fields::SdfField;
use crate::math::Vec3;

const DEGENERATE_AREA: f64 = 1e-12;
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Option<Vec<Vec3<f64>>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Divergence-theorem volume; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }

    pub fn indices_valid(&self) -> bool {
        self.triangles
            .iter()
            .flatten()
            .all(|&i| i < self.vertices.len())
    }

    pub fn map_vertices(&mut self, f: impl Fn(Vec3<f64>) -> Vec3<f64>) {
        self.vertices.iter_mut().for_each(|v| *v = f(*v));
    }
}

/// Axis-aligned sampling box with `res` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub min: Vec3<f64>,
    pub max: Vec3<f64>,
    pub res: [usize; 3],
}

impl GridSpec {
    pub fn cube(half: f64, res: usize) -> Self {
        Self {
            min: Vec3::splat(-half),
            max: Vec3::splat(half),
            res: [res; 3],
        }
    }

    pub fn cell_size(&self) -> Vec3<f64> {
        let e = self.max - self.min;
        Vec3::new(
            e.x / self.res[0] as f64,
            e.y / self.res[1] as f64,
            e.z / self.res[2] as f64,
        )
    }

    fn point(&self, i: usize, j: usize, k: usize) -> Vec3<f64> {
        let c = self.cell_size();
        self.min + Vec3::new(i as f64 * c.x, j as f64 * c.y, k as f64 * c.z)
    }
}

// (dx, dy, dz) of each cube corner
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Zero level set of `field` sampled on `grid`.
///
/// Vertices on shared cube edges are emitted once; triangles are wound
/// outward for fields that are negative inside.
pub fn marching_cubes<F: SdfField<f64> + ?Sized>(
    field: &F,
    grid: &GridSpec,
) -> Result<TriangleMesh, SceneError> {
    if grid.res.iter().any(|&r| r < 2) {
        return Err(SceneError::Invalid(format!(
            "marching cubes needs at least 2 cells per axis, got {:?}",
            grid.res
        )));
    }
    let [nx, ny, nz] = grid.res.map(|r| r + 1);
    let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut points = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                points.push(grid.point(i, j, k));
            }
        }
    }
    let values: Vec<f64> = points
        .par_chunks(EVAL_CHUNK)
        .flat_map_iter(|c| field.sdf_batch(c))
        .collect();

    let mut mesh = TriangleMesh::default();
    let mut vertex_of: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner_idx = CORNERS.map(|[a, b, c]| idx(i + a, j + b, k + c));
                let v = corner_idx.map(|c| values[c]);
                let mut case = 0usize;
                for (bit, &val) in v.iter().enumerate() {
                    if val < 0.0 {
                        case |= 1 << bit;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut ev = [usize::MAX; 12];
                for (e, &[c0, c1]) in EDGES.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    // orient each edge from its lower grid point
                    let (a, b) = if corner_idx[c0] < corner_idx[c1] {
                        (c0, c1)
                    } else {
                        (c1, c0)
                    };
                    let key = (corner_idx[a], corner_idx[b]);
                    ev[e] = *vertex_of.entry(key).or_insert_with(|| {
                        let (va, vb) = (v[a], v[b]);
                        let t = if (vb - va).abs() < 1e-300 {
                            0.5
                        } else {
                            (va / (va - vb)).clamp(0.0, 1.0)
                        };
                        let (pa, pb) = (points[corner_idx[a]], points[corner_idx[b]]);
                        mesh.vertices.push(pa + (pb - pa) * t);
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [ev[tri[0] as usize], ev[tri[2] as usize], ev[tri[1] as usize]];
                    mesh.triangles.push(t);
                }
            }
        }
    }
    let mut kept = Vec::with_capacity(mesh.triangles.len());
    for (ti, t) in mesh.triangles.iter().enumerate() {
        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && mesh.triangle_area(ti) > DEGENERATE_AREA {
            kept.push(*t);
        }
    }
    mesh.triangles = kept;
    Ok(mesh)
}

/// Wavefront OBJ with 1-based indices; normals as `vn` when present.
pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), SceneError> {
    let mut s = String::with_capacity(64 * (mesh.vertices.len() + mesh.triangles.len()) + 64);
    let _ = writeln!(s, "# {} vertices, {} faces", mesh.vertices.len(), mesh.triangles.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    if let Some(ns) = &mesh.normals {
        for n in ns {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        if mesh.normals.is_some() {
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    std::fs::write(path, s).map_err(io_err(path))
}

/// Reads `v`, `vn` and `f` records; polygons are fan-triangulated.
pub fn parse_obj(path: &Path) -> Result<TriangleMesh, SceneError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let err = |line: usize, msg: String| SceneError::Parse {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some(tag @ ("v" | "vn")) => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|e| err(ln, format!("{e}")))?;
                if c.len() != 3 {
                    return Err(err(ln, format!("`{tag}` needs 3 coordinates")));
                }
                let p = Vec3::new(c[0], c[1], c[2]);
                if tag == "v" {
                    mesh.vertices.push(p);
                } else {
                    normals.push(p);
                }
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        match first.parse::<usize>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(err(ln, format!("bad face index `{tok}`"))),
                        }
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(err(ln, "face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if !mesh.indices_valid() {
        return Err(SceneError::Parse {
            path: path.to_path_buf(),
            msg: "face index out of range".into(),
        });
    }
    if !normals.is_empty() {
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}
