//! TSDF fusion, isosurface extraction, mesh I/O, and geometry/image metrics.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::img::{check_same_dims, ImageF, ImageRgb};

/// Truncation distance as a multiple of the voxel size.
pub const TRUNC_VOXELS: f64 = 5.0;
/// Default TSDF voxel edge length, meters.
pub const DEFAULT_VOXEL: f64 = 0.004;
/// Default mesh-metric distance threshold, meters.
pub const DEFAULT_TAU: f64 = 0.005;
/// Default surface sample count per mesh for chamfer distance.
pub const DEFAULT_CHAMFER_SAMPLES: usize = 100_000;

/// Truncated signed-distance volume on a regular grid. `dims` counts grid
/// points per axis; cells are the unit cubes between them.
#[derive(Debug, Clone)]
pub struct TsdfVolume {
    pub origin: Vector3<f64>,
    pub voxel: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    pub fn new(origin: Vector3<f64>, voxel: f64, dims: [usize; 3]) -> Result<Self> {
        if voxel <= 0.0 || dims.iter().any(|&d| d < 2) {
            return Err(Error::ConfigValidation(
                "volume needs positive voxel size and at least 2 grid points per axis".into(),
            ));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(TsdfVolume {
            origin,
            voxel,
            dims,
            truncation: TRUNC_VOXELS * voxel,
            tsdf: vec![0.0; n],
            weight: vec![0.0; n],
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn point(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        self.origin + self.voxel * Vector3::new(x as f64, y as f64, z as f64)
    }

    /// Fills the volume from an analytic signed-distance function, clamped to
    /// the truncation band, all weights 1.
    pub fn fill_sdf(&mut self, sdf: impl Fn(Vector3<f64>) -> f64) {
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let i = self.idx(x, y, z);
                    self.tsdf[i] = (sdf(self.point(x, y, z)) / self.truncation).clamp(-1.0, 1.0);
                    self.weight[i] = 1.0;
                }
            }
        }
    }

    /// Integrates one ray-distance depth map: per grid point, the projective
    /// signed distance `D(u) - ||p - o_c||` clamped to the truncation band,
    /// folded in as a weighted running average. Sentinel (non-positive) depth
    /// pixels and points more than one truncation behind the surface are
    /// skipped.
    pub fn integrate(&mut self, depth: &ImageF, cam: &CameraView) {
        let (dx, dy) = (self.dims[0], self.dims[1]);
        let slice = dx * dy;
        let origin = self.origin;
        let voxel = self.voxel;
        let trunc = self.truncation;
        let cam_center = cam.center();
        // Pixels straddling a depth discontinuity (or bordering invalid
        // pixels) produce "curtain" artifacts bridging foreground and
        // background when integrated; mark and skip them.
        let edge = depth_edge_mask(depth, trunc);
        self.tsdf
            .par_chunks_mut(slice)
            .zip(self.weight.par_chunks_mut(slice))
            .enumerate()
            .for_each(|(z, (tsdf, weight))| {
                for y in 0..dy {
                    for x in 0..dx {
                        let p = origin + voxel * Vector3::new(x as f64, y as f64, z as f64);
                        let t = cam.world_to_cam(&p);
                        if t.z <= crate::projection::NEAR_PLANE {
                            continue;
                        }
                        let px = cam.fx * t.x / t.z + cam.cx;
                        let py = cam.fy * t.y / t.z + cam.cy;
                        let (ix, iy) = (px.floor() as isize, py.floor() as isize);
                        if ix < 0 || iy < 0 || ix >= cam.width as isize || iy >= cam.height as isize
                        {
                            continue;
                        }
                        let d = depth.at(ix as usize, iy as usize);
                        if d <= 0.0 || edge[iy as usize * cam.width + ix as usize] {
                            continue;
                        }
                        let sdf = d - (p - cam_center).norm();
                        if sdf < -trunc {
                            continue;
                        }
                        let s = (sdf / trunc).clamp(-1.0, 1.0);
                        let i = y * dx + x;
                        let w = weight[i];
                        tsdf[i] = (tsdf[i] * w + s) / (w + 1.0);
                        weight[i] = w + 1.0;
                    }
                }
            });
    }
}

/// Marks pixels that are invalid, border an invalid pixel, or differ from a
/// 4-neighbor by more than `step` — the pixels whose depths cannot be trusted
/// to describe a locally continuous surface.
fn depth_edge_mask(depth: &ImageF, step: f64) -> Vec<bool> {
    let (w, h) = (depth.width, depth.height);
    let mut edge = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = depth.at(x, y);
            if d <= 0.0 {
                edge[y * w + x] = true;
                continue;
            }
            let mut bad = false;
            let mut check = |nx: usize, ny: usize| {
                let n = depth.at(nx, ny);
                if n <= 0.0 || (n - d).abs() > step {
                    bad = true;
                }
            };
            if x > 0 {
                check(x - 1, y);
            }
            if x + 1 < w {
                check(x + 1, y);
            }
            if y > 0 {
                check(x, y - 1);
            }
            if y + 1 < h {
                check(x, y + 1);
            }
            edge[y * w + x] = bad;
        }
    }
    edge
}

/// Triangle mesh: vertex positions plus index triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::ConfigValidation("mesh has non-finite vertices".into()));
        }
        if self.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::ConfigValidation("face index out of range".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn translated(&self, t: Vector3<f64>) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v + t).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Area-weighted uniform surface samples with a seeded generator.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
        if self.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            acc += 0.5 * (b - a).cross(&(c - a)).norm();
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::EmptyMesh);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.gen::<f64>() * acc;
            let fi = cdf.partition_point(|&c| c < r).min(self.faces.len() - 1);
            let [a, b, c] = self.faces[fi].map(|i| self.vertices[i as usize]);
            let (su, v): (f64, f64) = (rng.gen::<f64>().sqrt(), rng.gen());
            // Square-root warp gives uniform barycentric samples.
            out.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
        }
        Ok(out)
    }
}

// --- isosurface extraction ------------------------------------------------

/// The six tetrahedra around the main diagonal of a unit cube, as corner
/// indices (bit 0: x, bit 1: y, bit 2: z). The decomposition cuts every cube
/// face along the same diagonal as its neighbor, so extracted surfaces are
/// watertight across shared faces.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Extracts the `iso` level set of the volume as a triangle mesh. Cells emit
/// only when all 8 corners carry observation weight. Cubes are split into six
/// tetrahedra (resolving the ambiguous sign cases of the classic cube table);
/// crossing vertices are placed by linear interpolation. Triangles are
/// oriented with normals pointing toward the positive (outside) side.
pub fn marching_cubes(vol: &TsdfVolume, iso: f64) -> Result<TriMesh> {
    let [nx, ny, nz] = vol.dims;
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    // Dedup crossing vertices by the (sorted) global ids of their lattice
    // edge endpoints.
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let gid = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;

    let corner_off = |c: usize| (c & 1, (c >> 1) & 1, (c >> 2) & 1);
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let mut vals = [0.0; 8];
                let mut ids = [0usize; 8];
                let mut pts = [Vector3::zeros(); 8];
                let mut ok = true;
                for c in 0..8 {
                    let (ox, oy, oz) = corner_off(c);
                    let (cx, cy, cz) = (x + ox, y + oy, z + oz);
                    let i = vol.idx(cx, cy, cz);
                    if vol.weight[i] <= 0.0 {
                        ok = false;
                        break;
                    }
                    vals[c] = vol.tsdf[i] - iso;
                    ids[c] = gid(cx, cy, cz);
                    pts[c] = vol.point(cx, cy, cz);
                }
                if !ok {
                    continue;
                }
                for tet in &TETS {
                    march_tet(
                        tet.map(|c| (vals[c], ids[c], pts[c])),
                        &mut vertices,
                        &mut faces,
                        &mut edge_vertex,
                    );
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyIsosurface);
    }
    Ok(TriMesh { vertices, faces })
}

type TetCorner = (f64, usize, Vector3<f64>);

fn march_tet(
    corners: [TetCorner; 4],
    vertices: &mut Vec<Vector3<f64>>,
    faces: &mut Vec<[u32; 3]>,
    edge_vertex: &mut HashMap<(usize, usize), u32>,
) {
    let inside: Vec<usize> = (0..4).filter(|&i| corners[i].0 < 0.0).collect();
    if inside.is_empty() || inside.len() == 4 {
        return;
    }
    let outside: Vec<usize> = (0..4).filter(|&i| corners[i].0 >= 0.0).collect();

    let mut cross = |a: usize, b: usize| -> u32 {
        let (va, ia, pa) = corners[a];
        let (vb, ib, pb) = corners[b];
        let key = (ia.min(ib), ia.max(ib));
        *edge_vertex.entry(key).or_insert_with(|| {
            // Interpolate from the lower global id for a direction-free
            // result shared exactly between neighboring cells.
            let (v0, p0, v1, p1) = if ia <= ib { (va, pa, vb, pb) } else { (vb, pb, va, pa) };
            let t = v0 / (v0 - v1);
            let p = p0 + t * (p1 - p0);
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
    };

    let mut emit = |tri: [u32; 3], vertices: &Vec<Vector3<f64>>, corners: &[TetCorner; 4]| {
        let [a, b, c] = tri.map(|i| vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        // Outward = from the negative corners toward the positive ones.
        let mut neg = Vector3::zeros();
        let mut pos = Vector3::zeros();
        let (mut nn, mut np) = (0.0, 0.0);
        for &(v, _, p) in corners.iter() {
            if v < 0.0 {
                neg += p;
                nn += 1.0;
            } else {
                pos += p;
                np += 1.0;
            }
        }
        let dir = pos / np - neg / nn;
        if n.dot(&dir) >= 0.0 {
            faces.push(tri);
        } else {
            faces.push([tri[0], tri[2], tri[1]]);
        }
    };

    match inside.len() {
        1 => {
            let i = inside[0];
            let tri = [
                cross(i, outside[0]),
                cross(i, outside[1]),
                cross(i, outside[2]),
            ];
            emit(tri, vertices, &corners);
        }
        3 => {
            let o = outside[0];
            let tri = [
                cross(o, inside[0]),
                cross(o, inside[1]),
                cross(o, inside[2]),
            ];
            emit(tri, vertices, &corners);
        }
        2 => {
            let (i0, i1) = (inside[0], inside[1]);
            let (o0, o1) = (outside[0], outside[1]);
            let a = cross(i0, o0);
            let b = cross(i0, o1);
            let c = cross(i1, o1);
            let d = cross(i1, o0);
            emit([a, b, c], vertices, &corners);
            emit([a, c, d], vertices, &corners);
        }
        _ => unreachable!(),
    }
}

// --- PLY ------------------------------------------------------------------

/// Writes a mesh as PLY; `binary` selects `binary_little_endian`, otherwise
/// ASCII.
pub fn save_ply(mesh: &TriMesh, path: &Path, binary: bool) -> Result<()> {
    mesh.validate()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        let format = if binary { "binary_little_endian 1.0" } else { "ascii 1.0" };
        write!(
            w,
            "ply\nformat {}\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
            format,
            mesh.vertices.len(),
            mesh.faces.len()
        )?;
        if binary {
            for v in &mesh.vertices {
                for c in 0..3 {
                    w.write_f64::<LittleEndian>(v[c])?;
                }
            }
            for f in &mesh.faces {
                w.write_u8(3)?;
                for &i in f {
                    w.write_u32::<LittleEndian>(i)?;
                }
            }
        } else {
            for v in &mesh.vertices {
                writeln!(w, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
            }
            for f in &mesh.faces {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

enum PlyScalar {
    F32,
    F64,
}

/// Reads ASCII or binary-little-endian PLY with float or double vertex
/// coordinates and integer face lists. Extra vertex properties are rejected
/// to keep the reader honest about what it understands.
pub fn load_ply(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |detail: &str| Error::MalformedFile {
        what: "mesh",
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    let mut line = String::new();
    let read_line = |r: &mut BufReader<std::fs::File>, line: &mut String| -> Result<()> {
        line.clear();
        r.read_line(line).map_err(|e| Error::io(path, e))?;
        Ok(())
    };
    read_line(&mut r, &mut line)?;
    if line.trim() != "ply" {
        return Err(bad("missing ply magic"));
    }
    let mut binary = false;
    let mut n_vertex = 0usize;
    let mut n_face = 0usize;
    let mut scalar = PlyScalar::F64;
    let mut vertex_props = 0usize;
    let mut in_vertex = false;
    loop {
        read_line(&mut r, &mut line)?;
        if line.is_empty() {
            return Err(bad("truncated header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["comment", ..] => {}
            ["format", "ascii", _] => binary = false,
            ["format", "binary_little_endian", _] => binary = true,
            ["format", ..] => return Err(bad("unsupported ply format")),
            ["element", "vertex", n] => {
                n_vertex = n.parse().map_err(|_| bad("bad vertex count"))?;
                in_vertex = true;
            }
            ["element", "face", n] => {
                n_face = n.parse().map_err(|_| bad("bad face count"))?;
                in_vertex = false;
            }
            ["element", ..] => return Err(bad("unsupported element")),
            ["property", "list", ..] => {}
            ["property", ty, _name] if in_vertex => {
                scalar = match *ty {
                    "float" | "float32" => PlyScalar::F32,
                    "double" | "float64" => PlyScalar::F64,
                    _ => return Err(bad("unsupported vertex property type")),
                };
                vertex_props += 1;
            }
            ["property", ..] => {}
            _ => return Err(bad("unrecognized header line")),
        }
    }
    if vertex_props != 3 {
        return Err(bad("expected exactly x, y, z vertex properties"));
    }

    let mut vertices = Vec::with_capacity(n_vertex);
    let mut faces = Vec::with_capacity(n_face);
    if binary {
        for _ in 0..n_vertex {
            let mut v = Vector3::zeros();
            for c in 0..3 {
                v[c] = match scalar {
                    PlyScalar::F32 => r
                        .read_f32::<LittleEndian>()
                        .map_err(|e| Error::io(path, e))? as f64,
                    PlyScalar::F64 => r
                        .read_f64::<LittleEndian>()
                        .map_err(|e| Error::io(path, e))?,
                };
            }
            vertices.push(v);
        }
        for _ in 0..n_face {
            let n = r.read_u8().map_err(|e| Error::io(path, e))?;
            if n != 3 {
                return Err(bad("non-triangle face"));
            }
            let mut f = [0u32; 3];
            for v in &mut f {
                *v = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            }
            faces.push(f);
        }
    } else {
        let mut text = String::new();
        r.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
        let mut toks = text.split_whitespace();
        let next_f64 =
            |toks: &mut std::str::SplitWhitespace| -> Result<f64> {
                toks.next()
                    .ok_or_else(|| bad("truncated body"))?
                    .parse()
                    .map_err(|_| bad("bad number"))
            };
        for _ in 0..n_vertex {
            let x = next_f64(&mut toks)?;
            let y = next_f64(&mut toks)?;
            let z = next_f64(&mut toks)?;
            vertices.push(Vector3::new(x, y, z));
        }
        for _ in 0..n_face {
            let n = next_f64(&mut toks)? as usize;
            if n != 3 {
                return Err(bad("non-triangle face"));
            }
            let mut f = [0u32; 3];
            for v in &mut f {
                *v = next_f64(&mut toks)? as u32;
            }
            faces.push(f);
        }
    }
    let mesh = TriMesh { vertices, faces };
    mesh.validate().map_err(|_| bad("invalid mesh data"))?;
    Ok(mesh)
}

// --- nearest-neighbor index -----------------------------------------------

/// Left-balanced kd-tree over 3D points for nearest-neighbor distance
/// queries.
pub struct KdTree {
    // Points reordered into in-place kd layout: node i splits on axis
    // depth%3 with children 2i+1, 2i+2 in a heap-like implicit layout over
    // index ranges.
    pts: Vec<Vector3<f64>>,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> KdTree {
        let mut pts = points.to_vec();
        fn split(pts: &mut [Vector3<f64>], depth: usize) {
            if pts.len() <= 1 {
                return;
            }
            let axis = depth % 3;
            let mid = pts.len() / 2;
            pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
            let (lo, rest) = pts.split_at_mut(mid);
            split(lo, depth + 1);
            split(&mut rest[1..], depth + 1);
        }
        split(&mut pts, 0);
        KdTree { pts }
    }

    /// Squared distance to the nearest indexed point.
    pub fn nearest_sq(&self, q: &Vector3<f64>) -> f64 {
        fn rec(pts: &[Vector3<f64>], q: &Vector3<f64>, depth: usize, best: &mut f64) {
            if pts.is_empty() {
                return;
            }
            let axis = depth % 3;
            let mid = pts.len() / 2;
            let p = pts[mid];
            *best = (*best).min((p - q).norm_squared());
            let delta = q[axis] - p[axis];
            let (near, far) = if delta < 0.0 {
                (&pts[..mid], &pts[mid + 1..])
            } else {
                (&pts[mid + 1..], &pts[..mid])
            };
            rec(near, q, depth + 1, best);
            if delta * delta < *best {
                rec(far, q, depth + 1, best);
            }
        }
        let mut best = f64::INFINITY;
        rec(&self.pts, q, 0, &mut best);
        best
    }

    pub fn nearest(&self, q: &Vector3<f64>) -> f64 {
        self.nearest_sq(q).sqrt()
    }
}

// --- metrics --------------------------------------------------------------

/// Geometric accuracy metrics at distance threshold tau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoMetrics {
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn mean_nearest(from: &[Vector3<f64>], to: &KdTree) -> f64 {
    let sum: f64 = from.par_iter().map(|p| to.nearest(p)).sum();
    sum / from.len() as f64
}

/// Symmetric chamfer distance: the average of the two directed mean
/// nearest-neighbor distances over area-weighted surface samples. Both
/// meshes are sampled with the same seed, so identical meshes score exactly
/// zero and the metric is exactly symmetric.
pub fn chamfer(pred: &TriMesh, gt: &TriMesh, n_samples: usize, seed: u64) -> Result<f64> {
    let sp = pred.sample_surface(n_samples, seed)?;
    let sg = gt.sample_surface(n_samples, seed)?;
    let tp = KdTree::build(&sp);
    let tg = KdTree::build(&sg);
    Ok(0.5 * (mean_nearest(&sp, &tg) + mean_nearest(&sg, &tp)))
}

/// Precision/recall/F1 over the vertex sets at threshold `tau`, plus the
/// sampled chamfer distance. Recall applies the same nearest-distance rule to
/// the ground-truth vertices.
pub fn f1_score(pred: &TriMesh, gt: &TriMesh, tau: f64, n_samples: usize, seed: u64) -> Result<GeoMetrics> {
    if pred.vertices.is_empty() || gt.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let tau2 = tau * tau;
    let tp_tree = KdTree::build(&pred.vertices);
    let tg_tree = KdTree::build(&gt.vertices);
    let tp = pred
        .vertices
        .par_iter()
        .filter(|v| tg_tree.nearest_sq(v) < tau2)
        .count();
    let tg = gt
        .vertices
        .par_iter()
        .filter(|v| tp_tree.nearest_sq(v) < tau2)
        .count();
    let precision = tp as f64 / pred.vertices.len() as f64;
    let recall = tg as f64 / gt.vertices.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(GeoMetrics {
        chamfer: chamfer(pred, gt, n_samples, seed)?,
        precision,
        recall,
        f1,
    })
}

/// Peak signal-to-noise ratio in dB, capped at 100 for near-identical images.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    check_same_dims(a.dims(), b.dims())?;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Structural similarity; shares the windowed implementation with the RGB
/// training loss.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    crate::losses::ssim(a, b)
}
