//! Synthetic scenes with analytic ground truth.
//!
//! Every scenario builds a splat scene *and* computes depth, normal, mask and
//! image ground truth directly from the scenario geometry, never from the
//! renderer, so renderer bugs cannot corrupt the oracle. World units are
//! meters.

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::depth::{extract_all, WindowSearchConfig};
use crate::error::{Error, Result};
use crate::img::{ImageF, ImageRgb};
use crate::mesh::{marching_cubes, TriMesh, TsdfVolume};
use crate::rasterizer::render_view;
use crate::scene::{logit, Gaussian, SceneFile, SceneMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// A partially transparent plate in front of an opaque wall: the setup
    /// where appearance-optimal blending drags depth toward the background.
    PlateOverWall,
    /// An opaque sphere, for fusion round-trips.
    Sphere,
    /// A single opaque wall.
    OpaqueWall,
    /// An opaque wall plus sparse low-opacity floaters that corrupt
    /// min-based depth estimators.
    FloaterField,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plate-over-wall" => Ok(Scenario::PlateOverWall),
            "sphere" => Ok(Scenario::Sphere),
            "opaque-wall" => Ok(Scenario::OpaqueWall),
            "floater-field" => Ok(Scenario::FloaterField),
            other => Err(Error::InvalidSpec(format!("unknown scenario {other:?}"))),
        }
    }
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::PlateOverWall => "plate-over-wall",
            Scenario::Sphere => "sphere",
            Scenario::OpaqueWall => "opaque-wall",
            Scenario::FloaterField => "floater-field",
        }
    }
}

/// Parameters of a synthetic scene. Defaults come from
/// [`SynthSpec::default_for`]; all distances are meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub scenario: Scenario,
    /// Depth of the first surface (plate plane or sphere center).
    pub plate_depth: f64,
    /// Depth of the opaque wall behind it.
    pub wall_depth: f64,
    /// Net composited opacity of the plate region.
    pub plate_opacity: f64,
    /// Half-extent of the plate footprint (the mask-1 region).
    pub footprint_half: f64,
    pub sphere_radius: f64,
    pub floater_count: usize,
    pub floater_opacity: f64,
    /// Number of cameras on the ring.
    pub views: usize,
    /// Ring radius around the optical axis.
    pub rig_radius: f64,
    /// Square image edge, pixels.
    pub image_size: usize,
    /// Direction of the additive specular highlight lobe (toward the light).
    pub highlight_dir: [f64; 3],
    pub highlight_intensity: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::default_for(Scenario::PlateOverWall)
    }
}

impl SynthSpec {
    pub fn default_for(scenario: Scenario) -> SynthSpec {
        SynthSpec {
            scenario,
            plate_depth: 1.0,
            wall_depth: 1.5,
            // High enough that the plate wins the max-weight window contest
            // against the wall, low enough that blended depth still drifts
            // well behind the plate.
            plate_opacity: 0.66,
            footprint_half: 0.15,
            sphere_radius: 0.12,
            floater_count: 15,
            floater_opacity: 0.15,
            views: 8,
            rig_radius: 0.15,
            image_size: 128,
            highlight_dir: [-0.3, -0.4, -1.0],
            highlight_intensity: if scenario == Scenario::PlateOverWall {
                0.25
            } else {
                0.0
            },
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.plate_depth > 0.0 && self.plate_depth < self.wall_depth) {
            return bad(format!(
                "need 0 < plate depth ({}) < wall depth ({})",
                self.plate_depth, self.wall_depth
            ));
        }
        for (name, o) in [
            ("plate_opacity", self.plate_opacity),
            ("floater_opacity", self.floater_opacity),
        ] {
            if !(o > 0.0 && o < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {o}"));
            }
        }
        if self.views < 1 {
            return bad("need at least one view".into());
        }
        if self.image_size < 16 {
            return bad(format!("image size {} too small", self.image_size));
        }
        if !(self.footprint_half > 0.0 && self.sphere_radius > 0.0 && self.rig_radius >= 0.0) {
            return bad("extents must be positive".into());
        }
        if self.highlight_intensity < 0.0
            || Vector3::from(self.highlight_dir).norm() == 0.0
        {
            return bad("bad highlight spec".into());
        }
        Ok(())
    }

    fn focal(&self) -> f64 {
        // ~32 degree horizontal field of view.
        1.74 * self.image_size as f64
    }

    /// The ring of cameras, all looking at the first surface's center.
    pub fn cameras(&self) -> Vec<CameraView> {
        let n = self.views;
        let s = self.image_size;
        let f = self.focal();
        let c = s as f64 / 2.0;
        let target = Vector3::new(0.0, 0.0, self.plate_depth);
        (0..n)
            .map(|k| {
                let ang = k as f64 / n as f64 * std::f64::consts::TAU;
                let eye = Vector3::new(
                    self.rig_radius * ang.cos(),
                    self.rig_radius * ang.sin(),
                    0.0,
                );
                CameraView::look_at(f, f, c, c, eye, target, Vector3::new(0.0, 1.0, 0.0), s, s)
                    .expect("ring camera is valid")
            })
            .collect()
    }
}

/// Analytic per-view ground truth.
#[derive(Debug, Clone)]
pub struct ViewTruth {
    pub cam: CameraView,
    /// Ray distance to the first surface; 0 where no surface is hit.
    pub depth: ImageF,
    /// Camera-facing unit surface normal, zero off-surface.
    pub normal: ImageRgb,
    /// Transparency mask, 1 exactly on the plate footprint.
    pub mask: ImageF,
    /// De-lighted image (no specular term).
    pub delighted: ImageRgb,
    /// Observed image: de-lighted plus the additive highlight lobe.
    pub image: ImageRgb,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub views: Vec<ViewTruth>,
    pub mesh: TriMesh,
}

const PLATE_RGB: [f64; 3] = [0.35, 0.55, 0.75];
const WALL_RGB: [f64; 3] = [0.80, 0.60, 0.35];

/// Smooth procedural texture on the wall plane. A textured wall is what
/// makes transparency observable: with a uniform background, an opaque
/// surface painted with the blended color reproduces every view exactly, so
/// training has no photometric reason to keep a transparent surface
/// transparent. Parallax over a textured wall breaks that degeneracy. The
/// wavelengths are long enough (>= 0.3 m) that the splat lattice (sigma
/// ~0.03 m) can still represent the pattern.
fn wall_albedo(x: f64, y: f64) -> [f64; 3] {
    use std::f64::consts::TAU;
    let m1 = (TAU * x / 0.31).sin() * (TAU * y / 0.31).sin();
    let m2 = (TAU * (x + y) / 0.43).sin();
    [
        WALL_RGB[0] * (0.80 + 0.20 * m1),
        WALL_RGB[1] * (0.80 + 0.20 * m2),
        WALL_RGB[2] * (0.80 - 0.20 * m1),
    ]
}
const SPHERE_RGB: [f64; 3] = [0.55, 0.70, 0.45];
/// Angular sharpness of the synthetic highlight lobe.
const HIGHLIGHT_SHARPNESS: f64 = 40.0;
/// Lattice overlap: splat standard deviation as a multiple of grid spacing.
const LATTICE_OVERLAP: f64 = 0.8;
/// Plate thickness along its normal (well under 1e-3 of the spacing).
const PLATE_THICKNESS: f64 = 1e-5;

/// Builds the scene and its analytic ground truth. Deterministic for a fixed
/// spec.
pub fn generate(spec: &SynthSpec) -> Result<(SceneFile, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let meta = SceneMeta {
        sh_degree: 1,
        asg_lobes: 4,
        asg_feat_dim: 4,
        pe_octaves: 2,
        world_scale: 1.0,
    };
    let mut scene = SceneFile::new(meta);

    match spec.scenario {
        Scenario::PlateOverWall => {
            push_wall(&mut scene, spec, 0.1);
            push_plate(&mut scene, spec)?;
        }
        Scenario::OpaqueWall => push_wall(&mut scene, spec, 0.1),
        Scenario::FloaterField => {
            // High wall tau keeps the windowed estimator engaged, which is
            // the configuration the floater diagnosis is about.
            push_wall(&mut scene, spec, 0.9);
            push_floaters(&mut scene, spec, &mut rng);
        }
        Scenario::Sphere => push_sphere(&mut scene, spec),
    }
    scene.validate()?;

    let gt = GroundTruth {
        views: spec
            .cameras()
            .into_iter()
            .map(|cam| view_truth(spec, cam))
            .collect(),
        mesh: gt_mesh(spec)?,
    };
    Ok((scene, gt))
}

/// Wall mesh half-extent: the patch of the wall plane inside every view.
fn wall_mesh_half(spec: &SynthSpec) -> f64 {
    let half_angle = 0.5 * spec.image_size as f64 / spec.focal();
    spec.wall_depth * half_angle - spec.rig_radius - 0.02
}

/// Vertex spacing of the ground-truth plane meshes: dense enough that
/// vertex-set precision/recall metrics sample the surface, not its corners.
const GT_MESH_STEP: f64 = 0.005;

/// Appends a grid-triangulated square on a z-plane, omitting cells whose
/// center satisfies `skip`.
fn push_grid_square(
    mesh: &mut TriMesh,
    half: f64,
    z: f64,
    skip: impl Fn(f64, f64) -> bool,
) {
    let n = (2.0 * half / GT_MESH_STEP).ceil() as usize;
    let step = 2.0 * half / n as f64;
    let base = mesh.vertices.len() as u32;
    for j in 0..=n {
        for i in 0..=n {
            mesh.vertices.push(Vector3::new(
                -half + i as f64 * step,
                -half + j as f64 * step,
                z,
            ));
        }
    }
    let idx = |i: usize, j: usize| base + (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            let cx = -half + (i as f64 + 0.5) * step;
            let cy = -half + (j as f64 + 0.5) * step;
            if skip(cx, cy) {
                continue;
            }
            mesh.faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            mesh.faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
}

/// Drops vertices not referenced by any face (hole interiors), so vertex-set
/// metrics see only real surface.
fn prune_unused_vertices(mesh: &mut TriMesh) {
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut kept = Vec::new();
    for f in &mut mesh.faces {
        for v in f.iter_mut() {
            if remap[*v as usize] == u32::MAX {
                remap[*v as usize] = kept.len() as u32;
                kept.push(mesh.vertices[*v as usize]);
            }
            *v = remap[*v as usize];
        }
    }
    mesh.vertices = kept;
}

fn gt_mesh(spec: &SynthSpec) -> Result<TriMesh> {
    fn grid(half: f64, z: f64, skip: impl Fn(f64, f64) -> bool) -> TriMesh {
        let mut m = TriMesh { vertices: Vec::new(), faces: Vec::new() };
        push_grid_square(&mut m, half, z, skip);
        prune_unused_vertices(&mut m);
        m
    }
    match spec.scenario {
        Scenario::Sphere => {
            let r = spec.sphere_radius;
            let c = Vector3::new(0.0, 0.0, spec.plate_depth);
            let voxel = (r / 20.0).max(0.004);
            let half = r + 6.0 * voxel;
            let n = (2.0 * half / voxel).ceil() as usize + 1;
            let mut vol = TsdfVolume::new(c - Vector3::repeat(half), voxel, [n, n, n])?;
            vol.fill_sdf(|p| (p - c).norm() - r);
            marching_cubes(&vol, 0.0)
        }
        Scenario::OpaqueWall | Scenario::FloaterField => {
            Ok(grid(wall_mesh_half(spec), spec.wall_depth, |_, _| false))
        }
        Scenario::PlateOverWall => {
            // Plate footprint at d1, plus the wall minus its umbra: wall
            // points hidden behind the plate from *every* camera are never
            // observed by first-surface depth and stay unreconstructed.
            let eyes: Vec<Vector3<f64>> =
                spec.cameras().iter().map(|c| c.center()).collect();
            let (d1, d2, h) = (spec.plate_depth, spec.wall_depth, spec.footprint_half);
            let mut m = grid(h, d1, |_, _| false);
            let mut wall = grid(wall_mesh_half(spec), d2, |x, y| {
                eyes.iter().all(|c| {
                    let q = Vector3::new(x, y, d2);
                    let p = c + (q - c) * (d1 - c.z) / (d2 - c.z);
                    p.x.abs() <= h && p.y.abs() <= h
                })
            });
            let base = m.vertices.len() as u32;
            m.vertices.append(&mut wall.vertices);
            m.faces
                .extend(wall.faces.into_iter().map(|f| f.map(|i| i + base)));
            Ok(m)
        }
    }
}

// --- scene construction ---------------------------------------------------

fn quat_from_matrix(m: &Matrix3<f64>) -> [f64; 4] {
    // Shepperd's method, branch on the largest diagonal combination.
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let (w, x, y, z);
    if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    [w, x, y, z]
}

/// Adds a lattice of thin splats on a z-plane. Returns the record range.
fn push_plane_lattice(
    scene: &mut SceneFile,
    half: f64,
    z: f64,
    spacing: f64,
    opacity: f64,
    tau: f64,
    rgb: impl Fn(f64, f64) -> [f64; 3],
    z_jitter: impl Fn(usize, usize) -> f64,
) {
    let n = (2.0 * half / spacing).round() as usize + 1;
    let sigma = LATTICE_OVERLAP * spacing;
    for j in 0..n {
        for i in 0..n {
            let x = -half + i as f64 * spacing;
            let y = -half + j as f64 * spacing;
            let mut g = Gaussian::simple(
                Vector3::new(x, y, z + z_jitter(i, j)),
                sigma,
                opacity,
                rgb(x, y),
                &scene.meta,
            );
            g.log_scale.z = PLATE_THICKNESS.ln();
            g.tau_logit = logit(tau);
            scene.gaussians.push(g);
        }
    }
}

fn push_wall(scene: &mut SceneFile, spec: &SynthSpec, tau: f64) {
    push_plane_lattice(
        scene,
        0.7 * spec.wall_depth / 1.5,
        spec.wall_depth,
        0.04,
        0.98,
        tau,
        wall_albedo,
        |_, _| 0.0,
    );
}

fn push_plate(scene: &mut SceneFile, spec: &SynthSpec) -> Result<()> {
    let spacing = 0.02;
    // The lattice overshoots the footprint so every footprint pixel sees
    // full plate coverage.
    // One spacing of overhang keeps net absorption at its interior level all
    // the way to the footprint edge without pushing the reconstructible
    // extent far past it.
    let half = spec.footprint_half + spacing;
    let opacity = calibrate_plate_opacity(spec, spacing, half)?;
    // Sub-millimeter depth jitter: keeps every plane depth within the search
    // window while making min-depth estimators land on whichever splat
    // happens to protrude.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e3779b97f4a7c15);
    let mut jitter = Vec::new();
    let n = (2.0 * half / spacing).round() as usize + 1;
    for _ in 0..n * n {
        jitter.push((rng.gen::<f64>() - 0.5) * 1.6e-3);
    }
    push_plane_lattice(
        scene,
        half,
        spec.plate_depth,
        spacing,
        opacity,
        0.9,
        |_, _| PLATE_RGB,
        |i, j| jitter[j * n + i],
    );
    Ok(())
}

/// Solves for the per-splat opacity that makes the composited plate alpha
/// match the requested net opacity, by bisection against a small centered
/// render probe of the plate alone.
fn calibrate_plate_opacity(spec: &SynthSpec, spacing: f64, half: f64) -> Result<f64> {
    let probe_half = (0.3 * spec.footprint_half).max(2.0 * spacing);
    let probe_px = 9usize;
    let f = probe_px as f64 / 2.0 * spec.plate_depth / probe_half;
    let cam = CameraView::new(
        f,
        f,
        probe_px as f64 / 2.0,
        probe_px as f64 / 2.0,
        Matrix3::identity(),
        Vector3::zeros(),
        probe_px,
        probe_px,
    )?;
    let measure = |o: f64| -> f64 {
        let mut probe = SceneFile::new(scene_meta_for_probe());
        push_plane_lattice(
            &mut probe,
            half,
            spec.plate_depth,
            spacing,
            o,
            0.9,
            |_, _| PLATE_RGB,
            |_, _| 0.0,
        );
        let bundle = render_view(&probe, &cam, 1);
        bundle.alpha_acc.data.iter().sum::<f64>() / bundle.alpha_acc.data.len() as f64
    };
    let target = spec.plate_opacity;
    let (mut lo, mut hi) = (1e-5, 0.999);
    if measure(hi) < target {
        return Err(Error::InvalidSpec(format!(
            "plate net opacity {target} not reachable"
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if measure(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn scene_meta_for_probe() -> SceneMeta {
    SceneMeta {
        sh_degree: 0,
        asg_lobes: 0,
        asg_feat_dim: 0,
        pe_octaves: 0,
        world_scale: 1.0,
    }
}

fn push_floaters(scene: &mut SceneFile, spec: &SynthSpec, rng: &mut ChaCha8Rng) {
    for _ in 0..spec.floater_count {
        let x = (rng.gen::<f64>() - 0.5) * 0.5;
        let y = (rng.gen::<f64>() - 0.5) * 0.5;
        let z = spec.wall_depth * (0.4 + 0.45 * rng.gen::<f64>());
        let mut g = Gaussian::simple(
            Vector3::new(x, y, z),
            0.008,
            spec.floater_opacity,
            [0.5, 0.5, 0.5],
            &scene.meta,
        );
        g.tau_logit = logit(0.1);
        scene.gaussians.push(g);
    }
}

fn push_sphere(scene: &mut SceneFile, spec: &SynthSpec) {
    let r = spec.sphere_radius;
    let center = Vector3::new(0.0, 0.0, spec.plate_depth);
    let spacing = (r / 8.0).min(0.02);
    let count = ((4.0 * std::f64::consts::PI * r * r) / (spacing * spacing)).ceil() as usize;
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    for k in 0..count {
        // Fibonacci lattice on the sphere.
        let zc = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
        let rho = (1.0 - zc * zc).sqrt();
        let ang = golden * k as f64;
        let n = Vector3::new(rho * ang.cos(), rho * ang.sin(), zc);
        let tangent = if n.z.abs() < 0.9 {
            Vector3::z().cross(&n).normalize()
        } else {
            Vector3::x().cross(&n).normalize()
        };
        let bitangent = n.cross(&tangent);
        let rot = Matrix3::from_columns(&[tangent, bitangent, n]);
        let mut g = Gaussian::simple(center + r * n, LATTICE_OVERLAP * spacing, 0.98, SPHERE_RGB, &scene.meta);
        g.rotation = quat_from_matrix(&rot);
        g.log_scale.z = PLATE_THICKNESS.ln();
        g.tau_logit = logit(0.1);
        scene.gaussians.push(g);
    }
}

// --- analytic ground truth ------------------------------------------------

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    on_footprint: bool,
}

/// First-surface hit for a world ray, from scenario geometry only.
fn first_hit(spec: &SynthSpec, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let plane_hit = |z: f64| -> Option<(f64, Vector3<f64>)> {
        if dir.z <= 1e-9 {
            return None;
        }
        let t = (z - origin.z) / dir.z;
        if t <= 0.0 {
            return None;
        }
        Some((t, origin + t * dir))
    };
    match spec.scenario {
        Scenario::Sphere => {
            let c = Vector3::new(0.0, 0.0, spec.plate_depth);
            let oc = origin - c;
            let b = oc.dot(dir);
            let disc = b * b - (oc.norm_squared() - spec.sphere_radius * spec.sphere_radius);
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            if t <= 0.0 {
                return None;
            }
            let p = origin + t * dir;
            Some(Hit {
                t,
                normal: (p - c).normalize(),
                on_footprint: false,
            })
        }
        Scenario::OpaqueWall | Scenario::FloaterField => {
            let (t, _) = plane_hit(spec.wall_depth)?;
            Some(Hit {
                t,
                normal: Vector3::new(0.0, 0.0, -1.0),
                on_footprint: false,
            })
        }
        Scenario::PlateOverWall => {
            if let Some((t, p)) = plane_hit(spec.plate_depth) {
                if p.x.abs() <= spec.footprint_half && p.y.abs() <= spec.footprint_half {
                    return Some(Hit {
                        t,
                        normal: Vector3::new(0.0, 0.0, -1.0),
                        on_footprint: true,
                    });
                }
            }
            let (t, _) = plane_hit(spec.wall_depth)?;
            Some(Hit {
                t,
                normal: Vector3::new(0.0, 0.0, -1.0),
                on_footprint: false,
            })
        }
    }
}

fn view_truth(spec: &SynthSpec, cam: CameraView) -> ViewTruth {
    let s = spec.image_size;
    let origin = cam.center();
    let a1 = spec.plate_opacity;
    let l = Vector3::from(spec.highlight_dir).normalize();
    let mut depth = ImageF::new(s, s);
    let mut normal = ImageRgb::new(s, s);
    let mut mask = ImageF::new(s, s);
    let mut delighted = ImageRgb::new(s, s);
    let mut image = ImageRgb::new(s, s);
    for y in 0..s {
        for x in 0..s {
            let dir = cam.pixel_ray(x, y);
            let Some(hit) = first_hit(spec, &origin, &dir) else {
                continue;
            };
            let i = y * s + x;
            depth.data[i] = hit.t;
            for c in 0..3 {
                normal.data[3 * i + c] = hit.normal[c];
            }
            let p = origin + hit.t * dir;
            let base: [f64; 3] = match spec.scenario {
                Scenario::Sphere => SPHERE_RGB,
                Scenario::OpaqueWall | Scenario::FloaterField => wall_albedo(p.x, p.y),
                Scenario::PlateOverWall => {
                    if hit.on_footprint {
                        mask.data[i] = 1.0;
                        // Transparent plate over the wall: analytic blend at
                        // the requested net opacity, sampling the wall
                        // texture where the ray continues to the wall plane.
                        let tw = (spec.wall_depth - origin.z) / dir.z;
                        let pw = origin + tw * dir;
                        let wall = wall_albedo(pw.x, pw.y);
                        [0, 1, 2].map(|c| a1 * PLATE_RGB[c] + (1.0 - a1) * wall[c])
                    } else {
                        wall_albedo(p.x, p.y)
                    }
                }
            };
            // Additive specular lobe toward the camera, plate only.
            let spec_term = if mask.data[i] > 0.0 && spec.highlight_intensity > 0.0 {
                let to_cam = -dir;
                spec.highlight_intensity
                    * (HIGHLIGHT_SHARPNESS * (to_cam.dot(&l) - 1.0)).exp()
            } else {
                0.0
            };
            for c in 0..3 {
                delighted.data[3 * i + c] = base[c];
                image.data[3 * i + c] = (base[c] + spec_term).min(1.0);
            }
        }
    }
    ViewTruth {
        cam,
        depth,
        normal,
        mask,
        delighted,
        image,
    }
}

// --- estimator comparison -------------------------------------------------

/// Signed/absolute error statistics of one depth estimator against the
/// analytic ground truth, aggregated over all views.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub estimator: String,
    pub mean_signed: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub pixels: usize,
}

/// Runs all depth estimators over every view and tabulates their errors
/// inside the evaluation region: the ground-truth mask footprint when one
/// exists, otherwise every pixel with defined ground-truth depth.
pub fn dilemma_report(
    scene: &SceneFile,
    gt: &GroundTruth,
    cfg: &WindowSearchConfig,
) -> Result<Vec<EstimatorStats>> {
    cfg.validate()?;
    let mut acc: Vec<(&'static str, f64, f64, f64, usize)> = ["standard", "unbiased", "nearest", "first"]
        .iter()
        .map(|&n| (n, 0.0, 0.0, 0.0f64, 0usize))
        .collect();
    for vt in &gt.views {
        let maps = extract_all(scene, &vt.cam, cfg);
        let has_mask = vt.mask.data.iter().any(|&m| m > 0.0);
        let w = vt.depth.width;
        for (i, &d_gt) in vt.depth.data.iter().enumerate() {
            let in_region = if has_mask { vt.mask.data[i] > 0.0 } else { d_gt > 0.0 };
            if !in_region {
                continue;
            }
            // The standard estimator blends camera-space z, the others blend
            // ray distance; compare each against its own reference.
            let dir = vt.cam.pixel_ray(i % w, i / w);
            let z_gt = d_gt * (vt.cam.rotation * dir).z;
            let refs = [z_gt, d_gt, d_gt, d_gt];
            let ests = [
                maps.standard.data[i],
                maps.unbiased.data[i],
                maps.nearest.data[i],
                maps.first.data[i],
            ];
            for ((slot, est), gt_ref) in acc.iter_mut().zip(ests).zip(refs) {
                let err = est - gt_ref;
                slot.1 += err;
                slot.2 += err.abs();
                slot.3 = slot.3.max(err.abs());
                slot.4 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(name, sum, abs_sum, max_abs, n)| EstimatorStats {
            estimator: name.to_string(),
            mean_signed: if n > 0 { sum / n as f64 } else { 0.0 },
            mean_abs: if n > 0 { abs_sum / n as f64 } else { 0.0 },
            max_abs,
            pixels: n,
        })
        .collect())
}
