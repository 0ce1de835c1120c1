//! Software tile rasterizer: per-pixel depth-sorted alpha compositing
//! producing color, blended depth, world-normal, plane-distance,
//! alpha-accumulation, and transparency-mask maps.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::appearance::{full_color, ViewContext};
use crate::camera::CameraView;
use crate::img::{ImageF, ImageRgb};
use crate::projection::{project, Projection, ProjectedGaussian};
use crate::scene::{activate, SceneFile};

/// Contributions below this alpha are dropped.
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
/// Upper clamp on any single fragment alpha.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Front-to-back traversal stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;
/// Tile edge, pixels.
pub const TILE: usize = 16;
/// Default transparency-mask transmittance threshold.
pub const THETA_T: f64 = 0.5;
/// Floor for the plane-depth denominator `n . v`.
pub const EPS_DENOM: f64 = 1e-4;

/// One Gaussian's contribution along a pixel ray.
#[derive(Debug, Clone)]
pub struct SplatFragment {
    pub alpha: f64,
    /// Transmittance accumulated before this fragment.
    pub t: f64,
    /// Center depth, meters.
    pub z: f64,
    /// Plane depth along the ray (ray-plane intersection distance), meters.
    pub plane_depth: f64,
    pub color: [f64; 3],
    pub normal: Vector3<f64>,
    /// Camera-to-plane distance of the source Gaussian, meters.
    pub dist: f64,
    pub tau: f64,
    pub index: usize,
}

/// All per-view output maps for one render.
#[derive(Debug, Clone)]
pub struct RenderBundle {
    pub color: ImageRgb,
    pub depth_standard: ImageF,
    pub normal: ImageRgb,
    pub distance: ImageF,
    pub alpha_acc: ImageF,
    pub mask: ImageF,
}

impl RenderBundle {
    fn new(w: usize, h: usize) -> Self {
        RenderBundle {
            color: ImageRgb::new(w, h),
            depth_standard: ImageF::new(w, h),
            normal: ImageRgb::new(w, h),
            distance: ImageF::new(w, h),
            alpha_acc: ImageF::new(w, h),
            mask: ImageF::new(w, h),
        }
    }
}

/// A projected Gaussian plus its view-resolved payload.
#[derive(Debug, Clone)]
pub struct PreparedGaussian {
    pub pg: ProjectedGaussian,
    pub opacity: f64,
    pub color: [f64; 3],
    pub tau: f64,
}

/// Per-view acceleration structure: retained Gaussians depth-sorted and
/// binned into screen tiles.
pub struct PreparedView {
    pub cam: CameraView,
    pub gaussians: Vec<PreparedGaussian>,
    /// Per-tile indices into `gaussians`, each list depth-ordered.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

/// Gaussian splat density at pixel `u` scaled by opacity, with the standard
/// cutoff and clamp.
#[inline]
pub fn fragment_alpha(pg: &ProjectedGaussian, u: Vector2<f64>, opacity: f64) -> f64 {
    let d = u - pg.center_px;
    let e = pg.cov_inv[(0, 0)] * d.x * d.x
        + 2.0 * pg.cov_inv[(0, 1)] * d.x * d.y
        + pg.cov_inv[(1, 1)] * d.y * d.y;
    let alpha = (opacity * (-0.5 * e).exp()).min(ALPHA_CLAMP);
    if alpha < ALPHA_CUTOFF {
        0.0
    } else {
        alpha
    }
}

/// Projects and sorts a scene for one view. `stage` selects the appearance
/// model (1: SH diffuse, 2: diffuse + ASG specular).
pub fn prepare_view(scene: &SceneFile, cam: &CameraView, stage: u8) -> PreparedView {
    let cam_center = cam.center();
    let mut prepared: Vec<PreparedGaussian> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let a = activate(g);
            match project(&a, cam, i) {
                Projection::Culled => None,
                Projection::Visible(pg) => {
                    let view_dir = (a.center - cam_center).normalize();
                    let v = ViewContext {
                        view_dir,
                        normal: pg.normal,
                    };
                    let color = full_color(
                        scene.meta.sh_degree,
                        &g.sh,
                        &g.asg_feature,
                        scene.asg_bank.as_ref(),
                        &v,
                        stage,
                    );
                    Some(PreparedGaussian {
                        pg,
                        opacity: a.opacity,
                        color,
                        tau: a.tau,
                    })
                }
            }
        })
        .collect();

    // Depth sort. Ties fall back to world position so that record permutation
    // cannot change the traversal order.
    prepared.sort_by(|a, b| {
        a.pg.z
            .total_cmp(&b.pg.z)
            .then(a.pg.center_px.x.total_cmp(&b.pg.center_px.x))
            .then(a.pg.center_px.y.total_cmp(&b.pg.center_px.y))
            .then(a.pg.plane_dist.total_cmp(&b.pg.plane_dist))
    });

    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, p) in prepared.iter().enumerate() {
        let x0 = ((p.pg.center_px.x - p.pg.radius).floor().max(0.0) as usize) / TILE;
        let y0 = ((p.pg.center_px.y - p.pg.radius).floor().max(0.0) as usize) / TILE;
        let x1 = (((p.pg.center_px.x + p.pg.radius).ceil() as isize).clamp(0, cam.width as isize - 1)
            as usize)
            / TILE;
        let y1 = (((p.pg.center_px.y + p.pg.radius).ceil() as isize)
            .clamp(0, cam.height as isize - 1) as usize)
            / TILE;
        if p.pg.center_px.x + p.pg.radius < 0.0 || p.pg.center_px.y + p.pg.radius < 0.0 {
            continue;
        }
        for ty in y0..=y1.min(tiles_y - 1) {
            for tx in x0..=x1.min(tiles_x - 1) {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    PreparedView {
        cam: cam.clone(),
        gaussians: prepared,
        tiles,
        tiles_x,
        tiles_y,
    }
}

impl PreparedView {
    #[inline]
    pub fn tile_for_pixel(&self, x: usize, y: usize) -> &[u32] {
        &self.tiles[(y / TILE) * self.tiles_x + (x / TILE)]
    }

    /// Collects the depth-sorted fragment list for one pixel, with
    /// transmittance filled in and early termination applied.
    pub fn pixel_fragments(&self, x: usize, y: usize) -> Vec<SplatFragment> {
        let u = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
        let ray = self.cam.pixel_ray(x, y);
        let mut out = Vec::new();
        let mut t = 1.0;
        for &slot in self.tile_for_pixel(x, y) {
            if t < T_MIN {
                break;
            }
            let p = &self.gaussians[slot as usize];
            let alpha = fragment_alpha(&p.pg, u, p.opacity);
            if alpha == 0.0 {
                continue;
            }
            // Camera-facing normals give n . (-v) >= 0 for front-on rays.
            let denom = (-p.pg.normal.dot(&ray)).max(EPS_DENOM);
            out.push(SplatFragment {
                alpha,
                t,
                z: p.pg.z,
                plane_depth: p.pg.plane_dist / denom,
                color: p.color,
                normal: p.pg.normal,
                dist: p.pg.plane_dist,
                tau: p.tau,
                index: p.pg.index,
            });
            t *= 1.0 - alpha;
        }
        out
    }
}

/// Alpha-blended per-pixel outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelComposite {
    pub color: [f64; 3],
    pub depth_standard: f64,
    pub normal: Vector3<f64>,
    pub distance: f64,
    pub alpha_acc: f64,
}

/// Front-to-back alpha compositing over a sorted fragment list. Transmittance
/// is recomputed from the alphas; traversal stops early below `T_MIN`.
pub fn composite(fragments: &[SplatFragment]) -> PixelComposite {
    let mut out = PixelComposite {
        normal: Vector3::zeros(),
        ..Default::default()
    };
    let mut t = 1.0;
    for f in fragments {
        if t < T_MIN {
            break;
        }
        let w = t * f.alpha;
        for c in 0..3 {
            out.color[c] += w * f.color[c];
        }
        out.depth_standard += w * f.z;
        out.normal += w * f.normal;
        out.distance += w * f.dist;
        out.alpha_acc += w;
        t *= 1.0 - f.alpha;
    }
    out
}

/// Predicted transparency-mask value: tau of the deepest fragment whose
/// transmittance is still at or above `theta_t`; 0 when none qualifies.
pub fn render_transparency_mask(fragments: &[SplatFragment], theta_t: f64) -> f64 {
    let mut t = 1.0;
    let mut value = 0.0;
    let mut found = false;
    for f in fragments {
        if t >= theta_t {
            value = f.tau;
            found = true;
        } else {
            break;
        }
        t *= 1.0 - f.alpha;
    }
    if found {
        value
    } else {
        0.0
    }
}

/// Renders all output maps for one view. Deterministic: scene record
/// permutation and worker count do not change a single bit.
pub fn render_view(scene: &SceneFile, cam: &CameraView, stage: u8) -> RenderBundle {
    let prepared = prepare_view(scene, cam, stage);
    render_prepared(&prepared)
}

pub fn render_prepared(prepared: &PreparedView) -> RenderBundle {
    let (w, h) = (prepared.cam.width, prepared.cam.height);
    let mut bundle = RenderBundle::new(w, h);

    // One tile row of output per worker, stitched in fixed order.
    let tile_rects: Vec<(usize, usize)> = (0..prepared.tiles_y)
        .flat_map(|ty| (0..prepared.tiles_x).map(move |tx| (tx, ty)))
        .collect();
    let results: Vec<(usize, usize, Vec<(PixelComposite, f64)>)> = tile_rects
        .par_iter()
        .map(|&(tx, ty)| {
            let x0 = tx * TILE;
            let y0 = ty * TILE;
            let x1 = (x0 + TILE).min(w);
            let y1 = (y0 + TILE).min(h);
            let mut px = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let frags = prepared.pixel_fragments(x, y);
                    let comp = composite(&frags);
                    let mask = render_transparency_mask(&frags, THETA_T);
                    px.push((comp, mask));
                }
            }
            (tx, ty, px)
        })
        .collect();

    for (tx, ty, px) in results {
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let x1 = (x0 + TILE).min(w);
        let mut it = px.into_iter();
        for y in y0..(y0 + TILE).min(h) {
            for x in x0..x1 {
                let (comp, mask) = it.next().expect("tile pixel count");
                bundle.color.set(x, y, comp.color);
                *bundle.depth_standard.at_mut(x, y) = comp.depth_standard;
                bundle
                    .normal
                    .set(x, y, [comp.normal.x, comp.normal.y, comp.normal.z]);
                *bundle.distance.at_mut(x, y) = comp.distance;
                *bundle.alpha_acc.at_mut(x, y) = comp.alpha_acc;
                *bundle.mask.at_mut(x, y) = mask;
            }
        }
    }
    bundle
}
