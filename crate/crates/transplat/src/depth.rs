//! Per-pixel depth estimators over sorted fragment lists: standard blended
//! depth, unbiased depth, nearest plane depth, and first-surface depth via a
//! maximum-weight window over the transmittance candidate band.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::img::ImageF;
use crate::rasterizer::{
    composite, prepare_view, render_transparency_mask, SplatFragment, THETA_T, TILE,
};
use crate::scene::SceneFile;

/// Parameters of the first-surface window search.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSearchConfig {
    /// Window size, meters.
    pub window: f64,
    /// Upper transmittance bound of the candidate band.
    pub t_start: f64,
    /// Lower transmittance bound of the candidate band.
    pub t_end: f64,
    /// Floor for the plane-depth denominator.
    pub eps_denom: f64,
}

impl Default for WindowSearchConfig {
    fn default() -> Self {
        WindowSearchConfig {
            window: 0.003,
            t_start: 0.95,
            t_end: 0.05,
            eps_denom: 1e-4,
        }
    }
}

impl WindowSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0) {
            return Err(Error::ConfigValidation(format!(
                "window size must be positive, got {}",
                self.window
            )));
        }
        if !(self.t_end < self.t_start) {
            return Err(Error::ConfigValidation(format!(
                "t_end ({}) must be below t_start ({})",
                self.t_end, self.t_start
            )));
        }
        Ok(())
    }
}

/// Ray-plane intersection depth for one Gaussian plane: distance `d` over the
/// cosine between the camera-facing normal and the reversed ray. Returns the
/// clamped depth and whether the grazing clamp fired.
pub fn plane_depth(dist: f64, normal: &Vector3<f64>, ray: &Vector3<f64>, eps: f64) -> (f64, bool) {
    let denom = -normal.dot(ray);
    if denom < eps {
        (dist / eps, true)
    } else {
        (dist / denom, false)
    }
}

/// Unbiased depth from the blended distance and normal maps at one pixel.
/// Returns the sentinel 0 when nothing was hit.
pub fn unbiased_depth(
    distance: f64,
    normal: &Vector3<f64>,
    ray: &Vector3<f64>,
    alpha_acc: f64,
    eps: f64,
) -> f64 {
    if alpha_acc <= 0.0 {
        return 0.0;
    }
    distance / (-normal.dot(ray)).max(eps)
}

/// Minimum plane depth over all fragments; `None` on an empty list.
pub fn nearest_depth(fragments: &[SplatFragment]) -> Option<f64> {
    fragments
        .iter()
        .map(|f| f.plane_depth)
        .min_by(f64::total_cmp)
}

/// Outcome of the first-surface window search at one pixel.
#[derive(Debug, Clone, PartialEq)]
pub enum FirstSurface {
    Window {
        depth: f64,
        /// Indices (into the input fragment slice) of the fragments inside
        /// the selected window.
        members: Vec<usize>,
        w_sum: f64,
    },
    /// Candidate band is empty; callers fall back to unbiased depth.
    NoCandidates,
}

/// Maximum-weight window search over the transmittance candidate band.
///
/// Candidates are fragments with `t_end <= T_i <= t_start`. Windows of width
/// `cfg.window` are anchored at each candidate's plane depth; the window with
/// the largest weight sum wins, ties going to the smallest anchor depth. The
/// returned depth is the weight-averaged plane depth inside the winner.
pub fn first_surface_depth(fragments: &[SplatFragment], cfg: &WindowSearchConfig) -> FirstSurface {
    // Candidate list sorted by plane depth; index keeps the sort total.
    let mut cand: Vec<(f64, f64, usize)> = fragments
        .iter()
        .enumerate()
        .filter(|(_, f)| f.t >= cfg.t_end && f.t <= cfg.t_start)
        .map(|(i, f)| (f.plane_depth, f.t * f.alpha, i))
        .collect();
    if cand.is_empty() {
        return FirstSurface::NoCandidates;
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

    let m = cand.len();
    let mut best_j = 0;
    let mut best_hi = 0;
    let mut best_sum = f64::NEG_INFINITY;
    let mut hi = 0;
    for j in 0..m {
        if hi < j {
            hi = j;
        }
        while hi < m && cand[hi].0 < cand[j].0 + cfg.window {
            hi += 1;
        }
        // Fresh ascending-order sum keeps the result independent of the
        // two-pointer bookkeeping.
        let mut sum = 0.0;
        for c in &cand[j..hi] {
            sum += c.1;
        }
        if sum > best_sum {
            best_sum = sum;
            best_j = j;
            best_hi = hi;
        }
    }

    let winners = &cand[best_j..best_hi];
    let mut num = 0.0;
    let mut den = 0.0;
    for &(d, w, _) in winners {
        num += w * d;
        den += w;
    }
    FirstSurface::Window {
        depth: if den > 0.0 { num / den } else { winners[0].0 },
        members: winners.iter().map(|&(_, _, i)| i).collect(),
        w_sum: best_sum,
    }
}

/// Blend-weight floor below which a fragment is ignored when measuring how far
/// apart the surfaces contributing to a pixel sit.
const SPREAD_WEIGHT_FLOOR: f64 = 0.02;

/// Plane-depth spread beyond which a blended depth no longer describes a
/// single surface and is unsafe to fuse.
pub const AMBIGUOUS_SPREAD: f64 = 0.03;

/// Plane-depth spread of the fragments that carry meaningful blend weight at a
/// pixel. Zero for empty or single-surface pixel stacks.
pub fn blend_spread(fragments: &[SplatFragment]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for f in fragments {
        if f.alpha * f.t >= SPREAD_WEIGHT_FLOOR {
            lo = lo.min(f.plane_depth);
            hi = hi.max(f.plane_depth);
        }
    }
    if hi > lo { hi - lo } else { 0.0 }
}

/// The four per-pixel depth maps plus a flag map marking pixels where the
/// first-surface search fell back to unbiased depth, and a fusion-grade map
/// that never carries between-surface blends (see `extract_all`).
#[derive(Debug, Clone)]
pub struct DepthMaps {
    pub standard: ImageF,
    pub unbiased: ImageF,
    pub nearest: ImageF,
    pub first: ImageF,
    pub fallback: ImageF,
    /// Depth suitable for volumetric fusion: equals `first` wherever the
    /// pixel's blend describes a single surface; on pixels mixing
    /// well-separated surfaces it is replaced by the maximum-weight window
    /// depth (a value on one of the surfaces) or, with no window candidates,
    /// by the invalid sentinel 0.
    pub fusion: ImageF,
}

/// Selects one of the four estimators by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMode {
    Standard,
    Unbiased,
    Nearest,
    First,
}

impl std::str::FromStr for DepthMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(DepthMode::Standard),
            "unbiased" => Ok(DepthMode::Unbiased),
            "nearest" => Ok(DepthMode::Nearest),
            "first" => Ok(DepthMode::First),
            other => Err(Error::ConfigValidation(format!("unknown depth mode {other:?}"))),
        }
    }
}

/// Runs all four estimators over a view. First-surface logic applies only to
/// pixels whose predicted transparency mask is at least 0.5; opaque pixels
/// copy the unbiased value.
pub fn extract_all(scene: &SceneFile, cam: &CameraView, cfg: &WindowSearchConfig) -> DepthMaps {
    cfg.validate().expect("validated window config");
    let prepared = prepare_view(scene, cam, 1);
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<[f64; 6]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let frags = prepared.pixel_fragments(x, y);
                let ray = cam.pixel_ray(x, y);
                let comp = composite(&frags);
                if comp.alpha_acc <= 0.0 {
                    row.push([0.0; 6]);
                    continue;
                }
                let unb = unbiased_depth(
                    comp.distance,
                    &comp.normal,
                    &ray,
                    comp.alpha_acc,
                    cfg.eps_denom,
                );
                let near = nearest_depth(&frags).unwrap_or(0.0);
                let transparent = render_transparency_mask(&frags, THETA_T) >= 0.5;
                let window = first_surface_depth(&frags, cfg);
                let (first, fell_back) = if transparent {
                    match &window {
                        FirstSurface::Window { depth, .. } => (*depth, 0.0),
                        FirstSurface::NoCandidates => (unb, 1.0),
                    }
                } else {
                    (unb, 0.0)
                };
                // Blends that mix fragments from well-separated surfaces
                // (silhouette rims, lattice gaps) land between the surfaces;
                // fusing them would hallucinate a membrane there. The window
                // depth always sits on one surface, so prefer it for fusion.
                let fusion = if blend_spread(&frags) > AMBIGUOUS_SPREAD {
                    match window {
                        FirstSurface::Window { depth, .. } => depth,
                        FirstSurface::NoCandidates => 0.0,
                    }
                } else {
                    first
                };
                row.push([comp.depth_standard, unb, near, first, fell_back, fusion]);
            }
            row
        })
        .collect();

    let mut maps = DepthMaps {
        standard: ImageF::new(w, h),
        unbiased: ImageF::new(w, h),
        nearest: ImageF::new(w, h),
        first: ImageF::new(w, h),
        fallback: ImageF::new(w, h),
        fusion: ImageF::new(w, h),
    };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            *maps.standard.at_mut(x, y) = v[0];
            *maps.unbiased.at_mut(x, y) = v[1];
            *maps.nearest.at_mut(x, y) = v[2];
            *maps.first.at_mut(x, y) = v[3];
            *maps.fallback.at_mut(x, y) = v[4];
            *maps.fusion.at_mut(x, y) = v[5];
        }
    }
    let _ = TILE; // tiles are used inside pixel_fragments
    maps
}

/// Exhaustive restatement of the anchored-window search, used as the test
/// oracle: every anchored window is enumerated and summed independently.
pub fn first_surface_oracle(fragments: &[SplatFragment], cfg: &WindowSearchConfig) -> FirstSurface {
    let mut cand: Vec<(f64, f64, usize)> = fragments
        .iter()
        .enumerate()
        .filter(|(_, f)| f.t >= cfg.t_end && f.t <= cfg.t_start)
        .map(|(i, f)| (f.plane_depth, f.t * f.alpha, i))
        .collect();
    if cand.is_empty() {
        return FirstSurface::NoCandidates;
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut best: Option<(f64, Vec<usize>, f64)> = None;
    for anchor in 0..cand.len() {
        let lo = cand[anchor].0;
        let mut sum = 0.0;
        let mut members = Vec::new();
        for &(d, w2, i) in &cand {
            if d >= lo && d < lo + cfg.window {
                sum += w2;
                members.push((d, w2, i));
            }
        }
        let better = match &best {
            None => true,
            Some((_, _, bs)) => sum > *bs,
        };
        if better {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(d, w2, _) in &members {
                num += w2 * d;
                den += w2;
            }
            best = Some((
                if den > 0.0 { num / den } else { lo },
                members.iter().map(|&(_, _, i)| i).collect(),
                sum,
            ));
        }
    }
    let (depth, members, w_sum) = best.unwrap();
    FirstSurface::Window {
        depth,
        members,
        w_sum,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn frag(alpha: f64, t: f64, plane_depth: f64) -> SplatFragment {
        SplatFragment {
            alpha,
            t,
            z: plane_depth,
            plane_depth,
            color: [0.5; 3],
            normal: Vector3::new(0.0, 0.0, -1.0),
            dist: plane_depth,
            tau: 0.5,
            index: 0,
        }
    }

    /// Random sorted fragment list with consistent transmittance.
    pub fn random_fragment_list(rng: &mut ChaCha8Rng, n: usize) -> Vec<SplatFragment> {
        let mut zs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0 + 0.3).collect();
        zs.sort_by(f64::total_cmp);
        let mut t = 1.0;
        zs.into_iter()
            .enumerate()
            .map(|(i, z)| {
                let alpha = rng.gen::<f64>() * 0.6 + 0.01;
                let mut f = frag(alpha, t, z + rng.gen::<f64>() * 0.01);
                f.index = i;
                t *= 1.0 - alpha;
                f
            })
            .collect()
    }

    #[test]
    fn plane_depth_examples() {
        let ray = Vector3::new(0.0, 0.0, 1.0);
        let frontal = Vector3::new(0.0, 0.0, -1.0);
        assert_eq!(plane_depth(2.0, &frontal, &ray, 1e-4), (2.0, false));
        // Plane tilted so the cosine is one half.
        let tilted = Vector3::new(-(3f64.sqrt()) / 2.0, 0.0, -0.5);
        let (d, grazing) = plane_depth(2.0, &tilted, &ray, 1e-4);
        assert!((d - 4.0).abs() < 1e-12);
        assert!(!grazing);
        // Grazing denominator clamps and flags.
        let grazing_n = Vector3::new((1.0f64 - 1e-12).sqrt(), 0.0, -1e-6);
        let (d2, g2) = plane_depth(2.0, &grazing_n, &ray, 1e-4);
        assert_eq!(d2, 2.0 / 1e-4);
        assert!(g2);
    }

    #[test]
    fn unbiased_depth_frontal_plane() {
        let ray = Vector3::new(0.0, 0.0, 1.0);
        let n = Vector3::new(0.0, 0.0, -1.0);
        assert!((unbiased_depth(2.0, &n, &ray, 1.0, 1e-4) - 2.0).abs() < 1e-6);
        assert_eq!(unbiased_depth(2.0, &n, &ray, 0.0, 1e-4), 0.0);
    }

    #[test]
    fn unbiased_depth_dilemma_on_constructed_fragments() {
        // Semi-transparent plane at 1 m (surface weight 0.5) over an opaque
        // wall at 3 m: blended quantities pull the depth past the surface.
        let frags = vec![frag(0.5, 1.0, 1.0), frag(1.0 - 1e-9, 0.5, 3.0)];
        let comp = composite(&frags);
        let ray = Vector3::new(0.0, 0.0, 1.0);
        let d = unbiased_depth(comp.distance, &comp.normal, &ray, comp.alpha_acc, 1e-4);
        // Direct evaluation of the blended ratio on these fragments.
        let expected = (0.5 * 1.0 + 0.5 * 3.0) / (0.5 + 0.5);
        assert!((d - expected).abs() < 1e-9);
        assert!(d > 1.0 + 0.5);
    }

    #[test]
    fn nearest_depth_examples() {
        let frags = vec![frag(0.5, 1.0, 1.2), frag(0.5, 0.5, 0.9), frag(0.5, 0.25, 3.0)];
        assert_eq!(nearest_depth(&frags), Some(0.9));
        // A weak floater in front corrupts the minimum.
        let mut with_floater = frags.clone();
        with_floater.insert(0, frag(0.01, 1.0, 0.3));
        assert_eq!(nearest_depth(&with_floater), Some(0.3));
        assert_eq!(nearest_depth(&[]), None);
    }

    #[test]
    fn single_cluster_takes_full_weighted_mean() {
        // All fragments within one millimeter near 2 m: one window holds all.
        let mut t = 1.0;
        let mut frags = Vec::new();
        for k in 0..6 {
            let alpha = 0.12;
            frags.push(frag(alpha, t, 2.0 + k as f64 * 0.0002));
            t *= 1.0 - alpha;
        }
        let cfg = WindowSearchConfig {
            t_start: 1.0,
            ..WindowSearchConfig::default()
        };
        let FirstSurface::Window { depth, members, .. } = first_surface_depth(&frags, &cfg) else {
            panic!("window expected")
        };
        assert_eq!(members.len(), 6);
        let mut num = 0.0;
        let mut den = 0.0;
        for f in &frags {
            num += f.t * f.alpha * f.plane_depth;
            den += f.t * f.alpha;
        }
        assert!((depth - num / den).abs() < 1e-12);
        assert!(depth >= 2.0 && depth <= 2.0 + 0.001);
    }

    #[test]
    fn plate_cluster_beats_spread_wall() {
        // Transparent plate: leading layer above t_start, then concentrated
        // in-band weight near 1 m. Wall: weight spread over 4 cm at 3 m so no
        // single 3 mm window collects much of it.
        let mut frags = Vec::new();
        let mut t: f64 = 1.0;
        for k in 0..8 {
            let alpha = 0.062;
            frags.push(frag(alpha, t, 1.0 + k as f64 * 0.0001));
            t *= 1.0 - alpha;
        }
        let plate_in_band: f64 = frags
            .iter()
            .filter(|f| f.t <= 0.95 && f.t >= 0.05)
            .map(|f| f.t * f.alpha)
            .sum();
        for k in 0..10 {
            let alpha = 0.3;
            frags.push(frag(alpha, t, 3.0 + k as f64 * 0.008));
            t *= 1.0 - alpha;
        }
        let cfg = WindowSearchConfig::default();
        let FirstSurface::Window { depth, w_sum, .. } = first_surface_depth(&frags, &cfg) else {
            panic!("window expected")
        };
        assert!(w_sum >= plate_in_band);
        assert!((depth - 1.0).abs() < 0.003, "depth {depth}");
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = WindowSearchConfig {
            window: 0.05,
            ..WindowSearchConfig::default()
        };
        for _ in 0..2000 {
            let count = rng.gen_range(1..=60);
            let frags = random_fragment_list(&mut rng, count);
            let a = first_surface_depth(&frags, &cfg);
            let b = first_surface_oracle(&frags, &cfg);
            match (&a, &b) {
                (
                    FirstSurface::Window {
                        depth: da,
                        members: ma,
                        w_sum: wa,
                    },
                    FirstSurface::Window {
                        depth: db,
                        members: mb,
                        w_sum: wb,
                    },
                ) => {
                    assert_eq!(ma, mb);
                    assert!((da - db).abs() < 1e-12);
                    assert!((wa - wb).abs() < 1e-12);
                }
                (FirstSurface::NoCandidates, FirstSurface::NoCandidates) => {}
                other => panic!("divergent outcomes {other:?}"),
            }
        }
    }

    #[test]
    fn weight_scaling_leaves_window_and_depth_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = WindowSearchConfig {
            window: 0.05,
            ..WindowSearchConfig::default()
        };
        for _ in 0..200 {
            let frags = random_fragment_list(&mut rng, 30);
            // Scaling every weight by a common factor: apply to alpha while
            // keeping the stored transmittance, then compare member sets.
            let scaled: Vec<SplatFragment> = frags
                .iter()
                .map(|f| {
                    let mut g = f.clone();
                    g.alpha *= 0.35;
                    g.t *= 1.0; // weights w = t * alpha scale uniformly
                    g
                })
                .collect();
            let a = first_surface_depth(&frags, &cfg);
            let b = first_surface_depth(&scaled, &cfg);
            if let (
                FirstSurface::Window {
                    members: ma,
                    depth: da,
                    ..
                },
                FirstSurface::Window {
                    members: mb,
                    depth: db,
                    ..
                },
            ) = (&a, &b)
            {
                assert_eq!(ma, mb);
                assert!((da - db).abs() < 1e-9);
            } else {
                panic!("window expected");
            }
        }
    }

    #[test]
    fn floater_below_margin_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = WindowSearchConfig {
            window: 0.05,
            ..WindowSearchConfig::default()
        };
        'outer: for _ in 0..200 {
            let frags = random_fragment_list(&mut rng, 25);
            let FirstSurface::Window {
                members,
                w_sum,
                depth,
            } = first_surface_depth(&frags, &cfg)
            else {
                continue;
            };
            // Second-best anchored window weight among windows not equal to the winner.
            let mut cand: Vec<(f64, f64)> = frags
                .iter()
                .filter(|f| f.t >= cfg.t_end && f.t <= cfg.t_start)
                .map(|f| (f.plane_depth, f.t * f.alpha))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut second = 0.0f64;
            for j in 0..cand.len() {
                let sum: f64 = cand
                    .iter()
                    .filter(|c| c.0 >= cand[j].0 && c.0 < cand[j].0 + cfg.window)
                    .map(|c| c.1)
                    .sum();
                if sum < w_sum - 1e-12 {
                    second = second.max(sum);
                }
            }
            let margin = w_sum - second;
            if margin <= 1e-9 {
                continue 'outer;
            }
            // Insert a floater far outside the window with weight below the margin.
            let win_min = members
                .iter()
                .map(|&i| frags[i].plane_depth)
                .fold(f64::INFINITY, f64::min);
            let mut with_floater = frags.clone();
            let fl_t = 0.5;
            let fl_alpha = (margin * 0.5 / fl_t).min(0.5);
            let mut fl = frag(fl_alpha, fl_t, win_min - 0.5);
            fl.index = 999;
            with_floater.push(fl);
            let FirstSurface::Window {
                members: m2,
                depth: d2,
                ..
            } = first_surface_depth(&with_floater, &cfg)
            else {
                panic!()
            };
            let set: std::collections::BTreeSet<u64> = members
                .iter()
                .map(|&i| frags[i].plane_depth.to_bits())
                .collect();
            let set2: std::collections::BTreeSet<u64> = m2
                .iter()
                .map(|&i| with_floater[i].plane_depth.to_bits())
                .collect();
            assert_eq!(set, set2);
            assert!((depth - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_leq_first_over_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cfg = WindowSearchConfig {
            window: 0.05,
            ..WindowSearchConfig::default()
        };
        for _ in 0..500 {
            let frags = random_fragment_list(&mut rng, 40);
            if let FirstSurface::Window { depth, .. } = first_surface_depth(&frags, &cfg) {
                let near = nearest_depth(&frags).unwrap();
                assert!(near <= depth + 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(WindowSearchConfig::default().validate().is_ok());
        assert!(WindowSearchConfig {
            t_start: 0.05,
            t_end: 0.95,
            ..WindowSearchConfig::default()
        }
        .validate()
        .is_err());
        assert!(WindowSearchConfig {
            window: 0.0,
            ..WindowSearchConfig::default()
        }
        .validate()
        .is_err());
    }
}
