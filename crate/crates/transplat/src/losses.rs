//! Training losses: hybrid de-light blend, RGB L1+SSIM, transparency BCE,
//! masked normal prior, depth-normal consistency, flatten regularization, and
//! the per-stage totals. Each differentiable loss has a paired `_grad`
//! function returning analytic input gradients.

use nalgebra::Vector3;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::img::{check_same_dims, ImageF, ImageRgb};
use crate::scene::SceneFile;

/// Loss weights; defaults follow the training objective.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub lambda_n: f64,
    pub lambda_f: f64,
    /// Normal-prior mask threshold.
    pub theta_n: f64,
    /// Transparency-mask transmittance threshold.
    pub theta_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 0.2,
            lambda_t: 0.1,
            lambda_n: 0.1,
            lambda_f: 100.0,
            theta_n: 0.0,
            theta_t: 0.5,
        }
    }
}

/// Per-view supervision inputs.
#[derive(Debug, Clone)]
pub struct PriorInputs {
    pub gt: ImageRgb,
    pub delighted: ImageRgb,
    /// Binary transparency mask.
    pub mask: ImageF,
    /// Prior normal map; zero rows mark invalid pixels.
    pub normal_prior: ImageRgb,
}

impl PriorInputs {
    pub fn validate(&self) -> Result<()> {
        let d = self.gt.dims();
        check_same_dims(d, self.delighted.dims())?;
        check_same_dims(d, self.mask.dims())?;
        check_same_dims(d, self.normal_prior.dims())?;
        Ok(())
    }

    /// The hybrid Stage-1 target: de-lighted inside the mask, ground truth
    /// outside.
    pub fn hybrid(&self) -> Result<ImageRgb> {
        hybrid_delight(&self.gt, &self.delighted, &self.mask)
    }
}

/// Per-pixel blend `M (.) I_D + (1 - M) (.) I_GT`.
pub fn hybrid_delight(gt: &ImageRgb, delighted: &ImageRgb, mask: &ImageF) -> Result<ImageRgb> {
    check_same_dims(gt.dims(), delighted.dims())?;
    check_same_dims(gt.dims(), mask.dims())?;
    let mut out = ImageRgb::new(gt.width, gt.height);
    for y in 0..gt.height {
        for x in 0..gt.width {
            let m = mask.at(x, y);
            let a = gt.at(x, y);
            let b = delighted.at(x, y);
            out.set(
                x,
                y,
                [
                    m * b[0] + (1.0 - m) * a[0],
                    m * b[1] + (1.0 - m) * a[1],
                    m * b[2] + (1.0 - m) * a[2],
                ],
            );
        }
    }
    Ok(out)
}

// --- SSIM -----------------------------------------------------------------

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_RADIUS: usize = 5;

fn ssim_kernel() -> [f64; 2 * SSIM_RADIUS + 1] {
    let sigma = 1.5;
    let mut k = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Border-renormalized separable Gaussian filter along one axis.
fn conv1d_norm(src: &ImageF, horizontal: bool) -> ImageF {
    let k = ssim_kernel();
    let (w, h) = src.dims();
    let mut out = ImageF::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let off = i as isize - SSIM_RADIUS as isize;
                let (sx, sy) = if horizontal {
                    (x as isize + off, y as isize)
                } else {
                    (x as isize, y as isize + off)
                };
                if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                    continue;
                }
                acc += kv * src.at(sx as usize, sy as usize);
                wsum += kv;
            }
            *out.at_mut(x, y) = acc / wsum;
        }
    }
    out
}

/// Adjoint of `conv1d_norm`: scatters each output gradient back through the
/// same border-renormalized taps.
fn conv1d_norm_adjoint(grad: &ImageF, horizontal: bool) -> ImageF {
    let k = ssim_kernel();
    let (w, h) = grad.dims();
    let mut out = ImageF::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut wsum = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let off = i as isize - SSIM_RADIUS as isize;
                let (sx, sy) = if horizontal {
                    (x as isize + off, y as isize)
                } else {
                    (x as isize, y as isize + off)
                };
                if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                    continue;
                }
                wsum += kv;
            }
            let g = grad.at(x, y) / wsum;
            for (i, kv) in k.iter().enumerate() {
                let off = i as isize - SSIM_RADIUS as isize;
                let (sx, sy) = if horizontal {
                    (x as isize + off, y as isize)
                } else {
                    (x as isize, y as isize + off)
                };
                if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                    continue;
                }
                *out.at_mut(sx as usize, sy as usize) += kv * g;
            }
        }
    }
    out
}

fn gauss_filter(src: &ImageF) -> ImageF {
    conv1d_norm(&conv1d_norm(src, true), false)
}

fn gauss_filter_adjoint(grad: &ImageF) -> ImageF {
    conv1d_norm_adjoint(&conv1d_norm_adjoint(grad, false), true)
}

fn mul_images(a: &ImageF, b: &ImageF) -> ImageF {
    ImageF {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

/// Mean SSIM of one channel pair, optionally accumulating the gradient with
/// respect to `x` (scaled by `grad_scale`).
fn ssim_channel(x: &ImageF, y: &ImageF, grad: Option<(&mut ImageF, f64)>) -> f64 {
    let n = (x.width * x.height) as f64;
    let mu_x = gauss_filter(x);
    let mu_y = gauss_filter(y);
    let x2f = gauss_filter(&mul_images(x, x));
    let y2f = gauss_filter(&mul_images(y, y));
    let xyf = gauss_filter(&mul_images(x, y));

    let mut total = 0.0;
    let mut g_mu = ImageF::new(x.width, x.height);
    let mut g_x2 = ImageF::new(x.width, x.height);
    let mut g_xy = ImageF::new(x.width, x.height);
    let want_grad = grad.is_some();
    for i in 0..x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let sx = x2f.data[i] - mx * mx;
        let sy = y2f.data[i] - my * my;
        let sxy = xyf.data[i] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * sxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = sx + sy + SSIM_C2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if want_grad {
            let d_a1 = a2 / (b1 * b2);
            let d_a2 = a1 / (b1 * b2);
            let d_b1 = -a1 * a2 / (b1 * b1 * b2);
            let d_b2 = -a1 * a2 / (b1 * b2 * b2);
            let d_sxy = 2.0 * d_a2;
            let d_sx = d_b2;
            // mu_x enters a1, b1 and, through the variance corrections, sx and sxy.
            g_mu.data[i] = 2.0 * my * d_a1 + 2.0 * mx * d_b1 - 2.0 * mx * d_sx - my * d_sxy;
            g_x2.data[i] = d_sx;
            g_xy.data[i] = d_sxy;
        }
    }
    if let Some((out, scale)) = grad {
        let adj_mu = gauss_filter_adjoint(&g_mu);
        let adj_x2 = gauss_filter_adjoint(&g_x2);
        let adj_xy = gauss_filter_adjoint(&g_xy);
        for i in 0..out.data.len() {
            out.data[i] += scale / n
                * (adj_mu.data[i] + 2.0 * x.data[i] * adj_x2.data[i] + y.data[i] * adj_xy.data[i]);
        }
    }
    total / n
}

/// Mean SSIM over RGB channels (11x11 Gaussian window, sigma 1.5).
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    check_same_dims(a.dims(), b.dims())?;
    let mut acc = 0.0;
    for c in 0..3 {
        acc += ssim_channel(&a.channel(c), &b.channel(c), None);
    }
    Ok(acc / 3.0)
}

/// RGB loss: `(1 - lambda_r) L1 + lambda_r (1 - SSIM)`.
pub fn rgb_loss(pred: &ImageRgb, target: &ImageRgb, lambda_r: f64) -> Result<f64> {
    Ok(rgb_loss_grad_impl(pred, target, lambda_r, false)?.0)
}

/// RGB loss plus its gradient with respect to the prediction.
pub fn rgb_loss_grad(pred: &ImageRgb, target: &ImageRgb, lambda_r: f64) -> Result<(f64, ImageRgb)> {
    let (loss, g) = rgb_loss_grad_impl(pred, target, lambda_r, true)?;
    Ok((loss, g.expect("gradient requested")))
}

fn rgb_loss_grad_impl(
    pred: &ImageRgb,
    target: &ImageRgb,
    lambda_r: f64,
    want_grad: bool,
) -> Result<(f64, Option<ImageRgb>)> {
    check_same_dims(pred.dims(), target.dims())?;
    let n = pred.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = want_grad.then(|| ImageRgb::new(pred.width, pred.height));
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        l1 += d.abs();
        if let Some(g) = &mut grad {
            g.data[i] = (1.0 - lambda_r) * d.signum() / n;
        }
    }
    l1 /= n;

    let mut ssim_sum = 0.0;
    let mut grad_chans: Vec<ImageF> = Vec::new();
    for c in 0..3 {
        if want_grad {
            let mut gc = ImageF::new(pred.width, pred.height);
            // d/dx of lambda_r (1 - mean ssim / 3): negative sign, third.
            ssim_sum += ssim_channel(
                &pred.channel(c),
                &target.channel(c),
                Some((&mut gc, -lambda_r / 3.0)),
            );
            grad_chans.push(gc);
        } else {
            ssim_sum += ssim_channel(&pred.channel(c), &target.channel(c), None);
        }
    }
    if let Some(g) = &mut grad {
        for c in 0..3 {
            for i in 0..grad_chans[c].data.len() {
                g.data[i * 3 + c] += grad_chans[c].data[i];
            }
        }
    }
    let loss = (1.0 - lambda_r) * l1 + lambda_r * (1.0 - ssim_sum / 3.0);
    Ok((loss, grad))
}

// --- transparency BCE -----------------------------------------------------

pub const BCE_EPS: f64 = 1e-6;

/// Mean binary cross-entropy between the predicted and ground-truth masks.
pub fn transparency_loss(pred: &ImageF, target: &ImageF) -> Result<f64> {
    Ok(transparency_loss_grad(pred, target)?.0)
}

/// BCE plus gradient with respect to the prediction. The clamp to
/// `[eps, 1-eps]` zeroes the gradient outside that range.
pub fn transparency_loss_grad(pred: &ImageF, target: &ImageF) -> Result<(f64, ImageF)> {
    check_same_dims(pred.dims(), target.dims())?;
    let n = pred.data.len() as f64;
    let mut loss = 0.0;
    let mut grad = ImageF::new(pred.width, pred.height);
    for i in 0..pred.data.len() {
        let y = target.data[i];
        let raw = pred.data[i];
        let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        if raw > BCE_EPS && raw < 1.0 - BCE_EPS {
            grad.data[i] = (-(y / p) + (1.0 - y) / (1.0 - p)) / n;
        }
    }
    Ok((loss / n, grad))
}

// --- normal losses --------------------------------------------------------

/// Masked normal prior loss: mean over valid-prior pixels of
/// `[alignment >= theta_n] * (1 - N_p . N_r)`. Prior rows are normalized;
/// the rendered normal is used as blended. The indicator is treated as a
/// constant in the gradient.
pub fn normal_prior_loss(rendered: &ImageRgb, prior: &ImageRgb, theta_n: f64) -> Result<f64> {
    Ok(normal_prior_loss_grad(rendered, prior, theta_n)?.0)
}

pub fn normal_prior_loss_grad(
    rendered: &ImageRgb,
    prior: &ImageRgb,
    theta_n: f64,
) -> Result<(f64, ImageRgb)> {
    check_same_dims(rendered.dims(), prior.dims())?;
    let mut loss = 0.0;
    let mut valid = 0usize;
    let mut grad = ImageRgb::new(rendered.width, rendered.height);
    let mut terms: Vec<(usize, usize, Vector3<f64>)> = Vec::new();
    for y in 0..rendered.height {
        for x in 0..rendered.width {
            let p = prior.at(x, y);
            let pv = Vector3::new(p[0], p[1], p[2]);
            let norm = pv.norm();
            if norm < 1e-9 {
                continue; // invalid prior pixel
            }
            valid += 1;
            let ph = pv / norm;
            let r = rendered.at(x, y);
            let rv = Vector3::new(r[0], r[1], r[2]);
            let align = ph.dot(&rv);
            if align >= theta_n {
                loss += 1.0 - align;
                terms.push((x, y, ph));
            }
        }
    }
    if valid == 0 {
        return Ok((0.0, grad));
    }
    let n = valid as f64;
    for (x, y, ph) in terms {
        grad.set(x, y, [-ph.x / n, -ph.y / n, -ph.z / n]);
    }
    Ok((loss / n, grad))
}

/// Normal of the back-projected depth map at pixel (x, y) via central
/// differences, oriented toward the camera; `None` when any required depth is
/// the sentinel or the pixel touches the border.
fn depth_normal_at(depth: &ImageF, cam: &CameraView, x: usize, y: usize) -> Option<Vector3<f64>> {
    if x == 0 || y == 0 || x + 1 >= depth.width || y + 1 >= depth.height {
        return None;
    }
    let ids = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1), (x, y)];
    if ids.iter().any(|&(px, py)| depth.at(px, py) <= 0.0) {
        return None;
    }
    let point = |px: usize, py: usize| {
        let ray = cam.pixel_ray(px, py);
        cam.center() + depth.at(px, py) * ray
    };
    let dx = point(x + 1, y) - point(x - 1, y);
    let dy = point(x, y + 1) - point(x, y - 1);
    let n = dy.cross(&dx);
    let len = n.norm();
    if len < 1e-12 {
        return None;
    }
    let mut n = n / len;
    if n.dot(&cam.pixel_ray(x, y)) > 0.0 {
        n = -n;
    }
    Some(n)
}

/// Depth-normal consistency: mean over valid interior pixels of
/// `1 - N_d . N_r` with `N_d` derived from the depth map.
pub fn depth_normal_consistency(depth: &ImageF, rendered: &ImageRgb, cam: &CameraView) -> Result<f64> {
    check_same_dims(depth.dims(), rendered.dims())?;
    let mut loss = 0.0;
    let mut count = 0usize;
    for y in 0..depth.height {
        for x in 0..depth.width {
            let Some(nd) = depth_normal_at(depth, cam, x, y) else {
                continue;
            };
            let r = rendered.at(x, y);
            loss += 1.0 - nd.dot(&Vector3::new(r[0], r[1], r[2]));
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(loss / count as f64)
}

/// Depth-normal consistency with gradients for both the depth map and the
/// rendered normal map.
pub fn depth_normal_consistency_grad(
    depth: &ImageF,
    rendered: &ImageRgb,
    cam: &CameraView,
) -> Result<(f64, ImageF, ImageRgb)> {
    check_same_dims(depth.dims(), rendered.dims())?;
    let mut loss = 0.0;
    let mut count = 0usize;
    struct Term {
        x: usize,
        y: usize,
        nd: Vector3<f64>,
        // Gradient of the *unnormalized* cross product w.r.t. the four
        // neighbor depths comes from the ray geometry below.
    }
    let mut terms = Vec::new();
    for y in 0..depth.height {
        for x in 0..depth.width {
            let Some(nd) = depth_normal_at(depth, cam, x, y) else {
                continue;
            };
            let r = rendered.at(x, y);
            loss += 1.0 - nd.dot(&Vector3::new(r[0], r[1], r[2]));
            count += 1;
            terms.push(Term { x, y, nd });
        }
    }
    let mut d_depth = ImageF::new(depth.width, depth.height);
    let mut d_rendered = ImageRgb::new(depth.width, depth.height);
    if count == 0 {
        return Ok((0.0, d_depth, d_rendered));
    }
    let n = count as f64;
    for t in &terms {
        let (x, y) = (t.x, t.y);
        let r = rendered.at(x, y);
        let rv = Vector3::new(r[0], r[1], r[2]);
        // d loss / d N_r = -N_d / n.
        d_rendered.set(
            x,
            y,
            [
                d_rendered.at(x, y)[0] - t.nd.x / n,
                d_rendered.at(x, y)[1] - t.nd.y / n,
                d_rendered.at(x, y)[2] - t.nd.z / n,
            ],
        );
        // Unnormalized cross product u = dy x dx with the camera-facing flip
        // folded in as a constant sign.
        let point = |px: usize, py: usize| {
            let ray = cam.pixel_ray(px, py);
            cam.center() + depth.at(px, py) * ray
        };
        let dx = point(x + 1, y) - point(x - 1, y);
        let dyv = point(x, y + 1) - point(x, y - 1);
        let mut u = dyv.cross(&dx);
        let mut sign = 1.0;
        if u.dot(&cam.pixel_ray(x, y)) > 0.0 {
            sign = -1.0;
            u = -u;
        }
        let len = u.norm();
        // d(u/|u|)/du applied to -rv/n.
        let gn = -rv / n;
        let du = (gn - u * (u.dot(&gn) / (len * len))) / len;
        let du = du * sign;
        // u = dyv x dx: d u / d dx = dyv x (.), d u / d dyv = (.) x dx.
        let g_dx = du.cross(&dyv); // since d/d dx (dyv x dx) . g = g . (dyv x e) = (g x dyv) . e... sign checked in tests
        let g_dy = dx.cross(&du);
        // Each difference point depends on its pixel depth through the ray.
        let mut add = |px: usize, py: usize, gvec: Vector3<f64>, s: f64| {
            let ray = cam.pixel_ray(px, py);
            *d_depth.at_mut(px, py) += s * gvec.dot(&ray);
        };
        add(x + 1, y, g_dx, 1.0);
        add(x - 1, y, g_dx, -1.0);
        add(x, y + 1, g_dy, 1.0);
        add(x, y - 1, g_dy, -1.0);
    }
    Ok((loss / n, d_depth, d_rendered))
}

// --- flatten --------------------------------------------------------------

/// Sum over Gaussians of the smallest activated scale.
pub fn flatten_loss(scene: &SceneFile) -> f64 {
    scene
        .gaussians
        .iter()
        .map(|g| g.log_scale.map(f64::exp).min())
        .sum()
}

/// Flatten loss with per-record gradient on the log-scales.
pub fn flatten_loss_grad(scene: &SceneFile) -> (f64, Vec<Vector3<f64>>) {
    let mut loss = 0.0;
    let grads = scene
        .gaussians
        .iter()
        .map(|g| {
            let s = g.log_scale.map(f64::exp);
            let mut axis = 0;
            for k in 1..3 {
                if s[k] < s[axis] {
                    axis = k;
                }
            }
            loss += s[axis];
            let mut grad = Vector3::zeros();
            grad[axis] = s[axis]; // d exp(l) / d l = exp(l)
            grad
        })
        .collect();
    (loss, grads)
}

// --- totals ---------------------------------------------------------------

/// The individual loss terms of one training step.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub rgb: f64,
    pub trans: f64,
    /// Combined normal term (prior + consistency).
    pub normal: f64,
    pub flatten: f64,
}

/// Weighted stage total. Both stages share the same regularization
/// structure; stage only selects which RGB target was used upstream.
pub fn stage_total(stage: u8, parts: &LossParts, w: &LossWeights) -> Result<f64> {
    debug_assert!(stage == 1 || stage == 2);
    for (name, v) in [
        ("rgb", parts.rgb),
        ("trans", parts.trans),
        ("normal", parts.normal),
        ("flatten", parts.flatten),
    ] {
        if !v.is_finite() {
            return Err(Error::NonfinitePart(name));
        }
    }
    Ok(parts.rgb + w.lambda_t * parts.trans + w.lambda_n * parts.normal + w.lambda_f * parts.flatten)
}
