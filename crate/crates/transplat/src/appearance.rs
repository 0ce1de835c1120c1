//! Per-Gaussian color evaluation: spherical-harmonics diffuse color and the
//! anisotropic-spherical-Gaussian (ASG) specular component with its tiny
//! two-layer decoder.

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::scene::SceneMeta;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real SH basis values at unit direction `d`, bands 0..=degree.
pub fn sh_basis(degree: usize, d: &Vector3<f64>) -> Vec<f64> {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut b = Vec::with_capacity((degree + 1) * (degree + 1));
    b.push(SH_C0);
    if degree >= 1 {
        b.push(-SH_C1 * y);
        b.push(SH_C1 * z);
        b.push(-SH_C1 * x);
    }
    if degree >= 2 {
        b.push(SH_C2[0] * x * y);
        b.push(SH_C2[1] * y * z);
        b.push(SH_C2[2] * (2.0 * z * z - x * x - y * y));
        b.push(SH_C2[3] * x * z);
        b.push(SH_C2[4] * (x * x - y * y));
    }
    if degree >= 3 {
        b.push(SH_C3[0] * y * (3.0 * x * x - y * y));
        b.push(SH_C3[1] * x * y * z);
        b.push(SH_C3[2] * y * (4.0 * z * z - x * x - y * y));
        b.push(SH_C3[3] * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y));
        b.push(SH_C3[4] * x * (4.0 * z * z - x * x - y * y));
        b.push(SH_C3[5] * z * (x * x - y * y));
        b.push(SH_C3[6] * x * (x * x - 3.0 * y * y));
    }
    b
}

/// Partial derivatives of each basis function with respect to (x, y, z).
pub fn sh_basis_grad(degree: usize, d: &Vector3<f64>) -> Vec<[f64; 3]> {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut g = Vec::with_capacity((degree + 1) * (degree + 1));
    g.push([0.0, 0.0, 0.0]);
    if degree >= 1 {
        g.push([0.0, -SH_C1, 0.0]);
        g.push([0.0, 0.0, SH_C1]);
        g.push([-SH_C1, 0.0, 0.0]);
    }
    if degree >= 2 {
        g.push([SH_C2[0] * y, SH_C2[0] * x, 0.0]);
        g.push([0.0, SH_C2[1] * z, SH_C2[1] * y]);
        g.push([
            SH_C2[2] * -2.0 * x,
            SH_C2[2] * -2.0 * y,
            SH_C2[2] * 4.0 * z,
        ]);
        g.push([SH_C2[3] * z, 0.0, SH_C2[3] * x]);
        g.push([SH_C2[4] * 2.0 * x, SH_C2[4] * -2.0 * y, 0.0]);
    }
    if degree >= 3 {
        g.push([
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * x * x - 3.0 * y * y),
            0.0,
        ]);
        g.push([SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y]);
        g.push([
            SH_C3[2] * -2.0 * x * y,
            SH_C3[2] * (4.0 * z * z - x * x - 3.0 * y * y),
            SH_C3[2] * 8.0 * y * z,
        ]);
        g.push([
            SH_C3[3] * -6.0 * x * z,
            SH_C3[3] * -6.0 * y * z,
            SH_C3[3] * (6.0 * z * z - 3.0 * x * x - 3.0 * y * y),
        ]);
        g.push([
            SH_C3[4] * (4.0 * z * z - 3.0 * x * x - y * y),
            SH_C3[4] * -2.0 * x * y,
            SH_C3[4] * 8.0 * x * z,
        ]);
        g.push([
            SH_C3[5] * 2.0 * x * z,
            SH_C3[5] * -2.0 * y * z,
            SH_C3[5] * (x * x - y * y),
        ]);
        g.push([
            SH_C3[6] * (3.0 * x * x - 3.0 * y * y),
            SH_C3[6] * -6.0 * x * y,
            0.0,
        ]);
    }
    g
}

/// Diffuse color from SH coefficients at unit direction `d`, without the
/// non-negativity clamp. `coeffs` is coefficient-major RGB.
pub fn sh_eval_raw(degree: usize, coeffs: &[f64], d: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(degree, d);
    let mut out = [0.0; 3];
    for (i, b) in basis.iter().enumerate() {
        for c in 0..3 {
            out[c] += coeffs[i * 3 + c] * b;
        }
    }
    out
}

/// Diffuse color, clamped to be non-negative.
pub fn sh_eval(degree: usize, coeffs: &[f64], d: &Vector3<f64>) -> [f64; 3] {
    let raw = sh_eval_raw(degree, coeffs, d);
    [raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)]
}

// --- ASG bank -------------------------------------------------------------

/// One anisotropic lobe: an orthonormal frame (columns: tangent x, tangent y,
/// lobe axis z), log-sharpness along the two tangents, and an amplitude
/// vector of width F.
#[derive(Debug, Clone, PartialEq)]
pub struct AsgLobe {
    pub frame: Matrix3<f64>,
    pub log_lambda: f64,
    pub log_mu: f64,
    pub amplitude: Vec<f64>,
}

/// The global specular model: K lobes plus the two-layer decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AsgBank {
    pub lobes: Vec<AsgLobe>,
    pub feat_dim: usize,
    pub pe_octaves: usize,
    pub hidden: usize,
    /// First layer, row-major `hidden x in_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output layer, row-major `3 x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Decoder input width: ASG features, positional encoding of the view
/// direction, the Gaussian normal, and the reversed view direction.
pub fn decoder_in_dim(feat_dim: usize, pe_octaves: usize) -> usize {
    feat_dim + 2 * pe_octaves * 3 + 3 + 3
}

impl AsgBank {
    /// Seeded random initialization with small decoder weights.
    pub fn init(meta: &SceneMeta, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lobes = Vec::with_capacity(meta.asg_lobes);
        for _ in 0..meta.asg_lobes {
            // Random rotation from a random unit quaternion.
            let q = loop {
                let q = [
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                ];
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-3 {
                    break [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
                }
            };
            lobes.push(AsgLobe {
                frame: crate::scene::quat_to_matrix(q),
                log_lambda: rng.gen::<f64>() * 2.0 + 1.0,
                log_mu: rng.gen::<f64>() * 2.0 + 1.0,
                amplitude: (0..meta.asg_feat_dim)
                    .map(|_| rng.gen::<f64>() * 0.2 - 0.1)
                    .collect(),
            });
        }
        let in_dim = decoder_in_dim(meta.asg_feat_dim, meta.pe_octaves);
        let fan = (in_dim as f64).sqrt();
        let w1 = (0..hidden * in_dim)
            .map(|_| (rng.gen::<f64>() - 0.5) / fan)
            .collect();
        let b1 = vec![0.0; hidden];
        let w2 = (0..3 * hidden)
            .map(|_| (rng.gen::<f64>() - 0.5) / (hidden as f64).sqrt())
            .collect();
        let b2 = vec![0.0; 3];
        AsgBank {
            lobes,
            feat_dim: meta.asg_feat_dim,
            pe_octaves: meta.pe_octaves,
            hidden,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn in_dim(&self) -> usize {
        decoder_in_dim(self.feat_dim, self.pe_octaves)
    }

    /// Flattens the bank into one float vector for the scene container.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = vec![self.hidden as f64];
        for l in &self.lobes {
            out.extend(l.frame.iter());
            out.push(l.log_lambda);
            out.push(l.log_mu);
            out.extend(&l.amplitude);
        }
        out.extend(&self.w1);
        out.extend(&self.b1);
        out.extend(&self.w2);
        out.extend(&self.b2);
        out
    }

    pub fn unpack(meta: &SceneMeta, packed: &[f64]) -> Result<Self, String> {
        let mut it = packed.iter().copied();
        let mut next = |what: &str| it.next().ok_or_else(|| format!("truncated bank at {what}"));
        let hidden = next("hidden")? as usize;
        let mut lobes = Vec::with_capacity(meta.asg_lobes);
        for _ in 0..meta.asg_lobes {
            let mut fr = [0.0; 9];
            for v in &mut fr {
                *v = next("frame")?;
            }
            // nalgebra iter order is column-major; rebuild the same way.
            let frame = Matrix3::from_column_slice(&fr);
            let log_lambda = next("lambda")?;
            let log_mu = next("mu")?;
            let amplitude = (0..meta.asg_feat_dim)
                .map(|_| next("amplitude"))
                .collect::<Result<_, _>>()?;
            lobes.push(AsgLobe {
                frame,
                log_lambda,
                log_mu,
                amplitude,
            });
        }
        let in_dim = decoder_in_dim(meta.asg_feat_dim, meta.pe_octaves);
        let w1 = (0..hidden * in_dim).map(|_| next("w1")).collect::<Result<_, _>>()?;
        let b1 = (0..hidden).map(|_| next("b1")).collect::<Result<_, _>>()?;
        let w2 = (0..3 * hidden).map(|_| next("w2")).collect::<Result<_, _>>()?;
        let b2 = (0..3).map(|_| next("b2")).collect::<Result<_, _>>()?;
        if it.next().is_some() {
            return Err("trailing data after bank".into());
        }
        Ok(AsgBank {
            lobes,
            feat_dim: meta.asg_feat_dim,
            pe_octaves: meta.pe_octaves,
            hidden,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

/// View-dependent inputs for one Gaussian.
#[derive(Debug, Clone)]
pub struct ViewContext {
    /// Unit direction camera -> Gaussian, world space.
    pub view_dir: Vector3<f64>,
    /// Unit Gaussian normal, world space.
    pub normal: Vector3<f64>,
}

/// Scalar lobe response at direction `d`: `exp(-lambda a^2 - mu b^2) * max(cos, 0)`
/// in the lobe's local frame.
pub fn lobe_response(lobe: &AsgLobe, d: &Vector3<f64>) -> f64 {
    let a = lobe.frame.column(0).dot(d);
    let b = lobe.frame.column(1).dot(d);
    let c = lobe.frame.column(2).dot(d);
    if c <= 0.0 {
        return 0.0;
    }
    let lambda = lobe.log_lambda.exp();
    let mu = lobe.log_mu.exp();
    (-lambda * a * a - mu * b * b).exp() * c
}

/// F-vector ASG response of the bank alone (zero per-Gaussian feature).
pub fn asg_features(bank: &AsgBank, v: &ViewContext) -> Vec<f64> {
    asg_features_with_kappa(bank, None, &v.view_dir)
}

/// F-vector response with the per-Gaussian latent `kappa` (length K*F) added
/// to the lobe amplitudes.
pub fn asg_features_with_kappa(bank: &AsgBank, kappa: Option<&[f64]>, d: &Vector3<f64>) -> Vec<f64> {
    let f_dim = bank.feat_dim;
    let mut out = vec![0.0; f_dim];
    for (k, lobe) in bank.lobes.iter().enumerate() {
        let g = lobe_response(lobe, d);
        if g == 0.0 {
            continue;
        }
        for f in 0..f_dim {
            let amp = lobe.amplitude[f] + kappa.map_or(0.0, |k2| k2[k * f_dim + f]);
            out[f] += amp * g;
        }
    }
    out
}

/// Sinusoidal positional encoding with `octaves` frequency bands per component.
pub fn positional_encoding(d: &Vector3<f64>, octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * octaves * 3);
    for j in 0..octaves {
        let f = (1u64 << j) as f64;
        for c in 0..3 {
            out.push((f * d[c]).sin());
            out.push((f * d[c]).cos());
        }
    }
    out
}

/// Two-layer decoder forward pass: tanh hidden, logistic output.
pub fn decoder_forward(bank: &AsgBank, input: &[f64]) -> ([f64; 3], Vec<f64>) {
    let in_dim = bank.in_dim();
    debug_assert_eq!(input.len(), in_dim);
    let mut hidden = vec![0.0; bank.hidden];
    for h in 0..bank.hidden {
        let mut acc = bank.b1[h];
        let row = &bank.w1[h * in_dim..(h + 1) * in_dim];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        hidden[h] = acc.tanh();
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut acc = bank.b2[c];
        let row = &bank.w2[c * bank.hidden..(c + 1) * bank.hidden];
        for (w, x) in row.iter().zip(&hidden) {
            acc += w * x;
        }
        *o = crate::scene::sigmoid(acc);
    }
    (out, hidden)
}

/// Assembles the decoder input for one Gaussian and view.
pub fn decoder_input(bank: &AsgBank, kappa: Option<&[f64]>, v: &ViewContext) -> Vec<f64> {
    let mut input = asg_features_with_kappa(bank, kappa, &v.view_dir);
    input.extend(positional_encoding(&v.view_dir, bank.pe_octaves));
    input.extend(v.normal.iter());
    input.extend((-v.view_dir).iter());
    input
}

/// Specular color of the bank alone at one view context.
pub fn specular_color(bank: &AsgBank, v: &ViewContext) -> [f64; 3] {
    let input = decoder_input(bank, None, v);
    decoder_forward(bank, &input).0
}

/// Specular color with the per-Gaussian latent feature.
pub fn specular_color_with_kappa(bank: &AsgBank, kappa: &[f64], v: &ViewContext) -> [f64; 3] {
    let input = decoder_input(bank, Some(kappa), v);
    decoder_forward(bank, &input).0
}

/// Stage-aware color: Stage 1 is SH diffuse only; Stage 2 adds the specular
/// component and clamps to [0, 1].
pub fn full_color(
    degree: usize,
    coeffs: &[f64],
    kappa: &[f64],
    bank: Option<&AsgBank>,
    v: &ViewContext,
    stage: u8,
) -> [f64; 3] {
    let diffuse = sh_eval(degree, coeffs, &v.view_dir);
    match (stage, bank) {
        (2, Some(bank)) => {
            let spec = specular_color_with_kappa(bank, kappa, v);
            [
                (diffuse[0] + spec[0]).clamp(0.0, 1.0),
                (diffuse[1] + spec[1]).clamp(0.0, 1.0),
                (diffuse[2] + spec[2]).clamp(0.0, 1.0),
            ]
        }
        _ => diffuse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_dirs(n: usize) -> Vec<Vector3<f64>> {
        // Fibonacci sphere.
        let mut dirs = Vec::with_capacity(n);
        let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        for i in 0..n {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            dirs.push(Vector3::new(r * th.cos(), y, r * th.sin()));
        }
        dirs
    }

    #[test]
    fn band0_is_constant() {
        let mut coeffs = vec![0.0; 16 * 3];
        coeffs[0] = 2.0;
        coeffs[1] = 3.0;
        coeffs[2] = 4.0;
        for d in sphere_dirs(20) {
            let c = sh_eval(3, &coeffs, &d);
            assert!((c[0] - SH_C0 * 2.0).abs() < 1e-12);
            assert!((c[1] - SH_C0 * 3.0).abs() < 1e-12);
            assert!((c[2] - SH_C0 * 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn band1_z_is_odd() {
        let mut coeffs = vec![0.0; 4 * 3];
        coeffs[2 * 3] = 1.5; // band-1 z term, red channel
        let d = Vector3::new(0.3, -0.2, 0.93).normalize();
        let up = sh_eval_raw(1, &coeffs, &d);
        let dn = sh_eval_raw(1, &coeffs, &(-d));
        assert!((up[0] + dn[0]).abs() < 1e-12);
    }

    #[test]
    fn sh_matches_polynomial_oracle() {
        // Direct re-statement of the real SH polynomials.
        let oracle = |d: &Vector3<f64>, i: usize| -> f64 {
            let (x, y, z) = (d.x, d.y, d.z);
            match i {
                0 => SH_C0,
                1 => -SH_C1 * y,
                2 => SH_C1 * z,
                3 => -SH_C1 * x,
                4 => SH_C2[0] * x * y,
                5 => SH_C2[1] * y * z,
                6 => SH_C2[2] * (2.0 * z * z - x * x - y * y),
                7 => SH_C2[3] * x * z,
                8 => SH_C2[4] * (x * x - y * y),
                9 => SH_C3[0] * y * (3.0 * x * x - y * y),
                10 => SH_C3[1] * x * y * z,
                11 => SH_C3[2] * y * (4.0 * z * z - x * x - y * y),
                12 => SH_C3[3] * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y),
                13 => SH_C3[4] * x * (4.0 * z * z - x * x - y * y),
                14 => SH_C3[5] * z * (x * x - y * y),
                15 => SH_C3[6] * x * (x * x - 3.0 * y * y),
                _ => unreachable!(),
            }
        };
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let coeffs: Vec<f64> = (0..16 * 3).map(|_| rng.gen::<f64>() - 0.5).collect();
        for d in sphere_dirs(100) {
            let got = sh_eval_raw(3, &coeffs, &d);
            let mut want = [0.0; 3];
            for i in 0..16 {
                for c in 0..3 {
                    want[c] += coeffs[i * 3 + c] * oracle(&d, i);
                }
            }
            for c in 0..3 {
                assert!((got[c] - want[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sh_basis_grad_matches_fd() {
        let d = Vector3::new(0.4, -0.3, 0.7); // not necessarily unit for the FD check
        let h = 1e-6;
        let g = sh_basis_grad(3, &d);
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let bp = sh_basis(3, &dp);
            let bm = sh_basis(3, &dm);
            for i in 0..16 {
                let fd = (bp[i] - bm[i]) / (2.0 * h);
                assert!(
                    (fd - g[i][axis]).abs() < 1e-6,
                    "basis {i} axis {axis}: fd {fd} vs {got}",
                    got = g[i][axis]
                );
            }
        }
    }

    fn test_bank() -> AsgBank {
        let meta = SceneMeta {
            sh_degree: 1,
            asg_lobes: 4,
            asg_feat_dim: 8,
            pe_octaves: 4,
            world_scale: 1.0,
        };
        AsgBank::init(&meta, 32, 99)
    }

    #[test]
    fn lobe_on_axis_returns_amplitude() {
        let mut bank = test_bank();
        bank.lobes.truncate(1);
        bank.lobes[0].frame = Matrix3::identity();
        bank.lobes[0].amplitude = vec![0.7; 8];
        let v = ViewContext {
            view_dir: Vector3::new(0.0, 0.0, 1.0),
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        let feats = asg_features(&bank, &v);
        for f in feats {
            assert!((f - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn lobe_back_hemisphere_is_zero() {
        let mut bank = test_bank();
        bank.lobes.truncate(1);
        bank.lobes[0].frame = Matrix3::identity();
        let v = ViewContext {
            view_dir: Vector3::new(0.1, 0.2, -0.9).normalize(),
            normal: Vector3::new(0.0, 0.0, 1.0),
        };
        assert_eq!(asg_features(&bank, &v), vec![0.0; 8]);
    }

    #[test]
    fn sharp_lobe_decays_off_axis() {
        let mut bank = test_bank();
        bank.lobes.truncate(1);
        bank.lobes[0].frame = Matrix3::identity();
        bank.lobes[0].log_lambda = 1000f64.ln();
        bank.lobes[0].log_mu = 1000f64.ln();
        bank.lobes[0].amplitude = vec![1.0; 8];
        let th = 5f64.to_radians();
        let d = Vector3::new(th.sin(), 0.0, th.cos());
        let resp = asg_features_with_kappa(&bank, None, &d);
        assert!(resp[0] < 0.01, "off-axis response {}", resp[0]);
        // Monotone decay along the great circle in the x-z plane.
        let mut prev = f64::INFINITY;
        for deg in [0.0f64, 1.0, 2.0, 5.0, 10.0, 30.0, 60.0, 89.0] {
            let t = deg.to_radians();
            let r = lobe_response(&bank.lobes[0], &Vector3::new(t.sin(), 0.0, t.cos()));
            assert!(r <= prev + 1e-15);
            prev = r;
        }
    }

    #[test]
    fn zero_decoder_outputs_half() {
        let mut bank = test_bank();
        bank.w1.iter_mut().for_each(|w| *w = 0.0);
        bank.w2.iter_mut().for_each(|w| *w = 0.0);
        bank.b1.iter_mut().for_each(|w| *w = 0.0);
        bank.b2.iter_mut().for_each(|w| *w = 0.0);
        let v = ViewContext {
            view_dir: Vector3::new(0.0, 0.0, 1.0),
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(specular_color(&bank, &v), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn antipodal_views_differ() {
        let bank = test_bank();
        let d = Vector3::new(0.36, 0.48, 0.8);
        let n = Vector3::new(0.0, 0.0, -1.0);
        let a = specular_color(
            &bank,
            &ViewContext {
                view_dir: d,
                normal: n,
            },
        );
        let b = specular_color(
            &bank,
            &ViewContext {
                view_dir: -d,
                normal: n,
            },
        );
        assert!(a != b);
    }

    #[test]
    fn full_color_stage_semantics() {
        let bank = test_bank();
        let meta = SceneMeta {
            sh_degree: 1,
            asg_lobes: 4,
            asg_feat_dim: 8,
            pe_octaves: 4,
            world_scale: 1.0,
        };
        let coeffs: Vec<f64> = (0..meta.sh_coeff_count() * 3).map(|i| i as f64 * 0.01).collect();
        let kappa = vec![0.02; meta.asg_lobes * meta.asg_feat_dim];
        let v = ViewContext {
            view_dir: Vector3::new(0.6, 0.0, 0.8),
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        let s1 = full_color(1, &coeffs, &kappa, Some(&bank), &v, 1);
        assert_eq!(s1, sh_eval(1, &coeffs, &v.view_dir));
        let s2 = full_color(1, &coeffs, &kappa, Some(&bank), &v, 2);
        let spec = specular_color_with_kappa(&bank, &kappa, &v);
        let diff = sh_eval(1, &coeffs, &v.view_dir);
        for c in 0..3 {
            assert!((s2[c] - (diff[c] + spec[c]).clamp(0.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_pack_roundtrip() {
        let meta = SceneMeta {
            sh_degree: 1,
            asg_lobes: 4,
            asg_feat_dim: 8,
            pe_octaves: 4,
            world_scale: 1.0,
        };
        let bank = AsgBank::init(&meta, 32, 7);
        let packed = bank.pack();
        let back = AsgBank::unpack(&meta, &packed).unwrap();
        assert_eq!(bank, back);
    }
}
