//! Gaussian scene representation, parameter activation, and scene file I/O.
//!
//! Storage parameterization keeps every field unconstrained for gradient
//! descent: opacity and transparency as logits, scales as logs, rotations as
//! raw quaternions that are renormalized on activation.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};

use crate::appearance::AsgBank;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TPLTSCN1";
const VERSION: u32 = 1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One splat, stored pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    /// World-space center, meters.
    pub center: Vector3<f64>,
    /// Rotation quaternion (w, x, y, z), not necessarily unit.
    pub rotation: [f64; 4],
    /// Log of the per-axis standard deviations, meters.
    pub log_scale: Vector3<f64>,
    /// Opacity logit; `sigmoid` maps it into (0, 1).
    pub opacity_logit: f64,
    /// SH diffuse coefficients, coefficient-major: `[c0_r, c0_g, c0_b, c1_r, ...]`.
    pub sh: Vec<f64>,
    /// Transparency attribute logit.
    pub tau_logit: f64,
    /// Per-Gaussian ASG latent feature, `lobes * feat_dim` scalars (may be empty
    /// before Stage 2).
    pub asg_feature: Vec<f64>,
}

impl Gaussian {
    /// A unit isotropic splat at `center` with the given diffuse gray level.
    pub fn simple(center: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3], meta: &SceneMeta) -> Self {
        let mut sh = vec![0.0; meta.sh_coeff_count() * 3];
        // Band 0 only: color = Y00 * c0.
        for (c, v) in rgb.iter().enumerate() {
            sh[c] = v / crate::appearance::SH_C0;
        }
        Gaussian {
            center,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity.clamp(1e-6, 1.0 - 1e-6)),
            sh,
            tau_logit: logit(0.5),
            asg_feature: vec![0.0; meta.asg_lobes * meta.asg_feat_dim],
        }
    }

    pub fn param_count(meta: &SceneMeta) -> usize {
        3 + 4 + 3 + 1 + meta.sh_coeff_count() * 3 + 1 + meta.asg_lobes * meta.asg_feat_dim
    }
}

/// Rendering-ready parameters after activation.
#[derive(Debug, Clone)]
pub struct ActivatedGaussian {
    pub center: Vector3<f64>,
    /// Unit quaternion (w, x, y, z).
    pub quat: [f64; 4],
    /// Rotation matrix of `quat`; columns are the splat's principal axes.
    pub rot: Matrix3<f64>,
    /// Per-axis standard deviations, strictly positive.
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub tau: f64,
}

/// Rotation matrix from a unit quaternion (w, x, y, z).
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Maps stored parameters to rendering-ready values: logistic for opacity and
/// transparency, exp for scales, quaternion normalization for rotation.
pub fn activate(g: &Gaussian) -> ActivatedGaussian {
    let norm = (g.rotation.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let quat = [
        g.rotation[0] / norm,
        g.rotation[1] / norm,
        g.rotation[2] / norm,
        g.rotation[3] / norm,
    ];
    ActivatedGaussian {
        center: g.center,
        quat,
        rot: quat_to_matrix(quat),
        scale: g.log_scale.map(f64::exp),
        opacity: sigmoid(g.opacity_logit),
        tau: sigmoid(g.tau_logit),
    }
}

/// Global scene metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    /// Spherical-harmonics degree L; (L+1)^2 coefficients per channel.
    pub sh_degree: usize,
    /// Number of ASG primitives K.
    pub asg_lobes: usize,
    /// Feature width F of the ASG response.
    pub asg_feat_dim: usize,
    /// Octave count of the positional encoding fed to the specular decoder.
    pub pe_octaves: usize,
    /// World unit scale: meters per world unit.
    pub world_scale: f64,
}

impl Default for SceneMeta {
    fn default() -> Self {
        SceneMeta {
            sh_degree: 3,
            asg_lobes: 16,
            asg_feat_dim: 8,
            pe_octaves: 4,
            world_scale: 1.0,
        }
    }
}

impl SceneMeta {
    pub fn sh_coeff_count(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }
}

/// A full scene: metadata, Gaussian records, and the optional ASG bank.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub meta: SceneMeta,
    pub gaussians: Vec<Gaussian>,
    pub asg_bank: Option<AsgBank>,
}

impl SceneFile {
    pub fn new(meta: SceneMeta) -> Self {
        SceneFile {
            meta,
            gaussians: Vec::new(),
            asg_bank: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::EmptyScene);
        }
        let sh_len = self.meta.sh_coeff_count() * 3;
        let asg_len = self.meta.asg_lobes * self.meta.asg_feat_dim;
        for (i, g) in self.gaussians.iter().enumerate() {
            let check = |ok: bool, field: &'static str| -> Result<()> {
                if ok {
                    Ok(())
                } else {
                    Err(Error::NonfiniteField { record: i, field })
                }
            };
            check(g.center.iter().all(|v| v.is_finite()), "center")?;
            check(g.rotation.iter().all(|v| v.is_finite()), "rotation")?;
            check(
                g.rotation.iter().map(|v| v * v).sum::<f64>() > 0.0,
                "rotation",
            )?;
            check(g.log_scale.iter().all(|v| v.is_finite()), "log_scale")?;
            check(g.opacity_logit.is_finite(), "opacity_logit")?;
            check(g.tau_logit.is_finite(), "tau_logit")?;
            check(g.sh.len() == sh_len, "sh")?;
            check(g.sh.iter().all(|v| v.is_finite()), "sh")?;
            check(g.asg_feature.len() == asg_len, "asg_feature")?;
            check(g.asg_feature.iter().all(|v| v.is_finite()), "asg_feature")?;
        }
        Ok(())
    }
}

// --- binary container -----------------------------------------------------

fn write_vec(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        w.write_f64::<LittleEndian>(*x)?;
    }
    Ok(())
}

fn read_vec(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    for x in &mut out {
        *x = r.read_f64::<LittleEndian>()?;
    }
    Ok(out)
}

pub fn save_scene(scene: &SceneFile, path: &Path) -> Result<()> {
    scene.validate()?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
    let m = &scene.meta;
    w.write_u32::<LittleEndian>(m.sh_degree as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(m.asg_lobes as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(m.asg_feat_dim as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(m.pe_octaves as u32).map_err(io_err)?;
    w.write_f64::<LittleEndian>(m.world_scale).map_err(io_err)?;
    w.write_u32::<LittleEndian>(u32::from(scene.asg_bank.is_some()))
        .map_err(io_err)?;
    w.write_u64::<LittleEndian>(scene.gaussians.len() as u64)
        .map_err(io_err)?;
    for g in &scene.gaussians {
        write_vec(&mut w, g.center.as_slice()).map_err(io_err)?;
        write_vec(&mut w, &g.rotation).map_err(io_err)?;
        write_vec(&mut w, g.log_scale.as_slice()).map_err(io_err)?;
        w.write_f64::<LittleEndian>(g.opacity_logit).map_err(io_err)?;
        write_vec(&mut w, &g.sh).map_err(io_err)?;
        w.write_f64::<LittleEndian>(g.tau_logit).map_err(io_err)?;
        write_vec(&mut w, &g.asg_feature).map_err(io_err)?;
    }
    if let Some(bank) = &scene.asg_bank {
        let packed = bank.pack();
        w.write_u64::<LittleEndian>(packed.len() as u64).map_err(io_err)?;
        write_vec(&mut w, &packed).map_err(io_err)?;
    }
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<SceneFile> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let io_err = |e: std::io::Error| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("bad magic {magic:02x?}"),
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != VERSION {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("unsupported version {version}"),
        });
    }
    let meta = SceneMeta {
        sh_degree: r.read_u32::<LittleEndian>().map_err(io_err)? as usize,
        asg_lobes: r.read_u32::<LittleEndian>().map_err(io_err)? as usize,
        asg_feat_dim: r.read_u32::<LittleEndian>().map_err(io_err)? as usize,
        pe_octaves: r.read_u32::<LittleEndian>().map_err(io_err)? as usize,
        world_scale: r.read_f64::<LittleEndian>().map_err(io_err)?,
    };
    let has_bank = r.read_u32::<LittleEndian>().map_err(io_err)? != 0;
    let count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let sh_len = meta.sh_coeff_count() * 3;
    let asg_len = meta.asg_lobes * meta.asg_feat_dim;
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let center = read_vec(&mut r, 3).map_err(io_err)?;
        let rotation = read_vec(&mut r, 4).map_err(io_err)?;
        let log_scale = read_vec(&mut r, 3).map_err(io_err)?;
        let opacity_logit = r.read_f64::<LittleEndian>().map_err(io_err)?;
        let sh = read_vec(&mut r, sh_len).map_err(io_err)?;
        let tau_logit = r.read_f64::<LittleEndian>().map_err(io_err)?;
        let asg_feature = read_vec(&mut r, asg_len).map_err(io_err)?;
        gaussians.push(Gaussian {
            center: Vector3::from_column_slice(&center),
            rotation: [rotation[0], rotation[1], rotation[2], rotation[3]],
            log_scale: Vector3::from_column_slice(&log_scale),
            opacity_logit,
            sh,
            tau_logit,
            asg_feature,
        });
    }
    let asg_bank = if has_bank {
        let n = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let packed = read_vec(&mut r, n).map_err(io_err)?;
        Some(
            AsgBank::unpack(&meta, &packed).map_err(|detail| Error::MalformedHeader {
                path: path.to_path_buf(),
                detail,
            })?,
        )
    } else {
        None
    };
    let scene = SceneFile {
        meta,
        gaussians,
        asg_bank,
    };
    scene.validate()?;
    Ok(scene)
}

/// Human-readable text export for debugging; not meant to be read back.
pub fn export_scene_text(scene: &SceneFile, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path, e);
    writeln!(
        w,
        "# transplat scene: {} gaussians, sh degree {}, asg {}x{}",
        scene.gaussians.len(),
        scene.meta.sh_degree,
        scene.meta.asg_lobes,
        scene.meta.asg_feat_dim
    )
    .map_err(io_err)?;
    for (i, g) in scene.gaussians.iter().enumerate() {
        let a = activate(g);
        writeln!(
            w,
            "{i}: c=({:.6}, {:.6}, {:.6}) s=({:.6}, {:.6}, {:.6}) o={:.4} tau={:.4}",
            g.center.x, g.center.y, g.center.z, a.scale.x, a.scale.y, a.scale.z, a.opacity, a.tau
        )
        .map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_meta() -> SceneMeta {
        SceneMeta {
            sh_degree: 1,
            asg_lobes: 2,
            asg_feat_dim: 3,
            pe_octaves: 2,
            world_scale: 1.0,
        }
    }

    fn random_scene(n: usize, seed: u64) -> SceneFile {
        let meta = tiny_meta();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = SceneFile::new(meta.clone());
        for _ in 0..n {
            scene.gaussians.push(Gaussian {
                center: Vector3::new(rng.gen::<f64>(), rng.gen(), rng.gen()),
                rotation: [
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ],
                log_scale: Vector3::new(rng.gen::<f64>(), rng.gen(), rng.gen()),
                opacity_logit: rng.gen::<f64>() * 4.0 - 2.0,
                sh: (0..meta.sh_coeff_count() * 3).map(|_| rng.gen()).collect(),
                tau_logit: rng.gen::<f64>() * 4.0 - 2.0,
                asg_feature: (0..meta.asg_lobes * meta.asg_feat_dim)
                    .map(|_| rng.gen())
                    .collect(),
            });
        }
        scene
    }

    #[test]
    fn activation_examples() {
        let meta = tiny_meta();
        let mut g = Gaussian::simple(Vector3::zeros(), 1.0, 0.5, [0.5; 3], &meta);
        g.opacity_logit = 0.0;
        g.log_scale = Vector3::zeros();
        g.rotation = [2.0, 0.0, 0.0, 0.0];
        let a = activate(&g);
        assert_eq!(a.opacity, 0.5);
        assert_eq!(a.scale, Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(a.quat, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.rot, Matrix3::identity());
    }

    #[test]
    fn activation_ranges_hold() {
        let scene = random_scene(200, 7);
        for g in &scene.gaussians {
            let a = activate(g);
            assert!(a.opacity > 0.0 && a.opacity < 1.0);
            assert!(a.tau > 0.0 && a.tau < 1.0);
            assert!(a.scale.iter().all(|s| *s > 0.0));
            let q = a.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((q - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn roundtrip_single_gaussian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.scene");
        let meta = tiny_meta();
        let mut scene = SceneFile::new(meta.clone());
        scene
            .gaussians
            .push(Gaussian::simple(Vector3::zeros(), 0.1, 0.999, [1.0, 0.0, 0.0], &meta));
        save_scene(&scene, &p).unwrap();
        let back = load_scene(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.gaussians[0].center, Vector3::zeros());
        assert_eq!(scene, back);
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.scene");
        let p2 = dir.path().join("b.scene");
        let scene = random_scene(50, 3);
        save_scene(&scene, &p1).unwrap();
        let back = load_scene(&p1).unwrap();
        save_scene(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn roundtrip_large_scene_field_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.scene");
        let scene = random_scene(10_000, 11);
        save_scene(&scene, &p).unwrap();
        let back = load_scene(&p).unwrap();
        assert_eq!(scene.gaussians.len(), back.gaussians.len());
        for (a, b) in scene.gaussians.iter().zip(&back.gaussians) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn load_rejects_bad_magic_and_bad_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.scene");
        std::fs::write(&p, b"NOTSCENE garbage").unwrap();
        assert!(matches!(load_scene(&p), Err(Error::MalformedHeader { .. })));

        let mut scene = random_scene(3, 1);
        scene.gaussians[1].log_scale.x = f64::NEG_INFINITY; // stored scale of zero
        let p2 = dir.path().join("inf.scene");
        assert!(matches!(
            save_scene(&scene, &p2),
            Err(Error::NonfiniteField {
                record: 1,
                field: "log_scale"
            })
        ));
    }

    #[test]
    fn empty_scene_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.scene");
        let scene = SceneFile::new(tiny_meta());
        assert!(matches!(save_scene(&scene, &p), Err(Error::EmptyScene)));
    }

    #[test]
    fn save_to_readonly_path_fails() {
        let res = save_scene(&random_scene(1, 0), Path::new("/proc/readonly/x.scene"));
        assert!(matches!(res, Err(Error::Io { .. })));
    }
}
