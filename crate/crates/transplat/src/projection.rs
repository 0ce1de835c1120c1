//! Screen-space projection of 3D Gaussians: 2D center and covariance via the
//! affine Jacobian, camera depth, camera-facing normal, and plane distance.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::CameraView;
use crate::scene::ActivatedGaussian;

/// Low-pass added to the screen covariance diagonal, pixels^2.
pub const COV2D_REG: f64 = 0.3;
/// Near-plane cull distance, meters.
pub const NEAR_PLANE: f64 = 0.01;
/// Screen-footprint cull radius in standard deviations.
pub const CULL_SIGMA: f64 = 3.0;

/// A Gaussian reduced to its per-view screen-space quantities.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    /// Screen center, pixels.
    pub center_px: Vector2<f64>,
    /// Screen covariance (regularized), pixels^2.
    pub cov: Matrix2<f64>,
    /// Inverse of `cov`.
    pub cov_inv: Matrix2<f64>,
    /// Camera-space center depth, meters.
    pub z: f64,
    /// World-space unit normal, oriented toward the camera.
    pub normal: Vector3<f64>,
    /// Distance from the camera center to the Gaussian plane, meters.
    pub plane_dist: f64,
    /// Index of the source Gaussian in the scene.
    pub index: usize,
    /// Conservative screen-space footprint radius, pixels.
    pub radius: f64,
}

/// 3D covariance from a unit quaternion rotation and per-axis scales:
/// `R diag(s^2) R^T`.
pub fn build_covariance(rot: &Matrix3<f64>, scale: &Vector3<f64>) -> Matrix3<f64> {
    let s2 = Matrix3::from_diagonal(&scale.component_mul(scale));
    rot * s2 * rot.transpose()
}

/// Camera-facing normal and plane distance of an activated Gaussian.
///
/// The normal is the rotated axis of the smallest scale component, flipped so
/// that `n . (p - o_c) <= 0`; ties pick the lowest axis index. The plane
/// distance is `|n . (p - o_c)|`.
pub fn gaussian_normal(g: &ActivatedGaussian, cam: &CameraView) -> (Vector3<f64>, f64) {
    let mut axis = 0;
    for k in 1..3 {
        if g.scale[k] < g.scale[axis] {
            axis = k;
        }
    }
    let n0: Vector3<f64> = g.rot.column(axis).into();
    let to_center = g.center - cam.center();
    let dot = n0.dot(&to_center);
    let n = if dot > 0.0 { -n0 } else { n0 };
    (n, dot.abs())
}

/// Result of projecting one Gaussian into a view.
pub enum Projection {
    Culled,
    Visible(ProjectedGaussian),
}

/// Projects an activated Gaussian; culls behind the near plane and when the
/// 3-sigma screen footprint misses the image entirely.
pub fn project(g: &ActivatedGaussian, cam: &CameraView, index: usize) -> Projection {
    let t = cam.world_to_cam(&g.center);
    if t.z <= NEAR_PLANE {
        return Projection::Culled;
    }
    let center_px = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);

    let cov3 = build_covariance(&g.rot, &g.scale);
    let jac = projection_jacobian(cam, &t);
    let m = jac * cam.rotation;
    let mut cov = m * cov3 * m.transpose();
    cov[(0, 0)] += COV2D_REG;
    cov[(1, 1)] += COV2D_REG;
    // Symmetrize against roundoff.
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;

    let det = cov[(0, 0)] * cov[(1, 1)] - off * off;
    if det <= 0.0 {
        return Projection::Culled;
    }
    let cov_inv = Matrix2::new(cov[(1, 1)], -off, -off, cov[(0, 0)]) / det;

    // Largest eigenvalue bounds the footprint.
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lam_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = CULL_SIGMA * lam_max.sqrt();
    if center_px.x + radius < 0.0
        || center_px.y + radius < 0.0
        || center_px.x - radius > cam.width as f64
        || center_px.y - radius > cam.height as f64
    {
        return Projection::Culled;
    }

    let (normal, plane_dist) = gaussian_normal(g, cam);
    Projection::Visible(ProjectedGaussian {
        center_px,
        cov,
        cov_inv,
        z: t.z,
        normal,
        plane_dist,
        index,
        radius,
    })
}

/// Jacobian of the pinhole projection at camera-space point `t`.
pub fn projection_jacobian(cam: &CameraView, t: &Vector3<f64>) -> Matrix2x3<f64> {
    Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * t.x / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * t.y / (t.z * t.z),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{activate, Gaussian, SceneMeta};
    use nalgebra::Matrix3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn meta() -> SceneMeta {
        SceneMeta {
            sh_degree: 0,
            asg_lobes: 0,
            asg_feat_dim: 0,
            pe_octaves: 0,
            world_scale: 1.0,
        }
    }

    fn frontal_cam() -> CameraView {
        CameraView::new(
            100.0,
            100.0,
            64.0,
            64.0,
            Matrix3::identity(),
            Vector3::zeros(),
            128,
            128,
        )
        .unwrap()
    }

    #[test]
    fn covariance_axis_aligned() {
        let g = activate(&Gaussian {
            log_scale: Vector3::new(1f64.ln(), 2f64.ln(), 3f64.ln()),
            ..Gaussian::simple(Vector3::zeros(), 1.0, 0.5, [0.5; 3], &meta())
        });
        let cov = build_covariance(&g.rot, &g.scale);
        let want = Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0));
        assert!((cov - want).norm() < 1e-12);
    }

    #[test]
    fn covariance_rotated_90_about_z() {
        let half = std::f64::consts::FRAC_PI_4; // quaternion for 90 deg about z
        let g = activate(&Gaussian {
            rotation: [half.cos(), 0.0, 0.0, half.sin()],
            log_scale: Vector3::new(1f64.ln(), 2f64.ln(), 1f64.ln()),
            ..Gaussian::simple(Vector3::zeros(), 1.0, 0.5, [0.5; 3], &meta())
        });
        let cov = build_covariance(&g.rot, &g.scale);
        let want = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert!((cov - want).norm() < 1e-10, "{cov}");
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let g = activate(&Gaussian {
                rotation: [
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ],
                log_scale: Vector3::new(
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                ),
                ..Gaussian::simple(Vector3::zeros(), 1.0, 0.5, [0.5; 3], &meta())
            });
            let cov = build_covariance(&g.rot, &g.scale);
            let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            let mut want: Vec<f64> = g.scale.iter().map(|s| s * s).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (e, w) in eig.iter().zip(&want) {
                assert!((e - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pinhole_center_projection() {
        let cam = frontal_cam();
        let g = activate(&Gaussian::simple(
            Vector3::new(0.0, 0.0, 2.0),
            0.01,
            0.9,
            [0.5; 3],
            &meta(),
        ));
        match project(&g, &cam, 0) {
            Projection::Visible(p) => {
                assert!((p.center_px - Vector2::new(64.0, 64.0)).norm() < 1e-12);
                assert_eq!(p.z, 2.0);
            }
            Projection::Culled => panic!("should be visible"),
        }
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = frontal_cam();
        let g = activate(&Gaussian::simple(
            Vector3::new(0.0, 0.0, -1.0),
            0.01,
            0.9,
            [0.5; 3],
            &meta(),
        ));
        assert!(matches!(project(&g, &cam, 0), Projection::Culled));
    }

    #[test]
    fn isotropic_on_axis_footprint_matches_pinhole() {
        let cam = frontal_cam();
        let sigma = 0.05;
        let z = 2.5;
        let g = activate(&Gaussian::simple(
            Vector3::new(0.0, 0.0, z),
            sigma,
            0.9,
            [0.5; 3],
            &meta(),
        ));
        let Projection::Visible(p) = project(&g, &cam, 0) else {
            panic!("visible")
        };
        let want = (cam.fx * sigma / z).powi(2);
        assert!((p.cov[(0, 0)] - COV2D_REG - want).abs() / want < 1e-6);
        assert!((p.cov[(1, 1)] - COV2D_REG - want).abs() / want < 1e-6);
        assert!(p.cov[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn normal_faces_camera() {
        let m = meta();
        let g = activate(&Gaussian {
            log_scale: Vector3::new(0.0, 0.0, 0.01f64.ln()),
            ..Gaussian::simple(Vector3::zeros(), 1.0, 0.5, [0.5; 3], &m)
        });
        let behind = CameraView::new(
            100.0,
            100.0,
            64.0,
            64.0,
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 5.0),
            128,
            128,
        )
        .unwrap(); // camera center at z = -5
        let (n, d) = gaussian_normal(&g, &behind);
        assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((d - 5.0).abs() < 1e-12);

        let ahead = CameraView::new(
            100.0,
            100.0,
            64.0,
            64.0,
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, -5.0),
            128,
            128,
        )
        .unwrap(); // camera center at z = +5
        let (n2, d2) = gaussian_normal(&g, &ahead);
        assert!((n2 - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((d2 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn normal_orientation_property_sweep() {
        let m = meta();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let g = activate(&Gaussian {
                center: Vector3::new(
                    rng.gen::<f64>() * 4.0 - 2.0,
                    rng.gen::<f64>() * 4.0 - 2.0,
                    rng.gen::<f64>() * 4.0 - 2.0,
                ),
                rotation: [
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ],
                log_scale: Vector3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ),
                ..Gaussian::simple(Vector3::zeros(), 1.0, 0.5, [0.5; 3], &m)
            });
            let eye = Vector3::new(
                rng.gen::<f64>() * 6.0 - 3.0,
                rng.gen::<f64>() * 6.0 - 3.0,
                rng.gen::<f64>() * 6.0 - 3.0,
            );
            let cam = CameraView::look_at(
                50.0,
                50.0,
                16.0,
                16.0,
                eye,
                eye + Vector3::new(0.01, 0.02, 1.0),
                Vector3::new(0.0, -1.0, 0.0),
                32,
                32,
            )
            .unwrap();
            let (n, d) = gaussian_normal(&g, &cam);
            let to_center = g.center - cam.center();
            assert!(n.dot(&to_center) <= 1e-12);
            assert!((d - n.dot(&to_center).abs()).abs() < 1e-12);
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_equivariant_under_joint_translation() {
        let m = meta();
        let shift = Vector3::new(0.7, -1.3, 2.1);
        let g = activate(&Gaussian {
            rotation: [0.9, 0.1, -0.3, 0.2],
            log_scale: Vector3::new(-2.0, -2.5, -4.0),
            ..Gaussian::simple(Vector3::new(0.2, -0.1, 2.0), 1.0, 0.5, [0.5; 3], &m)
        });
        let mut g2 = g.clone();
        g2.center += shift;
        let cam1 = frontal_cam();
        let cam2 = CameraView::new(
            cam1.fx,
            cam1.fy,
            cam1.cx,
            cam1.cy,
            cam1.rotation,
            cam1.translation - cam1.rotation * shift,
            cam1.width,
            cam1.height,
        )
        .unwrap();
        let (Projection::Visible(p1), Projection::Visible(p2)) =
            (project(&g, &cam1, 0), project(&g2, &cam2, 0))
        else {
            panic!("both visible")
        };
        assert!((p1.center_px - p2.center_px).norm() < 1e-9);
        assert!((p1.cov - p2.cov).norm() < 1e-9);
        assert!((p1.z - p2.z).abs() < 1e-9);
        assert!((p1.plane_dist - p2.plane_dist).abs() < 1e-9);
    }

    #[test]
    fn doubling_depth_halves_screen_sigma() {
        let m = meta();
        let cam = frontal_cam();
        let sigma = 0.05;
        let at = |z: f64| {
            let g = activate(&Gaussian::simple(
                Vector3::new(0.0, 0.0, z),
                sigma,
                0.9,
                [0.5; 3],
                &m,
            ));
            let Projection::Visible(p) = project(&g, &cam, 0) else {
                panic!()
            };
            (p.cov[(0, 0)] - COV2D_REG).sqrt()
        };
        let near = at(1.0);
        let far = at(2.0);
        assert!((near / far - 2.0).abs() < 1e-9);
    }
}
