//! Two-stage optimizer: Adam over all scene parameters, round-robin view
//! schedule, periodic densify/prune, and a Stage-2 geometry freeze that keeps
//! opacity and transparency logits bit-stable.

use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::appearance::AsgBank;
use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::grad::{view_loss_and_grads, BankGrads, SceneGrads, ViewLossReport};
use crate::losses::{LossWeights, PriorInputs};
use crate::scene::SceneFile;

/// Per-parameter-group learning rates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub center: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
    pub tau: f64,
    pub kappa: f64,
    pub bank: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            center: 1e-3,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 2.5e-2,
            sh: 2.5e-3,
            tau: 2.5e-2,
            kappa: 2e-3,
            bank: 2e-3,
        }
    }
}

/// Training configuration for one stage or the full two-stage run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    pub lr: LearningRates,
    pub weights: LossWeights,
    /// Average screen-gradient norm that triggers a clone.
    pub densify_grad_threshold: f64,
    /// Iterations between densify/prune passes.
    pub densify_interval: usize,
    /// Fraction of a stage after which densification stops.
    pub densify_until: f64,
    /// Activated opacity below which a record is pruned.
    pub prune_opacity: f64,
    /// Decoder hidden width when a bank has to be created for Stage 2.
    pub bank_hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters_stage1: 1500,
            iters_stage2: 1500,
            lr: LearningRates::default(),
            weights: LossWeights::default(),
            densify_grad_threshold: 2e-4,
            densify_interval: 100,
            densify_until: 0.8,
            prune_opacity: 5e-3,
            bank_hidden: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densify_interval == 0 {
            return Err(Error::ConfigValidation(
                "densify interval must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.densify_until) {
            return Err(Error::ConfigValidation(
                "densify stop fraction must be in [0, 1]".into(),
            ));
        }
        if self.prune_opacity < 0.0 || self.prune_opacity >= 1.0 {
            return Err(Error::ConfigValidation(
                "prune opacity must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// World-space deviation above which a densified record is split in two
/// instead of cloned.
const DENSIFY_SPLIT_SCALE: f64 = 0.04;
/// log-scale reduction applied to both split children (a factor of 1.6).
const SPLIT_SHRINK_LN: f64 = 0.47000362924573563; // ln(1.6)
/// Records larger than this along any axis are pruned outright.
const PRUNE_MAX_SCALE: f64 = 0.2;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

/// One training view: camera plus supervision maps.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub cam: CameraView,
    pub inputs: PriorInputs,
}

/// Per-iteration log record.
#[derive(Debug, Clone, Copy)]
pub struct IterLog {
    pub stage: u8,
    pub iter: usize,
    pub view: usize,
    pub total: f64,
    pub rgb: f64,
    pub trans: f64,
    pub normal: f64,
    pub flatten: f64,
    pub records: usize,
}

/// Optimizer state: first/second moments mirror the parameter layout, so
/// they densify and prune together with the scene.
pub struct TrainState {
    pub scene: SceneFile,
    pub step: u64,
    pub m: SceneGrads,
    pub v: SceneGrads,
    pub bank_m: Option<BankGrads>,
    pub bank_v: Option<BankGrads>,
    /// Accumulated screen-gradient norms and event counts since the last
    /// densify pass.
    accum_screen: Vec<f64>,
    accum_count: Vec<u32>,
    pub log: Vec<IterLog>,
}

impl TrainState {
    pub fn new(scene: SceneFile) -> Self {
        let n = scene.len();
        TrainState {
            m: SceneGrads::zeros(&scene),
            v: SceneGrads::zeros(&scene),
            bank_m: None,
            bank_v: None,
            accum_screen: vec![0.0; n],
            accum_count: vec![0; n],
            log: Vec::new(),
            step: 0,
            scene,
        }
    }

    pub fn ensure_bank(&mut self, cfg: &TrainConfig) {
        if self.scene.asg_bank.is_none() {
            self.scene.asg_bank = Some(AsgBank::init(
                &self.scene.meta.clone(),
                cfg.bank_hidden,
                cfg.seed,
            ));
        }
        let bank = self.scene.asg_bank.as_ref().unwrap();
        if self.bank_m.is_none() {
            self.bank_m = Some(BankGrads::zeros(bank));
            self.bank_v = Some(BankGrads::zeros(bank));
        }
    }

    /// Applies one Adam step. `freeze_geometry` skips the opacity and
    /// transparency logits entirely, leaving them bit-identical.
    fn adam_step(
        &mut self,
        grads: &SceneGrads,
        bank_grads: Option<&BankGrads>,
        cfg: &TrainConfig,
        freeze_geometry: bool,
    ) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
        };

        for i in 0..self.scene.len() {
            let g = &mut self.scene.gaussians[i];
            for k in 0..3 {
                update(
                    &mut g.center[k],
                    &mut self.m.center[i][k],
                    &mut self.v.center[i][k],
                    grads.center[i][k],
                    cfg.lr.center,
                );
                update(
                    &mut g.log_scale[k],
                    &mut self.m.log_scale[i][k],
                    &mut self.v.log_scale[i][k],
                    grads.log_scale[i][k],
                    cfg.lr.log_scale,
                );
            }
            for k in 0..4 {
                update(
                    &mut g.rotation[k],
                    &mut self.m.rotation[i][k],
                    &mut self.v.rotation[i][k],
                    grads.rotation[i][k],
                    cfg.lr.rotation,
                );
            }
            if !freeze_geometry {
                update(
                    &mut g.opacity_logit,
                    &mut self.m.opacity_logit[i],
                    &mut self.v.opacity_logit[i],
                    grads.opacity_logit[i],
                    cfg.lr.opacity,
                );
                update(
                    &mut g.tau_logit,
                    &mut self.m.tau_logit[i],
                    &mut self.v.tau_logit[i],
                    grads.tau_logit[i],
                    cfg.lr.tau,
                );
            }
            for k in 0..g.sh.len() {
                update(
                    &mut g.sh[k],
                    &mut self.m.sh[i][k],
                    &mut self.v.sh[i][k],
                    grads.sh[i][k],
                    cfg.lr.sh,
                );
            }
            for k in 0..g.asg_feature.len() {
                update(
                    &mut g.asg_feature[k],
                    &mut self.m.asg_feature[i][k],
                    &mut self.v.asg_feature[i][k],
                    grads.asg_feature[i][k],
                    cfg.lr.kappa,
                );
            }
            // Keep the stored quaternion unit for numerical hygiene; the
            // activation normalizes anyway.
            let norm = (g.rotation.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if norm > 0.0 {
                g.rotation.iter_mut().for_each(|v| *v /= norm);
            }
        }

        if let (Some(bg), Some(bm), Some(bv), Some(bank)) = (
            bank_grads,
            self.bank_m.as_mut(),
            self.bank_v.as_mut(),
            self.scene.asg_bank.as_mut(),
        ) {
            for k in 0..bank.lobes.len() {
                for f in 0..bank.feat_dim {
                    update(
                        &mut bank.lobes[k].amplitude[f],
                        &mut bm.amplitude[k][f],
                        &mut bv.amplitude[k][f],
                        bg.amplitude[k][f],
                        cfg.lr.bank,
                    );
                }
                update(
                    &mut bank.lobes[k].log_lambda,
                    &mut bm.log_lambda[k],
                    &mut bv.log_lambda[k],
                    bg.log_lambda[k],
                    cfg.lr.bank,
                );
                update(
                    &mut bank.lobes[k].log_mu,
                    &mut bm.log_mu[k],
                    &mut bv.log_mu[k],
                    bg.log_mu[k],
                    cfg.lr.bank,
                );
            }
            for (p, (m, (v, g))) in bank
                .w1
                .iter_mut()
                .zip(bm.w1.iter_mut().zip(bv.w1.iter_mut().zip(&bg.w1)))
            {
                update(p, m, v, *g, cfg.lr.bank);
            }
            for (p, (m, (v, g))) in bank
                .b1
                .iter_mut()
                .zip(bm.b1.iter_mut().zip(bv.b1.iter_mut().zip(&bg.b1)))
            {
                update(p, m, v, *g, cfg.lr.bank);
            }
            for (p, (m, (v, g))) in bank
                .w2
                .iter_mut()
                .zip(bm.w2.iter_mut().zip(bv.w2.iter_mut().zip(&bg.w2)))
            {
                update(p, m, v, *g, cfg.lr.bank);
            }
            for (p, (m, (v, g))) in bank
                .b2
                .iter_mut()
                .zip(bm.b2.iter_mut().zip(bv.b2.iter_mut().zip(&bg.b2)))
            {
                update(p, m, v, *g, cfg.lr.bank);
            }
        }
    }

    /// Clones records whose average screen gradient exceeded the threshold
    /// and prunes records whose activated opacity fell below the floor
    /// (always keeping at least one record). Optimizer moments follow:
    /// clones start from zero moments, pruned moments are dropped.
    pub fn densify_and_prune(&mut self, cfg: &TrainConfig) -> (usize, usize) {
        let n = self.scene.len();
        let mut cloned = 0;
        for i in 0..n {
            if self.accum_count[i] == 0 {
                continue;
            }
            let avg = self.accum_screen[i] / self.accum_count[i] as f64;
            if avg > cfg.densify_grad_threshold {
                // Principal (largest-deviation) axis in world space.
                let act = crate::scene::activate(&self.scene.gaussians[i]);
                let axis_i = act.scale.imax();
                let sigma_max = act.scale[axis_i];
                let axis = act.rot.column(axis_i).into_owned();
                if sigma_max > DENSIFY_SPLIT_SCALE {
                    // Split: two shrunken children straddling the parent.
                    // Stops over-scaled records from swallowing the scene.
                    let mut a = self.scene.gaussians[i].clone();
                    for v in a.log_scale.iter_mut() {
                        *v -= SPLIT_SHRINK_LN;
                    }
                    let mut b = a.clone();
                    a.center -= 0.5 * sigma_max * axis;
                    b.center += 0.5 * sigma_max * axis;
                    self.scene.gaussians[i] = a;
                    self.scene.gaussians.push(b);
                } else {
                    // Clone with a deterministic offset so the pair can
                    // specialize; an exact copy would receive identical
                    // gradients forever.
                    let mut b = self.scene.gaussians[i].clone();
                    b.center += 0.25 * sigma_max * axis;
                    self.scene.gaussians.push(b);
                }
                push_zero_record(&mut self.m, &self.scene);
                push_zero_record(&mut self.v, &self.scene);
                cloned += 1;
            }
        }

        let mut keep: Vec<bool> = self
            .scene
            .gaussians
            .iter()
            .map(|g| {
                crate::scene::sigmoid(g.opacity_logit) >= cfg.prune_opacity
                    && g.log_scale.map(f64::exp).max() <= PRUNE_MAX_SCALE
            })
            .collect();
        if keep.iter().all(|k| !k) {
            // Never prune the whole scene away.
            let best = self
                .scene
                .gaussians
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.opacity_logit.total_cmp(&b.1.opacity_logit))
                .map(|(i, _)| i)
                .unwrap_or(0);
            keep[best] = true;
        }
        let pruned = keep.iter().filter(|k| !**k).count();
        if pruned > 0 {
            retain_records(&mut self.scene, &keep);
            retain_grads(&mut self.m, &keep);
            retain_grads(&mut self.v, &keep);
        }

        let n2 = self.scene.len();
        self.accum_screen = vec![0.0; n2];
        self.accum_count = vec![0; n2];
        (cloned, pruned)
    }

    /// Runs one stage over the views in round-robin order.
    pub fn run_stage(
        &mut self,
        stage: u8,
        iters: usize,
        views: &[TrainView],
        cfg: &TrainConfig,
    ) -> Result<()> {
        cfg.validate()?;
        if views.is_empty() {
            return Err(Error::ConfigValidation("no training views".into()));
        }
        if stage == 2 {
            self.ensure_bank(cfg);
        }
        let densify_stop = (iters as f64 * cfg.densify_until) as usize;
        for it in 0..iters {
            let vi = it % views.len();
            let view = &views[vi];
            let (report, grads, bank_grads) = view_loss_and_grads(
                &self.scene,
                &view.cam,
                stage,
                &view.inputs,
                &cfg.weights,
            )?;
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    iter: it,
                    detail: format!("stage {stage}: non-finite loss"),
                });
            }
            self.log.push(IterLog {
                stage,
                iter: it,
                view: vi,
                total: report.total,
                rgb: report.parts.rgb,
                trans: report.parts.trans,
                normal: report.parts.normal,
                flatten: report.parts.flatten,
                records: self.scene.len(),
            });
            for i in 0..self.scene.len() {
                self.accum_screen[i] += grads.screen[i];
                self.accum_count[i] += 1;
            }
            self.adam_step(&grads, bank_grads.as_ref(), cfg, stage == 2);

            let due = (it + 1) % cfg.densify_interval == 0;
            if stage == 1 && due && it + 1 <= densify_stop {
                self.densify_and_prune(cfg);
            }
        }
        Ok(())
    }

    /// Full two-stage schedule.
    pub fn run(&mut self, views: &[TrainView], cfg: &TrainConfig) -> Result<()> {
        self.run_stage(1, cfg.iters_stage1, views, cfg)?;
        self.run_stage(2, cfg.iters_stage2, views, cfg)
    }

    pub fn last_report(&self) -> Option<ViewLossReport> {
        self.log.last().map(|l| ViewLossReport {
            parts: crate::losses::LossParts {
                rgb: l.rgb,
                trans: l.trans,
                normal: l.normal,
                flatten: l.flatten,
            },
            total: l.total,
        })
    }

    /// Writes the per-iteration loss log as CSV.
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        (|| {
            writeln!(f, "stage,iter,view,total,rgb,trans,normal,flatten,records")?;
            for l in &self.log {
                writeln!(
                    f,
                    "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                    l.stage, l.iter, l.view, l.total, l.rgb, l.trans, l.normal, l.flatten, l.records
                )?;
            }
            Ok(())
        })()
        .map_err(|e| Error::io(path, e))
    }
}

fn push_zero_record(g: &mut SceneGrads, scene: &SceneFile) {
    let last = scene.gaussians.last().expect("scene grew");
    g.center.push(Vector3::zeros());
    g.rotation.push([0.0; 4]);
    g.log_scale.push(Vector3::zeros());
    g.opacity_logit.push(0.0);
    g.sh.push(vec![0.0; last.sh.len()]);
    g.tau_logit.push(0.0);
    g.asg_feature.push(vec![0.0; last.asg_feature.len()]);
    g.screen.push(0.0);
}

fn retain_records(scene: &mut SceneFile, keep: &[bool]) {
    let mut it = keep.iter();
    scene.gaussians.retain(|_| *it.next().unwrap());
}

fn retain_grads(g: &mut SceneGrads, keep: &[bool]) {
    macro_rules! retain_field {
        ($f:ident) => {{
            let mut it = keep.iter();
            g.$f.retain(|_| *it.next().unwrap());
        }};
    }
    retain_field!(center);
    retain_field!(rotation);
    retain_field!(log_scale);
    retain_field!(opacity_logit);
    retain_field!(sh);
    retain_field!(tau_logit);
    retain_field!(asg_feature);
    retain_field!(screen);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::{ImageF, ImageRgb};
    use crate::rasterizer::render_view;
    use crate::scene::{save_scene, Gaussian, SceneMeta};
    use nalgebra::Matrix3;

    fn meta() -> SceneMeta {
        SceneMeta {
            sh_degree: 1,
            asg_lobes: 2,
            asg_feat_dim: 2,
            pe_octaves: 1,
            world_scale: 1.0,
        }
    }

    fn cam() -> CameraView {
        CameraView::new(
            24.0,
            24.0,
            8.0,
            8.0,
            Matrix3::identity(),
            nalgebra::Vector3::zeros(),
            16,
            16,
        )
        .unwrap()
    }

    fn view_for(scene_gt: &SceneFile, cam: &CameraView) -> TrainView {
        let bundle = render_view(scene_gt, cam, 1);
        TrainView {
            cam: cam.clone(),
            inputs: PriorInputs {
                gt: bundle.color.clone(),
                delighted: bundle.color,
                mask: ImageF::new(cam.width, cam.height),
                normal_prior: ImageRgb::new(cam.width, cam.height),
            },
        }
    }

    fn simple_scene(center: nalgebra::Vector3<f64>, rgb: [f64; 3]) -> SceneFile {
        let m = meta();
        let mut s = SceneFile::new(m.clone());
        let mut g = Gaussian::simple(center, 0.6, 0.6, rgb, &m);
        g.tau_logit = crate::scene::logit(0.2);
        s.gaussians.push(g);
        s
    }

    #[test]
    fn toy_fit_reduces_loss() {
        let target = simple_scene(nalgebra::Vector3::new(0.05, -0.05, 2.0), [0.7, 0.3, 0.2]);
        let start = simple_scene(nalgebra::Vector3::new(-0.05, 0.08, 2.2), [0.4, 0.4, 0.4]);
        let cam = cam();
        let views = vec![view_for(&target, &cam)];
        let cfg = TrainConfig {
            iters_stage1: 300,
            iters_stage2: 0,
            densify_grad_threshold: f64::INFINITY,
            prune_opacity: 0.0,
            // Keep regularizers out of the way for the pure fitting check.
            weights: LossWeights {
                lambda_t: 0.0,
                lambda_n: 0.0,
                lambda_f: 0.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(start);
        state.run_stage(1, cfg.iters_stage1, &views, &cfg).unwrap();
        let first = state.log.first().unwrap().total;
        let last = state.log.last().unwrap().total;
        assert!(
            last < 0.2 * first,
            "loss did not drop enough: {first} -> {last}"
        );
    }

    #[test]
    fn zero_iterations_leave_scene_bit_identical() {
        let scene = simple_scene(nalgebra::Vector3::new(0.0, 0.0, 2.0), [0.5, 0.5, 0.5]);
        let cam = cam();
        let views = vec![view_for(&scene, &cam)];
        let dir = tempfile::tempdir().unwrap();
        let before = dir.path().join("before.bin");
        let after = dir.path().join("after.bin");
        save_scene(&scene, &before).unwrap();
        let mut state = TrainState::new(scene);
        state
            .run_stage(1, 0, &views, &TrainConfig::default())
            .unwrap();
        save_scene(&state.scene, &after).unwrap();
        assert_eq!(
            std::fs::read(&before).unwrap(),
            std::fs::read(&after).unwrap()
        );
    }

    #[test]
    fn stage2_freezes_opacity_and_tau_bits() {
        let target = simple_scene(nalgebra::Vector3::new(0.05, 0.0, 2.0), [0.7, 0.3, 0.2]);
        let start = simple_scene(nalgebra::Vector3::new(-0.03, 0.04, 2.1), [0.4, 0.5, 0.4]);
        let cam = cam();
        let views = vec![view_for(&target, &cam)];
        let cfg = TrainConfig {
            densify_grad_threshold: f64::INFINITY,
            prune_opacity: 0.0,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(start);
        let before: Vec<(u64, u64)> = state
            .scene
            .gaussians
            .iter()
            .map(|g| (g.opacity_logit.to_bits(), g.tau_logit.to_bits()))
            .collect();
        state.run_stage(2, 50, &views, &cfg).unwrap();
        let after: Vec<(u64, u64)> = state
            .scene
            .gaussians
            .iter()
            .map(|g| (g.opacity_logit.to_bits(), g.tau_logit.to_bits()))
            .collect();
        assert_eq!(before, after);
        // Everything else must have moved.
        assert!(state.scene.gaussians[0].center.x != -0.03);
    }

    #[test]
    fn densify_clones_high_gradient_records() {
        let m = meta();
        let mut scene = SceneFile::new(m.clone());
        let mut g = Gaussian::simple(nalgebra::Vector3::new(0.0, 0.0, 2.0), 0.02, 0.6, [0.5; 3], &m);
        g.tau_logit = crate::scene::logit(0.2);
        scene.gaussians.push(g);
        let mut state = TrainState::new(scene);
        state.accum_screen[0] = 1.0;
        state.accum_count[0] = 1;
        let cfg = TrainConfig {
            densify_grad_threshold: 0.5,
            prune_opacity: 0.0,
            ..TrainConfig::default()
        };
        let (cloned, pruned) = state.densify_and_prune(&cfg);
        assert_eq!((cloned, pruned), (1, 0));
        assert_eq!(state.scene.len(), 2);
        assert_eq!(state.m.center.len(), 2);
        // The clone is offset so the pair can specialize, but keeps its size.
        let d = state.scene.gaussians[1].center - state.scene.gaussians[0].center;
        assert!((d.norm() - 0.25 * 0.02).abs() < 1e-12);
        assert_eq!(
            state.scene.gaussians[0].log_scale,
            state.scene.gaussians[1].log_scale
        );
    }

    #[test]
    fn densify_splits_oversized_records() {
        let m = meta();
        let mut scene = SceneFile::new(m.clone());
        scene
            .gaussians
            .push(Gaussian::simple(nalgebra::Vector3::new(0.0, 0.0, 2.0), 0.1, 0.6, [0.5; 3], &m));
        let mut state = TrainState::new(scene);
        state.accum_screen[0] = 1.0;
        state.accum_count[0] = 1;
        let cfg = TrainConfig {
            densify_grad_threshold: 0.5,
            prune_opacity: 0.0,
            ..TrainConfig::default()
        };
        state.densify_and_prune(&cfg);
        assert_eq!(state.scene.len(), 2);
        for g in &state.scene.gaussians {
            let s = g.log_scale.map(f64::exp).max();
            assert!((s - 0.1 / 1.6).abs() < 1e-12, "children shrink by 1.6x");
        }
        let d = state.scene.gaussians[1].center - state.scene.gaussians[0].center;
        assert!((d.norm() - 0.1).abs() < 1e-12, "children straddle the parent");
    }

    #[test]
    fn prune_drops_runaway_scales() {
        let m = meta();
        let mut scene = SceneFile::new(m.clone());
        scene
            .gaussians
            .push(Gaussian::simple(nalgebra::Vector3::zeros(), 0.02, 0.6, [0.5; 3], &m));
        scene
            .gaussians
            .push(Gaussian::simple(nalgebra::Vector3::zeros(), 0.5, 0.6, [0.5; 3], &m));
        let mut state = TrainState::new(scene);
        let (_, pruned) = state.densify_and_prune(&TrainConfig::default());
        assert_eq!(pruned, 1);
        assert_eq!(state.scene.len(), 1);
        assert!(state.scene.gaussians[0].log_scale.map(f64::exp).max() < 0.1);
    }

    #[test]
    fn prune_removes_transparent_records_but_keeps_one() {
        let m = meta();
        let mut scene = SceneFile::new(m.clone());
        for o in [1e-4, 0.5, 2e-3] {
            scene
                .gaussians
                .push(Gaussian::simple(nalgebra::Vector3::zeros(), 0.2, o, [0.5; 3], &m));
        }
        let mut state = TrainState::new(scene);
        let cfg = TrainConfig::default(); // prune floor 5e-3
        let (_, pruned) = state.densify_and_prune(&cfg);
        assert_eq!(pruned, 2);
        assert_eq!(state.scene.len(), 1);
        assert!((crate::scene::sigmoid(state.scene.gaussians[0].opacity_logit) - 0.5).abs() < 1e-12);

        // All below the floor: the most opaque record survives.
        let mut scene2 = SceneFile::new(m.clone());
        for o in [1e-4, 3e-3, 2e-3] {
            scene2
                .gaussians
                .push(Gaussian::simple(nalgebra::Vector3::zeros(), 0.2, o, [0.5; 3], &m));
        }
        let mut state2 = TrainState::new(scene2);
        let (_, pruned2) = state2.densify_and_prune(&cfg);
        assert_eq!(pruned2, 2);
        assert_eq!(state2.scene.len(), 1);
        assert!((crate::scene::sigmoid(state2.scene.gaussians[0].opacity_logit) - 3e-3).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic() {
        let target = simple_scene(nalgebra::Vector3::new(0.05, 0.0, 2.0), [0.7, 0.3, 0.2]);
        let start = simple_scene(nalgebra::Vector3::new(-0.03, 0.04, 2.1), [0.4, 0.5, 0.4]);
        let cam = cam();
        let views = vec![view_for(&target, &cam)];
        let cfg = TrainConfig {
            iters_stage1: 40,
            iters_stage2: 20,
            ..TrainConfig::default()
        };
        let run = || {
            let mut st = TrainState::new(start.clone());
            st.run(&views, &cfg).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.bin");
            save_scene(&st.scene, &p).unwrap();
            std::fs::read(&p).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn log_csv_roundtrip() {
        let target = simple_scene(nalgebra::Vector3::new(0.0, 0.0, 2.0), [0.6, 0.4, 0.3]);
        let cam = cam();
        let views = vec![view_for(&target, &cam)];
        let mut state = TrainState::new(target.clone());
        let cfg = TrainConfig::default();
        state.run_stage(1, 3, &views, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        state.write_log_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("stage,iter,view,total"));
    }
}
