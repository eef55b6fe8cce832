//! Training objective: L1 camera supervision plus confidence-weighted dense
//! losses over depth and point maps, each with a forward-difference gradient
//! term and a -α·logΣ confidence regularizer. Ground truth is normalized so
//! the mean valid-point distance to the origin is 1; supervision covers every
//! frame regardless of which frames carried auxiliary inputs.

use crate::backbone::{ModelError, Predictions};
use crate::dtype::Real;
use crate::geometry::{encode_camera, make_relative, normalize_scene_gt, SceneGt};
use crate::synth::SceneSample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Confidence regularizer weight.
    pub alpha: f64,
    /// Include the spatial-gradient residual terms.
    pub grad_term: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.2,
            grad_term: true,
        }
    }
}

/// Scalar components of one loss evaluation; `total` is their exact sum.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub camera: f64,
    pub depth: f64,
    pub pmap: f64,
    pub total: f64,
}

/// Normalized supervision targets for one sequence.
#[derive(Debug, Clone)]
pub struct TrainTargets {
    /// Per-frame 9-value camera vectors (pose anchored to frame 1,
    /// translations on the normalized scene scale).
    pub cameras: Vec<[f64; 9]>,
    pub depths: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    /// Per-frame H·W points in the first camera's frame.
    pub pmaps: Vec<Vec<[f64; 3]>>,
    pub height: usize,
    pub width: usize,
    /// Scene normalization divisor that was applied.
    pub scale: f64,
}

/// Anchor poses to frame 1, normalize depth/points/translations by the mean
/// valid-point norm, and encode the ground-truth camera vectors.
pub fn prepare_targets(sample: &SceneSample) -> Result<TrainTargets, ModelError> {
    let rel = make_relative(&sample.poses);
    let gt = SceneGt {
        pmaps: sample.pmaps.clone(),
        masks: sample.depths.iter().map(|d| d.mask.clone()).collect(),
        depths: sample.depths.clone(),
        poses: rel,
    };
    let (norm, scale) = normalize_scene_gt(&gt)?;
    let cameras = norm
        .poses
        .iter()
        .zip(sample.intrinsics.iter())
        .map(|(g, k)| encode_camera(k, g).map(|v| v.to_array()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainTargets {
        cameras,
        depths: norm.depths.iter().map(|d| d.depth.clone()).collect(),
        masks: norm.masks,
        pmaps: norm.pmaps.iter().map(|p| p.points.clone()).collect(),
        height: sample.height,
        width: sample.width,
        scale,
    })
}

/// Σ_i ‖ĝ_i − g_i‖₁ with each ground-truth quaternion flipped to the
/// hemisphere nearest its prediction (q and −q are the same rotation).
pub fn camera_loss<T: Real>(
    pred: &Tensor<T>,
    gt: &[[f64; 9]],
) -> Result<Tensor<T>, ModelError> {
    let n = gt.len();
    if pred.shape() != [n, 9] {
        return Err(ModelError::Input(format!(
            "camera prediction shape {:?} does not match {} ground-truth frames",
            pred.shape(),
            n
        )));
    }
    let pd = pred.to_f64_vec();
    let mut gt_data = Vec::with_capacity(n * 9);
    for (i, row) in gt.iter().enumerate() {
        let dot: f64 = (0..4).map(|j| pd[i * 9 + j] * row[j]).sum();
        let flip = if dot < 0.0 { -1.0 } else { 1.0 };
        for (j, &v) in row.iter().enumerate() {
            gt_data.push(T::from_f64(if j < 4 { flip * v } else { v }));
        }
    }
    let gt_tensor = Tensor::from_vec(&[n, 9], gt_data);
    Ok(pred.sub(&gt_tensor)?.abs().sum_all())
}

/// Confidence-weighted masked L1 over one `[C, H, W]` map:
/// Σ_valid ‖Σ⊙(pred−gt)‖₁ + ‖Σ⊙(∇pred−∇gt)‖₁ − α·logΣ. Gradient residuals
/// use forward differences restricted to pixel pairs that are both valid and
/// are weighted by the anchor pixel's confidence; invalid pixels contribute
/// to no term.
pub fn dense_loss<T: Real>(
    pred: &Tensor<T>,
    gt: &[f64],
    mask: &[bool],
    conf: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<Tensor<T>, ModelError> {
    if pred.rank() != 3 {
        return Err(ModelError::Input(format!(
            "dense prediction must be [C,H,W], got {:?}",
            pred.shape()
        )));
    }
    let (c, h, w) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    if gt.len() != c * h * w || mask.len() != h * w || conf.shape() != [h, w] {
        return Err(ModelError::Input(format!(
            "dense loss shapes disagree: pred {:?}, gt {}, mask {}, conf {:?}",
            pred.shape(),
            gt.len(),
            mask.len(),
            conf.shape()
        )));
    }
    let gt_t = Tensor::from_f64_slice(&[c, h, w], gt);
    let mask_t = Tensor::from_vec(
        &[1, h, w],
        mask.iter().map(|&m| if m { T::ONE } else { T::ZERO }).collect(),
    );
    let conf_b = conf.reshape(&[1, h, w])?;

    let residual = pred.sub(&gt_t)?.mul(&mask_t)?.mul(&conf_b)?;
    let mut total = residual.abs().sum_all();

    if cfg.grad_term {
        // horizontal pairs
        if w > 1 {
            let dp = pred.narrow(2, 1, w - 1)?.sub(&pred.narrow(2, 0, w - 1)?)?;
            let dg = gt_t.narrow(2, 1, w - 1)?.sub(&gt_t.narrow(2, 0, w - 1)?)?;
            let pair = mask_t
                .narrow(2, 1, w - 1)?
                .mul(&mask_t.narrow(2, 0, w - 1)?)?;
            let ca = conf_b.narrow(2, 0, w - 1)?;
            let term = dp.sub(&dg)?.mul(&pair)?.mul(&ca)?.abs().sum_all();
            total = total.add(&term)?;
        }
        // vertical pairs
        if h > 1 {
            let dp = pred.narrow(1, 1, h - 1)?.sub(&pred.narrow(1, 0, h - 1)?)?;
            let dg = gt_t.narrow(1, 1, h - 1)?.sub(&gt_t.narrow(1, 0, h - 1)?)?;
            let pair = mask_t
                .narrow(1, 1, h - 1)?
                .mul(&mask_t.narrow(1, 0, h - 1)?)?;
            let ca = conf_b.narrow(1, 0, h - 1)?;
            let term = dp.sub(&dg)?.mul(&pair)?.mul(&ca)?.abs().sum_all();
            total = total.add(&term)?;
        }
    }

    // -α Σ_valid log Σ, counted once per pixel
    let mask2 = mask_t.reshape(&[h, w])?;
    let log_term = conf
        .ln()
        .mul(&mask2)?
        .sum_all()
        .scale(T::from_f64(-cfg.alpha))?;
    Ok(total.add(&log_term)?)
}

/// Full objective over all frames: camera + depth + point-map terms.
pub fn total_loss<T: Real>(
    preds: &Predictions<T>,
    targets: &TrainTargets,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Tensor<T>), ModelError> {
    let n = targets.cameras.len();
    let (h, w) = (targets.height, targets.width);

    let camera = camera_loss(&preds.cameras, &targets.cameras)?;

    let mut depth_total: Option<Tensor<T>> = None;
    let mut pmap_total: Option<Tensor<T>> = None;
    for i in 0..n {
        let dpred = preds.depth.narrow(0, i, 1)?.reshape(&[1, h, w])?;
        let dconf = preds.conf_depth.narrow(0, i, 1)?.reshape(&[h, w])?;
        let dl = dense_loss(&dpred, &targets.depths[i], &targets.masks[i], &dconf, cfg)?;
        depth_total = Some(match depth_total {
            Some(acc) => acc.add(&dl)?,
            None => dl,
        });

        let ppred = preds.pmap.narrow(0, i, 1)?.reshape(&[3, h, w])?;
        let pconf = preds.conf_pmap.narrow(0, i, 1)?.reshape(&[h, w])?;
        let mut gt = vec![0.0; 3 * h * w];
        for (px, p) in targets.pmaps[i].iter().enumerate() {
            gt[px] = p[0];
            gt[h * w + px] = p[1];
            gt[2 * h * w + px] = p[2];
        }
        let pl = dense_loss(&ppred, &gt, &targets.masks[i], &pconf, cfg)?;
        pmap_total = Some(match pmap_total {
            Some(acc) => acc.add(&pl)?,
            None => pl,
        });
    }
    let depth = depth_total.unwrap_or_else(|| Tensor::scalar(T::ZERO));
    let pmap = pmap_total.unwrap_or_else(|| Tensor::scalar(T::ZERO));
    let total = camera.add(&depth)?.add(&pmap)?;
    let breakdown = LossBreakdown {
        camera: camera.item().to_f64(),
        depth: depth.item().to_f64(),
        pmap: pmap.item().to_f64(),
        total: total.item().to_f64(),
    };
    Ok((breakdown, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::v_norm;
    use crate::synth::{generate, SceneSpec};
    use crate::tensor::backward;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar-loop evaluation of the dense loss.
    fn dense_loss_reference(
        pred: &[f64],
        gt: &[f64],
        mask: &[bool],
        conf: &[f64],
        c: usize,
        h: usize,
        w: usize,
        cfg: &LossConfig,
    ) -> f64 {
        let mut total = 0.0;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let px = y * w + x;
                    let i = ch * h * w + px;
                    if mask[px] {
                        total += (conf[px] * (pred[i] - gt[i])).abs();
                    }
                    if cfg.grad_term {
                        if x + 1 < w && mask[px] && mask[px + 1] {
                            let dp = pred[i + 1] - pred[i];
                            let dg = gt[i + 1] - gt[i];
                            total += (conf[px] * (dp - dg)).abs();
                        }
                        if y + 1 < h && mask[px] && mask[px + w] {
                            let dp = pred[i + w] - pred[i];
                            let dg = gt[i + w] - gt[i];
                            total += (conf[px] * (dp - dg)).abs();
                        }
                    }
                }
            }
        }
        for px in 0..h * w {
            if mask[px] {
                total -= cfg.alpha * conf[px].ln();
            }
        }
        total
    }

    #[test]
    fn camera_loss_basics() {
        let gt = [[1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 0.5, 0.5]];
        let pred = Tensor::<f64>::from_f64_slice(&[1, 9], &gt[0]);
        assert_eq!(camera_loss(&pred, &gt).unwrap().item(), 0.0);

        let mut off = gt[0];
        off[4] += 0.5;
        let pred = Tensor::<f64>::from_f64_slice(&[1, 9], &off);
        assert!((camera_loss(&pred, &gt).unwrap().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn camera_loss_quaternion_hemisphere() {
        // prediction near -q must not be penalized for the double cover
        let gt = [[0.8, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]];
        let neg = [-0.8, -0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let pred = Tensor::<f64>::from_f64_slice(&[1, 9], &neg);
        assert!(camera_loss(&pred, &gt).unwrap().item() < 1e-12);
    }

    #[test]
    fn camera_loss_gradient_is_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt = [[0.9, 0.1, 0.2, 0.3, -0.5, 0.8, 0.2, 1.0, 1.1]];
        let data: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pred = Tensor::leaf(&[1, 9], data.clone());
        let loss = camera_loss(&pred, &gt).unwrap();
        backward(&loss).unwrap();
        let grad = pred.grad().unwrap();
        // away from kinks the gradient is elementwise sign(pred - gt)
        let pd = pred.to_f64_vec();
        let dot: f64 = (0..4).map(|j| pd[j] * gt[0][j]).sum();
        let flip = if dot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..9 {
            let g = if j < 4 { flip * gt[0][j] } else { gt[0][j] };
            let expect = (data[j] - g).signum();
            assert_eq!(grad[j], expect, "coordinate {j}");
            // finite difference agrees (h small enough to stay off the kink)
            let h = 1e-7;
            pred.set(j, data[j] + h);
            let fp = camera_loss(&pred, &gt).unwrap().item();
            pred.set(j, data[j] - h);
            let fm = camera_loss(&pred, &gt).unwrap().item();
            pred.set(j, data[j]);
            assert!(((fp - fm) / (2.0 * h) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_loss_perfect_prediction_zero() {
        let gt: Vec<f64> = (0..16).map(|i| i as f64 * 0.3).collect();
        let pred = Tensor::from_f64_slice(&[1, 4, 4], &gt);
        let conf = Tensor::<f64>::full(&[4, 4], 1.0);
        let cfg = LossConfig::default();
        let loss = dense_loss(&pred, &gt, &vec![true; 16], &conf, &cfg).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn dense_loss_confidence_term_closed_form() {
        let gt: Vec<f64> = (0..16).map(|i| i as f64 * 0.5).collect();
        let pred = Tensor::from_f64_slice(&[1, 4, 4], &gt);
        let conf = Tensor::<f64>::full(&[4, 4], std::f64::consts::E);
        let cfg = LossConfig::default();
        // only 10 pixels valid
        let mut mask = vec![true; 16];
        for m in mask.iter_mut().take(6) {
            *m = false;
        }
        let loss = dense_loss(&pred, &gt, &mask, &conf, &cfg).unwrap();
        assert!((loss.item() - (-cfg.alpha * 10.0)).abs() < 1e-12);
    }

    #[test]
    fn dense_loss_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = LossConfig::default();
        for case in 0..100 {
            let c = if case % 2 == 0 { 1 } else { 3 };
            let (h, w) = (4, 4);
            let pred_data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
            let gt: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mask: Vec<bool> = (0..h * w).map(|_| rng.random_range(0.0..1.0) > 0.25).collect();
            let conf_data: Vec<f64> = (0..h * w).map(|_| rng.random_range(1.0..3.0)).collect();
            let pred = Tensor::<f64>::from_f64_slice(&[c, h, w], &pred_data);
            let conf = Tensor::<f64>::from_f64_slice(&[h, w], &conf_data);
            let loss = dense_loss(&pred, &gt, &mask, &conf, &cfg).unwrap().item();
            let reference = dense_loss_reference(&pred_data, &gt, &mask, &conf_data, c, h, w, &cfg);
            assert!(
                (loss - reference).abs() < 1e-12,
                "case {case}: {loss} vs {reference}"
            );
        }
    }

    #[test]
    fn dense_loss_nonincreasing_under_residual_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = LossConfig::default();
        let gt: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = vec![true; 16];
        let conf_data: Vec<f64> = (0..16).map(|_| rng.random_range(1.0..2.5)).collect();
        let conf = Tensor::from_f64_slice(&[4, 4], &conf_data);
        let mut prev = f64::INFINITY;
        for step in 0..5 {
            let lam = 1.0 - step as f64 / 4.0; // residual scale 1 -> 0
            let pred_data: Vec<f64> = gt
                .iter()
                .zip(noise.iter())
                .map(|(g, n)| g + lam * n)
                .collect();
            let pred = Tensor::from_f64_slice(&[1, 4, 4], &pred_data);
            let loss = dense_loss(&pred, &gt, &mask, &conf, &cfg).unwrap().item();
            assert!(loss <= prev + 1e-12);
            prev = loss;
        }
    }

    #[test]
    fn per_pixel_optimal_confidence_matches_golden_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = LossConfig::default();
        let (h, w) = (3, 3);
        let gt: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pred: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        for y in 0..h {
            for x in 0..w {
                let px = y * w + x;
                // coefficient multiplying this pixel's confidence in the loss
                let mut coef = (pred[px] - gt[px]).abs();
                if x + 1 < w {
                    coef += ((pred[px + 1] - pred[px]) - (gt[px + 1] - gt[px])).abs();
                }
                if y + 1 < h {
                    coef += ((pred[px + w] - pred[px]) - (gt[px + w] - gt[px])).abs();
                }
                let f = |s: f64| s * coef - cfg.alpha * s.ln();
                // golden-section search over [1, 50]
                let (mut a, mut b) = (1.0f64, 50.0f64);
                let phi = (5.0f64.sqrt() - 1.0) / 2.0;
                for _ in 0..200 {
                    let c1 = b - phi * (b - a);
                    let c2 = a + phi * (b - a);
                    if f(c1) < f(c2) {
                        b = c2;
                    } else {
                        a = c1;
                    }
                }
                let numeric = (a + b) / 2.0;
                let analytic = (cfg.alpha / coef).max(1.0);
                assert!(
                    (numeric - analytic).abs() < 1e-4,
                    "pixel {px}: {numeric} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn dense_loss_gradient_finite_difference_off_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = LossConfig::default();
        let gt: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        // keep residuals away from zero so |.| is smooth locally
        let pred_data: Vec<f64> = gt
            .iter()
            .map(|g| g + rng.random_range(0.05..0.4) * if rng.random_range(0.0..1.0) > 0.5 { 1.0 } else { -1.0 })
            .collect();
        let mask: Vec<bool> = (0..16).map(|_| rng.random_range(0.0..1.0) > 0.2).collect();
        let pred = Tensor::leaf(&[1, 4, 4], pred_data.clone());
        let conf_data: Vec<f64> = (0..16).map(|_| rng.random_range(1.1..2.0)).collect();
        let conf = Tensor::leaf(&[4, 4], conf_data);
        let run = || dense_loss(&pred, &gt, &mask, &conf, &cfg).unwrap();
        backward(&run()).unwrap();
        for (t, name) in [(&pred, "pred"), (&conf, "conf")] {
            let grad = t.grad().unwrap();
            for idx in 0..t.numel() {
                let orig = t.get(idx);
                let h = 1e-6;
                t.set(idx, orig + h);
                let fp = run().item();
                t.set(idx, orig - h);
                let fm = run().item();
                t.set(idx, orig);
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(grad[idx].abs()).max(1.0);
                assert!(
                    (fd - grad[idx]).abs() / denom < 1e-4,
                    "{name}[{idx}]: ad {} fd {}",
                    grad[idx],
                    fd
                );
            }
        }
    }

    #[test]
    fn prepare_targets_normalizes_scene() {
        let sample = generate(&SceneSpec {
            seed: 5,
            num_frames: 3,
            width: 16,
            height: 16,
            ..Default::default()
        })
        .unwrap();
        let targets = prepare_targets(&sample).unwrap();
        assert!(targets.scale > 0.0);
        // first camera is the anchor
        assert_eq!(&targets.cameras[0][..7], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // mean valid point norm is 1 after normalization
        let mut acc = 0.0;
        let mut count = 0usize;
        for (pm, mask) in targets.pmaps.iter().zip(targets.masks.iter()) {
            for (p, &m) in pm.iter().zip(mask.iter()) {
                if m {
                    acc += v_norm(*p);
                    count += 1;
                }
            }
        }
        assert!((acc / count as f64 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn total_loss_breakdown_and_alpha_relation() {
        use crate::backbone::{BackboneConfig, Model};
        use crate::bundle::FrameBundle;

        let cfg = BackboneConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            patch: 8,
            registers: 1,
            image_h: 16,
            image_w: 16,
            channels: 3,
            dense_width: 16,
            camera_layers: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let sample = generate(&SceneSpec {
            seed: 7,
            num_frames: 2,
            width: 16,
            height: 16,
            ..Default::default()
        })
        .unwrap();
        let targets = prepare_targets(&sample).unwrap();
        let preds = model
            .forward(&FrameBundle::<f64>::images_only(&sample), None)
            .unwrap();

        let base_cfg = LossConfig::default();
        let (breakdown, total) = total_loss(&preds, &targets, &base_cfg).unwrap();
        assert!((breakdown.total - total.item()).abs() < 1e-12);
        assert!(
            (breakdown.total - (breakdown.camera + breakdown.depth + breakdown.pmap)).abs() < 1e-12
        );

        // zeroing alpha removes exactly the -alpha * sum(valid log conf) term
        let no_alpha = LossConfig {
            alpha: 0.0,
            ..base_cfg
        };
        let (b0, _) = total_loss(&preds, &targets, &no_alpha).unwrap();
        let conf_d = preds.conf_depth.to_f64_vec();
        let conf_p = preds.conf_pmap.to_f64_vec();
        let (h, w) = (16, 16);
        let mut log_sum = 0.0;
        for i in 0..2 {
            for px in 0..h * w {
                if targets.masks[i][px] {
                    log_sum += conf_d[i * h * w + px].ln() + conf_p[i * h * w + px].ln();
                }
            }
        }
        let diff = b0.total - breakdown.total;
        assert!(
            (diff - base_cfg.alpha * log_sum).abs() < 1e-9,
            "{diff} vs {}",
            base_cfg.alpha * log_sum
        );
    }

    #[test]
    fn perfect_predictions_with_unit_confidence_zero_total() {
        // hand-build predictions equal to the targets
        let sample = generate(&SceneSpec {
            seed: 8,
            num_frames: 2,
            width: 16,
            height: 16,
            ..Default::default()
        })
        .unwrap();
        let targets = prepare_targets(&sample).unwrap();
        let (h, w) = (16, 16);
        let mut cam = Vec::new();
        for row in &targets.cameras {
            cam.extend_from_slice(row);
        }
        let mut depth = Vec::new();
        for d in &targets.depths {
            depth.extend_from_slice(d);
        }
        let mut pmap = Vec::new();
        for pm in &targets.pmaps {
            for ch in 0..3 {
                for p in pm {
                    pmap.push(p[ch]);
                }
            }
        }
        let preds = Predictions {
            cameras: Tensor::from_f64_slice(&[2, 9], &cam),
            depth: Tensor::from_f64_slice(&[2, h, w], &depth),
            pmap: Tensor::from_f64_slice(&[2, 3, h, w], &pmap),
            conf_depth: Tensor::<f64>::full(&[2, h, w], 1.0),
            conf_pmap: Tensor::<f64>::full(&[2, h, w], 1.0),
        };
        let (breakdown, _) = total_loss(&preds, &targets, &LossConfig::default()).unwrap();
        assert!(breakdown.total.abs() < 1e-9, "total {}", breakdown.total);
    }
}
