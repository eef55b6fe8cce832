//! Experiment harness: deterministic scene pools, the training loop with
//! stochastic modality assignment, the injection-sweep evaluation, and the
//! four-variant architecture ablation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ovgt_core::adapter::{AdapterVariant, GeoAdapter};
use ovgt_core::backbone::Model;
use ovgt_core::bundle::FrameBundle;
use ovgt_core::dtype::Real;
use ovgt_core::fusion::{apply_assignment, sample_assignment, ModalityAssignment};
use ovgt_core::geometry::make_relative;
use ovgt_core::loss::{prepare_targets, total_loss, TrainTargets};
use ovgt_core::metrics::{
    depth_metrics, pairwise_pose_errors, reconstruction_metrics, rra_rta_auc, MetricsReport,
};
use ovgt_core::synth::{generate, sample_frames, SceneSample, SceneSpec};
use ovgt_core::tensor::{backward, Parameter};

use crate::config::{DepthSubsetMode, RunConfig};
use crate::optim::Optimizer;
use crate::pool::parallel_map;
use crate::CliError;

/// splitmix64-style stream separation for derived seeds.
pub fn mix_seed(base: u64, salt: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x94D0_49BB_1331_11EB));
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SALT_TRAIN_SCENES: u64 = 0x01;
const SALT_EVAL_SCENES: u64 = 0x02;
const SALT_DATA: u64 = 0x03;
const SALT_ASSIGN: u64 = 0x04;
const SALT_INIT: u64 = 0x05;
const SALT_EVAL_SUBSET: u64 = 0x06;

fn scene_spec(cfg: &RunConfig, seed: u64, frames: usize) -> SceneSpec {
    SceneSpec {
        seed,
        num_frames: frames,
        width: cfg.backbone.image_w,
        height: cfg.backbone.image_h,
        world: cfg.world,
        objects: cfg.objects,
        radius: cfg.radius,
        jitter: cfg.jitter,
        fov: cfg.fov,
    }
}

/// Generate `count` scenes in parallel, deterministically per index.
pub fn build_scene_pool(
    cfg: &RunConfig,
    salt: u64,
    base_seed: u64,
    count: usize,
    fixed_frames: Option<usize>,
) -> Result<Vec<SceneSample>, CliError> {
    let results = parallel_map(count, |i| {
        let seed = mix_seed(base_seed, salt, i as u64);
        let frames = fixed_frames.unwrap_or_else(|| {
            let span = cfg.frames_max - cfg.frames_min + 1;
            cfg.frames_min + (seed % span as u64) as usize
        });
        generate(&scene_spec(cfg, seed, frames))
    });
    results.into_iter().collect::<Result<Vec<_>, _>>().map_err(Into::into)
}

pub fn build_model<T: Real>(cfg: &RunConfig) -> Result<(Model<T>, GeoAdapter<T>), CliError> {
    build_model_with_variant(cfg, cfg.variant)
}

pub fn build_model_with_variant<T: Real>(
    cfg: &RunConfig,
    variant: AdapterVariant,
) -> Result<(Model<T>, GeoAdapter<T>), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.sampler.seed, SALT_INIT, 0));
    let model = Model::new(&cfg.backbone, &mut rng)?;
    let adapter = GeoAdapter::new(&cfg.backbone, variant, &mut rng);
    Ok((model, adapter))
}

pub fn all_parameters<T: Real>(model: &Model<T>, adapter: &GeoAdapter<T>) -> Vec<Parameter<T>> {
    let mut params = model.parameters();
    params.extend(adapter.parameters());
    params
}

#[derive(Debug, Clone, Copy)]
pub struct LogRow {
    pub step: usize,
    pub camera: f64,
    pub depth: f64,
    pub pmap: f64,
    pub total: f64,
}

pub struct TrainOutput<T: Real> {
    pub model: Model<T>,
    pub adapter: GeoAdapter<T>,
    pub log: Vec<LogRow>,
    /// Every modality assignment drawn, in order.
    pub assignments: Vec<ModalityAssignment>,
}

/// Deterministic training: sample a scene and a pose-similar frame subset,
/// draw a modality assignment, run forward/loss/backward, and step.
pub fn train<T: Real>(cfg: &RunConfig, variant: AdapterVariant) -> Result<TrainOutput<T>, CliError> {
    let scenes = build_scene_pool(cfg, SALT_TRAIN_SCENES, cfg.sampler.seed, cfg.num_scenes, None)?;
    let (model, adapter) = build_model_with_variant::<T>(cfg, variant)?;
    let params = all_parameters(&model, &adapter);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, cfg.momentum, &params);

    let mut data_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.sampler.seed, SALT_DATA, 0));
    let mut assign_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.sampler.seed, SALT_ASSIGN, 0));

    let mut log = Vec::with_capacity(cfg.steps);
    let mut assignments = Vec::with_capacity(cfg.steps * cfg.batch_size);
    for step in 1..=cfg.steps {
        let mut row = LogRow {
            step,
            camera: 0.0,
            depth: 0.0,
            pmap: 0.0,
            total: 0.0,
        };
        for _ in 0..cfg.batch_size {
            use rand::Rng;
            let scene_idx = data_rng.random_range(0..scenes.len());
            let scene = &scenes[scene_idx];
            let picked = sample_frames(
                &scene.poses,
                cfg.frames_per_seq,
                cfg.top_n,
                cfg.pose_lambda,
                &mut data_rng,
            )?;
            let subset = scene.subset(&picked);
            let gt = prepare_targets(&subset)?;
            let assignment = sample_assignment(cfg.frames_per_seq, &cfg.sampler, &mut assign_rng);
            let bundle: FrameBundle<T> = apply_assignment(&subset, &assignment)?;
            assignments.push(assignment);

            let preds = model.forward(&bundle, Some(&adapter))?;
            let (breakdown, total) = total_loss(&preds, &gt, &cfg.loss)?;
            if !breakdown.total.is_finite() {
                return Err(CliError::NonFiniteLoss { step });
            }
            backward(&total).map_err(ovgt_core::backbone::ModelError::from)?;
            let inv = 1.0 / cfg.batch_size as f64;
            row.camera += breakdown.camera * inv;
            row.depth += breakdown.depth * inv;
            row.pmap += breakdown.pmap * inv;
            row.total += breakdown.total * inv;
        }
        optimizer.step(&params);
        log.push(row);
    }
    Ok(TrainOutput {
        model,
        adapter,
        log,
        assignments,
    })
}

pub fn write_loss_log(log: &[LogRow], path: &Path) -> Result<(), CliError> {
    let mut out = String::from("step,camera,depth,pmap,total\n");
    for r in log {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            r.step, r.camera, r.depth, r.pmap, r.total
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub cam_pct: u32,
    pub depth_pct: u32,
    pub depth_mode: &'static str,
    pub report: MetricsReport,
}

fn count_for(pct: u32, frames: usize) -> usize {
    // ceil(frames * pct / 100)
    (frames * pct as usize).div_ceil(100)
}

/// Build the injection flags for one eval setting: cameras on a prefix,
/// depths on either a prefix or a per-scene random (but pct-nested) order.
pub fn eval_assignment(
    frames: usize,
    cam_pct: u32,
    depth_pct: u32,
    mode: DepthSubsetMode,
    scene_perm: &[usize],
) -> ModalityAssignment {
    let camera_count = count_for(cam_pct, frames);
    let depth_count = count_for(depth_pct, frames);
    let mut camera_flags = vec![false; frames];
    for flag in camera_flags.iter_mut().take(camera_count) {
        *flag = true;
    }
    let mut depth_flags = vec![false; frames];
    match mode {
        DepthSubsetMode::Prefix => {
            for flag in depth_flags.iter_mut().take(depth_count) {
                *flag = true;
            }
        }
        DepthSubsetMode::Random => {
            for &idx in scene_perm.iter().take(depth_count) {
                depth_flags[idx] = true;
            }
        }
    }
    let rgb_only = camera_count == 0 && depth_count == 0;
    ModalityAssignment {
        camera_flags,
        depth_flags,
        rgb_only,
    }
}

/// All metrics for one scene under one injection setting.
pub fn scene_report<T: Real>(
    model: &Model<T>,
    adapter: &GeoAdapter<T>,
    scene: &SceneSample,
    targets: &TrainTargets,
    assignment: &ModalityAssignment,
) -> Result<MetricsReport, CliError> {
    let bundle: FrameBundle<T> = apply_assignment(scene, assignment)?;
    let preds = model.forward(&bundle, Some(adapter))?;
    report_from_predictions(&preds, scene, targets)
}

pub fn report_from_predictions<T: Real>(
    preds: &ovgt_core::backbone::Predictions<T>,
    scene: &SceneSample,
    targets: &TrainTargets,
) -> Result<MetricsReport, CliError> {
    let n = scene.num_frames();
    let mut abs_rel = 0.0;
    let mut delta = 0.0;
    for i in 0..n {
        let (ar, d) = depth_metrics(&preds.depth_frame(i), &targets.depths[i], &targets.masks[i])?;
        abs_rel += ar / n as f64;
        delta += d / n as f64;
    }

    let pred_poses: Vec<_> = preds
        .decode_cameras(scene.width as f64, scene.height as f64)
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let gt_poses = make_relative(&scene.poses);
    let errors = pairwise_pose_errors(&pred_poses, &gt_poses)?;
    let (rra5, rta5, auc30) = rra_rta_auc(&errors, 5.0, 30.0);

    let mut pred_cloud = Vec::new();
    let mut gt_cloud = Vec::new();
    for i in 0..n {
        let pm = preds.pmap_frame(i);
        for (px, &valid) in targets.masks[i].iter().enumerate() {
            if valid {
                pred_cloud.push(pm[px]);
                gt_cloud.push(targets.pmaps[i][px]);
            }
        }
    }
    let recon = reconstruction_metrics(&pred_cloud, &gt_cloud, 10)?;

    Ok(MetricsReport {
        abs_rel,
        delta_125: delta,
        rra5,
        rta5,
        auc30,
        acc_mean: recon.acc_mean,
        acc_med: recon.acc_med,
        comp_mean: recon.comp_mean,
        comp_med: recon.comp_med,
        nc_mean: recon.nc_mean,
        nc_med: recon.nc_med,
    })
}

/// Run the full injection schedule over a held-out scene pool; each row is
/// the mean report across scenes.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    adapter: &GeoAdapter<T>,
    cfg: &RunConfig,
) -> Result<Vec<SweepRow>, CliError> {
    let scenes = build_scene_pool(
        cfg,
        SALT_EVAL_SCENES,
        cfg.eval_seed,
        cfg.eval_scenes,
        Some(cfg.eval_frames),
    )?;
    let targets: Vec<TrainTargets> = scenes
        .iter()
        .map(prepare_targets)
        .collect::<Result<_, _>>()?;
    // per-scene random-but-nested depth injection order
    let perms: Vec<Vec<usize>> = (0..scenes.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.eval_seed, SALT_EVAL_SUBSET, i as u64));
            rand::seq::index::sample(&mut rng, cfg.eval_frames, cfg.eval_frames).into_vec()
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.schedule.len());
    for &(cam_pct, depth_pct) in &cfg.schedule {
        let reports = parallel_map(scenes.len(), |i| {
            let assignment = eval_assignment(
                cfg.eval_frames,
                cam_pct,
                depth_pct,
                cfg.depth_subset,
                &perms[i],
            );
            scene_report(model, adapter, &scenes[i], &targets[i], &assignment)
        });
        let reports = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
        rows.push(SweepRow {
            cam_pct,
            depth_pct,
            depth_mode: cfg.depth_subset.name(),
            report: MetricsReport::mean_of(&reports),
        });
    }
    Ok(rows)
}

const METRIC_COLUMNS: &str =
    "abs_rel,delta_125,rra5,rta5,auc30,acc_mean,acc_med,comp_mean,comp_med,nc_mean,nc_med";

fn metric_cells(r: &MetricsReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.abs_rel,
        r.delta_125,
        r.rra5,
        r.rta5,
        r.auc30,
        r.acc_mean,
        r.acc_med,
        r.comp_mean,
        r.comp_med,
        r.nc_mean,
        r.nc_med
    )
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), CliError> {
    let mut out = format!("camera_pct,depth_pct,depth_mode,{METRIC_COLUMNS}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.cam_pct,
            r.depth_pct,
            r.depth_mode,
            metric_cells(&r.report)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AblateRow {
    pub variant: &'static str,
    pub aux: &'static str,
    pub report: MetricsReport,
}

/// Train all four adapter variants under identical seeds and budgets, then
/// evaluate each with no auxiliary inputs and with full auxiliary inputs.
pub fn ablate<T: Real>(cfg: &RunConfig) -> Result<Vec<AblateRow>, CliError> {
    let mut rows = Vec::with_capacity(8);
    for variant in AdapterVariant::all() {
        let trained = train::<T>(cfg, variant)?;
        let mut eval_cfg = cfg.clone();
        eval_cfg.schedule = vec![(0, 0), (100, 100)];
        let sweep = evaluate(&trained.model, &trained.adapter, &eval_cfg)?;
        rows.push(AblateRow {
            variant: variant.name(),
            aux: "none",
            report: sweep[0].report,
        });
        rows.push(AblateRow {
            variant: variant.name(),
            aux: "full",
            report: sweep[1].report,
        });
    }
    Ok(rows)
}

pub fn write_ablate_csv(rows: &[AblateRow], path: &Path) -> Result<(), CliError> {
    let mut out = format!("variant,aux,{METRIC_COLUMNS}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.variant,
            r.aux,
            metric_cells(&r.report)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
