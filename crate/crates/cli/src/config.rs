//! Line-oriented `key = value` run configuration. `#` starts a comment;
//! unknown keys are hard errors with their line number.

use std::path::Path;

use ovgt_core::adapter::AdapterVariant;
use ovgt_core::backbone::BackboneConfig;
use ovgt_core::fusion::SamplerConfig;
use ovgt_core::loss::LossConfig;
use ovgt_core::synth::WorldKind;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthSubsetMode {
    Random,
    Prefix,
}

impl DepthSubsetMode {
    pub fn name(self) -> &'static str {
        match self {
            DepthSubsetMode::Random => "random",
            DepthSubsetMode::Prefix => "prefix",
        }
    }
}

/// Everything one run needs: model, adapter variant, sampling, loss,
/// optimizer, scene generation, and the evaluation injection schedule.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub precision: Precision,
    pub backbone: BackboneConfig,
    pub variant: AdapterVariant,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
    pub optimizer: OptimKind,
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub num_scenes: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub frames_per_seq: usize,
    pub top_n: usize,
    pub pose_lambda: f64,
    pub world: WorldKind,
    pub objects: usize,
    pub radius: (f64, f64),
    pub jitter: f64,
    pub fov: (f64, f64),
    pub eval_scenes: usize,
    pub eval_frames: usize,
    pub eval_seed: u64,
    pub depth_subset: DepthSubsetMode,
    /// (camera %, depth %) pairs.
    pub schedule: Vec<(u32, u32)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            precision: Precision::F32,
            backbone: BackboneConfig::default(),
            variant: AdapterVariant::PerLayer,
            sampler: SamplerConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimKind::Sgd,
            lr: 1e-5,
            momentum: 0.0,
            steps: 200,
            batch_size: 1,
            num_scenes: 20,
            frames_min: 4,
            frames_max: 8,
            frames_per_seq: 4,
            top_n: 6,
            pose_lambda: 1.0,
            world: WorldKind::Planes,
            objects: 6,
            radius: (2.2, 3.2),
            jitter: 0.25,
            fov: (0.9, 1.2),
            eval_scenes: 20,
            eval_frames: 4,
            eval_seed: 7,
            depth_subset: DepthSubsetMode::Random,
            schedule: vec![(0, 0), (0, 30), (0, 50), (0, 70), (0, 100)],
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value).map_err(|msg| CliError::Config {
                line: line_no,
                msg,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str, what: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse()
                .map_err(|e| format!("invalid {what} `{v}`: {e}"))
        }
        match key {
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("precision must be f32 or f64, got `{value}`")),
                }
            }
            "dim" => self.backbone.dim = num(value, "dim")?,
            "layers" => self.backbone.layers = num(value, "layers")?,
            "heads" => self.backbone.heads = num(value, "heads")?,
            "patch" => self.backbone.patch = num(value, "patch")?,
            "registers" => self.backbone.registers = num(value, "registers")?,
            "image_h" => self.backbone.image_h = num(value, "image_h")?,
            "image_w" => self.backbone.image_w = num(value, "image_w")?,
            "dense_head_width" => self.backbone.dense_width = num(value, "dense_head_width")?,
            "camera_head_layers" => self.backbone.camera_layers = num(value, "camera_head_layers")?,
            "variant" => {
                self.variant = AdapterVariant::parse(value)
                    .ok_or_else(|| format!("unknown variant `{value}`"))?
            }
            "rgb_only_prob" => self.sampler.rgb_only_prob = num(value, "rgb_only_prob")?,
            "seed" => self.sampler.seed = num(value, "seed")?,
            "alpha" => self.loss.alpha = num(value, "alpha")?,
            "grad_term" => {
                self.loss.grad_term = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(format!("grad_term must be true or false, got `{value}`")),
                }
            }
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimKind::Sgd,
                    "adam" => OptimKind::Adam,
                    _ => return Err(format!("optimizer must be sgd or adam, got `{value}`")),
                }
            }
            "lr" => self.lr = num(value, "lr")?,
            "momentum" => self.momentum = num(value, "momentum")?,
            "steps" => self.steps = num(value, "steps")?,
            "batch_size" => self.batch_size = num(value, "batch_size")?,
            "num_scenes" => self.num_scenes = num(value, "num_scenes")?,
            "frames_min" => self.frames_min = num(value, "frames_min")?,
            "frames_max" => self.frames_max = num(value, "frames_max")?,
            "frames_per_seq" => self.frames_per_seq = num(value, "frames_per_seq")?,
            "top_n" => self.top_n = num(value, "top_n")?,
            "pose_lambda" => self.pose_lambda = num(value, "pose_lambda")?,
            "world" => {
                self.world = match value {
                    "planes" => WorldKind::Planes,
                    "blobs" => WorldKind::Blobs,
                    _ => return Err(format!("world must be planes or blobs, got `{value}`")),
                }
            }
            "objects" => self.objects = num(value, "objects")?,
            "radius_min" => self.radius.0 = num(value, "radius_min")?,
            "radius_max" => self.radius.1 = num(value, "radius_max")?,
            "jitter" => self.jitter = num(value, "jitter")?,
            "fov_min" => self.fov.0 = num(value, "fov_min")?,
            "fov_max" => self.fov.1 = num(value, "fov_max")?,
            "eval_scenes" => self.eval_scenes = num(value, "eval_scenes")?,
            "eval_frames" => self.eval_frames = num(value, "eval_frames")?,
            "eval_seed" => self.eval_seed = num(value, "eval_seed")?,
            "depth_subset" => {
                self.depth_subset = match value {
                    "random" => DepthSubsetMode::Random,
                    "prefix" => DepthSubsetMode::Prefix,
                    _ => return Err(format!("depth_subset must be random or prefix, got `{value}`")),
                }
            }
            "schedule" => {
                let mut schedule = Vec::new();
                for pair in value.split(',') {
                    let pair = pair.trim();
                    let (cam, depth) = pair
                        .split_once(':')
                        .ok_or_else(|| format!("schedule entry `{pair}` must be cam:depth"))?;
                    schedule.push((
                        num::<u32>(cam.trim(), "schedule camera %")?,
                        num::<u32>(depth.trim(), "schedule depth %")?,
                    ));
                }
                self.schedule = schedule;
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::ConfigGeneral(msg));
        if !(0.0..=1.0).contains(&self.sampler.rgb_only_prob) {
            return fail(format!(
                "rgb_only_prob {} outside [0, 1]",
                self.sampler.rgb_only_prob
            ));
        }
        if self.loss.alpha < 0.0 {
            return fail(format!("alpha {} must be >= 0", self.loss.alpha));
        }
        if self.schedule.is_empty() {
            return fail("schedule must not be empty".into());
        }
        for &(c, d) in &self.schedule {
            if c > 100 || d > 100 {
                return fail(format!("schedule entry {c}:{d} outside 0..=100"));
            }
        }
        if self.frames_min < 1 || self.frames_min > self.frames_max {
            return fail(format!(
                "frames range {}..{} invalid",
                self.frames_min, self.frames_max
            ));
        }
        if self.frames_per_seq < 1 || self.frames_per_seq > self.frames_min {
            return fail(format!(
                "frames_per_seq {} must be in 1..=frames_min ({})",
                self.frames_per_seq, self.frames_min
            ));
        }
        if self.eval_frames < 2 {
            return fail("eval_frames must be >= 2 (pose metrics need pairs)".into());
        }
        if self.batch_size < 1 || self.steps < 1 {
            return fail("steps and batch_size must be >= 1".into());
        }
        self.backbone
            .validate()
            .map_err(|e| CliError::ConfigGeneral(e.to_string()))?;
        Ok(())
    }
}
