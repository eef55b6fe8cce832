//! Auxiliary-input adapter: per-encoder-stage camera encoders whose outputs
//! enter the camera tokens through zero-initialized affine maps, plus a
//! convolutional depth tokenizer added onto the spatial tokens. Missing
//! modalities are covered by placeholder tokens (zero vector for cameras, a
//! learnable zero-initialized vector for depth), so any subset of frames may
//! be annotated.
//!
//! Because both the injection maps and the placeholders start at exactly
//! zero, a freshly constructed adapter is invisible: the trunk computes the
//! same outputs with or without it until training moves the injection
//! weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneConfig, Linear, ModelError};
use crate::bundle::FrameBundle;
use crate::dtype::Real;
use crate::geometry::{encode_camera, normalize_depth_batch, normalize_poses, DepthObservation};
use crate::tensor::{concat, patchify_conv, Parameter, Tensor};

/// Which injection architecture is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterVariant {
    /// Camera tokens get a zero-conv injection before every encoder stage;
    /// depth tokens are added directly.
    PerLayer,
    /// Auxiliary camera tokens overwrite the camera tokens outright.
    Replace,
    /// Camera injection only before the first block.
    OneLayer,
    /// Like `PerLayer`, but the depth branch also passes through a
    /// zero-initialized map.
    DepthZeroConv,
}

impl AdapterVariant {
    pub fn name(self) -> &'static str {
        match self {
            AdapterVariant::PerLayer => "per_layer",
            AdapterVariant::Replace => "replace",
            AdapterVariant::OneLayer => "one_layer",
            AdapterVariant::DepthZeroConv => "depth_zero_conv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_layer" => Some(AdapterVariant::PerLayer),
            "replace" => Some(AdapterVariant::Replace),
            "one_layer" => Some(AdapterVariant::OneLayer),
            "depth_zero_conv" => Some(AdapterVariant::DepthZeroConv),
            _ => None,
        }
    }

    pub fn all() -> [AdapterVariant; 4] {
        [
            AdapterVariant::PerLayer,
            AdapterVariant::Replace,
            AdapterVariant::OneLayer,
            AdapterVariant::DepthZeroConv,
        ]
    }
}

/// Normalized and encoded auxiliary inputs for one bundle.
pub struct PreparedAux {
    /// Per-frame 9-value camera encodings; zero rows where absent.
    pub cam_rows: Vec<[f64; 9]>,
    /// m_i: which frames carry camera annotations.
    pub cam_mask: Vec<bool>,
    /// Batch-normalized depth per annotated frame (n_i via `is_some`).
    pub depth_norm: Vec<Option<DepthObservation>>,
}

impl PreparedAux {
    pub fn num_annotated_cameras(&self) -> usize {
        self.cam_mask.iter().filter(|&&m| m).count()
    }

    pub fn num_annotated_depths(&self) -> usize {
        self.depth_norm.iter().filter(|d| d.is_some()).count()
    }
}

pub struct GeoAdapter<T: Real> {
    pub variant: AdapterVariant,
    camera_encoders: Vec<Linear<T>>,
    camera_zero: Vec<Linear<T>>,
    depth_encoder_w: Parameter<T>,
    depth_encoder_b: Parameter<T>,
    depth_placeholder: Parameter<T>,
    depth_zero: Option<Linear<T>>,
    dim: usize,
    patch: usize,
    stages: usize,
}

impl<T: Real> GeoAdapter<T> {
    /// Builds the injection stack for `cfg.layers` encoder blocks: one camera
    /// encoder per stage (blocks 0..L plus the final stage feeding the camera
    /// head), each behind its own zero-initialized map.
    pub fn new(cfg: &BackboneConfig, variant: AdapterVariant, rng: &mut ChaCha8Rng) -> Self {
        let stages = cfg.layers + 1;
        let enc_count = match variant {
            AdapterVariant::OneLayer => 1,
            _ => stages,
        };
        let zero_count = match variant {
            AdapterVariant::Replace => 0,
            AdapterVariant::OneLayer => 1,
            _ => stages,
        };
        let camera_encoders = (0..enc_count)
            .map(|l| Linear::new(&format!("adapter.camera.enc{l:02}"), 9, cfg.dim, rng))
            .collect();
        let camera_zero = (0..zero_count)
            .map(|l| Linear::zeroed(&format!("adapter.camera.zc{l:02}"), cfg.dim, cfg.dim))
            .collect();
        let block = 2 * cfg.patch * cfg.patch;
        let a = 1.0 / (block as f64).sqrt();
        let depth_encoder_w = Parameter::new(
            "adapter.depth.enc.w",
            &[cfg.dim, block],
            (0..cfg.dim * block)
                .map(|_| T::from_f64(rng.random_range(-a..a)))
                .collect(),
        );
        let depth_zero = match variant {
            AdapterVariant::DepthZeroConv => {
                Some(Linear::zeroed("adapter.depth.zc", cfg.dim, cfg.dim))
            }
            _ => None,
        };
        GeoAdapter {
            variant,
            camera_encoders,
            camera_zero,
            depth_encoder_w,
            depth_encoder_b: Parameter::zeros("adapter.depth.enc.b", &[cfg.dim]),
            depth_placeholder: Parameter::zeros("adapter.depth.placeholder", &[cfg.dim]),
            depth_zero,
            dim: cfg.dim,
            patch: cfg.patch,
            stages,
        }
    }

    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        for e in &self.camera_encoders {
            e.params(&mut out);
        }
        for z in &self.camera_zero {
            z.params(&mut out);
        }
        out.push(self.depth_encoder_w.clone());
        out.push(self.depth_encoder_b.clone());
        out.push(self.depth_placeholder.clone());
        if let Some(z) = &self.depth_zero {
            z.params(&mut out);
        }
        out
    }

    pub fn camera_encoder(&self, l: usize) -> &Linear<T> {
        &self.camera_encoders[l]
    }

    pub fn camera_zero_map(&self, l: usize) -> &Linear<T> {
        &self.camera_zero[l]
    }

    pub fn depth_encoder(&self) -> (&Parameter<T>, &Parameter<T>) {
        (&self.depth_encoder_w, &self.depth_encoder_b)
    }

    pub fn depth_placeholder_param(&self) -> &Parameter<T> {
        &self.depth_placeholder
    }

    /// Normalize the annotated camera subset among itself (anchored at the
    /// lowest annotated index), encode each camera, and batch-normalize the
    /// annotated depths.
    pub fn prepare(&self, bundle: &FrameBundle<T>) -> Result<PreparedAux, ModelError> {
        let n = bundle.num_frames();
        let mut cam_rows = vec![[0.0; 9]; n];
        let mut cam_mask = vec![false; n];
        let annotated: Vec<usize> = (0..n).filter(|&i| bundle.cameras[i].is_some()).collect();
        if !annotated.is_empty() {
            let poses: Vec<_> = annotated
                .iter()
                .map(|&i| bundle.cameras[i].as_ref().unwrap().1)
                .collect();
            let (normalized, _) = normalize_poses(&poses);
            for (slot, &i) in annotated.iter().enumerate() {
                let k = &bundle.cameras[i].as_ref().unwrap().0;
                let vec = encode_camera(k, &normalized[slot])?;
                cam_rows[i] = vec.to_array();
                cam_mask[i] = true;
            }
        }

        let mut depth_norm: Vec<Option<DepthObservation>> = vec![None; n];
        let with_depth: Vec<usize> = (0..n).filter(|&i| bundle.depths[i].is_some()).collect();
        if !with_depth.is_empty() {
            for &i in &with_depth {
                let d = bundle.depths[i].as_ref().unwrap();
                if d.height != bundle.height || d.width != bundle.width {
                    return Err(ModelError::Input(format!(
                        "depth {}x{} does not match image {}x{}",
                        d.height, d.width, bundle.height, bundle.width
                    )));
                }
            }
            let obs: Vec<_> = with_depth
                .iter()
                .map(|&i| bundle.depths[i].as_ref().unwrap().clone())
                .collect();
            let (normalized, _) = normalize_depth_batch(&obs)?;
            for (slot, &i) in with_depth.iter().enumerate() {
                depth_norm[i] = Some(normalized[slot].clone());
            }
        }
        Ok(PreparedAux {
            cam_rows,
            cam_mask,
            depth_norm,
        })
    }

    /// Stage index for a given encoder stage under the active variant;
    /// `None` means the stage performs no injection.
    fn camera_stage(&self, l: usize) -> Result<Option<usize>, ModelError> {
        if l >= self.stages {
            return Err(ModelError::Input(format!(
                "camera injection stage {l} out of range (stages {})",
                self.stages
            )));
        }
        match self.variant {
            AdapterVariant::OneLayer => Ok(if l == 0 { Some(0) } else { None }),
            _ => Ok(Some(l)),
        }
    }

    /// Apply the stage-`l` camera injection to the token block `[N, T, dim]`
    /// (camera token at index 0).
    pub fn inject_camera(
        &self,
        tokens: &Tensor<T>,
        prep: &PreparedAux,
        l: usize,
    ) -> Result<Tensor<T>, ModelError> {
        let stage = match self.camera_stage(l)? {
            Some(s) => s,
            None => return Ok(tokens.clone()),
        };
        let n = tokens.shape()[0];
        let t = tokens.shape()[1];
        let cam = tokens.narrow(1, 0, 1)?.reshape(&[n, self.dim])?;
        let rest = tokens.narrow(1, 1, t - 1)?;

        let mut g_data = Vec::with_capacity(n * 9);
        for row in &prep.cam_rows {
            g_data.extend(row.iter().map(|&v| T::from_f64(v)));
        }
        let g_full = Tensor::from_vec(&[n, 9], g_data);
        let m = Tensor::from_vec(
            &[n, 1],
            prep.cam_mask
                .iter()
                .map(|&m| if m { T::ONE } else { T::ZERO })
                .collect(),
        );
        // masked encoder output; the zero camera placeholder contributes
        // nothing on unannotated frames
        let inner = self.camera_encoders[stage].forward(&g_full)?.mul(&m)?;

        let new_cam = match self.variant {
            AdapterVariant::Replace => {
                let keep = m.neg()?.add_scalar(T::ONE)?; // 1 - m
                inner.add(&cam.mul(&keep)?)?
            }
            _ => cam.add(&self.camera_zero[stage].forward(&inner)?)?,
        };
        Ok(concat(&[new_cam.reshape(&[n, 1, self.dim])?, rest], 1)?)
    }

    /// Add depth tokens (or the placeholder) onto the spatial tokens
    /// `[N, p, dim]`. Applied once, before the first block.
    pub fn inject_depth(
        &self,
        spatial: &Tensor<T>,
        prep: &PreparedAux,
    ) -> Result<Tensor<T>, ModelError> {
        let n = spatial.shape()[0];
        let p = spatial.shape()[1];
        let mut frames = Vec::with_capacity(n);
        for i in 0..n {
            let term = match &prep.depth_norm[i] {
                Some(obs) => {
                    let hw = obs.height * obs.width;
                    let mut x_data = Vec::with_capacity(2 * hw);
                    x_data.extend(obs.depth.iter().map(|&v| T::from_f64(v)));
                    x_data.extend(
                        obs.mask
                            .iter()
                            .map(|&m| if m { T::ONE } else { T::ZERO }),
                    );
                    let x = Tensor::from_vec(&[2, obs.height, obs.width], x_data);
                    let toks = patchify_conv(
                        &x,
                        self.depth_encoder_w.tensor(),
                        self.depth_encoder_b.tensor(),
                        self.patch,
                    )?;
                    match &self.depth_zero {
                        Some(z) => z.forward(&toks)?,
                        None => toks,
                    }
                }
                None => {
                    // broadcast the placeholder over every patch position
                    let ones = Tensor::full(&[p, 1], T::ONE);
                    ones.matmul(&self.depth_placeholder.tensor().reshape(&[1, self.dim])?)?
                }
            };
            frames.push(term.reshape(&[1, p, self.dim])?);
        }
        let add = concat(&frames, 0)?;
        Ok(spatial.add(&add)?)
    }
}
