//! Multi-view trunk: patch embedding, per-frame camera/register/spatial
//! tokens, alternating frame-wise and global self-attention blocks, a camera
//! head, and simplified dense heads for depth, point maps, and confidence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adapter::GeoAdapter;
use crate::bundle::FrameBundle;
use crate::dtype::Real;
use crate::geometry::{
    decode_camera, CameraIntrinsics, CameraPose, GeometryError, Quaternion,
};
use crate::tensor::{backward, concat, patchify_conv, Parameter, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
}

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    pub registers: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub dense_width: usize,
    pub camera_layers: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            dim: 64,
            layers: 4,
            heads: 4,
            patch: 8,
            registers: 2,
            image_h: 32,
            image_w: 32,
            channels: 3,
            dense_width: 128,
            camera_layers: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers < 1 {
            return Err(ModelError::Config("layers must be >= 1".into()));
        }
        if self.patch == 0 || self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return Err(ModelError::Config(format!(
                "image {}x{} must be divisible by patch {}",
                self.image_h, self.image_w, self.patch
            )));
        }
        if self.camera_layers < 1 {
            return Err(ModelError::Config("camera_layers must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial tokens per frame.
    pub fn tokens_per_frame(&self) -> usize {
        (self.image_h / self.patch) * (self.image_w / self.patch)
    }
}

/// Uniform init in ±1/sqrt(fan_in).
fn init_linear_data<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<T> {
    let a = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| T::from_f64(rng.random_range(-a..a))).collect()
}

fn init_token_data<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::from_f64(rng.random_range(-0.02..0.02))).collect()
}

/// Affine map stored as `[in, out]` weight plus bias.
pub struct Linear<T: Real> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Parameter::new(
                format!("{name}.w"),
                &[fan_in, fan_out],
                init_linear_data(rng, fan_in, fan_in * fan_out),
            ),
            b: Parameter::zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn zeroed(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Parameter::zeros(format!("{name}.w"), &[fan_in, fan_out]),
            b: Parameter::zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.matmul(self.w.tensor())?.add(self.b.tensor())
    }

    pub fn params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.w.clone());
        out.push(self.b.clone());
    }
}

struct LayerNormParams<T: Real> {
    g: Parameter<T>,
    b: Parameter<T>,
}

impl<T: Real> LayerNormParams<T> {
    fn new(name: &str, dim: usize) -> Self {
        LayerNormParams {
            g: Parameter::new(format!("{name}.g"), &[dim], vec![T::ONE; dim]),
            b: Parameter::zeros(format!("{name}.b"), &[dim]),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.layernorm(self.g.tensor(), self.b.tensor(), LAYERNORM_EPS)
    }

    fn params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.g.clone());
        out.push(self.b.clone());
    }
}

/// Pre-norm self-attention followed by a pre-norm 2-layer feed-forward,
/// both with residual connections. Input `[B, S, dim]`.
pub(crate) struct TransformerUnit<T: Real> {
    ln1: LayerNormParams<T>,
    pub(crate) wq: Linear<T>,
    pub(crate) wk: Linear<T>,
    pub(crate) wv: Linear<T>,
    pub(crate) wo: Linear<T>,
    ln2: LayerNormParams<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    heads: usize,
    dim: usize,
}

impl<T: Real> TransformerUnit<T> {
    fn new(name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = 4 * dim;
        TransformerUnit {
            ln1: LayerNormParams::new(&format!("{name}.ln1"), dim),
            wq: Linear::new(&format!("{name}.attn.q"), dim, dim, rng),
            wk: Linear::new(&format!("{name}.attn.k"), dim, dim, rng),
            wv: Linear::new(&format!("{name}.attn.v"), dim, dim, rng),
            wo: Linear::new(&format!("{name}.attn.o"), dim, dim, rng),
            ln2: LayerNormParams::new(&format!("{name}.ln2"), dim),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), dim, hidden, rng),
            fc2: Linear::new(&format!("{name}.mlp.fc2"), hidden, dim, rng),
            heads,
            dim,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (b, s) = (x.shape()[0], x.shape()[1]);
        let hd = self.dim / self.heads;
        let h = self.ln1.forward(x)?;
        let split = |t: Tensor<T>| -> Result<Tensor<T>, TensorError> {
            t.reshape(&[b, s, self.heads, hd])?.transpose(1, 2)
        };
        let q = split(self.wq.forward(&h)?)?;
        let k = split(self.wk.forward(&h)?)?;
        let v = split(self.wv.forward(&h)?)?;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let scores = q.matmul(&k.transpose(2, 3)?)?.scale(scale)?;
        let attn = scores.softmax(3)?;
        let ctx = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .reshape(&[b, s, self.dim])?;
        let y = x.add(&self.wo.forward(&ctx)?)?;

        let z = self.ln2.forward(&y)?;
        let ff = self.fc2.forward(&self.fc1.forward(&z)?.gelu())?;
        y.add(&ff)
    }

    fn params(&self, out: &mut Vec<Parameter<T>>) {
        self.ln1.params(out);
        self.wq.params(out);
        self.wk.params(out);
        self.wv.params(out);
        self.wo.params(out);
        self.ln2.params(out);
        self.fc1.params(out);
        self.fc2.params(out);
    }
}

struct AaBlock<T: Real> {
    frame: TransformerUnit<T>,
    global: TransformerUnit<T>,
}

enum DenseKind {
    Depth,
    PointMap,
}

impl DenseKind {
    fn channels(&self) -> usize {
        match self {
            DenseKind::Depth => 1,
            DenseKind::PointMap => 3,
        }
    }
}

/// Per-token linear head unfolded to full resolution: each spatial token
/// emits a patch·patch tile of (channels + confidence) values.
struct DenseHead<T: Real> {
    ln: LayerNormParams<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    kind: DenseKind,
}

impl<T: Real> DenseHead<T> {
    fn new(name: &str, cfg: &BackboneConfig, kind: DenseKind, rng: &mut ChaCha8Rng) -> Self {
        let out = cfg.patch * cfg.patch * (kind.channels() + 1);
        DenseHead {
            ln: LayerNormParams::new(&format!("{name}.ln"), cfg.dim),
            fc1: Linear::new(&format!("{name}.fc1"), cfg.dim, cfg.dense_width, rng),
            fc2: Linear::new(&format!("{name}.fc2"), cfg.dense_width, out, rng),
            kind,
        }
    }

    /// (maps `[N, ch, H, W]` before output transform, confidence `[N, H, W]`).
    fn forward(
        &self,
        spatial: &Tensor<T>,
        cfg: &BackboneConfig,
    ) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
        let n = spatial.shape()[0];
        let (k, c2) = (cfg.patch, self.kind.channels() + 1);
        let (ph, pw) = (cfg.image_h / k, cfg.image_w / k);
        let h = self.ln.forward(spatial)?;
        let y = self.fc2.forward(&self.fc1.forward(&h)?.gelu())?;
        // [N, p, k²·c2] -> [N, c2, H, W]
        let grid = y
            .reshape(&[n, ph, pw, c2, k, k])?
            .transpose(1, 3)?
            .transpose(2, 3)?
            .transpose(3, 4)?
            .reshape(&[n, c2, cfg.image_h, cfg.image_w])?;
        let ch = self.kind.channels();
        let maps = grid.narrow(1, 0, ch)?;
        let conf_raw = grid
            .narrow(1, ch, 1)?
            .reshape(&[n, cfg.image_h, cfg.image_w])?;
        // confidence floor keeps log Σ >= 0
        let conf = conf_raw.softplus()?.add_scalar(T::ONE)?;
        Ok((maps, conf))
    }

    fn params(&self, out: &mut Vec<Parameter<T>>) {
        self.ln.params(out);
        self.fc1.params(out);
        self.fc2.params(out);
    }
}

/// Network outputs for one bundle.
pub struct Predictions<T: Real> {
    /// `[N, 9]` camera vectors; quaternion part unit-norm with w >= 0.
    pub cameras: Tensor<T>,
    /// `[N, H, W]` nonnegative depth.
    pub depth: Tensor<T>,
    /// `[N, 3, H, W]` points in the first camera's frame.
    pub pmap: Tensor<T>,
    /// `[N, H, W]` depth confidence, >= 1 everywhere.
    pub conf_depth: Tensor<T>,
    /// `[N, H, W]` point-map confidence, >= 1 everywhere.
    pub conf_pmap: Tensor<T>,
}

impl<T: Real> Predictions<T> {
    /// Decode the camera rows into geometry types (normalized again at f64).
    pub fn decode_cameras(&self, width: f64, height: f64) -> Vec<(CameraIntrinsics, CameraPose)> {
        let n = self.cameras.shape()[0];
        let data = self.cameras.to_f64_vec();
        (0..n)
            .map(|i| {
                let row = &data[i * 9..(i + 1) * 9];
                let q = Quaternion {
                    w: row[0],
                    x: row[1],
                    y: row[2],
                    z: row[3],
                };
                let q = if q.norm() < 1e-12 {
                    Quaternion::IDENTITY
                } else {
                    q.normalized().canonicalized()
                };
                let v = crate::geometry::CameraParamVector {
                    q,
                    t: [row[4], row[5], row[6]],
                    fov: (row[7].clamp(1e-3, 3.14), row[8].clamp(1e-3, 3.14)),
                };
                decode_camera(&v, width, height)
            })
            .collect()
    }

    pub fn depth_frame(&self, i: usize) -> Vec<f64> {
        let (h, w) = (self.depth.shape()[1], self.depth.shape()[2]);
        let all = self.depth.to_f64_vec();
        all[i * h * w..(i + 1) * h * w].to_vec()
    }

    pub fn pmap_frame(&self, i: usize) -> Vec<[f64; 3]> {
        let (c, h, w) = (
            self.pmap.shape()[1],
            self.pmap.shape()[2],
            self.pmap.shape()[3],
        );
        debug_assert_eq!(c, 3);
        let all = self.pmap.to_f64_vec();
        let base = i * 3 * h * w;
        (0..h * w)
            .map(|px| {
                [
                    all[base + px],
                    all[base + h * w + px],
                    all[base + 2 * h * w + px],
                ]
            })
            .collect()
    }
}

/// The full trunk-plus-heads model.
pub struct Model<T: Real> {
    pub cfg: BackboneConfig,
    patch_embed_w: Parameter<T>,
    patch_embed_b: Parameter<T>,
    pos_embed: Parameter<T>,
    camera_token: Parameter<T>,
    frame_flag: Parameter<T>,
    register_tokens: Option<Parameter<T>>,
    blocks: Vec<AaBlock<T>>,
    camera_head: Vec<TransformerUnit<T>>,
    camera_ln: LayerNormParams<T>,
    camera_out: Linear<T>,
    depth_head: DenseHead<T>,
    pmap_head: DenseHead<T>,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let block_in = cfg.channels * cfg.patch * cfg.patch;
        let p = cfg.tokens_per_frame();
        let blocks = (0..cfg.layers)
            .map(|l| AaBlock {
                frame: TransformerUnit::new(&format!("block{l:02}.frame"), cfg.dim, cfg.heads, rng),
                global: TransformerUnit::new(&format!("block{l:02}.global"), cfg.dim, cfg.heads, rng),
            })
            .collect();
        let camera_head = (0..cfg.camera_layers)
            .map(|l| TransformerUnit::new(&format!("camera_head.layer{l}"), cfg.dim, cfg.heads, rng))
            .collect();
        Ok(Model {
            cfg: cfg.clone(),
            patch_embed_w: Parameter::new(
                "embed.patch.w",
                &[cfg.dim, block_in],
                init_linear_data(rng, block_in, cfg.dim * block_in),
            ),
            patch_embed_b: Parameter::zeros("embed.patch.b", &[cfg.dim]),
            pos_embed: Parameter::new("embed.pos", &[p, cfg.dim], init_token_data(rng, p * cfg.dim)),
            camera_token: Parameter::new(
                "embed.camera_token",
                &[1, cfg.dim],
                init_token_data(rng, cfg.dim),
            ),
            frame_flag: Parameter::new(
                "embed.frame_flag",
                &[1, cfg.dim],
                init_token_data(rng, cfg.dim),
            ),
            register_tokens: if cfg.registers > 0 {
                Some(Parameter::new(
                    "embed.registers",
                    &[cfg.registers, cfg.dim],
                    init_token_data(rng, cfg.registers * cfg.dim),
                ))
            } else {
                None
            },
            blocks,
            camera_head,
            camera_ln: LayerNormParams::new("camera_head.ln", cfg.dim),
            camera_out: Linear::new("camera_head.out", cfg.dim, 9, rng),
            depth_head: DenseHead::new("depth_head", cfg, DenseKind::Depth, rng),
            pmap_head: DenseHead::new("pmap_head", cfg, DenseKind::PointMap, rng),
        })
    }

    /// All trainable parameters in a stable order.
    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        out.push(self.patch_embed_w.clone());
        out.push(self.patch_embed_b.clone());
        out.push(self.pos_embed.clone());
        out.push(self.camera_token.clone());
        out.push(self.frame_flag.clone());
        if let Some(regs) = &self.register_tokens {
            out.push(regs.clone());
        }
        for b in &self.blocks {
            b.frame.params(&mut out);
            b.global.params(&mut out);
        }
        for u in &self.camera_head {
            u.params(&mut out);
        }
        self.camera_ln.params(&mut out);
        self.camera_out.params(&mut out);
        self.depth_head.params(&mut out);
        self.pmap_head.params(&mut out);
        out
    }

    pub fn camera_token_param(&self) -> &Parameter<T> {
        &self.camera_token
    }

    pub fn patch_embed(&self) -> (&Parameter<T>, &Parameter<T>) {
        (&self.patch_embed_w, &self.patch_embed_b)
    }

    /// Patchify each frame and assemble camera/register/spatial token groups.
    /// Frame 1's camera token carries an extra learned flag so the network
    /// can tell which frame anchors the output coordinate system.
    fn embed_frames(
        &self,
        bundle: &FrameBundle<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), ModelError> {
        let cfg = &self.cfg;
        let n = bundle.num_frames();
        if bundle.height != cfg.image_h || bundle.width != cfg.image_w || bundle.channels != cfg.channels
        {
            return Err(ModelError::Input(format!(
                "bundle {}x{}x{} does not match config {}x{}x{}",
                bundle.channels,
                bundle.height,
                bundle.width,
                cfg.channels,
                cfg.image_h,
                cfg.image_w
            )));
        }
        let p = cfg.tokens_per_frame();
        let mut spatial_frames = Vec::with_capacity(n);
        for i in 0..n {
            let img = bundle
                .images
                .narrow(0, i, 1)?
                .reshape(&[cfg.channels, cfg.image_h, cfg.image_w])?;
            let toks = patchify_conv(&img, self.patch_embed_w.tensor(), self.patch_embed_b.tensor(), cfg.patch)?;
            spatial_frames.push(toks.reshape(&[1, p, cfg.dim])?);
        }
        let spatial = concat(&spatial_frames, 0)?.add(self.pos_embed.tensor())?;

        let mut cam_frames = Vec::with_capacity(n);
        for i in 0..n {
            let tok = if i == 0 {
                self.camera_token.tensor().add(self.frame_flag.tensor())?
            } else {
                self.camera_token.tensor().clone()
            };
            cam_frames.push(tok.reshape(&[1, 1, cfg.dim])?);
        }
        let cam = concat(&cam_frames, 0)?;

        let r = cfg.registers;
        let regs = match &self.register_tokens {
            Some(param) => {
                let reg = param.tensor().reshape(&[1, r, cfg.dim])?;
                let copies: Vec<Tensor<T>> = (0..n).map(|_| reg.clone()).collect();
                concat(&copies, 0)?
            }
            None => Tensor::zeros(&[n, 0, cfg.dim]),
        };
        Ok((cam, regs, spatial))
    }

    /// Full forward pass: embed, optional auxiliary injection, alternating
    /// attention, then the three heads. Register tokens are dropped before
    /// the heads.
    pub fn forward(
        &self,
        bundle: &FrameBundle<T>,
        adapter: Option<&GeoAdapter<T>>,
    ) -> Result<Predictions<T>, ModelError> {
        let cfg = &self.cfg;
        let n = bundle.num_frames();
        let p = cfg.tokens_per_frame();
        let r = cfg.registers;
        let (cam, regs, mut spatial) = self.embed_frames(bundle)?;

        let prepared = match adapter {
            Some(a) => Some(a.prepare(bundle)?),
            None => None,
        };
        if let (Some(a), Some(prep)) = (adapter, prepared.as_ref()) {
            spatial = a.inject_depth(&spatial, prep)?;
        }

        let mut tokens = concat(&[cam, regs, spatial], 1)?;
        let t = 1 + r + p;
        for (l, block) in self.blocks.iter().enumerate() {
            if let (Some(a), Some(prep)) = (adapter, prepared.as_ref()) {
                tokens = a.inject_camera(&tokens, prep, l)?;
            }
            // frame-wise attention: frames are the batch dim
            tokens = block.frame.forward(&tokens)?;
            // global attention: one joint sequence over all frames' tokens
            let flat = tokens.reshape(&[1, n * t, cfg.dim])?;
            tokens = block.global.forward(&flat)?.reshape(&[n, t, cfg.dim])?;
        }
        if let (Some(a), Some(prep)) = (adapter, prepared.as_ref()) {
            // final encoder stage feeds the camera head
            tokens = a.inject_camera(&tokens, prep, self.blocks.len())?;
        }

        let cam_tokens = tokens.narrow(1, 0, 1)?.reshape(&[1, n, cfg.dim])?;
        let spatial_tokens = tokens.narrow(1, 1 + r, p)?;

        let mut ch = cam_tokens;
        for unit in &self.camera_head {
            ch = unit.forward(&ch)?;
        }
        let raw = self
            .camera_out
            .forward(&self.camera_ln.forward(&ch)?)?
            .reshape(&[n, 9])?;
        let cameras = normalize_camera_rows(&raw)?;

        let (depth_raw, conf_depth) = self.depth_head.forward(&spatial_tokens, cfg)?;
        let depth = depth_raw
            .softplus()?
            .reshape(&[n, cfg.image_h, cfg.image_w])?;
        let (pmap, conf_pmap) = self.pmap_head.forward(&spatial_tokens, cfg)?;

        Ok(Predictions {
            cameras,
            depth,
            pmap,
            conf_depth,
            conf_pmap,
        })
    }
}

/// Normalize each row's quaternion part to unit length with w >= 0; an
/// all-zero quaternion falls back to the identity (1,0,0,0).
fn normalize_camera_rows<T: Real>(raw: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let n = raw.shape()[0];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row = raw.narrow(0, i, 1)?;
        let q = row.narrow(1, 0, 4)?;
        let rest = row.narrow(1, 4, 5)?;
        let n2 = q.mul(&q)?.sum_all();
        let qn = if n2.item().to_f64() < 1e-24 {
            Tensor::from_f64_slice(&[1, 4], &[1.0, 0.0, 0.0, 0.0])
        } else {
            let norm = n2.ln().scale(T::from_f64(0.5))?.exp();
            let unit = q.div(&norm)?;
            if unit.get(0).to_f64() < 0.0 {
                unit.neg()?
            } else {
                unit
            }
        };
        rows.push(concat(&[qn, rest], 1)?);
    }
    concat(&rows, 0)
}

/// Convenience for gradient tests: scalar loss -> backward.
pub fn run_backward<T: Real>(loss: &Tensor<T>) -> Result<(), ModelError> {
    backward(loss)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SceneSpec};
    use rand::SeedableRng;

    fn tiny_cfg() -> BackboneConfig {
        BackboneConfig {
            dim: 16,
            layers: 2,
            heads: 2,
            patch: 8,
            registers: 1,
            image_h: 16,
            image_w: 16,
            channels: 3,
            dense_width: 24,
            camera_layers: 2,
        }
    }

    fn tiny_scene(seed: u64, frames: usize) -> crate::synth::SceneSample {
        generate(&SceneSpec {
            seed,
            num_frames: frames,
            width: 16,
            height: 16,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn token_count_arithmetic() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.tokens_per_frame(), 16); // 32/8 * 32/8
        assert!(cfg.validate().is_ok());

        let mut bad = cfg.clone();
        bad.dim = 65;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_patch_embed_leaves_positional_embedding() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let (w, b) = model.patch_embed();
        w.tensor().with_data_mut(|d| d.fill(0.0));
        b.tensor().with_data_mut(|d| d.fill(0.0));

        let scene = tiny_scene(1, 2);
        let bundle = FrameBundle::<f64>::images_only(&scene);
        let (_, _, spatial) = model.embed_frames(&bundle).unwrap();
        let pos = model.pos_embed.tensor().to_f64_vec();
        let sp = spatial.to_f64_vec();
        let per = pos.len();
        for f in 0..2 {
            assert_eq!(&sp[f * per..(f + 1) * per], &pos[..]);
        }
    }

    #[test]
    fn identical_frames_embed_identically() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let scene = tiny_scene(2, 1);
        // duplicate the single frame
        let twin = scene.subset(&[0, 0]);
        let bundle = FrameBundle::<f64>::images_only(&twin);
        let (_, _, spatial) = model.embed_frames(&bundle).unwrap();
        let sp = spatial.to_f64_vec();
        let per = sp.len() / 2;
        assert_eq!(&sp[..per], &sp[per..]);
    }

    #[test]
    fn single_frame_global_equals_framewise_with_tied_weights() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let unit = TransformerUnit::<f64>::new("tied", cfg.dim, cfg.heads, &mut rng);
        let t = 5;
        let data: Vec<f64> = (0..t * cfg.dim).map(|i| (i as f64 * 0.37).sin()).collect();
        // frame-wise view: batch of one frame; global view: one joint sequence
        let framewise = Tensor::from_vec(&[1, t, cfg.dim], data.clone());
        let global = Tensor::from_vec(&[1, t, cfg.dim], data);
        let a = unit.forward(&framewise).unwrap().to_f64_vec();
        let b = unit.forward(&global).unwrap().to_f64_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_value_projection_reduces_to_feed_forward() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let unit = TransformerUnit::<f64>::new("u", cfg.dim, cfg.heads, &mut rng);
        unit.wv.w.tensor().with_data_mut(|d| d.fill(0.0));
        unit.wv.b.tensor().with_data_mut(|d| d.fill(0.0));
        unit.wo.w.tensor().with_data_mut(|d| d.fill(0.0));
        unit.wo.b.tensor().with_data_mut(|d| d.fill(0.0));

        let x = Tensor::from_vec(
            &[1, 4, cfg.dim],
            (0..4 * cfg.dim).map(|i| (i as f64 * 0.11).cos()).collect(),
        );
        let out = unit.forward(&x).unwrap().to_f64_vec();
        // attention contributes nothing: y = x, out = x + ff(ln2(x))
        let z = unit.ln2.forward(&x).unwrap();
        let ff = unit
            .fc2
            .forward(&unit.fc1.forward(&z).unwrap().gelu())
            .unwrap();
        let expect = x.add(&ff).unwrap().to_f64_vec();
        assert_eq!(out, expect);
    }

    #[test]
    fn frame_permutation_equivariance() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let scene = tiny_scene(5, 4);
        let base = model
            .forward(&FrameBundle::<f64>::images_only(&scene), None)
            .unwrap();
        // permute frames 2..N (frame 1 stays the anchor)
        let perm = [0usize, 3, 1, 2];
        let permuted_scene = scene.subset(&perm);
        let permuted = model
            .forward(&FrameBundle::<f64>::images_only(&permuted_scene), None)
            .unwrap();

        let (h, w) = (cfg.image_h, cfg.image_w);
        let base_depth = base.depth.to_f64_vec();
        let perm_depth = permuted.depth.to_f64_vec();
        for (new_idx, &old_idx) in perm.iter().enumerate() {
            for px in 0..h * w {
                let a = base_depth[old_idx * h * w + px];
                let b = perm_depth[new_idx * h * w + px];
                assert!((a - b).abs() < 1e-9, "depth mismatch {a} vs {b}");
            }
        }
        let base_cam = base.cameras.to_f64_vec();
        let perm_cam = permuted.cameras.to_f64_vec();
        for (new_idx, &old_idx) in perm.iter().enumerate() {
            for j in 0..9 {
                assert!((base_cam[old_idx * 9 + j] - perm_cam[new_idx * 9 + j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn camera_head_zero_weights_identity_fallback() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        model.camera_out.w.tensor().with_data_mut(|d| d.fill(0.0));
        model.camera_out.b.tensor().with_data_mut(|d| d.fill(0.0));
        let scene = tiny_scene(7, 3);
        let preds = model
            .forward(&FrameBundle::<f64>::images_only(&scene), None)
            .unwrap();
        assert_eq!(preds.cameras.shape(), &[3, 9]);
        let cams = preds.cameras.to_f64_vec();
        for i in 0..3 {
            assert_eq!(&cams[i * 9..i * 9 + 4], &[1.0, 0.0, 0.0, 0.0]);
            assert!(cams[i * 9 + 4..(i + 1) * 9].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn predicted_quaternions_are_unit_with_nonnegative_w() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let scene = tiny_scene(9, 3);
        let preds = model
            .forward(&FrameBundle::<f64>::images_only(&scene), None)
            .unwrap();
        let cams = preds.cameras.to_f64_vec();
        for i in 0..3 {
            let q = &cams[i * 9..i * 9 + 4];
            let norm: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!(q[0] >= 0.0);
        }
    }

    #[test]
    fn dense_head_zero_weights_closed_form() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        for head in [&model.depth_head, &model.pmap_head] {
            head.fc1.w.tensor().with_data_mut(|d| d.fill(0.0));
            head.fc1.b.tensor().with_data_mut(|d| d.fill(0.0));
            head.fc2.w.tensor().with_data_mut(|d| d.fill(0.0));
            head.fc2.b.tensor().with_data_mut(|d| d.fill(0.0));
        }
        let scene = tiny_scene(11, 2);
        let preds = model
            .forward(&FrameBundle::<f64>::images_only(&scene), None)
            .unwrap();
        let ln2 = 2.0_f64.ln();
        assert_eq!(preds.depth.shape(), &[2, 16, 16]);
        for &v in &preds.depth.to_f64_vec() {
            assert!((v - ln2).abs() < 1e-12);
        }
        for &v in &preds.conf_depth.to_f64_vec() {
            assert!((v - (1.0 + ln2)).abs() < 1e-12);
        }
        for &v in &preds.conf_pmap.to_f64_vec() {
            assert!((v - (1.0 + ln2)).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_head_per_pixel_gradient_check() {
        // 4x4 map, single-patch head: finite differences on the head weights
        let cfg = BackboneConfig {
            dim: 8,
            layers: 1,
            heads: 1,
            patch: 4,
            registers: 0,
            image_h: 4,
            image_w: 4,
            channels: 3,
            dense_width: 6,
            camera_layers: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let scene = generate(&SceneSpec {
            seed: 20,
            num_frames: 1,
            width: 4,
            height: 4,
            ..Default::default()
        })
        .unwrap();
        let bundle = FrameBundle::<f64>::images_only(&scene);
        // per-pixel weights make every output pixel contribute distinctly
        let pixel_w = Tensor::from_vec(&[1, 4, 4], (0..16).map(|i| 0.3 + i as f64 * 0.05).collect());
        let run = || {
            let preds = model.forward(&bundle, None).unwrap();
            preds.depth.mul(&pixel_w).unwrap().sum_all()
        };
        for p in [&model.depth_head.fc1.w, &model.depth_head.fc2.w, &model.depth_head.fc2.b] {
            p.zero_grad();
            let loss = run();
            run_backward(&loss).unwrap();
            let grad = p.grad().unwrap();
            for idx in 0..p.numel().min(12) {
                let orig = p.tensor().get(idx);
                let h = 1e-6;
                p.tensor().set(idx, orig + h);
                let fp = run().item();
                p.tensor().set(idx, orig - h);
                let fm = run().item();
                p.tensor().set(idx, orig);
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - grad[idx]).abs() < 1e-5 * fd.abs().max(grad[idx].abs()).max(1.0),
                    "{}[{idx}]: ad {} fd {}",
                    p.name(),
                    grad[idx],
                    fd
                );
            }
        }
    }

    #[test]
    fn confidence_floor_and_depth_nonnegative() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let scene = tiny_scene(13, 2);
        let preds = model
            .forward(&FrameBundle::<f64>::images_only(&scene), None)
            .unwrap();
        assert!(preds.depth.to_f64_vec().iter().all(|&v| v >= 0.0));
        assert!(preds.conf_depth.to_f64_vec().iter().all(|&v| v >= 1.0));
        assert!(preds.conf_pmap.to_f64_vec().iter().all(|&v| v >= 1.0));
    }

    #[test]
    fn forward_is_sensitive_to_pixel_values() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let scene = tiny_scene(15, 2);
        let bundle = FrameBundle::<f64>::images_only(&scene);
        let a = model.forward(&bundle, None).unwrap();

        let mut doubled = scene.clone();
        for img in doubled.images.iter_mut() {
            for v in img.iter_mut() {
                *v *= 2.0;
            }
        }
        let b = model
            .forward(&FrameBundle::<f64>::images_only(&doubled), None)
            .unwrap();
        let da = a.depth.to_f64_vec();
        let db = b.depth.to_f64_vec();
        let max_delta = da
            .iter()
            .zip(db.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_delta > 0.0);
    }

    #[test]
    fn single_frame_forward_shapes() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let scene = tiny_scene(17, 1);
        let preds = model
            .forward(&FrameBundle::<f64>::images_only(&scene), None)
            .unwrap();
        assert_eq!(preds.cameras.shape(), &[1, 9]);
        assert_eq!(preds.depth.shape(), &[1, 16, 16]);
        assert_eq!(preds.pmap.shape(), &[1, 3, 16, 16]);
        assert_eq!(preds.conf_pmap.shape(), &[1, 16, 16]);
    }

    #[test]
    fn parameter_names_are_unique() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let model = Model::<f64>::new(&cfg, &mut rng).unwrap();
        let params = model.parameters();
        let mut names: Vec<&str> = params.iter().map(|p| p.name()).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total);
    }
}
