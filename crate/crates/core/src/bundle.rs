//! Model input bundle: a stack of images plus whatever auxiliary camera and
//! depth annotations happen to be present per frame.

use crate::dtype::Real;
use crate::geometry::{CameraIntrinsics, CameraPose, DepthObservation};
use crate::synth::SceneSample;
use crate::tensor::Tensor;

/// One sequence's network input. Auxiliary entries are `None` for frames
/// without that modality.
pub struct FrameBundle<T: Real> {
    /// `[N, C, H, W]` image stack (constant, not differentiated).
    pub images: Tensor<T>,
    pub cameras: Vec<Option<(CameraIntrinsics, CameraPose)>>,
    pub depths: Vec<Option<DepthObservation>>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl<T: Real> FrameBundle<T> {
    pub fn num_frames(&self) -> usize {
        self.cameras.len()
    }

    /// RGB-only bundle from a scene sample.
    pub fn images_only(sample: &SceneSample) -> Self {
        let n = sample.num_frames();
        let per = sample.channels * sample.height * sample.width;
        let mut data = Vec::with_capacity(n * per);
        for img in &sample.images {
            data.extend(img.iter().map(|&v| T::from_f64(v)));
        }
        FrameBundle {
            images: Tensor::from_vec(&[n, sample.channels, sample.height, sample.width], data),
            cameras: vec![None; n],
            depths: vec![None; n],
            height: sample.height,
            width: sample.width,
            channels: sample.channels,
        }
    }
}
