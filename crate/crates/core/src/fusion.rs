//! Stochastic multimodal training regimen: per sequence, draw how many frames
//! receive ground-truth cameras (a prefix of length Q) and depths (a random
//! O-subset), with a fraction `p` of sequences kept RGB-only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bundle::FrameBundle;
use crate::dtype::Real;
use crate::synth::SceneSample;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("assignment length {flags} does not match sequence length {frames}")]
    LengthMismatch { flags: usize, frames: usize },
}

/// Which frames of a sequence carry which auxiliary modality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityAssignment {
    pub camera_flags: Vec<bool>,
    pub depth_flags: Vec<bool>,
    pub rgb_only: bool,
}

impl ModalityAssignment {
    pub fn none(s: usize) -> Self {
        ModalityAssignment {
            camera_flags: vec![false; s],
            depth_flags: vec![false; s],
            rgb_only: true,
        }
    }

    pub fn full(s: usize) -> Self {
        ModalityAssignment {
            camera_flags: vec![true; s],
            depth_flags: vec![true; s],
            rgb_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// Probability of an RGB-only sequence (default 0.10).
    pub rgb_only_prob: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            rgb_only_prob: 0.10,
            seed: 0,
        }
    }
}

/// Draw one assignment: with probability `p` the sequence stays RGB-only;
/// otherwise Q ~ U{0..S} cameras go to the first Q frames and an independent
/// O ~ U{0..S} depths go to a uniformly random O-subset.
pub fn sample_assignment(s: usize, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> ModalityAssignment {
    assert!(s >= 1, "sequence length must be >= 1");
    if rng.random_range(0.0..1.0) < cfg.rgb_only_prob {
        return ModalityAssignment::none(s);
    }
    let q = rng.random_range(0..=s);
    let mut camera_flags = vec![false; s];
    for flag in camera_flags.iter_mut().take(q) {
        *flag = true;
    }
    let o = rng.random_range(0..=s);
    let mut depth_flags = vec![false; s];
    for idx in rand::seq::index::sample(rng, s, o) {
        depth_flags[idx] = true;
    }
    ModalityAssignment {
        camera_flags,
        depth_flags,
        rgb_only: false,
    }
}

/// Copy ground truth into a bundle exactly where the flags say so.
pub fn apply_assignment<T: Real>(
    sample: &SceneSample,
    assignment: &ModalityAssignment,
) -> Result<FrameBundle<T>, FusionError> {
    let n = sample.num_frames();
    if assignment.camera_flags.len() != n || assignment.depth_flags.len() != n {
        return Err(FusionError::LengthMismatch {
            flags: assignment.camera_flags.len().max(assignment.depth_flags.len()),
            frames: n,
        });
    }
    let mut bundle = FrameBundle::images_only(sample);
    for i in 0..n {
        if assignment.camera_flags[i] {
            bundle.cameras[i] = Some((sample.intrinsics[i], sample.poses[i]));
        }
        if assignment.depth_flags[i] {
            bundle.depths[i] = Some(sample.depths[i].clone());
        }
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SceneSpec};
    use rand::SeedableRng;

    #[test]
    fn rgb_only_when_p_is_one() {
        let cfg = SamplerConfig {
            rgb_only_prob: 1.0,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..100 {
            let a = sample_assignment(5, &cfg, &mut rng);
            assert!(a.rgb_only);
            assert!(a.camera_flags.iter().all(|&f| !f));
            assert!(a.depth_flags.iter().all(|&f| !f));
        }
    }

    #[test]
    fn single_frame_q_frequencies() {
        let cfg = SamplerConfig {
            rgb_only_prob: 0.0,
            seed: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let draws = 10_000;
        let mut q1 = 0usize;
        for _ in 0..draws {
            let a = sample_assignment(1, &cfg, &mut rng);
            if a.camera_flags[0] {
                q1 += 1;
            }
        }
        let freq = q1 as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "Q=1 frequency {freq}");
    }

    #[test]
    fn uniform_q_prefix_and_depth_marginals() {
        let cfg = SamplerConfig {
            rgb_only_prob: 0.0,
            seed: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let draws = 50_000;
        let s = 4;
        let mut q_counts = vec![0usize; s + 1];
        let mut depth_marginal = vec![0usize; s];
        for _ in 0..draws {
            let a = sample_assignment(s, &cfg, &mut rng);
            let q = a.camera_flags.iter().filter(|&&f| f).count();
            q_counts[q] += 1;
            // camera flags must always be a prefix
            let mut seen_gap = false;
            for &f in &a.camera_flags {
                if !f {
                    seen_gap = true;
                } else {
                    assert!(!seen_gap, "camera flags not a prefix: {:?}", a.camera_flags);
                }
            }
            for (i, &f) in a.depth_flags.iter().enumerate() {
                if f {
                    depth_marginal[i] += 1;
                }
            }
        }
        for (q, &c) in q_counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 1.0 / (s as f64 + 1.0)).abs() < 0.02,
                "Q={q} frequency {freq}"
            );
        }
        // E[O]/S = 1/2 per index
        for (i, &c) in depth_marginal.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() < 0.02, "depth marginal at {i}: {freq}");
        }
    }

    #[test]
    fn depth_subset_is_exchangeable() {
        // chi-squared homogeneity across indices at significance 0.01
        let cfg = SamplerConfig {
            rgb_only_prob: 0.0,
            seed: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let s = 4;
        let mut counts = vec![0f64; s];
        for _ in 0..50_000 {
            let a = sample_assignment(s, &cfg, &mut rng);
            for (i, &f) in a.depth_flags.iter().enumerate() {
                if f {
                    counts[i] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        let expected = total / s as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // chi-squared critical value, 3 dof, alpha = 0.01
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn determinism_per_seed() {
        let cfg = SamplerConfig {
            rgb_only_prob: 0.1,
            seed: 9,
        };
        let stream = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| sample_assignment(6, &cfg, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(stream(9), stream(9));
        assert_ne!(stream(9), stream(10));
    }

    #[test]
    fn apply_assignment_presence_patterns() {
        let sample = generate(&SceneSpec {
            seed: 4,
            num_frames: 4,
            width: 16,
            height: 16,
            ..Default::default()
        })
        .unwrap();

        let none = ModalityAssignment::none(4);
        let b: FrameBundle<f64> = apply_assignment(&sample, &none).unwrap();
        assert!(b.cameras.iter().all(|c| c.is_none()));
        assert!(b.depths.iter().all(|d| d.is_none()));

        let full = ModalityAssignment::full(4);
        let b: FrameBundle<f64> = apply_assignment(&sample, &full).unwrap();
        assert!(b.cameras.iter().all(|c| c.is_some()));
        assert!(b.depths.iter().all(|d| d.is_some()));

        let mixed = ModalityAssignment {
            camera_flags: vec![true, true, false, false],
            depth_flags: vec![false, true, false, true],
            rgb_only: false,
        };
        let b: FrameBundle<f64> = apply_assignment(&sample, &mixed).unwrap();
        for i in 0..4 {
            assert_eq!(b.cameras[i].is_some(), mixed.camera_flags[i]);
            assert_eq!(b.depths[i].is_some(), mixed.depth_flags[i]);
        }
        // copied annotations are the scene's own ground truth
        let (k, g) = b.cameras[0].unwrap();
        assert_eq!(k, sample.intrinsics[0]);
        assert_eq!(g.rotation, sample.poses[0].rotation);
        assert_eq!(b.depths[1].as_ref().unwrap().depth, sample.depths[1].depth);

        let short = ModalityAssignment::none(3);
        assert!(apply_assignment::<f64>(&sample, &short).is_err());
    }
}
