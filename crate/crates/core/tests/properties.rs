//! Property tests over randomized inputs: normalization invariants,
//! encode/decode round trips, op identities, and metric bounds.

use proptest::prelude::*;

use ovgt_core::geometry::{
    decode_camera, encode_camera, fov_to_intrinsics, intrinsics_to_fov, normalize_depth_batch,
    normalize_poses, quaternion_to_rotation, rotation_geodesic, v_norm, CameraPose,
    DepthObservation, Quaternion,
};
use ovgt_core::metrics::rra_rta_auc;
use ovgt_core::tensor::{concat, patchify_conv, Tensor};

fn arb_quaternion() -> impl Strategy<Value = Quaternion> {
    (
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
    )
        .prop_filter_map("degenerate quaternion", |(w, x, y, z)| {
            let q = Quaternion { w, x, y, z };
            if q.norm() > 1e-3 {
                Some(q.normalized())
            } else {
                None
            }
        })
}

fn arb_pose() -> impl Strategy<Value = CameraPose> {
    (arb_quaternion(), -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_map(|(q, x, y, z)| {
        CameraPose {
            rotation: quaternion_to_rotation(&q),
            translation: [x, y, z],
        }
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..8,
        values in proptest::collection::vec(-50.0f64..50.0, 1..40),
    ) {
        let n = rows * cols;
        let data: Vec<f64> = (0..n).map(|i| values[i % values.len()]).collect();
        let x = Tensor::<f64>::from_vec(&[rows, cols], data);
        let y = x.softmax(1).unwrap().to_f64_vec();
        for r in 0..rows {
            let row = &y[r * cols..(r + 1) * cols];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn camera_encode_decode_roundtrip(pose in arb_pose(), fov_x in 0.3f64..2.5, fov_y in 0.3f64..2.5) {
        let k = fov_to_intrinsics(fov_x, fov_y, 64.0, 48.0);
        let v = encode_camera(&k, &pose).unwrap();
        let (k2, g2) = decode_camera(&v, 64.0, 48.0);
        prop_assert!(rotation_geodesic(&pose.rotation, &g2.rotation) < 1e-9);
        prop_assert_eq!(pose.translation, g2.translation);
        let (fx2, fy2) = intrinsics_to_fov(&k2);
        prop_assert!((fx2 - fov_x).abs() < 1e-12);
        prop_assert!((fy2 - fov_y).abs() < 1e-12);
    }

    #[test]
    fn normalized_pose_sets_have_unit_mean_distance(
        poses in proptest::collection::vec(arb_pose(), 2..6),
    ) {
        let (out, _) = normalize_poses(&poses);
        prop_assert!(v_norm(out[0].translation) == 0.0);
        let mean: f64 = out[1..].iter().map(|g| v_norm(g.translation)).sum::<f64>()
            / (out.len() - 1) as f64;
        // either properly normalized or the degenerate co-located guard fired
        let all_tiny = out[1..].iter().all(|g| v_norm(g.translation) < 1e-9);
        prop_assert!((mean - 1.0).abs() < 1e-9 || all_tiny);
    }

    #[test]
    fn depth_batch_normalization_is_idempotent(
        depths in proptest::collection::vec(0.1f64..10.0, 8),
        mask_bits in proptest::collection::vec(any::<bool>(), 8),
    ) {
        prop_assume!(mask_bits.iter().any(|&m| m));
        let obs = vec![DepthObservation::new(depths, mask_bits, 2, 4, 0)];
        let (once, _) = normalize_depth_batch(&obs).unwrap();
        let (twice, mean2) = normalize_depth_batch(&once).unwrap();
        prop_assert!((mean2 - 1.0).abs() < 1e-12);
        for (a, b) in once[0].depth.iter().zip(twice[0].depth.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn patchify_matches_im2col_reference(
        c in 1usize..3,
        ph in 1usize..3,
        pw in 1usize..3,
        patch in 1usize..4,
        dim in 1usize..5,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (ph * patch, pw * patch);
        let x_data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let block = c * patch * patch;
        let w_data: Vec<f64> = (0..dim * block).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b_data: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::<f64>::from_vec(&[c, h, w], x_data.clone());
        let wt = Tensor::<f64>::from_vec(&[dim, block], w_data.clone());
        let bt = Tensor::<f64>::from_vec(&[dim], b_data.clone());
        let got = patchify_conv(&x, &wt, &bt, patch).unwrap().to_f64_vec();

        let mut want = Vec::new();
        for py in 0..ph {
            for px in 0..pw {
                let mut blockv = Vec::new();
                for ci in 0..c {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            blockv.push(x_data[ci * h * w + (py * patch + dy) * w + px * patch + dx]);
                        }
                    }
                }
                for o in 0..dim {
                    let mut acc = b_data[o];
                    for (i, &v) in blockv.iter().enumerate() {
                        acc += w_data[o * block + i] * v;
                    }
                    want.push(acc);
                }
            }
        }
        prop_assert_eq!(got, want); // bit-for-bit
    }

    #[test]
    fn concat_then_narrow_recovers_parts(
        a_len in 1usize..5,
        b_len in 1usize..5,
        rows in 1usize..4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a_data: Vec<f64> = (0..rows * a_len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b_data: Vec<f64> = (0..rows * b_len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = Tensor::<f64>::from_vec(&[rows, a_len], a_data.clone());
        let b = Tensor::<f64>::from_vec(&[rows, b_len], b_data.clone());
        let cat = concat(&[a, b], 1).unwrap();
        prop_assert_eq!(cat.narrow(1, 0, a_len).unwrap().to_f64_vec(), a_data);
        prop_assert_eq!(cat.narrow(1, a_len, b_len).unwrap().to_f64_vec(), b_data);
    }

    #[test]
    fn auc_stays_in_unit_interval(
        errors in proptest::collection::vec((0.0f64..90.0, 0.0f64..90.0), 1..30),
    ) {
        let (rra, rta, auc) = rra_rta_auc(&errors, 5.0, 30.0);
        prop_assert!((0.0..=1.0).contains(&rra));
        prop_assert!((0.0..=1.0).contains(&rta));
        prop_assert!((0.0..=1.0).contains(&auc));
    }
}
