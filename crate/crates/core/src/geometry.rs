//! Camera geometry at f64: pinhole intrinsics, rigid poses, quaternion
//! conversions, the 9-value camera parameter vector, pose/scene/depth
//! normalization, and depth-to-point-map unprojection.
//!
//! Conventions (fixed throughout the workspace):
//! - Poses are world-to-camera: `x_cam = R·x_world + t`.
//! - Quaternions are (w, x, y, z) with w ≥ 0.
//! - Fields of view are radians.
//! - Pixel (u, v) casts its ray through the center (u+0.5, v+0.5).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid rotation: det = {det}")]
    InvalidRotation { det: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("no valid points in scene")]
    EmptyScene,
    #[error("no valid pixels in depth batch")]
    EmptyDepth,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

pub type Vec3 = [f64; 3];

pub fn v_add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn v_sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn v_scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn v_dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn v_cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn v_norm(a: Vec3) -> f64 {
    v_dot(a, a).sqrt()
}

pub fn v_normalize(a: Vec3) -> Vec3 {
    let n = v_norm(a);
    if n == 0.0 {
        a
    } else {
        v_scale(a, 1.0 / n)
    }
}

/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub const MAT3_IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn m_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn m_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn m_apply(a: &Mat3, v: Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn m_det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn m_inverse(a: &Mat3) -> Mat3 {
    let det = m_det(a);
    let inv = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv;
    out[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv;
    out[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv;
    out[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv;
    out[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv;
    out[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv;
    out[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv;
    out[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv;
    out[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv;
    out
}

/// Deviation of RᵀR from I (max absolute entry difference).
pub fn orthonormality_error(r: &Mat3) -> f64 {
    let rtr = m_mul(&m_transpose(r), r);
    let mut err: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((rtr[i][j] - target).abs());
        }
    }
    err
}

/// Nearest-rotation projection by the polar Newton iteration
/// X ← (X + X⁻ᵀ)/2; quadratic convergence for near-orthonormal inputs.
fn nearest_rotation(r: &Mat3) -> Mat3 {
    let mut x = *r;
    for _ in 0..20 {
        let inv_t = m_transpose(&m_inverse(&x));
        let mut next = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = 0.5 * (x[i][j] + inv_t[i][j]);
            }
        }
        x = next;
        if orthonormality_error(&x) < 1e-14 {
            break;
        }
    }
    x
}

/// Unit quaternion (w, x, y, z), w ≥ 0 after canonicalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Quaternion {
        let n = self.norm();
        Quaternion {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    /// Flip to the w ≥ 0 hemisphere (q and −q encode the same rotation).
    pub fn canonicalized(&self) -> Quaternion {
        if self.w < 0.0 {
            Quaternion {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }
}

/// Shepperd-style rotation-matrix-to-quaternion conversion. Re-orthonormalizes
/// inputs whose RᵀR error exceeds 1e-9 (up to roughly 1e-6 drift); rejects
/// non-positive determinants.
pub fn rotation_to_quaternion(r: &Mat3) -> Result<Quaternion, GeometryError> {
    let det = m_det(r);
    if det <= 0.0 {
        return Err(GeometryError::InvalidRotation { det });
    }
    let r = if orthonormality_error(r) > 1e-9 {
        nearest_rotation(r)
    } else {
        *r
    };
    let trace = r[0][0] + r[1][1] + r[2][2];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quaternion {
            w: 0.25 * s,
            x: (r[2][1] - r[1][2]) / s,
            y: (r[0][2] - r[2][0]) / s,
            z: (r[1][0] - r[0][1]) / s,
        }
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        Quaternion {
            w: (r[2][1] - r[1][2]) / s,
            x: 0.25 * s,
            y: (r[0][1] + r[1][0]) / s,
            z: (r[0][2] + r[2][0]) / s,
        }
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        Quaternion {
            w: (r[0][2] - r[2][0]) / s,
            x: (r[0][1] + r[1][0]) / s,
            y: 0.25 * s,
            z: (r[1][2] + r[2][1]) / s,
        }
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        Quaternion {
            w: (r[1][0] - r[0][1]) / s,
            x: (r[0][2] + r[2][0]) / s,
            y: (r[1][2] + r[2][1]) / s,
            z: 0.25 * s,
        }
    };
    Ok(q.normalized().canonicalized())
}

pub fn quaternion_to_rotation(q: &Quaternion) -> Mat3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Geodesic angle (radians) between two rotations. Uses atan2 of the
/// antisymmetric part so tiny angles are resolved to machine precision
/// (the acos form floors out around 1e-8).
pub fn rotation_geodesic(a: &Mat3, b: &Mat3) -> f64 {
    let rel = m_mul(a, &m_transpose(b));
    let cos = ((rel[0][0] + rel[1][1] + rel[2][2]) - 1.0) / 2.0;
    let sin = 0.5
        * ((rel[2][1] - rel[1][2]).powi(2)
            + (rel[0][2] - rel[2][0]).powi(2)
            + (rel[1][0] - rel[0][1]).powi(2))
        .sqrt();
    sin.atan2(cos.clamp(-1.0, 1.0))
}

/// Pinhole intrinsics: the four nonzero entries of K plus the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "non-positive focal lengths ({fx}, {fy})"
            )));
        }
        if !(0.0..=width).contains(&cx) || !(0.0..=height).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// fov_x = 2·atan(width / (2·fx)); same for y.
pub fn intrinsics_to_fov(k: &CameraIntrinsics) -> (f64, f64) {
    (
        2.0 * (k.width / (2.0 * k.fx)).atan(),
        2.0 * (k.height / (2.0 * k.fy)).atan(),
    )
}

/// Inverse of `intrinsics_to_fov` with a centered principal point.
pub fn fov_to_intrinsics(fov_x: f64, fov_y: f64, width: f64, height: f64) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: width / (2.0 * (fov_x / 2.0).tan()),
        fy: height / (2.0 * (fov_y / 2.0).tan()),
        cx: width / 2.0,
        cy: height / 2.0,
        width,
        height,
    }
}

/// World-to-camera rigid transform: `x_cam = R·x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraPose {
    pub const IDENTITY: CameraPose = CameraPose {
        rotation: MAT3_IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let det = m_det(&rotation);
        if det <= 0.0 {
            return Err(GeometryError::InvalidRotation { det });
        }
        Ok(CameraPose {
            rotation,
            translation,
        })
    }

    /// self ∘ other: applies `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: m_mul(&self.rotation, &other.rotation),
            translation: v_add(m_apply(&self.rotation, other.translation), self.translation),
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = m_transpose(&self.rotation);
        CameraPose {
            rotation: rt,
            translation: v_scale(m_apply(&rt, self.translation), -1.0),
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        v_add(m_apply(&self.rotation, p), self.translation)
    }

    /// Camera center in world coordinates: −Rᵀ·t.
    pub fn center(&self) -> Vec3 {
        v_scale(m_apply(&m_transpose(&self.rotation), self.translation), -1.0)
    }
}

/// The 9-value camera encoding: quaternion (4), translation (3), fov (2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParamVector {
    pub q: Quaternion,
    pub t: Vec3,
    pub fov: (f64, f64),
}

impl CameraParamVector {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.q.w, self.q.x, self.q.y, self.q.z, self.t[0], self.t[1], self.t[2], self.fov.0,
            self.fov.1,
        ]
    }

    pub fn from_array(a: &[f64; 9]) -> Self {
        CameraParamVector {
            q: Quaternion {
                w: a[0],
                x: a[1],
                y: a[2],
                z: a[3],
            },
            t: [a[4], a[5], a[6]],
            fov: (a[7], a[8]),
        }
    }
}

/// Per-frame depth map with a validity mask.
#[derive(Debug, Clone)]
pub struct DepthObservation {
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    pub height: usize,
    pub width: usize,
    pub frame_index: usize,
}

impl DepthObservation {
    pub fn new(depth: Vec<f64>, mask: Vec<bool>, height: usize, width: usize, frame_index: usize) -> Self {
        assert_eq!(depth.len(), height * width);
        assert_eq!(mask.len(), height * width);
        DepthObservation {
            depth,
            mask,
            height,
            width,
            frame_index,
        }
    }
}

/// Per-pixel 3D coordinates in the first camera's frame.
#[derive(Debug, Clone)]
pub struct PointMap {
    pub points: Vec<Vec3>,
    pub height: usize,
    pub width: usize,
}

// ---------------------------------------------------------------------------
// Normalization and encoding
// ---------------------------------------------------------------------------

/// Left-compose every pose with the first pose's inverse, so the first output
/// is the identity and the rest are expressed relative to camera 1.
pub fn make_relative(poses: &[CameraPose]) -> Vec<CameraPose> {
    if poses.is_empty() {
        return Vec::new();
    }
    let inv1 = poses[0].inverse();
    let mut rel: Vec<CameraPose> = poses.iter().map(|g| g.compose(&inv1)).collect();
    rel[0] = CameraPose::IDENTITY; // exact, not within float residue
    rel
}

/// Anchor all poses to the first camera, then divide translations by the mean
/// distance of the remaining cameras to it. Q = 1 or a near-zero mean distance
/// falls back to scale 1.
pub fn normalize_poses(poses: &[CameraPose]) -> (Vec<CameraPose>, f64) {
    let mut rel = make_relative(poses);
    let q = rel.len();
    let mut s = 1.0;
    if q >= 2 {
        let mean: f64 = rel[1..]
            .iter()
            .map(|g| v_norm(g.translation))
            .sum::<f64>()
            / (q as f64 - 1.0);
        if mean >= 1e-9 {
            s = mean;
        }
    }
    for g in rel.iter_mut() {
        g.translation = v_scale(g.translation, 1.0 / s);
    }
    (rel, s)
}

/// Pose + intrinsics to the 9-value vector (q, t, fov).
pub fn encode_camera(k: &CameraIntrinsics, g: &CameraPose) -> Result<CameraParamVector, GeometryError> {
    let q = rotation_to_quaternion(&g.rotation)?;
    Ok(CameraParamVector {
        q,
        t: g.translation,
        fov: intrinsics_to_fov(k),
    })
}

/// Inverse of `encode_camera`; the principal point is centered.
pub fn decode_camera(v: &CameraParamVector, width: f64, height: f64) -> (CameraIntrinsics, CameraPose) {
    let rotation = quaternion_to_rotation(&v.q.normalized());
    (
        fov_to_intrinsics(v.fov.0, v.fov.1, width, height),
        CameraPose {
            rotation,
            translation: v.t,
        },
    )
}

/// Back-project each valid pixel through K and the camera's pose (expressed
/// relative to the first camera) into the first camera's frame. Invalid
/// pixels yield zero points.
pub fn unproject(obs: &DepthObservation, k: &CameraIntrinsics, g: &CameraPose) -> PointMap {
    let inv = g.inverse();
    let mut points = vec![[0.0; 3]; obs.depth.len()];
    for v in 0..obs.height {
        for u in 0..obs.width {
            let idx = v * obs.width + u;
            if !obs.mask[idx] {
                continue;
            }
            let d = obs.depth[idx];
            let ray = [
                (u as f64 + 0.5 - k.cx) / k.fx,
                (v as f64 + 0.5 - k.cy) / k.fy,
                1.0,
            ];
            points[idx] = inv.apply(v_scale(ray, d));
        }
    }
    PointMap {
        points,
        height: obs.height,
        width: obs.width,
    }
}

/// Ground-truth scene components normalized together for supervision.
#[derive(Debug, Clone)]
pub struct SceneGt {
    pub pmaps: Vec<PointMap>,
    pub masks: Vec<Vec<bool>>,
    pub depths: Vec<DepthObservation>,
    pub poses: Vec<CameraPose>,
}

/// Divide depths, point maps, and camera translations by the mean distance of
/// all valid points to the origin. After this the mean valid-point norm is 1.
pub fn normalize_scene_gt(gt: &SceneGt) -> Result<(SceneGt, f64), GeometryError> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (pm, mask) in gt.pmaps.iter().zip(gt.masks.iter()) {
        for (p, &m) in pm.points.iter().zip(mask.iter()) {
            if m {
                acc += v_norm(*p);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(GeometryError::EmptyScene);
    }
    let scale = acc / count as f64;
    let inv = 1.0 / scale;
    let mut out = gt.clone();
    for pm in out.pmaps.iter_mut() {
        for p in pm.points.iter_mut() {
            *p = v_scale(*p, inv);
        }
    }
    for d in out.depths.iter_mut() {
        for v in d.depth.iter_mut() {
            *v *= inv;
        }
    }
    for g in out.poses.iter_mut() {
        g.translation = v_scale(g.translation, inv);
    }
    Ok((out, scale))
}

/// Divide every listed depth map by the single mean over all valid pixels in
/// the batch; masks are unchanged.
pub fn normalize_depth_batch(
    obs: &[DepthObservation],
) -> Result<(Vec<DepthObservation>, f64), GeometryError> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for o in obs {
        for (d, &m) in o.depth.iter().zip(o.mask.iter()) {
            if m {
                acc += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(GeometryError::EmptyDepth);
    }
    let mean = acc / count as f64;
    let out = obs
        .iter()
        .map(|o| {
            let mut o = o.clone();
            for d in o.depth.iter_mut() {
                *d /= mean;
            }
            o
        })
        .collect();
    Ok((out, mean))
}
