//! Evaluation metrics: median-aligned depth error, pairwise relative pose
//! accuracy with an exact threshold-curve AUC, and point-cloud accuracy /
//! completeness / normal consistency with exact nearest-neighbor search.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{
    m_apply, m_mul, m_transpose, rotation_geodesic, v_cross, v_dot, v_norm, v_scale, v_sub,
    CameraPose, Vec3,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no valid pixels for depth metrics")]
    EmptyDepth,
    #[error("pose metrics need at least 2 cameras, got {0}")]
    TooFewCameras(usize),
    #[error("empty point set for reconstruction metrics")]
    EmptyPointSet,
}

/// Fixed-key JSON report for one evaluation run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub delta_125: f64,
    pub rra5: f64,
    pub rta5: f64,
    pub auc30: f64,
    pub acc_mean: f64,
    pub acc_med: f64,
    pub comp_mean: f64,
    pub comp_med: f64,
    pub nc_mean: f64,
    pub nc_med: f64,
}

impl MetricsReport {
    pub fn mean_of(reports: &[MetricsReport]) -> MetricsReport {
        let n = reports.len().max(1) as f64;
        let mut acc = MetricsReport {
            abs_rel: 0.0,
            delta_125: 0.0,
            rra5: 0.0,
            rta5: 0.0,
            auc30: 0.0,
            acc_mean: 0.0,
            acc_med: 0.0,
            comp_mean: 0.0,
            comp_med: 0.0,
            nc_mean: 0.0,
            nc_med: 0.0,
        };
        for r in reports {
            acc.abs_rel += r.abs_rel / n;
            acc.delta_125 += r.delta_125 / n;
            acc.rra5 += r.rra5 / n;
            acc.rta5 += r.rta5 / n;
            acc.auc30 += r.auc30 / n;
            acc.acc_mean += r.acc_mean / n;
            acc.acc_med += r.acc_med / n;
            acc.comp_mean += r.comp_mean / n;
            acc.comp_med += r.comp_med / n;
            acc.nc_mean += r.nc_mean / n;
            acc.nc_med += r.nc_med / n;
        }
        acc
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

// ---------------------------------------------------------------------------
// Depth
// ---------------------------------------------------------------------------

/// Median-ratio scale alignment, then Abs Rel and the δ<1.25 inlier fraction.
/// Only pixels that are masked valid with positive ground truth count.
pub fn depth_metrics(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<(f64, f64), MetricsError> {
    let mut p = Vec::new();
    let mut g = Vec::new();
    for i in 0..gt.len() {
        if mask[i] && gt[i] > 0.0 {
            p.push(pred[i]);
            g.push(gt[i]);
        }
    }
    if p.is_empty() {
        return Err(MetricsError::EmptyDepth);
    }
    let med_p = median(&p);
    let scale = if med_p > 0.0 { median(&g) / med_p } else { 1.0 };
    let mut abs_rel = 0.0;
    let mut inliers = 0usize;
    for (pv, gv) in p.iter().zip(g.iter()) {
        let aligned = pv * scale;
        abs_rel += (aligned - gv).abs() / gv;
        if aligned > 0.0 {
            let ratio = (aligned / gv).max(gv / aligned);
            if ratio < 1.25 {
                inliers += 1;
            }
        }
    }
    Ok((abs_rel / p.len() as f64, inliers as f64 / p.len() as f64))
}

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------

/// Per unordered camera pair: relative rotation error and relative
/// translation direction error, both in degrees. Pairs whose ground-truth or
/// predicted relative translation is (near) zero get translation error 0.
pub fn pairwise_pose_errors(
    pred: &[CameraPose],
    gt: &[CameraPose],
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let n = pred.len();
    if n < 2 || gt.len() != n {
        return Err(MetricsError::TooFewCameras(n.min(gt.len())));
    }
    let rel = |poses: &[CameraPose], i: usize, j: usize| -> ([[f64; 3]; 3], Vec3) {
        let r = m_mul(&poses[j].rotation, &m_transpose(&poses[i].rotation));
        let t = v_sub(poses[j].translation, m_apply(&r, poses[i].translation));
        (r, t)
    };
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let (rp, tp) = rel(pred, i, j);
            let (rg, tg) = rel(gt, i, j);
            let rot_err = rotation_geodesic(&rp, &rg).to_degrees();
            let (np, ng) = (v_norm(tp), v_norm(tg));
            let trans_err = if np < 1e-9 || ng < 1e-9 {
                0.0
            } else {
                let up = v_scale(tp, 1.0 / np);
                let ug = v_scale(tg, 1.0 / ng);
                v_norm(v_cross(up, ug)).atan2(v_dot(up, ug)).to_degrees()
            };
            out.push((rot_err, trans_err));
        }
    }
    Ok(out)
}

/// RRA@τ, RTA@τ, and the exact area under the min(RRA, RTA) threshold curve
/// up to `auc_max_deg`, computed in closed form from the per-pair maxima.
pub fn rra_rta_auc(errors: &[(f64, f64)], tau_deg: f64, auc_max_deg: f64) -> (f64, f64, f64) {
    let m = errors.len();
    if m == 0 {
        return (0.0, 0.0, 0.0);
    }
    let rra = errors.iter().filter(|(r, _)| *r < tau_deg).count() as f64 / m as f64;
    let rta = errors.iter().filter(|(_, t)| *t < tau_deg).count() as f64 / m as f64;
    // a(θ) = fraction of pairs with max(rot, trans) < θ is a step function;
    // each pair contributes max(0, T - e) to the integral over [0, T]
    let auc = errors
        .iter()
        .map(|(r, t)| (auc_max_deg - r.max(*t)).max(0.0))
        .sum::<f64>()
        / (m as f64 * auc_max_deg);
    (rra, rta, auc)
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

/// Exact nearest-neighbor k-d tree over 3D points.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    // flattened tree: sorted index array plus recursive median splits
    order: Vec<usize>,
}

struct KdFrame {
    lo: usize,
    hi: usize,
    axis: usize,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut stack = vec![KdFrame {
            lo: 0,
            hi: points.len(),
            axis: 0,
        }];
        while let Some(KdFrame { lo, hi, axis }) = stack.pop() {
            if hi - lo <= 1 {
                continue;
            }
            let mid = (lo + hi) / 2;
            order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                points[a][axis]
                    .partial_cmp(&points[b][axis])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let next = (axis + 1) % 3;
            stack.push(KdFrame { lo, hi: mid, axis: next });
            stack.push(KdFrame {
                lo: mid + 1,
                hi,
                axis: next,
            });
        }
        KdTree { points, order }
    }

    /// Index and squared distance of the nearest point to `q`.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: Vec3, lo: usize, hi: usize, axis: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let d2 = dist2(q, self.points[idx]);
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let delta = q[axis] - self.points[idx][axis];
        let next = (axis + 1) % 3;
        let (first, second) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, first.0, first.1, next, best);
        if delta * delta <= best.1 {
            self.search(q, second.0, second.1, next, best);
        }
    }

    /// Indices of the k nearest points to `q`, excluding `exclude`.
    pub fn knn(&self, q: Vec3, k: usize, exclude: usize) -> Vec<usize> {
        let mut found: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_search(q, 0, self.order.len(), 0, k, exclude, &mut found);
        found.into_iter().map(|(_, i)| i).collect()
    }

    fn knn_search(
        &self,
        q: Vec3,
        lo: usize,
        hi: usize,
        axis: usize,
        k: usize,
        exclude: usize,
        found: &mut Vec<(f64, usize)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        if idx != exclude {
            let d2 = dist2(q, self.points[idx]);
            let pos = found
                .binary_search_by(|probe| probe.partial_cmp(&(d2, idx)).unwrap())
                .unwrap_or_else(|p| p);
            if pos < k {
                found.insert(pos, (d2, idx));
                found.truncate(k);
            }
        }
        let delta = q[axis] - self.points[idx][axis];
        let next = (axis + 1) % 3;
        let (first, second) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_search(q, first.0, first.1, next, k, exclude, found);
        let worst = if found.len() < k {
            f64::INFINITY
        } else {
            found[found.len() - 1].0
        };
        if delta * delta <= worst {
            self.knn_search(q, second.0, second.1, next, k, exclude, found);
        }
    }
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = v_sub(a, b);
    v_dot(d, d)
}

/// Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix
/// (cyclic Jacobi sweeps).
fn smallest_eigenvector(m: &[[f64; 3]; 3]) -> Vec3 {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..30 {
        let mut off = 0.0;
        for p in 0..3 {
            for q in (p + 1)..3 {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..3 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..3 {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..3 {
                    let (apj, aqj) = (a[p][j], a[q][j]);
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for i in 0..3 {
                    let (vip, viq) = (v[i][p], v[i][q]);
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut k = 0;
    for i in 1..3 {
        if a[i][i] < a[k][k] {
            k = i;
        }
    }
    [v[0][k], v[1][k], v[2][k]]
}

/// Surface normals via k-NN plane fits (smallest covariance eigenvector).
fn estimate_normals(points: &[Vec3], tree: &KdTree, k: usize) -> Vec<Vec3> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if k < 2 {
                return [0.0, 0.0, 1.0];
            }
            let nbrs = tree.knn(p, k, i);
            let mut centroid = p;
            for &j in &nbrs {
                centroid = [
                    centroid[0] + points[j][0],
                    centroid[1] + points[j][1],
                    centroid[2] + points[j][2],
                ];
            }
            let inv = 1.0 / (nbrs.len() + 1) as f64;
            centroid = v_scale(centroid, inv);
            let mut cov = [[0.0; 3]; 3];
            let mut add = |q: Vec3| {
                let d = v_sub(q, centroid);
                for r in 0..3 {
                    for c in 0..3 {
                        cov[r][c] += d[r] * d[c];
                    }
                }
            };
            add(p);
            for &j in &nbrs {
                add(points[j]);
            }
            let normal = smallest_eigenvector(&cov);
            let len = v_norm(normal);
            if len > 0.0 {
                v_scale(normal, 1.0 / len)
            } else {
                [0.0, 0.0, 1.0]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ReconStats {
    pub acc_mean: f64,
    pub acc_med: f64,
    pub comp_mean: f64,
    pub comp_med: f64,
    pub nc_mean: f64,
    pub nc_med: f64,
}

/// Accuracy (pred to nearest gt), completeness (gt to nearest pred), and
/// normal consistency over matched nearest pairs in both directions. The
/// prediction cloud is median-norm scale-aligned to the ground truth first.
pub fn reconstruction_metrics(
    pred: &[Vec3],
    gt: &[Vec3],
    k_normals: usize,
) -> Result<ReconStats, MetricsError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    let pred_norms: Vec<f64> = pred.iter().map(|p| v_norm(*p)).collect();
    let gt_norms: Vec<f64> = gt.iter().map(|p| v_norm(*p)).collect();
    let med_pred = median(&pred_norms);
    let scale = if med_pred > 0.0 {
        median(&gt_norms) / med_pred
    } else {
        1.0
    };
    let pred: Vec<Vec3> = pred.iter().map(|p| v_scale(*p, scale)).collect();

    let gt_tree = KdTree::build(gt);
    let pred_tree = KdTree::build(&pred);
    let pred_normals = estimate_normals(&pred, &pred_tree, k_normals);
    let gt_normals = estimate_normals(gt, &gt_tree, k_normals);

    let mut acc = Vec::with_capacity(pred.len());
    let mut nc = Vec::with_capacity(pred.len() + gt.len());
    for (i, p) in pred.iter().enumerate() {
        let (j, d2) = gt_tree.nearest(*p);
        acc.push(d2.sqrt());
        nc.push(v_dot(pred_normals[i], gt_normals[j]).abs());
    }
    let mut comp = Vec::with_capacity(gt.len());
    for (j, g) in gt.iter().enumerate() {
        let (i, d2) = pred_tree.nearest(*g);
        comp.push(d2.sqrt());
        nc.push(v_dot(gt_normals[j], pred_normals[i]).abs());
    }
    Ok(ReconStats {
        acc_mean: mean(&acc),
        acc_med: median(&acc),
        comp_mean: mean(&comp),
        comp_med: median(&comp),
        nc_mean: mean(&nc),
        nc_med: median(&nc),
    })
}
