//! Dense n-dimensional tensors with reverse-mode differentiation.
//!
//! The op set is closed: matmul, elementwise add/sub/mul/div, exp, log, abs,
//! relu, gelu, softmax, layernorm, patchify_conv, concat, narrow, reshape,
//! transpose, sum, mean. Everything else is composed from these. Reductions
//! run in sequential raster order so results are bit-reproducible per seed.
//!
//! Gradients propagate through a backward graph recorded on the tensors
//! themselves; `backward` accumulates into every reachable tensor that
//! tracks gradients, and repeated calls keep accumulating until `zero_grad`.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::dtype::Real;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule: given (parents, output data, output grad), return one
/// gradient buffer per parent (None for parents that do not need one).
type BackwardFn<T> = Box<dyn Fn(&[Tensor<T>], &[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Real> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// Dense tensor handle. Cloning is cheap (shared storage).
pub struct Tensor<T: Real> {
    inner: Arc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.inner.id, self.inner.shape)
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn construct(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        assert_eq!(
            numel_of(&shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Constant (non-tracked) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        Self::construct(shape.to_vec(), data, false, None)
    }

    /// Leaf tensor that accumulates gradients.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Self {
        Self::construct(shape.to_vec(), data, true, None)
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::ZERO; numel_of(shape)])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; numel_of(shape)])
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[1], vec![v])
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.read().unwrap().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.read().unwrap().iter().map(|v| v.to_f64()).collect()
    }

    /// Read access without cloning.
    pub fn map_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.inner.data.read().unwrap())
    }

    /// Mutable access to the raw values (optimizer steps, test setup).
    pub fn with_data_mut(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.data.write().unwrap());
    }

    pub fn get(&self, idx: usize) -> T {
        self.inner.data.read().unwrap()[idx]
    }

    pub fn set(&self, idx: usize, v: T) {
        self.inner.data.write().unwrap()[idx] = v;
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.inner.data.read().unwrap();
        assert_eq!(d.len(), 1, "item() on non-scalar tensor");
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(buf) => add_into(buf, g),
            None => *slot = Some(g.to_vec()),
        }
    }

    fn unary(
        &self,
        shape: Vec<usize>,
        data: Vec<T>,
        backward: BackwardFn<T>,
    ) -> Tensor<T> {
        if self.requires_grad() {
            Tensor::construct(
                shape,
                data,
                true,
                Some(Node {
                    parents: vec![self.clone()],
                    backward,
                }),
            )
        } else {
            Tensor::construct(shape, data, false, None)
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *d + *s;
    }
}

fn make_output<T: Real>(
    shape: Vec<usize>,
    data: Vec<T>,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
) -> Tensor<T> {
    if parents.iter().any(|p| p.requires_grad()) {
        Tensor::construct(shape, data, true, Some(Node { parents, backward }))
    } else {
        Tensor::construct(shape, data, false, None)
    }
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Per-output-axis element stride into a right-aligned input, with 0 on
/// broadcast axes.
fn bcast_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..in_shape.len()).rev() {
        strides[offset + i] = if in_shape[i] == 1 { 0 } else { acc };
        acc *= in_shape[i];
    }
    strides
}

fn row_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Walks flat indices of `out_shape` while tracking a strided input offset.
struct BcastIter {
    dims: Vec<usize>,
    strides: Vec<usize>,
    coords: Vec<usize>,
    offset: usize,
    done: bool,
}

impl BcastIter {
    fn new(out_shape: &[usize], strides: Vec<usize>) -> Self {
        BcastIter {
            dims: out_shape.to_vec(),
            strides,
            coords: vec![0; out_shape.len()],
            offset: 0,
            done: numel_of(out_shape) == 0,
        }
    }

    #[inline]
    fn advance(&mut self) {
        for ax in (0..self.dims.len()).rev() {
            self.coords[ax] += 1;
            self.offset += self.strides[ax];
            if self.coords[ax] < self.dims[ax] {
                return;
            }
            self.offset -= self.strides[ax] * self.dims[ax];
            self.coords[ax] = 0;
        }
        self.done = true;
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

/// `d_out/d_a` and `d_out/d_b` coefficients evaluated per element.
fn binary_op<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: fn(T, T) -> T,
    df: fn(T, T) -> (T, T),
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape(), op)?;
    let sa = bcast_strides(a.shape(), &out_shape);
    let sb = bcast_strides(b.shape(), &out_shape);
    let n = numel_of(&out_shape);
    let mut data = Vec::with_capacity(n);
    {
        let da = a.inner.data.read().unwrap();
        let db = b.inner.data.read().unwrap();
        let mut ia = BcastIter::new(&out_shape, sa.clone());
        let mut ib = BcastIter::new(&out_shape, sb.clone());
        for _ in 0..n {
            data.push(f(da[ia.offset], db[ib.offset]));
            ia.advance();
            ib.advance();
        }
    }
    let out_shape_c = out_shape.clone();
    let backward: BackwardFn<T> = Box::new(move |parents, _out, grad| {
        let a = &parents[0];
        let b = &parents[1];
        let da = a.inner.data.read().unwrap();
        let db = b.inner.data.read().unwrap();
        let mut ga = if a.requires_grad() {
            Some(vec![T::ZERO; da.len()])
        } else {
            None
        };
        let mut gb = if b.requires_grad() {
            Some(vec![T::ZERO; db.len()])
        } else {
            None
        };
        let mut ia = BcastIter::new(&out_shape_c, sa.clone());
        let mut ib = BcastIter::new(&out_shape_c, sb.clone());
        for &g in grad.iter() {
            let (ca, cb) = df(da[ia.offset], db[ib.offset]);
            if let Some(ga) = ga.as_mut() {
                ga[ia.offset] = ga[ia.offset] + ca * g;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib.offset] = gb[ib.offset] + cb * g;
            }
            ia.advance();
            ib.advance();
        }
        vec![ga, gb]
    });
    Ok(make_output(out_shape, data, vec![a.clone(), b.clone()], backward))
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(self, other, "add", |x, y| x + y, |_, _| (T::ONE, T::ONE))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(self, other, "sub", |x, y| x - y, |_, _| (T::ONE, T::ZERO - T::ONE))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(self, other, "mul", |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(
            self,
            other,
            "div",
            |x, y| x / y,
            |x, y| (T::ONE / y, T::ZERO - x / (y * y)),
        )
    }

    pub fn scale(&self, v: T) -> Result<Tensor<T>> {
        self.mul(&Tensor::scalar(v))
    }

    pub fn add_scalar(&self, v: T) -> Result<Tensor<T>> {
        self.add(&Tensor::scalar(v))
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.scale(T::ZERO - T::ONE)
    }

    pub fn exp(&self) -> Tensor<T> {
        let data: Vec<T> = self.map_data(|d| d.iter().map(|&x| x.exp()).collect());
        let shape = self.shape().to_vec();
        self.unary(
            shape,
            data,
            Box::new(|parents, out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                vec![Some(
                    out.iter().zip(grad.iter()).map(|(&y, &g)| y * g).collect(),
                )]
            }),
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        let data: Vec<T> = self.map_data(|d| d.iter().map(|&x| x.ln()).collect());
        let shape = self.shape().to_vec();
        self.unary(
            shape,
            data,
            Box::new(|parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                let x = parents[0].inner.data.read().unwrap();
                vec![Some(
                    x.iter().zip(grad.iter()).map(|(&x, &g)| g / x).collect(),
                )]
            }),
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        let data: Vec<T> = self.map_data(|d| d.iter().map(|&x| x.abs()).collect());
        let shape = self.shape().to_vec();
        self.unary(
            shape,
            data,
            Box::new(|parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                let x = parents[0].inner.data.read().unwrap();
                vec![Some(
                    x.iter()
                        .zip(grad.iter())
                        .map(|(&x, &g)| {
                            if x > T::ZERO {
                                g
                            } else if x < T::ZERO {
                                T::ZERO - g
                            } else {
                                T::ZERO
                            }
                        })
                        .collect(),
                )]
            }),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self.map_data(|d| {
            d.iter()
                .map(|&x| if x > T::ZERO { x } else { T::ZERO })
                .collect()
        });
        let shape = self.shape().to_vec();
        self.unary(
            shape,
            data,
            Box::new(|parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                let x = parents[0].inner.data.read().unwrap();
                vec![Some(
                    x.iter()
                        .zip(grad.iter())
                        .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
                        .collect(),
                )]
            }),
        )
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&self) -> Tensor<T> {
        let data: Vec<T> = self.map_data(|d| d.iter().map(|&x| gelu_fwd(x)).collect());
        let shape = self.shape().to_vec();
        self.unary(
            shape,
            data,
            Box::new(|parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                let x = parents[0].inner.data.read().unwrap();
                vec![Some(
                    x.iter()
                        .zip(grad.iter())
                        .map(|(&x, &g)| gelu_dfdx(x) * g)
                        .collect(),
                )]
            }),
        )
    }

    /// Numerically stable softplus: relu(x) + log(1 + exp(-|x|)).
    pub fn softplus(&self) -> Result<Tensor<T>> {
        let pos = self.relu();
        let small = self.abs().neg()?.exp().add_scalar(T::ONE)?.ln();
        pos.add(&small)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::ONE + u.tanh())
}

fn gelu_dfdx<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::ONE - t * t;
    half * (T::ONE + t) + half * x * sech2 * c * (T::ONE + three * a * x * x)
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

impl<T: Real> Tensor<T> {
    /// Batched matrix product with broadcasting over leading batch dims.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a_shape.to_vec(),
                rhs: b_shape.to_vec(),
            });
        }
        let (m, k) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (k2, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a_shape.to_vec(),
                rhs: b_shape.to_vec(),
            });
        }
        let a_batch = &a_shape[..a_shape.len() - 2];
        let b_batch = &b_shape[..b_shape.len() - 2];
        let batch = broadcast_shape(a_batch, b_batch, "matmul")?;
        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(n);

        let nb = numel_of(&batch);
        let sa = bcast_strides(a_batch, &batch);
        let sb = bcast_strides(b_batch, &batch);
        // convert per-axis element strides into per-axis matrix strides
        let a_mat = m * k;
        let b_mat = k2 * n;

        let mut data = vec![T::ZERO; nb * m * n];
        {
            let da = self.inner.data.read().unwrap();
            let db = other.inner.data.read().unwrap();
            let mut ia = BcastIter::new(&batch, sa.clone());
            let mut ib = BcastIter::new(&batch, sb.clone());
            for bi in 0..nb {
                let ao = ia.offset * a_mat;
                let bo = ib.offset * b_mat;
                let co = bi * m * n;
                matmul_block(&da[ao..ao + a_mat], &db[bo..bo + b_mat], &mut data[co..co + m * n], m, k, n);
                ia.advance();
                ib.advance();
            }
        }

        let batch_c = batch.clone();
        let backward: BackwardFn<T> = Box::new(move |parents, _out, grad| {
            let a = &parents[0];
            let b = &parents[1];
            let da = a.inner.data.read().unwrap();
            let db = b.inner.data.read().unwrap();
            let mut ga = if a.requires_grad() {
                Some(vec![T::ZERO; da.len()])
            } else {
                None
            };
            let mut gb = if b.requires_grad() {
                Some(vec![T::ZERO; db.len()])
            } else {
                None
            };
            let mut ia = BcastIter::new(&batch_c, sa.clone());
            let mut ib = BcastIter::new(&batch_c, sb.clone());
            let nb = numel_of(&batch_c);
            for bi in 0..nb {
                let ao = ia.offset * a_mat;
                let bo = ib.offset * b_mat;
                let go = bi * m * n;
                let gblock = &grad[go..go + m * n];
                if let Some(ga) = ga.as_mut() {
                    // dA = dC · Bᵀ
                    let bblock = &db[bo..bo + b_mat];
                    let out = &mut ga[ao..ao + a_mat];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gblock[i * n + j];
                            for p in 0..k {
                                out[i * k + p] = out[i * k + p] + g * bblock[p * n + j];
                            }
                        }
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    // dB = Aᵀ · dC
                    let ablock = &da[ao..ao + a_mat];
                    let out = &mut gb[bo..bo + b_mat];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ablock[i * k + p];
                            for j in 0..n {
                                out[p * n + j] = out[p * n + j] + av * gblock[i * n + j];
                            }
                        }
                    }
                }
                ia.advance();
                ib.advance();
            }
            vec![ga, gb]
        });
        Ok(make_output(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            backward,
        ))
    }
}

fn matmul_block<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + av * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax / layernorm
// ---------------------------------------------------------------------------

fn lane_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let lane = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, lane, inner)
}

impl<T: Real> Tensor<T> {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: self.rank(),
            });
        }
        let shape = self.shape().to_vec();
        let (outer, lane, inner) = lane_geometry(&shape, axis);
        let mut data = vec![T::ZERO; self.numel()];
        {
            let x = self.inner.data.read().unwrap();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * lane * inner + i;
                    let mut mx = x[base];
                    for l in 1..lane {
                        let v = x[base + l * inner];
                        if v > mx {
                            mx = v;
                        }
                    }
                    let mut sum = T::ZERO;
                    for l in 0..lane {
                        let e = (x[base + l * inner] - mx).exp();
                        data[base + l * inner] = e;
                        sum = sum + e;
                    }
                    for l in 0..lane {
                        data[base + l * inner] = data[base + l * inner] / sum;
                    }
                }
            }
        }
        Ok(self.unary(
            shape,
            data,
            Box::new(move |parents, out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                let mut gx = vec![T::ZERO; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * lane * inner + i;
                        let mut dot = T::ZERO;
                        for l in 0..lane {
                            let idx = base + l * inner;
                            dot = dot + grad[idx] * out[idx];
                        }
                        for l in 0..lane {
                            let idx = base + l * inner;
                            gx[idx] = out[idx] * (grad[idx] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Layer normalization over the last axis with affine gain/bias.
    pub fn layernorm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let rank = self.rank();
        if rank == 0 {
            return Err(TensorError::Invalid {
                op: "layernorm",
                msg: "rank-0 input".into(),
            });
        }
        let n = self.shape()[rank - 1];
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let rows = self.numel() / n;
        let epsv = T::from_f64(eps);
        let mut data = vec![T::ZERO; self.numel()];
        {
            let x = self.inner.data.read().unwrap();
            let g = gain.inner.data.read().unwrap();
            let b = bias.inner.data.read().unwrap();
            let inv_n = T::ONE / T::from_f64(n as f64);
            for r in 0..rows {
                let row = &x[r * n..(r + 1) * n];
                let mut mean = T::ZERO;
                for &v in row {
                    mean = mean + v;
                }
                mean = mean * inv_n;
                let mut var = T::ZERO;
                for &v in row {
                    let d = v - mean;
                    var = var + d * d;
                }
                var = var * inv_n;
                let inv_std = T::ONE / (var + epsv).sqrt();
                for (j, &v) in row.iter().enumerate() {
                    data[r * n + j] = (v - mean) * inv_std * g[j] + b[j];
                }
            }
        }
        let backward: BackwardFn<T> = Box::new(move |parents, _out, grad| {
            let x = parents[0].inner.data.read().unwrap();
            let g = parents[1].inner.data.read().unwrap();
            let inv_n = T::ONE / T::from_f64(n as f64);
            let mut gx = if parents[0].requires_grad() {
                Some(vec![T::ZERO; x.len()])
            } else {
                None
            };
            let mut gg = if parents[1].requires_grad() {
                Some(vec![T::ZERO; n])
            } else {
                None
            };
            let mut gb = if parents[2].requires_grad() {
                Some(vec![T::ZERO; n])
            } else {
                None
            };
            let mut xhat = vec![T::ZERO; n];
            for r in 0..rows {
                let row = &x[r * n..(r + 1) * n];
                let grow = &grad[r * n..(r + 1) * n];
                let mut mean = T::ZERO;
                for &v in row {
                    mean = mean + v;
                }
                mean = mean * inv_n;
                let mut var = T::ZERO;
                for &v in row {
                    let d = v - mean;
                    var = var + d * d;
                }
                var = var * inv_n;
                let inv_std = T::ONE / (var + epsv).sqrt();
                for j in 0..n {
                    xhat[j] = (row[j] - mean) * inv_std;
                }
                if let Some(gg) = gg.as_mut() {
                    for j in 0..n {
                        gg[j] = gg[j] + grow[j] * xhat[j];
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    for j in 0..n {
                        gb[j] = gb[j] + grow[j];
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let mut m1 = T::ZERO;
                    let mut m2 = T::ZERO;
                    for j in 0..n {
                        let w = g[j] * grow[j];
                        m1 = m1 + w;
                        m2 = m2 + w * xhat[j];
                    }
                    m1 = m1 * inv_n;
                    m2 = m2 * inv_n;
                    for j in 0..n {
                        let w = g[j] * grow[j];
                        gx[r * n + j] = (w - m1 - xhat[j] * m2) * inv_std;
                    }
                }
            }
            vec![gx, gg, gb]
        });
        Ok(make_output(
            self.shape().to_vec(),
            data,
            vec![self.clone(), gain.clone(), bias.clone()],
            backward,
        ))
    }
}

// ---------------------------------------------------------------------------
// Patch embedding (non-overlapping convolution)
// ---------------------------------------------------------------------------

/// Non-overlapping patch embedding of a `[C,H,W]` input: each output row is a
/// learned linear map of one C·patch·patch block plus bias, rows in raster
/// order. Equivalent to reshape-then-matmul; no implicit padding.
pub fn patchify_conv<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    patch: usize,
) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(TensorError::Invalid {
            op: "patchify_conv",
            msg: format!("expected [C,H,W] input, got {:?}", x.shape()),
        });
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(TensorError::Invalid {
            op: "patchify_conv",
            msg: format!("image {}x{} not divisible by patch {}", h, w, patch),
        });
    }
    let block = c * patch * patch;
    let dim = weight.shape()[0];
    if weight.shape() != [dim, block] || bias.shape() != [dim] {
        return Err(TensorError::ShapeMismatch {
            op: "patchify_conv",
            lhs: weight.shape().to_vec(),
            rhs: vec![dim, block],
        });
    }
    let (ph, pw) = (h / patch, w / patch);
    let tokens = ph * pw;
    let gather = move |xd: &[T], t: usize, buf: &mut [T]| {
        let (py, px) = (t / pw, t % pw);
        let mut i = 0;
        for ci in 0..c {
            for dy in 0..patch {
                let y = py * patch + dy;
                let base = ci * h * w + y * w + px * patch;
                for dx in 0..patch {
                    buf[i] = xd[base + dx];
                    i += 1;
                }
            }
        }
    };

    let mut data = vec![T::ZERO; tokens * dim];
    {
        let xd = x.inner.data.read().unwrap();
        let wd = weight.inner.data.read().unwrap();
        let bd = bias.inner.data.read().unwrap();
        let mut buf = vec![T::ZERO; block];
        for t in 0..tokens {
            gather(&xd, t, &mut buf);
            for o in 0..dim {
                let wrow = &wd[o * block..(o + 1) * block];
                let mut acc = bd[o];
                for (bv, wv) in buf.iter().zip(wrow.iter()) {
                    acc = acc + *bv * *wv;
                }
                data[t * dim + o] = acc;
            }
        }
    }

    let backward: BackwardFn<T> = Box::new(move |parents, _out, grad| {
        let xd = parents[0].inner.data.read().unwrap();
        let wd = parents[1].inner.data.read().unwrap();
        let mut gx = if parents[0].requires_grad() {
            Some(vec![T::ZERO; xd.len()])
        } else {
            None
        };
        let mut gw = if parents[1].requires_grad() {
            Some(vec![T::ZERO; wd.len()])
        } else {
            None
        };
        let mut gb = if parents[2].requires_grad() {
            Some(vec![T::ZERO; dim])
        } else {
            None
        };
        let mut buf = vec![T::ZERO; block];
        for t in 0..tokens {
            gather(&xd, t, &mut buf);
            let grow = &grad[t * dim..(t + 1) * dim];
            if let Some(gb) = gb.as_mut() {
                for o in 0..dim {
                    gb[o] = gb[o] + grow[o];
                }
            }
            if let Some(gw) = gw.as_mut() {
                for o in 0..dim {
                    let g = grow[o];
                    let wrow = &mut gw[o * block..(o + 1) * block];
                    for (wv, bv) in wrow.iter_mut().zip(buf.iter()) {
                        *wv = *wv + g * *bv;
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                let (py, px) = (t / pw, t % pw);
                for o in 0..dim {
                    let g = grow[o];
                    if g == T::ZERO {
                        continue;
                    }
                    let wrow = &wd[o * block..(o + 1) * block];
                    let mut i = 0;
                    for ci in 0..c {
                        for dy in 0..patch {
                            let y = py * patch + dy;
                            let base = ci * h * w + y * w + px * patch;
                            for dx in 0..patch {
                                gx[base + dx] = gx[base + dx] + g * wrow[i];
                                i += 1;
                            }
                        }
                    }
                }
            }
        }
        vec![gx, gw, gb]
    });
    Ok(make_output(
        vec![tokens, dim],
        data,
        vec![x.clone(), weight.clone(), bias.clone()],
        backward,
    ))
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.to_vec();
        Ok(self.unary(
            shape.to_vec(),
            data,
            Box::new(|parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                vec![Some(grad.to_vec())]
            }),
        ))
    }

    /// Swap two axes (materialized copy).
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if a >= rank || b >= rank {
            return Err(TensorError::AxisOutOfRange {
                op: "transpose",
                axis: a.max(b),
                rank,
            });
        }
        let in_shape = self.shape().to_vec();
        let mut out_shape = in_shape.clone();
        out_shape.swap(a, b);
        let data = permuted_copy(&self.inner.data.read().unwrap(), &in_shape, a, b);
        Ok(self.unary(
            out_shape.clone(),
            data,
            Box::new(move |parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                vec![Some(permuted_copy(grad, &out_shape, a, b))]
            }),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange {
                op: "narrow",
                axis,
                rank,
            });
        }
        let dim = self.shape()[axis];
        if start + len > dim {
            return Err(TensorError::Invalid {
                op: "narrow",
                msg: format!("slice {}..{} out of bounds for axis size {}", start, start + len, dim),
            });
        }
        let shape = self.shape().to_vec();
        let (outer, _, inner) = lane_geometry(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let x = self.inner.data.read().unwrap();
            for o in 0..outer {
                let base = o * dim * inner + start * inner;
                data.extend_from_slice(&x[base..base + len * inner]);
            }
        }
        Ok(self.unary(
            out_shape,
            data,
            Box::new(move |parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                let mut gx = vec![T::ZERO; outer * dim * inner];
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    let src = o * len * inner;
                    add_into(&mut gx[dst..dst + len * inner], &grad[src..src + len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let mut acc = T::ZERO;
        self.map_data(|d| {
            for &v in d {
                acc = acc + v;
            }
        });
        let n = self.numel();
        self.unary(
            vec![1],
            vec![acc],
            Box::new(move |parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                vec![Some(vec![grad[0]; n])]
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::ONE / T::from_f64(n as f64);
        let mut acc = T::ZERO;
        self.map_data(|d| {
            for &v in d {
                acc = acc + v;
            }
        });
        self.unary(
            vec![1],
            vec![acc * inv],
            Box::new(move |parents, _out, grad| {
                if !parents[0].requires_grad() {
                    return vec![None];
                }
                vec![Some(vec![grad[0] * inv; n])]
            }),
        )
    }
}

fn permuted_copy<T: Real>(data: &[T], in_shape: &[usize], a: usize, b: usize) -> Vec<T> {
    let mut out_shape = in_shape.to_vec();
    out_shape.swap(a, b);
    let in_strides = row_strides(in_shape);
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(a, b);
    let n = data.len();
    let mut out = vec![data[0]; n];
    if n == 0 {
        return out;
    }
    // walk output raster order, tracking the permuted input offset
    let mut coords = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for slot in out.iter_mut() {
        *slot = data[off];
        for ax in (0..out_shape.len()).rev() {
            coords[ax] += 1;
            off += perm_strides[ax];
            if coords[ax] < out_shape[ax] {
                break;
            }
            off -= perm_strides[ax] * out_shape[ax];
            coords[ax] = 0;
        }
    }
    out
}

/// Concatenate along `axis`. All other dims must agree.
pub fn concat<T: Real>(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if tensors.is_empty() {
        return Err(TensorError::Invalid {
            op: "concat",
            msg: "empty input list".into(),
        });
    }
    let rank = tensors[0].rank();
    if axis >= rank {
        return Err(TensorError::AxisOutOfRange {
            op: "concat",
            axis,
            rank,
        });
    }
    let mut out_shape = tensors[0].shape().to_vec();
    let mut total = 0usize;
    for t in tensors {
        if t.rank() != rank {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: tensors[0].shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        for (ax, (&d0, &d1)) in out_shape.iter().zip(t.shape().iter()).enumerate() {
            if ax != axis && d0 != d1 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: tensors[0].shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        total += t.shape()[axis];
    }
    out_shape[axis] = total;
    let (outer, _, inner) = lane_geometry(&out_shape, axis);
    let mut data = vec![T::ZERO; numel_of(&out_shape)];
    let mut lens = Vec::with_capacity(tensors.len());
    {
        let mut offset = 0usize;
        for t in tensors {
            let len = t.shape()[axis];
            lens.push(len);
            let x = t.inner.data.read().unwrap();
            for o in 0..outer {
                let src = o * len * inner;
                let dst = o * total * inner + offset * inner;
                data[dst..dst + len * inner].copy_from_slice(&x[src..src + len * inner]);
            }
            offset += len;
        }
    }
    let backward: BackwardFn<T> = Box::new(move |parents, _out, grad| {
        let mut result = Vec::with_capacity(parents.len());
        let mut offset = 0usize;
        for (p, &len) in parents.iter().zip(lens.iter()) {
            if p.requires_grad() {
                let mut gp = vec![T::ZERO; outer * len * inner];
                for o in 0..outer {
                    let src = o * total * inner + offset * inner;
                    let dst = o * len * inner;
                    gp[dst..dst + len * inner].copy_from_slice(&grad[src..src + len * inner]);
                }
                result.push(Some(gp));
            } else {
                result.push(None);
            }
            offset += len;
        }
        result
    });
    Ok(make_output(out_shape, data, tensors.to_vec(), backward))
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Gradients from this call are added
/// to whatever each tracked tensor already holds.
pub fn backward<T: Real>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape().to_vec(),
        });
    }
    let order = topo_order(loss);
    let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
    pending.insert(loss.id(), vec![T::ONE]);
    for t in order.iter().rev() {
        let g = match pending.remove(&t.id()) {
            Some(g) => g,
            None => continue,
        };
        if t.requires_grad() {
            t.accumulate_grad(&g);
        }
        if let Some(node) = &t.inner.node {
            let contribs = {
                let out = t.inner.data.read().unwrap();
                (node.backward)(&node.parents, &out, &g)
            };
            for (p, c) in node.parents.iter().zip(contribs) {
                if let Some(c) = c {
                    match pending.get_mut(&p.id()) {
                        Some(buf) => add_into(buf, &c),
                        None => {
                            pending.insert(p.id(), c);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn topo_order<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // iterative post-order DFS
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((t, child)) = stack.pop() {
        let nparents = t.inner.node.as_ref().map_or(0, |n| n.parents.len());
        if child < nparents {
            stack.push((t.clone(), child + 1));
            let p = t.inner.node.as_ref().unwrap().parents[child].clone();
            if !visited.contains(&p.id()) && p.requires_grad() {
                visited.insert(p.id());
                stack.push((p, 0));
            }
        } else {
            order.push(t);
        }
    }
    order
}

// ---------------------------------------------------------------------------
// Parameter
// ---------------------------------------------------------------------------

/// Named leaf tensor with gradient tracking. Names encode the module path and
/// must be unique within a model; checkpoints round-trip on them.
#[derive(Clone)]
pub struct Parameter<T: Real> {
    name: String,
    tensor: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Self {
        Parameter {
            name: name.into(),
            tensor: Tensor::leaf(shape, data),
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, shape, vec![T::ZERO; numel_of(shape)])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.tensor.grad()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad();
    }
}

impl<T: Real> std::fmt::Debug for Parameter<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Parameter({}, {:?})", self.name, self.tensor.shape())
    }
}
