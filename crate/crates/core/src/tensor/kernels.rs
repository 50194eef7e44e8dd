//! Raw forward/backward kernels over flat row-major buffers.

use super::{Scalar, Tensor, TensorError, TensorResult};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Batch layout of a (possibly broadcast) batched matrix product.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Element offset of each output batch's `a` and `b` operand.
    pub a_offsets: Vec<usize>,
    pub b_offsets: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> TensorResult<Self> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let a_batch = &a[..a.len() - 2];
        let b_batch = &b[..b.len() - 2];
        let rank = a_batch.len().max(b_batch.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a_batch), pad(b_batch));
        let mut batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x == y || y == 1 {
                batch.push(x);
            } else if x == 1 {
                batch.push(y);
            } else {
                return Err(mismatch());
            }
        }
        let count: usize = batch.iter().product();
        let strides = |p: &[usize], mat: usize| {
            // Stride 0 on broadcast axes.
            let mut s = vec![0; rank];
            let mut acc = mat;
            for i in (0..rank).rev() {
                s[i] = if p[i] == 1 { 0 } else { acc };
                acc *= p[i];
            }
            s
        };
        let (sa, sb) = (strides(&pa, m * k), strides(&pb, k * n));
        let mut a_offsets = Vec::with_capacity(count);
        let mut b_offsets = Vec::with_capacity(count);
        let mut idx = vec![0; rank];
        for _ in 0..count {
            a_offsets.push(idx.iter().zip(&sa).map(|(i, s)| i * s).sum());
            b_offsets.push(idx.iter().zip(&sb).map(|(i, s)| i * s).sum());
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < batch[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let mut out_shape = batch;
        out_shape.push(m);
        out_shape.push(n);
        Ok(Self {
            out_shape,
            m,
            k,
            n,
            a_offsets,
            b_offsets,
        })
    }

    pub fn batches(&self) -> usize {
        self.a_offsets.len()
    }

    pub fn macs(&self) -> u64 {
        (self.batches() * self.m * self.k * self.n) as u64
    }

    /// `a` batches laid out back to back and `b` shared by all of them: the
    /// whole product collapses into one tall GEMM.
    fn folds_into_single_gemm(&self) -> bool {
        let mk = self.m * self.k;
        self.b_offsets.iter().all(|&o| o == 0)
            && self.a_offsets.iter().enumerate().all(|(i, &o)| o == i * mk)
    }
}

pub(crate) fn matmul_forward<T: Scalar>(plan: &MatmulPlan, a: &[T], b: &[T]) -> Vec<T> {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![T::ZERO; plan.batches() * m * n];
    if out.is_empty() {
        return out;
    }
    if plan.folds_into_single_gemm() {
        let rows = plan.batches() * m;
        // SAFETY: buffers sized rows*k, k*n, rows*n with row-major strides.
        unsafe {
            T::gemm(
                rows,
                k,
                n,
                T::ONE,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                T::ZERO,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return out;
    }
    for (i, (&ao, &bo)) in plan.a_offsets.iter().zip(&plan.b_offsets).enumerate() {
        // SAFETY: offsets come from the plan and stay within a/b; each output
        // batch is a disjoint m*n block.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::ONE,
                a.as_ptr().add(ao),
                k as isize,
                1,
                b.as_ptr().add(bo),
                n as isize,
                1,
                T::ZERO,
                out.as_mut_ptr().add(i * m * n),
                n as isize,
                1,
            );
        }
    }
    out
}

/// `dA += dC · Bᵀ` accumulated per batch (sums over broadcast axes).
pub(crate) fn matmul_grad_a<T: Scalar>(plan: &MatmulPlan, dc: &[T], b: &[T], da: &mut [T]) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    if plan.folds_into_single_gemm() {
        let rows = plan.batches() * m;
        // SAFETY: dC is rows×n, Bᵀ is the k×n buffer read as n×k, dA is rows×k.
        unsafe {
            T::gemm(
                rows,
                n,
                k,
                T::ONE,
                dc.as_ptr(),
                n as isize,
                1,
                b.as_ptr(),
                1,
                n as isize,
                T::ONE,
                da.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        return;
    }
    for (i, (&ao, &bo)) in plan.a_offsets.iter().zip(&plan.b_offsets).enumerate() {
        // SAFETY: see matmul_forward; accumulation is sequential.
        unsafe {
            T::gemm(
                m,
                n,
                k,
                T::ONE,
                dc.as_ptr().add(i * m * n),
                n as isize,
                1,
                b.as_ptr().add(bo),
                1,
                n as isize,
                T::ONE,
                da.as_mut_ptr().add(ao),
                k as isize,
                1,
            );
        }
    }
}

/// `dB += Aᵀ · dC` accumulated per batch.
pub(crate) fn matmul_grad_b<T: Scalar>(plan: &MatmulPlan, dc: &[T], a: &[T], db: &mut [T]) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    if plan.folds_into_single_gemm() {
        let rows = plan.batches() * m;
        // SAFETY: Aᵀ is the rows×k buffer read as k×rows.
        unsafe {
            T::gemm(
                k,
                rows,
                n,
                T::ONE,
                a.as_ptr(),
                1,
                k as isize,
                dc.as_ptr(),
                n as isize,
                1,
                T::ONE,
                db.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }
    for (i, (&ao, &bo)) in plan.a_offsets.iter().zip(&plan.b_offsets).enumerate() {
        // SAFETY: see matmul_forward; accumulation is sequential.
        unsafe {
            T::gemm(
                k,
                m,
                n,
                T::ONE,
                a.as_ptr().add(ao),
                1,
                k as isize,
                dc.as_ptr().add(i * m * n),
                n as isize,
                1,
                T::ONE,
                db.as_mut_ptr().add(bo),
                n as isize,
                1,
            );
        }
    }
}

pub(crate) fn permuted_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    axes.iter().map(|&a| shape[a]).collect()
}

pub(crate) fn validate_axes(shape: &[usize], axes: &[usize]) -> TensorResult<()> {
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len() {
        return Err(TensorError::Invalid {
            op: "permute",
            msg: format!("axes {axes:?} do not match rank of {shape:?}"),
        });
    }
    for &a in axes {
        if a >= shape.len() || seen[a] {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("axes {axes:?} are not a permutation of 0..{}", shape.len()),
            });
        }
        seen[a] = true;
    }
    Ok(())
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes so that output axis `i` is input axis `axes[i]`.
pub(crate) fn permute_raw<T: Scalar>(shape: &[usize], data: &[T], axes: &[usize]) -> Vec<T> {
    let out_shape = permuted_shape(shape, axes);
    let in_strides = row_major_strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let rank = out_shape.len();
    if rank == 0 {
        out.extend_from_slice(data);
        return out;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let outer = total / inner;
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn permute<T: Scalar>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let data = permute_raw(t.shape(), t.data(), axes);
    Tensor::new(permuted_shape(t.shape(), axes), data).expect("permute preserves length")
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// (outer, len, inner) decomposition around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut y = vec![T::ZERO; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = x[at(0)];
            for j in 1..len {
                max = max.max(x[at(j)]);
            }
            let mut sum = T::ZERO;
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                sum += e;
            }
            let inv = T::ONE / sum;
            for j in 0..len {
                y[at(j)] *= inv;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Scalar>(
    y: &[T],
    dy: &[T],
    shape: &[usize],
    axis: usize,
    dx: &mut [T],
) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut dot = T::ZERO;
            for j in 0..len {
                dot += dy[at(j)] * y[at(j)];
            }
            for j in 0..len {
                dx[at(j)] += y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
}

pub(crate) struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each row of width `d` with population variance.
pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &[T],
    d: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, LayerNormCache<T>) {
    let rows = x.len() / d;
    let inv_d = T::ONE / T::from_usize(d);
    let mut y = vec![T::ZERO; x.len()];
    let mut xhat = vec![T::ZERO; x.len()];
    let mut inv_std = vec![T::ZERO; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let is = T::ONE / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = gamma[j] * h + beta[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    d: usize,
    gamma: &[T],
    cache: &LayerNormCache<T>,
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let rows = dy.len() / d;
    if let Some(dg) = dgamma {
        for r in 0..rows {
            for j in 0..d {
                dg[j] += dy[r * d + j] * cache.xhat[r * d + j];
            }
        }
    }
    if let Some(db) = dbeta {
        for r in 0..rows {
            for j in 0..d {
                db[j] += dy[r * d + j];
            }
        }
    }
    if let Some(dx) = dx {
        let inv_d = T::ONE / T::from_usize(d);
        let mut dxhat = vec![T::ZERO; d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let mut mean_g = T::ZERO;
            let mut mean_gx = T::ZERO;
            for j in 0..d {
                let g = dy[r * d + j] * gamma[j];
                dxhat[j] = g;
                mean_g += g;
                mean_gx += g * xh[j];
            }
            mean_g *= inv_d;
            mean_gx *= inv_d;
            let is = cache.inv_std[r];
            for j in 0..d {
                dx[r * d + j] += is * (dxhat[j] - mean_g - xh[j] * mean_gx);
            }
        }
    }
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (x / T::from_f64(SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::ONE + (x / T::from_f64(SQRT_2)).erf());
    let pdf = T::from_f64(INV_SQRT_2PI) * (-(half * x * x)).exp();
    cdf + x * pdf
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// Geometry of a stride-1, same-padded depthwise convolution over NHWC input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DwConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
}

impl DwConvGeom {
    pub fn macs(&self) -> u64 {
        (self.batch * self.h * self.w * self.c * self.kh * self.kw) as u64
    }

    /// Visits every (output index, input index, kernel index) triple that
    /// lies inside the zero-padded image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let c = self.c;
        for b in 0..self.batch {
            for i in 0..self.h {
                for j in 0..self.w {
                    let out_base = ((b * self.h + i) * self.w + j) * c;
                    for u in 0..self.kh {
                        let y = i as isize + u as isize - ph;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        for v in 0..self.kw {
                            let x = j as isize + v as isize - pw;
                            if x < 0 || x >= self.w as isize {
                                continue;
                            }
                            let in_base = ((b * self.h + y as usize) * self.w + x as usize) * c;
                            let k_base = (u * self.kw + v) * c;
                            f(out_base, in_base, k_base);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn dwconv_forward<T: Scalar>(
    g: &DwConvGeom,
    x: &[T],
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let c = g.c;
    let mut out = vec![T::ZERO; g.batch * g.h * g.w * c];
    for px in out.chunks_mut(c) {
        px.copy_from_slice(bias);
    }
    g.for_each_tap(|ob, ib, kb| {
        for ch in 0..c {
            out[ob + ch] += x[ib + ch] * kernel[kb + ch];
        }
    });
    out
}

pub(crate) fn dwconv_backward<T: Scalar>(
    g: &DwConvGeom,
    x: &[T],
    kernel: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let c = g.c;
    if let Some(db) = db {
        for px in dy.chunks(c) {
            for ch in 0..c {
                db[ch] += px[ch];
            }
        }
    }
    if dx.is_none() && dk.is_none() {
        return;
    }
    g.for_each_tap(|ob, ib, kb| {
        if let Some(dx) = dx.as_deref_mut() {
            for ch in 0..c {
                dx[ib + ch] += dy[ob + ch] * kernel[kb + ch];
            }
        }
        if let Some(dk) = dk.as_deref_mut() {
            for ch in 0..c {
                dk[kb + ch] += dy[ob + ch] * x[ib + ch];
            }
        }
    });
}
