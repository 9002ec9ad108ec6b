//! Differentiable operations on [`Tensor`].
//!
//! Shapes are checked eagerly and mismatches panic: the callers own input
//! validation, and a shape error past that boundary is a bug, not a runtime
//! condition. Elementwise binary ops require identical shapes; the only
//! broadcasts provided are the explicit bias/vector helpers.

use crate::tensor::{skipped_grad, BackwardCtx, Tensor};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, ArrayView2, Axis, Ix2, Ix3, IxDyn};

fn assert_same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: operand shapes differ");
}

/// `a + b`, identical shapes.
pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape(a, b, "add");
    let value = a.value() + b.value();
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: BackwardCtx<'_>| vec![ctx.grad.clone(), ctx.grad.clone()]),
    )
}

/// `a - b`, identical shapes.
pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape(a, b, "sub");
    let value = a.value() - b.value();
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: BackwardCtx<'_>| vec![ctx.grad.clone(), ctx.grad.mapv(|g| -g)]),
    )
}

/// Elementwise product, identical shapes.
pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape(a, b, "mul");
    let value = a.value() * b.value();
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let ga = if ctx.needs(0) { ctx.grad * ctx.parents[1].value() } else { skipped_grad() };
            let gb = if ctx.needs(1) { ctx.grad * ctx.parents[0].value() } else { skipped_grad() };
            vec![ga, gb]
        }),
    )
}

/// Elementwise quotient, identical shapes.
pub fn div(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape(a, b, "div");
    let value = a.value() / b.value();
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let bv = ctx.parents[1].value();
            let ga = if ctx.needs(0) { ctx.grad / bv } else { skipped_grad() };
            let gb = if ctx.needs(1) {
                let av = ctx.parents[0].value();
                let mut g = ctx.grad * av;
                g.zip_mut_with(bv, |g, &b| *g = -*g / (b * b));
                g
            } else {
                skipped_grad()
            };
            vec![ga, gb]
        }),
    )
}

/// `a * k` for a plain scalar `k`.
pub fn scale(a: &Tensor, k: f64) -> Tensor {
    let value = a.value().mapv(|v| v * k);
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| vec![ctx.grad.mapv(|g| g * k)]),
    )
}

/// `a + k` for a plain scalar `k`.
pub fn add_scalar(a: &Tensor, k: f64) -> Tensor {
    let value = a.value().mapv(|v| v + k);
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| vec![ctx.grad.clone()]),
    )
}

pub fn neg(a: &Tensor) -> Tensor {
    scale(a, -1.0)
}

pub fn relu(a: &Tensor) -> Tensor {
    let value = a.value().mapv(|v| v.max(0.0));
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.parents[0].value(), |g, &x| {
                if x <= 0.0 {
                    *g = 0.0;
                }
            });
            vec![g]
        }),
    )
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let value = a.value().mapv(|v| 1.0 / (1.0 + (-v).exp()));
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.out, |g, &y| *g *= y * (1.0 - y));
            vec![g]
        }),
    )
}

pub fn tanh(a: &Tensor) -> Tensor {
    let value = a.value().mapv(f64::tanh);
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.out, |g, &y| *g *= 1.0 - y * y);
            vec![g]
        }),
    )
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// GELU in its tanh approximation.
pub fn gelu(a: &Tensor) -> Tensor {
    let value = a
        .value()
        .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.parents[0].value(), |g, &x| {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let sech2 = 1.0 - t * t;
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                *g *= 0.5 * (1.0 + t) + 0.5 * x * sech2 * du;
            });
            vec![g]
        }),
    )
}

/// Natural logarithm. Callers are expected to clamp away from zero first.
pub fn ln(a: &Tensor) -> Tensor {
    let value = a.value().mapv(f64::ln);
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.parents[0].value(), |g, &x| *g /= x);
            vec![g]
        }),
    )
}

pub fn exp(a: &Tensor) -> Tensor {
    let value = a.value().mapv(f64::exp);
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.out, |g, &y| *g *= y);
            vec![g]
        }),
    )
}

/// Elementwise power with a constant exponent `k >= 1`.
pub fn powf(a: &Tensor, k: f64) -> Tensor {
    assert!(k >= 1.0, "powf supports exponents >= 1, got {k}");
    let value = a.value().mapv(|v| v.powf(k));
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.parents[0].value(), |g, &x| {
                *g *= if k == 1.0 { 1.0 } else { k * x.powf(k - 1.0) };
            });
            vec![g]
        }),
    )
}

/// Clamp to `[lo, hi]`. The gradient passes through strictly interior values
/// and is zero at and beyond the bounds.
pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    assert!(lo < hi, "clamp bounds out of order");
    let value = a.value().mapv(|v| v.clamp(lo, hi));
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let mut g = ctx.grad.clone();
            g.zip_mut_with(ctx.parents[0].value(), |g, &x| {
                if x <= lo || x >= hi {
                    *g = 0.0;
                }
            });
            vec![g]
        }),
    )
}

pub(crate) fn gemm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

fn as2(v: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    v.view().into_dimensionality::<Ix2>().expect("2-d tensor expected")
}

/// Matrix product of two 2-d tensors, `(m, k) x (k, n) -> (m, n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let av = as2(a.value());
    let bv = as2(b.value());
    assert_eq!(av.ncols(), bv.nrows(), "matmul: inner dimensions differ");
    let value = gemm(av, bv).into_dyn();
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let g = as2(ctx.grad);
            let av = as2(ctx.parents[0].value());
            let bv = as2(ctx.parents[1].value());
            let ga = if ctx.needs(0) { gemm(g, bv.t()).into_dyn() } else { skipped_grad() };
            let gb = if ctx.needs(1) { gemm(av.t(), g).into_dyn() } else { skipped_grad() };
            vec![ga, gb]
        }),
    )
}

/// Affine map of row vectors: `x (t, c_in) x w (c_out, c_in)^T + b -> (t, c_out)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let xv = as2(x.value());
    let wv = as2(w.value());
    assert_eq!(xv.ncols(), wv.ncols(), "linear: feature dimensions differ");
    let mut value = gemm(xv, wv.t());
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        assert_eq!(b.shape(), [wv.nrows()], "linear: bias length differs from output width");
        let bv = b.value().view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        value += &bv;
        parents.push(b.clone());
    }
    let has_bias = b.is_some();
    Tensor::from_op(
        value.into_dyn(),
        parents,
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = as2(ctx.grad);
            let xv = as2(ctx.parents[0].value());
            let wv = as2(ctx.parents[1].value());
            let gx = if ctx.needs(0) { gemm(g, wv).into_dyn() } else { skipped_grad() };
            let gw = if ctx.needs(1) { gemm(g.t(), xv).into_dyn() } else { skipped_grad() };
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(g.sum_axis(Axis(0)).into_dyn());
            }
            grads
        }),
    )
}

/// Batched matrix product: `(b, m, k) x (b, k, n) -> (b, m, n)`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Tensor {
    let av = a.value().view().into_dimensionality::<Ix3>().expect("bmm lhs must be 3-d");
    let bv = b.value().view().into_dimensionality::<Ix3>().expect("bmm rhs must be 3-d");
    let (nb, m, k) = av.dim();
    let (nb2, k2, n) = bv.dim();
    assert_eq!(nb, nb2, "bmm: batch sizes differ");
    assert_eq!(k, k2, "bmm: inner dimensions differ");
    let mut value = ndarray::Array3::<f64>::zeros((nb, m, n));
    for i in 0..nb {
        let mut out = value.index_axis_mut(Axis(0), i);
        general_mat_mul(1.0, &av.index_axis(Axis(0), i), &bv.index_axis(Axis(0), i), 0.0, &mut out);
    }
    Tensor::from_op(
        value.into_dyn(),
        vec![a.clone(), b.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = ctx.grad.view().into_dimensionality::<Ix3>().expect("3-d grad");
            let av = ctx.parents[0].value().view().into_dimensionality::<Ix3>().expect("3-d");
            let bv = ctx.parents[1].value().view().into_dimensionality::<Ix3>().expect("3-d");
            let ga = if ctx.needs(0) {
                let mut ga = ndarray::Array3::<f64>::zeros(av.dim());
                for i in 0..nb {
                    let mut out = ga.index_axis_mut(Axis(0), i);
                    let bt = bv.index_axis(Axis(0), i);
                    general_mat_mul(1.0, &g.index_axis(Axis(0), i), &bt.t(), 0.0, &mut out);
                }
                ga.into_dyn()
            } else {
                skipped_grad()
            };
            let gb = if ctx.needs(1) {
                let mut gb = ndarray::Array3::<f64>::zeros(bv.dim());
                for i in 0..nb {
                    let mut out = gb.index_axis_mut(Axis(0), i);
                    let at = av.index_axis(Axis(0), i);
                    general_mat_mul(1.0, &at.t(), &g.index_axis(Axis(0), i), 0.0, &mut out);
                }
                gb.into_dyn()
            } else {
                skipped_grad()
            };
            vec![ga, gb]
        }),
    )
}

/// Reshape preserving element count and (row-major) order.
pub fn reshape(a: &Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    assert_eq!(a.len(), n, "reshape: element counts differ");
    let value = a
        .value()
        .to_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("reshape with matching element count");
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let src_shape = ctx.parents[0].shape().to_vec();
            vec![ctx
                .grad
                .to_owned()
                .into_shape_with_order(IxDyn(&src_shape))
                .expect("reshape gradient")]
        }),
    )
}

/// Axis permutation; the result is materialised in standard layout.
pub fn permute(a: &Tensor, axes: &[usize]) -> Tensor {
    assert_eq!(axes.len(), a.shape().len(), "permute: axis count differs from rank");
    let value = a
        .value()
        .view()
        .permuted_axes(IxDyn(axes))
        .as_standard_layout()
        .to_owned();
    let mut inverse = vec![0usize; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inverse[ax] = i;
    }
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            vec![ctx
                .grad
                .view()
                .permuted_axes(IxDyn(&inverse))
                .as_standard_layout()
                .to_owned()]
        }),
    )
}

/// Contiguous slice `[start, start + len)` along `axis`.
pub fn narrow(a: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    assert!(start + len <= a.shape()[axis], "narrow: slice out of bounds");
    let value = a
        .value()
        .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
        .as_standard_layout()
        .to_owned();
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let mut g = ArrayD::<f64>::zeros(ctx.parents[0].value().raw_dim());
            g.slice_axis_mut(Axis(axis), ndarray::Slice::from(start..start + len))
                .assign(ctx.grad);
            vec![g]
        }),
    )
}

/// Concatenation along `axis`.
pub fn concat(axis: usize, parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat of zero tensors");
    let views: Vec<_> = parts.iter().map(|t| t.value().view()).collect();
    let value = ndarray::concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
    let sizes: Vec<usize> = parts.iter().map(|t| t.shape()[axis]).collect();
    Tensor::from_op(
        value,
        parts.to_vec(),
        Box::new(move |ctx: BackwardCtx<'_>| {
            let mut grads = Vec::with_capacity(sizes.len());
            let mut offset = 0usize;
            for (i, &sz) in sizes.iter().enumerate() {
                if ctx.needs(i) {
                    grads.push(
                        ctx.grad
                            .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + sz))
                            .as_standard_layout()
                            .to_owned(),
                    );
                } else {
                    grads.push(skipped_grad());
                }
                offset += sz;
            }
            grads
        }),
    )
}

/// Sum of all elements, as a 0-d tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    let value = ArrayD::from_elem(IxDyn(&[]), a.value().sum());
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let g = *ctx.grad.iter().next().expect("scalar grad");
            vec![ArrayD::from_elem(ctx.parents[0].value().raw_dim(), g)]
        }),
    )
}

/// Mean of all elements, as a 0-d tensor.
pub fn mean_all(a: &Tensor) -> Tensor {
    assert!(a.len() > 0, "mean_all of an empty tensor");
    let n = a.len() as f64;
    let value = ArrayD::from_elem(IxDyn(&[]), a.value().sum() / n);
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = *ctx.grad.iter().next().expect("scalar grad") / n;
            vec![ArrayD::from_elem(ctx.parents[0].value().raw_dim(), g)]
        }),
    )
}

/// Softmax over the last axis of a tensor of any rank >= 1.
pub fn softmax_lastdim(a: &Tensor) -> Tensor {
    assert!(!a.shape().is_empty(), "softmax_lastdim requires rank >= 1");
    let mut value = a.value().clone();
    for mut row in value.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Tensor::from_op(
        value,
        vec![a.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            // dx = y * (g - sum(g * y)) per row
            let mut g = ctx.grad.clone();
            let y = ctx.out;
            for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                let dot: f64 = grow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
                for (g, &y) in grow.iter_mut().zip(yrow.iter()) {
                    *g = y * (*g - dot);
                }
            }
            vec![g]
        }),
    )
}

/// Gather rows of a 2-d table: `table (r, c)` and `idx` -> `(idx.len, c)`.
pub fn index_rows(table: &Tensor, idx: &[usize]) -> Tensor {
    let tv = as2(table.value());
    let (r, c) = tv.dim();
    for &i in idx {
        assert!(i < r, "index_rows: row index {i} out of bounds for table with {r} rows");
    }
    let mut value = Array2::<f64>::zeros((idx.len(), c));
    for (k, &i) in idx.iter().enumerate() {
        value.row_mut(k).assign(&tv.row(i));
    }
    let idx = idx.to_vec();
    Tensor::from_op(
        value.into_dyn(),
        vec![table.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = as2(ctx.grad);
            let mut gt = Array2::<f64>::zeros((r, c));
            for (k, &i) in idx.iter().enumerate() {
                let mut row = gt.row_mut(i);
                row += &g.row(k);
            }
            vec![gt.into_dyn()]
        }),
    )
}

/// Broadcast a vector `(c,)` to an image stack `(n, c, h, w)`.
pub fn broadcast_vec_nchw(v: &Tensor, n: usize, h: usize, w: usize) -> Tensor {
    let c = v.len();
    assert_eq!(v.shape().len(), 1, "broadcast_vec_nchw expects a 1-d vector");
    let mut value = ndarray::Array4::<f64>::zeros((n, c, h, w));
    let vv = v.value();
    for ni in 0..n {
        for (ci, &x) in vv.iter().enumerate() {
            value.index_axis_mut(Axis(0), ni).index_axis_mut(Axis(0), ci).fill(x);
        }
    }
    Tensor::from_op(
        value.into_dyn(),
        vec![v.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = ctx.grad.view().into_dimensionality::<ndarray::Ix4>().expect("4-d grad");
            let mut gv = ndarray::Array1::<f64>::zeros(c);
            for ni in 0..n {
                for ci in 0..c {
                    gv[ci] += g.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum();
                }
            }
            vec![gv.into_dyn()]
        }),
    )
}

/// Add a per-channel bias `(c,)` to an image stack `(n, c, h, w)`.
pub fn add_bias_channels(x: &Tensor, b: &Tensor) -> Tensor {
    let xs = x.shape().to_vec();
    assert_eq!(xs.len(), 4, "add_bias_channels expects nchw input");
    assert_eq!(b.shape(), [xs[1]], "add_bias_channels: bias length differs from channel count");
    let mut value = x.value().clone();
    {
        let mut v4 = value.view_mut().into_dimensionality::<ndarray::Ix4>().expect("4-d");
        let bv = b.value();
        for ni in 0..xs[0] {
            for ci in 0..xs[1] {
                let bias = bv[IxDyn(&[ci])];
                v4.index_axis_mut(Axis(0), ni)
                    .index_axis_mut(Axis(0), ci)
                    .mapv_inplace(|v| v + bias);
            }
        }
    }
    Tensor::from_op(
        value,
        vec![x.clone(), b.clone()],
        Box::new(|ctx: BackwardCtx<'_>| {
            let g4 = ctx.grad.view().into_dimensionality::<ndarray::Ix4>().expect("4-d grad");
            let (n, c, _, _) = g4.dim();
            let gx = if ctx.needs(0) { ctx.grad.clone() } else { skipped_grad() };
            let gb = if ctx.needs(1) {
                let mut gb = ndarray::Array1::<f64>::zeros(c);
                for ni in 0..n {
                    for ci in 0..c {
                        gb[ci] += g4.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum();
                    }
                }
                gb.into_dyn()
            } else {
                skipped_grad()
            };
            vec![gx, gb]
        }),
    )
}
