//! Batch and layer normalization.

use crate::ops::permute;
use crate::tensor::{BackwardCtx, Tensor};
use ndarray::{ArrayD, Axis, Ix1, Ix4, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

/// Batch normalization over `(n, h, w)` for each channel of an nchw stack.
///
/// In training mode the batch statistics normalize the activations and the
/// running buffers are updated in place (`running = (1 - momentum) * running +
/// momentum * batch`), with the unbiased variance entering the running buffer.
/// In eval mode the running buffers normalize and receive no update.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Rc<RefCell<ArrayD<f64>>>,
    running_var: &Rc<RefCell<ArrayD<f64>>>,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Tensor {
    let xv = x.value().view().into_dimensionality::<Ix4>().expect("batch_norm2d expects nchw input");
    let (n, c, h, w) = xv.dim();
    assert_eq!(gamma.shape(), [c], "batch_norm2d: gamma length differs from channel count");
    assert_eq!(beta.shape(), [c], "batch_norm2d: beta length differs from channel count");
    let m = (n * h * w) as f64;

    let (mean, var) = if training {
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for ci in 0..c {
            let lane = xv.index_axis(Axis(1), ci);
            let mu = lane.sum() / m;
            let v = lane.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / m;
            mean[ci] = mu;
            var[ci] = v;
        }
        {
            let mut rm = running_mean.borrow_mut();
            let mut rv = running_var.borrow_mut();
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ci in 0..c {
                rm[IxDyn(&[ci])] = (1.0 - momentum) * rm[IxDyn(&[ci])] + momentum * mean[ci];
                rv[IxDyn(&[ci])] = (1.0 - momentum) * rv[IxDyn(&[ci])] + momentum * var[ci] * unbias;
            }
        }
        (mean, var)
    } else {
        let rm = running_mean.borrow();
        let rv = running_var.borrow();
        let mean: Vec<f64> = (0..c).map(|ci| rm[IxDyn(&[ci])]).collect();
        let var: Vec<f64> = (0..c).map(|ci| rv[IxDyn(&[ci])]).collect();
        (mean, var)
    };

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = xv.to_owned();
    for ci in 0..c {
        let mu = mean[ci];
        let is = inv_std[ci];
        xhat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - mu) * is);
    }
    let gv = gamma.value().view().into_dimensionality::<Ix1>().expect("1-d gamma");
    let bv = beta.value().view().into_dimensionality::<Ix1>().expect("1-d beta");
    let mut out = xhat.clone();
    for ci in 0..c {
        let (g, b) = (gv[ci], bv[ci]);
        out.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * g + b);
    }

    let xhat = Rc::new(xhat);
    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g4 = ctx.grad.view().into_dimensionality::<Ix4>().expect("4-d grad");
            let gv = ctx.parents[1]
                .value()
                .view()
                .into_dimensionality::<Ix1>()
                .expect("1-d gamma");
            let mut gx = g4.to_owned();
            let mut ggamma = ndarray::Array1::<f64>::zeros(c);
            let mut gbeta = ndarray::Array1::<f64>::zeros(c);
            for ci in 0..c {
                let glane = g4.index_axis(Axis(1), ci);
                let xlane = xhat.index_axis(Axis(1), ci);
                let sum_g: f64 = glane.sum();
                let sum_gx: f64 = glane.iter().zip(xlane.iter()).map(|(g, x)| g * x).sum();
                ggamma[ci] = sum_gx;
                gbeta[ci] = sum_g;
                let k = gv[ci] * inv_std[ci];
                if training {
                    let mean_g = sum_g / m;
                    let mean_gx = sum_gx / m;
                    let mut dst = gx.index_axis_mut(Axis(1), ci);
                    ndarray::Zip::from(&mut dst).and(&xlane).for_each(|d, &xh| {
                        *d = k * (*d - mean_g - xh * mean_gx);
                    });
                } else {
                    gx.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * k);
                }
            }
            vec![gx.into_dyn(), ggamma.into_dyn(), gbeta.into_dyn()]
        }),
    )
}

/// Layer normalization over the last axis, with learned per-feature scale and
/// shift. Works for any rank >= 1; each lane along the last axis is
/// normalized independently with biased variance.
pub fn layer_norm_last(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let k = *x.shape().last().expect("layer_norm_last requires rank >= 1");
    assert_eq!(gamma.shape(), [k], "layer_norm_last: gamma length differs from feature count");
    assert_eq!(beta.shape(), [k], "layer_norm_last: beta length differs from feature count");
    let kf = k as f64;

    let mut xhat = x.value().clone();
    let mut inv_std = Vec::with_capacity(x.len() / k);
    for mut row in xhat.rows_mut() {
        let mu = row.sum() / kf;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / kf;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        row.mapv_inplace(|v| (v - mu) * is);
    }
    let gv = gamma.value().view().into_dimensionality::<Ix1>().expect("1-d gamma");
    let bv = beta.value().view().into_dimensionality::<Ix1>().expect("1-d beta");
    let mut out = xhat.clone();
    for mut row in out.rows_mut() {
        for (i, v) in row.iter_mut().enumerate() {
            *v = *v * gv[i] + bv[i];
        }
    }

    let xhat = Rc::new(xhat);
    Tensor::from_op(
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let gv = ctx.parents[1]
                .value()
                .view()
                .into_dimensionality::<Ix1>()
                .expect("1-d gamma");
            let mut gx = ctx.grad.clone();
            let mut ggamma = ndarray::Array1::<f64>::zeros(k);
            let mut gbeta = ndarray::Array1::<f64>::zeros(k);
            for ((mut grow, xrow), &is) in gx
                .rows_mut()
                .into_iter()
                .zip(xhat.rows())
                .zip(inv_std.iter())
            {
                // gy' = g * gamma; gx = inv_std * (gy' - mean(gy') - xhat * mean(gy' * xhat))
                let mut sum_gy = 0.0;
                let mut sum_gyx = 0.0;
                for i in 0..k {
                    let gy = grow[i] * gv[i];
                    ggamma[i] += grow[i] * xrow[i];
                    gbeta[i] += grow[i];
                    sum_gy += gy;
                    sum_gyx += gy * xrow[i];
                }
                let mean_gy = sum_gy / kf;
                let mean_gyx = sum_gyx / kf;
                for i in 0..k {
                    let gy = grow[i] * gv[i];
                    grow[i] = is * (gy - mean_gy - xrow[i] * mean_gyx);
                }
            }
            vec![gx, ggamma.into_dyn(), gbeta.into_dyn()]
        }),
    )
}

/// Layer normalization across the channel axis of an nchw stack, one
/// normalization per spatial position (the "LayerNorm2d" used around
/// convolutional necks).
pub fn layer_norm_channels(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    assert_eq!(x.shape().len(), 4, "layer_norm_channels expects nchw input");
    let nhwc = permute(x, &[0, 2, 3, 1]);
    let normed = layer_norm_last(&nhwc, gamma, beta, eps);
    permute(&normed, &[0, 3, 1, 2])
}
