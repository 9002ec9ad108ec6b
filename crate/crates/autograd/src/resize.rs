//! Spatial resampling ops.

use crate::tensor::{BackwardCtx, Tensor};
use ndarray::{Array4, Ix4};

/// Per-axis sampling table: source low index, source high index, and the
/// weight of the high sample. Half-pixel centers (align_corners = false).
fn axis_table(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Bilinear interpolation of an nchw stack to a new spatial size.
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    assert!(oh >= 1 && ow >= 1, "bilinear_resize to an empty grid");
    let xv = x.value().view().into_dimensionality::<Ix4>().expect("bilinear_resize expects nchw input");
    let (n, c, h, w) = xv.dim();
    let ys = axis_table(h, oh);
    let xs = axis_table(w, ow);

    let mut out = Array4::<f64>::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            let plane = xv.index_axis(ndarray::Axis(0), ni);
            let plane = plane.index_axis(ndarray::Axis(0), ci);
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    out[(ni, ci, oy, ox)] = (1.0 - wy) * (1.0 - wx) * plane[(y0, x0)]
                        + (1.0 - wy) * wx * plane[(y0, x1)]
                        + wy * (1.0 - wx) * plane[(y1, x0)]
                        + wy * wx * plane[(y1, x1)];
                }
            }
        }
    }

    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = ctx.grad.view().into_dimensionality::<Ix4>().expect("4-d grad");
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            for ni in 0..n {
                for ci in 0..c {
                    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                            let go = g[(ni, ci, oy, ox)];
                            gx[(ni, ci, y0, x0)] += (1.0 - wy) * (1.0 - wx) * go;
                            gx[(ni, ci, y0, x1)] += (1.0 - wy) * wx * go;
                            gx[(ni, ci, y1, x0)] += wy * (1.0 - wx) * go;
                            gx[(ni, ci, y1, x1)] += wy * wx * go;
                        }
                    }
                }
            }
            vec![gx.into_dyn()]
        }),
    )
}

/// Global average pooling of an nchw stack to `(n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let xv = x.value().view().into_dimensionality::<Ix4>().expect("global_avg_pool expects nchw input");
    let (n, c, h, w) = xv.dim();
    let m = (h * w) as f64;
    let mut out = Array4::<f64>::zeros((n, c, 1, 1));
    for ni in 0..n {
        for ci in 0..c {
            out[(ni, ci, 0, 0)] = xv.index_axis(ndarray::Axis(0), ni).index_axis(ndarray::Axis(0), ci).sum() / m;
        }
    }
    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone()],
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = ctx.grad.view().into_dimensionality::<Ix4>().expect("4-d grad");
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            for ni in 0..n {
                for ci in 0..c {
                    let go = g[(ni, ci, 0, 0)] / m;
                    gx.index_axis_mut(ndarray::Axis(0), ni)
                        .index_axis_mut(ndarray::Axis(0), ci)
                        .fill(go);
                }
            }
            vec![gx.into_dyn()]
        }),
    )
}
