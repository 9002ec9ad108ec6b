//! 2-d convolution, grouped and dilated, plus the transposed variant.
//!
//! Forward passes lower to im2col followed by a single GEMM per
//! (sample, group); backward recomputes the patch matrix rather than caching
//! it, trading a little compute for graph memory.

use crate::ops::gemm;
use crate::tensor::{skipped_grad, BackwardCtx, Tensor};
use ndarray::{s, Array2, Array4, ArrayView3, ArrayView4, Axis, Ix1, Ix4};

#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl Conv2dSpec {
    pub fn stride(stride: usize) -> Self {
        Conv2dSpec { stride, ..Default::default() }
    }

    pub fn same3x3() -> Self {
        Conv2dSpec { stride: 1, padding: 1, dilation: 1, groups: 1 }
    }

    fn out_size(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        assert!(
            input + 2 * self.padding >= span,
            "convolution kernel span {span} exceeds padded input {}",
            input + 2 * self.padding
        );
        (input + 2 * self.padding - span) / self.stride + 1
    }
}

/// Patch matrix of one sample's channel block: `(c * kh * kw, oh * ow)`.
fn im2col(
    x: ArrayView3<'_, f64>,
    kh: usize,
    kw: usize,
    spec: &Conv2dSpec,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::<f64>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let mut out_row = cols.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out_row[oy * ow + ox] = x[(ci, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of a patch-matrix gradient back onto the input grid.
fn col2im_add(
    cols: &Array2<f64>,
    mut gx: ndarray::ArrayViewMut3<'_, f64>,
    kh: usize,
    kw: usize,
    spec: &Conv2dSpec,
    oh: usize,
    ow: usize,
) {
    let (c, h, w) = gx.dim();
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let in_row = cols.row(row);
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        gx[(ci, iy as usize, ix as usize)] += in_row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

fn as4(v: &ndarray::ArrayD<f64>) -> ArrayView4<'_, f64> {
    v.view().into_dimensionality::<Ix4>().expect("4-d tensor expected")
}

/// 2-d convolution: `x (n, c_in, h, w)` with `w (c_out, c_in / groups, kh, kw)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: Conv2dSpec) -> Tensor {
    let xv = as4(x.value());
    let wv = as4(w.value());
    let (n, cin, h, win) = xv.dim();
    let (cout, cin_g, kh, kw) = wv.dim();
    assert!(spec.groups >= 1 && spec.stride >= 1 && spec.dilation >= 1, "degenerate conv spec");
    assert_eq!(cin % spec.groups, 0, "conv2d: input channels not divisible by groups");
    assert_eq!(cout % spec.groups, 0, "conv2d: output channels not divisible by groups");
    assert_eq!(cin / spec.groups, cin_g, "conv2d: weight channel block does not match input/groups");
    let oh = spec.out_size(h, kh);
    let ow = spec.out_size(win, kw);
    let cout_g = cout / spec.groups;

    let w_flat = wv
        .to_shape((cout, cin_g * kh * kw))
        .expect("contiguous weight")
        .to_owned();
    let mut out = Array4::<f64>::zeros((n, cout, oh, ow));
    for ni in 0..n {
        for gi in 0..spec.groups {
            let xg = xv.slice(s![ni, gi * cin_g..(gi + 1) * cin_g, .., ..]);
            let cols = im2col(xg, kh, kw, &spec, oh, ow);
            let res = gemm(w_flat.slice(s![gi * cout_g..(gi + 1) * cout_g, ..]), cols.view());
            out.slice_mut(s![ni, gi * cout_g..(gi + 1) * cout_g, .., ..])
                .assign(&res.into_shape_with_order((cout_g, oh, ow)).expect("conv output reshape"));
        }
    }
    if let Some(b) = b {
        assert_eq!(b.shape(), [cout], "conv2d: bias length differs from output channels");
        let bv = b.value().view().into_dimensionality::<Ix1>().expect("1-d bias");
        for ni in 0..n {
            for co in 0..cout {
                out.slice_mut(s![ni, co, .., ..]).mapv_inplace(|v| v + bv[co]);
            }
        }
    }

    let mut parents = vec![x.clone(), w.clone()];
    let has_bias = b.is_some();
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Tensor::from_op(
        out.into_dyn(),
        parents,
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = as4(ctx.grad);
            let xv = as4(ctx.parents[0].value());
            let wv = as4(ctx.parents[1].value());
            let w_flat = wv
                .to_shape((cout, cin_g * kh * kw))
                .expect("contiguous weight")
                .to_owned();

            let mut gx = Array4::<f64>::zeros((n, cin, h, win));
            let mut gw_flat = Array2::<f64>::zeros((cout, cin_g * kh * kw));
            let need_x = ctx.needs(0);
            let need_w = ctx.needs(1);
            for ni in 0..n {
                for gi in 0..spec.groups {
                    let gout = g
                        .slice(s![ni, gi * cout_g..(gi + 1) * cout_g, .., ..])
                        .to_shape((cout_g, oh * ow))
                        .expect("contiguous grad")
                        .to_owned();
                    if need_w {
                        let xg = xv.slice(s![ni, gi * cin_g..(gi + 1) * cin_g, .., ..]);
                        let cols = im2col(xg, kh, kw, &spec, oh, ow);
                        let gw = gemm(gout.view(), cols.t());
                        let mut dst = gw_flat.slice_mut(s![gi * cout_g..(gi + 1) * cout_g, ..]);
                        dst += &gw;
                    }
                    if need_x {
                        let gcols = gemm(
                            w_flat.slice(s![gi * cout_g..(gi + 1) * cout_g, ..]).t(),
                            gout.view(),
                        );
                        col2im_add(
                            &gcols,
                            gx.slice_mut(s![ni, gi * cin_g..(gi + 1) * cin_g, .., ..]),
                            kh,
                            kw,
                            &spec,
                            oh,
                            ow,
                        );
                    }
                }
            }
            let gx = if need_x { gx.into_dyn() } else { skipped_grad() };
            let gw = if need_w {
                gw_flat
                    .into_shape_with_order((cout, cin_g, kh, kw))
                    .expect("weight grad reshape")
                    .into_dyn()
            } else {
                skipped_grad()
            };
            let mut grads = vec![gx, gw];
            if has_bias {
                if ctx.needs(2) {
                    let mut gb = ndarray::Array1::<f64>::zeros(cout);
                    for ni in 0..n {
                        for co in 0..cout {
                            gb[co] += g.slice(s![ni, co, .., ..]).sum();
                        }
                    }
                    grads.push(gb.into_dyn());
                } else {
                    grads.push(skipped_grad());
                }
            }
            grads
        }),
    )
}

/// Transposed 2-d convolution (fractionally strided), no padding:
/// `x (n, c_in, h, w)` with `w (c_in, c_out, kh, kw)` and stride `s`
/// produces `(n, c_out, (h - 1) s + kh, (w - 1) s + kw)`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Tensor {
    assert!(stride >= 1, "conv_transpose2d: zero stride");
    let xv = as4(x.value());
    let wv = as4(w.value());
    let (n, cin, h, win) = xv.dim();
    let (cin_w, cout, kh, kw) = wv.dim();
    assert_eq!(cin, cin_w, "conv_transpose2d: channel mismatch between input and weight");
    let oh = (h - 1) * stride + kh;
    let ow = (win - 1) * stride + kw;

    let mut out = Array4::<f64>::zeros((n, cout, oh, ow));
    for ni in 0..n {
        let x_flat = xv
            .index_axis(Axis(0), ni)
            .to_shape((cin, h * win))
            .expect("contiguous input")
            .to_owned();
        for ky in 0..kh {
            for kx in 0..kw {
                // (c_out, c_in) x (c_in, h*w) -> (c_out, h*w), scattered at (ky, kx).
                let wk = wv.slice(s![.., .., ky, kx]);
                let contrib = gemm(wk.t(), x_flat.view());
                for i in 0..h {
                    for j in 0..win {
                        for co in 0..cout {
                            out[(ni, co, i * stride + ky, j * stride + kx)] += contrib[(co, i * win + j)];
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        assert_eq!(b.shape(), [cout], "conv_transpose2d: bias length differs from output channels");
        let bv = b.value().view().into_dimensionality::<Ix1>().expect("1-d bias");
        for ni in 0..n {
            for co in 0..cout {
                out.slice_mut(s![ni, co, .., ..]).mapv_inplace(|v| v + bv[co]);
            }
        }
    }

    let mut parents = vec![x.clone(), w.clone()];
    let has_bias = b.is_some();
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Tensor::from_op(
        out.into_dyn(),
        parents,
        Box::new(move |ctx: BackwardCtx<'_>| {
            let g = as4(ctx.grad);
            let xv = as4(ctx.parents[0].value());
            let wv = as4(ctx.parents[1].value());
            let need_x = ctx.needs(0);
            let need_w = ctx.needs(1);
            let mut gx = Array2::<f64>::zeros((cin, h * win));
            let mut gx_all = Array4::<f64>::zeros((n, cin, h, win));
            let mut gw = Array4::<f64>::zeros((cin, cout, kh, kw));
            for ni in 0..n {
                gx.fill(0.0);
                let x_flat = xv
                    .index_axis(Axis(0), ni)
                    .to_shape((cin, h * win))
                    .expect("contiguous input")
                    .to_owned();
                for ky in 0..kh {
                    for kx in 0..kw {
                        // Gather the strided output positions this tap wrote to.
                        let mut gk = Array2::<f64>::zeros((cout, h * win));
                        for i in 0..h {
                            for j in 0..win {
                                for co in 0..cout {
                                    gk[(co, i * win + j)] = g[(ni, co, i * stride + ky, j * stride + kx)];
                                }
                            }
                        }
                        if need_x {
                            let wk = wv.slice(s![.., .., ky, kx]);
                            gx += &gemm(wk, gk.view());
                        }
                        if need_w {
                            let gwk = gemm(x_flat.view(), gk.t());
                            let mut dst = gw.slice_mut(s![.., .., ky, kx]);
                            dst += &gwk;
                        }
                    }
                }
                if need_x {
                    gx_all
                        .index_axis_mut(Axis(0), ni)
                        .assign(&gx.view().into_shape_with_order((cin, h, win)).expect("grad reshape"));
                }
            }
            let gx = if need_x { gx_all.into_dyn() } else { skipped_grad() };
            let gw = if need_w { gw.into_dyn() } else { skipped_grad() };
            let mut grads = vec![gx, gw];
            if has_bias {
                if ctx.needs(2) {
                    let mut gb = ndarray::Array1::<f64>::zeros(cout);
                    for ni in 0..n {
                        for co in 0..cout {
                            gb[co] += g.slice(s![ni, co, .., ..]).sum();
                        }
                    }
                    grads.push(gb.into_dyn());
                } else {
                    grads.push(skipped_grad());
                }
            }
            grads
        }),
    )
}
