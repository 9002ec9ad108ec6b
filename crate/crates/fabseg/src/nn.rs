//! Named-layer helpers over the autograd engine.
//!
//! Networks in this crate are defined as pure functions over a [`ParamSet`]:
//! construction registers parameters under dotted names, and the forward
//! pass looks the same names up through a [`Binder`]. The two halves of each
//! layer live here so a layer's registration and application cannot drift
//! apart structurally.

use fabseg_autograd::{
    batch_norm2d, conv2d, conv_transpose2d, he_normal, layer_norm_channels, layer_norm_last, normal, ones, ops,
    xavier_uniform, zeros, Binder, Conv2dSpec, ParamSet, Tensor,
};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

/// Registers layer parameters under dotted names at construction time.
pub struct Registrar<'a> {
    set: &'a mut ParamSet,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Registrar<'a> {
    pub fn new(set: &'a mut ParamSet, rng: &'a mut ChaCha8Rng) -> Self {
        Self { set, rng }
    }

    /// Convolution weight `(cout, cin/groups, k, k)`; He initialization.
    pub fn conv(&mut self, name: &str, cout: usize, cin_per_group: usize, k: usize, bias: bool) {
        let fan_in = cin_per_group * k * k;
        self.set.add_weight(
            format!("{name}.weight"),
            he_normal(&[cout, cin_per_group, k, k], fan_in, self.rng),
        );
        if bias {
            self.set.add_weight(format!("{name}.bias"), zeros(&[cout]));
        }
    }

    /// Transposed-convolution weight `(cin, cout, k, k)`; He initialization.
    pub fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool) {
        let fan_in = cin * k * k;
        self.set.add_weight(
            format!("{name}.weight"),
            he_normal(&[cin, cout, k, k], fan_in, self.rng),
        );
        if bias {
            self.set.add_weight(format!("{name}.bias"), zeros(&[cout]));
        }
    }

    /// Batch-norm affine weights plus running-statistics buffers.
    pub fn bn(&mut self, name: &str, c: usize) {
        self.set.add_weight(format!("{name}.gamma"), ones(&[c]));
        self.set.add_weight(format!("{name}.beta"), zeros(&[c]));
        self.set.add_buffer(format!("{name}.running_mean"), zeros(&[c]));
        self.set.add_buffer(format!("{name}.running_var"), ones(&[c]));
    }

    /// Bias-free convolution followed by batch norm (the standard pairing:
    /// the norm's shift subsumes any bias).
    pub fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.conv(&format!("{name}.conv"), cout, cin, k, false);
        self.bn(&format!("{name}.bn"), cout);
    }

    /// Depthwise bias-free convolution (groups == channels) plus batch norm.
    pub fn depthwise_bn(&mut self, name: &str, c: usize, k: usize) {
        let fan_in = k * k;
        self.set
            .add_weight(format!("{name}.conv.weight"), he_normal(&[c, 1, k, k], fan_in, self.rng));
        self.bn(&format!("{name}.bn"), c);
    }

    /// Dense weight `(cout, cin)`; Xavier initialization.
    pub fn linear(&mut self, name: &str, cin: usize, cout: usize, bias: bool) {
        self.set.add_weight(
            format!("{name}.weight"),
            xavier_uniform(&[cout, cin], cin, cout, self.rng),
        );
        if bias {
            self.set.add_weight(format!("{name}.bias"), zeros(&[cout]));
        }
    }

    /// Layer-norm affine weights (no running statistics).
    pub fn layer_norm(&mut self, name: &str, c: usize) {
        self.set.add_weight(format!("{name}.gamma"), ones(&[c]));
        self.set.add_weight(format!("{name}.beta"), zeros(&[c]));
    }

    /// Free-form learned tensor with the given normal-init std.
    pub fn embedding(&mut self, name: &str, shape: &[usize], std: f64) {
        self.set.add_weight(name, normal(shape, std, self.rng));
    }

    /// Free-form fixed buffer (not trained, saved with the model).
    pub fn buffer(&mut self, name: &str, value: ArrayD<f64>) {
        self.set.add_buffer(name, value);
    }
}

/// Applies named layers during a forward pass.
pub struct Apply<'a, 'b> {
    pub binder: &'a Binder<'b>,
    pub training: bool,
}

impl Apply<'_, '_> {
    pub fn conv(&self, name: &str, x: &Tensor, spec: Conv2dSpec, bias: bool) -> Tensor {
        let w = self.binder.param(&format!("{name}.weight"));
        let b = bias.then(|| self.binder.param(&format!("{name}.bias")));
        conv2d(x, &w, b.as_ref(), spec)
    }

    pub fn conv_transpose(&self, name: &str, x: &Tensor, stride: usize, bias: bool) -> Tensor {
        let w = self.binder.param(&format!("{name}.weight"));
        let b = bias.then(|| self.binder.param(&format!("{name}.bias")));
        conv_transpose2d(x, &w, b.as_ref(), stride)
    }

    pub fn bn(&self, name: &str, x: &Tensor) -> Tensor {
        let gamma = self.binder.param(&format!("{name}.gamma"));
        let beta = self.binder.param(&format!("{name}.beta"));
        let rm = self.binder.buffer(&format!("{name}.running_mean"));
        let rv = self.binder.buffer(&format!("{name}.running_var"));
        batch_norm2d(x, &gamma, &beta, &rm, &rv, self.training, BN_MOMENTUM, BN_EPS)
    }

    pub fn conv_bn(&self, name: &str, x: &Tensor, spec: Conv2dSpec) -> Tensor {
        self.bn(&format!("{name}.bn"), &self.conv(&format!("{name}.conv"), x, spec, false))
    }

    pub fn conv_bn_relu(&self, name: &str, x: &Tensor, spec: Conv2dSpec) -> Tensor {
        ops::relu(&self.conv_bn(name, x, spec))
    }

    /// `x @ W^T + b` on the last axis; leading axes are flattened through
    /// the 2-d matrix product and restored afterwards.
    pub fn linear(&self, name: &str, x: &Tensor, bias: bool) -> Tensor {
        let w = self.binder.param(&format!("{name}.weight"));
        let b = bias.then(|| self.binder.param(&format!("{name}.bias")));
        let shape = x.shape().to_vec();
        let cout = w.shape()[0];
        if shape.len() == 2 {
            return ops::linear(x, &w, b.as_ref());
        }
        let cin = *shape.last().expect("linear input needs a feature axis");
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let out = ops::linear(&ops::reshape(x, &[rows, cin]), &w, b.as_ref());
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.push(cout);
        ops::reshape(&out, &out_shape)
    }

    /// Layer norm over the last axis.
    pub fn ln(&self, name: &str, x: &Tensor) -> Tensor {
        let gamma = self.binder.param(&format!("{name}.gamma"));
        let beta = self.binder.param(&format!("{name}.beta"));
        layer_norm_last(x, &gamma, &beta, LN_EPS)
    }

    /// Layer norm over the channel axis of an NCHW map.
    pub fn ln2d(&self, name: &str, x: &Tensor) -> Tensor {
        let gamma = self.binder.param(&format!("{name}.gamma"));
        let beta = self.binder.param(&format!("{name}.beta"));
        layer_norm_channels(x, &gamma, &beta, LN_EPS)
    }
}

/// 1x1 convolution spec.
pub fn point_spec() -> Conv2dSpec {
    Conv2dSpec::default()
}

/// 3x3 convolution spec with `stride` and dilation `d` (padding keeps size
/// at stride 1).
pub fn spec3x3(stride: usize, dilation: usize) -> Conv2dSpec {
    Conv2dSpec { stride, padding: dilation, dilation, groups: 1 }
}
