//! Segmentation block: a frozen ViT-style image encoder, a tunable prompt
//! encoder for dense mask prompts and labeled points, and two structurally
//! identical attention decoders producing region and boundary logits from
//! the fused embeddings.

use crate::error::{Error, Result};
use crate::nn::{point_spec, Apply, Registrar};
use crate::prompt::{MaskPrompt, PointLabel, PointPromptSet};
use fabseg_autograd::{normal, ops, Binder, Conv2dSpec, ParamSet, Tensor};
use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameter-name prefixes that fine-tuning must never touch.
pub const FROZEN_PREFIXES: &[&str] = &["sam.image_encoder."];

/// True for parameters that stay frozen through every training phase.
pub fn is_frozen_param(name: &str) -> bool {
    FROZEN_PREFIXES.iter().any(|p| name.starts_with(p))
}

const ENCODER_MLP_RATIO: usize = 4;
const DECODER_MLP_RATIO: usize = 2;

/// Geometry of the segmentation block.
#[derive(Debug, Clone, PartialEq)]
pub struct SamConfig {
    /// Expected input image height and width in pixels.
    pub input_size: (usize, usize),
    /// Side length of square image patches.
    pub patch_size: usize,
    /// Image-encoder token width.
    pub embed_dim: usize,
    /// Number of transformer blocks in the image encoder.
    pub encoder_depth: usize,
    /// Attention heads (shared by encoder and decoder attention).
    pub encoder_heads: usize,
    /// Embedding width `c` shared by prompts and decoders.
    pub prompt_dim: usize,
    /// Number of two-way attention blocks per decoder.
    pub decoder_depth: usize,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self {
            input_size: (64, 64),
            patch_size: 16,
            embed_dim: 64,
            encoder_depth: 4,
            encoder_heads: 4,
            prompt_dim: 64,
            decoder_depth: 2,
        }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || self.embed_dim == 0 || self.prompt_dim == 0 {
            return Err(Error::InvalidArgument("all dimensions must be positive".into()));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 || self.encoder_heads == 0 {
            return Err(Error::InvalidArgument("depths and head count must be positive".into()));
        }
        if !self.patch_size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "patch size must be a power of two for the strided prompt downsampler, got {}",
                self.patch_size
            )));
        }
        if h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {h}x{w} is not divisible by patch size {}",
                self.patch_size
            )));
        }
        if self.embed_dim % self.encoder_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.encoder_heads
            )));
        }
        if self.prompt_dim % self.encoder_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "prompt dim {} not divisible by {} heads",
                self.prompt_dim, self.encoder_heads
            )));
        }
        if self.prompt_dim % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "prompt dim {} must be divisible by 8 for the upscaling stack",
                self.prompt_dim
            )));
        }
        Ok(())
    }

    /// Spatial resolution `(h, w)` of the embedding grids.
    pub fn embedding_grid(&self) -> (usize, usize) {
        (self.input_size.0 / self.patch_size, self.input_size.1 / self.patch_size)
    }

    fn mask_stack_widths(&self) -> Vec<usize> {
        (0..self.patch_size.trailing_zeros()).map(|i| 4usize << i).collect()
    }
}

/// Which decoder to run; both share one architecture, never parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderHead {
    Region,
    Boundary,
}

impl DecoderHead {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "region" => Ok(Self::Region),
            "boundary" => Ok(Self::Boundary),
            other => Err(Error::InvalidArgument(format!(
                "unknown decoder head {other:?}; expected \"region\" or \"boundary\""
            ))),
        }
    }

    pub fn param_prefix(self) -> &'static str {
        match self {
            Self::Region => "sam.decoder_region",
            Self::Boundary => "sam.decoder_boundary",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Region => "region",
            Self::Boundary => "boundary",
        }
    }
}

impl std::fmt::Display for DecoderHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The three embeddings consumed by a decoder: image grid `F_I`, mask-prompt
/// grid `F_mp` (both `(1, c, h, w)`), and point tokens `F_pp` (`(n, c)`,
/// `None` when no points were prompted).
#[derive(Clone)]
pub struct EmbeddingSet {
    pub f_i: Tensor,
    pub f_mp: Tensor,
    pub f_pp: Option<Tensor>,
}

impl EmbeddingSet {
    pub fn new(f_i: Tensor, f_mp: Tensor, f_pp: Option<Tensor>) -> Result<Self> {
        if f_i.shape() != f_mp.shape() {
            return Err(Error::ShapeError(format!(
                "image embedding {:?} and mask embedding {:?} must share shape",
                f_i.shape(),
                f_mp.shape()
            )));
        }
        if f_i.shape().len() != 4 || f_i.shape()[0] != 1 {
            return Err(Error::ShapeError(format!(
                "embeddings must be (1, c, h, w), got {:?}",
                f_i.shape()
            )));
        }
        for (name, t) in [("image", &f_i), ("mask", &f_mp)] {
            if t.value().iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalError(format!("{name} embedding is not finite")));
            }
        }
        if let Some(pp) = &f_pp {
            if pp.shape().len() != 2 || pp.shape()[1] != f_i.shape()[1] {
                return Err(Error::ShapeError(format!(
                    "point embeddings must be (n, {}), got {:?}",
                    f_i.shape()[1],
                    pp.shape()
                )));
            }
            if pp.value().iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalError("point embeddings are not finite".into()));
            }
        }
        Ok(Self { f_i, f_mp, f_pp })
    }
}

/// Final logits for one tile: boundary `B` and region `M`, both `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub boundary: Array2<f64>,
    pub region: Array2<f64>,
}

impl PredictionPair {
    pub fn new(boundary: Array2<f64>, region: Array2<f64>) -> Result<Self> {
        if boundary.dim() != region.dim() {
            return Err(Error::ShapeError(format!(
                "boundary {:?} and region {:?} logits must share shape",
                boundary.dim(),
                region.dim()
            )));
        }
        if boundary.iter().chain(region.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalError("prediction logits are not finite".into()));
        }
        Ok(Self { boundary, region })
    }
}

/// Registers every parameter of the block under the `sam.` namespace: the
/// (to-be-frozen) image encoder, the prompt encoder, and both decoders. The
/// two decoders are initialized bit-identically from a shared derived seed
/// and only diverge through fine-tuning.
pub fn init_sam_params(cfg: &SamConfig, set: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
    cfg.validate()?;
    let (gh, gw) = cfg.embedding_grid();
    let tokens = gh * gw;
    let e = cfg.embed_dim;
    let c = cfg.prompt_dim;

    {
        let mut r = Registrar::new(set, rng);
        r.conv("sam.image_encoder.patch_embed", e, 3, cfg.patch_size, true);
        r.embedding("sam.image_encoder.pos_embed", &[tokens, e], 0.02);
        for i in 0..cfg.encoder_depth {
            let b = format!("sam.image_encoder.block{i}");
            r.layer_norm(&format!("{b}.norm1"), e);
            r.linear(&format!("{b}.attn.qkv"), e, 3 * e, true);
            r.linear(&format!("{b}.attn.proj"), e, e, true);
            r.layer_norm(&format!("{b}.norm2"), e);
            r.linear(&format!("{b}.mlp.fc1"), e, ENCODER_MLP_RATIO * e, true);
            r.linear(&format!("{b}.mlp.fc2"), ENCODER_MLP_RATIO * e, e, true);
        }
        r.conv("sam.image_encoder.neck.conv", c, e, 1, false);
        r.layer_norm("sam.image_encoder.neck.ln", c);

        let widths = cfg.mask_stack_widths();
        let mut cin = 1;
        for (i, &cout) in widths.iter().enumerate() {
            r.conv(&format!("sam.prompt_encoder.mask.down{i}"), cout, cin, 2, true);
            r.layer_norm(&format!("sam.prompt_encoder.mask.down{i}.ln"), cout);
            cin = cout;
        }
        r.conv("sam.prompt_encoder.mask.out", c, cin, 1, true);
        r.embedding("sam.prompt_encoder.no_mask", &[c], 0.02);
        r.embedding("sam.prompt_encoder.point_labels", &[2, c], 0.02);
    }
    let pe = normal(&[2, c / 2], 1.0, rng);
    set.add_buffer("sam.prompt_encoder.point_pe", pe);

    // Both decoders from one derived seed: identical at initialization.
    let decoder_seed = rng.random::<u64>();
    for head in [DecoderHead::Region, DecoderHead::Boundary] {
        let mut drng = ChaCha8Rng::seed_from_u64(decoder_seed);
        let mut r = Registrar::new(set, &mut drng);
        let p = head.param_prefix();
        r.embedding(&format!("{p}.output_token"), &[1, c], 0.02);
        for i in 0..cfg.decoder_depth {
            let b = format!("{p}.block{i}");
            for attn in ["self_attn", "t2i", "i2t"] {
                for proj in ["q", "k", "v", "proj"] {
                    r.linear(&format!("{b}.{attn}.{proj}"), c, c, true);
                }
            }
            r.layer_norm(&format!("{b}.norm1"), c);
            r.layer_norm(&format!("{b}.norm2"), c);
            r.layer_norm(&format!("{b}.norm3"), c);
            r.linear(&format!("{b}.mlp.fc1"), c, DECODER_MLP_RATIO * c, true);
            r.linear(&format!("{b}.mlp.fc2"), DECODER_MLP_RATIO * c, c, true);
            r.layer_norm(&format!("{b}.norm4"), c);
        }
        for proj in ["q", "k", "v", "proj"] {
            r.linear(&format!("{p}.final_attn.{proj}"), c, c, true);
        }
        r.layer_norm(&format!("{p}.norm_final"), c);
        r.conv_transpose(&format!("{p}.upscale1"), c, c / 4, 2, true);
        r.layer_norm(&format!("{p}.upscale_ln"), c / 4);
        r.conv_transpose(&format!("{p}.upscale2"), c / 4, c / 8, 2, true);
        r.linear(&format!("{p}.hyper.fc1"), c, c, true);
        r.linear(&format!("{p}.hyper.fc2"), c, c, true);
        r.linear(&format!("{p}.hyper.fc3"), c, c / 8, true);
    }
    Ok(())
}

/// Multi-head self-attention over `(n, t, e)` with a fused qkv projection.
fn encoder_self_attention(a: &Apply<'_, '_>, prefix: &str, heads: usize, x: &Tensor) -> Tensor {
    let (n, t, e) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = e / heads;
    let qkv = a.linear(&format!("{prefix}.qkv"), x, true);
    let split = |part: usize| {
        let slice = ops::narrow(&qkv, 2, part * e, e);
        let headed = ops::reshape(&slice, &[n, t, heads, d]);
        ops::reshape(&ops::permute(&headed, &[0, 2, 1, 3]), &[n * heads, t, d])
    };
    let (q, k, v) = (split(0), split(1), split(2));
    let scores = ops::scale(&ops::bmm(&q, &ops::permute(&k, &[0, 2, 1])), 1.0 / (d as f64).sqrt());
    let out = ops::bmm(&ops::softmax_lastdim(&scores), &v);
    let merged = ops::reshape(
        &ops::permute(&ops::reshape(&out, &[n, heads, t, d]), &[0, 2, 1, 3]),
        &[n, t, e],
    );
    a.linear(&format!("{prefix}.proj"), &merged, true)
}

/// Multi-head attention with separate projections: queries from `q_in`
/// `(tq, c)`, keys and values from `kv_in` `(tk, c)`.
fn cross_attention(a: &Apply<'_, '_>, prefix: &str, heads: usize, q_in: &Tensor, kv_in: &Tensor) -> Tensor {
    let (tq, c) = (q_in.shape()[0], q_in.shape()[1]);
    let tk = kv_in.shape()[0];
    let d = c / heads;
    let split = |t2: &Tensor, tlen: usize| {
        ops::permute(&ops::reshape(t2, &[tlen, heads, d]), &[1, 0, 2])
    };
    let q = split(&a.linear(&format!("{prefix}.q"), q_in, true), tq);
    let k = split(&a.linear(&format!("{prefix}.k"), kv_in, true), tk);
    let v = split(&a.linear(&format!("{prefix}.v"), kv_in, true), tk);
    let scores = ops::scale(&ops::bmm(&q, &ops::permute(&k, &[0, 2, 1])), 1.0 / (d as f64).sqrt());
    let out = ops::bmm(&ops::softmax_lastdim(&scores), &v);
    let merged = ops::reshape(&ops::permute(&out, &[1, 0, 2]), &[tq, c]);
    a.linear(&format!("{prefix}.proj"), &merged, true)
}

/// Encodes an image batch `(n, 3, H, W)` to embedding grids `(n, c, h, w)`:
/// patch embedding plus learned positions, `encoder_depth` pre-norm
/// transformer blocks, then a 1x1 neck projection with channel layer norm.
pub fn encode_image(cfg: &SamConfig, binder: &Binder<'_>, image: &Tensor) -> Result<Tensor> {
    cfg.validate()?;
    let shape = image.shape().to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::ShapeError(format!("expected (n, 3, H, W) image, got {shape:?}")));
    }
    if shape[2] % cfg.patch_size != 0 || shape[3] % cfg.patch_size != 0 {
        return Err(Error::ShapeError(format!(
            "image {}x{} is not divisible by patch size {}",
            shape[2], shape[3], cfg.patch_size
        )));
    }
    if (shape[2], shape[3]) != cfg.input_size {
        return Err(Error::ShapeError(format!(
            "image {}x{} does not match configured input size {}x{}",
            shape[2], shape[3], cfg.input_size.0, cfg.input_size.1
        )));
    }
    if image.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError("image contains non-finite values".into()));
    }
    let a = Apply { binder, training: false };
    let (n, e) = (shape[0], cfg.embed_dim);
    let (gh, gw) = cfg.embedding_grid();
    let t = gh * gw;

    let patches = a.conv(
        "sam.image_encoder.patch_embed",
        image,
        Conv2dSpec::stride(cfg.patch_size),
        true,
    );
    let mut x = ops::permute(&ops::reshape(&patches, &[n, e, t]), &[0, 2, 1]);
    let pos = ops::reshape(&binder.param("sam.image_encoder.pos_embed"), &[1, t, e]);
    let pos = if n == 1 { pos } else { ops::concat(0, &vec![pos; n]) };
    x = ops::add(&x, &pos);

    for i in 0..cfg.encoder_depth {
        let b = format!("sam.image_encoder.block{i}");
        let attended = encoder_self_attention(
            &a,
            &format!("{b}.attn"),
            cfg.encoder_heads,
            &a.ln(&format!("{b}.norm1"), &x),
        );
        x = ops::add(&x, &attended);
        let pre = a.ln(&format!("{b}.norm2"), &x);
        let h1 = ops::gelu(&a.linear(&format!("{b}.mlp.fc1"), &pre, true));
        let h2 = a.linear(&format!("{b}.mlp.fc2"), &h1, true);
        x = ops::add(&x, &h2);
    }

    let grid = ops::permute(&ops::reshape(&x, &[n, gh, gw, e]), &[0, 3, 1, 2]);
    let f_i = a.ln2d("sam.image_encoder.neck.ln", &a.conv("sam.image_encoder.neck.conv", &grid, point_spec(), false));
    if f_i.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError("image embedding is not finite".into()));
    }
    Ok(f_i)
}

/// Encodes prompts. The dense mask prompt runs through a strided
/// convolution stack down to the embedding grid; an absent mask is replaced
/// by the learned no-mask vector broadcast across the grid. Each point
/// becomes one token: a fixed Gaussian Fourier encoding of its normalized
/// coordinates plus the learned embedding of its label. Returns
/// `(F_mp (1, c, h, w), F_pp (n, c) or None)`.
pub fn encode_prompts(
    cfg: &SamConfig,
    binder: &Binder<'_>,
    mp: Option<&MaskPrompt>,
    pp: Option<&PointPromptSet>,
) -> Result<(Tensor, Option<Tensor>)> {
    cfg.validate()?;
    let (height, width) = cfg.input_size;
    let (gh, gw) = cfg.embedding_grid();
    let c = cfg.prompt_dim;
    let a = Apply { binder, training: false };

    let f_mp = match mp {
        Some(mask) => {
            if mask.shape() != (height, width) {
                return Err(Error::ShapeError(format!(
                    "mask prompt {:?} does not match input size {}x{}",
                    mask.shape(),
                    height,
                    width
                )));
            }
            let raw = mask
                .values()
                .clone()
                .into_shape_with_order(ndarray::IxDyn(&[1, 1, height, width]))
                .expect("reshape (H, W) to (1, 1, H, W)");
            let mut x = Tensor::constant(raw);
            for i in 0..cfg.mask_stack_widths().len() {
                let name = format!("sam.prompt_encoder.mask.down{i}");
                x = a.conv(&name, &x, Conv2dSpec::stride(2), true);
                x = ops::gelu(&a.ln2d(&format!("{name}.ln"), &x));
            }
            a.conv("sam.prompt_encoder.mask.out", &x, point_spec(), true)
        }
        None => ops::broadcast_vec_nchw(&binder.param("sam.prompt_encoder.no_mask"), 1, gh, gw),
    };
    if f_mp.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError("mask embedding is not finite".into()));
    }

    let f_pp = match pp {
        Some(points) if !points.is_empty() => {
            points.validate(height, width).map_err(|e| match e {
                Error::InvalidPrompt(msg) => Error::InvalidPrompt(msg),
                other => other,
            })?;
            let gauss = binder.buffer("sam.prompt_encoder.point_pe");
            let gauss = gauss.borrow();
            let mut pe = Array2::<f64>::zeros((points.len(), c));
            for (i, &(row, col)) in points.coords.iter().enumerate() {
                // Pixel centers, normalized to [-1, 1] on each axis.
                let y = 2.0 * ((row as f64 + 0.5) / height as f64) - 1.0;
                let x = 2.0 * ((col as f64 + 0.5) / width as f64) - 1.0;
                for j in 0..c / 2 {
                    let theta = 2.0 * std::f64::consts::PI * (y * gauss[[0, j]] + x * gauss[[1, j]]);
                    pe[[i, j]] = theta.sin();
                    pe[[i, c / 2 + j]] = theta.cos();
                }
            }
            let idx: Vec<usize> = points
                .labels
                .iter()
                .map(|l| match l {
                    PointLabel::Background => 0,
                    PointLabel::Foreground => 1,
                })
                .collect();
            let labels = ops::index_rows(&binder.param("sam.prompt_encoder.point_labels"), &idx);
            Some(ops::add(&Tensor::constant(pe.into_dyn()), &labels))
        }
        _ => None,
    };
    Ok((f_mp, f_pp))
}

/// Runs one decoder head on fused embeddings. The image grid is `F_I + F_mp`
/// elementwise; the token set is the learned output token followed by the
/// point tokens. After `decoder_depth` two-way attention blocks and a final
/// token-to-image attention, the image embedding is upscaled by two
/// transposed convolutions and each pixel's logit is its inner product with
/// the MLP-projected output token, bilinearly resized to the input size.
pub fn decode_mask(
    cfg: &SamConfig,
    binder: &Binder<'_>,
    set: &EmbeddingSet,
    head: DecoderHead,
) -> Result<Tensor> {
    cfg.validate()?;
    let (gh, gw) = cfg.embedding_grid();
    let c = cfg.prompt_dim;
    if set.f_i.shape() != [1, c, gh, gw] {
        return Err(Error::ShapeError(format!(
            "embedding grid {:?} does not match configured (1, {c}, {gh}, {gw})",
            set.f_i.shape()
        )));
    }
    let a = Apply { binder, training: false };
    let p = head.param_prefix();
    let heads = cfg.encoder_heads;
    let t_img = gh * gw;

    let fused = ops::add(&set.f_i, &set.f_mp);
    let mut img = ops::permute(&ops::reshape(&fused, &[c, t_img]), &[1, 0]);
    let out_token = binder.param(&format!("{p}.output_token"));
    let mut tokens = match &set.f_pp {
        Some(pp) => ops::concat(0, &[out_token, pp.clone()]),
        None => out_token,
    };

    for i in 0..cfg.decoder_depth {
        let b = format!("{p}.block{i}");
        let t1 = cross_attention(&a, &format!("{b}.self_attn"), heads, &tokens, &tokens);
        tokens = a.ln(&format!("{b}.norm1"), &ops::add(&tokens, &t1));
        let t2 = cross_attention(&a, &format!("{b}.t2i"), heads, &tokens, &img);
        tokens = a.ln(&format!("{b}.norm2"), &ops::add(&tokens, &t2));
        let i1 = cross_attention(&a, &format!("{b}.i2t"), heads, &img, &tokens);
        img = a.ln(&format!("{b}.norm3"), &ops::add(&img, &i1));
        let m1 = ops::gelu(&a.linear(&format!("{b}.mlp.fc1"), &tokens, true));
        let m2 = a.linear(&format!("{b}.mlp.fc2"), &m1, true);
        tokens = a.ln(&format!("{b}.norm4"), &ops::add(&tokens, &m2));
    }
    let tf = cross_attention(&a, &format!("{p}.final_attn"), heads, &tokens, &img);
    tokens = a.ln(&format!("{p}.norm_final"), &ops::add(&tokens, &tf));
    let out_tok = ops::narrow(&tokens, 0, 0, 1);

    let h1 = ops::gelu(&a.linear(&format!("{p}.hyper.fc1"), &out_tok, true));
    let h2 = ops::gelu(&a.linear(&format!("{p}.hyper.fc2"), &h1, true));
    let pixel_query = a.linear(&format!("{p}.hyper.fc3"), &h2, true);

    let grid = ops::reshape(&ops::permute(&img, &[1, 0]), &[1, c, gh, gw]);
    let up1 = a.conv_transpose(&format!("{p}.upscale1"), &grid, 2, true);
    let up1 = ops::gelu(&a.ln2d(&format!("{p}.upscale_ln"), &up1));
    let up2 = ops::gelu(&a.conv_transpose(&format!("{p}.upscale2"), &up1, 2, true));

    let (uh, uw) = (4 * gh, 4 * gw);
    let pixels = ops::permute(&ops::reshape(&up2, &[c / 8, uh * uw]), &[1, 0]);
    let logits = ops::matmul(&pixels, &ops::permute(&pixel_query, &[1, 0]));
    let coarse = ops::reshape(&logits, &[1, 1, uh, uw]);
    let (height, width) = cfg.input_size;
    let full = fabseg_autograd::bilinear_resize(&coarse, height, width);
    let out = ops::reshape(&full, &[height, width]);
    if out.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError(format!("{head} logits are not finite")));
    }
    Ok(out)
}

/// Convenience wrapper: encode image and prompts, then run both heads.
pub fn predict_pair(
    cfg: &SamConfig,
    params: &ParamSet,
    image: &ArrayD<f64>,
    mp: Option<&MaskPrompt>,
    pp: Option<&PointPromptSet>,
) -> Result<PredictionPair> {
    let binder = Binder::inference(params);
    let f_i = encode_image(cfg, &binder, &Tensor::constant(image.clone()))?;
    let (f_mp, f_pp) = encode_prompts(cfg, &binder, mp, pp)?;
    let set = EmbeddingSet::new(f_i, f_mp, f_pp)?;
    let boundary = decode_mask(cfg, &binder, &set, DecoderHead::Boundary)?;
    let region = decode_mask(cfg, &binder, &set, DecoderHead::Region)?;
    let to2 = |t: &Tensor| {
        t.value()
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("logits are 2-d")
    };
    PredictionPair::new(to2(&boundary), to2(&region))
}
