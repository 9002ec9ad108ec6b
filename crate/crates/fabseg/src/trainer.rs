//! Two-phase training: SGD over the prompter's composite cross-entropy,
//! then Adam fine-tuning of the segmentation block's tunable half (prompt
//! encoder and/or one decoder) with the image encoder frozen. Both phases
//! follow a polynomial learning-rate schedule and are bit-reproducible
//! given (config, seed, dataset).

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::losses::{
    finetune_loss_graph, prompter_loss_graph, FinetuneLossWeights, PrompterLossWeights,
};
use crate::prompt::{
    generate_point_prompts, to_probability_map, MaskPrompt, PointPromptSet, ProbabilityMap,
};
use crate::prompter::{prompter_forward, PrompterConfig};
use crate::sam::{decode_mask, encode_image, encode_prompts, DecoderHead, EmbeddingSet, SamConfig};
use crate::seeding::derive_seed;
use fabseg_autograd::optim::{Adam, Sgd};
use fabseg_autograd::{ops, Binder, ParamSet, Tensor};
use ndarray::{Array2, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed-derivation tags, one per independent random stream.
const TAG_INIT: u64 = 1;
const TAG_BATCH: u64 = 2;
const TAG_POINTS: u64 = 3;

/// Which training phase a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prompter,
    Finetune,
}

/// Optimizer choice with its hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Length of a run: prompter training counts iterations, fine-tuning counts
/// epochs over the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duration {
    Iterations(usize),
    Epochs(usize),
}

/// One phase's optimization schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub duration: Duration,
    pub lr0: f64,
    pub power: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "initial learning rate must be positive and finite, got {}",
                self.lr0
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "poly power must be positive and finite, got {}",
                self.power
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        let count = match self.duration {
            Duration::Iterations(n) | Duration::Epochs(n) => n,
        };
        if count == 0 {
            return Err(Error::InvalidArgument("training duration must be positive".into()));
        }
        match (self.phase, self.optimizer) {
            (_, OptimizerKind::Sgd { momentum }) => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::InvalidArgument(format!(
                        "momentum must lie in [0, 1), got {momentum}"
                    )));
                }
            }
            (_, OptimizerKind::Adam { beta1, beta2, eps }) => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "adam needs betas in [0, 1) and eps > 0, got ({beta1}, {beta2}, {eps})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The four switches of the component study: fine-tune decoder, fine-tune
/// prompt encoder, use the mask prompt, use the point prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub ftd: bool,
    pub ftpe: bool,
    pub mp: bool,
    pub pp: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self { ftd: true, ftpe: true, mp: true, pp: true }
    }
}

/// Point-prompt sampling settings used during fine-tuning and prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptSettings {
    pub n_fg: usize,
    pub n_bg: usize,
    pub t_fg: f64,
    pub t_bg: f64,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            n_fg: crate::prompt::DEFAULT_N_FG,
            n_bg: crate::prompt::DEFAULT_N_BG,
            t_fg: crate::prompt::DEFAULT_T_FG,
            t_bg: crate::prompt::DEFAULT_T_BG,
        }
    }
}

/// Polynomial decay: `lr0 * (1 - step/max_steps)^power`.
pub fn poly_lr(step: usize, max_steps: usize, lr0: f64, power: f64) -> Result<f64> {
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be positive".into()));
    }
    if step > max_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} exceeds max_steps {max_steps}"
        )));
    }
    if !(lr0 > 0.0) || !lr0.is_finite() || !(power >= 0.0) || !power.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid schedule parameters lr0 = {lr0}, power = {power}"
        )));
    }
    Ok(lr0 * (1.0 - step as f64 / max_steps as f64).powf(power))
}

/// One training step's record; the structured log line is
/// `step,lr,loss,name=value,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub terms: Vec<(String, f64)>,
}

impl TrainLogEntry {
    pub fn format(&self) -> String {
        let mut line = format!("{},{:.10},{:.10}", self.step, self.lr, self.loss);
        for (name, value) in &self.terms {
            line.push_str(&format!(",{name}={value:.10}"));
        }
        line
    }
}

/// A finished run: the updated parameters and the training RNG's final state.
pub struct TrainOutcome {
    pub params: ParamSet,
    pub rng: ChaCha8Rng,
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Endless deterministic sample cycler: shuffles the index set, deals it
/// out, reshuffles when exhausted.
struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, rng);
        Self { order, pos: 0 }
    }

    fn next_batch(&mut self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut picked = Vec::with_capacity(batch);
        for _ in 0..batch {
            if self.pos == self.order.len() {
                shuffle(&mut self.order, rng);
                self.pos = 0;
            }
            picked.push(self.order[self.pos]);
            self.pos += 1;
        }
        picked
    }
}

fn check_sample_shapes(samples: &[Sample], input_size: (usize, usize)) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("training requires at least one sample".into()));
    }
    for s in samples {
        let dim = s.image.dim();
        if (dim.1, dim.2) != input_size {
            return Err(Error::ShapeError(format!(
                "sample {} is {}x{} but the network expects {}x{}",
                s.id, dim.1, dim.2, input_size.0, input_size.1
            )));
        }
    }
    Ok(())
}

fn stack_images(samples: &[Sample], picks: &[usize]) -> ArrayD<f64> {
    let (c, h, w) = samples[picks[0]].image.dim();
    let mut batch = ArrayD::zeros(ndarray::IxDyn(&[picks.len(), c, h, w]));
    for (bi, &i) in picks.iter().enumerate() {
        batch
            .index_axis_mut(Axis(0), bi)
            .assign(&samples[i].image.view().into_dyn());
    }
    batch
}

fn stack_masks(samples: &[Sample], picks: &[usize], boundary: bool) -> ArrayD<f64> {
    let (h, w) = samples[picks[0]].region.dim();
    let mut batch = ArrayD::zeros(ndarray::IxDyn(&[picks.len(), h, w]));
    for (bi, &i) in picks.iter().enumerate() {
        let mask = if boundary { &samples[i].boundary } else { &samples[i].region };
        batch.index_axis_mut(Axis(0), bi).assign(&mask.view().into_dyn());
    }
    batch
}

enum Updater {
    Sgd(Sgd),
    Adam(Adam),
}

impl Updater {
    fn new(cfg: &TrainConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd { momentum } => Updater::Sgd(Sgd::new(momentum, cfg.weight_decay)),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                Updater::Adam(Adam::new(beta1, beta2, eps, cfg.weight_decay))
            }
        }
    }

    fn step(
        &mut self,
        params: &ParamSet,
        grads: &indexmap::IndexMap<String, ArrayD<f64>>,
        lr: f64,
    ) {
        match self {
            Updater::Sgd(s) => s.step(params, grads, lr),
            Updater::Adam(a) => a.step(params, grads, lr),
        }
    }
}

/// Phase 1: train the prompter from scratch on region masks with the
/// composite main + auxiliary cross-entropy. Deterministic in
/// `(config, seed, dataset)`; returns the trained parameters.
pub fn train_prompter(
    pcfg: &PrompterConfig,
    weights: &PrompterLossWeights,
    tcfg: &TrainConfig,
    samples: &[Sample],
    mut on_step: impl FnMut(&TrainLogEntry),
) -> Result<TrainOutcome> {
    pcfg.validate()?;
    weights.validate()?;
    tcfg.validate()?;
    if tcfg.phase != Phase::Prompter {
        return Err(Error::InvalidArgument(
            "train_prompter requires a prompter-phase config".into(),
        ));
    }
    check_sample_shapes(samples, pcfg.input_size)?;
    let total_steps = match tcfg.duration {
        Duration::Iterations(n) => n,
        Duration::Epochs(e) => e * samples.len().div_ceil(tcfg.batch_size),
    };

    let mut set = ParamSet::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, &[TAG_INIT]));
    crate::prompter::init_prompter_params(pcfg, &mut set, &mut init_rng)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, &[TAG_BATCH]));
    let mut cycler = BatchCycler::new(samples.len(), &mut rng);
    let mut updater = Updater::new(tcfg);

    for step in 0..total_steps {
        let lr = poly_lr(step, total_steps, tcfg.lr0, tcfg.power)?;
        let picks = cycler.next_batch(tcfg.batch_size, &mut rng);
        let images = Tensor::constant(stack_images(samples, &picks));
        let gt = Tensor::constant(stack_masks(samples, &picks, false));

        let binder = Binder::training(&set);
        let out = prompter_forward(pcfg, &binder, &images, true)
            .map_err(|e| Error::NumericalError(format!("step {step}: {e}")))?;
        let aux = out.aux_logits.as_ref().expect("training mode produces the auxiliary head");
        let (loss, value) = prompter_loss_graph(&out.main_logits, aux, &gt, weights)
            .map_err(|e| Error::NumericalError(format!("step {step}: {e}")))?;

        let store = loss.backward();
        let grads = binder.collect_grads(&store);
        updater.step(&set, &grads, lr);

        on_step(&TrainLogEntry { step, lr, loss: value.value, terms: value.per_term.clone() });
    }
    Ok(TrainOutcome { params: set, rng })
}

/// Everything fixed across one fine-tuning run.
pub struct FinetunePlan<'a> {
    pub prompter_cfg: &'a PrompterConfig,
    pub prompter_params: &'a ParamSet,
    pub sam_cfg: &'a SamConfig,
    pub prompts: PromptSettings,
    pub loss: FinetuneLossWeights,
    pub train: TrainConfig,
    pub flags: AblationFlags,
    pub head: DecoderHead,
}

struct CachedSample {
    f_i: ArrayD<f64>,
    mp: MaskPrompt,
    prob: ProbabilityMap,
    gt: Array2<f64>,
}

/// Runs the frozen prompter on one image and reduces its class logits to
/// the single-channel mask prompt.
pub fn prompter_mask_prompt(
    pcfg: &PrompterConfig,
    params: &ParamSet,
    image: &ndarray::Array3<f64>,
) -> Result<MaskPrompt> {
    let binder = Binder::inference(params);
    let input = image
        .clone()
        .into_dyn()
        .into_shape_with_order(ndarray::IxDyn(&[1, 3, image.dim().1, image.dim().2]))
        .expect("add batch axis");
    let out = prompter_forward(pcfg, &binder, &Tensor::constant(input), false)?;
    MaskPrompt::from_two_channel_logits(out.main_logits.value().index_axis(Axis(0), 0))
}

/// Draws this step's point prompts for one sample, honoring the ablation
/// flags; a probability map with no eligible pixels yields no points.
fn sample_points(
    plan: &FinetunePlan<'_>,
    prob: &ProbabilityMap,
    step: usize,
    slot: usize,
) -> Result<Option<PointPromptSet>> {
    if !plan.flags.pp {
        return Ok(None);
    }
    let seed = derive_seed(plan.train.seed, &[TAG_POINTS, step as u64, slot as u64]);
    match generate_point_prompts(
        prob,
        plan.prompts.n_fg,
        plan.prompts.n_bg,
        seed,
        plan.prompts.t_fg,
        plan.prompts.t_bg,
    ) {
        Ok(set) => Ok(Some(set)),
        Err(Error::NoEligiblePixels(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Phase 2: fine-tune one decoder head (and, per flags, the prompt encoder)
/// of the segmentation block with Adam against region or boundary labels.
/// The image encoder is always frozen; the frozen prompter supplies the
/// mask prompt; point prompts are resampled each step from a derived seed.
/// `sam_params` is the initialized block (fresh or loaded) to be tuned.
pub fn finetune_sam_block(
    plan: &FinetunePlan<'_>,
    sam_params: ParamSet,
    samples: &[Sample],
    mut on_step: impl FnMut(&TrainLogEntry),
) -> Result<TrainOutcome> {
    plan.prompter_cfg.validate()?;
    plan.sam_cfg.validate()?;
    plan.loss.validate()?;
    plan.train.validate()?;
    if plan.train.phase != Phase::Finetune {
        return Err(Error::InvalidArgument(
            "finetune_sam_block requires a finetune-phase config".into(),
        ));
    }
    if plan.prompter_cfg.input_size != plan.sam_cfg.input_size {
        return Err(Error::InvalidArgument(format!(
            "prompter input {:?} and segmentation-block input {:?} must match",
            plan.prompter_cfg.input_size, plan.sam_cfg.input_size
        )));
    }
    check_sample_shapes(samples, plan.sam_cfg.input_size)?;
    let epochs = match plan.train.duration {
        Duration::Epochs(e) => e,
        Duration::Iterations(_) => {
            return Err(Error::InvalidArgument(
                "fine-tuning is scheduled in epochs, not iterations".into(),
            ))
        }
    };

    // The image encoder and the prompter are both frozen, so their per-sample
    // outputs are loop invariants: compute them once.
    let mut cache = Vec::with_capacity(samples.len());
    for s in samples {
        let mp = prompter_mask_prompt(plan.prompter_cfg, plan.prompter_params, &s.image)?;
        let prob = to_probability_map(&mp)?;
        let binder = Binder::inference(&sam_params);
        let (_, h, w) = s.image.dim();
        let image = s
            .image
            .clone()
            .into_dyn()
            .into_shape_with_order(ndarray::IxDyn(&[1, 3, h, w]))
            .expect("add batch axis");
        let f_i = encode_image(plan.sam_cfg, &binder, &Tensor::constant(image))?;
        let gt = match plan.head {
            DecoderHead::Region => s.region.clone(),
            DecoderHead::Boundary => s.boundary.clone(),
        };
        cache.push(CachedSample { f_i: f_i.value().clone(), mp, prob, gt });
    }

    let head_prefix = plan.head.param_prefix();
    let flags = plan.flags;
    let policy = move |name: &str| {
        (flags.ftd && name.starts_with(head_prefix))
            || (flags.ftpe && name.starts_with("sam.prompt_encoder."))
    };

    let steps_per_epoch = samples.len().div_ceil(plan.train.batch_size);
    let total_steps = epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.train.seed, &[TAG_BATCH]));
    let mut updater = Updater::new(&plan.train);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;

    for _epoch in 0..epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(plan.train.batch_size) {
            let lr = poly_lr(step, total_steps, plan.train.lr0, plan.train.power)?;
            let binder = Binder::training_filtered(&sam_params, policy);
            let mut losses = Vec::with_capacity(chunk.len());
            let mut value_sum = 0.0;
            let mut term_sums: Vec<(String, f64)> = Vec::new();
            for (slot, &idx) in chunk.iter().enumerate() {
                let cached = &cache[idx];
                let pp = sample_points(plan, &cached.prob, step, slot)?;
                let mp = flags.mp.then_some(&cached.mp);
                let (f_mp, f_pp) = encode_prompts(plan.sam_cfg, &binder, mp, pp.as_ref())?;
                let emb = EmbeddingSet::new(Tensor::constant(cached.f_i.clone()), f_mp, f_pp)?;
                let logits = decode_mask(plan.sam_cfg, &binder, &emb, plan.head)
                    .map_err(|e| Error::NumericalError(format!("step {step}: {e}")))?;
                let probs = ops::sigmoid(&logits);
                let gt = Tensor::constant(cached.gt.clone().into_dyn());
                let (loss, value) = finetune_loss_graph(&probs, &gt, &plan.loss)
                    .map_err(|e| Error::NumericalError(format!("step {step}: {e}")))?;
                value_sum += value.value;
                if term_sums.is_empty() {
                    term_sums = value.per_term.clone();
                } else {
                    for (acc, term) in term_sums.iter_mut().zip(&value.per_term) {
                        acc.1 += term.1;
                    }
                }
                losses.push(loss);
            }
            let mut total = losses[0].clone();
            for l in &losses[1..] {
                total = ops::add(&total, l);
            }
            let total = ops::scale(&total, 1.0 / losses.len() as f64);

            let store = total.backward();
            let grads = binder.collect_grads(&store);
            updater.step(&sam_params, &grads, lr);

            let inv = 1.0 / chunk.len() as f64;
            on_step(&TrainLogEntry {
                step,
                lr,
                loss: value_sum * inv,
                terms: term_sums.iter().map(|(n, v)| (n.clone(), v * inv)).collect(),
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { params: sam_params, rng })
}
