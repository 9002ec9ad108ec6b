//! End-to-end orchestration behind the CLI: synthetic dataset generation,
//! raw-scene preparation, both training phases, tiled prediction with
//! parcel extraction, evaluation, and the component study. Every entry
//! point is deterministic in (inputs, config, seed) and writes only under
//! its declared output path.

use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::data::{
    crop_tiles, generate_synthetic_scene, load_samples, read_manifest, render_bands,
    split_dataset, write_manifest, ManifestEntry, Sample,
};
use crate::error::{Error, Result};
use crate::imageio::{load_mask, load_raw, load_rgb8, save_label_map, save_mask, save_rgb8};
use crate::metrics::{confusion_counts, mean_iou, pixel_metrics, ClassMetrics, ConfusionCounts};
use crate::postprocess::{binarize, extract_parcels, ParcelMap};
use crate::prompt::{generate_point_prompts, to_probability_map, PointPromptSet, ProbabilityMap};
use crate::prompter::{init_prompter_params, PrompterConfig};
use crate::raster::{Domain, Raster};
use crate::sam::{
    init_sam_params, is_frozen_param, predict_pair, DecoderHead, SamConfig, FROZEN_PREFIXES,
};
use crate::seeding::derive_seed;
use crate::trainer::{
    finetune_sam_block, prompter_mask_prompt, train_prompter, AblationFlags, FinetunePlan,
    PromptSettings, TrainLogEntry, TrainOutcome,
};
use fabseg_autograd::ParamSet;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Seed-derivation tags for pipeline-owned random streams.
const TAG_SCENE: u64 = 21;
const TAG_SAM_INIT: u64 = 22;
const TAG_PREDICT_POINTS: u64 = 23;

/// Smallest connected component kept as a parcel, in pixels.
pub const MIN_PARCEL_AREA: usize = 16;

// ---------------------------------------------------------------------------
// synth

/// Generates `n` labeled synthetic scenes under `out`: RGB images, region
/// and boundary masks, and a manifest tying them together.
pub fn run_synth(n: usize, seed: u64, size: usize, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one scene".into()));
    }
    for sub in ["images", "region", "boundary"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    // Denser scenes for larger canvases, bounded to keep parcels well formed.
    let n_parcels = (size / 16).clamp(3, 12);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let scene = generate_synthetic_scene(derive_seed(seed, &[TAG_SCENE, i as u64]), n_parcels, size)?;
        let name = format!("scene_{i:03}.png");
        save_rgb8(&out.join("images").join(&name), &scene.image)?;
        save_mask(&out.join("region").join(&name), &scene.region_mask)?;
        save_mask(&out.join("boundary").join(&name), &scene.boundary_mask)?;
        entries.push(ManifestEntry {
            image: PathBuf::from("images").join(&name),
            region: PathBuf::from("region").join(&name),
            boundary: PathBuf::from("boundary").join(&name),
        });
    }
    write_manifest(&out.join("manifest.txt"), &entries)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// prepare

/// Renders raw multi-band scenes into 8-bit tiles, crops them to squares,
/// and splits scenes into train/val/test manifests under `out`.
pub fn run_prepare(
    manifest: &Path,
    lo: i64,
    hi: i64,
    tile: usize,
    split: (f64, f64, f64),
    seed: u64,
    out: &Path,
) -> Result<()> {
    let entries = read_manifest(manifest)?;
    std::fs::create_dir_all(out.join("tiles"))?;

    let mut scene_ids = Vec::with_capacity(entries.len());
    let mut tiles_by_scene: Vec<(String, Vec<ManifestEntry>)> = Vec::with_capacity(entries.len());
    for entry in &entries {
        let id = entry
            .image
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::DataError(format!("unusable image path {:?}", entry.image)))?
            .to_string();
        let raw = load_raw(&entry.image)?;
        let image = render_bands(&raw, lo, hi)?;
        let region = load_mask(&entry.region)?;
        let boundary = load_mask(&entry.boundary)?;
        let image_grid = crop_tiles(&image, tile, 0.0)?;
        let region_grid = crop_tiles(&region, tile, 0.0)?;
        let boundary_grid = crop_tiles(&boundary, tile, 0.0)?;

        let mut scene_tiles = Vec::new();
        for r in 0..image_grid.rows() {
            for c in 0..image_grid.cols() {
                let stem = format!("{id}_r{r}c{c}");
                let image_rel = PathBuf::from("tiles").join(format!("{stem}_image.png"));
                let region_rel = PathBuf::from("tiles").join(format!("{stem}_region.png"));
                let boundary_rel = PathBuf::from("tiles").join(format!("{stem}_boundary.png"));
                save_rgb8(&out.join(&image_rel), image_grid.tile(r, c))?;
                save_mask(&out.join(&region_rel), region_grid.tile(r, c))?;
                save_mask(&out.join(&boundary_rel), boundary_grid.tile(r, c))?;
                scene_tiles.push(ManifestEntry {
                    image: image_rel,
                    region: region_rel,
                    boundary: boundary_rel,
                });
            }
        }
        scene_ids.push(id.clone());
        tiles_by_scene.push((id, scene_tiles));
    }

    let split = split_dataset(&scene_ids, split, seed)?;
    let collect = |ids: &[String]| -> Vec<ManifestEntry> {
        let mut rows = Vec::new();
        for id in ids {
            if let Some((_, tiles)) = tiles_by_scene.iter().find(|(s, _)| s == id) {
                rows.extend(tiles.iter().cloned());
            }
        }
        rows
    };
    write_manifest(&out.join("train.txt"), &collect(&split.train))?;
    write_manifest(&out.join("val.txt"), &collect(&split.val))?;
    write_manifest(&out.join("test.txt"), &collect(&split.test))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// training

fn progress_logger(phase: &'static str, every: usize) -> impl FnMut(&TrainLogEntry) {
    move |entry: &TrainLogEntry| {
        if entry.step % every == 0 {
            eprintln!("[{phase}] {}", entry.format());
        }
    }
}

/// Loads the manifest's samples, checking they match the configured tile.
fn load_training_samples(cfg: &PipelineConfig, manifest: &Path) -> Result<Vec<Sample>> {
    let samples = load_samples(&read_manifest(manifest)?)?;
    let tile = cfg.data.tile;
    for s in &samples {
        let (_, h, w) = s.image.dim();
        if (h, w) != (tile, tile) {
            return Err(Error::ShapeError(format!(
                "sample {} is {h}x{w} but the config expects {tile}x{tile} tiles",
                s.id
            )));
        }
    }
    Ok(samples)
}

/// Phase 1 entry point: trains the prompter and writes its checkpoint.
pub fn run_train_prompter(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<()> {
    let samples = load_training_samples(cfg, manifest)?;
    let outcome = train_prompter(
        &cfg.prompter_config(),
        &cfg.prompter_loss_weights(),
        &cfg.prompter_train_config(),
        &samples,
        progress_logger("prompter", 50),
    )?;
    save_outcome(&outcome, cfg, &[], out)
}

fn save_outcome(
    outcome: &TrainOutcome,
    cfg: &PipelineConfig,
    frozen: &[String],
    out: &Path,
) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Checkpoint::from_params(&outcome.params, &cfg.to_toml(), frozen, &outcome.rng)?.save(out)
}

/// Rebuilds the prompter parameter set a checkpoint was saved from and
/// installs its values, verifying the architectures agree.
pub fn load_prompter_checkpoint(cfg: &PipelineConfig, path: &Path) -> Result<ParamSet> {
    let ckpt = Checkpoint::load(path)?;
    let saved = PipelineConfig::from_toml(&ckpt.config_text)?;
    if saved.prompter_config() != cfg.prompter_config() {
        return Err(Error::SchemaError(format!(
            "prompter checkpoint {} was trained with a different architecture",
            path.display()
        )));
    }
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    init_prompter_params(&cfg.prompter_config(), &mut params, &mut rng)?;
    ckpt.install(&params)?;
    Ok(params)
}

/// Deterministic segmentation-block initialization shared by both heads'
/// fine-tuning runs (and all ablation rows), so the frozen half is
/// bit-identical across the resulting checkpoints.
pub fn init_sam_block(cfg: &PipelineConfig) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.finetune.seed, &[TAG_SAM_INIT]));
    init_sam_params(&cfg.sam_config(), &mut params, &mut rng)?;
    Ok(params)
}

/// Phase 2 entry point: fine-tunes one head of the segmentation block
/// against the frozen prompter and writes the resulting checkpoint. The
/// snapshot records the effective ablation flags.
pub fn run_finetune(
    cfg: &PipelineConfig,
    head: DecoderHead,
    flags: AblationFlags,
    prompter_ckpt: &Path,
    manifest: &Path,
    out: &Path,
) -> Result<()> {
    let samples = load_training_samples(cfg, manifest)?;
    let prompter_params = load_prompter_checkpoint(cfg, prompter_ckpt)?;
    let sam_params = init_sam_block(cfg)?;
    let pcfg = cfg.prompter_config();
    let plan = FinetunePlan {
        prompter_cfg: &pcfg,
        prompter_params: &prompter_params,
        sam_cfg: &cfg.sam_config(),
        prompts: cfg.prompt_settings(),
        loss: cfg.finetune_loss_weights(),
        train: cfg.finetune_train_config(),
        flags,
        head,
    };
    let outcome =
        finetune_sam_block(&plan, sam_params, &samples, progress_logger("finetune", 10))?;
    let mut effective = cfg.clone();
    effective.ablation = flags;
    let frozen: Vec<String> = FROZEN_PREFIXES.iter().map(|p| p.to_string()).collect();
    save_outcome(&outcome, &effective, &frozen, out)
}

// ---------------------------------------------------------------------------
// prediction

/// Everything needed to run the full two-stage predictor.
pub struct Predictor {
    pub config: PipelineConfig,
    pub prompter_cfg: PrompterConfig,
    pub sam_cfg: SamConfig,
    pub prompter_params: ParamSet,
    pub sam_params: ParamSet,
    pub settings: PromptSettings,
    pub flags: AblationFlags,
}

/// Assembles a predictor from the three checkpoints: prompter, region run,
/// and boundary run. The region checkpoint supplies the frozen encoder and
/// the prompt encoder; the boundary checkpoint contributes only its decoder
/// and must agree bit-for-bit on the frozen half.
pub fn load_predictor(
    prompter_ckpt: &Path,
    region_ckpt: &Path,
    boundary_ckpt: &Path,
) -> Result<Predictor> {
    let region = Checkpoint::load(region_ckpt)?;
    let boundary = Checkpoint::load(boundary_ckpt)?;
    let config = PipelineConfig::from_toml(&region.config_text)?;
    let boundary_config = PipelineConfig::from_toml(&boundary.config_text)?;
    if boundary_config.sam_config() != config.sam_config()
        || boundary_config.prompter_config() != config.prompter_config()
    {
        return Err(Error::SchemaError(
            "region and boundary checkpoints were produced by different architectures".into(),
        ));
    }

    let prompter_params = load_prompter_checkpoint(&config, prompter_ckpt)?;

    let mut sam_params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    init_sam_params(&config.sam_config(), &mut sam_params, &mut rng)?;
    region.install(&sam_params)?;

    // The frozen half must be the same physical network in both runs.
    for (name, stored) in &boundary.arrays {
        if !is_frozen_param(name) {
            continue;
        }
        let other = region.array(name).ok_or_else(|| {
            Error::SchemaError(format!("region checkpoint is missing frozen parameter {name}"))
        })?;
        let identical = stored.shape() == other.shape()
            && stored.iter().zip(other.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !identical {
            return Err(Error::SchemaError(format!(
                "frozen parameter {name} differs between the region and boundary checkpoints"
            )));
        }
    }

    // Transplant the boundary decoder; everything else ships from the
    // region run (including the prompt encoder).
    let prefix = DecoderHead::Boundary.param_prefix();
    let mut moved = 0usize;
    for (name, value) in &boundary.arrays {
        if !name.starts_with(prefix) {
            continue;
        }
        let entry = sam_params.entry(name).ok_or_else(|| {
            Error::SchemaError(format!("boundary checkpoint carries unknown parameter {name}"))
        })?;
        if entry.shape() != value.shape() {
            return Err(Error::SchemaError(format!(
                "boundary decoder parameter {name} has shape {:?}, expected {:?}",
                value.shape(),
                entry.shape()
            )));
        }
        sam_params.set(name, value.clone());
        moved += 1;
    }
    if moved == 0 {
        return Err(Error::SchemaError(
            "boundary checkpoint holds no boundary-decoder parameters".into(),
        ));
    }

    Ok(Predictor {
        prompter_cfg: config.prompter_config(),
        sam_cfg: config.sam_config(),
        settings: config.prompt_settings(),
        flags: config.ablation_flags(),
        config,
        prompter_params,
        sam_params,
    })
}

/// One tile's binary predictions.
pub struct TilePrediction {
    /// Thresholded prompter probability (the stage-1 farmland estimate).
    pub prompter: Raster,
    /// Thresholded region-head output.
    pub region: Raster,
    /// Thresholded boundary-head output.
    pub boundary: Raster,
}

fn sigmoid_plane(logits: &Array2<f64>) -> Array2<f64> {
    logits.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

fn probability_raster(p: Array2<f64>, meaning: &str) -> Result<Raster> {
    Raster::from_plane(p, Domain::Probability, meaning)
}

impl Predictor {
    /// Runs both stages on one normalized CHW tile. Point prompts are drawn
    /// from `point_seed`; a probability map with no eligible pixels simply
    /// yields no points.
    pub fn predict_tile(&self, image: &Array3<f64>, point_seed: u64) -> Result<TilePrediction> {
        let (c, h, w) = image.dim();
        if c != 3 || (h, w) != self.sam_cfg.input_size {
            return Err(Error::ShapeError(format!(
                "tile is {c}x{h}x{w}, expected 3x{}x{}",
                self.sam_cfg.input_size.0, self.sam_cfg.input_size.1
            )));
        }
        let mp = prompter_mask_prompt(&self.prompter_cfg, &self.prompter_params, image)?;
        let prob = to_probability_map(&mp)?;
        let prompter =
            binarize(&probability_raster(prob.values().clone(), "prompter probability")?, 0.5)?;

        let pp = if self.flags.pp {
            sample_prediction_points(&prob, &self.settings, point_seed)?
        } else {
            None
        };
        let image4 = image
            .clone()
            .into_dyn()
            .into_shape_with_order(ndarray::IxDyn(&[1, 3, h, w]))
            .expect("add batch axis");
        let pair = predict_pair(
            &self.sam_cfg,
            &self.sam_params,
            &image4,
            self.flags.mp.then_some(&mp),
            pp.as_ref(),
        )?;
        let region =
            binarize(&probability_raster(sigmoid_plane(&pair.region), "region probability")?, 0.5)?;
        let boundary = binarize(
            &probability_raster(sigmoid_plane(&pair.boundary), "boundary probability")?,
            0.5,
        )?;
        Ok(TilePrediction { prompter, region, boundary })
    }
}

fn sample_prediction_points(
    prob: &ProbabilityMap,
    settings: &PromptSettings,
    seed: u64,
) -> Result<Option<PointPromptSet>> {
    match generate_point_prompts(
        prob,
        settings.n_fg,
        settings.n_bg,
        seed,
        settings.t_fg,
        settings.t_bg,
    ) {
        Ok(set) => Ok(Some(set)),
        Err(Error::NoEligiblePixels(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Loads an 8-bit RGB tile and normalizes it to `[0, 1]` CHW.
pub fn load_tile_image(path: &Path) -> Result<Array3<f64>> {
    let raster = load_rgb8(path)?;
    let px = raster.pixels();
    let (h, w, c) = px.dim();
    if c != 3 {
        return Err(Error::ShapeError(format!(
            "{} has {c} channels, expected RGB",
            path.display()
        )));
    }
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out[[ch, y, x]] = px[[y, x, ch]] / 255.0;
            }
        }
    }
    Ok(out)
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::DataError(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no .png files in {}", dir.display())));
    }
    Ok(files)
}

/// Bounding boxes and areas of every parcel in a label map, in label order.
fn parcel_rows(tile: &str, parcels: &ParcelMap) -> Vec<String> {
    let n = parcels.parcel_count as usize;
    let mut area = vec![0usize; n + 1];
    let mut min_y = vec![usize::MAX; n + 1];
    let mut min_x = vec![usize::MAX; n + 1];
    let mut max_y = vec![0usize; n + 1];
    let mut max_x = vec![0usize; n + 1];
    for ((y, x), &label) in parcels.labels.indexed_iter() {
        let l = label as usize;
        if l == 0 {
            continue;
        }
        area[l] += 1;
        min_y[l] = min_y[l].min(y);
        min_x[l] = min_x[l].min(x);
        max_y[l] = max_y[l].max(y);
        max_x[l] = max_x[l].max(x);
    }
    (1..=n)
        .map(|l| {
            format!(
                "{tile},{l},{},{},{},{},{}",
                area[l], min_y[l], min_x[l], max_y[l], max_x[l]
            )
        })
        .collect()
}

/// Runs the predictor over every PNG tile in `images`, writing binary region,
/// boundary, and stage-1 prompter masks, parcel label maps, and a parcel
/// summary (`tile,parcel_id,area_px,min_y,min_x,max_y,max_x`) under `out`.
pub fn run_predict(
    prompter_ckpt: &Path,
    region_ckpt: &Path,
    boundary_ckpt: &Path,
    images: &Path,
    out: &Path,
) -> Result<()> {
    let predictor = load_predictor(prompter_ckpt, region_ckpt, boundary_ckpt)?;
    for sub in ["region", "boundary", "parcels", "prompter"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let mut summary = vec!["tile,parcel_id,area_px,min_y,min_x,max_y,max_x".to_string()];
    for (index, path) in sorted_pngs(images)?.iter().enumerate() {
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::DataError(format!("unusable image path {}", path.display())))?
            .to_string();
        let image = load_tile_image(path)?;
        let seed = derive_seed(predictor.config.data.seed, &[TAG_PREDICT_POINTS, index as u64]);
        let pred = predictor.predict_tile(&image, seed)?;
        save_mask(&out.join("prompter").join(&name), &pred.prompter)?;
        save_mask(&out.join("region").join(&name), &pred.region)?;
        save_mask(&out.join("boundary").join(&name), &pred.boundary)?;
        let parcels = extract_parcels(&pred.region, &pred.boundary, MIN_PARCEL_AREA)?;
        save_label_map(&out.join("parcels").join(&name), &parcels.labels)?;
        let stem = name.trim_end_matches(".png");
        summary.extend(parcel_rows(stem, &parcels));
    }
    std::fs::write(out.join("parcels.csv"), summary.join("\n") + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluation

/// Micro-averaged scores for one predicted class folder.
#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub region: ClassMetrics,
    pub boundary: ClassMetrics,
    pub miou: f64,
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Accumulates confusion counts for one class folder pair.
fn class_counts(pred_dir: &Path, gt_dir: &Path) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for path in sorted_pngs(pred_dir)? {
        let name = path.file_name().expect("listed file has a name");
        let gt_path = gt_dir.join(name);
        if !gt_path.exists() {
            return Err(Error::DataError(format!(
                "no ground truth for {} at {}",
                path.display(),
                gt_path.display()
            )));
        }
        let pred = load_mask(&path)?;
        let gt = load_mask(&gt_path)?;
        counts.accumulate(&confusion_counts(&pred, &gt)?);
    }
    Ok(counts)
}

/// Scores predicted region and boundary masks against ground truth. Both
/// directories must hold `region/` and `boundary/` subdirectories with
/// matching file names. Writes a CSV report (percentages, 2 decimals) and
/// returns the summary.
pub fn run_evaluate(pred: &Path, gt: &Path, report: &Path) -> Result<EvalSummary> {
    let region = pixel_metrics(&class_counts(&pred.join("region"), &gt.join("region"))?)?;
    let boundary = pixel_metrics(&class_counts(&pred.join("boundary"), &gt.join("boundary"))?)?;
    let miou = mean_iou(region.iou, boundary.iou)?;
    let mut text = String::from("class,iou,f1,accuracy\n");
    text.push_str(&format!(
        "region,{},{},{}\n",
        percent(region.iou),
        percent(region.f1),
        percent(region.accuracy)
    ));
    text.push_str(&format!(
        "boundary,{},{},{}\n",
        percent(boundary.iou),
        percent(boundary.f1),
        percent(boundary.accuracy)
    ));
    text.push_str(&format!("miou,{}\n", percent(miou)));
    if let Some(parent) = report.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(report, text)?;
    Ok(EvalSummary { region, boundary, miou })
}

// ---------------------------------------------------------------------------
// ablation study

/// The five standard study rows: everything on, then each switch off alone.
pub fn ablation_rows() -> Vec<(&'static str, AblationFlags)> {
    let on = AblationFlags::default();
    vec![
        ("full", on),
        ("no_ftd", AblationFlags { ftd: false, ..on }),
        ("no_ftpe", AblationFlags { ftpe: false, ..on }),
        ("no_mp", AblationFlags { mp: false, ..on }),
        ("no_pp", AblationFlags { pp: false, ..on }),
    ]
}

/// Scores one fine-tuned configuration over the given samples in memory.
fn score_row(
    cfg: &PipelineConfig,
    prompter_params: &ParamSet,
    samples: &[Sample],
    flags: AblationFlags,
) -> Result<(ClassMetrics, ClassMetrics)> {
    let pcfg = cfg.prompter_config();
    let scfg = cfg.sam_config();
    let mut heads = Vec::with_capacity(2);
    for head in [DecoderHead::Region, DecoderHead::Boundary] {
        let plan = FinetunePlan {
            prompter_cfg: &pcfg,
            prompter_params,
            sam_cfg: &scfg,
            prompts: cfg.prompt_settings(),
            loss: cfg.finetune_loss_weights(),
            train: cfg.finetune_train_config(),
            flags,
            head,
        };
        let outcome = finetune_sam_block(&plan, init_sam_block(cfg)?, samples, |_| {})?;
        heads.push(outcome.params);
    }

    let predictor = Predictor {
        config: cfg.clone(),
        prompter_cfg: pcfg,
        sam_cfg: scfg,
        prompter_params: prompter_params.deep_clone(),
        sam_params: merge_heads(&heads[0], &heads[1]),
        settings: cfg.prompt_settings(),
        flags,
    };
    let mut region_counts = ConfusionCounts::default();
    let mut boundary_counts = ConfusionCounts::default();
    for (index, sample) in samples.iter().enumerate() {
        let seed = derive_seed(cfg.data.seed, &[TAG_PREDICT_POINTS, index as u64]);
        let pred = predictor.predict_tile(&sample.image, seed)?;
        let gt_region =
            Raster::from_plane(sample.region.clone(), Domain::Binary, "region ground truth")?;
        let gt_boundary =
            Raster::from_plane(sample.boundary.clone(), Domain::Binary, "boundary ground truth")?;
        region_counts.accumulate(&confusion_counts(&pred.region, &gt_region)?);
        boundary_counts.accumulate(&confusion_counts(&pred.boundary, &gt_boundary)?);
    }
    Ok((pixel_metrics(&region_counts)?, pixel_metrics(&boundary_counts)?))
}

/// Takes the region run's parameters and transplants the boundary run's
/// decoder, mirroring the checkpoint merge done at prediction time.
fn merge_heads(region_run: &ParamSet, boundary_run: &ParamSet) -> ParamSet {
    let merged = region_run.deep_clone();
    let prefix = DecoderHead::Boundary.param_prefix();
    boundary_run.for_each_value(|name, value| {
        if name.starts_with(prefix) {
            merged.set(name, value.clone());
        }
    });
    merged
}

/// Trains the prompter once, then fine-tunes and scores all five study
/// rows against the manifest's tiles, writing a comparison table
/// (`config,region_iou,region_f1,boundary_iou,boundary_f1`; percentages).
pub fn run_ablate(cfg: &PipelineConfig, manifest: &Path, out_table: &Path) -> Result<()> {
    let samples = load_training_samples(cfg, manifest)?;
    eprintln!("[ablate] training the shared stage-1 prompter");
    let prompter = train_prompter(
        &cfg.prompter_config(),
        &cfg.prompter_loss_weights(),
        &cfg.prompter_train_config(),
        &samples,
        progress_logger("prompter", 50),
    )?;

    let mut table = vec!["config,region_iou,region_f1,boundary_iou,boundary_f1".to_string()];
    for (label, flags) in ablation_rows() {
        eprintln!("[ablate] fine-tuning row {label}");
        let (region, boundary) = score_row(cfg, &prompter.params, &samples, flags)?;
        table.push(format!(
            "{label},{},{},{},{}",
            percent(region.iou),
            percent(region.f1),
            percent(boundary.iou),
            percent(boundary.f1)
        ));
    }
    if let Some(parent) = out_table.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out_table, table.join("\n") + "\n")?;
    Ok(())
}
