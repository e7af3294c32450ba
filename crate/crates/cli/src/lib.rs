//! Command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use occlu_core::evaluation::{evaluate, good_detection_precision, GoodDetectionTable, Metrics};
use occlu_core::inference::{nms_ranked, RankBy};
use occlu_core::Prediction;
use occlu_model::augment::FloatImage;
use occlu_model::checkpoint::load_checkpoint;
use occlu_model::train::{eval_inputs, load_samples, postprocess, predict, train, TrainConfig};
use occlu_model::{DecoderKind, ImageBatch, Model, Tape};
use occlu_scene::{load_dataset, synthesize, GenConfig, RgbImage, Split};
use serde::Serialize;

pub mod viz;

/// IoU threshold for the good-detection precision table.
pub const GOOD_DETECTION_IOU: f64 = 0.6;

#[derive(Debug, Parser)]
#[command(name = "occlu", version, about = "Relative occlusion and distance detection between object pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic layered-scene dataset.
    Synth(SynthArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Run inference on a dataset split and write a metrics report.
    Eval(EvalArgs),
    /// Predict relationships for one image.
    Infer(InferArgs),
    /// Write cross-attention heatmaps for one query.
    VizAttention(VizArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of training scenes (one sampled pair each).
    #[arg(long)]
    pub count: usize,
    /// Number of validation scenes (all pairs annotated).
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    /// Number of test scenes (all pairs annotated).
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    /// Generator settings as TOML; defaults otherwise.
    #[arg(long)]
    pub gen_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training settings as TOML; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Predict the generalized intersection box.
    #[arg(long, overrides_with = "no_git")]
    pub git: bool,
    #[arg(long, overrides_with = "git")]
    pub no_git: bool,
    /// Supervise the intersection box for non-overlapping pairs as well.
    #[arg(long, overrides_with = "no_pini")]
    pub pini: bool,
    #[arg(long, overrides_with = "pini")]
    pub no_pini: bool,
    /// Read the relationship heads from the pair decoder.
    #[arg(long)]
    pub single_decoder: bool,
    #[arg(long)]
    pub layers_pair: Option<usize>,
    #[arg(long)]
    pub layers_dist: Option<usize>,
    #[arg(long)]
    pub layers_occl: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output JSON report.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory for `predictions.json` and `annotated.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of objects in the image; keeps the top `n (n - 1)` predictions.
    #[arg(long)]
    pub num_objects: Option<usize>,
    /// Predictions kept when `--num-objects` is not given.
    #[arg(long, default_value_t = 6)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Query index; defaults to the most confident prediction.
    #[arg(long)]
    pub query: Option<usize>,
    #[arg(long, default_value = "occlusion")]
    pub decoder: DecoderKind,
    /// Decoder layer, counted from 0; defaults to the last one.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Attention head; all heads when omitted.
    #[arg(long)]
    pub head: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?}, expected train, val or test")),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Infer(a) => infer(a),
        Command::VizAttention(a) => viz_attention(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg: GenConfig = match &a.gen_config {
        Some(p) => read_toml(p)?,
        None => GenConfig::default(),
    };
    let splits: Vec<(Split, usize)> =
        [(Split::Train, a.count), (Split::Val, a.val), (Split::Test, a.test)].into_iter().filter(|s| s.1 > 0).collect();
    ensure!(!splits.is_empty(), "nothing to generate: all counts are zero");
    let ds = synthesize(&a.out, &cfg, &splits, a.seed)?;
    println!("wrote {} images to {}", ds.records.len(), a.out.display());
    Ok(())
}

/// Training settings from the optional file with command-line overrides.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.git {
        cfg.model.git = true;
    }
    if a.no_git {
        cfg.model.git = false;
    }
    if a.pini {
        cfg.model.pini = true;
    }
    if a.no_pini {
        cfg.model.pini = false;
    }
    if a.single_decoder {
        cfg.model.single_decoder = true;
    }
    if let Some(n) = a.layers_pair {
        cfg.model.pair_layers = n;
    }
    if let Some(n) = a.layers_dist {
        cfg.model.distance_layers = n;
    }
    if let Some(n) = a.layers_occl {
        cfg.model.occlusion_layers = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let ds = load_dataset(&a.data)?;
    occlu_scene::dataset::check_categories(&ds, cfg.model.num_classes)?;
    let tr = load_samples(&ds, Split::Train)?;
    ensure!(!tr.is_empty(), "{} has no training images", a.data.display());
    let va = load_samples(&ds, Split::Val)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("train_config.toml"), toml::to_string(&cfg)?)?;
    train::<f32>(&cfg, &tr, &va, Some(&a.out), |r| {
        let val = match (r.val_distance_f1, r.val_occlusion_f1) {
            (Some(d), Some(o)) => format!(" val F1 distance {d:.3} occlusion {o:.3}"),
            _ => String::new(),
        };
        println!("epoch {:>3} loss {:.4} ({:.0}s){val}", r.epoch, r.loss, r.seconds);
    })?;
    println!("checkpoint written to {}", a.out.join("model.bin").display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub split: String,
    pub metrics: Metrics,
    pub good_detection: GoodDetectionTable,
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let samples = load_samples(&ds, a.split)?;
    ensure!(!samples.is_empty(), "split {} of {} is empty", a.split.name(), a.data.display());
    let (preds, gts) = eval_inputs(&model, &samples, a.batch_size)?;
    let report = EvalReport {
        checkpoint: a.checkpoint.display().to_string(),
        split: a.split.name().to_string(),
        metrics: evaluate(&preds, &gts)?,
        good_detection: good_detection_precision(&preds, &gts, GOOD_DETECTION_IOU)?,
    };
    write_json(&a.report, &report)?;
    let m = &report.metrics;
    println!(
        "{} images: distance F1 {:.4} (P {:.4} R {:.4}), occlusion F1 {:.4} (P {:.4} R {:.4})",
        m.num_images, m.distance.f1, m.distance.precision, m.distance.recall, m.occlusion.f1, m.occlusion.precision,
        m.occlusion.recall
    );
    Ok(())
}

fn load_image(path: &Path) -> Result<(RgbImage, FloatImage)> {
    let img = RgbImage::load_png(path).with_context(|| format!("loading {}", path.display()))?;
    let f = FloatImage::from_rgb(&img);
    Ok((img, f))
}

fn infer(a: InferArgs) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.checkpoint)?;
    let (img, f) = load_image(&a.image)?;
    let raw = predict(&model, &[f], 1)?.remove(0);
    let preds: Vec<Prediction<f32>> = match a.num_objects {
        Some(n) => postprocess(raw, n)?,
        None => {
            let mut p = occlu_core::inference::nms(raw);
            p.truncate(a.top);
            p
        }
    };
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("predictions.json"), &preds)?;
    let mut canvas = img.clone();
    for p in preds.iter().rev() {
        viz::draw_box(&mut canvas, &p.box_b.cast(), [40, 90, 255], 1);
        viz::draw_box(&mut canvas, &p.box_a.cast(), [255, 40, 40], 1);
    }
    canvas.save_png(&a.out.join("annotated.png"))?;
    for (i, p) in preds.iter().enumerate() {
        println!(
            "{i}: query {} A=class {} B=class {} distance {} occlusion {} confidence {:.3}",
            p.query,
            p.cat_a,
            p.cat_b,
            p.distance.name(),
            p.occlusion.name(),
            p.confidence
        );
    }
    Ok(())
}

/// The most confident query by relationship and object confidence.
pub fn top_query(preds: Vec<Prediction<f32>>) -> Option<usize> {
    let mut preds = preds;
    nms_ranked(&mut preds, RankBy::RelationshipAndObjects);
    preds.first().map(|p| p.query)
}

fn viz_attention(a: VizArgs) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.checkpoint)?;
    let (img, f) = load_image(&a.image)?;
    let cfg = &model.config;
    if cfg.single_decoder && a.decoder != DecoderKind::Pair {
        bail!("this model has no {} decoder (trained with a single decoder)", a.decoder.name());
    }
    let layers = match a.decoder {
        DecoderKind::Pair => cfg.pair_layers,
        DecoderKind::Distance => cfg.distance_layers,
        DecoderKind::Occlusion => cfg.occlusion_layers,
    };
    let layer = a.layer.unwrap_or(layers - 1);
    ensure!(layer < layers, "layer {layer} out of range: the {} decoder has {layers}", a.decoder.name());
    if let Some(h) = a.head {
        ensure!(h < cfg.heads, "head {h} out of range: the model has {} heads", cfg.heads);
    }

    let batch: ImageBatch<f32> = occlu_model::augment::to_batch(&[f], cfg.image_width, cfg.image_height)?;
    let mut tape = Tape::new(&model.params);
    let out = model.forward(&mut tape, &batch)?;
    let query = match a.query {
        Some(q) => q,
        None => top_query(model.predictions(&tape, &out)[0].decode()).context("model produced no predictions")?,
    };
    ensure!(query < cfg.queries, "query {query} out of range: the model has {} queries", cfg.queries);
    let record = model.attention_record(&tape, &out, 0);
    let maps = record.get(a.decoder, layer).context("attention layer missing")?;
    fs::create_dir_all(&a.out)?;
    let heads: Vec<usize> = a.head.map_or_else(|| (0..cfg.heads).collect(), |h| vec![h]);
    for h in heads {
        let row: Vec<f64> = maps.heads[h].row(query).iter().map(|&v| f64::from(v)).collect();
        let values = viz::upsample(&row, record.grid, img.width as usize, img.height as usize);
        let heat = viz::heatmap(&values, img.width, img.height);
        let stem = format!("{}_layer{layer}_head{h}_query{query}", a.decoder.name());
        heat.save_png(&a.out.join(format!("{stem}.png")))?;
        viz::blend(&img, &heat, 0.5).save_png(&a.out.join(format!("{stem}_overlay.png")))?;
        println!("wrote {stem}.png");
    }
    Ok(())
}

/// Ground truth and predictions of a split, keyed by image id, for scripting.
pub fn split_predictions(
    model: &Model<f32>,
    data: &Path,
    split: Split,
) -> Result<BTreeMap<String, Vec<Prediction<f32>>>> {
    let ds = load_dataset(data)?;
    let samples = load_samples(&ds, split)?;
    Ok(eval_inputs(model, &samples, 16)?.0)
}
