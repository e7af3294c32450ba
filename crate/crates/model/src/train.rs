//! Training loop, batched prediction and evaluation helpers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use occlu_core::evaluation::{evaluate, Metrics};
use occlu_core::inference::{nms, select_for_eval};
use occlu_core::loss::image_loss;
use occlu_core::matching::hungarian_match;
use occlu_core::{PairAnnotation, Prediction};
use occlu_scene::{Dataset, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, random_scale, to_batch, AugmentConfig, FloatImage};
use crate::checkpoint::save_checkpoint;
use crate::config::MIN_IMAGE_SIDE;
use crate::optim::{clip_global_norm, Adam, LrSchedule};
use crate::{ImageBatch, Model, ModelConfig, ModelError, Outputs, Real, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Global gradient norm limit; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Validate every this many epochs; 0 disables validation.
    pub validate_every: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 40,
            batch_size: 16,
            schedule: LrSchedule::default(),
            clip_norm: 0.1,
            seed: 0,
            augment: AugmentConfig::default(),
            validate_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be at least 1".into()));
        }
        if !(self.schedule.base > 0.0 && self.schedule.drop_factor > 0.0 && self.clip_norm >= 0.0) {
            return Err(ModelError::Config("learning rate, drop factor and clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// A decoded image with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub image: FloatImage,
    pub num_objects: usize,
    pub pairs: Vec<PairAnnotation<f64>>,
}

pub fn load_samples(dataset: &Dataset, split: Split) -> Result<Vec<Sample>, ModelError> {
    dataset
        .split(split)
        .map(|r| {
            Ok(Sample {
                image_id: r.image_id.clone(),
                image: FloatImage::from_rgb(&dataset.load_image(r)?),
                num_objects: r.num_objects,
                pairs: r.pairs.clone(),
            })
        })
        .collect()
}

/// Per-image means of the loss components over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub total: f64,
    pub class: f64,
    pub regression: f64,
    pub intersection: f64,
    /// Matching cost per target pair.
    pub matched_cost: f64,
}

/// Match, score and differentiate a forward pass. The seeds are gradients of
/// the batch mean of the per-image loss.
pub fn batch_loss<F: Real>(
    model: &Model<F>,
    tape: &Tape<'_, F>,
    out: &Outputs,
    targets: &[Vec<PairAnnotation<F>>],
) -> Result<(BatchLoss, Vec<(Var, Array2<F>)>), ModelError> {
    if targets.len() != out.batch {
        return Err(ModelError::Shape(format!("{} target lists for a batch of {}", targets.len(), out.batch)));
    }
    let w = model.config.loss.cast::<F>();
    let mode = model.config.intersection_mode();
    let preds = model.predictions(tape, out);
    let mut sum = BatchLoss::default();
    let mut pairs = 0;
    let mut grads = Vec::with_capacity(out.batch);
    for (p, t) in preds.iter().zip(targets) {
        let assignment = hungarian_match(t, p, &w, mode)?;
        let (l, g) = image_loss(t, p, &assignment, &w, mode);
        sum.total += l.total.as_f64();
        sum.class += (l.class_matched + l.class_background).as_f64();
        sum.regression += l.regression.as_f64();
        sum.intersection += l.regression_intersection.as_f64();
        sum.matched_cost += assignment.total_cost.as_f64();
        pairs += t.len();
        grads.push(g);
    }
    let n = out.batch as f64;
    let mean = BatchLoss {
        total: sum.total / n,
        class: sum.class / n,
        regression: sum.regression / n,
        intersection: sum.intersection / n,
        matched_cost: sum.matched_cost / pairs.max(1) as f64,
    };
    let inv = F::lit(1.0 / n);
    let mut seeds = model.gradient_seeds(out, &grads);
    for (_, g) in &mut seeds {
        g.mapv_inplace(|v| v * inv);
    }
    Ok((mean, seeds))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub loss: f64,
    pub class_loss: f64,
    pub regression_loss: f64,
    /// Intersection-box share of the regression loss; absent without the
    /// intersection head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection_loss: Option<f64>,
    pub matched_cost: f64,
    pub grad_norm: f64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_distance_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_occlusion_f1: Option<f64>,
}

pub struct TrainOutcome<F: Real> {
    pub model: Model<F>,
    pub log: Vec<EpochRecord>,
}

fn to_f<F: Real>(pairs: &[PairAnnotation<f64>]) -> Vec<PairAnnotation<F>> {
    pairs.iter().map(PairAnnotation::cast).collect()
}

/// Train from scratch. When `out_dir` is given, the log goes to
/// `train_log.jsonl` there and checkpoints to `checkpoint_epochNNN.bin` and
/// `model.bin`. `on_epoch` sees every record as it is produced.
pub fn train<F: Real>(
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Config("empty training set".into()));
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("train_log.jsonl"))?))
        }
        None => None,
    };
    let mut model = Model::<F>::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a1e);
    let (base_h, base_w) = (cfg.model.image_height, cfg.model.image_width);
    let dropout = F::lit(cfg.model.dropout);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut acc = BatchLoss::default();
        let (mut steps, mut norm_sum) = (0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let scale = random_scale(&cfg.augment, &mut rng);
            let h = ((base_h as f64 * scale).round() as usize).max(MIN_IMAGE_SIDE);
            let w = ((base_w as f64 * scale).round() as usize).max(MIN_IMAGE_SIDE);
            let (images, targets): (Vec<_>, Vec<_>) = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let (img, pairs) = augment_sample(&s.image, &s.pairs, &cfg.augment, &mut rng);
                    (img, to_f::<F>(&pairs))
                })
                .unzip();
            let batch: ImageBatch<F> = to_batch(&images, w, h)?;
            let mut grads = {
                let mut tape = if cfg.model.dropout > 0.0 {
                    Tape::training(&model.params, dropout, rng.random())
                } else {
                    Tape::new(&model.params)
                };
                let out = model.forward(&mut tape, &batch)?;
                let (loss, seeds) = batch_loss(&model, &tape, &out, &targets)?;
                if !loss.total.is_finite() {
                    return Err(ModelError::Diverged(format!(
                        "epoch {epoch} step {steps}: loss {} (class {}, regression {})",
                        loss.total, loss.class, loss.regression
                    )));
                }
                acc.total += loss.total;
                acc.class += loss.class;
                acc.regression += loss.regression;
                acc.intersection += loss.intersection;
                acc.matched_cost += loss.matched_cost;
                tape.backward(seeds).params
            };
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(ModelError::Diverged(format!("epoch {epoch} step {steps}: gradient norm {norm}")));
            }
            norm_sum += norm;
            adam.step(&mut model.params, &grads, lr);
            steps += 1;
        }
        let n = steps as f64;
        let mut record = EpochRecord {
            epoch: epoch + 1,
            lr,
            steps,
            loss: acc.total / n,
            class_loss: acc.class / n,
            regression_loss: acc.regression / n,
            intersection_loss: cfg.model.git.then_some(acc.intersection / n),
            matched_cost: acc.matched_cost / n,
            grad_norm: norm_sum / n,
            seconds: 0.0,
            val_distance_f1: None,
            val_occlusion_f1: None,
        };
        let last = epoch + 1 == cfg.epochs;
        if cfg.validate_every > 0 && !val_set.is_empty() && ((epoch + 1) % cfg.validate_every == 0 || last) {
            let m = evaluate_samples(&model, val_set, cfg.batch_size)?;
            record.val_distance_f1 = Some(m.distance.f1);
            record.val_occlusion_f1 = Some(m.occlusion.f1);
        }
        record.seconds = start.elapsed().as_secs_f64();
        if let Some(dir) = out_dir {
            let meta = serde_json::json!({ "epoch": epoch + 1, "train": cfg });
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(&model, meta.clone(), &dir.join(format!("checkpoint_epoch{:03}.bin", epoch + 1)))?;
            }
            if last {
                save_checkpoint(&model, meta, &dir.join("model.bin"))?;
            }
        }
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &record).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        on_epoch(&record);
        log.push(record);
    }
    Ok(TrainOutcome { model, log })
}

/// Decoded predictions for every image, at the model's input resolution.
pub fn predict<F: Real>(model: &Model<F>, images: &[FloatImage], batch_size: usize) -> Result<Vec<Vec<Prediction<F>>>, ModelError> {
    let (h, w) = (model.config.image_height, model.config.image_width);
    let mut all = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let batch = to_batch(chunk, w, h)?;
        let mut tape = Tape::new(&model.params);
        let out = model.forward(&mut tape, &batch)?;
        all.extend(model.predictions(&tape, &out).iter().map(|p| p.decode()));
    }
    Ok(all)
}

/// NMS followed by keeping the top `min(n (n - 1), N)` predictions.
pub fn postprocess<F: Real>(preds: Vec<Prediction<F>>, num_objects: usize) -> Result<Vec<Prediction<F>>, ModelError> {
    Ok(select_for_eval(&nms(preds), num_objects)?)
}

/// Predictions after post-processing and ground truth, keyed by image id.
pub type EvalInputs<F> = (BTreeMap<String, Vec<Prediction<F>>>, BTreeMap<String, Vec<PairAnnotation<F>>>);

pub fn eval_inputs<F: Real>(model: &Model<F>, samples: &[Sample], batch_size: usize) -> Result<EvalInputs<F>, ModelError> {
    let images: Vec<FloatImage> = samples.iter().map(|s| s.image.clone()).collect();
    let raw = predict(model, &images, batch_size)?;
    let mut preds = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for (s, p) in samples.iter().zip(raw) {
        preds.insert(s.image_id.clone(), postprocess(p, s.num_objects)?);
        gts.insert(s.image_id.clone(), to_f::<F>(&s.pairs));
    }
    Ok((preds, gts))
}

pub fn evaluate_samples<F: Real>(model: &Model<F>, samples: &[Sample], batch_size: usize) -> Result<Metrics, ModelError> {
    let (preds, gts) = eval_inputs(model, samples, batch_size)?;
    Ok(evaluate(&preds, &gts)?)
}
