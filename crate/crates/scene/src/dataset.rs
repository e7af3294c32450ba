//! On-disk dataset: `images/{id}.png` next to a line-delimited
//! `annotations.jsonl`, one record per image.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use occlu_core::PairAnnotation;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{generate_scene, render, GenConfig, RgbImage, Scene, SceneError};

pub const SCHEMA_VERSION: u32 = 1;
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Annotations of one image. Training records carry a single sampled ordered
/// pair; evaluation records carry all `n (n - 1)` ordered pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub schema: u32,
    pub image_id: String,
    pub split: Split,
    pub width: u32,
    pub height: u32,
    /// Number of annotated objects in the image.
    pub num_objects: usize,
    pub pairs: Vec<PairAnnotation<f64>>,
}

impl ImageRecord {
    pub fn from_scene(scene: &Scene, image_id: String, split: Split, cfg: &GenConfig) -> Self {
        let mut pairs = scene.all_pairs(cfg.same_band);
        if split == Split::Train && !pairs.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed.rotate_left(17) ^ 0xa11_0ca7e);
            let k = rng.random_range(0..pairs.len());
            pairs = vec![pairs[k]];
        }
        Self {
            schema: SCHEMA_VERSION,
            image_id,
            split,
            width: scene.width,
            height: scene.height,
            num_objects: scene.objects.len(),
            pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
}

impl Dataset {
    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(IMAGES_DIR).join(format!("{}.png", record.image_id))
    }

    pub fn load_image(&self, record: &ImageRecord) -> Result<RgbImage, SceneError> {
        RgbImage::load_png(&self.image_path(record))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

fn check_record(r: &ImageRecord, line: usize, num_categories: Option<usize>) -> Result<(), SceneError> {
    let invalid = |message: String| Err(SceneError::Record { line, message });
    if r.image_id.is_empty() || r.image_id.contains(['/', '\\']) || r.image_id.starts_with('.') {
        return invalid(format!("image_id {:?} is not a plain file stem", r.image_id));
    }
    if r.split != Split::Train && r.pairs.len() != r.num_objects * r.num_objects.saturating_sub(1) {
        return invalid(format!(
            "evaluation record has {} pairs but {} objects need {}",
            r.pairs.len(),
            r.num_objects,
            r.num_objects * r.num_objects.saturating_sub(1)
        ));
    }
    if let Some(nc) = num_categories {
        for p in &r.pairs {
            if let Err(e) = p.check_categories(nc) {
                return invalid(e.to_string());
            }
        }
    }
    Ok(())
}

/// Write records and their images under `root`.
pub fn export_dataset(root: &Path, items: &[(ImageRecord, RgbImage)]) -> Result<Dataset, SceneError> {
    let images = root.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(|e| SceneError::io(&images, e))?;
    let path = root.join(ANNOTATIONS_FILE);
    let file = File::create(&path).map_err(|e| SceneError::io(&path, e))?;
    let mut out = BufWriter::new(file);
    let mut seen = HashSet::new();
    for (line, (record, image)) in items.iter().enumerate() {
        check_record(record, line + 1, None)?;
        if !seen.insert(record.image_id.as_str()) {
            return Err(SceneError::Record { line: line + 1, message: format!("duplicate image_id {}", record.image_id) });
        }
        image.save_png(&images.join(format!("{}.png", record.image_id)))?;
        let json = serde_json::to_string(record).map_err(|e| SceneError::Json { line: line + 1, column: 0, source: e })?;
        writeln!(out, "{json}").map_err(|e| SceneError::io(&path, e))?;
    }
    out.flush().map_err(|e| SceneError::io(&path, e))?;
    Ok(Dataset { root: root.to_path_buf(), records: items.iter().map(|(r, _)| r.clone()).collect() })
}

/// Read `annotations.jsonl` under `root`. Blank lines are skipped; every other
/// line must be a record of the current schema version.
pub fn load_dataset(root: &Path) -> Result<Dataset, SceneError> {
    let path = root.join(ANNOTATIONS_FILE);
    let file = File::open(&path).map_err(|e| SceneError::io(&path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| SceneError::io(&path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| SceneError::Json { line: line_no, column: e.column(), source: e })?;
        match value.get("schema").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            found => return Err(SceneError::Schema { line: line_no, found, expected: SCHEMA_VERSION }),
        }
        let record: ImageRecord = serde_json::from_value(value)
            .map_err(|e| SceneError::Json { line: line_no, column: e.column(), source: e })?;
        check_record(&record, line_no, None)?;
        if !seen.insert(record.image_id.clone()) {
            return Err(SceneError::Record { line: line_no, message: format!("duplicate image_id {}", record.image_id) });
        }
        records.push(record);
    }
    Ok(Dataset { root: root.to_path_buf(), records })
}

/// Check every record's categories against a model's class count.
pub fn check_categories(dataset: &Dataset, num_categories: usize) -> Result<(), SceneError> {
    dataset.records.iter().enumerate().try_for_each(|(i, r)| check_record(r, i + 1, Some(num_categories)))
}

/// Generate, render and export scenes for each `(split, count)` in order.
/// Scene seeds are drawn from one stream seeded by `seed`.
pub fn synthesize(root: &Path, cfg: &GenConfig, splits: &[(Split, usize)], seed: u64) -> Result<Dataset, SceneError> {
    cfg.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for &(split, count) in splits {
        for i in 0..count {
            let scene = generate_scene(seeds.random(), cfg)?;
            let id = format!("{}_{i:05}", split.name());
            items.push((ImageRecord::from_scene(&scene, id, split, cfg), render(&scene, cfg)));
        }
    }
    export_dataset(root, &items)
}
