//! Rasterization of scenes to RGB images and PNG input/output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{GenConfig, Scene, SceneError};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (width * height * 3) as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let k = ((y * self.width + x) * 3) as usize;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let k = ((y * self.width + x) * 3) as usize;
        self.data[k..k + 3].copy_from_slice(&c);
    }

    pub fn save_png(&self, path: &Path) -> Result<(), SceneError> {
        let file = File::create(path).map_err(|e| SceneError::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| SceneError::Png { path: path.to_path_buf(), message: e.to_string() };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&self.data).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    /// Reads 8-bit RGB, RGBA, gray or gray-alpha PNGs; alpha is dropped.
    pub fn load_png(path: &Path) -> Result<Self, SceneError> {
        let file = File::open(path).map_err(|e| SceneError::io(path, e))?;
        let png_err = |message: String| SceneError::Png { path: path.to_path_buf(), message };
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
        buf.truncate(info.buffer_size());
        let channels = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            other => return Err(png_err(format!("unsupported color type {other:?}"))),
        };
        let data = buf
            .chunks_exact(channels)
            .flat_map(|px| if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] })
            .collect();
        Ok(Self { width: info.width, height: info.height, data })
    }
}

/// Saturated hue per category; categories past the table wrap around.
const PALETTE: [[f64; 3]; 6] = [
    [220.0, 50.0, 40.0],
    [40.0, 180.0, 60.0],
    [40.0, 80.0, 220.0],
    [230.0, 200.0, 40.0],
    [200.0, 50.0, 200.0],
    [40.0, 200.0, 210.0],
];

const FOG: [f64; 3] = [165.0, 170.0, 180.0];

fn fog_amount(depth: f64, cfg: &GenConfig) -> f64 {
    let near = cfg.depth_levels[0] * (1.0 - cfg.depth_jitter);
    let far = cfg.depth_levels[cfg.depth_levels.len() - 1] * (1.0 + cfg.depth_jitter);
    if far <= near {
        return 0.0;
    }
    ((depth - near) / (far - near)).clamp(0.0, 1.0) * cfg.max_fog
}

/// Paint the scene: a fogged background gradient, each visible part colored by
/// its category and faded toward the fog color with depth, and a darker
/// one-pixel rim along every part edge so overlaps show which part is on top.
pub fn render(scene: &Scene, cfg: &GenConfig) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x5eed_1ace);
    let mut img = RgbImage::new(scene.width, scene.height);
    let h = f64::from(scene.height.max(2) - 1);
    for y in 0..scene.height {
        for x in 0..scene.width {
            let mut c = match scene.owner(x, y) {
                None => {
                    let t = f64::from(y) / h;
                    FOG.map(|v| v * (1.05 - 0.15 * t))
                }
                Some(o) => {
                    let obj = &scene.objects[usize::from(o.object)];
                    let part = &obj.parts[usize::from(o.part)];
                    let base = PALETTE[obj.category % PALETTE.len()];
                    let f = fog_amount(part.depth, cfg);
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        c[k] = base[k] * (1.0 - f) + FOG[k] * f;
                    }
                    let r = part.rect;
                    if x == r.x0 || y == r.y0 || x + 1 == r.x1 || y + 1 == r.y1 {
                        c = c.map(|v| v * 0.45);
                    }
                    c
                }
            };
            if cfg.noise > 0.0 {
                for v in &mut c {
                    *v += rng.random_range(-cfg.noise..=cfg.noise);
                }
            }
            img.put(x, y, c.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}
