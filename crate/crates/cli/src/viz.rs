//! Attention heatmaps and prediction overlays.

use occlu_core::BBox;
use occlu_model::augment::FloatImage;
use occlu_scene::RgbImage;

/// Blue (0) through cyan, yellow to red (1).
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |center: f64| ((1.5 - (4.0 * t - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Bilinearly upsample a row-major `grid` map to `width x height`, then
/// divide by the maximum so the values span `[0, 1]`.
pub fn upsample(map: &[f64], grid: (usize, usize), width: usize, height: usize) -> Vec<f64> {
    assert_eq!(map.len(), grid.0 * grid.1, "map does not match its grid");
    let small = FloatImage {
        width: grid.1,
        height: grid.0,
        data: map.iter().flat_map(|&v| [v as f32; 3]).collect(),
    };
    let mut out: Vec<f64> = small.resize(width, height).data.chunks_exact(3).map(|p| f64::from(p[0])).collect();
    let max = out.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    out
}

pub fn heatmap(values: &[f64], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            img.put(x, y, heat_color(values[(y * width + x) as usize]));
        }
    }
    img
}

/// `alpha * top + (1 - alpha) * base`, pixelwise.
pub fn blend(base: &RgbImage, top: &RgbImage, alpha: f64) -> RgbImage {
    assert_eq!((base.width, base.height), (top.width, top.height));
    let data = base
        .data
        .iter()
        .zip(&top.data)
        .map(|(&b, &t)| (alpha * f64::from(t) + (1.0 - alpha) * f64::from(b)).round() as u8)
        .collect();
    RgbImage { width: base.width, height: base.height, data }
}

/// Outline a normalized box.
pub fn draw_box(img: &mut RgbImage, b: &BBox<f64>, color: [u8; 3], thickness: u32) {
    let b = b.clamped();
    let (w, h) = (f64::from(img.width), f64::from(img.height));
    let px = |v: f64, side: f64| ((v * side).round() as u32).min(side as u32 - 1);
    let (x0, x1) = (px(b.x_min, w), px(b.x_max, w));
    let (y0, y1) = (px(b.y_min, h), px(b.y_max, h));
    for t in 0..thickness {
        for x in x0..=x1 {
            for y in [y0.saturating_add(t).min(y1), y1.saturating_sub(t).max(y0)] {
                img.put(x, y, color);
            }
        }
        for y in y0..=y1 {
            for x in [x0.saturating_add(t).min(x1), x1.saturating_sub(t).max(x0)] {
                img.put(x, y, color);
            }
        }
    }
}
