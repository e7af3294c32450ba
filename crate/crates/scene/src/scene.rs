//! Layered scenes: rectangular parts at distinct depths, the per-pixel
//! front-most owner map, and the exact pairwise labels derived from them.

use occlu_core::{BBox, DistanceClass, OcclusionClass, PairAnnotation};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{GenConfig, SceneError};

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub const fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn area(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            u64::from(self.x1 - self.x0) * u64::from(self.y1 - self.y0)
        }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersect(&self, o: &Rect) -> Option<Rect> {
        let r = Rect::new(self.x0.max(o.x0), self.y0.max(o.y0), self.x1.min(o.x1), self.y1.min(o.y1));
        (!r.is_empty()).then_some(r)
    }

    pub fn hull(&self, o: &Rect) -> Rect {
        Rect::new(self.x0.min(o.x0), self.y0.min(o.y0), self.x1.max(o.x1), self.y1.max(o.y1))
    }

    /// Normalized corner box in an image of the given size.
    pub fn to_bbox(&self, width: u32, height: u32) -> BBox<f64> {
        let (w, h) = (f64::from(width), f64::from(height));
        BBox::from_corners(
            f64::from(self.x0) / w,
            f64::from(self.y0) / h,
            f64::from(self.x1) / w,
            f64::from(self.y1) / h,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub rect: Rect,
    /// Distance from the viewpoint; smaller is nearer.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: usize,
    pub parts: Vec<Part>,
}

impl SceneObject {
    /// Object distance: the depth of its nearest part.
    pub fn distance(&self) -> f64 {
        self.parts.iter().map(|p| p.depth).fold(f64::INFINITY, f64::min)
    }

    /// Full extent of the object, hidden parts included.
    pub fn bounds(&self) -> Rect {
        let first = self.parts[0].rect;
        self.parts[1..].iter().fold(first, |acc, p| acc.hull(&p.rect))
    }

    /// Depth of the nearest part covering `(x, y)`.
    pub fn depth_at(&self, x: u32, y: u32) -> Option<f64> {
        self.parts.iter().filter(|p| p.rect.contains(x, y)).map(|p| p.depth).reduce(f64::min)
    }

    pub fn area(&self) -> u64 {
        let b = self.bounds();
        (b.y0..b.y1).map(|y| (b.x0..b.x1).filter(|&x| self.depth_at(x, y).is_some()).count() as u64).sum()
    }
}

/// Front-most part at a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Owner {
    pub object: u16,
    pub part: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    /// Row-major, `width * height` entries.
    pub pixel_owner: Vec<Option<Owner>>,
    pub seed: u64,
}

impl Scene {
    /// Validate the objects and rasterize the owner map.
    pub fn from_objects(width: u32, height: u32, objects: Vec<SceneObject>, seed: u64) -> Result<Self, SceneError> {
        let mut depths = Vec::new();
        for (i, o) in objects.iter().enumerate() {
            if o.parts.is_empty() {
                return Err(SceneError::NoParts(i));
            }
            for p in &o.parts {
                if p.rect.is_empty() || p.rect.x1 > width || p.rect.y1 > height {
                    return Err(SceneError::BadPart { object: i, rect: p.rect });
                }
                if !(p.depth > 0.0 && p.depth.is_finite()) {
                    return Err(SceneError::BadDepth { object: i, depth: p.depth });
                }
                depths.push(p.depth);
            }
        }
        depths.sort_by(f64::total_cmp);
        if let Some(w) = depths.windows(2).find(|w| w[0] == w[1]) {
            return Err(SceneError::DuplicateDepth(w[0]));
        }
        if objects.len() > usize::from(u16::MAX) {
            return Err(SceneError::Config("too many objects".into()));
        }

        let mut owner = vec![None; (width * height) as usize];
        let mut best = vec![f64::INFINITY; owner.len()];
        for (oi, o) in objects.iter().enumerate() {
            for (pi, p) in o.parts.iter().enumerate() {
                for y in p.rect.y0..p.rect.y1 {
                    for x in p.rect.x0..p.rect.x1 {
                        let k = (y * width + x) as usize;
                        if p.depth < best[k] {
                            best[k] = p.depth;
                            owner[k] = Some(Owner { object: oi as u16, part: pi as u16 });
                        }
                    }
                }
            }
        }
        Ok(Self { width, height, objects, pixel_owner: owner, seed })
    }

    pub fn owner(&self, x: u32, y: u32) -> Option<Owner> {
        self.pixel_owner[(y * self.width + x) as usize]
    }

    pub fn visible_pixels(&self, object: usize) -> usize {
        self.pixel_owner.iter().filter(|o| o.is_some_and(|o| usize::from(o.object) == object)).count()
    }

    pub fn bbox(&self, object: usize) -> BBox<f64> {
        self.objects[object].bounds().to_bbox(self.width, self.height)
    }

    /// Whether `i` hides some of `j` and whether `j` hides some of `i`,
    /// comparing the nearest surfaces of the two objects along each ray.
    ///
    /// Coverage is constant on the cells cut by the part edges, so one sample
    /// per cell decides it exactly.
    fn coverage(&self, i: usize, j: usize) -> (bool, bool) {
        let (a, b) = (&self.objects[i], &self.objects[j]);
        let Some(overlap) = a.bounds().intersect(&b.bounds()) else {
            return (false, false);
        };
        let cuts = |lo: u32, hi: u32, edges: &mut dyn Iterator<Item = u32>| {
            let mut v: Vec<u32> = edges.filter(|&e| e > lo && e < hi).chain([lo, hi]).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let parts = || a.parts.iter().chain(&b.parts).map(|p| p.rect);
        let xs = cuts(overlap.x0, overlap.x1, &mut parts().flat_map(|r| [r.x0, r.x1]));
        let ys = cuts(overlap.y0, overlap.y1, &mut parts().flat_map(|r| [r.y0, r.y1]));
        let (mut a_over_b, mut b_over_a) = (false, false);
        for &y in &ys[..ys.len() - 1] {
            for &x in &xs[..xs.len() - 1] {
                if let (Some(da), Some(db)) = (a.depth_at(x, y), b.depth_at(x, y)) {
                    if da < db {
                        a_over_b = true;
                    } else {
                        b_over_a = true;
                    }
                }
            }
        }
        (a_over_b, b_over_a)
    }

    /// Occlusion relation of object `i` (as A) to object `j` (as B).
    ///
    /// # Panics
    /// If `i == j`.
    pub fn occlusion_label(&self, i: usize, j: usize) -> OcclusionClass {
        assert_ne!(i, j, "an object has no occlusion relation with itself");
        match self.coverage(i, j) {
            (true, true) => OcclusionClass::Mutual,
            (true, false) => OcclusionClass::AOccludesB,
            (false, true) => OcclusionClass::BOccludesA,
            (false, false) => OcclusionClass::None,
        }
    }

    /// Distance relation of object `i` (as A) to object `j` (as B); `same`
    /// when the gap is at most `same_band` times the larger distance.
    ///
    /// # Panics
    /// If `i == j`.
    pub fn distance_label(&self, i: usize, j: usize, same_band: f64) -> DistanceClass {
        assert_ne!(i, j, "an object has no distance relation with itself");
        distance_class(self.objects[i].distance(), self.objects[j].distance(), same_band)
    }

    pub fn annotation(&self, i: usize, j: usize, same_band: f64) -> PairAnnotation<f64> {
        PairAnnotation {
            box_a: self.bbox(i),
            box_b: self.bbox(j),
            cat_a: self.objects[i].category,
            cat_b: self.objects[j].category,
            distance: self.distance_label(i, j, same_band),
            occlusion: self.occlusion_label(i, j),
        }
    }

    /// All `n (n - 1)` ordered pairs, A-major.
    pub fn all_pairs(&self, same_band: f64) -> Vec<PairAnnotation<f64>> {
        let n = self.objects.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.annotation(i, j, same_band))
            .collect()
    }
}

pub fn distance_class(di: f64, dj: f64, same_band: f64) -> DistanceClass {
    if (di - dj).abs() <= same_band * di.max(dj) {
        DistanceClass::Same
    } else if di < dj {
        DistanceClass::ACloser
    } else {
        DistanceClass::BCloser
    }
}

struct Sampler<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn side(&mut self, full: u32) -> u32 {
        let f = self.rng.random_range(self.cfg.min_size..=self.cfg.max_size);
        ((f * f64::from(full)).round() as u32).clamp(4, full)
    }

    fn depth(&mut self, level: usize) -> f64 {
        let j = self.cfg.depth_jitter;
        let jitter = if j > 0.0 { self.rng.random_range(-j..j) } else { 0.0 };
        self.cfg.depth_levels[level] * (1.0 + jitter)
    }

    fn start(&mut self, extent: u32, full: u32) -> u32 {
        self.rng.random_range(0..=full - extent)
    }

    /// Origin of a `w x h` rectangle, near `anchor` when given.
    fn place(&mut self, w: u32, h: u32, anchor: Option<Rect>) -> (u32, u32) {
        let (fw, fh) = (self.cfg.width, self.cfg.height);
        match anchor {
            Some(a) => {
                // any origin whose rectangle still overlaps the anchor
                let x_lo = (a.x0 + 1).saturating_sub(w).min(fw - w);
                let x_hi = (a.x1 - 1).min(fw - w).max(x_lo);
                let y_lo = (a.y0 + 1).saturating_sub(h).min(fh - h);
                let y_hi = (a.y1 - 1).min(fh - h).max(y_lo);
                (self.rng.random_range(x_lo..=x_hi), self.rng.random_range(y_lo..=y_hi))
            }
            None => (self.start(w, fw), self.start(h, fh)),
        }
    }

    fn object(&mut self, anchor: Option<Rect>) -> SceneObject {
        let cfg = self.cfg;
        let category = self.rng.random_range(0..cfg.num_categories);
        let level = self.rng.random_range(0..cfg.depth_levels.len());
        let (w, h) = (self.side(cfg.width), self.side(cfg.height));
        let (x, y) = self.place(w, h, anchor);
        let outer = Rect::new(x, y, x + w, y + h);
        let parts = self.rng.random_range(cfg.min_parts..=cfg.max_parts);
        let rects = if parts == 2 && w >= 8 && h >= 8 { self.l_shape(outer) } else { vec![outer] };
        let parts = rects.into_iter().map(|rect| Part { rect, depth: self.depth(level) }).collect();
        SceneObject { category, parts }
    }

    /// Two rectangles forming an L inside `outer`, spanning its full extent.
    fn l_shape(&mut self, outer: Rect) -> Vec<Rect> {
        let (w, h) = (outer.x1 - outer.x0, outer.y1 - outer.y0);
        let bar_h = self.rng.random_range(h / 3..=h / 2).max(2);
        let bar_w = self.rng.random_range(w / 3..=w / 2).max(2);
        let top = self.rng.random_bool(0.5);
        let left = self.rng.random_bool(0.5);
        let horizontal = if top {
            Rect::new(outer.x0, outer.y0, outer.x1, outer.y0 + bar_h)
        } else {
            Rect::new(outer.x0, outer.y1 - bar_h, outer.x1, outer.y1)
        };
        let vertical = if left {
            Rect::new(outer.x0, outer.y0, outer.x0 + bar_w, outer.y1)
        } else {
            Rect::new(outer.x1 - bar_w, outer.y0, outer.x1, outer.y1)
        };
        vec![horizontal, vertical]
    }

    /// A two-part bar with one half in front of a crossing bar and the other
    /// half behind it.
    fn interleaved_pair(&mut self) -> [SceneObject; 2] {
        let cfg = self.cfg;
        let transpose = self.rng.random_bool(0.5);
        let (fu, fv) = if transpose { (cfg.height, cfg.width) } else { (cfg.width, cfg.height) };

        let len = self.side(fu).max(16);
        let thick = (self.side(fv) / 2).max(6);
        let u0 = self.start(len, fu);
        let v0 = self.start(thick, fv);
        let split = u0 + self.rng.random_range(len / 3..=2 * len / 3);
        let cross_w = self.rng.random_range((len / 5).max(4)..=(len / 3).max(4));
        let c0 = split.saturating_sub(cross_w / 2).min(fu - cross_w);
        let cross_len = (thick + self.side(fv)).min(fv);
        let w0 = (v0 + thick / 2).saturating_sub(self.rng.random_range(0..cross_len)).min(fv - cross_len);

        let orient = |u0: u32, v0: u32, u1: u32, v1: u32| {
            if transpose {
                Rect::new(v0, u0, v1, u1)
            } else {
                Rect::new(u0, v0, u1, v1)
            }
        };
        let first = orient(u0, v0, split + 1, v0 + thick);
        let second = orient(split - 1, v0, u0 + len, v0 + thick);
        let cross = orient(c0, w0, c0 + cross_w, w0 + cross_len);

        let middle = self.rng.random_range(1..cfg.depth_levels.len() - 1);
        let near = self.rng.random_range(0..middle);
        let far = self.rng.random_range(middle + 1..cfg.depth_levels.len());
        let (d_first, d_second) =
            if self.rng.random_bool(0.5) { (self.depth(near), self.depth(far)) } else { (self.depth(far), self.depth(near)) };
        let bar = SceneObject {
            category: self.rng.random_range(0..cfg.num_categories),
            parts: vec![Part { rect: first, depth: d_first }, Part { rect: second, depth: d_second }],
        };
        let crossing = SceneObject {
            category: self.rng.random_range(0..cfg.num_categories),
            parts: vec![Part { rect: cross, depth: self.depth(middle) }],
        };
        [bar, crossing]
    }

    fn layout(&mut self) -> Vec<SceneObject> {
        let cfg = self.cfg;
        let n = self.rng.random_range(cfg.min_objects..=cfg.max_objects);
        let mut objects = Vec::with_capacity(n);
        if n >= 2 && cfg.can_interleave() && self.rng.random_bool(cfg.interleave_prob) {
            objects.extend(self.interleaved_pair());
        }
        while objects.len() < n {
            let anchor = if !objects.is_empty() && self.rng.random_bool(cfg.overlap_prob) {
                let k = self.rng.random_range(0..objects.len());
                Some(objects[k].bounds())
            } else {
                None
            };
            objects.push(self.object(anchor));
        }
        // shuffle so that construction order does not leak into object indices
        for i in (1..objects.len()).rev() {
            let j = self.rng.random_range(0..=i);
            objects.swap(i, j);
        }
        objects
    }
}

impl Scene {
    fn acceptable(&self, cfg: &GenConfig) -> bool {
        (0..self.objects.len()).all(|i| {
            let area = self.objects[i].area() as f64;
            self.visible_pixels(i) as f64 >= cfg.min_visible_fraction * area
        })
    }
}

/// Deterministic scene for `(seed, cfg)`. Layouts with a duplicated depth or
/// an object whose visible share is below `min_visible_fraction` are
/// resampled from the same random stream.
pub fn generate_scene(seed: u64, cfg: &GenConfig) -> Result<Scene, SceneError> {
    cfg.validate()?;
    let mut sampler = Sampler { cfg, rng: ChaCha8Rng::seed_from_u64(seed) };
    for _ in 0..cfg.max_attempts {
        let objects = sampler.layout();
        match Scene::from_objects(cfg.width, cfg.height, objects, seed) {
            Ok(scene) if scene.acceptable(cfg) => return Ok(scene),
            Ok(_) | Err(SceneError::DuplicateDepth(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(SceneError::Exhausted { seed, attempts: cfg.max_attempts })
}
