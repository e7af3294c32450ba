use occlu_core::{DistanceClass, OcclusionClass};
use occlu_scene::{
    distance_class, generate_scene, load_dataset, render, synthesize, GenConfig, Part, Rect, Scene, SceneError,
    SceneObject, Split,
};
use proptest::prelude::*;

fn obj(category: usize, parts: &[([u32; 4], f64)]) -> SceneObject {
    SceneObject {
        category,
        parts: parts.iter().map(|&(r, depth)| Part { rect: Rect::new(r[0], r[1], r[2], r[3]), depth }).collect(),
    }
}

/// Independent oracle: paint each object's own nearest-depth raster and compare
/// the two rasters pixel by pixel.
fn brute_force_occlusion(scene: &Scene, i: usize, j: usize) -> OcclusionClass {
    let raster = |o: &SceneObject| {
        let mut d = vec![f64::INFINITY; (scene.width * scene.height) as usize];
        for p in &o.parts {
            for y in p.rect.y0..p.rect.y1 {
                for x in p.rect.x0..p.rect.x1 {
                    let k = (y * scene.width + x) as usize;
                    d[k] = d[k].min(p.depth);
                }
            }
        }
        d
    };
    let (ra, rb) = (raster(&scene.objects[i]), raster(&scene.objects[j]));
    let (mut ab, mut ba) = (false, false);
    for (da, db) in ra.iter().zip(&rb) {
        if da.is_finite() && db.is_finite() {
            if da < db {
                ab = true;
            } else {
                ba = true;
            }
        }
    }
    match (ab, ba) {
        (true, true) => OcclusionClass::Mutual,
        (true, false) => OcclusionClass::AOccludesB,
        (false, true) => OcclusionClass::BOccludesA,
        (false, false) => OcclusionClass::None,
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = GenConfig::default();
    for seed in [0, 1, 77, u64::MAX] {
        let a = generate_scene(seed, &cfg).unwrap();
        let b = generate_scene(seed, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(render(&a, &cfg), render(&b, &cfg));
    }
    assert_ne!(generate_scene(1, &cfg).unwrap(), generate_scene(2, &cfg).unwrap());
}

#[test]
fn scene_invariants_hold() {
    let cfg = GenConfig::default();
    for seed in 0..200 {
        let s = generate_scene(seed, &cfg).unwrap();
        assert!((cfg.min_objects..=cfg.max_objects).contains(&s.objects.len()));
        let mut depths: Vec<f64> = s.objects.iter().flat_map(|o| o.parts.iter().map(|p| p.depth)).collect();
        depths.sort_by(f64::total_cmp);
        assert!(depths.windows(2).all(|w| w[0] < w[1]));
        for (i, o) in s.objects.iter().enumerate() {
            assert!(!o.parts.is_empty() && o.category < cfg.num_categories);
            assert!(s.visible_pixels(i) > 0);
            assert_eq!(o.distance(), o.parts.iter().map(|p| p.depth).fold(f64::INFINITY, f64::min));
        }
        // owner map: the smallest covering depth wins every pixel
        for y in 0..s.height {
            for x in 0..s.width {
                let nearest = s
                    .objects
                    .iter()
                    .enumerate()
                    .flat_map(|(oi, o)| o.parts.iter().enumerate().map(move |(pi, p)| (oi, pi, p)))
                    .filter(|(_, _, p)| p.rect.contains(x, y))
                    .min_by(|a, b| a.2.depth.total_cmp(&b.2.depth))
                    .map(|(oi, pi, _)| (oi, pi));
                let owner = s.owner(x, y).map(|o| (usize::from(o.object), usize::from(o.part)));
                assert_eq!(owner, nearest);
            }
        }
        // boxes are the full extent of the parts
        for (k, pair) in s.all_pairs(cfg.same_band).iter().enumerate() {
            let n = s.objects.len() - 1;
            let (i, j) = (k / n, k % n);
            let j = if j >= i { j + 1 } else { j };
            assert_eq!(pair.box_a, s.objects[i].bounds().to_bbox(s.width, s.height));
            assert_eq!(pair.box_b, s.objects[j].bounds().to_bbox(s.width, s.height));
        }
    }
}

#[test]
fn occlusion_fixtures() {
    let disjoint =
        Scene::from_objects(64, 64, vec![obj(0, &[([0, 0, 10, 10], 1.0)]), obj(1, &[([20, 20, 30, 30], 2.0)])], 0)
            .unwrap();
    assert_eq!(disjoint.occlusion_label(0, 1), OcclusionClass::None);

    let front =
        Scene::from_objects(64, 64, vec![obj(0, &[([0, 0, 20, 20], 1.0)]), obj(1, &[([10, 10, 30, 30], 2.0)])], 0)
            .unwrap();
    assert_eq!(front.occlusion_label(0, 1), OcclusionClass::AOccludesB);
    assert_eq!(front.occlusion_label(1, 0), OcclusionClass::BOccludesA);

    // A's left part is in front of B's first part, B's second part is in front of A's right part
    let mutual = Scene::from_objects(
        64,
        64,
        vec![
            obj(0, &[([0, 20, 30, 30], 1.0), ([30, 20, 60, 30], 4.0)]),
            obj(1, &[([10, 10, 20, 40], 2.0), ([40, 10, 50, 40], 3.0)]),
        ],
        0,
    )
    .unwrap();
    assert_eq!(mutual.occlusion_label(0, 1), OcclusionClass::Mutual);
    assert_eq!(brute_force_occlusion(&mutual, 0, 1), OcclusionClass::Mutual);

    // a part hidden behind the object's own nearer part does not count
    let hidden = Scene::from_objects(
        64,
        64,
        vec![obj(0, &[([0, 0, 30, 30], 1.0), ([5, 5, 25, 25], 5.0)]), obj(1, &[([10, 10, 20, 20], 3.0)])],
        0,
    )
    .unwrap();
    assert_eq!(hidden.occlusion_label(0, 1), OcclusionClass::AOccludesB);
}

#[test]
fn invalid_scenes_are_rejected() {
    let dup = Scene::from_objects(32, 32, vec![obj(0, &[([0, 0, 4, 4], 1.0)]), obj(1, &[([8, 8, 12, 12], 1.0)])], 0);
    assert!(matches!(dup, Err(SceneError::DuplicateDepth(_))));
    let outside = Scene::from_objects(32, 32, vec![obj(0, &[([0, 0, 40, 4], 1.0)])], 0);
    assert!(matches!(outside, Err(SceneError::BadPart { .. })));
    let none = Scene::from_objects(32, 32, vec![SceneObject { category: 0, parts: vec![] }], 0);
    assert!(matches!(none, Err(SceneError::NoParts(0))));
    let bad = GenConfig { min_objects: 3, max_objects: 2, ..GenConfig::default() };
    assert!(matches!(generate_scene(0, &bad), Err(SceneError::Config(_))));
}

#[test]
fn occlusion_matches_pixel_oracle_on_small_scenes() {
    let cfg = GenConfig { width: 64, height: 64, max_objects: 4, ..GenConfig::default() };
    for seed in 0..300 {
        let s = generate_scene(seed, &cfg).unwrap();
        for i in 0..s.objects.len() {
            for j in 0..s.objects.len() {
                if i != j {
                    assert_eq!(s.occlusion_label(i, j), brute_force_occlusion(&s, i, j), "seed {seed} pair {i},{j}");
                }
            }
        }
    }
}

#[test]
fn single_part_objects_never_occlude_mutually() {
    let cfg = GenConfig { max_parts: 1, max_objects: 4, ..GenConfig::default() };
    for seed in 0..500 {
        let s = generate_scene(seed, &cfg).unwrap();
        assert!(s.all_pairs(cfg.same_band).iter().all(|p| p.occlusion != OcclusionClass::Mutual));
    }
}

#[test]
fn distance_fixtures() {
    assert_eq!(distance_class(2.0, 2.0, 0.05), DistanceClass::Same);
    assert_eq!(distance_class(1.0, 2.0, 0.1), DistanceClass::ACloser);
    assert_eq!(distance_class(2.0, 1.0, 0.1), DistanceClass::BCloser);
    assert_eq!(distance_class(1.0, 1.04, 0.05), DistanceClass::Same);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn distance_labels_are_converses(di in 0.1f64..10.0, dj in 0.1f64..10.0, band in 0.0f64..0.3) {
        prop_assert_eq!(distance_class(di, dj, band).converse(), distance_class(dj, di, band));
        prop_assert_ne!(distance_class(di, dj, band), DistanceClass::NotSure);
    }
}

#[test]
fn generated_pairs_are_converse_consistent() {
    let cfg = GenConfig::default();
    for seed in 0..300 {
        let s = generate_scene(seed, &cfg).unwrap();
        for i in 0..s.objects.len() {
            for j in 0..s.objects.len() {
                if i != j {
                    assert_eq!(s.annotation(i, j, cfg.same_band).converse(), s.annotation(j, i, cfg.same_band));
                }
            }
        }
    }
}

#[test]
fn default_config_covers_every_occlusion_class() {
    let cfg = GenConfig::default();
    let mut occ = [0usize; 4];
    let mut dist = [0usize; 4];
    let mut total = 0;
    for seed in 0..1000 {
        for p in generate_scene(seed, &cfg).unwrap().all_pairs(cfg.same_band) {
            occ[p.occlusion.index()] += 1;
            dist[p.distance.index()] += 1;
            total += 1;
        }
    }
    let share = |c: usize| c as f64 / total as f64;
    println!("occlusion {:?} distance {:?} of {total} pairs", occ.map(share), dist.map(share));
    assert!(occ.iter().all(|&c| share(c) >= 0.05));
    assert_eq!(dist[DistanceClass::NotSure.index()], 0);
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig::default();
    let written = synthesize(dir.path(), &cfg, &[(Split::Train, 6), (Split::Test, 4)], 9).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(written, loaded);
    for r in loaded.split(Split::Train) {
        assert_eq!(r.pairs.len(), 1);
    }
    assert_eq!(loaded.split(Split::Train).count(), 6);
    for r in loaded.split(Split::Test) {
        assert_eq!(r.pairs.len(), r.num_objects * (r.num_objects - 1));
    }
    let rec = &loaded.records[0];
    let img = loaded.load_image(rec).unwrap();
    assert_eq!((img.width, img.height), (cfg.width, cfg.height));
}

#[test]
fn three_object_eval_record_has_six_pairs() {
    let cfg = GenConfig { min_objects: 3, max_objects: 3, ..GenConfig::default() };
    let s = generate_scene(4, &cfg).unwrap();
    let rec = occlu_scene::ImageRecord::from_scene(&s, "x".into(), Split::Val, &cfg);
    assert_eq!(rec.pairs.len(), 6);
    let train = occlu_scene::ImageRecord::from_scene(&s, "x".into(), Split::Train, &cfg);
    assert_eq!(train.pairs.len(), 1);
}

#[test]
fn malformed_annotations_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    synthesize(dir.path(), &GenConfig::default(), &[(Split::Val, 2)], 1).unwrap();
    let path = dir.path().join("annotations.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();

    lines[1] = lines[1].replacen("\"schema\":1", "\"schema\":7", 1);
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, SceneError::Schema { line: 2, found: Some(7), .. }), "{err}");

    lines[1] = "{\"schema\":1, \"image_id\":".to_string();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, SceneError::Json { line: 2, .. }), "{err}");

    lines[1] = lines[0].replacen("val_00000", "../escape", 1);
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert!(matches!(load_dataset(dir.path()).unwrap_err(), SceneError::Record { line: 2, .. }));
}
