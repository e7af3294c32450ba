use occlu_core::*;

#[test]
fn converses_are_involutions() {
    for d in DistanceClass::ALL {
        assert_eq!(d.converse().converse(), d);
        assert_eq!(DistanceClass::from_index(d.index()).unwrap(), d);
    }
    for o in OcclusionClass::ALL {
        assert_eq!(o.converse().converse(), o);
        assert_eq!(OcclusionClass::from_index(o.index()).unwrap(), o);
    }
    assert_eq!(DistanceClass::Same.converse(), DistanceClass::Same);
    assert_eq!(OcclusionClass::Mutual.converse(), OcclusionClass::Mutual);
    assert!(DistanceClass::from_index(4).is_err());
}

#[test]
fn annotation_json_shape() {
    let p: PairAnnotation<f64> = PairAnnotation {
        box_a: BBox::from_corners(0.0, 0.0, 0.5, 0.5),
        box_b: BBox::from_corners(0.25, 0.25, 1.0, 1.0),
        cat_a: 1,
        cat_b: 2,
        distance: DistanceClass::ACloser,
        occlusion: OcclusionClass::Mutual,
    };
    let c = p.converse();
    assert_eq!(c.distance, DistanceClass::BCloser);
    assert_eq!(c.box_a, p.box_b);
    assert_eq!(c.converse(), p);
    assert!(p.boxes_intersect());
}
