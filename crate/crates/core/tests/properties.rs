use fieldforge::augment::cutmix;
use fieldforge::corpus::{class_distribution, parse_label_table, write_label_table};
use fieldforge::fusion::{iou, nms, transform_boxes, wbf, TtaKind, TtaTransform};
use fieldforge::metrics::{confusion, per_class_metrics, pipeline_bounds, SupportConvention};
use fieldforge::mosaic::{demo_corpus, generate_mosaic, parse_annotations, procedural_soil_texture, write_annotations, TilePool};
use fieldforge::rebalance::{balance_plan, builtin_generator, GeneratorConfig};
use fieldforge::schedule::LrSchedule;
use fieldforge::{Bbox, DiseaseClass, HighFidelityRecord, MosaicSpec, ScoredBox};
use proptest::prelude::*;

fn scored_box() -> impl Strategy<Value = ScoredBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..40.0f64, 0.5..40.0f64, 0.0..=1.0f64, 0u32..3)
        .prop_map(|(x, y, w, h, s, l)| ScoredBox::new([x, y, x + w, y + h], s, l).unwrap())
}

fn class() -> impl Strategy<Value = DiseaseClass> {
    (0usize..4).prop_map(|k| DiseaseClass::from_index(k).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bounds_are_ordered(i in 0.0..=1.0f64, c in 0.0..=1.0f64) {
        let b = pipeline_bounds(i, c).unwrap();
        prop_assert!(b.lower_bound <= b.independent_estimate + 1e-15);
        prop_assert!(b.independent_estimate <= b.upper_bound + 1e-15);
        prop_assert!(b.lower_bound >= 0.0 && b.upper_bound <= 1.0);
    }

    #[test]
    fn nms_keeps_a_separated_subset(boxes in prop::collection::vec(scored_box(), 0..12), thr in 0.1..0.9f64) {
        let kept = nms(&boxes, thr);
        prop_assert!(kept.iter().all(|k| boxes.contains(k)));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.label != b.label || iou(a, b) <= thr);
            }
        }
        // every suppressed box overlaps some kept box of its label
        for b in boxes.iter().filter(|b| !kept.contains(b)) {
            prop_assert!(kept.iter().any(|k| k.label == b.label && iou(k, b) > thr));
        }
    }

    #[test]
    fn wbf_scores_and_boxes_stay_in_range(
        lists in prop::collection::vec(prop::collection::vec(scored_box(), 0..6), 1..4),
        thr in 0.1..0.9f64,
    ) {
        let fused = wbf(&lists, thr, lists.len());
        let pooled: Vec<ScoredBox> = lists.concat();
        prop_assert!(fused.len() <= pooled.len());
        let top = pooled.iter().map(|b| b.score).fold(0.0, f64::max);
        for f in &fused {
            prop_assert!(f.score <= top + 1e-12);
            prop_assert!(f.corners[0] <= f.corners[2] && f.corners[1] <= f.corners[3]);
            // fused corners lie in the hull of the same-label inputs
            let same: Vec<_> = pooled.iter().filter(|b| b.label == f.label).collect();
            for i in 0..4 {
                let lo = same.iter().map(|b| b.corners[i]).fold(f64::INFINITY, f64::min);
                let hi = same.iter().map(|b| b.corners[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(f.corners[i] >= lo - 1e-9 && f.corners[i] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn tta_round_trips_arbitrary_boxes(
        x in 0.0..1792.0f64, y in 0.0..1204.0f64, w in 0.0..200.0f64, h in 0.0..200.0f64, k in 0usize..4,
    ) {
        let b = ScoredBox::new([x, y, (x + w).min(1792.0), (y + h).min(1204.0)], 0.5, 0).unwrap();
        let t = TtaTransform::new(TtaKind::ALL[k], 1792, 1204);
        let back = transform_boxes(&transform_boxes(&[b], t).unwrap(), t.inverse()).unwrap();
        for (p, q) in back[0].corners.iter().zip(&b.corners) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn label_table_round_trips(classes in prop::collection::vec(class(), 0..60)) {
        let records: Vec<_> = classes
            .iter()
            .enumerate()
            .map(|(k, &c)| HighFidelityRecord::new(format!("Train_{k}"), c))
            .collect();
        let parsed = parse_label_table(&write_label_table(&records)).unwrap();
        prop_assert_eq!(&parsed, &records);
        let plan = balance_plan(&class_distribution(&records), None).unwrap();
        let dist = class_distribution(&records);
        for c in DiseaseClass::ALL {
            prop_assert_eq!(dist.get(c) + plan.get(c), dist.max());
        }
    }

    #[test]
    fn confusion_metrics_are_consistent(pairs in prop::collection::vec((class(), class()), 1..80)) {
        let classes: Vec<String> = DiseaseClass::ALL.iter().map(|c| c.to_string()).collect();
        let pred: Vec<String> = pairs.iter().map(|(p, _)| p.to_string()).collect();
        let truth: Vec<String> = pairs.iter().map(|(_, t)| t.to_string()).collect();
        let cm = confusion(&pred, &truth, &classes).unwrap();
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        let predicted = per_class_metrics(&cm, SupportConvention::Predicted);
        let actual = per_class_metrics(&cm, SupportConvention::Actual);
        prop_assert_eq!(predicted.iter().map(|m| m.support).sum::<u64>(), cm.total());
        prop_assert_eq!(actual.iter().map(|m| m.support).sum::<u64>(), cm.total());
        for m in &predicted {
            prop_assert!((0.0..=1.0).contains(&m.f1));
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        }
    }

    #[test]
    fn schedule_stays_within_range(
        ramp in 0u32..8, sustain in 0u32..8, decay in 0.05..0.99f64, epoch in 0u32..500,
    ) {
        let s = LrSchedule { ramp_epochs: ramp, sustain_epochs: sustain, decay, ..LrSchedule::default() };
        let lr = s.lr_at(epoch);
        prop_assert!(lr >= s.lr_min.min(s.lr_start) && lr <= s.lr_max);
    }

    #[test]
    fn generator_preserves_dimensions(seed in any::<u64>(), w in 4u32..20, h in 4u32..20) {
        let g = builtin_generator(GeneratorConfig::default()).unwrap();
        let img = fieldforge::Image::from_fn(w, h, |x, y| image::Rgb([(x * 10) as u8, (y * 10) as u8, 90]));
        let out = fieldforge::rebalance::ImageGenerator::generate(&g, &img, DiseaseClass::Rust, seed).unwrap();
        prop_assert_eq!(out.dimensions(), (w, h));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn cutmix_conserves_cells(
        seeds in (any::<u64>(), any::<u64>()),
        region in (0u32..6, 0u32..5, 1u32..7, 1u32..6),
    ) {
        let spec = MosaicSpec::with_grid(6, 5, 8, 6);
        let (records, images) = demo_corpus(8, 1);
        let pool = TilePool::prepare(&records, &images, &spec).unwrap();
        let soil = procedural_soil_texture(20, 20, 0);
        let base = generate_mosaic(&pool, &soil, &MosaicSpec { rng_seed: seeds.0, ..spec }).unwrap();
        let donor = generate_mosaic(&pool, &soil, &MosaicSpec { rng_seed: seeds.1, ..spec }).unwrap();
        let (col, row, w, h) = region;
        let r = Bbox::new(col * 8, row * 6, w.min(6 - col) * 8, h.min(5 - row) * 6);
        let mixed = cutmix(&base, &donor, r).unwrap();
        let inside = |b: &Bbox| b.x >= r.x && b.x < r.x + r.w && b.y >= r.y && b.y < r.y + r.h;
        let expected = base.annotations.iter().filter(|a| !inside(&a.bbox)).count()
            + donor.annotations.iter().filter(|a| inside(&a.bbox)).count();
        prop_assert_eq!(mixed.annotations.len(), expected);
        prop_assert_eq!(mixed.annotations.len() + mixed.soil_count(), 30);
        // annotation CSV survives a round trip
        prop_assert_eq!(parse_annotations(&write_annotations(&mixed.annotations)).unwrap(), mixed.annotations);
    }
}
