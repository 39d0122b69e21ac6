use proptest::prelude::*;

use pedset::evalmetrics::{evaluate, Detection, GtBox, ImageEval};
use pedset::geometry::BBox;

mod common;
use common::brute_force_metrics;

fn square(x: f64, y: f64, side: f64) -> BBox {
    BBox::from_xywh(x, y, side, side).unwrap()
}

fn arb_image() -> impl Strategy<Value = ImageEval> {
    (
        prop::collection::vec((0.0..100.0f64, 0.0..100.0f64, 10.0..30.0f64, prop::bool::weighted(0.2)), 1..6),
        prop::collection::vec((prop::option::of(0usize..6), -8.0..8.0f64, 0.0..100.0f64, 0u32..8), 0..10),
    )
        .prop_map(|(gts, dets)| {
            let gts: Vec<GtBox> =
                gts.into_iter().map(|(x, y, s, ignore)| GtBox { bbox: square(x, y, s), ignore }).collect();
            let detections = dets
                .into_iter()
                .map(|(anchor, shift, free, level)| {
                    let bbox = match anchor {
                        Some(a) => {
                            let [x, y, w, _] = gts[a % gts.len()].bbox.xywh();
                            square(x + shift, y - 0.5 * shift, w)
                        }
                        None => square(free, 100.0 - free, 20.0),
                    };
                    // eight score levels, so ties are frequent
                    Detection { score: f64::from(level) / 8.0, bbox }
                })
                .collect();
            ImageEval { image_id: String::new(), detections, gts }
        })
}

fn arb_dataset() -> impl Strategy<Value = Vec<ImageEval>> {
    prop::collection::vec(arb_image(), 1..6).prop_map(|mut images| {
        if images.iter().all(|i| i.gts.iter().all(|g| g.ignore)) {
            images[0].gts[0].ignore = false;
        }
        for (n, image) in images.iter_mut().enumerate() {
            image.image_id = format!("img{n}");
        }
        images
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn metrics_equal_the_threshold_sweep(images in arb_dataset(), thresh in prop::sample::select(vec![0.3, 0.5, 0.7])) {
        let lib = evaluate(&images, thresh).unwrap();
        let oracle = brute_force_metrics(&images, thresh);
        prop_assert!((lib.ap - oracle.ap).abs() <= 1e-9, "AP {} vs {}", lib.ap, oracle.ap);
        prop_assert!((lib.mr2 - oracle.mr2).abs() <= 1e-9, "MR2 {} vs {}", lib.mr2, oracle.mr2);
        prop_assert!((lib.recall - oracle.recall).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&lib.ap));
        prop_assert!(lib.mr2 > 0.0 && lib.mr2 <= 100.0);
    }
}
