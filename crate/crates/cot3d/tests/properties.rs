//! Property tests for the format grammar, scorer bounds, and split builder.

use proptest::prelude::*;

use cot3d::cotformat::{convert, parse_tagged, render, AnnotationFormat, CoTAnnotation};
use cot3d::dataset::{build_dataset_with_points, split_dataset, FormatMix, Split};
use cot3d::evalkit::{lexical_f1, score_sample, GeneratedOutput};

/// Single-line sentences of lowercase words: no think markers, no newlines,
/// no leading/trailing whitespace — the class the tagged grammar round-trips.
fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec("[a-z]{1,8}", 1..8).prop_map(|words| words.join(" "))
}

fn annotation() -> impl Strategy<Value = CoTAnnotation> {
    (sentence(), sentence(), sentence(), sentence()).prop_map(|(o, f, c, k)| CoTAnnotation {
        object_recognition: o,
        functional_inference: f,
        causal_reasoning: c,
        conclusion: k,
    })
}

proptest! {
    #[test]
    fn tagged_render_parse_is_identity(ann in annotation()) {
        let text = render(&ann, AnnotationFormat::Tagged).unwrap();
        let back = parse_tagged(&text).unwrap();
        prop_assert_eq!(back, ann);
    }

    #[test]
    fn tagged_to_unmarked_equals_direct(ann in annotation()) {
        let tagged = render(&ann, AnnotationFormat::Tagged).unwrap();
        let converted = convert(&tagged, AnnotationFormat::Tagged, AnnotationFormat::Unmarked).unwrap();
        let direct = render(&ann, AnnotationFormat::Unmarked).unwrap();
        prop_assert_eq!(converted, direct);
    }

    #[test]
    fn f1_is_bounded_and_symmetric_in_support(a in sentence(), b in sentence()) {
        let f = lexical_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        // F1 is symmetric in its arguments
        prop_assert!((f - lexical_f1(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn scores_stay_in_range(ann in annotation(), text in ".{0,120}") {
        let out = GeneratedOutput::from_text(&text);
        let s = score_sample(&out, &ann);
        for v in [s.obj, s.func, s.inter, Some(s.tru), Some(s.comp)].into_iter().flatten() {
            prop_assert!((1.0..=5.0).contains(&v));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn split_partitions_exactly(n in 10usize..40, seed in 0u64..1000) {
        let mut records = build_dataset_with_points(
            n,
            FormatMix::only(AnnotationFormat::None),
            seed,
            16,
        ).unwrap();
        split_dataset(&mut records, (0.8, 0.1, 0.1), seed).unwrap();
        let total = records.len();
        let count = |s: Split| records.iter().filter(|r| r.split == s).count();
        let (tr, va, te) = (count(Split::Train), count(Split::Val), count(Split::Test));
        prop_assert_eq!(tr + va + te, total);
        // largest-remainder sizing: each count within one of the exact share
        prop_assert!((tr as f64 - 0.8 * total as f64).abs() <= 1.0);
        prop_assert!((va as f64 - 0.1 * total as f64).abs() <= 1.0);
        prop_assert!((te as f64 - 0.1 * total as f64).abs() <= 1.0);
    }
}
