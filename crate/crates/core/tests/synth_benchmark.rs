//! Directional checks on the seeded synthetic benchmark: complementary
//! experts, fusion gain, and the probability-vs-binarized ordering.

use classfuse_core::fusion::{
    compute_weights, fuse_binarized, fuse_probability_maps, DEFAULT_ALPHA,
};
use classfuse_core::metrics::{iou_report, ConfusionMatrix};
use classfuse_core::selection::oracle_miou;
use classfuse_core::synth::{
    gen_benchmark, gen_prediction, gen_scene, BenchItem, BenchmarkConfig, ReliabilityProfile,
    DEFAULT_BENCHMARK_SEED,
};
use classfuse_core::tensor::{argmax_labels, LabelMap};

fn default_benchmark() -> classfuse_core::synth::Benchmark {
    gen_benchmark(DEFAULT_BENCHMARK_SEED, &BenchmarkConfig::default()).unwrap()
}

fn split_miou(items: &[BenchItem], labeler: impl Fn(&BenchItem) -> LabelMap) -> f64 {
    let classes = items[0].predictions[0].classes();
    let mut cm = ConfusionMatrix::new(classes).unwrap();
    for item in items {
        cm.accumulate(&labeler(item), &item.scene.labels, None).unwrap();
    }
    iou_report(&cm, &[]).unwrap().miou.unwrap()
}

#[test]
fn default_networks_are_complementary() {
    let bench = default_benchmark();
    let m = &bench.iou_matrix;
    for class in 0..m.classes() {
        let best = (0..m.networks())
            .max_by(|&a, &b| m.value(a, class).partial_cmp(&m.value(b, class)).unwrap())
            .unwrap();
        // the class owner by construction: 0,1 -> net-a, 2 -> net-b, 3 -> net-c
        let expected = match class {
            0 | 1 => 0,
            2 => 1,
            _ => 2,
        };
        assert_eq!(
            best, expected,
            "class {class} is best served by network {best}"
        );
    }
    // and every network holds the per-class max for at least one class
    for net in 0..m.networks() {
        let holds_max = (0..m.classes()).any(|class| {
            (0..m.networks()).all(|other| m.value(net, class) >= m.value(other, class))
        });
        assert!(holds_max, "network {net} never holds a per-class maximum");
    }
}

#[test]
fn per_class_max_oracle_beats_every_single_network() {
    let bench = default_benchmark();
    let m = &bench.iou_matrix;
    let all: Vec<usize> = (0..m.networks()).collect();
    let oracle = oracle_miou(m, &all).unwrap();
    for net in 0..m.networks() {
        let single = oracle_miou(m, &[net]).unwrap();
        assert!(
            oracle > single,
            "oracle {oracle} does not exceed network {net}'s {single}"
        );
    }
}

#[test]
fn measured_iou_matches_analytic_expectation_for_uniform_reliability() {
    let r = 0.75f64;
    let classes = 4usize;
    let scene = gen_scene(77, 128, 128, classes, 12).unwrap();
    let profile = ReliabilityProfile {
        name: "uniform".into(),
        reliability: vec![r; classes],
        confusion_spread: 0.05,
        temperature: 0.4,
    };
    let pred = gen_prediction(&scene, &profile, 78).unwrap();
    let mut cm = ConfusionMatrix::new(classes).unwrap();
    cm.accumulate(&argmax_labels(&pred), &scene.labels, None).unwrap();
    let report = iou_report(&cm, &[]).unwrap();

    let total = (128 * 128) as f64;
    for class in 0..classes {
        let n_c = scene
            .labels
            .labels()
            .iter()
            .filter(|&&l| l as usize == class)
            .count() as f64;
        if n_c == 0.0 {
            continue;
        }
        // expected TP = r n_c; FN = (1-r) n_c; FP = (N - n_c)(1-r)/(C-1)
        let fp = (total - n_c) * (1.0 - r) / (classes as f64 - 1.0);
        let expected = r * n_c / (n_c + fp);
        let measured = report.per_class[class].unwrap();
        assert!(
            (measured - expected).abs() < 0.05,
            "class {class}: measured {measured}, analytic {expected}"
        );
    }
}

#[test]
fn probability_fusion_does_not_trail_binarized_fusion() {
    let bench = default_benchmark();
    let weights = compute_weights(&bench.iou_matrix, DEFAULT_ALPHA).unwrap();
    let prob = split_miou(&bench.test, |item| {
        argmax_labels(&fuse_probability_maps(&item.predictions, &weights).unwrap())
    });
    let bin = split_miou(&bench.test, |item| {
        argmax_labels(&fuse_binarized(&item.predictions, &weights).unwrap())
    });
    assert!(
        prob >= bin,
        "probability fusion {prob} trails binarized fusion {bin}"
    );
}

#[test]
fn weighted_fusion_beats_every_single_network_on_the_test_split() {
    let bench = default_benchmark();
    let weights = compute_weights(&bench.iou_matrix, DEFAULT_ALPHA).unwrap();
    let fused = split_miou(&bench.test, |item| {
        argmax_labels(&fuse_probability_maps(&item.predictions, &weights).unwrap())
    });
    for net in 0..bench.iou_matrix.networks() {
        let single = split_miou(&bench.test, |item| argmax_labels(&item.predictions[net]));
        assert!(
            fused > single,
            "fusion {fused} does not beat network {net}'s {single}"
        );
    }
}
