//! Temporary calibration (deleted before finalizing).

use classfuse_core::crf::CrfParams;
use classfuse_core::fusion::{compute_weights, fuse_probability_maps, DEFAULT_ALPHA};
use classfuse_core::synth::{gen_benchmark, BenchmarkConfig, DEFAULT_BENCHMARK_SEED};
use classfuse_core::tuner::{objective, tune, SearchSpace, Strategy, ValidationItem};

#[test]
#[ignore]
fn compare_default_vs_tuned_on_validation() {
    let bench = gen_benchmark(DEFAULT_BENCHMARK_SEED, &BenchmarkConfig::default()).unwrap();
    let weights = compute_weights(&bench.iou_matrix, DEFAULT_ALPHA).unwrap();
    let validation: Vec<ValidationItem> = bench
        .validation
        .iter()
        .map(|item| ValidationItem {
            fused: fuse_probability_maps(&item.predictions, &weights).unwrap(),
            image: item.scene.image.clone(),
            ground_truth: item.scene.labels.clone(),
        })
        .collect();

    let candidates = [
        ("g1", 1.5, 2.0, 10.0, 0.15, 0.5),
        ("g2", 1.0, 2.0, 8.0, 0.2, 1.0),
        ("g3", 2.0, 4.0, 5.0, 0.2, 1.0),
        ("tuned-run", 1.014, 31.271, 1.130, 0.135, 2.468),
    ];
    for (name, sg, sb, sc, wg, wb) in candidates {
        let params = CrfParams {
            sigma_g: sg,
            sigma_b: sb,
            sigma_c: sc,
            w_g: wg,
            w_b: wb,
            iterations: 5,
            ..CrfParams::default()
        };
        let score = objective(&params, &validation).unwrap();
        println!("{name}: validation mIoU {score:.4}");
    }

    for seed in [42u64, 7, 13] {
        let outcome = tune(&SearchSpace::default(), 20, seed, Strategy::Smbo, |p| {
            objective(p, &validation)
        })
        .unwrap();
        println!(
            "tune(seed {seed}): best val mIoU {:.4} ({:?})",
            outcome.best_score, outcome.best
        );
    }
}
