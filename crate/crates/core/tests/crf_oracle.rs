//! Mean-field inference checked against the exhaustive MAP oracle and the
//! exact backend checked against the windowed one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use classfuse_core::crf::{
    exhaustive_map, mean_field_dense_exact, mean_field_windowed, total_energy, CrfParams,
};
use classfuse_core::tensor::{ProbabilityMap, Raster};

fn seeded_instance(seed: u64, classes: usize, h: usize, w: usize) -> (ProbabilityMap, Raster) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = h * w;
    let mut values = vec![0.0f32; classes * px];
    for i in 0..px {
        let mut dist: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-3).collect();
        let sum: f64 = dist.iter().sum();
        for d in dist.iter_mut() {
            *d /= sum;
        }
        for (class, d) in dist.iter().enumerate() {
            values[class * px + i] = *d as f32;
        }
    }
    let map = ProbabilityMap::from_raw_unchecked(classes, h, w, values);
    let image = Raster::new(h, w, 1, (0..px).map(|_| rng.random()).collect()).unwrap();
    (map, image)
}

fn oracle_params() -> CrfParams {
    CrfParams {
        sigma_g: 1.5,
        sigma_b: 1.5,
        sigma_c: 1.5,
        w_g: 1.0,
        w_b: 1.0,
        iterations: 5,
        ..CrfParams::default()
    }
}

#[test]
fn mean_field_tracks_the_exhaustive_minimum() {
    let params = oracle_params();
    let mut attained = 0usize;
    let instances = 30;
    for seed in 0..instances {
        let (map, image) = seeded_instance(1000 + seed, 2, 3, 3);
        let (_, mf_labels) = mean_field_dense_exact(&map, &image, &params).unwrap();
        let best_labels = exhaustive_map(&map, &image, &params).unwrap();
        let mf_energy = total_energy(&mf_labels, &map, &image, &params).unwrap();
        let best_energy = total_energy(&best_labels, &map, &image, &params).unwrap();
        assert!(
            mf_energy <= 1.10 * best_energy,
            "seed {seed}: mean-field energy {mf_energy} vs minimum {best_energy}"
        );
        if mf_labels == best_labels {
            attained += 1;
        }
    }
    // the bulk of instances should land exactly on the optimum
    assert!(
        attained * 2 > instances as usize,
        "only {attained}/{instances} instances attained the minimum"
    );
}

#[test]
fn mean_field_never_worsens_the_initial_labeling() {
    let params = oracle_params();
    for seed in 0..20 {
        let (map, image) = seeded_instance(2000 + seed, 2, 3, 3);
        let initial = classfuse_core::tensor::argmax_labels(&map);
        let (_, refined) = mean_field_dense_exact(&map, &image, &params).unwrap();
        let e_initial = total_energy(&initial, &map, &image, &params).unwrap();
        let e_refined = total_energy(&refined, &map, &image, &params).unwrap();
        assert!(
            e_refined <= e_initial + 1e-9,
            "seed {seed}: refinement raised energy {e_initial} -> {e_refined}"
        );
    }
}

#[test]
fn backends_agree_with_full_coverage_window() {
    let params = CrfParams {
        sigma_g: 2.0,
        sigma_b: 2.0,
        sigma_c: 40.0,
        w_g: 1.0,
        w_b: 1.0,
        iterations: 5,
        ..CrfParams::default()
    };
    for seed in 0..3 {
        let (map, image) = seeded_instance(3000 + seed, 3, 16, 16);
        let (q_exact, l_exact) = mean_field_dense_exact(&map, &image, &params).unwrap();
        // radius ceil(16 * 2) = 32 covers 16x16 from any pixel
        let (q_win, l_win) = mean_field_windowed(&map, &image, &params, 16.0).unwrap();
        assert_eq!(l_exact, l_win, "seed {seed}: labels diverged");
        let max_dq = q_exact
            .values()
            .iter()
            .zip(q_win.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dq < 1e-6, "seed {seed}: max |dQ| = {max_dq}");
    }
}

#[test]
fn truncation_error_is_small_at_the_default_multiplier() {
    // sigma small relative to the image: the window drops only far-away
    // pairs whose kernel mass is below exp(-4.5)
    let params = CrfParams {
        sigma_g: 1.0,
        sigma_b: 1.0,
        sigma_c: 30.0,
        w_g: 1.0,
        w_b: 1.0,
        iterations: 5,
        ..CrfParams::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let (map, image) = seeded_instance(4000 + seed, 2, 16, 16);
        let (q_exact, _) = mean_field_dense_exact(&map, &image, &params).unwrap();
        let (q_win, _) = mean_field_windowed(&map, &image, &params, 3.0).unwrap();
        let max_dq = q_exact
            .values()
            .iter()
            .zip(q_win.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(max_dq);
    }
    assert!(worst < 0.05, "windowed backend drifted by {worst}");
}

#[test]
fn inference_is_deterministic_across_thread_counts() {
    let params = oracle_params();
    let (map, image) = seeded_instance(5000, 3, 12, 12);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| mean_field_windowed(&map, &image, &params, 3.0).unwrap())
    };
    let (q1, l1) = run(1);
    let (q2, l2) = run(4);
    assert_eq!(l1, l2);
    for (a, b) in q1.values().iter().zip(q2.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let params = oracle_params();
    let (map, image) = seeded_instance(6000, 2, 10, 10);
    let (q1, _) = mean_field_dense_exact(&map, &image, &params).unwrap();
    let (q2, _) = mean_field_dense_exact(&map, &image, &params).unwrap();
    for (a, b) in q1.values().iter().zip(q2.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
