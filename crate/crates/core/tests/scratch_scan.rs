//! Temporary calibration scan (deleted before finalizing).

#[test]
#[ignore]
fn scan_fusion_margins() {
    use classfuse_core::fusion::{
        compute_weights, fuse_binarized, fuse_probability_maps, DEFAULT_ALPHA,
    };
    use classfuse_core::metrics::{iou_report, ConfusionMatrix};
    use classfuse_core::synth::{gen_benchmark, BenchmarkConfig};
    use classfuse_core::tensor::argmax_labels;

    for seed in [42u64, 1, 2, 3, 4, 5] {
        let bench = gen_benchmark(seed, &BenchmarkConfig::default()).unwrap();
        let weights = compute_weights(&bench.iou_matrix, DEFAULT_ALPHA).unwrap();
        let classes = 4;
        let measure = |labeler: &dyn Fn(usize) -> classfuse_core::tensor::LabelMap| {
            let mut cm = ConfusionMatrix::new(classes).unwrap();
            for (i, item) in bench.test.iter().enumerate() {
                cm.accumulate(&labeler(i), &item.scene.labels, None).unwrap();
            }
            iou_report(&cm, &[]).unwrap().miou.unwrap()
        };
        let prob = measure(&|i| {
            argmax_labels(&fuse_probability_maps(&bench.test[i].predictions, &weights).unwrap())
        });
        let bin = measure(&|i| {
            argmax_labels(&fuse_binarized(&bench.test[i].predictions, &weights).unwrap())
        });
        let singles: Vec<f64> = (0..3)
            .map(|net| measure(&|i| argmax_labels(&bench.test[i].predictions[net])))
            .collect();
        println!(
            "seed {seed}: prob {prob:.4} bin {bin:.4} gap {:+.4} | singles {:.4} {:.4} {:.4}",
            prob - bin,
            singles[0],
            singles[1],
            singles[2]
        );
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use classfuse_core::crf::{
    exhaustive_map, mean_field_dense_exact, total_energy, CrfParams,
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

fn peaked_instance(seed: u64, classes: usize, h: usize, w: usize) -> (ProbabilityMap, Raster) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = h * w;
    let mut values = vec![0.0f32; classes * px];
    for i in 0..px {
        let mode = rng.random_range(0..classes);
        let temperature: f64 = 0.3 + 0.7 * rng.random::<f64>();
        let t = (-1.0 / temperature).exp();
        let denom = 1.0 + (classes as f64 - 1.0) * t;
        for class in 0..classes {
            let p = if class == mode { 1.0 / denom } else { t / denom };
            values[class * px + i] = p as f32;
        }
    }
    let map = ProbabilityMap::from_raw_unchecked(classes, h, w, values);
    let image = Raster::new(h, w, 1, (0..px).map(|_| rng.random()).collect()).unwrap();
    (map, image)
}

#[test]
#[ignore]
fn scan_oracle_ratios_peaked() {
    let params = CrfParams {
        sigma_g: 1.5,
        sigma_b: 1.5,
        sigma_c: 1.5,
        w_g: 1.0,
        w_b: 1.0,
        iterations: 5,
        ..CrfParams::default()
    };
    let mut worst = 0.0f64;
    let mut over = 0usize;
    let mut attained = 0usize;
    for seed in 0..100u64 {
        let (map, image) = peaked_instance(1000 + seed, 2, 3, 3);
        let (_, mf) = mean_field_dense_exact(&map, &image, &params).unwrap();
        let best = exhaustive_map(&map, &image, &params).unwrap();
        let e_mf = total_energy(&mf, &map, &image, &params).unwrap();
        let e_best = total_energy(&best, &map, &image, &params).unwrap();
        let ratio = e_mf / e_best;
        if mf == best {
            attained += 1;
        }
        if ratio > 1.10 {
            over += 1;
            println!("peaked seed {seed}: ratio {ratio:.4}");
        }
        worst = worst.max(ratio);
    }
    println!("PEAKED worst ratio {worst:.4}, over-threshold {over}/100, attained {attained}/100");
}

/// Inline damped synchronous mean-field for calibration.
fn damped_mean_field(
    map: &ProbabilityMap,
    image: &Raster,
    params: &CrfParams,
    damping: f64,
) -> classfuse_core::tensor::LabelMap {
    use classfuse_core::crf::{bilateral_kernel, gaussian_kernel};
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let px = h * w;
    let mut unary = vec![0.0f64; px * c];
    for class in 0..c {
        for i in 0..px {
            unary[i * c + class] =
                -f64::from(map.values()[class * px + i]).max(params.epsilon_prob).ln();
        }
    }
    let mut q = vec![0.0f64; px * c];
    for class in 0..c {
        for i in 0..px {
            q[i * c + class] = f64::from(map.values()[class * px + i]);
        }
    }
    let mut next = q.clone();
    for _ in 0..params.iterations {
        for i in 0..px {
            let (ri, ci) = (i / w, i % w);
            let mut msg = vec![0.0f64; c];
            for j in 0..px {
                if j == i {
                    continue;
                }
                let (rj, cj) = (j / w, j % w);
                let kg = gaussian_kernel((ri, ci), (rj, cj), params.sigma_g);
                let kb = bilateral_kernel(
                    (ri, ci),
                    (rj, cj),
                    image.pixel(ri, ci),
                    image.pixel(rj, cj),
                    params.sigma_b,
                    params.sigma_c,
                );
                let pw = params.w_g * kg + params.w_b * kb;
                for class in 0..c {
                    msg[class] += pw * q[j * c + class];
                }
            }
            let mtot: f64 = msg.iter().sum();
            let mut logits = vec![0.0f64; c];
            let mut maxl = f64::NEG_INFINITY;
            for class in 0..c {
                logits[class] = -unary[i * c + class] - (mtot - msg[class]);
                maxl = maxl.max(logits[class]);
            }
            let mut sum = 0.0f64;
            for class in 0..c {
                logits[class] = (logits[class] - maxl).exp();
                sum += logits[class];
            }
            for class in 0..c {
                let updated = logits[class] / sum;
                next[i * c + class] = (1.0 - damping) * q[i * c + class] + damping * updated;
            }
        }
        std::mem::swap(&mut q, &mut next);
    }
    let mut labels = vec![0u8; px];
    for i in 0..px {
        let mut best = 0usize;
        for class in 1..c {
            if q[i * c + class] > q[i * c + best] {
                best = class;
            }
        }
        labels[i] = best as u8;
    }
    classfuse_core::tensor::LabelMap::new(h, w, labels).unwrap()
}

/// Inline sequential (Gauss-Seidel) mean-field for calibration.
fn sequential_mean_field(
    map: &ProbabilityMap,
    image: &Raster,
    params: &CrfParams,
) -> classfuse_core::tensor::LabelMap {
    use classfuse_core::crf::{bilateral_kernel, gaussian_kernel};
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let px = h * w;
    let mut unary = vec![0.0f64; px * c];
    for class in 0..c {
        for i in 0..px {
            unary[i * c + class] =
                -f64::from(map.values()[class * px + i]).max(params.epsilon_prob).ln();
        }
    }
    let mut q = vec![0.0f64; px * c];
    for class in 0..c {
        for i in 0..px {
            q[i * c + class] = f64::from(map.values()[class * px + i]);
        }
    }
    for _ in 0..params.iterations {
        for i in 0..px {
            let (ri, ci) = (i / w, i % w);
            let mut msg = vec![0.0f64; c];
            for j in 0..px {
                if j == i {
                    continue;
                }
                let (rj, cj) = (j / w, j % w);
                let kg = gaussian_kernel((ri, ci), (rj, cj), params.sigma_g);
                let kb = bilateral_kernel(
                    (ri, ci),
                    (rj, cj),
                    image.pixel(ri, ci),
                    image.pixel(rj, cj),
                    params.sigma_b,
                    params.sigma_c,
                );
                let pw = params.w_g * kg + params.w_b * kb;
                for class in 0..c {
                    msg[class] += pw * q[j * c + class];
                }
            }
            let mtot: f64 = msg.iter().sum();
            let mut logits = vec![0.0f64; c];
            let mut maxl = f64::NEG_INFINITY;
            for class in 0..c {
                logits[class] = -unary[i * c + class] - (mtot - msg[class]);
                maxl = maxl.max(logits[class]);
            }
            let mut sum = 0.0f64;
            for class in 0..c {
                logits[class] = (logits[class] - maxl).exp();
                sum += logits[class];
            }
            for class in 0..c {
                q[i * c + class] = logits[class] / sum; // in place: later pixels see it
            }
        }
    }
    let mut labels = vec![0u8; px];
    for i in 0..px {
        let mut best = 0usize;
        for class in 1..c {
            if q[i * c + class] > q[i * c + best] {
                best = class;
            }
        }
        labels[i] = best as u8;
    }
    classfuse_core::tensor::LabelMap::new(h, w, labels).unwrap()
}

#[test]
#[ignore]
fn scan_oracle_ratios_sequential() {
    let params = CrfParams {
        sigma_g: 1.5,
        sigma_b: 1.5,
        sigma_c: 1.5,
        w_g: 1.0,
        w_b: 1.0,
        iterations: 5,
        ..CrfParams::default()
    };
    let mut worst = 0.0f64;
    let mut over = 0usize;
    let mut attained = 0usize;
    for seed in 0..100u64 {
        let (map, image) = seeded_instance(1000 + seed, 2, 3, 3);
        let mf = sequential_mean_field(&map, &image, &params);
        let best = exhaustive_map(&map, &image, &params).unwrap();
        let e_mf = total_energy(&mf, &map, &image, &params).unwrap();
        let e_best = total_energy(&best, &map, &image, &params).unwrap();
        let ratio = e_mf / e_best;
        if mf == best {
            attained += 1;
        }
        if ratio > 1.10 {
            over += 1;
            println!("sequential seed {seed}: ratio {ratio:.4}");
        }
        worst = worst.max(ratio);
    }
    println!("SEQUENTIAL worst {worst:.4}, over {over}/100, attained {attained}/100");
}

#[test]
#[ignore]
fn scan_oracle_ratios_damped() {
    let params = CrfParams {
        sigma_g: 1.5,
        sigma_b: 1.5,
        sigma_c: 1.5,
        w_g: 1.0,
        w_b: 1.0,
        iterations: 5,
        ..CrfParams::default()
    };
    for damping in [0.5, 0.6, 0.7] {
        let mut worst = 0.0f64;
        let mut over = 0usize;
        let mut attained = 0usize;
        for seed in 0..100u64 {
            let (map, image) = seeded_instance(1000 + seed, 2, 3, 3);
            let mf = damped_mean_field(&map, &image, &params, damping);
            let best = exhaustive_map(&map, &image, &params).unwrap();
            let e_mf = total_energy(&mf, &map, &image, &params).unwrap();
            let e_best = total_energy(&best, &map, &image, &params).unwrap();
            let ratio = e_mf / e_best;
            if mf == best {
                attained += 1;
            }
            if ratio > 1.10 {
                over += 1;
            }
            worst = worst.max(ratio);
        }
        println!(
            "DAMPED {damping}: worst {worst:.4}, over {over}/100, attained {attained}/100"
        );
    }
}

#[test]
#[ignore]
fn scan_oracle_ratios() {
    let params = CrfParams {
        sigma_g: 1.5,
        sigma_b: 1.5,
        sigma_c: 1.5,
        w_g: 1.0,
        w_b: 1.0,
        iterations: 5,
        ..CrfParams::default()
    };
    let mut worst = 0.0f64;
    let mut over = 0usize;
    let mut attained = 0usize;
    for seed in 0..100u64 {
        let (map, image) = seeded_instance(1000 + seed, 2, 3, 3);
        let (_, mf) = mean_field_dense_exact(&map, &image, &params).unwrap();
        let best = exhaustive_map(&map, &image, &params).unwrap();
        let e_mf = total_energy(&mf, &map, &image, &params).unwrap();
        let e_best = total_energy(&best, &map, &image, &params).unwrap();
        let ratio = e_mf / e_best;
        if mf == best {
            attained += 1;
        }
        if ratio > 1.10 {
            over += 1;
            println!("seed {seed}: ratio {ratio:.4}");
        }
        worst = worst.max(ratio);
    }
    println!("worst ratio {worst:.4}, over-threshold {over}/100, attained {attained}/100");
}
