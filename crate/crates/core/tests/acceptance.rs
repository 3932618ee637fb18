//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{
    brute_nn, fd_gradient, l2, perturbed, pnp_scene, pose_gap, random_batch, relative_error, sos_neighbors,
    sos_oracle, sos_with, triplet_oracle, unit, weighted_hamming, Batch,
};
use parloc::config::RunConfig;
use parloc::descriptor::{l2_distance, weighted_hamming_distance};
use parloc::ingest::coefficient_sweep;
use parloc::loss::{sos_regularizer, total_loss_with, triplet_margin_loss, weighted_hamming_loss, DescriptorBatch, LossValue};
use parloc::matcher::{MapIndex, SearchMode};
use parloc::pipeline::{build_index, fit_model_synthetic, localize_all};
use parloc::pose::{ransac_pnp, LocalizationStatus, RansacParams};
use parloc::rtree::{
    build_forest, build_tree, estimate_perturbation_model, leaf_log_probability, node_probability, priority_search,
    Entry, Forest, LeafPath, PerturbationModel, TreeParams, DEFAULT_CANDIDATE_DIMS,
};
use parloc::synth::{fusion_benchmark, sweep_fixture, SceneParams};
use parloc::{BinaryDescriptor, LandmarkId, RealDescriptor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct NnSetup {
    db: Vec<Vec<f64>>,
    forest: Forest,
    model: PerturbationModel,
    build_seconds: f64,
}

const NN_SIGMA: f64 = 0.05;

fn nn_setup() -> NnSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let db: Vec<Vec<f64>> = (0..2000).map(|_| unit(&mut rng, 64)).collect();
    let entries: Vec<(Entry, BinaryDescriptor)> = db
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = RealDescriptor::new(v.clone()).unwrap();
            (
                Entry {
                    landmark: LandmarkId(i as u32),
                    descriptor: 0,
                },
                d.binarize(),
            )
        })
        .collect();
    let start = Instant::now();
    let forest = build_forest(&entries, 6, 8, DEFAULT_CANDIDATE_DIMS, 7).unwrap();
    let build_seconds = start.elapsed().as_secs_f64();
    // model fitted on separately drawn matching pairs
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..5000)
        .map(|_| {
            let p = unit(&mut rng, 64);
            let q = perturbed(&mut rng, &p, NN_SIGMA);
            (p, q)
        })
        .collect();
    let model = estimate_perturbation_model(&pairs, 10, 5000, 3).unwrap().model;
    NnSetup {
        db,
        forest,
        model,
        build_seconds,
    }
}

fn queries(setup: &NnSetup, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..500)
        .map(|_| {
            let target = &setup.db[rng.random_range(0..setup.db.len())];
            perturbed(&mut rng, target, NN_SIGMA)
        })
        .collect()
}

fn oracle_nn_equivalence(setup: &NnSetup) -> Outcome {
    let qs = queries(setup, 202);
    let start = Instant::now();
    let all = setup.forest.nonempty_leaf_count();
    let mut agree = 0;
    for q in &qs {
        let found = priority_search(&setup.forest, q, &setup.model, all).map_err(|e| e.to_string())?;
        let mut best = (f64::INFINITY, usize::MAX);
        for e in &found.candidates {
            let i = e.landmark.0 as usize;
            let d = l2(&setup.db[i], q);
            if d < best.0 || (d == best.0 && i < best.1) {
                best = (d, i);
            }
        }
        if best.1 == brute_nn(&setup.db, q) {
            agree += 1;
        }
    }
    let seconds = setup.build_seconds + start.elapsed().as_secs_f64();
    ensure(
        agree == qs.len() && seconds < 10.0,
        format!("{agree}/{} candidate NN equal brute force, {seconds:.2} s", qs.len()),
    )
}

fn priority_recall(setup: &NnSetup) -> Outcome {
    let qs = queries(setup, 303);
    let truth: Vec<usize> = qs.iter().map(|q| brute_nn(&setup.db, q)).collect();
    let budgets = [1, 10, 50, 100, setup.forest.nonempty_leaf_count()];
    let mut recalls = Vec::new();
    for &budget in &budgets {
        let mut hits = 0;
        for (q, &t) in qs.iter().zip(&truth) {
            let found = priority_search(&setup.forest, q, &setup.model, budget).map_err(|e| e.to_string())?;
            if found.candidates.iter().any(|e| e.landmark.0 as usize == t) {
                hits += 1;
            }
        }
        recalls.push(hits as f64 / qs.len() as f64);
    }
    let monotone = recalls.windows(2).all(|w| w[0] <= w[1]);
    let text: Vec<String> = budgets.iter().zip(&recalls).map(|(b, r)| format!("{b}:{:.3}", r)).collect();
    ensure(
        recalls[3] >= 0.95 && monotone,
        format!("recall by max_leaves {} (monotone {monotone})", text.join(" ")),
    )
}

fn probability_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for &q_d in &[-0.3, -0.1, -0.02, 0.0, 0.02, 0.1, 0.3] {
        for &mu in &[-0.05, 0.0, 0.02] {
            for &sigma in &[0.01, 0.05, 0.2] {
                let model = PerturbationModel::new(mu, sigma).unwrap();
                let normal = Normal::new(mu, sigma).unwrap();
                let draws = 1_000_000;
                let ones = (0..draws).filter(|_| q_d + normal.sample(&mut rng) >= 0.0).count();
                let freq = ones as f64 / draws as f64;
                worst = worst.max((node_probability(q_d, true, &model) - freq).abs());
                worst = worst.max((node_probability(q_d, false, &model) - (1.0 - freq)).abs());
            }
        }
    }
    let entries: Vec<(Entry, BinaryDescriptor)> = (0..300)
        .map(|i| {
            (
                Entry {
                    landmark: LandmarkId(i),
                    descriptor: 0,
                },
                RealDescriptor::new(unit(&mut rng, 32)).unwrap().binarize(),
            )
        })
        .collect();
    let model = PerturbationModel::new(0.01, 0.08).unwrap();
    let mut worst_sum = 0.0f64;
    for depth in 1..=10u32 {
        let tree = build_tree(
            &entries,
            TreeParams {
                depth,
                candidate_dims: 8,
                seed: depth as u64,
            },
        )
        .map_err(|e| e.to_string())?;
        let q = unit(&mut rng, 32);
        let total: f64 = (0..1u64 << depth)
            .map(|p| leaf_log_probability(&tree, &q, LeafPath(p), &model).unwrap().exp())
            .sum();
        worst_sum = worst_sum.max((total - 1.0).abs());
    }
    ensure(
        worst <= 0.005 && worst_sum <= 1e-9,
        format!("max |p - MC| {worst:.5}, max |sum - 1| {worst_sum:.2e} for K <= 10"),
    )
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = [0.0f64; 4];
    let mut worst_value = 0.0f64;
    for _ in 0..100 {
        let b = random_batch(&mut rng);
        let lib = DescriptorBatch::new(b.d, b.a.clone(), b.p.clone()).unwrap();
        let k = 8.min(b.n - 1);
        let fixed = sos_neighbors(&b, k);
        let values = [
            triplet_margin_loss(&lib),
            sos_regularizer(&lib, k).unwrap(),
            weighted_hamming_loss(&lib),
            total_loss_with(&lib, k).unwrap(),
        ];
        let expected = [
            triplet_oracle(&b, l2),
            sos_oracle(&b, k),
            triplet_oracle(&b, weighted_hamming),
            triplet_oracle(&b, l2) + sos_oracle(&b, k) + triplet_oracle(&b, weighted_hamming),
        ];
        let oracles: [Box<dyn Fn(&Batch) -> f64>; 4] = [
            Box::new(|b| triplet_oracle(b, l2)),
            Box::new(|b| sos_with(b, &fixed)),
            Box::new(|b| triplet_oracle(b, weighted_hamming)),
            Box::new(|b| triplet_oracle(b, l2) + sos_with(b, &fixed) + triplet_oracle(b, weighted_hamming)),
        ];
        for (slot, ((value, oracle), want)) in values.iter().zip(&oracles).zip(expected).enumerate() {
            worst_value = worst_value.max((value.loss - want).abs() / want.abs().max(1.0));
            worst[slot] = worst[slot].max(gradient_error(&b, value, oracle));
        }
    }
    ensure(
        worst.iter().all(|&e| e <= 1e-4) && worst_value <= 1e-12,
        format!(
            "max relative gradient error triplet {:.1e} sos {:.1e} weighted-hamming {:.1e} total {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn gradient_error(b: &Batch, value: &LossValue, oracle: &dyn Fn(&Batch) -> f64) -> f64 {
    let (ga, gp) = fd_gradient(b, 1e-5, oracle);
    let fd: Vec<f64> = ga.into_iter().chain(gp).collect();
    let analytic: Vec<f64> = value.gradient.anchors.iter().chain(&value.gradient.positives).copied().collect();
    relative_error(&analytic, &fd)
}

fn pose_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let params = RansacParams::default();
    let mut clean_ok = 0;
    let mut noisy_ok = 0;
    for _ in 0..100 {
        let scene = pnp_scene(&mut rng, 50, 0, 0.0);
        if let Ok(res) = ransac_pnp(&scene.correspondences, &scene.intrinsics, &params) {
            if let Some(pose) = &res.pose {
                let (dt, dr) = pose_gap(pose, &scene.rotation, &scene.translation);
                if dt <= 1e-6 && dr <= 1e-6 {
                    clean_ok += 1;
                }
            }
        }
        let scene = pnp_scene(&mut rng, 50, 50, 0.5);
        if let Ok(res) = ransac_pnp(&scene.correspondences, &scene.intrinsics, &params) {
            if let Some(pose) = &res.pose {
                let (dt, dr) = pose_gap(pose, &scene.rotation, &scene.translation);
                let kept = res.inliers.iter().filter(|&&i| i < scene.inliers).count();
                if dt <= 0.01 && dr <= 0.1 && kept * 10 >= scene.inliers * 9 {
                    noisy_ok += 1;
                }
            }
        }
    }
    ensure(
        clean_ok >= 99 && noisy_ok >= 99,
        format!("noiseless {clean_ok}/100 within 1e-6, noisy with 50% outliers {noisy_ok}/100"),
    )
}

fn fusion_superiority() -> Outcome {
    let scene = fusion_benchmark(100, 7).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    let forest = build_index(&scene.map, &cfg).map_err(|e| e.to_string())?;
    let model = fit_model_synthetic(&scene.map, SceneParams::default().local_noise, &cfg)
        .map_err(|e| e.to_string())?
        .model;
    let index = MapIndex::new(&scene.map, &forest, model).map_err(|e| e.to_string())?;
    let mut counts = Vec::new();
    for mode in [SearchMode::Fused, SearchMode::TreeOnly, SearchMode::RetrievalOnly] {
        cfg.mode = mode;
        let results = localize_all(&index, &scene.queries, &cfg).map_err(|e| e.to_string())?;
        let registered = results
            .iter()
            .zip(&scene.ground_truth)
            .filter(|(r, (_, gt))| {
                let Ok(Some(est)) = r.estimate() else {
                    return false;
                };
                let gt = gt.to_pose().unwrap();
                let rot = nalgebra::Rotation3::from_matrix(gt.rotation());
                let (dt, dr) = pose_gap(&est, &rot, gt.translation());
                r.status == LocalizationStatus::Ok && dt <= 5.0 && dr <= 10.0
            })
            .count();
        counts.push(registered);
    }
    let (fused, tree, retrieval) = (counts[0], counts[1], counts[2]);
    ensure(
        fused >= tree.max(retrieval) && fused >= tree + 30 && fused >= retrieval + 30,
        format!("registered of 200: fused {fused}, tree_only {tree}, retrieval_only {retrieval}"),
    )
}

fn weighted_hamming_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut zero_mismatch = 0;
    let mut above_l2 = 0;
    let mut value_gap = 0.0f64;
    let mut agreeing = 0;
    for i in 0..100_000 {
        let d = rng.random_range(4..=64);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = if i % 2 == 0 {
            a.iter()
                .map(|x: &f64| {
                    let m: f64 = rng.random_range(0.0..1.0);
                    if *x >= 0.0 {
                        m
                    } else {
                        -m - 1e-9
                    }
                })
                .collect()
        } else {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let unit_len = |v: Vec<f64>| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let (a, b) = (unit_len(a), unit_len(b));
        let same_signs = a.iter().zip(&b).all(|(x, y)| (*x >= 0.0) == (*y >= 0.0));
        agreeing += same_signs as usize;
        let (ra, rb) = (RealDescriptor::new(a.clone()).unwrap(), RealDescriptor::new(b.clone()).unwrap());
        let wh = weighted_hamming_distance(&ra, &rb).unwrap();
        if (wh == 0.0) != same_signs {
            zero_mismatch += 1;
        }
        if wh > l2_distance(&ra, &rb).unwrap() {
            above_l2 += 1;
        }
        value_gap = value_gap.max((wh - weighted_hamming(&a, &b)).abs());
    }
    ensure(
        zero_mismatch == 0 && above_l2 == 0 && value_gap <= 1e-12,
        format!(
            "1e5 pairs ({agreeing} sign-agreeing): zero-iff-agree violations {zero_mismatch}, above l2 {above_l2}, max gap to oracle {value_gap:.1e}"
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_parloc"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = dir.path().join("fx");
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let conf = p(&fx.join("parloc.conf"));
    run_cli(&["generate", "--out", &p(&fx), "--queries", "20", "--seed", "8"])?;
    let mut runs = Vec::new();
    for run in 0..2 {
        let forest = p(&dir.path().join(format!("forest{run}.bin")));
        let model = p(&dir.path().join(format!("model{run}.txt")));
        let results = p(&dir.path().join(format!("results{run}.txt")));
        let common = ["--config", &conf, "--forest", &forest, "--model", &model, "--results", &results];
        run_cli(&[&["build-index", "--synthetic-sigma", "0.01"][..], &common].concat())?;
        run_cli(&[&["localize"][..], &common].concat())?;
        let table = run_cli(&[&["evaluate"][..], &common].concat())?;
        let read = |f: &str| std::fs::read(f).map_err(|e| e.to_string());
        runs.push([read(&forest)?, read(&model)?, read(&results)?, table]);
    }
    let same: Vec<bool> = (0..4).map(|k| runs[0][k] == runs[1][k]).collect();
    ensure(
        same.iter().all(|&s| s),
        format!(
            "byte-identical forest {} model {} results {} evaluation {}",
            same[0], same[1], same[2], same[3]
        ),
    )
}

fn coefficient_profile() -> Outcome {
    let input = sweep_fixture(0).map_err(|e| e.to_string())?.sweep_input();
    let coefficients = [4.0, 8.0, 13.0, 20.0, 32.0];
    let rows = coefficient_sweep(&input, &coefficients, &RunConfig::default()).map_err(|e| e.to_string())?;
    let counts: Vec<usize> = rows.iter().map(|r| r.registered).collect();
    let peak = *counts.iter().max().unwrap();
    let first_peak = counts.iter().position(|&c| c == peak).unwrap();
    let last_peak = counts.iter().rposition(|&c| c == peak).unwrap();
    let rises = counts[..=first_peak].windows(2).all(|w| w[0] <= w[1]);
    let falls = counts[last_peak..].windows(2).all(|w| w[0] >= w[1]);
    let flat_top = counts[first_peak..=last_peak].iter().all(|&c| c == peak);
    let ends_below = counts[0] < peak && counts[counts.len() - 1] < peak;
    let text: Vec<String> = coefficients.iter().zip(&counts).map(|(c, n)| format!("{c}:{n}")).collect();
    ensure(
        rises && falls && flat_top && ends_below,
        format!("registered of {} by coefficient {}", input.queries.len(), text.join(" ")),
    )
}

fn main() {
    let setup = nn_setup();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("oracle NN equivalence", Box::new(|| oracle_nn_equivalence(&setup))),
        ("priority-search recall", Box::new(|| priority_recall(&setup))),
        ("probability-model fidelity", Box::new(probability_fidelity)),
        ("loss gradient checks", Box::new(gradient_checks)),
        ("pose accuracy", Box::new(pose_accuracy)),
        ("fusion superiority", Box::new(fusion_superiority)),
        ("weighted Hamming sanity", Box::new(weighted_hamming_sanity)),
        ("determinism", Box::new(determinism)),
        ("coefficient sweep", Box::new(coefficient_profile)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
