use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use parloc::config::RunConfig;
use parloc::ingest::{
    coefficient_sweep, load_ground_truth, load_map, load_model, load_queries, load_results, save_ground_truth,
    save_map, save_model, save_queries, save_results,
};
use parloc::matcher::MapIndex;
use parloc::pipeline::{build_index, fit_model, fit_model_synthetic, localize_all};
use parloc::pose::{recall_at_thresholds, LocalizationStatus, DEFAULT_RECALL_THRESHOLDS};
use parloc::rtree::{read_forest, write_forest, Forest, PerturbationModel};
use parloc::selftest::run_selftest;
use parloc::synth::{duplicate_descriptor_map, fusion_benchmark, localization_scene, sweep_fixture, QueryKind, SceneParams};
use parloc::{Error, Result};

#[derive(Parser)]
#[command(name = "parloc", version, about = "Random-tree and retrieval search for 2D-3D localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

macro_rules! settings {
    ($($field:ident),* $(,)?) => {
        /// Configuration file plus per-key overrides; flags win over the file.
        #[derive(Args, Debug, Default)]
        struct Settings {
            /// `key = value` configuration file
            #[arg(long)]
            config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl Settings {
            fn resolve(&self) -> Result<RunConfig> {
                let mut cfg = match &self.config {
                    Some(path) => RunConfig::from_file(path)?,
                    None => RunConfig::default(),
                };
                $(
                    if let Some(v) = &self.$field {
                        cfg.set(stringify!($field), v)?;
                    }
                )*
                cfg.validate()?;
                Ok(cfg)
            }
        }
    };
}

settings!(
    trees,
    depth,
    candidate_dims,
    forest_seed,
    max_leaves,
    knn_frames,
    ratio_threshold,
    mode,
    strict_ratio,
    inlier_threshold_px,
    max_iterations,
    confidence,
    min_inliers,
    ransac_seed,
    model_tests,
    model_samples,
    model_seed,
    patch_coefficient,
    landmarks,
    frames,
    forest,
    model,
    queries,
    results,
    ground_truth,
);

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FixtureKind {
    /// Queries with mild noise and correct global descriptors
    Scene,
    /// Heavy-local and ambiguous-global queries, 100 of each
    Fusion,
    /// Two perturbed descriptors per landmark, for fit-model
    Duplicates,
}

#[derive(Subcommand)]
enum Command {
    /// Build the forest from a map and write it with its model sidecar
    BuildIndex {
        #[command(flatten)]
        settings: Settings,
        /// Fit the model on copies perturbed by N(0, s^2) instead of landmark pairs
        #[arg(long)]
        synthetic_sigma: Option<f64>,
    },
    /// Localize every query image and write one result line per query
    Localize {
        #[command(flatten)]
        settings: Settings,
    },
    /// Pose recall of a result file against ground truth
    Evaluate {
        #[command(flatten)]
        settings: Settings,
        /// Comma-separated `meters/degrees` pairs
        #[arg(long, default_value = "0.25/2,0.5/5,5/10")]
        thresholds: String,
        /// Also write the CSV table to this file
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Estimate the perturbation model and write it to the model file
    FitModel {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        synthetic_sigma: Option<f64>,
    },
    /// Run the invariant checks on generated fixtures
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a synthetic fixture (map, queries, ground truth, config) to a directory
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FixtureKind::Scene)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Registered-query count over patch coefficients on the image fixture
    Sweep {
        #[command(flatten)]
        settings: Settings,
        #[arg(long, value_delimiter = ',', default_value = "4,8,13,20,32")]
        coefficients: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn model_path(cfg: &RunConfig) -> Result<PathBuf> {
    if let Some(p) = &cfg.model {
        return Ok(p.clone());
    }
    let mut p = cfg.require("forest")?.as_os_str().to_owned();
    p.push(".model");
    Ok(p.into())
}

fn load_forest(path: &Path) -> Result<Forest> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    read_forest(&bytes)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn estimate(map: &parloc::MapDatabase, cfg: &RunConfig, synthetic_sigma: Option<f64>) -> Result<PerturbationModel> {
    let est = match synthetic_sigma {
        Some(s) => fit_model_synthetic(map, s, cfg)?,
        None => fit_model(map, cfg)?,
    };
    if est.degenerate {
        log::warn!("descriptor pairs show no spread; sigma clamped to {}", est.model.sigma());
    }
    Ok(est.model)
}

fn build_index_cmd(cfg: &RunConfig, synthetic_sigma: Option<f64>) -> Result<()> {
    let map = load_map(cfg.require("landmarks")?, cfg.require("frames")?)?;
    let model = estimate(&map, cfg, synthetic_sigma)?;
    let forest = build_index(&map, cfg)?;
    let path = cfg.require("forest")?;
    let mut out = create(path)?;
    write_forest(&forest, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
    let sidecar = model_path(cfg)?;
    save_model(&model, &sidecar)?;

    println!(
        "forest: {} trees, depth {}, {} entries, {} nonempty leaves",
        forest.trees().len(),
        forest.depth(),
        forest.entry_count(),
        forest.nonempty_leaf_count()
    );
    println!("model: mu {:.6} sigma {:.6} ({})", model.mu(), model.sigma(), sidecar.display());
    let mut hist: Vec<usize> = Vec::new();
    for tree in forest.trees() {
        let h = tree.occupancy_histogram();
        if hist.len() < h.len() {
            hist.resize(h.len(), 0);
        }
        hist.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
    }
    println!("leaf occupancy (entries: leaves)");
    for (size, count) in hist.iter().enumerate().filter(|(_, c)| **c > 0) {
        println!("  {size:>6}: {count}");
    }
    Ok(())
}

fn localize_cmd(cfg: &RunConfig) -> Result<()> {
    let map = load_map(cfg.require("landmarks")?, cfg.require("frames")?)?;
    let forest = load_forest(cfg.require("forest")?)?;
    let model = load_model(&model_path(cfg)?)?;
    let queries = load_queries(cfg.require("queries")?)?;
    let out = cfg.require("results")?;
    let index = MapIndex::new(&map, &forest, model)?;
    let results = localize_all(&index, &queries, cfg)?;
    save_results(&results, out)?;

    let count = |s: LocalizationStatus| results.iter().filter(|r| r.status == s).count();
    println!(
        "{} queries: {} ok, {} insufficient_matches, {} ransac_failed (mode {})",
        results.len(),
        count(LocalizationStatus::Ok),
        count(LocalizationStatus::InsufficientMatches),
        count(LocalizationStatus::RansacFailed),
        cfg.mode.as_str()
    );
    Ok(())
}

fn parse_thresholds(text: &str) -> Result<Vec<(f64, f64)>> {
    if text.trim().is_empty() {
        return Ok(DEFAULT_RECALL_THRESHOLDS.to_vec());
    }
    text.split(',')
        .map(|pair| {
            let parsed = pair
                .split_once('/')
                .and_then(|(m, d)| Some((m.trim().parse().ok()?, d.trim().parse().ok()?)));
            match parsed {
                Some((m, d)) if m >= 0.0 && d >= 0.0 => Ok((m, d)),
                _ => Err(Error::Config(format!("invalid threshold {pair:?}, expected meters/degrees"))),
            }
        })
        .collect()
}

fn evaluate_cmd(cfg: &RunConfig, thresholds: &str, csv_path: Option<&Path>) -> Result<()> {
    let thresholds = parse_thresholds(thresholds)?;
    let results = load_results(cfg.require("results")?)?;
    let truth = load_ground_truth(cfg.require("ground_truth")?)?;
    let estimates = results
        .iter()
        .map(|r| Ok((r.query_id, r.estimate()?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let truth = truth
        .iter()
        .map(|(id, p)| Ok((*id, p.to_pose()?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let recall = recall_at_thresholds(&estimates, &truth, &thresholds)?;

    println!("{:>12} {:>12} {:>10}", "meters", "degrees", "recall %");
    for ((m, d), r) in thresholds.iter().zip(&recall) {
        println!("{m:>12.2} {d:>12.1} {r:>10.2}");
    }
    let mut csv = String::from("meters,degrees,recall_percent\n");
    for ((m, d), r) in thresholds.iter().zip(&recall) {
        csv.push_str(&format!("{m},{d},{r:.4}\n"));
    }
    println!();
    print!("{csv}");
    if let Some(path) = csv_path {
        std::fs::write(path, &csv).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
    }
    Ok(())
}

fn fit_model_cmd(cfg: &RunConfig, synthetic_sigma: Option<f64>) -> Result<()> {
    let map = load_map(cfg.require("landmarks")?, cfg.require("frames")?)?;
    let model = estimate(&map, cfg, synthetic_sigma)?;
    let path = cfg.require("model")?;
    save_model(&model, path)?;
    println!("mu {:?} sigma {:?}", model.mu(), model.sigma());
    Ok(())
}

fn selftest_cmd(seed: u64) -> Result<bool> {
    let checks = run_selftest(seed);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn generate_cmd(out: &Path, kind: FixtureKind, queries: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    let file = |name: &str| out.join(name);
    let mut cfg = RunConfig {
        landmarks: Some(file("landmarks.txt")),
        frames: Some(file("frames.txt")),
        forest: Some(file("forest.bin")),
        model: Some(file("model.txt")),
        ..Default::default()
    };
    match kind {
        FixtureKind::Duplicates => {
            let map = duplicate_descriptor_map(1000, 64, 0.01, 0.05, seed)?;
            save_map(&map, file("landmarks.txt").as_path(), file("frames.txt").as_path())?;
        }
        FixtureKind::Scene | FixtureKind::Fusion => {
            let scene = match kind {
                FixtureKind::Fusion => fusion_benchmark(queries / 2, seed)?,
                _ => localization_scene(
                    &SceneParams {
                        seed,
                        ..Default::default()
                    },
                    &vec![QueryKind::Normal; queries],
                )?,
            };
            save_map(&scene.map, file("landmarks.txt").as_path(), file("frames.txt").as_path())?;
            save_queries(&scene.queries, &file("queries.txt"))?;
            save_ground_truth(&scene.ground_truth, &file("ground_truth.txt"))?;
            cfg.queries = Some(file("queries.txt"));
            cfg.results = Some(file("results.txt"));
            cfg.ground_truth = Some(file("ground_truth.txt"));
        }
    }
    let conf = file("parloc.conf");
    std::fs::write(&conf, cfg.to_text()).map_err(|e| Error::Io { path: conf.clone(), source: e })?;
    println!("wrote fixture to {}", out.display());
    Ok(())
}

fn sweep_cmd(cfg: &RunConfig, coefficients: &[f64], seed: u64) -> Result<()> {
    let input = sweep_fixture(seed)?.sweep_input();
    let rows = coefficient_sweep(&input, coefficients, cfg)?;
    println!("{:>12} {:>12} {:>12}", "coefficient", "keypoints", "registered");
    for r in &rows {
        println!("{:>12} {:>12} {:>9}/{}", r.coefficient, r.described_keypoints, r.registered, r.queries);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::BuildIndex {
            settings,
            synthetic_sigma,
        } => build_index_cmd(&settings.resolve()?, synthetic_sigma)?,
        Command::Localize { settings } => localize_cmd(&settings.resolve()?)?,
        Command::Evaluate {
            settings,
            thresholds,
            csv,
        } => evaluate_cmd(&settings.resolve()?, &thresholds, csv.as_deref())?,
        Command::FitModel {
            settings,
            synthetic_sigma,
        } => fit_model_cmd(&settings.resolve()?, synthetic_sigma)?,
        Command::Selftest { seed } => return selftest_cmd(seed),
        Command::Generate {
            out,
            kind,
            queries,
            seed,
        } => generate_cmd(&out, kind, queries, seed)?,
        Command::Sweep {
            settings,
            coefficients,
            seed,
        } => sweep_cmd(&settings.resolve()?, &coefficients, seed)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
