//! Run configuration shared by the command-line tools. Serialized as
//! `key = value` lines; `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::DEFAULT_PATCH_COEFFICIENT;
use crate::matcher::{SearchConfig, SearchMode, DEFAULT_RATIO_THRESHOLD};
use crate::pose::{RansacParams, DEFAULT_CONFIDENCE, DEFAULT_INLIER_THRESHOLD_PX, DEFAULT_MAX_ITERATIONS, DEFAULT_MIN_INLIERS};
use crate::retrieval::DEFAULT_KNN_FRAMES;
use crate::rtree::{
    DEFAULT_CANDIDATE_DIMS, DEFAULT_DEPTH, DEFAULT_MAX_LEAVES, DEFAULT_SAMPLES_PER_TEST, DEFAULT_TESTS_TO_SAMPLE,
    DEFAULT_TREES, MAX_DEPTH,
};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub trees: usize,
    pub depth: u32,
    pub candidate_dims: usize,
    pub forest_seed: u64,

    pub max_leaves: usize,
    pub knn_frames: usize,
    pub ratio_threshold: f64,
    pub mode: SearchMode,
    pub strict_ratio: bool,

    pub inlier_threshold_px: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inliers: usize,
    pub ransac_seed: u64,

    pub model_tests: usize,
    pub model_samples: usize,
    pub model_seed: u64,

    pub patch_coefficient: f64,

    pub landmarks: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub forest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trees: DEFAULT_TREES,
            depth: DEFAULT_DEPTH,
            candidate_dims: DEFAULT_CANDIDATE_DIMS,
            forest_seed: 0,
            max_leaves: DEFAULT_MAX_LEAVES,
            knn_frames: DEFAULT_KNN_FRAMES,
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            mode: SearchMode::Fused,
            strict_ratio: false,
            inlier_threshold_px: DEFAULT_INLIER_THRESHOLD_PX,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            confidence: DEFAULT_CONFIDENCE,
            min_inliers: DEFAULT_MIN_INLIERS,
            ransac_seed: 0,
            model_tests: DEFAULT_TESTS_TO_SAMPLE,
            model_samples: DEFAULT_SAMPLES_PER_TEST,
            model_seed: 0,
            patch_coefficient: DEFAULT_PATCH_COEFFICIENT,
            landmarks: None,
            frames: None,
            forest: None,
            model: None,
            queries: None,
            results: None,
            ground_truth: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "trees",
        "depth",
        "candidate_dims",
        "forest_seed",
        "max_leaves",
        "knn_frames",
        "ratio_threshold",
        "mode",
        "strict_ratio",
        "inlier_threshold_px",
        "max_iterations",
        "confidence",
        "min_inliers",
        "ransac_seed",
        "model_tests",
        "model_samples",
        "model_seed",
        "patch_coefficient",
        "landmarks",
        "frames",
        "forest",
        "model",
        "queries",
        "results",
        "ground_truth",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "trees" => self.trees = parse_num(key, value)?,
            "depth" => self.depth = parse_num(key, value)?,
            "candidate_dims" => self.candidate_dims = parse_num(key, value)?,
            "forest_seed" => self.forest_seed = parse_num(key, value)?,
            "max_leaves" => self.max_leaves = parse_num(key, value)?,
            "knn_frames" => self.knn_frames = parse_num(key, value)?,
            "ratio_threshold" => self.ratio_threshold = parse_num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "strict_ratio" => self.strict_ratio = parse_bool(key, value)?,
            "inlier_threshold_px" => self.inlier_threshold_px = parse_num(key, value)?,
            "max_iterations" => self.max_iterations = parse_num(key, value)?,
            "confidence" => self.confidence = parse_num(key, value)?,
            "min_inliers" => self.min_inliers = parse_num(key, value)?,
            "ransac_seed" => self.ransac_seed = parse_num(key, value)?,
            "model_tests" => self.model_tests = parse_num(key, value)?,
            "model_samples" => self.model_samples = parse_num(key, value)?,
            "model_seed" => self.model_seed = parse_num(key, value)?,
            "patch_coefficient" => self.patch_coefficient = parse_num(key, value)?,
            "landmarks" => self.landmarks = path(),
            "frames" => self.frames = path(),
            "forest" => self.forest = path(),
            "model" => self.model = path(),
            "queries" => self.queries = path(),
            "results" => self.results = path(),
            "ground_truth" => self.ground_truth = path(),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Canonical `key = value` text; unset paths are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("trees", self.trees.to_string());
        kv("depth", self.depth.to_string());
        kv("candidate_dims", self.candidate_dims.to_string());
        kv("forest_seed", self.forest_seed.to_string());
        kv("max_leaves", self.max_leaves.to_string());
        kv("knn_frames", self.knn_frames.to_string());
        kv("ratio_threshold", format!("{:?}", self.ratio_threshold));
        kv("mode", self.mode.as_str().to_string());
        kv("strict_ratio", self.strict_ratio.to_string());
        kv("inlier_threshold_px", format!("{:?}", self.inlier_threshold_px));
        kv("max_iterations", self.max_iterations.to_string());
        kv("confidence", format!("{:?}", self.confidence));
        kv("min_inliers", self.min_inliers.to_string());
        kv("ransac_seed", self.ransac_seed.to_string());
        kv("model_tests", self.model_tests.to_string());
        kv("model_samples", self.model_samples.to_string());
        kv("model_seed", self.model_seed.to_string());
        kv("patch_coefficient", format!("{:?}", self.patch_coefficient));
        for (k, v) in [
            ("landmarks", &self.landmarks),
            ("frames", &self.frames),
            ("forest", &self.forest),
            ("model", &self.model),
            ("queries", &self.queries),
            ("results", &self.results),
            ("ground_truth", &self.ground_truth),
        ] {
            if let Some(p) = v {
                kv(k, p.display().to_string());
            }
        }
        out
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            max_leaves: self.max_leaves,
            knn_frames_k: self.knn_frames,
            ratio_threshold: self.ratio_threshold,
            mode: self.mode,
            strict_ratio: self.strict_ratio,
        }
    }

    pub fn ransac_params(&self) -> RansacParams {
        RansacParams {
            inlier_threshold_px: self.inlier_threshold_px,
            max_iterations: self.max_iterations,
            confidence: self.confidence,
            min_inliers: self.min_inliers,
            seed: self.ransac_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::Config("trees must be at least 1".into()));
        }
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(Error::Config(format!("depth must lie in 1..={MAX_DEPTH}, got {}", self.depth)));
        }
        if self.candidate_dims == 0 {
            return Err(Error::Config("candidate_dims must be at least 1".into()));
        }
        if self.model_tests == 0 || self.model_samples == 0 {
            return Err(Error::Config("model_tests and model_samples must be at least 1".into()));
        }
        if !(self.patch_coefficient > 0.0 && self.patch_coefficient.is_finite()) {
            return Err(Error::Config(format!(
                "patch_coefficient must be positive, got {}",
                self.patch_coefficient
            )));
        }
        self.search_config().validate()?;
        self.ransac_params().validate()
    }

    /// The path stored under `key`, or a configuration error naming it.
    pub fn require(&self, key: &str) -> Result<&Path> {
        let value = match key {
            "landmarks" => &self.landmarks,
            "frames" => &self.frames,
            "forest" => &self.forest,
            "model" => &self.model,
            "queries" => &self.queries,
            "results" => &self.results,
            "ground_truth" => &self.ground_truth,
            _ => return Err(Error::Config(format!("{key:?} is not a path setting"))),
        };
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required setting {key} (--{})", key.replace('_', "-"))))
    }
}
