//! File formats, image handling and the patch-coefficient experiment.

mod formats;
mod image;
mod sweep;

pub use formats::{
    format_frames, format_ground_truth, format_landmarks, format_model, format_queries, format_results, load_ground_truth,
    load_map, load_model, load_queries, load_results, parse_frames, parse_ground_truth, parse_landmarks, parse_model, parse_queries,
    parse_results, save_ground_truth, save_map, save_model, save_queries, save_results, PoseRecord, QueryImage, QuerySet,
    ResultRecord,
};
pub use image::{
    describe_patch, extract_patch, load_pgm, read_pgm, save_pgm, thumbnail_descriptor, write_pgm, GrayImage, Patch,
    DEFAULT_PATCH_COEFFICIENT, PATCH_SIZE,
};
pub use sweep::{coefficient_sweep, map_at_coefficient, queries_at_coefficient, ImageObservations, SweepInput, SweepRow};
