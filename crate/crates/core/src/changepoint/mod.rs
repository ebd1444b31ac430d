//! Streaming detection of variance change points.
//!
//! Observations are fed one at a time. After each observation the detector
//! takes the largest Mood statistic over all admissible splits of the data
//! seen since the last restart and compares it with a length-dependent
//! threshold. On a detection it restarts from the estimated change point, so
//! every segment holds at least `min_segment` observations.

mod detect;
mod mood;
mod thresholds;

pub use detect::{detect_changepoints, detect_in_values, Detection, OnlineDetector, SegmentPartition};
pub use mood::{mood_moments, mood_statistic, ranks, MoodResult, MoodStream, SplitMax};
pub use thresholds::{
    calibrate_thresholds, CalibrationParams, ThresholdCache, ThresholdTable, CACHE_DIR_ENV,
    DEFAULT_ARL0, DEFAULT_CALIBRATION_SEED, DEFAULT_MIN_SEGMENT, DEFAULT_TRIALS, DEFAULT_T_MAX,
    MIN_SURVIVORS, TABLE_FORMAT_VERSION,
};
