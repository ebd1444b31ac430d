//! Time-varying detection thresholds `h_t` for the streaming Mood detector.
//!
//! Thresholds are calibrated by Monte Carlo under the null. A population of
//! independent i.i.d. streams is advanced in lockstep; at each stream length
//! `t` the threshold is placed so that a fraction `alpha` of the streams that
//! have not yet signalled exceed it, and those streams are retired. The
//! statistic is rank based, so standard normal draws stand in for any
//! continuous null distribution.
//!
//! No test is possible before `2 * min_segment` observations. `alpha` is set
//! to `1 / (arl0 - warmup)` with `warmup = 2 * min_segment - 1`, which makes
//! the expected run length of a null stream equal to `arl0`.
//!
//! Calibrated tables are cached as JSON (see [`ThresholdCache`]). The table
//! for the default parameters ships with the crate.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mood::{MoodStream, SplitMax};
use crate::rng::stream_rng;
use crate::{Error, Result};

pub const TABLE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ARL0: u64 = 10_000;
pub const DEFAULT_MIN_SEGMENT: usize = 30;
pub const DEFAULT_T_MAX: usize = 1_000;
pub const DEFAULT_TRIALS: usize = 100_000;
pub const DEFAULT_CALIBRATION_SEED: u64 = 20_210_601;

/// Fewest surviving streams at which a threshold is still estimated.
pub const MIN_SURVIVORS: usize = 100;

/// Environment variable naming the threshold cache directory.
pub const CACHE_DIR_ENV: &str = "VOLREGIME_THRESHOLD_CACHE";

const BUNDLED_DEFAULT: &str = include_str!("../../data/mood_arl10000_min30_t1000_n100000_s20210601.json");

/// Everything a calibration run depends on. Also the cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub arl0: u64,
    pub min_segment: usize,
    pub t_max: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            arl0: DEFAULT_ARL0,
            min_segment: DEFAULT_MIN_SEGMENT,
            t_max: DEFAULT_T_MAX,
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_CALIBRATION_SEED,
        }
    }
}

impl CalibrationParams {
    /// First stream length at which a split can be tested.
    pub fn first_t(&self) -> usize {
        2 * self.min_segment
    }

    /// Per-step false alarm probability among surviving streams.
    pub fn alpha(&self) -> f64 {
        1.0 / (self.arl0 as f64 - (self.first_t() - 1) as f64)
    }

    pub fn file_name(&self) -> String {
        format!(
            "mood_arl{}_min{}_t{}_n{}_s{}.json",
            self.arl0, self.min_segment, self.t_max, self.trials, self.seed
        )
    }

    fn validate(&self) -> Result<()> {
        if self.min_segment < 2 {
            return Err(Error::InvalidParameter("min_segment must be at least 2".into()));
        }
        if self.arl0 < 2 || self.arl0 as usize <= self.first_t() {
            return Err(Error::InvalidParameter(format!(
                "arl0 = {} must exceed the {} observations needed before the first test",
                self.arl0,
                self.first_t()
            )));
        }
        if self.trials < 1000 {
            return Err(Error::InvalidParameter(format!(
                "at least 1000 calibration trials are required, got {}",
                self.trials
            )));
        }
        if self.t_max < self.first_t() {
            return Err(Error::InvalidParameter(format!(
                "t_max = {} is below the first testable length {}",
                self.t_max,
                self.first_t()
            )));
        }
        Ok(())
    }
}

/// Thresholds `h_t` for `t` in `[2 * min_segment, t_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub format_version: u32,
    pub params: CalibrationParams,
    /// `thresholds[i]` is `h_t` for `t = 2 * min_segment + i`.
    pub thresholds: Vec<f64>,
    /// Surviving null streams at each calibrated `t`.
    pub survivors: Vec<usize>,
}

impl ThresholdTable {
    pub fn arl0(&self) -> u64 {
        self.params.arl0
    }

    pub fn min_segment(&self) -> usize {
        self.params.min_segment
    }

    pub fn t_max(&self) -> usize {
        self.params.t_max
    }

    /// `h_t`, or `None` while the stream is too short to test. Lengths past
    /// `t_max` reuse `h_{t_max}`.
    pub fn threshold(&self, t: usize) -> Option<f64> {
        let first = self.params.first_t();
        if t < first {
            return None;
        }
        let i = (t - first).min(self.thresholds.len() - 1);
        Some(self.thresholds[i])
    }

    /// The table for the default parameters, compiled into the crate.
    pub fn bundled_default() -> ThresholdTable {
        static TABLE: OnceLock<ThresholdTable> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                let table: ThresholdTable =
                    serde_json::from_str(BUNDLED_DEFAULT).expect("bundled threshold table is valid JSON");
                debug_assert_eq!(table.params, CalibrationParams::default());
                table
            })
            .clone()
    }

    pub fn load(path: &Path) -> Result<ThresholdTable> {
        let text = std::fs::read_to_string(path)?;
        let table: ThresholdTable = serde_json::from_str(&text)?;
        if table.format_version != TABLE_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "{}: threshold table format {} is not supported (expected {})",
                path.display(),
                table.format_version,
                TABLE_FORMAT_VERSION
            )));
        }
        let expected = table.params.t_max + 1 - table.params.first_t();
        if table.thresholds.len() != expected || table.thresholds.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Validation(format!(
                "{}: threshold table is incomplete or has non-positive entries",
                path.display()
            )));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

struct NullStream {
    rng: ChaCha8Rng,
    mood: MoodStream,
    last: Option<SplitMax>,
}

/// Monte Carlo calibration of the threshold sequence.
///
/// Deterministic given `params`: stream `i` draws from its own generator
/// derived from `(seed, i)`, and all per-step reductions are order independent.
pub fn calibrate_thresholds(params: CalibrationParams) -> Result<ThresholdTable> {
    params.validate()?;
    let alpha = params.alpha();
    let required = MIN_SURVIVORS.max((1.0 / alpha).ceil() as usize);
    let first = params.first_t();

    let mut streams: Vec<NullStream> = (0..params.trials)
        .map(|i| NullStream {
            rng: stream_rng(params.seed, i as u64),
            mood: MoodStream::with_capacity(params.min_segment, params.t_max),
            last: None,
        })
        .collect();

    let mut thresholds = Vec::with_capacity(params.t_max + 1 - first);
    let mut survivors = Vec::with_capacity(params.t_max + 1 - first);
    let mut stats = Vec::with_capacity(params.trials);

    for t in 1..=params.t_max {
        streams.par_iter_mut().for_each(|s| {
            let x: f64 = s.rng.sample(StandardNormal);
            s.last = s.mood.push(x);
        });
        if t < first {
            continue;
        }
        if streams.len() < required {
            return Err(Error::CalibrationExhausted {
                t,
                survivors: streams.len(),
                required,
            });
        }

        stats.clear();
        stats.extend(streams.iter().map(|s| s.last.expect("testable length").statistic));
        let k = (alpha * stats.len() as f64).floor() as usize;
        // descending: stats[..k] are the k largest, stats[k] the next one
        let (upper, kth_next, _) = stats.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
        let kth_next = *kth_next;
        let kth = upper.iter().copied().fold(f64::INFINITY, f64::min);
        let h = 0.5 * (kth + kth_next);

        thresholds.push(h);
        survivors.push(streams.len());
        streams.retain(|s| s.last.is_none_or(|m| m.statistic <= h));

        if t % 100 == 0 {
            log::info!(
                "calibration t = {t}/{}: h = {h:.4}, survivors = {}",
                params.t_max,
                streams.len()
            );
        }
    }

    Ok(ThresholdTable {
        format_version: TABLE_FORMAT_VERSION,
        params,
        thresholds,
        survivors,
    })
}

/// Directory of calibrated tables keyed by [`CalibrationParams`].
#[derive(Debug, Clone)]
pub struct ThresholdCache {
    dir: PathBuf,
}

impl ThresholdCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$VOLREGIME_THRESHOLD_CACHE`, falling back to `.volregime-cache` in the
    /// working directory.
    pub fn from_env() -> Self {
        let dir = std::env::var_os(CACHE_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(".volregime-cache"));
        Self::new(dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, params: &CalibrationParams) -> PathBuf {
        self.dir.join(params.file_name())
    }

    /// Returns the bundled table, a cached table, or calibrates and caches a
    /// new one, in that order.
    pub fn get_or_calibrate(&self, params: CalibrationParams) -> Result<ThresholdTable> {
        if params == CalibrationParams::default() {
            return Ok(ThresholdTable::bundled_default());
        }
        let path = self.path_for(&params);
        if path.exists() {
            let table = ThresholdTable::load(&path)?;
            if table.params == params {
                return Ok(table);
            }
            log::warn!("{} holds a table for different parameters; recalibrating", path.display());
        }
        log::info!("calibrating thresholds for {params:?}");
        let table = calibrate_thresholds(params)?;
        table.save(&path)?;
        Ok(table)
    }
}
