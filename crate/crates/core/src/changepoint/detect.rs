use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::mood::MoodStream;
use super::thresholds::ThresholdTable;
use crate::market_data::ReturnSeries;
use crate::{Error, Result};

/// One declared change point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Index of the first observation of the new segment.
    pub change_point: usize,
    /// Index of the observation whose arrival triggered the detection.
    pub detection_time: usize,
    pub statistic: f64,
}

/// Change points of a series of length `len`.
///
/// Segment `j` covers `[change_points[j-1], change_points[j])`, with `0` and
/// `len` as implicit outer boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPartition {
    pub len: usize,
    pub min_segment: usize,
    pub change_points: Vec<usize>,
    pub detection_times: Vec<usize>,
}

impl SegmentPartition {
    /// A partition with no change points.
    pub fn whole(len: usize, min_segment: usize) -> Self {
        Self {
            len,
            min_segment,
            change_points: Vec::new(),
            detection_times: Vec::new(),
        }
    }

    pub fn from_change_points(len: usize, min_segment: usize, change_points: Vec<usize>) -> Result<Self> {
        let detection_times = change_points.clone();
        let p = Self {
            len,
            min_segment,
            change_points,
            detection_times,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_segments(&self) -> usize {
        self.change_points.len() + 1
    }

    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut bounds = Vec::with_capacity(self.change_points.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.change_points);
        bounds.push(self.len);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.detection_times.len() != self.change_points.len() {
            return Err(Error::Contract("one detection time per change point".into()));
        }
        for seg in self.segments() {
            if seg.end <= seg.start || seg.len() < self.min_segment {
                return Err(Error::Contract(format!(
                    "segment {seg:?} is shorter than the minimum {}",
                    self.min_segment
                )));
            }
        }
        if self
            .change_points
            .iter()
            .zip(&self.detection_times)
            .any(|(c, d)| d < c)
        {
            return Err(Error::Contract("detection precedes its change point".into()));
        }
        Ok(())
    }
}

/// Streaming detector with automatic restarts.
///
/// Holds the observations since the last restart. A change is declared when
/// the statistic over splits leaving `min_segment` values on both sides
/// exceeds the threshold. It is then placed at the best split with
/// `min_segment` values on the left and at least one on the right, since a
/// large shift is usually flagged before a full minimum segment follows it.
/// The first `m` observations are dropped and the rest are fed again from
/// scratch, exactly as if the stream had started at the change point. A
/// replay can itself trigger further detections.
#[derive(Debug, Clone)]
pub struct OnlineDetector<'a> {
    table: &'a ThresholdTable,
    stream: MoodStream,
    buffer: Vec<f64>,
    start: usize,
}

impl<'a> OnlineDetector<'a> {
    pub fn new(table: &'a ThresholdTable) -> Self {
        Self {
            table,
            stream: MoodStream::new(table.min_segment()),
            buffer: Vec::new(),
            start: 0,
        }
    }

    /// Global index of the first observation since the last restart.
    pub fn segment_start(&self) -> usize {
        self.start
    }

    /// Observations consumed so far.
    pub fn position(&self) -> usize {
        self.start + self.buffer.len()
    }

    pub fn push(&mut self, x: f64) -> Vec<Detection> {
        self.buffer.push(x);
        let mut out = Vec::new();
        while self.stream.len() < self.buffer.len() {
            let value = self.buffer[self.stream.len()];
            let Some(best) = self.stream.push(value) else {
                continue;
            };
            let n = self.stream.len();
            let h = self.table.threshold(n).expect("testable length has a threshold");
            if best.statistic > h {
                let split = self.stream.locate().map_or(best.split, |l| l.split);
                let change_point = self.start + split;
                out.push(Detection {
                    change_point,
                    detection_time: self.start + n - 1,
                    statistic: best.statistic,
                });
                self.buffer.drain(..split);
                self.start = change_point;
                self.stream.clear();
            }
        }
        out
    }
}

/// Runs the streaming detector over a whole return series.
pub fn detect_changepoints(returns: &ReturnSeries, table: &ThresholdTable) -> Result<SegmentPartition> {
    detect_in_values(returns.values(), table)
}

/// Same as [`detect_changepoints`] on a bare slice.
pub fn detect_in_values(values: &[f64], table: &ThresholdTable) -> Result<SegmentPartition> {
    let min_segment = table.min_segment();
    if values.len() < 2 * min_segment {
        return Err(Error::InsufficientData {
            needed: 2 * min_segment,
            got: values.len(),
        });
    }
    let mut detector = OnlineDetector::new(table);
    let mut partition = SegmentPartition::whole(values.len(), min_segment);
    for &x in values {
        for d in detector.push(x) {
            partition.change_points.push(d.change_point);
            partition.detection_times.push(d.detection_time);
        }
    }
    // a change placed too close to the end leaves a stub; fold it back
    while partition.change_points.last().is_some_and(|&c| values.len() - c < min_segment) {
        partition.change_points.pop();
        partition.detection_times.pop();
    }
    debug_assert!(partition.validate().is_ok());
    Ok(partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::changepoint::{calibrate_thresholds, CalibrationParams};
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, sd: f64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn single_variance_change_is_found() {
        let table = ThresholdTable::bundled_default();
        // variance 1 then variance 4
        let mut xs = normals(1, 200, 1.0);
        xs.extend(normals(2, 200, 2.0));
        let p = detect_in_values(&xs, &table).unwrap();
        assert_eq!(p.change_points.len(), 1, "{p:?}");
        assert!(p.change_points[0].abs_diff(200) <= 30);
        assert!(p.detection_times[0] >= p.change_points[0]);
    }

    #[test]
    fn null_series_rarely_alarm() {
        let table = ThresholdTable::bundled_default();
        let quiet = (0..50)
            .filter(|s| {
                detect_in_values(&normals(1000 + s, 400, 1.0), &table)
                    .unwrap()
                    .change_points
                    .is_empty()
            })
            .count();
        assert!(quiet >= 45, "{quiet} of 50 null series without detections");
    }

    #[test]
    fn constant_series_has_no_change_points() {
        let table = ThresholdTable::bundled_default();
        let p = detect_in_values(&[0.25; 300], &table).unwrap();
        assert!(p.change_points.is_empty());
        assert_eq!(p.segments(), vec![0..300]);
    }

    #[test]
    fn too_short_series_is_rejected() {
        let table = ThresholdTable::bundled_default();
        assert!(matches!(
            detect_in_values(&[0.0; 59], &table),
            Err(Error::InsufficientData { needed: 60, got: 59 })
        ));
    }

    #[test]
    fn restart_reproduces_suffix_trajectory() {
        let table = calibrate_thresholds(CalibrationParams {
            arl0: 300,
            min_segment: 15,
            t_max: 300,
            trials: 3000,
            seed: 5,
        })
        .unwrap();
        let mut xs = normals(7, 150, 1.0);
        xs.extend(normals(8, 150, 5.0));
        xs.extend(normals(9, 150, 0.5));
        let full = detect_in_values(&xs, &table).unwrap();
        assert!(!full.change_points.is_empty());
        let tau = full.change_points[0];
        let suffix = detect_in_values(&xs[tau..], &table).unwrap();
        let shifted: Vec<usize> = suffix.change_points.iter().map(|c| c + tau).collect();
        assert_eq!(shifted, full.change_points[1..]);
        let shifted: Vec<usize> = suffix.detection_times.iter().map(|c| c + tau).collect();
        assert_eq!(shifted, full.detection_times[1..]);
    }

    #[test]
    fn segments_respect_min_length() {
        let table = ThresholdTable::bundled_default();
        for seed in 0..10 {
            let mut xs = Vec::new();
            for (j, sd) in [1.0, 3.0, 0.5, 2.0, 0.25].iter().enumerate() {
                xs.extend(normals(seed * 10 + j as u64, 40 + 20 * j, *sd));
            }
            let p = detect_in_values(&xs, &table).unwrap();
            p.validate().unwrap();
            assert!(p.segments().iter().all(|s| s.len() >= 30));
        }
    }

    #[test]
    fn partition_validation() {
        assert!(SegmentPartition::from_change_points(100, 30, vec![40]).is_ok());
        assert!(SegmentPartition::from_change_points(100, 30, vec![20]).is_err());
        assert!(SegmentPartition::from_change_points(100, 30, vec![80]).is_err());
        let p = SegmentPartition::from_change_points(100, 10, vec![30, 60]).unwrap();
        assert_eq!(p.segments(), vec![0..30, 30..60, 60..100]);
        assert_eq!(p.n_segments(), 3);
    }
}
