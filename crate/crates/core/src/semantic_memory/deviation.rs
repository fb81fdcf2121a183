use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DeviationEvent, GroundTruthTrajectory, MemoryError, ReasoningLog};
use crate::geometry::{point_segment_distance, Point2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub s_hi: f64,
    pub s_lo: f64,
    pub step: f64,
    pub p_stop: f64,
    pub rng_seed: u64,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        Self {
            s_hi: 2.0,
            s_lo: 0.2,
            step: 0.1,
            p_stop: 0.5,
            rng_seed: 0,
        }
    }
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let ok = self.s_lo > 0.0
            && self.s_hi > self.s_lo
            && self.step > 0.0
            && self.s_hi - self.s_lo >= self.step - 1e-12
            && self.p_stop > 0.0
            && self.p_stop <= 1.0
            && self.s_hi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(MemoryError::Config(format!("malformed threshold schedule {self:?}")))
        }
    }

    /// Thresholds from `s_hi` down to `s_lo` inclusive.
    pub fn thresholds(&self) -> Vec<f64> {
        let n = ((self.s_hi - self.s_lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.s_hi - i as f64 * self.step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    /// The threshold the sweep settled on; `None` when nothing ever crosses.
    pub s_stop: Option<f64>,
    pub events: Vec<DeviationEvent>,
}

/// Distance from each logged position to the reference polyline.
pub fn deviation_series(log: &ReasoningLog, gt: &GroundTruthTrajectory) -> Result<Vec<f64>, MemoryError> {
    if log.is_empty() {
        return Err(MemoryError::Invalid("reasoning log is empty".into()));
    }
    Ok(log
        .entries
        .iter()
        .map(|e| polyline_distance(e.point.position, &gt.waypoints))
        .collect())
}

fn polyline_distance(p: Point2, pts: &[Point2]) -> f64 {
    pts.windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Indices `t >= 1` where the series rises above `s`.
pub fn crossing_indices(series: &[f64], s: f64) -> Vec<usize> {
    (1..series.len())
        .filter(|&t| series[t] > s && series[t - 1] <= s)
        .collect()
}

pub fn crossing_count(series: &[f64], s: f64) -> usize {
    series.windows(2).filter(|w| w[1] > s && w[0] <= s).count()
}

/// Sweeps the schedule's thresholds and picks one with a handful of crossings.
/// Events carry the series index as their timestep and no image.
pub fn detect_deviations(series: &[f64], schedule: &ThresholdSchedule) -> Result<DeviationResult, MemoryError> {
    schedule.validate()?;
    if series.len() < 2 {
        return Err(MemoryError::Invalid("series needs at least two values".into()));
    }
    let thresholds = schedule.thresholds();
    let counts: Vec<usize> = thresholds.iter().map(|&s| crossing_count(series, s)).collect();
    let in_band = |k: usize| (3..=5).contains(&k);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.rng_seed);

    let mut chosen = None;
    for (i, &k) in counts.iter().enumerate() {
        if in_band(k) && rng.random_bool(schedule.p_stop) {
            chosen = Some(i);
            break;
        }
    }
    // Earlier index means larger threshold, so `min_by_key` breaks ties upward.
    if chosen.is_none() {
        chosen = (0..counts.len())
            .filter(|&i| in_band(counts[i]))
            .min_by_key(|&i| counts[i].abs_diff(4));
    }
    if chosen.is_none() {
        chosen = (0..counts.len())
            .filter(|&i| counts[i] <= 5)
            .max_by_key(|&i| (counts[i], std::cmp::Reverse(i)));
    }
    if chosen.is_none() {
        chosen = (0..counts.len()).min_by_key(|&i| counts[i]);
    }
    let i = chosen.expect("at least one threshold");
    if counts[i] == 0 {
        return Ok(DeviationResult {
            s_stop: None,
            events: Vec::new(),
        });
    }
    let s = thresholds[i];
    Ok(DeviationResult {
        s_stop: Some(s),
        events: crossing_indices(series, s)
            .into_iter()
            .map(|t| DeviationEvent {
                timestep: t as u64,
                h_value: series[t],
                threshold_used: s,
                image_ref: String::new(),
            })
            .collect(),
    })
}

/// [`detect_deviations`] on a log, with events mapped to its timesteps and images.
pub fn detect_log_deviations(
    log: &ReasoningLog,
    gt: &GroundTruthTrajectory,
    schedule: &ThresholdSchedule,
) -> Result<DeviationResult, MemoryError> {
    let series = deviation_series(log, gt)?;
    let mut result = detect_deviations(&series, schedule)?;
    for ev in &mut result.events {
        let entry = &log.entries[ev.timestep as usize];
        ev.timestep = entry.timestep;
        ev.image_ref = entry.point.image_ref.clone();
    }
    Ok(result)
}
