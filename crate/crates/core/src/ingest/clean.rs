use serde::{Deserialize, Serialize};

use super::geolife::LabelWindow;
use super::{RawPoint, Segment, TrackPoint, EARTH_RADIUS_M};
use crate::mode::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Minimum points per segment.
    pub min_len: usize,
    pub max_gap_seconds: f64,
    pub max_speed_mps: f64,
    /// Longer segments are chopped into consecutive windows of this length.
    pub max_len: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            min_len: 32,
            max_gap_seconds: 60.0,
            max_speed_mps: 69.44,
            max_len: 1024,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningStats {
    pub points_in: usize,
    pub duplicate_timestamps: usize,
    pub speed_dropped: usize,
    pub short_discarded: usize,
    pub segments_out: usize,
    pub lines_skipped: usize,
    pub windows_dropped: usize,
}

impl CleaningStats {
    pub fn merge(&mut self, other: &CleaningStats) {
        self.points_in += other.points_in;
        self.duplicate_timestamps += other.duplicate_timestamps;
        self.speed_dropped += other.speed_dropped;
        self.short_discarded += other.short_discarded;
        self.segments_out += other.segments_out;
        self.lines_skipped += other.lines_skipped;
        self.windows_dropped += other.windows_dropped;
    }
}

/// A run of raw fixes sharing one label (or none), before projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRun {
    pub points: Vec<RawPoint>,
    pub label: Option<Mode>,
}

/// Assigns each point the mode of the window containing it and cuts the
/// sequence wherever the label changes or consecutive fixes are more than
/// `max_gap_seconds` apart. `windows` must be sorted and non-overlapping.
pub fn align_labels(points: &[RawPoint], windows: &[LabelWindow], max_gap_seconds: f64) -> Vec<LabeledRun> {
    let mut runs: Vec<LabeledRun> = Vec::new();
    let mut w = 0;
    let mut prev_t = f64::NEG_INFINITY;
    for &p in points {
        while w < windows.len() && windows[w].end < p.t {
            w += 1;
        }
        let label = windows.get(w).filter(|win| win.start <= p.t).map(|win| win.mode);
        let cut = match runs.last() {
            Some(run) => run.label != label || p.t - prev_t > max_gap_seconds,
            None => true,
        };
        if cut {
            runs.push(LabeledRun {
                points: Vec::new(),
                label,
            });
        }
        runs.last_mut().expect("run pushed above").points.push(p);
        prev_t = p.t;
    }
    runs
}

/// Local equirectangular projection about the centroid of `points`.
pub fn project_planar(points: &[RawPoint]) -> Vec<TrackPoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let n = points.len() as f64;
    let lat0 = points.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon0 = points.iter().map(|p| p.lon).sum::<f64>() / n;
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let coslat = lat0.to_radians().cos();
    points
        .iter()
        .map(|p| TrackPoint {
            x: k * (p.lon - lon0) * coslat,
            y: k * (p.lat - lat0),
            t: p.t,
        })
        .collect()
}

/// Full cleaning pipeline for one trajectory file.
///
/// Non-increasing timestamps are dropped, labels are aligned, every run is
/// projected about its own centroid, fixes implying a speed above
/// `max_speed_mps` relative to the last kept fix are dropped, the remainder
/// is split at gaps, short pieces are discarded and long ones chopped.
/// Segment ids are `{prefix}/{n}`.
pub fn clean_and_segment(
    points: &[RawPoint],
    windows: &[LabelWindow],
    config: &CleaningConfig,
    user_id: &str,
    prefix: &str,
) -> (Vec<Segment>, CleaningStats) {
    let mut stats = CleaningStats {
        points_in: points.len(),
        ..CleaningStats::default()
    };
    let mut ordered = Vec::with_capacity(points.len());
    for &p in points {
        match ordered.last() {
            Some(&RawPoint { t, .. }) if p.t <= t => stats.duplicate_timestamps += 1,
            _ => ordered.push(p),
        }
    }

    let mut out = Vec::new();
    for run in align_labels(&ordered, windows, config.max_gap_seconds) {
        let planar = project_planar(&run.points);
        let mut kept: Vec<TrackPoint> = Vec::with_capacity(planar.len());
        for p in planar {
            if let Some(q) = kept.last() {
                let speed = (p.x - q.x).hypot(p.y - q.y) / (p.t - q.t);
                if speed > config.max_speed_mps {
                    stats.speed_dropped += 1;
                    continue;
                }
            }
            kept.push(p);
        }
        for piece in split_at_gaps(kept, config.max_gap_seconds) {
            for chunk in chop(piece, config.max_len) {
                if chunk.len() < config.min_len {
                    stats.short_discarded += 1;
                    continue;
                }
                out.push(Segment {
                    points: chunk,
                    label: run.label,
                    user_id: user_id.to_string(),
                    segment_id: format!("{prefix}/{}", out.len()),
                });
            }
        }
    }
    stats.segments_out = out.len();
    (out, stats)
}

fn split_at_gaps(points: Vec<TrackPoint>, max_gap: f64) -> Vec<Vec<TrackPoint>> {
    let mut pieces: Vec<Vec<TrackPoint>> = Vec::new();
    for p in points {
        match pieces.last_mut() {
            Some(cur) if p.t - cur.last().expect("pieces are never empty").t <= max_gap => cur.push(p),
            _ => pieces.push(vec![p]),
        }
    }
    pieces
}

fn chop(points: Vec<TrackPoint>, max_len: usize) -> Vec<Vec<TrackPoint>> {
    if max_len == 0 || points.len() <= max_len {
        return vec![points];
    }
    points.chunks(max_len).map(|c| c.to_vec()).collect()
}
