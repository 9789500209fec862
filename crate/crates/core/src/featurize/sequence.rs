use super::stats::{stat_features, FEATURE_DIM};
use crate::error::Result;
use crate::ingest::{Segment, TrackPoint};

/// `[x, y, v_x, v_y]`.
pub const SEQ_CHANNELS: usize = 4;

/// Both views of one segment.
///
/// `f` holds raw (unstandardized) features; the standardizer is applied when
/// a batch is assembled. `points` are the subsampled, centered fixes the
/// sequence was derived from and feed re-derivation under augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct DualView {
    pub f: [f64; FEATURE_DIM],
    pub seq: Vec<[f64; SEQ_CHANNELS]>,
    /// `false` rows were masked by augmentation and count as padding.
    pub mask: Vec<bool>,
    pub points: Vec<TrackPoint>,
}

impl DualView {
    pub fn from_segment(seg: &Segment, t_max: usize) -> Result<Self> {
        let f = stat_features(&seg.points)?;
        let idx = subsample_indices(seg.points.len(), t_max);
        let mut points: Vec<TrackPoint> = idx.iter().map(|&i| seg.points[i]).collect();
        center(&mut points);
        let seq = motion_sequence(&points, t_max);
        Ok(DualView {
            f,
            mask: vec![true; seq.len()],
            seq,
            points,
        })
    }

    pub fn valid_len(&self) -> usize {
        self.seq.len()
    }

    pub fn survivors(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `min(n, t_max)` indices spread uniformly over `0..n`, always including
/// both ends.
pub fn subsample_indices(n: usize, t_max: usize) -> Vec<usize> {
    if n <= t_max {
        return (0..n).collect();
    }
    if t_max == 1 {
        return vec![0];
    }
    (0..t_max).map(|i| i * (n - 1) / (t_max - 1)).collect()
}

/// Rows `[x, y, v_x, v_y]` with positions centered on their mean and forward
/// difference velocities; the last row repeats the previous velocity.
/// Inputs longer than `t_max` are uniformly subsampled first.
pub fn motion_sequence(points: &[TrackPoint], t_max: usize) -> Vec<[f64; SEQ_CHANNELS]> {
    let mut p: Vec<TrackPoint> = subsample_indices(points.len(), t_max)
        .iter()
        .map(|&i| points[i])
        .collect();
    center(&mut p);
    let vel = forward_velocities(&p);
    p.iter().zip(vel).map(|(q, v)| [q.x, q.y, v.0, v.1]).collect()
}

pub(crate) fn forward_velocities(p: &[TrackPoint]) -> Vec<(f64, f64)> {
    let n = p.len();
    let mut v = Vec::with_capacity(n);
    for i in 0..n.saturating_sub(1) {
        let dt = p[i + 1].t - p[i].t;
        v.push(((p[i + 1].x - p[i].x) / dt, (p[i + 1].y - p[i].y) / dt));
    }
    match v.last().copied() {
        Some(last) => v.push(last),
        None if n == 1 => v.push((0.0, 0.0)),
        None => {}
    }
    v
}

pub(crate) fn center(p: &mut [TrackPoint]) {
    if p.is_empty() {
        return;
    }
    let n = p.len() as f64;
    let mx = p.iter().map(|q| q.x).sum::<f64>() / n;
    let my = p.iter().map(|q| q.y).sum::<f64>() / n;
    for q in p.iter_mut() {
        q.x -= mx;
        q.y -= my;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp(x: f64, y: f64, t: f64) -> TrackPoint {
        TrackPoint { x, y, t }
    }

    #[test]
    fn two_points_last_copy() {
        let s = motion_sequence(&[tp(0.0, 0.0, 0.0), tp(3.0, 0.0, 1.0)], 512);
        assert_eq!(s[0][2], 3.0);
        assert_eq!(s[1][2], 3.0);
        assert_eq!((s[0][0], s[1][0]), (-1.5, 1.5));
    }

    #[test]
    fn stationary_is_all_zero() {
        let p: Vec<TrackPoint> = (0..6).map(|i| tp(7.0, 7.0, i as f64)).collect();
        for row in motion_sequence(&p, 512) {
            assert_eq!(row, [0.0; 4]);
        }
    }

    #[test]
    fn subsampling_is_uniform() {
        let idx = subsample_indices(2000, 512);
        assert_eq!(idx.len(), 512);
        assert_eq!((idx[0], idx[511]), (0, 1999));
        let gaps: Vec<usize> = idx.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g == 3 || g == 4));
        let p: Vec<TrackPoint> = (0..2000).map(|i| tp(i as f64, 0.0, i as f64)).collect();
        assert_eq!(motion_sequence(&p, 512).len(), 512);
    }

    #[test]
    fn positions_are_centered() {
        let p: Vec<TrackPoint> = (0..37)
            .map(|i| tp(1e4 + (i * i) as f64, -3e3 + i as f64 * 0.7, i as f64))
            .collect();
        let s = motion_sequence(&p, 512);
        let mx = s.iter().map(|r| r[0]).sum::<f64>() / s.len() as f64;
        let my = s.iter().map(|r| r[1]).sum::<f64>() / s.len() as f64;
        assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
    }
}
