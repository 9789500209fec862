//! Statistical feature vector.
//!
//! With `n` points, step `i` joins points `i` and `i + 1`: `dt_i`, length
//! `d_i`, speed `s_i = d_i / dt_i`, velocity `u_i`, mid-time `c_i`.
//! Acceleration is the difference of consecutive speeds over the distance of
//! their mid-times, jerk likewise over acceleration mid-times. Turns are
//! measured between consecutive steps longer than [`MOVE_EPS`]; rates divide
//! by the mid-time distance of those steps. Time-weighted fractions weight
//! each step by `dt_i / duration`. Percentiles interpolate linearly between
//! order statistics; standard deviations are population ones. Empty
//! statistics are 0.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ingest::TrackPoint;

pub const FEATURE_DIM: usize = 48;

/// Bumped whenever [`FEATURE_NAMES`] or any definition changes.
pub const FEATURE_LAYOUT_VERSION: &str = "stproc-features-v1";

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "speed_mean",
    "speed_std",
    "speed_min",
    "speed_max",
    "speed_median",
    "speed_p10",
    "speed_p90",
    "speed_cv",
    "acc_mean",
    "acc_std",
    "acc_abs_max",
    "acc_abs_p90",
    "acc_abs_mean",
    "jerk_std",
    "jerk_abs_p90",
    "heading_rate_mean",
    "heading_rate_std",
    "heading_rate_p90",
    "turn_hist_0",
    "turn_hist_1",
    "turn_hist_2",
    "turn_hist_3",
    "turn_hist_4",
    "turn_hist_5",
    "turn_hist_6",
    "turn_hist_7",
    "straightness",
    "hull_compactness",
    "path_length",
    "duration",
    "log_point_count",
    "stop_frac_0.5",
    "stop_frac_1.0",
    "stop_frac_2.0",
    "dwell_count",
    "dwell_mean_duration",
    "dwell_max_duration",
    "speed_hist_0",
    "speed_hist_1",
    "speed_hist_2",
    "speed_hist_3",
    "speed_hist_4",
    "speed_hist_5",
    "speed_hist_6",
    "speed_hist_7",
    "vel_autocorr_1",
    "vel_autocorr_4",
    "vel_autocorr_16",
];

/// Steps shorter than this (meters) carry no heading.
pub const MOVE_EPS: f64 = 1e-6;
pub const STOP_THRESHOLDS: [f64; 3] = [0.5, 1.0, 2.0];
/// Speed below which a step belongs to a dwell episode.
pub const DWELL_SPEED: f64 = 1.0;
/// Lower edges of the speed histogram bins in m/s; the last bin is open.
pub const SPEED_BIN_EDGES: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 7.0, 11.0, 16.0, 24.0];
pub const AUTOCORR_LAGS: [usize; 3] = [1, 4, 16];
const TURN_BINS: usize = 8;

pub fn stat_features(points: &[TrackPoint]) -> Result<[f64; FEATURE_DIM]> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid("stat_features", format!("{n} points, need at least 3")));
    }
    let m = n - 1;
    let mut dt = Vec::with_capacity(m);
    let mut d = Vec::with_capacity(m);
    let mut vel = Vec::with_capacity(m);
    let mut mid = Vec::with_capacity(m);
    for w in points.windows(2) {
        let (dx, dy, t) = (w[1].x - w[0].x, w[1].y - w[0].y, w[1].t - w[0].t);
        if !(t > 0.0) {
            return Err(Error::invalid("stat_features", "timestamps must increase strictly"));
        }
        dt.push(t);
        d.push(dx.hypot(dy));
        vel.push((dx / t, dy / t));
        mid.push(0.5 * (w[0].t + w[1].t));
    }
    let speed: Vec<f64> = d.iter().zip(&dt).map(|(d, t)| d / t).collect();
    let duration = points[m].t - points[0].t;

    let (acc, acc_mid) = derivative(&speed, &mid);
    let (jerk, _) = derivative(&acc, &acc_mid);
    let acc_abs: Vec<f64> = acc.iter().map(|a| a.abs()).collect();
    let jerk_abs: Vec<f64> = jerk.iter().map(|j| j.abs()).collect();

    let mut turns = Vec::new();
    let mut rates = Vec::new();
    let mut prev: Option<usize> = None;
    for i in 0..m {
        if d[i] <= MOVE_EPS {
            continue;
        }
        if let Some(p) = prev {
            let a = wrap_angle(vel[i].1.atan2(vel[i].0) - vel[p].1.atan2(vel[p].0)).abs();
            turns.push(a);
            rates.push(a / (mid[i] - mid[p]));
        }
        prev = Some(i);
    }
    let mut turn_hist = [0.0; TURN_BINS];
    for &a in &turns {
        let b = ((a / (PI / TURN_BINS as f64)) as usize).min(TURN_BINS - 1);
        turn_hist[b] += 1.0;
    }
    if !turns.is_empty() {
        for h in &mut turn_hist {
            *h /= turns.len() as f64;
        }
    }

    let path: f64 = d.iter().sum();
    let net = (points[m].x - points[0].x).hypot(points[m].y - points[0].y);
    let straightness = if path > 0.0 { net / path } else { 0.0 };

    let time_frac = |pred: &dyn Fn(f64) -> bool| -> f64 {
        speed
            .iter()
            .zip(&dt)
            .filter(|(s, _)| pred(**s))
            .map(|(_, t)| t)
            .sum::<f64>()
            / duration
    };

    let mut dwell: Vec<f64> = Vec::new();
    let mut in_dwell = false;
    for i in 0..m {
        if speed[i] < DWELL_SPEED {
            if !in_dwell {
                dwell.push(0.0);
                in_dwell = true;
            }
            *dwell.last_mut().expect("episode opened") += dt[i];
        } else {
            in_dwell = false;
        }
    }

    let energy: f64 = vel.iter().map(|v| v.0 * v.0 + v.1 * v.1).sum();
    let autocorr = |lag: usize| -> f64 {
        if energy == 0.0 || m <= lag {
            return 0.0;
        }
        (0..m - lag)
            .map(|i| vel[i].0 * vel[i + lag].0 + vel[i].1 * vel[i + lag].1)
            .sum::<f64>()
            / energy
    };

    let sp_mean = mean(&speed);
    let sp_std = std(&speed);
    let mut f = Vec::with_capacity(FEATURE_DIM);
    f.extend([
        sp_mean,
        sp_std,
        speed.iter().copied().fold(f64::INFINITY, f64::min),
        speed.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        percentile(&speed, 0.5),
        percentile(&speed, 0.1),
        percentile(&speed, 0.9),
        if sp_mean > 0.0 { sp_std / sp_mean } else { 0.0 },
    ]);
    f.extend([
        mean(&acc),
        std(&acc),
        acc_abs.iter().copied().fold(0.0, f64::max),
        percentile(&acc_abs, 0.9),
        mean(&acc_abs),
    ]);
    f.extend([std(&jerk), percentile(&jerk_abs, 0.9)]);
    f.extend([mean(&rates), std(&rates), percentile(&rates, 0.9)]);
    f.extend(turn_hist);
    f.extend([straightness, hull_compactness(points), path, duration, (n as f64).ln()]);
    f.extend(STOP_THRESHOLDS.iter().map(|&v| time_frac(&|s| s < v)));
    f.extend([
        dwell.len() as f64,
        mean(&dwell),
        dwell.iter().copied().fold(0.0, f64::max),
    ]);
    for (b, &lo) in SPEED_BIN_EDGES.iter().enumerate() {
        let hi = SPEED_BIN_EDGES.get(b + 1).copied().unwrap_or(f64::INFINITY);
        f.push(time_frac(&|s| s >= lo && s < hi));
    }
    f.extend(AUTOCORR_LAGS.iter().map(|&l| autocorr(l)));

    let mut out = [0.0; FEATURE_DIM];
    out.copy_from_slice(&f);
    Ok(out)
}

/// Finite differences of `v` sampled at times `at`, with the mid-times of
/// each difference.
fn derivative(v: &[f64], at: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out = Vec::with_capacity(v.len().saturating_sub(1));
    let mut mids = Vec::with_capacity(v.len().saturating_sub(1));
    for i in 1..v.len() {
        out.push((v[i] - v[i - 1]) / (at[i] - at[i - 1]));
        mids.push(0.5 * (at[i] + at[i - 1]));
    }
    (out, mids)
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64).sqrt()
}

fn percentile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Isoperimetric quotient `4 pi A / P^2` of the convex hull; 0 when the hull
/// has no perimeter.
fn hull_compactness(points: &[TrackPoint]) -> f64 {
    let hull = convex_hull(points);
    let k = hull.len();
    if k < 2 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut perim = 0.0;
    for i in 0..k {
        let (a, b) = (hull[i], hull[(i + 1) % k]);
        area += a.0 * b.1 - b.0 * a.1;
        perim += (b.0 - a.0).hypot(b.1 - a.1);
    }
    if perim > 0.0 {
        4.0 * PI * (0.5 * area.abs()) / (perim * perim)
    } else {
        0.0
    }
}

/// Andrew's monotone chain, counter-clockwise, collinear points removed.
fn convex_hull(points: &[TrackPoint]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> = points.iter().map(|q| (q.x, q.y)).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}
