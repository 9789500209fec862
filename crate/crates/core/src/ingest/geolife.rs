use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use super::clean::{clean_and_segment, CleaningConfig, CleaningStats};
use super::{RawPoint, Segment};
use crate::error::{Error, Result};
use crate::mode::Mode;

const PLT_HEADER_LINES: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct PltFile {
    pub points: Vec<RawPoint>,
    /// Data lines that failed to parse or validate.
    pub skipped: usize,
}

/// A labeled time window from a user's `labels.txt`, inclusive at both ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelWindow {
    pub start: f64,
    pub end: f64,
    pub mode: Mode,
}

pub fn parse_plt(path: &Path) -> Result<PltFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_plt_str(&text, path)
}

/// Parses the text of a `.plt` file. `path` is only used in error messages.
pub fn parse_plt_str(text: &str, path: &Path) -> Result<PltFile> {
    let mut points = Vec::new();
    let mut skipped = 0;
    let mut total = 0;
    for line in text.lines().skip(PLT_HEADER_LINES) {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_plt_line(line) {
            Some(p) => points.push(p),
            None => skipped += 1,
        }
    }
    if skipped * 2 > total {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            skipped,
            total,
        });
    }
    if skipped > 0 {
        log::debug!("{}: skipped {skipped} invalid lines", path.display());
    }
    Ok(PltFile { points, skipped })
}

fn parse_plt_line(line: &str) -> Option<RawPoint> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 7 {
        return None;
    }
    let lat: f64 = fields[0].trim().parse().ok()?;
    let lon: f64 = fields[1].trim().parse().ok()?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return None;
    }
    let stamp = format!("{} {}", fields[5].trim(), fields[6].trim());
    let t = NaiveDateTime::parse_from_str(&stamp, "%Y-%m-%d %H:%M:%S").ok()?;
    Some(RawPoint {
        lat,
        lon,
        t: t.and_utc().timestamp() as f64,
    })
}

pub fn parse_labels(path: &Path) -> Result<(Vec<LabelWindow>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_labels_str(&text))
}

/// Parses `labels.txt` (tab separated, one header line). Returns the windows
/// sorted by start time and the number of windows dropped because their mode
/// is outside the five classes, unparsable, or overlaps an earlier window.
pub fn parse_labels_str(text: &str) -> (Vec<LabelWindow>, usize) {
    let mut windows = Vec::new();
    let mut dropped = 0;
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = (fields.len() == 3)
            .then(|| {
                let start = parse_label_time(fields[0])?;
                let end = parse_label_time(fields[1])?;
                (start <= end).then_some((start, end))
            })
            .flatten();
        let Some((start, end)) = parsed else {
            dropped += 1;
            continue;
        };
        match Mode::from_label(fields[2]) {
            Some(mode) => windows.push(LabelWindow { start, end, mode }),
            None => {
                log::info!("dropping label window with mode {:?}", fields[2].trim());
                dropped += 1;
            }
        }
    }
    windows.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut kept: Vec<LabelWindow> = Vec::with_capacity(windows.len());
    for w in windows {
        match kept.last() {
            Some(prev) if w.start <= prev.end => {
                log::warn!("dropping label window at {} overlapping the previous one", w.start);
                dropped += 1;
            }
            _ => kept.push(w),
        }
    }
    (kept, dropped)
}

fn parse_label_time(s: &str) -> Option<f64> {
    NaiveDateTime::parse_from_str(s.trim(), "%Y/%m/%d %H:%M:%S")
        .ok()
        .map(|t| t.and_utc().timestamp() as f64)
}

/// Loads every user under a GeoLife `Data` directory (or its parent) and
/// returns the cleaned planar segments in user/file order.
pub fn load_geolife_dir(dir: &Path, config: &CleaningConfig) -> Result<(Vec<Segment>, CleaningStats)> {
    let data = if dir.join("Data").is_dir() {
        dir.join("Data")
    } else {
        dir.to_path_buf()
    };
    let mut segments = Vec::new();
    let mut stats = CleaningStats::default();
    for user_dir in sorted_entries(&data)? {
        if !user_dir.is_dir() {
            continue;
        }
        let user = file_name(&user_dir);
        let labels_path = user_dir.join("labels.txt");
        let windows = if labels_path.is_file() {
            let (w, dropped) = parse_labels(&labels_path)?;
            stats.windows_dropped += dropped;
            w
        } else {
            Vec::new()
        };
        let traj_dir = user_dir.join("Trajectory");
        if !traj_dir.is_dir() {
            continue;
        }
        for plt in sorted_entries(&traj_dir)? {
            if plt.extension().and_then(|e| e.to_str()) != Some("plt") {
                continue;
            }
            let file = parse_plt(&plt)?;
            stats.lines_skipped += file.skipped;
            let stem = plt.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
            let prefix = format!("{user}/{stem}");
            let (segs, s) = clean_and_segment(&file.points, &windows, config, &user, &prefix);
            stats.merge(&s);
            segments.extend(segs);
        }
    }
    Ok((segments, stats))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
